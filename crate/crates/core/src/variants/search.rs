use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig};
use super::VariantSpec;
use crate::corpus::CorpusSplit;
use crate::error::{invalid, Result};
use crate::numerics::{rng, Matrix};
use crate::sampling::SampleSource;

const STREAM_SEARCH: u64 = 20;

/// Sampling ranges: log-uniform for the VIC weights, uniform integers for
/// the expander width and `t`. All bounds inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBounds {
    pub lambda: (f64, f64),
    pub mu: (f64, f64),
    pub nu: (f64, f64),
    /// `None` means `[k, 16k]`
    pub expander_dim: Option<(usize, usize)>,
    pub t: (usize, usize),
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            lambda: (1.0, 1000.0),
            mu: (1.0, 1000.0),
            nu: (1.0, 1000.0),
            expander_dim: None,
            t: (1, 15),
        }
    }
}

impl SearchBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid(format!("bad {name} search range ({lo}, {hi})")));
            }
        }
        if self.expander_dim.is_some_and(|(lo, hi)| lo == 0 || lo > hi)
            || self.t.0 == 0
            || self.t.0 > self.t.1
        {
            return Err(invalid(
                "integer search ranges must be positive and ordered",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub spec: VariantSpec,
    pub val_npmi: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: VariantSpec,
    pub best_npmi: f64,
    pub trials: Vec<TrialRecord>,
}

fn log_uniform(r: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    r.random_range(lo.ln()..=hi.ln()).exp()
}

/// Draws the trial specs in order from `seed`; independent of training.
pub fn sample_specs(
    base: &VariantSpec,
    k: usize,
    trials: usize,
    bounds: &SearchBounds,
    seed: u64,
) -> Vec<VariantSpec> {
    let mut r = rng::stream(seed, STREAM_SEARCH);
    let (dlo, dhi) = bounds.expander_dim.unwrap_or((k, 16 * k));
    (0..trials)
        .map(|_| {
            let mut s = *base;
            s.vic.lambda = log_uniform(&mut r, bounds.lambda);
            s.vic.mu = log_uniform(&mut r, bounds.mu);
            s.vic.nu = log_uniform(&mut r, bounds.nu);
            let dim = r.random_range(dlo..=dhi);
            let t = r.random_range(bounds.t.0..=bounds.t.1);
            if base.kind.is_deep() {
                s.expander_dim = Some(dim);
            }
            if base.kind.needs_positive() && base.sampler == SampleSource::Tfidf
                || base.kind.needs_negative()
            {
                s.t = t;
            }
            s
        })
        .collect()
}

/// Trains one model per sampled configuration, trials in parallel, all with training
/// seed `seed`; returns the `VariantSpec` with the highest validation NPMI (earliest
/// trial on ties).
pub fn random_search(
    base: &VariantSpec,
    split: &CorpusSplit,
    cfg: &TrainConfig,
    trials: usize,
    bounds: &SearchBounds,
    seed: u64,
    adversarial: Option<&Matrix>,
) -> Result<SearchResult> {
    if trials == 0 {
        return Err(invalid("random search needs at least one trial"));
    }
    bounds.validate()?;
    let specs = sample_specs(base, cfg.topics, trials, bounds, seed);
    let records = specs
        .par_iter()
        .enumerate()
        .map(|(index, spec)| {
            let out = train(spec, split, cfg, seed, adversarial)?;
            Ok(TrialRecord {
                index,
                spec: *spec,
                val_npmi: out.history.best_npmi,
                best_epoch: out.history.best_epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = records.iter().fold(
        &records[0],
        |b, r| if r.val_npmi > b.val_npmi { r } else { b },
    );
    Ok(SearchResult {
        best: best.spec,
        best_npmi: best.val_npmi,
        trials: records,
    })
}

/// The four regularizer subsets of the ablation: all terms, no covariance,
/// no variance, invariance only.
pub fn ablation_specs(base: &VariantSpec) -> Vec<(&'static str, VariantSpec)> {
    let with = |mu: bool, nu: bool| {
        let mut s = *base;
        if !mu {
            s.vic.mu = 0.0;
        }
        if !nu {
            s.vic.nu = 0.0;
        }
        s
    };
    vec![
        ("VIC", with(true, true)),
        ("V-I", with(true, false)),
        ("I-C", with(false, true)),
        ("I", with(false, false)),
    ]
}
