use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{anchor_pass, loss_and_grad, Branch, LossBreakdown, Model, VariantSpec};
use crate::corpus::{compute_tfidf, CorpusSplit, TfIdfStats};
use crate::error::{invalid, shape_err, Error, Result};
use crate::metrics::{count_cooc, npmi, CoocCounts, TopicSet};
use crate::ntm::{compute_background, top_word_indices, NtmConfig, NtmParams, PriorParams};
use crate::numerics::{rng, AdamConfig, Matrix, OptimizerState, RngState};
use crate::sampling::{scale_to_counts, tfidf_negative, tfidf_positive, SampleSource};
use crate::vicreg::new_expander;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_ANCHOR: u64 = 2;
const STREAM_POSITIVE: u64 = 3;
const STREAM_NEGATIVE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub topics: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    /// epochs over which the batch-norm decoder path fades out; 0 disables it
    pub bn_anneal_epochs: usize,
    /// epochs over which the KL weight ramps from 0 to 1; 0 means weight 1 throughout
    pub kl_anneal_epochs: usize,
    /// symmetric Dirichlet concentration; `None` means `0.01·50/k`
    pub alpha: Option<f64>,
    pub background_smoothing: f64,
    /// top words per topic for validation NPMI
    pub top_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            topics: 50,
            hidden: vec![300],
            batch_size: 50,
            max_epochs: 200,
            patience: 30,
            adam: AdamConfig::default(),
            bn_anneal_epochs: 150,
            kl_anneal_epochs: 0,
            alpha: None,
            background_smoothing: 1.0,
            top_n: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(invalid("need at least two topics"));
        }
        if self.batch_size < 2 {
            return Err(invalid(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.patience < 1 || self.max_epochs < 1 {
            return Err(invalid("patience and max_epochs must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid(
                "encoder hidden widths must be non-empty and positive",
            ));
        }
        if !(self.adam.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.alpha.is_some_and(|a| !(a > 0.0)) {
            return Err(invalid("prior concentration must be positive"));
        }
        if self.top_n < 2 {
            return Err(invalid("top_n must be at least 2"));
        }
        Ok(())
    }

    /// Weight of the batch-norm decoder path during 1-based `epoch`.
    pub fn decoder_mix(&self, epoch: usize) -> f64 {
        if self.bn_anneal_epochs == 0 {
            return 0.0;
        }
        (1.0 - (epoch - 1) as f64 / self.bn_anneal_epochs as f64).max(0.0)
    }

    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if self.kl_anneal_epochs == 0 {
            return 1.0;
        }
        (epoch as f64 / self.kl_anneal_epochs as f64).min(1.0)
    }

    pub fn prior(&self) -> Result<PriorParams> {
        PriorParams::symmetric(
            self.topics,
            self.alpha
                .unwrap_or_else(|| PriorParams::default_alpha(self.topics)),
        )
    }
}

/// Splits `order` into minibatches of `batch_size`; a trailing singleton
/// joins the previous batch.
pub fn batch_plan(order: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if order.len() < 2 {
        return Err(Error::BatchTooSmall(order.len()));
    }
    let mut out: Vec<Vec<usize>> = order
        .chunks(batch_size.max(2))
        .map(<[usize]>::to_vec)
        .collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Patience-based stopping on a maximized score.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Records `value` for `epoch`; returns `(improved, stop)`. Only a strict
    /// increase counts as improvement; NaN never does.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value > self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// means over the epoch's minibatches
    pub loss: LossBreakdown,
    pub val_npmi: f64,
    pub decoder_mix: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_npmi: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// `epoch,recon,kl,inv,var,cov,total,val_npmi` with a header line.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,recon,kl,inv,var,cov,total,val_npmi\n");
        for e in &self.epochs {
            let l = &e.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.epoch, l.recon, l.kl, l.inv, l.var, l.cov, l.total, e.val_npmi
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// parameters from the best validation epoch
    pub model: Model,
    pub history: TrainHistory,
    pub optimizer: OptimizerState,
    /// generator positions at the end of training, by stream name
    pub rng: Vec<(String, RngState)>,
}

fn validation_npmi(model: &NtmParams, top_n: usize, dev: &CoocCounts) -> Result<f64> {
    let topics = TopicSet::new(top_word_indices(&model.beta, top_n)?)?;
    Ok(npmi(&topics, dev, None)?.mean)
}

struct Samplers<'a> {
    tfidf: Option<TfIdfStats>,
    table: Option<&'a Matrix>,
}

/// Trains `spec` on `split.train`, selecting the epoch with the best
/// validation NPMI on `split.dev`. `adversarial` is the precomputed positive
/// table aligned with the training rows.
pub fn train(
    spec: &VariantSpec,
    split: &CorpusSplit,
    cfg: &TrainConfig,
    seed: u64,
    adversarial: Option<&Matrix>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let train = &split.train.bow;
    let vocab = train.cols();
    if split.dev.bow.cols() != vocab || split.test.bow.cols() != vocab {
        return Err(shape_err("split parts disagree on vocabulary size"));
    }
    if split.dev.bow.rows() == 0 {
        return Err(invalid("validation split is empty"));
    }
    let k = cfg.topics;
    let kind = spec.kind;
    let use_table = kind.needs_positive() && spec.sampler == SampleSource::Adversarial;
    if use_table {
        match adversarial {
            None => {
                return Err(Error::MissingSamples {
                    variant: kind.name().into(),
                    what: "adversarial positive table",
                })
            }
            Some(m) if m.shape() != (train.rows(), vocab) => {
                return Err(shape_err(
                    "adversarial table does not match the training split",
                ))
            }
            Some(_) => {}
        }
    }
    let needs_tfidf = kind.needs_negative() || (kind.needs_positive() && !use_table);
    let samplers = Samplers {
        tfidf: if needs_tfidf {
            Some(compute_tfidf(train)?)
        } else {
            None
        },
        table: if use_table { adversarial } else { None },
    };

    let mut init = rng::stream(seed, STREAM_INIT);
    let background = compute_background(train, cfg.background_smoothing)?;
    let ntm_cfg = NtmConfig {
        vocab,
        topics: k,
        hidden: cfg.hidden.clone(),
        use_background: kind.uses_background(),
    };
    let ntm = NtmParams::new(&ntm_cfg, background, &mut init)?;
    let expander = if kind.is_deep() {
        Some(new_expander(k, spec.expander_width(k), &mut init)?)
    } else {
        None
    };
    let mut model = Model { ntm, expander };
    let prior = cfg.prior()?;
    let dev = count_cooc(&split.dev.bow)?;

    let mut shuffle = rng::stream(seed, STREAM_SHUFFLE);
    let mut anchor_rng = rng::stream(seed, STREAM_ANCHOR);
    let mut pos_rng = rng::stream(seed, STREAM_POSITIVE);
    let mut neg_rng = rng::stream(seed, STREAM_NEGATIVE);
    let mut opt = OptimizerState::new(cfg.adam);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train.rows()).collect();

    for epoch in 1..=cfg.max_epochs {
        model.ntm.decoder_mix = cfg.decoder_mix(epoch);
        let kl_weight = cfg.kl_weight(epoch);
        order.shuffle(&mut shuffle);
        let batches = batch_plan(&order, cfg.batch_size)?;
        let mut sum = LossBreakdown::default();
        for (bi, batch) in batches.iter().enumerate() {
            let x = train.dense_rows(batch);
            let noise = rng::standard_normal(x.rows(), k, &mut anchor_rng);
            let anchor = anchor_pass(&model.ntm, &x, &noise)?;
            let recon_counts = if needs_tfidf {
                Some(scale_to_counts(&x, &anchor.xprime)?)
            } else {
                None
            };
            let xp = if !kind.needs_positive() {
                None
            } else if let Some(table) = samplers.table {
                Some(table.select_rows(batch))
            } else {
                let tf = samplers.tfidf.as_ref().expect("built above");
                Some(
                    tfidf_positive(
                        &x,
                        batch,
                        recon_counts.as_ref().expect("built above"),
                        tf,
                        spec.t,
                    )?
                    .xprime,
                )
            };
            let xn = if kind.needs_negative() {
                let tf = samplers.tfidf.as_ref().expect("built above");
                Some(tfidf_negative(
                    &x,
                    batch,
                    recon_counts.as_ref().expect("built above"),
                    tf,
                    spec.t,
                )?)
            } else {
                None
            };
            let np = xp
                .as_ref()
                .map(|_| rng::standard_normal(x.rows(), k, &mut pos_rng));
            let nn = xn
                .as_ref()
                .map(|_| rng::standard_normal(x.rows(), k, &mut neg_rng));
            let positive = xp
                .as_ref()
                .zip(np.as_ref())
                .map(|(x, noise)| Branch { x, noise });
            let negative = xn
                .as_ref()
                .zip(nn.as_ref())
                .map(|(x, noise)| Branch { x, noise });
            let (loss, grad) = loss_and_grad(
                &model, spec, &prior, kl_weight, &x, &anchor, positive, negative,
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            opt.step(&mut model, &grad)?;
            anchor.commit_running(&mut model.ntm);
            accumulate(&mut sum, &loss);
        }
        let val_npmi = validation_npmi(&model.ntm, cfg.top_n, &dev)?;
        epochs.push(EpochRecord {
            epoch,
            loss: scaled(&sum, 1.0 / batches.len() as f64),
            val_npmi,
            decoder_mix: model.ntm.decoder_mix,
        });
        let (improved, stop) = stopper.observe(epoch, val_npmi);
        if improved {
            best = model.clone();
        }
        if stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    if stopper.best_epoch() == 0 {
        return Err(invalid("validation NPMI was never finite"));
    }
    let rng_states = [
        ("shuffle", &shuffle),
        ("anchor", &anchor_rng),
        ("positive", &pos_rng),
        ("negative", &neg_rng),
    ]
    .into_iter()
    .map(|(n, r)| (n.to_string(), RngState::capture(r)))
    .collect();
    Ok(TrainOutcome {
        model: best,
        history: TrainHistory {
            epochs,
            best_epoch: stopper.best_epoch(),
            best_npmi: stopper.best(),
            stop_reason,
        },
        optimizer: opt,
        rng: rng_states,
    })
}

fn accumulate(sum: &mut LossBreakdown, l: &LossBreakdown) {
    sum.recon += l.recon;
    sum.kl += l.kl;
    sum.inv += l.inv;
    sum.var += l.var;
    sum.cov += l.cov;
    sum.contrastive += l.contrastive;
    sum.cosine += l.cosine;
    sum.total += l.total;
}

fn scaled(l: &LossBreakdown, f: f64) -> LossBreakdown {
    LossBreakdown {
        recon: l.recon * f,
        kl: l.kl * f,
        inv: l.inv * f,
        var: l.var * f,
        cov: l.cov * f,
        contrastive: l.contrastive * f,
        cosine: l.cosine * f,
        total: l.total * f,
    }
}
