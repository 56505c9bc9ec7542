//! Positive and negative document samples: tf-idf token replacement and
//! the adversarial augmenter trained against a target/teacher classifier pair.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{BowMatrix, TfIdfStats};
use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{
    rng, softmax_rows, zeros_like, Activation, AdamConfig, Archive, Linear, Matrix, MlpParams,
    OptimizerState, Params,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Tfidf,
    Adversarial,
}

/// Augmented batch aligned row-for-row with its anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveBatch {
    pub xprime: Matrix,
    pub source: SampleSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extreme {
    Lowest,
    Highest,
}

/// The `t` present words at the low (or high) end of the order by
/// ascending score, ties broken by ascending word index. Both ends come
/// from one order, so the two sets are disjoint whenever `2t` ≤ row types.
pub fn replacement_words(words: &[u32], scores: &[f64], t: usize, which: Extreme) -> Vec<usize> {
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(words[a].cmp(&words[b]))
    });
    let picked = match which {
        Extreme::Lowest => &order[..t.min(order.len())],
        Extreme::Highest => &order[order.len().saturating_sub(t)..],
    };
    picked.iter().map(|&i| words[i] as usize).collect()
}

/// Reconstruction on the count scale: each row of `xprime` times the token
/// total of the matching anchor row.
pub fn scale_to_counts(x: &Matrix, xprime: &Matrix) -> Result<Matrix> {
    x.same_shape(xprime, "reconstruction scaling")?;
    let totals = x.row_sums();
    let mut out = xprime.clone();
    for (r, total) in totals.iter().enumerate() {
        out.row_mut(r).iter_mut().for_each(|v| *v *= total);
    }
    Ok(out)
}

fn replace(
    x: &Matrix,
    docs: &[usize],
    x_recon: &Matrix,
    tfidf: &TfIdfStats,
    t: usize,
    which: Extreme,
) -> Result<Matrix> {
    x.same_shape(x_recon, "tf-idf sampler")?;
    if docs.len() != x.rows() {
        return Err(shape_err("document index list does not match batch rows"));
    }
    let mut out = x.clone();
    for (row, &doc) in docs.iter().enumerate() {
        let (words, scores) = tfidf.row(doc);
        if words.len() < t {
            return Err(Error::TooFewWords {
                row: doc,
                present: words.len(),
                t,
            });
        }
        for w in replacement_words(words, scores, t, which) {
            out.set(row, w, x_recon.get(row, w));
        }
    }
    Ok(out)
}

/// Replaces each document's `t` lowest-tf-idf present words with the
/// reconstruction values. `docs[i]` is the tf-idf row of batch row `i`.
pub fn tfidf_positive(
    x: &Matrix,
    docs: &[usize],
    x_recon: &Matrix,
    tfidf: &TfIdfStats,
    t: usize,
) -> Result<PositiveBatch> {
    Ok(PositiveBatch {
        xprime: replace(x, docs, x_recon, tfidf, t, Extreme::Lowest)?,
        source: SampleSource::Tfidf,
    })
}

/// As [`tfidf_positive`] with the `t` highest-tf-idf words replaced.
pub fn tfidf_negative(
    x: &Matrix,
    docs: &[usize],
    x_recon: &Matrix,
    tfidf: &TfIdfStats,
    t: usize,
) -> Result<Matrix> {
    replace(x, docs, x_recon, tfidf, t, Extreme::Highest)
}

/// `x + ReLU(x·W + b)`.
pub fn augment(x: &Matrix, g: &Linear) -> Result<Matrix> {
    let mut out = g.forward(x)?;
    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
        *o = xv + o.max(0.0);
    }
    Ok(out)
}

/// `teacher ← decay·teacher + (1 − decay)·target`, tensor by tensor.
pub fn ema_update<P: Params + ?Sized>(teacher: &mut P, target: &P, decay: f64) -> Result<()> {
    let src = target.tensors();
    let mut dst = teacher.tensors_mut();
    if src.len() != dst.len() {
        return Err(shape_err("teacher and target differ in structure"));
    }
    for ((_, d), (name, s)) in dst.iter_mut().zip(&src) {
        if d.shape() != s.shape() {
            return Err(shape_err(format!(
                "teacher tensor `{name}` differs in shape"
            )));
        }
        for (dv, &sv) in d.data_mut().iter_mut().zip(s.data()) {
            *dv = decay * *dv + (1.0 - decay) * sv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvSamplerConfig {
    pub ema_decay: f64,
    pub epochs: usize,
    /// target updates per minibatch
    pub target_steps: usize,
    /// augmenter updates per minibatch
    pub augment_steps: usize,
    pub target_lr: f64,
    pub augment_lr: f64,
    pub average_window: usize,
    pub batch_size: usize,
    pub hidden: usize,
    /// multiplier on the Glorot initialisation of the augmenter weights
    pub init_scale: f64,
}

impl Default for AdvSamplerConfig {
    fn default() -> Self {
        Self {
            ema_decay: 0.999,
            epochs: 20,
            target_steps: 1,
            augment_steps: 5,
            target_lr: 1e-2,
            augment_lr: 1e-2,
            average_window: 5,
            batch_size: 256,
            hidden: 512,
            init_scale: 0.01,
        }
    }
}

impl AdvSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(invalid("ema_decay must lie in (0, 1)"));
        }
        if self.average_window == 0 || self.epochs < self.average_window {
            return Err(invalid("need epochs ≥ average_window ≥ 1"));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(invalid(
                "adversarial batch size and hidden width must be positive",
            ));
        }
        Ok(())
    }
}

/// The augmenter `g` and the two classifiers over document indices.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmenterParams {
    pub g: Linear,
    pub target: MlpParams,
    pub teacher: MlpParams,
}

impl AugmenterParams {
    pub fn new(
        vocab: usize,
        classes: usize,
        cfg: &AdvSamplerConfig,
        rng: &mut rng::Rng64,
    ) -> Result<Self> {
        let mut g = Linear::glorot(vocab, vocab, rng);
        g.weight.scale(cfg.init_scale);
        let target = MlpParams::new(
            &[vocab, cfg.hidden, classes],
            &[Activation::Relu, Activation::Identity],
            rng,
        )?;
        Ok(Self {
            g,
            teacher: target.clone(),
            target,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvEpochLog {
    pub epoch: usize,
    pub target_loss: f64,
    pub augment_loss: f64,
    /// accuracies on the batch augmentations after each augmenter phase
    pub target_acc: f64,
    pub teacher_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialOutput {
    /// one positive per training document, in row order
    pub positives: Matrix,
    pub log: Vec<AdvEpochLog>,
    pub models: AugmenterParams,
}

/// Mean cross-entropy of `logits` against `labels`, its gradient, and the
/// number of rows whose argmax equals the label.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix, usize) {
    let mut p = softmax_rows(logits);
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (r, &y) in labels.iter().enumerate() {
        let row = p.row_mut(r);
        loss -= row[y].max(1e-300).ln();
        let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        if best == y {
            correct += 1;
        }
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, p, correct)
}

fn correct(net: &MlpParams, x: &Matrix, labels: &[usize]) -> Result<usize> {
    Ok(cross_entropy(&net.forward(x)?, labels).2)
}

fn classifier_loss(
    net: &MlpParams,
    x: &Matrix,
    labels: &[usize],
    need_input: bool,
) -> Result<(f64, MlpParams, Option<Matrix>, usize)> {
    let (logits, cache) = net.forward_cached(x)?;
    let (loss, dlogits, correct) = cross_entropy(&logits, labels);
    let mut grad = zeros_like(net);
    let dx = net.backward(&cache, &dlogits, &mut grad, need_input)?;
    Ok((loss, grad, dx, correct))
}

/// `−CE_target(g(x)) + CE_teacher(g(x))` with its gradient in the augmenter
/// weights and the two classifiers' correct counts.
pub fn augmenter_objective(
    m: &AugmenterParams,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, Linear, usize, usize)> {
    let pre = m.g.forward(x)?;
    let xa = augment(x, &m.g)?;
    let (lt, _, dxt, ct) = classifier_loss(&m.target, &xa, labels, true)?;
    let (ls, _, dxs, cs) = classifier_loss(&m.teacher, &xa, labels, true)?;
    let mut dxa = dxs.expect("requested");
    dxa.axpy(-1.0, &dxt.expect("requested"))?;
    let dpre = dxa.zip_map(&pre, |g, p| if p > 0.0 { g } else { 0.0 })?;
    let mut grad = zeros_like(&m.g);
    m.g.backward(x, &dpre, &mut grad, false)?;
    Ok((ls - lt, grad, ct, cs))
}

/// Alternating fit: the target learns to classify augmented documents by
/// index; the augmenter then raises the target's loss while lowering the
/// EMA teacher's. Returns the augmentations averaged over the last
/// `average_window` epochs.
pub fn adversarial_fit(
    train: &BowMatrix,
    cfg: &AdvSamplerConfig,
    seed: u64,
) -> Result<AdversarialOutput> {
    cfg.validate()?;
    let n = train.rows();
    if n < 2 {
        return Err(invalid("adversarial sampler needs at least two documents"));
    }
    let mut init = rng::stream(seed, 10);
    let mut shuffle = rng::stream(seed, 11);
    let mut m = AugmenterParams::new(train.cols(), n, cfg, &mut init)?;
    let mut opt_target = OptimizerState::new(AdamConfig {
        lr: cfg.target_lr,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let mut opt_aug = OptimizerState::new(AdamConfig {
        lr: cfg.augment_lr,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut sum = Matrix::zeros(n, train.cols());
    let all: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut t_loss, mut a_loss, mut t_acc, mut s_acc) = (0.0, 0.0, 0usize, 0usize);
        let (mut t_count, mut a_count, mut seen) = (0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = train.dense_rows(batch);
            for _ in 0..cfg.target_steps {
                step += 1;
                let xa = augment(&x, &m.g)?;
                let (loss, grad, _, _) = classifier_loss(&m.target, &xa, batch, false)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        phase: "target",
                        step,
                    });
                }
                opt_target.step(&mut m.target, &grad)?;
                ema_update(&mut m.teacher, &m.target, cfg.ema_decay)?;
                t_loss += loss;
                t_count += 1;
            }
            for _ in 0..cfg.augment_steps {
                step += 1;
                let (loss, grad, _, _) = augmenter_objective(&m, &x, batch)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        phase: "augmenter",
                        step,
                    });
                }
                opt_aug.step(&mut m.g, &grad)?;
                a_loss += loss;
                a_count += 1;
            }
            let xa = augment(&x, &m.g)?;
            t_acc += correct(&m.target, &xa, batch)?;
            s_acc += correct(&m.teacher, &xa, batch)?;
            seen += batch.len();
        }
        let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        log.push(AdvEpochLog {
            epoch,
            target_loss: mean(t_loss, t_count),
            augment_loss: mean(a_loss, a_count),
            target_acc: mean(t_acc as f64, seen),
            teacher_acc: mean(s_acc as f64, seen),
        });
        if epoch + cfg.average_window > cfg.epochs {
            for chunk in all.chunks(cfg.batch_size.max(1)) {
                let xa = augment(&train.dense_rows(chunk), &m.g)?;
                for (i, &r) in chunk.iter().enumerate() {
                    for (s, v) in sum.row_mut(r).iter_mut().zip(xa.row(i)) {
                        *s += v;
                    }
                }
            }
        }
    }
    sum.scale(1.0 / cfg.average_window as f64);
    sum.ensure_finite("adversarial positives")?;
    Ok(AdversarialOutput {
        positives: sum,
        log,
        models: m,
    })
}

/// Stores a positive table keyed by document id.
pub fn save_positive_table(path: &Path, ids: &[String], positives: &Matrix) -> Result<()> {
    if ids.len() != positives.rows() {
        return Err(shape_err("positive table ids do not match rows"));
    }
    let mut ar = Archive::new();
    ar.set_meta("kind", "positive-table");
    ar.set_meta("ids", ids.join("\n"));
    ar.push("positives", positives.clone());
    ar.save(path)
}

pub fn load_positive_table(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let ar = Archive::load(path)?;
    if ar.meta("kind")? != "positive-table" {
        return Err(Error::Checkpoint(format!(
            "{} is not a positive table",
            path.display()
        )));
    }
    let ids: Vec<String> = ar.meta("ids")?.split('\n').map(String::from).collect();
    let m = ar.tensor("positives")?.clone();
    if ids.len() != m.rows() {
        return Err(Error::Checkpoint(
            "positive table ids do not match rows".into(),
        ));
    }
    Ok((ids, m))
}

#[cfg(test)]
mod tests;
