//! Topic-quality metrics: NPMI coherence, topic diversity, rank-biased
//! overlap and held-out perplexity.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::{BowMatrix, Vocabulary};
use crate::error::{invalid, Result};
use crate::ntm::{recon_loss, NtmParams};

/// Ranked top-word indices per topic, all lists of equal length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopicSet {
    topics: Vec<Vec<usize>>,
    n: usize,
}

impl TopicSet {
    pub fn new(topics: Vec<Vec<usize>>) -> Result<Self> {
        let n = topics.first().map_or(0, Vec::len);
        for (i, t) in topics.iter().enumerate() {
            if t.len() != n {
                return Err(invalid(format!(
                    "topic {i} has {} words, expected {n}",
                    t.len()
                )));
            }
            if t.iter().collect::<HashSet<_>>().len() != n {
                return Err(invalid(format!("topic {i} repeats a word")));
            }
        }
        Ok(Self { topics, n })
    }

    pub fn k(&self) -> usize {
        self.topics.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn topics(&self) -> &[Vec<usize>] {
        &self.topics
    }

    pub fn words(&self, vocab: &Vocabulary) -> Vec<Vec<String>> {
        self.topics
            .iter()
            .map(|t| t.iter().map(|&w| vocab.word(w).to_string()).collect())
            .collect()
    }

    /// First `n` words of every topic.
    pub fn truncated(&self, n: usize) -> Result<TopicSet> {
        if n > self.n {
            return Err(invalid(format!(
                "cannot truncate {}-word topics to {n}",
                self.n
            )));
        }
        TopicSet::new(self.topics.iter().map(|t| t[..n].to_vec()).collect())
    }
}

/// Document-level word occurrence, stored as sorted posting lists so that
/// pair counts are computed lazily by intersection.
#[derive(Clone, Debug, PartialEq)]
pub struct CoocCounts {
    n_docs: usize,
    postings: Vec<Vec<u32>>,
}

pub fn count_cooc(bow: &BowMatrix) -> Result<CoocCounts> {
    if bow.rows() == 0 {
        return Err(invalid("co-occurrence counts need at least one document"));
    }
    let mut postings = vec![Vec::new(); bow.cols()];
    for r in 0..bow.rows() {
        for &w in bow.row(r).0 {
            postings[w as usize].push(r as u32);
        }
    }
    Ok(CoocCounts {
        n_docs: bow.rows(),
        postings,
    })
}

impl CoocCounts {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab(&self) -> usize {
        self.postings.len()
    }

    pub fn df(&self, w: usize) -> usize {
        self.postings[w].len()
    }

    /// Number of documents containing both words; `cooc(w, w) = df(w)`.
    pub fn cooc(&self, a: usize, b: usize) -> usize {
        let (pa, pb) = (&self.postings[a], &self.postings[b]);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < pa.len() && j < pb.len() {
            match pa[i].cmp(&pb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpmiResult {
    pub mean: f64,
    pub per_topic: Vec<f64>,
}

/// NPMI of one word pair with smoothing `eps` added to every probability.
/// The value is clamped to `[−1, 1]`; a joint probability of 1 scores 1.
pub fn pair_npmi(counts: &CoocCounts, a: usize, b: usize, eps: f64) -> f64 {
    let n = counts.n_docs as f64;
    let pij = counts.cooc(a, b) as f64 / n + eps;
    let pi = counts.df(a) as f64 / n + eps;
    let pj = counts.df(b) as f64 / n + eps;
    if pij >= 1.0 {
        return 1.0;
    }
    ((pij / (pi * pj)).ln() / -pij.ln()).clamp(-1.0, 1.0)
}

/// Mean pairwise NPMI per topic and over topics. `smoothing = None` uses
/// `1/N` for `N` reference documents.
pub fn npmi(topics: &TopicSet, counts: &CoocCounts, smoothing: Option<f64>) -> Result<NpmiResult> {
    if topics.k() == 0 || topics.n() < 2 {
        return Err(invalid(
            "NPMI needs at least one topic of two or more words",
        ));
    }
    if let Some(&w) = topics
        .topics()
        .iter()
        .flatten()
        .find(|&&w| w >= counts.vocab())
    {
        return Err(invalid(format!(
            "topic word {w} outside the reference vocabulary"
        )));
    }
    let eps = smoothing.unwrap_or(1.0 / counts.n_docs as f64);
    let per_topic: Vec<f64> = topics
        .topics()
        .par_iter()
        .map(|t| {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..t.len() {
                for j in i + 1..t.len() {
                    total += pair_npmi(counts, t[i], t[j], eps);
                    pairs += 1;
                }
            }
            total / pairs as f64
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(NpmiResult { mean, per_topic })
}

/// Fraction of distinct words among all topics' lists.
pub fn topic_diversity(topics: &TopicSet) -> Result<f64> {
    let total = topics.k() * topics.n();
    if total == 0 {
        return Err(invalid("topic diversity of an empty topic set"));
    }
    let unique: HashSet<usize> = topics.topics().iter().flatten().copied().collect();
    Ok(unique.len() as f64 / total as f64)
}

pub const RBO_P: f64 = 0.9;

/// Extrapolated rank-biased overlap of two equal-length rankings:
/// `(X_n/n)·pⁿ + ((1−p)/p)·Σ_{d=1..n} (X_d/d)·p^d`, `X_d` the overlap at depth `d`.
pub fn rbo(a: &[usize], b: &[usize], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("persistence must lie in (0, 1), got {p}")));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid(
            "rank-biased overlap needs two non-empty lists of equal length",
        ));
    }
    let n = a.len();
    let mut seen_a = HashSet::new();
    let mut seen_b = HashSet::new();
    let mut overlap = 0usize;
    let mut series = 0.0;
    let mut pd = 1.0;
    for d in 1..=n {
        let (x, y) = (a[d - 1], b[d - 1]);
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(&x) {
                overlap += 1;
            }
            if seen_a.contains(&y) {
                overlap += 1;
            }
        }
        seen_a.insert(x);
        seen_b.insert(y);
        pd *= p;
        series += overlap as f64 / d as f64 * pd;
    }
    let value = overlap as f64 / n as f64 * pd + (1.0 - p) / p * series;
    Ok(value.clamp(0.0, 1.0))
}

/// `1 − mean RBO` over all unordered topic pairs.
pub fn irbo(topics: &TopicSet, p: f64) -> Result<f64> {
    let k = topics.k();
    if k < 2 {
        return Err(invalid("inverted RBO needs at least two topics"));
    }
    let t = topics.topics();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect();
    let vals = pairs
        .par_iter()
        .map(|&(i, j)| rbo(&t[i], &t[j], p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(1.0 - vals.iter().sum::<f64>() / vals.len() as f64)
}

const PERPLEXITY_CHUNK: usize = 512;

/// `exp(Σ_d −x_dᵀ ln x′_d / Σ_d |x_d|)` with `x′_d` decoded from the posterior
/// mean in evaluation mode.
pub fn perplexity(model: &NtmParams, heldout: &BowMatrix) -> Result<f64> {
    let tokens = heldout.total_tokens();
    if heldout.rows() == 0 || tokens == 0 {
        return Err(invalid("perplexity needs a non-empty held-out set"));
    }
    let rows: Vec<usize> = (0..heldout.rows()).collect();
    let nll = rows
        .par_chunks(PERPLEXITY_CHUNK)
        .map(|chunk| {
            let x = heldout.dense_rows(chunk);
            let z = model.posterior_mean(&x)?;
            recon_loss(&x, &model.decode(&z)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((nll.iter().sum::<f64>() / tokens as f64).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub npmi: f64,
    pub npmi_per_topic: Vec<f64>,
    pub td: f64,
    pub irbo: f64,
    pub perplexity: f64,
    /// run identification, written as leading CSV columns in key order
    pub meta: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn compute(
        model: &NtmParams,
        topics: &TopicSet,
        reference: &CoocCounts,
        heldout: &BowMatrix,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let n = npmi(topics, reference, None)?;
        Ok(Self {
            npmi: n.mean,
            npmi_per_topic: n.per_topic,
            td: topic_diversity(topics)?,
            irbo: irbo(topics, RBO_P)?,
            perplexity: perplexity(model, heldout)?,
            meta,
        })
    }

    pub fn csv_header(&self) -> String {
        let mut cols: Vec<&str> = self.meta.keys().map(String::as_str).collect();
        cols.extend(["npmi", "td", "irbo", "perplexity"]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.meta.values().cloned().collect();
        cols.extend(
            [self.npmi, self.td, self.irbo, self.perplexity]
                .iter()
                .map(|v| format!("{v:.6}")),
        );
        cols.join(",")
    }

    /// `topic,npmi,words` lines with a header.
    pub fn topic_detail(&self, topics: &TopicSet, vocab: &Vocabulary) -> String {
        let mut out = String::from("topic,npmi,words\n");
        for (i, (words, v)) in topics
            .words(vocab)
            .iter()
            .zip(&self.npmi_per_topic)
            .enumerate()
        {
            let _ = writeln!(out, "{i},{v:.6},{}", words.join(" "));
        }
        out
    }
}
