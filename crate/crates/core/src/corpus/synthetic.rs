//! Generator for small topic-structured corpora used by tests and smoke runs.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Gamma;

use super::Document;
use crate::error::{invalid, Result};
use crate::numerics::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub vocab: usize,
    pub topics: usize,
    pub doc_len: usize,
    /// symmetric Dirichlet concentration of document-topic proportions
    pub alpha: f64,
    /// probability mass each topic puts on its own word block
    pub purity: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            docs: 200,
            vocab: 120,
            topics: 6,
            doc_len: 80,
            alpha: 0.3,
            purity: 0.9,
            seed: 0,
        }
    }
}

/// Alphabetic word name for index `i`; never a stopword, always > 1 char.
pub fn word_name(i: usize) -> String {
    let mut s = String::from("zq");
    let mut n = i;
    loop {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s
}

/// Documents drawn from an LDA-style process: topic `t` concentrates
/// `purity` of its mass uniformly on word block `t`, the rest uniformly on
/// the whole vocabulary.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Document>> {
    if cfg.topics == 0 || cfg.vocab < cfg.topics || cfg.docs == 0 || cfg.doc_len == 0 {
        return Err(invalid(
            "synthetic corpus needs docs, doc_len > 0 and vocab ≥ topics > 0",
        ));
    }
    if !(cfg.alpha > 0.0) || !(0.0..=1.0).contains(&cfg.purity) {
        return Err(invalid(
            "synthetic corpus needs alpha > 0 and purity in [0, 1]",
        ));
    }
    let words: Vec<String> = (0..cfg.vocab).map(word_name).collect();
    let block = cfg.vocab / cfg.topics;
    let samplers: Vec<WeightedIndex<f64>> = (0..cfg.topics)
        .map(|t| {
            let w: Vec<f64> = (0..cfg.vocab)
                .map(|v| {
                    let own = v / block == t || (t == cfg.topics - 1 && v >= t * block);
                    let size = if t == cfg.topics - 1 {
                        cfg.vocab - t * block
                    } else {
                        block
                    };
                    (1.0 - cfg.purity) / cfg.vocab as f64
                        + if own { cfg.purity / size as f64 } else { 0.0 }
                })
                .collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();
    let gamma = Gamma::new(cfg.alpha, 1.0).map_err(|e| invalid(e.to_string()))?;
    let mut r = rng::stream(cfg.seed, 0);
    let mut docs = Vec::with_capacity(cfg.docs);
    for d in 0..cfg.docs {
        let mut theta: Vec<f64> = (0..cfg.topics)
            .map(|_| gamma.sample(&mut r).max(1e-300))
            .collect();
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|v| *v /= s);
        let pick = WeightedIndex::new(&theta).expect("positive weights");
        let tokens = (0..cfg.doc_len)
            .map(|_| words[samplers[pick.sample(&mut r)].sample(&mut r)].clone())
            .collect();
        docs.push(Document::new(format!("doc{d}"), tokens)?);
    }
    Ok(docs)
}
