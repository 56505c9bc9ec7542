//! Document ingestion, vocabulary construction, bag-of-words matrices,
//! tf-idf statistics and train/dev/test splits.

mod bow;
pub mod io;
pub mod synthetic;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use bow::BowMatrix;

use crate::error::{invalid, Error, Result};
use crate::numerics::rng;

const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

/// The bundled English stopword list.
pub fn english_stopwords() -> HashSet<String> {
    STOPWORDS_EN
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Lowercases and splits on anything that is not an alphabetic character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(invalid(format!("document `{id}` has no tokens")));
        }
        Ok(Self { id, tokens })
    }

    /// Tokenizes `text`; `None` when nothing alphabetic remains.
    pub fn from_text(id: impl Into<String>, text: &str) -> Option<Self> {
        Self::new(id, tokenize(text)).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
}

impl Vocabulary {
    /// Vocabulary from an ordered word list; document frequencies unknown (0).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let df = vec![0; words.len()];
        Self::with_doc_freq(words, df)
    }

    pub fn with_doc_freq(words: Vec<String>, doc_freq: Vec<usize>) -> Result<Self> {
        if words.len() != doc_freq.len() {
            return Err(invalid(
                "word list and document frequencies differ in length",
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(invalid(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self {
            words,
            index,
            doc_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }
}

/// Builds the vocabulary: drops stopwords, one-character words, words with
/// document frequency below `min_df` or above `max_df_frac · |docs|`.
/// Words are ordered by descending document frequency, ties lexicographic.
pub fn build_vocabulary(
    docs: &[Document],
    min_df: usize,
    max_df_frac: f64,
    stopwords: &HashSet<String>,
) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(invalid("cannot build a vocabulary from zero documents"));
    }
    if !(max_df_frac > 0.0 && max_df_frac <= 1.0) {
        return Err(invalid(format!(
            "max_df_frac must lie in (0, 1], got {max_df_frac}"
        )));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for w in unique {
            *df.entry(w).or_default() += 1;
        }
    }
    let max_df = max_df_frac * docs.len() as f64;
    let mut kept: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|&(w, n)| {
            w.chars().count() > 1 && !stopwords.contains(w) && n >= min_df && n as f64 <= max_df
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_df,
            max_df_frac,
        });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let (words, freq): (Vec<String>, Vec<usize>) =
        kept.into_iter().map(|(w, n)| (w.to_string(), n)).unzip();
    Vocabulary::with_doc_freq(words, freq)
}

/// Counts in-vocabulary tokens per document and drops documents with fewer
/// than `min_types` distinct words. Returns the matrix and the ids of the
/// retained documents, aligned with its rows.
pub fn vectorize_and_filter(
    docs: &[Document],
    vocab: &Vocabulary,
    min_types: usize,
) -> Result<(BowMatrix, Vec<String>)> {
    if min_types == 0 {
        return Err(invalid("min_types must be at least 1"));
    }
    let rows: Vec<Option<Vec<(usize, u32)>>> = docs
        .par_iter()
        .map(|doc| {
            let mut counts: HashMap<usize, u32> = HashMap::new();
            for t in &doc.tokens {
                if let Some(i) = vocab.id(t) {
                    *counts.entry(i).or_default() += 1;
                }
            }
            if counts.len() < min_types {
                return None;
            }
            let mut row: Vec<(usize, u32)> = counts.into_iter().collect();
            row.sort_unstable();
            Some(row)
        })
        .collect();
    let mut kept_rows = Vec::new();
    let mut ids = Vec::new();
    for (doc, row) in docs.iter().zip(rows) {
        if let Some(r) = row {
            kept_rows.push(r);
            ids.push(doc.id.clone());
        }
    }
    if kept_rows.is_empty() {
        return Err(Error::NoDocuments { min_types });
    }
    Ok((BowMatrix::from_rows(vocab.len(), kept_rows)?, ids))
}

/// Inverse document frequencies and per-entry tf-idf scores, stored with the
/// same sparsity pattern as the matrix they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct TfIdfStats {
    pub idf: Vec<f64>,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    scores: Vec<f64>,
}

impl TfIdfStats {
    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    /// `(word indices, scores)` for the present words of document `r`.
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.scores[a..b])
    }

    pub fn score(&self, r: usize, word: usize) -> f64 {
        let (idx, sc) = self.row(r);
        match idx.binary_search(&(word as u32)) {
            Ok(p) => sc[p],
            Err(_) => 0.0,
        }
    }
}

/// `tfidf(d, w) = count(d, w) · ln(N / df(w))`.
pub fn compute_tfidf(bow: &BowMatrix) -> Result<TfIdfStats> {
    if bow.rows() == 0 {
        return Err(invalid("tf-idf of an empty matrix"));
    }
    let n = bow.rows() as f64;
    let df = bow.doc_freq();
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { (n / d as f64).ln() })
        .collect();
    let scores = bow
        .indices()
        .iter()
        .zip(bow.counts())
        .map(|(&w, &c)| c as f64 * idf[w as usize])
        .collect();
    Ok(TfIdfStats {
        idf,
        indptr: bow.indptr().to_vec(),
        indices: bow.indices().to_vec(),
        scores,
    })
}

/// One part of a split: the rows of the source matrix it holds, their ids,
/// and the sub-matrix itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPart {
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    pub bow: BowMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit {
    pub train: SplitPart,
    pub dev: SplitPart,
    pub test: SplitPart,
    pub seed: u64,
}

impl CorpusSplit {
    pub fn part(&self, name: &str) -> Option<&SplitPart> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Rebuilds a split from explicit id lists (e.g. saved manifests).
    pub fn from_ids(
        bow: &BowMatrix,
        ids: &[String],
        parts: [&[String]; 3],
        seed: u64,
    ) -> Result<Self> {
        let pos: HashMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let make = |list: &[String]| -> Result<SplitPart> {
            let rows = list
                .iter()
                .map(|id| {
                    pos.get(id.as_str())
                        .copied()
                        .ok_or_else(|| invalid(format!("split id `{id}` not in corpus")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SplitPart {
                ids: list.to_vec(),
                bow: bow.select_rows(&rows),
                rows,
            })
        };
        Ok(Self {
            train: make(parts[0])?,
            dev: make(parts[1])?,
            test: make(parts[2])?,
            seed,
        })
    }
}

/// Shuffles rows under `seed` and cuts them into train/dev/test with sizes
/// `round(r0·N)`, `round(r1·N)` and the remainder.
pub fn split(bow: &BowMatrix, ids: &[String], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    if ratios.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
        return Err(invalid(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }
    if ids.len() != bow.rows() {
        return Err(invalid("id list does not match matrix rows"));
    }
    let n = bow.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_dev = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let part = |rows: &[usize]| SplitPart {
        rows: rows.to_vec(),
        ids: rows.iter().map(|&r| ids[r].clone()).collect(),
        bow: bow.select_rows(rows),
    };
    Ok(CorpusSplit {
        train: part(&order[..n_train]),
        dev: part(&order[n_train..n_train + n_dev]),
        test: part(&order[n_train + n_dev..]),
        seed,
    })
}
