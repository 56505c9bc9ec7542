use crate::error::{invalid, Result};
use crate::numerics::Matrix;

/// Sparse document-by-word count matrix in compressed-row form.
///
/// Column indices are strictly increasing within a row and every stored
/// count is positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BowMatrix {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    counts: Vec<u32>,
}

impl BowMatrix {
    pub fn empty(cols: usize) -> Self {
        Self {
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// Builds from per-row `(column, count)` lists. Entries are sorted and
    /// duplicate columns summed; zero counts are dropped.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, u32)>>) -> Result<Self> {
        let mut m = Self::empty(cols);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, n) in row {
                if c >= cols {
                    return Err(invalid(format!("column {c} out of range for {cols} words")));
                }
                if n == 0 {
                    continue;
                }
                if last == Some(c) {
                    *m.counts.last_mut().expect("entry pushed") += n;
                } else {
                    m.indices.push(c as u32);
                    m.counts.push(n);
                    last = Some(c);
                }
            }
            m.indptr.push(m.indices.len());
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// `(word indices, counts)` of row `r`.
    pub fn row(&self, r: usize) -> (&[u32], &[u32]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.counts[a..b])
    }

    pub fn count(&self, r: usize, word: usize) -> u32 {
        let (idx, cnt) = self.row(r);
        idx.binary_search(&(word as u32)).map_or(0, |p| cnt[p])
    }

    /// Number of distinct words in row `r`.
    pub fn row_types(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn row_total(&self, r: usize) -> u64 {
        self.row(r).1.iter().map(|&c| c as u64).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Number of rows containing each word.
    pub fn doc_freq(&self) -> Vec<usize> {
        let mut df = vec![0; self.cols];
        for &w in &self.indices {
            df[w as usize] += 1;
        }
        df
    }

    /// Corpus-wide count of each word.
    pub fn word_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (&w, &c) in self.indices.iter().zip(&self.counts) {
            out[w as usize] += c as f64;
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> BowMatrix {
        let mut m = Self::empty(self.cols);
        for &r in rows {
            let (idx, cnt) = self.row(r);
            m.indices.extend_from_slice(idx);
            m.counts.extend_from_slice(cnt);
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Dense `rows.len() × cols` copy of the selected rows.
    pub fn dense_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), self.cols);
        for (i, &r) in rows.iter().enumerate() {
            let (idx, cnt) = self.row(r);
            let dst = out.row_mut(i);
            for (&w, &c) in idx.iter().zip(cnt) {
                dst[w as usize] = c as f64;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        self.dense_rows(&(0..self.rows()).collect::<Vec<_>>())
    }

    /// `(doc_index, word_index, count)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.rows()).flat_map(move |r| {
            let (idx, cnt) = self.row(r);
            idx.iter().zip(cnt).map(move |(&w, &c)| (r, w as usize, c))
        })
    }

    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, u32)],
    ) -> Result<Self> {
        let mut per_row = vec![Vec::new(); rows];
        for &(r, w, c) in triplets {
            if r >= rows {
                return Err(invalid(format!(
                    "row {r} out of range for {rows} documents"
                )));
            }
            per_row[r].push((w, c));
        }
        Self::from_rows(cols, per_row)
    }
}
