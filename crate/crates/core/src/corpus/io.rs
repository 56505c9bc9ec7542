//! Plain-text corpus artifacts: raw input, vocabulary, BoW triplets, id lists.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use super::{BowMatrix, Document, Vocabulary};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// One document per line; the id is the zero-based line number.
    Lines,
    /// One JSON object `{"id": ..., "text": ...}` per line.
    Jsonl,
}

impl InputFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lines" | "txt" => Ok(Self::Lines),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(invalid(format!(
                "unknown input format `{other}` (expected lines or jsonl)"
            ))),
        }
    }
}

#[derive(Deserialize)]
struct Record {
    id: serde_json::Value,
    text: String,
}

/// Reads and tokenizes documents. Lines without any alphabetic token are
/// skipped; duplicate ids are an error.
pub fn read_documents(reader: impl BufRead, format: InputFormat) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let (id, text) = match format {
            InputFormat::Lines => (n.to_string(), line),
            InputFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record = serde_json::from_str(&line)
                    .map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
                let id = match rec.id {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (id, rec.text)
            }
        };
        if !seen.insert(id.clone()) {
            return Err(invalid(format!("duplicate document id `{id}`")));
        }
        if let Some(doc) = Document::from_text(id, &text) {
            docs.push(doc);
        }
    }
    Ok(docs)
}

pub fn read_documents_file(path: &Path, format: InputFormat) -> Result<Vec<Document>> {
    let file = fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_documents(BufReader::new(file), format)
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for (w, df) in vocab.words().iter().zip(vocab.doc_freq()) {
        out.push_str(&format!("{w}\t{df}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads `word` or `word<TAB>df` lines.
pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path)?;
    let mut words = Vec::new();
    let mut df = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let mut parts = line.split('\t');
        words.push(parts.next().unwrap_or_default().to_string());
        let n = match parts.next() {
            Some(v) => v
                .parse()
                .map_err(|_| invalid(format!("bad document frequency in `{line}`")))?,
            None => 0,
        };
        df.push(n);
    }
    Vocabulary::with_doc_freq(words, df)
}

const BOW_HEADER: &str = "%bow doc_index word_index count";

/// Writes a header line, a `rows cols nnz` line, then zero-based triplets.
pub fn write_bow(path: &Path, bow: &BowMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{BOW_HEADER}")?;
    writeln!(out, "{} {} {}", bow.rows(), bow.cols(), bow.nnz())?;
    for (r, w, c) in bow.triplets() {
        writeln!(out, "{r} {w} {c}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bow(path: &Path) -> Result<BowMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let bad = |what: &str| invalid(format!("{}: malformed {what}", path.display()));
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("size line"))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad("size line")))
        .collect::<Result<_>>()?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(bad("size line"));
    };
    let mut trip = Vec::with_capacity(nnz);
    for line in lines {
        let v: Vec<&str> = line.split_whitespace().collect();
        let [r, w, c] = v[..] else {
            return Err(bad("triplet"));
        };
        trip.push((
            r.parse().map_err(|_| bad("triplet"))?,
            w.parse().map_err(|_| bad("triplet"))?,
            c.parse().map_err(|_| bad("triplet"))?,
        ));
    }
    if trip.len() != nnz {
        return Err(bad("entry count"));
    }
    BowMatrix::from_triplets(rows, cols, &trip)
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = String::with_capacity(ids.len() * 8);
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// One idf value per line, in vocabulary order, printed round-trip exact.
pub fn write_idf(path: &Path, idf: &[f64]) -> Result<()> {
    let out: String = idf.iter().map(|v| format!("{v:?}\n")).collect();
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_and_lines_inputs() {
        let src = "{\"id\": \"a\", \"text\": \"Hello world\"}\n{\"id\": 7, \"text\": \"123\"}\n";
        let docs = read_documents(src.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "a");

        let docs = read_documents("one two\n\nthree\n".as_bytes(), InputFormat::Lines).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["0", "2"]);

        let dup = "{\"id\": 1, \"text\": \"x y\"}\n{\"id\": 1, \"text\": \"z w\"}\n";
        assert!(read_documents(dup.as_bytes(), InputFormat::Jsonl).is_err());
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bow = BowMatrix::from_rows(3, vec![vec![(0, 2), (2, 1)], vec![(1, 5)]]).unwrap();
        let p = dir.path().join("bow.txt");
        write_bow(&p, &bow).unwrap();
        assert_eq!(read_bow(&p).unwrap(), bow);

        let vocab =
            Vocabulary::with_doc_freq(vec!["ant".into(), "bee".into()], vec![3, 1]).unwrap();
        let p = dir.path().join("vocab.txt");
        write_vocabulary(&p, &vocab).unwrap();
        assert_eq!(read_vocabulary(&p).unwrap(), vocab);

        let ids = vec!["x".to_string(), "y".to_string()];
        let p = dir.path().join("ids.txt");
        write_ids(&p, &ids).unwrap();
        assert_eq!(read_ids(&p).unwrap(), ids);
    }
}
