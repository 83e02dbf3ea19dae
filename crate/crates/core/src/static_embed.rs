//! Averaged static word vectors with hashed character n-gram fallback for
//! out-of-vocabulary words.
//!
//! Text format: a header line `count dim`, then one line per word with the
//! word followed by `dim` space-separated reals. Bucket files use the same
//! layout with a `num_buckets dim` header and integer bucket ids in place
//! of words.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tokenizer::tokenize;

pub const NGRAM_MIN: usize = 3;
pub const NGRAM_MAX: usize = 6;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bucket dim {bucket_dim} does not match word vector dim {dim}")]
    DimMismatch { dim: usize, bucket_dim: usize },
    #[error("invalid n-gram range {min}..={max}")]
    NgramRange { min: usize, max: usize },
}

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Character n-grams of `<word>` for every length in `min..=max`, shortest
/// first, left to right.
pub fn char_ngrams(word: &str, min: usize, max: usize) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for n in min..=max {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            out.push(window.iter().collect());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    words: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
    buckets: Option<Vec<Vec<f64>>>,
    ngram_min: usize,
    ngram_max: usize,
}

fn parse_header(line: Option<&str>) -> Result<(usize, usize), VectorError> {
    let header = line.ok_or(VectorError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
    match parsed.as_deref() {
        Some(&[count, dim]) if dim > 0 => Ok((count, dim)),
        _ => Err(VectorError::Parse {
            line: 1,
            message: format!("expected header \"count dim\", got {header:?}"),
        }),
    }
}

type Row = (usize, String, Vec<f64>);

// Yields (line number, key, values) for every body line.
fn parse_rows(text: &str) -> Result<(usize, Vec<Row>), VectorError> {
    let mut lines = text.lines();
    let (count, dim) = parse_header(lines.next())?;
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let key = fields.next().expect("non-empty line").to_string();
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| VectorError::Parse {
                    line: line_no,
                    message: format!("{f:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(VectorError::Parse {
                line: line_no,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        rows.push((line_no, key, values));
    }
    if rows.len() != count {
        return Err(VectorError::Parse {
            line: 1,
            message: format!("header declares {count} rows, found {}", rows.len()),
        });
    }
    Ok((dim, rows))
}

fn read(path: &Path) -> Result<String, VectorError> {
    fs::read_to_string(path).map_err(|source| VectorError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl WordVectorTable {
    pub fn parse(text: &str) -> Result<Self, VectorError> {
        let (dim, rows) = parse_rows(text)?;
        let mut words = Vec::with_capacity(rows.len());
        let mut vectors = HashMap::with_capacity(rows.len());
        for (_, word, values) in rows {
            if let std::collections::hash_map::Entry::Vacant(slot) = vectors.entry(word.clone()) {
                words.push(word);
                slot.insert(values);
            }
        }
        Ok(Self {
            dim,
            words,
            vectors,
            buckets: None,
            ngram_min: NGRAM_MIN,
            ngram_max: NGRAM_MAX,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VectorError> {
        Self::parse(&read(path)?)
    }

    /// Attaches n-gram bucket vectors parsed from the bucket text format.
    pub fn with_buckets_text(mut self, text: &str) -> Result<Self, VectorError> {
        let (dim, rows) = parse_rows(text)?;
        if dim != self.dim {
            return Err(VectorError::DimMismatch {
                dim: self.dim,
                bucket_dim: dim,
            });
        }
        let n = rows.len();
        let mut buckets = vec![None; n];
        for (line, key, values) in rows {
            let id: usize = key.parse().map_err(|_| VectorError::Parse {
                line,
                message: format!("bucket id {key:?} is not an integer"),
            })?;
            let slot = buckets.get_mut(id).ok_or(VectorError::Parse {
                line,
                message: format!("bucket id {id} out of range for {n} buckets"),
            })?;
            if slot.is_some() {
                return Err(VectorError::Parse {
                    line,
                    message: format!("bucket id {id} repeated"),
                });
            }
            *slot = Some(values);
        }
        self.buckets = Some(buckets.into_iter().map(|b| b.expect("every id seen once")).collect());
        Ok(self)
    }

    pub fn with_buckets(self, path: &Path) -> Result<Self, VectorError> {
        let text = read(path)?;
        self.with_buckets_text(&text)
    }

    pub fn with_bucket_vectors(mut self, buckets: Vec<Vec<f64>>) -> Result<Self, VectorError> {
        if let Some(b) = buckets.iter().find(|b| b.len() != self.dim) {
            return Err(VectorError::DimMismatch {
                dim: self.dim,
                bucket_dim: b.len(),
            });
        }
        self.buckets = Some(buckets);
        Ok(self)
    }

    pub fn with_ngram_range(mut self, min: usize, max: usize) -> Result<Self, VectorError> {
        if min == 0 || min > max {
            return Err(VectorError::NgramRange { min, max });
        }
        self.ngram_min = min;
        self.ngram_max = max;
        Ok(self)
    }

    pub fn from_vectors(dim: usize, entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self, VectorError> {
        let mut text = String::new();
        let entries: Vec<_> = entries.into_iter().collect();
        writeln!(text, "{} {dim}", entries.len()).expect("string write");
        for (w, v) in &entries {
            write_row(&mut text, w, v);
        }
        Self::parse(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Serializes in the text format; values use shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.words.len(), self.dim);
        for w in &self.words {
            write_row(&mut out, w, &self.vectors[w]);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), VectorError> {
        fs::write(path, self.to_text()).map_err(|source| VectorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Stored vector, else mean of hashed n-gram buckets, else zeros.
    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.get(word) {
            return v.clone();
        }
        let mut out = vec![0.0; self.dim];
        let Some(buckets) = &self.buckets else {
            return out;
        };
        if buckets.is_empty() {
            return out;
        }
        let ngrams = char_ngrams(word, self.ngram_min, self.ngram_max);
        if ngrams.is_empty() {
            return out;
        }
        for g in &ngrams {
            let b = &buckets[(fnv1a64(g.as_bytes()) % buckets.len() as u64) as usize];
            out.iter_mut().zip(b).for_each(|(o, v)| *o += v);
        }
        let n = ngrams.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Mean of the non-zero word vectors of the tokenized text.
    pub fn sentence_embed_avg(&self, text: &str) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for tok in tokenize(text) {
            let v = self.word_vector(&tok);
            if v.iter().any(|&x| x != 0.0) {
                sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
                count += 1;
            }
        }
        if count > 0 {
            sum.iter_mut().for_each(|s| *s /= count as f64);
        }
        sum
    }
}

fn write_row(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v:?}").expect("string write");
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let t = WordVectorTable::parse("2 3\na 1 0 0\nb 0 1 0").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.word_vector("b"), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn wrong_value_count_names_line() {
        let err = WordVectorTable::parse("2 3\na 1 0 0\nb 0 1").unwrap_err();
        assert!(matches!(err, VectorError::Parse { line: 3, .. }), "{err}");
        let err = WordVectorTable::parse("2 x\n").unwrap_err();
        assert!(matches!(err, VectorError::Parse { line: 1, .. }));
        let err = WordVectorTable::parse("1 2\na 1 zz\n").unwrap_err();
        assert!(matches!(err, VectorError::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_word_first_wins() {
        let t = WordVectorTable::parse("2 1\na 1\na 2\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.word_vector("a"), vec![1.0]);
    }

    #[test]
    fn oov_without_buckets_is_zero() {
        let t = WordVectorTable::parse("1 2\na 1 1\n").unwrap();
        assert_eq!(t.word_vector("zzz"), vec![0.0, 0.0]);
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn ngram_enumeration() {
        assert_eq!(char_ngrams("ab", 3, 3), ["<ab", "ab>"]);
        assert_eq!(char_ngrams("ab", 3, 6), ["<ab", "ab>", "<ab>"]);
        assert_eq!(char_ngrams("मरा", 4, 4).len(), 2);
    }

    #[test]
    fn sentence_average() {
        let t = WordVectorTable::parse("3 2\nx 1 2\ny -1 -2\nz 3 0\n").unwrap();
        assert_eq!(t.sentence_embed_avg("x"), vec![1.0, 2.0]);
        assert_eq!(t.sentence_embed_avg("x y"), vec![0.0, 0.0]);
        // (1+(-1)+3)/3, (2-2+0)/3
        assert_eq!(t.sentence_embed_avg("x y z"), vec![1.0, 0.0]);
        // unknown tokens are skipped, not averaged as zeros
        assert_eq!(t.sentence_embed_avg("x unknown"), vec![1.0, 2.0]);
        assert_eq!(t.sentence_embed_avg(""), vec![0.0, 0.0]);
    }

    #[test]
    fn bucket_file_validation() {
        let t = WordVectorTable::parse("1 2\na 1 1\n").unwrap();
        assert!(t.clone().with_buckets_text("2 2\n0 1 1\n0 2 2\n").is_err());
        assert!(t.clone().with_buckets_text("1 3\n0 1 1 1\n").is_err());
        assert!(t.with_buckets_text("2 2\n1 1 1\n0 2 2\n").is_ok());
    }
}
