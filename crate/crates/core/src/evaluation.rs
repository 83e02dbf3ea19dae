//! Embedding benchmarks: Spearman correlation of pair cosines against gold
//! scores, and KNN classification with k chosen on a validation split.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::datasets::{LabeledText, ScoredPair};
use crate::encoder::{EncoderError, EncoderModel};
use crate::losses::cosine;
use crate::pooling::{pool, PoolingStrategy};
use crate::static_embed::WordVectorTable;
use crate::tensor::{Tape, TensorError};
use crate::tokenizer::{encode_batch, Vocabulary};

pub mod report;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Input(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Anything that maps texts to fixed-width vectors.
pub trait SentenceEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

impl<F> SentenceEmbedder for F
where
    F: Fn(&str) -> Vec<f64>,
{
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self(t)).collect())
    }
}

impl SentenceEmbedder for WordVectorTable {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.sentence_embed_avg(t)).collect())
    }
}

/// Transformer encoder plus pooling, evaluated without a gradient tape.
#[derive(Debug, Clone)]
pub struct EncoderEmbedder<'a> {
    pub model: &'a EncoderModel,
    pub vocab: &'a Vocabulary,
    pub pooling: PoolingStrategy,
    pub chunk_size: usize,
}

impl<'a> EncoderEmbedder<'a> {
    pub fn new(model: &'a EncoderModel, vocab: &'a Vocabulary, pooling: PoolingStrategy) -> Self {
        Self {
            model,
            vocab,
            pooling,
            chunk_size: 64,
        }
    }
}

impl SentenceEmbedder for EncoderEmbedder<'_> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        // chunks are independent, so the result does not depend on scheduling
        let chunks: Vec<Result<Vec<Vec<f64>>>> = texts
            .par_chunks(self.chunk_size.max(1))
            .map(|chunk| {
                let batch = encode_batch(chunk, self.vocab, self.model.config().max_len);
                let mut tape = Tape::new();
                let params = self.model.bind_frozen(&mut tape);
                let hidden = self.model.forward(&mut tape, &params, &batch)?;
                let pooled = pool(&mut tape, hidden, &batch.flat_mask(), self.pooling)?;
                Ok(tape.value(pooled).rows())
            })
            .collect();
        let mut out = Vec::with_capacity(texts.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

/// Average ranks (1-based); tied values share the mean of their span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(EvalError::Input(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation("one input has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(EvalError::Input(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(EvalError::Input(format!("need at least 2 observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::Input("non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Cosine of each pair's two embeddings, in input order.
pub fn pair_cosines<E: SentenceEmbedder + ?Sized>(embedder: &E, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
    let left: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<&str> = pairs.iter().map(|p| p.1).collect();
    let (l, r) = (embedder.embed(&left)?, embedder.embed(&right)?);
    l.iter()
        .zip(&r)
        .map(|(a, b)| cosine(a, b).map_err(EvalError::from))
        .collect()
}

/// Spearman correlation between pair cosines and gold scores.
pub fn embedding_similarity_score<E: SentenceEmbedder + ?Sized>(embedder: &E, pairs: &[ScoredPair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(EvalError::Input(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let texts: Vec<(&str, &str)> = pairs.iter().map(|p| (p.sentence1.as_str(), p.sentence2.as_str())).collect();
    let cos = pair_cosines(embedder, &texts)?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    spearman(&cos, &gold)
}

pub fn minkowski(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::Input(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    if !(p >= 1.0) {
        return Err(EvalError::Input(format!("Minkowski order must be >= 1, got {p}")));
    }
    if p == 1.0 {
        return Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum());
    }
    if p == 2.0 {
        return Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>().powf(1.0 / p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnConfig {
    pub p: f64,
    pub k_grid: Vec<usize>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            k_grid: (1..=31).step_by(2).collect(),
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(EvalError::Input(format!("p must be >= 1, got {}", self.p)));
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return Err(EvalError::Input("k grid must be non-empty with positive values".into()));
        }
        Ok(())
    }
}

/// Training embeddings with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(EvalError::Input(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some(r) = rows.first() {
            if rows.iter().any(|x| x.len() != r.len()) {
                return Err(EvalError::Input("rows have different widths".into()));
            }
        }
        Ok(Self { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Training indices sorted by (distance, index).
    pub fn neighbours(&self, query: &[f64], p: f64) -> Result<Vec<(f64, usize)>> {
        let mut d = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| minkowski(r, query, p).map(|d| (d, i)))
            .collect::<Result<Vec<_>>>()?;
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(d)
    }
}

// Majority label among sorted neighbours; ties go to the tied label that
// appears first (nearest) in the list.
fn vote<'a>(labels: &'a [String], nearest: &[(f64, usize)]) -> &'a str {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &(_, i) in nearest {
        *counts.entry(labels[i].as_str()).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    nearest
        .iter()
        .map(|&(_, i)| labels[i].as_str())
        .find(|l| counts[l] == best)
        .expect("non-empty neighbour list")
}

pub fn knn_predict<'a>(train: &'a EmbeddingMatrix, query: &[f64], k: usize, p: f64) -> Result<&'a str> {
    if train.is_empty() {
        return Err(EvalError::Input("empty training set".into()));
    }
    if k == 0 || k > train.len() {
        return Err(EvalError::Input(format!("k = {k} invalid for {} training points", train.len())));
    }
    let nearest = train.neighbours(query, p)?;
    Ok(vote(&train.labels, &nearest[..k]))
}

/// Accuracy for every k in `ks`, sharing one distance sort per query.
pub fn accuracies_for_grid(train: &EmbeddingMatrix, queries: &EmbeddingMatrix, ks: &[usize], p: f64) -> Result<Vec<f64>> {
    if train.is_empty() || queries.is_empty() {
        return Err(EvalError::Input("empty split".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > train.len()) {
        return Err(EvalError::Input(format!("k = {k} invalid for {} training points", train.len())));
    }
    let hits: Vec<Vec<bool>> = queries
        .rows
        .par_iter()
        .zip(&queries.labels)
        .map(|(q, gold)| {
            let nearest = train.neighbours(q, p)?;
            Ok(ks.iter().map(|&k| vote(&train.labels, &nearest[..k]) == gold).collect())
        })
        .collect::<Result<_>>()?;
    let n = queries.len() as f64;
    Ok((0..ks.len())
        .map(|j| hits.iter().filter(|h| h[j]).count() as f64 / n)
        .collect())
}

/// k from the grid with the best validation accuracy (smallest k on ties).
/// Grid values larger than the training set are skipped.
pub fn select_k(train: &EmbeddingMatrix, validation: &EmbeddingMatrix, cfg: &KnnConfig) -> Result<(usize, f64)> {
    cfg.validate()?;
    let mut grid: Vec<usize> = cfg.k_grid.iter().copied().filter(|&k| k <= train.len()).collect();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(EvalError::Input(format!(
            "no k in the grid fits a training set of {}",
            train.len()
        )));
    }
    let acc = accuracies_for_grid(train, validation, &grid, cfg.p)?;
    let mut best = 0;
    for (i, &a) in acc.iter().enumerate() {
        if a > acc[best] {
            best = i;
        }
    }
    Ok((grid[best], acc[best]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub accuracy: f64,
    pub chosen_k: usize,
    pub validation_accuracy: f64,
}

fn embed_labeled<E: SentenceEmbedder + ?Sized>(embedder: &E, records: &[LabeledText]) -> Result<EmbeddingMatrix> {
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    EmbeddingMatrix::new(embedder.embed(&texts)?, records.iter().map(|r| r.label.clone()).collect())
}

/// Embeds every split once, picks k on validation and scores the test split.
pub fn classify_dataset<E: SentenceEmbedder + ?Sized>(
    embedder: &E,
    train: &[LabeledText],
    validation: &[LabeledText],
    test: &[LabeledText],
    cfg: &KnnConfig,
) -> Result<ClassificationResult> {
    if train.is_empty() || validation.is_empty() || test.is_empty() {
        return Err(EvalError::Input("train, validation and test splits must be non-empty".into()));
    }
    let train = embed_labeled(embedder, train)?;
    let val = embed_labeled(embedder, validation)?;
    let test = embed_labeled(embedder, test)?;
    let (k, val_acc) = select_k(&train, &val, cfg)?;
    let accuracy = accuracies_for_grid(&train, &test, &[k], cfg.p)?[0];
    Ok(ClassificationResult {
        accuracy,
        chosen_k: k,
        validation_accuracy: val_acc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCosineRow {
    pub text1: String,
    pub text2: String,
    pub cosine: f64,
}

pub fn pairwise_cosine_report<E: SentenceEmbedder + ?Sized>(embedder: &E, pairs: &[(&str, &str)]) -> Result<Vec<PairCosineRow>> {
    let cos = pair_cosines(embedder, pairs)?;
    Ok(pairs
        .iter()
        .zip(cos)
        .map(|(&(a, b), c)| PairCosineRow {
            text1: a.to_string(),
            text2: b.to_string(),
            cosine: c,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]], labels: &[&str]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(rows.iter().map(|r| r.to_vec()).collect(), labels.iter().map(|l| l.to_string()).collect())
            .unwrap()
    }

    #[test]
    fn spearman_basic() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(EvalError::Input(_))));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn minkowski_specializations() {
        assert_eq!(minkowski(&[1.0, 2.0], &[1.0, 2.0], 3.0).unwrap(), 0.0);
        assert_eq!(minkowski(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap(), 2.0);
        assert_eq!(minkowski(&[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap(), 2f64.sqrt());
        assert!(minkowski(&[0.0], &[1.0, 1.0], 2.0).is_err());
        assert!(minkowski(&[0.0], &[1.0], 0.5).is_err());
    }

    #[test]
    fn knn_fixture() {
        // A at distance 1 from the origin, B at distance 0.5
        let train = matrix(
            &[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.5, 0.0], &[0.0, -0.5]],
            &["A", "A", "A", "B", "B"],
        );
        assert_eq!(knn_predict(&train, &[0.0, 0.0], 3, 2.0).unwrap(), "B");
        assert_eq!(knn_predict(&train, &[1.0, 0.0], 1, 2.0).unwrap(), "A");
        assert_eq!(knn_predict(&train, &[0.0, 0.0], 5, 2.0).unwrap(), "A");
        assert!(knn_predict(&train, &[0.0, 0.0], 6, 2.0).is_err());
        let empty = matrix(&[], &[]);
        assert!(knn_predict(&empty, &[0.0], 1, 2.0).is_err());
    }

    #[test]
    fn knn_vote_tie_goes_to_nearest_label() {
        let train = matrix(&[&[1.0], &[2.0], &[3.0], &[4.0]], &["x", "y", "y", "x"]);
        // k=2 at 1.9: neighbours y(0.1), x(0.9) → tie, nearest is y
        assert_eq!(knn_predict(&train, &[1.9], 2, 2.0).unwrap(), "y");
        // equidistant points: lower index wins the distance tie
        let train = matrix(&[&[-1.0], &[1.0]], &["left", "right"]);
        assert_eq!(knn_predict(&train, &[0.0], 1, 2.0).unwrap(), "left");
    }

    #[test]
    fn select_k_self_match_and_ties() {
        let train = matrix(&[&[0.0], &[0.1], &[5.0], &[5.1], &[0.2]], &["a", "a", "b", "b", "b"]);
        let cfg = KnnConfig { p: 2.0, k_grid: vec![1, 3] };
        assert_eq!(select_k(&train, &train, &cfg).unwrap(), (1, 1.0));

        let train = matrix(&[&[0.0], &[0.1], &[0.2], &[5.0], &[5.1], &[5.2]], &["a", "a", "a", "b", "b", "b"]);
        let val = matrix(&[&[0.05], &[5.05]], &["a", "b"]);
        let cfg = KnnConfig { p: 2.0, k_grid: vec![5, 3] };
        assert_eq!(select_k(&train, &val, &cfg).unwrap(), (3, 1.0));
    }

    #[test]
    fn closure_embedder_and_report() {
        let embed = |t: &str| vec![t.len() as f64, 1.0];
        let rows = pairwise_cosine_report(&embed, &[("ab", "ab"), ("a", "abcd")]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].cosine - 1.0).abs() < 1e-15);
        let expected = cosine(&[1.0, 1.0], &[4.0, 1.0]).unwrap();
        assert_eq!(rows[1].cosine, expected);
    }
}
