//! JSON Lines record loaders and the seeded synthetic corpus generator.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STS_SCORE_MAX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: invalid UTF-8")]
    Utf8 { line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: score {score} outside [0, 5]")]
    ScoreRange { line: usize, score: f64 },
    #[error("line {line}: field {field:?} is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("invalid generator settings: {0}")]
    InvalidSpec(String),
}

/// NLI-derived (anchor, entailment, contradiction) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletExample {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

/// Sentence pair with a gold similarity in [0, 5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub sentence1: String,
    pub sentence2: String,
    pub score: f64,
}

/// Two sentences without a score, for similarity reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPair {
    pub sentence1: String,
    pub sentence2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Per-record checks beyond the JSON schema.
pub trait Record: DeserializeOwned + Serialize {
    fn check(&self, line: usize) -> Result<(), DataError>;
}

fn non_empty(line: usize, field: &'static str, value: &str) -> Result<(), DataError> {
    if value.is_empty() {
        Err(DataError::EmptyField { line, field })
    } else {
        Ok(())
    }
}

impl Record for TripletExample {
    fn check(&self, line: usize) -> Result<(), DataError> {
        non_empty(line, "anchor", &self.anchor)?;
        non_empty(line, "positive", &self.positive)?;
        non_empty(line, "negative", &self.negative)
    }
}

impl Record for ScoredPair {
    fn check(&self, line: usize) -> Result<(), DataError> {
        non_empty(line, "sentence1", &self.sentence1)?;
        non_empty(line, "sentence2", &self.sentence2)?;
        if !(0.0..=STS_SCORE_MAX).contains(&self.score) {
            return Err(DataError::ScoreRange { line, score: self.score });
        }
        Ok(())
    }
}

impl Record for TextPair {
    fn check(&self, line: usize) -> Result<(), DataError> {
        non_empty(line, "sentence1", &self.sentence1)?;
        non_empty(line, "sentence2", &self.sentence2)
    }
}

impl Record for LabeledText {
    fn check(&self, line: usize) -> Result<(), DataError> {
        non_empty(line, "text", &self.text)?;
        non_empty(line, "label", &self.label)
    }
}

/// Parses JSON Lines bytes. Blank lines are skipped; line numbers are
/// 1-based.
pub fn parse_jsonl<T: Record>(bytes: &[u8]) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = std::str::from_utf8(raw).map_err(|_| DataError::Utf8 { line })?;
        let text = text.strip_suffix('\r').unwrap_or(text);
        if text.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(text).map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        record.check(line)?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_jsonl<T: Record>(path: &Path) -> Result<Vec<T>, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&bytes)
}

pub fn load_triplets(path: &Path) -> Result<Vec<TripletExample>, DataError> {
    load_jsonl(path)
}

pub fn load_scored_pairs(path: &Path) -> Result<Vec<ScoredPair>, DataError> {
    load_jsonl(path)
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledText>, DataError> {
    load_jsonl(path)
}

pub fn load_text_pairs(path: &Path) -> Result<Vec<TextPair>, DataError> {
    load_jsonl(path)
}

/// One compact JSON object per line, keys in schema order.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    fs::write(path, to_jsonl(records)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Settings for [`synth_generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub topics: usize,
    pub words_per_topic: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub triplets: usize,
    pub pairs: usize,
    pub labeled: usize,
    /// Fractions of the labeled pool for train and validation; the rest is test.
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            topics: 2,
            words_per_topic: 24,
            min_words: 4,
            max_words: 8,
            triplets: 512,
            pairs: 500,
            labeled: 300,
            train_fraction: 0.6,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut problems = Vec::new();
        if self.topics < 2 {
            problems.push(format!("topics must be at least 2, got {}", self.topics));
        }
        if self.words_per_topic < 2 {
            problems.push("words_per_topic must be at least 2".to_string());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            problems.push(format!(
                "sentence length range {}..={} is empty",
                self.min_words, self.max_words
            ));
        }
        for (name, v) in [("triplets", self.triplets), ("pairs", self.pairs), ("labeled", self.labeled)] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        let fractions = self.train_fraction + self.validation_fraction;
        if !(self.train_fraction > 0.0 && self.validation_fraction > 0.0 && fractions < 1.0) {
            problems.push("split fractions must be positive and leave room for a test split".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::InvalidSpec(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Word list of each topic; topics are disjoint.
    pub topic_words: Vec<Vec<String>>,
    pub triplets: Vec<TripletExample>,
    pub pairs: Vec<ScoredPair>,
    pub labeled: DatasetSplit<LabeledText>,
}

const SYLLABLES: [&str; 20] = [
    "ka", "ri", "mo", "tu", "ne", "sa", "lo", "vi", "da", "pe", "gu", "zo", "ha", "mi", "ro", "te", "bu", "ya", "fe", "no",
];

// Distinct pronounceable words, deterministic in `index`.
fn pseudo_word(index: usize) -> String {
    let mut n = index;
    let mut word = String::new();
    loop {
        word.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
        if n == 0 {
            break;
        }
        n -= 1;
    }
    // two-syllable minimum keeps words away from common short tokens
    if word.len() < 4 {
        word.push_str("na");
    }
    word
}

/// Shared-word Jaccard similarity of two sentences' word sets.
pub fn word_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<&str> = a.split_whitespace().collect();
    let sb: BTreeSet<&str> = b.split_whitespace().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Gold score `5·J` rounded to the nearest 0.5.
pub fn jaccard_gold(a: &str, b: &str) -> f64 {
    (STS_SCORE_MAX * word_jaccard(a, b) * 2.0).round() / 2.0
}

struct Generator {
    rng: ChaCha8Rng,
    spec: SynthSpec,
    topic_words: Vec<Vec<String>>,
}

impl Generator {
    fn sentence(&mut self, topic: usize) -> Vec<String> {
        let len = self.rng.random_range(self.spec.min_words..=self.spec.max_words);
        let words = &self.topic_words[topic];
        (0..len).map(|_| words.choose(&mut self.rng).expect("non-empty").clone()).collect()
    }

    fn other_topic(&mut self, topic: usize) -> usize {
        let shift = self.rng.random_range(1..self.spec.topics);
        (topic + shift) % self.spec.topics
    }

    fn triplet(&mut self) -> TripletExample {
        let topic = self.rng.random_range(0..self.spec.topics);
        let neg_topic = self.other_topic(topic);
        TripletExample {
            anchor: self.sentence(topic).join(" "),
            positive: self.sentence(topic).join(" "),
            negative: self.sentence(neg_topic).join(" "),
        }
    }

    // Keeps a random number of the first sentence's words and fills the
    // rest from the same or another topic, which spreads gold scores over
    // the whole 0..5 range.
    fn scored_pair(&mut self) -> ScoredPair {
        let topic = self.rng.random_range(0..self.spec.topics);
        let first = self.sentence(topic);
        let keep = self.rng.random_range(0..=first.len());
        let mut second: Vec<String> = first.clone();
        second.shuffle(&mut self.rng);
        second.truncate(keep);
        let fill_topic = if self.rng.random_bool(0.5) { topic } else { self.other_topic(topic) };
        let target = self.rng.random_range(self.spec.min_words..=self.spec.max_words).max(keep);
        while second.len() < target {
            let w = self.topic_words[fill_topic].choose(&mut self.rng).expect("non-empty").clone();
            second.push(w);
        }
        second.shuffle(&mut self.rng);
        let (s1, s2) = (first.join(" "), second.join(" "));
        let score = jaccard_gold(&s1, &s2);
        ScoredPair {
            sentence1: s1,
            sentence2: s2,
            score,
        }
    }
}

/// Generates topic-structured triplets, graded pairs and a labeled pool
/// split into train/validation/test. Equal specs give identical output.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus, DataError> {
    spec.validate()?;
    let topic_words: Vec<Vec<String>> = (0..spec.topics)
        .map(|t| {
            (0..spec.words_per_topic)
                .map(|w| pseudo_word(t * spec.words_per_topic + w))
                .collect()
        })
        .collect();
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        spec: spec.clone(),
        topic_words,
    };
    let triplets = (0..spec.triplets).map(|_| g.triplet()).collect();
    let pairs = (0..spec.pairs).map(|_| g.scored_pair()).collect();
    let pool: Vec<LabeledText> = (0..spec.labeled)
        .map(|i| {
            let topic = i % spec.topics;
            LabeledText {
                text: g.sentence(topic).join(" "),
                label: format!("topic{topic}"),
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut g.rng);
    let n_train = ((spec.labeled as f64) * spec.train_fraction).round() as usize;
    let n_val = ((spec.labeled as f64) * spec.validation_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
    let labeled = DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    };
    Ok(SynthCorpus {
        topic_words: g.topic_words,
        triplets,
        pairs,
        labeled,
    })
}
