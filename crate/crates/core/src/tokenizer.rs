//! Whitespace and punctuation tokenizer with a frequency-ranked vocabulary.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// NFC-normalizes, lowercases, splits on whitespace and isolates every
/// punctuation character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    for word in normalized.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary holding the reserved tokens followed by `tokens` in order.
    /// Duplicates and reserved names among `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// Ranks tokens by frequency (descending), breaking ties
    /// lexicographically, and keeps the top `max_size - 4`.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size.saturating_sub(RESERVED.len()));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// One token per line; line `n` (0-based) holds id `n + 4`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.content_tokens() {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Self {
        Self::from_tokens(text.lines())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_text())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::from_text(&fs::read_to_string(path)?))
    }

    pub fn encode_batch<S: AsRef<str>>(&self, texts: &[S], max_len: usize) -> TokenBatch {
        encode_batch(texts, self, max_len)
    }
}

/// Padded id matrix. Row `i` is `[CLS] tokens… [SEP] [PAD]…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<u8>>,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn batch_size(&self) -> usize {
        self.ids.len()
    }

    pub fn seq_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn flat_ids(&self) -> Vec<usize> {
        self.ids.concat()
    }

    pub fn flat_mask(&self) -> Vec<u8> {
        self.mask.concat()
    }

    /// Appends `extra` padding columns to every row.
    pub fn padded(&self, extra: usize) -> TokenBatch {
        let mut out = self.clone();
        for (ids, mask) in out.ids.iter_mut().zip(out.mask.iter_mut()) {
            ids.extend(std::iter::repeat_n(PAD_ID, extra));
            mask.extend(std::iter::repeat_n(0, extra));
        }
        out
    }

    /// Sub-batch with the given rows, re-trimmed to its own longest row.
    pub fn select(&self, rows: &[usize]) -> TokenBatch {
        let width = rows.iter().map(|&r| self.lengths[r]).max().unwrap_or(0);
        TokenBatch {
            ids: rows.iter().map(|&r| self.ids[r][..width].to_vec()).collect(),
            mask: rows.iter().map(|&r| self.mask[r][..width].to_vec()).collect(),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
        }
    }
}

/// Encodes texts with head truncation to `max_len` (including `[CLS]` and
/// `[SEP]`), right-padding to the longest row.
pub fn encode_batch<S: AsRef<str>>(texts: &[S], vocab: &Vocabulary, max_len: usize) -> TokenBatch {
    let content_cap = max_len.saturating_sub(2);
    let rows: Vec<Vec<usize>> = texts
        .iter()
        .map(|t| {
            let mut row = vec![CLS_ID];
            row.extend(tokenize(t.as_ref()).iter().take(content_cap).map(|tok| vocab.id(tok)));
            row.push(SEP_ID);
            row
        })
        .collect();
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
    let mask = lengths
        .iter()
        .map(|&n| (0..width).map(|i| u8::from(i < n)).collect())
        .collect();
    let ids = rows
        .into_iter()
        .map(|mut r| {
            r.resize(width, PAD_ID);
            r
        })
        .collect();
    TokenBatch { ids, mask, lengths }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_basic() {
        assert_eq!(tokenize("Hello, world"), ["hello", ",", "world"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t\n ").is_empty());
    }

    #[test]
    fn tokenize_fixtures() {
        let cases: [(&str, &[&str]); 5] = [
            ("मराठी भाषा, सुंदर!", &["मराठी", "भाषा", ",", "सुंदर", "!"]),
            ("Don't STOP", &["don", "'", "t", "stop"]),
            ("हिंदी।English", &["हिंदी", "।", "english"]),
            ("a-b_c (d)", &["a", "-", "b", "_", "c", "(", "d", ")"]),
            ("«Ünïcode»\u{00A0}tabs\there", &["«", "ünïcode", "»", "tabs", "here"]),
        ];
        for (text, expected) in cases {
            assert_eq!(tokenize(text), expected, "input {text:?}");
        }
    }

    #[test]
    fn tokenize_applies_nfc() {
        // "e" + combining acute composes to U+00E9
        assert_eq!(tokenize("Cafe\u{301}"), ["caf\u{e9}"]);
    }

    #[test]
    fn build_orders_by_frequency_then_lexically() {
        let v = Vocabulary::build(&["a a b"], 6);
        assert_eq!(v.len(), 6);
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), 4);

        let v = Vocabulary::build(&["y x"], 10);
        assert!(v.id("x") < v.id("y"));
    }

    #[test]
    fn build_truncates() {
        // counts: j×5, i×4, h×3, then g..a once each
        let corpus = ["j j j j j i i i i h h h a b c d e f g"];
        let v = Vocabulary::build(&corpus, 7);
        assert_eq!(v.content_tokens(), ["j", "i", "h"]);
        assert_eq!(v.id("a"), UNK_ID);
    }

    #[test]
    fn empty_corpus_gives_reserved_only() {
        let v = Vocabulary::build::<&str>(&[], 10);
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(CLS_ID), Some("[CLS]"));
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = Vocabulary::build(&["b a c a"], 20);
        let text = v.to_text();
        assert_eq!(text.lines().next(), Some("a"));
        assert_eq!(Vocabulary::from_text(&text), v);
    }

    #[test]
    fn encode_single_and_padding() {
        let v = Vocabulary::build(&["a b c"], 10);
        let b = encode_batch(&["a"], &v, 8);
        assert_eq!(b.ids, vec![vec![CLS_ID, v.id("a"), SEP_ID]]);
        assert_eq!(b.mask, vec![vec![1, 1, 1]]);

        let b = encode_batch(&["a", "a b c"], &v, 8);
        assert_eq!(b.ids[0], vec![CLS_ID, v.id("a"), SEP_ID, PAD_ID, PAD_ID]);
        assert_eq!(b.mask[0], vec![1, 1, 1, 0, 0]);
        assert_eq!(b.lengths, vec![3, 5]);
    }

    #[test]
    fn encode_head_truncation() {
        let v = Vocabulary::build(&["one two three four five six seven"], 20);
        let b = encode_batch(&["one two three four five six seven"], &v, 5);
        assert_eq!(b.seq_len(), 5);
        let expected: Vec<usize> = ["one", "two", "three"].iter().map(|t| v.id(t)).collect();
        assert_eq!(&b.ids[0][1..4], expected.as_slice());
        assert_eq!(b.ids[0][4], SEP_ID);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocabulary::build(&["known"], 10);
        let b = encode_batch(&["unseen"], &v, 8);
        assert_eq!(b.ids[0][1], UNK_ID);
    }
}
