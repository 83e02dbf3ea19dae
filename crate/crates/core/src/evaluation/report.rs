//! Result tables rendered as CSV or aligned markdown.

use std::fmt::Write as _;

use super::{ClassificationResult, PairCosineRow};

/// One cell of a results table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Value(f64),
    Error(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Value(v) => format!("{v:.4}"),
            Cell::Error(msg) => format!("error: {}", msg.replace(['\n', '|', ','], " ")),
            Cell::Empty => "-".to_string(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            _ => None,
        }
    }
}

impl<E: std::fmt::Display> From<Result<f64, E>> for Cell {
    fn from(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => Cell::Value(v),
            Err(e) => Cell::Error(e.to_string()),
        }
    }
}

/// Metrics for one embedder configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub model: String,
    pub pooling: String,
    pub embedding_similarity: Option<f64>,
    /// (dataset name, result) in a stable order.
    pub classification: Vec<(String, ClassificationResult)>,
    pub pairs: Vec<PairCosineRow>,
}

impl EvalReport {
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = vec![format!("model: {}", self.model), format!("pooling: {}", self.pooling)];
        if let Some(s) = self.embedding_similarity {
            out.push(format!("embedding_similarity: {s:.6}"));
        }
        for (name, r) in &self.classification {
            out.push(format!(
                "accuracy[{name}]: {:.6} (k = {}, validation accuracy {:.6})",
                r.accuracy, r.chosen_k, r.validation_accuracy
            ));
        }
        out
    }

    pub fn to_table(&self) -> ResultTable {
        let mut table = ResultTable::new(self.classification.iter().map(|(n, _)| n.clone()).collect());
        table.push(ResultRow {
            model: self.model.clone(),
            pooling: self.pooling.clone(),
            similarity: self.embedding_similarity.map_or(Cell::Empty, Cell::Value),
            accuracies: self.classification.iter().map(|(_, r)| Cell::Value(r.accuracy)).collect(),
        });
        table
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub pooling: String,
    pub similarity: Cell,
    pub accuracies: Vec<Cell>,
}

/// Model × pooling grid with one similarity column and one accuracy column
/// per classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub datasets: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(datasets: Vec<String>) -> Self {
        Self { datasets, rows: Vec::new() }
    }

    pub fn push(&mut self, mut row: ResultRow) {
        row.accuracies.resize(self.datasets.len(), Cell::Empty);
        self.rows.push(row);
    }

    pub fn has_errors(&self) -> bool {
        self.rows
            .iter()
            .any(|r| std::iter::once(&r.similarity).chain(&r.accuracies).any(|c| matches!(c, Cell::Error(_))))
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string(), "pooling".to_string(), "similarity".to_string()];
        h.extend(self.datasets.iter().map(|d| format!("acc:{d}")));
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.model.clone(), r.pooling.clone(), r.similarity.render()];
                cells.extend(r.accuracies.iter().map(Cell::render));
                cells
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        render_csv(&self.header(), &self.body())
    }

    pub fn to_markdown(&self) -> String {
        render_markdown(&self.header(), &self.body(), 2)
    }
}

pub fn pairs_to_csv(rows: &[PairCosineRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.text1.clone(), r.text2.clone(), format!("{:.4}", r.cosine)])
        .collect();
    render_csv(&["sentence1".into(), "sentence2".into(), "cosine".into()], &body)
}

pub fn pairs_to_markdown(rows: &[PairCosineRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.text1.replace('|', "\\|"), r.text2.replace('|', "\\|"), format!("{:.4}", r.cosine)])
        .collect();
    render_markdown(&["sentence1".into(), "sentence2".into(), "cosine".into()], &body, 2)
}

fn render_csv(header: &[String], body: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in std::iter::once(header).chain(body.iter().map(Vec::as_slice)) {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is UTF-8")
}

// Columns from `first_numeric` on are right-aligned.
fn render_markdown(header: &[String], body: &[Vec<String>], first_numeric: usize) -> String {
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = header.iter().map(|h| width(h).max(3)).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(width(c));
        }
    }
    let pad = |s: &str, w: usize, right: bool| {
        let fill = " ".repeat(w - width(s));
        if right {
            format!("{fill}{s}")
        } else {
            format!("{s}{fill}")
        }
    };
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| pad(c, widths[i], i >= first_numeric))
            .collect();
        let _ = writeln!(out, "| {} |", parts.join(" | "));
    };
    line(&mut out, header);
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if i >= first_numeric {
                format!("{}:", "-".repeat(w - 1))
            } else {
                "-".repeat(w)
            }
        })
        .collect();
    let _ = writeln!(out, "| {} |", rule.join(" | "));
    for row in body {
        line(&mut out, row);
    }
    out
}
