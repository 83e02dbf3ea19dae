//! Token-to-sentence pooling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingStrategy {
    /// Hidden state at position 0.
    Cls,
    /// Average over active positions.
    Mean,
    /// Elementwise maximum over active positions.
    Max,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] = [Self::Cls, Self::Mean, Self::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cls => "cls",
            Self::Mean => "mean",
            Self::Max => "max",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(Self::Cls),
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(format!("unknown pooling strategy {other:?} (expected cls, mean or max)")),
        }
    }
}

/// Which positions MEAN and MAX see. `[CLS]` and `[SEP]` are real tokens and
/// included by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolingOptions {
    pub exclude_special: bool,
}

/// Collapses `[B, T, h]` hidden states to `[B, h]`. `mask` is row-major
/// `[B, T]`; every row needs at least one active position.
pub fn pool(tape: &mut Tape, hidden: Var, mask: &[u8], strategy: PoolingStrategy) -> Result<Var> {
    pool_with(tape, hidden, mask, strategy, PoolingOptions::default())
}

pub fn pool_with(
    tape: &mut Tape,
    hidden: Var,
    mask: &[u8],
    strategy: PoolingStrategy,
    options: PoolingOptions,
) -> Result<Var> {
    let shape = tape.shape(hidden).to_vec();
    let [b, t, _] = shape[..] else {
        return Err(TensorError::Contract(format!("pool expects [B, T, h], got {shape:?}")));
    };
    if mask.len() != b * t {
        return Err(TensorError::ShapeMismatch {
            op: "pool",
            lhs: vec![b, t],
            rhs: vec![mask.len()],
        });
    }
    if let Some(row) = mask.chunks(t).position(|r| r.iter().all(|&m| m == 0)) {
        return Err(TensorError::Contract(format!("mask row {row} is all zeros")));
    }
    let mask = if options.exclude_special {
        strip_special(mask, t)
    } else {
        mask.to_vec()
    };
    match strategy {
        PoolingStrategy::Cls => tape.select_axis1(hidden, 0),
        PoolingStrategy::Mean => tape.masked_mean(hidden, &mask),
        PoolingStrategy::Max => tape.masked_max(hidden, &mask),
    }
}

// Drops the first and last active position of each row, unless that
// would leave the row empty.
fn strip_special(mask: &[u8], t: usize) -> Vec<u8> {
    mask.chunks(t)
        .flat_map(|row| {
            let active = row.iter().filter(|&&m| m != 0).count();
            let mut out = row.to_vec();
            if active > 2 {
                out[0] = 0;
                out[active - 1] = 0;
            }
            out
        })
        .collect()
}
