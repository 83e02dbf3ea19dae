//! Siamese training objectives over pooled sentence vectors.

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Multiplier applied to cosine scores before the ranking softmax.
    pub mnrl_scale: f64,
    /// Top of the gold similarity scale.
    pub sts_score_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mnrl_scale: 20.0,
            sts_score_max: 5.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.mnrl_scale > 0.0) {
            return Err(format!("mnrl_scale must be positive, got {}", self.mnrl_scale));
        }
        if !(self.sts_score_max > 0.0) {
            return Err(format!("sts_score_max must be positive, got {}", self.sts_score_max));
        }
        Ok(())
    }
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cosine",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(TensorError::NumericDomain("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn same_rows(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.len() != 2 || sa != sb {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok(())
}

/// Multiple-negatives ranking loss.
///
/// Anchor `i` is scored against all `B` positives followed by all `B`
/// hard negatives; its target is positive `i`. Logits are
/// `scale · cos(anchor_i, candidate_j)`, and the loss is the mean
/// cross-entropy over anchors.
pub fn mnrl_loss(tape: &mut Tape, anchors: Var, positives: Var, negatives: Var, scale: f64) -> Result<Var> {
    same_rows(tape, "mnrl_loss", anchors, positives)?;
    same_rows(tape, "mnrl_loss", anchors, negatives)?;
    if !(scale > 0.0) {
        return Err(TensorError::Contract(format!("mnrl scale must be positive, got {scale}")));
    }
    let b = tape.shape(anchors)[0];
    let a = tape.normalize_rows(anchors)?;
    let p = tape.normalize_rows(positives)?;
    let n = tape.normalize_rows(negatives)?;
    let candidates = tape.concat_rows(p, n)?;
    let candidates_t = tape.transpose(candidates)?;
    let scores = tape.matmul(a, candidates_t)?;
    let logits = tape.scale(scores, scale)?;
    let targets: Vec<usize> = (0..b).collect();
    tape.cross_entropy(logits, &targets)
}

/// Mean squared error between `cos(u_i, v_i)` and `gold_i / score_max`.
pub fn cosine_similarity_loss(tape: &mut Tape, u: Var, v: Var, gold: &[f64], score_max: f64) -> Result<Var> {
    same_rows(tape, "cosine_similarity_loss", u, v)?;
    let b = tape.shape(u)[0];
    if gold.len() != b {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity_loss",
            lhs: vec![b],
            rhs: vec![gold.len()],
        });
    }
    if let Some(g) = gold.iter().find(|g| !(0.0..=score_max).contains(*g)) {
        return Err(TensorError::Contract(format!("gold score {g} outside [0, {score_max}]")));
    }
    let un = tape.normalize_rows(u)?;
    let vn = tape.normalize_rows(v)?;
    let prod = tape.mul(un, vn)?;
    let cos = tape.sum_last_axis(prod)?;
    let target = tape.constant(Tensor::vector(gold.iter().map(|g| g / score_max).collect())?);
    let diff = tape.sub(cos, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}
