//! AdamW with linear warmup/decay and the three siamese training setups:
//! NLI triplets with the ranking loss, STS pairs with cosine regression,
//! and NLI followed by STS.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datasets::{ScoredPair, TripletExample};
use crate::encoder::{decays, parameter_names, EncoderError, EncoderModel, EncoderParams};
use crate::losses::{cosine_similarity_loss, mnrl_loss, LossConfig};
use crate::pooling::{pool, PoolingStrategy};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::tokenizer::{encode_batch, Vocabulary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training input: {0}")]
    Input(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite parameters after step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainSetup {
    Nli,
    Sts,
    TwoStep,
}

impl fmt::Display for TrainSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nli => "nli",
            Self::Sts => "sts",
            Self::TwoStep => "two-step",
        })
    }
}

impl FromStr for TrainSetup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nli" => Ok(Self::Nli),
            "sts" => Ok(Self::Sts),
            "two-step" | "two_step" => Ok(Self::TwoStep),
            other => Err(format!("unknown setup {other:?} (expected nli, sts or two-step)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub setup: TrainSetup,
    pub epochs_nli: usize,
    pub batch_nli: usize,
    pub epochs_sts: usize,
    pub batch_sts_single: usize,
    pub batch_sts_two_step: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub pooling: PoolingStrategy,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            setup: TrainSetup::TwoStep,
            epochs_nli: 1,
            batch_nli: 4,
            epochs_sts: 4,
            batch_sts_single: 8,
            batch_sts_two_step: 8,
            learning_rate: 2e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            seed: 0,
            pooling: PoolingStrategy::Mean,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("epochs_nli", self.epochs_nli),
            ("batch_nli", self.batch_nli),
            ("epochs_sts", self.epochs_sts),
            ("batch_sts_single", self.batch_sts_single),
            ("batch_sts_two_step", self.batch_sts_two_step),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            problems.push(format!("warmup_fraction must be in [0, 1), got {}", self.warmup_fraction));
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Err(e) = self.loss.validate() {
            problems.push(e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamWState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            second: first.clone(),
            first,
        }
    }
}

/// One decoupled-weight-decay Adam update. Parameters flagged `false` in
/// `decay` skip the weight decay term.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamWState,
    lr: f64,
    opt: &AdamW,
    decay: &[bool],
) -> Result<(), TrainError> {
    let n = params.len();
    if grads.len() != n || state.first.len() != n || decay.len() != n {
        return Err(TrainError::Tensor(TensorError::Contract(format!(
            "adamw_step got {n} params, {} grads, {} moments, {} decay flags",
            grads.len(),
            state.first.len(),
            decay.len()
        ))));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(TrainError::Tensor(TensorError::ShapeMismatch {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - opt.beta1.powi(t);
    let bias2 = 1.0 - opt.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let wd = if decay[i] { opt.weight_decay } else { 0.0 };
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            *w -= lr * wd * *w;
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 over `ceil(warmup_fraction · total_steps)` steps,
/// then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    let warmup = (warmup_fraction * total_steps as f64).ceil() as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if step >= total_steps {
        return 0.0;
    }
    base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
}

/// Per-batch losses of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_csv())
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn mean_of(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.losses[range];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoStepTrace {
    pub nli: LossTrace,
    pub sts: LossTrace,
}

impl TwoStepTrace {
    /// Both phases as one trace, NLI steps first.
    pub fn combined(&self) -> LossTrace {
        LossTrace {
            losses: self.nli.losses.iter().chain(&self.sts.losses).copied().collect(),
        }
    }
}

/// Encodes texts, runs the shared encoder and pools to `[B, h]`.
pub fn embed_on_tape<S: AsRef<str>>(
    model: &EncoderModel,
    tape: &mut Tape,
    params: &EncoderParams<Var>,
    vocab: &Vocabulary,
    texts: &[S],
    pooling: PoolingStrategy,
) -> Result<Var, EncoderError> {
    let batch = encode_batch(texts, vocab, model.config().max_len);
    let hidden = model.forward(tape, params, &batch)?;
    Ok(pool(tape, hidden, &batch.flat_mask(), pooling)?)
}

// Shared optimisation loop: `loss_for` builds the loss of one batch of
// example indices on a fresh tape.
fn run_epochs<F>(
    model: &mut EncoderModel,
    n_examples: usize,
    epochs: usize,
    batch_size: usize,
    cfg: &TrainConfig,
    mut loss_for: F,
) -> Result<LossTrace, TrainError>
where
    F: FnMut(&EncoderModel, &mut Tape, &EncoderParams<Var>, &[usize]) -> Result<Var, TrainError>,
{
    if n_examples == 0 {
        return Err(TrainError::Input("training set is empty".into()));
    }
    let per_epoch = n_examples / batch_size;
    if per_epoch == 0 {
        return Err(TrainError::Input(format!(
            "{n_examples} examples do not fill one batch of {batch_size}"
        )));
    }
    let total_steps = per_epoch * epochs;
    let names = parameter_names(model.config());
    let decay: Vec<bool> = names.iter().map(|n| decays(n)).collect();
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let mut state = AdamWState::new(model.params().iter());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut trace = LossTrace::default();

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks_exact(batch_size) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let loss = loss_for(model, &mut tape, &bound, batch)?;
            trace.losses.push(tape.value(loss).item()?);
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .iter()
                .map(|&v| grads.take(v).expect("parameters are leaves"))
                .collect();
            let step = trace.losses.len() - 1;
            let lr = lr_schedule(step, total_steps, cfg.learning_rate, cfg.warmup_fraction);
            let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().collect();
            adamw_step(&mut params, &grads, &mut state, lr, &opt, &decay)?;
            if !model.is_finite() {
                return Err(TrainError::Diverged(step));
            }
        }
    }
    Ok(trace)
}

/// Setup 1: siamese ranking loss over (anchor, entailment, contradiction).
pub fn train_nli(
    model: &mut EncoderModel,
    vocab: &Vocabulary,
    triplets: &[TripletExample],
    cfg: &TrainConfig,
) -> Result<LossTrace, TrainError> {
    cfg.validate()?;
    let (pooling, scale) = (cfg.pooling, cfg.loss.mnrl_scale);
    run_epochs(model, triplets.len(), cfg.epochs_nli, cfg.batch_nli, cfg, |m, tape, params, idx| {
        let pick = |f: fn(&TripletExample) -> &str| idx.iter().map(|&i| f(&triplets[i])).collect::<Vec<_>>();
        let a = embed_on_tape(m, tape, params, vocab, &pick(|t| &t.anchor), pooling)?;
        let p = embed_on_tape(m, tape, params, vocab, &pick(|t| &t.positive), pooling)?;
        let n = embed_on_tape(m, tape, params, vocab, &pick(|t| &t.negative), pooling)?;
        Ok(mnrl_loss(tape, a, p, n, scale)?)
    })
}

/// Setup 2: siamese cosine regression against gold scores.
pub fn train_sts(
    model: &mut EncoderModel,
    vocab: &Vocabulary,
    pairs: &[ScoredPair],
    cfg: &TrainConfig,
    batch_size: usize,
) -> Result<LossTrace, TrainError> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    let score_max = cfg.loss.sts_score_max;
    if let Some(p) = pairs.iter().find(|p| !(0.0..=score_max).contains(&p.score)) {
        return Err(TrainError::Input(format!("score {} outside [0, {score_max}]", p.score)));
    }
    let pooling = cfg.pooling;
    run_epochs(model, pairs.len(), cfg.epochs_sts, batch_size, cfg, |m, tape, params, idx| {
        let s1: Vec<&str> = idx.iter().map(|&i| pairs[i].sentence1.as_str()).collect();
        let s2: Vec<&str> = idx.iter().map(|&i| pairs[i].sentence2.as_str()).collect();
        let gold: Vec<f64> = idx.iter().map(|&i| pairs[i].score).collect();
        let u = embed_on_tape(m, tape, params, vocab, &s1, pooling)?;
        let v = embed_on_tape(m, tape, params, vocab, &s2, pooling)?;
        Ok(cosine_similarity_loss(tape, u, v, &gold, score_max)?)
    })
}

/// Setup 3: [`train_nli`] then [`train_sts`] with the two-step STS batch
/// size and a fresh optimizer state.
pub fn train_two_step(
    model: &mut EncoderModel,
    vocab: &Vocabulary,
    triplets: &[TripletExample],
    pairs: &[ScoredPair],
    cfg: &TrainConfig,
) -> Result<TwoStepTrace, TrainError> {
    if triplets.is_empty() || pairs.is_empty() {
        return Err(TrainError::Input("two-step training needs both triplets and pairs".into()));
    }
    let nli = train_nli(model, vocab, triplets, cfg)?;
    let sts = train_sts(model, vocab, pairs, cfg, cfg.batch_sts_two_step)?;
    Ok(TwoStepTrace { nli, sts })
}
