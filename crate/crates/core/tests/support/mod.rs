//! Brute-force oracles and gradient-check cases shared by the integration
//! tests and the acceptance runner. Oracles avoid library code paths on
//! purpose: ranks by counting, KNN by full sorting, MNRL by materialising
//! the logit table.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sembed_core::encoder::EncoderParams;
use sembed_core::gradcheck::{finite_diff_check_sampled, GradCheckReport};
use sembed_core::losses::{cosine_similarity_loss, mnrl_loss};
use sembed_core::pooling::pool;
use sembed_core::tensor::Result as TensorResult;
use sembed_core::tokenizer::TokenBatch;
use sembed_core::{EncoderConfig, EncoderModel, PoolingStrategy, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), normal_vec(rng, shape.iter().product())).unwrap()
}

// ---------------------------------------------------------------- oracles

pub fn oracle_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// Rank of each value = 1 + (# strictly smaller) + (# equal others) / 2.
pub fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    oracle_pearson(&oracle_ranks(x), &oracle_ranks(y))
}

pub fn oracle_minkowski(a: &[f64], b: &[f64], p: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]).abs().powf(p);
    }
    acc.powf(1.0 / p)
}

pub fn oracle_knn(train: &[Vec<f64>], labels: &[String], query: &[f64], k: usize, p: f64) -> String {
    let mut idx: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, r)| (oracle_minkowski(r, query, p), i)).collect();
    // insertion sort by (distance, index)
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && (idx[j].0 < idx[j - 1].0 || (idx[j].0 == idx[j - 1].0 && idx[j].1 < idx[j - 1].1)) {
            idx.swap(j, j - 1);
            j -= 1;
        }
    }
    let nearest = &idx[..k];
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for &(_, i) in nearest {
        *votes.entry(labels[i].as_str()).or_insert(0) += 1;
    }
    let top = *votes.values().max().unwrap();
    for &(_, i) in nearest {
        if votes[labels[i].as_str()] == top {
            return labels[i].clone();
        }
    }
    unreachable!()
}

pub fn oracle_accuracy(
    train: &[Vec<f64>],
    train_labels: &[String],
    queries: &[Vec<f64>],
    query_labels: &[String],
    k: usize,
    p: f64,
) -> f64 {
    let hits = queries
        .iter()
        .zip(query_labels)
        .filter(|(q, l)| &oracle_knn(train, train_labels, q, k, p) == *l)
        .count();
    hits as f64 / queries.len() as f64
}

/// Exhaustive grid search; strictly better accuracy is required to move
/// to a larger k.
pub fn oracle_select_k(
    train: &[Vec<f64>],
    train_labels: &[String],
    val: &[Vec<f64>],
    val_labels: &[String],
    grid: &[usize],
    p: f64,
) -> (usize, f64) {
    let mut sorted: Vec<usize> = grid.iter().copied().filter(|&k| k <= train.len()).collect();
    sorted.sort();
    let mut best = (0, -1.0);
    for k in sorted {
        let acc = oracle_accuracy(train, train_labels, val, val_labels, k, p);
        if acc > best.1 {
            best = (k, acc);
        }
    }
    best
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Full `B × 2B` logit table, then per-row log-sum-exp cross-entropy.
pub fn oracle_mnrl(anchors: &[Vec<f64>], positives: &[Vec<f64>], negatives: &[Vec<f64>], scale: f64) -> f64 {
    let b = anchors.len();
    let candidates: Vec<Vec<f64>> = positives.iter().chain(negatives).map(|r| unit(r)).collect();
    let mut total = 0.0;
    for i in 0..b {
        let a = unit(&anchors[i]);
        let logits: Vec<f64> = candidates
            .iter()
            .map(|c| scale * a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    total / b as f64
}

// ------------------------------------------------------- gradient suite

pub type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> TensorResult<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: CaseFn,
    pub tol: f64,
    /// coordinates probed per input (all when the input is smaller)
    pub max_per_input: usize,
}

impl GradCase {
    pub fn run(&self) -> TensorResult<GradCheckReport> {
        finite_diff_check_sampled(&self.f, &self.inputs, 1e-5, self.tol, self.max_per_input)
    }
}

pub const UNIT_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;

// Reduces any output to a scalar with fixed pseudo-random weights so that
// every output coordinate contributes a distinct gradient.
fn weighted_sum(t: &mut Tape, out: Var, seed: u64) -> TensorResult<Var> {
    let shape = t.shape(out).to_vec();
    let w = normal_tensor(&mut rng(seed), &shape);
    let w = t.constant(w);
    let prod = t.mul(out, w)?;
    t.sum(prod)
}

fn unit_case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> TensorResult<Var> + 'static) -> GradCase {
    GradCase {
        name,
        inputs,
        f: Box::new(move |t, v| {
            let out = f(t, v)?;
            weighted_sum(t, out, 99)
        }),
        tol: UNIT_TOL,
        max_per_input: usize::MAX,
    }
}

fn mask_with_padding(b: usize, t: usize, r: &mut ChaCha8Rng) -> Vec<u8> {
    let mut mask = vec![0u8; b * t];
    for i in 0..b {
        let len = r.random_range(1..=t);
        mask[i * t..i * t + len].iter_mut().for_each(|m| *m = 1);
    }
    mask
}

pub fn unit_op_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut n = |shape: &[usize]| normal_tensor(&mut r, shape);
    let (m34, m42, m34b) = (n(&[3, 4]), n(&[4, 2]), n(&[3, 4]));
    let (g1, g2) = (n(&[2, 3, 4]), n(&[2, 4, 2]));
    let bias = n(&[4]);
    let soft = n(&[2, 3, 4]);
    let ln_x = n(&[3, 5]);
    let (ln_g, ln_b) = (n(&[5]), n(&[5]));
    let gelu_x = n(&[2, 6]);
    let table = n(&[5, 3]);
    let btd = n(&[2, 4, 3]);
    let btd2 = n(&[2, 4, 3]);
    let rows = n(&[3, 4]);
    let logits = n(&[3, 5]);
    let perm_x = n(&[2, 3, 4]);
    let mut mr = rng(seed ^ 0x5eed);
    let mask = mask_with_padding(2, 4, &mut mr);
    let mask2 = mask.clone();

    vec![
        unit_case("matmul", vec![m34.clone(), m42], |t, v| t.matmul(v[0], v[1])),
        unit_case("batch_matmul", vec![g1, g2], |t, v| t.batch_matmul(v[0], v[1])),
        unit_case("add", vec![m34.clone(), m34b.clone()], |t, v| t.add(v[0], v[1])),
        unit_case("sub", vec![m34.clone(), m34b.clone()], |t, v| t.sub(v[0], v[1])),
        unit_case("mul", vec![m34.clone(), m34b], |t, v| t.mul(v[0], v[1])),
        unit_case("add_row", vec![m34.clone(), bias], |t, v| t.add_row(v[0], v[1])),
        unit_case("scale", vec![m34.clone()], |t, v| t.scale(v[0], -2.5)),
        unit_case("reshape", vec![m34.clone()], |t, v| t.reshape(v[0], &[2, 6])),
        unit_case("permute", vec![perm_x], |t, v| t.permute(v[0], &[1, 0, 2])),
        unit_case("transpose", vec![m34.clone()], |t, v| t.transpose(v[0])),
        unit_case("softmax_last", vec![soft.clone()], |t, v| t.softmax(v[0], 2)),
        unit_case("softmax_inner", vec![soft], |t, v| t.softmax(v[0], 1)),
        unit_case("layer_norm", vec![ln_x, ln_g, ln_b], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-12)),
        unit_case("gelu", vec![gelu_x], |t, v| t.gelu(v[0])),
        unit_case("gather_rows", vec![table], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2])),
        unit_case("sum", vec![m34.clone()], |t, v| t.sum(v[0])),
        unit_case("mean", vec![m34.clone()], |t, v| t.mean(v[0])),
        unit_case("sum_last_axis", vec![m34], |t, v| t.sum_last_axis(v[0])),
        unit_case("select_axis1", vec![btd.clone()], |t, v| t.select_axis1(v[0], 0)),
        unit_case("masked_mean", vec![btd.clone()], move |t, v| t.masked_mean(v[0], &mask)),
        unit_case("masked_max", vec![btd2], move |t, v| t.masked_max(v[0], &mask2)),
        unit_case("normalize_rows", vec![rows.clone()], |t, v| t.normalize_rows(v[0])),
        unit_case("concat_rows", vec![rows.clone(), rows], |t, v| t.concat_rows(v[0], v[1])),
        unit_case("cross_entropy", vec![logits], |t, v| t.cross_entropy(v[0], &[0, 4, 2])),
    ]
}

pub fn toy_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 12,
        hidden_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ff_dim: 16,
        max_len: 8,
        seed,
    }
}

/// Token batch of `rows` sequences with random lengths; CLS/SEP framing and
/// right padding mimic the tokenizer's output.
pub fn random_batch(r: &mut ChaCha8Rng, rows: usize, vocab: usize, max_len: usize) -> TokenBatch {
    let lens: Vec<usize> = (0..rows).map(|_| r.random_range(1..=max_len - 2)).collect();
    let t = lens.iter().max().unwrap() + 2;
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for &len in &lens {
        let mut row = vec![1usize];
        row.extend((0..len).map(|_| r.random_range(4..vocab)));
        row.push(2);
        let mut m = vec![1u8; row.len()];
        row.resize(t, 0);
        m.resize(t, 0);
        ids.push(row);
        mask.push(m);
    }
    TokenBatch {
        ids,
        mask,
        lengths: lens.iter().map(|l| l + 2).collect(),
    }
}

fn bind(model: &EncoderModel, vars: &[Var]) -> EncoderParams<Var> {
    EncoderParams::from_ordered(model.config().num_layers, vars.iter().copied()).expect("canonical layout")
}

/// Encoder forward + pooling + loss, differentiated with respect to every
/// parameter tensor.
pub fn composite_cases(seed: u64) -> Vec<GradCase> {
    let model = EncoderModel::init(toy_config(seed)).unwrap();
    let inputs: Vec<Tensor> = model.params().iter().cloned().collect();
    let mut r = rng(seed ^ 0xc0de);
    let (a, p, n) = (
        random_batch(&mut r, 3, 12, 8),
        random_batch(&mut r, 3, 12, 8),
        random_batch(&mut r, 3, 12, 8),
    );
    let (u, v) = (random_batch(&mut r, 3, 12, 8), random_batch(&mut r, 3, 12, 8));
    let gold = vec![4.5, 0.5, 2.0];
    let hidden_batch = random_batch(&mut r, 2, 12, 8);

    let mut cases = Vec::new();
    {
        let model = model.clone();
        cases.push(GradCase {
            name: "encoder_hidden_states",
            inputs: inputs.clone(),
            f: Box::new(move |t, vars| {
                let params = bind(&model, vars);
                let h = model.forward(t, &params, &hidden_batch).map_err(encoder_err)?;
                weighted_sum(t, h, 7)
            }),
            tol: COMPOSITE_TOL,
            max_per_input: usize::MAX,
        });
    }
    for pooling in PoolingStrategy::ALL {
        let model = model.clone();
        let (a, p, n) = (a.clone(), p.clone(), n.clone());
        cases.push(GradCase {
            name: match pooling {
                PoolingStrategy::Cls => "encoder_cls_mnrl",
                PoolingStrategy::Mean => "encoder_mean_mnrl",
                PoolingStrategy::Max => "encoder_max_mnrl",
            },
            inputs: inputs.clone(),
            f: Box::new(move |t, vars| {
                let params = bind(&model, vars);
                let mut emb = |batch: &TokenBatch| -> TensorResult<Var> {
                    let h = model.forward(t, &params, batch).map_err(encoder_err)?;
                    pool(t, h, &batch.flat_mask(), pooling)
                };
                let (ea, ep, en) = (emb(&a)?, emb(&p)?, emb(&n)?);
                mnrl_loss(t, ea, ep, en, 20.0)
            }),
            tol: COMPOSITE_TOL,
            max_per_input: usize::MAX,
        });
    }
    {
        let model = model.clone();
        cases.push(GradCase {
            name: "encoder_mean_cosine_loss",
            inputs,
            f: Box::new(move |t, vars| {
                let params = bind(&model, vars);
                let hu = model.forward(t, &params, &u).map_err(encoder_err)?;
                let eu = pool(t, hu, &u.flat_mask(), PoolingStrategy::Mean)?;
                let hv = model.forward(t, &params, &v).map_err(encoder_err)?;
                let ev = pool(t, hv, &v.flat_mask(), PoolingStrategy::Mean)?;
                cosine_similarity_loss(t, eu, ev, &gold, 5.0)
            }),
            tol: COMPOSITE_TOL,
            max_per_input: usize::MAX,
        });
    }
    cases
}

fn encoder_err(e: sembed_core::EncoderError) -> sembed_core::TensorError {
    match e {
        sembed_core::EncoderError::Tensor(t) => t,
        other => sembed_core::TensorError::Contract(other.to_string()),
    }
}

/// Pools one random batch with and without extra padding columns and
/// compares the sentence vectors bit for bit. Returns the number of pooled
/// rows checked.
pub fn padding_instance(seed: u64, strategy: PoolingStrategy) -> Result<usize, String> {
    let cfg = toy_config(seed);
    let model = EncoderModel::init(cfg.clone()).map_err(|e| e.to_string())?;
    let mut r = rng(seed ^ 0x9e37_79b9);
    let rows = r.random_range(1..=4);
    let batch = random_batch(&mut r, rows, cfg.vocab_size, cfg.max_len - 2);
    let extra = r.random_range(1..=cfg.max_len - batch.seq_len());
    let pooled = |b: &TokenBatch| -> Result<Tensor, String> {
        let hidden = model.hidden_states(b).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let h = tape.constant(hidden);
        let v = pool(&mut tape, h, &b.flat_mask(), strategy).map_err(|e| e.to_string())?;
        Ok(tape.value(v).clone())
    };
    let (a, b) = (pooled(&batch)?, pooled(&batch.padded(extra))?);
    if a.shape() != b.shape() {
        return Err(format!("shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    if let Some(i) = a.data().iter().zip(b.data()).position(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err(format!("{strategy} seed {seed}: element {i} {} vs {}", a.data()[i], b.data()[i]));
    }
    Ok(rows)
}

/// Synthetic corpus, vocabulary and encoder shape used by the training
/// tests and the acceptance runner.
pub struct Experiment {
    pub corpus: sembed_core::datasets::SynthCorpus,
    /// Triplets used for training; the remaining ones are held out.
    pub train_triplets: usize,
    /// Scored pairs used for training; the remaining ones are held out.
    pub train_pairs: usize,
    pub vocab: sembed_core::Vocabulary,
    pub config: EncoderConfig,
}

impl Experiment {
    pub fn new(seed: u64, triplets: usize, train_triplets: usize, pairs: usize, train_pairs: usize) -> Self {
        let spec = sembed_core::datasets::SynthSpec {
            triplets,
            pairs,
            seed,
            ..Default::default()
        };
        let corpus = sembed_core::datasets::synth_generate(&spec).expect("valid spec");
        let mut texts: Vec<&str> = corpus.triplets[..train_triplets]
            .iter()
            .flat_map(|t| [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()])
            .collect();
        texts.extend(corpus.pairs[..train_pairs].iter().flat_map(|p| [p.sentence1.as_str(), p.sentence2.as_str()]));
        let vocab = sembed_core::Vocabulary::build(&texts, 2000);
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 4,
            ff_dim: 64,
            max_len: 32,
            seed,
        };
        Self {
            corpus,
            train_triplets,
            train_pairs,
            vocab,
            config,
        }
    }

    pub fn model(&self) -> EncoderModel {
        EncoderModel::init(self.config.clone()).expect("valid config")
    }

    pub fn triplets(&self) -> (&[sembed_core::datasets::TripletExample], &[sembed_core::datasets::TripletExample]) {
        self.corpus.triplets.split_at(self.train_triplets)
    }

    pub fn pairs(&self) -> (&[sembed_core::datasets::ScoredPair], &[sembed_core::datasets::ScoredPair]) {
        self.corpus.pairs.split_at(self.train_pairs)
    }

    /// Fraction of triplets whose anchor is closer (by cosine) to the
    /// positive than to the negative.
    pub fn triplet_accuracy(&self, model: &EncoderModel, triplets: &[sembed_core::datasets::TripletExample], pooling: PoolingStrategy) -> f64 {
        use sembed_core::SentenceEmbedder;
        let embedder = sembed_core::EncoderEmbedder::new(model, &self.vocab, pooling);
        let embed = |f: fn(&sembed_core::datasets::TripletExample) -> &str| {
            let texts: Vec<&str> = triplets.iter().map(f).collect();
            embedder.embed(&texts).expect("embedding succeeds")
        };
        let (a, p, n) = (embed(|t| &t.anchor), embed(|t| &t.positive), embed(|t| &t.negative));
        let hits = (0..triplets.len()).filter(|&i| cosine(&a[i], &p[i]) > cosine(&a[i], &n[i])).count();
        hits as f64 / triplets.len() as f64
    }

    /// Spearman correlation between cosine and gold on the held-out pairs.
    pub fn held_out_similarity(&self, model: &EncoderModel, pooling: PoolingStrategy) -> f64 {
        let embedder = sembed_core::EncoderEmbedder::new(model, &self.vocab, pooling);
        sembed_core::evaluation::embedding_similarity_score(&embedder, self.pairs().1).expect("defined correlation")
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

// ------------------------------------------------ randomized oracle sweeps
//
// Each sweep compares the library with its oracle on `count` random
// instances and returns how many were checked, or the first mismatch.

pub fn spearman_sweep(seed: u64, count: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut checked = 0;
    while checked < count {
        let n = r.random_range(2..40);
        // small integer ranges force ties
        let hi = r.random_range(2..12);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0..hi) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0..hi) as f64 * 0.5).collect();
        let want = oracle_spearman(&x, &y);
        match sembed_core::evaluation::spearman(&x, &y) {
            Ok(got) if (got - want).abs() < 1e-12 => checked += 1,
            Ok(got) => return Err(format!("spearman {x:?} {y:?}: {got} vs {want}")),
            Err(_) if !want.is_finite() => {}
            Err(e) => return Err(format!("spearman rejected a defined correlation: {e}")),
        }
    }
    Ok(checked)
}

pub fn minkowski_sweep(seed: u64, count: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    for i in 0..count {
        let d = r.random_range(1..20);
        let (a, b) = (normal_vec(&mut r, d), normal_vec(&mut r, d));
        let p = match i % 4 {
            0 => 1.0,
            1 => 2.0,
            2 => 3.0,
            _ => r.random_range(1.0..6.0),
        };
        let got = sembed_core::evaluation::minkowski(&a, &b, p).map_err(|e| e.to_string())?;
        let want = oracle_minkowski(&a, &b, p);
        if (got - want).abs() >= 1e-12 * want.max(1.0) {
            return Err(format!("minkowski p={p}: {got} vs {want}"));
        }
    }
    Ok(count)
}

pub fn knn_sweep(seed: u64, count: usize) -> Result<usize, String> {
    use sembed_core::evaluation::{knn_predict, EmbeddingMatrix};
    let mut r = rng(seed);
    let classes = ["a", "b", "c"];
    for _ in 0..count {
        let n = r.random_range(1..30);
        let d = r.random_range(1..4);
        // integer grid coordinates produce distance ties
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-3..=3) as f64).collect())
            .collect();
        let labs: Vec<String> = (0..n).map(|_| classes[r.random_range(0..3)].to_string()).collect();
        let query: Vec<f64> = (0..d).map(|_| r.random_range(-3..=3) as f64).collect();
        let k = r.random_range(1..=n);
        let p = [1.0, 2.0, 3.0][r.random_range(0..3)];
        let train = EmbeddingMatrix::new(rows.clone(), labs.clone()).map_err(|e| e.to_string())?;
        let got = knn_predict(&train, &query, k, p).map_err(|e| e.to_string())?;
        let want = oracle_knn(&rows, &labs, &query, k, p);
        if got != want {
            return Err(format!("knn n={n} k={k} p={p}: {got} vs {want}"));
        }
    }
    Ok(count)
}

/// Two labelled Gaussian blobs centred at -1 and +1.
pub fn blobs(r: &mut ChaCha8Rng, n: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut rows = Vec::new();
    let mut labs = Vec::new();
    for i in 0..n {
        let class = i % 2;
        let centre = if class == 0 { -1.0 } else { 1.0 };
        rows.push(normal_vec(r, 3).iter().map(|v| centre + spread * v).collect());
        labs.push(format!("c{class}"));
    }
    (rows, labs)
}

pub fn select_k_sweep(seed: u64, count: usize) -> Result<usize, String> {
    use sembed_core::evaluation::{select_k, EmbeddingMatrix, KnnConfig};
    let mut r = rng(seed);
    let grid: Vec<usize> = (1..=15).step_by(2).collect();
    for _ in 0..count {
        let spread = r.random_range(0.5..2.5);
        let n_train = r.random_range(4..30);
        let (tr, tl) = blobs(&mut r, n_train, spread);
        let (va, vl) = blobs(&mut r, 12, spread);
        let p = [1.0, 2.0][r.random_range(0..2)];
        let cfg = KnnConfig { p, k_grid: grid.clone() };
        let matrix = |rows: &[Vec<f64>], labs: &[String]| EmbeddingMatrix::new(rows.to_vec(), labs.to_vec()).map_err(|e| e.to_string());
        let got = select_k(&matrix(&tr, &tl)?, &matrix(&va, &vl)?, &cfg).map_err(|e| e.to_string())?;
        let want = oracle_select_k(&tr, &tl, &va, &vl, &grid, p);
        if got.0 != want.0 || (got.1 - want.1).abs() >= 1e-12 {
            return Err(format!("select_k: {got:?} vs {want:?}"));
        }
    }
    Ok(count)
}

pub fn mnrl_sweep(seed: u64, count: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    for i in 0..count {
        let b = if i == 0 { 2 } else { r.random_range(1..6) };
        let d = r.random_range(2..8);
        let gen = |r: &mut ChaCha8Rng| (0..b).map(|_| normal_vec(r, d)).collect::<Vec<_>>();
        let (a, p, n) = (gen(&mut r), gen(&mut r), gen(&mut r));
        let scale = if i % 2 == 0 { 20.0 } else { r.random_range(1.0..30.0) };
        let mut t = Tape::new();
        let mut leaf = |rows: &[Vec<f64>]| Tensor::from_rows(rows).map(|x| t.leaf(x));
        let (va, vp, vn) = (leaf(&a), leaf(&p), leaf(&n));
        let (va, vp, vn) = (va.map_err(|e| e.to_string())?, vp.map_err(|e| e.to_string())?, vn.map_err(|e| e.to_string())?);
        let loss = mnrl_loss(&mut t, va, vp, vn, scale).map_err(|e| e.to_string())?;
        let got = t.value(loss).item().map_err(|e| e.to_string())?;
        let want = oracle_mnrl(&a, &p, &n, scale);
        if (got - want).abs() >= 1e-12 {
            return Err(format!("mnrl B={b}: {got} vs {want}"));
        }
    }
    Ok(count)
}
