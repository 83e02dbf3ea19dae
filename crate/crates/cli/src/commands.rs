use std::fs;
use std::path::{Path, PathBuf};

use sembed_core::datasets::{
    load_labeled, load_scored_pairs, load_text_pairs, load_triplets, synth_generate, write_jsonl, LabeledText,
    ScoredPair,
};
use sembed_core::evaluation::report::{pairs_to_csv, pairs_to_markdown, Cell, EvalReport, ResultRow, ResultTable};
use sembed_core::evaluation::{classify_dataset, embedding_similarity_score, pairwise_cosine_report};
use sembed_core::trainer::{train_nli, train_sts, train_two_step};
use sembed_core::{
    Checkpoint, EncoderEmbedder, EncoderModel, PoolingStrategy, SentenceEmbedder, TrainSetup, Vocabulary,
    WordVectorTable,
};

use crate::config::RunConfig;
use crate::manifest::{Manifest, ManifestRow};
use crate::{
    CliError, CliResult, CommonArgs, CompareArgs, EmbedderArgs, EvalArgs, EvalKind, PairsArgs, SynthArgs, TrainArgs,
    SEED_ENV,
};

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Config file, then `--set` overrides; the root seed comes from `--seed`,
/// the config, `SEMBED_SEED` or 0, in that order. The seed is announced on
/// stderr so stdout stays machine-readable.
fn load_config(common: &CommonArgs) -> CliResult<(RunConfig, u64)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        cfg.apply_assignment(s, "--set").map_err(usage)?;
    }
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|e| usage(format!("{SEED_ENV}={v:?}: {e}")))?,
        ),
        Err(_) => None,
    };
    let seed = common.seed.or(cfg.seed).or(env_seed).unwrap_or(0);
    eprintln!("seed: {seed}");
    Ok((cfg, seed))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn default_trace_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

pub fn train(a: &TrainArgs) -> CliResult<i32> {
    let (mut cfg, seed) = load_config(&a.common)?;
    if a.nli.is_some() {
        cfg.nli.clone_from(&a.nli);
    }
    if a.sts.is_some() {
        cfg.sts.clone_from(&a.sts);
    }
    if a.out.is_some() {
        cfg.out.clone_from(&a.out);
    }
    if a.trace.is_some() {
        cfg.trace.clone_from(&a.trace);
    }
    if let Some(p) = a.pooling {
        cfg.pooling = p.into();
    }
    let setup: TrainSetup = a.setup.into();
    let needs_nli = matches!(setup, TrainSetup::Nli | TrainSetup::TwoStep);
    let needs_sts = matches!(setup, TrainSetup::Sts | TrainSetup::TwoStep);
    if needs_nli && cfg.nli.is_none() {
        return Err(usage(format!("--setup {setup} requires --nli")));
    }
    if needs_sts && cfg.sts.is_none() {
        return Err(usage(format!("--setup {setup} requires --sts")));
    }
    let out = cfg.out.clone().ok_or_else(|| usage("--out is required"))?;
    cfg.validate().map_err(usage)?;

    let triplets = match (&cfg.nli, needs_nli) {
        (Some(p), true) => load_triplets(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
        _ => Vec::new(),
    };
    let pairs = match (&cfg.sts, needs_sts) {
        (Some(p), true) => load_scored_pairs(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
        _ => Vec::new(),
    };

    let (mut model, vocab) = match &a.init {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            let vocab = ckpt
                .vocabulary
                .ok_or_else(|| runtime(format!("{}: checkpoint carries no vocabulary", path.display())))?;
            let found = ckpt.model.config();
            let expected = cfg.encoder_config(found.vocab_size, found.seed);
            if !expected.same_architecture(found) {
                return Err(usage(format!(
                    "--init {}: checkpoint architecture (h={}, L={}, A={}, ff={}, max_len={}) does not match \
                     the configured (h={}, L={}, A={}, ff={}, max_len={})",
                    path.display(),
                    found.hidden_dim,
                    found.num_layers,
                    found.num_heads,
                    found.ff_dim,
                    found.max_len,
                    expected.hidden_dim,
                    expected.num_layers,
                    expected.num_heads,
                    expected.ff_dim,
                    expected.max_len,
                )));
            }
            (ckpt.model, vocab)
        }
        None => {
            let mut texts: Vec<&str> = Vec::new();
            for t in &triplets {
                texts.extend([t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()]);
            }
            for p in &pairs {
                texts.extend([p.sentence1.as_str(), p.sentence2.as_str()]);
            }
            let vocab = Vocabulary::build(&texts, cfg.vocab_max);
            let model = EncoderModel::init(cfg.encoder_config(vocab.len(), seed)).map_err(usage)?;
            (model, vocab)
        }
    };

    let tcfg = cfg.train_config(setup, seed);
    let trace = match setup {
        TrainSetup::Nli => train_nli(&mut model, &vocab, &triplets, &tcfg),
        TrainSetup::Sts => train_sts(&mut model, &vocab, &pairs, &tcfg, tcfg.batch_sts_single),
        TrainSetup::TwoStep => train_two_step(&mut model, &vocab, &triplets, &pairs, &tcfg).map(|t| t.combined()),
    }
    .map_err(|e| runtime(format!("training failed: {e}")))?;

    let parameters = model.parameter_count();
    Checkpoint {
        model,
        vocabulary: Some(vocab),
    }
    .save(&out)
    .map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let trace_path = cfg.trace.clone().unwrap_or_else(|| default_trace_path(&out));
    trace
        .write_csv(&trace_path)
        .map_err(|e| runtime(format!("cannot write {}: {e}", trace_path.display())))?;
    let last = trace.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {setup}: {} steps, final loss {last:.6}, {parameters} parameters -> {} (trace {})",
        trace.len(),
        out.display(),
        trace_path.display()
    );
    Ok(0)
}

#[allow(clippy::large_enum_variant)] // built once per command
enum Embedder {
    Encoder {
        model: EncoderModel,
        vocab: Vocabulary,
        pooling: PoolingStrategy,
    },
    Vectors(WordVectorTable),
}

impl Embedder {
    fn load_checkpoint(path: &Path, pooling: PoolingStrategy) -> Result<Self, String> {
        let ckpt = Checkpoint::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let vocab = ckpt
            .vocabulary
            .ok_or_else(|| format!("{}: checkpoint carries no vocabulary", path.display()))?;
        Ok(Self::Encoder {
            model: ckpt.model,
            vocab,
            pooling,
        })
    }

    fn load_vectors(path: &Path, buckets: Option<&Path>) -> Result<Self, String> {
        let mut table = WordVectorTable::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(b) = buckets {
            table = table.with_buckets(b).map_err(|e| format!("{}: {e}", b.display()))?;
        }
        Ok(Self::Vectors(table))
    }

    /// Usage checks happen here; load failures are runtime errors.
    fn from_args(a: &EmbedderArgs, cfg: &RunConfig) -> CliResult<(Self, String)> {
        match (&a.model, &a.wordvecs) {
            (Some(m), None) => {
                if a.buckets.is_some() {
                    return Err(usage("--buckets applies to --wordvecs only"));
                }
                let pooling = a.pooling.map(Into::into).unwrap_or(cfg.pooling);
                Ok((Self::load_checkpoint(m, pooling).map_err(runtime)?, stem(m)))
            }
            (None, Some(w)) => {
                if a.pooling.is_some() {
                    return Err(usage("--pooling applies to --model only; word vectors are averaged"));
                }
                Ok((Self::load_vectors(w, a.buckets.as_deref()).map_err(runtime)?, stem(w)))
            }
            _ => Err(usage("exactly one of --model and --wordvecs is required")),
        }
    }

    fn from_row(row: &ManifestRow, cfg: &RunConfig) -> Result<Self, String> {
        match (&row.checkpoint, &row.wordvecs) {
            (Some(c), _) => Self::load_checkpoint(c, row.pooling.unwrap_or(cfg.pooling)),
            (None, Some(w)) => Self::load_vectors(w, row.buckets.as_deref()),
            (None, None) => Err("row has no embedder".into()),
        }
    }

    fn pooling_label(&self) -> String {
        match self {
            Self::Encoder { pooling, .. } => pooling.to_string(),
            Self::Vectors(_) => "avg".into(),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&dyn SentenceEmbedder) -> R) -> R {
        match self {
            Self::Encoder { model, vocab, pooling } => f(&EncoderEmbedder::new(model, vocab, *pooling)),
            Self::Vectors(table) => f(table),
        }
    }
}

fn require<'a>(flag: &str, kind: &str, v: &'a Option<PathBuf>) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| usage(format!("eval {kind} requires {flag}")))
}

fn load_labeled_at(p: &Path) -> CliResult<Vec<LabeledText>> {
    load_labeled(p).map_err(|e| runtime(format!("{}: {e}", p.display())))
}

pub fn eval(a: &EvalArgs) -> CliResult<i32> {
    let (cfg, _) = load_config(&a.common)?;
    cfg.validate().map_err(usage)?;
    let kind = match a.kind {
        EvalKind::Sts => "sts",
        EvalKind::Cls => "cls",
    };
    let paths = match a.kind {
        EvalKind::Sts => vec![require("--data", kind, &a.data)?],
        EvalKind::Cls => vec![
            require("--train", kind, &a.train)?,
            require("--val", kind, &a.val)?,
            require("--test", kind, &a.test)?,
        ],
    };
    let (embedder, model_name) = Embedder::from_args(&a.embedder, &cfg)?;
    let mut report = EvalReport {
        model: model_name,
        pooling: embedder.pooling_label(),
        ..EvalReport::default()
    };
    match a.kind {
        EvalKind::Sts => {
            let pairs = load_scored_pairs(paths[0]).map_err(|e| runtime(format!("{}: {e}", paths[0].display())))?;
            let score = embedder
                .with(|e| embedding_similarity_score(e, &pairs))
                .map_err(runtime)?;
            report.embedding_similarity = Some(score);
        }
        EvalKind::Cls => {
            let (train, val, test) = (
                load_labeled_at(paths[0])?,
                load_labeled_at(paths[1])?,
                load_labeled_at(paths[2])?,
            );
            let result = embedder
                .with(|e| classify_dataset(e, &train, &val, &test, &cfg.knn_config()))
                .map_err(runtime)?;
            let name = a.name.clone().unwrap_or_else(|| "cls".into());
            report.classification.push((name, result));
        }
    }
    for line in report.summary_lines() {
        println!("{line}");
    }
    let table = report.to_table();
    if let Some(p) = a.csv.as_ref().or(cfg.csv.as_ref()) {
        write_file(p, &table.to_csv())?;
    }
    if let Some(p) = a.md.as_ref().or(cfg.md.as_ref()) {
        write_file(p, &table.to_markdown())?;
    }
    Ok(0)
}

pub fn report_pairs(a: &PairsArgs) -> CliResult<i32> {
    let (cfg, _) = load_config(&a.common)?;
    let (embedder, _) = Embedder::from_args(&a.embedder, &cfg)?;
    let pairs = load_text_pairs(&a.pairs).map_err(|e| runtime(format!("{}: {e}", a.pairs.display())))?;
    let texts: Vec<(&str, &str)> = pairs.iter().map(|p| (p.sentence1.as_str(), p.sentence2.as_str())).collect();
    let rows = embedder.with(|e| pairwise_cosine_report(e, &texts)).map_err(runtime)?;
    let md = pairs_to_markdown(&rows);
    print!("{md}");
    if let Some(p) = a.csv.as_ref().or(cfg.csv.as_ref()) {
        write_file(p, &pairs_to_csv(&rows))?;
    }
    if let Some(p) = a.md.as_ref().or(cfg.md.as_ref()) {
        write_file(p, &md)?;
    }
    Ok(0)
}

type Splits = (Vec<LabeledText>, Vec<LabeledText>, Vec<LabeledText>);

pub fn compare(a: &CompareArgs) -> CliResult<i32> {
    let (cfg, _) = load_config(&a.common)?;
    cfg.validate().map_err(usage)?;
    let manifest = Manifest::load(&a.manifest).map_err(usage)?;
    let knn = cfg.knn_config();

    // datasets that fail to load turn their column into error cells
    let sts: Option<Result<Vec<ScoredPair>, String>> = manifest
        .sts
        .as_ref()
        .map(|p| load_scored_pairs(p).map_err(|e| format!("{}: {e}", p.display())));
    let classification: Vec<Result<Splits, String>> = manifest
        .classification
        .iter()
        .map(|c| {
            let load = |p: &Path| load_labeled(p).map_err(|e| format!("{}: {e}", p.display()));
            Ok((load(&c.train)?, load(&c.val)?, load(&c.test)?))
        })
        .collect();

    let mut table = ResultTable::new(manifest.classification.iter().map(|c| c.name.clone()).collect());
    for row in &manifest.rows {
        let embedder = Embedder::from_row(row, &cfg);
        let pooling = match (&embedder, row.wordvecs.is_some()) {
            (Ok(e), _) => e.pooling_label(),
            (Err(_), true) => "avg".into(),
            (Err(_), false) => row.pooling.unwrap_or(cfg.pooling).to_string(),
        };
        let similarity = match (&sts, &embedder) {
            (None, _) => Cell::Empty,
            (Some(Err(e)), _) | (_, Err(e)) => Cell::Error(e.clone()),
            (Some(Ok(pairs)), Ok(emb)) => emb.with(|e| embedding_similarity_score(e, pairs)).into(),
        };
        let accuracies = classification
            .iter()
            .map(|data| match (data, &embedder) {
                (Err(e), _) | (_, Err(e)) => Cell::Error(e.clone()),
                (Ok((train, val, test)), Ok(emb)) => emb
                    .with(|e| classify_dataset(e, train, val, test, &knn))
                    .map(|r| r.accuracy)
                    .into(),
            })
            .collect();
        table.push(ResultRow {
            model: row.name.clone(),
            pooling,
            similarity,
            accuracies,
        });
    }

    let md = table.to_markdown();
    print!("{md}");
    if let Some(p) = a.csv.as_ref().or(cfg.csv.as_ref()) {
        write_file(p, &table.to_csv())?;
    }
    if let Some(p) = a.md.as_ref().or(cfg.md.as_ref()) {
        write_file(p, &md)?;
    }
    if table.has_errors() {
        eprintln!("error: at least one row failed; see the error cells above");
        return Ok(1);
    }
    Ok(0)
}

pub fn synth(a: &SynthArgs) -> CliResult<i32> {
    let (cfg, seed) = load_config(&a.common)?;
    cfg.validate().map_err(usage)?;
    let corpus = synth_generate(&cfg.synth_spec(seed)).map_err(usage)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| runtime(format!("{}: {e}", a.out_dir.display())))?;
    // the last fifth of the pairs is held out for evaluation
    let n_test = corpus.pairs.len() / 5;
    let (sts_train, sts_test) = corpus.pairs.split_at(corpus.pairs.len() - n_test);
    let dir = &a.out_dir;
    let write = |name: &str, r: Result<(), sembed_core::datasets::DataError>| {
        r.map_err(|e| runtime(format!("{}: {e}", dir.join(name).display())))
    };
    write("nli.jsonl", write_jsonl(&dir.join("nli.jsonl"), &corpus.triplets))?;
    write("sts.jsonl", write_jsonl(&dir.join("sts.jsonl"), sts_train))?;
    write("sts_test.jsonl", write_jsonl(&dir.join("sts_test.jsonl"), sts_test))?;
    write("cls_train.jsonl", write_jsonl(&dir.join("cls_train.jsonl"), &corpus.labeled.train))?;
    write("cls_val.jsonl", write_jsonl(&dir.join("cls_val.jsonl"), &corpus.labeled.validation))?;
    write("cls_test.jsonl", write_jsonl(&dir.join("cls_test.jsonl"), &corpus.labeled.test))?;
    println!(
        "wrote {} triplets, {}+{} scored pairs, {}/{}/{} labeled texts to {}",
        corpus.triplets.len(),
        sts_train.len(),
        sts_test.len(),
        corpus.labeled.train.len(),
        corpus.labeled.validation.len(),
        corpus.labeled.test.len(),
        dir.display()
    );
    Ok(0)
}
