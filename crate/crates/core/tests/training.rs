mod support;

use sembed_core::datasets::ScoredPair;
use sembed_core::trainer::{train_nli, train_sts, train_two_step, TrainError};
use sembed_core::{EncoderModel, PoolingStrategy, TrainConfig};
use support::Experiment;

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

fn bits(model: &EncoderModel) -> Vec<u64> {
    model.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn nli_loss_falls_over_an_epoch() {
    let exp = Experiment::new(11, 512, 512, 10, 10);
    let mut model = exp.model();
    let trace = train_nli(&mut model, &exp.vocab, exp.triplets().0, &config(11)).unwrap();
    assert_eq!(trace.len(), 128);
    let tenth = trace.len() / 10;
    let (first, last) = (trace.mean_of(0..tenth), trace.mean_of(trace.len() - tenth..trace.len()));
    assert!(last < first, "first {first} last {last}");
    assert!(trace.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
}

#[test]
fn sts_loss_falls_between_first_and_last_epoch() {
    let exp = Experiment::new(12, 10, 10, 200, 200);
    let mut model = exp.model();
    let cfg = config(12);
    let trace = train_sts(&mut model, &exp.vocab, exp.pairs().0, &cfg, cfg.batch_sts_single).unwrap();
    let per_epoch = 200 / cfg.batch_sts_single;
    assert_eq!(trace.len(), per_epoch * cfg.epochs_sts);
    let first = trace.mean_of(0..per_epoch);
    let last = trace.mean_of(trace.len() - per_epoch..trace.len());
    assert!(last < first, "first epoch {first} last epoch {last}");
}

#[test]
fn two_step_is_nli_followed_by_sts_with_fresh_optimizer() {
    let exp = Experiment::new(13, 64, 64, 48, 48);
    let cfg = config(13);
    let mut joint = exp.model();
    let two = train_two_step(&mut joint, &exp.vocab, exp.triplets().0, exp.pairs().0, &cfg).unwrap();

    let mut manual = exp.model();
    let nli = train_nli(&mut manual, &exp.vocab, exp.triplets().0, &cfg).unwrap();
    let sts = train_sts(&mut manual, &exp.vocab, exp.pairs().0, &cfg, cfg.batch_sts_two_step).unwrap();
    assert_eq!(two.nli, nli);
    assert_eq!(two.sts, sts);
    assert_eq!(bits(&joint), bits(&manual));

    let combined = two.combined();
    assert_eq!(combined.len(), nli.len() + sts.len());
    assert_eq!(&combined.losses[..nli.len()], &nli.losses[..]);
    assert_eq!(&combined.losses[nli.len()..], &sts.losses[..]);
}

#[test]
fn training_is_reproducible_and_seed_dependent() {
    let exp = Experiment::new(14, 64, 64, 10, 10);
    let run = |seed: u64| {
        let mut m = exp.model();
        train_nli(&mut m, &exp.vocab, exp.triplets().0, &config(seed)).unwrap();
        bits(&m)
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn nli_training_separates_held_out_triplets() {
    let exp = Experiment::new(15, 640, 512, 10, 10);
    let mut model = exp.model();
    let before = exp.triplet_accuracy(&model, exp.triplets().1, PoolingStrategy::Mean);
    train_nli(&mut model, &exp.vocab, exp.triplets().0, &config(15)).unwrap();
    let after = exp.triplet_accuracy(&model, exp.triplets().1, PoolingStrategy::Mean);
    assert!(after > before && after >= 0.9, "before {before} after {after}");
}

#[test]
fn bad_inputs_are_rejected_before_training() {
    let exp = Experiment::new(16, 8, 8, 8, 8);
    let mut model = exp.model();
    let untouched = bits(&model);
    let bad_lr = TrainConfig {
        learning_rate: 0.0,
        epochs_sts: 0,
        ..config(1)
    };
    let err = train_nli(&mut model, &exp.vocab, exp.triplets().0, &bad_lr).unwrap_err();
    assert!(matches!(&err, TrainError::Config(m) if m.contains("learning_rate") && m.contains("epochs_sts")), "{err}");

    let pairs = vec![ScoredPair {
        sentence1: "a".into(),
        sentence2: "b".into(),
        score: 7.0,
    }];
    assert!(matches!(train_sts(&mut model, &exp.vocab, &pairs, &config(1), 8), Err(TrainError::Input(_))));
    assert!(matches!(train_two_step(&mut model, &exp.vocab, &[], exp.pairs().0, &config(1)), Err(TrainError::Input(_))));
    assert_eq!(bits(&model), untouched);
}
