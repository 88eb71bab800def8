mod common;

use std::collections::{BTreeMap, BTreeSet};

use botstoi::audio::SeedContext;
use botstoi::corruption::ManifestRecord;
use botstoi::features::{FeatureKind, FeatureTensor};
use botstoi::harness::{
    cross_validate, evaluate, export_scatter, lcc, make_folds, mean_ranks, mse, parse_scatter, render_text, snr_bin,
    srcc, stratify_noise_count, train_model, Example, FoldSummary, Prediction, TrainConfig,
};
use botstoi::model::{Model, ModelConfig};
use botstoi::nn::AdamConfig;
use botstoi::Error;
use common::rng;
use proptest::prelude::*;
use rand::Rng;

fn record(clean: &str, i: usize, dur: f64) -> ManifestRecord {
    ManifestRecord {
        clean: clean.into(),
        noisy: Some(format!("noisy/{clean}_{i}.wav")),
        stoi: Some(0.5),
        snr_db: Some(5.0),
        chain: None,
        duration_s: Some(dur),
        error: None,
    }
}

#[test]
fn lcc_examples() {
    let x = [0.3, 1.2, -4.0, 7.5, 2.0];
    let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
    let down: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((lcc(&x, &up).unwrap() - 1.0).abs() < 1e-15);
    assert!((lcc(&x, &down).unwrap() + 1.0).abs() < 1e-15);
    // Means 2.75 and 3; deviations give sxy = 8, sxx = 8.75, syy = 10.
    let hand = 8.0 / (8.75f64 * 10.0).sqrt();
    assert!((lcc(&[1.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 5.0]).unwrap() - hand).abs() < 1e-12);
    assert!(matches!(
        lcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
        Err(Error::UndefinedCorrelation(_))
    ));
    assert!(matches!(lcc(&[1.0], &[1.0]), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(lcc(&[1.0, 2.0], &[1.0]), Err(Error::Argument(_))));
}

#[test]
fn srcc_examples() {
    let x = [0.1f64, -2.0, 3.3, 0.7, 1.9];
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    assert_eq!(srcc(&x, &e).unwrap(), 1.0);
    let rev: Vec<f64> = x.iter().map(|v| -v).collect();
    assert_eq!(srcc(&x, &rev).unwrap(), -1.0);
    // Mean ranks [1.5, 1.5, 3] and [2.5, 2.5, 1]: perfectly anti-ordered.
    assert_eq!(mean_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
    assert_eq!(mean_ranks(&[3.0, 3.0, 1.0]), vec![2.5, 2.5, 1.0]);
    assert!((srcc(&[1.0, 1.0, 2.0], &[3.0, 3.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn mse_examples() {
    let x = [0.2, 0.4, 0.9];
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
    assert!((mse(&x, &shifted).unwrap() - 0.01).abs() < 1e-15);
    let mut r = rng(1);
    let a: Vec<f64> = (0..100).map(|_| r.random_range(0.0..1.0)).collect();
    let b: Vec<f64> = (0..100).map(|_| r.random_range(0.0..1.0)).collect();
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]).powi(2);
    }
    assert!((mse(&a, &b).unwrap() - acc / 100.0).abs() < 1e-15);
    assert!(mse(&[], &[]).is_err());
}

fn ten_sources() -> Vec<ManifestRecord> {
    (0..10)
        .flat_map(|s| (0..3).map(move |i| record(&format!("src{s}"), i, 4.0)))
        .collect()
}

#[test]
fn folds_split_sources_evenly_and_reproducibly() {
    let records = ten_sources();
    let plan = make_folds(&records, 5, 7).unwrap();
    assert!(plan.sources.iter().all(|s| s.len() == 2));
    assert!(plan.folds.iter().all(|f| f.len() == 6));
    assert_eq!(plan, make_folds(&records, 5, 7).unwrap());
    assert_ne!(plan.sources, make_folds(&records, 5, 8).unwrap().sources);
}

#[test]
fn folds_reject_bad_k() {
    let records = ten_sources();
    assert!(matches!(make_folds(&records, 2, 0), Err(Error::Argument(_))));
    assert!(matches!(make_folds(&records[..6], 3, 0), Err(Error::Argument(_))));
}

#[test]
fn folds_skip_error_records() {
    let mut records = ten_sources();
    records[4].error = Some("alignment failed".into());
    records[4].stoi = None;
    let plan = make_folds(&records, 5, 1).unwrap();
    let all: Vec<usize> = plan.folds.concat();
    assert_eq!(all.len(), 29);
    assert!(!all.contains(&4));
}

#[test]
fn rounds_cover_every_fold_once() {
    let plan = make_folds(&ten_sources(), 5, 3).unwrap();
    for r in 0..5 {
        let round = plan.round(r);
        let (t, v, s): (BTreeSet<_>, BTreeSet<_>, BTreeSet<_>) = (
            round.train.iter().collect(),
            round.val.iter().collect(),
            round.test.iter().collect(),
        );
        assert!(t.is_disjoint(&v) && t.is_disjoint(&s) && v.is_disjoint(&s));
        assert_eq!(t.len() + v.len() + s.len(), 30);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_never_leak_sources(
        groups in prop::collection::vec((1usize..5, 1.0f64..9.0), 5..40),
        k in 3usize..6,
        seed in any::<u64>(),
    ) {
        let records: Vec<ManifestRecord> = groups
            .iter()
            .enumerate()
            .flat_map(|(s, &(n, d))| (0..n).map(move |i| record(&format!("s{s}"), i, d)))
            .collect();
        let plan = make_folds(&records, k, seed).unwrap();
        let fold_of = plan.fold_of();
        prop_assert_eq!(fold_of.len(), records.len());
        let mut source_fold: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let f = fold_of[&i];
            prop_assert_eq!(*source_fold.entry(r.clean.as_str()).or_insert(f), f);
        }
        prop_assert!(plan.folds.iter().all(|f| !f.is_empty()));
    }

    #[test]
    fn lcc_is_affine_invariant(
        xy in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..80),
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let base = lcc(&x, &y);
        prop_assume!(base.is_ok());
        let ys: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((lcc(&x, &ys).unwrap() - base.as_ref().unwrap()).abs() < 1e-12);
        prop_assert!((lcc(&xs, &y).unwrap() - base.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn srcc_is_invariant_to_increasing_maps(
        xy in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..80),
        ties in any::<bool>(),
    ) {
        let (mut x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if ties {
            x.iter_mut().for_each(|v| *v = v.round());
        }
        let base = srcc(&x, &y);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let cube: Vec<f64> = y.iter().map(|v| v * v * v + 2.0 * v).collect();
        let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(srcc(&x, &cube).unwrap(), base);
        prop_assert_eq!(srcc(&ex, &y).unwrap(), base);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn snr_bins_partition_the_line(snr in -100.0f64..100.0) {
        let edges = [f64::NEG_INFINITY, 0.0, 5.0, 10.0, 15.0, 20.0, f64::INFINITY];
        let b = snr_bin(snr);
        prop_assert!(snr >= edges[b] && snr < edges[b + 1]);
    }
}

#[test]
fn snr_bin_boundaries_are_left_closed() {
    assert_eq!(snr_bin(-3.0), 0);
    assert_eq!(snr_bin(0.0), 1);
    assert_eq!(snr_bin(4.999), 1);
    assert_eq!(snr_bin(5.0), 2);
    assert_eq!(snr_bin(20.0), 5);
    assert_eq!(snr_bin(19.999_999), 4);
}

fn prediction(i: usize, truth: f64, predicted: f64, snr_db: f64, noise_count: usize, fold: usize) -> Prediction {
    Prediction {
        noisy: format!("n{i}.wav"),
        clean: format!("c{i}.wav"),
        fold,
        truth,
        predicted,
        snr_db,
        noise_count,
    }
}

fn random_predictions(n: usize, seed: u64) -> Vec<Prediction> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let t = r.random_range(0.2..1.0);
            prediction(
                i,
                t,
                (t + r.random_range(-0.1..0.1f64)).clamp(0.0, 1.0),
                r.random_range(-8.0..30.0),
                1 + i % 3,
                i % 5,
            )
        })
        .collect()
}

#[test]
fn perfect_predictions_score_perfectly() {
    let preds: Vec<Prediction> = random_predictions(50, 2)
        .into_iter()
        .map(|p| Prediction {
            predicted: p.truth,
            ..p
        })
        .collect();
    let report = evaluate(preds, Some(1), Some("abc".into())).unwrap();
    for f in &report.folds {
        assert_eq!(f.lcc.value, Some(1.0));
        assert_eq!(f.srcc.value, Some(1.0));
        assert_eq!(f.mse.value, Some(0.0));
    }
    assert_eq!(report.lcc.std, Some(0.0));
}

#[test]
fn constant_predictions_are_excluded_with_reason() {
    let preds: Vec<Prediction> = random_predictions(40, 3)
        .into_iter()
        .map(|p| Prediction { predicted: 0.7, ..p })
        .collect();
    let report = evaluate(preds, None, None).unwrap();
    for f in &report.folds {
        assert_eq!(f.lcc.value, None);
        assert!(f.lcc.excluded.as_deref().unwrap().contains("zero variance"));
        assert!(f.mse.value.is_some());
    }
    assert_eq!(report.lcc.mean, None);
    assert!(render_text(&report).contains("Excluded metrics"));
}

#[test]
fn strata_partition_the_test_set() {
    let preds = random_predictions(300, 4);
    let report = evaluate(preds.clone(), None, None).unwrap();
    assert_eq!(report.snr_strata.len(), 6);
    assert_eq!(report.snr_strata.iter().map(|s| s.metrics.n).sum::<usize>(), 300);
    assert_eq!(
        report.noise_strata.iter().map(|s| s.label.as_str()).collect::<Vec<_>>(),
        ["1", "2", "3"]
    );
    assert_eq!(report.noise_strata.iter().map(|s| s.metrics.n).sum::<usize>(), 300);

    let twos: Vec<Prediction> = preds.into_iter().map(|p| Prediction { noise_count: 2, ..p }).collect();
    let rows = stratify_noise_count(&twos);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].label, "2");
}

#[test]
fn empty_bins_are_excluded_not_zero() {
    let preds: Vec<Prediction> = random_predictions(30, 5)
        .into_iter()
        .map(|p| Prediction { snr_db: 7.0, ..p })
        .collect();
    let report = evaluate(preds, None, None).unwrap();
    for (b, s) in report.snr_strata.iter().enumerate() {
        if b == 2 {
            assert_eq!(s.metrics.n, 30);
        } else {
            assert_eq!(s.metrics.n, 0);
            assert!(s.metrics.lcc.value.is_none() && s.metrics.lcc.excluded.is_some());
            assert!(s.metrics.mse.value.is_none());
        }
    }
    assert!(evaluate(Vec::new(), None, None).is_err());
}

#[test]
fn scatter_round_trips() {
    let report = evaluate(random_predictions(120, 6), None, None).unwrap();
    let text = export_scatter(&report);
    let rows = parse_scatter(&text).unwrap();
    assert_eq!(rows.len(), 120);
    for s in &report.snr_strata {
        assert_eq!(rows.iter().filter(|r| r.0 == s.label).count(), s.metrics.n);
    }
    assert!(rows
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.1) && (0.0..=1.0).contains(&r.2)));
    let mut exported: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
    let mut original: Vec<(f64, f64)> = report.predictions.iter().map(|p| (p.truth, p.predicted)).collect();
    exported.sort_by(|a, b| a.partial_cmp(b).unwrap());
    original.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(exported, original);
    assert!(parse_scatter("true\tpredicted\n").is_err());
    assert!(parse_scatter("bin\ttrue\tpredicted\n<0\tx\t0.1\n").is_err());
}

#[test]
fn summary_recomputes_from_stored_folds() {
    let report = evaluate(random_predictions(200, 7), Some(7), None).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    let back: botstoi::harness::EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    for s in [&back.lcc, &back.srcc, &back.mse] {
        let again = FoldSummary::from_folds(s.per_fold.clone());
        assert_eq!(again.mean.unwrap().to_bits(), s.mean.unwrap().to_bits());
        assert_eq!(again.std.unwrap().to_bits(), s.std.unwrap().to_bits());
        let vals: Vec<f64> = s.per_fold.iter().map(|v| v.unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((s.std.unwrap() - var.sqrt()).abs() < 1e-15);
    }
    let text = render_text(&report);
    assert!(text.contains("population standard deviation over folds"));
    assert!(text.contains(">=20"));
}

fn tiny_examples(n: usize, sources: usize, seed: u64) -> (Vec<ManifestRecord>, BTreeMap<usize, Example>) {
    let mut r = rng(seed);
    let mut records = Vec::new();
    let mut examples = BTreeMap::new();
    for i in 0..n {
        let frames = r.random_range(4..12);
        let features = FeatureTensor::new(
            FeatureKind::Ps1,
            frames,
            (0..frames * 257).map(|_| r.random_range(0.0..1.0f32)).collect(),
        )
        .unwrap();
        let clean = format!("src{}", i % sources);
        records.push(record(&clean, i, frames as f64 * 0.016));
        examples.insert(
            i,
            Example {
                record: i,
                clean,
                noisy: format!("n{i}.wav"),
                stoi: r.random_range(0.3..1.0),
                snr_db: r.random_range(-5.0..25.0),
                noise_count: 1 + i % 3,
                features,
            },
        );
    }
    (records, examples)
}

fn small_config() -> ModelConfig {
    let mut c = ModelConfig::for_kind(FeatureKind::Ps1).with_seed(3);
    c.conv_hidden = [16, 16];
    c.bot_hidden = 8;
    c.heads = 2;
    c.dense1 = 4;
    c
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (_, examples) = tiny_examples(12, 6, 8);
    let all: Vec<&Example> = examples.values().collect();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        crop_frames: 8,
        adam: AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
        eval_batch: 4,
    };
    let out = train_model(&small_config(), &all[..9], &all[9..], &tc, &SeedContext::new(1, "lr0")).unwrap();
    let fresh = Model::<f32>::new(small_config()).unwrap();
    for ((_, a), (_, b)) in out.model.store().iter().zip(fresh.store().iter()) {
        if a.trainable {
            assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        }
    }
}

#[test]
fn training_is_reproducible_and_reports_curves() {
    let (_, examples) = tiny_examples(16, 8, 9);
    let all: Vec<&Example> = examples.values().collect();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 4,
        crop_frames: 6,
        eval_batch: 3,
        ..TrainConfig::default()
    };
    let run = || train_model(&small_config(), &all[..12], &all[12..], &tc, &SeedContext::new(2, "t")).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.val_mse, b.val_mse);
    assert_eq!(a.train_loss.len(), 3);
    assert_eq!(a.best_val_mse, a.val_mse.iter().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(a.val_mse[a.best_epoch], a.best_val_mse);
}

#[test]
fn exploding_updates_abort_with_diagnostics() {
    let (_, examples) = tiny_examples(8, 4, 10);
    let all: Vec<&Example> = examples.values().collect();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 2,
        crop_frames: 6,
        adam: AdamConfig {
            lr: 1e38,
            ..AdamConfig::default()
        },
        eval_batch: 2,
    };
    match train_model(&small_config(), &all[..6], &all[6..], &tc, &SeedContext::new(3, "boom")) {
        Err(Error::Diverged(msg)) => assert!(msg.contains("epoch"), "{msg}"),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.val_mse)),
    }
}

#[test]
fn training_rejects_tiny_sets_and_bad_config() {
    let (_, examples) = tiny_examples(3, 3, 11);
    let all: Vec<&Example> = examples.values().collect();
    let ctx = SeedContext::new(0, "x");
    assert!(matches!(
        train_model(&small_config(), &all[..1], &all[1..], &TrainConfig::default(), &ctx),
        Err(Error::Argument(_))
    ));
    let bad = TrainConfig {
        batch_size: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train_model(&small_config(), &all[..2], &all[2..], &bad, &ctx),
        Err(Error::Config(_))
    ));
}

#[test]
fn cross_validation_predicts_each_record_once_independent_of_jobs() {
    let (records, examples) = tiny_examples(18, 9, 12);
    let plan = make_folds(&records, 3, 4).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        crop_frames: 6,
        eval_batch: 4,
        ..TrainConfig::default()
    };
    let one = cross_validate(&examples, &plan, &small_config(), &tc, 5, 1).unwrap();
    let two = cross_validate(&examples, &plan, &small_config(), &tc, 5, 2).unwrap();
    let flat = |r: &[botstoi::harness::FoldResult]| -> Vec<Prediction> {
        r.iter().flat_map(|f| f.predictions.clone()).collect()
    };
    assert_eq!(flat(&one), flat(&two));
    let preds = flat(&one);
    assert_eq!(preds.len(), 18);
    let names: BTreeSet<&str> = preds.iter().map(|p| p.noisy.as_str()).collect();
    assert_eq!(names.len(), 18);
    let fold_of = plan.fold_of();
    for (i, e) in &examples {
        let p = preds.iter().find(|p| p.noisy == e.noisy).unwrap();
        assert_eq!(p.fold, fold_of[i]);
        assert!(p.predicted > 0.0 && p.predicted < 1.0);
    }
}
