//! End-to-end pipeline behavior: generate, train, score, evaluate.

use std::path::{Path, PathBuf};
use syncwatch::error::Error;
use syncwatch::features::FeatureKind;
use syncwatch::io::{load_checkpoint, load_manifest};
use syncwatch::pipeline::{
    run_baseline_nb, run_eval, run_gen, run_score, run_train, GenArgs, TrainArgs,
};
use syncwatch::synth::FakeMode;
use syncwatch::training::LossKind;

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn gen_args(dir: &Path, num_real: usize, num_fake: usize, mode: FakeMode, seed: u64) -> GenArgs {
    let mut args = GenArgs::new(dir.to_path_buf(), num_real, num_fake, mode, seed);
    args.frames = 60; // keep integration tests fast
    args
}

fn quick_train(dir: &Path, out: &Path, set: FeatureKind, loss: LossKind, steps: usize) -> TrainArgs {
    let mut args = TrainArgs::new(
        dir.join("manifest.json"),
        set,
        loss,
        steps,
        5,
        out.to_path_buf(),
    );
    args.warmup = (steps / 2).max(1);
    args.batch_size = 4;
    args.ignore_fakes = true;
    args
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn gen_writes_expected_tree() {
    let dir = tmp();
    run_gen(&gen_args(dir.path(), 2, 2, FakeMode::Drift, 42)).unwrap();
    let entries = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(entries.len(), 4);
    assert_eq!(entries.iter().filter(|e| e.is_real()).count(), 2);
    for e in &entries {
        assert!(e.resolve(&dir.path().join("manifest.json")).exists());
        if !e.is_real() {
            assert_eq!(e.category.as_deref(), Some("drift"));
        }
    }
}

#[test]
fn gen_is_deterministic_across_directories() {
    let (a, b) = (tmp(), tmp());
    run_gen(&gen_args(a.path(), 3, 2, FakeMode::Flat, 7)).unwrap();
    run_gen(&gen_args(b.path(), 3, 2, FakeMode::Flat, 7)).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn gen_interval_mode_annotates_every_fake() {
    let dir = tmp();
    run_gen(&gen_args(dir.path(), 1, 3, FakeMode::Interval, 9)).unwrap();
    let entries = load_manifest(&dir.path().join("manifest.json")).unwrap();
    for e in entries.iter().filter(|e| !e.is_real()) {
        let (s, end) = e.interval.expect("interval recorded");
        assert_eq!(end - s, 9);
    }
}

#[test]
fn gen_with_activations_writes_siblings() {
    let dir = tmp();
    let mut args = gen_args(dir.path(), 2, 1, FakeMode::Drift, 3);
    args.activations = true;
    run_gen(&args).unwrap();
    assert!(dir.path().join("real_0000.act.avsf").exists());
    assert!(dir.path().join("fake_0000.act.avsf").exists());
}

#[test]
fn train_then_score_and_eval_distribution_model() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 6, 4, FakeMode::Drift, 11)).unwrap();
    let ckpt = data.path().join("model.ckpt");
    run_train(&quick_train(data.path(), &ckpt, FeatureKind::Distribution, LossKind::SoftCe, 6))
        .unwrap();
    assert!(ckpt.exists());
    assert!(data.path().join("model.trace.csv").exists());
    let trace = std::fs::read_to_string(data.path().join("model.trace.csv")).unwrap();
    assert!(trace.starts_with("step,lr,loss"));
    assert_eq!(trace.lines().count(), 7);

    let bundle = load_checkpoint(&ckpt).unwrap();
    assert_eq!(bundle.feature.set, FeatureKind::Distribution);
    assert_eq!(bundle.params.config.d_in, 31);
    assert_eq!(bundle.params.config.head, syncwatch::model::HeadKind::Softmax);

    // Scoring is deterministic and reports the window count.
    let json1 = run_score(&ckpt, &data.path().join("real_0000.avsf"), None).unwrap();
    let json2 = run_score(&ckpt, &data.path().join("real_0000.avsf"), None).unwrap();
    assert_eq!(json1, json2);
    let v: serde_json::Value = serde_json::from_str(&json1).unwrap();
    assert!(v["video_score"].as_f64().unwrap().is_finite());
    // 60 frames, window 50, stride 25: starts {0, 10}.
    assert_eq!(v["n_windows"].as_u64().unwrap(), 2);

    let metrics =
        run_eval(&ckpt, &data.path().join("manifest.json"), &data.path().join("m.json"), None)
            .unwrap();
    assert_eq!(metrics.n_real, 6);
    assert_eq!(metrics.n_fake, 4);
    assert!(metrics.ap > 0.0 && metrics.ap <= 1.0);
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.path().join("m.json")).unwrap())
            .unwrap();
    assert_eq!(written["n_fake"].as_u64().unwrap(), 4);
    assert!(written["per_category"]["drift"]["auc"].as_f64().is_some());
}

#[test]
fn train_rerun_is_bitwise_identical() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 4, 0, FakeMode::Drift, 13)).unwrap();
    let (c1, c2) = (data.path().join("a.ckpt"), data.path().join("b.ckpt"));
    let mut args = quick_train(data.path(), &c1, FeatureKind::Distribution, LossKind::SoftCe, 4);
    run_train(&args).unwrap();
    args.out = c2.clone();
    args.trace_out = Some(data.path().join("b.trace.csv"));
    run_train(&args).unwrap();
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
}

#[test]
fn train_requires_real_records() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 0, 3, FakeMode::Drift, 17)).unwrap();
    let err = run_train(&quick_train(
        data.path(),
        &data.path().join("m.ckpt"),
        FeatureKind::Distribution,
        LossKind::SoftCe,
        4,
    ))
    .unwrap_err();
    assert!(matches!(err, Error::NoRealData));
}

#[test]
fn train_rejects_invalid_pairing() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 2, 0, FakeMode::Drift, 19)).unwrap();
    let err = run_train(&quick_train(
        data.path(),
        &data.path().join("m.ckpt"),
        FeatureKind::Distribution,
        LossKind::Mse,
        4,
    ))
    .unwrap_err();
    assert!(matches!(err, Error::InvalidPairing { .. }));
}

#[test]
fn discrete_and_bce_variants_train_and_score() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 4, 2, FakeMode::Drift, 23)).unwrap();
    for (set, loss, name) in [
        (FeatureKind::DiscreteDelay, LossKind::CeDiscrete, "ce.ckpt"),
        (FeatureKind::Distribution, LossKind::Bce, "bce.ckpt"),
    ] {
        let ckpt = data.path().join(name);
        run_train(&quick_train(data.path(), &ckpt, set, loss, 4)).unwrap();
        let json = run_score(&ckpt, &data.path().join("fake_0000.avsf"), None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["video_score"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn activation_and_concat_variants_train_and_score() {
    let data = tmp();
    let mut args = gen_args(data.path(), 4, 2, FakeMode::Drift, 29);
    args.activations = true;
    run_gen(&args).unwrap();
    for (set, name) in [
        (FeatureKind::ActivationPca, "act.ckpt"),
        (FeatureKind::ConcatAv, "cat.ckpt"),
    ] {
        let ckpt = data.path().join(name);
        run_train(&quick_train(data.path(), &ckpt, set, LossKind::Mse, 4)).unwrap();
        let bundle = load_checkpoint(&ckpt).unwrap();
        assert!(bundle.pca.is_some());
        let expected_d = if set == FeatureKind::ConcatAv { 62 } else { 31 };
        assert_eq!(bundle.params.config.d_in, expected_d);
        let json = run_score(&ckpt, &data.path().join("real_0001.avsf"), None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["video_score"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn raster_variant_trains_and_scores() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 3, 1, FakeMode::Drift, 31)).unwrap();
    let ckpt = data.path().join("raster.ckpt");
    let mut args = quick_train(data.path(), &ckpt, FeatureKind::RasterCodes, LossKind::RasterCe, 3);
    args.window_frames = Some(4);
    run_train(&args).unwrap();
    let bundle = load_checkpoint(&ckpt).unwrap();
    assert!(bundle.codebook.is_some());
    assert_eq!(bundle.params.config.n_max, 4 * 31);
    let json = run_score(&ckpt, &data.path().join("fake_0000.avsf"), None).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["video_score"].as_f64().unwrap().is_finite());
}

#[test]
fn score_rejects_kind_mismatch_with_both_kinds_named() {
    let data = tmp();
    let mut args = gen_args(data.path(), 3, 0, FakeMode::Drift, 37);
    args.activations = true;
    run_gen(&args).unwrap();
    let ckpt = data.path().join("model.ckpt");
    run_train(&quick_train(data.path(), &ckpt, FeatureKind::Distribution, LossKind::SoftCe, 3))
        .unwrap();
    // An activation file cannot feed a distribution model.
    let err = run_score(&ckpt, &data.path().join("real_0000.act.avsf"), None).unwrap_err();
    match err {
        Error::KindMismatch { expected, got } => {
            assert!(expected.contains("affinity"), "expected names kinds: {expected}");
            assert_eq!(got, "activation");
        }
        other => panic!("expected KindMismatch, got {other:?}"),
    }
}

#[test]
fn per_frame_csv_written() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 3, 0, FakeMode::Drift, 41)).unwrap();
    let ckpt = data.path().join("model.ckpt");
    run_train(&quick_train(data.path(), &ckpt, FeatureKind::Distribution, LossKind::SoftCe, 3))
        .unwrap();
    let csv = data.path().join("frames.csv");
    run_score(&ckpt, &data.path().join("real_0000.avsf"), Some(&csv)).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("frame,frame_score,cumulative"));
    assert_eq!(text.lines().count(), 61); // header + 60 frames
}

#[test]
fn eval_localization_key_present_with_intervals() {
    let data = tmp();
    let mut args = gen_args(data.path(), 4, 3, FakeMode::Interval, 43);
    args.frames = 60;
    run_gen(&args).unwrap();
    let ckpt = data.path().join("model.ckpt");
    run_train(&quick_train(data.path(), &ckpt, FeatureKind::Distribution, LossKind::SoftCe, 3))
        .unwrap();
    let metrics = run_eval(
        &ckpt,
        &data.path().join("manifest.json"),
        &data.path().join("metrics.json"),
        Some(5),
    )
    .unwrap();
    let (k, acc) = metrics.localization.expect("localization computed");
    assert_eq!(k, 5);
    assert!((0.0..=1.0).contains(&acc));
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.path().join("metrics.json")).unwrap())
            .unwrap();
    assert!(written.get("localization_top5").is_some());
}

#[test]
fn eval_metrics_match_per_file_scores() {
    // The manifest-level AP/AUC must equal the metrics computed from the
    // records `score` emits for each file individually.
    use syncwatch::metrics::{average_precision, roc_auc, Label, LabeledScores};
    let data = tmp();
    run_gen(&gen_args(data.path(), 5, 4, FakeMode::Drift, 53)).unwrap();
    let ckpt = data.path().join("model.ckpt");
    run_train(&quick_train(data.path(), &ckpt, FeatureKind::Distribution, LossKind::SoftCe, 3))
        .unwrap();
    let manifest = data.path().join("manifest.json");
    let metrics = run_eval(&ckpt, &manifest, &data.path().join("m.json"), None).unwrap();

    let entries = load_manifest(&manifest).unwrap();
    let mut pairs = Vec::new();
    for e in &entries {
        let json = run_score(&ckpt, &e.resolve(&manifest), None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let label = if e.is_real() { Label::Real } else { Label::Fake };
        pairs.push((v["video_score"].as_f64().unwrap(), label));
    }
    let ls = LabeledScores::from_pairs(pairs).unwrap();
    assert_eq!(metrics.ap, average_precision(&ls).unwrap());
    assert_eq!(metrics.auc, roc_auc(&ls).unwrap());
}

#[test]
fn baseline_nb_writes_metrics_and_is_deterministic() {
    let data = tmp();
    run_gen(&gen_args(data.path(), 5, 5, FakeMode::Drift, 47)).unwrap();
    let (m1, m2) = (data.path().join("nb1.json"), data.path().join("nb2.json"));
    let a = run_baseline_nb(&data.path().join("manifest.json"), &m1).unwrap();
    let b = run_baseline_nb(&data.path().join("manifest.json"), &m2).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert_eq!(a.n_real, 5);
    assert_eq!(a.n_fake, 5);
    // Drift fakes wander far from the real offsets, so the baseline separates
    // them at better than chance.
    assert!(a.auc > 0.5, "NB on drift fakes should beat chance, got {}", a.auc);
}
