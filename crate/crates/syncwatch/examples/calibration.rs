// Full-scale oracle run backing the end-to-end acceptance thresholds:
// trains the distribution/soft-CE model at the pinned seeds and prints the
// resulting AUCs, the Naive Bayes gap on flat-preserving fakes, and top-5
// localization accuracy, plus wall/CPU timing of the training step.
use std::path::Path;
use std::time::Instant;
use syncwatch::features::FeatureKind;
use syncwatch::io::load_manifest;
use syncwatch::pipeline::{run_baseline_nb, run_eval, run_gen, run_train, GenArgs, TrainArgs};
use syncwatch::synth::FakeMode;
use syncwatch::training::LossKind;

fn cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

fn merge_manifests(dst: &Path, parts: &[&Path]) {
    let mut all = Vec::new();
    for p in parts {
        let manifest = p.join("manifest.json");
        for mut e in load_manifest(&manifest).unwrap() {
            let abs = p.join(&e.path);
            e.path = abs.to_string_lossy().into_owned();
            all.push(e);
        }
    }
    syncwatch::io::save_manifest(dst, &all).unwrap();
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Training corpus: 256 real sequences, generator defaults.
    let t0 = Instant::now();
    run_gen(&GenArgs::new(root.join("train"), 256, 0, FakeMode::Drift, 1001)).unwrap();
    // Eval corpora.
    run_gen(&GenArgs::new(root.join("eval_real"), 100, 0, FakeMode::Drift, 2002)).unwrap();
    run_gen(&GenArgs::new(root.join("eval_drift"), 0, 100, FakeMode::Drift, 3003)).unwrap();
    run_gen(&GenArgs::new(root.join("eval_flat"), 0, 100, FakeMode::Flat, 4004)).unwrap();
    run_gen(&GenArgs::new(root.join("eval_interval"), 0, 60, FakeMode::Interval, 5005)).unwrap();
    println!("generation: {:.1}s", t0.elapsed().as_secs_f64());

    merge_manifests(
        &root.join("drift.json"),
        &[&root.join("eval_real"), &root.join("eval_drift")],
    );
    merge_manifests(
        &root.join("flat.json"),
        &[&root.join("eval_real"), &root.join("eval_flat")],
    );
    merge_manifests(
        &root.join("interval.json"),
        &[&root.join("eval_real"), &root.join("eval_interval")],
    );

    // Criterion-5 model: distribution features, soft CE, 2000 steps.
    let ckpt = root.join("model.ckpt");
    let mut targs = TrainArgs::new(
        root.join("train").join("manifest.json"),
        FeatureKind::Distribution,
        LossKind::SoftCe,
        2000,
        42,
        ckpt.clone(),
    );
    targs.ignore_fakes = true;
    let wall0 = Instant::now();
    let cpu0 = cpu_seconds();
    run_train(&targs).unwrap();
    let train_wall = wall0.elapsed().as_secs_f64();
    let train_cpu = cpu_seconds() - cpu0;
    println!("train: wall {train_wall:.1}s, cpu {train_cpu:.1}s");

    let ev0 = Instant::now();
    let drift = run_eval(&ckpt, &root.join("drift.json"), &root.join("m_drift.json"), None).unwrap();
    println!("drift eval: ap {:.4}, auc {:.4} ({:.1}s)", drift.ap, drift.auc, ev0.elapsed().as_secs_f64());

    let flat = run_eval(&ckpt, &root.join("flat.json"), &root.join("m_flat.json"), None).unwrap();
    let flat_nb = run_baseline_nb(&root.join("flat.json"), &root.join("nb_flat.json")).unwrap();
    println!(
        "flat eval: model auc {:.4}, nb auc {:.4}, margin {:.4}",
        flat.auc,
        flat_nb.auc,
        flat.auc - flat_nb.auc
    );

    let interval = run_eval(
        &ckpt,
        &root.join("interval.json"),
        &root.join("m_interval.json"),
        Some(5),
    )
    .unwrap();
    let (k, acc) = interval.localization.unwrap();
    println!("interval eval: auc {:.4}, top-{k} localization {:.4}", interval.auc, acc);

    // Drift-mode Naive Bayes sanity floor.
    let drift_nb = run_baseline_nb(&root.join("drift.json"), &root.join("nb_drift.json")).unwrap();
    println!("drift nb auc: {:.4}", drift_nb.auc);
}
