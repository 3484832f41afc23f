//! File-format behavior: bitwise round-trips, validation, and manifest rules.

use ndarray::Array2;
use syncwatch::error::Error;
use syncwatch::features::{
    normalize_affinities, ActivationSequence, ActivationSource, Codebook, DelayWindowConfig,
    DiscreteDelaySequence, FeatureKind, PcaModel,
};
use syncwatch::io::{
    activation_sibling, load_checkpoint, load_manifest, save_checkpoint, save_manifest,
    CheckpointBundle, FeatureFile, FeatureSpec, FileKind, ManifestEntry,
};
use syncwatch::model::{ArConfig, ArParams, HeadKind};
use syncwatch::synth::{gen_real, GenConfig};
use syncwatch::training::{LossKind, TrainConfig};

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

#[test]
fn feature_file_save_load_save_is_bitwise_identity() {
    let dir = tmp();
    let gen = GenConfig::default();
    let aff = gen_real(&gen, 7).unwrap();
    let cases = vec![
        ("aff.avsf", FeatureFile::from_affinity(&aff)),
        (
            "dist.avsf",
            FeatureFile::from_distribution(&normalize_affinities(&aff)),
        ),
        (
            "disc.avsf",
            FeatureFile::from_discrete(
                &DiscreteDelaySequence::new(vec![-15, 0, 3, 15], gen.window()).unwrap(),
            ),
        ),
        (
            "act.avsf",
            FeatureFile::from_activation(
                &ActivationSequence::new(
                    Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - 2.0) * 0.37 + j as f64),
                    ActivationSource::AudioVisual,
                )
                .unwrap(),
                gen.window(),
            ),
        ),
        (
            "raster.avsf",
            FeatureFile::from_raster(
                &Array2::from_shape_fn((4, 31), |(i, j)| ((i + j) % 8) as u8),
                gen.window(),
            ),
        ),
    ];
    for (name, file) in cases {
        let p1 = dir.path().join(name);
        file.save(&p1).unwrap();
        let loaded = FeatureFile::load(&p1).unwrap();
        let p2 = dir.path().join(format!("resaved_{name}"));
        loaded.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "round trip changed bytes for {name}");
    }
}

#[test]
fn distribution_rows_renormalized_within_tolerance() {
    let dir = tmp();
    let w = 3;
    let mut rows = Array2::from_elem((2, w), 1.0 / w as f64);
    rows[[0, 0]] += 4e-7; // within 1e-6: renormalize
    let file = FeatureFile {
        kind: FileKind::Distribution,
        tau: 1,
        fps: 25,
        rows,
    };
    let p = dir.path().join("d.avsf");
    file.save(&p).unwrap();
    let dist = FeatureFile::load(&p).unwrap().into_distribution().unwrap();
    for row in dist.rows().rows() {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn distribution_rows_rejected_beyond_tolerance() {
    let w = 3;
    let mut rows = Array2::from_elem((1, w), 1.0 / w as f64);
    rows[[0, 0]] += 1e-3;
    let file = FeatureFile { kind: FileKind::Distribution, tau: 1, fps: 25, rows };
    assert!(matches!(
        file.into_distribution(),
        Err(Error::InvalidDistribution { .. })
    ));
}

#[test]
fn feature_file_rejects_malformed_input() {
    let dir = tmp();
    let p = dir.path().join("bad.avsf");
    std::fs::write(&p, "# wrong magic\n1,2,3\n").unwrap();
    assert!(matches!(FeatureFile::load(&p), Err(Error::MalformedFile { .. })));

    std::fs::write(&p, "# avsf v1\n# kind=affinity\n# tau=1\n# fps=25\n# dim=3\n1,2\n").unwrap();
    assert!(matches!(FeatureFile::load(&p), Err(Error::MalformedFile { .. })));
}

#[test]
fn kind_conversion_mismatch_names_both_kinds() {
    let file = FeatureFile {
        kind: FileKind::Affinity,
        tau: 1,
        fps: 25,
        rows: Array2::zeros((2, 3)),
    };
    match file.into_distribution() {
        Err(Error::KindMismatch { expected, got }) => {
            assert_eq!(expected, "distribution");
            assert_eq!(got, "affinity");
        }
        other => panic!("expected KindMismatch, got {other:?}"),
    }
}

#[test]
fn manifest_round_trip_and_validation() {
    let dir = tmp();
    let entries = vec![
        ManifestEntry { path: "real_0000.avsf".into(), label: 0, category: None, interval: None },
        ManifestEntry {
            path: "fake_0000.avsf".into(),
            label: 1,
            category: Some("interval".into()),
            interval: Some((30, 39)),
        },
    ];
    let p = dir.path().join("manifest.json");
    save_manifest(&p, &entries).unwrap();
    let loaded = load_manifest(&p).unwrap();
    assert_eq!(entries, loaded);
    assert_eq!(loaded[1].resolve(&p), dir.path().join("fake_0000.avsf"));

    std::fs::write(&p, r#"[{"path":"x.avsf","label":2}]"#).unwrap();
    assert!(load_manifest(&p).is_err());
    std::fs::write(&p, r#"[{"path":"x.avsf","label":1,"interval":[5,5]}]"#).unwrap();
    assert!(load_manifest(&p).is_err());
}

#[test]
fn activation_sibling_naming() {
    assert_eq!(
        activation_sibling(std::path::Path::new("data/real_0001.avsf")),
        std::path::PathBuf::from("data/real_0001.act.avsf")
    );
}

fn small_bundle() -> CheckpointBundle {
    let cfg = ArConfig {
        n_blocks: 1,
        n_heads: 2,
        d_model: 8,
        d_in: 5,
        d_out: 5,
        n_max: 6,
        dropout_rate: 0.1,
        head: HeadKind::Softmax,
        raster_k: 8,
    };
    let params: ArParams<f32> = ArParams::init(cfg, 3).unwrap();
    let mut train_cfg = TrainConfig::new(LossKind::SoftCe, 40);
    train_cfg.warmup_steps = 10;
    CheckpointBundle {
        params,
        train_cfg,
        feature: FeatureSpec { set: FeatureKind::Distribution, tau: 2, fps: 25, window_frames: 6 },
        pca: None,
        codebook: None,
    }
}

#[test]
fn checkpoint_save_load_save_is_bitwise_identity() {
    let dir = tmp();
    let bundle = small_bundle();
    let p1 = dir.path().join("model.ckpt");
    save_checkpoint(&p1, &bundle).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    assert_eq!(loaded.params, bundle.params);
    assert_eq!(loaded.train_cfg, bundle.train_cfg);
    assert_eq!(loaded.feature, bundle.feature);
    let p2 = dir.path().join("model2.ckpt");
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn checkpoint_carries_pca_and_codebook() {
    let dir = tmp();
    let mut bundle = small_bundle();
    // Orthonormal 2x4 components.
    let comps = ndarray::array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
    bundle.pca = Some(
        PcaModel::new(
            ndarray::Array1::from(vec![0.5, -0.25, 0.125, 2.0]),
            comps,
            ndarray::Array1::from(vec![3.0, 1.5]),
        )
        .unwrap(),
    );
    bundle.codebook = Some(Codebook::new(vec![0.0, 0.25, 0.5, 1.0]).unwrap());
    let p = dir.path().join("model.ckpt");
    save_checkpoint(&p, &bundle).unwrap();
    let loaded = load_checkpoint(&p).unwrap();
    let pca = loaded.pca.as_ref().expect("pca present");
    assert_eq!(pca.dim(), 2);
    assert_eq!(pca.mean()[3], 2.0);
    let cb = loaded.codebook.as_ref().expect("codebook present");
    assert_eq!(cb.centers(), &[0.0, 0.25, 0.5, 1.0]);
    // Second round trip is bitwise stable.
    let p2 = dir.path().join("model2.ckpt");
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = tmp();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"{\"format\":\"other\"}\n").unwrap();
    assert!(load_checkpoint(&p).is_err());
    let window = DelayWindowConfig { tau: 1, fps: 25 };
    let _ = window;
}
