//! End-to-end commands behind the CLI: dataset generation, training,
//! scoring, evaluation, and the Naive Bayes baseline.

use crate::error::{Error, Result};
use crate::features::{
    argmax_delays, concat_features, distribution_features, kmeans_fit, normalize_affinities,
    one_hot_features, pca_fit, pca_project, quantize_grid, ActivationSequence, Codebook,
    DelayDistributionSequence, DelayWindowConfig, DiscreteDelaySequence, FeatureKind,
    FeatureSequence, PcaModel,
};
use crate::io::{
    activation_sibling, load_checkpoint, load_manifest, save_checkpoint, save_manifest,
    CheckpointBundle, FeatureFile, FeatureSpec, FileKind, ManifestEntry,
};
use crate::metrics::{
    average_precision, localization_hit, roc_auc, Label, LabeledScores,
};
use crate::model::ArConfig;
use crate::numeric::derive_seed;
use crate::scoring::{naive_bayes_score, score_video, ScoreReport};
use crate::synth::{gen_activations, gen_fake, gen_real, FakeMode, GenConfig, GenLabel};
use crate::training::{naive_bayes_fit, train, LossKind, StepTrace, TrainConfig};
use std::io::Write;
use std::path::{Path, PathBuf};

const TAG_GEN_REAL: u64 = 0x5245414c;
const TAG_GEN_FAKE: u64 = 0x46414b45;
const TAG_KMEANS: u64 = 0x4b4d;

/// Default scoring/training window in frames for frame-level feature sets.
pub const DEFAULT_WINDOW_FRAMES: usize = 50;
/// Default window in frames for the raster feature set, whose flattened
/// sequence length is `frames * (2 tau + 1)`.
pub const DEFAULT_RASTER_WINDOW_FRAMES: usize = 8;
/// Cap on the pooled value count handed to the k-means quantizer fit.
const KMEANS_FIT_CAP: usize = 50_000;

// ---------------------------------------------------------------------------
// gen

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub out_dir: PathBuf,
    pub num_real: usize,
    pub num_fake: usize,
    pub mode: FakeMode,
    pub seed: u64,
    pub frames: usize,
    pub tau: usize,
    pub activations: bool,
}

impl GenArgs {
    pub fn new(out_dir: PathBuf, num_real: usize, num_fake: usize, mode: FakeMode, seed: u64) -> Self {
        Self {
            out_dir,
            num_real,
            num_fake,
            mode,
            seed,
            frames: GenConfig::default().frames,
            tau: GenConfig::default().tau,
            activations: false,
        }
    }
}

/// Writes `num_real + num_fake` affinity files (plus activation siblings on
/// request) and a manifest. Deterministic per seed.
pub fn run_gen(args: &GenArgs) -> Result<()> {
    let cfg = GenConfig { frames: args.frames, tau: args.tau, ..GenConfig::default() };
    cfg.validate()?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(format!("creating {}", args.out_dir.display()), e))?;
    let mut entries = Vec::with_capacity(args.num_real + args.num_fake);
    for i in 0..args.num_real {
        let seed = derive_seed(args.seed, TAG_GEN_REAL, i as u64);
        let name = format!("real_{i:04}.avsf");
        let aff = gen_real(&cfg, seed)?;
        FeatureFile::from_affinity(&aff).save(&args.out_dir.join(&name))?;
        if args.activations {
            let act = gen_activations(&cfg, seed, GenLabel::Real)?;
            FeatureFile::from_activation(&act, cfg.window())
                .save(&activation_sibling(&args.out_dir.join(&name)))?;
        }
        entries.push(ManifestEntry { path: name, label: 0, category: None, interval: None });
    }
    for i in 0..args.num_fake {
        let seed = derive_seed(args.seed, TAG_GEN_FAKE, i as u64);
        let name = format!("fake_{i:04}.avsf");
        let (aff, interval) = gen_fake(&cfg, seed, args.mode)?;
        FeatureFile::from_affinity(&aff).save(&args.out_dir.join(&name))?;
        if args.activations {
            let act = gen_activations(&cfg, seed, GenLabel::Fake(args.mode))?;
            FeatureFile::from_activation(&act, cfg.window())
                .save(&activation_sibling(&args.out_dir.join(&name)))?;
        }
        entries.push(ManifestEntry {
            path: name,
            label: 1,
            category: Some(args.mode.as_str().to_string()),
            interval,
        });
    }
    save_manifest(&args.out_dir.join("manifest.json"), &entries)
}

// ---------------------------------------------------------------------------
// Feature building shared by train / score / eval

struct FeatureBuilder<'a> {
    set: FeatureKind,
    window: DelayWindowConfig,
    pca: Option<&'a PcaModel>,
    codebook: Option<&'a Codebook>,
}

impl<'a> FeatureBuilder<'a> {
    fn distribution_of(&self, file: &FeatureFile) -> Result<DelayDistributionSequence> {
        match file.kind {
            FileKind::Affinity => Ok(normalize_affinities(&file.into_affinity()?)),
            FileKind::Distribution => file.into_distribution(),
            other => Err(Error::KindMismatch {
                expected: "affinity or distribution".into(),
                got: other.as_str().into(),
            }),
        }
    }

    fn activation_of(&self, file: &FeatureFile, path: &Path) -> Result<ActivationSequence> {
        match file.kind {
            FileKind::Activation => file.into_activation(),
            FileKind::Affinity | FileKind::Distribution => {
                let sibling = activation_sibling(path);
                let act_file = FeatureFile::load(&sibling)?;
                act_file.into_activation()
            }
            other => Err(Error::KindMismatch {
                expected: "activation (or a feature file with an activation sibling)".into(),
                got: other.as_str().into(),
            }),
        }
    }

    fn build(&self, file: &FeatureFile, path: &Path) -> Result<FeatureSequence> {
        if file.tau != self.window.tau {
            return Err(Error::DimensionMismatch(format!(
                "file {} has tau {}, model expects {}",
                path.display(),
                file.tau,
                self.window.tau
            )));
        }
        match self.set {
            FeatureKind::Distribution => Ok(distribution_features(&self.distribution_of(file)?)),
            FeatureKind::DiscreteDelay => {
                let delays = match file.kind {
                    FileKind::Discrete => file.into_discrete()?,
                    _ => argmax_delays(&self.distribution_of(file)?),
                };
                Ok(one_hot_features(&delays))
            }
            FeatureKind::ActivationPca => {
                let pca = self.pca.ok_or_else(|| {
                    Error::InvalidConfig("activation feature set requires a fitted PCA".into())
                })?;
                pca_project(pca, &self.activation_of(file, path)?, self.window)
            }
            FeatureKind::ConcatAv => {
                let pca = self.pca.ok_or_else(|| {
                    Error::InvalidConfig("concat feature set requires a fitted PCA".into())
                })?;
                let dist = self.distribution_of(file)?;
                let act = self.activation_of(file, path)?;
                let projected = pca_project(pca, &act, self.window)?;
                concat_features(&dist, &projected)
            }
            FeatureKind::RasterCodes => {
                let cb = self.codebook.ok_or_else(|| {
                    Error::InvalidConfig("raster feature set requires a fitted codebook".into())
                })?;
                Ok(quantize_grid(&self.distribution_of(file)?, cb))
            }
        }
    }
}

/// Slices a sequence into training windows: sliding starts plus a final
/// window ending at the last frame; shorter sequences pass through whole.
fn window_sequence(seq: &FeatureSequence, frames: usize, stride: usize) -> Vec<FeatureSequence> {
    let t = seq.len();
    if t <= frames {
        return vec![seq.clone()];
    }
    let mut starts = Vec::new();
    let mut s = 0usize;
    while s + frames <= t {
        starts.push(s);
        s += stride;
    }
    let last = t - frames;
    if *starts.last().expect("nonempty") != last {
        starts.push(last);
    }
    starts.into_iter().map(|s| seq.slice_frames(s, frames)).collect()
}

fn model_config_for(
    set: FeatureKind,
    loss: LossKind,
    window: DelayWindowConfig,
    window_frames: usize,
    pca_dim: usize,
    raster_k: usize,
) -> Result<ArConfig> {
    if !loss.accepts(set) {
        return Err(Error::InvalidPairing {
            feature: set.as_str().into(),
            loss: loss.as_str().into(),
        });
    }
    let w = window.width();
    let (d_in, d_out, n_max) = match set {
        FeatureKind::DiscreteDelay | FeatureKind::Distribution => (w, w, window_frames),
        FeatureKind::ActivationPca => (pca_dim, pca_dim, window_frames),
        FeatureKind::ConcatAv => (w + pca_dim, w + pca_dim, window_frames),
        FeatureKind::RasterCodes => (raster_k, raster_k, window_frames * w),
    };
    let mut cfg = ArConfig::standard(d_in, d_out, loss.head());
    cfg.n_max = n_max;
    cfg.raster_k = raster_k;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub feature_set: FeatureKind,
    pub loss: LossKind,
    pub steps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub ignore_fakes: bool,
    pub warmup: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub window_frames: Option<usize>,
    pub trace_out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn new(
        manifest: PathBuf,
        feature_set: FeatureKind,
        loss: LossKind,
        steps: usize,
        seed: u64,
        out: PathBuf,
    ) -> Self {
        Self {
            manifest,
            feature_set,
            loss,
            steps,
            seed,
            out,
            ignore_fakes: false,
            warmup: 500,
            batch_size: 16,
            lr: 1e-3,
            window_frames: None,
            trace_out: None,
        }
    }
}

/// Trains on the manifest's real records only and writes a checkpoint plus a
/// loss-trace CSV. Fake records are skipped (self-supervision: the model
/// never sees a manipulated example).
pub fn run_train(args: &TrainArgs) -> Result<()> {
    let entries = load_manifest(&args.manifest)?;
    let reals: Vec<&ManifestEntry> = entries.iter().filter(|e| e.is_real()).collect();
    if reals.is_empty() {
        return Err(Error::NoRealData);
    }
    let skipped = entries.len() - reals.len();
    if skipped > 0 && !args.ignore_fakes {
        eprintln!("skipping {skipped} fake record(s); training uses real records only");
    }

    let files: Vec<(PathBuf, FeatureFile)> = reals
        .iter()
        .map(|e| {
            let p = e.resolve(&args.manifest);
            FeatureFile::load(&p).map(|f| (p, f))
        })
        .collect::<Result<_>>()?;
    let window = files[0].1.window();
    for (p, f) in &files {
        if f.window() != window {
            return Err(Error::DimensionMismatch(format!(
                "file {} window (tau {}, fps {}) differs from {} (tau {}, fps {})",
                p.display(),
                f.tau,
                f.fps,
                files[0].0.display(),
                window.tau,
                window.fps
            )));
        }
    }

    let window_frames = args.window_frames.unwrap_or(match args.feature_set {
        FeatureKind::RasterCodes => DEFAULT_RASTER_WINDOW_FRAMES,
        _ => DEFAULT_WINDOW_FRAMES,
    });

    // Fit feature transforms on the training reals.
    let needs_pca = matches!(args.feature_set, FeatureKind::ActivationPca | FeatureKind::ConcatAv);
    let pca = if needs_pca {
        let acts: Vec<ActivationSequence> = files
            .iter()
            .map(|(p, f)| {
                FeatureBuilder {
                    set: args.feature_set,
                    window,
                    pca: None,
                    codebook: None,
                }
                .activation_of(f, p)
            })
            .collect::<Result<_>>()?;
        Some(pca_fit(&acts, window.width())?)
    } else {
        None
    };
    let codebook = if args.feature_set == FeatureKind::RasterCodes {
        let mut pooled: Vec<f64> = Vec::new();
        for (_, f) in &files {
            let dist = FeatureBuilder {
                set: args.feature_set,
                window,
                pca: None,
                codebook: None,
            }
            .distribution_of(f)?;
            pooled.extend(dist.rows().iter());
        }
        let stride = pooled.len().div_ceil(KMEANS_FIT_CAP).max(1);
        let sampled: Vec<f64> = pooled.iter().step_by(stride).copied().collect();
        Some(kmeans_fit(&sampled, 8, derive_seed(args.seed, TAG_KMEANS, 0))?)
    } else {
        None
    };

    let builder = FeatureBuilder {
        set: args.feature_set,
        window,
        pca: pca.as_ref(),
        codebook: codebook.as_ref(),
    };
    let mut data: Vec<FeatureSequence> = Vec::new();
    let stride = (window_frames / 2).max(1);
    for (p, f) in &files {
        let seq = builder.build(f, p)?;
        data.extend(window_sequence(&seq, window_frames, stride));
    }

    let pca_dim = pca.as_ref().map(|m| m.dim()).unwrap_or(window.width());
    let model_cfg =
        model_config_for(args.feature_set, args.loss, window, window_frames, pca_dim, 8)?;
    let mut train_cfg = TrainConfig::new(args.loss, args.steps);
    train_cfg.warmup_steps = args.warmup;
    train_cfg.batch_size = args.batch_size;
    train_cfg.lr_max = args.lr;
    train_cfg.seed = args.seed;

    let (params, trace) = train::<f32>(&model_cfg, &train_cfg, &data)?;

    let bundle = CheckpointBundle {
        params,
        train_cfg,
        feature: FeatureSpec {
            set: args.feature_set,
            tau: window.tau,
            fps: window.fps,
            window_frames,
        },
        pca,
        codebook,
    };
    save_checkpoint(&args.out, &bundle)?;
    let trace_path = args
        .trace_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("trace.csv"));
    write_trace(&trace_path, &trace)
}

fn write_trace(path: &Path, trace: &[StepTrace]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "step,lr,loss")?;
        for row in trace {
            writeln!(w, "{},{},{}", row.step, row.lr, row.loss)?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// score / eval

fn score_one(bundle: &CheckpointBundle, path: &Path) -> Result<ScoreReport> {
    let file = FeatureFile::load(path)?;
    let builder = FeatureBuilder {
        set: bundle.feature.set,
        window: DelayWindowConfig { tau: bundle.feature.tau, fps: bundle.feature.fps },
        pca: bundle.pca.as_ref(),
        codebook: bundle.codebook.as_ref(),
    };
    let seq = builder.build(&file, path)?;
    let window = bundle.feature.window_frames;
    let stride = (window / 2).max(1);
    score_video(&bundle.params, &seq, bundle.train_cfg.loss, window, stride)
}

/// Scores one feature file; returns the JSON record printed by the CLI.
pub fn run_score(
    model: &Path,
    input: &Path,
    per_frame_out: Option<&Path>,
) -> Result<String> {
    let bundle = load_checkpoint(model)?;
    let report = score_one(&bundle, input)?;
    if let Some(csv_path) = per_frame_out {
        write_per_frame(csv_path, &report)?;
    }
    let record = serde_json::json!({
        "path": input.display().to_string(),
        "video_score": report.video_score,
        "n_windows": report.window_scores.len(),
    });
    Ok(record.to_string())
}

fn write_per_frame(path: &Path, report: &ScoreReport) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "frame,frame_score,cumulative")?;
        for (i, (s, c)) in report.frame_scores.iter().zip(&report.cumulative).enumerate() {
            writeln!(w, "{i},{s},{c}")?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Per-dataset metrics emitted by `eval` and `baseline-nb`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub ap: f64,
    pub auc: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub per_category: Vec<(String, f64, f64, usize, usize)>,
    pub localization: Option<(usize, f64)>,
}

impl EvalMetrics {
    fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("ap".into(), self.ap.into());
        map.insert("auc".into(), self.auc.into());
        map.insert("n_real".into(), self.n_real.into());
        map.insert("n_fake".into(), self.n_fake.into());
        if !self.per_category.is_empty() {
            let mut cats = serde_json::Map::new();
            for (name, ap, auc, n_real, n_fake) in &self.per_category {
                cats.insert(
                    name.clone(),
                    serde_json::json!({
                        "ap": ap,
                        "auc": auc,
                        "n_real": n_real,
                        "n_fake": n_fake,
                    }),
                );
            }
            map.insert("per_category".into(), cats.into());
        }
        if let Some((k, acc)) = &self.localization {
            map.insert(format!("localization_top{k}"), (*acc).into());
        }
        serde_json::Value::Object(map)
    }
}

fn metrics_from_scores(
    scored: &[(f64, &ManifestEntry)],
    localization: Option<(usize, f64)>,
) -> Result<EvalMetrics> {
    let all = LabeledScores::from_pairs(scored.iter().map(|(s, e)| {
        (*s, if e.is_real() { Label::Real } else { Label::Fake })
    }))?;
    let ap = average_precision(&all)?;
    let auc = roc_auc(&all)?;

    let mut categories: Vec<String> = scored
        .iter()
        .filter_map(|(_, e)| (!e.is_real()).then(|| e.category.clone()).flatten())
        .collect();
    categories.sort();
    categories.dedup();
    let mut per_category = Vec::new();
    for cat in categories {
        let subset: Vec<(f64, Label)> = scored
            .iter()
            .filter(|(_, e)| e.is_real() || e.category.as_deref() == Some(cat.as_str()))
            .map(|(s, e)| (*s, if e.is_real() { Label::Real } else { Label::Fake }))
            .collect();
        let n_real = subset.iter().filter(|(_, l)| *l == Label::Real).count();
        let n_fake = subset.len() - n_real;
        let ls = LabeledScores::from_pairs(subset)?;
        per_category.push((cat, average_precision(&ls)?, roc_auc(&ls)?, n_real, n_fake));
    }

    Ok(EvalMetrics {
        ap,
        auc,
        n_real: all.n_real(),
        n_fake: all.n_fake(),
        per_category,
        localization,
    })
}

/// Scores every manifest record with the checkpointed model and writes
/// metrics JSON; optionally measures top-k temporal localization on fake
/// records carrying interval annotations.
pub fn run_eval(
    model: &Path,
    manifest: &Path,
    out: &Path,
    localize_k: Option<usize>,
) -> Result<EvalMetrics> {
    let bundle = load_checkpoint(model)?;
    let entries = load_manifest(manifest)?;
    let mut scored: Vec<(f64, &ManifestEntry)> = Vec::with_capacity(entries.len());
    let mut reports: Vec<(ScoreReport, &ManifestEntry)> = Vec::new();
    for entry in &entries {
        let report = score_one(&bundle, &entry.resolve(manifest))?;
        scored.push((report.video_score, entry));
        reports.push((report, entry));
    }

    let localization = match localize_k {
        Some(k) => {
            let with_intervals: Vec<&(ScoreReport, &ManifestEntry)> = reports
                .iter()
                .filter(|(_, e)| !e.is_real() && e.interval.is_some())
                .collect();
            if with_intervals.is_empty() {
                None
            } else {
                let hits = with_intervals
                    .iter()
                    .filter(|(r, e)| {
                        localization_hit(&r.frame_scores, e.interval.expect("filtered"), k)
                    })
                    .count();
                Some((k, hits as f64 / with_intervals.len() as f64))
            }
        }
        None => None,
    };

    let metrics = metrics_from_scores(&scored, localization)?;
    write_metrics(out, &metrics)?;
    Ok(metrics)
}

fn write_metrics(path: &Path, metrics: &EvalMetrics) -> Result<()> {
    let json = serde_json::to_string_pretty(&metrics.to_json()).expect("valid metrics JSON");
    std::fs::write(path, json + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// baseline-nb

/// Fits the Naive Bayes baseline on the manifest's real records' argmax
/// delays, scores every record, and writes the same metrics schema as `eval`.
pub fn run_baseline_nb(manifest: &Path, out: &Path) -> Result<EvalMetrics> {
    let entries = load_manifest(manifest)?;
    let mut delays: Vec<(DiscreteDelaySequence, &ManifestEntry)> = Vec::new();
    for entry in &entries {
        let path = entry.resolve(manifest);
        let file = FeatureFile::load(&path)?;
        let seq = match file.kind {
            FileKind::Discrete => file.into_discrete()?,
            FileKind::Affinity => argmax_delays(&normalize_affinities(&file.into_affinity()?)),
            FileKind::Distribution => argmax_delays(&file.into_distribution()?),
            other => {
                return Err(Error::KindMismatch {
                    expected: "affinity, distribution, or discrete".into(),
                    got: other.as_str().into(),
                })
            }
        };
        delays.push((seq, entry));
    }
    let real_seqs: Vec<DiscreteDelaySequence> = delays
        .iter()
        .filter(|(_, e)| e.is_real())
        .map(|(s, _)| s.clone())
        .collect();
    if real_seqs.is_empty() {
        return Err(Error::NoRealData);
    }
    let nb = naive_bayes_fit(&real_seqs)?;
    let scored: Vec<(f64, &ManifestEntry)> = delays
        .iter()
        .map(|(seq, e)| (naive_bayes_score(&nb, seq).video_score, *e))
        .collect();
    let metrics = metrics_from_scores(&scored, None)?;
    write_metrics(out, &metrics)?;
    Ok(metrics)
}
