//! Loss variants, the optimization recipe, and the Naive Bayes baseline.
//!
//! All batch losses are means over frames (and over cells, for the raster
//! variant) so magnitudes are length-invariant; sequence-level totals are
//! recovered by multiplying by the frame count.

use crate::error::{Error, Result};
use crate::features::{DelayWindowConfig, DiscreteDelaySequence, FeatureData, FeatureKind, FeatureSequence};
use crate::model::{
    backward_batch, forward_batch, ArConfig, ArParams, BatchInput, HeadKind, InputData,
};
use crate::numeric::{derive_seed, ln_clamped, seeded_rng, Real};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Training loss variant; each pairs with one feature kind and output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CeDiscrete,
    SoftCe,
    Bce,
    Mse,
    RasterCe,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::CeDiscrete => "ce_discrete",
            LossKind::SoftCe => "soft_ce",
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
            LossKind::RasterCe => "raster_ce",
        }
    }

    /// Output head this loss trains.
    pub fn head(&self) -> HeadKind {
        match self {
            LossKind::CeDiscrete | LossKind::SoftCe => HeadKind::Softmax,
            LossKind::Bce => HeadKind::Sigmoid,
            LossKind::Mse => HeadKind::Linear,
            LossKind::RasterCe => HeadKind::RasterCodebook,
        }
    }

    /// Feature kinds this loss accepts.
    pub fn accepts(&self, kind: FeatureKind) -> bool {
        matches!(
            (self, kind),
            (LossKind::CeDiscrete, FeatureKind::DiscreteDelay)
                | (LossKind::SoftCe, FeatureKind::Distribution)
                | (LossKind::Bce, FeatureKind::Distribution)
                | (LossKind::Mse, FeatureKind::ActivationPca)
                | (LossKind::Mse, FeatureKind::ConcatAv)
                | (LossKind::RasterCe, FeatureKind::RasterCodes)
        )
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce_discrete" | "ce-discrete" => Ok(LossKind::CeDiscrete),
            "soft_ce" | "soft-ce" => Ok(LossKind::SoftCe),
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            "raster_ce" | "raster-ce" => Ok(LossKind::RasterCe),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(loss: LossKind, total_steps: usize) -> Self {
        Self {
            lr_max: 1e-3,
            weight_decay: 1e-6,
            batch_size: 16,
            warmup_steps: 500,
            total_steps,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_max <= 0.0 {
            return Err(Error::InvalidConfig("lr_max must be positive".into()));
        }
        // total_steps == 0 is the explicit no-op training case.
        if self.total_steps > 0
            && (self.warmup_steps == 0 || self.warmup_steps >= self.total_steps)
        {
            return Err(Error::InvalidConfig(format!(
                "warmup steps {} must lie strictly between 0 and total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("Adam betas must be in [0, 1)".into()));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::InvalidConfig("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate at a step: linear warmup to `lr_max`, then cosine decay
/// to zero at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::InvalidConfig(format!(
            "step {step} outside [0, {}]",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.lr_max * (step + 1) as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let phase = (step - cfg.warmup_steps) as f64 / span;
    Ok(cfg.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos()))
}

// ---------------------------------------------------------------------------
// Loss values (pure, on activated predictions)

fn check_same_shape(pred: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "prediction shape {:?} does not match target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Per-frame `-ln pred[i, target_i]` (clamped).
pub fn per_frame_ce_discrete(
    pred: &Array2<f64>,
    target: &DiscreteDelaySequence,
) -> Result<Vec<f64>> {
    if pred.nrows() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prediction rows for {} target frames",
            pred.nrows(),
            target.len()
        )));
    }
    if pred.ncols() != target.config().width() {
        return Err(Error::DimensionMismatch(format!(
            "prediction width {} does not match window width {}",
            pred.ncols(),
            target.config().width()
        )));
    }
    Ok(target
        .columns()
        .into_iter()
        .enumerate()
        .map(|(i, col)| -ln_clamped(pred[[i, col]]))
        .collect())
}

/// Mean cross entropy against the argmax delay labels.
pub fn loss_ce_discrete(pred: &Array2<f64>, target: &DiscreteDelaySequence) -> Result<f64> {
    let frames = per_frame_ce_discrete(pred, target)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Per-frame soft cross entropy `-sum_j t_ij ln pred_ij` (clamped).
pub fn per_frame_soft_ce(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Vec<f64>> {
    check_same_shape(pred, target)?;
    Ok(pred
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(p, t)| -p.iter().zip(t.iter()).map(|(&pj, &tj)| tj * ln_clamped(pj)).sum::<f64>())
        .collect())
}

/// Mean soft cross entropy over frames. Minimized over the simplex when the
/// prediction equals the target, attaining the target's entropy.
pub fn loss_soft_ce(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    let frames = per_frame_soft_ce(pred, target)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Per-frame summed binary cross entropy, entries treated independently.
pub fn per_frame_bce(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Vec<f64>> {
    check_same_shape(pred, target)?;
    Ok(pred
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(p, t)| {
            -p.iter()
                .zip(t.iter())
                .map(|(&pj, &tj)| tj * ln_clamped(pj) + (1.0 - tj) * ln_clamped(1.0 - pj))
                .sum::<f64>()
        })
        .collect())
}

/// Mean over frames of the summed per-entry binary cross entropy.
pub fn loss_bce(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    let frames = per_frame_bce(pred, target)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Per-frame squared Euclidean distance.
pub fn per_frame_mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Vec<f64>> {
    check_same_shape(pred, target)?;
    Ok(pred
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(p, t)| p.iter().zip(t.iter()).map(|(&pj, &tj)| (pj - tj) * (pj - tj)).sum::<f64>())
        .collect())
}

/// Mean over frames of the squared Euclidean distance.
pub fn loss_mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    let frames = per_frame_mse(pred, target)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Per-frame mean (over that frame's cells) of the K-way cross entropy of
/// the per-cell logits against the true codes.
pub fn per_frame_raster(logits: &Array3<f64>, codes: &Array2<u8>) -> Result<Vec<f64>> {
    let (t, w, k) = logits.dim();
    if codes.nrows() != t || codes.ncols() != w {
        return Err(Error::DimensionMismatch(format!(
            "logit grid ({t}, {w}) does not match code grid ({}, {})",
            codes.nrows(),
            codes.ncols()
        )));
    }
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        let mut frame = 0.0;
        for q in 0..w {
            let code = codes[[i, q]] as usize;
            if code >= k {
                return Err(Error::CodeOutOfRange { row: i, col: q, code, k });
            }
            let cell = logits.slice(ndarray::s![i, q, ..]);
            let probs = crate::numeric::softmax(cell.as_slice().expect("contiguous cell logits"));
            frame -= ln_clamped(probs[code]);
        }
        out.push(frame / w as f64);
    }
    Ok(out)
}

/// Mean over all cells of the K-way cross entropy against the true code.
pub fn loss_raster(logits: &Array3<f64>, codes: &Array2<u8>) -> Result<f64> {
    let frames = per_frame_raster(logits, codes)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

// ---------------------------------------------------------------------------
// Training samples and the fused loss/gradient path

/// Model-ready training sample derived from one feature sequence: the model
/// predicts the sequence from its own history (teacher forcing), so the
/// target is derived from the same data.
pub(crate) struct Sample<F: Real> {
    pub input: SampleData<F>,
    pub target: Target<F>,
    /// Frame count (not cell count, for raster).
    pub frames: usize,
}

pub(crate) enum SampleData<F> {
    Dense(Array2<F>),
    Codes(Vec<usize>),
}

pub(crate) enum Target<F> {
    Classes(Vec<usize>),
    Dense(Array2<F>),
    Codes(Vec<usize>),
}

impl<F: Real> Sample<F> {
    /// `raster_k` bounds the code alphabet for raster sequences; ignored for
    /// dense kinds.
    pub fn from_feature(seq: &FeatureSequence, loss: LossKind, raster_k: usize) -> Result<Self> {
        if !loss.accepts(seq.kind) {
            return Err(Error::InvalidPairing {
                feature: seq.kind.as_str().into(),
                loss: loss.as_str().into(),
            });
        }
        if seq.is_empty() {
            return Err(Error::EmptyInput("empty feature sequence".into()));
        }
        let frames = seq.len();
        match (&seq.data, loss) {
            (FeatureData::Dense(m), LossKind::CeDiscrete) => {
                // One-hot rows; the class is the hot column.
                let classes = m
                    .axis_iter(Axis(0))
                    .map(|row| {
                        let mut best = 0usize;
                        for (j, &v) in row.iter().enumerate() {
                            if v > row[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect();
                Ok(Sample {
                    input: SampleData::Dense(m.mapv(F::from_f64)),
                    target: Target::Classes(classes),
                    frames,
                })
            }
            (FeatureData::Dense(m), _) => Ok(Sample {
                input: SampleData::Dense(m.mapv(F::from_f64)),
                target: Target::Dense(m.mapv(F::from_f64)),
                frames,
            }),
            (FeatureData::Codes(m), LossKind::RasterCe) => {
                for ((i, q), &c) in m.indexed_iter() {
                    if c as usize >= raster_k {
                        return Err(Error::CodeOutOfRange {
                            row: i,
                            col: q,
                            code: c as usize,
                            k: raster_k,
                        });
                    }
                }
                let codes: Vec<usize> = m.iter().map(|&c| c as usize).collect();
                Ok(Sample {
                    input: SampleData::Codes(codes.clone()),
                    target: Target::Codes(codes),
                    frames,
                })
            }
            (FeatureData::Codes(_), _) => Err(Error::InvalidPairing {
                feature: seq.kind.as_str().into(),
                loss: loss.as_str().into(),
            }),
        }
    }

    /// Positions the model sees (cells for raster, frames otherwise).
    pub fn positions(&self) -> usize {
        match &self.input {
            SampleData::Dense(m) => m.nrows(),
            SampleData::Codes(c) => c.len(),
        }
    }
}

/// Sequence loss (mean per frame) from activated predictions.
pub(crate) fn sequence_loss<F: Real>(
    loss: LossKind,
    preds: &ArrayView2<'_, F>,
    target: &Target<F>,
    frames: usize,
) -> f64 {
    let per_frame = sequence_frame_losses(loss, preds, target, frames);
    per_frame.iter().sum::<f64>() / frames as f64
}

/// Per-frame losses from activated predictions (raster: mean over the
/// frame's cells).
pub(crate) fn sequence_frame_losses<F: Real>(
    loss: LossKind,
    preds: &ArrayView2<'_, F>,
    target: &Target<F>,
    frames: usize,
) -> Vec<f64> {
    match (loss, target) {
        (LossKind::CeDiscrete, Target::Classes(classes)) => classes
            .iter()
            .enumerate()
            .map(|(i, &c)| -ln_clamped(preds[[i, c]].into_f64()))
            .collect(),
        (LossKind::SoftCe, Target::Dense(t)) => (0..frames)
            .map(|i| {
                -(0..t.ncols())
                    .map(|j| t[[i, j]].into_f64() * ln_clamped(preds[[i, j]].into_f64()))
                    .sum::<f64>()
            })
            .collect(),
        (LossKind::Bce, Target::Dense(t)) => (0..frames)
            .map(|i| {
                -(0..t.ncols())
                    .map(|j| {
                        let tj = t[[i, j]].into_f64();
                        let pj = preds[[i, j]].into_f64();
                        tj * ln_clamped(pj) + (1.0 - tj) * ln_clamped(1.0 - pj)
                    })
                    .sum::<f64>()
            })
            .collect(),
        (LossKind::Mse, Target::Dense(t)) => (0..frames)
            .map(|i| {
                (0..t.ncols())
                    .map(|j| {
                        let d = preds[[i, j]].into_f64() - t[[i, j]].into_f64();
                        d * d
                    })
                    .sum::<f64>()
            })
            .collect(),
        (LossKind::RasterCe, Target::Codes(codes)) => {
            let w = codes.len() / frames;
            (0..frames)
                .map(|i| {
                    (0..w)
                        .map(|q| {
                            let cell = i * w + q;
                            -ln_clamped(preds[[cell, codes[cell]]].into_f64())
                        })
                        .sum::<f64>()
                        / w as f64
                })
                .collect()
        }
        _ => unreachable!("sample construction pairs loss and target"),
    }
}

/// Gradient of the per-sequence loss with respect to the logits, already
/// scaled by the per-frame (and per-cell) mean.
pub(crate) fn sequence_dlogits<F: Real>(
    loss: LossKind,
    preds: &ArrayView2<'_, F>,
    target: &Target<F>,
    frames: usize,
) -> Array2<F> {
    let scale = F::from_f64(1.0 / frames as f64);
    match (loss, target) {
        (LossKind::CeDiscrete, Target::Classes(classes)) => {
            let mut d = preds.to_owned();
            for (i, &c) in classes.iter().enumerate() {
                d[[i, c]] -= F::one();
            }
            d.mapv_inplace(|v| v * scale);
            d
        }
        (LossKind::SoftCe, Target::Dense(t)) | (LossKind::Bce, Target::Dense(t)) => {
            let mut d = preds.to_owned();
            d -= t;
            d.mapv_inplace(|v| v * scale);
            d
        }
        (LossKind::Mse, Target::Dense(t)) => {
            let two = F::from_f64(2.0);
            let mut d = preds.to_owned();
            d -= t;
            d.mapv_inplace(|v| v * two * scale);
            d
        }
        (LossKind::RasterCe, Target::Codes(codes)) => {
            let w = codes.len() / frames;
            let cell_scale = F::from_f64(1.0 / (frames * w) as f64);
            let mut d = preds.to_owned();
            for (cell, &c) in codes.iter().enumerate() {
                d[[cell, c]] -= F::one();
            }
            d.mapv_inplace(|v| v * cell_scale);
            d
        }
        _ => unreachable!("sample construction pairs loss and target"),
    }
}

// ---------------------------------------------------------------------------
// Training loop

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

const TAG_SHUFFLE: u64 = 0x534846;
const TAG_STEP: u64 = 0x535450;
const GRAD_CLIP: f64 = 1.0;

/// Trains the decoder with AdamW (decoupled weight decay), gradient-norm
/// clipping at 1.0, warmup + cosine schedule, and shuffled mini-batches.
/// Teacher forcing throughout; deterministic given the seed.
pub fn train<F: Real>(
    model_cfg: &ArConfig,
    train_cfg: &TrainConfig,
    data: &[FeatureSequence],
) -> Result<(ArParams<F>, Vec<StepTrace>)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("no training sequences".into()));
    }
    if model_cfg.head != train_cfg.loss.head() {
        return Err(Error::InvalidPairing {
            feature: format!("{:?} head", model_cfg.head),
            loss: train_cfg.loss.as_str().into(),
        });
    }
    let samples: Vec<Sample<F>> = data
        .iter()
        .map(|seq| Sample::from_feature(seq, train_cfg.loss, model_cfg.raster_k))
        .collect::<Result<_>>()?;
    for s in &samples {
        if s.positions() > model_cfg.n_max {
            return Err(Error::SequenceTooLong { len: s.positions(), max: model_cfg.n_max });
        }
        if let SampleData::Dense(m) = &s.input {
            if m.ncols() != model_cfg.d_in {
                return Err(Error::DimensionMismatch(format!(
                    "feature width {} does not match model d_in {}",
                    m.ncols(),
                    model_cfg.d_in
                )));
            }
        }
    }

    let mut params: ArParams<F> = ArParams::init(model_cfg.clone(), train_cfg.seed)?;
    let mut trace = Vec::with_capacity(train_cfg.total_steps);
    if train_cfg.total_steps == 0 {
        return Ok((params, trace));
    }

    let mut m_state = params.zeros_like();
    let mut v_state = params.zeros_like();
    let mut shuffle_rng = seeded_rng(derive_seed(train_cfg.seed, TAG_SHUFFLE, 0));
    let mut queue: Vec<usize> = Vec::new();

    for step in 0..train_cfg.total_steps {
        if queue.is_empty() {
            queue = (0..samples.len()).collect();
            queue.shuffle(&mut shuffle_rng);
        }
        let take = train_cfg.batch_size.min(queue.len());
        let batch: Vec<usize> = queue.drain(..take).collect();

        // Group by position count so each group stacks into one rectangle.
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for &idx in &batch {
            groups.entry(samples[idx].positions()).or_default().push(idx);
        }

        let mut grads: Option<ArParams<F>> = None;
        let mut batch_loss = 0.0f64;
        let inv_batch = F::from_f64(1.0 / batch.len() as f64);
        for (group_idx, (&positions, members)) in groups.iter().enumerate() {
            let input = stack_inputs(&samples, members, positions);
            let seed = derive_seed(
                train_cfg.seed,
                TAG_STEP,
                (step as u64) << 8 | group_idx as u64,
            );
            let out = forward_batch(&params, input, true, seed, true)?;
            let mut dlogits = Array2::<F>::zeros(out.logits.raw_dim());
            for (slot, &idx) in members.iter().enumerate() {
                let sample = &samples[idx];
                let rows = slot * positions..(slot + 1) * positions;
                let preds = out.preds.slice(ndarray::s![rows.clone(), ..]);
                batch_loss += sequence_loss(train_cfg.loss, &preds, &sample.target, sample.frames)
                    / batch.len() as f64;
                let mut d = sequence_dlogits(train_cfg.loss, &preds, &sample.target, sample.frames);
                d.mapv_inplace(|v| v * inv_batch);
                dlogits.slice_mut(ndarray::s![rows, ..]).assign(&d);
            }
            let cache = out.cache.as_ref().expect("cache requested");
            let group_grads = backward_batch(&params, cache, &dlogits);
            grads = Some(match grads.take() {
                None => group_grads,
                Some(mut acc) => {
                    add_assign_params(&mut acc, &group_grads);
                    acc
                }
            });
        }
        let mut grads = grads.expect("at least one group per step");

        clip_grad_norm(&mut grads, GRAD_CLIP);
        let lr = lr_at(step, train_cfg)?;
        adam_update(
            &mut params,
            &grads,
            &mut m_state,
            &mut v_state,
            step + 1,
            lr,
            train_cfg,
        );
        trace.push(StepTrace { step, lr, loss: batch_loss });
    }

    Ok((params, trace))
}

fn stack_inputs<F: Real>(
    samples: &[Sample<F>],
    members: &[usize],
    positions: usize,
) -> BatchInput<F> {
    let b = members.len();
    match &samples[members[0]].input {
        SampleData::Dense(first) => {
            let d = first.ncols();
            let mut stacked = Array2::<F>::zeros((b * positions, d));
            for (slot, &idx) in members.iter().enumerate() {
                let m = match &samples[idx].input {
                    SampleData::Dense(m) => m,
                    SampleData::Codes(_) => unreachable!("mixed sample kinds in one run"),
                };
                stacked
                    .slice_mut(ndarray::s![slot * positions..(slot + 1) * positions, ..])
                    .assign(m);
            }
            BatchInput { data: InputData::Dense(stacked), b, t: positions }
        }
        SampleData::Codes(_) => {
            let mut flat = Vec::with_capacity(b * positions);
            for &idx in members {
                match &samples[idx].input {
                    SampleData::Codes(c) => flat.extend_from_slice(c),
                    SampleData::Dense(_) => unreachable!("mixed sample kinds in one run"),
                }
            }
            BatchInput { data: InputData::Codes(flat), b, t: positions }
        }
    }
}

fn add_assign_params<F: Real>(acc: &mut ArParams<F>, other: &ArParams<F>) {
    let mut at = acc.tensors_mut();
    let ot = other.tensors();
    for ((_, a), (_, o)) in at.iter_mut().zip(ot.iter()) {
        let a = a.as_slice_mut().expect("contiguous tensor");
        let o = o.as_slice().expect("contiguous tensor");
        for (x, &y) in a.iter_mut().zip(o.iter()) {
            *x += y;
        }
    }
}

fn clip_grad_norm<F: Real>(grads: &mut ArParams<F>, max_norm: f64) {
    let mut sq = 0.0f64;
    for (_, t) in grads.tensors() {
        for &v in t.as_slice().expect("contiguous tensor") {
            let x = v.into_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = F::from_f64(max_norm / norm);
        for (_, mut t) in grads.tensors_mut() {
            for v in t.as_slice_mut().expect("contiguous tensor") {
                *v *= scale;
            }
        }
    }
}

fn adam_update<F: Real>(
    params: &mut ArParams<F>,
    grads: &ArParams<F>,
    m_state: &mut ArParams<F>,
    v_state: &mut ArParams<F>,
    t: usize,
    lr: f64,
    cfg: &TrainConfig,
) {
    let b1 = F::from_f64(cfg.adam_beta1);
    let b2 = F::from_f64(cfg.adam_beta2);
    let one_minus_b1 = F::from_f64(1.0 - cfg.adam_beta1);
    let one_minus_b2 = F::from_f64(1.0 - cfg.adam_beta2);
    let bias1 = F::from_f64(1.0 - cfg.adam_beta1.powi(t as i32));
    let bias2 = F::from_f64(1.0 - cfg.adam_beta2.powi(t as i32));
    let eps = F::from_f64(cfg.adam_eps);
    let lr_f = F::from_f64(lr);
    let decay = F::from_f64(lr * cfg.weight_decay);

    let mut pt = params.tensors_mut();
    let gt = grads.tensors();
    let mut mt = m_state.tensors_mut();
    let mut vt = v_state.tensors_mut();
    for i in 0..pt.len() {
        let p = pt[i].1.as_slice_mut().expect("contiguous tensor");
        let g = gt[i].1.as_slice().expect("contiguous tensor");
        let m = mt[i].1.as_slice_mut().expect("contiguous tensor");
        let v = vt[i].1.as_slice_mut().expect("contiguous tensor");
        for j in 0..p.len() {
            m[j] = b1 * m[j] + one_minus_b1 * g[j];
            v[j] = b2 * v[j] + one_minus_b2 * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] = p[j] - lr_f * (m_hat / (v_hat.sqrt() + eps)) - decay * p[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient check

const TAG_GRADCHECK: u64 = 0x4743;
const FD_STEP: f64 = 1e-5;

/// Compares analytic gradients of the full loss against central finite
/// differences over every parameter tensor. Returns the maximum relative
/// error. Double precision, evaluation mode.
pub fn grad_check(model_cfg: &ArConfig, loss: LossKind, seed: u64) -> Result<f64> {
    grad_check_mode(model_cfg, loss, seed, false)
}

pub(crate) fn grad_check_mode(
    model_cfg: &ArConfig,
    loss: LossKind,
    seed: u64,
    train_mode: bool,
) -> Result<f64> {
    model_cfg.validate()?;
    if model_cfg.head != loss.head() {
        return Err(Error::InvalidPairing {
            feature: format!("{:?} head", model_cfg.head),
            loss: loss.as_str().into(),
        });
    }
    let mut rng = seeded_rng(derive_seed(seed, TAG_GRADCHECK, 0));
    let (input, target, frames) = synth_check_data(model_cfg, loss, &mut rng);
    let dropout_seed = derive_seed(seed, TAG_GRADCHECK, 1);

    let params: ArParams<f64> = ArParams::init(model_cfg.clone(), seed)?;
    let loss_of = |p: &ArParams<f64>| -> Result<f64> {
        let out = forward_batch(p, clone_input(&input), train_mode, dropout_seed, false)?;
        Ok(sequence_loss(loss, &out.preds.view(), &target, frames))
    };

    let out = forward_batch(&params, clone_input(&input), train_mode, dropout_seed, true)?;
    let dlogits = sequence_dlogits(loss, &out.preds.view(), &target, frames);
    let analytic = backward_batch(&params, out.cache.as_ref().expect("cache requested"), &dlogits);

    // The central difference carries absolute rounding noise of roughly
    // eps * |loss| / h per evaluation pair; differences below that bound are
    // unresolvable by the oracle, not gradient errors.
    let loss0 = loss_of(&params)?.abs().max(1.0);
    let noise_floor = 8.0 * f64::EPSILON * loss0 / FD_STEP;

    let mut max_rel = 0.0f64;
    let n_tensors = analytic.tensors().len();
    for ti in 0..n_tensors {
        let len = analytic.tensors()[ti].1.len();
        for ei in 0..len {
            let a = analytic.tensors()[ti].1.iter().nth(ei).copied().unwrap();
            let mut plus = params.clone();
            *plus.tensors_mut()[ti].1.iter_mut().nth(ei).unwrap() += FD_STEP;
            let mut minus = params.clone();
            *minus.tensors_mut()[ti].1.iter_mut().nth(ei).unwrap() -= FD_STEP;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * FD_STEP);
            let diff = (a - numeric).abs();
            if diff <= noise_floor {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn clone_input<F: Real>(input: &BatchInput<F>) -> BatchInput<F> {
    let data = match &input.data {
        InputData::Dense(m) => InputData::Dense(m.clone()),
        InputData::Codes(c) => InputData::Codes(c.clone()),
    };
    BatchInput { data, b: input.b, t: input.t }
}

fn synth_check_data(
    cfg: &ArConfig,
    loss: LossKind,
    rng: &mut impl Rng,
) -> (BatchInput<f64>, Target<f64>, usize) {
    match loss {
        LossKind::RasterCe => {
            let w = 3usize;
            let frames = (cfg.n_max / w).clamp(1, 2);
            let codes: Vec<usize> =
                (0..frames * w).map(|_| rng.gen_range(0..cfg.raster_k)).collect();
            (
                BatchInput { data: InputData::Codes(codes.clone()), b: 1, t: frames * w },
                Target::Codes(codes),
                frames,
            )
        }
        LossKind::CeDiscrete => {
            let frames = cfg.n_max.min(4);
            let classes: Vec<usize> = (0..frames).map(|_| rng.gen_range(0..cfg.d_in)).collect();
            let mut input = Array2::<f64>::zeros((frames, cfg.d_in));
            for (i, &c) in classes.iter().enumerate() {
                input[[i, c]] = 1.0;
            }
            (
                BatchInput { data: InputData::Dense(input), b: 1, t: frames },
                Target::Classes(classes),
                frames,
            )
        }
        LossKind::SoftCe | LossKind::Bce => {
            let frames = cfg.n_max.min(4);
            let mut rows = Array2::<f64>::zeros((frames, cfg.d_in));
            for mut row in rows.axis_iter_mut(Axis(0)) {
                let logits: Vec<f64> = (0..row.len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let probs = crate::numeric::softmax(&logits);
                for (v, &p) in row.iter_mut().zip(probs.iter()) {
                    *v = p;
                }
            }
            (
                BatchInput { data: InputData::Dense(rows.clone()), b: 1, t: frames },
                Target::Dense(rows),
                frames,
            )
        }
        LossKind::Mse => {
            let frames = cfg.n_max.min(4);
            let rows = Array2::from_shape_fn((frames, cfg.d_in), |_| rng.gen_range(-1.0..1.0));
            (
                BatchInput { data: InputData::Dense(rows.clone()), b: 1, t: frames },
                Target::Dense(rows),
                frames,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Naive Bayes baseline

/// Position-independent categorical over delay offsets with add-1 smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayes {
    probs: Vec<f64>,
    config: DelayWindowConfig,
}

impl NaiveBayes {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn config(&self) -> DelayWindowConfig {
        self.config
    }

    /// Probability of a delay offset.
    pub fn prob(&self, delay: i64) -> f64 {
        self.probs[(delay + self.config.tau as i64) as usize]
    }
}

/// Pools frame counts over all training sequences and applies add-1
/// smoothing over the window's categories.
pub fn naive_bayes_fit(train: &[DiscreteDelaySequence]) -> Result<NaiveBayes> {
    if train.is_empty() {
        return Err(Error::EmptyInput("no sequences to fit Naive Bayes on".into()));
    }
    let config = train[0].config();
    let w = config.width();
    let mut counts = vec![0u64; w];
    for seq in train {
        if seq.config() != config {
            return Err(Error::DimensionMismatch(
                "delay window differs between training sequences".into(),
            ));
        }
        for col in seq.columns() {
            counts[col] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let denom = (total + w as u64) as f64;
    let probs = counts.iter().map(|&c| (c + 1) as f64 / denom).collect();
    Ok(NaiveBayes { probs, config })
}
