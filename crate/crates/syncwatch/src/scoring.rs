//! Anomaly scores from a trained model: per-frame losses under teacher
//! forcing, cumulative curves, sliding-window scores, and video-level scores.
//! Higher score means more likely fake (negative log-likelihood convention).

use crate::error::{Error, Result};
use crate::features::{DiscreteDelaySequence, FeatureSequence};
use crate::model::{forward_batch, ArParams, BatchInput, InputData};
use crate::numeric::Real;
use crate::training::{sequence_frame_losses, LossKind, NaiveBayes, Sample, SampleData};

/// Sliding-window length (frames) for video-level scoring.
pub const DEFAULT_WINDOW: usize = 50;
/// Sliding-window stride (frames) for video-level scoring.
pub const DEFAULT_STRIDE: usize = 25;

/// Scores for one input: per-frame losses, their running sum, per-window
/// means, and the video-level mean of window scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub frame_scores: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub window_scores: Vec<(usize, f64)>,
    pub video_score: f64,
    /// Set when the input was shorter than the scoring window and was scored
    /// as a single shorter window.
    pub short_window: bool,
}

impl ScoreReport {
    fn from_frames(frame_scores: Vec<f64>, window_scores: Vec<(usize, f64)>, short: bool) -> Self {
        let mut cumulative = Vec::with_capacity(frame_scores.len());
        let mut acc = 0.0;
        for &s in &frame_scores {
            acc += s;
            cumulative.push(acc);
        }
        let video_score =
            window_scores.iter().map(|(_, s)| s).sum::<f64>() / window_scores.len() as f64;
        Self { frame_scores, cumulative, window_scores, video_score, short_window: short }
    }
}

/// Per-frame losses of one sequence under the trained model, teacher forcing,
/// inference mode (dropout off).
pub fn frame_losses<F: Real>(
    params: &ArParams<F>,
    x: &FeatureSequence,
    loss: LossKind,
) -> Result<Vec<f64>> {
    if params.config.head != loss.head() {
        return Err(Error::InvalidPairing {
            feature: format!("{:?} head", params.config.head),
            loss: loss.as_str().into(),
        });
    }
    let sample: Sample<F> = Sample::from_feature(x, loss, params.config.raster_k)?;
    let frames = sample.frames;
    let input = match sample.input {
        SampleData::Dense(m) => BatchInput { b: 1, t: m.nrows(), data: InputData::Dense(m) },
        SampleData::Codes(c) => BatchInput { b: 1, t: c.len(), data: InputData::Codes(c) },
    };
    let out = forward_batch(params, input, false, 0, false)?;
    Ok(sequence_frame_losses(loss, &out.preds.view(), &sample.target, frames))
}

/// Scores one sequence as a single window.
pub fn score_sequence<F: Real>(
    params: &ArParams<F>,
    x: &FeatureSequence,
    loss: LossKind,
) -> Result<ScoreReport> {
    let frames = frame_losses(params, x, loss)?;
    let mean = frames.iter().sum::<f64>() / frames.len() as f64;
    Ok(ScoreReport::from_frames(frames, vec![(0, mean)], false))
}

/// Scores a full video with sliding windows at the given stride plus one
/// final window ending at the last frame. Per-window score is the mean frame
/// loss; the video score is the mean over windows; a frame covered by several
/// windows gets the mean of its per-window losses.
///
/// Inputs shorter than the window are scored as a single shorter window and
/// flagged.
pub fn score_video<F: Real>(
    params: &ArParams<F>,
    x: &FeatureSequence,
    loss: LossKind,
    window: usize,
    stride: usize,
) -> Result<ScoreReport> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window and stride must be positive".into()));
    }
    let t = x.len();
    if t < window {
        let mut report = score_sequence(params, x, loss)?;
        report.short_window = true;
        return Ok(report);
    }

    let mut starts: Vec<usize> = Vec::new();
    let mut s = 0usize;
    while s + window <= t {
        starts.push(s);
        s += stride;
    }
    let last = t - window;
    if *starts.last().expect("at least one window") != last {
        starts.push(last);
    }

    let mut sums = vec![0.0f64; t];
    let mut counts = vec![0usize; t];
    let mut window_scores = Vec::with_capacity(starts.len());
    for &start in &starts {
        let slice = x.slice_frames(start, window);
        let losses = frame_losses(params, &slice, loss)?;
        let mean = losses.iter().sum::<f64>() / window as f64;
        window_scores.push((start, mean));
        for (off, &l) in losses.iter().enumerate() {
            sums[start + off] += l;
            counts[start + off] += 1;
        }
    }
    let frame_scores: Vec<f64> =
        sums.iter().zip(&counts).map(|(&s, &c)| s / c as f64).collect();
    Ok(ScoreReport::from_frames(frame_scores, window_scores, false))
}

/// Scores a discrete delay sequence under the Naive Bayes baseline:
/// per-frame `-ln p(delay)`, video score the mean. Order-independent.
pub fn naive_bayes_score(model: &NaiveBayes, x: &DiscreteDelaySequence) -> ScoreReport {
    let frames: Vec<f64> = x.delays().iter().map(|&d| -model.prob(d).ln()).collect();
    let mean = frames.iter().sum::<f64>() / frames.len() as f64;
    ScoreReport::from_frames(frames, vec![(0, mean)], false)
}
