//! Seeded synthetic affinity and activation generators.
//!
//! Real sequences carry a stable peak at one global offset (possibly nonzero:
//! consistent misalignment alone must not look anomalous); fake sequences
//! either drift the peak, flatten the distribution while preserving the peak
//! location, or corrupt one short interval for localization ground truth.

use crate::error::{Error, Result};
use crate::features::{
    normalize_affinities, ActivationSequence, ActivationSource, AffinitySequence,
    DelayWindowConfig,
};
use crate::numeric::{derive_seed, seeded_rng};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Activation dimensionality of the synthetic encoder stand-in.
pub const ACTIVATION_DIM: usize = 128;

const TAG_SPANS: u64 = 0x5350; // span placement stream
const TAG_ACT_NOISE: u64 = 0xA0; // activation noise stream
const TAG_ACT_MAP: u64 = 0xA1; // shared activation map (constant master seed)

/// Fake generation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeMode {
    /// Peak column performs a clipped random walk.
    Drift,
    /// Random spans become near-uniform rows with the peak location preserved.
    Flat,
    /// Real sequence with one short drifting interval; interval returned.
    Interval,
}

impl FakeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FakeMode::Drift => "drift",
            FakeMode::Flat => "flat",
            FakeMode::Interval => "interval",
        }
    }
}

impl std::str::FromStr for FakeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drift" => Ok(FakeMode::Drift),
            "flat" => Ok(FakeMode::Flat),
            "interval" => Ok(FakeMode::Interval),
            other => Err(Error::InvalidConfig(format!("unknown fake mode `{other}`"))),
        }
    }
}

/// Label selector for activation generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenLabel {
    Real,
    Fake(FakeMode),
}

/// Generator parameters. All values are pinned calibration knobs; thresholds
/// that depend on them are derived by seeded oracle runs before being frozen
/// in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub tau: usize,
    pub frames: usize,
    pub fps: u32,
    /// Real sequences keep one global offset drawn from this inclusive range.
    pub offset_min: i64,
    pub offset_max: i64,
    pub peak_height_mean: f64,
    pub peak_height_sd: f64,
    pub noise_sd: f64,
    /// AR(1) smoothing coefficient across time.
    pub smoothing: f64,
    /// Standard deviation of the drift-mode random-walk step, in frames.
    pub drift_step_sd: f64,
    /// Approximate fraction of frames covered by flat spans.
    pub flat_span_prob: f64,
    pub flat_span_len: usize,
    /// Reduced peak height inside flat spans; keeps the argmax in place.
    pub flat_peak_height: f64,
    pub flat_noise_sd: f64,
    /// Length of the manipulated span in interval mode.
    pub interval_len: usize,
    pub activation_noise_sd: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            tau: 15,
            frames: 120,
            fps: 25,
            offset_min: -2,
            offset_max: 2,
            peak_height_mean: 4.0,
            peak_height_sd: 0.5,
            noise_sd: 0.3,
            smoothing: 0.9,
            drift_step_sd: 1.0,
            flat_span_prob: 0.3,
            flat_span_len: 5,
            flat_peak_height: 0.8,
            flat_noise_sd: 0.1,
            interval_len: 9,
            activation_noise_sd: 0.1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let tau = self.tau as i64;
        if self.frames <= 2 * self.tau {
            return Err(Error::InvalidConfig(format!(
                "frames {} must exceed 2 * tau = {}",
                self.frames,
                2 * self.tau
            )));
        }
        if self.offset_min > self.offset_max
            || self.offset_min < -tau
            || self.offset_max > tau
        {
            return Err(Error::InvalidConfig(format!(
                "offset range [{}, {}] invalid for tau {}",
                self.offset_min, self.offset_max, self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::InvalidConfig("smoothing must be in [0, 1)".into()));
        }
        if self.interval_len == 0 || self.interval_len > self.frames {
            return Err(Error::InvalidConfig("interval length out of range".into()));
        }
        if self.flat_span_len == 0 || self.flat_span_len > self.frames {
            return Err(Error::InvalidConfig("flat span length out of range".into()));
        }
        self.window().validate()
    }

    pub fn window(&self) -> DelayWindowConfig {
        DelayWindowConfig { tau: self.tau, fps: self.fps }
    }
}

struct RowPlan {
    peak_col: usize,
    peak_height_scale: f64, // 1.0 normally, reduced inside flat spans
    noise_sd: f64,
}

/// Stable-alignment affinity sequence: per-frame noise plus a peak of sampled
/// height at one global offset, AR(1)-smoothed across time.
pub fn gen_real(cfg: &GenConfig, seed: u64) -> Result<AffinitySequence> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed);
    let d0 = rng.gen_range(cfg.offset_min..=cfg.offset_max);
    let col = (d0 + cfg.tau as i64) as usize;
    let plans: Vec<RowPlan> = (0..cfg.frames)
        .map(|_| RowPlan { peak_col: col, peak_height_scale: 1.0, noise_sd: cfg.noise_sd })
        .collect();
    build_affinities(cfg, &mut rng, &plans)
}

/// Fake affinity sequence; interval mode also returns the manipulated span
/// `[start, end)`.
pub fn gen_fake(
    cfg: &GenConfig,
    seed: u64,
    mode: FakeMode,
) -> Result<(AffinitySequence, Option<(usize, usize)>)> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed);
    let tau = cfg.tau as i64;
    let d0 = rng.gen_range(cfg.offset_min..=cfg.offset_max);

    let (plans, interval) = match mode {
        FakeMode::Drift => {
            let cols = drift_walk(cfg, &mut rng, d0, cfg.frames);
            let plans: Vec<RowPlan> = cols
                .into_iter()
                .map(|c| RowPlan { peak_col: c, peak_height_scale: 1.0, noise_sd: cfg.noise_sd })
                .collect();
            (plans, None)
        }
        FakeMode::Flat => {
            let mut span_rng = seeded_rng(derive_seed(seed, TAG_SPANS, 0));
            let n_spans = ((cfg.frames as f64 * cfg.flat_span_prob / cfg.flat_span_len as f64)
                .round() as usize)
                .max(1);
            let mut flat = vec![false; cfg.frames];
            for _ in 0..n_spans {
                let start = span_rng.gen_range(0..=cfg.frames - cfg.flat_span_len);
                for f in flat.iter_mut().skip(start).take(cfg.flat_span_len) {
                    *f = true;
                }
            }
            let col = (d0 + tau) as usize;
            let plans: Vec<RowPlan> = flat
                .into_iter()
                .map(|is_flat| {
                    if is_flat {
                        RowPlan {
                            peak_col: col,
                            peak_height_scale: cfg.flat_peak_height / cfg.peak_height_mean,
                            noise_sd: cfg.flat_noise_sd,
                        }
                    } else {
                        RowPlan { peak_col: col, peak_height_scale: 1.0, noise_sd: cfg.noise_sd }
                    }
                })
                .collect();
            (plans, None)
        }
        FakeMode::Interval => {
            let start = rng.gen_range(0..=cfg.frames - cfg.interval_len);
            let walk = drift_walk(cfg, &mut rng, d0, cfg.interval_len);
            let col = (d0 + tau) as usize;
            let plans: Vec<RowPlan> = (0..cfg.frames)
                .map(|t| {
                    let c = if t >= start && t < start + cfg.interval_len {
                        walk[t - start]
                    } else {
                        col
                    };
                    RowPlan { peak_col: c, peak_height_scale: 1.0, noise_sd: cfg.noise_sd }
                })
                .collect();
            (plans, Some((start, start + cfg.interval_len)))
        }
    };

    let aff = build_affinities(cfg, &mut rng, &plans)?;
    Ok((aff, interval))
}

fn drift_walk(cfg: &GenConfig, rng: &mut impl Rng, d0: i64, len: usize) -> Vec<usize> {
    let tau = cfg.tau as i64;
    let step = Normal::new(0.0, cfg.drift_step_sd).expect("valid step sd");
    let mut d = d0;
    (0..len)
        .map(|t| {
            if t > 0 {
                let delta = step.sample(rng).round() as i64;
                d = (d + delta).clamp(-tau, tau);
            }
            (d + tau) as usize
        })
        .collect()
}

fn build_affinities(
    cfg: &GenConfig,
    rng: &mut impl Rng,
    plans: &[RowPlan],
) -> Result<AffinitySequence> {
    let w = cfg.window().width();
    let height = Normal::new(cfg.peak_height_mean, cfg.peak_height_sd).expect("valid height sd");
    let mut raw = Array2::<f64>::zeros((plans.len(), w));
    for (t, plan) in plans.iter().enumerate() {
        let noise = Normal::new(0.0, plan.noise_sd).expect("valid noise sd");
        for j in 0..w {
            raw[[t, j]] = noise.sample(rng);
        }
        raw[[t, plan.peak_col]] += height.sample(rng) * plan.peak_height_scale;
    }
    // AR(1) smoothing across time; row 0 passes through.
    let rho = cfg.smoothing;
    for t in 1..plans.len() {
        for j in 0..w {
            raw[[t, j]] = rho * raw[[t - 1, j]] + (1.0 - rho) * raw[[t, j]];
        }
    }
    AffinitySequence::new(raw, cfg.window())
}

/// Synthetic encoder activations: a fixed linear map (shared across all
/// sequences) applied to each frame's normalized delay distribution, plus
/// per-frame noise. Carries the same alignment signal the affinities do.
pub fn gen_activations(cfg: &GenConfig, seed: u64, label: GenLabel) -> Result<ActivationSequence> {
    cfg.validate()?;
    let aff = match label {
        GenLabel::Real => gen_real(cfg, seed)?,
        GenLabel::Fake(mode) => gen_fake(cfg, seed, mode)?.0,
    };
    let dist = normalize_affinities(&aff);
    let map = activation_map(cfg.tau);
    let mut noise_rng = seeded_rng(derive_seed(seed, TAG_ACT_NOISE, 0));
    let noise = Normal::new(0.0, cfg.activation_noise_sd).expect("valid activation noise sd");
    let mut values = dist.rows().dot(&map.t());
    if cfg.activation_noise_sd > 0.0 {
        for v in values.iter_mut() {
            *v += noise.sample(&mut noise_rng);
        }
    }
    ActivationSequence::new(values, ActivationSource::AudioVisual)
}

/// The shared distribution-to-activation map for a given window size.
/// Derived from a constant master seed so every sequence sees the same map.
pub fn activation_map(tau: usize) -> Array2<f64> {
    let w = 2 * tau + 1;
    let mut rng = seeded_rng(derive_seed(0, TAG_ACT_MAP, tau as u64));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_fn((ACTIVATION_DIM, w), |_| normal.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::argmax_delays;

    #[test]
    fn real_generation_is_deterministic() {
        let cfg = GenConfig::default();
        let a = gen_real(&cfg, 42).unwrap();
        let b = gen_real(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_real(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fake_generation_is_deterministic_per_mode() {
        let cfg = GenConfig::default();
        for mode in [FakeMode::Drift, FakeMode::Flat, FakeMode::Interval] {
            let a = gen_fake(&cfg, 7, mode).unwrap();
            let b = gen_fake(&cfg, 7, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn normalized_rows_are_valid_distributions() {
        let cfg = GenConfig::default();
        let dist = normalize_affinities(&gen_real(&cfg, 3).unwrap());
        for row in dist.rows().axis_iter(ndarray::Axis(0)) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn real_argmax_tracks_global_offset() {
        // Rate over seeds pinned by a calibration run; the bound here is the
        // documented floor.
        let cfg = GenConfig::default();
        let mut agree = 0usize;
        let mut total = 0usize;
        for seed in 0..50u64 {
            let aff = gen_real(&cfg, seed).unwrap();
            let delays = argmax_delays(&normalize_affinities(&aff));
            // The generator's offset is the modal argmax.
            let mut counts = std::collections::HashMap::new();
            for &d in delays.delays() {
                *counts.entry(d).or_insert(0usize) += 1;
            }
            let (&mode_delay, _) = counts.iter().max_by_key(|(_, &c)| c).unwrap();
            agree += delays.delays().iter().filter(|&&d| d == mode_delay).count();
            total += delays.len();
        }
        let rate = agree as f64 / total as f64;
        assert!(rate > 0.9, "argmax stability rate {rate}");
    }

    #[test]
    fn interval_mode_returns_span_of_configured_length() {
        let cfg = GenConfig::default();
        for seed in 0..20u64 {
            let (_, interval) = gen_fake(&cfg, seed, FakeMode::Interval).unwrap();
            let (s, e) = interval.expect("interval mode returns a span");
            assert_eq!(e - s, cfg.interval_len);
            assert!(e <= cfg.frames);
        }
    }

    #[test]
    fn drift_mode_changes_sign_more_often_than_real() {
        let cfg = GenConfig::default();
        let sign_changes = |delays: &[i64]| -> usize {
            delays
                .windows(2)
                .filter(|w| w[0].signum() != w[1].signum())
                .count()
        };
        let mut real_total = 0usize;
        let mut drift_total = 0usize;
        for seed in 0..40u64 {
            let r = argmax_delays(&normalize_affinities(&gen_real(&cfg, seed).unwrap()));
            let (f, _) = gen_fake(&cfg, seed, FakeMode::Drift).unwrap();
            let fd = argmax_delays(&normalize_affinities(&f));
            real_total += sign_changes(r.delays());
            drift_total += sign_changes(fd.delays());
        }
        assert!(
            drift_total > real_total,
            "drift sign changes {drift_total} vs real {real_total}"
        );
    }

    #[test]
    fn activations_have_fixed_dimension() {
        let cfg = GenConfig::default();
        let act = gen_activations(&cfg, 5, GenLabel::Real).unwrap();
        assert_eq!(act.dim(), ACTIVATION_DIM);
        assert_eq!(act.len(), cfg.frames);
    }

    #[test]
    fn zero_noise_activations_are_pure_function_of_distribution() {
        let cfg = GenConfig { activation_noise_sd: 0.0, ..GenConfig::default() };
        let aff = gen_real(&cfg, 9).unwrap();
        let dist = normalize_affinities(&aff);
        let act = gen_activations(&cfg, 9, GenLabel::Real).unwrap();
        let map = activation_map(cfg.tau);
        let expect = dist.rows().dot(&map.t());
        for (a, b) in act.values().iter().zip(expect.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn activation_map_is_shared_across_calls() {
        let a = activation_map(15);
        let b = activation_map(15);
        assert_eq!(a, b);
    }

    #[test]
    fn pca_retains_most_activation_variance() {
        // Fixed-seed corpus; measured retention at the default noise is
        // about 0.978, pinned here against the documented 0.95 floor.
        let cfg = GenConfig::default();
        let acts: Vec<_> = (0..20u64)
            .map(|s| gen_activations(&cfg, 6000 + s, GenLabel::Real).unwrap())
            .collect();
        let n: usize = acts.iter().map(|a| a.len()).sum();
        let d = acts[0].dim();
        let mut mean = vec![0.0f64; d];
        for a in &acts {
            for row in a.values().rows() {
                for (m, &v) in mean.iter_mut().zip(row.iter()) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut total = 0.0f64;
        for a in &acts {
            for row in a.values().rows() {
                for (j, &v) in row.iter().enumerate() {
                    total += (v - mean[j]) * (v - mean[j]);
                }
            }
        }
        total /= (n - 1) as f64;
        let model = crate::features::pca_fit(&acts, 2 * cfg.tau + 1).unwrap();
        let retained: f64 = model.eigenvalues().iter().sum();
        let fraction = retained / total;
        assert!(fraction > 0.95, "retained variance fraction {fraction}");
    }
}
