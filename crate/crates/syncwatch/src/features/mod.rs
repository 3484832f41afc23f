//! Synchronization feature sequences and the transforms between them.
//!
//! Raw per-frame affinities over a delay window are the ingestion boundary.
//! Everything downstream — delay distributions, discrete delays, PCA-projected
//! activations, concatenations, and quantized code grids — is derived here.

mod kmeans;
mod pca;

pub use kmeans::{kmeans_fit, Codebook};
pub use pca::{pca_fit, pca_project, PcaModel};

use crate::error::{Error, Result};
use crate::numeric::{ln_clamped, softmax_inplace};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

/// Delay window geometry: offsets range over `[-tau, +tau]`, so rows are
/// `2 * tau + 1` wide. Column `j` corresponds to offset `j - tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayWindowConfig {
    pub tau: usize,
    pub fps: u32,
}

impl Default for DelayWindowConfig {
    fn default() -> Self {
        Self { tau: 15, fps: 25 }
    }
}

impl DelayWindowConfig {
    pub fn new(tau: usize, fps: u32) -> Result<Self> {
        let cfg = Self { tau, fps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        if self.fps == 0 {
            return Err(Error::InvalidConfig("fps must be positive".into()));
        }
        Ok(())
    }

    /// Window width `W = 2 * tau + 1`.
    pub fn width(&self) -> usize {
        2 * self.tau + 1
    }

    /// Column index of the zero-offset (in-sync) delay.
    pub fn center(&self) -> usize {
        self.tau
    }
}

/// Raw affinity rows, one per frame, over the delay window.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinitySequence {
    values: Array2<f64>,
    config: DelayWindowConfig,
}

impl AffinitySequence {
    pub fn new(values: Array2<f64>, config: DelayWindowConfig) -> Result<Self> {
        config.validate()?;
        if values.nrows() == 0 {
            return Err(Error::EmptyInput("affinity sequence has no frames".into()));
        }
        if values.ncols() != config.width() {
            return Err(Error::DimensionMismatch(format!(
                "affinity width {} does not match window width {}",
                values.ncols(),
                config.width()
            )));
        }
        for ((row, col), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col, value: v });
            }
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn config(&self) -> DelayWindowConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty sequences
    }
}

/// Per-frame probability distributions over candidate delays: rows are
/// nonnegative and sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDistributionSequence {
    rows: Array2<f64>,
    config: DelayWindowConfig,
}

/// Tolerance on distribution row sums enforced at construction.
pub const ROW_SUM_TOL: f64 = 1e-9;

impl DelayDistributionSequence {
    pub fn new(rows: Array2<f64>, config: DelayWindowConfig) -> Result<Self> {
        config.validate()?;
        if rows.nrows() == 0 {
            return Err(Error::EmptyInput("distribution sequence has no frames".into()));
        }
        if rows.ncols() != config.width() {
            return Err(Error::DimensionMismatch(format!(
                "distribution width {} does not match window width {}",
                rows.ncols(),
                config.width()
            )));
        }
        for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j, value: p });
                }
                if !(0.0..=1.0 + ROW_SUM_TOL).contains(&p) {
                    return Err(Error::InvalidDistribution { row: i, sum: p, tol: ROW_SUM_TOL });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidDistribution { row: i, sum, tol: ROW_SUM_TOL });
            }
        }
        Ok(Self { rows, config })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn config(&self) -> DelayWindowConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-frame integer delay offsets in `[-tau, +tau]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteDelaySequence {
    delays: Vec<i64>,
    config: DelayWindowConfig,
}

impl DiscreteDelaySequence {
    pub fn new(delays: Vec<i64>, config: DelayWindowConfig) -> Result<Self> {
        config.validate()?;
        if delays.is_empty() {
            return Err(Error::EmptyInput("discrete delay sequence has no frames".into()));
        }
        let tau = config.tau as i64;
        for (frame, &d) in delays.iter().enumerate() {
            if d < -tau || d > tau {
                return Err(Error::OffsetOutOfRange { frame, offset: d, tau: config.tau });
            }
        }
        Ok(Self { delays, config })
    }

    pub fn delays(&self) -> &[i64] {
        &self.delays
    }

    pub fn config(&self) -> DelayWindowConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column index of each delay within the window.
    pub fn columns(&self) -> Vec<usize> {
        let tau = self.config.tau as i64;
        self.delays.iter().map(|&d| (d + tau) as usize).collect()
    }
}

/// Origin of an activation sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSource {
    AudioVisual,
    VisualOnly,
}

/// Per-frame network activation vectors, ingested from upstream encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSequence {
    values: Array2<f64>,
    source: ActivationSource,
}

impl ActivationSequence {
    pub fn new(values: Array2<f64>, source: ActivationSource) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("activation sequence is empty".into()));
        }
        for ((row, col), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col, value: v });
            }
        }
        Ok(Self { values, source })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn source(&self) -> ActivationSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty sequences
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Which feature set a sequence carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    DiscreteDelay,
    Distribution,
    ActivationPca,
    ConcatAv,
    RasterCodes,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::DiscreteDelay => "discrete-delay",
            FeatureKind::Distribution => "distribution",
            FeatureKind::ActivationPca => "activation-pca",
            FeatureKind::ConcatAv => "concat-av",
            FeatureKind::RasterCodes => "raster",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete-delay" | "discrete_delay" | "discrete" => Ok(FeatureKind::DiscreteDelay),
            "distribution" => Ok(FeatureKind::Distribution),
            "activation-pca" | "activation_pca" | "activation" => Ok(FeatureKind::ActivationPca),
            "concat-av" | "concat_av" | "concat" => Ok(FeatureKind::ConcatAv),
            "raster" | "raster-codes" | "raster_codes" => Ok(FeatureKind::RasterCodes),
            other => Err(Error::InvalidConfig(format!("unknown feature set `{other}`"))),
        }
    }
}

/// Payload of a feature sequence: dense rows for continuous kinds, an integer
/// code grid for the raster kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureData {
    Dense(Array2<f64>),
    Codes(Array2<u8>),
}

/// A per-frame feature matrix tagged by feature kind, ready for the sequence
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    pub data: FeatureData,
    pub config: DelayWindowConfig,
}

impl FeatureSequence {
    /// Frame count.
    pub fn len(&self) -> usize {
        match &self.data {
            FeatureData::Dense(m) => m.nrows(),
            FeatureData::Codes(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-frame feature width (delay window width for raster codes).
    pub fn dim(&self) -> usize {
        match &self.data {
            FeatureData::Dense(m) => m.ncols(),
            FeatureData::Codes(m) => m.ncols(),
        }
    }

    pub fn dense(&self) -> Option<&Array2<f64>> {
        match &self.data {
            FeatureData::Dense(m) => Some(m),
            FeatureData::Codes(_) => None,
        }
    }

    pub fn codes(&self) -> Option<&Array2<u8>> {
        match &self.data {
            FeatureData::Codes(m) => Some(m),
            FeatureData::Dense(_) => None,
        }
    }

    /// Copy of frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> FeatureSequence {
        let data = match &self.data {
            FeatureData::Dense(m) => {
                FeatureData::Dense(m.slice(ndarray::s![start..start + len, ..]).to_owned())
            }
            FeatureData::Codes(m) => {
                FeatureData::Codes(m.slice(ndarray::s![start..start + len, ..]).to_owned())
            }
        };
        FeatureSequence { kind: self.kind, data, config: self.config }
    }
}

/// Row-softmax of raw affinities: each frame's affinity row becomes a
/// probability distribution over delays.
pub fn normalize_affinities(aff: &AffinitySequence) -> DelayDistributionSequence {
    let mut rows = aff.values().clone();
    for mut row in rows.axis_iter_mut(Axis(0)) {
        softmax_inplace(row.view_mut());
    }
    DelayDistributionSequence { rows, config: aff.config() }
}

/// Result of the synchronization diagnostic loss: mean negative log
/// probability of the zero-offset column, with the number of frames whose
/// center probability was clamped away from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncLoss {
    pub loss: f64,
    pub clamped_frames: usize,
}

/// Mean `-ln S(i, center)` over frames; diagnostic only.
pub fn sync_infonce_loss(dist: &DelayDistributionSequence) -> SyncLoss {
    let center = dist.config().center();
    let mut total = 0.0;
    let mut clamped = 0;
    for row in dist.rows().axis_iter(Axis(0)) {
        let p = row[center];
        if p < crate::numeric::PROB_EPS {
            clamped += 1;
        }
        total -= ln_clamped(p);
    }
    SyncLoss { loss: total / dist.len() as f64, clamped_frames: clamped }
}

/// Per-frame offset of the maximal probability; ties break toward the
/// smallest column index (most negative offset).
pub fn argmax_delays(dist: &DelayDistributionSequence) -> DiscreteDelaySequence {
    let tau = dist.config().tau as i64;
    let delays = dist
        .rows()
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0usize;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best as i64 - tau
        })
        .collect();
    DiscreteDelaySequence { delays, config: dist.config() }
}

/// One-hot feature rows for a discrete delay sequence.
pub fn one_hot_features(delays: &DiscreteDelaySequence) -> FeatureSequence {
    let w = delays.config().width();
    let mut data = Array2::<f64>::zeros((delays.len(), w));
    for (i, col) in delays.columns().into_iter().enumerate() {
        data[[i, col]] = 1.0;
    }
    FeatureSequence {
        kind: FeatureKind::DiscreteDelay,
        data: FeatureData::Dense(data),
        config: delays.config(),
    }
}

/// Distribution rows as a model-ready feature sequence.
pub fn distribution_features(dist: &DelayDistributionSequence) -> FeatureSequence {
    FeatureSequence {
        kind: FeatureKind::Distribution,
        data: FeatureData::Dense(dist.rows().clone()),
        config: dist.config(),
    }
}

/// Maps every distribution entry to the index of its nearest codebook center;
/// exact ties go to the lower index.
pub fn quantize_grid(dist: &DelayDistributionSequence, cb: &Codebook) -> FeatureSequence {
    let rows = dist.rows();
    let mut codes = Array2::<u8>::zeros((rows.nrows(), rows.ncols()));
    for ((i, j), &v) in rows.indexed_iter() {
        codes[[i, j]] = cb.encode(v) as u8;
    }
    FeatureSequence {
        kind: FeatureKind::RasterCodes,
        data: FeatureData::Codes(codes),
        config: dist.config(),
    }
}

/// Row-wise concatenation of distribution rows and PCA-projected activations,
/// distribution first.
pub fn concat_features(
    dist: &DelayDistributionSequence,
    pca: &FeatureSequence,
) -> Result<FeatureSequence> {
    if pca.kind != FeatureKind::ActivationPca {
        return Err(Error::KindMismatch {
            expected: FeatureKind::ActivationPca.as_str().into(),
            got: pca.kind.as_str().into(),
        });
    }
    let proj = pca.dense().expect("activation-pca features are dense");
    if proj.nrows() != dist.len() {
        return Err(Error::DimensionMismatch(format!(
            "distribution has {} frames but projected activations have {}",
            dist.len(),
            proj.nrows()
        )));
    }
    let w = dist.config().width();
    let d = proj.ncols();
    let mut data = Array2::<f64>::zeros((dist.len(), w + d));
    data.slice_mut(ndarray::s![.., ..w]).assign(dist.rows());
    data.slice_mut(ndarray::s![.., w..]).assign(proj);
    Ok(FeatureSequence {
        kind: FeatureKind::ConcatAv,
        data: FeatureData::Dense(data),
        config: dist.config(),
    })
}
