//! Text container for feature sequences.
//!
//! Layout: comment header lines, then one comma-separated row per frame.
//!
//! ```text
//! # avsf v1
//! # kind=affinity
//! # tau=15
//! # fps=25
//! # dim=31
//! 1.23456789e0,...
//! ```
//!
//! Reals are printed with 9 significant digits, which round-trips stably:
//! saving a loaded file reproduces it byte for byte. Loading keeps the raw
//! parsed values; kind-specific validation (and distribution renormalization)
//! happens when converting to a domain type.

use crate::error::{Error, Result};
use crate::features::{
    ActivationSequence, ActivationSource, AffinitySequence, DelayDistributionSequence,
    DelayWindowConfig, DiscreteDelaySequence,
};
use ndarray::{Array2, Axis};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const MAGIC: &str = "# avsf v1";

/// Tolerance for renormalizing loaded distribution rows; larger departures
/// are rejected.
pub const DIST_RENORM_TOL: f64 = 1e-6;

/// On-disk payload kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Affinity,
    Distribution,
    Discrete,
    Activation,
    Raster,
}

impl FileKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FileKind::Affinity => "affinity",
            FileKind::Distribution => "distribution",
            FileKind::Discrete => "discrete",
            FileKind::Activation => "activation",
            FileKind::Raster => "raster",
        }
    }

    fn integer_payload(&self) -> bool {
        matches!(self, FileKind::Discrete | FileKind::Raster)
    }
}

impl std::str::FromStr for FileKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affinity" => Ok(FileKind::Affinity),
            "distribution" => Ok(FileKind::Distribution),
            "discrete" => Ok(FileKind::Discrete),
            "activation" => Ok(FileKind::Activation),
            "raster" => Ok(FileKind::Raster),
            other => Err(Error::InvalidConfig(format!("unknown feature file kind `{other}`"))),
        }
    }
}

/// A parsed feature file. Rows hold raw values; integer payloads (discrete,
/// raster) are stored as exact integers in the f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub kind: FileKind,
    pub tau: usize,
    pub fps: u32,
    pub rows: Array2<f64>,
}

impl FeatureFile {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn window(&self) -> DelayWindowConfig {
        DelayWindowConfig { tau: self.tau, fps: self.fps }
    }

    pub fn from_affinity(aff: &AffinitySequence) -> Self {
        Self {
            kind: FileKind::Affinity,
            tau: aff.config().tau,
            fps: aff.config().fps,
            rows: aff.values().clone(),
        }
    }

    pub fn from_distribution(dist: &DelayDistributionSequence) -> Self {
        Self {
            kind: FileKind::Distribution,
            tau: dist.config().tau,
            fps: dist.config().fps,
            rows: dist.rows().clone(),
        }
    }

    pub fn from_discrete(delays: &DiscreteDelaySequence) -> Self {
        let rows = Array2::from_shape_vec(
            (delays.len(), 1),
            delays.delays().iter().map(|&d| d as f64).collect(),
        )
        .expect("delay column");
        Self {
            kind: FileKind::Discrete,
            tau: delays.config().tau,
            fps: delays.config().fps,
            rows,
        }
    }

    pub fn from_activation(act: &ActivationSequence, window: DelayWindowConfig) -> Self {
        Self {
            kind: FileKind::Activation,
            tau: window.tau,
            fps: window.fps,
            rows: act.values().clone(),
        }
    }

    pub fn from_raster(codes: &Array2<u8>, window: DelayWindowConfig) -> Self {
        Self {
            kind: FileKind::Raster,
            tau: window.tau,
            fps: window.fps,
            rows: codes.mapv(f64::from),
        }
    }

    pub fn into_affinity(&self) -> Result<AffinitySequence> {
        self.expect_kind(FileKind::Affinity)?;
        AffinitySequence::new(self.rows.clone(), self.window())
    }

    /// Converts to a distribution sequence, renormalizing rows whose sum is
    /// within `DIST_RENORM_TOL` of 1 and rejecting anything further off.
    pub fn into_distribution(&self) -> Result<DelayDistributionSequence> {
        self.expect_kind(FileKind::Distribution)?;
        let mut rows = self.rows.clone();
        for (i, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > DIST_RENORM_TOL {
                return Err(Error::InvalidDistribution { row: i, sum, tol: DIST_RENORM_TOL });
            }
            row.mapv_inplace(|p| p / sum);
        }
        DelayDistributionSequence::new(rows, self.window())
    }

    pub fn into_discrete(&self) -> Result<DiscreteDelaySequence> {
        self.expect_kind(FileKind::Discrete)?;
        if self.rows.ncols() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "discrete files have one column, got {}",
                self.rows.ncols()
            )));
        }
        let delays = self.rows.column(0).iter().map(|&v| v as i64).collect();
        DiscreteDelaySequence::new(delays, self.window())
    }

    pub fn into_activation(&self) -> Result<ActivationSequence> {
        self.expect_kind(FileKind::Activation)?;
        ActivationSequence::new(self.rows.clone(), ActivationSource::AudioVisual)
    }

    /// Raster code grid; every code must be below `k`.
    pub fn into_codes(&self, k: usize) -> Result<Array2<u8>> {
        self.expect_kind(FileKind::Raster)?;
        let mut codes = Array2::<u8>::zeros(self.rows.raw_dim());
        for ((i, j), &v) in self.rows.indexed_iter() {
            let c = v as usize;
            if c >= k {
                return Err(Error::CodeOutOfRange { row: i, col: j, code: c, k });
            }
            codes[[i, j]] = c as u8;
        }
        Ok(codes)
    }

    fn expect_kind(&self, want: FileKind) -> Result<()> {
        if self.kind != want {
            return Err(Error::KindMismatch {
                expected: want.as_str().into(),
                got: self.kind.as_str().into(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "# kind={}", self.kind.as_str())?;
        writeln!(w, "# tau={}", self.tau)?;
        writeln!(w, "# fps={}", self.fps)?;
        writeln!(w, "# dim={}", self.dim())?;
        let integer = self.kind.integer_payload();
        for row in self.rows.axis_iter(Axis(0)) {
            let mut first = true;
            for &v in row.iter() {
                if !first {
                    write!(w, ",")?;
                }
                first = false;
                if integer {
                    write!(w, "{}", v as i64)?;
                } else {
                    write!(w, "{v:.8e}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let reader = BufReader::new(file);
        Self::read_from(reader, &path.display().to_string())
    }

    fn read_from(reader: impl BufRead, path: &str) -> Result<Self> {
        let malformed = |reason: &str| Error::MalformedFile {
            path: path.to_string(),
            reason: reason.to_string(),
        };
        let mut lines = reader.lines();
        let magic = lines
            .next()
            .ok_or_else(|| malformed("empty file"))?
            .map_err(|e| Error::io(format!("reading {path}"), e))?;
        if magic != MAGIC {
            return Err(malformed(&format!("expected `{MAGIC}` header, got `{magic}`")));
        }
        let mut kind: Option<FileKind> = None;
        let mut tau: Option<usize> = None;
        let mut fps: Option<u32> = None;
        let mut dim: Option<usize> = None;
        let mut data: Vec<f64> = Vec::new();
        let mut rows = 0usize;
        for line in lines {
            let line = line.map_err(|e| Error::io(format!("reading {path}"), e))?;
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, value) = rest
                    .split_once('=')
                    .ok_or_else(|| malformed(&format!("bad header line `{line}`")))?;
                match key {
                    "kind" => kind = Some(value.parse()?),
                    "tau" => {
                        tau = Some(value.parse().map_err(|_| malformed("bad tau"))?);
                    }
                    "fps" => {
                        fps = Some(value.parse().map_err(|_| malformed("bad fps"))?);
                    }
                    "dim" => {
                        dim = Some(value.parse().map_err(|_| malformed("bad dim"))?);
                    }
                    other => return Err(malformed(&format!("unknown header key `{other}`"))),
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let dim = dim.ok_or_else(|| malformed("data before dim header"))?;
            let mut width = 0usize;
            for piece in line.split(',') {
                let v: f64 = piece
                    .parse()
                    .map_err(|_| malformed(&format!("bad value `{piece}` in row {rows}")))?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: rows, col: width, value: v });
                }
                data.push(v);
                width += 1;
            }
            if width != dim {
                return Err(malformed(&format!(
                    "row {rows} has {width} values, expected {dim}"
                )));
            }
            rows += 1;
        }
        let kind = kind.ok_or_else(|| malformed("missing kind header"))?;
        let tau = tau.ok_or_else(|| malformed("missing tau header"))?;
        let fps = fps.ok_or_else(|| malformed("missing fps header"))?;
        let dim = dim.ok_or_else(|| malformed("missing dim header"))?;
        if rows == 0 {
            return Err(malformed("no data rows"));
        }
        let rows_arr = Array2::from_shape_vec((rows, dim), data).expect("validated row widths");
        Ok(Self { kind, tau, fps, rows: rows_arr })
    }
}
