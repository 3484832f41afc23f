//! Principal-component projection of activation features.

use crate::error::{Error, Result};
use crate::features::{ActivationSequence, DelayWindowConfig, FeatureData, FeatureKind, FeatureSequence};
use crate::linalg::symmetric_eigen;
use ndarray::{Array1, Array2, Axis};

/// Fitted principal-component model: frame-wise mean, top-D component rows
/// (orthonormal), and the matching eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    components: Array2<f64>,
    eigenvalues: Array1<f64>,
}

impl PcaModel {
    pub fn new(mean: Array1<f64>, components: Array2<f64>, eigenvalues: Array1<f64>) -> Result<Self> {
        if components.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "component width {} does not match mean length {}",
                components.ncols(),
                mean.len()
            )));
        }
        if components.nrows() > components.ncols() {
            return Err(Error::InvalidConfig(format!(
                "{} components exceed input dimension {}",
                components.nrows(),
                components.ncols()
            )));
        }
        // Orthonormality within 1e-6.
        for i in 0..components.nrows() {
            for j in i..components.nrows() {
                let dot = components.row(i).dot(&components.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::InvalidConfig(format!(
                        "component rows {i} and {j} are not orthonormal (dot {dot})"
                    )));
                }
            }
        }
        Ok(Self { mean, components, eigenvalues })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// Number of retained components.
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    /// Input dimensionality the model was fit on.
    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }
}

/// Fits a PCA model on the pooled frames of the given activation sequences.
///
/// Components are the top-D eigenvectors of the sample covariance, each row
/// sign-normalized so its largest-magnitude entry is positive.
pub fn pca_fit(acts: &[ActivationSequence], d: usize) -> Result<PcaModel> {
    if acts.is_empty() {
        return Err(Error::EmptyInput("no activation sequences to fit PCA on".into()));
    }
    let d_act = acts[0].dim();
    for a in acts {
        if a.dim() != d_act {
            return Err(Error::DimensionMismatch(format!(
                "activation dims differ: {} vs {}",
                a.dim(),
                d_act
            )));
        }
    }
    if d > d_act {
        return Err(Error::InvalidConfig(format!(
            "requested {d} components but activations have dimension {d_act}"
        )));
    }
    let total_frames: usize = acts.iter().map(|a| a.len()).sum();
    if total_frames < d {
        return Err(Error::InvalidConfig(format!(
            "need at least {d} frames to fit {d} components, got {total_frames}"
        )));
    }

    let mut mean = Array1::<f64>::zeros(d_act);
    for a in acts {
        mean += &a.values().sum_axis(Axis(0));
    }
    mean /= total_frames as f64;

    let mut cov = Array2::<f64>::zeros((d_act, d_act));
    for a in acts {
        let centered = a.values() - &mean;
        cov += &centered.t().dot(&centered);
    }
    let denom = if total_frames > 1 { (total_frames - 1) as f64 } else { 1.0 };
    cov /= denom;

    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov);
    let lambda_max = eigenvalues[0].max(0.0);
    let positive = eigenvalues
        .iter()
        .take_while(|&&l| l > lambda_max * 1e-9 && l > 0.0)
        .count();
    if positive < d {
        return Err(Error::RankDeficient { achievable: positive, requested: d });
    }

    let mut components = eigenvectors.slice(ndarray::s![..d, ..]).to_owned();
    for mut row in components.axis_iter_mut(Axis(0)) {
        let mut lead = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v.abs() > row[lead].abs() {
                lead = j;
            }
        }
        if row[lead] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }

    PcaModel::new(mean, components, eigenvalues.slice(ndarray::s![..d]).to_owned())
}

/// Projects activations onto the fitted components: `row = C (act - mean)`.
pub fn pca_project(
    model: &PcaModel,
    acts: &ActivationSequence,
    config: DelayWindowConfig,
) -> Result<FeatureSequence> {
    if acts.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "activation dimension {} does not match PCA input dimension {}",
            acts.dim(),
            model.input_dim()
        )));
    }
    let centered = acts.values() - model.mean();
    let projected = centered.dot(&model.components().t());
    Ok(FeatureSequence {
        kind: FeatureKind::ActivationPca,
        data: FeatureData::Dense(projected),
        config,
    })
}
