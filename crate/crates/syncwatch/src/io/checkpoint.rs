//! Model checkpoint: a one-line JSON header followed by a little-endian
//! single-precision payload of all tensors concatenated in index order.
//! Saving a loaded checkpoint reproduces the file byte for byte.

use crate::error::{Error, Result};
use crate::features::{Codebook, FeatureKind, PcaModel};
use crate::model::{ArConfig, ArParams};
use crate::training::TrainConfig;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CKPT_FORMAT: &str = "syncwatch-ckpt-1";

/// How the checkpointed model ingests files at scoring time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub set: FeatureKind,
    pub tau: usize,
    pub fps: u32,
    /// Frames per scoring window (the model's context in frames).
    pub window_frames: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    offset_elems: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    model_cfg: ArConfig,
    train_cfg: TrainConfig,
    feature: FeatureSpec,
    tensors: Vec<TensorMeta>,
}

/// Everything needed to score with a trained model: parameters plus the
/// fitted feature transforms that produced its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub params: ArParams<f32>,
    pub train_cfg: TrainConfig,
    pub feature: FeatureSpec,
    pub pca: Option<PcaModel>,
    pub codebook: Option<Codebook>,
}

pub fn save_checkpoint(path: &Path, bundle: &CheckpointBundle) -> Result<()> {
    let mut tensors: Vec<TensorMeta> = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    for (name, view) in bundle.params.tensors() {
        tensors.push(TensorMeta {
            name,
            shape: view.shape().to_vec(),
            offset_elems: payload.len(),
        });
        payload.extend(view.iter().copied());
    }
    if let Some(pca) = &bundle.pca {
        push_tensor(&mut tensors, &mut payload, "pca.mean", &[pca.mean().len()], pca.mean().iter());
        push_tensor(
            &mut tensors,
            &mut payload,
            "pca.components",
            &[pca.components().nrows(), pca.components().ncols()],
            pca.components().iter(),
        );
        push_tensor(
            &mut tensors,
            &mut payload,
            "pca.eigenvalues",
            &[pca.eigenvalues().len()],
            pca.eigenvalues().iter(),
        );
    }
    if let Some(cb) = &bundle.codebook {
        push_tensor(
            &mut tensors,
            &mut payload,
            "codebook.centers",
            &[cb.k()],
            cb.centers().iter(),
        );
    }

    let header = CheckpointHeader {
        format: CKPT_FORMAT.to_string(),
        model_cfg: bundle.params.config.clone(),
        train_cfg: bundle.train_cfg.clone(),
        feature: bundle.feature.clone(),
        tensors,
    };
    let header_json = serde_json::to_string(&header).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;

    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(header_json.as_bytes())?;
        w.write_all(b"\n")?;
        for v in &payload {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn push_tensor<'a>(
    tensors: &mut Vec<TensorMeta>,
    payload: &mut Vec<f32>,
    name: &str,
    shape: &[usize],
    values: impl Iterator<Item = &'a f64>,
) {
    tensors.push(TensorMeta {
        name: name.to_string(),
        shape: shape.to_vec(),
        offset_elems: payload.len(),
    });
    payload.extend(values.map(|&v| v as f32));
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointBundle> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let malformed = |reason: String| Error::MalformedFile {
        path: path.display().to_string(),
        reason,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| malformed(format!("bad header: {e}")))?;
    if header.format != CKPT_FORMAT {
        return Err(malformed(format!(
            "format `{}` is not `{CKPT_FORMAT}`",
            header.format
        )));
    }
    let body = &bytes[newline + 1..];
    let total_elems: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if body.len() != total_elems * 4 {
        return Err(malformed(format!(
            "payload is {} bytes, expected {}",
            body.len(),
            total_elems * 4
        )));
    }
    let mut payload = Vec::with_capacity(total_elems);
    let mut cursor = body;
    for _ in 0..total_elems {
        let mut buf = [0u8; 4];
        cursor.read_exact(&mut buf).expect("length checked");
        payload.push(f32::from_le_bytes(buf));
    }

    let tensor_values = |meta: &TensorMeta| -> &[f32] {
        let n: usize = meta.shape.iter().product();
        &payload[meta.offset_elems..meta.offset_elems + n]
    };
    for meta in &header.tensors {
        let n: usize = meta.shape.iter().product();
        if meta.offset_elems + n > payload.len() {
            return Err(malformed(format!("tensor {} overruns payload", meta.name)));
        }
    }

    let mut params: ArParams<f32> = ArParams::init(header.model_cfg.clone(), 0)?;
    {
        let mut expected = params.tensors_mut();
        for (i, (name, view)) in expected.iter_mut().enumerate() {
            let meta = header
                .tensors
                .get(i)
                .ok_or_else(|| malformed(format!("missing tensor {name}")))?;
            if &meta.name != name {
                return Err(malformed(format!(
                    "tensor {i} is `{}`, expected `{name}`",
                    meta.name
                )));
            }
            if meta.shape != view.shape() {
                return Err(malformed(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    meta.shape,
                    view.shape()
                )));
            }
            for (dst, &src) in view.iter_mut().zip(tensor_values(meta)) {
                *dst = src;
            }
        }
    }

    let find = |name: &str| header.tensors.iter().find(|t| t.name == name);
    let pca = match (find("pca.mean"), find("pca.components"), find("pca.eigenvalues")) {
        (Some(mean), Some(comp), Some(eig)) => {
            let mean_arr =
                Array1::from_iter(tensor_values(mean).iter().map(|&v| f64::from(v)));
            let comp_arr = Array2::from_shape_vec(
                (comp.shape[0], comp.shape[1]),
                tensor_values(comp).iter().map(|&v| f64::from(v)).collect(),
            )
            .expect("shape checked");
            let eig_arr = Array1::from_iter(tensor_values(eig).iter().map(|&v| f64::from(v)));
            Some(PcaModel::new(mean_arr, comp_arr, eig_arr)?)
        }
        (None, None, None) => None,
        _ => return Err(malformed("incomplete PCA tensors".into())),
    };
    let codebook = match find("codebook.centers") {
        Some(meta) => Some(Codebook::new(
            tensor_values(meta).iter().map(|&v| f64::from(v)).collect(),
        )?),
        None => None,
    };

    Ok(CheckpointBundle {
        params,
        train_cfg: header.train_cfg,
        feature: header.feature,
        pca,
        codebook,
    })
}
