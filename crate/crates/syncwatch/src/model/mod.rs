//! Autoregressive Transformer decoder over synchronization feature sequences.
//!
//! Pre-layer-norm blocks, GELU feed-forward of width `4 * d_model`, learnable
//! positional encodings, a learned start token conditioning the first frame,
//! and one shared output projection. The raster variant runs the same decoder
//! over a flattened frame-by-delay code grid with code-embedding inputs.

mod forward;

pub(crate) use forward::{backward_batch, forward_batch, BatchInput, InputData};

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, seeded_rng, Real};
use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Output head of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Rows normalized to probability distributions.
    Softmax,
    /// Independent per-entry probabilities.
    Sigmoid,
    /// Raw regression outputs.
    Linear,
    /// Per-cell softmax over codebook indices (raster variant).
    RasterCodebook,
}

/// Decoder architecture and capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// Maximum sequence length in positions (frames, or cells for raster).
    pub n_max: usize,
    pub dropout_rate: f64,
    pub head: HeadKind,
    pub raster_k: usize,
}

impl ArConfig {
    /// Paper-scale defaults for a given input/output width.
    pub fn standard(d_in: usize, d_out: usize, head: HeadKind) -> Self {
        Self {
            n_blocks: 2,
            n_heads: 16,
            d_model: 256,
            d_in,
            d_out,
            n_max: 50,
            dropout_rate: 0.1,
            head,
            raster_k: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_max < 2 {
            return Err(Error::InvalidConfig(format!("n_max {} must be at least 2", self.n_max)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {} must be in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.n_blocks == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::InvalidConfig(
                "n_blocks, d_in and d_out must be positive".into(),
            ));
        }
        if self.head == HeadKind::RasterCodebook {
            if self.raster_k < 2 {
                return Err(Error::InvalidConfig(format!(
                    "raster codebook size {} must be at least 2",
                    self.raster_k
                )));
            }
            if self.d_in != self.raster_k || self.d_out != self.raster_k {
                return Err(Error::InvalidConfig(
                    "raster head requires d_in = d_out = raster_k".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}

/// One decoder block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<F: Real> {
    pub ln1_gamma: Array1<F>,
    pub ln1_beta: Array1<F>,
    pub wq: Array2<F>,
    pub bq: Array1<F>,
    pub wk: Array2<F>,
    pub bk: Array1<F>,
    pub wv: Array2<F>,
    pub bv: Array1<F>,
    pub wo: Array2<F>,
    pub bo: Array1<F>,
    pub ln2_gamma: Array1<F>,
    pub ln2_beta: Array1<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// All learnable weights of the decoder plus its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ArParams<F: Real> {
    pub input_w: Array2<F>,
    pub input_b: Array1<F>,
    pub start_token: Array1<F>,
    pub pos_enc: Array2<F>,
    pub blocks: Vec<BlockParams<F>>,
    pub final_gamma: Array1<F>,
    pub final_beta: Array1<F>,
    pub output_w: Array2<F>,
    pub output_b: Array1<F>,
    pub config: ArConfig,
}

const INIT_SD: f64 = 0.02;
const TAG_INIT: u64 = 0x1217;

impl<F: Real> ArParams<F> {
    /// Fresh parameters: weights i.i.d. normal(0, 0.02), biases zero,
    /// layer-norm scales one. Deterministic per seed.
    pub fn init(config: ArConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(derive_seed(seed, TAG_INIT, 0));
        let normal = Normal::new(0.0, INIT_SD).expect("valid init sd");
        let mut draw2 = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| F::from_f64(normal.sample(&mut rng)))
        };
        let d = config.d_model;
        let input_w = draw2(d, config.d_in);
        let start_token = draw2(1, d).row(0).to_owned();
        let pos_enc = draw2(config.n_max, d);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            blocks.push(BlockParams {
                ln1_gamma: Array1::from_elem(d, F::one()),
                ln1_beta: Array1::zeros(d),
                wq: draw2(d, d),
                bq: Array1::zeros(d),
                wk: draw2(d, d),
                bk: Array1::zeros(d),
                wv: draw2(d, d),
                bv: Array1::zeros(d),
                wo: draw2(d, d),
                bo: Array1::zeros(d),
                ln2_gamma: Array1::from_elem(d, F::one()),
                ln2_beta: Array1::zeros(d),
                w1: draw2(config.d_ff(), d),
                b1: Array1::zeros(config.d_ff()),
                w2: draw2(d, config.d_ff()),
                b2: Array1::zeros(d),
            });
        }
        let final_gamma = Array1::from_elem(d, F::one());
        let final_beta = Array1::zeros(d);
        let output_w = draw2(config.d_out, d);
        let output_b = Array1::zeros(config.d_out);
        Ok(Self {
            input_w,
            input_b: Array1::zeros(d),
            start_token,
            pos_enc,
            blocks,
            final_gamma,
            final_beta,
            output_w,
            output_b,
            config,
        })
    }

    /// Same shapes, all zeros. Gradient and optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    /// Element-wise cast between precisions.
    pub fn cast<G: Real>(&self) -> ArParams<G> {
        let conv1 = |a: &Array1<F>| a.mapv(|v| G::from_f64(v.into_f64()));
        let conv2 = |a: &Array2<F>| a.mapv(|v| G::from_f64(v.into_f64()));
        ArParams {
            input_w: conv2(&self.input_w),
            input_b: conv1(&self.input_b),
            start_token: conv1(&self.start_token),
            pos_enc: conv2(&self.pos_enc),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln1_gamma: conv1(&b.ln1_gamma),
                    ln1_beta: conv1(&b.ln1_beta),
                    wq: conv2(&b.wq),
                    bq: conv1(&b.bq),
                    wk: conv2(&b.wk),
                    bk: conv1(&b.bk),
                    wv: conv2(&b.wv),
                    bv: conv1(&b.bv),
                    wo: conv2(&b.wo),
                    bo: conv1(&b.bo),
                    ln2_gamma: conv1(&b.ln2_gamma),
                    ln2_beta: conv1(&b.ln2_beta),
                    w1: conv2(&b.w1),
                    b1: conv1(&b.b1),
                    w2: conv2(&b.w2),
                    b2: conv1(&b.b2),
                })
                .collect(),
            final_gamma: conv1(&self.final_gamma),
            final_beta: conv1(&self.final_beta),
            output_w: conv2(&self.output_w),
            output_b: conv1(&self.output_b),
            config: self.config.clone(),
        }
    }

    /// Named tensors in canonical order (the checkpoint and optimizer order).
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out: Vec<(String, ArrayViewD<'_, F>)> = vec![
            ("input_proj.weight".into(), self.input_w.view().into_dyn()),
            ("input_proj.bias".into(), self.input_b.view().into_dyn()),
            ("start_token".into(), self.start_token.view().into_dyn()),
            ("pos_enc".into(), self.pos_enc.view().into_dyn()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln1.gamma"), b.ln1_gamma.view().into_dyn()));
            out.push((format!("block{i}.ln1.beta"), b.ln1_beta.view().into_dyn()));
            out.push((format!("block{i}.attn.q.weight"), b.wq.view().into_dyn()));
            out.push((format!("block{i}.attn.q.bias"), b.bq.view().into_dyn()));
            out.push((format!("block{i}.attn.k.weight"), b.wk.view().into_dyn()));
            out.push((format!("block{i}.attn.k.bias"), b.bk.view().into_dyn()));
            out.push((format!("block{i}.attn.v.weight"), b.wv.view().into_dyn()));
            out.push((format!("block{i}.attn.v.bias"), b.bv.view().into_dyn()));
            out.push((format!("block{i}.attn.out.weight"), b.wo.view().into_dyn()));
            out.push((format!("block{i}.attn.out.bias"), b.bo.view().into_dyn()));
            out.push((format!("block{i}.ln2.gamma"), b.ln2_gamma.view().into_dyn()));
            out.push((format!("block{i}.ln2.beta"), b.ln2_beta.view().into_dyn()));
            out.push((format!("block{i}.ffn.in.weight"), b.w1.view().into_dyn()));
            out.push((format!("block{i}.ffn.in.bias"), b.b1.view().into_dyn()));
            out.push((format!("block{i}.ffn.out.weight"), b.w2.view().into_dyn()));
            out.push((format!("block{i}.ffn.out.bias"), b.b2.view().into_dyn()));
        }
        out.push(("final_norm.gamma".into(), self.final_gamma.view().into_dyn()));
        out.push(("final_norm.beta".into(), self.final_beta.view().into_dyn()));
        out.push(("output_proj.weight".into(), self.output_w.view().into_dyn()));
        out.push(("output_proj.bias".into(), self.output_b.view().into_dyn()));
        out
    }

    /// Mutable variant of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, F>)> = vec![
            ("input_proj.weight".into(), self.input_w.view_mut().into_dyn()),
            ("input_proj.bias".into(), self.input_b.view_mut().into_dyn()),
            ("start_token".into(), self.start_token.view_mut().into_dyn()),
            ("pos_enc".into(), self.pos_enc.view_mut().into_dyn()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.ln1.gamma"), b.ln1_gamma.view_mut().into_dyn()));
            out.push((format!("block{i}.ln1.beta"), b.ln1_beta.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.q.weight"), b.wq.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.q.bias"), b.bq.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.k.weight"), b.wk.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.k.bias"), b.bk.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.v.weight"), b.wv.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.v.bias"), b.bv.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.out.weight"), b.wo.view_mut().into_dyn()));
            out.push((format!("block{i}.attn.out.bias"), b.bo.view_mut().into_dyn()));
            out.push((format!("block{i}.ln2.gamma"), b.ln2_gamma.view_mut().into_dyn()));
            out.push((format!("block{i}.ln2.beta"), b.ln2_beta.view_mut().into_dyn()));
            out.push((format!("block{i}.ffn.in.weight"), b.w1.view_mut().into_dyn()));
            out.push((format!("block{i}.ffn.in.bias"), b.b1.view_mut().into_dyn()));
            out.push((format!("block{i}.ffn.out.weight"), b.w2.view_mut().into_dyn()));
            out.push((format!("block{i}.ffn.out.bias"), b.b2.view_mut().into_dyn()));
        }
        out.push(("final_norm.gamma".into(), self.final_gamma.view_mut().into_dyn()));
        out.push(("final_norm.beta".into(), self.final_beta.view_mut().into_dyn()));
        out.push(("output_proj.weight".into(), self.output_w.view_mut().into_dyn()));
        out.push(("output_proj.bias".into(), self.output_b.view_mut().into_dyn()));
        out
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
