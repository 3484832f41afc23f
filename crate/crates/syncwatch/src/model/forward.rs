//! Batched forward and backward passes through the decoder.
//!
//! Sequences in a batch share one length; position-wise work runs on the
//! stacked `(B*T, d)` matrices, attention runs per sequence and head. The
//! causal mask is enforced by computing each row's softmax over its prefix
//! only and writing exact zeros elsewhere, which keeps later positions
//! bitwise-invisible to earlier ones.

use super::{ArParams, HeadKind};
use crate::error::{Error, Result};
use crate::features::{FeatureData, FeatureSequence};
use crate::numeric::{derive_seed, seeded_rng, Real};
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;
const TAG_DROPOUT: u64 = 0xD0;

/// Stacked batch input: `b` sequences of `t` positions each.
pub(crate) struct BatchInput<F> {
    pub data: InputData<F>,
    pub b: usize,
    pub t: usize,
}

pub(crate) enum InputData<F> {
    /// `(b*t, d_in)` feature rows.
    Dense(Array2<F>),
    /// `b*t` code indices in raster order.
    Codes(Vec<usize>),
}

impl<F: Real> BatchInput<F> {
    pub fn single_dense(x: Array2<F>) -> Self {
        let t = x.nrows();
        Self { data: InputData::Dense(x), b: 1, t }
    }

}

pub(crate) struct Cache<F: Real> {
    input: BatchInput<F>,
    proj: Array2<F>,
    emb_mask: Option<Array2<F>>,
    blocks: Vec<BlockCache<F>>,
    final_xhat: Array2<F>,
    final_inv: Array1<F>,
    final_out: Array2<F>,
}

struct BlockCache<F> {
    ln1_xhat: Array2<F>,
    ln1_inv: Array1<F>,
    ln1_out: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    att_probs: Array3<F>,
    att_mask: Option<Array3<F>>,
    o_concat: Array2<F>,
    attn_out_mask: Option<Array2<F>>,
    ln2_xhat: Array2<F>,
    ln2_inv: Array1<F>,
    ln2_out: Array2<F>,
    f1_pre: Array2<F>,
    f1_th: Array2<F>,
    f1_act: Array2<F>,
    ffn_mask: Option<Array2<F>>,
}

pub(crate) struct ForwardOutput<F: Real> {
    pub logits: Array2<F>,
    pub preds: Array2<F>,
    pub cache: Option<Cache<F>>,
}

fn layer_norm<F: Real>(
    x: &Array2<F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let (rows, n) = x.dim();
    let inv_n = F::from_f64(1.0 / n as f64);
    let eps = F::from_f64(LN_EPS);
    let mut xhat = x.clone();
    let mut out = Array2::<F>::zeros((rows, n));
    let mut inv = Array1::<F>::zeros(rows);
    let gs = gamma.as_slice().expect("contiguous gamma");
    let bs = beta.as_slice().expect("contiguous beta");
    let xh = xhat.as_slice_mut().expect("contiguous activations");
    let os = out.as_slice_mut().expect("contiguous output");
    for r in 0..rows {
        let row = &mut xh[r * n..(r + 1) * n];
        let mut mean = F::zero();
        for &v in row.iter() {
            mean += v;
        }
        mean *= inv_n;
        let mut var = F::zero();
        for v in row.iter_mut() {
            *v -= mean;
            var += *v * *v;
        }
        var *= inv_n;
        let istd = F::one() / (var + eps).sqrt();
        inv[r] = istd;
        let orow = &mut os[r * n..(r + 1) * n];
        for j in 0..n {
            row[j] *= istd;
            orow[j] = row[j] * gs[j] + bs[j];
        }
    }
    (out, xhat, inv)
}

/// Returns `dx`; accumulates `dgamma`, `dbeta`.
fn layer_norm_backward<F: Real>(
    dout: &Array2<F>,
    xhat: &Array2<F>,
    inv: &Array1<F>,
    gamma: &Array1<F>,
    dgamma: &mut Array1<F>,
    dbeta: &mut Array1<F>,
) -> Array2<F> {
    let (rows, n) = xhat.dim();
    let inv_n = F::from_f64(1.0 / n as f64);
    let mut dx = Array2::<F>::zeros((rows, n));
    let ds = dout.as_slice().expect("contiguous upstream grad");
    let xs = xhat.as_slice().expect("contiguous xhat");
    let dxs = dx.as_slice_mut().expect("contiguous dx");
    let gs = gamma.as_slice().expect("contiguous gamma");
    let dg = dgamma.as_slice_mut().expect("contiguous dgamma");
    let db = dbeta.as_slice_mut().expect("contiguous dbeta");
    for r in 0..rows {
        let drow = &ds[r * n..(r + 1) * n];
        let xrow = &xs[r * n..(r + 1) * n];
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for j in 0..n {
            let dxhat = drow[j] * gs[j];
            m1 += dxhat;
            m2 += dxhat * xrow[j];
            dg[j] += drow[j] * xrow[j];
            db[j] += drow[j];
        }
        m1 *= inv_n;
        m2 *= inv_n;
        let dxrow = &mut dxs[r * n..(r + 1) * n];
        let istd = inv[r];
        for j in 0..n {
            let dxhat = drow[j] * gs[j];
            dxrow[j] = istd * (dxhat - m1 - xrow[j] * m2);
        }
    }
    dx
}

fn linear<F: Real>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(&w.t());
    let n = y.ncols();
    let bs = b.as_slice().expect("contiguous bias");
    let ys = y.as_slice_mut().expect("contiguous output");
    for row in ys.chunks_exact_mut(n) {
        for j in 0..n {
            row[j] += bs[j];
        }
    }
    y
}

/// Returns `dx`; accumulates `dw`, `db`.
fn linear_backward<F: Real>(
    dy: &Array2<F>,
    x: &Array2<F>,
    w: &Array2<F>,
    dw: &mut Array2<F>,
    db: &mut Array1<F>,
) -> Array2<F> {
    *dw += &dy.t().dot(x);
    let n = dy.ncols();
    let ds = dy.as_slice().expect("contiguous dy");
    let dbs = db.as_slice_mut().expect("contiguous db");
    for row in ds.chunks_exact(n) {
        for j in 0..n {
            dbs[j] += row[j];
        }
    }
    dy.dot(w)
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044715;

/// Tanh-form GELU; returns the activation and caches tanh(u) for backward.
fn gelu_forward<F: Real>(pre: &Array2<F>) -> (Array2<F>, Array2<F>) {
    let c0 = F::from_f64(GELU_C0);
    let c1 = F::from_f64(GELU_C1);
    let half = F::from_f64(0.5);
    let mut act = Array2::<F>::zeros(pre.raw_dim());
    let mut tanh_u = Array2::<F>::zeros(pre.raw_dim());
    let ps = pre.as_slice().expect("contiguous pre-activation");
    let acts = act.as_slice_mut().expect("contiguous activation");
    let ths = tanh_u.as_slice_mut().expect("contiguous tanh cache");
    for i in 0..ps.len() {
        let x = ps[i];
        let th = (c0 * (x + c1 * x * x * x)).tanh();
        ths[i] = th;
        acts[i] = half * x * (F::one() + th);
    }
    (act, tanh_u)
}

/// GELU derivative from the cached tanh(u).
fn gelu_grad_cached<F: Real>(x: F, th: F) -> F {
    let c0 = F::from_f64(GELU_C0);
    let c1 = F::from_f64(GELU_C1);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * c0 * (F::one() + three * c1 * x * x)
}

fn dropout_fill<F: Real>(buf: &mut [F], rate: f64, rng: &mut ChaCha8Rng) {
    let keep = F::from_f64(1.0 / (1.0 - rate));
    let rate = rate as f32;
    for v in buf.iter_mut() {
        *v = if rng.gen::<f32>() < rate { F::zero() } else { keep };
    }
}

fn dropout_mask2<F: Real>(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    let mut m = Array2::<F>::zeros((rows, cols));
    dropout_fill(m.as_slice_mut().expect("contiguous mask"), rate, rng);
    m
}

fn dropout_mask3<F: Real>(
    d0: usize,
    d1: usize,
    d2: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Array3<F> {
    let mut m = Array3::<F>::zeros((d0, d1, d2));
    dropout_fill(m.as_slice_mut().expect("contiguous mask"), rate, rng);
    m
}

/// Softmax over the causal prefix `0..=i` of each attention row; columns past
/// the prefix are written as exact zeros so masked positions contribute
/// nothing, bitwise, to downstream sums.
fn causal_softmax_inplace<F: Real>(scores: &mut Array2<F>) {
    let t = scores.nrows();
    let s = scores.as_slice_mut().expect("contiguous scores");
    for i in 0..t {
        let row = &mut s[i * t..(i + 1) * t];
        let (prefix, masked) = row.split_at_mut(i + 1);
        let mut max = F::neg_infinity();
        for &v in prefix.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0f64;
        for v in prefix.iter_mut() {
            let e = (*v - max).exp();
            sum += e.into_f64();
            *v = e;
        }
        let inv = F::from_f64(1.0 / sum);
        for v in prefix.iter_mut() {
            *v *= inv;
        }
        for v in masked.iter_mut() {
            *v = F::zero();
        }
    }
}

pub(crate) fn forward_batch<F: Real>(
    params: &ArParams<F>,
    input: BatchInput<F>,
    train_mode: bool,
    seed: u64,
    want_cache: bool,
) -> Result<ForwardOutput<F>> {
    let cfg = &params.config;
    let (b, t) = (input.b, input.t);
    if t == 0 || b == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if t > cfg.n_max {
        return Err(Error::SequenceTooLong { len: t, max: cfg.n_max });
    }
    let l = b * t;
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let alpha = F::from_f64(1.0 / (dh as f64).sqrt());
    let dropping = train_mode && cfg.dropout_rate > 0.0;
    let mut rng = seeded_rng(derive_seed(seed, TAG_DROPOUT, 0));

    // Input projection / code embedding.
    let proj: Array2<F> = match &input.data {
        InputData::Dense(xs) => {
            if xs.nrows() != l {
                return Err(Error::DimensionMismatch(format!(
                    "stacked input has {} rows, expected {}",
                    xs.nrows(),
                    l
                )));
            }
            if xs.ncols() != cfg.d_in {
                return Err(Error::DimensionMismatch(format!(
                    "input width {} does not match d_in {}",
                    xs.ncols(),
                    cfg.d_in
                )));
            }
            linear(xs, &params.input_w, &params.input_b)
        }
        InputData::Codes(codes) => {
            if codes.len() != l {
                return Err(Error::DimensionMismatch(format!(
                    "code count {} does not match {}",
                    codes.len(),
                    l
                )));
            }
            let mut h = Array2::<F>::zeros((l, d));
            for (r, &c) in codes.iter().enumerate() {
                if c >= cfg.d_in {
                    // Backstop; callers validate against the grid shape.
                    return Err(Error::CodeOutOfRange { row: r, col: 0, code: c, k: cfg.d_in });
                }
                for j in 0..d {
                    h[[r, j]] = params.input_w[[j, c]] + params.input_b[j];
                }
            }
            h
        }
    };

    // Position 0 holds the start token; position p holds the projection of
    // element p-1. Learnable positional encodings added per sequence.
    let mut x = Array2::<F>::zeros((l, d));
    {
        let xs = x.as_slice_mut().expect("contiguous embeddings");
        let ps = proj.as_slice().expect("contiguous projections");
        let pe = params.pos_enc.as_slice().expect("contiguous positional encodings");
        let start = params.start_token.as_slice().expect("contiguous start token");
        for bi in 0..b {
            let base = bi * t;
            let row = &mut xs[base * d..(base + 1) * d];
            for j in 0..d {
                row[j] = start[j] + pe[j];
            }
            for p in 1..t {
                let row = &mut xs[(base + p) * d..(base + p + 1) * d];
                let src = &ps[(base + p - 1) * d..(base + p) * d];
                let pos = &pe[p * d..(p + 1) * d];
                for j in 0..d {
                    row[j] = src[j] + pos[j];
                }
            }
        }
    }

    let emb_mask = if dropping {
        let m = dropout_mask2::<F>(l, d, cfg.dropout_rate, &mut rng);
        x = &x * &m;
        Some(m)
    } else {
        None
    };

    let mut blocks_cache: Vec<BlockCache<F>> = Vec::with_capacity(cfg.n_blocks);

    for block in &params.blocks {
        let (a, ln1_xhat, ln1_inv) = layer_norm(&x, &block.ln1_gamma, &block.ln1_beta);
        let q = linear(&a, &block.wq, &block.bq);
        let k = linear(&a, &block.wk, &block.bk);
        let v = linear(&a, &block.wv, &block.bv);

        let att_mask = if dropping {
            Some(dropout_mask3::<F>(b * heads, t, t, cfg.dropout_rate, &mut rng))
        } else {
            None
        };

        let mut att_probs = Array3::<F>::zeros((b * heads, t, t));
        let mut o_concat = Array2::<F>::zeros((l, d));
        for bi in 0..b {
            let rows = bi * t..(bi + 1) * t;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|s| s * alpha);
                causal_softmax_inplace(&mut scores);
                att_probs.slice_mut(s![bi * heads + h, .., ..]).assign(&scores);
                if let Some(mask) = &att_mask {
                    scores = &scores * &mask.slice(s![bi * heads + h, .., ..]);
                }
                let oh = scores.dot(&vh);
                o_concat.slice_mut(s![rows.clone(), cols]).assign(&oh);
            }
        }

        let mut attn_out = linear(&o_concat, &block.wo, &block.bo);
        let attn_out_mask = if dropping {
            let m = dropout_mask2::<F>(l, d, cfg.dropout_rate, &mut rng);
            attn_out = &attn_out * &m;
            Some(m)
        } else {
            None
        };
        let x_mid = &x + &attn_out;

        let (ln2_out, ln2_xhat, ln2_inv) = layer_norm(&x_mid, &block.ln2_gamma, &block.ln2_beta);
        let f1_pre = linear(&ln2_out, &block.w1, &block.b1);
        let (f1_act, f1_th) = gelu_forward(&f1_pre);
        let mut f2 = linear(&f1_act, &block.w2, &block.b2);
        let ffn_mask = if dropping {
            let m = dropout_mask2::<F>(l, d, cfg.dropout_rate, &mut rng);
            f2 = &f2 * &m;
            Some(m)
        } else {
            None
        };
        let x_next = &x_mid + &f2;

        blocks_cache.push(BlockCache {
            ln1_xhat,
            ln1_inv,
            ln1_out: a,
            q,
            k,
            v,
            att_probs,
            att_mask,
            o_concat,
            attn_out_mask,
            ln2_xhat,
            ln2_inv,
            ln2_out,
            f1_pre,
            f1_th,
            f1_act,
            ffn_mask,
        });
        x = x_next;
    }

    let (final_out, final_xhat, final_inv) =
        layer_norm(&x, &params.final_gamma, &params.final_beta);
    let logits = linear(&final_out, &params.output_w, &params.output_b);

    let mut preds = logits.clone();
    match cfg.head {
        HeadKind::Softmax | HeadKind::RasterCodebook => {
            for mut row in preds.axis_iter_mut(Axis(0)) {
                crate::numeric::softmax_inplace(row.view_mut());
            }
        }
        HeadKind::Sigmoid => {
            preds.mapv_inplace(|z| F::one() / (F::one() + (-z).exp()));
        }
        HeadKind::Linear => {}
    }

    let cache = want_cache.then(|| Cache {
        input,
        proj,
        emb_mask,
        blocks: blocks_cache,
        final_xhat,
        final_inv,
        final_out,
    });

    Ok(ForwardOutput { logits, preds, cache })
}

/// Backpropagates `dlogits` through the cached forward pass; returns
/// parameter gradients in an [`ArParams`]-shaped container.
pub(crate) fn backward_batch<F: Real>(
    params: &ArParams<F>,
    cache: &Cache<F>,
    dlogits: &Array2<F>,
) -> ArParams<F> {
    let cfg = &params.config;
    let (b, t) = (cache.input.b, cache.input.t);
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let alpha = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut g = params.zeros_like();

    // Output projection and final norm.
    let dfinal_out =
        linear_backward(dlogits, &cache.final_out, &params.output_w, &mut g.output_w, &mut g.output_b);
    let mut dx = layer_norm_backward(
        &dfinal_out,
        &cache.final_xhat,
        &cache.final_inv,
        &params.final_gamma,
        &mut g.final_gamma,
        &mut g.final_beta,
    );

    for (bi_rev, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gb = &mut g.blocks[bi_rev];

        // Feed-forward sublayer. Residual: dx flows through unchanged.
        let mut df2 = dx.clone();
        if let Some(m) = &bc.ffn_mask {
            df2 = &df2 * m;
        }
        let df1_act = linear_backward(&df2, &bc.f1_act, &block.w2, &mut gb.w2, &mut gb.b2);
        let mut df1_pre = df1_act;
        {
            let d = df1_pre.as_slice_mut().expect("contiguous df1");
            let xs = bc.f1_pre.as_slice().expect("contiguous f1 pre");
            let ths = bc.f1_th.as_slice().expect("contiguous f1 tanh");
            for i in 0..d.len() {
                d[i] *= gelu_grad_cached(xs[i], ths[i]);
            }
        }
        let dln2_out = linear_backward(&df1_pre, &bc.ln2_out, &block.w1, &mut gb.w1, &mut gb.b1);
        let dx_mid_part = layer_norm_backward(
            &dln2_out,
            &bc.ln2_xhat,
            &bc.ln2_inv,
            &block.ln2_gamma,
            &mut gb.ln2_gamma,
            &mut gb.ln2_beta,
        );
        dx = &dx + &dx_mid_part;

        // Attention sublayer.
        let mut dattn_out = dx.clone();
        if let Some(m) = &bc.attn_out_mask {
            dattn_out = &dattn_out * m;
        }
        let do_concat =
            linear_backward(&dattn_out, &bc.o_concat, &block.wo, &mut gb.wo, &mut gb.bo);

        let mut dq = Array2::<F>::zeros(bc.q.raw_dim());
        let mut dk = Array2::<F>::zeros(bc.k.raw_dim());
        let mut dv = Array2::<F>::zeros(bc.v.raw_dim());
        for bi in 0..b {
            let rows = bi * t..(bi + 1) * t;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let probs = bc.att_probs.slice(s![bi * heads + h, .., ..]);
                let doh = do_concat.slice(s![rows.clone(), cols.clone()]);
                let vh = bc.v.slice(s![rows.clone(), cols.clone()]);
                let qh = bc.q.slice(s![rows.clone(), cols.clone()]);
                let kh = bc.k.slice(s![rows.clone(), cols.clone()]);

                // Post-dropout probabilities as used in the forward pass.
                let mut dpd = doh.dot(&vh.t());
                match &bc.att_mask {
                    Some(m) => {
                        let mask = m.slice(s![bi * heads + h, .., ..]);
                        let pd = &probs.to_owned() * &mask;
                        dv.slice_mut(s![rows.clone(), cols.clone()])
                            .assign(&pd.t().dot(&doh));
                        dpd = &dpd * &mask;
                    }
                    None => {
                        dv.slice_mut(s![rows.clone(), cols.clone()])
                            .assign(&probs.t().dot(&doh));
                    }
                }
                // Softmax backward row-wise; masked entries have prob 0 and drop out.
                let mut ds = dpd;
                {
                    let dss = ds.as_slice_mut().expect("contiguous ds");
                    let pr = probs.to_slice().expect("contiguous probs");
                    for i in 0..t {
                        let drow = &mut dss[i * t..(i + 1) * t];
                        let prow = &pr[i * t..(i + 1) * t];
                        let mut rowdot = F::zero();
                        for j in 0..t {
                            rowdot += drow[j] * prow[j];
                        }
                        for j in 0..t {
                            drow[j] = prow[j] * (drow[j] - rowdot) * alpha;
                        }
                    }
                }
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }

        let da_q = linear_backward(&dq, &bc.ln1_out, &block.wq, &mut gb.wq, &mut gb.bq);
        let da_k = linear_backward(&dk, &bc.ln1_out, &block.wk, &mut gb.wk, &mut gb.bk);
        let da_v = linear_backward(&dv, &bc.ln1_out, &block.wv, &mut gb.wv, &mut gb.bv);
        let da = &(&da_q + &da_k) + &da_v;
        let dx_in_part = layer_norm_backward(
            &da,
            &bc.ln1_xhat,
            &bc.ln1_inv,
            &block.ln1_gamma,
            &mut gb.ln1_gamma,
            &mut gb.ln1_beta,
        );
        dx = &dx + &dx_in_part;
    }

    // Embedding assembly backward.
    if let Some(m) = &cache.emb_mask {
        dx = &dx * m;
    }
    let d = cfg.d_model;
    let mut dproj = Array2::<F>::zeros(cache.proj.raw_dim());
    {
        let dxs = dx.as_slice().expect("contiguous dx");
        let dps = dproj.as_slice_mut().expect("contiguous dproj");
        let dstart = g.start_token.as_slice_mut().expect("contiguous start grad");
        let dpe = g.pos_enc.as_slice_mut().expect("contiguous pos grad");
        for bi in 0..b {
            let base = bi * t;
            let row = &dxs[base * d..(base + 1) * d];
            for j in 0..d {
                dstart[j] += row[j];
                dpe[j] += row[j];
            }
            for p in 1..t {
                let row = &dxs[(base + p) * d..(base + p + 1) * d];
                let pos = &mut dpe[p * d..(p + 1) * d];
                let dst = &mut dps[(base + p - 1) * d..(base + p) * d];
                for j in 0..d {
                    pos[j] += row[j];
                }
                dst.copy_from_slice(row);
            }
        }
    }
    match &cache.input.data {
        InputData::Dense(xs) => {
            g.input_w += &dproj.t().dot(xs);
            let n = dproj.ncols();
            let dbs = g.input_b.as_slice_mut().expect("contiguous input bias grad");
            for row in dproj.as_slice().expect("contiguous dproj").chunks_exact(n) {
                for j in 0..n {
                    dbs[j] += row[j];
                }
            }
        }
        InputData::Codes(codes) => {
            for (r, &c) in codes.iter().enumerate() {
                for j in 0..d {
                    g.input_w[[j, c]] += dproj[[r, j]];
                    g.input_b[j] += dproj[[r, j]];
                }
            }
        }
    }
    g
}

impl<F: Real> ArParams<F> {
    /// Per-frame predictions for one feature sequence under teacher forcing:
    /// row `i` is the model's estimate of frame `i` given the start token and
    /// frames `0..i`. Softmax rows are valid distributions; sigmoid entries
    /// lie in (0, 1). Dropout is active only in train mode, driven by `seed`.
    pub fn forward(&self, x: &FeatureSequence, train_mode: bool, seed: u64) -> Result<Array2<F>> {
        let dense = match &x.data {
            FeatureData::Dense(m) => m,
            FeatureData::Codes(_) => {
                return Err(Error::KindMismatch {
                    expected: "dense feature rows".into(),
                    got: "raster codes".into(),
                })
            }
        };
        let converted = dense.mapv(F::from_f64);
        let out = forward_batch(
            self,
            BatchInput::single_dense(converted),
            train_mode,
            seed,
            false,
        )?;
        Ok(out.preds)
    }

    /// Per-cell logits over codebook indices for a raster code grid, in
    /// frame-major raster order: output shape `(frames, window, k)`. Each
    /// cell's logits depend only on strictly earlier cells in that order.
    pub fn forward_raster(&self, x: &FeatureSequence) -> Result<Array3<F>> {
        if self.config.head != HeadKind::RasterCodebook {
            return Err(Error::InvalidConfig(
                "forward_raster requires the raster_codebook head".into(),
            ));
        }
        let codes = match &x.data {
            FeatureData::Codes(m) => m,
            FeatureData::Dense(_) => {
                return Err(Error::KindMismatch {
                    expected: "raster codes".into(),
                    got: "dense feature rows".into(),
                })
            }
        };
        let (frames, w) = (codes.nrows(), codes.ncols());
        for ((i, q), &c) in codes.indexed_iter() {
            if c as usize >= self.config.raster_k {
                return Err(Error::CodeOutOfRange {
                    row: i,
                    col: q,
                    code: c as usize,
                    k: self.config.raster_k,
                });
            }
        }
        let flat: Vec<usize> = codes.iter().map(|&c| c as usize).collect();
        let out = forward_batch(
            self,
            BatchInput { data: InputData::Codes(flat), b: 1, t: frames * w },
            false,
            0,
            false,
        )?;
        let k = self.config.d_out;
        Ok(out
            .logits
            .into_shape_with_order((frames, w, k))
            .expect("logit rows match cell count"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DelayWindowConfig, FeatureKind};
    use crate::model::ArConfig;
    use rand::Rng;

    fn cfg(d_in: usize, d_out: usize, head: HeadKind, n_max: usize) -> ArConfig {
        ArConfig {
            n_blocks: 2,
            n_heads: 2,
            d_model: 16,
            d_in,
            d_out,
            n_max,
            dropout_rate: 0.1,
            head,
            raster_k: if head == HeadKind::RasterCodebook { d_in } else { 8 },
        }
    }

    fn feature(kind: FeatureKind, data: Array2<f64>) -> FeatureSequence {
        FeatureSequence {
            kind,
            data: FeatureData::Dense(data),
            config: DelayWindowConfig::default(),
        }
    }

    fn random_dist_rows(t: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::numeric::seeded_rng(seed);
        let mut rows = Array2::<f64>::zeros((t, w));
        for mut row in rows.axis_iter_mut(Axis(0)) {
            let logits: Vec<f64> = (0..w).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let probs = crate::numeric::softmax(&logits);
            for (v, &p) in row.iter_mut().zip(probs.iter()) {
                *v = p;
            }
        }
        rows
    }

    fn zero_params(cfg: ArConfig) -> ArParams<f64> {
        let mut p: ArParams<f64> = ArParams::init(cfg, 0).unwrap();
        for (_, mut t) in p.tensors_mut() {
            t.fill(0.0);
        }
        // Restore layer-norm scales so the forward pass stays well-defined.
        p.final_gamma.fill(1.0);
        for b in &mut p.blocks {
            b.ln1_gamma.fill(1.0);
            b.ln2_gamma.fill(1.0);
        }
        p
    }

    #[test]
    fn zero_weights_softmax_head_is_uniform() {
        let w = 31;
        let params = zero_params(cfg(w, w, HeadKind::Softmax, 50));
        let x = feature(FeatureKind::Distribution, random_dist_rows(5, w, 1));
        let preds = params.forward(&x, false, 0).unwrap();
        for &p in preds.iter() {
            assert!((p - 1.0 / w as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_emits_one_row_per_frame() {
        let params: ArParams<f64> = ArParams::init(cfg(7, 7, HeadKind::Softmax, 20), 3).unwrap();
        for t in [1usize, 2, 19, 20] {
            let x = feature(FeatureKind::Distribution, random_dist_rows(t, 7, t as u64));
            let preds = params.forward(&x, false, 0).unwrap();
            assert_eq!(preds.nrows(), t);
        }
    }

    #[test]
    fn sequence_longer_than_n_max_rejected() {
        let params: ArParams<f64> = ArParams::init(cfg(7, 7, HeadKind::Softmax, 4), 3).unwrap();
        let x = feature(FeatureKind::Distribution, random_dist_rows(5, 7, 9));
        assert!(matches!(
            params.forward(&x, false, 0),
            Err(Error::SequenceTooLong { len: 5, max: 4 })
        ));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let params: ArParams<f64> = ArParams::init(cfg(9, 9, HeadKind::Softmax, 12), 5).unwrap();
        let x = feature(FeatureKind::Distribution, random_dist_rows(12, 9, 2));
        let preds = params.forward(&x, false, 0).unwrap();
        for row in preds.axis_iter(Axis(0)) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn sigmoid_head_outputs_in_unit_interval() {
        let params: ArParams<f64> = ArParams::init(cfg(9, 9, HeadKind::Sigmoid, 12), 5).unwrap();
        let x = feature(FeatureKind::Distribution, random_dist_rows(6, 9, 2));
        let preds = params.forward(&x, false, 0).unwrap();
        assert!(preds.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn eval_forward_ignores_seed_and_is_deterministic() {
        let params: ArParams<f64> = ArParams::init(cfg(5, 5, HeadKind::Softmax, 8), 7).unwrap();
        let x = feature(FeatureKind::Distribution, random_dist_rows(6, 5, 3));
        let a = params.forward(&x, false, 1).unwrap();
        let b = params.forward(&x, false, 999).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_forward_is_seeded_and_reproducible() {
        let params: ArParams<f64> = ArParams::init(cfg(5, 5, HeadKind::Softmax, 8), 7).unwrap();
        let x = feature(FeatureKind::Distribution, random_dist_rows(6, 5, 3));
        let a = params.forward(&x, true, 42).unwrap();
        let b = params.forward(&x, true, 42).unwrap();
        let c = params.forward(&x, true, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn causality_is_bitwise_under_perturbation() {
        let params: ArParams<f64> = ArParams::init(cfg(9, 9, HeadKind::Softmax, 16), 11).unwrap();
        let base = random_dist_rows(10, 9, 4);
        let base_preds = params
            .forward(&feature(FeatureKind::Distribution, base.clone()), false, 0)
            .unwrap();
        let mut rng = crate::numeric::seeded_rng(99);
        for _ in 0..20 {
            // Perturb frame k (0-indexed); prediction rows 0..=k must not move.
            let k = rng.gen_range(0..10);
            let mut perturbed = base.clone();
            perturbed[[k, rng.gen_range(0..9)]] += rng.gen_range(0.1..1.0);
            let preds = params
                .forward(&feature(FeatureKind::Distribution, perturbed), false, 0)
                .unwrap();
            for i in 0..=k {
                for j in 0..9 {
                    assert_eq!(
                        preds[[i, j]].to_bits(),
                        base_preds[[i, j]].to_bits(),
                        "row {i} changed after perturbing frame {k}"
                    );
                }
            }
        }
    }

    fn raster_feature(codes: Array2<u8>) -> FeatureSequence {
        FeatureSequence {
            kind: FeatureKind::RasterCodes,
            data: FeatureData::Codes(codes),
            config: DelayWindowConfig { tau: 1, fps: 25 },
        }
    }

    #[test]
    fn raster_logit_grid_shape() {
        let k = 4;
        let params: ArParams<f64> =
            ArParams::init(cfg(k, k, HeadKind::RasterCodebook, 12), 2).unwrap();
        let codes = Array2::from_shape_fn((3, 3), |(i, j)| ((i + j) % k) as u8);
        let logits = params.forward_raster(&raster_feature(codes)).unwrap();
        assert_eq!(logits.dim(), (3, 3, k));
    }

    #[test]
    fn raster_zero_weights_uniform_after_softmax() {
        let k = 4;
        let params = zero_params(cfg(k, k, HeadKind::RasterCodebook, 12));
        let codes = Array2::from_shape_fn((2, 3), |(i, j)| ((i * j) % k) as u8);
        let logits = params.forward_raster(&raster_feature(codes)).unwrap();
        for i in 0..2 {
            for q in 0..3 {
                let cell = logits.slice(s![i, q, ..]);
                let probs = crate::numeric::softmax(cell.as_slice().unwrap());
                for &p in probs.iter() {
                    assert!((p - 1.0 / k as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn raster_causality_in_flattened_order() {
        let k = 4;
        let (t, w) = (3usize, 3usize);
        let params: ArParams<f64> =
            ArParams::init(cfg(k, k, HeadKind::RasterCodebook, 12), 6).unwrap();
        let base = Array2::from_shape_fn((t, w), |(i, j)| ((i + 2 * j) % k) as u8);
        let base_logits = params.forward_raster(&raster_feature(base.clone())).unwrap();
        let mut rng = crate::numeric::seeded_rng(5);
        for _ in 0..15 {
            let (pi, pq) = (rng.gen_range(0..t), rng.gen_range(0..w));
            let mut perturbed = base.clone();
            perturbed[[pi, pq]] = (perturbed[[pi, pq]] + 1) % k as u8;
            let logits = params.forward_raster(&raster_feature(perturbed)).unwrap();
            let flat_pos = pi * w + pq;
            for i in 0..t {
                for q in 0..w {
                    if i * w + q > flat_pos {
                        continue;
                    }
                    for c in 0..k {
                        assert_eq!(
                            logits[[i, q, c]].to_bits(),
                            base_logits[[i, q, c]].to_bits(),
                            "cell ({i},{q}) changed after perturbing ({pi},{pq})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn raster_rejects_wrong_head() {
        let params: ArParams<f64> = ArParams::init(cfg(4, 4, HeadKind::Softmax, 12), 1).unwrap();
        let codes = Array2::zeros((2, 2));
        assert!(params.forward_raster(&raster_feature(codes)).is_err());
    }

    #[test]
    fn raster_rejects_code_outside_codebook() {
        let k = 4;
        let params: ArParams<f64> =
            ArParams::init(cfg(k, k, HeadKind::RasterCodebook, 12), 1).unwrap();
        let mut codes = Array2::zeros((2, 2));
        codes[[1, 1]] = 7;
        assert!(matches!(
            params.forward_raster(&raster_feature(codes)),
            Err(Error::CodeOutOfRange { code: 7, .. })
        ));
    }
}
