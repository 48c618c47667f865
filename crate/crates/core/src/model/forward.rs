//! Pre-norm transformer encoder: forward pass, losses and reverse-mode gradients.
//!
//! Each block computes `h += Attn(LN(h))` then `h += FFN(LN(h))`; a final
//! layer norm feeds the MLM projection (vocab logits) and the RTS projection
//! (one logit per position). Padding positions are never attended to.

use rayon::prelude::*;

use super::params::{Gradients, LayerNormParams, ModelParams, Tensor};
use crate::corruption::MaskOutcome;
use crate::data::Batch;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Which output heads to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub mlm: bool,
    pub rts: bool,
}

impl Heads {
    pub const MLM: Heads = Heads { mlm: true, rts: false };
    pub const RTS: Heads = Heads { mlm: false, rts: true };
    pub const BOTH: Heads = Heads { mlm: true, rts: true };
}

/// Loss positions and labels for one batch row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Targets {
    pub positions: Vec<usize>,
    pub labels: Vec<u32>,
}

impl From<&MaskOutcome> for Targets {
    fn from(o: &MaskOutcome) -> Self {
        Self {
            positions: o.loss_set.clone(),
            labels: o.labels.clone(),
        }
    }
}

struct LayerCache {
    x_in: Vec<f64>,
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]`, zero at padded keys.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) struct ExampleCache {
    ids: Vec<u32>,
    len: usize,
    layers: Vec<LayerCache>,
    ln_final: NormCache,
    z: Vec<f64>,
}

/// Logits for a batch, plus the activations needed for [`backward_from_output`].
pub struct ForwardOutput {
    pub batch_size: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    /// `[batch][position][vocab]`
    pub mlm_logits: Option<Vec<f64>>,
    /// `[batch][position]`
    pub rts_logits: Option<Vec<f64>>,
    caches: Vec<ExampleCache>,
}

impl ForwardOutput {
    pub fn mlm_row(&self, b: usize, pos: usize) -> Option<&[f64]> {
        let v = self.vocab_size;
        self.mlm_logits
            .as_ref()
            .map(|l| &l[(b * self.seq_len + pos) * v..(b * self.seq_len + pos + 1) * v])
    }

    pub fn rts_logit(&self, b: usize, pos: usize) -> Option<f64> {
        self.rts_logits.as_ref().map(|l| l[b * self.seq_len + pos])
    }
}

// y[rows x out] = x[rows x in] W[in x out] + b
fn linear(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut y = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        y.extend_from_slice(&b.data);
        let yr = &mut y[r * dout..(r + 1) * dout];
        for (i, &xi) in x[r * din..(r + 1) * din].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yj, &wij) in yr.iter_mut().zip(&w.data[i * dout..(i + 1) * dout]) {
                *yj += xi * wij;
            }
        }
    }
    y
}

// Accumulates dW, db and returns dx.
fn linear_backward(x: &[f64], dy: &[f64], rows: usize, w: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut dx = vec![0.0; rows * din];
    for r in 0..rows {
        let dyr = &dy[r * dout..(r + 1) * dout];
        if dyr.iter().all(|&g| g == 0.0) {
            continue;
        }
        for (dbj, &g) in db.data.iter_mut().zip(dyr) {
            *dbj += g;
        }
        let xr = &x[r * din..(r + 1) * din];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for i in 0..din {
            let wrow = &w.data[i * dout..(i + 1) * dout];
            let dwrow = &mut dw.data[i * dout..(i + 1) * dout];
            let mut acc = 0.0;
            for j in 0..dout {
                acc += dyr[j] * wrow[j];
                dwrow[j] += xr[i] * dyr[j];
            }
            dxr[i] = acc;
        }
    }
    dx
}

fn layer_norm(x: &[f64], rows: usize, p: &LayerNormParams) -> (Vec<f64>, NormCache) {
    let d = p.scale.len();
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * p.scale.data[i] + p.shift.data[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &[f64],
    rows: usize,
    cache: &NormCache,
    p: &LayerNormParams,
    g: &mut LayerNormParams,
) -> Vec<f64> {
    let d = p.scale.len();
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for i in 0..d {
            g.scale.data[i] += dyr[i] * xh[i];
            g.shift.data[i] += dyr[i];
            let dxh = dyr[i] * p.scale.data[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for i in 0..d {
            let dxh = dyr[i] * p.scale.data[i];
            dx[r * d + i] = cache.rstd[r] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

fn example_forward(
    p: &ModelParams,
    ids: &[u32],
    len: usize,
    heads: Heads,
) -> (ExampleCache, Option<Vec<f64>>, Option<Vec<f64>>) {
    let c = &p.config;
    let (s, d, nh, dh) = (ids.len(), c.d_model, c.n_heads, c.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; s * d];
    for (i, &id) in ids.iter().enumerate() {
        let te = &p.tok_emb.data[id as usize * d..(id as usize + 1) * d];
        let pe = &p.pos_emb.data[i * d..(i + 1) * d];
        for j in 0..d {
            x[i * d + j] = te[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let x_in = x.clone();
        let (a, ln1) = layer_norm(&x, s, &lp.ln_attn);
        let q = linear(&a, s, &lp.w_q, &lp.b_q);
        let k = linear(&a, s, &lp.w_k, &lp.b_k);
        let v = linear(&a, s, &lp.w_v, &lp.b_v);

        let mut probs = vec![0.0; nh * s * s];
        let mut ctx = vec![0.0; s * d];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..s {
                if len == 0 {
                    break;
                }
                let row = &mut probs[(h * s + i) * s..(h * s + i + 1) * s];
                let qi = &q[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for (j, rj) in row.iter_mut().enumerate().take(len) {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let sc = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    *rj = sc;
                    max = max.max(sc);
                }
                let mut sum = 0.0;
                for rj in row.iter_mut().take(len) {
                    *rj = (*rj - max).exp();
                    sum += *rj;
                }
                for (j, rj) in row.iter_mut().enumerate().take(len) {
                    *rj /= sum;
                    let vj = &v[j * d + off..j * d + off + dh];
                    let ci = &mut ctx[i * d + off..i * d + off + dh];
                    for t in 0..dh {
                        ci[t] += *rj * vj[t];
                    }
                }
            }
        }
        let o = linear(&ctx, s, &lp.w_o, &lp.b_o);
        for (xi, oi) in x.iter_mut().zip(&o) {
            *xi += oi;
        }

        let (b, ln2) = layer_norm(&x, s, &lp.ln_ff);
        let u = linear(&b, s, &lp.w_1, &lp.b_1);
        let g: Vec<f64> = u.iter().map(|&ui| gelu(ui)).collect();
        let f = linear(&g, s, &lp.w_2, &lp.b_2);
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi += fi;
        }
        layers.push(LayerCache {
            x_in,
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b,
            u,
            g,
        });
    }

    let (z, ln_final) = layer_norm(&x, s, &p.ln_final);
    let mlm = heads.mlm.then(|| mlm_projection(p, &z, s));
    let rts = heads.rts.then(|| {
        (0..s)
            .map(|i| {
                p.rts_b.data[0]
                    + z[i * d..(i + 1) * d]
                        .iter()
                        .zip(&p.rts_w.data)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    });
    let cache = ExampleCache {
        ids: ids.to_vec(),
        len,
        layers,
        ln_final,
        z,
    };
    (cache, mlm, rts)
}

fn mlm_projection(p: &ModelParams, z: &[f64], s: usize) -> Vec<f64> {
    let (d, v) = (p.config.d_model, p.config.vocab_size);
    if !p.config.tie_embeddings {
        return linear(z, s, &p.mlm_w, &p.mlm_b);
    }
    let mut y = Vec::with_capacity(s * v);
    for i in 0..s {
        let zi = &z[i * d..(i + 1) * d];
        for t in 0..v {
            let e = &p.tok_emb.data[t * d..(t + 1) * d];
            y.push(p.mlm_b.data[t] + zi.iter().zip(e).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    y
}

fn example_backward(
    p: &ModelParams,
    cache: &ExampleCache,
    dmlm: Option<&[f64]>,
    drts: Option<&[f64]>,
    grads: &mut Gradients,
) {
    let c = &p.config;
    let (s, d, nh, dh, v) = (cache.ids.len(), c.d_model, c.n_heads, c.head_dim(), c.vocab_size);
    let scale = 1.0 / (dh as f64).sqrt();
    let z = &cache.z;

    let mut dz = vec![0.0; s * d];
    if let Some(dl) = dmlm {
        if c.tie_embeddings {
            for i in 0..s {
                let dli = &dl[i * v..(i + 1) * v];
                if dli.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let zi = &z[i * d..(i + 1) * d];
                for t in 0..v {
                    let g = dli[t];
                    if g == 0.0 {
                        continue;
                    }
                    grads.mlm_b.data[t] += g;
                    for j in 0..d {
                        dz[i * d + j] += g * p.tok_emb.data[t * d + j];
                        grads.tok_emb.data[t * d + j] += g * zi[j];
                    }
                }
            }
        } else {
            let dzm = linear_backward(z, dl, s, &p.mlm_w, &mut grads.mlm_w, &mut grads.mlm_b);
            for (a, b) in dz.iter_mut().zip(&dzm) {
                *a += b;
            }
        }
    }
    if let Some(dr) = drts {
        for i in 0..s {
            let g = dr[i];
            if g == 0.0 {
                continue;
            }
            grads.rts_b.data[0] += g;
            for j in 0..d {
                grads.rts_w.data[j] += g * z[i * d + j];
                dz[i * d + j] += g * p.rts_w.data[j];
            }
        }
    }

    let mut dx = layer_norm_backward(&dz, s, &cache.ln_final, &p.ln_final, &mut grads.ln_final);

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &p.layers[l];
        let lg = &mut grads.layers[l];

        // Feed-forward sublayer.
        let dg = linear_backward(&lc.g, &dx, s, &lp.w_2, &mut lg.w_2, &mut lg.b_2);
        let du: Vec<f64> = dg.iter().zip(&lc.u).map(|(g, &u)| g * gelu_grad(u)).collect();
        let db = linear_backward(&lc.b, &du, s, &lp.w_1, &mut lg.w_1, &mut lg.b_1);
        let dxn = layer_norm_backward(&db, s, &lc.ln2, &lp.ln_ff, &mut lg.ln_ff);
        for (a, b) in dx.iter_mut().zip(&dxn) {
            *a += b;
        }

        // Attention sublayer.
        let dctx = linear_backward(&lc.ctx, &dx, s, &lp.w_o, &mut lg.w_o, &mut lg.b_o);
        let mut dq = vec![0.0; s * d];
        let mut dk = vec![0.0; s * d];
        let mut dv = vec![0.0; s * d];
        let len = cache.len;
        let mut dp = vec![0.0; len];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..s {
                if len == 0 {
                    break;
                }
                let pr = &lc.probs[(h * s + i) * s..(h * s + i) * s + len];
                let dci = &dctx[i * d + off..i * d + off + dh];
                let mut dot = 0.0;
                for j in 0..len {
                    let vj = &lc.v[j * d + off..j * d + off + dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    dot += pr[j] * dp[j];
                    for t in 0..dh {
                        dv[j * d + off + t] += pr[j] * dci[t];
                    }
                }
                for j in 0..len {
                    let ds = pr[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        dq[i * d + off + t] += ds * lc.k[j * d + off + t];
                        dk[j * d + off + t] += ds * lc.q[i * d + off + t];
                    }
                }
            }
        }
        let mut da = linear_backward(&lc.a, &dq, s, &lp.w_q, &mut lg.w_q, &mut lg.b_q);
        let dak = linear_backward(&lc.a, &dk, s, &lp.w_k, &mut lg.w_k, &mut lg.b_k);
        let dav = linear_backward(&lc.a, &dv, s, &lp.w_v, &mut lg.w_v, &mut lg.b_v);
        for ((a, b), c) in da.iter_mut().zip(&dak).zip(&dav) {
            *a += b + c;
        }
        let dxn = layer_norm_backward(&da, s, &lc.ln1, &lp.ln_attn, &mut lg.ln_attn);
        for (a, b) in dx.iter_mut().zip(&dxn) {
            *a += b;
        }
        debug_assert_eq!(lc.x_in.len(), dx.len());
    }

    for (i, &id) in cache.ids.iter().enumerate() {
        let id = id as usize;
        for j in 0..d {
            grads.tok_emb.data[id * d + j] += dx[i * d + j];
            grads.pos_emb.data[i * d + j] += dx[i * d + j];
        }
    }
}

fn check_batch(p: &ModelParams, batch: &Batch) -> Result<()> {
    let c = &p.config;
    if batch.ids.len() != batch.batch_size * batch.seq_len || batch.lengths.len() != batch.batch_size {
        return Err(Error::ShapeMismatch("batch dimensions are inconsistent".into()));
    }
    if batch.seq_len > c.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: batch.seq_len,
            max: c.max_seq_len,
        });
    }
    if batch.lengths.iter().any(|&l| l > batch.seq_len) {
        return Err(Error::ShapeMismatch("row length exceeds seq_len".into()));
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: c.vocab_size,
        });
    }
    Ok(())
}

/// Run the encoder on a padded batch.
pub fn forward(p: &ModelParams, batch: &Batch, heads: Heads) -> Result<ForwardOutput> {
    check_batch(p, batch)?;
    let per: Vec<_> = (0..batch.batch_size)
        .into_par_iter()
        .map(|b| example_forward(p, batch.row(b), batch.lengths[b], heads))
        .collect();
    let mut out = ForwardOutput {
        batch_size: batch.batch_size,
        seq_len: batch.seq_len,
        vocab_size: p.config.vocab_size,
        mlm_logits: heads.mlm.then(Vec::new),
        rts_logits: heads.rts.then(Vec::new),
        caches: Vec::with_capacity(batch.batch_size),
    };
    for (cache, mlm, rts) in per {
        if let (Some(dst), Some(src)) = (out.mlm_logits.as_mut(), mlm) {
            dst.extend(src);
        }
        if let (Some(dst), Some(src)) = (out.rts_logits.as_mut(), rts) {
            dst.extend(src);
        }
        out.caches.push(cache);
    }
    Ok(out)
}

/// `log softmax(row)[label]`, with max subtraction.
pub fn log_softmax_at(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[label] - lse
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn count_targets(targets: &[Targets], batch_size: usize) -> Result<usize> {
    if targets.len() != batch_size {
        return Err(Error::ShapeMismatch(format!(
            "{} target rows for batch of {batch_size}",
            targets.len()
        )));
    }
    for t in targets {
        if t.positions.len() != t.labels.len() {
            return Err(Error::ShapeMismatch("positions and labels differ in length".into()));
        }
    }
    let n: usize = targets.iter().map(|t| t.positions.len()).sum();
    if n == 0 {
        return Err(Error::EmptyLossSet);
    }
    Ok(n)
}

/// Sum of NLL over one row's targets and, if `grad_scale` is set, dlogits for the row.
fn mlm_row(out: &ForwardOutput, b: usize, t: &Targets, grad_scale: Option<f64>) -> Result<(f64, Option<Vec<f64>>)> {
    let (s, v) = (out.seq_len, out.vocab_size);
    let mut grad = grad_scale.map(|_| vec![0.0; s * v]);
    let mut sum = 0.0;
    for (&pos, &label) in t.positions.iter().zip(&t.labels) {
        if pos >= s || label as usize >= v {
            return Err(Error::ShapeMismatch(format!("target ({pos}, {label}) out of range")));
        }
        let row = out
            .mlm_row(b, pos)
            .ok_or_else(|| Error::InvalidArgument("mlm head not evaluated".into()))?;
        sum -= log_softmax_at(row, label as usize);
        if let (Some(g), Some(k)) = (grad.as_mut(), grad_scale) {
            let sm = softmax(row);
            let gr = &mut g[pos * v..(pos + 1) * v];
            for (gj, pj) in gr.iter_mut().zip(sm) {
                *gj += k * pj;
            }
            gr[label as usize] -= k;
        }
    }
    Ok((sum, grad))
}

fn rts_row(out: &ForwardOutput, b: usize, t: &Targets, grad_scale: Option<f64>) -> Result<(f64, Option<Vec<f64>>)> {
    let s = out.seq_len;
    let mut grad = grad_scale.map(|_| vec![0.0; s]);
    let mut sum = 0.0;
    for (&pos, &label) in t.positions.iter().zip(&t.labels) {
        if pos >= s || label > 1 {
            return Err(Error::ShapeMismatch(format!(
                "rts target ({pos}, {label}) out of range"
            )));
        }
        let x = out
            .rts_logit(b, pos)
            .ok_or_else(|| Error::InvalidArgument("rts head not evaluated".into()))?;
        let y = label as f64;
        sum += softplus(x) - y * x;
        if let (Some(g), Some(k)) = (grad.as_mut(), grad_scale) {
            g[pos] += k * (sigmoid(x) - y);
        }
    }
    Ok((sum, grad))
}

/// Mean negative log-likelihood over all target positions in the batch.
pub fn mlm_loss(out: &ForwardOutput, targets: &[Targets]) -> Result<f64> {
    let n = count_targets(targets, out.batch_size)?;
    let mut sum = 0.0;
    for (b, t) in targets.iter().enumerate() {
        sum += mlm_row(out, b, t, None)?.0;
    }
    Ok(sum / n as f64)
}

/// Mean binary cross-entropy over all labelled positions in the batch.
pub fn rts_loss(out: &ForwardOutput, targets: &[Targets]) -> Result<f64> {
    let n = count_targets(targets, out.batch_size)?;
    let mut sum = 0.0;
    for (b, t) in targets.iter().enumerate() {
        sum += rts_row(out, b, t, None)?.0;
    }
    Ok(sum / n as f64)
}

/// Loss and its gradient with respect to every parameter.
///
/// With `Heads::MLM` the loss is [`mlm_loss`], with `Heads::RTS` it is
/// [`rts_loss`]; with both heads the two means are summed.
pub fn backward(p: &ModelParams, batch: &Batch, targets: &[Targets], heads: Heads) -> Result<(f64, Gradients)> {
    if !heads.mlm && !heads.rts {
        return Err(Error::InvalidArgument("no head selected".into()));
    }
    let out = forward(p, batch, heads)?;
    backward_from_output(p, &out, targets, heads)
}

pub fn backward_from_output(
    p: &ModelParams,
    out: &ForwardOutput,
    targets: &[Targets],
    heads: Heads,
) -> Result<(f64, Gradients)> {
    backward_scaled(p, out, targets, heads, 1.0)
}

/// Gradient of `weight * loss`.
pub fn backward_scaled(
    p: &ModelParams,
    out: &ForwardOutput,
    targets: &[Targets],
    heads: Heads,
    weight: f64,
) -> Result<(f64, Gradients)> {
    let n = count_targets(targets, out.batch_size)?;
    let k = weight / n as f64;
    let per: Vec<Result<(f64, Gradients)>> = (0..out.batch_size)
        .into_par_iter()
        .map(|b| {
            let mut loss = 0.0;
            let mut dmlm = None;
            let mut drts = None;
            if heads.mlm {
                let (l, g) = mlm_row(out, b, &targets[b], Some(k))?;
                loss += l;
                dmlm = g;
            }
            if heads.rts {
                let (l, g) = rts_row(out, b, &targets[b], Some(k))?;
                loss += l;
                drts = g;
            }
            let mut grads = p.zeros_like();
            example_backward(p, &out.caches[b], dmlm.as_deref(), drts.as_deref(), &mut grads);
            Ok((loss, grads))
        })
        .collect();

    let mut total = 0.0;
    let mut grads = p.zeros_like();
    for r in per {
        let (l, g) = r?;
        total += l;
        grads.add_scaled(&g, 1.0);
    }
    Ok((total * k, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS, PAD, SEP};
    use crate::model::params::ModelConfig;
    use approx::assert_abs_diff_eq;

    fn tiny() -> ModelParams {
        ModelParams::init(&ModelConfig::tiny()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = tiny();
        let batch = Batch::collate([[CLS, 5, 6, 7, SEP].as_slice(), [CLS, 9, SEP].as_slice()]);
        let out = forward(&p, &batch, Heads::BOTH).unwrap();
        for b in 0..2 {
            for i in 0..batch.seq_len {
                let s: f64 = softmax(out.mlm_row(b, i).unwrap()).iter().sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_padded_input_is_finite() {
        let p = tiny();
        let batch = Batch {
            ids: vec![CLS, SEP, PAD, PAD, PAD, PAD],
            batch_size: 1,
            seq_len: 6,
            lengths: vec![2],
        };
        let out = forward(&p, &batch, Heads::BOTH).unwrap();
        assert!(out.mlm_logits.unwrap().iter().all(|x| x.is_finite()));
        assert!(out.rts_logits.unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn padding_does_not_change_real_logits() {
        let p = tiny();
        let short = Batch::collate([[CLS, 5, 6, SEP].as_slice()]);
        let long = Batch {
            ids: vec![CLS, 5, 6, SEP, PAD, PAD, PAD],
            batch_size: 1,
            seq_len: 7,
            lengths: vec![4],
        };
        let a = forward(&p, &short, Heads::BOTH).unwrap();
        let b = forward(&p, &long, Heads::BOTH).unwrap();
        for i in 0..4 {
            for (x, y) in a.mlm_row(0, i).unwrap().iter().zip(b.mlm_row(0, i).unwrap()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
            assert_abs_diff_eq!(a.rts_logit(0, i).unwrap(), b.rts_logit(0, i).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let p = tiny();
        let r1 = [CLS, 5, 6, 7, SEP];
        let r2 = [CLS, 9, 10, SEP];
        let ab = forward(&p, &Batch::collate([r1.as_slice(), r2.as_slice()]), Heads::MLM).unwrap();
        let ba = forward(&p, &Batch::collate([r2.as_slice(), r1.as_slice()]), Heads::MLM).unwrap();
        for i in 0..5 {
            assert_eq!(ab.mlm_row(0, i), ba.mlm_row(1, i));
        }
        for i in 0..4 {
            assert_eq!(ab.mlm_row(1, i), ba.mlm_row(0, i));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = tiny();
        let oov = Batch::collate([[CLS, 99, SEP].as_slice()]);
        assert!(matches!(
            forward(&p, &oov, Heads::MLM),
            Err(Error::TokenOutOfRange { .. })
        ));
        let long: Vec<u32> = vec![5; 9];
        assert!(matches!(
            forward(&p, &Batch::collate([long.as_slice()]), Heads::MLM),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut c = ModelConfig::tiny();
        c.vocab_size = 100;
        let p = ModelParams::zeros(&c).unwrap();
        let batch = Batch::collate([[CLS, 5, 6, SEP].as_slice()]);
        let out = forward(&p, &batch, Heads::BOTH).unwrap();
        let t = [Targets {
            positions: vec![1, 2],
            labels: vec![5, 6],
        }];
        assert_abs_diff_eq!(mlm_loss(&out, &t).unwrap(), (100f64).ln(), epsilon = 1e-12);
        let r = [Targets {
            positions: vec![1, 2],
            labels: vec![0, 1],
        }];
        assert_abs_diff_eq!(rts_loss(&out, &r).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_is_shift_invariant_and_vanishes_with_margin() {
        let row = [0.3, -1.2, 2.0, 0.0];
        let shifted: Vec<f64> = row.iter().map(|x| x + 123.456).collect();
        assert_abs_diff_eq!(log_softmax_at(&row, 2), log_softmax_at(&shifted, 2), epsilon = 1e-9);
        let mut prev = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0, 1000.0] {
            let nll = -log_softmax_at(&[margin, 0.0, 0.0], 0);
            assert!(nll <= prev && nll >= 0.0);
            prev = nll;
        }
        assert_eq!(prev, 0.0);
        assert!(log_softmax_at(&[1e300, -1e300], 1).is_finite());
    }

    #[test]
    fn empty_loss_set_is_an_error() {
        let p = tiny();
        let batch = Batch::collate([[CLS, 5, SEP].as_slice()]);
        let out = forward(&p, &batch, Heads::MLM).unwrap();
        assert!(matches!(
            mlm_loss(&out, &[Targets::default()]),
            Err(Error::EmptyLossSet)
        ));
    }

    #[test]
    fn unused_positional_rows_get_zero_gradient() {
        let p = tiny();
        let batch = Batch::collate([[CLS, 5, 6, SEP].as_slice()]);
        let t = [Targets {
            positions: vec![1],
            labels: vec![5],
        }];
        let (_, g) = backward(&p, &batch, &t, Heads::MLM).unwrap();
        let d = p.config.d_model;
        assert!(g.pos_emb.data[4 * d..].iter().all(|&x| x == 0.0));
        assert!(g.pos_emb.data[..4 * d].iter().any(|&x| x != 0.0));
        // RTS head is untouched by the MLM loss.
        assert!(g.rts_w.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scaling_the_loss_scales_the_gradient() {
        let p = tiny();
        let batch = Batch::collate([[CLS, 5, 6, 7, SEP].as_slice()]);
        let t = [Targets {
            positions: vec![1, 3],
            labels: vec![5, 7],
        }];
        let out = forward(&p, &batch, Heads::MLM).unwrap();
        let (l1, g1) = backward_from_output(&p, &out, &t, Heads::MLM).unwrap();
        let (l2, g2) = backward_scaled(&p, &out, &t, Heads::MLM, 2.0).unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn tied_embeddings_forward_and_grad_shapes() {
        let c = ModelConfig {
            tie_embeddings: true,
            ..ModelConfig::tiny()
        };
        let p = ModelParams::init(&c).unwrap();
        assert!(p.mlm_w.is_empty());
        let batch = Batch::collate([[CLS, 5, 6, SEP].as_slice()]);
        let t = [Targets {
            positions: vec![2],
            labels: vec![6],
        }];
        let (l, g) = backward(&p, &batch, &t, Heads::MLM).unwrap();
        assert!(l.is_finite());
        // Rows of tokens absent from the input still receive output-projection gradient.
        let d = c.d_model;
        assert!(g.tok_emb.data[10 * d..11 * d].iter().any(|&x| x != 0.0));
    }
}
