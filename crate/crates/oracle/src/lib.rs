//! Brute-force reference implementations for the maskrate test suites.
//!
//! Nothing here calls into the production model code: the encoder is
//! recomputed with plain nested loops, one unpadded sequence at a time. Only
//! the parameter container type is shared.

#![allow(clippy::needless_range_loop)]

use maskrate::model::ModelParams;

const EPS: f64 = 1e-5;
const MASK_ID: u32 = 1;
const FIRST_REGULAR_ID: u32 = 5;

/// Logits for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RefOutput {
    /// `[position][vocab]`
    pub mlm: Vec<Vec<f64>>,
    /// `[position]`
    pub rts: Vec<f64>,
}

fn at(t: &[f64], cols: usize, r: usize, c: usize) -> f64 {
    t[r * cols + c]
}

fn norm(x: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let denom = (var + EPS).sqrt();
    (0..x.len())
        .map(|i| (x[i] - mean) / denom * scale[i] + shift[i])
        .collect()
}

fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|j| {
            let mut acc = b[j];
            for (i, xi) in x.iter().enumerate() {
                acc += xi * at(w, out, i, j);
            }
            acc
        })
        .collect()
}

fn gelu(u: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * u * (1.0 + (c * (u + 0.044715 * u.powi(3))).tanh())
}

/// Reference encoder over one unpadded sequence.
///
/// Limited to one layer, at most two heads, width 8, vocab 16 and length 8.
pub fn ref_forward_tiny(p: &ModelParams, ids: &[u32]) -> Result<RefOutput, String> {
    let c = &p.config;
    if c.n_layers > 1 || c.n_heads > 2 || c.d_model > 8 || c.vocab_size > 16 || ids.len() > 8 {
        return Err("config too large for the reference forward".into());
    }
    if ids.len() > c.max_seq_len || ids.iter().any(|&i| i as usize >= c.vocab_size) {
        return Err("input outside the model's range".into());
    }
    let d = c.d_model;
    let v = c.vocab_size;
    let nh = c.n_heads;
    let dh = d / nh;
    let s = ids.len();

    let mut h: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            (0..d)
                .map(|j| at(&p.tok_emb.data, d, ids[i] as usize, j) + at(&p.pos_emb.data, d, i, j))
                .collect()
        })
        .collect();

    for l in &p.layers {
        let a: Vec<Vec<f64>> = h
            .iter()
            .map(|x| norm(x, &l.ln_attn.scale.data, &l.ln_attn.shift.data))
            .collect();
        let q: Vec<Vec<f64>> = a.iter().map(|x| affine(x, &l.w_q.data, &l.b_q.data)).collect();
        let k: Vec<Vec<f64>> = a.iter().map(|x| affine(x, &l.w_k.data, &l.b_k.data)).collect();
        let val: Vec<Vec<f64>> = a.iter().map(|x| affine(x, &l.w_v.data, &l.b_v.data)).collect();
        let mut ctx = vec![vec![0.0; d]; s];
        for head in 0..nh {
            for i in 0..s {
                let mut scores = vec![0.0; s];
                for (j, sc) in scores.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for t in 0..dh {
                        dot += q[i][head * dh + t] * k[j][head * dh + t];
                    }
                    *sc = dot / (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
                for j in 0..s {
                    let w = (scores[j] - m).exp() / z;
                    for t in 0..dh {
                        ctx[i][head * dh + t] += w * val[j][head * dh + t];
                    }
                }
            }
        }
        for i in 0..s {
            let o = affine(&ctx[i], &l.w_o.data, &l.b_o.data);
            for j in 0..d {
                h[i][j] += o[j];
            }
        }
        for row in h.iter_mut() {
            let b = norm(row, &l.ln_ff.scale.data, &l.ln_ff.shift.data);
            let hidden: Vec<f64> = affine(&b, &l.w_1.data, &l.b_1.data).into_iter().map(gelu).collect();
            let f = affine(&hidden, &l.w_2.data, &l.b_2.data);
            for j in 0..d {
                row[j] += f[j];
            }
        }
    }

    let mut mlm = Vec::with_capacity(s);
    let mut rts = Vec::with_capacity(s);
    for row in &h {
        let z = norm(row, &p.ln_final.scale.data, &p.ln_final.shift.data);
        let logits: Vec<f64> = (0..v)
            .map(|t| {
                let mut acc = p.mlm_b.data[t];
                for j in 0..d {
                    let w = if c.tie_embeddings {
                        at(&p.tok_emb.data, d, t, j)
                    } else {
                        at(&p.mlm_w.data, v, j, t)
                    };
                    acc += z[j] * w;
                }
                acc
            })
            .collect();
        mlm.push(logits);
        let mut r = p.rts_b.data[0];
        for j in 0..d {
            r += z[j] * p.rts_w.data[j];
        }
        rts.push(r);
    }
    Ok(RefOutput { mlm, rts })
}

fn log_prob(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
    logits[label] - m - z.ln()
}

/// Mean NLL over `(row, position, label)` triples.
pub fn ref_mlm_loss(outputs: &[RefOutput], targets: &[(usize, usize, u32)]) -> f64 {
    let mut total = 0.0;
    for &(r, pos, label) in targets {
        total += -log_prob(&outputs[r].mlm[pos], label as usize);
    }
    total / targets.len() as f64
}

/// Mean binary cross-entropy over `(row, position, label)` triples.
pub fn ref_rts_loss(outputs: &[RefOutput], targets: &[(usize, usize, u32)]) -> f64 {
    let mut total = 0.0;
    for &(r, pos, label) in targets {
        let x = outputs[r].rts[pos];
        let p = 1.0 / (1.0 + (-x).exp());
        total += if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    total / targets.len() as f64
}

/// Pseudo-log-likelihood: one independent forward per regular position.
pub fn ref_pll(p: &ModelParams, ids: &[u32]) -> Result<f64, String> {
    let mut total = 0.0;
    for i in 0..ids.len() {
        if ids[i] < FIRST_REGULAR_ID {
            continue;
        }
        let mut masked = ids.to_vec();
        masked[i] = MASK_ID;
        let out = ref_forward_tiny(p, &masked)?;
        total += log_prob(&out.mlm[i], ids[i] as usize);
    }
    Ok(total)
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h` at each `(tensor, index)` coordinate.
pub fn ref_finite_diff<F>(p: &ModelParams, loss: F, coords: &[(usize, usize)], h: f64) -> Vec<f64>
where
    F: Fn(&ModelParams) -> f64,
{
    coords
        .iter()
        .map(|&(t, i)| {
            let mut plus = p.clone();
            plus.tensors_mut()[t].data[i] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[t].data[i] -= h;
            (loss(&plus) - loss(&minus)) / (2.0 * h)
        })
        .collect()
}

/// One randomized small model plus unpadded input rows.
#[derive(Debug, Clone)]
pub struct Case {
    pub params: ModelParams,
    /// Each row starts with CLS (2), ends with SEP (3) and holds regular ids between.
    pub rows: Vec<Vec<u32>>,
}

/// Randomized configuration within the reference limits: 1 or 2 heads,
/// width 4 or 8, optionally tied embeddings, weights uniform in ±0.8.
pub fn random_case(seed: u64, n_rows: usize) -> Case {
    use maskrate::model::ModelConfig;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n_heads = rng.random_range(1..=2);
    let d_model = if rng.random_bool(0.5) { 4 } else { 8 };
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads,
        d_model,
        d_ff: 2 * d_model,
        vocab_size: rng.random_range(8..=16),
        max_seq_len: 8,
        init_seed: seed,
        tie_embeddings: rng.random_bool(0.3),
    };
    let mut params = ModelParams::init(&cfg).expect("valid config");
    for t in params.tensors_mut() {
        for x in &mut t.data {
            *x = rng.random_range(-0.8..0.8);
        }
    }
    let rows = (0..n_rows)
        .map(|_| {
            let len = rng.random_range(3..=cfg.max_seq_len);
            let mut r = vec![2];
            r.extend((0..len - 2).map(|_| rng.random_range(FIRST_REGULAR_ID..cfg.vocab_size as u32)));
            r.push(3);
            r
        })
        .collect();
    Case { params, rows }
}
