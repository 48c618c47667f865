use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub init_seed: u64,
    /// Reuse the token embedding as the MLM output projection.
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// One layer, two heads, width 8, vocab 16, sequences up to 8.
    pub fn tiny() -> Self {
        Self {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 16,
            max_seq_len: 8,
            init_seed: 0,
            tie_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidModelConfig(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidModelConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Role of a tensor, used for weight-decay exclusion and gradient-check coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Embedding,
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamClass {
    pub fn decays(self) -> bool {
        !matches!(self, ParamClass::NormScale | ParamClass::NormShift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl LayerNormParams {
    fn new(d: usize) -> Self {
        Self {
            scale: Tensor::filled(&[d], 1.0),
            shift: Tensor::zeros(&[d]),
        }
    }
}

/// One pre-norm encoder block. Projection matrices are `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln_attn: LayerNormParams,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln_ff: LayerNormParams,
    pub w_1: Tensor,
    pub b_1: Tensor,
    pub w_2: Tensor,
    pub b_2: Tensor,
}

impl LayerParams {
    fn zeros(d: usize, f: usize) -> Self {
        Self {
            ln_attn: LayerNormParams::new(d),
            w_q: Tensor::zeros(&[d, d]),
            b_q: Tensor::zeros(&[d]),
            w_k: Tensor::zeros(&[d, d]),
            b_k: Tensor::zeros(&[d]),
            w_v: Tensor::zeros(&[d, d]),
            b_v: Tensor::zeros(&[d]),
            w_o: Tensor::zeros(&[d, d]),
            b_o: Tensor::zeros(&[d]),
            ln_ff: LayerNormParams::new(d),
            w_1: Tensor::zeros(&[d, f]),
            b_1: Tensor::zeros(&[f]),
            w_2: Tensor::zeros(&[f, d]),
            b_2: Tensor::zeros(&[d]),
        }
    }
}

/// All weights of the encoder and both heads.
///
/// Tensor order (also the checkpoint order): `tok_emb`, `pos_emb`, then per
/// layer `ln_attn.scale`, `ln_attn.shift`, `w_q`, `b_q`, `w_k`, `b_k`, `w_v`,
/// `b_v`, `w_o`, `b_o`, `ln_ff.scale`, `ln_ff.shift`, `w_1`, `b_1`, `w_2`,
/// `b_2`, then `ln_final.scale`, `ln_final.shift`, `mlm_w`, `mlm_b`, `rts_w`,
/// `rts_b`. With tied embeddings `mlm_w` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub ln_final: LayerNormParams,
    pub mlm_w: Tensor,
    pub mlm_b: Tensor,
    pub rts_w: Tensor,
    pub rts_b: Tensor,
}

/// Gradients have exactly the parameter layout.
pub type Gradients = ModelParams;

/// Layout entry for one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub class: ParamClass,
    pub shape: Vec<usize>,
}

impl ModelParams {
    /// Layer-norm scales at 1, everything else at 0.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, f, s) = (config.vocab_size, config.d_model, config.d_ff, config.max_seq_len);
        Ok(Self {
            config: config.clone(),
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[s, d]),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(d, f)).collect(),
            ln_final: LayerNormParams::new(d),
            mlm_w: if config.tie_embeddings {
                Tensor::zeros(&[0, v])
            } else {
                Tensor::zeros(&[d, v])
            },
            mlm_b: Tensor::zeros(&[v]),
            rts_w: Tensor::zeros(&[d]),
            rts_b: Tensor::zeros(&[1]),
        })
    }

    /// Weights and embeddings ~ N(0, 0.02²) from `init_seed`, biases 0,
    /// layer-norm scale 1 and shift 0.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = seed::rng_for(config.init_seed, Stream::Init, &[]);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (info, t) in p.layout().into_iter().zip(p.tensors_mut()) {
            if matches!(info.class, ParamClass::Weight | ParamClass::Embedding) {
                for x in &mut t.data {
                    *x = normal.sample(&mut rng);
                }
            }
        }
        Ok(p)
    }

    /// Same layout, all zeros (including layer-norm scales).
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        g
    }

    pub fn layout(&self) -> Vec<TensorInfo> {
        let mut names: Vec<(String, ParamClass)> = vec![
            ("tok_emb".into(), ParamClass::Embedding),
            ("pos_emb".into(), ParamClass::Embedding),
        ];
        for l in 0..self.layers.len() {
            let p = |n: &str, c| (format!("layers.{l}.{n}"), c);
            names.extend([
                p("ln_attn.scale", ParamClass::NormScale),
                p("ln_attn.shift", ParamClass::NormShift),
                p("w_q", ParamClass::Weight),
                p("b_q", ParamClass::Bias),
                p("w_k", ParamClass::Weight),
                p("b_k", ParamClass::Bias),
                p("w_v", ParamClass::Weight),
                p("b_v", ParamClass::Bias),
                p("w_o", ParamClass::Weight),
                p("b_o", ParamClass::Bias),
                p("ln_ff.scale", ParamClass::NormScale),
                p("ln_ff.shift", ParamClass::NormShift),
                p("w_1", ParamClass::Weight),
                p("b_1", ParamClass::Bias),
                p("w_2", ParamClass::Weight),
                p("b_2", ParamClass::Bias),
            ]);
        }
        names.extend([
            ("ln_final.scale".into(), ParamClass::NormScale),
            ("ln_final.shift".into(), ParamClass::NormShift),
            ("mlm_w".into(), ParamClass::Weight),
            ("mlm_b".into(), ParamClass::Bias),
            ("rts_w".into(), ParamClass::Weight),
            ("rts_b".into(), ParamClass::Bias),
        ]);
        names
            .into_iter()
            .zip(self.tensors())
            .map(|((name, class), t)| TensorInfo {
                name,
                class,
                shape: t.shape.clone(),
            })
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            v.extend([
                &l.ln_attn.scale,
                &l.ln_attn.shift,
                &l.w_q,
                &l.b_q,
                &l.w_k,
                &l.b_k,
                &l.w_v,
                &l.b_v,
                &l.w_o,
                &l.b_o,
                &l.ln_ff.scale,
                &l.ln_ff.shift,
                &l.w_1,
                &l.b_1,
                &l.w_2,
                &l.b_2,
            ]);
        }
        v.extend([
            &self.ln_final.scale,
            &self.ln_final.shift,
            &self.mlm_w,
            &self.mlm_b,
            &self.rts_w,
            &self.rts_b,
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            v.extend([
                &mut l.ln_attn.scale,
                &mut l.ln_attn.shift,
                &mut l.w_q,
                &mut l.b_q,
                &mut l.w_k,
                &mut l.b_k,
                &mut l.w_v,
                &mut l.b_v,
                &mut l.w_o,
                &mut l.b_o,
                &mut l.ln_ff.scale,
                &mut l.ln_ff.shift,
                &mut l.w_1,
                &mut l.b_1,
                &mut l.w_2,
                &mut l.b_2,
            ]);
        }
        v.extend([
            &mut self.ln_final.scale,
            &mut self.ln_final.shift,
            &mut self.mlm_w,
            &mut self.mlm_b,
            &mut self.rts_w,
            &mut self.rts_b,
        ]);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// All values in tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// `self += other * k`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}
