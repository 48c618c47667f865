//! Binary checkpoint format.
//!
//! Layout: 8-byte magic `MRCKPT01`, a little-endian `u64` header length, a
//! compact JSON header, then three f64 little-endian sections (parameters,
//! first moments, second moments) in the fixed tensor order recorded in the
//! header. Writing the same state twice yields identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, TensorInfo};
use crate::trainer::{OptState, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"MRCKPT01";
pub const FORMAT_VERSION: u32 = 1;
/// Name of the RNG derivation scheme. Every random draw is a pure function of
/// `(seed, stream, step, row)`, so the seed plus step is the full RNG state.
pub const RNG_SCHEME: &str = "chacha8-counter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub scheme: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub opt_step: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
    pub sections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub state: TrainState,
}

fn entries(layout: &[TensorInfo]) -> Vec<TensorEntry> {
    layout
        .iter()
        .map(|t| TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect()
}

pub fn to_bytes(train: &TrainConfig, state: &TrainState) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        model: state.params.config.clone(),
        train: train.clone(),
        step: state.step,
        opt_step: state.opt.step,
        rng: RngState {
            scheme: RNG_SCHEME.into(),
            seed: train.seed,
        },
        tensors: entries(&state.params.layout()),
        sections: vec!["params".into(), "adam_m".into(), "adam_v".into()],
    };
    let json = serde_json::to_vec(&header)?;
    let n = state.params.num_params();
    let mut out = Vec::with_capacity(16 + json.len() + 3 * 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for section in [&state.params, &state.opt.m, &state.opt.v] {
        for x in section.to_flat() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::MalformedCheckpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {}", header.format_version)));
    }
    if header.rng.scheme != RNG_SCHEME {
        return Err(bad(&format!("unknown rng scheme {}", header.rng.scheme)));
    }
    if header.rng.seed != header.train.seed {
        return Err(bad("rng seed disagrees with training config"));
    }
    let mut params = ModelParams::zeros(&header.model)?;
    if header.tensors != entries(&params.layout()) {
        return Err(bad("tensor table does not match model config"));
    }
    let n = params.num_params();
    let data = &body[hlen..];
    if data.len() != 3 * 8 * n {
        return Err(bad(&format!(
            "expected {} bytes of tensor data, found {}",
            3 * 8 * n,
            data.len()
        )));
    }
    let floats: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut m = params.zeros_like();
    let mut v = params.zeros_like();
    params.load_flat(&floats[..n])?;
    m.load_flat(&floats[n..2 * n])?;
    v.load_flat(&floats[2 * n..])?;
    Ok(Checkpoint {
        train: header.train,
        state: TrainState {
            params,
            opt: OptState {
                m,
                v,
                step: header.opt_step,
            },
            step: header.step,
        },
    })
}

/// Write via a temporary file and rename, so a crash never leaves a partial
/// checkpoint under the final name.
pub fn save(path: &Path, train: &TrainConfig, state: &TrainState) -> Result<()> {
    let bytes = to_bytes(train, state)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Load only the parameters, e.g. for evaluation.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    Ok(load(path)?.state.params)
}
