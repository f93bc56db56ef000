use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{PeepholeHyper, PeepholeParams};
use crate::neuralcore::{BnParams, LstmParams, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tensor {name}: shape {found:?} does not match hyper ({expected:?})")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint contains non-finite values in tensor {0}")]
    NonFinite(String),
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    hyper: PeepholeHyper,
    // BTreeMap keeps keys sorted for byte-stable output
    tensors: BTreeMap<String, Tensor>,
}

fn named_tensors(p: &PeepholeParams) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("bn1.beta", &p.bn1.beta),
        ("bn1.gamma", &p.bn1.gamma),
        ("bn1.running_mean", &p.bn1.running_mean),
        ("bn1.running_var", &p.bn1.running_var),
        ("bn2.beta", &p.bn2.beta),
        ("bn2.gamma", &p.bn2.gamma),
        ("bn2.running_mean", &p.bn2.running_mean),
        ("bn2.running_var", &p.bn2.running_var),
        ("channel_table", &p.channel_table),
        ("epoch_table", &p.epoch_table),
        ("kernel_table", &p.kernel_table),
        ("lstm.b_f", &p.lstm.b_f),
        ("lstm.b_i", &p.lstm.b_i),
        ("lstm.b_o", &p.lstm.b_o),
        ("lstm.b_u", &p.lstm.b_u),
        ("lstm.u_f", &p.lstm.u_f),
        ("lstm.u_i", &p.lstm.u_i),
        ("lstm.u_o", &p.lstm.u_o),
        ("lstm.u_u", &p.lstm.u_u),
        ("lstm.w_f", &p.lstm.w_f),
        ("lstm.w_i", &p.lstm.w_i),
        ("lstm.w_o", &p.lstm.w_o),
        ("lstm.w_u", &p.lstm.w_u),
        ("mlp1.b", &p.mlp1_b),
        ("mlp1.w", &p.mlp1_w),
        ("mlp2.b", &p.mlp2_b),
        ("mlp2.w", &p.mlp2_w),
        ("mlp3.b", &p.mlp3_b),
        ("mlp3.w", &p.mlp3_w),
        ("type_table", &p.type_table),
    ]
}

fn expected_shapes(h: &PeepholeHyper) -> Vec<(&'static str, Vec<usize>)> {
    let e = h.embed_dim();
    let hd = h.hidden;
    let m = h.mlp_hidden;
    let mi = h.mlp_input_dim();
    vec![
        ("bn1.beta", vec![m]),
        ("bn1.gamma", vec![m]),
        ("bn1.running_mean", vec![m]),
        ("bn1.running_var", vec![m]),
        ("bn2.beta", vec![m]),
        ("bn2.gamma", vec![m]),
        ("bn2.running_mean", vec![m]),
        ("bn2.running_var", vec![m]),
        ("channel_table", vec![8, h.d_ch]),
        ("epoch_table", vec![h.t_max, e]),
        ("kernel_table", vec![5, h.d_k]),
        ("lstm.b_f", vec![hd]),
        ("lstm.b_i", vec![hd]),
        ("lstm.b_o", vec![hd]),
        ("lstm.b_u", vec![hd]),
        ("lstm.u_f", vec![hd, hd]),
        ("lstm.u_i", vec![hd, hd]),
        ("lstm.u_o", vec![hd, hd]),
        ("lstm.u_u", vec![hd, hd]),
        ("lstm.w_f", vec![hd, e]),
        ("lstm.w_i", vec![hd, e]),
        ("lstm.w_o", vec![hd, e]),
        ("lstm.w_u", vec![hd, e]),
        ("mlp1.b", vec![m]),
        ("mlp1.w", vec![m, mi]),
        ("mlp2.b", vec![m]),
        ("mlp2.w", vec![m, m]),
        ("mlp3.b", vec![1]),
        ("mlp3.w", vec![1, m]),
        ("type_table", vec![7, h.d_ty]),
    ]
}

/// Writes the parameter set as JSON with sorted tensor keys. The decimal
/// float encoding round-trips every f64 bit pattern that is finite.
pub fn save_checkpoint(p: &PeepholeParams, path: &Path) -> Result<(), CheckpointError> {
    let mut tensors = BTreeMap::new();
    for (name, t) in named_tensors(p) {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(name.to_string()));
        }
        tensors.insert(name.to_string(), t.clone());
    }
    let file = CheckpointFile {
        format_version: p.hyper.format_version,
        hyper: p.hyper.clone(),
        tensors,
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Parses a checkpoint from its JSON text (the fuzzable entry point).
pub fn parse_checkpoint(text: &str) -> Result<PeepholeParams, CheckpointError> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if file.format_version != FORMAT_VERSION || file.hyper.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let h = &file.hyper;
    if h.t_max < 1 || h.hidden < 1 || h.mlp_hidden < 1 || h.embed_dim() < 1 {
        return Err(CheckpointError::Malformed("degenerate hyperparameters".to_string()));
    }

    let mut tensors = file.tensors;
    let mut take = |name: &str, expected: &[usize]| -> Result<Tensor, CheckpointError> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if t.shape != expected || t.data.len() != expected.iter().product::<usize>() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                found: t.shape,
                expected: expected.to_vec(),
            });
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(name.to_string()));
        }
        Ok(t)
    };

    let shapes: BTreeMap<&str, Vec<usize>> = expected_shapes(h).into_iter().collect();
    let s = |n: &str| shapes[n].clone();

    let params = PeepholeParams {
        hyper: h.clone(),
        type_table: take("type_table", &s("type_table"))?,
        kernel_table: take("kernel_table", &s("kernel_table"))?,
        channel_table: take("channel_table", &s("channel_table"))?,
        epoch_table: take("epoch_table", &s("epoch_table"))?,
        lstm: LstmParams {
            w_i: take("lstm.w_i", &s("lstm.w_i"))?,
            w_o: take("lstm.w_o", &s("lstm.w_o"))?,
            w_f: take("lstm.w_f", &s("lstm.w_f"))?,
            w_u: take("lstm.w_u", &s("lstm.w_u"))?,
            u_i: take("lstm.u_i", &s("lstm.u_i"))?,
            u_o: take("lstm.u_o", &s("lstm.u_o"))?,
            u_f: take("lstm.u_f", &s("lstm.u_f"))?,
            u_u: take("lstm.u_u", &s("lstm.u_u"))?,
            b_i: take("lstm.b_i", &s("lstm.b_i"))?,
            b_o: take("lstm.b_o", &s("lstm.b_o"))?,
            b_f: take("lstm.b_f", &s("lstm.b_f"))?,
            b_u: take("lstm.b_u", &s("lstm.b_u"))?,
        },
        mlp1_w: take("mlp1.w", &s("mlp1.w"))?,
        mlp1_b: take("mlp1.b", &s("mlp1.b"))?,
        bn1: BnParams {
            gamma: take("bn1.gamma", &s("bn1.gamma"))?,
            beta: take("bn1.beta", &s("bn1.beta"))?,
            running_mean: take("bn1.running_mean", &s("bn1.running_mean"))?,
            running_var: take("bn1.running_var", &s("bn1.running_var"))?,
        },
        mlp2_w: take("mlp2.w", &s("mlp2.w"))?,
        mlp2_b: take("mlp2.b", &s("mlp2.b"))?,
        bn2: BnParams {
            gamma: take("bn2.gamma", &s("bn2.gamma"))?,
            beta: take("bn2.beta", &s("bn2.beta"))?,
            running_mean: take("bn2.running_mean", &s("bn2.running_mean"))?,
            running_var: take("bn2.running_var", &s("bn2.running_var"))?,
        },
        mlp3_w: take("mlp3.w", &s("mlp3.w"))?,
        mlp3_b: take("mlp3.b", &s("mlp3.b"))?,
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(CheckpointError::Malformed(format!("unexpected tensor {extra}")));
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<PeepholeParams, CheckpointError> {
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text)
}
