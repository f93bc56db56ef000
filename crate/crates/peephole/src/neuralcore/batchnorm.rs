use serde::{Deserialize, Serialize};

use super::{NcError, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Scale/shift parameters plus running statistics for one normalized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BnParams {
    pub fn new(features: usize) -> BnParams {
        BnParams {
            gamma: Tensor { shape: vec![features], data: vec![1.0; features] },
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor { shape: vec![features], data: vec![1.0; features] },
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

/// Intermediates for the train-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mode: BnMode,
    pub xhat: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Pure forward pass over a batch of feature vectors. Train mode normalizes
/// by batch statistics; infer mode by running statistics. Running stats are
/// NOT touched here; see `update_running`.
pub fn bn_forward(
    p: &BnParams,
    x: &[Vec<f64>],
    mode: BnMode,
) -> Result<(Vec<Vec<f64>>, BnCache), NcError> {
    let d = p.features();
    if x.iter().any(|r| r.len() != d) {
        return Err(NcError::Dim(format!("batchnorm expects {d}-feature rows")));
    }
    let b = x.len();
    if mode == BnMode::Train && b < 2 {
        return Err(NcError::BatchTooSmall(b));
    }
    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; d];
            for row in x {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= b as f64;
            }
            let mut var = vec![0.0; d];
            for row in x {
                for k in 0..d {
                    let dlt = row[k] - mean[k];
                    var[k] += dlt * dlt;
                }
            }
            for v in &mut var {
                *v /= b as f64;
            }
            (mean, var)
        }
        BnMode::Infer => (p.running_mean.data.clone(), p.running_var.data.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Vec::with_capacity(b);
    let mut y = Vec::with_capacity(b);
    for row in x {
        let mut xh = vec![0.0; d];
        let mut yr = vec![0.0; d];
        for k in 0..d {
            xh[k] = (row[k] - mean[k]) * inv_std[k];
            yr[k] = p.gamma.data[k] * xh[k] + p.beta.data[k];
        }
        xhat.push(xh);
        y.push(yr);
    }
    Ok((y, BnCache { mode, xhat, mean, var, inv_std }))
}

/// Folds batch statistics into the running estimates.
pub fn update_running(p: &mut BnParams, cache: &BnCache) {
    for k in 0..p.features() {
        p.running_mean.data[k] =
            (1.0 - BN_MOMENTUM) * p.running_mean.data[k] + BN_MOMENTUM * cache.mean[k];
        p.running_var.data[k] =
            (1.0 - BN_MOMENTUM) * p.running_var.data[k] + BN_MOMENTUM * cache.var[k];
    }
}

/// The batchnorm operation as a single call: train mode also updates the
/// running statistics.
pub fn batchnorm(
    p: &mut BnParams,
    x: &[Vec<f64>],
    mode: BnMode,
) -> Result<Vec<Vec<f64>>, NcError> {
    let (y, cache) = bn_forward(p, x, mode)?;
    if mode == BnMode::Train {
        update_running(p, &cache);
    }
    Ok(y)
}

/// Backward pass. Accumulates dgamma/dbeta and returns dx. Train mode
/// differentiates through the batch statistics; infer mode treats the
/// running statistics as constants.
pub fn bn_backward(
    p: &BnParams,
    cache: &BnCache,
    dy: &[Vec<f64>],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<Vec<f64>> {
    let d = p.features();
    let b = dy.len();
    for row in 0..b {
        for k in 0..d {
            dgamma[k] += dy[row][k] * cache.xhat[row][k];
            dbeta[k] += dy[row][k];
        }
    }
    match cache.mode {
        BnMode::Infer => dy
            .iter()
            .map(|row| {
                (0..d).map(|k| row[k] * p.gamma.data[k] * cache.inv_std[k]).collect()
            })
            .collect(),
        BnMode::Train => {
            // dx = (gamma * inv_std / B) * (B*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
            let mut sum_dxhat = vec![0.0; d];
            let mut sum_dxhat_xhat = vec![0.0; d];
            let dxhat: Vec<Vec<f64>> = dy
                .iter()
                .map(|row| (0..d).map(|k| row[k] * p.gamma.data[k]).collect::<Vec<f64>>())
                .collect();
            for row in 0..b {
                for k in 0..d {
                    sum_dxhat[k] += dxhat[row][k];
                    sum_dxhat_xhat[k] += dxhat[row][k] * cache.xhat[row][k];
                }
            }
            (0..b)
                .map(|row| {
                    (0..d)
                        .map(|k| {
                            cache.inv_std[k] / b as f64
                                * (b as f64 * dxhat[row][k]
                                    - sum_dxhat[k]
                                    - cache.xhat[row][k] * sum_dxhat_xhat[k])
                        })
                        .collect()
                })
                .collect()
        }
    }
}
