use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layercode::{encode_network, LayerCode, NetworkArch};
use crate::neuralcore::{
    smooth_l1, smooth_l1_grad, update_running, BnMode, OptState, SgdHyper,
};
use crate::predictor::{
    backward_batch, forward_batch, init_params, structural_feature, PeepholeHyper,
    PeepholeParams,
};

use super::{evaluate, HarnessError, Metrics, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 0.01,
            lr_decay_every: 40,
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), HarnessError> {
        if self.epochs < 1 || self.batch_size < 2 {
            return Err(HarnessError::BadSample(
                "epochs must be >= 1 and batch_size >= 2".into(),
            ));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(HarnessError::BadSample("val_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

/// Minimizes the mean smooth-L1 loss between f(x_i, T_i) and y_i(T_i) with
/// SGD over shuffled mini-batches, returning the parameters with the best
/// validation MSE. Only the final-epoch accuracy of each sample is read.
pub fn train(
    config: &TrainConfig,
    hyper: &PeepholeHyper,
    data: &[Sample],
) -> Result<(PeepholeParams, TrainHistory), HarnessError> {
    config.check()?;
    if data.len() < config.batch_size {
        return Err(HarnessError::InsufficientData {
            needed: config.batch_size,
            got: data.len(),
        });
    }

    // encode once; targets are the final-epoch accuracies only
    let codes: Vec<Vec<LayerCode>> =
        data.iter().map(|s| encode_network(&s.arch)).collect::<Result<_, _>>()?;
    let targets: Vec<f64> = data.iter().map(|s| s.final_acc()).collect::<Result<_, _>>()?;
    let epochs_t: Vec<usize> = data.iter().map(|s| s.epochs_t as usize).collect();
    for (s, &t) in data.iter().zip(&epochs_t) {
        if t > hyper.t_max {
            return Err(HarnessError::BadSample(format!(
                "sample T = {} exceeds the model's T_max = {} ({})",
                t, hyper.t_max, s.arch.meta.dataset_tag
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let val_count = ((data.len() as f64) * config.val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(val_count.clamp(1, data.len() - 1));
    let val_samples: Vec<Sample> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let mut train_idx: Vec<usize> = train_idx.to_vec();

    let mut params = init_params(config.seed, hyper);
    let param_lens: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
    let mut opt = OptState::new(
        &param_lens,
        SgdHyper { lr: config.lr, momentum: config.momentum, weight_decay: config.weight_decay },
    );

    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0, best_val_mse: f64::MAX };
    let mut best_params = params.clone();

    for epoch in 0..config.epochs {
        let lr = config.lr * config.lr_decay_factor.powi((epoch / config.lr_decay_every) as i32);
        opt.hyper.lr = lr;
        train_idx.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_no, batch) in train_idx.chunks(config.batch_size).enumerate() {
            if batch.len() < 2 {
                continue; // batch norm needs at least two rows
            }
            let items: Vec<(&[LayerCode], usize)> =
                batch.iter().map(|&i| (codes[i].as_slice(), epochs_t[i])).collect();
            let (preds, cache) = forward_batch(&params, &items, BnMode::Train)?;
            let n = batch.len() as f64;
            let mut dpreds = Vec::with_capacity(batch.len());
            let mut batch_loss = 0.0;
            for (k, &i) in batch.iter().enumerate() {
                batch_loss += smooth_l1(preds[k], targets[i]);
                dpreds.push(smooth_l1_grad(preds[k], targets[i]) / n);
            }
            batch_loss /= n;
            if !batch_loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch, batch: batch_no });
            }
            loss_sum += batch_loss * n;
            loss_count += batch.len();

            let grads = backward_batch(&params, &cache, &dpreds);
            update_running(&mut params.bn1, &cache.bn1_cache);
            update_running(&mut params.bn2, &cache.bn2_cache);
            let grad_refs: Vec<&[f64]> = grads.flat().iter().map(|t| t.data.as_slice()).collect();
            let mut param_refs: Vec<&mut [f64]> = params
                .trainable_mut()
                .into_iter()
                .map(|t| t.data.as_mut_slice())
                .collect();
            crate::neuralcore::sgd_step(&mut param_refs, &grad_refs, &mut opt)?;
        }

        let val = evaluate(&params, &val_samples)?;
        let train_loss = loss_sum / loss_count as f64;
        if val.mse < history.best_val_mse {
            history.best_val_mse = val.mse;
            history.best_epoch = epoch;
            best_params = params.clone();
        }
        history.epochs.push(EpochStats { epoch, lr, train_loss, val });
    }

    Ok((best_params, history))
}

/// Writes one CSV row per architecture: an id column followed by the
/// structural-feature components.
pub fn export_features(
    params: &PeepholeParams,
    archs: &[NetworkArch],
    path: &Path,
) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str("id");
    for k in 0..params.hyper.hidden {
        out.push_str(&format!(",f{k:03}"));
    }
    out.push('\n');
    for (i, arch) in archs.iter().enumerate() {
        let codes = encode_network(arch)?;
        let feature = structural_feature(params, &codes)?;
        out.push_str(&i.to_string());
        for v in feature {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_archs, SkeletonConfig};
    use crate::harness::label_dataset;

    fn small_hyper() -> PeepholeHyper {
        PeepholeHyper {
            d_ty: 4,
            d_k: 3,
            d_ch: 4,
            hidden: 12,
            mlp_hidden: 16,
            t_max: 20,
            ..PeepholeHyper::default()
        }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig { epochs: 8, batch_size: 16, seed: 1, ..TrainConfig::default() }
    }

    fn dataset(n: usize, t: u32, seed: u64) -> Vec<Sample> {
        let cfg = SkeletonConfig { rng_seed: seed, ..SkeletonConfig::default() };
        label_dataset(&generate_archs(n, &cfg).unwrap(), t).unwrap()
    }

    #[test]
    fn constant_target_is_learned() {
        // near-constant: exactly equal labels would make val tau undefined
        let mut data = dataset(64, 10, 7);
        for (i, s) in data.iter_mut().enumerate() {
            s.curve = None;
            s.final_accuracy = Some(0.7 + 1e-4 * (i % 5) as f64);
        }
        let cfg = TrainConfig { epochs: 120, batch_size: 16, seed: 2, ..TrainConfig::default() };
        let (params, hist) = train(&cfg, &small_hyper(), &data).unwrap();
        assert!(hist.best_val_mse < 0.002, "val mse {}", hist.best_val_mse);
        let mut sum = 0.0;
        for s in &data {
            let codes = encode_network(&s.arch).unwrap();
            sum += crate::predictor::predict(&params, &codes, 10).unwrap();
        }
        let mean = sum / data.len() as f64;
        assert!((mean - 0.7).abs() < 0.02, "mean prediction {mean}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = dataset(48, 10, 8);
        let cfg = quick_config();
        let h = small_hyper();
        let (p1, h1) = train(&cfg, &h, &data).unwrap();
        let (p2, h2) = train(&cfg, &h, &data).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn training_reduces_loss() {
        let data = dataset(64, 10, 9);
        let cfg = TrainConfig { epochs: 15, batch_size: 16, seed: 3, ..TrainConfig::default() };
        let (_, hist) = train(&cfg, &small_hyper(), &data).unwrap();
        let first = hist.epochs.first().unwrap().train_loss;
        let best = hist.epochs.iter().map(|e| e.train_loss).fold(f64::MAX, f64::min);
        assert!(best < first, "loss never improved: {first} -> {best}");
        assert!(hist.best_val_mse <= hist.epochs[0].val.mse);
    }

    #[test]
    fn only_the_final_epoch_label_is_read() {
        // poison everything but y(T); training must stay finite
        let mut data = dataset(48, 10, 10);
        for s in &mut data {
            let curve = s.curve.as_mut().unwrap();
            let last = *curve.last().unwrap();
            for v in curve.iter_mut() {
                *v = f64::NAN;
            }
            *curve.last_mut().unwrap() = last;
        }
        let (_, hist) = train(&quick_config(), &small_hyper(), &data).unwrap();
        assert!(hist.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let data = dataset(4, 10, 11);
        assert!(matches!(
            train(&quick_config(), &small_hyper(), &data),
            Err(HarnessError::InsufficientData { .. })
        ));
    }

    #[test]
    fn feature_export_shape() {
        let cfg = SkeletonConfig { rng_seed: 12, ..SkeletonConfig::default() };
        let archs = generate_archs(5, &cfg).unwrap();
        let params = init_params(1, &small_hyper());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        export_features(&params, &archs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6); // header + 5 rows
        for line in &lines {
            assert_eq!(line.split(',').count(), 1 + params.hyper.hidden);
        }
        for line in &lines[1..] {
            for v in line.split(',').skip(1) {
                let x: f64 = v.parse().unwrap();
                assert!(x.abs() < 1.0);
            }
        }
    }
}
