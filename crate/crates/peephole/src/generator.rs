//! Block-based architecture generation.
//!
//! Blocks are short layer sequences sampled from a Markov chain over layer
//! types; full networks are assembled by stacking block copies into a
//! three-stage skeleton with max-pool separators and 1x1 adapter
//! convolutions for channel matching.

use crate::layercode::{
    dequantize_bin, quantize_ratio, ArchMeta, LayerKind, LayerSpec, NetworkArch, RATIO_BINS,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Chain states, in matrix row/column order. Batch norm is not a chain
/// state; it is inserted behind convolutions separately.
pub const CHAIN_KINDS: [LayerKind; 6] = [
    LayerKind::Conv,
    LayerKind::MaxPool,
    LayerKind::AvgPool,
    LayerKind::ReLU,
    LayerKind::Sigmoid,
    LayerKind::Tanh,
];

/// Row-stochastic transition matrix over `CHAIN_KINDS`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub rows: [[f64; 6]; 6],
}

impl Default for TransitionMatrix {
    fn default() -> TransitionMatrix {
        // Next-layer distributions conditioned on the current layer,
        // columns: Conv, MP, AP, ReLU, Sigm, Tanh.
        TransitionMatrix {
            rows: [
                [0.03, 0.03, 0.03, 0.31, 0.30, 0.30], // Conv
                [0.60, 0.05, 0.05, 0.10, 0.10, 0.10], // MP
                [0.60, 0.05, 0.05, 0.10, 0.10, 0.10], // AP
                [0.30, 0.30, 0.30, 0.00, 0.05, 0.05], // ReLU
                [0.30, 0.30, 0.30, 0.05, 0.00, 0.05], // Sigm
                [0.30, 0.30, 0.30, 0.05, 0.05, 0.00], // Tanh
            ],
        }
    }
}

impl TransitionMatrix {
    pub fn check(&self) -> Result<(), GenError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|&p| p < 0.0) {
                return Err(GenError::BadMatrix(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(GenError::BadMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    fn row_index(kind: LayerKind) -> Option<usize> {
        CHAIN_KINDS.iter().position(|&k| k == kind)
    }
}

/// Skeleton and sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub stages: u32,
    pub blocks_per_stage: u32,
    pub stem_channels: u32,
    pub bn_probability: f64,
    pub epochs_t: u32,
    pub rng_seed: u64,
    pub dataset_tag: String,
}

impl Default for SkeletonConfig {
    fn default() -> SkeletonConfig {
        SkeletonConfig {
            stages: 3,
            blocks_per_stage: 2,
            stem_channels: 16,
            bn_probability: 0.6,
            epochs_t: 60,
            rng_seed: 0,
            dataset_tag: "cifar10".to_string(),
        }
    }
}

impl SkeletonConfig {
    pub fn check(&self) -> Result<(), GenError> {
        if self.stages < 1 || self.blocks_per_stage < 1 {
            return Err(GenError::BadConfig("stages and blocks_per_stage must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_probability) {
            return Err(GenError::BadConfig("bn_probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Hard limits on block sampling.
pub const BLOCK_MAX_LAYERS: usize = 10;
pub const BLOCK_MAX_CONVS: usize = 3;
const BLOCK_MIN_TARGET_LEN: usize = 4;

/// A sampled block: a short layer sequence starting with a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub layers: Vec<LayerSpec>,
}

impl Block {
    pub fn check(&self) -> Result<(), GenError> {
        if self.layers.is_empty() || self.layers[0].kind != LayerKind::Conv {
            return Err(GenError::BadBlock("must start with a convolution".into()));
        }
        if self.layers.len() > BLOCK_MAX_LAYERS {
            return Err(GenError::BadBlock(format!("{} layers > 10", self.layers.len())));
        }
        let convs = self.layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        if convs > BLOCK_MAX_CONVS {
            return Err(GenError::BadBlock(format!("{convs} convolutions > 3")));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kind == LayerKind::BatchNorm
                && (i == 0 || self.layers[i - 1].kind != LayerKind::Conv)
            {
                return Err(GenError::BadBlock(format!("batch norm at {i} not behind a conv")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("invalid transition matrix: {0}")]
    BadMatrix(String),
    #[error("invalid skeleton config: {0}")]
    BadConfig(String),
    #[error("invalid block: {0}")]
    BadBlock(String),
    #[error("cannot assemble a network from an empty block list")]
    NoBlocks,
    #[error("count must be >= 1")]
    ZeroCount,
}

/// Samples the next chain state conditioned on the current one. Zero-probability
/// transitions are never returned.
pub fn next_layer_type<R: Rng>(
    rng: &mut R,
    matrix: &TransitionMatrix,
    current: LayerKind,
) -> LayerKind {
    let row = matrix.rows[TransitionMatrix::row_index(current).expect("chain state")];
    sample_row(rng, &row)
}

fn sample_row<R: Rng>(rng: &mut R, row: &[f64; 6]) -> LayerKind {
    let total: f64 = row.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        if u < acc {
            return CHAIN_KINDS[i];
        }
    }
    // fell through on accumulated roundoff: last nonzero entry
    CHAIN_KINDS[row.iter().rposition(|&p| p > 0.0).expect("non-degenerate row")]
}

fn sample_conv<R: Rng>(rng: &mut R) -> LayerSpec {
    let k = rng.gen_range(1..=5u32);
    let bin = rng.gen_range(0..RATIO_BINS.len());
    LayerSpec::conv(k, k, RATIO_BINS[bin])
}

fn sample_pool<R: Rng>(rng: &mut R, kind: LayerKind) -> LayerSpec {
    let k = rng.gen_range(2..=3u32);
    LayerSpec::pool(kind, k, k)
}

/// Samples one block: first layer is always a convolution, subsequent kinds
/// follow the chain, and a batch norm follows each convolution with
/// probability `bn_probability`. A target length is drawn from {4..10};
/// a trailing batch norm may exceed it but never the hard cap of 10.
pub fn sample_block<R: Rng>(
    rng: &mut R,
    matrix: &TransitionMatrix,
    bn_probability: f64,
) -> Block {
    let target_len = rng.gen_range(BLOCK_MIN_TARGET_LEN..=BLOCK_MAX_LAYERS);
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(BLOCK_MAX_LAYERS);
    let mut convs = 0usize;
    let mut current = LayerKind::Conv;

    let emit_conv = |rng: &mut R, layers: &mut Vec<LayerSpec>, convs: &mut usize| {
        layers.push(sample_conv(rng));
        *convs += 1;
        if rng.gen::<f64>() < bn_probability && layers.len() < BLOCK_MAX_LAYERS {
            layers.push(LayerSpec::unary(LayerKind::BatchNorm));
        }
    };

    emit_conv(rng, &mut layers, &mut convs);
    while layers.len() < target_len {
        let next = if convs < BLOCK_MAX_CONVS {
            next_layer_type(rng, matrix, current)
        } else {
            // conv budget spent: zero the conv column and renormalize
            let mut row = matrix.rows[TransitionMatrix::row_index(current).expect("chain state")];
            row[0] = 0.0;
            sample_row(rng, &row)
        };
        match next {
            LayerKind::Conv => emit_conv(rng, &mut layers, &mut convs),
            LayerKind::MaxPool | LayerKind::AvgPool => layers.push(sample_pool(rng, next)),
            k => layers.push(LayerSpec::unary(k)),
        }
        current = next;
    }
    Block { layers }
}

fn round_channels(c: f64) -> u64 {
    (c.round() as u64).max(1)
}

/// Stacks block copies into the skeleton:
/// stem conv, then per stage `blocks_per_stage` copies of that stage's block
/// (stage i uses `blocks[i % blocks.len()]`) followed by a 2x2 max pool.
/// A 1x1 adapter convolution is inserted wherever a block copy's expected
/// input channel count (fixed at its first instantiation) differs from the
/// running count. The final global average pooling and the classifier are
/// not part of the emitted sequence.
pub fn assemble_network(blocks: &[Block], cfg: &SkeletonConfig) -> Result<NetworkArch, GenError> {
    if blocks.is_empty() {
        return Err(GenError::NoBlocks);
    }
    cfg.check()?;

    const INPUT_CHANNELS: f64 = 3.0;
    let stem_bin = quantize_ratio(f64::from(cfg.stem_channels) / INPUT_CHANNELS)
        .expect("positive stem ratio");
    let stem_ratio = dequantize_bin(stem_bin).expect("valid bin");

    let mut layers = vec![LayerSpec::conv(3, 3, stem_ratio)];
    let mut channels = round_channels(INPUT_CHANNELS * stem_ratio);
    let mut expected_input: Vec<Option<u64>> = vec![None; blocks.len()];

    for stage in 0..cfg.stages {
        let bi = stage as usize % blocks.len();
        for _ in 0..cfg.blocks_per_stage {
            match expected_input[bi] {
                None => expected_input[bi] = Some(channels),
                Some(expected) if expected != channels => {
                    let bin = quantize_ratio(expected as f64 / channels as f64)
                        .expect("positive adapter ratio");
                    let ratio = dequantize_bin(bin).expect("valid bin");
                    layers.push(LayerSpec::conv(1, 1, ratio));
                    channels = round_channels(channels as f64 * ratio);
                }
                Some(_) => {}
            }
            for l in &blocks[bi].layers {
                layers.push(l.clone());
                if l.kind == LayerKind::Conv {
                    channels = round_channels(channels as f64 * l.channel_ratio);
                }
            }
        }
        layers.push(LayerSpec::pool(LayerKind::MaxPool, 2, 2));
    }

    Ok(NetworkArch {
        meta: ArchMeta {
            dataset_tag: cfg.dataset_tag.clone(),
            blocks_per_stage: cfg.blocks_per_stage,
            stem_channels: cfg.stem_channels,
            seed: cfg.rng_seed,
        },
        layers,
    })
}

/// splitmix64 finalizer; the documented child-seed scheme is
/// `mix(seed ^ (index + 1) * 0x9E3779B97F4A7C15)`.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-item child seed, independent of scheduling.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E3779B97F4A7C15))
}

/// Generates one architecture from its child seed: one fresh block per
/// stage, then skeleton assembly.
pub fn generate_arch(index: u64, cfg: &SkeletonConfig) -> Result<NetworkArch, GenError> {
    let seed = child_seed(cfg.rng_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = TransitionMatrix::default();
    let blocks: Vec<Block> = (0..cfg.stages)
        .map(|_| sample_block(&mut rng, &matrix, cfg.bn_probability))
        .collect();
    let mut arch = assemble_network(&blocks, cfg)?;
    arch.meta.seed = seed;
    Ok(arch)
}

/// Generates `count` architectures; item i is a pure function of
/// (cfg.rng_seed, i), so parallel and serial runs agree.
pub fn generate_archs(count: usize, cfg: &SkeletonConfig) -> Result<Vec<NetworkArch>, GenError> {
    if count == 0 {
        return Err(GenError::ZeroCount);
    }
    cfg.check()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_arch(i, cfg))
        .collect()
}
