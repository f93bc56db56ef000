use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layercode::LayerCode;
use crate::neuralcore::{
    affine, affine_backward, bn_backward, bn_forward, logistic, lstm_backward, lstm_forward,
    relu, relu_backward, BnCache, BnMode, BnParams, LstmCache, LstmGrads, LstmParams, NcError,
    Tensor,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("empty layer sequence")]
    EmptySequence,
    #[error("sequence length {0} exceeds the configured maximum {1}")]
    TooLong(usize, usize),
    #[error("epoch index {0} out of range 1..={1}")]
    EpochOutOfRange(usize, usize),
    #[error("layer code field out of table range: {0}")]
    BadCode(String),
    #[error(transparent)]
    Numeric(#[from] NcError),
}

/// Model widths. The layer-embedding width is d_ty + 2*d_k + d_ch and the
/// epoch embedding has the same width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeepholeHyper {
    pub d_ty: usize,
    pub d_k: usize,
    pub d_ch: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub t_max: usize,
    pub max_seq_len: usize,
    pub format_version: u32,
}

impl Default for PeepholeHyper {
    fn default() -> PeepholeHyper {
        PeepholeHyper {
            d_ty: 10,
            d_k: 10,
            d_ch: 10,
            hidden: 160,
            mlp_hidden: 200,
            t_max: 100,
            max_seq_len: 256,
            format_version: super::FORMAT_VERSION,
        }
    }
}

impl PeepholeHyper {
    pub fn embed_dim(&self) -> usize {
        self.d_ty + 2 * self.d_k + self.d_ch
    }

    pub fn mlp_input_dim(&self) -> usize {
        self.hidden + self.embed_dim()
    }
}

/// All learnable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PeepholeParams {
    pub hyper: PeepholeHyper,
    pub type_table: Tensor,    // [7, d_ty]
    pub kernel_table: Tensor,  // [5, d_k], shared by KW and KH
    pub channel_table: Tensor, // [8, d_ch]
    pub epoch_table: Tensor,   // [t_max, embed_dim]
    pub lstm: LstmParams,
    pub mlp1_w: Tensor,
    pub mlp1_b: Tensor,
    pub bn1: BnParams,
    pub mlp2_w: Tensor,
    pub mlp2_b: Tensor,
    pub bn2: BnParams,
    pub mlp3_w: Tensor,
    pub mlp3_b: Tensor,
}

/// Gradients for every trainable tensor (running stats excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct PeepholeGrads {
    pub type_table: Tensor,
    pub kernel_table: Tensor,
    pub channel_table: Tensor,
    pub epoch_table: Tensor,
    pub lstm: LstmGrads,
    pub mlp1_w: Tensor,
    pub mlp1_b: Tensor,
    pub bn1_gamma: Tensor,
    pub bn1_beta: Tensor,
    pub mlp2_w: Tensor,
    pub mlp2_b: Tensor,
    pub bn2_gamma: Tensor,
    pub bn2_beta: Tensor,
    pub mlp3_w: Tensor,
    pub mlp3_b: Tensor,
}

impl PeepholeGrads {
    pub fn zeros(p: &PeepholeParams) -> PeepholeGrads {
        PeepholeGrads {
            type_table: p.type_table.zeros_like(),
            kernel_table: p.kernel_table.zeros_like(),
            channel_table: p.channel_table.zeros_like(),
            epoch_table: p.epoch_table.zeros_like(),
            lstm: LstmGrads::zeros(p.lstm.input_dim(), p.lstm.hidden_dim()),
            mlp1_w: p.mlp1_w.zeros_like(),
            mlp1_b: p.mlp1_b.zeros_like(),
            bn1_gamma: p.bn1.gamma.zeros_like(),
            bn1_beta: p.bn1.beta.zeros_like(),
            mlp2_w: p.mlp2_w.zeros_like(),
            mlp2_b: p.mlp2_b.zeros_like(),
            bn2_gamma: p.bn2.gamma.zeros_like(),
            bn2_beta: p.bn2.beta.zeros_like(),
            mlp3_w: p.mlp3_w.zeros_like(),
            mlp3_b: p.mlp3_b.zeros_like(),
        }
    }

    pub fn add(&mut self, other: &PeepholeGrads) {
        for (a, b) in self.flat_mut().into_iter().zip(other.flat()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.flat_mut() {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn flat(&self) -> Vec<&Tensor> {
        vec![
            &self.type_table,
            &self.kernel_table,
            &self.channel_table,
            &self.epoch_table,
            &self.lstm.w_i,
            &self.lstm.w_o,
            &self.lstm.w_f,
            &self.lstm.w_u,
            &self.lstm.u_i,
            &self.lstm.u_o,
            &self.lstm.u_f,
            &self.lstm.u_u,
            &self.lstm.b_i,
            &self.lstm.b_o,
            &self.lstm.b_f,
            &self.lstm.b_u,
            &self.mlp1_w,
            &self.mlp1_b,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.mlp2_w,
            &self.mlp2_b,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.mlp3_w,
            &self.mlp3_b,
        ]
    }

    pub fn flat_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.type_table,
            &mut self.kernel_table,
            &mut self.channel_table,
            &mut self.epoch_table,
            &mut self.lstm.w_i,
            &mut self.lstm.w_o,
            &mut self.lstm.w_f,
            &mut self.lstm.w_u,
            &mut self.lstm.u_i,
            &mut self.lstm.u_o,
            &mut self.lstm.u_f,
            &mut self.lstm.u_u,
            &mut self.lstm.b_i,
            &mut self.lstm.b_o,
            &mut self.lstm.b_f,
            &mut self.lstm.b_u,
            &mut self.mlp1_w,
            &mut self.mlp1_b,
            &mut self.bn1_gamma,
            &mut self.bn1_beta,
            &mut self.mlp2_w,
            &mut self.mlp2_b,
            &mut self.bn2_gamma,
            &mut self.bn2_beta,
            &mut self.mlp3_w,
            &mut self.mlp3_b,
        ]
    }
}

impl PeepholeParams {
    /// Trainable tensors in the canonical order shared with `PeepholeGrads`.
    pub fn trainable(&self) -> Vec<&Tensor> {
        vec![
            &self.type_table,
            &self.kernel_table,
            &self.channel_table,
            &self.epoch_table,
            &self.lstm.w_i,
            &self.lstm.w_o,
            &self.lstm.w_f,
            &self.lstm.w_u,
            &self.lstm.u_i,
            &self.lstm.u_o,
            &self.lstm.u_f,
            &self.lstm.u_u,
            &self.lstm.b_i,
            &self.lstm.b_o,
            &self.lstm.b_f,
            &self.lstm.b_u,
            &self.mlp1_w,
            &self.mlp1_b,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.mlp2_w,
            &self.mlp2_b,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.mlp3_w,
            &self.mlp3_b,
        ]
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.type_table,
            &mut self.kernel_table,
            &mut self.channel_table,
            &mut self.epoch_table,
            &mut self.lstm.w_i,
            &mut self.lstm.w_o,
            &mut self.lstm.w_f,
            &mut self.lstm.w_u,
            &mut self.lstm.u_i,
            &mut self.lstm.u_o,
            &mut self.lstm.u_f,
            &mut self.lstm.u_u,
            &mut self.lstm.b_i,
            &mut self.lstm.b_o,
            &mut self.lstm.b_f,
            &mut self.lstm.b_u,
            &mut self.mlp1_w,
            &mut self.mlp1_b,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.mlp2_w,
            &mut self.mlp2_b,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.mlp3_w,
            &mut self.mlp3_b,
        ]
    }

    /// Flattens the trainable parameters into one vector (gradient-check
    /// plumbing).
    pub fn flatten_trainable(&self) -> Vec<f64> {
        self.trainable().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_trainable_from_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.trainable_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        assert_eq!(off, flat.len(), "flat parameter vector length mismatch");
    }
}

fn xavier_fill<R: Rng>(rng: &mut R, t: &mut Tensor, fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in &mut t.data {
        *v = rng.gen_range(-bound..bound);
    }
}

fn normal_fill<R: Rng>(rng: &mut R, t: &mut Tensor, std: f64) {
    // Box-Muller; two uniforms per draw keeps the stream deterministic
    for v in &mut t.data {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        *v = std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// Deterministic initialization: Xavier-uniform affine/LSTM weights,
/// N(0, 0.1) embedding tables, zero biases except the LSTM forget-gate
/// bias, which is set to 1.
pub fn init_params(seed: u64, hyper: &PeepholeHyper) -> PeepholeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = hyper.embed_dim();
    let h = hyper.hidden;
    let m = hyper.mlp_hidden;
    let mi = hyper.mlp_input_dim();

    let mut type_table = Tensor::zeros(&[7, hyper.d_ty]);
    let mut kernel_table = Tensor::zeros(&[5, hyper.d_k]);
    let mut channel_table = Tensor::zeros(&[8, hyper.d_ch]);
    let mut epoch_table = Tensor::zeros(&[hyper.t_max, e]);
    normal_fill(&mut rng, &mut type_table, 0.1);
    normal_fill(&mut rng, &mut kernel_table, 0.1);
    normal_fill(&mut rng, &mut channel_table, 0.1);
    normal_fill(&mut rng, &mut epoch_table, 0.1);

    let mut lstm = LstmParams::zeros(e, h);
    for w in [&mut lstm.w_i, &mut lstm.w_o, &mut lstm.w_f, &mut lstm.w_u] {
        xavier_fill(&mut rng, w, e, h);
    }
    for u in [&mut lstm.u_i, &mut lstm.u_o, &mut lstm.u_f, &mut lstm.u_u] {
        xavier_fill(&mut rng, u, h, h);
    }
    for v in &mut lstm.b_f.data {
        *v = 1.0;
    }

    let mut mlp1_w = Tensor::zeros(&[m, mi]);
    let mut mlp2_w = Tensor::zeros(&[m, m]);
    let mut mlp3_w = Tensor::zeros(&[1, m]);
    xavier_fill(&mut rng, &mut mlp1_w, mi, m);
    xavier_fill(&mut rng, &mut mlp2_w, m, m);
    xavier_fill(&mut rng, &mut mlp3_w, m, 1);

    PeepholeParams {
        hyper: hyper.clone(),
        type_table,
        kernel_table,
        channel_table,
        epoch_table,
        lstm,
        mlp1_w,
        mlp1_b: Tensor::zeros(&[m]),
        bn1: BnParams::new(m),
        mlp2_w,
        mlp2_b: Tensor::zeros(&[m]),
        bn2: BnParams::new(m),
        mlp3_w,
        mlp3_b: Tensor::zeros(&[1]),
    }
}

/// Table-lookup layer embedding: [type || kernel(KW) || kernel(KH) || channel].
pub fn embed_layer(p: &PeepholeParams, c: &LayerCode) -> Result<Vec<f64>, PredictError> {
    c.check().map_err(|e| PredictError::BadCode(e.to_string()))?;
    let mut v = Vec::with_capacity(p.hyper.embed_dim());
    v.extend_from_slice(p.type_table.row(c.ty as usize - 1));
    v.extend_from_slice(p.kernel_table.row(c.kw as usize - 1));
    v.extend_from_slice(p.kernel_table.row(c.kh as usize - 1));
    v.extend_from_slice(p.channel_table.row(c.ch as usize - 1));
    Ok(v)
}

fn embed_sequence(
    p: &PeepholeParams,
    codes: &[LayerCode],
) -> Result<Vec<Vec<f64>>, PredictError> {
    if codes.is_empty() {
        return Err(PredictError::EmptySequence);
    }
    if codes.len() > p.hyper.max_seq_len {
        return Err(PredictError::TooLong(codes.len(), p.hyper.max_seq_len));
    }
    codes.iter().map(|c| embed_layer(p, c)).collect()
}

/// The final LSTM hidden state after traversing the encoded layer sequence
/// from zero state.
pub fn structural_feature(
    p: &PeepholeParams,
    codes: &[LayerCode],
) -> Result<Vec<f64>, PredictError> {
    let xs = embed_sequence(p, codes)?;
    let (h, _) = lstm_forward(&p.lstm, &xs)?;
    Ok(h)
}

/// Everything the backward pass needs for one forward batch.
pub struct BatchCache {
    pub codes: Vec<Vec<LayerCode>>,
    pub epochs: Vec<usize>,
    pub lstm_caches: Vec<LstmCache>,
    pub z0: Vec<Vec<f64>>,
    pub a1: Vec<Vec<f64>>,
    pub bn1_cache: BnCache,
    pub bn1_out: Vec<Vec<f64>>,
    pub r1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub bn2_cache: BnCache,
    pub bn2_out: Vec<Vec<f64>>,
    pub r2: Vec<Vec<f64>>,
    pub preds: Vec<f64>,
}

/// Forward pass over a batch of (layer sequence, epoch index) pairs.
/// The per-item LSTM traversals run in parallel; outputs are ordered by
/// item index so results do not depend on scheduling.
pub fn forward_batch(
    p: &PeepholeParams,
    items: &[(&[LayerCode], usize)],
    mode: BnMode,
) -> Result<(Vec<f64>, BatchCache), PredictError> {
    use rayon::prelude::*;
    let per_item: Vec<(LstmCache, Vec<f64>)> = items
        .par_iter()
        .map(|&(codes, t)| {
            if t < 1 || t > p.hyper.t_max {
                return Err(PredictError::EpochOutOfRange(t, p.hyper.t_max));
            }
            let xs = embed_sequence(p, codes)?;
            let (h, cache) = lstm_forward(&p.lstm, &xs)?;
            let mut z = h;
            z.extend_from_slice(p.epoch_table.row(t - 1));
            Ok((cache, z))
        })
        .collect::<Result<_, _>>()?;
    let mut lstm_caches = Vec::with_capacity(items.len());
    let mut z0 = Vec::with_capacity(items.len());
    for (cache, z) in per_item {
        lstm_caches.push(cache);
        z0.push(z);
    }

    let a1: Vec<Vec<f64>> = z0
        .iter()
        .map(|z| affine(z, &p.mlp1_w, &p.mlp1_b.data))
        .collect::<Result<_, _>>()?;
    let (bn1_out, bn1_cache) = bn_forward(&p.bn1, &a1, mode)?;
    let r1: Vec<Vec<f64>> = bn1_out.iter().map(|v| relu(v)).collect();
    let a2: Vec<Vec<f64>> = r1
        .iter()
        .map(|v| affine(v, &p.mlp2_w, &p.mlp2_b.data))
        .collect::<Result<_, _>>()?;
    let (bn2_out, bn2_cache) = bn_forward(&p.bn2, &a2, mode)?;
    let r2: Vec<Vec<f64>> = bn2_out.iter().map(|v| relu(v)).collect();
    let preds: Vec<f64> = r2
        .iter()
        .map(|v| {
            let z = affine(v, &p.mlp3_w, &p.mlp3_b.data)?;
            Ok::<f64, PredictError>(logistic(z[0]))
        })
        .collect::<Result<_, _>>()?;

    let cache = BatchCache {
        codes: items.iter().map(|(c, _)| c.to_vec()).collect(),
        epochs: items.iter().map(|&(_, t)| t).collect(),
        lstm_caches,
        z0,
        a1,
        bn1_cache,
        bn1_out,
        r1,
        a2,
        bn2_cache,
        bn2_out,
        r2,
        preds: preds.clone(),
    };
    Ok((preds, cache))
}

/// Backward pass; `dpreds` is dLoss/dprediction per item. Returns gradients
/// for every trainable tensor.
pub fn backward_batch(
    p: &PeepholeParams,
    cache: &BatchCache,
    dpreds: &[f64],
) -> PeepholeGrads {
    let mut g = PeepholeGrads::zeros(p);
    let b = cache.preds.len();
    debug_assert_eq!(dpreds.len(), b);

    // through the output logistic and mlp3
    let mut dr2: Vec<Vec<f64>> = Vec::with_capacity(b);
    for row in 0..b {
        let pred = cache.preds[row];
        let dz = dpreds[row] * pred * (1.0 - pred);
        let dx = affine_backward(
            &cache.r2[row],
            &p.mlp3_w,
            &[dz],
            &mut g.mlp3_w,
            &mut g.mlp3_b.data,
        );
        dr2.push(dx);
    }

    // relu2 and bn2
    let dbn2: Vec<Vec<f64>> = (0..b)
        .map(|row| relu_backward(&cache.bn2_out[row], &dr2[row]))
        .collect();
    let da2 = bn_backward(&p.bn2, &cache.bn2_cache, &dbn2, &mut g.bn2_gamma.data, &mut g.bn2_beta.data);

    // mlp2
    let mut dr1: Vec<Vec<f64>> = Vec::with_capacity(b);
    for row in 0..b {
        let dx = affine_backward(
            &cache.r1[row],
            &p.mlp2_w,
            &da2[row],
            &mut g.mlp2_w,
            &mut g.mlp2_b.data,
        );
        dr1.push(dx);
    }

    // relu1 and bn1
    let dbn1: Vec<Vec<f64>> = (0..b)
        .map(|row| relu_backward(&cache.bn1_out[row], &dr1[row]))
        .collect();
    let da1 = bn_backward(&p.bn1, &cache.bn1_cache, &dbn1, &mut g.bn1_gamma.data, &mut g.bn1_beta.data);

    // mlp1, then split into structural feature and epoch embedding
    let hidden = p.hyper.hidden;
    let mut dz0_rows = Vec::with_capacity(b);
    for row in 0..b {
        dz0_rows.push(affine_backward(
            &cache.z0[row],
            &p.mlp1_w,
            &da1[row],
            &mut g.mlp1_w,
            &mut g.mlp1_b.data,
        ));
    }

    // BPTT per row in parallel. Rows are grouped into a fixed number of
    // chunks and chunk gradients are reduced in chunk order, so the result
    // is independent of thread scheduling.
    use rayon::prelude::*;
    const BPTT_CHUNKS: usize = 16;
    let chunk_size = b.div_ceil(BPTT_CHUNKS).max(1);
    let row_chunks: Vec<Vec<usize>> =
        (0..b).collect::<Vec<_>>().chunks(chunk_size).map(|c| c.to_vec()).collect();
    let chunk_grads: Vec<PeepholeGrads> = row_chunks
        .par_iter()
        .map(|rows| {
            let mut cg = PeepholeGrads::zeros(p);
            for &row in rows {
                let (dh, depoch) = dz0_rows[row].split_at(hidden);
                let t = cache.epochs[row];
                for (a, d) in cg.epoch_table.row_mut(t - 1).iter_mut().zip(depoch) {
                    *a += d;
                }
                // scatter input grads back into the lookup tables
                let dxs = lstm_backward(&p.lstm, &cache.lstm_caches[row], dh, &mut cg.lstm);
                for (code, dx) in cache.codes[row].iter().zip(dxs) {
                    let (d_ty, d_k, d_ch) = (p.hyper.d_ty, p.hyper.d_k, p.hyper.d_ch);
                    let (ty_part, rest) = dx.split_at(d_ty);
                    let (kw_part, rest) = rest.split_at(d_k);
                    let (kh_part, ch_part) = rest.split_at(d_k);
                    debug_assert_eq!(ch_part.len(), d_ch);
                    for (a, d) in
                        cg.type_table.row_mut(code.ty as usize - 1).iter_mut().zip(ty_part)
                    {
                        *a += d;
                    }
                    for (a, d) in
                        cg.kernel_table.row_mut(code.kw as usize - 1).iter_mut().zip(kw_part)
                    {
                        *a += d;
                    }
                    for (a, d) in
                        cg.kernel_table.row_mut(code.kh as usize - 1).iter_mut().zip(kh_part)
                    {
                        *a += d;
                    }
                    for (a, d) in
                        cg.channel_table.row_mut(code.ch as usize - 1).iter_mut().zip(ch_part)
                    {
                        *a += d;
                    }
                }
            }
            cg
        })
        .collect();
    for cg in &chunk_grads {
        g.add(cg);
    }
    g
}

/// Predicted validation accuracy for one architecture at epoch `t`,
/// using running batch-norm statistics.
pub fn predict(p: &PeepholeParams, codes: &[LayerCode], t: usize) -> Result<f64, PredictError> {
    let (preds, _) = forward_batch(p, &[(codes, t)], BnMode::Infer)?;
    Ok(preds[0])
}

/// Samples a syntactically valid random layer code.
fn random_code<R: rand::Rng>(rng: &mut R) -> LayerCode {
    match rng.gen_range(1u8..=7) {
        1 => LayerCode::new(1, rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=8)),
        ty @ (2 | 3) => {
            let k = rng.gen_range(2..=5);
            LayerCode::new(ty, k, k, 4)
        }
        ty => LayerCode::new(ty, 1, 1, 4),
    }
}

/// Checks every partial derivative of the whole model (embeddings, LSTM,
/// epoch table, MLP, batch norms) against central finite differences on a
/// random 3-item batch of `seq_len`-layer sequences. Returns the maximum
/// relative error. Keep the widths small: cost is quadratic-ish in the
/// parameter count.
pub fn full_grad_check(
    hyper: &PeepholeHyper,
    seed: u64,
    seq_len: usize,
    eps: f64,
) -> Result<f64, PredictError> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xACCE55ED);
    let params = init_params(seed, hyper);
    let batch: Vec<(Vec<LayerCode>, usize, f64)> = (0..3)
        .map(|_| {
            let codes: Vec<LayerCode> = (0..seq_len).map(|_| random_code(&mut rng)).collect();
            let t = rng.gen_range(1..=hyper.t_max);
            let target = rng.gen_range(0.05..0.95);
            (codes, t, target)
        })
        .collect();
    let items: Vec<(&[LayerCode], usize)> =
        batch.iter().map(|(c, t, _)| (c.as_slice(), *t)).collect();

    let (preds, cache) = forward_batch(&params, &items, BnMode::Train)?;
    let dpreds: Vec<f64> = preds
        .iter()
        .zip(&batch)
        .map(|(&p, &(_, _, y))| crate::neuralcore::smooth_l1_grad(p, y))
        .collect();
    let grads = backward_batch(&params, &cache, &dpreds);
    let analytic: Vec<f64> =
        grads.flat().iter().flat_map(|t| t.data.iter().copied()).collect();

    let flat = params.flatten_trainable();
    let mut scratch = params.clone();
    let loss = |theta: &[f64]| -> f64 {
        scratch.set_trainable_from_flat(theta);
        let (preds, _) = forward_batch(&scratch, &items, BnMode::Train).expect("forward");
        preds
            .iter()
            .zip(&batch)
            .map(|(&p, &(_, _, y))| crate::neuralcore::smooth_l1(p, y))
            .sum()
    };
    Ok(crate::neuralcore::grad_check(loss, &flat, &analytic, eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layercode::LayerCode;

    fn small_hyper() -> PeepholeHyper {
        PeepholeHyper {
            d_ty: 3,
            d_k: 2,
            d_ch: 3,
            hidden: 6,
            mlp_hidden: 8,
            t_max: 10,
            max_seq_len: 64,
            format_version: super::super::FORMAT_VERSION,
        }
    }

    fn codes() -> Vec<LayerCode> {
        vec![
            LayerCode::new(1, 3, 3, 6),
            LayerCode::new(7, 1, 1, 4),
            LayerCode::new(4, 1, 1, 4),
            LayerCode::new(2, 2, 2, 4),
        ]
    }

    #[test]
    fn init_is_deterministic_and_follows_rules() {
        let h = PeepholeHyper::default();
        let a = init_params(7, &h);
        let b = init_params(7, &h);
        assert_eq!(a, b);
        assert!(a.lstm.b_f.data.iter().all(|&v| v == 1.0));
        assert!(a.lstm.b_i.data.iter().all(|&v| v == 0.0));
        let bound = (6.0 / (h.embed_dim() + h.hidden) as f64).sqrt();
        assert!(a.lstm.w_i.data.iter().all(|&v| v.abs() < bound));
        assert_ne!(init_params(8, &h).lstm.w_i, a.lstm.w_i);
    }

    #[test]
    fn embed_layer_is_concatenation() {
        let p = init_params(1, &small_hyper());
        let c = LayerCode::new(1, 3, 3, 6);
        let v = embed_layer(&p, &c).unwrap();
        assert_eq!(v.len(), p.hyper.embed_dim());
        let mut manual = Vec::new();
        manual.extend_from_slice(p.type_table.row(0));
        manual.extend_from_slice(p.kernel_table.row(2));
        manual.extend_from_slice(p.kernel_table.row(2));
        manual.extend_from_slice(p.channel_table.row(5));
        assert_eq!(v, manual);
    }

    #[test]
    fn kernel_swap_symmetry() {
        let p = init_params(2, &small_hyper());
        let a = embed_layer(&p, &LayerCode::new(1, 2, 5, 4)).unwrap();
        let b = embed_layer(&p, &LayerCode::new(1, 5, 2, 4)).unwrap();
        let d = p.hyper.d_ty;
        let k = p.hyper.d_k;
        assert_eq!(a[..d], b[..d]);
        assert_eq!(a[d..d + k], b[d + k..d + 2 * k]);
        assert_eq!(a[d + k..d + 2 * k], b[d..d + k]);
        assert_eq!(a[d + 2 * k..], b[d + 2 * k..]);
    }

    #[test]
    fn default_widths_match_contract() {
        let p = init_params(3, &PeepholeHyper::default());
        assert_eq!(embed_layer(&p, &LayerCode::new(4, 1, 1, 4)).unwrap().len(), 40);
        let f = structural_feature(&p, &codes()).unwrap();
        assert_eq!(f.len(), 160);
        assert!(f.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn feature_is_order_sensitive() {
        let p = init_params(4, &small_hyper());
        let mut swapped = codes();
        swapped.swap(1, 2);
        let a = structural_feature(&p, &codes()).unwrap();
        let b = structural_feature(&p, &swapped).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn single_layer_feature_is_one_step() {
        let p = init_params(5, &small_hyper());
        let c = [LayerCode::new(1, 1, 1, 4)];
        let f = structural_feature(&p, &c).unwrap();
        let x = embed_layer(&p, &c[0]).unwrap();
        let z = vec![0.0; p.hyper.hidden];
        let (h, _) = crate::neuralcore::lstm_step(&p.lstm, &x, &z, &z).unwrap();
        assert_eq!(f, h);
    }

    #[test]
    fn predict_bounds_and_determinism() {
        let p = init_params(6, &small_hyper());
        let y = predict(&p, &codes(), 3).unwrap();
        assert!(y > 0.0 && y < 1.0);
        assert_eq!(predict(&p, &codes(), 3).unwrap(), y);
        assert!(matches!(
            predict(&p, &codes(), 0),
            Err(PredictError::EpochOutOfRange(0, _))
        ));
        assert!(matches!(
            predict(&p, &codes(), 11),
            Err(PredictError::EpochOutOfRange(11, _))
        ));
        assert!(matches!(predict(&p, &[], 1), Err(PredictError::EmptySequence)));
    }

    #[test]
    fn channel_bin_changes_prediction() {
        let p = init_params(7, &small_hyper());
        let mut alt = codes();
        alt[0].ch = 1;
        assert_ne!(predict(&p, &codes(), 2).unwrap(), predict(&p, &alt, 2).unwrap());
    }

    #[test]
    fn flatten_round_trip() {
        let mut p = init_params(8, &small_hyper());
        let flat = p.flatten_trainable();
        let orig = p.clone();
        p.set_trainable_from_flat(&flat);
        assert_eq!(p, orig);
    }
}
