use serde::{Deserialize, Serialize};

use super::ops::logistic;
use super::{NcError, Tensor};

/// The twelve LSTM tensors: per gate g an input map W^(g) [hidden, input],
/// a recurrent map U^(g) [hidden, hidden], and a bias b^(g) [hidden],
/// for the input (i), output (o), forget (f) gates and the candidate (u).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_o: Tensor,
    pub w_f: Tensor,
    pub w_u: Tensor,
    pub u_i: Tensor,
    pub u_o: Tensor,
    pub u_f: Tensor,
    pub u_u: Tensor,
    pub b_i: Tensor,
    pub b_o: Tensor,
    pub b_f: Tensor,
    pub b_u: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_i: Tensor::zeros(&[hidden, input]),
            w_o: Tensor::zeros(&[hidden, input]),
            w_f: Tensor::zeros(&[hidden, input]),
            w_u: Tensor::zeros(&[hidden, input]),
            u_i: Tensor::zeros(&[hidden, hidden]),
            u_o: Tensor::zeros(&[hidden, hidden]),
            u_f: Tensor::zeros(&[hidden, hidden]),
            u_u: Tensor::zeros(&[hidden, hidden]),
            b_i: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            b_f: Tensor::zeros(&[hidden]),
            b_u: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_i.rows()
    }

    pub fn check(&self) -> Result<(), NcError> {
        let (h, x) = (self.hidden_dim(), self.input_dim());
        let ws = [&self.w_i, &self.w_o, &self.w_f, &self.w_u];
        let us = [&self.u_i, &self.u_o, &self.u_f, &self.u_u];
        let bs = [&self.b_i, &self.b_o, &self.b_f, &self.b_u];
        for w in ws {
            if w.shape != [h, x] {
                return Err(NcError::Dim(format!("W shape {:?} != [{h}, {x}]", w.shape)));
            }
        }
        for u in us {
            if u.shape != [h, h] {
                return Err(NcError::Dim(format!("U shape {:?} != [{h}, {h}]", u.shape)));
            }
        }
        for b in bs {
            if b.shape != [h] {
                return Err(NcError::Dim(format!("b shape {:?} != [{h}]", b.shape)));
            }
        }
        Ok(())
    }
}

/// Per-step activations retained for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gate_i: Vec<f64>,
    pub gate_o: Vec<f64>,
    pub gate_f: Vec<f64>,
    pub cand: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    pub steps: Vec<LstmStepCache>,
}

/// Gradients with the same layout as `LstmParams`.
pub type LstmGrads = LstmParams;

// Four-accumulator dot product: fixed summation order (deterministic) but
// enough instruction-level parallelism for the backend to vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; 4];
    let whole = n - n % 4;
    let mut i = 0;
    while i < whole {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn gate_preact(w: &Tensor, u: &Tensor, b: &Tensor, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let hidden = w.rows();
    let mut z = b.data.clone();
    for r in 0..hidden {
        z[r] += dot(w.row(r), x) + dot(u.row(r), h_prev);
    }
    z
}

/// One LSTM cell update:
///   i = sigma(W_i x + U_i h + b_i), o, f analogous,
///   u = tanh(W_u x + U_u h + b_u),
///   c = i*u + f*c_prev, h = o*tanh(c).
pub fn lstm_step(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NcError> {
    let (h, c) = lstm_step_cached(p, x, h_prev, c_prev)?;
    let _ = c.tanh_c;
    Ok((h, c.c))
}

/// `lstm_step` that also returns the cache needed for the backward pass.
pub fn lstm_step_cached(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, LstmStepCache), NcError> {
    p.check()?;
    if x.len() != p.input_dim() || h_prev.len() != p.hidden_dim() || c_prev.len() != p.hidden_dim()
    {
        return Err(NcError::Dim(format!(
            "lstm_step: x [{}], h [{}], c [{}] vs input {} hidden {}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_dim(),
            p.hidden_dim()
        )));
    }
    Ok(step_unchecked(p, x, h_prev, c_prev))
}

// The hot path: callers have already validated shapes once per sequence.
fn step_unchecked(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, LstmStepCache) {
    let gate_i: Vec<f64> = gate_preact(&p.w_i, &p.u_i, &p.b_i, x, h_prev)
        .into_iter()
        .map(logistic)
        .collect();
    let gate_o: Vec<f64> = gate_preact(&p.w_o, &p.u_o, &p.b_o, x, h_prev)
        .into_iter()
        .map(logistic)
        .collect();
    let gate_f: Vec<f64> = gate_preact(&p.w_f, &p.u_f, &p.b_f, x, h_prev)
        .into_iter()
        .map(logistic)
        .collect();
    let cand: Vec<f64> = gate_preact(&p.w_u, &p.u_u, &p.b_u, x, h_prev)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let c: Vec<f64> = (0..p.hidden_dim())
        .map(|k| gate_i[k] * cand[k] + gate_f[k] * c_prev[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..p.hidden_dim()).map(|k| gate_o[k] * tanh_c[k]).collect();
    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gate_i,
        gate_o,
        gate_f,
        cand,
        c,
        tanh_c,
    };
    (h, cache)
}

/// Runs the cell over a whole sequence from zero state, collecting caches.
pub fn lstm_forward(p: &LstmParams, xs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmCache), NcError> {
    p.check()?;
    let hidden = p.hidden_dim();
    let input = p.input_dim();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut cache = LstmCache { steps: Vec::with_capacity(xs.len()) };
    for (t, x) in xs.iter().enumerate() {
        if x.len() != input {
            return Err(NcError::Dim(format!("lstm_forward: step {t} has dim {}", x.len())));
        }
        let (h_next, step) = step_unchecked(p, x, &h, &c);
        c = step.c.clone();
        h = h_next;
        cache.steps.push(step);
    }
    Ok((h, cache))
}

fn rank1_acc(m: &mut Tensor, dz: &[f64], v: &[f64]) {
    for (r, &g) in dz.iter().enumerate() {
        let row = m.row_mut(r);
        for (c, &vv) in v.iter().enumerate() {
            row[c] += g * vv;
        }
    }
}

fn transpose_vec(m: &Tensor, dz: &[f64], out: &mut [f64]) {
    for (r, &g) in dz.iter().enumerate() {
        for (c, o) in m.row(r).iter().zip(out.iter_mut()) {
            *o += c * g;
        }
    }
}

/// Backpropagation through time, seeded with the gradient wrt the final
/// hidden state. Accumulates into `grads` and returns per-step input grads.
pub fn lstm_backward(
    p: &LstmParams,
    cache: &LstmCache,
    dh_final: &[f64],
    grads: &mut LstmGrads,
) -> Vec<Vec<f64>> {
    let hidden = p.hidden_dim();
    let mut dxs = vec![vec![0.0; p.input_dim()]; cache.steps.len()];
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; hidden];

    for (t, step) in cache.steps.iter().enumerate().rev() {
        let mut da_i = vec![0.0; hidden];
        let mut da_o = vec![0.0; hidden];
        let mut da_f = vec![0.0; hidden];
        let mut da_u = vec![0.0; hidden];
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let d_o = dh[k] * step.tanh_c[k];
            let dck = dc[k] + dh[k] * step.gate_o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            let d_i = dck * step.cand[k];
            let d_u = dck * step.gate_i[k];
            let d_f = dck * step.c_prev[k];
            dc_prev[k] = dck * step.gate_f[k];
            da_i[k] = d_i * step.gate_i[k] * (1.0 - step.gate_i[k]);
            da_o[k] = d_o * step.gate_o[k] * (1.0 - step.gate_o[k]);
            da_f[k] = d_f * step.gate_f[k] * (1.0 - step.gate_f[k]);
            da_u[k] = d_u * (1.0 - step.cand[k] * step.cand[k]);
        }

        rank1_acc(&mut grads.w_i, &da_i, &step.x);
        rank1_acc(&mut grads.w_o, &da_o, &step.x);
        rank1_acc(&mut grads.w_f, &da_f, &step.x);
        rank1_acc(&mut grads.w_u, &da_u, &step.x);
        rank1_acc(&mut grads.u_i, &da_i, &step.h_prev);
        rank1_acc(&mut grads.u_o, &da_o, &step.h_prev);
        rank1_acc(&mut grads.u_f, &da_f, &step.h_prev);
        rank1_acc(&mut grads.u_u, &da_u, &step.h_prev);
        for k in 0..hidden {
            grads.b_i.data[k] += da_i[k];
            grads.b_o.data[k] += da_o[k];
            grads.b_f.data[k] += da_f[k];
            grads.b_u.data[k] += da_u[k];
        }

        let dx = &mut dxs[t];
        transpose_vec(&p.w_i, &da_i, dx);
        transpose_vec(&p.w_o, &da_o, dx);
        transpose_vec(&p.w_f, &da_f, dx);
        transpose_vec(&p.w_u, &da_u, dx);

        let mut dh_prev = vec![0.0; hidden];
        transpose_vec(&p.u_i, &da_i, &mut dh_prev);
        transpose_vec(&p.u_o, &da_o, &mut dh_prev);
        transpose_vec(&p.u_f, &da_f, &mut dh_prev);
        transpose_vec(&p.u_u, &da_u, &mut dh_prev);

        dh = dh_prev;
        dc = dc_prev;
    }
    dxs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(input: usize, hidden: usize, seed: u64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::zeros(input, hidden);
        for t in [
            &mut p.w_i, &mut p.w_o, &mut p.w_f, &mut p.w_u, &mut p.u_i, &mut p.u_o, &mut p.u_f,
            &mut p.u_u, &mut p.b_i, &mut p.b_o, &mut p.b_f, &mut p.b_u,
        ] {
            for v in &mut t.data {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        p
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let p = LstmParams::zeros(3, 4);
        let (h, c) = lstm_step(&p, &[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn saturated_candidate_bias() {
        // zero weights, large positive candidate bias: i = f = o = 0.5,
        // u -> 1, so c = 0.5 and h = 0.5 * tanh(0.5)
        let mut p = LstmParams::zeros(2, 3);
        for v in &mut p.b_u.data {
            *v = 30.0;
        }
        let (h, c) = lstm_step(&p, &[0.0; 2], &[0.0; 3], &[0.0; 3]).unwrap();
        for k in 0..3 {
            assert!((c[k] - 0.5).abs() < 1e-9, "c = {}", c[k]);
            assert!((h[k] - 0.5 * 0.5f64.tanh()).abs() < 1e-9, "h = {}", h[k]);
            assert!((h[k] - 0.2311).abs() < 1e-4);
        }
    }

    /// Scalar re-evaluation of the cell equations, written independently of
    /// the vectorized path.
    fn scalar_oracle(
        p: &LstmParams,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hid = p.hidden_dim();
        let pre = |w: &Tensor, u: &Tensor, b: &Tensor, k: usize| -> f64 {
            let mut z = b.data[k];
            for (j, &xv) in x.iter().enumerate() {
                z += w.data[k * w.cols() + j] * xv;
            }
            for (j, &hv) in h_prev.iter().enumerate() {
                z += u.data[k * u.cols() + j] * hv;
            }
            z
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h = vec![0.0; hid];
        let mut c = vec![0.0; hid];
        for k in 0..hid {
            let i = sig(pre(&p.w_i, &p.u_i, &p.b_i, k));
            let o = sig(pre(&p.w_o, &p.u_o, &p.b_o, k));
            let f = sig(pre(&p.w_f, &p.u_f, &p.b_f, k));
            let u = pre(&p.w_u, &p.u_u, &p.b_u, k).tanh();
            c[k] = i * u + f * c_prev[k];
            h[k] = o * c[k].tanh();
        }
        (h, c)
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let p = random_params(5, 7, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h0: Vec<f64> = (0..7).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let c0: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (h, c) = lstm_step(&p, &x, &h0, &c0).unwrap();
        let (he, ce) = scalar_oracle(&p, &x, &h0, &c0);
        for k in 0..7 {
            assert!((h[k] - he[k]).abs() < 1e-12);
            assert!((c[k] - ce[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn gates_and_hidden_are_bounded() {
        let p = random_params(4, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut h = vec![0.0; 6];
        let mut c = vec![0.0; 6];
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (h2, cache) = lstm_step_cached(&p, &x, &h, &c).unwrap();
            for k in 0..6 {
                for g in [&cache.gate_i, &cache.gate_o, &cache.gate_f] {
                    assert!(g[k] > 0.0 && g[k] < 1.0);
                }
                assert!(h2[k].abs() < 1.0);
            }
            c = cache.c;
            h = h2;
        }
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let p = LstmParams::zeros(3, 4);
        assert!(lstm_step(&p, &[0.0; 2], &[0.0; 4], &[0.0; 4]).is_err());
        assert!(lstm_step(&p, &[0.0; 3], &[0.0; 5], &[0.0; 4]).is_err());
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let input = 3;
        let hidden = 4;
        let p = random_params(input, hidden, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let xs: Vec<Vec<f64>> =
            (0..6).map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // scalar loss: sum of final hidden state
        let loss = |p: &LstmParams| -> f64 {
            let (h, _) = lstm_forward(p, &xs).unwrap();
            h.iter().sum()
        };
        let (h, cache) = lstm_forward(&p, &xs).unwrap();
        let mut grads = LstmGrads::zeros(input, hidden);
        lstm_backward(&p, &cache, &vec![1.0; h.len()], &mut grads);

        let eps = 1e-6;
        let tensors: Vec<(&Tensor, &Tensor)> = vec![
            (&p.w_i, &grads.w_i),
            (&p.u_f, &grads.u_f),
            (&p.b_u, &grads.b_u),
            (&p.w_o, &grads.w_o),
        ];
        for (ti, (t, g)) in tensors.iter().enumerate() {
            for k in 0..t.len() {
                let mut pp = p.clone();
                let mut pm = p.clone();
                match ti {
                    0 => {
                        pp.w_i.data[k] += eps;
                        pm.w_i.data[k] -= eps;
                    }
                    1 => {
                        pp.u_f.data[k] += eps;
                        pm.u_f.data[k] -= eps;
                    }
                    2 => {
                        pp.b_u.data[k] += eps;
                        pm.b_u.data[k] -= eps;
                    }
                    _ => {
                        pp.w_o.data[k] += eps;
                        pm.w_o.data[k] -= eps;
                    }
                }
                let num = (loss(&pp) - loss(&pm)) / (2.0 * eps);
                let a = g.data[k];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-6, "tensor {ti} idx {k}: analytic {a} numeric {num}");
            }
        }
    }
}
