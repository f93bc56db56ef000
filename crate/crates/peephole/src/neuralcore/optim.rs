use serde::{Deserialize, Serialize};

use super::NcError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> SgdHyper {
        SgdHyper { lr: 0.01, momentum: 0.9, weight_decay: 1e-4 }
    }
}

/// Per-parameter momentum buffers, flattened in the caller's tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub hyper: SgdHyper,
}

impl OptState {
    pub fn new(param_lens: &[usize], hyper: SgdHyper) -> OptState {
        OptState { velocity: param_lens.iter().map(|&n| vec![0.0; n]).collect(), hyper }
    }
}

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v,
/// applied elementwise to each (param, grad) pair.
pub fn sgd_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptState,
) -> Result<(), NcError> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(NcError::Dim(format!(
            "sgd_step: {} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let h = state.hyper;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(NcError::Dim(format!(
                "sgd_step tensor: param {} grad {} velocity {}",
                p.len(),
                g.len(),
                v.len()
            )));
        }
        for k in 0..p.len() {
            v[k] = h.momentum * v[k] + g[k] + h.weight_decay * p[k];
            p[k] -= h.lr * v[k];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_steps(hyper: SgdHyper, grad: f64, steps: usize) -> f64 {
        let mut p = vec![1.0];
        let g = vec![grad];
        let mut state = OptState::new(&[1], hyper);
        for _ in 0..steps {
            sgd_step(&mut [&mut p], &[&g], &mut state).unwrap();
        }
        p[0]
    }

    #[test]
    fn zero_lr_is_identity() {
        let h = SgdHyper { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 };
        assert_eq!(run_steps(h, 5.0, 3), 1.0);
    }

    #[test]
    fn plain_gradient_descent() {
        let h = SgdHyper { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        assert!((run_steps(h, 2.0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls_as_expected() {
        // constant grad g for two steps: displacement = lr*(g + (1+m)g)
        let h = SgdHyper { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        let p = run_steps(h, 1.0, 2);
        let expected = 1.0 - 0.1 * (1.0 + 1.9);
        assert!((p - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let h = SgdHyper { lr: 0.5, momentum: 0.9, weight_decay: 0.0 };
        assert_eq!(run_steps(h, 0.0, 10), 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![1.0, 2.0];
        let g = vec![0.1];
        let mut state = OptState::new(&[2], SgdHyper::default());
        assert!(sgd_step(&mut [&mut p], &[&g], &mut state).is_err());
    }
}
