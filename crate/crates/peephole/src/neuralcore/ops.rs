use super::{NcError, Tensor};

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// y = Wx + b for a [m, n] weight matrix.
pub fn affine(x: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>, NcError> {
    if w.shape.len() != 2 || w.cols() != x.len() || w.rows() != b.len() {
        return Err(NcError::Dim(format!(
            "affine: W {:?}, x [{}], b [{}]",
            w.shape,
            x.len(),
            b.len()
        )));
    }
    let mut y = b.to_vec();
    for r in 0..w.rows() {
        let row = w.row(r);
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        y[r] += acc;
    }
    Ok(y)
}

/// Accumulates dW += dy x^T, db += dy and returns dx = W^T dy.
pub fn affine_backward(
    x: &[f64],
    w: &Tensor,
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut [f64],
) -> Vec<f64> {
    debug_assert_eq!(w.shape, dw.shape);
    debug_assert_eq!(dy.len(), w.rows());
    let mut dx = vec![0.0; x.len()];
    for r in 0..w.rows() {
        let g = dy[r];
        db[r] += g;
        let wrow = w.row(r);
        let dwrow = dw.row_mut(r);
        for c in 0..x.len() {
            dwrow[c] += g * x[c];
            dx[c] += wrow[c] * g;
        }
    }
    dx
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect()
}

/// Smooth L1 with the standard unit transition point:
/// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, d = pred - target.
pub fn smooth_l1(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// d/dpred of `smooth_l1`.
pub fn smooth_l1_grad(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_zero() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = [3.0, -2.0];
        assert_eq!(affine(&x, &w, &[0.0, 0.0]).unwrap(), vec![3.0, -2.0]);
        assert_eq!(affine(&[0.0, 0.0], &w, &[5.0, 6.0]).unwrap(), vec![5.0, 6.0]);
    }

    #[test]
    fn affine_hand_case() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(affine(&[1.0, 1.0], &w, &[0.0, 1.0]).unwrap(), vec![3.0, 8.0]);
    }

    #[test]
    fn affine_dimension_error() {
        let w = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(affine(&[1.0, 1.0], &w, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(1.0, 1.0), 0.0);
        assert!((smooth_l1(0.5, 0.0) - 0.125).abs() < 1e-15);
        // continuity at |d| = 1: both branches give 0.5
        assert!((smooth_l1(1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((smooth_l1(3.0, 0.0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_grad_continuous_at_unit() {
        let below = smooth_l1_grad(1.0 - 1e-12, 0.0);
        let above = smooth_l1_grad(1.0 + 1e-12, 0.0);
        assert!((below - above).abs() < 1e-9);
        assert_eq!(smooth_l1_grad(-2.0, 0.0), -1.0);
    }

    #[test]
    fn affine_backward_matches_finite_differences() {
        let w = Tensor::from_vec(&[2, 3], vec![0.3, -0.1, 0.5, 0.2, 0.7, -0.4]).unwrap();
        let b = [0.1, -0.2];
        let x = [0.5, -1.5, 2.0];
        let dy = [1.0, -2.0];
        let mut dw = w.zeros_like();
        let mut db = [0.0; 2];
        let dx = affine_backward(&x, &w, &dy, &mut dw, &mut db);

        let loss = |w: &Tensor, b: &[f64], x: &[f64]| -> f64 {
            let y = affine(x, w, b).unwrap();
            y[0] * dy[0] + y[1] * dy[1]
        };
        let eps = 1e-6;
        for k in 0..w.len() {
            let mut wp = w.clone();
            wp.data[k] += eps;
            let mut wm = w.clone();
            wm.data[k] -= eps;
            let num = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * eps);
            assert!((num - dw.data[k]).abs() < 1e-8);
        }
        for k in 0..x.len() {
            let mut xp = x;
            xp[k] += eps;
            let mut xm = x;
            xm[k] -= eps;
            let num = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * eps);
            assert!((num - dx[k]).abs() < 1e-8);
        }
        assert_eq!(db, dy);
    }
}
