use serde::{Deserialize, Serialize};

use crate::layercode::encode_network;
use crate::predictor::{predict, PeepholeParams};

use super::{HarnessError, Sample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} values")]
    TooShort(usize),
    #[error("Kendall's tau undefined: all pairs tied in one list")]
    AllTied,
    #[error("R^2 undefined: zero variance in actual values")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub tau: f64,
    pub r2: f64,
}

/// Mean squared error.
pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != actual.len() {
        return Err(MetricError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::TooShort(1));
    }
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(s / pred.len() as f64)
}

fn count_tied_pairs(sorted: &[f64]) -> u64 {
    let mut ties = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    ties + run * (run - 1) / 2
}

fn merge_count(vals: &mut Vec<f64>) -> u64 {
    // bottom-up merge sort counting inversions (strict)
    let n = vals.len();
    let mut buf = vals.clone();
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo + width < n {
            let mid = lo + width;
            let hi = (mid + width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if vals[i] <= vals[j] {
                    buf[k] = vals[i];
                    i += 1;
                } else {
                    inversions += (mid - i) as u64;
                    buf[k] = vals[j];
                    j += 1;
                }
                k += 1;
            }
            while i < mid {
                buf[k] = vals[i];
                i += 1;
                k += 1;
            }
            while j < hi {
                buf[k] = vals[j];
                j += 1;
                k += 1;
            }
            vals[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    inversions
}

/// Tie-aware Kendall's tau (tau-b): (P - Q) / sqrt((P+Q+T_p)(P+Q+T_a)),
/// computed in O(n log n) via sorting and inversion counting.
pub fn kendall_tau(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != actual.len() {
        return Err(MetricError::LengthMismatch(pred.len(), actual.len()));
    }
    let n = pred.len();
    if n < 2 {
        return Err(MetricError::TooShort(2));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        pred[a]
            .partial_cmp(&pred[b])
            .unwrap()
            .then(actual[a].partial_cmp(&actual[b]).unwrap())
    });

    let total = n as u64 * (n as u64 - 1) / 2;

    // pairs tied in pred, and tied in both
    let sorted_pred: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
    let pred_ties = count_tied_pairs(&sorted_pred);
    let mut both_ties = 0u64;
    let mut run = 1u64;
    for w in idx.windows(2) {
        if pred[w[0]] == pred[w[1]] && actual[w[0]] == actual[w[1]] {
            run += 1;
        } else {
            both_ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    both_ties += run * (run - 1) / 2;

    let mut sorted_actual: Vec<f64> = actual.to_vec();
    sorted_actual.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let actual_ties = count_tied_pairs(&sorted_actual);

    if pred_ties == total || actual_ties == total {
        return Err(MetricError::AllTied);
    }

    // actual values in (pred, actual) order: inversions = discordant pairs
    let mut seq: Vec<f64> = idx.iter().map(|&i| actual[i]).collect();
    let discordant = merge_count(&mut seq);

    let con_minus_dis =
        total as f64 - pred_ties as f64 - actual_ties as f64 + both_ties as f64
            - 2.0 * discordant as f64;
    let denom = (((total - pred_ties) as f64) * ((total - actual_ties) as f64)).sqrt();
    Ok((con_minus_dis / denom).clamp(-1.0, 1.0))
}

/// Coefficient of determination: 1 - SS_res / SS_tot.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != actual.len() {
        return Err(MetricError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.len() < 2 {
        return Err(MetricError::TooShort(2));
    }
    let mean: f64 = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Predicts every sample at its own T and scores against y(T).
pub fn evaluate(params: &PeepholeParams, data: &[Sample]) -> Result<Metrics, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::BadSample("evaluate needs a non-empty dataset".into()));
    }
    use rayon::prelude::*;
    let pairs: Vec<(f64, f64)> = data
        .par_iter()
        .map(|s| -> Result<(f64, f64), HarnessError> {
            let codes = encode_network(&s.arch)?;
            Ok((predict(params, &codes, s.epochs_t as usize)?, s.final_acc()?))
        })
        .collect::<Result<_, _>>()?;
    let (preds, actuals): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(Metrics {
        mse: mse(&preds, &actuals)?,
        tau: kendall_tau(&preds, &actuals)?,
        r2: r_squared(&preds, &actuals)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive pair-enumeration tau-b, kept deliberately separate from
    /// the sorting implementation.
    pub fn tau_brute(pred: &[f64], actual: &[f64]) -> Option<f64> {
        let n = pred.len();
        let (mut p, mut q, mut tp, mut ta) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = pred[i] - pred[j];
                let dy = actual[i] - actual[j];
                if dx == 0.0 && dy == 0.0 {
                    continue;
                } else if dx == 0.0 {
                    tp += 1.0;
                } else if dy == 0.0 {
                    ta += 1.0;
                } else if dx.signum() == dy.signum() {
                    p += 1.0;
                } else {
                    q += 1.0;
                }
            }
        }
        let denom = ((p + q + tp) * (p + q + ta)).sqrt();
        if denom == 0.0 {
            None
        } else {
            Some((p - q) / denom)
        }
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!((mse(&[0.8, 0.6], &[0.7, 0.7]).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tau_perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&x, &rev).unwrap(), -1.0);
    }

    #[test]
    fn tau_tied_example_matches_brute_force() {
        let pred = [1.0, 2.0, 2.0, 3.0];
        let actual = [1.0, 3.0, 2.0, 4.0];
        let fast = kendall_tau(&pred, &actual).unwrap();
        let brute = tau_brute(&pred, &actual).unwrap();
        assert!((fast - brute).abs() < 1e-15, "{fast} vs {brute}");
    }

    #[test]
    fn tau_all_tied_is_an_error() {
        assert!(matches!(
            kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::AllTied)
        ));
    }

    #[test]
    fn tau_fast_equals_brute_on_random_tied_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(2..=8);
            // few distinct values to force plenty of ties
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            let actual: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            match (kendall_tau(&pred, &actual), tau_brute(&pred, &actual)) {
                (Ok(fast), Some(brute)) => {
                    assert!((fast - brute).abs() < 1e-12, "{pred:?} {actual:?}")
                }
                (Err(MetricError::AllTied), None) => {}
                (a, b) => panic!("disagreement on {pred:?}/{actual:?}: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn r_squared_cases() {
        let a = [0.2, 0.5, 0.8];
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        let mean = [0.5, 0.5, 0.5];
        assert!(r_squared(&mean, &a).unwrap().abs() < 1e-15);
        // hand case: pred [1,2,4], actual [1,2,3]: ss_res = 1, ss_tot = 2
        assert!((r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            r_squared(&[1.0, 2.0], &[3.0, 3.0]),
            Err(MetricError::ZeroVariance)
        ));
    }
}
