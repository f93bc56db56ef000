use crate::layercode::{dequantize_bin, quantize_ratio, LayerKind, NetworkArch};

use super::HarnessError;

/// Deterministic pseudo-accuracy standing in for an actually trained
/// network. The saturation level depends on simple structural statistics;
/// the curve factor rises monotonically toward it:
///
///   s    = 0.5 + 0.35 * tanh( 0.4 * min(n_bn/n_conv, 1) * (n_conv/10)
///                           + 0.25 * clip(log2(rho), -2, 2) / 2
///                           - 0.3 * depth/30
///                           + 0.2 * kbar/25
///                           + 0.15 * n_act/depth )
///   a(t) = s * (1 - 0.6 * exp(-3 t / T))
///
/// where rho is the product of the quantized conv channel ratios and kbar
/// the mean conv kernel area.
pub fn oracle_accuracy(arch: &NetworkArch, t: u32, t_total: u32) -> Result<f64, HarnessError> {
    if t < 1 || t > t_total {
        return Err(HarnessError::EpochOutOfRange(t, t_total));
    }
    let depth = arch.layers.len() as f64;
    let mut n_conv = 0.0;
    let mut n_bn = 0.0;
    let mut n_act = 0.0;
    let mut kernel_area = 0.0;
    let mut log_rho = 0.0;
    for l in &arch.layers {
        match l.kind {
            LayerKind::Conv => {
                n_conv += 1.0;
                kernel_area += (l.kernel_w * l.kernel_h) as f64;
                let ratio = dequantize_bin(quantize_ratio(l.channel_ratio)?)?;
                log_rho += ratio.log2();
            }
            LayerKind::BatchNorm => n_bn += 1.0,
            k if k.is_activation() => n_act += 1.0,
            _ => {}
        }
    }
    if n_conv == 0.0 || depth == 0.0 {
        return Err(HarnessError::BadSample("oracle needs a non-empty conv network".into()));
    }
    let kbar = kernel_area / n_conv;
    let z = 0.4 * (n_bn / n_conv).min(1.0) * (n_conv / 10.0)
        + 0.25 * log_rho.clamp(-2.0, 2.0) / 2.0
        - 0.3 * depth / 30.0
        + 0.2 * kbar / 25.0
        + 0.15 * n_act / depth;
    let s = 0.5 + 0.35 * z.tanh();
    Ok(s * (1.0 - 0.6 * (-3.0 * f64::from(t) / f64::from(t_total)).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_arch, SkeletonConfig};
    use crate::layercode::{ArchMeta, LayerSpec};

    fn toy_arch() -> NetworkArch {
        NetworkArch {
            meta: ArchMeta::default(),
            layers: vec![
                LayerSpec::conv(3, 3, 2.0),
                LayerSpec::unary(LayerKind::BatchNorm),
                LayerSpec::unary(LayerKind::ReLU),
                LayerSpec::conv(1, 1, 0.5),
                LayerSpec::pool(LayerKind::MaxPool, 2, 2),
            ],
        }
    }

    #[test]
    fn curve_grows_toward_saturation() {
        let arch = toy_arch();
        let t_total = 60;
        let a1 = oracle_accuracy(&arch, 1, t_total).unwrap();
        let af = oracle_accuracy(&arch, t_total, t_total).unwrap();
        assert!(af > a1);
        let mut last = 0.0;
        for t in 1..=t_total {
            let a = oracle_accuracy(&arch, t, t_total).unwrap();
            assert!(a > last);
            last = a;
        }
    }

    #[test]
    fn values_stay_in_open_unit_interval() {
        let cfg = SkeletonConfig { rng_seed: 5, ..SkeletonConfig::default() };
        for i in 0..200 {
            let arch = generate_arch(i, &cfg).unwrap();
            for t in [1, 10, 60] {
                let a = oracle_accuracy(&arch, t, 60).unwrap();
                assert!(a > 0.0 && a < 1.0, "a = {a}");
            }
        }
    }

    #[test]
    fn hand_computed_value() {
        // toy_arch: depth 5, n_conv 2, n_bn 1, n_act 1, kbar (9+1)/2 = 5,
        // log2(rho) = log2(2.0 * 0.5) = 0
        let z: f64 =
            0.4 * 0.5 * 0.2 + 0.25 * 0.0 / 2.0 - 0.3 * 5.0 / 30.0 + 0.2 * 5.0 / 25.0 + 0.15 / 5.0;
        let s = 0.5 + 0.35 * z.tanh();
        let expected = s * (1.0 - 0.6 * (-3.0f64).exp());
        let got = oracle_accuracy(&toy_arch(), 60, 60).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn epoch_bounds_enforced() {
        let arch = toy_arch();
        assert!(oracle_accuracy(&arch, 0, 60).is_err());
        assert!(oracle_accuracy(&arch, 61, 60).is_err());
    }
}
