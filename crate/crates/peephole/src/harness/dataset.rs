use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::layercode::{validate_arch, NetworkArch};

use super::{oracle_accuracy, HarnessError};

/// Provenance of a sample's labels: how the (real or synthetic) trainer
/// that produced the curve was configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerMeta {
    pub lr_schedule: String,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One (architecture, learning curve) pair. Either the full curve or just
/// the final accuracy may be present; training only ever consumes y(T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub arch: NetworkArch,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_accuracy: Option<f64>,
    #[serde(rename = "T")]
    pub epochs_t: u32,
    pub trainer_meta: TrainerMeta,
}

impl Sample {
    /// y(T), the supervision target.
    pub fn final_acc(&self) -> Result<f64, HarnessError> {
        if let Some(a) = self.final_accuracy {
            return Ok(a);
        }
        self.curve
            .as_ref()
            .and_then(|c| c.last().copied())
            .ok_or_else(|| HarnessError::BadSample("no curve or final accuracy".into()))
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.epochs_t < 1 {
            return Err(HarnessError::BadSample("T must be >= 1".into()));
        }
        if let Some(curve) = &self.curve {
            if curve.len() != self.epochs_t as usize {
                return Err(HarnessError::BadSample(format!(
                    "curve length {} != T = {}",
                    curve.len(),
                    self.epochs_t
                )));
            }
            // only the final entry is a training input; earlier entries may be
            // withheld (NaN) by instrumented callers
            if let Some(&last) = curve.last() {
                if !(0.0..=1.0).contains(&last) {
                    return Err(HarnessError::BadSample(format!("y(T) = {last} not in [0,1]")));
                }
            }
        }
        if let Some(a) = self.final_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(HarnessError::BadSample(format!("final accuracy {a} not in [0,1]")));
            }
        }
        if self.curve.is_none() && self.final_accuracy.is_none() {
            return Err(HarnessError::BadSample("no curve or final accuracy".into()));
        }
        let violations = validate_arch(&self.arch);
        if let Some(v) = violations.first() {
            return Err(HarnessError::BadSample(v.to_string()));
        }
        Ok(())
    }
}

/// Attaches full synthetic curves a(1..T) to every architecture.
pub fn label_dataset(archs: &[NetworkArch], t_total: u32) -> Result<Vec<Sample>, HarnessError> {
    archs
        .iter()
        .map(|arch| {
            let curve = (1..=t_total)
                .map(|t| oracle_accuracy(arch, t, t_total))
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(Sample {
                arch: arch.clone(),
                curve: Some(curve),
                final_accuracy: None,
                epochs_t: t_total,
                trainer_meta: TrainerMeta {
                    lr_schedule: "synthetic-oracle-v1".to_string(),
                    momentum: 0.9,
                    weight_decay: 1e-4,
                },
            })
        })
        .collect()
}

/// Parses one JSONL dataset line (the fuzzable entry point).
pub fn parse_sample(line: &str) -> Result<Sample, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample =
            parse_sample(line).map_err(|e| HarnessError::Parse { line: i + 1, msg: e.to_string() })?;
        sample
            .check()
            .map_err(|e| HarnessError::Parse { line: i + 1, msg: e.to_string() })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<(), HarnessError> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s).expect("sample serialization cannot fail");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_archs, SkeletonConfig};

    #[test]
    fn labeling_is_deterministic_and_complete() {
        let cfg = SkeletonConfig { rng_seed: 3, ..SkeletonConfig::default() };
        let archs = generate_archs(10, &cfg).unwrap();
        let a = label_dataset(&archs, 20).unwrap();
        let b = label_dataset(&archs, 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for (s, arch) in a.iter().zip(&archs) {
            let curve = s.curve.as_ref().unwrap();
            assert_eq!(curve.len(), 20);
            assert_eq!(curve[4], oracle_accuracy(arch, 5, 20).unwrap());
            s.check().unwrap();
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = SkeletonConfig { rng_seed: 4, ..SkeletonConfig::default() };
        let samples = label_dataset(&generate_archs(5, &cfg).unwrap(), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&samples, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, samples);
        // byte-stable output
        let bytes1 = fs::read(&path).unwrap();
        write_dataset(&back, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes1);
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"not\": \"a sample\"}\n").unwrap();
        match read_dataset(&path) {
            Err(HarnessError::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_accuracy_rejected() {
        let cfg = SkeletonConfig::default();
        let mut samples = label_dataset(&generate_archs(1, &cfg).unwrap(), 5).unwrap();
        samples[0].curve.as_mut().unwrap()[4] = 1.5;
        assert!(samples[0].check().is_err());
    }
}
