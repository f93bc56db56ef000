//! Architecture domain types and the four-integer layer code.
//!
//! Every layer of a sequential CNN is described by a `LayerSpec` and encoded
//! into a `LayerCode` of four integers: type id (TY), kernel width (KW),
//! kernel height (KH), and a quantized output/input channel-ratio bin (CH).

use serde::{Deserialize, Serialize};
use std::fmt;

/// Centers of the 8 channel-ratio quantization bins, in ascending order.
pub const RATIO_BINS: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0];

/// Layer kinds representable by the code space. Classifier (linear) layers
/// are deliberately unrepresentable; encoded sequences end at the layer
/// feeding the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    #[serde(rename = "maxpool")]
    MaxPool,
    #[serde(rename = "avgpool")]
    AvgPool,
    #[serde(rename = "relu")]
    ReLU,
    Sigmoid,
    Tanh,
    #[serde(rename = "bn")]
    BatchNorm,
}

impl LayerKind {
    /// Type id per the coding table: Conv=1 .. BatchNorm=7.
    pub fn type_id(self) -> u8 {
        match self {
            LayerKind::Conv => 1,
            LayerKind::MaxPool => 2,
            LayerKind::AvgPool => 3,
            LayerKind::ReLU => 4,
            LayerKind::Sigmoid => 5,
            LayerKind::Tanh => 6,
            LayerKind::BatchNorm => 7,
        }
    }

    pub fn from_type_id(ty: u8) -> Option<LayerKind> {
        Some(match ty {
            1 => LayerKind::Conv,
            2 => LayerKind::MaxPool,
            3 => LayerKind::AvgPool,
            4 => LayerKind::ReLU,
            5 => LayerKind::Sigmoid,
            6 => LayerKind::Tanh,
            7 => LayerKind::BatchNorm,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::AvgPool => "avgpool",
            LayerKind::ReLU => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Tanh => "tanh",
            LayerKind::BatchNorm => "bn",
        }
    }

    pub fn is_activation(self) -> bool {
        matches!(self, LayerKind::ReLU | LayerKind::Sigmoid | LayerKind::Tanh)
    }

    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }
}

/// Semantic description of a single layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(rename = "kw")]
    pub kernel_w: u32,
    #[serde(rename = "kh")]
    pub kernel_h: u32,
    /// Output/input channel ratio.
    #[serde(rename = "ratio")]
    pub channel_ratio: f64,
}

impl LayerSpec {
    pub fn conv(kernel_w: u32, kernel_h: u32, channel_ratio: f64) -> LayerSpec {
        LayerSpec { kind: LayerKind::Conv, kernel_w, kernel_h, channel_ratio }
    }

    pub fn pool(kind: LayerKind, kernel_w: u32, kernel_h: u32) -> LayerSpec {
        debug_assert!(kind.is_pool());
        LayerSpec { kind, kernel_w, kernel_h, channel_ratio: 1.0 }
    }

    /// A 1x1 layer with ratio 1 (activations and batch norm).
    pub fn unary(kind: LayerKind) -> LayerSpec {
        LayerSpec { kind, kernel_w: 1, kernel_h: 1, channel_ratio: 1.0 }
    }

    /// Checks the coding-table row for this layer's kind, returning the first
    /// violated field.
    pub fn check(&self) -> Result<(), CodeError> {
        let err = |field: &'static str, detail: String| {
            Err(CodeError::InvalidSpec { kind: self.kind, field, detail })
        };
        match self.kind {
            LayerKind::Conv => {
                if !(1..=5).contains(&self.kernel_w) {
                    return err("kernel_w", format!("{} not in 1..=5", self.kernel_w));
                }
                if !(1..=5).contains(&self.kernel_h) {
                    return err("kernel_h", format!("{} not in 1..=5", self.kernel_h));
                }
                if !self.channel_ratio.is_finite()
                    || self.channel_ratio < RATIO_BINS[0]
                    || self.channel_ratio > RATIO_BINS[7]
                {
                    return err(
                        "channel_ratio",
                        format!("{} not in [0.25, 3.0]", self.channel_ratio),
                    );
                }
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                if !(2..=5).contains(&self.kernel_w) {
                    return err("kernel_w", format!("{} not in 2..=5", self.kernel_w));
                }
                if !(2..=5).contains(&self.kernel_h) {
                    return err("kernel_h", format!("{} not in 2..=5", self.kernel_h));
                }
                if self.channel_ratio != 1.0 {
                    return err("channel_ratio", format!("{} != 1.0", self.channel_ratio));
                }
            }
            _ => {
                if self.kernel_w != 1 {
                    return err("kernel_w", format!("{} != 1", self.kernel_w));
                }
                if self.kernel_h != 1 {
                    return err("kernel_h", format!("{} != 1", self.kernel_h));
                }
                if self.channel_ratio != 1.0 {
                    return err("channel_ratio", format!("{} != 1.0", self.channel_ratio));
                }
            }
        }
        Ok(())
    }
}

/// The four-integer code (TY, KW, KH, CH). CH is a 1-based bin index into
/// `RATIO_BINS`; 0 is kept free as a padding sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerCode {
    pub ty: u8,
    pub kw: u8,
    pub kh: u8,
    pub ch: u8,
}

impl LayerCode {
    pub fn new(ty: u8, kw: u8, kh: u8, ch: u8) -> LayerCode {
        LayerCode { ty, kw, kh, ch }
    }

    pub fn check(&self) -> Result<(), CodeError> {
        let kind = LayerKind::from_type_id(self.ty)
            .ok_or(CodeError::InvalidCode { code: *self, field: "ty" })?;
        let bad = |field| Err(CodeError::InvalidCode { code: *self, field });
        match kind {
            LayerKind::Conv => {
                if !(1..=5).contains(&self.kw) {
                    return bad("kw");
                }
                if !(1..=5).contains(&self.kh) {
                    return bad("kh");
                }
                if !(1..=8).contains(&self.ch) {
                    return bad("ch");
                }
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                if !(2..=5).contains(&self.kw) {
                    return bad("kw");
                }
                if !(2..=5).contains(&self.kh) {
                    return bad("kh");
                }
                if self.ch != 4 {
                    return bad("ch");
                }
            }
            _ => {
                if self.kw != 1 {
                    return bad("kw");
                }
                if self.kh != 1 {
                    return bad("kh");
                }
                if self.ch != 4 {
                    return bad("ch");
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LayerCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.ty, self.kw, self.kh, self.ch)
    }
}

/// Provenance metadata carried alongside a generated architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchMeta {
    pub dataset_tag: String,
    pub blocks_per_stage: u32,
    pub stem_channels: u32,
    pub seed: u64,
}

impl Default for ArchMeta {
    fn default() -> ArchMeta {
        ArchMeta {
            dataset_tag: "cifar10".to_string(),
            blocks_per_stage: 2,
            stem_channels: 16,
            seed: 0,
        }
    }
}

/// An ordered layer sequence assembled from blocks via the skeleton.
/// The first layer is the stem convolution; the classifier and the final
/// global average pooling are not part of the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub meta: ArchMeta,
    pub layers: Vec<LayerSpec>,
}

impl NetworkArch {
    /// Parses the JSON architecture file format. Unknown layer kinds and
    /// unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<NetworkArch, CodeError> {
        serde_json::from_str(text).map_err(|e| CodeError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("arch serialization cannot fail")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodeError {
    #[error("invalid ratio {0}: must be positive and finite")]
    InvalidRatio(f64),
    #[error("invalid bin index {0}: must be in 1..=8")]
    InvalidBin(u8),
    #[error("{kind:?} layer: {field} out of range ({detail})")]
    InvalidSpec { kind: LayerKind, field: &'static str, detail: String },
    #[error("invalid layer code {code}: field {field}")]
    InvalidCode { code: LayerCode, field: &'static str },
    #[error("layer {index}: {source}")]
    AtLayer { index: usize, source: Box<CodeError> },
    #[error("empty architecture")]
    EmptyArch,
    #[error("architecture must start with a convolution, found {0:?}")]
    BadStem(LayerKind),
    #[error("malformed architecture file: {0}")]
    Parse(String),
}

/// Quantizes a channel ratio to the nearest bin center, 1-based.
/// The ratio is clamped to [0.25, 3.0] first; exact midpoints between two
/// centers resolve to the lower bin.
pub fn quantize_ratio(r: f64) -> Result<u8, CodeError> {
    if !r.is_finite() || r <= 0.0 {
        return Err(CodeError::InvalidRatio(r));
    }
    let r = r.clamp(RATIO_BINS[0], RATIO_BINS[7]);
    let mut best = 1u8;
    for (i, &c) in RATIO_BINS.iter().enumerate().skip(1) {
        // strictly closer than the current best keeps ties on the lower bin
        if (r - c).abs() < (r - RATIO_BINS[best as usize - 1]).abs() {
            best = i as u8 + 1;
        }
    }
    Ok(best)
}

/// Returns the center of a 1-based ratio bin.
pub fn dequantize_bin(b: u8) -> Result<f64, CodeError> {
    if !(1..=8).contains(&b) {
        return Err(CodeError::InvalidBin(b));
    }
    Ok(RATIO_BINS[b as usize - 1])
}

/// Encodes a layer into its four-integer code.
pub fn encode_layer(s: &LayerSpec) -> Result<LayerCode, CodeError> {
    s.check()?;
    let ch = match s.kind {
        LayerKind::Conv => quantize_ratio(s.channel_ratio)?,
        _ => 4, // ratio 1.0
    };
    Ok(LayerCode {
        ty: s.kind.type_id(),
        kw: s.kernel_w as u8,
        kh: s.kernel_h as u8,
        ch,
    })
}

/// Inverse of `encode_layer` up to ratio quantization.
pub fn decode_layer(c: &LayerCode) -> Result<LayerSpec, CodeError> {
    c.check()?;
    let kind = LayerKind::from_type_id(c.ty).expect("checked above");
    Ok(LayerSpec {
        kind,
        kernel_w: c.kw as u32,
        kernel_h: c.kh as u32,
        channel_ratio: dequantize_bin(c.ch)?,
    })
}

/// Encodes every layer of the architecture in order.
pub fn encode_network(a: &NetworkArch) -> Result<Vec<LayerCode>, CodeError> {
    if a.layers.is_empty() {
        return Err(CodeError::EmptyArch);
    }
    if a.layers[0].kind != LayerKind::Conv {
        return Err(CodeError::BadStem(a.layers[0].kind));
    }
    a.layers
        .iter()
        .enumerate()
        .map(|(index, s)| {
            encode_layer(s).map_err(|e| CodeError::AtLayer { index, source: Box::new(e) })
        })
        .collect()
}

/// Reports every invariant violation with its layer index. Empty result
/// means the architecture encodes cleanly.
pub fn validate_arch(a: &NetworkArch) -> Vec<CodeError> {
    let mut violations = Vec::new();
    if a.layers.is_empty() {
        violations.push(CodeError::EmptyArch);
        return violations;
    }
    if a.layers[0].kind != LayerKind::Conv {
        violations.push(CodeError::BadStem(a.layers[0].kind));
    }
    for (index, s) in a.layers.iter().enumerate() {
        if let Err(e) = s.check() {
            violations.push(CodeError::AtLayer { index, source: Box::new(e) });
        }
    }
    violations
}
