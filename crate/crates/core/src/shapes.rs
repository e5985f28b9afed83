//! Layer, GEMM and device descriptions, and the mapping from NN layers to
//! GEMM problems.
//!
//! A linear layer is executed as `C = A * B` with `A` (`m x k`) holding
//! activations and `B` (`k x n`) holding weights. Convolutions use im2col
//! semantics: one GEMM row per output pixel of every image in the batch.

use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl GemmShape {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(AbftError::ShapeMismatch(format!("GEMM dims must be positive, got ({m}, {n}, {k})")));
        }
        Ok(GemmShape { m, n, k })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, size)
    }
}

impl std::fmt::Display for GemmShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.m, self.n, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingPolicy {
    #[default]
    None,
    /// Round each GEMM dimension up to a multiple of eight.
    #[serde(rename = "multiple-of-8")]
    MultipleOf8,
}

impl std::str::FromStr for PaddingPolicy {
    type Err = AbftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PaddingPolicy::None),
            "eight" | "8" | "multiple-of-8" => Ok(PaddingPolicy::MultipleOf8),
            other => Err(AbftError::Validation(format!("unknown padding policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        ConvSpec { out_channels, kernel, stride, padding, groups: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv(ConvSpec),
    FullyConnected { out_features: usize },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv(ConvSpec::new(out_channels, (kernel, kernel), (stride, stride), (padding, padding)))
    }

    pub fn fc(out_features: usize) -> Self {
        LayerSpec::FullyConnected { out_features }
    }
}

/// Activation tensor shape of one image: height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub batch: usize,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Stack of fully-connected layers over a flat feature vector.
    pub fn mlp(name: impl Into<String>, batch: usize, widths: &[usize]) -> Self {
        let (&input, rest) = widths.split_first().expect("at least an input width");
        ModelSpec {
            name: name.into(),
            batch,
            input: InputShape { h: 1, w: 1, c: input },
            layers: rest.iter().map(|&w| LayerSpec::fc(w)).collect(),
        }
    }
}

fn conv_axis(input: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(AbftError::InvalidLayer(format!("{axis}: kernel and stride must be positive")));
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(AbftError::InvalidLayer(format!(
            "{axis}: kernel {kernel} exceeds padded input {span}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

/// Spatial output size of a convolution.
pub fn conv_output_shape(in_h: usize, in_w: usize, layer: &LayerSpec) -> Result<(usize, usize)> {
    let LayerSpec::Conv(conv) = layer else {
        return Err(AbftError::InvalidLayer("conv_output_shape needs a conv layer".into()));
    };
    if in_h == 0 || in_w == 0 {
        return Err(AbftError::InvalidLayer("input extent must be positive".into()));
    }
    Ok((
        conv_axis(in_h, conv.kernel.0, conv.stride.0, conv.padding.0, "height")?,
        conv_axis(in_w, conv.kernel.1, conv.stride.1, conv.padding.1, "width")?,
    ))
}

/// GEMM problem for one layer applied to a batch of `in_h x in_w x in_c`
/// activations.
pub fn layer_to_gemm(batch: usize, in_h: usize, in_w: usize, in_c: usize, layer: &LayerSpec) -> Result<GemmShape> {
    if batch == 0 || in_c == 0 {
        return Err(AbftError::InvalidLayer("batch and channel count must be positive".into()));
    }
    match layer {
        LayerSpec::Conv(conv) => {
            if conv.groups != 1 {
                return Err(AbftError::InvalidLayer(format!(
                    "grouped convolutions (groups = {}) are not supported",
                    conv.groups
                )));
            }
            if conv.out_channels == 0 {
                return Err(AbftError::InvalidLayer("out_channels must be positive".into()));
            }
            let (oh, ow) = conv_output_shape(in_h, in_w, layer)?;
            GemmShape::new(batch * oh * ow, conv.out_channels, in_c * conv.kernel.0 * conv.kernel.1)
        }
        LayerSpec::FullyConnected { out_features } => {
            if *out_features == 0 {
                return Err(AbftError::InvalidLayer("out_features must be positive".into()));
            }
            GemmShape::new(batch, *out_features, in_h * in_w * in_c)
        }
    }
}

fn round_up(x: usize, multiple: usize) -> usize {
    x.div_ceil(multiple) * multiple
}

pub fn pad_gemm(shape: GemmShape, policy: PaddingPolicy) -> GemmShape {
    match policy {
        PaddingPolicy::None => shape,
        PaddingPolicy::MultipleOf8 => GemmShape {
            m: round_up(shape.m, 8),
            n: round_up(shape.n, 8),
            k: round_up(shape.k, 8),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGemm {
    pub layer_index: usize,
    pub shape: GemmShape,
}

/// One GEMM per layer, in order, threading the activation shape through.
pub fn model_to_gemm_sequence(model: &ModelSpec, policy: PaddingPolicy) -> Result<Vec<LayerGemm>> {
    let InputShape { mut h, mut w, mut c } = model.input;
    let mut out = Vec::with_capacity(model.layers.len());
    for (layer_index, layer) in model.layers.iter().enumerate() {
        let shape = layer_to_gemm(model.batch, h, w, c, layer)
            .map_err(|e| AbftError::InvalidLayer(format!("layer {layer_index}: {e}")))?;
        match layer {
            LayerSpec::Conv(conv) => {
                let (oh, ow) = conv_output_shape(h, w, layer)?;
                (h, w, c) = (oh, ow, conv.out_channels);
            }
            LayerSpec::FullyConnected { out_features } => (h, w, c) = (1, 1, *out_features),
        }
        out.push(LayerGemm { layer_index, shape: pad_gemm(shape, policy) });
    }
    Ok(out)
}

/// Peak rates of an accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// FLOP/s on the matrix-unit path.
    pub tensor_throughput: f64,
    /// FLOP/s on the scalar ALU path.
    pub alu_throughput: f64,
    /// Bytes/s.
    pub memory_bandwidth: f64,
    /// Seconds added by a separate verification kernel launch.
    pub verification_launch_latency: f64,
    /// Set when `alu_throughput` was derived from the tensor rate.
    pub alu_throughput_defaulted: bool,
}

impl DeviceProfile {
    pub const DEFAULT_LAUNCH_LATENCY: f64 = 5e-6;
    pub const DEFAULT_ALU_FRACTION: f64 = 1.0 / 8.0;

    pub fn new(
        name: impl Into<String>,
        tensor_throughput: f64,
        alu_throughput: Option<f64>,
        memory_bandwidth: f64,
        verification_launch_latency: Option<f64>,
    ) -> Result<Self> {
        let alu = alu_throughput.unwrap_or(tensor_throughput * Self::DEFAULT_ALU_FRACTION);
        let latency = verification_launch_latency.unwrap_or(Self::DEFAULT_LAUNCH_LATENCY);
        for (what, v) in [("tensor throughput", tensor_throughput), ("alu throughput", alu), ("memory bandwidth", memory_bandwidth)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(AbftError::Validation(format!("{what} must be positive, got {v}")));
            }
        }
        if !(latency.is_finite() && latency >= 0.0) {
            return Err(AbftError::Validation(format!("launch latency must be non-negative, got {latency}")));
        }
        Ok(DeviceProfile {
            name: name.into(),
            tensor_throughput,
            alu_throughput: alu,
            memory_bandwidth,
            verification_launch_latency: latency,
            alu_throughput_defaulted: alu_throughput.is_none(),
        })
    }

    /// NVIDIA T4: 65 FP16 TFLOP/s, 320 GB/s.
    pub fn t4() -> Self {
        Self::new("T4", 65e12, None, 320e9, None).expect("valid profile")
    }

    /// NVIDIA P4: 11 TFLOP/s, 192 GB/s.
    pub fn p4() -> Self {
        Self::new("P4", 11e12, None, 192e9, None).expect("valid profile")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_examples() {
        let stem = LayerSpec::conv(64, 7, 2, 3);
        assert_eq!(conv_output_shape(1080, 1920, &stem).unwrap(), (540, 960));
        assert_eq!(conv_output_shape(5, 5, &LayerSpec::conv(8, 1, 1, 0)).unwrap(), (5, 5));
        assert!(matches!(
            conv_output_shape(3, 3, &LayerSpec::conv(8, 5, 1, 0)),
            Err(AbftError::InvalidLayer(_))
        ));
        assert!(conv_output_shape(3, 3, &LayerSpec::fc(3)).is_err());
    }

    #[test]
    fn layer_to_gemm_examples() {
        let stem = LayerSpec::conv(64, 7, 2, 3);
        assert_eq!(layer_to_gemm(1, 1080, 1920, 3, &stem).unwrap(), GemmShape { m: 518_400, n: 64, k: 147 });
        assert_eq!(layer_to_gemm(1, 1, 1, 13, &LayerSpec::fc(512)).unwrap(), GemmShape { m: 1, n: 512, k: 13 });
        assert_eq!(layer_to_gemm(2048, 1, 1, 256, &LayerSpec::fc(1)).unwrap(), GemmShape { m: 2048, n: 1, k: 256 });
    }

    #[test]
    fn grouped_conv_rejected() {
        let mut conv = ConvSpec::new(32, (3, 3), (1, 1), (1, 1));
        conv.groups = 32;
        let err = layer_to_gemm(1, 8, 8, 32, &LayerSpec::Conv(conv)).unwrap_err();
        assert!(err.to_string().contains("grouped"));
    }

    #[test]
    fn padding_examples() {
        let p = PaddingPolicy::MultipleOf8;
        assert_eq!(pad_gemm(GemmShape { m: 1, n: 512, k: 13 }, p), GemmShape { m: 8, n: 512, k: 16 });
        let s = GemmShape { m: 2048, n: 64, k: 147 };
        assert_eq!(pad_gemm(s, PaddingPolicy::None), s);
        let aligned = GemmShape { m: 8, n: 8, k: 8 };
        assert_eq!(pad_gemm(aligned, p), aligned);
    }

    #[test]
    fn dlrm_bottom_sequence() {
        let model = ModelSpec::mlp("bottom", 1, &[13, 512, 256, 64]);
        let seq = model_to_gemm_sequence(&model, PaddingPolicy::MultipleOf8).unwrap();
        let shapes: Vec<_> = seq.iter().map(|l| (l.shape.m, l.shape.n, l.shape.k)).collect();
        assert_eq!(shapes, vec![(8, 512, 16), (8, 256, 512), (8, 64, 256)]);
    }

    #[test]
    fn single_and_empty_models() {
        let single = ModelSpec::mlp("fc", 1, &[2048, 1000]);
        let seq = model_to_gemm_sequence(&single, PaddingPolicy::None).unwrap();
        assert_eq!(seq, vec![LayerGemm { layer_index: 0, shape: GemmShape { m: 1, n: 1000, k: 2048 } }]);
        let empty = ModelSpec::mlp("empty", 1, &[16]);
        assert!(model_to_gemm_sequence(&empty, PaddingPolicy::None).unwrap().is_empty());
    }

    #[test]
    fn conv_then_fc_flattens() {
        let model = ModelSpec {
            name: "tiny".into(),
            batch: 2,
            input: InputShape { h: 8, w: 8, c: 3 },
            layers: vec![LayerSpec::conv(4, 3, 2, 1), LayerSpec::fc(10)],
        };
        let seq = model_to_gemm_sequence(&model, PaddingPolicy::None).unwrap();
        assert_eq!(seq[0].shape, GemmShape { m: 2 * 4 * 4, n: 4, k: 27 });
        assert_eq!(seq[1].shape, GemmShape { m: 2, n: 10, k: 64 });
    }

    #[test]
    fn invalid_layer_in_model_names_index() {
        let model = ModelSpec {
            name: "bad".into(),
            batch: 1,
            input: InputShape { h: 3, w: 3, c: 1 },
            layers: vec![LayerSpec::conv(4, 1, 1, 0), LayerSpec::conv(4, 5, 1, 0)],
        };
        let err = model_to_gemm_sequence(&model, PaddingPolicy::None).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn device_defaults() {
        let t4 = DeviceProfile::t4();
        assert!(t4.alu_throughput_defaulted);
        assert_eq!(t4.alu_throughput, 65e12 / 8.0);
        assert_eq!(t4.verification_launch_latency, 5e-6);
        assert!(DeviceProfile::new("x", 0.0, None, 1.0, None).is_err());
        assert!(DeviceProfile::new("x", 1.0, Some(-1.0), 1.0, None).is_err());
    }
}
