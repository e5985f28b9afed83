//! Bundled model and device documents.

use crate::io::{parse_device, parse_model};
use crate::shapes::{DeviceProfile, InputShape, LayerSpec, ModelSpec};

pub const DLRM_MLP_BOTTOM: &str = include_str!("../fixtures/dlrm_mlp_bottom.json");
pub const DLRM_MLP_TOP: &str = include_str!("../fixtures/dlrm_mlp_top.json");
pub const RESNET50_CONV1: &str = include_str!("../fixtures/resnet50_conv1.json");
pub const RESNET50_FC: &str = include_str!("../fixtures/resnet50_fc.json");
pub const T4: &str = include_str!("../fixtures/t4.json");
pub const P4: &str = include_str!("../fixtures/p4.json");

fn model(text: &str) -> ModelSpec {
    parse_model(text).expect("bundled model fixture is valid")
}

/// DLRM bottom MLP (13 → 512 → 256 → 64) at the given batch size.
pub fn dlrm_mlp_bottom(batch: usize) -> ModelSpec {
    ModelSpec { batch, ..model(DLRM_MLP_BOTTOM) }
}

/// DLRM top MLP (512 → 512 → 256 → 1) at the given batch size.
pub fn dlrm_mlp_top(batch: usize) -> ModelSpec {
    ModelSpec { batch, ..model(DLRM_MLP_TOP) }
}

/// First convolution of ResNet-50 on a 1080×1920 RGB frame.
pub fn resnet50_conv1() -> ModelSpec {
    model(RESNET50_CONV1)
}

/// Final 2048 → 1000 classifier of ResNet-50 at batch 1.
pub fn resnet50_fc() -> ModelSpec {
    model(RESNET50_FC)
}

/// A single S×S×S GEMM expressed as a one-layer model: batch S, S features in
/// and out.
pub fn square_gemm_model(size: usize) -> ModelSpec {
    ModelSpec {
        name: format!("square-{size}"),
        batch: size,
        input: InputShape { h: 1, w: 1, c: size },
        layers: vec![LayerSpec::fc(size)],
    }
}

pub fn t4() -> DeviceProfile {
    parse_device(T4).expect("bundled device fixture is valid")
}

pub fn p4() -> DeviceProfile {
    parse_device(P4).expect("bundled device fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{model_to_gemm_sequence, GemmShape, PaddingPolicy};

    #[test]
    fn fixtures_parse() {
        assert_eq!(dlrm_mlp_bottom(4).batch, 4);
        assert_eq!(dlrm_mlp_top(1).layers.len(), 3);
        assert_eq!(t4(), DeviceProfile::t4());
        assert_eq!(p4(), DeviceProfile::p4());
        let seq = model_to_gemm_sequence(&resnet50_conv1(), PaddingPolicy::None).unwrap();
        assert_eq!(seq[0].shape, GemmShape::new(518_400, 64, 147).unwrap());
        let seq = model_to_gemm_sequence(&resnet50_fc(), PaddingPolicy::None).unwrap();
        assert_eq!(seq[0].shape, GemmShape::new(1, 1000, 2048).unwrap());
    }

    #[test]
    fn square_model_is_one_square_gemm() {
        let seq = model_to_gemm_sequence(&square_gemm_model(96), PaddingPolicy::None).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0].shape, GemmShape::square(96).unwrap());
    }
}
