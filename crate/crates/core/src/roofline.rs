//! FLOP and byte counts, arithmetic intensity and the roofline boundedness
//! test.
//!
//! Every GEMM operand is counted as moved exactly once: `A`, `B` read and `C`
//! written. No cache effects, bias or epilogue traffic.

use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};
use crate::numeric::DType;
use crate::shapes::{DeviceProfile, GemmShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Compute,
    Bandwidth,
    Balanced,
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Bound::Compute => "compute",
            Bound::Bandwidth => "bandwidth",
            Bound::Balanced => "balanced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityReport {
    pub flops: u64,
    pub bytes: u64,
    pub intensity: f64,
    pub bound: Bound,
}

/// One multiply and one add per inner-product term.
pub fn gemm_flops(shape: GemmShape) -> u64 {
    2 * shape.m as u64 * shape.n as u64 * shape.k as u64
}

pub fn gemm_bytes(shape: GemmShape, dtype: DType) -> u64 {
    let (m, n, k) = (shape.m as u64, shape.n as u64, shape.k as u64);
    dtype.bytes_per_element() * (m * k + k * n + m * n)
}

pub fn arithmetic_intensity(shape: GemmShape, dtype: DType) -> f64 {
    gemm_flops(shape) as f64 / gemm_bytes(shape, dtype) as f64
}

/// Compute-to-memory-bandwidth ratio in FLOPs per byte.
pub fn cmr(device: &DeviceProfile) -> f64 {
    device.tensor_throughput / device.memory_bandwidth
}

/// Strict comparison against the CMR; exact equality is `Balanced`.
pub fn classify(intensity: f64, cmr: f64) -> Bound {
    if intensity > cmr {
        Bound::Compute
    } else if intensity < cmr {
        Bound::Bandwidth
    } else {
        Bound::Balanced
    }
}

pub fn intensity_report(shape: GemmShape, dtype: DType, device: &DeviceProfile) -> IntensityReport {
    let flops = gemm_flops(shape);
    let bytes = gemm_bytes(shape, dtype);
    let intensity = flops as f64 / bytes as f64;
    IntensityReport { flops, bytes, intensity, bound: classify(intensity, cmr(device)) }
}

/// Sum FLOPs and bytes over all shapes, then divide.
pub fn aggregate_intensity(shapes: &[GemmShape], dtype: DType) -> Result<f64> {
    if shapes.is_empty() {
        return Err(AbftError::EmptyInput("no linear layers".into()));
    }
    let flops: u64 = shapes.iter().map(|&s| gemm_flops(s)).sum();
    let bytes: u64 = shapes.iter().map(|&s| gemm_bytes(s, dtype)).sum();
    Ok(flops as f64 / bytes as f64)
}

pub fn aggregate_report(shapes: &[GemmShape], dtype: DType, device: &DeviceProfile) -> Result<IntensityReport> {
    let intensity = aggregate_intensity(shapes, dtype)?;
    Ok(IntensityReport {
        flops: shapes.iter().map(|&s| gemm_flops(s)).sum(),
        bytes: shapes.iter().map(|&s| gemm_bytes(s, dtype)).sum(),
        intensity,
        bound: classify(intensity, cmr(device)),
    })
}
