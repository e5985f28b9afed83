//! Element types and their arithmetic.
//!
//! Three element kinds are supported. `i64` is the exact mode: every
//! operation is checked and overflow is an error, so checksum identities hold
//! without rounding. `half::f16` stores binary16 values and accumulates in
//! `f32`, the way a Tensor Core MMA does. `f32` stores and accumulates in
//! binary32.

use std::fmt;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DTypeTag {
    ExactInt,
    Binary16,
    Binary32,
}

impl fmt::Display for DTypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DTypeTag::ExactInt => "exact-int",
            DTypeTag::Binary16 => "binary16",
            DTypeTag::Binary32 => "binary32",
        })
    }
}

impl std::str::FromStr for DTypeTag {
    type Err = AbftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-int" | "int" => Ok(DTypeTag::ExactInt),
            "binary16" | "fp16" | "f16" => Ok(DTypeTag::Binary16),
            "binary32" | "fp32" | "f32" => Ok(DTypeTag::Binary32),
            other => Err(AbftError::Validation(format!("unknown dtype `{other}`"))),
        }
    }
}

/// Element type tag plus the byte width used by traffic and intensity models.
///
/// Exact-int defaults to 2 bytes per element so an FP16 workload can be
/// analysed with exact arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DType {
    pub tag: DTypeTag,
    pub bytes_per_element: u32,
}

impl DType {
    pub const BINARY16: DType = DType { tag: DTypeTag::Binary16, bytes_per_element: 2 };
    pub const BINARY32: DType = DType { tag: DTypeTag::Binary32, bytes_per_element: 4 };
    pub const EXACT_INT: DType = DType { tag: DTypeTag::ExactInt, bytes_per_element: 2 };

    pub fn from_tag(tag: DTypeTag) -> DType {
        match tag {
            DTypeTag::ExactInt => DType::EXACT_INT,
            DTypeTag::Binary16 => DType::BINARY16,
            DTypeTag::Binary32 => DType::BINARY32,
        }
    }

    /// Explicit byte-width override; any positive width is accepted.
    pub fn with_bytes_per_element(self, bytes: u32) -> Result<DType> {
        if bytes == 0 {
            return Err(AbftError::Validation("bytes_per_element must be positive".into()));
        }
        Ok(DType { bytes_per_element: bytes, ..self })
    }

    pub fn bytes_per_element(&self) -> u64 {
        u64::from(self.bytes_per_element)
    }
}

/// How a checksum comparison decides "equal".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ToleranceMode {
    /// Bit-exact comparison; tolerance 0.
    Exact,
    /// `unit_roundoff * K * max(|checksum|, 1)`.
    Scaled { unit_roundoff: f64 },
}

impl ToleranceMode {
    /// binary16 inputs accumulated in binary32.
    pub const BINARY16: ToleranceMode = ToleranceMode::Scaled { unit_roundoff: 1.0 / 1024.0 };
    pub const BINARY32: ToleranceMode = ToleranceMode::Scaled { unit_roundoff: 1.0 / 8_388_608.0 };

    pub fn for_dtype(tag: DTypeTag) -> ToleranceMode {
        match tag {
            DTypeTag::ExactInt => ToleranceMode::Exact,
            DTypeTag::Binary16 => ToleranceMode::BINARY16,
            DTypeTag::Binary32 => ToleranceMode::BINARY32,
        }
    }

    /// Threshold for a K-term inner product whose checksum side evaluates to
    /// `checksum`. The threshold is anchored on the checksum side only, which
    /// a fault in the output cannot influence.
    pub fn threshold(&self, k: usize, checksum: f64) -> f64 {
        match *self {
            ToleranceMode::Exact => 0.0,
            ToleranceMode::Scaled { unit_roundoff } => {
                unit_roundoff * k as f64 * checksum.abs().max(1.0)
            }
        }
    }
}

/// A matrix element with a (possibly wider) accumulator type.
pub trait Element:
    Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static
{
    type Acc: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static;

    const TAG: DTypeTag;

    fn widen(self) -> Self::Acc;
    /// Round an accumulator back to storage precision.
    fn narrow(acc: Self::Acc) -> Self;
    fn acc_add(a: Self::Acc, b: Self::Acc) -> Result<Self::Acc>;
    /// `acc + a * b`
    fn acc_mul_add(acc: Self::Acc, a: Self::Acc, b: Self::Acc) -> Result<Self::Acc>;
    fn acc_to_f64(a: Self::Acc) -> f64;
    /// Convert an injected fault magnitude into the accumulator domain.
    fn delta_from_f64(delta: f64) -> Result<Self::Acc>;
    fn relu(self) -> Self;
    /// Nearest representable element (integers round half away from zero).
    fn from_f64(v: f64) -> Self;
    /// Exact structural comparison of two accumulators (`lhs != rhs`).
    fn acc_differs(a: Self::Acc, b: Self::Acc) -> bool {
        a != b
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(AbftError::InvalidFault(format!("delta must be finite and nonzero, got {delta}")));
    }
    Ok(())
}

impl Element for i64 {
    type Acc = i64;
    const TAG: DTypeTag = DTypeTag::ExactInt;

    #[inline]
    fn widen(self) -> i64 {
        self
    }
    #[inline]
    fn narrow(acc: i64) -> i64 {
        acc
    }
    #[inline]
    fn acc_add(a: i64, b: i64) -> Result<i64> {
        a.checked_add(b).ok_or(AbftError::Overflow)
    }
    #[inline]
    fn acc_mul_add(acc: i64, a: i64, b: i64) -> Result<i64> {
        a.checked_mul(b).and_then(|p| acc.checked_add(p)).ok_or(AbftError::Overflow)
    }
    fn acc_to_f64(a: i64) -> f64 {
        a as f64
    }
    fn delta_from_f64(delta: f64) -> Result<i64> {
        check_delta(delta)?;
        if delta.fract() != 0.0 || delta.abs() > (1u64 << 53) as f64 {
            return Err(AbftError::InvalidFault(format!(
                "exact-int deltas must be integers, got {delta}"
            )));
        }
        Ok(delta as i64)
    }
    fn from_f64(v: f64) -> i64 {
        v.round() as i64
    }
    fn relu(self) -> i64 {
        self.max(0)
    }
}

impl Element for f16 {
    type Acc = f32;
    const TAG: DTypeTag = DTypeTag::Binary16;

    #[inline]
    fn widen(self) -> f32 {
        self.to_f32()
    }
    #[inline]
    fn narrow(acc: f32) -> f16 {
        f16::from_f32(acc)
    }
    #[inline]
    fn acc_add(a: f32, b: f32) -> Result<f32> {
        Ok(a + b)
    }
    #[inline]
    fn acc_mul_add(acc: f32, a: f32, b: f32) -> Result<f32> {
        Ok(acc + a * b)
    }
    fn acc_to_f64(a: f32) -> f64 {
        f64::from(a)
    }
    fn delta_from_f64(delta: f64) -> Result<f32> {
        check_delta(delta)?;
        Ok(delta as f32)
    }
    fn from_f64(v: f64) -> f16 {
        f16::from_f64(v)
    }
    fn relu(self) -> f16 {
        if self > f16::ZERO { self } else { f16::ZERO }
    }
}

impl Element for f32 {
    type Acc = f32;
    const TAG: DTypeTag = DTypeTag::Binary32;

    #[inline]
    fn widen(self) -> f32 {
        self
    }
    #[inline]
    fn narrow(acc: f32) -> f32 {
        acc
    }
    #[inline]
    fn acc_add(a: f32, b: f32) -> Result<f32> {
        Ok(a + b)
    }
    #[inline]
    fn acc_mul_add(acc: f32, a: f32, b: f32) -> Result<f32> {
        Ok(acc + a * b)
    }
    fn acc_to_f64(a: f32) -> f64 {
        f64::from(a)
    }
    fn delta_from_f64(delta: f64) -> Result<f32> {
        check_delta(delta)?;
        Ok(delta as f32)
    }
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn relu(self) -> f32 {
        self.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_int_overflow_is_reported() {
        assert_eq!(i64::acc_add(i64::MAX, 1), Err(AbftError::Overflow));
        assert_eq!(i64::acc_mul_add(0, i64::MAX, 2), Err(AbftError::Overflow));
        assert_eq!(i64::acc_mul_add(1, 3, 4), Ok(13));
    }

    #[test]
    fn deltas_are_validated() {
        assert!(i64::delta_from_f64(0.0).is_err());
        assert!(i64::delta_from_f64(1.5).is_err());
        assert_eq!(i64::delta_from_f64(-3.0), Ok(-3));
        assert!(f16::delta_from_f64(f64::NAN).is_err());
        assert_eq!(f32::delta_from_f64(0.25), Ok(0.25));
    }

    #[test]
    fn byte_widths() {
        assert_eq!(DType::BINARY16.bytes_per_element(), 2);
        assert_eq!(DType::BINARY32.bytes_per_element(), 4);
        assert_eq!(DType::EXACT_INT.bytes_per_element(), 2);
        assert_eq!(DType::EXACT_INT.with_bytes_per_element(8).unwrap().bytes_per_element(), 8);
        assert!(DType::EXACT_INT.with_bytes_per_element(0).is_err());
    }

    #[test]
    fn tolerance_scales_with_k_and_floors_at_one() {
        let t = ToleranceMode::BINARY16;
        assert_eq!(t.threshold(1024, 0.5), 1.0);
        assert_eq!(t.threshold(8, -4.0), 8.0 * 4.0 / 1024.0);
        assert_eq!(ToleranceMode::Exact.threshold(1 << 20, 1e9), 0.0);
    }

    #[test]
    fn binary16_relu_and_rounding() {
        assert_eq!(f16::from_f32(-2.0).relu(), f16::ZERO);
        assert_eq!(f16::from_f32(3.0).relu(), f16::from_f32(3.0));
        // 2049 is not representable in binary16; rounds to even.
        assert_eq!(f16::narrow(2049.0).to_f32(), 2048.0);
    }
}
