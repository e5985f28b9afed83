//! Checksum-based verification of a whole GEMM and of a chain of protected
//! layers.
//!
//! For `C = A * B`, the column sums of `A` dotted with the row sums of `B`
//! equal the sum of every entry of `C`. A single corrupted output value
//! breaks the equality.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};
use crate::matrix::{gemm_acc, Matrix};
use crate::numeric::{Element, ToleranceMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// `1 x K` column sums of an activation matrix.
    Column,
    /// `K x 1` row sums of a weight matrix.
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChecksumVector<E: Element> {
    pub orientation: Orientation,
    pub values: Vec<E::Acc>,
}

impl<E: Element> ChecksumVector<E> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Outcome of one checksum comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub detected: bool,
    /// Checksum side.
    pub lhs: f64,
    /// Output-summation side.
    pub rhs: f64,
    pub tolerance_used: f64,
}

impl Verdict {
    /// Compare a checksum against an output summation over `k` inner-product
    /// terms. NaN differences count as detections.
    pub fn evaluate<E: Element>(lhs: E::Acc, rhs: E::Acc, k: usize, mode: ToleranceMode) -> Verdict {
        let (l, r) = (E::acc_to_f64(lhs), E::acc_to_f64(rhs));
        match mode {
            ToleranceMode::Exact => Verdict { detected: E::acc_differs(lhs, rhs), lhs: l, rhs: r, tolerance_used: 0.0 },
            ToleranceMode::Scaled { .. } => {
                let tolerance_used = mode.threshold(k, l);
                let diff = (l - r).abs();
                Verdict { detected: diff.is_nan() || diff > tolerance_used, lhs: l, rhs: r, tolerance_used }
            }
        }
    }

    pub fn clean(lhs: f64, rhs: f64, tolerance_used: f64) -> Verdict {
        Verdict { detected: false, lhs, rhs, tolerance_used }
    }

    /// First firing verdict, otherwise the one with the largest discrepancy.
    pub fn worst(verdicts: impl IntoIterator<Item = Verdict>) -> Option<Verdict> {
        let mut best: Option<Verdict> = None;
        for v in verdicts {
            if v.detected {
                return Some(v);
            }
            if best.is_none_or(|b| (v.lhs - v.rhs).abs() > (b.lhs - b.rhs).abs()) {
                best = Some(v);
            }
        }
        best
    }

    /// A fault of this magnitude is inside the tolerance band and cannot be
    /// told apart from rounding.
    pub fn masks(&self, delta: f64) -> bool {
        delta.abs() <= self.tolerance_used
    }
}

pub fn column_checksum<E: Element>(a: &Matrix<E>) -> Result<ChecksumVector<E>> {
    let mut values = vec![E::Acc::default(); a.cols()];
    for r in 0..a.rows() {
        for (acc, &x) in values.iter_mut().zip(a.row(r)) {
            *acc = E::acc_add(*acc, x.widen())?;
        }
    }
    Ok(ChecksumVector { orientation: Orientation::Column, values })
}

pub fn row_checksum<E: Element>(b: &Matrix<E>) -> Result<ChecksumVector<E>> {
    let values = (0..b.rows())
        .map(|r| b.row(r).iter().try_fold(E::Acc::default(), |acc, &x| E::acc_add(acc, x.widen())))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChecksumVector { orientation: Orientation::Row, values })
}

pub fn checksum_dot<E: Element>(ca: &ChecksumVector<E>, rb: &ChecksumVector<E>) -> Result<E::Acc> {
    if ca.len() != rb.len() {
        return Err(AbftError::ShapeMismatch(format!(
            "checksum lengths differ: {} vs {}",
            ca.len(),
            rb.len()
        )));
    }
    ca.values.iter().zip(&rb.values).try_fold(E::Acc::default(), |acc, (&x, &y)| E::acc_mul_add(acc, x, y))
}

pub fn output_summation<E: Element>(c: &Matrix<E>) -> Result<E::Acc> {
    c.as_slice().iter().try_fold(E::Acc::default(), |acc, &x| E::acc_add(acc, x.widen()))
}

/// Output summation taken from accumulator registers before the result is
/// rounded to storage precision, as a fused GEMM epilogue would do it.
pub fn accumulator_summation<E: Element>(c: &Matrix<E::Acc>) -> Result<E::Acc> {
    c.as_slice().iter().try_fold(E::Acc::default(), |acc, &x| E::acc_add(acc, x))
}

pub fn global_abft_check<E: Element>(
    a: &Matrix<E>,
    b: &Matrix<E>,
    c: &Matrix<E>,
    mode: ToleranceMode,
) -> Result<Verdict> {
    if a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols() {
        return Err(AbftError::ShapeMismatch(format!(
            "A {}x{}, B {}x{}, C {}x{} are not conformable",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols()
        )));
    }
    let lhs = checksum_dot(&column_checksum(a)?, &row_checksum(b)?)?;
    let rhs = output_summation(c)?;
    Ok(Verdict::evaluate::<E>(lhs, rhs, a.cols(), mode))
}

/// A layer's weights together with their weight checksum, built on first use
/// and reused for every request afterwards.
#[derive(Debug)]
pub struct ProtectedLayer<E: Element> {
    weights: Matrix<E>,
    weight_checksum: OnceLock<ChecksumVector<E>>,
}

impl<E: Element> ProtectedLayer<E> {
    pub fn new(weights: Matrix<E>) -> Self {
        ProtectedLayer { weights, weight_checksum: OnceLock::new() }
    }

    pub fn weights(&self) -> &Matrix<E> {
        &self.weights
    }

    pub fn offline_weight_checksum(&self) -> Result<&ChecksumVector<E>> {
        if let Some(ck) = self.weight_checksum.get() {
            return Ok(ck);
        }
        let ck = row_checksum(&self.weights)?;
        Ok(self.weight_checksum.get_or_init(|| ck))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
}

impl Activation {
    pub fn apply<E: Element>(self, x: E) -> E {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
        }
    }
}

/// Corrupt output `(row, col)` of layer `layer` before the activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineFault {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport<E: Element> {
    /// One verdict per layer, in layer order.
    pub verdicts: Vec<Verdict>,
    /// Activated output of the last layer.
    pub output: Matrix<E>,
}

impl<E: Element> PipelineReport<E> {
    pub fn detected(&self) -> bool {
        self.verdicts.iter().any(|v| v.detected)
    }
}

struct PendingCheck<E: Element> {
    activation_checksum: ChecksumVector<E>,
    output_sum: E::Acc,
    layer: usize,
}

/// Run a chain of globally protected layers.
///
/// Per layer: multiply, take the output summation from the accumulators,
/// apply the activation, and build the next layer's activation checksum from
/// the activated output. The checksum dot product for a layer is resolved
/// only after the next layer's multiplication has been issued; verdicts still
/// come back in layer order.
pub fn run_protected_pipeline<E: Element>(
    input: &Matrix<E>,
    layers: &[ProtectedLayer<E>],
    activation: Activation,
    mode: ToleranceMode,
    faults: &[PipelineFault],
) -> Result<PipelineReport<E>> {
    let rows = input.rows();
    let mut width = input.cols();
    for (i, layer) in layers.iter().enumerate() {
        let w = layer.weights();
        if w.rows() != width {
            return Err(AbftError::ShapeMismatch(format!(
                "layer {i} expects {} inputs, previous output has {width}",
                w.rows()
            )));
        }
        width = w.cols();
    }
    for f in faults {
        let Some(layer) = layers.get(f.layer) else {
            return Err(AbftError::InvalidFault(format!("fault targets missing layer {}", f.layer)));
        };
        if f.row >= rows || f.col >= layer.weights().cols() {
            return Err(AbftError::InvalidFault(format!(
                "fault ({}, {}) outside layer {} output",
                f.row, f.col, f.layer
            )));
        }
        E::delta_from_f64(f.delta)?;
    }

    let resolve = |p: PendingCheck<E>| -> Result<Verdict> {
        let layer = &layers[p.layer];
        let lhs = checksum_dot(&p.activation_checksum, layer.offline_weight_checksum()?)?;
        Ok(Verdict::evaluate::<E>(lhs, p.output_sum, layer.weights().rows(), mode))
    };

    let mut verdicts = Vec::with_capacity(layers.len());
    let mut pending: Option<PendingCheck<E>> = None;
    let mut current = input.clone();
    let mut activation_checksum = column_checksum(input)?;

    for (li, layer) in layers.iter().enumerate() {
        let mut c_acc = gemm_acc(&current, layer.weights())?;
        for f in faults.iter().filter(|f| f.layer == li) {
            let v = c_acc.get_mut(f.row, f.col);
            *v = E::acc_add(*v, E::delta_from_f64(f.delta)?)?;
        }
        if let Some(p) = pending.take() {
            verdicts.push(resolve(p)?);
        }
        let output_sum = accumulator_summation::<E>(&c_acc)?;
        let activated = c_acc.map(|x| activation.apply(E::narrow(x)));
        let next_checksum = column_checksum(&activated)?;
        pending = Some(PendingCheck { activation_checksum, output_sum, layer: li });
        activation_checksum = next_checksum;
        current = activated;
    }
    if let Some(p) = pending.take() {
        verdicts.push(resolve(p)?);
    }
    Ok(PipelineReport { verdicts, output: current })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<i64>]) -> Matrix<i64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn column_checksum_examples() {
        assert_eq!(column_checksum(&m(&[vec![1, 2], vec![3, 4]])).unwrap().values, vec![4, 6]);
        assert_eq!(column_checksum(&m(&[vec![5, -1, 7]])).unwrap().values, vec![5, -1, 7]);
        assert_eq!(column_checksum(&Matrix::<i64>::zeros(3, 5)).unwrap().values, vec![0; 5]);
    }

    #[test]
    fn row_checksum_examples() {
        assert_eq!(row_checksum(&m(&[vec![1, 2], vec![3, 4]])).unwrap().values, vec![3, 7]);
        assert_eq!(row_checksum(&m(&[vec![2], vec![9]])).unwrap().values, vec![2, 9]);
        let id = Matrix::from_fn(4, 4, |r, c| i64::from(r == c));
        assert_eq!(row_checksum(&id).unwrap().values, vec![1; 4]);
    }

    #[test]
    fn checksum_overflow() {
        let a = m(&[vec![i64::MAX], vec![1]]);
        assert_eq!(column_checksum(&a), Err(AbftError::Overflow));
        assert_eq!(output_summation(&a), Err(AbftError::Overflow));
    }

    #[test]
    fn dot_examples() {
        let ca = ChecksumVector::<i64> { orientation: Orientation::Column, values: vec![4, 6] };
        let rb = ChecksumVector::<i64> { orientation: Orientation::Row, values: vec![3, 7] };
        assert_eq!(checksum_dot(&ca, &rb).unwrap(), 54);
        let z = ChecksumVector::<i64> { orientation: Orientation::Row, values: vec![0, 0] };
        assert_eq!(checksum_dot(&z, &z).unwrap(), 0);
        let one = ChecksumVector::<i64> { orientation: Orientation::Column, values: vec![1] };
        let c = ChecksumVector::<i64> { orientation: Orientation::Row, values: vec![-17] };
        assert_eq!(checksum_dot(&one, &c).unwrap(), -17);
        assert!(checksum_dot(&ca, &c).is_err());
    }

    #[test]
    fn output_summation_examples() {
        assert_eq!(output_summation(&m(&[vec![19, 22], vec![43, 50]])).unwrap(), 134);
        assert_eq!(output_summation(&Matrix::<i64>::zeros(2, 3)).unwrap(), 0);
        assert_eq!(output_summation(&m(&[vec![-8]])).unwrap(), -8);
    }

    #[test]
    fn global_check_examples() {
        let a = m(&[vec![1, 2], vec![3, 4]]);
        let b = m(&[vec![5, 6], vec![7, 8]]);
        let c = m(&[vec![19, 22], vec![43, 50]]);
        assert!(!global_abft_check(&a, &b, &c, ToleranceMode::Exact).unwrap().detected);

        let mut one = c.clone();
        one.set(1, 0, 44);
        let v = global_abft_check(&a, &b, &one, ToleranceMode::Exact).unwrap();
        assert!(v.detected);
        assert_eq!((v.lhs, v.rhs), (134.0, 135.0));

        // Canceling pair: beyond the single-fault model, goes unnoticed.
        let mut two = c.clone();
        two.set(0, 0, 20);
        two.set(1, 1, 49);
        assert!(!global_abft_check(&a, &b, &two, ToleranceMode::Exact).unwrap().detected);

        assert!(global_abft_check(&a, &b, &Matrix::zeros(3, 2), ToleranceMode::Exact).is_err());
    }

    #[test]
    fn weight_checksum_is_cached() {
        let layer = ProtectedLayer::new(m(&[vec![1, 2], vec![3, 4]]));
        let first = layer.offline_weight_checksum().unwrap();
        let second = layer.offline_weight_checksum().unwrap();
        assert!(std::ptr::eq(first, second));
        assert_eq!(first.values, vec![3, 7]);
        assert_eq!(first, &row_checksum(layer.weights()).unwrap());
        let zeros = ProtectedLayer::new(Matrix::<i64>::zeros(3, 2));
        assert_eq!(zeros.offline_weight_checksum().unwrap().values, vec![0, 0, 0]);
    }

    #[test]
    fn verdict_worst_prefers_detection() {
        let a = Verdict::clean(1.0, 1.5, 1.0);
        let b = Verdict { detected: true, lhs: 0.0, rhs: 0.1, tolerance_used: 0.0 };
        assert_eq!(Verdict::worst([a, b]), Some(b));
        assert_eq!(Verdict::worst([a]), Some(a));
        assert_eq!(Verdict::worst([]), None);
    }

    #[test]
    fn scaled_tolerance_nan_is_detected() {
        let v = Verdict::evaluate::<f32>(1.0, f32::NAN, 4, ToleranceMode::BINARY32);
        assert!(v.detected);
        let v = Verdict::evaluate::<f32>(1.0, f32::INFINITY, 4, ToleranceMode::BINARY32);
        assert!(v.detected);
    }
}
