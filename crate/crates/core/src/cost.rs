//! Roofline cost model for each protection scheme and the per-layer selector.
//!
//! A kernel's time is the largest of its tensor-path, scalar-ALU and memory
//! times. Protection adds work to one or more of those paths: global ABFT
//! adds scalar checksum work, a little checksum traffic and a separate
//! verification launch; thread-level schemes add tensor and scalar work but
//! no memory traffic. Whether that extra work shows up in the runtime depends
//! on which path was the bottleneck to begin with.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};
use crate::numeric::DType;
use crate::roofline::{arithmetic_intensity, classify, cmr, gemm_bytes, gemm_flops, Bound};
use crate::shapes::{DeviceProfile, GemmShape, LayerGemm};
use crate::tiled::{Scheme, TilingConfig};

/// Scalars global ABFT moves besides the two checksum vectors: the output
/// summation and the verification result.
pub const GLOBAL_CHECKSUM_SCALARS: f64 = 2.0;

/// Schemes the selector chooses between.
pub const CANDIDATES: [Scheme; 2] = [Scheme::GlobalAbft, Scheme::ThreadOneSided];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostSource {
    Model,
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadEstimate {
    /// Unprotected time `T_o`, seconds.
    pub base_time: f64,
    /// Protected time `T_r`, seconds.
    pub protected_time: f64,
    pub overhead_pct: f64,
    pub source: CostSource,
}

impl OverheadEstimate {
    pub fn new(base_time: f64, protected_time: f64, source: CostSource) -> Self {
        OverheadEstimate {
            base_time,
            protected_time,
            overhead_pct: overhead_pct(base_time, protected_time),
            source,
        }
    }
}

/// Percentage increase in execution time, `100 * (T_r - T_o) / T_o`.
pub fn overhead_pct(base_time: f64, protected_time: f64) -> f64 {
    100.0 * (protected_time - base_time) / base_time
}

/// Work a protected kernel performs on each path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub tensor_flops: f64,
    pub alu_flops: f64,
    pub bytes: f64,
    pub verification_launches: u32,
}

/// Full replication doubles accumulator registers per thread, which lowers
/// threadblock occupancy; the roofline terms below do not capture that.
pub fn scheme_note(scheme: Scheme) -> Option<&'static str> {
    match scheme {
        Scheme::ThreadReplicationFull => Some("doubles output registers per thread; occupancy loss not modeled"),
        _ => None,
    }
}

pub fn cost_breakdown(shape: GemmShape, dtype: DType, scheme: Scheme, tiling: &TilingConfig) -> CostBreakdown {
    let (m, n, k) = (shape.m as f64, shape.n as f64, shape.k as f64);
    let (mt, nt) = (tiling.thread_m as f64, tiling.thread_n as f64);
    let threads = (m / mt) * (n / nt);
    let bpe = dtype.bytes_per_element() as f64;
    let base = CostBreakdown {
        tensor_flops: gemm_flops(shape) as f64,
        alu_flops: 0.0,
        bytes: gemm_bytes(shape, dtype) as f64,
        verification_launches: 0,
    };
    match scheme {
        Scheme::Unprotected => base,
        Scheme::GlobalAbft => CostBreakdown {
            alu_flops: m * k + m * n + 2.0 * k,
            bytes: base.bytes + bpe * (k + n + GLOBAL_CHECKSUM_SCALARS),
            verification_launches: 1,
            ..base
        },
        Scheme::ThreadOneSided => CostBreakdown {
            tensor_flops: base.tensor_flops + 2.0 * m * k * n / nt,
            alu_flops: threads * k * nt,
            ..base
        },
        Scheme::ThreadTwoSided => CostBreakdown {
            tensor_flops: base.tensor_flops + 2.0 * k * threads,
            alu_flops: threads * k * (mt + nt),
            ..base
        },
        Scheme::ThreadReplicationFull | Scheme::ThreadReplicationSingleAcc => {
            CostBreakdown { tensor_flops: 2.0 * base.tensor_flops, ..base }
        }
    }
}

fn roofline_time(work: &CostBreakdown, device: &DeviceProfile) -> f64 {
    let tensor = work.tensor_flops / device.tensor_throughput;
    let alu = work.alu_flops / device.alu_throughput;
    let memory = work.bytes / device.memory_bandwidth;
    tensor.max(alu).max(memory) + f64::from(work.verification_launches) * device.verification_launch_latency
}

/// Unprotected kernel time: the larger of compute and memory time.
pub fn base_time(shape: GemmShape, dtype: DType, device: &DeviceProfile) -> f64 {
    let compute = gemm_flops(shape) as f64 / device.tensor_throughput;
    let memory = gemm_bytes(shape, dtype) as f64 / device.memory_bandwidth;
    compute.max(memory)
}

pub fn scheme_time(shape: GemmShape, dtype: DType, device: &DeviceProfile, scheme: Scheme, tiling: &TilingConfig) -> f64 {
    roofline_time(&cost_breakdown(shape, dtype, scheme, tiling), device)
}

/// Externally measured kernel times keyed by (layer index, scheme). An
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasuredTimings {
    entries: BTreeMap<(usize, Scheme), f64>,
}

impl MeasuredTimings {
    pub fn new() -> Self {
        Self::default()
    }

    /// `seconds` must be positive and finite.
    pub fn insert(&mut self, layer_index: usize, scheme: Scheme, seconds: f64) -> Result<()> {
        if !(seconds.is_finite() && seconds > 0.0) {
            return Err(AbftError::Validation(format!(
                "timing for layer {layer_index} / {scheme} must be positive, got {seconds}"
            )));
        }
        self.entries.insert((layer_index, scheme), seconds);
        Ok(())
    }

    pub fn get(&self, layer_index: usize, scheme: Scheme) -> Option<f64> {
        self.entries.get(&(layer_index, scheme)).copied()
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().map(|&(l, _)| l)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub scheme: Scheme,
    pub estimate: OverheadEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer_index: usize,
    pub gemm: GemmShape,
    pub intensity: f64,
    pub bound: Bound,
    pub chosen: Scheme,
    pub candidates: Vec<Candidate>,
}

impl LayerPlan {
    pub fn chosen_estimate(&self) -> &OverheadEstimate {
        &self.candidates.iter().find(|c| c.scheme == self.chosen).expect("chosen is a candidate").estimate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub layers: Vec<LayerPlan>,
    pub total_base_time: f64,
    pub total_protected_time: f64,
    /// `100 * (sum T_r / sum T_o - 1)` over the chosen schemes.
    pub aggregate_overhead_pct: f64,
}

fn estimate(
    layer: &LayerGemm,
    scheme: Scheme,
    dtype: DType,
    device: &DeviceProfile,
    tiling: &TilingConfig,
    measured: Option<&MeasuredTimings>,
) -> OverheadEstimate {
    let base = measured
        .and_then(|m| m.get(layer.layer_index, Scheme::Unprotected))
        .unwrap_or_else(|| base_time(layer.shape, dtype, device));
    match measured.and_then(|m| m.get(layer.layer_index, scheme)) {
        Some(t) => OverheadEstimate::new(base, t, CostSource::Measured),
        None => OverheadEstimate::new(base, scheme_time(layer.shape, dtype, device, scheme, tiling), CostSource::Model),
    }
}

fn validate_inputs(layers: &[LayerGemm], measured: Option<&MeasuredTimings>) -> Result<()> {
    if layers.is_empty() {
        return Err(AbftError::EmptyInput("no linear layers".into()));
    }
    if let Some(m) = measured {
        for l in m.layers() {
            if !layers.iter().any(|x| x.layer_index == l) {
                return Err(AbftError::Validation(format!("measured timings reference unknown layer {l}")));
            }
        }
    }
    Ok(())
}

/// Pick global or one-sided thread-level ABFT per layer by lowest overhead.
/// Measured timings override model estimates; ties go to global ABFT.
pub fn select(
    layers: &[LayerGemm],
    dtype: DType,
    device: &DeviceProfile,
    tiling: &TilingConfig,
    measured: Option<&MeasuredTimings>,
) -> Result<SelectionPlan> {
    validate_inputs(layers, measured)?;
    let device_cmr = cmr(device);
    let mut plans = Vec::with_capacity(layers.len());
    for layer in layers {
        let candidates: Vec<Candidate> = CANDIDATES
            .iter()
            .map(|&scheme| Candidate { scheme, estimate: estimate(layer, scheme, dtype, device, tiling, measured) })
            .collect();
        let mut chosen = candidates[0];
        for c in &candidates[1..] {
            if c.estimate.overhead_pct < chosen.estimate.overhead_pct {
                chosen = *c;
            }
        }
        let intensity = arithmetic_intensity(layer.shape, dtype);
        plans.push(LayerPlan {
            layer_index: layer.layer_index,
            gemm: layer.shape,
            intensity,
            bound: classify(intensity, device_cmr),
            chosen: chosen.scheme,
            candidates,
        });
    }
    let total_base_time: f64 = plans.iter().map(|p| p.chosen_estimate().base_time).sum();
    let total_protected_time: f64 = plans.iter().map(|p| p.chosen_estimate().protected_time).sum();
    Ok(SelectionPlan {
        layers: plans,
        total_base_time,
        total_protected_time,
        aggregate_overhead_pct: overhead_pct(total_base_time, total_protected_time),
    })
}

/// Aggregate overhead of applying one scheme to every layer, from the same
/// cost sources `select` uses.
pub fn uniform_policy_overhead(
    layers: &[LayerGemm],
    scheme: Scheme,
    dtype: DType,
    device: &DeviceProfile,
    tiling: &TilingConfig,
    measured: Option<&MeasuredTimings>,
) -> Result<f64> {
    validate_inputs(layers, measured)?;
    let (base, protected) = layers.iter().fold((0.0, 0.0), |(b, p), l| {
        let e = estimate(l, scheme, dtype, device, tiling, measured);
        (b + e.base_time, p + e.protected_time)
    });
    Ok(overhead_pct(base, protected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(i: usize, m: usize, n: usize, k: usize) -> LayerGemm {
        LayerGemm { layer_index: i, shape: GemmShape::new(m, n, k).unwrap() }
    }

    #[test]
    fn base_time_examples() {
        let t4 = DeviceProfile::t4();
        let sq = GemmShape::square(2048).unwrap();
        let t = base_time(sq, DType::BINARY16, &t4);
        assert!((t - 17_179_869_184.0 / 65e12).abs() < 1e-15);
        assert!((t - 264.3e-6).abs() < 0.1e-6);

        let small = GemmShape::new(8, 512, 16).unwrap();
        let t = base_time(small, DType::BINARY16, &t4);
        // 2 B * (8*16 + 16*512 + 8*512) = 24832 B on the memory side.
        assert_eq!(gemm_bytes(small, DType::BINARY16), 24_832);
        assert_eq!(t, 24_832.0 / 320e9);
        assert!((t - 77.6e-9).abs() < 0.1e-9);

        let unit = DeviceProfile::new("unit", 1.0, None, 1.0, None).unwrap();
        // flops 2*m*n*k equals bytes 2*(mk+kn+mn) at m=n=k=3 (AI = 1).
        let s = GemmShape::square(3).unwrap();
        assert_eq!(gemm_flops(s), gemm_bytes(s, DType::BINARY16));
        assert_eq!(base_time(s, DType::BINARY16, &unit), 54.0);
    }

    #[test]
    fn bandwidth_bound_one_sided_is_free() {
        let t4 = DeviceProfile::t4();
        let tiling = TilingConfig::default();
        let s = GemmShape::new(8, 512, 512).unwrap();
        let base = base_time(s, DType::BINARY16, &t4);
        let one = scheme_time(s, DType::BINARY16, &t4, Scheme::ThreadOneSided, &tiling);
        assert_eq!(one, base);
    }

    #[test]
    fn compute_bound_replication_doubles() {
        let t4 = DeviceProfile::t4();
        let tiling = TilingConfig::default();
        let s = GemmShape::square(2048).unwrap();
        let base = base_time(s, DType::BINARY16, &t4);
        for scheme in [Scheme::ThreadReplicationFull, Scheme::ThreadReplicationSingleAcc] {
            let r = scheme_time(s, DType::BINARY16, &t4, scheme, &tiling);
            assert!((r / base - 2.0).abs() < 1e-12);
        }
        let global = overhead_pct(base, scheme_time(s, DType::BINARY16, &t4, Scheme::GlobalAbft, &tiling));
        let one = overhead_pct(base, scheme_time(s, DType::BINARY16, &t4, Scheme::ThreadOneSided, &tiling));
        assert!(global < one, "global {global} one-sided {one}");
        assert!(scheme_note(Scheme::ThreadReplicationFull).is_some());
    }

    #[test]
    fn selection_follows_intensity() {
        let t4 = DeviceProfile::t4();
        let tiling = TilingConfig::default();
        let big = [layer(0, 2048, 2048, 2048), layer(1, 4096, 1536, 2048)];
        let plan = select(&big, DType::BINARY16, &t4, &tiling, None).unwrap();
        assert!(plan.layers.iter().all(|l| l.intensity > 2.0 * 203.125 && l.chosen == Scheme::GlobalAbft));

        let small = [layer(0, 8, 512, 16), layer(1, 64, 64, 64), layer(2, 256, 256, 256)];
        let plan = select(&small, DType::BINARY16, &t4, &tiling, None).unwrap();
        assert!(plan.layers.iter().all(|l| l.intensity < 203.125 / 2.0 && l.chosen == Scheme::ThreadOneSided));
    }

    #[test]
    fn measured_timings_override() {
        let t4 = DeviceProfile::t4();
        let tiling = TilingConfig::default();
        let layers = [layer(0, 8, 512, 16), layer(1, 8, 256, 512)];
        let mut m = MeasuredTimings::new();
        m.insert(1, Scheme::Unprotected, 10e-6).unwrap();
        m.insert(1, Scheme::GlobalAbft, 10.5e-6).unwrap();
        m.insert(1, Scheme::ThreadOneSided, 12e-6).unwrap();
        let plan = select(&layers, DType::BINARY16, &t4, &tiling, Some(&m)).unwrap();
        assert_eq!(plan.layers[0].chosen, Scheme::ThreadOneSided);
        assert_eq!(plan.layers[1].chosen, Scheme::GlobalAbft);
        let est = plan.layers[1].chosen_estimate();
        assert_eq!(est.source, CostSource::Measured);
        assert!((est.overhead_pct - 5.0).abs() < 1e-9);

        let mut bad = MeasuredTimings::new();
        bad.insert(7, Scheme::GlobalAbft, 1e-6).unwrap();
        assert!(matches!(
            select(&layers, DType::BINARY16, &t4, &tiling, Some(&bad)),
            Err(AbftError::Validation(_))
        ));
        assert!(m.insert(0, Scheme::GlobalAbft, -1.0).is_err());
    }

    #[test]
    fn ties_prefer_global() {
        let t4 = DeviceProfile::t4();
        let layers = [layer(0, 8, 8, 8)];
        let mut m = MeasuredTimings::new();
        m.insert(0, Scheme::GlobalAbft, 2e-6).unwrap();
        m.insert(0, Scheme::ThreadOneSided, 2e-6).unwrap();
        let plan = select(&layers, DType::BINARY16, &t4, &TilingConfig::default(), Some(&m)).unwrap();
        assert_eq!(plan.layers[0].chosen, Scheme::GlobalAbft);
    }

    #[test]
    fn empty_layers_rejected() {
        assert!(select(&[], DType::BINARY16, &DeviceProfile::t4(), &TilingConfig::default(), None).is_err());
    }
}
