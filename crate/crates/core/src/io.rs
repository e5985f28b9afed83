//! JSON and CSV documents: model and device descriptions, measured timings,
//! analysis reports and selection plans.
//!
//! Every document carries `schema_version`; this crate reads and writes
//! version 1. Schema violations are reported with the JSON path of the
//! offending field.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{MeasuredTimings, SelectionPlan};
use crate::error::AbftError;
use crate::numeric::DType;
use crate::roofline::{self, Bound, IntensityReport};
use crate::shapes::{
    model_to_gemm_sequence, ConvSpec, DeviceProfile, GemmShape, InputShape, LayerGemm, LayerSpec, ModelSpec,
    PaddingPolicy,
};
use crate::tiled::{Scheme, TilingConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{field}: {message}")]
    Schema { field: String, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Invalid(#[from] AbftError),
}

impl DocumentError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        DocumentError::Schema { field: field.into(), message: message.into() }
    }
}

/// Deserialize JSON, reporting the path of the first offending field.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, DocumentError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        DocumentError::schema(field, e.into_inner().to_string())
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String, DocumentError> {
    std::fs::read_to_string(path).map_err(|source| DocumentError::Io { path: path.display().to_string(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DocumentError> {
    std::fs::write(path, text).map_err(|source| DocumentError::Io { path: path.display().to_string(), source })
}

fn check_version(v: u32) -> Result<(), DocumentError> {
    if v != SCHEMA_VERSION {
        return Err(DocumentError::schema("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}")));
    }
    Ok(())
}

fn positive(field: &str, v: usize) -> Result<(), DocumentError> {
    if v == 0 {
        return Err(DocumentError::schema(field, "must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub name: String,
    pub batch: usize,
    pub input: InputDocument,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDocument {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

fn one_one() -> [usize; 2] {
    [1, 1]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerDocument {
    Conv {
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one_one")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
        #[serde(default = "one")]
        groups: usize,
    },
    Fc {
        out_features: usize,
    },
}

impl ModelDocument {
    pub fn from_spec(model: &ModelSpec) -> Self {
        ModelDocument {
            schema_version: SCHEMA_VERSION,
            name: model.name.clone(),
            batch: model.batch,
            input: InputDocument { h: model.input.h, w: model.input.w, c: model.input.c },
            layers: model
                .layers
                .iter()
                .map(|l| match *l {
                    LayerSpec::Conv(c) => LayerDocument::Conv {
                        out_channels: c.out_channels,
                        kernel: [c.kernel.0, c.kernel.1],
                        stride: [c.stride.0, c.stride.1],
                        padding: [c.padding.0, c.padding.1],
                        groups: c.groups,
                    },
                    LayerSpec::FullyConnected { out_features } => LayerDocument::Fc { out_features },
                })
                .collect(),
        }
    }

    /// Validate field values and layer geometry.
    pub fn into_spec(self) -> Result<ModelSpec, DocumentError> {
        check_version(self.schema_version)?;
        positive("batch", self.batch)?;
        positive("input.h", self.input.h)?;
        positive("input.w", self.input.w)?;
        positive("input.c", self.input.c)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            let at = |f: &str| format!("layers[{i}].{f}");
            layers.push(match l {
                LayerDocument::Conv { out_channels, kernel, stride, padding, groups } => {
                    positive(&at("out_channels"), out_channels)?;
                    positive(&at("kernel[0]"), kernel[0])?;
                    positive(&at("kernel[1]"), kernel[1])?;
                    positive(&at("stride[0]"), stride[0])?;
                    positive(&at("stride[1]"), stride[1])?;
                    if groups != 1 {
                        return Err(DocumentError::schema(at("groups"), "grouped convolutions are not supported"));
                    }
                    LayerSpec::Conv(ConvSpec::new(
                        out_channels,
                        (kernel[0], kernel[1]),
                        (stride[0], stride[1]),
                        (padding[0], padding[1]),
                    ))
                }
                LayerDocument::Fc { out_features } => {
                    positive(&at("out_features"), out_features)?;
                    LayerSpec::fc(out_features)
                }
            });
        }
        let spec = ModelSpec {
            name: self.name,
            batch: self.batch,
            input: InputShape { h: self.input.h, w: self.input.w, c: self.input.c },
            layers,
        };
        model_to_gemm_sequence(&spec, PaddingPolicy::None).map_err(|e| DocumentError::schema("layers", e.to_string()))?;
        Ok(spec)
    }
}

pub fn parse_model(text: &str) -> Result<ModelSpec, DocumentError> {
    from_json::<ModelDocument>(text)?.into_spec()
}

pub fn model_to_json(model: &ModelSpec) -> String {
    to_json(&ModelDocument::from_spec(model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDocument {
    pub schema_version: u32,
    pub name: String,
    pub tensor_tflops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alu_tflops: Option<f64>,
    pub mem_bw_gbs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_launch_us: Option<f64>,
}

impl DeviceDocument {
    pub fn into_profile(self) -> Result<DeviceProfile, DocumentError> {
        check_version(self.schema_version)?;
        let pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 { Ok(()) } else { Err(DocumentError::schema(field, "must be positive")) }
        };
        pos("tensor_tflops", self.tensor_tflops)?;
        pos("mem_bw_gbs", self.mem_bw_gbs)?;
        if let Some(a) = self.alu_tflops {
            pos("alu_tflops", a)?;
        }
        if let Some(l) = self.verification_launch_us {
            if !(l.is_finite() && l >= 0.0) {
                return Err(DocumentError::schema("verification_launch_us", "must be non-negative"));
            }
        }
        Ok(DeviceProfile::new(
            self.name,
            self.tensor_tflops * 1e12,
            self.alu_tflops.map(|a| a * 1e12),
            self.mem_bw_gbs * 1e9,
            self.verification_launch_us.map(|l| l / 1e6),
        )?)
    }
}

pub fn parse_device(text: &str) -> Result<DeviceProfile, DocumentError> {
    from_json::<DeviceDocument>(text)?.into_profile()
}

pub const TIMINGS_HEADER: [&str; 3] = ["layer_index", "scheme", "time_us"];

#[derive(Debug, Deserialize)]
struct TimingRow {
    layer_index: usize,
    scheme: String,
    time_us: f64,
}

/// Parse `layer_index,scheme,time_us` rows; times are microseconds.
pub fn parse_timings(text: &str) -> Result<MeasuredTimings, DocumentError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| DocumentError::Csv(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TIMINGS_HEADER {
        return Err(DocumentError::Csv(format!(
            "expected header `{}`, got `{}`",
            TIMINGS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = MeasuredTimings::new();
    for (i, row) in rdr.deserialize::<TimingRow>().enumerate() {
        let row = row.map_err(|e| DocumentError::Csv(format!("row {}: {e}", i + 1)))?;
        let scheme: Scheme = row.scheme.parse().map_err(|e| DocumentError::Csv(format!("row {}: {e}", i + 1)))?;
        out.insert(row.layer_index, scheme, row.time_us / 1e6)
            .map_err(|e| DocumentError::Csv(format!("row {}: {e}", i + 1)))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerIntensity {
    pub layer_index: usize,
    pub gemm: GemmShape,
    pub flops: u64,
    pub bytes: u64,
    pub intensity: f64,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDocument {
    pub schema_version: u32,
    pub model: String,
    pub batch: usize,
    pub device: String,
    pub dtype: DType,
    pub padding: PaddingPolicy,
    pub cmr: f64,
    pub layers: Vec<LayerIntensity>,
    pub aggregate: IntensityReport,
}

impl AnalysisDocument {
    pub fn build(
        model: &ModelSpec,
        device: &DeviceProfile,
        dtype: DType,
        padding: PaddingPolicy,
    ) -> Result<AnalysisDocument, AbftError> {
        let seq = model_to_gemm_sequence(model, padding)?;
        let shapes: Vec<GemmShape> = seq.iter().map(|l| l.shape).collect();
        let aggregate = roofline::aggregate_report(&shapes, dtype, device)?;
        let layers = seq
            .iter()
            .map(|&LayerGemm { layer_index, shape }| {
                let r = roofline::intensity_report(shape, dtype, device);
                LayerIntensity { layer_index, gemm: shape, flops: r.flops, bytes: r.bytes, intensity: r.intensity, bound: r.bound }
            })
            .collect();
        Ok(AnalysisDocument {
            schema_version: SCHEMA_VERSION,
            model: model.name.clone(),
            batch: model.batch,
            device: device.name.clone(),
            dtype,
            padding,
            cmr: roofline::cmr(device),
            layers,
            aggregate,
        })
    }

    /// Plot-ready `layer_index,ai,bound` rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer_index", "ai", "bound"]).expect("in-memory write");
        for l in &self.layers {
            w.write_record([l.layer_index.to_string(), l.intensity.to_string(), l.bound.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub schema_version: u32,
    pub model: String,
    pub batch: usize,
    pub device: String,
    pub dtype: DType,
    pub padding: PaddingPolicy,
    pub tiling: TilingConfig,
    pub cmr: f64,
    pub alu_throughput_defaulted: bool,
    pub measured_entries: usize,
    pub plan: SelectionPlan,
}
