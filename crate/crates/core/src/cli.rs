//! `abft-guard` command line: `analyze`, `select`, `check` and `simulate`.
//!
//! Exit codes: 0 success, 1 detection outcome differs from `--expect-*`,
//! 2 usage or validation error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::campaign::{random_matrix, run_campaign, trial_rng, CampaignConfig, CampaignReport};
use crate::cost::{self, MeasuredTimings};
use crate::f16;
use crate::io::{self, AnalysisDocument, DocumentError, PlanDocument, SCHEMA_VERSION};
use crate::numeric::{DType, DTypeTag, Element, ToleranceMode};
use crate::roofline;
use crate::shapes::{model_to_gemm_sequence, GemmShape, ModelSpec, PaddingPolicy};
use crate::tiled::{execute, DomainVerdict, FaultSite, FaultSpec, OpCounts, Scheme, TilingConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "abft-guard", version, about = "Checksum-based fault detection for GEMM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer and aggregate arithmetic intensity against a device.
    Analyze(AnalyzeArgs),
    /// Choose global or thread-level ABFT per layer.
    Select(SelectArgs),
    /// Run one protected GEMM on the tiled simulator, optionally with faults.
    Check(CheckArgs),
    /// Run a seeded fault-injection campaign.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model document (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Device document (JSON).
    #[arg(long)]
    pub device: PathBuf,
    /// GEMM dimension padding: `none` or `eight`.
    #[arg(long, default_value = "none")]
    pub pad: PaddingPolicy,
    /// Override the model's batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value = "binary16")]
    pub dtype: DTypeTag,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `layer_index,ai,bound` rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Measured times, CSV `layer_index,scheme,time_us`.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    /// Tiling `tb_m,tb_n,warp_m,warp_n,thread_m,thread_n,k_step`.
    #[arg(long)]
    pub tiling: Option<TilingConfig>,
    /// Write the plan here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = "one-sided")]
    pub scheme: Scheme,
    #[arg(long, default_value = "exact-int")]
    pub dtype: DTypeTag,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of faults at random sites.
    #[arg(long, default_value_t = 0)]
    pub inject: usize,
    /// Fault on output element `row,col`; repeatable.
    #[arg(long = "fault-at", value_parser = parse_position)]
    pub fault_at: Vec<(usize, usize)>,
    /// Fault magnitude; drawn from the seed when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Tiling `tb_m,tb_n,warp_m,warp_n,thread_m,thread_n,k_step`.
    #[arg(long, default_value = "32,32,16,16,8,4,2")]
    pub tiling: TilingConfig,
    #[arg(long, conflicts_with = "expect_clean")]
    pub expect_detect: bool,
    #[arg(long)]
    pub expect_clean: bool,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Campaign document (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write per-scheme CSV rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_position(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected `row,col`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    Ok((p(r)?, p(c)?))
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INVALID
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, DocumentError> {
    match cmd {
        Command::Analyze(a) => analyze(a, out),
        Command::Select(a) => select(a, out, err),
        Command::Check(a) => check(a, out),
        Command::Simulate(a) => simulate(a, out, err),
    }
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<(), DocumentError> {
    match path {
        Some(p) => io::write_text(p, text),
        None => out.write_all(text.as_bytes()).map_err(|source| DocumentError::Io { path: "<stdout>".into(), source }),
    }
}

fn load_inputs(args: &ModelArgs) -> Result<(ModelSpec, crate::shapes::DeviceProfile, DType), DocumentError> {
    let mut model = io::parse_model(&io::read_text(&args.model)?)?;
    if let Some(b) = args.batch {
        if b == 0 {
            return Err(DocumentError::Invalid(crate::AbftError::Validation("--batch must be positive".into())));
        }
        model.batch = b;
    }
    let device = io::parse_device(&io::read_text(&args.device)?)?;
    Ok((model, device, DType::from_tag(args.dtype)))
}

fn analyze(args: AnalyzeArgs, out: &mut dyn Write) -> Result<i32, DocumentError> {
    let (model, device, dtype) = load_inputs(&args.model)?;
    let doc = AnalysisDocument::build(&model, &device, dtype, args.model.pad)?;
    if let Some(p) = &args.csv {
        io::write_text(p, &doc.to_csv())?;
    }
    emit(&io::to_json(&doc), args.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn select(args: SelectArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, DocumentError> {
    let (model, device, dtype) = load_inputs(&args.model)?;
    let measured: Option<MeasuredTimings> = match &args.timings {
        Some(p) => Some(io::parse_timings(&io::read_text(p)?)?),
        None => None,
    };
    let tiling = args.tiling.unwrap_or_default();
    let layers = model_to_gemm_sequence(&model, args.model.pad)?;
    let plan = cost::select(&layers, dtype, &device, &tiling, measured.as_ref())?;
    let doc = PlanDocument {
        schema_version: SCHEMA_VERSION,
        model: model.name.clone(),
        batch: model.batch,
        device: device.name.clone(),
        dtype,
        padding: args.model.pad,
        tiling,
        cmr: roofline::cmr(&device),
        alu_throughput_defaulted: device.alu_throughput_defaulted,
        measured_entries: measured.as_ref().map_or(0, MeasuredTimings::len),
        plan,
    };
    write_plan_summary(&doc, err);
    emit(&io::to_json(&doc), args.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn write_plan_summary(doc: &PlanDocument, err: &mut dyn Write) {
    let _ = writeln!(err, "{} on {} (CMR {:.1})", doc.model, doc.device, doc.cmr);
    if doc.alu_throughput_defaulted {
        let _ = writeln!(err, "note: device omits alu_tflops; assuming 1/8 of tensor throughput");
    }
    let _ = writeln!(err, "{:>5}  {:>20}  {:>9}  {:>9}  {:<16}  {:>10}", "layer", "m x n x k", "AI", "bound", "scheme", "overhead%");
    for l in &doc.plan.layers {
        let e = l.chosen_estimate();
        let _ = writeln!(
            err,
            "{:>5}  {:>20}  {:>9.2}  {:>9}  {:<16}  {:>10.3}",
            l.layer_index,
            l.gemm.to_string(),
            l.intensity,
            l.bound.to_string(),
            l.chosen.to_string(),
            e.overhead_pct
        );
    }
    let _ = writeln!(err, "aggregate overhead: {:.3}%", doc.plan.aggregate_overhead_pct);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub shape: GemmShape,
    pub scheme: Scheme,
    pub dtype: DTypeTag,
    pub tiling: TilingConfig,
    pub seed: u64,
    pub faults: Vec<FaultSpec>,
    pub detected: bool,
    pub firing: Vec<DomainVerdict>,
    pub verdict_count: usize,
    pub op_counts: OpCounts,
}

fn check(args: CheckArgs, out: &mut dyn Write) -> Result<i32, DocumentError> {
    let report = match args.dtype {
        DTypeTag::ExactInt => check_typed::<i64>(&args, ToleranceMode::Exact)?,
        DTypeTag::Binary16 => check_typed::<f16>(&args, ToleranceMode::BINARY16)?,
        DTypeTag::Binary32 => check_typed::<f32>(&args, ToleranceMode::BINARY32)?,
    };
    let text = if args.json { io::to_json(&report) } else { render_check(&report) };
    emit(&text, None, out)?;
    let matched = if args.expect_detect {
        report.detected
    } else if args.expect_clean {
        !report.detected
    } else {
        true
    };
    Ok(if matched { EXIT_OK } else { EXIT_MISMATCH })
}

fn check_typed<E: Element>(args: &CheckArgs, mode: ToleranceMode) -> Result<CheckReport, DocumentError> {
    let shape = GemmShape::new(args.m, args.n, args.k)?;
    args.tiling.validate()?;
    let mut rng = trial_rng(args.seed, 0, false);
    let a = random_matrix::<E, _>(&mut rng, shape.m, shape.k);
    let b = random_matrix::<E, _>(&mut rng, shape.k, shape.n);
    let draw_delta = |rng: &mut rand_chacha::ChaCha8Rng| match args.delta {
        Some(d) => d,
        None if E::TAG == DTypeTag::ExactInt => f64::from(rng.random_range(1..=64)),
        None => 1.0,
    };
    let mut faults = Vec::new();
    for &(row, col) in &args.fault_at {
        faults.push(FaultSpec::output_element(row, col, draw_delta(&mut rng)));
    }
    for _ in 0..args.inject {
        let site = FaultSite::random(&mut rng, shape, &args.tiling);
        faults.push(FaultSpec { site, delta: draw_delta(&mut rng) });
    }
    let report = execute(&a, &b, &args.tiling, args.scheme, &faults, mode)?;
    Ok(CheckReport {
        schema_version: SCHEMA_VERSION,
        shape,
        scheme: args.scheme,
        dtype: E::TAG,
        tiling: args.tiling,
        seed: args.seed,
        faults,
        detected: report.detected,
        firing: report.firing().copied().collect(),
        verdict_count: report.verdicts.len(),
        op_counts: report.op_counts,
    })
}

fn render_check(r: &CheckReport) -> String {
    let mut s = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(s, "gemm {} ({}), scheme {}, tiling {}", r.shape, r.dtype, r.scheme, r.tiling);
    let _ = writeln!(
        s,
        "ops: base_mma {} redundant_mma {} checksum {}",
        r.op_counts.base_mma_count, r.op_counts.redundant_mma_count, r.op_counts.checksum_op_count
    );
    for f in &r.faults {
        let _ = writeln!(s, "fault: {:?} delta {}", f.site, f.delta);
    }
    let _ = writeln!(s, "verdicts: {} evaluated, {} firing", r.verdict_count, r.firing.len());
    for v in &r.firing {
        let _ = writeln!(
            s,
            "  {:?}: checksum {} vs summation {} (tolerance {})",
            v.domain, v.verdict.lhs, v.verdict.rhs, v.verdict.tolerance_used
        );
    }
    let _ = writeln!(s, "{}", if r.detected { "DETECTED" } else { "CLEAN" });
    s
}

fn simulate(args: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, DocumentError> {
    let config: CampaignConfig = io::from_json(&io::read_text(&args.config)?)?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(DocumentError::Schema {
            field: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", config.schema_version),
        });
    }
    let report: CampaignReport = run_campaign(&config)?;
    let _ = writeln!(err, "{:<20} {:>8} {:>8} {:>8} {:>8} {:>10}", "scheme", "trials", "detected", "masked", "missed", "false_pos");
    for r in &report.schemes {
        let _ = writeln!(
            err,
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>10}",
            r.scheme.to_string(),
            r.trials,
            r.detected,
            r.masked,
            r.missed,
            r.false_positives
        );
    }
    if let Some(p) = &args.csv {
        io::write_text(p, &report.to_csv())?;
    }
    emit(&io::to_json(&report), args.json.as_deref(), out)?;
    Ok(EXIT_OK)
}

/// Entry point for the binary.
pub fn main() -> std::process::ExitCode {
    let code = run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::ExitCode::from(code as u8)
}
