//! Checksum-based fault detection for matrix multiplication.
//!
//! The crate covers four pieces:
//!
//! * [`shapes`] and [`roofline`]: mapping NN layers to GEMM problems and
//!   computing their arithmetic intensity against a device's
//!   compute-to-memory ratio.
//! * [`checksum`]: global ABFT for a single GEMM and for a chain of layers
//!   with offline weight checksums, fused output summation and deferred
//!   verification.
//! * [`tiled`]: a functional simulator of a block/warp/thread tiled GEMM that
//!   runs global ABFT, one- and two-sided thread-level ABFT and thread-level
//!   replication with fault injection.
//! * [`cost`]: a roofline cost model for each scheme and the per-layer
//!   selector that picks the cheapest protection.
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example <name>`.

pub mod campaign;
pub mod checksum;
pub mod cli;
pub mod cost;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod matrix;
pub mod numeric;
pub mod roofline;
pub mod shapes;
pub mod tiled;

pub use checksum::{
    checksum_dot, column_checksum, global_abft_check, output_summation, row_checksum, run_protected_pipeline,
    Activation, ChecksumVector, PipelineFault, PipelineReport, ProtectedLayer, Verdict,
};
pub use error::{AbftError, Result};
pub use matrix::Matrix;
pub use numeric::{DType, DTypeTag, Element, ToleranceMode};
pub use shapes::{DeviceProfile, GemmShape, LayerSpec, ModelSpec, PaddingPolicy};
pub use tiled::{execute, ExecutionReport, FaultSite, FaultSpec, OpCounts, Scheme, ThreadCoord, TilingConfig};

pub use half::f16;
