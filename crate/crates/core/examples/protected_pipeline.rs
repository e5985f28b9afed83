//! A chain of protected layers with offline weight checksums, fused output
//! summation and deferred verification.
//!
//! cargo run --example protected_pipeline

use abft_guard::checksum::{run_protected_pipeline, Activation, PipelineFault, ProtectedLayer};
use abft_guard::{f16, Matrix, ToleranceMode};

fn weights(rows: usize, cols: usize, seed: usize) -> Matrix<f16> {
    let scale = 1.0 / (rows as f32).sqrt();
    Matrix::from_fn(rows, cols, |r, c| {
        f16::from_f32((((r * 31 + c * 17 + seed * 7) % 23) as f32 / 11.5 - 1.0) * scale)
    })
}

fn main() -> abft_guard::Result<()> {
    let widths = [13, 64, 32, 16];
    let layers: Vec<ProtectedLayer<f16>> =
        widths.windows(2).enumerate().map(|(i, w)| ProtectedLayer::new(weights(w[0], w[1], i))).collect();
    let input = Matrix::from_fn(8, widths[0], |r, c| f16::from_f32(((r + 2 * c) % 9) as f32 / 4.5 - 1.0));

    let clean = run_protected_pipeline(&input, &layers, Activation::Relu, ToleranceMode::BINARY16, &[])?;
    println!("clean run, detected = {}", clean.detected());
    for (i, v) in clean.verdicts.iter().enumerate() {
        println!("  layer {i}: checksum {:+.5} summation {:+.5} tolerance {:.5}", v.lhs, v.rhs, v.tolerance_used);
    }

    // A fault smaller than the layer's tolerance is masked; a larger one fires
    // that layer's verdict.
    for delta in [0.25, 4.0] {
        let fault = PipelineFault { layer: 1, row: 3, col: 7, delta };
        let faulty = run_protected_pipeline(&input, &layers, Activation::Relu, ToleranceMode::BINARY16, &[fault])?;
        println!("\nfault {fault:?}, detected = {}", faulty.detected());
        for (i, v) in faulty.verdicts.iter().enumerate() {
            println!("  layer {i}: {}", if v.detected { "FIRED" } else { "ok" });
        }
    }
    Ok(())
}
