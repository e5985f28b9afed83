//! Every scheme on the tiled simulator: verdicts, localization and op counts.
//!
//! cargo run --example thread_level_schemes

use abft_guard::tiled::{count_redundant_ops, per_step_thread_ops, Domain};
use abft_guard::{execute, FaultSpec, Matrix, Scheme, TilingConfig, ToleranceMode};

fn main() -> abft_guard::Result<()> {
    let tiling = TilingConfig::new((32, 32), (16, 16), (8, 4), 2)?;
    let a = Matrix::from_fn(48, 40, |r, c| ((r * 5 + c * 3) % 11) as i64 - 5);
    let b = Matrix::from_fn(40, 36, |r, c| ((r * 7 + c) % 9) as i64 - 4);
    let fault = FaultSpec::output_element(21, 30, 3.0);
    println!("tiling {tiling}, fault at (21, 30) owned by thread {}", tiling.thread_of(21, 30));

    for scheme in Scheme::ALL {
        let r = execute(&a, &b, &tiling, scheme, &[fault], ToleranceMode::Exact)?;
        let (mma, ck) = per_step_thread_ops(scheme, &tiling);
        println!(
            "\n{scheme}: detected {} ({} verdicts, {} firing); per step/thread +{mma} MMAs, +{ck} checksum ops",
            r.detected,
            r.verdicts.len(),
            r.firing().count()
        );
        for v in r.firing() {
            match v.domain {
                Domain::Thread { coord, row0, col0, rows, cols } => {
                    println!("  thread {coord}: rows {row0}..{} cols {col0}..{}", row0 + rows, col0 + cols)
                }
                Domain::Global => println!("  global: {} vs {}", v.verdict.lhs, v.verdict.rhs),
            }
        }
        let closed = count_redundant_ops(scheme, &tiling, r.padded)?;
        println!("  counts {:?} (closed form matches: {})", r.op_counts, r.op_counts == closed);
    }
    Ok(())
}
