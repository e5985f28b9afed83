//! Global ABFT on a single GEMM: checksum dot product versus output summation.
//!
//! cargo run --example global_abft

use abft_guard::checksum::{checksum_dot, column_checksum, global_abft_check, output_summation, row_checksum};
use abft_guard::matrix::gemm_acc;
use abft_guard::{f16, Matrix, ToleranceMode};

fn main() -> abft_guard::Result<()> {
    // Exact mode: any corruption of C changes the sum of its entries.
    let a = Matrix::from_fn(4, 6, |r, c| (r as i64 * 3 + c as i64) % 7 - 2);
    let b = Matrix::from_fn(6, 5, |r, c| (r as i64 + 2 * c as i64) % 5 - 1);
    let mut c = Matrix::<i64>::narrowed(&gemm_acc(&a, &b)?);

    let lhs = checksum_dot(&column_checksum(&a)?, &row_checksum(&b)?)?;
    println!("checksum dot {lhs}, output summation {}", output_summation(&c)?);
    println!("clean: {:?}", global_abft_check(&a, &b, &c, ToleranceMode::Exact)?);

    *c.get_mut(2, 3) += 1;
    println!("C[2][3] += 1: {:?}", global_abft_check(&a, &b, &c, ToleranceMode::Exact)?);

    // Two compensating corruptions leave the sum unchanged: a documented blind spot.
    *c.get_mut(0, 0) -= 1;
    println!("plus C[0][0] -= 1: {:?}", global_abft_check(&a, &b, &c, ToleranceMode::Exact)?);

    // Binary16 mode compares within a tolerance that scales with K.
    let a16 = Matrix::from_fn(32, 64, |r, c| f16::from_f32(((r * 7 + c * 3) % 13) as f32 / 13.0 - 0.5));
    let b16 = Matrix::from_fn(64, 16, |r, c| f16::from_f32(((r * 5 + c * 11) % 17) as f32 / 17.0 - 0.5));
    let mut c16 = Matrix::<f16>::narrowed(&gemm_acc(&a16, &b16)?);
    println!("\nbinary16 clean: {:?}", global_abft_check(&a16, &b16, &c16, ToleranceMode::BINARY16)?);
    c16.set(5, 5, c16.get(5, 5) + f16::from_f32(4.0));
    println!("binary16 C[5][5] += 4: {:?}", global_abft_check(&a16, &b16, &c16, ToleranceMode::BINARY16)?);
    Ok(())
}
