//! Arithmetic intensity of NN layers against device compute-to-memory ratios.
//!
//! cargo run --example roofline_intensity

use abft_guard::roofline::{aggregate_report, cmr, intensity_report};
use abft_guard::shapes::model_to_gemm_sequence;
use abft_guard::{fixtures, DType, GemmShape, ModelSpec, PaddingPolicy};

fn report(model: &ModelSpec, pad: PaddingPolicy) -> abft_guard::Result<()> {
    let t4 = fixtures::t4();
    let seq = model_to_gemm_sequence(model, pad)?;
    println!("{} (batch {}, padding {:?})", model.name, model.batch, pad);
    for l in &seq {
        let r = intensity_report(l.shape, DType::BINARY16, &t4);
        println!("  layer {:>2}  {:>22}  AI {:>8.3}  {}", l.layer_index, l.shape.to_string(), r.intensity, r.bound);
    }
    let shapes: Vec<GemmShape> = seq.iter().map(|l| l.shape).collect();
    let agg = aggregate_report(&shapes, DType::BINARY16, &t4)?;
    println!("  aggregate AI {:.3} -> {} on {}", agg.intensity, agg.bound, t4.name);
    Ok(())
}

fn main() -> abft_guard::Result<()> {
    let (t4, p4) = (fixtures::t4(), fixtures::p4());
    println!("CMR: {} {:.1}, {} {:.1}\n", t4.name, cmr(&t4), p4.name, cmr(&p4));

    for batch in [1, 2048] {
        report(&fixtures::dlrm_mlp_bottom(batch), PaddingPolicy::MultipleOf8)?;
        report(&fixtures::dlrm_mlp_top(batch), PaddingPolicy::MultipleOf8)?;
    }
    report(&fixtures::resnet50_conv1(), PaddingPolicy::None)?;
    report(&fixtures::resnet50_fc(), PaddingPolicy::None)?;

    println!("\nsquare GEMMs (AI = S/3 in FP16):");
    for s in [32, 64, 128, 256, 512, 1024, 2048] {
        let r = intensity_report(GemmShape::square(s)?, DType::BINARY16, &t4);
        println!("  S={s:>5}  AI {:>7.1}  {}", r.intensity, r.bound);
    }
    Ok(())
}
