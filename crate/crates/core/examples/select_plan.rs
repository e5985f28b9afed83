//! Per-layer choice between global and thread-level ABFT.
//!
//! cargo run --example select_plan

use abft_guard::cost::{select, uniform_policy_overhead, MeasuredTimings, SelectionPlan};
use abft_guard::shapes::{model_to_gemm_sequence, LayerGemm};
use abft_guard::{fixtures, DType, GemmShape, ModelSpec, PaddingPolicy, Scheme, TilingConfig};

fn show(title: &str, layers: &[LayerGemm], measured: Option<&MeasuredTimings>) -> abft_guard::Result<SelectionPlan> {
    let (t4, tiling) = (fixtures::t4(), TilingConfig::default());
    let plan = select(layers, DType::BINARY16, &t4, &tiling, measured)?;
    println!("{title}");
    for l in &plan.layers {
        let e = l.chosen_estimate();
        println!(
            "  layer {} {:>20} AI {:>7.1} -> {:<16} +{:.2}% ({:?})",
            l.layer_index,
            l.gemm.to_string(),
            l.intensity,
            l.chosen.to_string(),
            e.overhead_pct,
            e.source
        );
    }
    let global = uniform_policy_overhead(layers, Scheme::GlobalAbft, DType::BINARY16, &t4, &tiling, measured)?;
    let thread = uniform_policy_overhead(layers, Scheme::ThreadOneSided, DType::BINARY16, &t4, &tiling, measured)?;
    println!(
        "  selected {:.2}% | all global {global:.2}% | all one-sided {thread:.2}%",
        plan.aggregate_overhead_pct
    );
    Ok(plan)
}

fn layers(model: &ModelSpec) -> abft_guard::Result<Vec<LayerGemm>> {
    model_to_gemm_sequence(model, PaddingPolicy::MultipleOf8)
}

fn main() -> abft_guard::Result<()> {
    for batch in [1, 2048] {
        show(&format!("DLRM bottom, batch {batch}"), &layers(&fixtures::dlrm_mlp_bottom(batch))?, None)?;
        show(&format!("DLRM top, batch {batch}"), &layers(&fixtures::dlrm_mlp_top(batch))?, None)?;
    }

    let squares: Vec<LayerGemm> = [64, 256, 1024, 2048, 4096]
        .iter()
        .enumerate()
        .map(|(i, &s)| Ok(LayerGemm { layer_index: i, shape: GemmShape::square(s)? }))
        .collect::<abft_guard::Result<_>>()?;
    show("square GEMMs", &squares, None)?;

    // Measured kernel times replace model estimates where present.
    let mut measured = MeasuredTimings::new();
    measured.insert(0, Scheme::Unprotected, 20e-6)?;
    measured.insert(0, Scheme::GlobalAbft, 21e-6)?;
    measured.insert(0, Scheme::ThreadOneSided, 24e-6)?;
    show("square GEMMs, layer 0 measured", &squares, Some(&measured))?;
    Ok(())
}
