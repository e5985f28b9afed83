//! Seeded fault-injection campaign in exact and binary16 modes.
//!
//! cargo run --release --example fault_campaign
//! (set ABFT_GUARD_THREADS to cap worker threads)

use abft_guard::campaign::{run_campaign, CampaignConfig, DeltaDistribution, SizeRange};
use abft_guard::io::SCHEMA_VERSION;
use abft_guard::{DTypeTag, Scheme};

fn main() -> abft_guard::Result<()> {
    let mut config = CampaignConfig {
        schema_version: SCHEMA_VERSION,
        trials: 2000,
        control_trials: None,
        seed: 42,
        m: SizeRange { min: 1, max: 48 },
        n: SizeRange { min: 1, max: 48 },
        k: SizeRange { min: 1, max: 48 },
        schemes: Scheme::ALL.to_vec(),
        dtype: DTypeTag::ExactInt,
        delta: DeltaDistribution::Integer { min_abs: 1, max_abs: 1000 },
        tiling: None,
    };
    println!("exact-int:");
    print!("{}", run_campaign(&config)?.to_csv());

    // Magnitudes from 2^-20 to 2^4: small ones fall inside the tolerance band.
    config.dtype = DTypeTag::Binary16;
    config.delta = DeltaDistribution::LogUniform { min_log2: -20.0, max_log2: 4.0 };
    println!("\nbinary16:");
    print!("{}", run_campaign(&config)?.to_csv());
    Ok(())
}
