//! Determinism guarantees: seeded random streams make every pipeline a
//! pure function of (config, seed), independent of thread scheduling.

use fedsim::runner;
use fedsim::synthgen::{generate_synthetic, SynthConfig};

fn main() -> fedsim::Result<()> {
    // same seed, same dataset — bit for bit
    let cfg = SynthConfig::new(40, vec![1.0], 3, 10, 3, 99);
    let a = generate_synthetic(&cfg)?;
    let b = generate_synthetic(&cfg)?;
    let same = a
        .iter()
        .zip(b.iter())
        .all(|((ida, sa), (idb, sb))| ida == idb && sa == sb);
    println!("same-seed datasets identical: {same}");

    // a full experiment record is byte-identical across worker counts
    let mut exp = runner::preset("synth-budget-0.75").expect("preset");
    exp.fed.as_mut().unwrap().rounds = 10; // keep the demo quick
    let dir = std::env::temp_dir();
    let serial = dir.join("fedsim_w1.jsonl");
    let parallel = dir.join("fedsim_w8.jsonl");
    runner::run_experiment(&exp, &serial, Some(1))?;
    runner::run_experiment(&exp, &parallel, Some(8))?;
    let identical = std::fs::read(&serial)? == std::fs::read(&parallel)?;
    println!("1-worker vs 8-worker records identical: {identical}");
    Ok(())
}
