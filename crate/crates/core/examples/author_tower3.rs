//! Writes the bundled three-block demonstration trace.
//!
//! cargo run -p vine-teleop --example author_tower3 -- [OUT]

use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/tower3.jsonl"));
    let trace = vine_teleop::script::default_tower_trace()?;
    trace.save(&out)?;
    let report = vine_teleop::run_replay(
        &Default::default(),
        &trace,
        &vine_teleop::Scenario::default_scenario(),
    )?;
    println!("{}: {} samples", out.display(), trace.sample_count());
    println!("{}", report.to_json());
    Ok(())
}
