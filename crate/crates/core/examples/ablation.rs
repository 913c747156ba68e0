//! The CKD / PT / SCL toggle lattice on MNIST-360, averaged over seeds.
//! Writes `ablation.csv` under the output directory.
//!
//! cargo run --release --example ablation -- [seeds] [buffer] [out_dir]

use std::path::PathBuf;

use coca::cli::{ablate, RunConfig};
use coca::trainer::{AblationConfig, Datasets};

fn data_dir() -> PathBuf {
    std::env::var_os("COCA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn main() -> coca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds = args.first().and_then(|a| a.parse().ok()).unwrap_or(1);
    let config = RunConfig {
        buffer: args.get(1).and_then(|a| a.parse().ok()).unwrap_or(500),
        output_dir: Some(PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "runs".into()))),
        run_name: "ablation".into(),
        ..RunConfig::default()
    };
    let data = Datasets::load(&data_dir())?;
    let rows = ablate(&config, &data, &AblationConfig::lattice(), seeds)?;
    println!("\n{:<12} {:>8} {:>6}", "components", "mean", "std");
    for r in &rows {
        println!("{:<12} {:>8.2} {:>6.2}", r.toggles.label(), r.mean(), r.std());
    }
    Ok(())
}
