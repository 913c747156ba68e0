//! Experience replay on MNIST-360: reservoir memory, no calibration terms.
//!
//! cargo run --release --example mnist360_er -- [buffer] [seed]
//!
//! Reads MNIST from `COCA_DATA_DIR`, falling back to `data/mnist` at the
//! workspace root.

use std::path::PathBuf;
use std::time::Instant;

use coca::cli::RunConfig;
use coca::trainer::{run_experiment, AblationConfig, StreamKind};

fn data_dir() -> PathBuf {
    std::env::var_os("COCA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn main() -> coca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = RunConfig {
        stream: StreamKind::Mnist360,
        data_dir: Some(data_dir()),
        buffer: args.first().and_then(|a| a.parse().ok()).unwrap_or(500),
        seed: args.get(1).and_then(|a| a.parse().ok()).unwrap_or(0),
        ..RunConfig::default()
    };
    config.set_ablation(AblationConfig::ER);

    let start = Instant::now();
    let report = run_experiment(&config)?;
    println!(
        "ER B={} seed {}: average accuracy {:.2}% after {} steps ({:.1}s)",
        config.buffer,
        config.seed,
        report.class_il.average_accuracy,
        report.steps,
        start.elapsed().as_secs_f64()
    );
    for (c, acc) in report.class_il.per_class_accuracy.iter().enumerate() {
        if let Some(a) = acc {
            println!("  digit {c}: {a:.1}%");
        }
    }
    Ok(())
}
