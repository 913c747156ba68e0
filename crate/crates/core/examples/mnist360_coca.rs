//! Full method on MNIST-360: replay plus collaborative distillation and
//! collaborative self-supervision. Writes the run directory, then reloads
//! the saved parameters and checks they reproduce the reported accuracy.
//!
//! cargo run --release --example mnist360_coca -- [buffer] [seed] [out_dir]

use std::path::PathBuf;

use coca::cli::RunConfig;
use coca::net::load_checkpoint;
use coca::streams::mnist360_test_set;
use coca::trainer::{evaluate, run_experiment_with_data, Datasets, EvalMode, StreamKind};

fn data_dir() -> PathBuf {
    std::env::var_os("COCA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn main() -> coca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "runs".into()));
    let config = RunConfig {
        stream: StreamKind::Mnist360,
        buffer: args.first().and_then(|a| a.parse().ok()).unwrap_or(500),
        seed: args.get(1).and_then(|a| a.parse().ok()).unwrap_or(0),
        output_dir: Some(out.clone()),
        run_name: "mnist360-coca".into(),
        eval_every: 200,
        ..RunConfig::default()
    };
    let data = Datasets::load(&data_dir())?;
    let report = run_experiment_with_data(&config, &data)?;
    let m = report.mean_losses();
    println!(
        "CoCa B={} seed {}: average accuracy {:.2}%",
        config.buffer, config.seed, report.class_il.average_accuracy
    );
    println!(
        "mean losses: base {:.3}, ckd {:.3}, pt {:.3}, scl {:.3}, total {:.3}",
        m.base, m.ckd, m.pt, m.scl, m.total
    );
    println!("accuracy during the stream:");
    for (step, acc) in &report.curve {
        println!("  step {step:>5}: {acc:.2}%");
    }

    let run_dir = out.join(&config.run_name);
    let restored = load_checkpoint(&run_dir.join("params.bin"))?;
    let again = evaluate(&restored, &mnist360_test_set(&data.test)?, &EvalMode::ClassIl)?;
    assert_eq!(again, report.class_il, "checkpoint reproduces the metrics");
    println!("outputs in {}", run_dir.display());
    Ok(())
}
