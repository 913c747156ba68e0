//! Sequential MNIST: ten digits split into five two-class tasks presented
//! one after another. Reports Class-IL (argmax over all digits) and Task-IL
//! (argmax within the sample's task) for ER and the full method.
//!
//! cargo run --release --example seq_split -- [buffer] [seed]

use std::path::PathBuf;

use coca::cli::RunConfig;
use coca::trainer::{run_experiment_with_data, AblationConfig, Datasets, StreamKind};

fn data_dir() -> PathBuf {
    std::env::var_os("COCA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn main() -> coca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let data = Datasets::load(&data_dir())?;
    for method in [AblationConfig::ER, AblationConfig::FULL] {
        let mut config = RunConfig {
            stream: StreamKind::SeqSplit,
            buffer: args.first().and_then(|a| a.parse().ok()).unwrap_or(500),
            seed: args.get(1).and_then(|a| a.parse().ok()).unwrap_or(0),
            ..RunConfig::default()
        };
        config.set_ablation(method);
        let r = run_experiment_with_data(&config, &data)?;
        let task = r.task_il.as_ref().expect("split streams carry task ids");
        println!(
            "{:<12} class-il {:6.2}%   task-il {:6.2}%",
            method.label(),
            r.class_il.average_accuracy,
            task.average_accuracy
        );
        println!("  per-task class-il: {:?}", r.class_il.per_task_accuracy.as_deref().unwrap_or(&[]));
    }
    Ok(())
}
