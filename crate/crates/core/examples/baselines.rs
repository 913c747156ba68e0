//! The two reference points of MNIST-360: plain SGD on the stream (no
//! memory, the lower bound) and JOINT training on the same samples shuffled
//! i.i.d. (the upper bound). Prints the SGD confusion matrix, whose mass
//! piles onto the last pair of digits.
//!
//! cargo run --release --example baselines -- [seed]

use std::path::PathBuf;

use coca::cli::RunConfig;
use coca::trainer::{run_experiment_with_data, Datasets, StreamKind};

fn data_dir() -> PathBuf {
    std::env::var_os("COCA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn main() -> coca::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let data = Datasets::load(&data_dir())?;
    for stream in [StreamKind::Sgd, StreamKind::Joint] {
        let config = RunConfig {
            stream,
            seed,
            ..RunConfig::default()
        };
        let r = run_experiment_with_data(&config, &data)?;
        println!("{:>5}: average accuracy {:.2}%", stream.as_str(), r.class_il.average_accuracy);
        if stream == StreamKind::Sgd {
            println!("confusion (rows: true digit, columns: predicted):");
            for (c, row) in r.class_il.confusion.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
                println!("  {c}: {}", cells.join(""));
            }
        }
    }
    Ok(())
}
