use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "coca", version, about = "Continual learning with replay and collaborative calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one run.
    Train(TrainArgs),
    /// Run a property suite: grads, propagation, reservoir, losses or all.
    Check(CheckArgs),
    /// Run the CKD/PT/SCL toggle lattice and write ablation.csv.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config with flat dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(default_value = "all")]
    pub suite: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Seeds per lattice row, starting at the configured seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Comma-separated subset such as `er,ckd,full`; default is all 8 rows.
    #[arg(long)]
    pub grid: Option<String>,
}

/// Flags that take precedence over the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long = "out")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub buffer: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Evaluate every N steps and write eval_curve.csv.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Write the final buffer contents to buffer.jsonl.
    #[arg(long)]
    pub dump_buffer: bool,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.data_dir {
            c.data_dir = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.output_dir = Some(v.clone());
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(seed, buffer, lambda1, lambda2, omega, gamma, tau, lr, eval_every);
        if self.dump_buffer {
            c.dump_buffer = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let cli = Cli::try_parse_from(["coca", "train", "--lambda1", "0.25", "--buffer", "200", "--out", "/tmp/o", "--dump-buffer"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("train expected") };
        let mut c = RunConfig::default();
        a.overrides.apply(&mut c);
        assert_eq!(c.lambda1, 0.25);
        assert_eq!(c.buffer, 200);
        assert_eq!(c.output_dir, Some(PathBuf::from("/tmp/o")));
        assert!(c.dump_buffer);
        assert_eq!(c.lambda2, RunConfig::default().lambda2);
    }

    #[test]
    fn all_documented_flags_parse() {
        Cli::try_parse_from([
            "coca", "ablate", "--config", "c.json", "--data-dir", "d", "--out", "o", "--seed", "3", "--buffer", "5",
            "--lambda1", "1", "--lambda2", "1", "--omega", "0.1", "--gamma", "0.1", "--tau", "0.07", "--lr", "0.1",
            "--eval-every", "10", "--dump-buffer", "--seeds", "3",
        ])
        .unwrap();
    }
}
