//! Run configuration and command implementations behind the `coca` binary.
//!
//! Exit codes: 0 success, 1 failed checks or other runtime failure,
//! 2 configuration error (the message names the key), 3 data or IO error.

mod args;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

pub use args::{AblateArgs, CheckArgs, Cli, Command, Overrides, TrainArgs};
pub use config::{RunConfig, DATA_DIR_ENV};

use crate::checks::{run_suite, Suite};
use crate::error::{CocaError, Result};
use crate::trainer::{run_experiment_with_data, AblationConfig, Datasets};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub fn exit_code(err: &CocaError) -> i32 {
    match err {
        CocaError::Config { .. }
        | CocaError::OmegaOutOfRange(_)
        | CocaError::BadTemperature(_)
        | CocaError::IndivisibleSplit { .. } => EXIT_CONFIG,
        CocaError::BadMagic { .. }
        | CocaError::CountMismatch { .. }
        | CocaError::TruncatedFile { .. }
        | CocaError::MissingClass(_)
        | CocaError::Io { .. } => EXIT_DATA,
        _ => EXIT_FAILED,
    }
}

fn report(err: &CocaError) -> i32 {
    eprintln!("error: {err}");
    exit_code(err)
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Train(a) => cmd_train(a.config.as_deref(), &a.overrides),
        Command::Check(a) => cmd_check(&a.suite),
        Command::Ablate(a) => cmd_ablate(a.config.as_deref(), &a.overrides, a.seeds, a.grid.as_deref()),
    }
}

/// Reads the config file (or defaults), applies flag overrides and validates.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn load_data(config: &RunConfig) -> Result<Datasets> {
    let dir = config.resolved_data_dir()?;
    Datasets::load(&dir)
}

pub fn cmd_train(path: Option<&Path>, overrides: &Overrides) -> i32 {
    let result = load_config(path, overrides).and_then(|config| {
        let data = load_data(&config)?;
        run_experiment_with_data(&config, &data)
    });
    match result {
        Ok(r) => {
            println!(
                "{} [{}] seed {}: average accuracy {:.2}%",
                r.config.run_name,
                r.method(),
                r.config.seed,
                r.class_il.average_accuracy
            );
            if let Some(t) = &r.task_il {
                println!("task-il average accuracy {:.2}%", t.average_accuracy);
            }
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

/// `suite` is one of `grads`, `propagation`, `reservoir`, `losses`, or `all`.
pub fn cmd_check(suite: &str) -> i32 {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        match Suite::parse(suite) {
            Some(s) => vec![s],
            None => {
                eprintln!("error: config error at `suite`: unknown suite {suite:?} (grads, propagation, reservoir, losses, all)");
                return EXIT_CONFIG;
            }
        }
    };
    let mut failed = Vec::new();
    for s in suites {
        for r in run_suite(s) {
            println!("{r}");
            if !r.passed() {
                failed.push(r.id);
            }
        }
    }
    if failed.is_empty() {
        EXIT_OK
    } else {
        eprintln!("failing checks: {}", failed.join(", "));
        EXIT_FAILED
    }
}

/// Parses `er,ckd,ckd+pt,full,...` into lattice rows.
pub fn parse_grid(spec: &str) -> Result<Vec<AblationConfig>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            if item == "er" {
                return Ok(AblationConfig::ER);
            }
            if item == "full" {
                return Ok(AblationConfig::FULL);
            }
            let mut a = AblationConfig::ER;
            for part in item.split('+') {
                match part {
                    "ckd" => a.ckd = true,
                    "pt" => a.pt = true,
                    "scl" => a.scl = true,
                    other => return Err(CocaError::config("--grid", format!("unknown component {other:?}"))),
                }
            }
            Ok(a)
        })
        .collect()
}

/// One row of `ablation.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub toggles: AblationConfig,
    pub buffer: usize,
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.accuracies.len() as f64;
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt()
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("ckd,pt,scl,buffer,seeds,mean_accuracy,std_accuracy,accuracies\n");
    for r in rows {
        let accs: Vec<String> = r.accuracies.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            u8::from(r.toggles.ckd),
            u8::from(r.toggles.pt),
            u8::from(r.toggles.scl),
            r.buffer,
            r.accuracies.len(),
            r.mean(),
            r.std(),
            accs.join(";")
        );
    }
    s
}

/// Runs each lattice row for `seeds` consecutive seeds starting at the
/// configured one. Outputs go to `output_dir/<run_name>/`.
pub fn ablate(base: &RunConfig, data: &Datasets, grid: &[AblationConfig], seeds: usize) -> Result<Vec<AblationRow>> {
    let root = base.output_dir.as_ref().map(|d| d.join(&base.run_name));
    let mut rows = Vec::new();
    for &toggles in grid {
        let mut accuracies = Vec::new();
        for k in 0..seeds as u64 {
            let mut c = base.clone();
            c.set_ablation(toggles);
            c.seed = base.seed + k;
            c.run_name = format!("{}-seed{}", toggles.label(), c.seed);
            c.output_dir = root.clone();
            let r = run_experiment_with_data(&c, data)?;
            // progress only; a closed stdout (e.g. piped into `head`) is not an error
            let _ = writeln!(io::stdout(), "{} seed {}: {:.2}%", toggles.label(), c.seed, r.class_il.average_accuracy);
            accuracies.push(r.class_il.average_accuracy);
        }
        rows.push(AblationRow {
            toggles,
            buffer: base.buffer,
            accuracies,
        });
    }
    if let Some(dir) = root {
        fs::create_dir_all(&dir).map_err(|e| CocaError::io(&dir, e))?;
        let path = dir.join("ablation.csv");
        fs::write(&path, ablation_csv(&rows)).map_err(|e| CocaError::io(path, e))?;
    }
    Ok(rows)
}

pub fn cmd_ablate(path: Option<&Path>, overrides: &Overrides, seeds: usize, grid: Option<&str>) -> i32 {
    let result = (|| {
        let config = load_config(path, overrides)?;
        if seeds == 0 {
            return Err(CocaError::config("--seeds", "must be positive"));
        }
        let grid = match grid {
            Some(g) => parse_grid(g)?,
            None => AblationConfig::lattice(),
        };
        let data = load_data(&config)?;
        ablate(&config, &data, &grid, seeds)
    })();
    match result {
        Ok(rows) => {
            let _ = io::stdout().write_all(ablation_csv(&rows).as_bytes());
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}
