use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, train_step, AblationConfig, EvalMode, HyperParams, LossBreakdown, Metrics, StepRngs};
use crate::cli::RunConfig;
use crate::error::{CocaError, Result};
use crate::memory::ReplayBuffer;
use crate::ndmath::Rng;
use crate::net::{save_checkpoint, NetworkParams};
use crate::streams::{
    joint_stream, load_mnist, mnist360_stream, mnist360_test_set, sequential_split_stream, split_classes, with_task_ids,
    MnistSplit, Sample, StreamBatch, MNIST360_CLASSES,
};

const INIT_RNG: u64 = 0x1417;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    /// Rotating digit pairs with replay and the configured calibration terms.
    #[default]
    #[serde(rename = "mnist360")]
    Mnist360,
    /// Ascending class-split tasks with task ids.
    SeqSplit,
    /// MNIST-360 samples shuffled i.i.d.: the offline upper bound.
    Joint,
    /// MNIST-360 with no memory and no calibration: the lower bound.
    Sgd,
}

impl StreamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StreamKind::Mnist360 => "mnist360",
            StreamKind::SeqSplit => "seq-split",
            StreamKind::Joint => "joint",
            StreamKind::Sgd => "sgd",
        }
    }
}

/// Raw MNIST train and test splits.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Datasets {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: load_mnist(dir, MnistSplit::Train)?,
            test: load_mnist(dir, MnistSplit::Test)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: RunConfig,
    pub class_il: Metrics,
    /// Present for streams with task ids.
    pub task_il: Option<Metrics>,
    pub losses: Vec<LossBreakdown>,
    /// `(step, average accuracy)` pairs when periodic evaluation is enabled.
    pub curve: Vec<(usize, f64)>,
    pub params: NetworkParams,
    pub buffer: ReplayBuffer,
    pub steps: usize,
    pub samples_seen: usize,
}

/// The stable on-disk summary.
#[derive(Serialize)]
struct MetricsFile<'a> {
    run_name: &'a str,
    stream: &'a str,
    seed: u64,
    method: String,
    buffer: usize,
    steps: usize,
    samples_seen: usize,
    average_accuracy: f64,
    class_il: &'a Metrics,
    task_il: Option<&'a Metrics>,
    mean_losses: LossBreakdown,
    config: &'a RunConfig,
}

/// Loads the data named by the config and runs it.
pub fn run_experiment(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let dir = config.resolved_data_dir()?;
    let data = Datasets::load(&dir)?;
    run_experiment_with_data(config, &data)
}

/// Hyperparameters and toggles actually used: the baselines force the
/// memory and calibration off whatever the config says.
fn effective(config: &RunConfig) -> (HyperParams, AblationConfig) {
    let mut hp = config.hyper_params();
    match config.stream {
        StreamKind::Sgd | StreamKind::Joint => {
            hp.buffer = 0;
            (hp, AblationConfig::ER)
        }
        _ => (hp, config.ablation()),
    }
}

pub fn run_experiment_with_data(config: &RunConfig, data: &Datasets) -> Result<RunReport> {
    config.validate()?;
    let (hp, ablation) = effective(config);
    let seed = config.seed;

    let (classes, test, tasks) = match config.stream {
        StreamKind::SeqSplit => {
            let classes = data.train.iter().map(|s| s.label + 1).max().unwrap_or(0);
            let tasks = split_classes(classes, config.n_tasks)?;
            (classes, with_task_ids(&data.test, config.n_tasks, classes)?, Some(tasks))
        }
        _ => (MNIST360_CLASSES, mnist360_test_set(&data.test)?, None),
    };

    let batches: Box<dyn Iterator<Item = StreamBatch> + '_> = match config.stream {
        StreamKind::Mnist360 | StreamKind::Sgd => Box::new(mnist360_stream(&data.train, config.rounds, seed, hp.batch_new)?),
        StreamKind::Joint => Box::new(joint_stream(&data.train, config.rounds, seed, hp.batch_new, hp.epochs)?),
        StreamKind::SeqSplit => Box::new(sequential_split_stream(&data.train, config.n_tasks, hp.batch_new, seed)?.map(|(_, b)| b)),
    };

    let mut params = NetworkParams::init(&config.net_config(classes), &mut Rng::derive(seed, INIT_RNG));
    let mut buffer = ReplayBuffer::new(hp.buffer);
    let mut rngs = StepRngs::new(seed);
    let mut losses = Vec::new();
    let mut curve = Vec::new();
    let mut samples_seen = 0;

    for (step, batch) in batches.enumerate() {
        samples_seen += batch.samples.len();
        let l = train_step(&mut params, &batch.samples, &mut buffer, &hp, ablation, &mut rngs, step)?;
        losses.push(l);
        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            curve.push((step + 1, evaluate(&params, &test, &EvalMode::ClassIl)?.average_accuracy));
        }
    }

    let class_il = evaluate(&params, &test, &EvalMode::ClassIl)?;
    let task_il = match tasks {
        Some(t) => Some(evaluate(&params, &test, &EvalMode::TaskIl(t))?),
        None => None,
    };
    let report = RunReport {
        config: config.clone(),
        class_il,
        task_il,
        steps: losses.len(),
        losses,
        curve,
        params,
        buffer,
        samples_seen,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(&report, &dir.join(&config.run_name))?;
    }
    Ok(report)
}

impl RunReport {
    /// Label of the method actually trained, e.g. `er`, `ckd+pt+scl`, `sgd`.
    pub fn method(&self) -> String {
        match self.config.stream {
            StreamKind::Sgd => "sgd".into(),
            StreamKind::Joint => "joint".into(),
            _ => effective(&self.config).1.label(),
        }
    }

    pub fn mean_losses(&self) -> LossBreakdown {
        let n = self.losses.len().max(1) as f64;
        let mut m = LossBreakdown {
            step: self.losses.len(),
            ..Default::default()
        };
        for l in &self.losses {
            m.base += l.base / n;
            m.ckd += l.ckd / n;
            m.pt += l.pt / n;
            m.scl += l.scl / n;
            m.total += l.total / n;
        }
        m
    }

    pub fn metrics_json(&self) -> String {
        let file = MetricsFile {
            run_name: &self.config.run_name,
            stream: self.config.stream.as_str(),
            seed: self.config.seed,
            method: self.method(),
            buffer: self.buffer.capacity(),
            steps: self.steps,
            samples_seen: self.samples_seen,
            average_accuracy: self.class_il.average_accuracy,
            class_il: &self.class_il,
            task_il: self.task_il.as_ref(),
            mean_losses: self.mean_losses(),
            config: &self.config,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("metrics serialize");
        s.push('\n');
        s
    }
}

fn confusion_csv(m: &Metrics) -> String {
    let mut s = String::from("true\\pred");
    for c in 0..m.confusion.len() {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (c, row) in m.confusion.iter().enumerate() {
        let _ = write!(s, "{c}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn losses_csv(losses: &[LossBreakdown]) -> String {
    let mut s = String::from("step,base,ckd,pt,scl,total\n");
    for l in losses {
        let _ = writeln!(s, "{},{},{},{},{},{}", l.step, l.base, l.ckd, l.pt, l.scl, l.total);
    }
    s
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| CocaError::io(path, e))
}

/// Writes `metrics.json`, `confusion.csv`, `losses.csv` and `params.bin`,
/// plus `eval_curve.csv` and `buffer.jsonl` when requested.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CocaError::io(dir, e))?;
    write(dir.join("metrics.json"), &report.metrics_json())?;
    write(dir.join("confusion.csv"), &confusion_csv(&report.class_il))?;
    write(dir.join("losses.csv"), &losses_csv(&report.losses))?;
    save_checkpoint(&report.params, &dir.join("params.bin"))?;
    if !report.curve.is_empty() {
        let mut s = String::from("step,average_accuracy\n");
        for (step, acc) in &report.curve {
            let _ = writeln!(s, "{step},{acc}");
        }
        write(dir.join("eval_curve.csv"), &s)?;
    }
    if report.config.dump_buffer {
        report.buffer.dump_jsonl(&dir.join("buffer.jsonl"))?;
    }
    Ok(())
}
