use serde::{Deserialize, Serialize};

use crate::error::{CocaError, Result};
use crate::net::{forward, Heads, NetworkParams};
use crate::streams::{images_matrix, Sample};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum EvalMode {
    /// Argmax over every class seen so far.
    ClassIl,
    /// Argmax restricted to the classes of the sample's own task.
    TaskIl(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent. Mean of per-task accuracies when samples carry task ids,
    /// otherwise accuracy over the whole test set.
    pub average_accuracy: f64,
    pub overall_accuracy: f64,
    /// Percent per class; `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_task_accuracy: Option<Vec<f64>>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub num_samples: usize,
}

fn argmax(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values {
        if best.0 == usize::MAX || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn percent(hit: usize, total: usize) -> f64 {
    100.0 * hit as f64 / total as f64
}

pub fn evaluate(params: &NetworkParams, test: &[Sample], mode: &EvalMode) -> Result<Metrics> {
    let classes = params.config.classes;
    if let EvalMode::TaskIl(_) = mode {
        if test.iter().any(|s| s.task_id.is_none()) {
            return Err(CocaError::MissingTaskIds);
        }
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let n_tasks = test.iter().filter_map(|s| s.task_id).map(|t| t + 1).max();
    let mut task_hits = vec![(0usize, 0usize); n_tasks.unwrap_or(0)];

    for chunk in test.chunks(EVAL_CHUNK) {
        let x = images_matrix(chunk.iter().map(|s| &s.image));
        let tape = forward(params, &x, Heads::CLASSIFIER)?;
        let logits = tape.logits.as_ref().expect("classifier head");
        for (i, s) in chunk.iter().enumerate() {
            let row = logits.row(i);
            let pred = match mode {
                EvalMode::ClassIl => argmax(row.iter().copied().enumerate()),
                EvalMode::TaskIl(tasks) => {
                    let t = s.task_id.expect("checked above");
                    let allowed = tasks.get(t).ok_or(CocaError::IndexOutOfRange {
                        index: t,
                        len: tasks.len(),
                    })?;
                    argmax(allowed.iter().map(|&c| (c, row[c])))
                }
            };
            confusion[s.label][pred] += 1;
            if let Some(t) = s.task_id {
                task_hits[t].1 += 1;
                if pred == s.label {
                    task_hits[t].0 += 1;
                }
            }
        }
    }

    let hits: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let overall = if test.is_empty() { 0.0 } else { percent(hits, test.len()) };
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| percent(row[c], n))
        })
        .collect();
    let per_task: Option<Vec<f64>> = n_tasks.map(|_| {
        task_hits
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|&(h, n)| percent(h, n))
            .collect()
    });
    let average = match &per_task {
        Some(t) if !t.is_empty() && test.iter().all(|s| s.task_id.is_some()) => t.iter().sum::<f64>() / t.len() as f64,
        _ => overall,
    };
    Ok(Metrics {
        average_accuracy: average,
        overall_accuracy: overall,
        per_class_accuracy: per_class,
        per_task_accuracy: per_task,
        confusion,
        num_samples: test.len(),
    })
}
