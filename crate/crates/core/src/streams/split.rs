//! Sequential class-split streams: classes partitioned in ascending order
//! into equally sized tasks, each task presented in turn.

use super::{PlanItem, PlannedStream, Sample, StreamBatch};
use crate::error::{CocaError, Result};
use crate::ndmath::Rng;

const SPLIT_RNG: u64 = 0x5911;

/// Class ids of each task, ascending.
pub fn split_classes(classes: usize, n_tasks: usize) -> Result<Vec<Vec<usize>>> {
    if n_tasks == 0 || classes % n_tasks != 0 {
        return Err(CocaError::IndivisibleSplit { classes, tasks: n_tasks });
    }
    let per = classes / n_tasks;
    Ok((0..n_tasks).map(|t| (t * per..(t + 1) * per).collect()).collect())
}

fn num_classes(dataset: &[Sample]) -> usize {
    dataset.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

/// Yields `(task_id, batch)`; batches never straddle a task boundary and
/// every sample appears exactly once.
pub fn sequential_split_stream(
    dataset: &[Sample],
    n_tasks: usize,
    batch_size: usize,
    seed: u64,
) -> Result<impl ExactSizeIterator<Item = (usize, StreamBatch)> + '_> {
    assert!(batch_size > 0, "batch size must be positive");
    let classes = num_classes(dataset);
    let per = classes / n_tasks.max(1);
    split_classes(classes, n_tasks)?;
    let mut rng = Rng::derive(seed, SPLIT_RNG);
    let mut plan = Vec::with_capacity(dataset.len());
    let mut batches = Vec::new();
    let mut batch_tasks = Vec::new();
    for task in 0..n_tasks {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset[i].label / per == task)
            .collect();
        rng.shuffle(&mut idx);
        let start = plan.len();
        plan.extend(idx.into_iter().map(|index| PlanItem {
            index,
            angle: 0.0,
            task_id: Some(task),
        }));
        let end = plan.len();
        for s in (start..end).step_by(batch_size) {
            batches.push(s..(s + batch_size).min(end));
            batch_tasks.push(task);
        }
    }
    let stream = PlannedStream::new(dataset, plan, batches);
    Ok(batch_tasks.into_iter().zip(stream))
}

/// Copies of `samples` tagged with the task that owns their class.
pub fn with_task_ids(samples: &[Sample], n_tasks: usize, classes: usize) -> Result<Vec<Sample>> {
    split_classes(classes, n_tasks)?;
    let per = classes / n_tasks;
    Ok(samples
        .iter()
        .map(|s| Sample {
            task_id: Some(s.label / per),
            ..s.clone()
        })
        .collect())
}
