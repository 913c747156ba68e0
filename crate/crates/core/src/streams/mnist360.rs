//! MNIST-360: digits 0–8 presented in consecutive pairs (0,1), (1,2), …,
//! (8,0), the whole cycle repeated `rounds` times. Every class rotates
//! linearly through [0°, 360°) over its appearances in the stream, and each
//! training sample is shown exactly once.

use super::{PlanItem, PlannedStream, Sample};
use crate::error::{CocaError, Result};
use crate::ndmath::Rng;

pub const MNIST360_CLASSES: usize = 9;

const STREAM_RNG: u64 = 0x360;

/// Pair schedule: `rounds` repetitions of (0,1), (1,2), …, (8,0).
pub fn mnist360_schedule(rounds: usize) -> Vec<(usize, usize)> {
    (0..rounds)
        .flat_map(|_| (0..MNIST360_CLASSES).map(|c| (c, (c + 1) % MNIST360_CLASSES)))
        .collect()
}

fn class_indices(dataset: &[Sample]) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); MNIST360_CLASSES];
    for (i, s) in dataset.iter().enumerate() {
        if s.label < MNIST360_CLASSES {
            by_class[s.label].push(i);
        }
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(CocaError::MissingClass(c));
    }
    Ok(by_class)
}

/// Angle of the `k`-th of `n` appearances of a class.
fn angle(k: usize, n: usize) -> f64 {
    360.0 * k as f64 / n as f64
}

fn build_plan(dataset: &[Sample], rounds: usize, seed: u64) -> Result<Vec<PlanItem>> {
    assert!(rounds > 0, "rounds must be positive");
    let mut rng = Rng::derive(seed, STREAM_RNG);
    let mut by_class = class_indices(dataset)?;
    for idx in &mut by_class {
        rng.shuffle(idx);
    }
    // each class shows up in two pairs per round
    let chunks = 2 * rounds;
    let mut next_chunk = vec![0usize; MNIST360_CLASSES];
    let mut order = Vec::with_capacity(by_class.iter().map(Vec::len).sum());
    for (a, b) in mnist360_schedule(rounds) {
        let mut segment = Vec::new();
        for c in [a, b] {
            let n = by_class[c].len();
            let k = next_chunk[c];
            segment.extend_from_slice(&by_class[c][k * n / chunks..(k + 1) * n / chunks]);
            next_chunk[c] += 1;
        }
        rng.shuffle(&mut segment);
        order.extend(segment);
    }

    let totals: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let mut seen = vec![0usize; MNIST360_CLASSES];
    Ok(order
        .into_iter()
        .map(|index| {
            let c = dataset[index].label;
            let item = PlanItem {
                index,
                angle: angle(seen[c], totals[c]),
                task_id: None,
            };
            seen[c] += 1;
            item
        })
        .collect())
}

/// The MNIST-360 training stream in batches of `batch_size` new samples.
/// Digit 9 is ignored; no task ids are attached.
pub fn mnist360_stream(
    dataset: &[Sample],
    rounds: usize,
    seed: u64,
    batch_size: usize,
) -> Result<PlannedStream<'_>> {
    let plan = build_plan(dataset, rounds, seed)?;
    Ok(PlannedStream::contiguous(dataset, plan, batch_size))
}

/// Non-continual reference: the same rotated MNIST-360 samples, globally
/// shuffled, for `epochs` passes.
pub fn joint_stream(
    dataset: &[Sample],
    rounds: usize,
    seed: u64,
    batch_size: usize,
    epochs: usize,
) -> Result<PlannedStream<'_>> {
    let base = build_plan(dataset, rounds, seed)?;
    let mut rng = Rng::derive(seed, STREAM_RNG + 1);
    let mut plan = Vec::with_capacity(base.len() * epochs);
    for _ in 0..epochs {
        let mut epoch = base.clone();
        rng.shuffle(&mut epoch);
        plan.extend(epoch);
    }
    Ok(PlannedStream::contiguous(dataset, plan, batch_size))
}

/// Test digits 0–8, the `k`-th test sample of class `c` (file order) rotated
/// by `360·k / N_c` degrees, mirroring the training schedule.
pub fn mnist360_test_set(test: &[Sample]) -> Result<Vec<Sample>> {
    let by_class = class_indices(test)?;
    let totals: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let mut seen = vec![0usize; MNIST360_CLASSES];
    let plan: Vec<PlanItem> = test
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label < MNIST360_CLASSES)
        .map(|(index, s)| {
            let a = angle(seen[s.label], totals[s.label]);
            seen[s.label] += 1;
            PlanItem {
                index,
                angle: a,
                task_id: None,
            }
        })
        .collect();
    Ok(PlannedStream::contiguous(test, plan, usize::MAX)
        .flat_map(|b| b.samples)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Image;

    fn toy(per_class: usize) -> Vec<Sample> {
        (0..10)
            .flat_map(|c| {
                (0..per_class).map(move |k| Sample {
                    image: Image::new(2, 2, vec![k as f64 / per_class as f64, 0.0, 0.0, c as f64 / 10.0]),
                    label: c,
                    task_id: None,
                })
            })
            .collect()
    }

    #[test]
    fn one_round_schedule() {
        let s = mnist360_schedule(1);
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], (0, 1));
        assert_eq!(s[7], (7, 8));
        assert_eq!(s[8], (8, 0));
        assert_eq!(mnist360_schedule(3).len(), 27);
    }

    #[test]
    fn every_sample_once_and_nines_dropped() {
        let data = toy(12);
        let stream = mnist360_stream(&data, 3, 1, 32).unwrap();
        let mut idx = stream.indices();
        idx.sort_unstable();
        let expected: Vec<usize> = (0..data.len()).filter(|&i| data[i].label != 9).collect();
        assert_eq!(idx, expected);
    }

    #[test]
    fn pair_segments_follow_schedule() {
        let data = toy(12);
        // 12 samples per class, 2 chunks per round with rounds=1 → 6 per chunk
        let labels = mnist360_stream(&data, 1, 5, 32).unwrap().labels();
        for (seg, (a, b)) in mnist360_schedule(1).into_iter().enumerate() {
            let mut part = labels[seg * 12..(seg + 1) * 12].to_vec();
            part.sort_unstable();
            let mut want = vec![a; 6];
            want.extend(vec![b; 6]);
            want.sort_unstable();
            assert_eq!(part, want, "segment {seg}");
        }
    }

    #[test]
    fn angles_sweep_linearly_per_class() {
        let data = toy(12);
        let stream = mnist360_stream(&data, 3, 2, 32).unwrap();
        let labels = stream.labels();
        let angles = stream.angles();
        for c in 0..9 {
            let a: Vec<f64> = labels.iter().zip(&angles).filter(|(l, _)| **l == c).map(|(_, a)| *a).collect();
            assert_eq!(a.len(), 12);
            assert_eq!(a[0], 0.0);
            assert!((a[11] - 360.0 * (1.0 - 1.0 / 12.0)).abs() < 1e-12);
            assert!(a.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn seeds_change_order_but_not_schedule() {
        let data = toy(12);
        let a = mnist360_stream(&data, 1, 1, 32).unwrap();
        let b = mnist360_stream(&data, 1, 1, 32).unwrap();
        let c = mnist360_stream(&data, 1, 2, 32).unwrap();
        assert_eq!(a.indices(), b.indices());
        assert_ne!(a.indices(), c.indices());
        let seg_classes = |s: &PlannedStream| -> Vec<Vec<usize>> {
            s.labels()
                .chunks(12)
                .map(|ch| {
                    let mut v = ch.to_vec();
                    v.sort_unstable();
                    v.dedup();
                    v
                })
                .collect()
        };
        assert_eq!(seg_classes(&a), seg_classes(&c));
    }

    #[test]
    fn batches_are_full_except_last() {
        let data = toy(12);
        let batches: Vec<_> = mnist360_stream(&data, 3, 1, 32).unwrap().collect();
        let total: usize = batches.iter().map(|b| b.samples.len()).sum();
        assert_eq!(total, 108);
        assert!(batches[..batches.len() - 1].iter().all(|b| b.samples.len() == 32));
        assert!(batches.iter().all(|b| b.samples.iter().all(|s| s.task_id.is_none())));
        assert!(batches.iter().enumerate().all(|(i, b)| b.stream_position == i));
    }

    #[test]
    fn missing_class_is_reported() {
        let data: Vec<Sample> = toy(3).into_iter().filter(|s| s.label != 4).collect();
        assert!(matches!(mnist360_stream(&data, 1, 0, 32), Err(CocaError::MissingClass(4))));
    }

    #[test]
    fn test_set_is_rotated_by_position() {
        let data = toy(4);
        let test = mnist360_test_set(&data).unwrap();
        assert_eq!(test.len(), 36);
        // first of each class unrotated
        assert_eq!(test[0].image, data[0].image);
        assert_eq!(test[1].image, rotate_ref(&data[1].image, 90.0));
    }

    fn rotate_ref(img: &Image, deg: f64) -> Image {
        crate::streams::rotate_image(img, deg)
    }

    #[test]
    fn joint_stream_is_a_shuffle_of_the_same_samples() {
        let data = toy(12);
        let s = mnist360_stream(&data, 3, 4, 32).unwrap();
        let j = joint_stream(&data, 3, 4, 32, 1).unwrap();
        let mut a = s.indices();
        let mut b = j.indices();
        assert_ne!(a, b);
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
}
