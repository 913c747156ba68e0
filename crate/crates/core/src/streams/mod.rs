//! Data ingestion and continual-learning streams.
//!
//! Streams are lazy: they hold a plan of `(dataset index, rotation angle,
//! task id)` entries and only materialize the rotated images of the batch
//! being yielded.

mod idx;
mod mnist360;
mod split;
mod transform;

use std::ops::Range;

pub use idx::{load_idx, load_mnist, MnistSplit};
pub use mnist360::{joint_stream, mnist360_schedule, mnist360_stream, mnist360_test_set, MNIST360_CLASSES};
pub use split::{sequential_split_stream, split_classes, with_task_ids};
pub use transform::{apply_transform, rotate_image, Aspect, Rotation, Scale, TransformSpec};

use crate::ndmath::Matrix;

/// Grayscale image with intensities in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(height * width, pixels.len(), "image size");
        Self { height, width, pixels }
    }

    pub fn blank(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub task_id: Option<usize>,
}

/// Stacks sample images into a `batch × pixels` matrix.
pub fn images_matrix<'a>(images: impl IntoIterator<Item = &'a Image>) -> Matrix {
    let mut rows = 0;
    let mut cols = 0;
    let mut data = Vec::new();
    for img in images {
        cols = img.pixels.len();
        data.extend_from_slice(&img.pixels);
        rows += 1;
    }
    Matrix::new(rows, cols, data).expect("equal-size images")
}

pub fn class_histogram(samples: &[Sample], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for s in samples {
        h[s.label] += 1;
    }
    h
}

/// A chunk of the stream as the learner sees it.
#[derive(Clone, Debug)]
pub struct StreamBatch {
    pub samples: Vec<Sample>,
    /// Index of this batch within the stream.
    pub stream_position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PlanItem {
    pub index: usize,
    pub angle: f64,
    pub task_id: Option<usize>,
}

/// Lazy stream over a dataset driven by a precomputed plan.
#[derive(Clone, Debug)]
pub struct PlannedStream<'a> {
    dataset: &'a [Sample],
    plan: Vec<PlanItem>,
    batches: Vec<Range<usize>>,
    next: usize,
}

impl<'a> PlannedStream<'a> {
    pub(crate) fn new(dataset: &'a [Sample], plan: Vec<PlanItem>, batches: Vec<Range<usize>>) -> Self {
        Self {
            dataset,
            plan,
            batches,
            next: 0,
        }
    }

    /// Chunks a plan into consecutive batches of `batch_size`.
    pub(crate) fn contiguous(dataset: &'a [Sample], plan: Vec<PlanItem>, batch_size: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        let n = plan.len();
        let batches = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
        Self::new(dataset, plan, batches)
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn num_samples(&self) -> usize {
        self.plan.len()
    }

    /// Labels in stream order, without materializing images.
    pub fn labels(&self) -> Vec<usize> {
        self.plan.iter().map(|p| self.dataset[p.index].label).collect()
    }

    /// Rotation angles (degrees) in stream order.
    pub fn angles(&self) -> Vec<f64> {
        self.plan.iter().map(|p| p.angle).collect()
    }

    /// Dataset indices in stream order.
    pub fn indices(&self) -> Vec<usize> {
        self.plan.iter().map(|p| p.index).collect()
    }

    fn materialize(&self, item: &PlanItem) -> Sample {
        let src = &self.dataset[item.index];
        let image = if item.angle == 0.0 {
            src.image.clone()
        } else {
            rotate_image(&src.image, item.angle)
        };
        Sample {
            image,
            label: src.label,
            task_id: item.task_id,
        }
    }
}

impl Iterator for PlannedStream<'_> {
    type Item = StreamBatch;

    fn next(&mut self) -> Option<StreamBatch> {
        let range = self.batches.get(self.next)?.clone();
        let samples = self.plan[range].iter().map(|p| self.materialize(p)).collect();
        let batch = StreamBatch {
            samples,
            stream_position: self.next,
        };
        self.next += 1;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.batches.len() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for PlannedStream<'_> {}
