use proptest::prelude::*;

use coca::memory::{BufferEntry, ReplayBuffer};
use coca::ndmath::{Matrix, Rng};
use coca::net::{normalize_rows, NetConfig, NetworkParams};
use coca::relation::{
    ckd_loss, collaborative_targets, propagate_closed_form, propagate_iterative, similarity_matrix,
};
use coca::streams::{apply_transform, Image, Sample, TransformSpec};
use coca::trainer::{evaluate, EvalMode};

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-scale, scale)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_rows_are_distributions(n in 2usize..40, d in 1usize..12, seed in any::<u64>()) {
        let s = similarity_matrix(&normalize_rows(&matrix(n, d, seed, 1.0)), 0).unwrap();
        for i in 0..n {
            prop_assert_eq!(s.matrix.get(i, i), 0.0);
            prop_assert!((s.matrix.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(s.matrix.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn closed_form_is_the_fixed_point(n in 2usize..30, omega in 0.0f64..0.95, seed in any::<u64>()) {
        let s = similarity_matrix(&normalize_rows(&matrix(n, 6, seed, 1.0)), 0).unwrap();
        let o = matrix(n, 4, seed ^ 1, 3.0);
        let q = propagate_closed_form(&s, &o, omega).unwrap();
        // one more propagation step leaves Q unchanged
        let step = s.matrix.matmul(&q).scaled(omega).add(&o.scaled(1.0 - omega));
        prop_assert!(step.sub(&q).max_abs() <= 1e-9);
        let it = propagate_iterative(&s, &o, omega, 800).unwrap();
        prop_assert!(it.sub(&q).max_abs() <= 1e-9);
    }

    #[test]
    fn omega_zero_reduces_to_scaled_distillation(n in 2usize..20, c in 2usize..10, gamma in 0.0f64..=1.0, seed in any::<u64>()) {
        let o = matrix(n, c, seed, 2.0);
        let stored = matrix(n, c, seed ^ 7, 2.0);
        let t = collaborative_targets(&normalize_rows(&matrix(n, 5, seed ^ 9, 1.0)), &o, &stored, 0.0, gamma, 0).unwrap();
        let kd = o.sub(&stored).data().iter().map(|v| v * v).sum::<f64>() / n as f64;
        let ckd = ckd_loss(&o, &t).unwrap().0;
        prop_assert!((ckd - (1.0 - gamma).powi(2) * kd).abs() <= 1e-12 * kd.max(1.0));
    }

    #[test]
    fn ckd_is_nonnegative(n in 2usize..20, omega in 0.0f64..0.99, gamma in 0.0f64..=1.0, seed in any::<u64>()) {
        let o = matrix(n, 3, seed, 4.0);
        let t = collaborative_targets(&normalize_rows(&matrix(n, 4, seed ^ 3, 1.0)), &o, &matrix(n, 3, seed ^ 5, 4.0), omega, gamma, 0).unwrap();
        prop_assert!(ckd_loss(&o, &t).unwrap().0 >= 0.0);
    }

    #[test]
    fn reservoir_never_exceeds_capacity(cap in 0usize..40, len in 0usize..300, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(cap);
        let mut rng = Rng::new(seed);
        for i in 0..len {
            buf.reservoir_insert(BufferEntry { image: Image::blank(1, 1), logits: vec![], label: i }, &mut rng);
            prop_assert!(buf.len() <= cap);
        }
        prop_assert_eq!(buf.len(), cap.min(len));
        // every stored item is a distinct stream item
        let mut ids: Vec<usize> = buf.entries().iter().map(|e| e.label).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), buf.len());
    }

    #[test]
    fn task_il_never_scores_below_class_il(seed in any::<u64>(), n in 1usize..60) {
        let cfg = NetConfig {
            input_dim: 4,
            backbone_hidden: vec![5],
            classes: 6,
            aux_hidden: vec![2],
            proxy_classes: 16,
            projector_hidden: vec![2],
            embed_dim: 2,
        };
        let mut rng = Rng::new(seed);
        let p = NetworkParams::init(&cfg, &mut rng);
        let test: Vec<Sample> = (0..n)
            .map(|_| {
                let label = rng.below(6);
                Sample { image: Image::new(2, 2, (0..4).map(|_| rng.uniform()).collect()), label, task_id: Some(label / 2) }
            })
            .collect();
        let tasks = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        let class_il = evaluate(&p, &test, &EvalMode::ClassIl).unwrap();
        let task_il = evaluate(&p, &test, &EvalMode::TaskIl(tasks)).unwrap();
        prop_assert!(task_il.overall_accuracy >= class_il.overall_accuracy);
        for c in 0..6 {
            let row: usize = class_il.confusion[c].iter().sum();
            prop_assert_eq!(row, test.iter().filter(|s| s.label == c).count());
        }
    }

    #[test]
    fn transforms_keep_size_and_range(label in 0usize..16, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let img = Image::new(28, 28, (0..784).map(|_| rng.uniform()).collect());
        let spec = TransformSpec::from_proxy_label(label).unwrap();
        let out = apply_transform(&img, &spec);
        prop_assert_eq!((out.height, out.width), (28, 28));
        prop_assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(spec.proxy_label(), Some(label));
    }
}
