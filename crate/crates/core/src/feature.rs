//! Feature calibration: the geometric pretext task and supervised
//! contrastive learning over a two-view batch.

use crate::error::{CocaError, Result};
use crate::ndmath::{dot, log_sum_exp, softmax_cross_entropy, Matrix, Rng};
use crate::streams::{apply_transform, Image, TransformSpec};

/// Transformed images with their proxy labels.
#[derive(Clone, Debug)]
pub struct PretextBatch {
    pub images: Vec<Image>,
    pub proxy_labels: Vec<usize>,
    pub specs: Vec<TransformSpec>,
    /// Index of the source image each transformed image came from.
    pub source: Vec<usize>,
}

/// One uniformly drawn transform from the 16-way proxy space per image.
pub fn sample_pretext<'a>(images: impl IntoIterator<Item = &'a Image>, rng: &mut Rng) -> PretextBatch {
    let images: Vec<&Image> = images.into_iter().collect();
    let specs: Vec<TransformSpec> = images
        .iter()
        .map(|_| TransformSpec::from_proxy_label(rng.below(TransformSpec::NUM_PROXY_LABELS)).expect("in range"))
        .collect();
    pretext_with_specs(images, &specs)
}

/// Applies the given specs (one per image). Specs must lie in the proxy space.
pub fn pretext_with_specs<'a>(images: impl IntoIterator<Item = &'a Image>, specs: &[TransformSpec]) -> PretextBatch {
    let images: Vec<&Image> = images.into_iter().collect();
    assert_eq!(images.len(), specs.len(), "one spec per image");
    PretextBatch {
        images: images.iter().zip(specs).map(|(img, s)| apply_transform(img, s)).collect(),
        proxy_labels: specs
            .iter()
            .map(|s| s.proxy_label().expect("pretext specs come from the proxy space"))
            .collect(),
        specs: specs.to_vec(),
        source: (0..images.len()).collect(),
    }
}

/// Mean cross-entropy of the auxiliary head against proxy labels.
pub fn pt_loss(aux_logits: &Matrix, proxy_labels: &[usize]) -> Result<(f64, Matrix)> {
    softmax_cross_entropy(aux_logits, proxy_labels)
}

/// Unit-norm embeddings of every view with their class labels.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    /// Source sample of each view.
    pub view_of: Vec<usize>,
}

impl ContrastiveBatch {
    /// Stacks two views of the same `n` samples: rows `0..n` are the first
    /// view, rows `n..2n` the second.
    pub fn two_views(first: &Matrix, second: &Matrix, labels: &[usize]) -> Result<Self> {
        if first.shape() != second.shape() || first.rows() != labels.len() {
            return Err(CocaError::shape(
                format!("two {}-row views", labels.len()),
                format!("{} and {} rows", first.rows(), second.rows()),
            ));
        }
        let n = labels.len();
        Ok(Self {
            embeddings: first.vstack(second),
            labels: labels.iter().chain(labels).copied().collect(),
            view_of: (0..n).chain(0..n).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SclOutput {
    pub loss: f64,
    /// ∂loss/∂embeddings.
    pub grad: Matrix,
    /// Anchors with at least one positive (the ones averaged over).
    pub anchors: usize,
}

/// Per anchor i with positives P(i) and negatives N(i) (self excluded):
///
/// ```text
/// Lᵢ = −Σ_{j∈P} zᵢ·zⱼ/τ + log Σ_{a∈P∪N} exp(zᵢ·zₐ/τ)
/// ```
///
/// averaged over anchors that have at least one positive. When no anchor
/// has a positive the loss is 0 and a warning is logged.
pub fn scl_loss(batch: &ContrastiveBatch, tau: f64) -> Result<SclOutput> {
    if !(tau > 0.0) {
        return Err(CocaError::BadTemperature(tau));
    }
    let z = &batch.embeddings;
    let m = z.rows();
    if batch.labels.len() != m {
        return Err(CocaError::shape(format!("{m} labels"), format!("{} labels", batch.labels.len())));
    }
    let sims = z.matmul_t(z);
    let mut grad = Matrix::zeros(m, z.cols());
    // coefficient of sᵢₐ in the summed loss
    let mut coef = Matrix::zeros(m, m);
    let mut total = 0.0;
    let mut anchors = 0;
    let mut logits = Vec::with_capacity(m);
    for i in 0..m {
        let yi = batch.labels[i];
        if !(0..m).any(|a| a != i && batch.labels[a] == yi) {
            continue;
        }
        anchors += 1;
        logits.clear();
        logits.extend((0..m).filter(|&a| a != i).map(|a| sims.get(i, a) / tau));
        let lse = log_sum_exp(&logits);
        let mut pos = 0.0;
        for a in (0..m).filter(|&a| a != i) {
            let s = sims.get(i, a) / tau;
            let p = (s - lse).exp();
            let is_pos = batch.labels[a] == yi;
            if is_pos {
                pos += s;
            }
            coef.set(i, a, (p - if is_pos { 1.0 } else { 0.0 }) / tau);
        }
        total += lse - pos;
    }
    if anchors == 0 {
        log::warn!("contrastive batch of {m} views has no positive pairs; loss set to 0");
        return Ok(SclOutput {
            loss: 0.0,
            grad,
            anchors,
        });
    }
    let inv = 1.0 / anchors as f64;
    for i in 0..m {
        for a in 0..m {
            let c = coef.get(i, a);
            if c == 0.0 {
                continue;
            }
            let c = c * inv;
            for (g, zv) in grad.row_mut(i).iter_mut().zip(z.row(a)) {
                *g += c * zv;
            }
            for (g, zv) in grad.row_mut(a).iter_mut().zip(z.row(i)) {
                *g += c * zv;
            }
        }
    }
    Ok(SclOutput {
        loss: total * inv,
        grad,
        anchors,
    })
}

/// L_CSS = L_PT + L_SCL.
pub fn css_loss(pt: f64, scl: f64) -> f64 {
    pt + scl
}

/// Direct double-loop evaluation of the contrastive loss, kept separate from
/// the vectorized path so it can serve as a reference.
pub fn scl_loss_reference(embeddings: &Matrix, labels: &[usize], tau: f64) -> f64 {
    let m = embeddings.rows();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..m {
        let mut pos_sum = 0.0;
        let mut exp_sum = 0.0;
        let mut has_pos = false;
        for j in 0..m {
            if j == i {
                continue;
            }
            let s = dot(embeddings.row(i), embeddings.row(j)) / tau;
            exp_sum += s.exp();
            if labels[j] == labels[i] {
                pos_sum += s;
                has_pos = true;
            }
        }
        if has_pos {
            total += -pos_sum + exp_sum.ln();
            anchors += 1;
        }
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::normalize_rows;
    use crate::streams::{Aspect, Rotation, Scale};

    fn unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        normalize_rows(
            &Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap(),
        )
    }

    #[test]
    fn forced_spec_applies_and_labels() {
        let img = Image::new(4, 4, (0..16).map(|v| v as f64 / 15.0).collect());
        let spec = TransformSpec {
            rotation: Rotation::R0,
            scale: Scale::Keep,
            aspect: Aspect::Narrow,
        };
        let b = pretext_with_specs([&img], &[spec]);
        assert_eq!(b.proxy_labels, vec![spec.proxy_label().unwrap()]);
        assert_eq!(b.images[0], apply_transform(&img, &spec));
        assert_eq!(apply_transform(&img, &TransformSpec::IDENTITY), img);
    }

    #[test]
    fn pretext_labels_decode_to_applied_spec() {
        let img = Image::new(4, 4, (0..16).map(|v| v as f64 / 15.0).collect());
        let imgs = vec![img; 50];
        let b = sample_pretext(imgs.iter(), &mut Rng::new(1));
        for ((label, spec), out) in b.proxy_labels.iter().zip(&b.specs).zip(&b.images) {
            assert_eq!(TransformSpec::from_proxy_label(*label), Some(*spec));
            assert_eq!(*out, apply_transform(&imgs[0], spec));
        }
    }

    #[test]
    fn pretext_draws_are_uniform() {
        let img = Image::blank(2, 2);
        let imgs = vec![img; 10_000];
        let b = sample_pretext(imgs.iter(), &mut Rng::new(2));
        let mut counts = [0usize; 16];
        for l in b.proxy_labels {
            counts[l] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 16.0).abs() < 0.01);
        }
    }

    #[test]
    fn pt_loss_uniform_and_confident() {
        for n in [1, 3, 8] {
            let (l, _) = pt_loss(&Matrix::zeros(n, 16), &vec![5; n]).unwrap();
            assert!((l - 16f64.ln()).abs() < 1e-14);
        }
        let mut logits = Matrix::zeros(1, 16);
        logits.set(0, 3, 200.0);
        let (l, _) = pt_loss(&logits, &[3]).unwrap();
        assert!(l < 1e-80);
    }

    #[test]
    fn pt_loss_matches_scalar_recomputation() {
        let mut rng = Rng::new(3);
        let logits = Matrix::new(5, 16, (0..80).map(|_| rng.uniform_range(-3.0, 3.0)).collect()).unwrap();
        let labels = [0, 15, 7, 7, 2];
        let (l, _) = pt_loss(&logits, &labels).unwrap();
        let mut expected = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            expected += -(logits.get(i, y).exp() / z).ln();
        }
        assert!((l - expected / 5.0).abs() < 1e-13);
        assert!(pt_loss(&logits, &labels[..4]).is_err());
    }

    #[test]
    fn identical_pair_without_negatives_cancels() {
        let z = Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8]]);
        let batch = ContrastiveBatch {
            embeddings: z,
            labels: vec![1, 1],
            view_of: vec![0, 0],
        };
        for tau in [0.07, 0.5, 1.0] {
            let out = scl_loss(&batch, tau).unwrap();
            assert!(out.loss.abs() < 1e-12, "tau {tau}: {}", out.loss);
        }
    }

    #[test]
    fn scl_matches_double_loop_and_is_permutation_invariant() {
        let mut rng = Rng::new(4);
        let z = unit_rows(6, 4, &mut rng);
        let labels = vec![0, 1, 0, 1, 1, 0];
        let batch = ContrastiveBatch {
            embeddings: z.clone(),
            labels: labels.clone(),
            view_of: (0..6).collect(),
        };
        let out = scl_loss(&batch, 0.5).unwrap();
        assert!((out.loss - scl_loss_reference(&z, &labels, 0.5)).abs() < 1e-12);

        let perm = [3, 0, 5, 1, 4, 2];
        let zp = Matrix::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>());
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = ContrastiveBatch {
            embeddings: zp,
            labels: lp,
            view_of: (0..6).collect(),
        };
        assert!((scl_loss(&permuted, 0.5).unwrap().loss - out.loss).abs() < 1e-12);
    }

    #[test]
    fn scl_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let z = unit_rows(6, 3, &mut rng);
        let labels = vec![0, 0, 1, 1, 0, 1];
        let batch = ContrastiveBatch {
            embeddings: z.clone(),
            labels: labels.clone(),
            view_of: (0..6).collect(),
        };
        let tau = 0.3;
        let out = scl_loss(&batch, tau).unwrap();
        let h = 1e-6;
        for idx in 0..z.data().len() {
            let mut up = z.clone();
            up.data_mut()[idx] += h;
            let mut down = z.clone();
            down.data_mut()[idx] -= h;
            let numeric = (scl_loss_reference(&up, &labels, tau) - scl_loss_reference(&down, &labels, tau)) / (2.0 * h);
            let analytic = out.grad.data()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel <= 1e-4, "idx {idx}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn singleton_classes_are_skipped() {
        let mut rng = Rng::new(6);
        let z = unit_rows(4, 3, &mut rng);
        let batch = ContrastiveBatch {
            embeddings: z.clone(),
            labels: vec![0, 1, 2, 3],
            view_of: (0..4).collect(),
        };
        let out = scl_loss(&batch, 0.1).unwrap();
        assert_eq!((out.loss, out.anchors), (0.0, 0));
        assert_eq!(out.grad.max_abs(), 0.0);

        let partial = ContrastiveBatch {
            embeddings: z,
            labels: vec![0, 0, 2, 3],
            view_of: (0..4).collect(),
        };
        assert_eq!(scl_loss(&partial, 0.1).unwrap().anchors, 2);
    }

    #[test]
    fn bad_temperature_is_rejected() {
        let batch = ContrastiveBatch {
            embeddings: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            labels: vec![0, 0],
            view_of: vec![0, 1],
        };
        assert!(matches!(scl_loss(&batch, 0.0), Err(CocaError::BadTemperature(_))));
        assert!(matches!(scl_loss(&batch, -1.0), Err(CocaError::BadTemperature(_))));
    }

    #[test]
    fn adding_a_negative_never_lowers_the_loss() {
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let z = unit_rows(5, 3, &mut rng);
            let labels = vec![0, 0, 1, 0, 1];
            let base = scl_loss_reference(&z, &labels, 0.2);
            // a new class-2 view is a negative for every existing anchor
            let extra = unit_rows(1, 3, &mut rng);
            let grown = z.vstack(&extra);
            let mut grown_labels = labels.clone();
            grown_labels.push(2);
            assert!(scl_loss_reference(&grown, &grown_labels, 0.2) >= base - 1e-12);
        }
    }

    #[test]
    fn pulling_a_positive_toward_its_anchor_lowers_the_loss() {
        // anchor 0 and positive 1 in the xy plane, negatives on the z axis
        let make = |angle: f64| {
            Matrix::from_rows(&[[1.0, 0.0, 0.0], [angle.cos(), angle.sin(), 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        };
        let labels = vec![0, 0, 1, 1];
        let tau = 0.5;
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let angle = 2.0 - 0.2 * step as f64;
            let l = scl_loss_reference(&make(angle), &labels, tau);
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn css_is_a_sum() {
        assert_eq!(css_loss(0.0, 0.0), 0.0);
        assert_eq!(css_loss(16f64.ln(), 0.0), 16f64.ln());
        assert_eq!(css_loss(1.25, -0.5), 0.75);
    }
}
