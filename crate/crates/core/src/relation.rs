//! Relation calibration: batch similarity graph, label propagation of the
//! current outputs over it, blending with the stored outputs, and the
//! collaborative distillation loss against that ensemble.

use crate::error::{CocaError, Result};
use crate::ndmath::{dot, l2_norm, mat_inverse, Matrix};

/// Row-normalized similarity with a zero diagonal. Each row sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub matrix: Matrix,
    pub source_batch: usize,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }
}

/// Ensemble logits o* and the (ω, γ) they were built with. Constant w.r.t.
/// differentiation.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleTargets {
    pub targets: Matrix,
    pub omega: f64,
    pub gamma: f64,
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..1.0).contains(&omega) {
        return Err(CocaError::OmegaOutOfRange(omega));
    }
    Ok(())
}

/// Ŝ(i,j) = exp(ẑᵢ·ẑⱼ) / Σ_{k≠i} exp(ẑᵢ·ẑₖ) for i ≠ j, Ŝ(i,i) = 0.
///
/// Rows of `features` must be unit norm (all-zero rows, from fully inactive
/// features, are tolerated and behave as orthogonal to everything).
pub fn similarity_matrix(features: &Matrix, source_batch: usize) -> Result<SimilarityMatrix> {
    let n = features.rows();
    if n < 2 {
        return Err(CocaError::BatchTooSmall(n));
    }
    for i in 0..n {
        let norm = l2_norm(features.row(i));
        if !norm.is_finite() || (norm != 0.0 && (norm - 1.0).abs() > 1e-6) {
            return Err(CocaError::shape("unit-norm feature rows", format!("row {i} has norm {norm}")));
        }
    }
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        // dot products lie in [-1, 1] so exp cannot overflow
        let mut total = 0.0;
        for j in 0..n {
            if j != i {
                let e = dot(features.row(i), features.row(j)).exp();
                s.set(i, j, e);
                total += e;
            }
        }
        s.row_mut(i).iter_mut().for_each(|v| *v /= total);
    }
    Ok(SimilarityMatrix {
        matrix: s,
        source_batch,
    })
}

fn check_rows(s: &SimilarityMatrix, o: &Matrix) -> Result<()> {
    if s.len() != o.rows() {
        return Err(CocaError::shape(
            format!("{} output rows", s.len()),
            format!("{} output rows", o.rows()),
        ));
    }
    Ok(())
}

/// `t` steps of Q ← ωŜQ + (1−ω)o from Q₀ = o.
pub fn propagate_iterative(s: &SimilarityMatrix, o: &Matrix, omega: f64, steps: usize) -> Result<Matrix> {
    check_omega(omega)?;
    check_rows(s, o)?;
    let mut q = o.clone();
    let base = o.scaled(1.0 - omega);
    for _ in 0..steps {
        q = s.matrix.matmul(&q).scaled(omega).add(&base);
    }
    Ok(q)
}

/// Fixed point of the propagation, (1−ω)(I−ωŜ)⁻¹o.
pub fn propagate_closed_form(s: &SimilarityMatrix, o: &Matrix, omega: f64) -> Result<Matrix> {
    check_omega(omega)?;
    check_rows(s, o)?;
    let system = Matrix::identity(s.len()).sub(&s.matrix.scaled(omega));
    Ok(mat_inverse(&system)?.matmul(o).scaled(1.0 - omega))
}

/// o* = γ·Q∞ + (1−γ)·ô.
pub fn ensemble_outputs(propagated: &Matrix, stored: &Matrix, gamma: f64, omega: f64) -> Result<EnsembleTargets> {
    if propagated.shape() != stored.shape() {
        return Err(CocaError::shape(
            format!("{}x{}", propagated.rows(), propagated.cols()),
            format!("{}x{}", stored.rows(), stored.cols()),
        ));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CocaError::config("hp.gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    Ok(EnsembleTargets {
        targets: propagated.scaled(gamma).add(&stored.scaled(1.0 - gamma)),
        omega,
        gamma,
    })
}

/// Full relation pipeline: similarity from unit-norm features, closed-form
/// propagation of `outputs`, blend with `stored`.
pub fn collaborative_targets(
    unit_features: &Matrix,
    outputs: &Matrix,
    stored: &Matrix,
    omega: f64,
    gamma: f64,
    source_batch: usize,
) -> Result<EnsembleTargets> {
    let s = similarity_matrix(unit_features, source_batch)?;
    let q = propagate_closed_form(&s, outputs, omega)?;
    ensemble_outputs(&q, stored, gamma, omega)
}

/// Mean over rows of ‖oᵢ − o*ᵢ‖² and its gradient 2(o − o*)/n (o* held fixed).
pub fn ckd_loss(outputs: &Matrix, targets: &EnsembleTargets) -> Result<(f64, Matrix)> {
    let t = &targets.targets;
    if outputs.shape() != t.shape() {
        return Err(CocaError::shape(
            format!("{}x{}", t.rows(), t.cols()),
            format!("{}x{}", outputs.rows(), outputs.cols()),
        ));
    }
    let n = outputs.rows();
    if n == 0 {
        return Ok((0.0, Matrix::zeros(0, outputs.cols())));
    }
    let diff = outputs.sub(t);
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n as f64;
    Ok((loss, diff.scaled(2.0 / n as f64)))
}
