//! Label propagation over a batch similarity graph, on synthetic data.
//!
//! Two clusters of feature vectors; one member of cluster A starts with the
//! "wrong" output. Propagation pulls it toward its neighbours, and the
//! ensemble target blends the propagated outputs with stored ones.
//!
//! cargo run --example label_propagation

use coca::ndmath::{spectral_radius_bound, Matrix};
use coca::net::normalize_rows;
use coca::relation::{
    ckd_loss, ensemble_outputs, propagate_closed_form, propagate_iterative, similarity_matrix,
};

fn show(name: &str, m: &Matrix) {
    println!("{name}:");
    for i in 0..m.rows() {
        let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> coca::Result<()> {
    let features = normalize_rows(&Matrix::from_rows(&[
        [1.0, 0.1, 0.0],
        [0.9, 0.0, 0.1],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.1],
        [0.1, 0.9, 0.0],
    ]));
    // class scores: rows 0-2 are cluster A, 3-4 cluster B; row 2 disagrees
    let outputs = Matrix::from_rows(&[[3.0, -1.0], [2.5, -0.5], [-1.0, 2.0], [-2.0, 3.0], [-1.5, 2.5]]);
    let stored = Matrix::from_rows(&[[2.0, 0.0], [2.0, 0.0], [0.0, 1.0], [-1.0, 2.0], [-1.0, 2.0]]);

    let s = similarity_matrix(&features, 0)?;
    show("similarity (rows sum to 1, zero diagonal)", &s.matrix);

    for omega in [0.1, 0.5, 0.9] {
        let closed = propagate_closed_form(&s, &outputs, omega)?;
        let iter = propagate_iterative(&s, &outputs, omega, 500)?;
        println!(
            "\nomega {omega}: spectral radius of omega*S = {:.4}, closed form vs 500 iterations max diff {:.2e}",
            spectral_radius_bound(&s.matrix.scaled(omega), 500),
            closed.sub(&iter).max_abs()
        );
        show("propagated outputs", &closed);
    }

    let q = propagate_closed_form(&s, &outputs, 0.1)?;
    let targets = ensemble_outputs(&q, &stored, 0.1, 0.1)?;
    show("\nensemble targets (omega = gamma = 0.1)", &targets.targets);
    let (loss, _) = ckd_loss(&outputs, &targets)?;
    println!("distillation loss: {loss:.4}");

    // with omega = 0 the ensemble loss is (1 - gamma)^2 times plain distillation
    let gamma = 0.3;
    let q0 = propagate_closed_form(&s, &outputs, 0.0)?;
    let t0 = ensemble_outputs(&q0, &stored, gamma, 0.0)?;
    let kd = outputs.sub(&stored).data().iter().map(|d| d * d).sum::<f64>() / outputs.rows() as f64;
    println!(
        "omega = 0: loss {:.6} vs (1-gamma)^2 * KD {:.6}",
        ckd_loss(&outputs, &t0)?.0,
        (1.0 - gamma).powi(2) * kd
    );
    Ok(())
}
