//! Per-step objective assembly, the streaming training loop and evaluation.

mod eval;
mod experiment;

pub use eval::{evaluate, EvalMode, Metrics};
pub use experiment::{run_experiment, run_experiment_with_data, write_outputs, Datasets, RunReport, StreamKind};

use serde::{Deserialize, Serialize};

use crate::error::{CocaError, Result};
use crate::feature::{pt_loss, sample_pretext, scl_loss, ContrastiveBatch};
use crate::memory::{capture_logits, BufferEntry, ReplayBuffer};
use crate::ndmath::{softmax_cross_entropy, Matrix, Rng};
use crate::net::{backward, forward, sgd_step, Heads, NetworkParams, OutputGrads};
use crate::relation::{ckd_loss, collaborative_targets};
use crate::streams::{images_matrix, Image, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub omega: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_new: usize,
    pub batch_replay: usize,
    pub buffer: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            // 1.0 lets the self-supervised terms swamp replay at buffer 200
            lambda2: 0.5,
            omega: 0.1,
            gamma: 0.1,
            tau: 0.07,
            lr: 0.1,
            batch_new: 32,
            batch_replay: 32,
            buffer: 500,
            epochs: 1,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(CocaError::config(key, msg));
        if !(self.lambda1 >= 0.0) {
            return bad("hp.lambda1", format!("must be >= 0, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0) {
            return bad("hp.lambda2", format!("must be >= 0, got {}", self.lambda2));
        }
        if !(0.0..1.0).contains(&self.omega) {
            return bad("hp.omega", format!("must lie in [0, 1), got {}", self.omega));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("hp.gamma", format!("must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0) {
            return bad("hp.tau", format!("must be > 0, got {}", self.tau));
        }
        if !(self.lr > 0.0) {
            return bad("hp.lr", format!("must be > 0, got {}", self.lr));
        }
        if self.batch_new == 0 {
            return bad("hp.batch_new", "must be positive".into());
        }
        if self.batch_replay == 1 {
            return bad("hp.batch_replay", "must be 0 or at least 2 (similarity needs pairs)".into());
        }
        if self.epochs == 0 {
            return bad("hp.epochs", "must be positive".into());
        }
        Ok(())
    }
}

/// Which calibration terms are active. All off is plain experience replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub ckd: bool,
    pub pt: bool,
    pub scl: bool,
}

impl AblationConfig {
    pub const ER: AblationConfig = AblationConfig {
        ckd: false,
        pt: false,
        scl: false,
    };
    pub const FULL: AblationConfig = AblationConfig {
        ckd: true,
        pt: true,
        scl: true,
    };

    /// All eight toggle combinations, ER first and full last.
    pub fn lattice() -> Vec<AblationConfig> {
        let mut all: Vec<AblationConfig> = (0..8u8)
            .map(|bits| AblationConfig {
                ckd: bits & 1 != 0,
                pt: bits & 2 != 0,
                scl: bits & 4 != 0,
            })
            .collect();
        all.sort_by_key(|a| (a.ckd as u8 + a.pt as u8 + a.scl as u8, !a.ckd, !a.pt, !a.scl));
        all
    }

    /// Short label such as `ckd+scl`, or `er` when every term is off.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.ckd, "ckd"), (self.pt, "pt"), (self.scl, "scl")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if parts.is_empty() {
            "er".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Term values of one step. Disabled terms are 0; `total` applies the λ weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub base: f64,
    pub ckd: f64,
    pub pt: f64,
    pub scl: f64,
    pub total: f64,
}

/// Independent random streams so that toggling one component does not
/// perturb the draws of another.
#[derive(Clone, Debug)]
pub struct StepRngs {
    pub replay: Rng,
    pub pretext: Rng,
    pub reservoir: Rng,
}

impl StepRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            replay: Rng::derive(seed, 0x11),
            pretext: Rng::derive(seed, 0x12),
            reservoir: Rng::derive(seed, 0x13),
        }
    }
}

pub struct BaseLoss {
    pub value: f64,
    pub new_grad: Matrix,
    pub replay_grad: Option<Matrix>,
}

/// Mean CE on the new half plus mean CE on the replay half (when present).
pub fn base_loss(new_logits: &Matrix, new_labels: &[usize], replay: Option<(&Matrix, &[usize])>) -> Result<BaseLoss> {
    let (new_ce, new_grad) = softmax_cross_entropy(new_logits, new_labels)?;
    let (replay_ce, replay_grad) = match replay {
        Some((logits, labels)) => {
            let (l, g) = softmax_cross_entropy(logits, labels)?;
            (l, Some(g))
        }
        None => (0.0, None),
    };
    Ok(BaseLoss {
        value: new_ce + replay_ce,
        new_grad,
        replay_grad,
    })
}

fn write_rows(dst: &mut Matrix, start: usize, src: &Matrix, scale: f64) {
    for i in 0..src.rows() {
        for (d, s) in dst.row_mut(start + i).iter_mut().zip(src.row(i)) {
            *d += scale * s;
        }
    }
}

/// Loss terms and gradients of one step, before the optimizer is applied.
pub struct StepObjective {
    pub losses: LossBreakdown,
    pub grads: crate::net::Gradients,
    /// Raw logits of the new samples under the pre-step parameters.
    pub new_logits: Matrix,
}

/// Evaluates the full objective on a new batch plus a replay draw and
/// returns its gradient without touching the parameters or the buffer.
pub fn step_objective(
    params: &NetworkParams,
    new_samples: &[Sample],
    replay: &[&BufferEntry],
    hp: &HyperParams,
    ablation: AblationConfig,
    pretext_rng: &mut Rng,
    step: usize,
) -> Result<StepObjective> {
    let n_new = new_samples.len();
    let n_rep = replay.len();
    let images: Vec<&Image> = new_samples
        .iter()
        .map(|s| &s.image)
        .chain(replay.iter().map(|e| &e.image))
        .collect();
    let labels: Vec<usize> = new_samples
        .iter()
        .map(|s| s.label)
        .chain(replay.iter().map(|e| e.label))
        .collect();
    let x = images_matrix(images.iter().copied());

    let use_scl = ablation.scl && hp.lambda2 > 0.0;
    let use_pt = ablation.pt && hp.lambda2 > 0.0;
    let use_ckd = ablation.ckd && hp.lambda1 > 0.0 && n_rep >= 2;
    let heads = Heads {
        classifier: true,
        aux: false,
        projector: use_scl,
    };
    let tape = forward(params, &x, heads)?;
    let logits = tape.logits.as_ref().expect("classifier head requested");

    let mut losses = LossBreakdown {
        step,
        ..Default::default()
    };
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());

    let new_logits = logits.slice_rows(0, n_new);
    let replay_logits = logits.slice_rows(n_new, n_new + n_rep);
    let base = base_loss(
        &new_logits,
        &labels[..n_new],
        (n_rep > 0).then_some((&replay_logits, &labels[n_new..])),
    )?;
    losses.base = base.value;
    write_rows(&mut dlogits, 0, &base.new_grad, 1.0);
    if let Some(g) = &base.replay_grad {
        write_rows(&mut dlogits, n_new, g, 1.0);
    }

    if use_ckd {
        let unit = tape.features.slice_rows(n_new, n_new + n_rep);
        let unit = crate::net::normalize_rows(&unit);
        let stored = Matrix::from_rows(&replay.iter().map(|e| e.logits.as_slice()).collect::<Vec<_>>());
        let targets = collaborative_targets(&unit, &replay_logits, &stored, hp.omega, hp.gamma, step)?;
        let (value, g) = ckd_loss(&replay_logits, &targets)?;
        losses.ckd = value;
        write_rows(&mut dlogits, n_new, &g, hp.lambda1);
    }

    let mut grads = backward(
        params,
        &tape,
        &OutputGrads {
            logits: Some(dlogits),
            aux_logits: None,
            embedding: None,
        },
    )?;

    if use_pt || use_scl {
        let pretext = sample_pretext(images.iter().copied(), pretext_rng);
        let px = images_matrix(&pretext.images);
        let ptape = forward(
            params,
            &px,
            Heads {
                classifier: false,
                aux: use_pt,
                projector: use_scl,
            },
        )?;
        let mut out = OutputGrads::default();
        if use_pt {
            let (value, g) = pt_loss(ptape.aux_logits.as_ref().expect("aux head"), &pretext.proxy_labels)?;
            losses.pt = value;
            out.aux_logits = Some(g.scaled(hp.lambda2));
        }
        let mut plain_dz = None;
        if use_scl {
            let plain = tape.embedding.as_ref().expect("projector head");
            let views = ptape.embedding.as_ref().expect("projector head");
            let batch = ContrastiveBatch::two_views(plain, views, &labels)?;
            let scl = scl_loss(&batch, hp.tau)?;
            losses.scl = scl.loss;
            let m = labels.len();
            plain_dz = Some(scl.grad.slice_rows(0, m).scaled(hp.lambda2));
            out.embedding = Some(scl.grad.slice_rows(m, 2 * m).scaled(hp.lambda2));
        }
        grads.add_assign(&backward(params, &ptape, &out)?);
        if let Some(dz) = plain_dz {
            grads.add_assign(&backward(
                params,
                &tape,
                &OutputGrads {
                    embedding: Some(dz),
                    ..Default::default()
                },
            )?);
        }
    }

    losses.total = losses.base + hp.lambda1 * losses.ckd + hp.lambda2 * (losses.pt + losses.scl);
    Ok(StepObjective {
        losses,
        grads,
        new_logits,
    })
}

/// One training step: replay draw, objective, SGD update, then reservoir
/// insertion of the new samples with the logits they had before the update.
pub fn train_step(
    params: &mut NetworkParams,
    new_samples: &[Sample],
    buffer: &mut ReplayBuffer,
    hp: &HyperParams,
    ablation: AblationConfig,
    rngs: &mut StepRngs,
    step: usize,
) -> Result<LossBreakdown> {
    if new_samples.is_empty() || new_samples.len() > hp.batch_new {
        return Err(CocaError::shape(
            format!("1..={} new samples", hp.batch_new),
            format!("{} new samples", new_samples.len()),
        ));
    }
    let replay: Vec<&BufferEntry> = if buffer.is_empty() || hp.batch_replay == 0 {
        Vec::new()
    } else {
        buffer.sample_replay(hp.batch_replay, &mut rngs.replay)?
    };
    let replay_finite = replay.iter().all(|e| e.logits.iter().all(|v| v.is_finite()));
    let objective = step_objective(params, new_samples, &replay, hp, ablation, &mut rngs.pretext, step)?;
    if !objective.losses.total.is_finite() || !replay_finite {
        return Err(CocaError::NonFinite {
            step,
            what: "the training loss".into(),
        });
    }
    drop(replay);
    sgd_step(params, &objective.grads, hp.lr);

    if buffer.capacity() > 0 {
        for (i, s) in new_samples.iter().enumerate() {
            let entry = BufferEntry {
                image: s.image.clone(),
                logits: objective.new_logits.row(i).to_vec(),
                label: s.label,
            };
            buffer.reservoir_insert(entry, &mut rngs.reservoir);
        }
    }
    Ok(objective.losses)
}

/// Logits of sample `i` from a classifier forward pass, as stored in memory.
pub fn stored_logits(params: &NetworkParams, image: &Image) -> Result<Vec<f64>> {
    let tape = forward(params, &images_matrix([image]), Heads::CLASSIFIER)?;
    capture_logits(&tape, 0)
}
