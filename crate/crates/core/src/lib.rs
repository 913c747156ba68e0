//! General continual learning on MNIST-360 with experience replay,
//! collaborative knowledge distillation through label propagation, and
//! collaborative self-supervision (pretext transforms plus supervised
//! contrastive learning).
//!
//! The crate is organised bottom-up:
//!
//! - [`ndmath`]: dense matrices, linear solves, softmax and a seeded RNG.
//! - [`net`]: the MLP backbone with classifier, auxiliary and projector heads,
//!   hand-written backprop and SGD.
//! - [`streams`]: IDX loading, MNIST-360 and class-split streams, image
//!   transforms.
//! - [`memory`]: the reservoir replay buffer.
//! - [`relation`]: similarity graph, label propagation and the distillation loss.
//! - [`feature`]: pretext-task and supervised contrastive losses.
//! - [`trainer`]: the per-step objective, training loop and evaluation.
//! - [`checks`]: self-contained property suites (gradients, propagation, ...).
//! - [`cli`]: run configuration and the `train` / `check` / `ablate` commands.

pub mod checks;
pub mod cli;
pub mod error;
pub mod feature;
pub mod memory;
pub mod ndmath;
pub mod net;
pub mod relation;
pub mod streams;
pub mod trainer;

pub use error::{CocaError, Result};
