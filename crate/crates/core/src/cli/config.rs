use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CocaError, Result};
use crate::net::NetConfig;
use crate::trainer::{AblationConfig, HyperParams, StreamKind};

pub const DATA_DIR_ENV: &str = "COCA_DATA_DIR";

/// A run description. Serialized as a flat JSON object with dotted keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "data_dir")]
    pub data_dir: Option<PathBuf>,
    #[serde(rename = "output_dir")]
    pub output_dir: Option<PathBuf>,
    #[serde(rename = "run_name")]
    pub run_name: String,
    #[serde(rename = "stream")]
    pub stream: StreamKind,
    #[serde(rename = "seed")]
    pub seed: u64,

    #[serde(rename = "hp.lambda1")]
    pub lambda1: f64,
    #[serde(rename = "hp.lambda2")]
    pub lambda2: f64,
    #[serde(rename = "hp.omega")]
    pub omega: f64,
    #[serde(rename = "hp.gamma")]
    pub gamma: f64,
    #[serde(rename = "hp.tau")]
    pub tau: f64,
    #[serde(rename = "hp.lr")]
    pub lr: f64,
    #[serde(rename = "hp.batch_new")]
    pub batch_new: usize,
    #[serde(rename = "hp.batch_replay")]
    pub batch_replay: usize,
    #[serde(rename = "hp.buffer")]
    pub buffer: usize,
    #[serde(rename = "hp.epochs")]
    pub epochs: usize,

    #[serde(rename = "ablation.ckd")]
    pub ckd: bool,
    #[serde(rename = "ablation.pt")]
    pub pt: bool,
    #[serde(rename = "ablation.scl")]
    pub scl: bool,

    #[serde(rename = "stream.rounds")]
    pub rounds: usize,
    #[serde(rename = "stream.n_tasks")]
    pub n_tasks: usize,

    #[serde(rename = "net.backbone_hidden")]
    pub backbone_hidden: Vec<usize>,
    #[serde(rename = "net.head_hidden")]
    pub head_hidden: Vec<usize>,
    #[serde(rename = "net.embed_dim")]
    pub embed_dim: usize,

    #[serde(rename = "eval_every")]
    pub eval_every: usize,
    #[serde(rename = "dump_buffer")]
    pub dump_buffer: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let net = NetConfig::mnist(9);
        Self {
            data_dir: None,
            output_dir: None,
            run_name: "run".into(),
            stream: StreamKind::Mnist360,
            seed: 0,
            lambda1: hp.lambda1,
            lambda2: hp.lambda2,
            omega: hp.omega,
            gamma: hp.gamma,
            tau: hp.tau,
            lr: hp.lr,
            batch_new: hp.batch_new,
            batch_replay: hp.batch_replay,
            buffer: hp.buffer,
            epochs: hp.epochs,
            ckd: true,
            pt: true,
            scl: true,
            rounds: 3,
            n_tasks: 5,
            backbone_hidden: net.backbone_hidden,
            head_hidden: net.aux_hidden,
            embed_dim: net.embed_dim,
            eval_every: 0,
            dump_buffer: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            CocaError::config(offending_key(&msg).unwrap_or_else(|| "<document>".into()), msg)
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CocaError::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            omega: self.omega,
            gamma: self.gamma,
            tau: self.tau,
            lr: self.lr,
            batch_new: self.batch_new,
            batch_replay: self.batch_replay,
            buffer: self.buffer,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            ckd: self.ckd,
            pt: self.pt,
            scl: self.scl,
        }
    }

    pub fn set_ablation(&mut self, a: AblationConfig) {
        self.ckd = a.ckd;
        self.pt = a.pt;
        self.scl = a.scl;
    }

    pub fn net_config(&self, classes: usize) -> NetConfig {
        NetConfig {
            input_dim: 28 * 28,
            backbone_hidden: self.backbone_hidden.clone(),
            classes,
            aux_hidden: self.head_hidden.clone(),
            proxy_classes: crate::streams::TransformSpec::NUM_PROXY_LABELS,
            projector_hidden: self.head_hidden.clone(),
            embed_dim: self.embed_dim,
        }
    }

    /// The data directory, falling back to `COCA_DATA_DIR`.
    pub fn resolved_data_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| CocaError::config("data_dir", format!("no data directory given; pass --data-dir or set {DATA_DIR_ENV}")))
    }

    /// Checks every invariant before any work is done.
    pub fn validate(&self) -> Result<()> {
        self.hyper_params().validate()?;
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name == ".." {
            return Err(CocaError::config("run_name", "must be a non-empty plain file name"));
        }
        if self.rounds == 0 {
            return Err(CocaError::config("stream.rounds", "must be positive"));
        }
        if self.n_tasks == 0 {
            return Err(CocaError::config("stream.n_tasks", "must be positive"));
        }
        if self.backbone_hidden.is_empty() || self.backbone_hidden.contains(&0) {
            return Err(CocaError::config("net.backbone_hidden", "needs at least one positive width"));
        }
        if self.head_hidden.contains(&0) {
            return Err(CocaError::config("net.head_hidden", "widths must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(CocaError::config("net.embed_dim", "must be positive"));
        }
        if self.epochs != 1 && self.stream != StreamKind::Joint {
            return Err(CocaError::config("hp.epochs", "only the joint stream supports more than one epoch"));
        }
        Ok(())
    }
}

// serde_json reports unknown fields as "unknown field `x`, expected ..." and
// type errors as "... at line L column C"; pull out the key where possible.
fn offending_key(msg: &str) -> Option<String> {
    for prefix in ["unknown field `", "missing field `", "duplicate field `"] {
        if let Some(rest) = msg.split(prefix).nth(1) {
            return rest.split('`').next().map(str::to_string);
        }
    }
    None
}
