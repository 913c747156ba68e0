//! The model: an MLP backbone shared by a linear classifier, a nonlinear
//! auxiliary (pretext) classifier and a nonlinear projector, with
//! hand-written forward/backward passes and plain SGD.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

use serde::{Deserialize, Serialize};

use crate::error::{CocaError, Result};
use crate::ndmath::{l2_norm, Matrix, Rng};

/// Layer widths for every part of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub backbone_hidden: Vec<usize>,
    pub classes: usize,
    pub aux_hidden: Vec<usize>,
    pub proxy_classes: usize,
    pub projector_hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl NetConfig {
    /// 784 → 100 → 100 backbone, 3×128 heads, 16 proxy labels, 64-d embedding.
    pub fn mnist(classes: usize) -> Self {
        Self {
            input_dim: 28 * 28,
            backbone_hidden: vec![100, 100],
            classes,
            aux_hidden: vec![128, 128, 128],
            proxy_classes: 16,
            projector_hidden: vec![128, 128, 128],
            embed_dim: 64,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.backbone_hidden.last().unwrap_or(&self.input_dim)
    }
}

/// Fully connected layer; `weight` is `in × out` so a batch multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform in ±1/sqrt(fan_in) for weights and biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self {
            weight: Matrix::new(fan_in, fan_out, weight).expect("sized by construction"),
            bias,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.rows(), self.weight.cols())
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul(&self.weight);
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns ∂L/∂x.
    fn backward(&self, x: &Matrix, dout: &Matrix, grad: &mut Linear) -> Matrix {
        grad.weight.add_assign(&x.t_matmul(dout));
        for i in 0..dout.rows() {
            for (g, d) in grad.bias.iter_mut().zip(dout.row(i)) {
                *g += d;
            }
        }
        dout.matmul_t(&self.weight)
    }

    fn add_assign(&mut self, other: &Linear) {
        self.weight.add_assign(&other.weight);
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Stack of linear layers with ReLU between them; `relu_output` also
/// rectifies the final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

#[derive(Clone, Debug)]
struct MlpTape {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

impl Mlp {
    pub fn init(widths: &[usize], relu_output: bool, rng: &mut Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers, relu_output }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            relu_output: self.relu_output,
        }
    }

    fn forward(&self, x: &Matrix) -> (Matrix, MlpTape) {
        let mut tape = MlpTape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut act = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&act);
            let next = if l < last || self.relu_output { relu(&pre) } else { pre.clone() };
            tape.inputs.push(act);
            tape.pre.push(pre);
            act = next;
        }
        (act, tape)
    }

    fn backward(&self, tape: &MlpTape, dout: &Matrix, grad: &mut Mlp) -> Matrix {
        let last = self.layers.len().saturating_sub(1);
        let mut d = dout.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last || self.relu_output {
                for (g, p) in d.data_mut().iter_mut().zip(tape.pre[l].data()) {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d = self.layers[l].backward(&tape.inputs[l], &d, &mut grad.layers[l]);
        }
        d
    }

    fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}

/// Backbone Θ, classifier θ, auxiliary classifier ψ and projector φ.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub backbone: Mlp,
    pub classifier: Linear,
    pub aux: Mlp,
    pub projector: Mlp,
    version: u64,
}

/// ∂L/∂params, shaped exactly like [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub backbone: Mlp,
    pub classifier: Linear,
    pub aux: Mlp,
    pub projector: Mlp,
}

fn chain(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut w = vec![first];
    w.extend_from_slice(hidden);
    w.push(last);
    w
}

impl NetworkParams {
    pub fn init(config: &NetConfig, rng: &mut Rng) -> Self {
        let mut backbone_widths = vec![config.input_dim];
        backbone_widths.extend_from_slice(&config.backbone_hidden);
        let feat = config.feature_dim();
        Self {
            backbone: Mlp::init(&backbone_widths, true, rng),
            classifier: Linear::init(feat, config.classes, rng),
            aux: Mlp::init(&chain(feat, &config.aux_hidden, config.proxy_classes), false, rng),
            projector: Mlp::init(&chain(feat, &config.projector_hidden, config.embed_dim), false, rng),
            config: config.clone(),
            version: 0,
        }
    }

    /// All-zero parameters (every logit is 0).
    pub fn zeros(config: &NetConfig) -> Self {
        let mut p = Self::init(config, &mut Rng::new(0));
        p.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        p
    }

    /// Bumped by every optimizer step; tapes record it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            backbone: self.backbone.zeros_like(),
            classifier: self.classifier.zeros_like(),
            aux: self.aux.zeros_like(),
            projector: self.projector.zeros_like(),
        }
    }

    /// Flat views over every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        tensor_views(&self.backbone, &self.classifier, &self.aux, &self.projector)
    }

    /// Mutable views; editing through these does not bump the version.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        tensor_views_mut(
            &mut self.backbone,
            &mut self.classifier,
            &mut self.aux,
            &mut self.projector,
        )
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, mlp) in [("backbone", &self.backbone)] {
            for l in 0..mlp.layers.len() {
                names.push(format!("{prefix}.{l}.weight"));
                names.push(format!("{prefix}.{l}.bias"));
            }
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        for (prefix, mlp) in [("aux", &self.aux), ("projector", &self.projector)] {
            for l in 0..mlp.layers.len() {
                names.push(format!("{prefix}.{l}.weight"));
                names.push(format!("{prefix}.{l}.bias"));
            }
        }
        names
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut push = |l: &Linear| {
            shapes.push(vec![l.fan_in(), l.fan_out()]);
            shapes.push(vec![l.fan_out()]);
        };
        self.backbone.layers.iter().for_each(&mut push);
        push(&self.classifier);
        self.aux.layers.iter().for_each(&mut push);
        self.projector.layers.iter().for_each(&mut push);
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Parameter at a flat index across all tensors (checkpoint order).
    pub fn flat_get(&self, idx: usize) -> f64 {
        flat_lookup(self.tensors(), idx)
    }

    pub fn flat_set(&mut self, mut idx: usize, v: f64) {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
        panic!("flat parameter index out of range");
    }
}

fn flat_lookup(tensors: Vec<&[f64]>, mut idx: usize) -> f64 {
    for t in tensors {
        if idx < t.len() {
            return t[idx];
        }
        idx -= t.len();
    }
    panic!("flat parameter index out of range");
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        tensor_views(&self.backbone, &self.classifier, &self.aux, &self.projector)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.backbone.add_assign(&other.backbone);
        self.classifier.add_assign(&other.classifier);
        self.aux.add_assign(&other.aux);
        self.projector.add_assign(&other.projector);
    }

    pub fn scale(&mut self, s: f64) {
        tensor_views_mut(
            &mut self.backbone,
            &mut self.classifier,
            &mut self.aux,
            &mut self.projector,
        )
        .into_iter()
        .for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }

    pub fn flat_get(&self, idx: usize) -> f64 {
        flat_lookup(self.tensors(), idx)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn tensor_views<'a>(b: &'a Mlp, c: &'a Linear, a: &'a Mlp, p: &'a Mlp) -> Vec<&'a [f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    let mut push = |l: &'a Linear| {
        out.push(l.weight.data());
        out.push(&l.bias);
    };
    b.layers.iter().for_each(&mut push);
    push(c);
    a.layers.iter().for_each(&mut push);
    p.layers.iter().for_each(&mut push);
    out
}

fn tensor_views_mut<'a>(
    b: &'a mut Mlp,
    c: &'a mut Linear,
    a: &'a mut Mlp,
    p: &'a mut Mlp,
) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    let layers = b
        .layers
        .iter_mut()
        .chain(std::iter::once(c))
        .chain(a.layers.iter_mut())
        .chain(p.layers.iter_mut());
    for l in layers {
        out.push(l.weight.data_mut());
        out.push(&mut l.bias);
    }
    out
}

/// Which heads a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub classifier: bool,
    pub aux: bool,
    pub projector: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        classifier: true,
        aux: true,
        projector: true,
    };
    pub const CLASSIFIER: Heads = Heads {
        classifier: true,
        aux: false,
        projector: false,
    };
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    version: u64,
    backbone: MlpTape,
    /// Backbone output h.
    pub features: Matrix,
    /// Class logits o.
    pub logits: Option<Matrix>,
    pub aux_logits: Option<Matrix>,
    aux: Option<MlpTape>,
    /// Projector output before normalization.
    pub projection: Option<Matrix>,
    /// Unit-norm projector embedding z.
    pub embedding: Option<Matrix>,
    projector: Option<MlpTape>,
}

impl ForwardTape {
    pub fn batch_size(&self) -> usize {
        self.features.rows()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Backbone features scaled to unit L2 norm (zero rows stay zero).
    pub fn normalized_features(&self) -> Matrix {
        normalize_rows(&self.features)
    }
}

/// Row-wise L2 normalization; rows with zero norm are left at zero.
pub fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let n = l2_norm(out.row(i));
        if n > 0.0 {
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Gradients of the loss w.r.t. each head output; `None` heads contribute zero.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    pub logits: Option<Matrix>,
    pub aux_logits: Option<Matrix>,
    pub embedding: Option<Matrix>,
}

pub fn forward(params: &NetworkParams, batch: &Matrix, heads: Heads) -> Result<ForwardTape> {
    if batch.cols() != params.config.input_dim {
        return Err(CocaError::shape(
            format!("{} input features", params.config.input_dim),
            format!("{} input features", batch.cols()),
        ));
    }
    if batch.rows() == 0 {
        return Err(CocaError::shape("nonempty batch", "0 samples"));
    }
    let (features, backbone) = params.backbone.forward(batch);
    let logits = heads.classifier.then(|| params.classifier.forward(&features));
    let (aux_logits, aux) = if heads.aux {
        let (o, t) = params.aux.forward(&features);
        (Some(o), Some(t))
    } else {
        (None, None)
    };
    let (projection, embedding, projector) = if heads.projector {
        let (r, t) = params.projector.forward(&features);
        let z = normalize_rows(&r);
        (Some(r), Some(z), Some(t))
    } else {
        (None, None, None)
    };
    Ok(ForwardTape {
        version: params.version,
        backbone,
        features,
        logits,
        aux_logits,
        aux,
        projection,
        embedding,
        projector,
    })
}

fn missing_head(name: &str) -> CocaError {
    CocaError::shape(format!("tape with {name} head"), "head not evaluated")
}

pub fn backward(params: &NetworkParams, tape: &ForwardTape, grads: &OutputGrads) -> Result<Gradients> {
    if tape.version != params.version {
        return Err(CocaError::MissingTape {
            tape: tape.version,
            params: params.version,
        });
    }
    let mut out = params.zero_grads();
    let mut dfeat = Matrix::zeros(tape.features.rows(), tape.features.cols());
    let mut touched = false;

    if let Some(dlogits) = &grads.logits {
        tape.logits.as_ref().ok_or_else(|| missing_head("classifier"))?;
        check_shape(dlogits, tape.batch_size(), params.config.classes)?;
        dfeat.add_assign(&params.classifier.backward(&tape.features, dlogits, &mut out.classifier));
        touched = true;
    }
    if let Some(daux) = &grads.aux_logits {
        let aux_tape = tape.aux.as_ref().ok_or_else(|| missing_head("aux"))?;
        check_shape(daux, tape.batch_size(), params.config.proxy_classes)?;
        dfeat.add_assign(&params.aux.backward(aux_tape, daux, &mut out.aux));
        touched = true;
    }
    if let Some(dz) = &grads.embedding {
        let proj_tape = tape.projector.as_ref().ok_or_else(|| missing_head("projector"))?;
        let raw = tape.projection.as_ref().expect("projector tape implies projection");
        let z = tape.embedding.as_ref().expect("projector tape implies embedding");
        check_shape(dz, tape.batch_size(), params.config.embed_dim)?;
        // d(r/|r|) = (dz - z (z·dz)) / |r|
        let mut draw = Matrix::zeros(raw.rows(), raw.cols());
        for i in 0..raw.rows() {
            let norm = l2_norm(raw.row(i));
            if norm == 0.0 {
                continue;
            }
            let zi = z.row(i);
            let dzi = dz.row(i);
            let proj: f64 = zi.iter().zip(dzi).map(|(a, b)| a * b).sum();
            for ((d, &zz), &g) in draw.row_mut(i).iter_mut().zip(zi).zip(dzi) {
                *d = (g - zz * proj) / norm;
            }
        }
        dfeat.add_assign(&params.projector.backward(proj_tape, &draw, &mut out.projector));
        touched = true;
    }
    if touched {
        params.backbone.backward(&tape.backbone, &dfeat, &mut out.backbone);
    }
    Ok(out)
}

fn check_shape(m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(CocaError::shape(
            format!("{rows}x{cols}"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

/// `param -= lr * grad`, elementwise.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, lr: f64) {
    assert!(lr > 0.0, "learning rate must be positive");
    let gs = grads.tensors();
    for (p, g) in params.tensors_mut().into_iter().zip(gs) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
    params.version += 1;
}
