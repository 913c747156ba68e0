//! Self-contained property suites over fixed synthetic fixtures. Each check
//! reports the largest error it observed against its tolerance.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::feature::{pretext_with_specs, pt_loss, scl_loss, scl_loss_reference, ContrastiveBatch};
use crate::memory::{BufferEntry, ReplayBuffer};
use crate::ndmath::{softmax_cross_entropy, spectral_radius_bound, Matrix, Rng};
use crate::net::{backward, forward, normalize_rows, Gradients, Heads, NetConfig, NetworkParams, OutputGrads};
use crate::relation::{
    ckd_loss, collaborative_targets, ensemble_outputs, propagate_closed_form, propagate_iterative, similarity_matrix,
    EnsembleTargets,
};
use crate::streams::{images_matrix, Image, Sample, TransformSpec};
use crate::trainer::{base_loss, step_objective, AblationConfig, HyperParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Grads,
    Propagation,
    Reservoir,
    Losses,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Grads, Suite::Propagation, Suite::Reservoir, Suite::Losses];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Grads => "grads",
            Suite::Propagation => "propagation",
            Suite::Reservoir => "reservoir",
            Suite::Losses => "losses",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub id: String,
    /// Largest error seen, or the p-value for statistical checks.
    pub observed: f64,
    pub tolerance: f64,
    /// True when `observed` must exceed `tolerance` rather than stay below it.
    pub lower_bound: bool,
    pub detail: String,
}

impl CheckResult {
    fn max_err(id: &str, observed: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            observed,
            tolerance,
            lower_bound: false,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.observed > self.tolerance
        } else {
            self.observed <= self.tolerance
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let rel = if self.lower_bound { ">" } else { "<=" };
        write!(
            f,
            "{verdict} {}: observed {:.3e} (required {rel} {:.1e}) {}",
            self.id, self.observed, self.tolerance, self.detail
        )
    }
}

pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    match suite {
        Suite::Grads => grads_suite(),
        Suite::Propagation => propagation_suite(),
        Suite::Reservoir => reservoir_suite(),
        Suite::Losses => losses_suite(),
    }
}

// ---------------------------------------------------------------- fixtures

pub(crate) fn small_config() -> NetConfig {
    NetConfig {
        input_dim: 16,
        backbone_hidden: vec![12, 10],
        classes: 4,
        aux_hidden: vec![8, 8, 8],
        proxy_classes: TransformSpec::NUM_PROXY_LABELS,
        projector_hidden: vec![8, 8, 8],
        embed_dim: 6,
    }
}

fn random_image(rng: &mut Rng) -> Image {
    Image::new(4, 4, (0..16).map(|_| rng.uniform()).collect())
}

fn random_samples(n: usize, classes: usize, rng: &mut Rng) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            image: random_image(rng),
            label: i % classes,
            task_id: None,
        })
        .collect()
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-scale, scale)).collect()).expect("sized")
}

fn unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    normalize_rows(&random_matrix(rows, cols, 1.0, rng))
}

/// Flat parameter indices belonging to the named tensor prefixes.
fn indices_for(params: &NetworkParams, prefixes: &[&str]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensor_names().iter().zip(params.tensors()) {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            out.extend(offset..offset + t.len());
        }
        offset += t.len();
    }
    out
}

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
// denominators below this are treated as this, so near-zero gradients are
// compared on an absolute scale
const FD_FLOOR: f64 = 1e-6;
const FD_SAMPLES: usize = 120;

/// Central-difference check on `FD_SAMPLES` parameters drawn from `pool`.
fn fd_check(
    id: &str,
    params: &NetworkParams,
    pool: &[usize],
    analytic: &Gradients,
    loss: &dyn Fn(&NetworkParams) -> f64,
    rng: &mut Rng,
) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for _ in 0..FD_SAMPLES {
        let idx = pool[rng.below(pool.len())];
        let orig = p.flat_get(idx);
        p.flat_set(idx, orig + FD_STEP);
        let up = loss(&p);
        p.flat_set(idx, orig - FD_STEP);
        let down = loss(&p);
        p.flat_set(idx, orig);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let exact = analytic.flat_get(idx);
        let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    CheckResult::max_err(id, worst, FD_REL_TOL, format!("over {FD_SAMPLES} parameters"))
}

// ---------------------------------------------------------------- grads

struct GradFixture {
    params: NetworkParams,
    new: Vec<Sample>,
    replay: Vec<BufferEntry>,
    specs: Vec<TransformSpec>,
    hp: HyperParams,
    pretext_seed: u64,
}

const PRETEXT_SALT: u64 = 0x9e37_79b9;

impl GradFixture {
    fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let cfg = small_config();
        let params = NetworkParams::init(&cfg, &mut rng);
        let new = random_samples(4, cfg.classes, &mut rng);
        let replay = random_samples(4, cfg.classes, &mut rng)
            .into_iter()
            .map(|s| BufferEntry {
                image: s.image,
                logits: (0..cfg.classes).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                label: (s.label + 1) % cfg.classes,
            })
            .collect();
        // drawn the way the trainer draws them, so a clone of this rng
        // reproduces them inside the step
        let mut pretext_rng = Rng::new(seed ^ PRETEXT_SALT);
        let specs = (0..8)
            .map(|_| TransformSpec::from_proxy_label(pretext_rng.below(TransformSpec::NUM_PROXY_LABELS)).expect("in range"))
            .collect();
        let hp = HyperParams {
            lambda1: 0.7,
            lambda2: 0.3,
            omega: 0.4,
            gamma: 0.3,
            tau: 0.5,
            batch_new: 4,
            batch_replay: 4,
            ..HyperParams::default()
        };
        Self {
            params,
            new,
            replay,
            specs,
            hp,
            pretext_seed: seed ^ PRETEXT_SALT,
        }
    }

    fn images(&self) -> Vec<&Image> {
        self.new.iter().map(|s| &s.image).chain(self.replay.iter().map(|e| &e.image)).collect()
    }

    fn labels(&self) -> Vec<usize> {
        self.new.iter().map(|s| s.label).chain(self.replay.iter().map(|e| e.label)).collect()
    }

    fn x(&self) -> Matrix {
        images_matrix(self.images())
    }

    fn pretext_x(&self) -> Matrix {
        images_matrix(&pretext_with_specs(self.images(), &self.specs).images)
    }

    fn proxy_labels(&self) -> Vec<usize> {
        self.specs.iter().map(|s| s.proxy_label().expect("proxy spec")).collect()
    }

    fn stored(&self) -> Matrix {
        Matrix::from_rows(&self.replay.iter().map(|e| e.logits.as_slice()).collect::<Vec<_>>())
    }

    /// Ensemble targets at the current parameters, to be held fixed.
    fn frozen_targets(&self, p: &NetworkParams) -> EnsembleTargets {
        let tape = forward(p, &self.x(), Heads::CLASSIFIER).expect("forward");
        let n = self.new.len();
        let m = n + self.replay.len();
        let logits = tape.logits.as_ref().expect("logits").slice_rows(n, m);
        let unit = normalize_rows(&tape.features.slice_rows(n, m));
        collaborative_targets(&unit, &logits, &self.stored(), self.hp.omega, self.hp.gamma, 0).expect("targets")
    }

    fn ce(&self, p: &NetworkParams) -> f64 {
        let tape = forward(p, &self.x(), Heads::CLASSIFIER).expect("forward");
        softmax_cross_entropy(tape.logits.as_ref().expect("logits"), &self.labels()).expect("ce").0
    }

    fn ckd(&self, p: &NetworkParams, t: &EnsembleTargets) -> f64 {
        let tape = forward(p, &self.x(), Heads::CLASSIFIER).expect("forward");
        let n = self.new.len();
        let logits = tape.logits.as_ref().expect("logits").slice_rows(n, n + self.replay.len());
        ckd_loss(&logits, t).expect("ckd").0
    }

    fn pt(&self, p: &NetworkParams) -> f64 {
        let heads = Heads {
            classifier: false,
            aux: true,
            projector: false,
        };
        let tape = forward(p, &self.pretext_x(), heads).expect("forward");
        pt_loss(tape.aux_logits.as_ref().expect("aux"), &self.proxy_labels()).expect("pt").0
    }

    fn scl(&self, p: &NetworkParams) -> f64 {
        let heads = Heads {
            classifier: false,
            aux: false,
            projector: true,
        };
        let a = forward(p, &self.x(), heads).expect("forward");
        let b = forward(p, &self.pretext_x(), heads).expect("forward");
        let batch = ContrastiveBatch::two_views(
            a.embedding.as_ref().expect("z"),
            b.embedding.as_ref().expect("z"),
            &self.labels(),
        )
        .expect("views");
        scl_loss(&batch, self.hp.tau).expect("scl").loss
    }

    /// The full objective with the distillation targets frozen, assembled
    /// here independently of the trainer.
    fn composite(&self, p: &NetworkParams, t: &EnsembleTargets) -> f64 {
        let n = self.new.len();
        let m = n + self.replay.len();
        let tape = forward(p, &self.x(), Heads::CLASSIFIER).expect("forward");
        let logits = tape.logits.as_ref().expect("logits");
        let labels = self.labels();
        let base = softmax_cross_entropy(&logits.slice_rows(0, n), &labels[..n]).expect("ce").0
            + softmax_cross_entropy(&logits.slice_rows(n, m), &labels[n..]).expect("ce").0;
        base + self.hp.lambda1 * self.ckd(p, t) + self.hp.lambda2 * (self.pt(p) + self.scl(p))
    }
}

fn grads_suite() -> Vec<CheckResult> {
    let f = GradFixture::new(0x6ead);
    let p = &f.params;
    let mut rng = Rng::new(0x6eae);
    let x = f.x();
    let px = f.pretext_x();
    let labels = f.labels();
    let n = f.new.len();
    let m = x.rows();
    let mut out = Vec::new();

    let classifier_pool = indices_for(p, &["backbone", "classifier"]);
    let aux_pool = indices_for(p, &["backbone", "aux"]);
    let projector_pool = indices_for(p, &["backbone", "projector"]);
    let all_pool: Vec<usize> = (0..p.num_params()).collect();

    // cross-entropy
    let tape = forward(p, &x, Heads::CLASSIFIER).expect("forward");
    let (_, g) = softmax_cross_entropy(tape.logits.as_ref().expect("logits"), &labels).expect("ce");
    let grads = backward(
        p,
        &tape,
        &OutputGrads {
            logits: Some(g),
            ..Default::default()
        },
    )
    .expect("backward");
    out.push(fd_check("grads.ce", p, &classifier_pool, &grads, &|q| f.ce(q), &mut rng));

    // collaborative distillation with targets held fixed
    let targets = f.frozen_targets(p);
    let logits = tape.logits.as_ref().expect("logits").slice_rows(n, m);
    let (_, g) = ckd_loss(&logits, &targets).expect("ckd");
    let mut dl = Matrix::zeros(m, p.config.classes);
    for i in 0..g.rows() {
        dl.row_mut(n + i).copy_from_slice(g.row(i));
    }
    let grads = backward(
        p,
        &tape,
        &OutputGrads {
            logits: Some(dl),
            ..Default::default()
        },
    )
    .expect("backward");
    out.push(fd_check("grads.ckd", p, &classifier_pool, &grads, &|q| f.ckd(q, &targets), &mut rng));

    // pretext task
    let heads = Heads {
        classifier: false,
        aux: true,
        projector: false,
    };
    let ptape = forward(p, &px, heads).expect("forward");
    let (_, g) = pt_loss(ptape.aux_logits.as_ref().expect("aux"), &f.proxy_labels()).expect("pt");
    let grads = backward(
        p,
        &ptape,
        &OutputGrads {
            aux_logits: Some(g),
            ..Default::default()
        },
    )
    .expect("backward");
    out.push(fd_check("grads.pt", p, &aux_pool, &grads, &|q| f.pt(q), &mut rng));

    // supervised contrastive over both views
    let heads = Heads {
        classifier: false,
        aux: false,
        projector: true,
    };
    let a = forward(p, &x, heads).expect("forward");
    let b = forward(p, &px, heads).expect("forward");
    let batch = ContrastiveBatch::two_views(a.embedding.as_ref().expect("z"), b.embedding.as_ref().expect("z"), &labels)
        .expect("views");
    let scl = scl_loss(&batch, f.hp.tau).expect("scl");
    let mut grads = backward(
        p,
        &a,
        &OutputGrads {
            embedding: Some(scl.grad.slice_rows(0, m)),
            ..Default::default()
        },
    )
    .expect("backward");
    grads.add_assign(
        &backward(
            p,
            &b,
            &OutputGrads {
                embedding: Some(scl.grad.slice_rows(m, 2 * m)),
                ..Default::default()
            },
        )
        .expect("backward"),
    );
    out.push(fd_check("grads.scl", p, &projector_pool, &grads, &|q| f.scl(q), &mut rng));

    // the trainer's composite gradient against an independently assembled objective
    let replay: Vec<&BufferEntry> = f.replay.iter().collect();
    let obj = step_objective(p, &f.new, &replay, &f.hp, AblationConfig::FULL, &mut Rng::new(f.pretext_seed), 0)
        .expect("objective");
    let independent = f.composite(p, &targets);
    let mut r = fd_check("grads.composite", p, &all_pool, &obj.grads, &|q| f.composite(q, &targets), &mut rng);
    let mismatch = (obj.losses.total - independent).abs();
    if mismatch > 1e-10 {
        r.observed = f64::INFINITY;
        r.detail = format!("trainer total {} differs from assembled total {independent}", obj.losses.total);
    }
    out.push(r);
    out
}

// ---------------------------------------------------------------- propagation

fn propagation_suite() -> Vec<CheckResult> {
    let mut rng = Rng::new(0x960);
    let mut out = Vec::new();

    // with ω = 0 the ensemble loss is (1-γ)² times plain logit distillation
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 2 + rng.below(30);
        let c = 2 + rng.below(9);
        let gamma = rng.uniform();
        let o = random_matrix(n, c, 3.0, &mut rng);
        let stored = random_matrix(n, c, 3.0, &mut rng);
        let unit = unit_rows(n, 5, &mut rng);
        let t = collaborative_targets(&unit, &o, &stored, 0.0, gamma, 0).expect("targets");
        let ckd = ckd_loss(&o, &t).expect("ckd").0;
        let kd = o.sub(&stored).data().iter().map(|d| d * d).sum::<f64>() / n as f64;
        let expect = (1.0 - gamma).powi(2) * kd;
        worst = worst.max((ckd - expect).abs() / expect.max(1.0));
    }
    out.push(CheckResult::max_err("propagation.omega_zero_identity", worst, 1e-12, "over 100 fixtures"));

    for omega in [0.1, 0.5, 0.9] {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let n = 2 + rng.below(63);
            let s = similarity_matrix(&unit_rows(n, 8, &mut rng), 0).expect("similarity");
            let o = random_matrix(n, 9, 5.0, &mut rng);
            let closed = propagate_closed_form(&s, &o, omega).expect("closed form");
            let iter = propagate_iterative(&s, &o, omega, 500).expect("iterative");
            worst = worst.max(closed.sub(&iter).max_abs());
        }
        out.push(CheckResult::max_err(
            &format!("propagation.closed_vs_iterative[omega={omega}]"),
            worst,
            1e-9,
            "t = 500, 10 fixtures",
        ));
    }

    let mut row_err: f64 = 0.0;
    let mut diag: f64 = 0.0;
    let mut rho_excess = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = 2 + rng.below(63);
        let s = similarity_matrix(&unit_rows(n, 8, &mut rng), 0).expect("similarity");
        for i in 0..n {
            row_err = row_err.max((s.matrix.row(i).iter().sum::<f64>() - 1.0).abs());
            diag = diag.max(s.matrix.get(i, i).abs());
        }
        for omega in [0.1, 0.5, 0.9] {
            let rho = spectral_radius_bound(&s.matrix.scaled(omega), 2000);
            rho_excess = rho_excess.max(rho - omega);
        }
    }
    out.push(CheckResult::max_err("propagation.row_sums", row_err, 1e-9, "50 random graphs"));
    out.push(CheckResult::max_err("propagation.zero_diagonal", diag, 0.0, "50 random graphs"));
    out.push(CheckResult::max_err(
        "propagation.spectral_radius",
        rho_excess.max(0.0),
        1e-6,
        "max of rho(omega S) - omega",
    ));

    // the γ = 1 end of the blend is pure propagation, γ = 0 pure memory
    let s = similarity_matrix(&unit_rows(6, 4, &mut rng), 0).expect("similarity");
    let o = random_matrix(6, 3, 2.0, &mut rng);
    let stored = random_matrix(6, 3, 2.0, &mut rng);
    let q = propagate_closed_form(&s, &o, 0.3).expect("closed form");
    let e1 = ensemble_outputs(&q, &stored, 1.0, 0.3).expect("blend").targets.sub(&q).max_abs();
    let e0 = ensemble_outputs(&q, &stored, 0.0, 0.3).expect("blend").targets.sub(&stored).max_abs();
    out.push(CheckResult::max_err("propagation.blend_endpoints", e0.max(e1), 0.0, ""));
    out
}

// ---------------------------------------------------------------- reservoir

/// Upper-tail p-value of a count vector against equal expected counts when
/// each trial keeps exactly `kept` of `items` (sampling without replacement).
pub fn reservoir_chi_square(counts: &[usize], trials: usize, kept: usize) -> (f64, f64) {
    let items = counts.len() as f64;
    let p = kept as f64 / items;
    let mean = trials as f64 * p;
    let var = trials as f64 * p * (1.0 - p);
    let stat = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / var * (items - 1.0) / items;
    let dist = ChiSquared::new(items - 1.0).expect("positive dof");
    (stat, 1.0 - dist.cdf(stat))
}

pub const RESERVOIR_CAPACITY: usize = 200;
pub const RESERVOIR_STREAM: usize = 1000;
pub const RESERVOIR_TRIALS: usize = 10_000;

fn reservoir_suite() -> Vec<CheckResult> {
    let mut rng = Rng::new(0x4e5);
    let mut counts = vec![0usize; RESERVOIR_STREAM];
    let mut over_capacity = 0usize;
    let tiny = Image::new(1, 1, vec![0.0]);
    for _ in 0..RESERVOIR_TRIALS {
        let mut buf = ReplayBuffer::new(RESERVOIR_CAPACITY);
        for item in 0..RESERVOIR_STREAM {
            buf.reservoir_insert(
                BufferEntry {
                    image: tiny.clone(),
                    logits: Vec::new(),
                    label: item,
                },
                &mut rng,
            );
            over_capacity += usize::from(buf.len() > RESERVOIR_CAPACITY);
        }
        for e in buf.entries() {
            counts[e.label] += 1;
        }
    }
    let (stat, p) = reservoir_chi_square(&counts, RESERVOIR_TRIALS, RESERVOIR_CAPACITY);
    let mut out = vec![CheckResult {
        id: "reservoir.uniform_retention".into(),
        observed: p,
        tolerance: 0.01,
        lower_bound: true,
        detail: format!("chi2 = {stat:.1}, B = {RESERVOIR_CAPACITY}, N = {RESERVOIR_STREAM}, {RESERVOIR_TRIALS} trials"),
    }];
    out.push(CheckResult::max_err("reservoir.capacity", over_capacity as f64, 0.0, "insertions over capacity"));

    // replay draws from a full buffer are uniform over slots
    let mut buf = ReplayBuffer::new(50);
    for item in 0..50 {
        buf.reservoir_insert(
            BufferEntry {
                image: tiny.clone(),
                logits: Vec::new(),
                label: item,
            },
            &mut rng,
        );
    }
    let mut draws = vec![0usize; 50];
    let rounds = 20_000;
    for _ in 0..rounds {
        for i in buf.sample_indices(10, &mut rng).expect("non-empty") {
            draws[i] += 1;
        }
    }
    let (stat, p) = reservoir_chi_square(&draws, rounds, 10);
    out.push(CheckResult {
        id: "reservoir.uniform_replay".into(),
        observed: p,
        tolerance: 0.01,
        lower_bound: true,
        detail: format!("chi2 = {stat:.1}, 10 of 50 per draw, {rounds} draws"),
    });
    out
}

// ---------------------------------------------------------------- losses

fn losses_suite() -> Vec<CheckResult> {
    let mut rng = Rng::new(0x1055);
    let mut out = Vec::new();

    let z = Matrix::zeros(3, 2);
    let base = base_loss(&z, &[0, 1, 1], Some((&z, &[1, 0, 0]))).expect("base").value;
    out.push(CheckResult::max_err("losses.base_uniform", (base - 2.0 * 2f64.ln()).abs(), 1e-15, "ln 2 + ln 2"));

    let u = Matrix::zeros(5, TransformSpec::NUM_PROXY_LABELS);
    let pt = pt_loss(&u, &[0, 3, 7, 11, 15]).expect("pt").0;
    out.push(CheckResult::max_err("losses.pt_uniform", (pt - 16f64.ln()).abs(), 1e-15, "ln 16"));

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.below(20);
        let emb = unit_rows(n, 6, &mut rng);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
        labels[1] = labels[0];
        let tau = rng.uniform_range(0.05, 1.0);
        let batch = ContrastiveBatch {
            embeddings: emb.clone(),
            labels: labels.clone(),
            view_of: (0..n).collect(),
        };
        let fast = scl_loss(&batch, tau).expect("scl").loss;
        let slow = scl_loss_reference(&emb, &labels, tau);
        worst = worst.max((fast - slow).abs() / slow.abs().max(1.0));
    }
    out.push(CheckResult::max_err("losses.scl_reference", worst, 1e-12, "vs double loop, 50 batches"));

    let o = random_matrix(5, 4, 2.0, &mut rng);
    let same = EnsembleTargets {
        targets: o.clone(),
        omega: 0.1,
        gamma: 0.1,
    };
    out.push(CheckResult::max_err(
        "losses.ckd_zero_at_target",
        ckd_loss(&o, &same).expect("ckd").0,
        0.0,
        "",
    ));

    // one full step: reported total equals the weighted sum of its terms
    let f = GradFixture::new(0x1056);
    let replay: Vec<&BufferEntry> = f.replay.iter().collect();
    let obj = step_objective(&f.params, &f.new, &replay, &f.hp, AblationConfig::FULL, &mut Rng::new(3), 0)
        .expect("objective");
    let l = obj.losses;
    let sum = l.base + f.hp.lambda1 * l.ckd + f.hp.lambda2 * (l.pt + l.scl);
    // the contrastive term sums over positives unnormalized, so it may be negative
    let terms_finite = [l.base, l.ckd, l.pt].iter().all(|v| *v > 0.0) && l.scl.is_finite() && l.scl != 0.0;
    out.push(CheckResult::max_err(
        "losses.step_total_is_term_sum",
        if terms_finite { (l.total - sum).abs() } else { f64::INFINITY },
        1e-10,
        "",
    ));
    out
}
