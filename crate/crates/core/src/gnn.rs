//! End-to-end trainable synchronization pipeline.
//!
//! A directed-graph embedding (matrix polynomials of the row-normalized
//! source/target adjacencies applied to MLP-transformed features) feeds a
//! per-set inner-product head with a sigmoid rescale to `(0, 2π)`, followed
//! by a fixed number of projected gradient steps on the Hermitian offset
//! embedding. The whole forward pass lives on an autodiff tape and trains
//! against the upset and/or cycle losses with SGD.
//!
//! Architecture defaults: 2 aggregation hops with the identity coefficient
//! fixed at 1 and trainable hop weights; a 2-layer bias-free MLP; per-set
//! embedding width `d = 8` split evenly between source and target halves;
//! 5 projected gradient steps with fixed unit step weights.

use crate::angle::{mod2pi, AngleMatrix};
use crate::autodiff::{sgd_step, Tape, Var};
use crate::graph::{build_hermitian, row_normalize, NormalizedPair, OffsetGraph};
use crate::losses::{assign_edges, cycle_loss_var, residual, upset_loss_var};
use crate::spectral::{power_update_column, spectral_rn_sync};
use crate::synth::stream_rng;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayD, Ix2};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Per-set embedding width (the head reads `d` columns per angle set).
pub const DEFAULT_EMBED_DIM: usize = 8;
/// Hidden width of the bias-free MLP.
pub const DEFAULT_HIDDEN_DIM: usize = 8;
/// Self-loop weight for row normalization.
pub const DEFAULT_TAU: f64 = 0.5;

/// Weights of the directed embedding: hop coefficients (identity fixed at 1)
/// and the two-layer MLPs for the source and target sides.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub w_s0: Array2<f64>,
    pub w_s1: Array2<f64>,
    pub w_t0: Array2<f64>,
    pub w_t1: Array2<f64>,
    pub hop_s1: f64,
    pub hop_s2: f64,
    pub hop_t1: f64,
    pub hop_t2: f64,
}

impl EmbeddingParams {
    pub fn d_in(&self) -> usize {
        self.w_s0.nrows()
    }

    /// Width of each half of the concatenated embedding.
    pub fn d_out(&self) -> usize {
        self.w_s1.ncols()
    }
}

/// Head weights: one `d`-vector and bias per angle set.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub a: Vec<Array1<f64>>,
    pub b: Vec<f64>,
}

impl HeadParams {
    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn d(&self) -> usize {
        self.a[0].len()
    }
}

/// Projected-gradient-step schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    /// Number of steps Γ.
    pub steps: usize,
    /// Per-step nonnegative multipliers on the current iterate.
    pub alphas: Vec<f64>,
    /// Learn the step multipliers instead of keeping them fixed.
    pub trainable_alphas: bool,
    /// Ablation: mask the Hermitian embedding per assigned set (from the
    /// initial angles) instead of sharing one matrix across sets.
    pub per_set_h: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            steps: 5,
            alphas: vec![1.0; 5],
            trainable_alphas: false,
            per_set_h: false,
        }
    }
}

impl PgdConfig {
    pub fn with_steps(steps: usize) -> Self {
        PgdConfig {
            steps,
            alphas: vec![1.0; steps],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.len() != self.steps {
            return Err(Error::InvalidConfig(format!(
                "{} step multipliers for {} steps",
                self.alphas.len(),
                self.steps
            )));
        }
        if self.alphas.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::InvalidConfig("step multipliers must be >= 0".into()));
        }
        Ok(())
    }
}

/// Training loss variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Upset,
    Cycle,
    /// `upset + cycle`.
    Sum,
    /// `cycle + τ · upset`.
    Weighted(f64),
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Upset => write!(f, "upset"),
            LossKind::Cycle => write!(f, "cycle"),
            LossKind::Sum => write!(f, "sum"),
            LossKind::Weighted(tau) => write!(f, "weighted{tau}"),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "upset" => Ok(LossKind::Upset),
            "cycle" => Ok(LossKind::Cycle),
            "sum" => Ok(LossKind::Sum),
            other => {
                if let Some(tau) = other.strip_prefix("weighted") {
                    let tau = tau.trim_start_matches([':', '=']);
                    let tau: f64 = tau.parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad weighted loss value '{other}'"))
                    })?;
                    if !(0.0..=10.0).contains(&tau) {
                        return Err(Error::InvalidConfig(format!("tau {tau} out of range")));
                    }
                    Ok(LossKind::Weighted(tau))
                } else {
                    Err(Error::InvalidConfig(format!(
                        "unknown loss '{other}' (expected upset|cycle|sum|weighted:<tau>)"
                    )))
                }
            }
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            weight_decay: 5e-4,
            max_epochs: 1000,
            patience: 200,
            loss: LossKind::Upset,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("lr must be > 0, weight decay >= 0".into()));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(
                "need max_epochs >= 1 and patience <= max_epochs".into(),
            ));
        }
        Ok(())
    }
}

/// RNG stream id for parameter initialization (offset past the data streams).
const PARAM_STREAM: u64 = 101;

/// Draw all trainable weights: matrices and head vectors uniform in
/// `[−1/√fan_in, +1/√fan_in]`, hop coefficients starting at 1.
pub fn parameter_init(
    seed: u64,
    d_in: usize,
    k: usize,
    d: usize,
    d_hidden: usize,
) -> (EmbeddingParams, HeadParams) {
    assert!((k * d).is_multiple_of(2), "embedding width k*d must split into two halves");
    let d_out = k * d / 2;
    let mut rng = stream_rng(seed, PARAM_STREAM);
    let mut draw = |rows: usize, cols: usize, fan_in: usize| -> Array2<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
    };
    let w_s0 = draw(d_in, d_hidden, d_in);
    let w_s1 = draw(d_hidden, d_out, d_hidden);
    let w_t0 = draw(d_in, d_hidden, d_in);
    let w_t1 = draw(d_hidden, d_out, d_hidden);
    let bound = 1.0 / (d as f64).sqrt();
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for _ in 0..k {
        a.push(Array1::from_shape_fn(d, |_| {
            (rng.gen::<f64>() * 2.0 - 1.0) * bound
        }));
        b.push((rng.gen::<f64>() * 2.0 - 1.0) * bound);
    }
    (
        EmbeddingParams {
            w_s0,
            w_s1,
            w_t0,
            w_t1,
            hop_s1: 1.0,
            hop_s2: 1.0,
            hop_t1: 1.0,
            hop_t2: 1.0,
        },
        HeadParams { a, b },
    )
}

/// Plain (value-only) directed embedding:
/// `Z = [ (I + a₁A_s + a₂A_s²)·relu(X·W_s0)·W_s1  |  target analogue ]`.
pub fn embed(norm: &NormalizedPair, x: &Array2<f64>, p: &EmbeddingParams) -> Array2<f64> {
    let side = |adj: &Array2<f64>, w0: &Array2<f64>, w1: &Array2<f64>, h1: f64, h2: f64| {
        let q = x.dot(w0).mapv(|v| v.max(0.0)).dot(w1);
        let aq = adj.dot(&q);
        let aaq = adj.dot(&aq);
        q + &(aq * h1) + &(aaq * h2)
    };
    let zs = side(&norm.source, &p.w_s0, &p.w_s1, p.hop_s1, p.hop_s2);
    let zt = side(&norm.target, &p.w_t0, &p.w_t1, p.hop_t1, p.hop_t2);
    ndarray::concatenate(ndarray::Axis(1), &[zs.view(), zt.view()]).unwrap()
}

/// Plain initial angles: `2π · sigmoid(Z_slice · a⁽ˡ⁾ + b_l)` per set, with
/// set `l` reading columns `l·d .. (l+1)·d` of the concatenated embedding.
pub fn initial_angles(z: &Array2<f64>, head: &HeadParams) -> Result<AngleMatrix> {
    let k = head.k();
    let d = head.d();
    if z.ncols() != k * d {
        return Err(Error::ShapeMismatch(format!(
            "embedding width {} != k*d = {}",
            z.ncols(),
            k * d
        )));
    }
    let n = z.nrows();
    let mut out = Array2::zeros((n, k));
    for l in 0..k {
        for i in 0..n {
            let mut dot = head.b[l];
            for c in 0..d {
                dot += z[(i, l * d + c)] * head.a[l][c];
            }
            let s = if dot >= 0.0 {
                1.0 / (1.0 + (-dot).exp())
            } else {
                let e = dot.exp();
                e / (1.0 + e)
            };
            out[(i, l)] = TAU * s;
        }
    }
    AngleMatrix::new(out)
}

/// Plain projected gradient steps: per set, Γ iterations of
/// `y ← angle(α_γ e^{ιy} + H e^{ιy})`, wrapped to `[0, 2π)` at the end.
pub fn projected_gradient(
    r0: &AngleMatrix,
    h: &Array2<Complex64>,
    cfg: &PgdConfig,
) -> Result<AngleMatrix> {
    cfg.validate()?;
    if r0.nrows() != h.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} angle rows vs {} matrix rows",
            r0.nrows(),
            h.nrows()
        )));
    }
    if cfg.steps == 0 {
        return Ok(r0.clone());
    }
    let k = r0.ncols();
    let mut out = Array2::zeros((r0.nrows(), k));
    for l in 0..k {
        let mut y = r0.column(l);
        for gamma in 0..cfg.steps {
            power_update_column(h, &mut y, cfg.alphas[gamma]);
        }
        for (i, &v) in y.iter().enumerate() {
            out[(i, l)] = mod2pi(v);
        }
    }
    Ok(AngleMatrix::wrap(out))
}

/// Everything the tape-based forward pass needs besides the parameters.
struct ForwardInputs {
    a_s: Array2<f64>,
    a_s2: Array2<f64>,
    a_t: Array2<f64>,
    a_t2: Array2<f64>,
    eye: Array2<f64>,
    x: Array2<f64>,
    h_re: Array2<f64>,
    h_im: Array2<f64>,
}

impl ForwardInputs {
    fn new(g: &OffsetGraph, x: Array2<f64>) -> Result<Self> {
        let norm = row_normalize(g, DEFAULT_TAU)?;
        let h = build_hermitian(g);
        let (h_re, h_im) = h.split_re_im();
        Ok(ForwardInputs {
            a_s2: norm.source.dot(&norm.source),
            a_t2: norm.target.dot(&norm.target),
            a_s: norm.source,
            a_t: norm.target,
            eye: Array2::eye(g.n()),
            x,
            h_re,
            h_im,
        })
    }
}

/// Parameter handles on one epoch's tape.
struct TapeParams<'t> {
    w_s0: Var<'t>,
    w_s1: Var<'t>,
    w_t0: Var<'t>,
    w_t1: Var<'t>,
    hops: [Var<'t>; 4],
    head_a: Vec<Var<'t>>,
    head_b: Vec<Var<'t>>,
    alphas: Vec<Var<'t>>,
}

fn insert_params<'t>(
    tape: &'t Tape,
    p: &EmbeddingParams,
    head: &HeadParams,
    pgd: &PgdConfig,
) -> TapeParams<'t> {
    let mat = |m: &Array2<f64>| m.clone().into_dyn();
    TapeParams {
        w_s0: tape.param(mat(&p.w_s0)),
        w_s1: tape.param(mat(&p.w_s1)),
        w_t0: tape.param(mat(&p.w_t0)),
        w_t1: tape.param(mat(&p.w_t1)),
        hops: [
            tape.scalar_param(p.hop_s1),
            tape.scalar_param(p.hop_s2),
            tape.scalar_param(p.hop_t1),
            tape.scalar_param(p.hop_t2),
        ],
        head_a: head
            .a
            .iter()
            .map(|a| tape.param(a.clone().insert_axis(ndarray::Axis(1)).into_dyn()))
            .collect(),
        head_b: head.b.iter().map(|&b| tape.scalar_param(b)).collect(),
        alphas: pgd
            .alphas
            .iter()
            .map(|&a| {
                if pgd.trainable_alphas {
                    tape.scalar_param(a)
                } else {
                    tape.scalar(a)
                }
            })
            .collect(),
    }
}

/// Tape forward pass through embedding, head and projected gradient steps.
/// Returns `(r0, r)`.
fn forward_on_tape<'t>(
    tape: &'t Tape,
    inputs: &ForwardInputs,
    params: &TapeParams<'t>,
    k: usize,
    d: usize,
    pgd: &PgdConfig,
    g: &OffsetGraph,
) -> (Var<'t>, Var<'t>) {
    let eye = tape.leaf(inputs.eye.clone().into_dyn());
    let a_s = tape.leaf(inputs.a_s.clone().into_dyn());
    let a_s2 = tape.leaf(inputs.a_s2.clone().into_dyn());
    let a_t = tape.leaf(inputs.a_t.clone().into_dyn());
    let a_t2 = tape.leaf(inputs.a_t2.clone().into_dyn());
    let x = tape.leaf(inputs.x.clone().into_dyn());

    let side = |adj: Var<'t>, adj2: Var<'t>, w0: Var<'t>, w1: Var<'t>, h1: Var<'t>, h2: Var<'t>| {
        let poly = eye.add(adj.mul(h1)).add(adj2.mul(h2));
        poly.matmul(x.matmul(w0).relu().matmul(w1))
    };
    let z_s = side(a_s, a_s2, params.w_s0, params.w_s1, params.hops[0], params.hops[1]);
    let z_t = side(a_t, a_t2, params.w_t0, params.w_t1, params.hops[2], params.hops[3]);
    let z = z_s.concat_cols(z_t);

    // per-set head: 2π sigmoid(Z_slice a + b)
    let mut r0_cols = Vec::with_capacity(k);
    for l in 0..k {
        let slice = z.slice_cols(l * d, (l + 1) * d);
        let raw = slice.matmul(params.head_a[l]).add(params.head_b[l]);
        r0_cols.push(raw.sigmoid().scalar_mul(TAU));
    }
    let mut r0 = r0_cols[0];
    for col in &r0_cols[1..] {
        r0 = r0.concat_cols(*col);
    }

    if pgd.steps == 0 {
        return (r0, r0);
    }

    // optional ablation: per-set Hermitian masks from the initial angles
    let masks: Option<Vec<Array2<f64>>> = if pgd.per_set_h {
        let r0_values = tape.with_value(r0, |v| {
            AngleMatrix::wrap(v.to_owned().into_dimensionality::<Ix2>().unwrap())
        });
        let res = residual(g, &r0_values).expect("residual on forward values");
        let assignment = assign_edges(g, &res);
        let n = g.n();
        Some(
            (0..k)
                .map(|l| {
                    let mut m = Array2::zeros((n, n));
                    for e in g.edges() {
                        if assignment.get(e.i, e.j) == Some(l as u32 + 1) {
                            m[(e.i, e.j)] = 1.0;
                            m[(e.j, e.i)] = 1.0;
                        }
                    }
                    m
                })
                .collect(),
        )
    } else {
        None
    };

    let h_re_full = tape.leaf(inputs.h_re.clone().into_dyn());
    let h_im_full = tape.leaf(inputs.h_im.clone().into_dyn());

    let mut r_cols = Vec::with_capacity(k);
    for l in 0..k {
        let (h_re, h_im) = match &masks {
            Some(ms) => (
                tape.leaf((&inputs.h_re * &ms[l]).into_dyn()),
                tape.leaf((&inputs.h_im * &ms[l]).into_dyn()),
            ),
            None => (h_re_full, h_im_full),
        };
        let mut y = r0.slice_cols(l, l + 1);
        for gamma in 0..pgd.steps {
            let c = y.cos();
            let s = y.sin();
            let re = c.mul(params.alphas[gamma]).add(h_re.matmul(c)).sub(h_im.matmul(s));
            let im = s.mul(params.alphas[gamma]).add(h_im.matmul(c)).add(h_re.matmul(s));
            y = im.atan2(re);
        }
        r_cols.push(y.mod2pi());
    }
    let mut r = r_cols[0];
    for col in &r_cols[1..] {
        r = r.concat_cols(*col);
    }
    (r0, r)
}

fn loss_on_tape<'t>(
    tape: &'t Tape,
    g: &OffsetGraph,
    r: Var<'t>,
    kind: LossKind,
) -> Result<Var<'t>> {
    Ok(match kind {
        LossKind::Upset => upset_loss_var(tape, g, r)?,
        LossKind::Cycle => cycle_loss_var(tape, g, r)?,
        LossKind::Sum => upset_loss_var(tape, g, r)?.add(cycle_loss_var(tape, g, r)?),
        LossKind::Weighted(tau) => {
            cycle_loss_var(tape, g, r)?.add(upset_loss_var(tape, g, r)?.scalar_mul(tau))
        }
    })
}

/// A trained model with its best-loss outputs and the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embedding: EmbeddingParams,
    pub head: HeadParams,
    pub alphas: Vec<f64>,
    /// Angles produced at the best-loss epoch.
    pub angles: AngleMatrix,
    pub initial_angles: AngleMatrix,
    pub loss_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Train end-to-end on one graph. `features` defaults to the row-normalized
/// spectral estimate (so `d_in = k`).
pub fn train(
    g: &OffsetGraph,
    features: Option<&AngleMatrix>,
    k: usize,
    tcfg: &TrainConfig,
    pcfg: &PgdConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    pcfg.validate()?;
    if g.edge_count() == 0 {
        return Err(Error::InvalidGraph("cannot train on an edgeless graph".into()));
    }
    let x: Array2<f64> = match features {
        Some(f) => {
            if f.nrows() != g.n() {
                return Err(Error::ShapeMismatch(format!(
                    "feature rows {} != node count {}",
                    f.nrows(),
                    g.n()
                )));
            }
            f.as_array().clone()
        }
        None => spectral_rn_sync(g, k)?.into_inner(),
    };
    let inputs = ForwardInputs::new(g, x)?;
    let d = DEFAULT_EMBED_DIM;
    let (mut emb, mut head) = parameter_init(tcfg.seed, inputs.x.ncols(), k, d, DEFAULT_HIDDEN_DIM);
    let mut alphas = pcfg.alphas.clone();

    let mut best: Option<TrainOutcome> = None;
    let mut trace = Vec::with_capacity(tcfg.max_epochs);
    let mut since_best = 0usize;

    for epoch in 0..tcfg.max_epochs {
        let tape = Tape::new();
        let pcfg_epoch = PgdConfig {
            alphas: alphas.clone(),
            ..pcfg.clone()
        };
        let params = insert_params(&tape, &emb, &head, &pcfg_epoch);
        let (r0, r) = forward_on_tape(&tape, &inputs, &params, k, d, &pcfg_epoch, g);
        let loss = loss_on_tape(&tape, g, r, tcfg.loss)?;
        let loss_value = tape.scalar_value(loss);
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: loss_value,
            });
        }
        trace.push(loss_value);

        let improved = best.as_ref().is_none_or(|b| loss_value < b.best_loss);
        if improved {
            let to_angle = |v: Var<'_>| {
                tape.with_value(v, |arr| {
                    AngleMatrix::wrap(arr.to_owned().into_dimensionality::<Ix2>().unwrap())
                })
            };
            best = Some(TrainOutcome {
                embedding: emb.clone(),
                head: head.clone(),
                alphas: alphas.clone(),
                angles: to_angle(r),
                initial_angles: to_angle(r0),
                loss_trace: Vec::new(),
                best_epoch: epoch,
                best_loss: loss_value,
            });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.patience {
                break;
            }
        }

        let grads = tape.backward(loss)?;
        let step_mat = |param: &mut Array2<f64>, var: Var<'_>| {
            if let Some(grad) = grads.get(var) {
                let mut dynp = param.clone().into_dyn();
                sgd_step(&mut dynp, grad, tcfg.lr, tcfg.weight_decay);
                *param = dynp.into_dimensionality::<Ix2>().unwrap();
            }
        };
        step_mat(&mut emb.w_s0, params.w_s0);
        step_mat(&mut emb.w_s1, params.w_s1);
        step_mat(&mut emb.w_t0, params.w_t0);
        step_mat(&mut emb.w_t1, params.w_t1);
        let step_scalar = |value: &mut f64, var: Var<'_>| {
            if let Some(grad) = grads.get(var) {
                let g0 = *grad.iter().next().unwrap();
                *value -= tcfg.lr * (g0 + tcfg.weight_decay * *value);
            }
        };
        step_scalar(&mut emb.hop_s1, params.hops[0]);
        step_scalar(&mut emb.hop_s2, params.hops[1]);
        step_scalar(&mut emb.hop_t1, params.hops[2]);
        step_scalar(&mut emb.hop_t2, params.hops[3]);
        for l in 0..k {
            if let Some(grad) = grads.get(params.head_a[l]) {
                let flat: Vec<f64> = grad.iter().cloned().collect();
                for (c, gv) in flat.iter().enumerate() {
                    head.a[l][c] -= tcfg.lr * (gv + tcfg.weight_decay * head.a[l][c]);
                }
            }
            let mut b = head.b[l];
            step_scalar(&mut b, params.head_b[l]);
            head.b[l] = b;
        }
        if pcfg.trainable_alphas {
            for (gamma, alpha) in alphas.iter_mut().enumerate() {
                let mut a = *alpha;
                step_scalar(&mut a, params.alphas[gamma]);
                *alpha = a.max(0.0); // projection back to the feasible range
            }
        }
    }

    let mut outcome = best.expect("at least one epoch ran");
    outcome.loss_trace = trace;
    Ok(outcome)
}

/// Gradients of one forward loss with respect to every trainable tensor.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub w_s0: Array2<f64>,
    pub w_s1: Array2<f64>,
    pub w_t0: Array2<f64>,
    pub w_t1: Array2<f64>,
    pub hops: [f64; 4],
    pub head_a: Vec<Array1<f64>>,
    pub head_b: Vec<f64>,
}

/// Loss of one forward pass for fixed parameters (no training step).
pub fn forward_loss(
    g: &OffsetGraph,
    features: &Array2<f64>,
    emb: &EmbeddingParams,
    head: &HeadParams,
    pcfg: &PgdConfig,
    kind: LossKind,
) -> Result<f64> {
    pcfg.validate()?;
    let inputs = ForwardInputs::new(g, features.clone())?;
    let tape = Tape::new();
    let params = insert_params(&tape, emb, head, pcfg);
    let (_, r) = forward_on_tape(&tape, &inputs, &params, head.k(), head.d(), pcfg, g);
    let loss = loss_on_tape(&tape, g, r, kind)?;
    Ok(tape.scalar_value(loss))
}

/// Loss and parameter gradients of one forward pass.
pub fn forward_gradients(
    g: &OffsetGraph,
    features: &Array2<f64>,
    emb: &EmbeddingParams,
    head: &HeadParams,
    pcfg: &PgdConfig,
    kind: LossKind,
) -> Result<(f64, ParamGradients)> {
    pcfg.validate()?;
    let inputs = ForwardInputs::new(g, features.clone())?;
    let tape = Tape::new();
    let params = insert_params(&tape, emb, head, pcfg);
    let (_, r) = forward_on_tape(&tape, &inputs, &params, head.k(), head.d(), pcfg, g);
    let loss = loss_on_tape(&tape, g, r, kind)?;
    let value = tape.scalar_value(loss);
    let grads = tape.backward(loss)?;
    let mat = |v: Var<'_>, shape: (usize, usize)| -> Array2<f64> {
        match grads.get(v) {
            Some(g) => g.clone().into_dimensionality::<Ix2>().unwrap(),
            None => Array2::zeros(shape),
        }
    };
    let scalar = |v: Var<'_>| grads.get(v).map_or(0.0, |g| *g.iter().next().unwrap());
    let k = head.k();
    let gradients = ParamGradients {
        w_s0: mat(params.w_s0, emb.w_s0.dim()),
        w_s1: mat(params.w_s1, emb.w_s1.dim()),
        w_t0: mat(params.w_t0, emb.w_t0.dim()),
        w_t1: mat(params.w_t1, emb.w_t1.dim()),
        hops: [
            scalar(params.hops[0]),
            scalar(params.hops[1]),
            scalar(params.hops[2]),
            scalar(params.hops[3]),
        ],
        head_a: (0..k)
            .map(|l| {
                grads
                    .get(params.head_a[l])
                    .map(|g| Array1::from_iter(g.iter().cloned()))
                    .unwrap_or_else(|| Array1::zeros(head.d()))
            })
            .collect(),
        head_b: (0..k).map(|l| scalar(params.head_b[l])).collect(),
    };
    Ok((value, gradients))
}

/// Evaluate the initial angles for given parameters and inputs without a
/// tape (used by the stability check and post-hoc inspection).
pub fn initial_angles_for(
    norm: &NormalizedPair,
    x: &Array2<f64>,
    emb: &EmbeddingParams,
    head: &HeadParams,
) -> Result<AngleMatrix> {
    initial_angles(&embed(norm, x, emb), head)
}

/// Perturbation bound on the initial angles.
///
/// For two inputs with row-normalized adjacencies `(A_s, A_t)` and
/// `(Â_s, Â_t)` and features `X`, `X̂`, computes the realized Frobenius
/// deviations `ε`, the constants
/// `B_s = 2π‖(a₁I + a₂(A_s+Â_s))·relu(X W_s0) W_s1‖_F` (likewise `B_t`) and
/// `B_f = 2π(‖I + a₁Â_s + a₂Â_s²‖_F‖W_s1‖_F‖W_s0‖_F + target analogue)`,
/// and returns `(B_s ε_s + B_t ε_t + B_f ε_f, ‖r⁰ − r̂⁰‖_F)`.
#[allow(clippy::too_many_arguments)]
pub fn stability_bound(
    emb: &EmbeddingParams,
    head: &HeadParams,
    a_s: &Array2<f64>,
    a_s_hat: &Array2<f64>,
    a_t: &Array2<f64>,
    a_t_hat: &Array2<f64>,
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
) -> Result<(f64, f64)> {
    let shapes_match = a_s.dim() == a_s_hat.dim()
        && a_t.dim() == a_t_hat.dim()
        && x.dim() == x_hat.dim()
        && a_s.nrows() == x.nrows();
    if !shapes_match {
        return Err(Error::ShapeMismatch("stability inputs disagree".into()));
    }
    let fro = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();

    let eps_s = fro(&(a_s - a_s_hat));
    let eps_t = fro(&(a_t - a_t_hat));
    let eps_f = fro(&(x - x_hat));

    let n = a_s.nrows();
    let eye = Array2::<f64>::eye(n);

    let b_side = |adj: &Array2<f64>, adj_hat: &Array2<f64>, w0: &Array2<f64>, w1: &Array2<f64>, h1: f64, h2: f64| {
        let inner = &eye * h1 + &((adj + adj_hat) * h2);
        let m = inner.dot(&x.dot(w0).mapv(|v| v.max(0.0)).dot(w1));
        TAU * fro(&m)
    };
    let b_s = b_side(a_s, a_s_hat, &emb.w_s0, &emb.w_s1, emb.hop_s1, emb.hop_s2);
    let b_t = b_side(a_t, a_t_hat, &emb.w_t0, &emb.w_t1, emb.hop_t1, emb.hop_t2);

    let poly_norm = |adj_hat: &Array2<f64>, h1: f64, h2: f64| {
        let m = &eye + &(adj_hat * h1) + &(adj_hat.dot(adj_hat) * h2);
        fro(&m)
    };
    let b_f = TAU
        * (poly_norm(a_s_hat, emb.hop_s1, emb.hop_s2) * fro(&emb.w_s1) * fro(&emb.w_s0)
            + poly_norm(a_t_hat, emb.hop_t1, emb.hop_t2) * fro(&emb.w_t1) * fro(&emb.w_t0));

    let bound = b_s * eps_s + b_t * eps_t + b_f * eps_f;

    let norm_a = NormalizedPair {
        source: a_s.clone(),
        target: a_t.clone(),
        tau: DEFAULT_TAU,
    };
    let norm_b = NormalizedPair {
        source: a_s_hat.clone(),
        target: a_t_hat.clone(),
        tau: DEFAULT_TAU,
    };
    let r0 = initial_angles_for(&norm_a, x, emb, head)?;
    let r0_hat = initial_angles_for(&norm_b, x_hat, emb, head)?;
    let lhs = fro(&(r0.as_array() - r0_hat.as_array()));
    Ok((bound, lhs))
}

// ---------------------------------------------------------------------------
// Checkpoints: named tensors, text header + little-endian f64 payload.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "angsync-checkpoint v1";

/// Serialize the trained parameters.
pub fn save_checkpoint(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let mat = |m: &Array2<f64>| (vec![m.nrows(), m.ncols()], m.iter().cloned().collect());
    let (shape, data) = mat(&outcome.embedding.w_s0);
    tensors.push(("w_s0".into(), shape, data));
    let (shape, data) = mat(&outcome.embedding.w_s1);
    tensors.push(("w_s1".into(), shape, data));
    let (shape, data) = mat(&outcome.embedding.w_t0);
    tensors.push(("w_t0".into(), shape, data));
    let (shape, data) = mat(&outcome.embedding.w_t1);
    tensors.push(("w_t1".into(), shape, data));
    tensors.push((
        "hops".into(),
        vec![4],
        vec![
            outcome.embedding.hop_s1,
            outcome.embedding.hop_s2,
            outcome.embedding.hop_t1,
            outcome.embedding.hop_t2,
        ],
    ));
    for (l, a) in outcome.head.a.iter().enumerate() {
        tensors.push((format!("head_a_{l}"), vec![a.len()], a.to_vec()));
    }
    tensors.push(("head_b".into(), vec![outcome.head.b.len()], outcome.head.b.clone()));
    tensors.push(("alphas".into(), vec![outcome.alphas.len()], outcome.alphas.clone()));

    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "tensors {}", tensors.len())?;
    for (name, shape, _) in &tensors {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{name} {} {}", shape.len(), dims.join(" "))?;
    }
    writeln!(w, "data")?;
    for (_, _, data) in &tensors {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Named tensors as stored in a checkpoint: `(name, shape, values)`.
pub type NamedTensors = Vec<(String, Vec<usize>, ArrayD<f64>)>;

/// Raw named tensors from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<NamedTensors> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut read_line = |reader: &mut BufReader<std::fs::File>, line: &mut String| -> Result<()> {
        line.clear();
        line_no += 1;
        reader.read_line(line)?;
        Ok(())
    };
    let parse_err = |line: usize, msg: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    };

    read_line(&mut reader, &mut line)?;
    if line.trim() != CHECKPOINT_MAGIC {
        return Err(parse_err(1, "bad checkpoint magic"));
    }
    read_line(&mut reader, &mut line)?;
    let count: usize = line
        .trim()
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(2, "expected 'tensors <count>'"))?;
    let mut specs = Vec::with_capacity(count);
    for t in 0..count {
        read_line(&mut reader, &mut line)?;
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| parse_err(3 + t, "missing tensor name"))?
            .to_string();
        let ndim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(3 + t, "missing rank"))?;
        let dims: Vec<usize> = parts.filter_map(|s| s.parse().ok()).collect();
        if dims.len() != ndim {
            return Err(parse_err(3 + t, "rank does not match dimension count"));
        }
        specs.push((name, dims));
    }
    read_line(&mut reader, &mut line)?;
    if line.trim() != "data" {
        return Err(parse_err(3 + count, "expected 'data' delimiter"));
    }
    let mut out = Vec::with_capacity(count);
    for (name, dims) in specs {
        let len: usize = dims.iter().product();
        let mut raw = vec![0u8; len * 8];
        reader.read_exact(&mut raw)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), values)
            .map_err(|e| Error::Numerical(format!("bad tensor shape in checkpoint: {e}")))?;
        out.push((name, dims, arr));
    }
    Ok(out)
}
