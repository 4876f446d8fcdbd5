//! Empirical Rademacher complexity at fixed points.
//!
//! [`estimate`] draws sign vectors and, for each, maximizes
//! `(1/m)·Σ_i ε_i f(x_i)` over the class by projected gradient ascent from
//! several random starts. The inner maximization is nonconvex, so each trial
//! value is attained by a concrete network and the mean is a stochastic lower
//! bound on the true complexity. [`exact_rademacher_finite`] computes the
//! complexity of an explicit finite class by enumerating every sign vector.
//!
//! For classes with an output layer `u` (`‖u‖ ≤ b`) the inner objective is
//! `uᵀg` for a vector `g` that does not depend on `u`, so `u` is set to its
//! maximizer `b·g/‖g‖` and only the hidden weights are iterated. Dense hidden
//! layers act on the points only through the span of the points, so they are
//! optimized as `W = A·Qᵀ` with `Q` an orthonormal basis of that span; both
//! norms of `W` equal those of `A`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius_norm, norm, spectral_norm_default, Matrix};
use crate::networks::{conform_matrix, ConvNet, DeepPowerNet, DenseNet, Network, PatchSet, Pooling};
use crate::rng::{self, Rng};
use crate::shattering::NormKind;

pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 8;
pub const DEFAULT_STEPS: usize = 500;
pub const DEFAULT_STEP_SIZE: f64 = 0.05;
pub const DEFAULT_DECAY: f64 = 0.995;
/// Steps without improvement before a restart stops early.
pub const DEFAULT_PATIENCE: usize = 50;
/// Largest `m` for which sign vectors may be enumerated.
pub const EXACT_SIGNS_MAX_M: usize = 16;
/// Default largest `m` accepted by [`exact_rademacher_finite`].
pub const FINITE_ENUM_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `x ↦ uᵀσ(Wx)`.
    Dense,
    /// `x ↦ uᵀσ(Wx)` with `W` conforming to a patch set.
    ConvLinear,
    /// `x ↦ ρ(σ(Wx))` with `W` conforming to a patch set.
    ConvPool,
    /// `x ↦ uᵀ f_L(x)` with `f_j = (W^j f_{j−1})^{∘k}`.
    DeepPower,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('_', "-").as_str() {
            "dense" => Ok(Family::Dense),
            "conv-linear" => Ok(Family::ConvLinear),
            "conv-pool" => Ok(Family::ConvPool),
            "deep-power" => Ok(Family::DeepPower),
            other => Err(Error::InvalidParameter(format!(
                "unknown family {other:?}; expected dense, conv-linear, conv-pool or deep-power"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub family: Family,
    pub sigma: Activation,
    /// Cap on `‖u‖`.
    pub b: f64,
    /// Cap on the hidden-layer norm (every layer for deep power nets).
    #[serde(rename = "B")]
    pub big_b: f64,
    pub norm: NormKind,
    /// Hidden width; ignored by the convolutional families.
    pub width: usize,
    pub patches: Option<PatchSet>,
    /// Pooling of the `ConvPool` family (`Max` or `Average`).
    pub pooling: Pooling,
    pub k: u32,
    pub depth: usize,
}

impl HypothesisSpec {
    pub fn dense(sigma: Activation, b: f64, big_b: f64, norm: NormKind, width: usize) -> Self {
        HypothesisSpec {
            family: Family::Dense,
            sigma,
            b,
            big_b,
            norm,
            width,
            patches: None,
            pooling: Pooling::Max,
            k: 1,
            depth: 1,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.big_b > 0.0) || !self.big_b.is_finite() {
            return Err(Error::InvalidParameter(format!("B must be positive, got {}", self.big_b)));
        }
        if self.family != Family::ConvPool && (!(self.b > 0.0) || !self.b.is_finite()) {
            return Err(Error::InvalidParameter(format!("b must be positive, got {}", self.b)));
        }
        match self.family {
            Family::Dense | Family::DeepPower => {
                if self.width == 0 {
                    return Err(Error::InvalidParameter("width must be >= 1".into()));
                }
                if self.family == Family::DeepPower && (self.k == 0 || self.depth == 0) {
                    return Err(Error::InvalidParameter("k and depth must be >= 1".into()));
                }
            }
            Family::ConvLinear | Family::ConvPool => {
                let phi = self
                    .patches
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("convolutional families need a patch set".into()))?;
                if phi.d() != d {
                    return Err(Error::Dimension {
                        context: "patch set input dimension",
                        expected: d,
                        found: phi.d(),
                    });
                }
                if phi.n() == 0 || phi.width() == 0 {
                    return Err(Error::InvalidParameter("patch set is empty".into()));
                }
                if let Pooling::Linear(_) = self.pooling {
                    if self.family == Family::ConvPool {
                        return Err(Error::InvalidParameter(
                            "linear pooling belongs to the conv-linear family".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub trials: usize,
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub decay: f64,
    pub patience: usize,
    pub seed: u64,
    /// Enumerate all `2^m` sign vectors when `m ≤ 16` and `trials ≥ 2^m`.
    pub exact_signs: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            trials: DEFAULT_TRIALS,
            restarts: DEFAULT_RESTARTS,
            steps: DEFAULT_STEPS,
            step_size: DEFAULT_STEP_SIZE,
            decay: DEFAULT_DECAY,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            exact_signs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub restarts_per_trial: usize,
    pub best_trial_values: Vec<f64>,
    pub seed: u64,
    pub signs_enumerated: bool,
    pub abandoned_restarts: usize,
    /// The maximizing network of every trial, in trial order.
    #[serde(skip)]
    pub iterates: Vec<Network>,
}

/// `count` points drawn uniformly from the sphere of radius `radius` in
/// `dim` dimensions; point `i` uses stream `i` of `seed`.
pub fn sphere_points(count: usize, dim: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| rng::sphere_point(&mut rng::stream(seed, i as u64), dim, radius))
        .collect()
}

/// Projects `w` onto `{‖w‖ ≤ cap}` in the given norm. Spectral projection
/// clips singular values.
pub fn project_matrix(w: &Matrix, kind: NormKind, cap: f64) -> Matrix {
    let fro = frobenius_norm(w);
    if fro <= cap {
        return w.clone();
    }
    match kind {
        NormKind::Frobenius => w.scaled(cap / fro),
        NormKind::Spectral => {
            let dm = DMatrix::from_row_slice(w.rows(), w.cols(), w.entries());
            let mut svd = dm.svd(true, true);
            if svd.singular_values.iter().all(|&s| s <= cap) {
                return w.clone();
            }
            for s in svd.singular_values.iter_mut() {
                *s = s.min(cap);
            }
            let clipped = svd.recompose().expect("both factors were computed");
            Matrix::from_fn(w.rows(), w.cols(), |i, j| clipped[(i, j)])
        }
    }
}

/// Rescales `u` into the Euclidean ball of radius `cap`.
pub fn project_vector(u: &[f64], cap: f64) -> Vec<f64> {
    let n = norm(u);
    if n <= cap {
        u.to_vec()
    } else {
        u.iter().map(|x| x * cap / n).collect()
    }
}

/// Rescales filter `w` so that its conforming matrix has norm at most `cap`.
pub fn project_filter(phi: &PatchSet, w: &[f64], kind: NormKind, cap: f64) -> Result<Vec<f64>> {
    let current = filter_norm(phi, w, kind)?;
    if current <= cap {
        Ok(w.to_vec())
    } else {
        Ok(w.iter().map(|x| x * cap / current).collect())
    }
}

fn filter_norm(phi: &PatchSet, w: &[f64], kind: NormKind) -> Result<f64> {
    let c = conform_matrix(phi, w)?;
    match kind {
        NormKind::Spectral => spectral_norm_default(&c),
        NormKind::Frobenius => Ok(frobenius_norm(&c)),
    }
}

/// `E_ε max_f (1/m)Σ_i ε_i f(x_i)` over all `2^m` sign vectors.
pub fn exact_rademacher_finite(points: &[Vec<f64>], nets: &[Network], enum_cap: usize) -> Result<f64> {
    let m = points.len();
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    if nets.is_empty() {
        return Err(Error::InvalidParameter("need at least one network".into()));
    }
    if m > enum_cap || m >= 40 {
        return Err(Error::EnumerationCap { required: m, cap: enum_cap });
    }
    let outputs: Vec<Vec<f64>> = nets
        .iter()
        .map(|net| points.iter().map(|x| net.forward(x)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let total = 1u64 << m;
    let sum: f64 = (0..total)
        .into_par_iter()
        .map(|mask| {
            outputs
                .iter()
                .map(|f| {
                    f.iter()
                        .enumerate()
                        .map(|(i, v)| if (mask >> i) & 1 == 1 { *v } else { -*v })
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(sum / (total as f64 * m as f64))
}

/// Hidden parameters under optimization.
#[derive(Clone, Debug)]
enum Params {
    Dense(Matrix),
    Deep(Vec<Matrix>),
    Filter(Vec<f64>),
}

impl Params {
    fn norm_sq(&self) -> f64 {
        match self {
            Params::Dense(a) => frobenius_norm(a).powi(2),
            Params::Deep(ws) => ws.iter().map(|w| frobenius_norm(w).powi(2)).sum(),
            Params::Filter(w) => dot(w, w),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Params::Dense(a) => a.is_finite(),
            Params::Deep(ws) => ws.iter().all(Matrix::is_finite),
            Params::Filter(w) => w.iter().all(|x| x.is_finite()),
        }
    }

    fn add_scaled(&mut self, other: &Params, t: f64) {
        match (self, other) {
            (Params::Dense(a), Params::Dense(g)) => add_matrix(a, g, t),
            (Params::Deep(ws), Params::Deep(gs)) => ws.iter_mut().zip(gs).for_each(|(w, g)| add_matrix(w, g, t)),
            (Params::Filter(w), Params::Filter(g)) => w.iter_mut().zip(g).for_each(|(a, b)| *a += t * b),
            _ => unreachable!("parameter shapes always match"),
        }
    }
}

fn add_matrix(a: &mut Matrix, g: &Matrix, t: f64) {
    a.entries_mut().iter_mut().zip(g.entries()).for_each(|(x, y)| *x += t * y);
}

/// Points in optimization coordinates plus the lift back to input space.
struct Problem<'a> {
    spec: &'a HypothesisSpec,
    /// Reduced points (dense families) or the original points.
    z: Vec<Vec<f64>>,
    /// Orthonormal basis of the point span, `d×r`; `None` for identity.
    basis: Option<Matrix>,
    d: usize,
}

impl<'a> Problem<'a> {
    fn new(points: &[Vec<f64>], spec: &'a HypothesisSpec) -> Self {
        let d = points[0].len();
        let m = points.len();
        let reduce = matches!(spec.family, Family::Dense | Family::DeepPower) && m < d;
        if !reduce {
            return Problem {
                spec,
                z: points.to_vec(),
                basis: None,
                d,
            };
        }
        let x = DMatrix::from_fn(d, m, |i, j| points[j][i]);
        let svd = x.svd(true, false);
        let u = svd.u.expect("left factor requested");
        let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-12 * top.max(f64::MIN_POSITIVE))
            .collect();
        let keep = if keep.is_empty() { vec![0] } else { keep };
        let basis = Matrix::from_fn(d, keep.len(), |i, k| u[(i, keep[k])]);
        let z = points.iter().map(|p| basis.tr_mul_vec(p).expect("shapes agree")).collect();
        Problem {
            spec,
            z,
            basis: Some(basis),
            d,
        }
    }

    fn m(&self) -> usize {
        self.z.len()
    }

    fn r(&self) -> usize {
        self.z[0].len()
    }

    fn random_params(&self, rng: &mut Rng) -> Result<Params> {
        let spec = self.spec;
        let gaussian_matrix = |rows: usize, cols: usize, rng: &mut Rng| {
            let g = Matrix::from_fn(rows, cols, |_, _| rng::gaussian(rng));
            self.normalize_matrix(g)
        };
        Ok(match spec.family {
            Family::Dense => Params::Dense(gaussian_matrix(spec.width, self.r(), rng)?),
            Family::DeepPower => {
                let mut layers = vec![gaussian_matrix(spec.width, self.r(), rng)?];
                for _ in 1..spec.depth {
                    layers.push(gaussian_matrix(spec.width, spec.width, rng)?);
                }
                Params::Deep(layers)
            }
            Family::ConvLinear | Family::ConvPool => {
                let phi = spec.patches.as_ref().expect("validated");
                let w: Vec<f64> = (0..phi.width()).map(|_| rng::gaussian(rng)).collect();
                let current = filter_norm(phi, &w, spec.norm)?;
                Params::Filter(w.iter().map(|x| x * spec.big_b / current.max(f64::MIN_POSITIVE)).collect())
            }
        })
    }

    /// Scales `g` onto the boundary of the hidden-layer ball.
    fn normalize_matrix(&self, g: Matrix) -> Result<Matrix> {
        let current = match self.spec.norm {
            NormKind::Spectral => spectral_norm_default(&g)?,
            NormKind::Frobenius => frobenius_norm(&g),
        };
        Ok(g.scaled(self.spec.big_b / current.max(f64::MIN_POSITIVE)))
    }

    fn project(&self, p: &mut Params) -> Result<()> {
        let (kind, cap) = (self.spec.norm, self.spec.big_b);
        match p {
            Params::Dense(a) => *a = project_matrix(a, kind, cap),
            Params::Deep(ws) => ws.iter_mut().for_each(|w| *w = project_matrix(w, kind, cap)),
            Params::Filter(w) => {
                let phi = self.spec.patches.as_ref().expect("validated");
                *w = project_filter(phi, w, kind, cap)?;
            }
        }
        Ok(())
    }

    /// Objective value, ascent direction, and the output layer achieving the
    /// value (for families that have one).
    fn evaluate(&self, p: &Params, signs: &[f64]) -> (f64, Params, Option<Vec<f64>>) {
        let inv_m = 1.0 / self.m() as f64;
        let sigma = &self.spec.sigma;
        match p {
            Params::Dense(a) => {
                let pre: Vec<Vec<f64>> = self.z.iter().map(|z| a.mul_vec(z).expect("shapes agree")).collect();
                let mut g = vec![0.0; a.rows()];
                for (pi, &e) in pre.iter().zip(signs) {
                    for (gk, &zk) in g.iter_mut().zip(pi) {
                        *gk += e * inv_m * sigma.eval(zk);
                    }
                }
                let (value, u_hat) = self.output_layer(&g);
                let mut grad = Matrix::zeros(a.rows(), a.cols());
                for ((pi, z), &e) in pre.iter().zip(&self.z).zip(signs) {
                    for k in 0..a.rows() {
                        let c = self.spec.b * u_hat[k] * e * inv_m * sigma.derivative(pi[k]);
                        if c != 0.0 {
                            for (j, &zj) in z.iter().enumerate() {
                                grad.add_at(k, j, c * zj);
                            }
                        }
                    }
                }
                let u = u_hat.iter().map(|x| x * self.spec.b).collect();
                (value, Params::Dense(grad), Some(u))
            }
            Params::Deep(ws) => {
                let k = self.spec.k as i32;
                let traces: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = self
                    .z
                    .iter()
                    .map(|z| {
                        let mut acts = vec![z.clone()];
                        let mut pres = Vec::with_capacity(ws.len());
                        for w in ws {
                            let pre = w.mul_vec(acts.last().expect("nonempty")).expect("shapes agree");
                            acts.push(pre.iter().map(|v| v.powi(k)).collect());
                            pres.push(pre);
                        }
                        (acts, pres)
                    })
                    .collect();
                let mut g = vec![0.0; ws.last().expect("nonempty").rows()];
                for ((acts, _), &e) in traces.iter().zip(signs) {
                    for (gk, v) in g.iter_mut().zip(acts.last().expect("nonempty")) {
                        *gk += e * inv_m * v;
                    }
                }
                let (value, u_hat) = self.output_layer(&g);
                let mut grads: Vec<Matrix> = ws.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
                for ((acts, pres), &e) in traces.iter().zip(signs) {
                    let mut delta: Vec<f64> = u_hat.iter().map(|u| self.spec.b * u * e * inv_m).collect();
                    for j in (0..ws.len()).rev() {
                        let dpre: Vec<f64> = delta
                            .iter()
                            .zip(&pres[j])
                            .map(|(d, p)| d * k as f64 * p.powi(k - 1))
                            .collect();
                        for (r, &dr) in dpre.iter().enumerate() {
                            if dr != 0.0 {
                                for (c, &a) in acts[j].iter().enumerate() {
                                    grads[j].add_at(r, c, dr * a);
                                }
                            }
                        }
                        delta = ws[j].tr_mul_vec(&dpre).expect("shapes agree");
                    }
                }
                let u = u_hat.iter().map(|x| x * self.spec.b).collect();
                (value, Params::Deep(grads), Some(u))
            }
            Params::Filter(w) => {
                let phi = self.spec.patches.as_ref().expect("validated");
                let pre: Vec<Vec<f64>> = self.z.iter().map(|x| phi.responses(w, x)).collect();
                let mut grad = vec![0.0; w.len()];
                let add_patch = |grad: &mut Vec<f64>, x: &[f64], j: usize, c: f64| {
                    for (gi, &idx) in grad.iter_mut().zip(&phi.patches()[j]) {
                        *gi += c * x[idx];
                    }
                };
                if self.spec.family == Family::ConvLinear {
                    let mut g = vec![0.0; phi.n()];
                    for (pi, &e) in pre.iter().zip(signs) {
                        for (gj, &v) in g.iter_mut().zip(pi) {
                            *gj += e * inv_m * sigma.eval(v);
                        }
                    }
                    let (value, u_hat) = self.output_layer(&g);
                    for ((pi, x), &e) in pre.iter().zip(&self.z).zip(signs) {
                        for j in 0..phi.n() {
                            let c = self.spec.b * u_hat[j] * e * inv_m * sigma.derivative(pi[j]);
                            if c != 0.0 {
                                add_patch(&mut grad, x, j, c);
                            }
                        }
                    }
                    let u = u_hat.iter().map(|x| x * self.spec.b).collect();
                    (value, Params::Filter(grad), Some(u))
                } else {
                    let mut value = 0.0;
                    for ((pi, x), &e) in pre.iter().zip(&self.z).zip(signs) {
                        let act: Vec<f64> = pi.iter().map(|&v| sigma.eval(v)).collect();
                        value += e * inv_m * self.spec.pooling.apply(&act);
                        match self.spec.pooling {
                            Pooling::Average => {
                                let share = 1.0 / phi.n() as f64;
                                for j in 0..phi.n() {
                                    add_patch(&mut grad, x, j, e * inv_m * share * sigma.derivative(pi[j]));
                                }
                            }
                            _ => {
                                let top = (0..act.len())
                                    .max_by(|&a, &b| act[a].total_cmp(&act[b]))
                                    .expect("nonempty patch set");
                                add_patch(&mut grad, x, top, e * inv_m * sigma.derivative(pi[top]));
                            }
                        }
                    }
                    (value, Params::Filter(grad), None)
                }
            }
        }
    }

    /// `b‖g‖` and the unit direction of `g` (zero when `g = 0`).
    fn output_layer(&self, g: &[f64]) -> (f64, Vec<f64>) {
        let gn = norm(g);
        let u_hat = if gn > 0.0 { g.iter().map(|x| x / gn).collect() } else { vec![0.0; g.len()] };
        (self.spec.b * gn, u_hat)
    }

    fn lift(&self, a: &Matrix) -> Matrix {
        match &self.basis {
            Some(q) => a.matmul(&q.transpose()).expect("shapes agree"),
            None => a.clone(),
        }
    }

    fn network(&self, p: &Params, u: Option<Vec<f64>>) -> Result<Network> {
        let spec = self.spec;
        Ok(match p {
            Params::Dense(a) => Network::Dense(DenseNet::new(
                u.expect("dense nets have an output layer"),
                self.lift(a),
                spec.sigma.clone(),
            )?),
            Params::Deep(ws) => {
                let mut layers = ws.clone();
                layers[0] = self.lift(&ws[0]);
                debug_assert_eq!(layers[0].cols(), self.d);
                Network::DeepPower(DeepPowerNet::new(layers, u.expect("output layer"), spec.k)?)
            }
            Params::Filter(w) => {
                let phi = spec.patches.clone().expect("validated");
                let rho = match spec.family {
                    Family::ConvLinear => Pooling::Linear(u.expect("output layer")),
                    _ => spec.pooling.clone(),
                };
                Network::Conv(ConvNet::new(w.clone(), phi, spec.sigma.clone(), rho)?)
            }
        })
    }
}

struct TrialOutcome {
    value: f64,
    net: Network,
    abandoned: usize,
}

fn run_trial(problem: &Problem<'_>, signs: &[f64], opts: &EstimateOptions, trial: usize) -> Result<TrialOutcome> {
    let mut rng = rng::stream(opts.seed, (trial as u64) << 1 | 1);
    let mut best: Option<(f64, Network)> = None;
    let mut abandoned = 0;
    for _ in 0..opts.restarts.max(1) {
        let mut p = problem.random_params(&mut rng)?;
        let mut restart_best: Option<(f64, Params, Option<Vec<f64>>)> = None;
        let mut stale = 0;
        let mut eta = opts.step_size;
        let mut failed = false;
        for _ in 0..=opts.steps {
            let (value, grad, u) = problem.evaluate(&p, signs);
            if !value.is_finite() || !grad.is_finite() {
                failed = true;
                break;
            }
            match &restart_best {
                Some((v, _, _)) if value <= v + 1e-12 => stale += 1,
                _ => {
                    restart_best = Some((value, p.clone(), u));
                    stale = 0;
                }
            }
            let gnorm = grad.norm_sq().sqrt();
            if stale >= opts.patience || gnorm == 0.0 {
                break;
            }
            p.add_scaled(&grad, eta * problem.spec.big_b / gnorm);
            problem.project(&mut p)?;
            eta *= opts.decay;
        }
        if failed && restart_best.is_none() {
            abandoned += 1;
            continue;
        }
        if failed {
            abandoned += 1;
        }
        if let Some((value, params, u)) = restart_best {
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, problem.network(&params, u)?));
            }
        }
    }
    match best {
        Some((value, net)) => Ok(TrialOutcome { value, net, abandoned }),
        None => Err(Error::AllRestartsAbandoned { trial }),
    }
}

/// Monte-Carlo estimate of the empirical Rademacher complexity of `spec` on
/// `points`. Trials run in parallel; each derives its randomness from
/// `(seed, trial)` so the result does not depend on scheduling.
pub fn estimate(points: &[Vec<f64>], spec: &HypothesisSpec, opts: &EstimateOptions) -> Result<RademacherEstimate> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    if opts.trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if !(opts.step_size > 0.0) || !(opts.decay > 0.0 && opts.decay <= 1.0) {
        return Err(Error::InvalidParameter("step size must be positive and decay in (0, 1]".into()));
    }
    let d = points[0].len();
    if let Some(i) = points.iter().position(|p| p.len() != d) {
        return Err(Error::Dimension {
            context: "point dimension",
            expected: d,
            found: points[i].len(),
        });
    }
    spec.validate(d)?;
    let m = points.len();
    let enumerate = opts.exact_signs && m <= EXACT_SIGNS_MAX_M && opts.trials >= 1 << m;
    let trials = if enumerate { 1usize << m } else { opts.trials };
    let problem = Problem::new(points, spec);

    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let signs: Vec<f64> = if enumerate {
                (0..m).map(|i| if (t >> i) & 1 == 1 { 1.0 } else { -1.0 }).collect()
            } else {
                let mut r = rng::stream(opts.seed, (t as u64) << 1);
                (0..m).map(|_| rng::sign(&mut r)).collect()
            };
            run_trial(&problem, &signs, opts, t)
        })
        .collect::<Result<_>>()?;

    let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let mean = values.iter().sum::<f64>() / trials as f64;
    let stderr = if trials > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        mean,
        stderr,
        trials,
        restarts_per_trial: opts.restarts.max(1),
        best_trial_values: values,
        seed: opts.seed,
        signs_enumerated: enumerate,
        abandoned_restarts: outcomes.iter().map(|o| o.abandoned).sum(),
        iterates: outcomes.into_iter().map(|o| o.net).collect(),
    })
}
