//! Explicit shattering constructions and an exhaustive verifier.
//!
//! Each instance fixes `m` points and a threshold `s`; for every labeling
//! `y ∈ {0,1}^m` it builds a network from the norm-constrained class that
//! puts every point with `y_i = 0` at or below `s − ε` and every point with
//! `y_i = 1` at or above `s + ε`. [`verify_shattering`] checks all `2^m`
//! labelings and emits a serializable certificate.
//!
//! Labelings are indexed by `Σ_i y_i 2^i`, so bit `i` of the index is `y_i`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{Activation, KINK_GRID};
use crate::bounds::{floor_tol, lower_bound_spectral, BoundQuery};
use crate::error::{Error, Result};
use crate::linalg::{
    balanced_sign_matrix, frobenius_norm, incoherent_sign_matrix, norm, orthogonal_columns, spectral_norm_default,
    Matrix, DEFAULT_MAX_TRIES,
};
use crate::networks::{conform_matrix, tensor_patch_set, ConvNet, DenseNet, Network, PatchSet, Pooling, TensorPatchGrid, PATCH_ENTRY_CAP};
use crate::rng;

/// Default largest `m` the verifier will enumerate.
pub const DEFAULT_ENUM_CAP: usize = 20;
/// Slack on margin comparisons.
pub const MARGIN_SLACK: f64 = 1e-9;
/// Relative slack on norm-cap comparisons.
pub const NORM_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionKind {
    Spectral,
    Frobenius,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Spectral,
    Frobenius,
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "spectral" => Ok(NormKind::Spectral),
            "frobenius" => Ok(NormKind::Frobenius),
            other => Err(Error::InvalidParameter(format!("unknown norm kind {other:?}"))),
        }
    }
}

/// Frozen defaults for the sparse-random construction, calibrated against the
/// verifier at `n = 8`, `d = 64`, `m = 6`.
pub fn frobenius_default_constants() -> BTreeMap<String, f64> {
    [
        ("c4", 1.0),
        ("c_beta", 0.1),
        ("m_scale", 1.0),
        ("c_coh", 3.0),
        ("c_spec", 2.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Recipe {
    /// `u = ±(b/√n)·1`, `W = (δ/b_x²)·V·diag(y)·Xᵀ`.
    Spectral {
        x: Matrix,
        v: Matrix,
        delta: f64,
        u_sign: f64,
        sigma: Activation,
    },
    /// `W = V·diag(y)·Xᵀ/b_x²` with `V` drawn per labeling.
    Frobenius {
        x: Matrix,
        p: f64,
        a: f64,
        beta: f64,
        /// Required output level for `y_i = 1`.
        level: f64,
        seed: u64,
        max_tries: usize,
    },
    /// One nonzero filter entry per channel, placed by the block's labels.
    Conv {
        phi: PatchSet,
        grid: TensorPatchGrid,
        block: usize,
        weight: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShatterInstance {
    pub kind: ConstructionKind,
    pub points: Vec<Vec<f64>>,
    pub threshold: f64,
    pub eps: f64,
    /// Width of the hidden layer, or the number of patches for `Conv`.
    pub n: usize,
    pub b: Option<f64>,
    pub big_b: f64,
    pub b_x: f64,
    pub norm: NormKind,
    /// Named construction parameters, e.g. `delta`, `a`, `p`, `beta`.
    pub meta: BTreeMap<String, f64>,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
    recipe: Recipe,
}

impl ShatterInstance {
    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn d(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// The network realizing `labeling`.
    pub fn network(&self, labeling: &[bool]) -> Result<Network> {
        if labeling.len() != self.m() {
            return Err(Error::Dimension {
                context: "labeling length",
                expected: self.m(),
                found: labeling.len(),
            });
        }
        match &self.recipe {
            Recipe::Spectral { x, v, delta, u_sign, sigma } => {
                let b = self.b.unwrap_or(1.0);
                let u = vec![u_sign * b / (self.n as f64).sqrt(); self.n];
                let w = sign_weights(v, x, labeling, delta / (self.b_x * self.b_x));
                Ok(Network::Dense(DenseNet::new(u, w, sigma.clone())?))
            }
            Recipe::Frobenius {
                x,
                p,
                a,
                beta,
                level,
                seed,
                max_tries,
            } => self.frobenius_network(x, *p, *a, *beta, *level, *seed, *max_tries, labeling),
            Recipe::Conv { phi, grid, block, weight } => {
                let mut w = vec![0.0; phi.width()];
                let per_channel = w.len() / grid.channels;
                for channel in 0..grid.channels {
                    let offset = labeling[channel * block..(channel + 1) * block]
                        .iter()
                        .fold(0, |acc, &bit| acc * 2 + bit as usize);
                    w[channel * per_channel + offset] = *weight;
                }
                Ok(Network::Conv(ConvNet::new(w, phi.clone(), Activation::Relu, Pooling::Max)?))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn frobenius_network(
        &self,
        x: &Matrix,
        p: f64,
        a: f64,
        beta: f64,
        level: f64,
        seed: u64,
        max_tries: usize,
        labeling: &[bool],
    ) -> Result<Network> {
        let b = self.b.unwrap_or(1.0);
        let n = self.n;
        let m = self.m();
        let u = vec![b / (n as f64).sqrt(); n];
        let sigma = Activation::BiasedRelu { beta };
        let mut rng = rng::stream(seed, labeling_index(labeling) + 1);
        let (mut norm_fail, mut margin_fail) = (0usize, 0usize);
        for _ in 0..max_tries.max(1) {
            let v = Matrix::from_fn(n, m, |_, _| {
                let r = rng::uniform(&mut rng);
                if r < p / 2.0 {
                    a
                } else if r < p {
                    -a
                } else {
                    0.0
                }
            });
            let w = sign_weights(&v, x, labeling, 1.0 / (self.b_x * self.b_x));
            if frobenius_norm(&w) > self.big_b {
                norm_fail += 1;
                continue;
            }
            let net = DenseNet::new(u.clone(), w, sigma.clone())?;
            let ok = self.points.iter().zip(labeling).all(|(pt, &yi)| {
                let f = net.forward(pt).unwrap_or(f64::NAN);
                if yi {
                    f >= level
                } else {
                    f <= 0.0
                }
            });
            if ok {
                return Ok(Network::Dense(net));
            }
            margin_fail += 1;
        }
        Err(Error::RetriesExhausted {
            what: "sparse sign matrix for labeling",
            tries: max_tries,
            diagnostics: format!("norm cap failed {norm_fail} times, output levels failed {margin_fail} times"),
        })
    }

    /// The norm the class constrains, evaluated on `net`'s hidden layer.
    pub fn constrained_norm(&self, net: &Network) -> Result<f64> {
        let w = match net {
            Network::Dense(d) => d.w.clone(),
            Network::Conv(c) => conform_matrix(&c.phi, &c.w)?,
            Network::DeepPower(_) => {
                return Err(Error::InvalidParameter("deep power nets have no shattering construction".into()))
            }
        };
        match self.norm {
            NormKind::Spectral => spectral_norm_default(&w),
            NormKind::Frobenius => Ok(frobenius_norm(&w)),
        }
    }
}

/// `scale · V · diag(y) · Xᵀ`.
fn sign_weights(v: &Matrix, x: &Matrix, labeling: &[bool], scale: f64) -> Matrix {
    let (n, d) = (v.rows(), x.rows());
    let mut w = Matrix::zeros(n, d);
    for (i, &yi) in labeling.iter().enumerate() {
        if !yi {
            continue;
        }
        for k in 0..n {
            let vk = v.get(k, i) * scale;
            if vk == 0.0 {
                continue;
            }
            for j in 0..d {
                w.add_at(k, j, vk * x.get(j, i));
            }
        }
    }
    w
}

pub fn labeling_index(labeling: &[bool]) -> u64 {
    labeling.iter().enumerate().map(|(i, &y)| (y as u64) << i).sum()
}

pub fn labeling_from_index(index: u64, m: usize) -> Vec<bool> {
    (0..m).map(|i| (index >> i) & 1 == 1).collect()
}

fn labeling_string(labeling: &[bool]) -> String {
    labeling.iter().map(|&y| if y { '1' } else { '0' }).collect()
}

fn points_of(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.cols()).map(|i| x.column(i)).collect()
}

fn check_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for &(name, v) in pairs {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Constant in the spectral bound on the sign matrix (`≥ 1`).
    pub c_spec: f64,
    pub seed: u64,
    pub max_tries: usize,
    /// Optional cap on the number of points below the size formula.
    pub max_points: Option<usize>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            c_spec: 1.0,
            seed: 0,
            max_tries: DEFAULT_MAX_TRIES,
            max_points: None,
        }
    }
}

/// Orthogonal points with `W = (δ/b_x²)·V·diag(y)·Xᵀ` for a balanced sign
/// matrix `V` and `u = (b/√n)·1`.
///
/// `m = ⌊(α/(16c))²(bBb_x)²n/ε²⌋`, optionally capped by `max_points`, and
/// `d = m`. The scale `δ` is the smallest value that yields margin `ε`,
/// `8ε/(αb√n)`, and must not exceed `Bb_x/(c(√n+√m))` so that `‖W‖ ≤ B`.
/// The threshold is half the smallest realized positive output level.
#[allow(clippy::too_many_arguments)]
pub fn spectral_shatter_instance(
    b: f64,
    big_b: f64,
    b_x: f64,
    n: usize,
    eps: f64,
    sigma: &Activation,
    opts: &SpectralOptions,
) -> Result<ShatterInstance> {
    check_positive(&[("b", b), ("B", big_b), ("b_x", b_x), ("eps", eps)])?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if opts.c_spec < 1.0 {
        return Err(Error::InvalidParameter(format!("c_spec must be >= 1, got {}", opts.c_spec)));
    }
    let alpha = sigma.kink_alpha(KINK_GRID);
    if !(alpha > 1e-12) {
        return Err(Error::Infeasible(format!(
            "activation {sigma} has no kink at the origin (alpha = {alpha})"
        )));
    }
    if sigma.lipschitz_on(-1.0, 1.0) > 1.0 + 1e-12 {
        return Err(Error::Infeasible(format!("activation {sigma} is not 1-Lipschitz on [-1, 1]")));
    }
    if eps >= b * big_b * b_x {
        return Err(Error::Infeasible(format!("eps = {eps} is not below bBb_x = {}", b * big_b * b_x)));
    }
    let query = BoundQuery {
        b,
        big_b,
        b_x,
        n,
        eps,
        alpha,
        ..BoundQuery::default()
    };
    if lower_bound_spectral(&query)?.valid != Some(true) {
        return Err(Error::Infeasible(
            "parameters are outside the regime where the spectral lower bound applies".into(),
        ));
    }
    let rn = (n as f64).sqrt();
    let formula = floor_tol((alpha / (16.0 * opts.c_spec)).powi(2) * (b * big_b * b_x).powi(2) * n as f64 / (eps * eps));
    let mut m = formula as usize;
    if let Some(cap) = opts.max_points {
        m = m.min(cap);
    }
    if m == 0 {
        return Err(Error::Infeasible("the size formula gives zero points".into()));
    }
    let delta_lo = 8.0 * eps / (alpha * b * rn);
    let delta_hi = big_b * b_x / (opts.c_spec * (rn + (m as f64).sqrt()));
    if delta_lo > delta_hi || delta_lo >= 1.0 {
        return Err(Error::Infeasible(format!(
            "scale window is empty: need {delta_lo} <= delta <= {delta_hi} and delta < 1"
        )));
    }
    let delta = delta_lo;
    let u_sign = if sigma.eval(0.5) + sigma.eval(-0.5) < 0.0 { -1.0 } else { 1.0 };
    let x = orthogonal_columns(m, m, b_x, opts.seed)?;
    let v = balanced_sign_matrix(n, m, alpha, opts.c_spec, opts.seed.wrapping_add(1), opts.max_tries)?;

    // Output level of column i when y_i = 1; depends on that column alone.
    let levels: Vec<f64> = (0..m)
        .map(|i| u_sign * b / rn * (0..n).map(|j| sigma.eval(delta * v.get(j, i))).sum::<f64>())
        .collect();
    let low = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = 0.5 * low;

    let mut meta = BTreeMap::new();
    meta.insert("alpha".into(), alpha);
    meta.insert("delta".into(), delta);
    meta.insert("delta_max".into(), delta_hi);
    meta.insert("c_spec".into(), opts.c_spec);
    meta.insert("m_formula".into(), formula);
    meta.insert("min_level".into(), low);
    let mut warnings = Vec::new();
    if (m as f64) < formula {
        warnings.push(format!("point count capped at {m} (size formula gives {formula})"));
    }
    Ok(ShatterInstance {
        kind: ConstructionKind::Spectral,
        points: points_of(&x),
        threshold,
        eps,
        n,
        b: Some(b),
        big_b,
        b_x,
        norm: NormKind::Spectral,
        meta,
        seed: Some(opts.seed),
        warnings,
        recipe: Recipe::Spectral {
            x,
            v,
            delta,
            u_sign,
            sigma: sigma.clone(),
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrobeniusOptions {
    /// Keys `c4`, `c_beta`, `m_scale`, `c_coh`, `c_spec`; missing keys fall
    /// back to [`frobenius_default_constants`].
    pub constants: BTreeMap<String, f64>,
    pub seed: u64,
    pub max_tries: usize,
    pub max_points: Option<usize>,
}

impl Default for FrobeniusOptions {
    fn default() -> Self {
        FrobeniusOptions {
            constants: BTreeMap::new(),
            seed: 0,
            max_tries: DEFAULT_MAX_TRIES,
            max_points: None,
        }
    }
}

impl FrobeniusOptions {
    fn constant(&self, key: &str) -> f64 {
        match self.constants.get(key) {
            Some(&v) => v,
            None => frobenius_default_constants()[key],
        }
    }
}

/// Smallest input dimension the sparse construction accepts.
pub const FROBENIUS_MIN_DIM: usize = 4;

/// Incoherent `±b_x/√d` points, `u = (b/√n)·1`, `W = V·diag(y)·Xᵀ/b_x²`
/// with `V` iid in `{0, ±a}` (probabilities `1−p, p/2, p/2`) and the biased
/// ReLU `[z − β]_+`; threshold `ε`.
///
/// `m = ⌊m_scale·min{nd, (bBb_x/ε)√d}⌋` (optionally capped),
/// `p = c4·d/(ln d·ln²(4m)·m)`, `a = 8ε/(bp√n)` and
/// `β = c_beta·a·√(ln d/d)·ln(4m)·(√(pm)+1)`. Each labeling draws `V` from
/// its own stream until the outputs are `≤ 0` / `≥ 2ε` and `‖W‖_F ≤ B`.
#[allow(clippy::too_many_arguments)]
pub fn frobenius_shatter_instance(
    b: f64,
    big_b: f64,
    b_x: f64,
    n: usize,
    d: usize,
    eps: f64,
    opts: &FrobeniusOptions,
) -> Result<ShatterInstance> {
    check_positive(&[("b", b), ("B", big_b), ("b_x", b_x), ("eps", eps)])?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if d < FROBENIUS_MIN_DIM {
        return Err(Error::InvalidParameter(format!(
            "input dimension must be >= {FROBENIUS_MIN_DIM}, got {d}"
        )));
    }
    if eps >= b * big_b * b_x {
        return Err(Error::Infeasible(format!("eps = {eps} is not below bBb_x = {}", b * big_b * b_x)));
    }
    let c4 = opts.constant("c4");
    let c_beta = opts.constant("c_beta");
    let m_scale = opts.constant("m_scale");
    let c_coh = opts.constant("c_coh");
    let c_spec = opts.constant("c_spec");

    let df = d as f64;
    let skeleton = (n as f64 * df).min(b * big_b * b_x / eps * df.sqrt());
    let formula = floor_tol(m_scale * skeleton);
    let mut m = formula as usize;
    if let Some(cap) = opts.max_points {
        m = m.min(cap);
    }
    if m == 0 {
        return Err(Error::Infeasible("the size formula gives zero points".into()));
    }
    let mf = m as f64;
    let log4m = (4.0 * mf).ln();
    let p = c4 * df / (df.ln() * log4m * log4m * mf);
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sparsity p = {p} is outside (0, 1]; the parameters are outside the construction's regime"
        )));
    }
    let a = 8.0 * eps / (b * p * (n as f64).sqrt());
    let beta = c_beta * a * (df.ln() / df).sqrt() * log4m * ((p * mf).sqrt() + 1.0);
    let beta_cap = big_b * b_x / (df * n as f64).sqrt() * df.ln().sqrt() * log4m;

    let x = incoherent_sign_matrix(d, m, b_x, c_coh, c_spec, opts.seed, opts.max_tries)?;
    let mut meta = BTreeMap::new();
    for (k, v) in [
        ("p", p),
        ("a", a),
        ("beta", beta),
        ("beta_cap", beta_cap),
        ("m_formula", formula),
        ("c4", c4),
        ("c_beta", c_beta),
        ("m_scale", m_scale),
        ("c_coh", c_coh),
        ("c_spec", c_spec),
    ] {
        meta.insert(k.to_string(), v);
    }
    let mut warnings = Vec::new();
    if mf < formula {
        warnings.push(format!("point count capped at {m} (size formula gives {formula})"));
    }
    Ok(ShatterInstance {
        kind: ConstructionKind::Frobenius,
        points: points_of(&x),
        threshold: eps,
        eps,
        n,
        b: Some(b),
        big_b,
        b_x,
        norm: NormKind::Frobenius,
        meta,
        seed: Some(opts.seed),
        warnings,
        recipe: Recipe::Frobenius {
            x,
            p,
            a,
            beta,
            level: 2.0 * eps,
            seed: opts.seed,
            max_tries: opts.max_tries,
        },
    })
}

/// Tensor points over a `3×…×3×L` grid with `2×…×2×L` stride-1 patches,
/// max pooling and ReLU.
///
/// `n` is rounded down to a power of two, `m' = log₂ n`, `L = ⌊(b_xB/(2ε))²⌋`
/// and `m = L·m'`. Point `i` sits in channel `i / m'`; with `t = i mod m'` it
/// has the single entry `b_x` at spatial index `(1,…,1,2,1,…,1)` (0-based,
/// the 2 at position `t`). The filter for `y` carries `2ε/b_x` at offset
/// `y_{block}` in every channel, so outputs are exactly `0` or `2ε` and the
/// threshold is `ε`.
pub fn conv_shatter_instance(big_b: f64, b_x: f64, eps: f64, n: usize) -> Result<ShatterInstance> {
    check_positive(&[("B", big_b), ("b_x", b_x), ("eps", eps)])?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
    }
    let order = (usize::BITS - 1 - n.leading_zeros()) as usize;
    let n_used = 1usize << order;
    let mut warnings = Vec::new();
    if n_used != n {
        warnings.push(format!("rounded n to {n_used}"));
    }
    let channels = floor_tol((b_x * big_b / (2.0 * eps)).powi(2));
    if channels < 1.0 {
        return Err(Error::Infeasible(format!(
            "(b_x B / 2 eps)^2 = {} is below 1; eps is too large",
            (b_x * big_b / (2.0 * eps)).powi(2)
        )));
    }
    let channels = channels as usize;
    let grid = TensorPatchGrid::cube(order, channels);
    let phi = tensor_patch_set(&grid, PATCH_ENTRY_CAP)?;
    let m = channels * order;
    let points = (0..m)
        .map(|i| {
            let (block, t) = (i / order, i % order);
            let mut idx = vec![1; order];
            idx[t] = 2;
            let mut x = vec![0.0; grid.input_dim()];
            x[grid.flat_index(&idx, block)] = b_x;
            x
        })
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert("channels".into(), channels as f64);
    meta.insert("points_per_channel".into(), order as f64);
    meta.insert("n_requested".into(), n as f64);
    Ok(ShatterInstance {
        kind: ConstructionKind::Conv,
        points,
        threshold: eps,
        eps,
        n: n_used,
        b: None,
        big_b,
        b_x,
        norm: NormKind::Spectral,
        meta,
        seed: None,
        warnings,
        recipe: Recipe::Conv {
            phi,
            grid,
            block: order,
            weight: 2.0 * eps / b_x,
        },
    })
}

/// A ReLU net on `d + 1` inputs equal to a biased-ReLU net on `d` inputs,
/// via `W̃ = [W, −(β/b_x)·1]` and `x̃ = (x, b_x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasAugmentation {
    pub net: DenseNet,
    pub b_x: f64,
}

impl BiasAugmentation {
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        out.push(self.b_x);
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.net.forward(&self.lift(x))
    }
}

pub fn augment_bias(net: &DenseNet, b_x: f64) -> Result<BiasAugmentation> {
    let beta = match net.sigma {
        Activation::BiasedRelu { beta } => beta,
        _ => return Err(Error::InvalidParameter(format!("expected a biased ReLU net, got {}", net.sigma))),
    };
    if beta < 0.0 {
        return Err(Error::InvalidParameter(format!("bias must be >= 0, got {beta}")));
    }
    check_positive(&[("b_x", b_x)])?;
    let column = vec![-beta / b_x; net.width()];
    Ok(BiasAugmentation {
        net: DenseNet::new(net.u.clone(), net.w.with_column(&column)?, Activation::Relu)?,
        b_x,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingRecord {
    /// `y_1 … y_m` as a bit string.
    pub labeling: String,
    pub outputs: Vec<f64>,
    /// Constrained hidden-layer norm; absent when no network was built.
    pub norm: Option<f64>,
    /// Smallest signed distance of an output to the threshold.
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<Network>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingFailure {
    pub labeling: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShatterCertificate {
    pub kind: ConstructionKind,
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub b: Option<f64>,
    #[serde(rename = "B")]
    pub big_b: f64,
    pub b_x: f64,
    pub eps: f64,
    pub threshold: f64,
    pub norm: NormKind,
    pub seed: Option<u64>,
    pub meta: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub labelings_checked: u64,
    pub max_norm_seen: f64,
    pub min_margin_seen: f64,
    pub passed: bool,
    pub failures: Vec<LabelingFailure>,
    pub records: Vec<LabelingRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub enum_cap: usize,
    /// Store each labeling's network in its record.
    pub keep_networks: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            enum_cap: DEFAULT_ENUM_CAP,
            keep_networks: false,
        }
    }
}

pub fn verify_shattering(inst: &ShatterInstance, enum_cap: usize) -> Result<ShatterCertificate> {
    verify_shattering_with(
        inst,
        &VerifyOptions {
            enum_cap,
            ..VerifyOptions::default()
        },
    )
}

/// Checks every labeling; labelings run in parallel and the merge is
/// ordered by labeling index.
pub fn verify_shattering_with(inst: &ShatterInstance, opts: &VerifyOptions) -> Result<ShatterCertificate> {
    let m = inst.m();
    if m > opts.enum_cap || m >= 64 {
        return Err(Error::EnumerationCap {
            required: m,
            cap: opts.enum_cap,
        });
    }
    for (i, p) in inst.points.iter().enumerate() {
        if norm(p) > inst.b_x * (1.0 + 1e-9) + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "point {i} has norm {} above b_x = {}",
                norm(p),
                inst.b_x
            )));
        }
    }
    let total = 1u64 << m;
    let outcomes: Vec<(LabelingRecord, Option<LabelingFailure>)> = (0..total)
        .into_par_iter()
        .map(|index| check_labeling(inst, &labeling_from_index(index, m), opts.keep_networks))
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut max_norm = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for (rec, fail) in outcomes {
        if let Some(v) = rec.norm {
            max_norm = max_norm.max(v);
        }
        if let Some(v) = rec.margin {
            min_margin = min_margin.min(v);
        }
        failures.extend(fail);
        records.push(rec);
    }
    if !min_margin.is_finite() {
        min_margin = f64::MIN;
    }
    Ok(ShatterCertificate {
        kind: inst.kind,
        m,
        d: inst.d(),
        n: inst.n,
        b: inst.b,
        big_b: inst.big_b,
        b_x: inst.b_x,
        eps: inst.eps,
        threshold: inst.threshold,
        norm: inst.norm,
        seed: inst.seed,
        meta: inst.meta.clone(),
        warnings: inst.warnings.clone(),
        points: inst.points.clone(),
        labelings_checked: total,
        max_norm_seen: max_norm,
        min_margin_seen: min_margin,
        passed: failures.is_empty(),
        failures,
        records,
    })
}

fn check_labeling(
    inst: &ShatterInstance,
    labeling: &[bool],
    keep_network: bool,
) -> (LabelingRecord, Option<LabelingFailure>) {
    let label = labeling_string(labeling);
    let fail = |reason: String| {
        Some(LabelingFailure {
            labeling: label.clone(),
            reason,
        })
    };
    let empty = |reason: String| {
        let rec = LabelingRecord {
            labeling: label.clone(),
            outputs: Vec::new(),
            norm: None,
            margin: None,
            network: None,
        };
        (rec, fail(reason))
    };
    let net = match inst.network(labeling) {
        Ok(net) => net,
        Err(e) => return empty(format!("construction failed: {e}")),
    };
    let outputs: Vec<f64> = match inst.points.iter().map(|x| net.forward(x)).collect() {
        Ok(v) => v,
        Err(e) => return empty(format!("forward pass failed: {e}")),
    };
    let margin = outputs
        .iter()
        .zip(labeling)
        .map(|(&f, &y)| if y { f - inst.threshold } else { inst.threshold - f })
        .fold(f64::INFINITY, f64::min);
    let margin = margin.is_finite().then_some(margin);
    let w_norm = inst.constrained_norm(&net).ok().filter(|v| v.is_finite());

    let mut reasons = Vec::new();
    match margin {
        Some(v) if v >= inst.eps - MARGIN_SLACK => {}
        Some(v) => reasons.push(format!("margin {v} below eps {}", inst.eps)),
        None => reasons.push("outputs are not finite".to_string()),
    }
    let cap = inst.big_b * (1.0 + NORM_SLACK);
    match w_norm {
        Some(v) if v <= cap => {}
        Some(v) => reasons.push(format!("hidden-layer norm {v} exceeds cap {}", inst.big_b)),
        None => reasons.push("hidden-layer norm could not be computed".to_string()),
    }
    if let (Some(b), Network::Dense(d)) = (inst.b, &net) {
        let u_norm = norm(&d.u);
        if u_norm > b * (1.0 + NORM_SLACK) {
            reasons.push(format!("output-layer norm {u_norm} exceeds cap {b}"));
        }
    }
    let rec = LabelingRecord {
        labeling: label.clone(),
        outputs,
        norm: w_norm,
        margin,
        network: keep_network.then_some(net),
    };
    let failure = if reasons.is_empty() { None } else { fail(reasons.join("; ")) };
    (rec, failure)
}

impl ShatterInstance {
    /// The same instance with a different margin; networks and threshold are
    /// unchanged.
    pub fn with_eps(&self, eps: f64) -> ShatterInstance {
        ShatterInstance { eps, ..self.clone() }
    }
}
