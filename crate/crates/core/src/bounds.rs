//! Sample-complexity upper bounds and fat-shattering lower bounds.
//!
//! Unnamed universal constants live in [`BoundQuery::constants`] and default
//! to 1. Logs are natural except in [`lower_bound_conv`], which counts points
//! per block and so uses log base 2.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::{Activation, SERIES_TOL};
use crate::error::{Error, Result};

/// Iteration budget for the fixed-point bounds.
pub const FIXED_POINT_MAX_ITERS: usize = 200;
/// Budget for the downward minimality scan that follows the iteration.
pub const DECREMENT_SCAN_MAX: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundQuery {
    /// Output-layer norm cap.
    pub b: f64,
    /// Hidden-layer norm cap.
    #[serde(rename = "B")]
    pub big_b: f64,
    /// Input norm cap.
    pub b_x: f64,
    /// Lipschitz constant of the activation.
    #[serde(rename = "L")]
    pub lip: f64,
    /// Width.
    pub n: usize,
    /// Input dimension.
    pub d: usize,
    pub eps: f64,
    /// Power exponent of a deep power network.
    pub k: u32,
    /// Number of layers of a deep power network.
    pub depth: u32,
    /// Patch overlap.
    pub o_phi: usize,
    /// Kink measure of the activation.
    pub alpha: f64,
    pub constants: BTreeMap<String, f64>,
}

impl Default for BoundQuery {
    fn default() -> Self {
        BoundQuery {
            b: 1.0,
            big_b: 1.0,
            b_x: 1.0,
            lip: 1.0,
            n: 1,
            d: 1,
            eps: 1.0,
            k: 1,
            depth: 1,
            o_phi: 1,
            alpha: 1.0,
            constants: BTreeMap::new(),
        }
    }
}

impl BoundQuery {
    /// Named constant, 1 when unset.
    pub fn constant(&self, name: &str) -> f64 {
        self.constants.get(name).copied().unwrap_or(1.0)
    }

    fn check_eps(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        for (name, v) in [("b", self.b), ("B", self.big_b), ("b_x", self.b_x), ("L", self.lip)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Frobenius,
    Smooth,
    DeepPower,
    ConvLinear,
    ConvPool,
    LowerSpectral,
    LowerFrobenius,
    LowerConv,
}

impl BoundKind {
    pub const ALL: [BoundKind; 8] = [
        BoundKind::Frobenius,
        BoundKind::Smooth,
        BoundKind::DeepPower,
        BoundKind::ConvLinear,
        BoundKind::ConvPool,
        BoundKind::LowerSpectral,
        BoundKind::LowerFrobenius,
        BoundKind::LowerConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Frobenius => "frobenius",
            BoundKind::Smooth => "smooth",
            BoundKind::DeepPower => "deep-power",
            BoundKind::ConvLinear => "conv-linear",
            BoundKind::ConvPool => "conv-pool",
            BoundKind::LowerSpectral => "lower-spectral",
            BoundKind::LowerFrobenius => "lower-frobenius",
            BoundKind::LowerConv => "lower-conv",
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('_', "-");
        BoundKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = BoundKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidParameter(format!("unknown bound kind {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub kind: BoundKind,
    /// Sample size (integral) for every kind here.
    pub value: f64,
    /// Fixed-point steps taken; 0 for closed forms.
    pub iterations: usize,
    /// Validity flag of a lower bound, `None` for upper bounds.
    pub valid: Option<bool>,
    pub inputs: BoundQuery,
    /// Constants the formula actually read, with their values.
    pub constants_used: BTreeMap<String, f64>,
}

impl BoundResult {
    fn new(kind: BoundKind, value: f64, q: &BoundQuery, used: &[&str]) -> Self {
        BoundResult {
            kind,
            value,
            iterations: 0,
            valid: None,
            inputs: q.clone(),
            constants_used: used.iter().map(|&c| (c.to_string(), q.constant(c))).collect(),
        }
    }
}

/// `ceil` that ignores relative float noise of order 1e−12, so that e.g.
/// `(1/0.1)²` rounds to 100.
pub fn ceil_tol(x: f64) -> f64 {
    (x - x.abs() * 1e-12).ceil().max(0.0)
}

pub fn floor_tol(x: f64) -> f64 {
    (x + x.abs() * 1e-12).floor().max(0.0)
}

/// Smallest integer `M ≥ 1` such that every integer `m ≥ M` satisfies
/// `m ≥ rhs(m)`.
///
/// `rhs` must be nondecreasing for `m ≥ 1`. `increasing_beyond(m)` must
/// certify that `m − rhs(m)` is nondecreasing on `[m, ∞)`. The search doubles
/// up to such a point, iterates `m ← ceil(rhs(m))` downward (every iterate
/// stays feasible because `rhs` is monotone), and then decrements while
/// `m − 1` is still feasible. Returns the answer and the number of
/// fixed-point steps.
pub fn stable_fixed_point(
    rhs: impl Fn(f64) -> f64,
    increasing_beyond: impl Fn(f64) -> bool,
) -> Result<(u64, usize)> {
    let holds = |m: u64| m as f64 >= rhs(m as f64);
    let mut upper: u64 = 8;
    while !(holds(upper) && increasing_beyond(upper as f64)) {
        if upper >= 1 << 62 {
            return Err(Error::Overflow {
                log_value: rhs(upper as f64).ln(),
            });
        }
        upper *= 2;
    }
    let mut m = upper;
    let mut iterations = 0;
    let mut decrements = 0;
    loop {
        loop {
            let next = (rhs(m as f64).ceil() as u64).max(1);
            if next >= m {
                break;
            }
            m = next;
            iterations += 1;
            if iterations > FIXED_POINT_MAX_ITERS {
                return Err(Error::NonConvergence {
                    what: "fixed-point bound iteration",
                    iterations,
                });
            }
        }
        if m <= 1 || !holds(m - 1) {
            return Ok((m, iterations));
        }
        m -= 1;
        decrements += 1;
        if decrements > DECREMENT_SCAN_MAX {
            return Err(Error::NonConvergence {
                what: "fixed-point minimality scan",
                iterations: iterations + decrements,
            });
        }
    }
}

/// Smallest stable `m` with `m ≥ c·(bBb_xL)²(1 + ln³m)/ε²`.
pub fn frobenius_bound(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    let k = q.constant("c") * (q.b * q.big_b * q.b_x * q.lip).powi(2) / (q.eps * q.eps);
    let (m, iterations) = stable_fixed_point(
        |m| frobenius_rhs(k, m),
        |m| m >= 8.0 && m >= 3.0 * k * m.ln().powi(2),
    )?;
    let mut r = BoundResult::new(BoundKind::Frobenius, m as f64, q, &["c"]);
    r.iterations = iterations;
    Ok(r)
}

/// Right-hand side of the Frobenius-class inequality for prefactor `k`.
pub fn frobenius_rhs(k: f64, m: f64) -> f64 {
    k * (1.0 + m.ln().powi(3))
}

/// `ceil((b·σ̃(Bb_x)/ε)²)`.
pub fn smooth_bound(q: &BoundQuery, sigma: &Activation) -> Result<BoundResult> {
    q.check_eps()?;
    let t = sigma.tilde_sigma(q.big_b * q.b_x, SERIES_TOL)?;
    let value = ceil_tol((q.b * t / q.eps).powi(2));
    Ok(BoundResult::new(BoundKind::Smooth, value, q, &[]))
}

/// `ceil((b·B^{k+k²+…+k^L}·b_x^{k^L}/ε)²)`.
pub fn deep_power_bound(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    if q.k == 0 || q.depth == 0 {
        return Err(Error::InvalidParameter("k and depth must be >= 1".into()));
    }
    let k = q.k as f64;
    let top = k.powi(q.depth as i32);
    let tower: f64 = (1..=q.depth).map(|j| k.powi(j as i32)).sum();
    let pow = |base: f64, e: f64| -> f64 {
        if e <= i32::MAX as f64 {
            base.powi(e as i32)
        } else {
            base.powf(e)
        }
    };
    let value = (q.b * pow(q.big_b, tower) * pow(q.b_x, top) / q.eps).powi(2);
    if !value.is_finite() {
        let log_value = 2.0 * (q.b.ln() + tower * q.big_b.ln() + top * q.b_x.ln() - q.eps.ln());
        return Err(Error::Overflow { log_value });
    }
    Ok(BoundResult::new(BoundKind::DeepPower, ceil_tol(value), q, &[]))
}

/// `ceil(2·O_Φ·(bBb_xL/ε)²)`.
pub fn conv_linear_bound(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    if q.o_phi == 0 {
        return Err(Error::InvalidParameter("patch overlap must be >= 1".into()));
    }
    let value = ceil_tol(2.0 * q.o_phi as f64 * (q.b * q.big_b * q.b_x * q.lip / q.eps).powi(2));
    Ok(BoundResult::new(BoundKind::ConvLinear, value, q, &[]))
}

/// Smallest stable `m` with `m ≥ c·(LBb_x/ε)²·ln²m·ln(mn)`.
pub fn conv_pool_bound(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    if q.n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let k = q.constant("c") * (q.lip * q.big_b * q.b_x / q.eps).powi(2);
    let ln_n = (q.n as f64).ln();
    let (m, iterations) = stable_fixed_point(
        |m| conv_pool_rhs(k, q.n, m),
        |m| {
            let l = m.ln();
            m >= 8.0 && m >= k * (3.0 * l * l + 2.0 * ln_n * l)
        },
    )?;
    let mut r = BoundResult::new(BoundKind::ConvPool, m as f64, q, &["c"]);
    r.iterations = iterations;
    Ok(r)
}

/// Right-hand side of the pooled-convolution inequality for prefactor `k`.
pub fn conv_pool_rhs(k: f64, n: usize, m: f64) -> f64 {
    k * m.ln().powi(2) * (m * n as f64).ln()
}

/// `floor(c·α²(bBb_x)²n/ε²)`, valid when it exceeds `c'(1/α² + B² + n)`.
pub fn lower_bound_spectral(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    let value = floor_tol(
        q.constant("c") * q.alpha * q.alpha * (q.b * q.big_b * q.b_x).powi(2) * q.n as f64 / (q.eps * q.eps),
    );
    let needed = q.constant("c_prime") * (1.0 / (q.alpha * q.alpha) + q.big_b * q.big_b + q.n as f64);
    let mut r = BoundResult::new(BoundKind::LowerSpectral, value, q, &["c", "c_prime"]);
    r.valid = Some(value > needed);
    Ok(r)
}

/// `floor(c·min{nd, (bBb_x/ε)√d})` with polylog factors dropped; valid when
/// it exceeds `c'·d`.
pub fn lower_bound_frobenius(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    let d = q.d as f64;
    let skeleton = (q.n as f64 * d).min(q.b * q.big_b * q.b_x / q.eps * d.sqrt());
    let value = floor_tol(q.constant("c") * skeleton);
    let mut r = BoundResult::new(BoundKind::LowerFrobenius, value, q, &["c", "c_prime"]);
    r.valid = Some(value > q.constant("c_prime") * d);
    Ok(r)
}

/// `floor(¼(Bb_x/ε)²·log₂n)`.
pub fn lower_bound_conv(q: &BoundQuery) -> Result<BoundResult> {
    q.check_eps()?;
    if q.n < 2 {
        return Err(Error::InvalidParameter(format!("n must be >= 2, got {}", q.n)));
    }
    let value = floor_tol(0.25 * (q.big_b * q.b_x / q.eps).powi(2) * (q.n as f64).log2());
    Ok(BoundResult::new(BoundKind::LowerConv, value, q, &[]))
}

/// Dispatches on `kind`; `sigma` is required by the smooth bound only.
pub fn evaluate(kind: BoundKind, q: &BoundQuery, sigma: Option<&Activation>) -> Result<BoundResult> {
    match kind {
        BoundKind::Frobenius => frobenius_bound(q),
        BoundKind::Smooth => {
            let sigma = sigma.ok_or_else(|| Error::InvalidParameter("smooth bound needs an activation".into()))?;
            smooth_bound(q, sigma)
        }
        BoundKind::DeepPower => deep_power_bound(q),
        BoundKind::ConvLinear => conv_linear_bound(q),
        BoundKind::ConvPool => conv_pool_bound(q),
        BoundKind::LowerSpectral => lower_bound_spectral(q),
        BoundKind::LowerFrobenius => lower_bound_frobenius(q),
        BoundKind::LowerConv => lower_bound_conv(q),
    }
}
