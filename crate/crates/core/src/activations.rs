//! Activation functions with the analytic data the bounds need: Lipschitz
//! constants, Taylor coefficients at the origin, the absolute-coefficient
//! majorant `σ̃(z) = Σ_j |a_j| z^j`, and the kink measure
//! `α = inf_{δ∈(0,1)} |(σ(δ) + σ(−δ))/δ|`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for [`Activation::tilde_sigma`].
pub const SERIES_TOL: f64 = 1e-12;
/// Default number of grid points for [`Activation::kink_alpha`].
pub const KINK_GRID: usize = 2001;

const MAX_SERIES_TERMS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// `βz + (1−β)[z]_+`.
    LeakyRelu { beta: f64 },
    /// `[z − β]_+`.
    BiasedRelu { beta: f64 },
    /// `erf(rz)`.
    ErfScaled { r: f64 },
    /// `½(z + ∫_0^z erf(rt) dt)`, a smooth ReLU that sharpens as `r` grows.
    SmoothedRelu { r: f64 },
    /// `Σ_{j=1}^{k} a_j z^j`; `coeffs[0]` is `a_1`.
    Polynomial { coeffs: Vec<f64> },
    /// `z^k`.
    Power { k: u32 },
}

impl Activation {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { beta } => {
                if z >= 0.0 {
                    z
                } else {
                    beta * z
                }
            }
            Activation::BiasedRelu { beta } => (z - beta).max(0.0),
            Activation::ErfScaled { r } => libm::erf(r * z),
            // Closed form of the integral; expm1 avoids cancellation near 0.
            Activation::SmoothedRelu { r } => {
                let rz = r * z;
                0.5 * (z + z * libm::erf(rz) + libm::expm1(-rz * rz) / (r * PI.sqrt()))
            }
            Activation::Polynomial { coeffs } => {
                // Horner on z·(a_1 + a_2 z + ...).
                z * coeffs.iter().rev().fold(0.0, |acc, &a| acc * z + a)
            }
            Activation::Power { k } => z.powi(*k as i32),
        }
    }

    /// Derivative, with the right-continuous choice (`0` for ReLU at `0`).
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { beta } => {
                if z > 0.0 {
                    1.0
                } else {
                    *beta
                }
            }
            Activation::BiasedRelu { beta } => {
                if z > *beta {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::ErfScaled { r } => 2.0 * r / PI.sqrt() * (-(r * z).powi(2)).exp(),
            Activation::SmoothedRelu { r } => 0.5 * (1.0 + libm::erf(r * z)),
            Activation::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (i, &a)| acc * z + (i as f64 + 1.0) * a),
            Activation::Power { k } => {
                if *k == 0 {
                    0.0
                } else {
                    *k as f64 * z.powi(*k as i32 - 1)
                }
            }
        }
    }

    /// An upper bound on the Lipschitz constant over `[lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let reach = lo.abs().max(hi.abs());
        let nearest = if lo <= 0.0 && hi >= 0.0 {
            0.0
        } else {
            lo.abs().min(hi.abs())
        };
        match self {
            Activation::Identity | Activation::Relu | Activation::BiasedRelu { .. } => 1.0,
            Activation::LeakyRelu { beta } => beta.abs().max(1.0),
            Activation::ErfScaled { r } => 2.0 * r.abs() / PI.sqrt() * (-(r * nearest).powi(2)).exp(),
            Activation::SmoothedRelu { r } => {
                if *r >= 0.0 {
                    0.5 * (1.0 + libm::erf(r * hi))
                } else {
                    0.5 * (1.0 + libm::erf(r * lo))
                }
            }
            Activation::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| (i as f64 + 1.0) * a.abs() * reach.powi(i as i32))
                .sum(),
            Activation::Power { k } => {
                if *k == 0 {
                    0.0
                } else {
                    *k as f64 * reach.powi(*k as i32 - 1)
                }
            }
        }
    }

    pub fn has_taylor(&self) -> bool {
        matches!(
            self,
            Activation::Identity
                | Activation::ErfScaled { .. }
                | Activation::SmoothedRelu { .. }
                | Activation::Polynomial { .. }
                | Activation::Power { .. }
        )
    }

    /// Taylor coefficient `a_j` of `σ(z) = Σ_{j≥1} a_j z^j`, for `j ≥ 1`.
    pub fn taylor_coeff(&self, j: usize) -> Option<f64> {
        if j == 0 {
            return self.has_taylor().then_some(0.0);
        }
        match self {
            Activation::Identity => Some(if j == 1 { 1.0 } else { 0.0 }),
            Activation::ErfScaled { r } => {
                if j % 2 == 0 {
                    return Some(0.0);
                }
                let h = (j - 1) / 2;
                let sign = if h % 2 == 0 { 1.0 } else { -1.0 };
                Some(sign * 2.0 / PI.sqrt() * r.powi(j as i32) / (ln_factorial(h).exp() * j as f64))
            }
            Activation::SmoothedRelu { r } => {
                if j == 1 {
                    return Some(0.5);
                }
                if j % 2 == 1 {
                    return Some(0.0);
                }
                let h = (j - 2) / 2;
                let sign = if h % 2 == 0 { 1.0 } else { -1.0 };
                Some(
                    sign / PI.sqrt() * r.powi(2 * h as i32 + 1)
                        / (ln_factorial(h).exp() * (2 * h + 1) as f64 * (2 * h + 2) as f64),
                )
            }
            Activation::Polynomial { coeffs } => Some(coeffs.get(j - 1).copied().unwrap_or(0.0)),
            Activation::Power { k } => Some(if j == *k as usize { 1.0 } else { 0.0 }),
            Activation::Relu | Activation::LeakyRelu { .. } | Activation::BiasedRelu { .. } => None,
        }
    }

    /// `σ̃(z) = Σ_{j≥1} |a_j| z^j` for `z ≥ 0`.
    ///
    /// Polynomial kinds are summed exactly. For the erf-based kinds the ratio
    /// of consecutive nonzero terms is explicit and eventually decreasing, so
    /// summation stops once the geometric tail bound `t/(1−q)` is below `tol`.
    pub fn tilde_sigma(&self, z: f64, tol: f64) -> Result<f64> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::InvalidParameter(format!("tilde_sigma needs finite z >= 0, got {z}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
        }
        let value = match self {
            Activation::Identity => z,
            Activation::Power { k } => z.powi(*k as i32),
            Activation::Polynomial { coeffs } => {
                z * coeffs.iter().rev().fold(0.0, |acc, &a| acc * z + a.abs())
            }
            Activation::ErfScaled { r } => {
                let x = r.abs() * z;
                // t_j = (2/√π) x^{2j+1} / (j!(2j+1))
                let first = 2.0 / PI.sqrt() * x;
                certified_sum(first, z, tol, |j| {
                    let j = j as f64;
                    x * x * (2.0 * j + 1.0) / ((j + 1.0) * (2.0 * j + 3.0))
                })?
            }
            Activation::SmoothedRelu { r } => {
                let x = r.abs() * z;
                // z/2 + (1/√π) Σ_j r^{2j+1} z^{2j+2} / (j!(2j+1)(2j+2))
                let first = r.abs() * z * z / (2.0 * PI.sqrt());
                0.5 * z
                    + certified_sum(first, z, tol, |j| {
                        let j = j as f64;
                        x * x * 2.0 * (2.0 * j + 1.0) / ((2.0 * j + 3.0) * (2.0 * j + 4.0))
                    })?
            }
            other => return Err(Error::NoTaylorSeries(other.to_string())),
        };
        if !value.is_finite() {
            return Err(Error::SeriesDivergence { z });
        }
        Ok(value)
    }

    /// Grid estimate of `inf_{δ∈(0,1)} |(σ(δ) + σ(−δ))/δ|` over a geometric
    /// grid spanning `[1e−8, 1 − 1e−8]`.
    pub fn kink_alpha(&self, grid_size: usize) -> f64 {
        let grid_size = grid_size.max(2);
        let (lo, hi) = (1e-8_f64, 1.0 - 1e-8);
        let log_step = (hi / lo).ln() / (grid_size - 1) as f64;
        (0..grid_size)
            .map(|i| {
                let delta = if i + 1 == grid_size {
                    hi
                } else {
                    lo * (log_step * i as f64).exp()
                };
                ((self.eval(delta) + self.eval(-delta)) / delta).abs()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Closed-form cap on `σ̃(z)` for the erf-based kinds:
    /// `2rz/√π·exp((rz)²)` and `z/2 + rz²/√π·exp((rz)²)`.
    pub fn closed_form_tilde_cap(&self, z: f64) -> Option<f64> {
        match self {
            Activation::ErfScaled { r } => {
                let rz = r.abs() * z;
                Some(2.0 * rz / PI.sqrt() * (rz * rz).exp())
            }
            Activation::SmoothedRelu { r } => {
                let rz = r.abs() * z;
                Some(0.5 * z + r.abs() * z * z / PI.sqrt() * (rz * rz).exp())
            }
            _ => None,
        }
    }
}

/// Sums `t_0 + t_1 + …` with `t_{j+1} = t_j · ratio(j)`, where `ratio` is
/// nonincreasing in `j`, until the geometric tail bound is below `tol`.
fn certified_sum(first: f64, z: f64, tol: f64, ratio: impl Fn(usize) -> f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut term = first;
    for j in 0..MAX_SERIES_TERMS {
        sum += term;
        let next = term * ratio(j);
        let q = ratio(j + 1);
        if q < 1.0 {
            let tail = next / (1.0 - q);
            if tail < tol {
                return Ok(sum);
            }
        }
        if !sum.is_finite() || !next.is_finite() {
            return Err(Error::SeriesDivergence { z });
        }
        term = next;
    }
    Err(Error::SeriesDivergence { z })
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu { beta } => write!(f, "leaky_relu:{beta}"),
            Activation::BiasedRelu { beta } => write!(f, "biased_relu:{beta}"),
            Activation::ErfScaled { r } => write!(f, "erf:{r}"),
            Activation::SmoothedRelu { r } => write!(f, "smoothed_relu:{r}"),
            Activation::Polynomial { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(|c| c.to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
            Activation::Power { k } => write!(f, "power:{k}"),
        }
    }
}

/// Parses `identity`, `relu`, `leaky_relu:β`, `biased_relu:β`, `erf:r`,
/// `smoothed_relu:r`, `poly:a1,a2,…` and `power:k`.
impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let real = |what: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::InvalidParameter(format!("{what} needs a parameter, e.g. {what}:1")))?;
            a.parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad {what} parameter {a:?}: {e}")))
        };
        match name {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu { beta: real(name)? }),
            "biased_relu" => Ok(Activation::BiasedRelu { beta: real(name)? }),
            "erf" | "erf_scaled" => {
                let r = real(name)?;
                if !(r > 0.0) {
                    return Err(Error::InvalidParameter(format!("erf scale must be positive, got {r}")));
                }
                Ok(Activation::ErfScaled { r })
            }
            "smoothed_relu" => {
                let r = real(name)?;
                if !(r > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "smoothed_relu scale must be positive, got {r}"
                    )));
                }
                Ok(Activation::SmoothedRelu { r })
            }
            "poly" | "polynomial" => {
                let a = arg.ok_or_else(|| Error::InvalidParameter("poly needs coefficients a1,a2,…".into()))?;
                let coeffs = a
                    .split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidParameter(format!("bad coefficient {c:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Activation::Polynomial { coeffs })
            }
            "power" => {
                let a = arg.ok_or_else(|| Error::InvalidParameter("power needs an exponent".into()))?;
                let k = a
                    .parse::<u32>()
                    .map_err(|e| Error::InvalidParameter(format!("bad exponent {a:?}: {e}")))?;
                if k == 0 {
                    return Err(Error::InvalidParameter("power exponent must be >= 1".into()));
                }
                Ok(Activation::Power { k })
            }
            other => Err(Error::InvalidParameter(format!("unknown activation {other:?}"))),
        }
    }
}
