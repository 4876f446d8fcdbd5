//! The subcommands. Each takes a merged parameter table and the resolved
//! globals, and returns a report plus its exit status.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use toml::Table;

use caplab::activations::{Activation, KINK_GRID, SERIES_TOL};
use caplab::bounds::{self, BoundKind, BoundQuery};
use caplab::networks::{PatchSet, Pooling};
use caplab::rademacher::{self, EstimateOptions, Family, HypothesisSpec};
use caplab::shattering::{
    self, ConstructionKind, FrobeniusOptions, NormKind, ShatterCertificate, SpectralOptions, VerifyOptions,
};

use crate::config::{one_or_many, parse_with, typed, Globals};
use crate::report::{num, Report};
use crate::CliError;

/// Exit status for a finished run whose checks all passed.
pub const EXIT_OK: i32 = 0;
/// Exit status when a certificate or ordering check failed.
pub const EXIT_FAIL: i32 = 1;
/// Exit status for usage errors and infeasible requests.
pub const EXIT_USAGE: i32 = 2;

pub struct Outcome {
    pub report: Report,
    /// Replaces the rendered report in JSON mode (the shatter certificate).
    pub json_override: Option<String>,
    pub exit: i32,
}

impl Outcome {
    fn plain(report: Report, exit: i32) -> Self {
        Outcome {
            report,
            json_override: None,
            exit,
        }
    }
}

pub const COMMANDS: [&str; 4] = ["bounds", "shatter", "estimate", "activation-plot"];

pub fn run_command(command: &str, table: Table, globals: &Globals) -> Result<Outcome, CliError> {
    match command {
        "bounds" => cmd_bounds(typed(table, "bounds")?, globals),
        "shatter" => cmd_shatter(typed(table, "shatter")?, globals),
        "estimate" => cmd_estimate(typed(table, "estimate")?, globals),
        "activation-plot" | "activation_plot" => cmd_activation_plot(typed(table, "activation-plot")?, globals),
        other => Err(CliError::Usage(format!(
            "unknown command {other:?}; expected one of {}",
            COMMANDS.join(", ")
        ))),
    }
}

fn ones() -> Vec<f64> {
    vec![1.0]
}
fn one_usize() -> Vec<usize> {
    vec![1]
}
fn one_u32() -> Vec<u32> {
    vec![1]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsParams {
    #[serde(deserialize_with = "one_or_many")]
    pub kind: Vec<String>,
    #[serde(default = "ones", deserialize_with = "one_or_many")]
    pub b: Vec<f64>,
    #[serde(rename = "B", default = "ones", deserialize_with = "one_or_many")]
    pub big_b: Vec<f64>,
    #[serde(default = "ones", deserialize_with = "one_or_many")]
    pub bx: Vec<f64>,
    #[serde(rename = "L", default = "ones", deserialize_with = "one_or_many")]
    pub lip: Vec<f64>,
    #[serde(default = "one_usize", deserialize_with = "one_or_many")]
    pub n: Vec<usize>,
    #[serde(default = "one_usize", deserialize_with = "one_or_many")]
    pub d: Vec<usize>,
    #[serde(default = "ones", deserialize_with = "one_or_many")]
    pub eps: Vec<f64>,
    #[serde(default = "one_u32", deserialize_with = "one_or_many")]
    pub k: Vec<u32>,
    #[serde(default = "one_u32", deserialize_with = "one_or_many")]
    pub depth: Vec<u32>,
    #[serde(default = "one_usize", deserialize_with = "one_or_many")]
    pub ophi: Vec<usize>,
    /// Defaults to the activation's kink measure, or 1 without one.
    #[serde(default, deserialize_with = "opt_many")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<String>,
}

fn opt_many<'de, D>(d: D) -> Result<Option<Vec<f64>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    one_or_many(d).map(Some)
}

/// Every index tuple of a grid with the given axis lengths, last axis
/// fastest.
pub fn grid_indices(lens: &[usize]) -> Vec<Vec<usize>> {
    if lens.contains(&0) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx = vec![0; lens.len()];
    loop {
        out.push(idx.clone());
        let mut axis = lens.len();
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < lens[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

pub fn cmd_bounds(p: BoundsParams, g: &Globals) -> Result<Outcome, CliError> {
    let kinds: Vec<BoundKind> = p
        .kind
        .iter()
        .map(|k| parse_with(k, "bound kind"))
        .collect::<Result<_, _>>()?;
    let sigma: Option<Activation> = p.sigma.as_deref().map(|s| parse_with(s, "activation")).transpose()?;
    let alpha = p.alpha.clone().unwrap_or_else(|| {
        vec![sigma.as_ref().map_or(1.0, |s| s.kink_alpha(KINK_GRID))]
    });
    let mut report = Report::new(
        "bounds",
        serde_json::to_value(&p).expect("params serialize"),
        g.seed,
        &[
            "kind", "b", "B", "b_x", "L", "n", "d", "eps", "k", "depth", "o_phi", "alpha", "m", "iterations", "valid",
        ],
    );
    let lens = [
        kinds.len(),
        p.b.len(),
        p.big_b.len(),
        p.bx.len(),
        p.lip.len(),
        p.n.len(),
        p.d.len(),
        p.eps.len(),
        p.k.len(),
        p.depth.len(),
        p.ophi.len(),
        alpha.len(),
    ];
    for i in grid_indices(&lens) {
        let q = BoundQuery {
            b: p.b[i[1]],
            big_b: p.big_b[i[2]],
            b_x: p.bx[i[3]],
            lip: p.lip[i[4]],
            n: p.n[i[5]],
            d: p.d[i[6]],
            eps: p.eps[i[7]],
            k: p.k[i[8]],
            depth: p.depth[i[9]],
            o_phi: p.ophi[i[10]],
            alpha: alpha[i[11]],
            constants: g.constants.clone(),
        };
        let kind = kinds[i[0]];
        let r = bounds::evaluate(kind, &q, sigma.as_ref()).map_err(|e| CliError::Library(kind.name(), e))?;
        report.push(vec![
            json!(kind.name()),
            num(q.b),
            num(q.big_b),
            num(q.b_x),
            num(q.lip),
            json!(q.n),
            json!(q.d),
            num(q.eps),
            json!(q.k),
            json!(q.depth),
            json!(q.o_phi),
            num(q.alpha),
            num(r.value),
            json!(r.iterations),
            r.valid.map_or(Value::Null, Value::Bool),
        ]);
    }
    Ok(Outcome::plain(report, EXIT_OK))
}

fn one() -> f64 {
    1.0
}
fn relu() -> String {
    "relu".into()
}
fn default_tries() -> usize {
    caplab::linalg::DEFAULT_MAX_TRIES
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShatterParams {
    pub kind: ConstructionKind,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(rename = "B", default = "one")]
    pub big_b: f64,
    #[serde(default = "one")]
    pub bx: f64,
    pub n: usize,
    /// Input dimension of the sparse construction.
    #[serde(default)]
    pub d: Option<usize>,
    pub eps: f64,
    #[serde(default = "relu")]
    pub sigma: String,
    #[serde(default = "one")]
    pub c_spec: f64,
    #[serde(default)]
    pub max_points: Option<usize>,
    #[serde(default = "default_tries")]
    pub max_tries: usize,
    /// Also write the certificate JSON here.
    #[serde(default)]
    pub certificate: Option<PathBuf>,
    /// Store every labeling's network in the certificate.
    #[serde(default)]
    pub keep_networks: bool,
}

pub const SHATTER_COLUMNS: [&str; 12] = [
    "kind",
    "m",
    "d",
    "n",
    "eps",
    "threshold",
    "labelings_checked",
    "max_norm_seen",
    "min_margin_seen",
    "failures",
    "passed",
    "seed",
];

pub fn cmd_shatter(p: ShatterParams, g: &Globals) -> Result<Outcome, CliError> {
    let lib = |e| CliError::Library("shatter", e);
    let inst = match p.kind {
        ConstructionKind::Conv => shattering::conv_shatter_instance(p.big_b, p.bx, p.eps, p.n).map_err(lib)?,
        ConstructionKind::Spectral => {
            let sigma: Activation = parse_with(&p.sigma, "activation")?;
            let opts = SpectralOptions {
                c_spec: p.c_spec,
                seed: g.seed,
                max_tries: p.max_tries,
                max_points: p.max_points,
            };
            shattering::spectral_shatter_instance(p.b, p.big_b, p.bx, p.n, p.eps, &sigma, &opts).map_err(lib)?
        }
        ConstructionKind::Frobenius => {
            let d = p
                .d
                .ok_or_else(|| CliError::Usage("the frobenius construction needs d".into()))?;
            let defaults = shattering::frobenius_default_constants();
            let opts = FrobeniusOptions {
                constants: g
                    .constants
                    .iter()
                    .filter(|(k, _)| defaults.contains_key(*k))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
                seed: g.seed,
                max_tries: p.max_tries,
                max_points: p.max_points,
            };
            shattering::frobenius_shatter_instance(p.b, p.big_b, p.bx, p.n, d, p.eps, &opts).map_err(lib)?
        }
    };
    let cert = shattering::verify_shattering_with(
        &inst,
        &VerifyOptions {
            enum_cap: g.enum_cap,
            keep_networks: p.keep_networks,
        },
    )
    .map_err(lib)?;
    let cert_json = certificate_json(&cert);
    if let Some(path) = &p.certificate {
        std::fs::write(path, &cert_json)
            .map_err(|e| CliError::Io(format!("cannot write certificate {}: {e}", path.display())))?;
    }
    let mut report = Report::new(
        "shatter",
        serde_json::to_value(&p).expect("params serialize"),
        g.seed,
        &SHATTER_COLUMNS,
    );
    report.warnings = cert.warnings.clone();
    report.push(vec![
        serde_json::to_value(cert.kind).expect("kind serializes"),
        json!(cert.m),
        json!(cert.d),
        json!(cert.n),
        num(cert.eps),
        num(cert.threshold),
        json!(cert.labelings_checked),
        num(cert.max_norm_seen),
        num(cert.min_margin_seen),
        json!(cert.failures.len()),
        json!(cert.passed),
        cert.seed.map_or(Value::Null, |s| json!(s)),
    ]);
    let exit = if cert.passed { EXIT_OK } else { EXIT_FAIL };
    Ok(Outcome {
        report,
        json_override: Some(cert_json),
        exit,
    })
}

pub fn certificate_json(cert: &ShatterCertificate) -> String {
    let mut s = serde_json::to_string_pretty(cert).expect("certificates serialize");
    s.push('\n');
    s
}

pub fn parse_certificate(text: &str) -> Result<ShatterCertificate, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid certificate: {e}")))
}

fn dense() -> String {
    "dense".into()
}
fn spectral() -> String {
    "spectral".into()
}
fn four() -> Vec<usize> {
    vec![4]
}
fn sixteen() -> usize {
    16
}
fn max_pool() -> String {
    "max".into()
}
fn two() -> u32 {
    2
}
fn one_layer() -> usize {
    1
}
fn stride_one() -> usize {
    1
}
fn trials() -> usize {
    rademacher::DEFAULT_TRIALS
}
fn restarts() -> usize {
    rademacher::DEFAULT_RESTARTS
}
fn steps() -> usize {
    rademacher::DEFAULT_STEPS
}
fn step_size() -> f64 {
    rademacher::DEFAULT_STEP_SIZE
}
fn decay() -> f64 {
    rademacher::DEFAULT_DECAY
}
fn patience() -> usize {
    rademacher::DEFAULT_PATIENCE
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateParams {
    #[serde(default = "dense")]
    pub family: String,
    #[serde(default = "relu")]
    pub sigma: String,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(rename = "B", default = "one")]
    pub big_b: f64,
    /// Radius of the random points.
    #[serde(default = "one")]
    pub bx: f64,
    #[serde(default = "spectral")]
    pub norm: String,
    #[serde(default = "four", deserialize_with = "one_or_many")]
    pub width: Vec<usize>,
    /// Number of random points.
    #[serde(default = "sixteen")]
    pub m: usize,
    #[serde(default = "sixteen")]
    pub d: usize,
    /// JSON file holding a list of points; replaces the random points.
    #[serde(default)]
    pub points: Option<PathBuf>,
    /// Seed of the random points; defaults to the global seed plus one.
    #[serde(default)]
    pub points_seed: Option<u64>,
    #[serde(default)]
    pub patch_size: Option<usize>,
    #[serde(default = "stride_one")]
    pub patch_stride: usize,
    #[serde(default = "max_pool")]
    pub pooling: String,
    #[serde(default = "two")]
    pub k: u32,
    #[serde(default = "one_layer")]
    pub depth: usize,
    #[serde(default = "trials")]
    pub trials: usize,
    #[serde(default = "restarts")]
    pub restarts: usize,
    #[serde(default = "steps")]
    pub steps: usize,
    #[serde(default = "step_size")]
    pub step_size: f64,
    #[serde(default = "decay")]
    pub decay: f64,
    #[serde(default = "patience")]
    pub patience: usize,
    #[serde(default)]
    pub exact_signs: bool,
    /// `linear`, `smooth` or `frobenius-curve`.
    #[serde(default)]
    pub compare: Option<String>,
}

pub const ESTIMATE_COLUMNS: [&str; 13] = [
    "family",
    "width",
    "m",
    "d",
    "mean",
    "stderr",
    "trials",
    "restarts",
    "abandoned_restarts",
    "bound",
    "check",
    "monotone",
    "signs_enumerated",
];

/// Ceiling for `compare`, or `None` when no comparison was requested.
fn comparison(
    compare: Option<&str>,
    sigma: &Activation,
    b: f64,
    big_b: f64,
    b_x: f64,
    m: usize,
) -> Result<Option<f64>, CliError> {
    let root_m = (m as f64).sqrt();
    let Some(name) = compare else { return Ok(None) };
    let value = match name {
        "linear" => b * big_b * b_x / root_m,
        "smooth" => {
            let t = sigma
                .tilde_sigma(big_b * b_x, SERIES_TOL)
                .map_err(|e| CliError::Library("estimate", e))?;
            b * t / root_m
        }
        "frobenius-curve" => {
            let lip = sigma.lipschitz_on(-big_b * b_x, big_b * b_x);
            2.0 * b * big_b * b_x * lip * (1.0 + (m as f64).ln().powf(1.5)) / root_m
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown comparison {other:?}; expected linear, smooth or frobenius-curve"
            )))
        }
    };
    Ok(Some(value))
}

pub fn cmd_estimate(p: EstimateParams, g: &Globals) -> Result<Outcome, CliError> {
    let lib = |e| CliError::Library("estimate", e);
    let family: Family = parse_with(&p.family, "family")?;
    let sigma: Activation = parse_with(&p.sigma, "activation")?;
    let norm: NormKind = parse_with(&p.norm, "norm kind")?;
    if p.trials == 0 {
        return Err(CliError::Usage("trials must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    let points: Vec<Vec<f64>> = match &p.points {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read points {}: {e}", path.display())))?;
            let pts: Vec<Vec<f64>> = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("points file must hold a list of vectors: {e}")))?;
            if pts.iter().any(|x| caplab::linalg::norm(x) > p.bx * (1.0 + 1e-9)) {
                warnings.push(format!("some points have norm above bx = {}", p.bx));
            }
            pts
        }
        None => rademacher::sphere_points(p.m, p.d, p.bx, p.points_seed.unwrap_or(g.seed.wrapping_add(1))),
    };
    let (m, d) = (points.len(), points.first().map_or(0, Vec::len));
    let patches = match family {
        Family::ConvLinear | Family::ConvPool => {
            let size = p
                .patch_size
                .ok_or_else(|| CliError::Usage("convolutional families need patch_size".into()))?;
            Some(PatchSet::strided_1d(d, size, p.patch_stride).map_err(lib)?)
        }
        _ => None,
    };
    let pooling = match p.pooling.as_str() {
        "max" => Pooling::Max,
        "average" => Pooling::Average,
        other => return Err(CliError::Usage(format!("unknown pooling {other:?}; expected max or average"))),
    };
    let bound = comparison(p.compare.as_deref(), &sigma, p.b, p.big_b, p.bx, m)?;
    let opts = EstimateOptions {
        trials: p.trials,
        restarts: p.restarts,
        steps: p.steps,
        step_size: p.step_size,
        decay: p.decay,
        patience: p.patience,
        seed: g.seed,
        exact_signs: p.exact_signs,
    };

    let mut estimates = Vec::new();
    for &width in &p.width {
        let spec = HypothesisSpec {
            family,
            sigma: sigma.clone(),
            b: p.b,
            big_b: p.big_b,
            norm,
            width,
            patches: patches.clone(),
            pooling: pooling.clone(),
            k: p.k,
            depth: p.depth,
        };
        estimates.push((width, rademacher::estimate(&points, &spec, &opts).map_err(lib)?));
    }
    let monotone = (estimates.len() > 1).then(|| {
        estimates
            .windows(2)
            .all(|w| w[1].1.mean + 2.0 * w[1].1.stderr.max(w[0].1.stderr) >= w[0].1.mean)
    });

    let mut report = Report::new(
        "estimate",
        serde_json::to_value(&p).expect("params serialize"),
        g.seed,
        &ESTIMATE_COLUMNS,
    );
    report.warnings = warnings;
    let mut exit = EXIT_OK;
    for (width, est) in &estimates {
        let check = bound.map(|c| est.mean <= c + 3.0 * est.stderr);
        if check == Some(false) {
            exit = EXIT_FAIL;
        }
        report.push(vec![
            json!(p.family),
            json!(width),
            json!(m),
            json!(d),
            num(est.mean),
            num(est.stderr),
            json!(est.trials),
            json!(est.restarts_per_trial),
            json!(est.abandoned_restarts),
            bound.map_or(Value::Null, num),
            check.map_or(Value::Null, |ok| json!(if ok { "PASS" } else { "FAIL" })),
            monotone.map_or(Value::Null, Value::Bool),
            json!(est.signs_enumerated),
        ]);
    }
    Ok(Outcome::plain(report, exit))
}

fn default_curves() -> Vec<String> {
    vec!["erf:1".into(), "smoothed_relu:1".into()]
}
fn minus_three() -> f64 {
    -3.0
}
fn three() -> f64 {
    3.0
}
fn samples() -> usize {
    121
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotParams {
    #[serde(default = "default_curves", deserialize_with = "one_or_many")]
    pub sigma: Vec<String>,
    #[serde(default = "minus_three")]
    pub from: f64,
    #[serde(default = "three")]
    pub to: f64,
    #[serde(default = "samples")]
    pub samples: usize,
}

/// `samples` evenly spaced values from `from` to `to` inclusive.
pub fn sample_grid(from: f64, to: f64, samples: usize) -> Vec<f64> {
    match samples {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..samples)
            .map(|i| from + (to - from) * i as f64 / (samples - 1) as f64)
            .collect(),
    }
}

pub fn cmd_activation_plot(p: PlotParams, g: &Globals) -> Result<Outcome, CliError> {
    let curves: Vec<Activation> = p
        .sigma
        .iter()
        .map(|s| parse_with(s, "activation"))
        .collect::<Result<_, _>>()?;
    if !p.from.is_finite() || !p.to.is_finite() {
        return Err(CliError::Usage("plot range must be finite".into()));
    }
    let mut columns = vec!["z".to_string()];
    columns.extend(curves.iter().map(|c| c.to_string()));
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut report = Report::new(
        "activation-plot",
        serde_json::to_value(&p).expect("params serialize"),
        g.seed,
        &column_refs,
    );
    for z in sample_grid(p.from, p.to, p.samples) {
        let mut row = vec![num(z)];
        row.extend(curves.iter().map(|c| num(c.eval(z))));
        report.push(row);
    }
    Ok(Outcome::plain(report, EXIT_OK))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepEcho<'a> {
    pub command: &'a str,
    pub grid: &'a std::collections::BTreeMap<String, Vec<toml::Value>>,
    pub base: &'a Table,
}

/// Runs `command` once per grid point. Grid keys become leading
/// `sweep_<key>` columns;
/// the key `seed` replaces the global seed.
pub fn cmd_sweep(
    command: &str,
    base: Table,
    grid: &std::collections::BTreeMap<String, Vec<toml::Value>>,
    g: &Globals,
) -> Result<Outcome, CliError> {
    if !COMMANDS.contains(&command) {
        return Err(CliError::Usage(format!(
            "sweep needs a command among {}",
            COMMANDS.join(", ")
        )));
    }
    let keys: Vec<&String> = grid.keys().collect();
    let lens: Vec<usize> = keys.iter().map(|k| grid[*k].len()).collect();
    let echo = serde_json::to_value(SweepEcho {
        command,
        grid,
        base: &base,
    })
    .map_err(|e| CliError::Usage(format!("sweep parameters are not representable: {e}")))?;
    let mut report: Option<Report> = None;
    let mut exit = EXIT_OK;
    let mut warnings = Vec::new();
    for idx in grid_indices(&lens) {
        let mut table = base.clone();
        let mut globals = g.clone();
        let mut lead = Vec::new();
        for (axis, key) in keys.iter().enumerate() {
            let value = grid[*key][idx[axis]].clone();
            lead.push(serde_json::to_value(&value).unwrap_or(Value::Null));
            if key.as_str() == "seed" {
                let seed = value
                    .as_integer()
                    .filter(|s| *s >= 0)
                    .ok_or_else(|| CliError::Usage("seed grid values must be nonnegative integers".into()))?;
                globals.seed = seed as u64;
            } else {
                table.insert(key.to_string(), value);
            }
        }
        let out = run_command(command, table, &globals)?;
        exit = exit.max(out.exit);
        warnings.extend(out.report.warnings.iter().cloned());
        let rep = report.get_or_insert_with(|| {
            let mut cols: Vec<String> = keys.iter().map(|k| format!("sweep_{k}")).collect();
            cols.extend(out.report.columns.iter().cloned());
            let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            Report::new("sweep", echo.clone(), g.seed, &refs)
        });
        for row in out.report.rows {
            let mut full = lead.clone();
            full.extend(row);
            rep.push(full);
        }
    }
    let mut report = report.unwrap_or_else(|| Report::new("sweep", echo, g.seed, &[]));
    warnings.dedup();
    report.warnings = warnings;
    Ok(Outcome::plain(report, exit))
}
