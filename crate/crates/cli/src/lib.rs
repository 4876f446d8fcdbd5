//! Command-line harness for the `caplab` library.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use toml::Table;

use commands::{Outcome, EXIT_USAGE};
use config::{flag_value, merge, parse_assignments, parse_constants, ExperimentConfig, Format, Globals};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}: {1}")]
    Library(&'static str, caplab::Error),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Parser)]
#[command(name = "caplab", version, about = "Capacity bounds, shattering certificates and Rademacher estimates")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed (default: config file, then $CAPLAB_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Largest number of points whose labelings are enumerated.
    #[arg(long = "enum-cap", global = true)]
    pub enum_cap: Option<usize>,
    /// Constant overrides, `name=value` (repeatable, comma lists allowed).
    #[arg(long, global = true)]
    pub constants: Vec<String>,
    /// Print the wall-clock time to stderr.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate sample-complexity bounds over a parameter grid.
    Bounds(BoundsArgs),
    /// Build a shattering construction and verify every labeling.
    Shatter(ShatterArgs),
    /// Estimate the empirical Rademacher complexity of a class.
    Estimate(EstimateArgs),
    /// Run another command over a grid of parameter values.
    Sweep(SweepArgs),
    /// Sample activation functions on an interval.
    ActivationPlot(PlotArgs),
}

/// Generic `key=value` parameter overrides accepted by every command.
#[derive(Debug, Args)]
pub struct SetArgs {
    /// Set any parameter, `key=value` (repeatable).
    #[arg(long = "set", allow_hyphen_values = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Bound kind(s), comma separated.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    #[arg(long = "B")]
    pub big_b: Option<String>,
    #[arg(long)]
    pub bx: Option<String>,
    #[arg(long = "L")]
    pub lip: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub depth: Option<String>,
    #[arg(long)]
    pub ophi: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Debug, Args)]
pub struct ShatterArgs {
    /// spectral, frobenius or conv.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    #[arg(long = "B")]
    pub big_b: Option<String>,
    #[arg(long)]
    pub bx: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long = "max-points")]
    pub max_points: Option<String>,
    #[arg(long = "max-tries")]
    pub max_tries: Option<String>,
    /// Also write the certificate JSON to this file.
    #[arg(long)]
    pub certificate: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// dense, conv_linear, conv_pool or deep_power.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    #[arg(long = "B")]
    pub big_b: Option<String>,
    #[arg(long)]
    pub bx: Option<String>,
    /// spectral or frobenius.
    #[arg(long)]
    pub norm: Option<String>,
    /// Hidden width(s), comma separated.
    #[arg(long)]
    pub width: Option<String>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub points: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub restarts: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long = "step-size")]
    pub step_size: Option<String>,
    /// linear, smooth or frobenius-curve.
    #[arg(long)]
    pub compare: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Activation(s), comma separated.
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Command to run at each grid point.
    #[arg(long)]
    pub command: Option<String>,
    /// Grid axis, `key=v1,v2,...` (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Vec<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

/// Flags that were given, as a TOML table. Activation specs keep their
/// commas only where a list of activations is expected.
fn overrides(pairs: &[(&str, &Option<String>)], set: &SetArgs) -> Result<Table, CliError> {
    let mut table = Table::new();
    for (key, value) in pairs {
        if let Some(v) = value {
            table.insert(key.to_string(), flag_value(v));
        }
    }
    Ok(merge(table, &parse_assignments(&set.set)?))
}

/// Single activation flags are kept verbatim so `poly:1,2` stays one value.
fn verbatim(table: &mut Table, key: &str, value: &Option<String>) {
    if let Some(v) = value {
        table.insert(key.to_string(), toml::Value::String(v.clone()));
    }
}

fn resolve_globals(args: &GlobalArgs, file: &ExperimentConfig) -> Result<Globals, CliError> {
    let env_seed = match std::env::var(config::SEED_ENV) {
        Ok(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("{} must be an unsigned integer, got {s:?}", config::SEED_ENV)))?,
        ),
        Err(_) => None,
    };
    let mut constants = file.constants.clone();
    constants.extend(parse_constants(&args.constants)?);
    Ok(Globals {
        seed: args.seed.or(file.seed).or(env_seed).unwrap_or(config::DEFAULT_SEED),
        format: args.format.or(file.format).unwrap_or_default(),
        out: args.out.clone().or_else(|| file.out.clone()),
        enum_cap: args
            .enum_cap
            .or(file.enum_cap)
            .unwrap_or(caplab::shattering::DEFAULT_ENUM_CAP),
        constants,
    })
}

/// Parses arguments, runs the command and writes the output. Returns the
/// process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return e.exit_code();
        }
    };
    let start = Instant::now();
    let result = execute(&cli).and_then(|(outcome, globals)| {
        emit(&outcome, &globals, stdout)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            for w in &outcome.report.warnings {
                let _ = writeln!(stderr, "warning: {w}");
            }
            if cli.global.timing {
                let _ = writeln!(stderr, "elapsed: {:.3} s", start.elapsed().as_secs_f64());
            }
            outcome.exit
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn execute(cli: &Cli) -> Result<(Outcome, Globals), CliError> {
    let file = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let globals = resolve_globals(&cli.global, &file)?;
    let outcome = match &cli.command {
        Command::Bounds(a) => {
            let mut o = overrides(
                &[
                    ("kind", &a.kind),
                    ("b", &a.b),
                    ("B", &a.big_b),
                    ("bx", &a.bx),
                    ("L", &a.lip),
                    ("n", &a.n),
                    ("d", &a.d),
                    ("eps", &a.eps),
                    ("k", &a.k),
                    ("depth", &a.depth),
                    ("ophi", &a.ophi),
                    ("alpha", &a.alpha),
                ],
                &a.set,
            )?;
            verbatim(&mut o, "sigma", &a.sigma);
            commands::run_command("bounds", merge(file.section("bounds"), &o), &globals)?
        }
        Command::Shatter(a) => {
            let mut o = overrides(
                &[
                    ("kind", &a.kind),
                    ("b", &a.b),
                    ("B", &a.big_b),
                    ("bx", &a.bx),
                    ("n", &a.n),
                    ("d", &a.d),
                    ("eps", &a.eps),
                    ("max_points", &a.max_points),
                    ("max_tries", &a.max_tries),
                ],
                &a.set,
            )?;
            verbatim(&mut o, "sigma", &a.sigma);
            verbatim(&mut o, "certificate", &a.certificate);
            commands::run_command("shatter", merge(file.section("shatter"), &o), &globals)?
        }
        Command::Estimate(a) => {
            let mut o = overrides(
                &[
                    ("family", &a.family),
                    ("b", &a.b),
                    ("B", &a.big_b),
                    ("bx", &a.bx),
                    ("norm", &a.norm),
                    ("width", &a.width),
                    ("m", &a.m),
                    ("d", &a.d),
                    ("trials", &a.trials),
                    ("restarts", &a.restarts),
                    ("steps", &a.steps),
                    ("step_size", &a.step_size),
                    ("compare", &a.compare),
                ],
                &a.set,
            )?;
            verbatim(&mut o, "sigma", &a.sigma);
            verbatim(&mut o, "points", &a.points);
            commands::run_command("estimate", merge(file.section("estimate"), &o), &globals)?
        }
        Command::ActivationPlot(a) => {
            let mut o = overrides(
                &[("from", &a.from), ("to", &a.to), ("samples", &a.samples)],
                &a.set,
            )?;
            if let Some(s) = &a.sigma {
                let list = split_activations(s);
                o.insert(
                    "sigma".into(),
                    toml::Value::Array(list.into_iter().map(toml::Value::String).collect()),
                );
            }
            commands::run_command("activation-plot", merge(file.section("activation-plot"), &o), &globals)?
        }
        Command::Sweep(a) => {
            let section = file.sweep.clone().unwrap_or_default();
            let command = a
                .command
                .clone()
                .or(section.command)
                .ok_or_else(|| CliError::Usage("sweep needs --command".into()))?;
            let mut grid = section.grid;
            for axis in &a.grid {
                let (key, values) = axis
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("expected --grid key=v1,v2, got {axis:?}")))?;
                let values = match flag_value(values) {
                    toml::Value::Array(v) => v,
                    one => vec![one],
                };
                grid.insert(key.trim().to_string(), values);
            }
            let base = merge(file.section(&command), &parse_assignments(&a.set.set)?);
            commands::cmd_sweep(&command, base, &grid, &globals)?
        }
    };
    Ok((outcome, globals))
}

/// Splits a comma list of activations, keeping polynomial coefficient lists
/// (`poly:1,2`) together.
pub fn split_activations(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for piece in text.split(',') {
        let continues_poly = piece.trim().parse::<f64>().is_ok()
            && out.last().is_some_and(|last| last.starts_with("poly:"));
        if continues_poly {
            let last = out.last_mut().expect("checked");
            last.push(',');
            last.push_str(piece.trim());
        } else {
            out.push(piece.trim().to_string());
        }
    }
    out
}

fn emit(outcome: &Outcome, globals: &Globals, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = match (globals.format, &outcome.json_override) {
        (Format::Json, Some(json)) => json.clone(),
        _ => outcome.report.render(globals.format),
    };
    match &globals.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write output: {e}"))),
    }
}
