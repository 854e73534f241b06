//! `gme`: certified bounds on genuine three-qubit entanglement from one
//! operator expectation.

mod output;
mod spec;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gme_core::convexroof::{convex_roof, RoofConfig, RoofResult};
use gme_core::estimators::{calibrate, OptimizerConfig};
use gme_core::lab::StateId;
use gme_core::measures::MeasureKind;
use gme_core::qstate::{required_settings, SUPPORT_TOL};
use gme_core::reproduce::{self, PipelineConfig, TunedPair, DEFAULT_P_GRID};
use serde::Serialize;

use output::{manifest_path, sig12, Csv, RunManifest};
use spec::{read_json, OperatorSpec, StateSpec};

#[derive(Parser)]
#[command(
    name = "gme",
    version,
    about = "Bounds on genuine three-qubit entanglement from a single witness expectation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the fiber constants of an operator.
    Calibrate(CalibrateArgs),
    /// Regenerate the benchmark bound tables from simulated data.
    #[command(subcommand)]
    Reproduce(Reproduce),
    /// Minimal measurement settings needed to estimate an operator.
    Settings {
        #[arg(long)]
        operator: PathBuf,
    },
    /// Convex-roof value of a state.
    Roof(RoofArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    measure: MeasureKind,
    #[arg(long)]
    operator: PathBuf,
    #[arg(long)]
    restarts: Option<usize>,
    /// Ten times the restarts.
    #[arg(long)]
    audit: bool,
    #[arg(long)]
    screening: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long, env = "GME_SEED")]
    seed: Option<u64>,
    /// Write the calibration here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Reproduce {
    /// Bounds for a benchmark pure state ("all" for every row).
    Pure {
        #[arg(long)]
        state: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the tuned operators and calibrations as JSON.
        #[arg(long)]
        details: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Bounds for the Bisep/W mixtures on a grid of mixing fractions.
    Mixed {
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        details: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config JSON, or the manifest of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "GME_SEED")]
    seed: Option<u64>,
    /// Restrict to one measure; both by default.
    #[arg(long)]
    measure: Option<MeasureKind>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    mc_iterations: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    screening: Option<usize>,
    #[arg(long)]
    roof_starts: Option<usize>,
}

#[derive(Args)]
struct RoofArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    measure: MeasureKind,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long, env = "GME_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// How a command failed, which decides the exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

enum Outcome {
    Clean,
    Caveat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Reproduce(Reproduce::Pure {
            state,
            out,
            details,
            pipeline,
        }) => cmd_reproduce_pure(&state, &out, details.as_deref(), &pipeline),
        Command::Reproduce(Reproduce::Mixed {
            grid,
            out,
            details,
            pipeline,
        }) => cmd_reproduce_mixed(grid, &out, details.as_deref(), &pipeline),
        Command::Settings { operator } => cmd_settings(&operator),
        Command::Roof(args) => cmd_roof(args),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Caveat) => ExitCode::from(3),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, manifest: Option<RunManifest>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => {
            let mut manifest = manifest.ok_or_else(|| anyhow!("missing manifest"))?;
            manifest.write_output(path, text.as_bytes())?;
            manifest.save(&manifest_path(path))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<Outcome, Failure> {
    let spec: OperatorSpec = read_json(&args.operator).usage()?;
    let a = spec.realize().usage()?;
    let mut cfg = OptimizerConfig::default();
    if let Some(r) = args.restarts {
        cfg.restarts = r;
    }
    if let Some(s) = args.screening {
        cfg.screening_samples = s;
    }
    if let Some(m) = args.max_evals {
        cfg.max_evals = m;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.audit = args.audit;
    cfg.validate().usage()?;

    let cal = calibrate(&a, args.measure, &cfg)?;
    eprintln!(
        "{}: lambda_lb = {}, lambda_ub = {}",
        args.measure,
        sig12(cal.lambda_lb),
        sig12(cal.lambda_ub)
    );
    let manifest = RunManifest::new("calibrate", &cfg, cfg.seed)?;
    emit_json(&cal, args.out.as_deref(), Some(manifest))?;
    Ok(if cal.has_caveat() {
        for (name, d) in [("lambda_lb", &cal.diagnostics.lb), ("lambda_ub", &cal.diagnostics.ub)] {
            eprintln!(
                "caveat: {name} basin gap {:.3e}, {} of {} restarts agree, {} converged",
                d.basin_gap, d.agreeing_restarts, d.restarts, d.converged_restarts
            );
        }
        Outcome::Caveat
    } else {
        Outcome::Clean
    })
}

fn pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut value: serde_json::Value = read_json(path).usage()?;
            if value.get("command").is_some() {
                value = value
                    .get("config")
                    .cloned()
                    .ok_or_else(|| anyhow!("manifest has no config"))
                    .usage()?;
            }
            serde_json::from_value(value)
                .with_context(|| format!("parsing {}", path.display()))
                .usage()?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.run.master_seed = seed;
    }
    if let Some(s) = args.shots {
        cfg.run.shots_per_setting = s;
    }
    if let Some(m) = args.mc_iterations {
        cfg.run.mc_iterations = m;
    }
    if let Some(r) = args.restarts {
        cfg.tune.optimizer.restarts = r;
    }
    if let Some(s) = args.screening {
        cfg.tune.optimizer.screening_samples = s;
    }
    if let Some(s) = args.roof_starts {
        cfg.roof.starts = s;
    }
    cfg.tune.optimizer.validate().usage()?;
    Ok(cfg)
}

fn measures(args: &PipelineArgs) -> Vec<MeasureKind> {
    args.measure.map_or_else(|| MeasureKind::ALL.to_vec(), |m| vec![m])
}

fn bound_fields(a1: &TunedPair, a2: &TunedPair) -> [String; 4] {
    [sig12(a1.lb()), sig12(a1.ub()), sig12(a2.lb()), sig12(a2.ub())]
}

/// Crossings below this are rounding, not a violated sandwich.
const CROSSING_TOL: f64 = 1e-8;

/// Reports calibration caveats and crossed bounds. A crossing comes either
/// from a λ that missed its global optimum or, where both bounds are tight,
/// from shot noise in the two independently tuned expectations; the message
/// gives its size in standard errors to tell these apart.
fn check_row(label: &str, a1: &TunedPair, a2: &TunedPair) -> bool {
    let mut caveat = false;
    for (name, pair) in [("A1", a1), ("A2", a2)] {
        let crossing = pair.lb() - pair.ub();
        if crossing > CROSSING_TOL {
            let se = pair
                .lower
                .estimate
                .expectation_stderr
                .hypot(pair.upper.estimate.expectation_stderr);
            eprintln!(
                "caveat: {label}: {name} lower bound {} exceeds upper bound {} ({:.2} standard errors)",
                sig12(pair.lb()),
                sig12(pair.ub()),
                crossing / se
            );
            caveat = true;
        }
    }
    if a1.has_caveat() || a2.has_caveat() {
        caveat = true;
        eprintln!("caveat: {label}: a calibration did not certify its global optimum");
    }
    caveat
}

fn finish<T: Serialize>(
    command: &str,
    cfg: &PipelineConfig,
    csv: &Csv,
    out: &Path,
    details: Option<(&Path, &T)>,
    caveat: bool,
) -> Result<Outcome, Failure> {
    let mut manifest = RunManifest::new(command, cfg, cfg.run.master_seed)?;
    manifest.write_output(out, csv.as_bytes())?;
    if let Some((path, rows)) = details {
        let mut text = serde_json::to_string_pretty(rows)?;
        text.push('\n');
        manifest.write_output(path, text.as_bytes())?;
    }
    manifest.save(&manifest_path(out))?;
    Ok(if caveat { Outcome::Caveat } else { Outcome::Clean })
}

fn cmd_reproduce_pure(
    state: &str,
    out: &Path,
    details: Option<&Path>,
    args: &PipelineArgs,
) -> Result<Outcome, Failure> {
    let ids = if state.eq_ignore_ascii_case("all") {
        StateId::ALL.to_vec()
    } else {
        vec![state.parse::<StateId>().usage()?]
    };
    let cfg = pipeline_config(args)?;
    let mut csv = Csv::new(&["state", "measure", "lb_A1", "ub_A1", "lb_A2", "ub_A2", "E_theory"]);
    let mut caveat = false;
    let mut rows = Vec::new();
    for id in ids {
        rows.extend(reproduce::reproduce_pure(id, &measures(args), &cfg)?);
    }
    for row in &rows {
        let label = format!("{} {}", row.state.as_str(), row.measure);
        caveat |= check_row(&label, &row.a1, &row.a2);
        eprintln!(
            "{label}: A1 [{}, {}]  A2 [{}, {}]  E_theory {}",
            sig12(row.a1.lb()),
            sig12(row.a1.ub()),
            sig12(row.a2.lb()),
            sig12(row.a2.ub()),
            sig12(row.e_theory)
        );
        let mut fields = vec![row.state.as_str().to_string(), row.measure.to_string()];
        fields.extend(bound_fields(&row.a1, &row.a2));
        fields.push(sig12(row.e_theory));
        csv.row(fields);
    }
    let details = details.map(|p| (p, &rows));
    finish(
        &format!("reproduce pure --state {state}"),
        &cfg,
        &csv,
        out,
        details,
        caveat,
    )
}

fn cmd_reproduce_mixed(
    grid: Option<Vec<f64>>,
    out: &Path,
    details: Option<&Path>,
    args: &PipelineArgs,
) -> Result<Outcome, Failure> {
    let grid = grid.unwrap_or_else(|| DEFAULT_P_GRID.to_vec());
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Failure::Usage(anyhow!("mixing fraction {p} is outside [0, 1]")));
    }
    let cfg = pipeline_config(args)?;
    let rows = reproduce::reproduce_mixed(&grid, &measures(args), &cfg)?;
    let mut csv = Csv::new(&["p", "measure", "lb_A1", "ub_A1", "lb_A2", "ub_A2", "E_oracle"]);
    let mut caveat = false;
    for row in &rows {
        let label = format!("p={} {}", sig12(row.p), row.measure);
        caveat |= check_row(&label, &row.a1, &row.a2);
        eprintln!(
            "{label}: A1 [{}, {}]  A2 [{}, {}]  E_oracle {}  (8/9)p {}",
            sig12(row.a1.lb()),
            sig12(row.a1.ub()),
            sig12(row.a2.lb()),
            sig12(row.a2.ub()),
            sig12(row.e_oracle),
            sig12(8.0 / 9.0 * row.p)
        );
        let mut fields = vec![sig12(row.p), row.measure.to_string()];
        fields.extend(bound_fields(&row.a1, &row.a2));
        fields.push(sig12(row.e_oracle));
        csv.row(fields);
    }
    let gap = |f: fn(&reproduce::MixedRow) -> &TunedPair| {
        rows.iter().map(|r| f(r).ub() - f(r).lb()).sum::<f64>() / rows.len().max(1) as f64
    };
    eprintln!("mean gap: A1 {}  A2 {}", sig12(gap(|r| &r.a1)), sig12(gap(|r| &r.a2)));
    let details = details.map(|p| (p, &rows));
    finish("reproduce mixed", &cfg, &csv, out, details, caveat)
}

#[derive(Serialize)]
struct SettingsReport {
    support_size: usize,
    minimal_settings: usize,
    settings: Vec<String>,
}

fn cmd_settings(operator: &Path) -> Result<Outcome, Failure> {
    let spec: OperatorSpec = read_json(operator).usage()?;
    let a = spec.realize().usage()?;
    let settings: Vec<String> = required_settings(&a, SUPPORT_TOL)
        .iter()
        .map(|s| s.to_string())
        .collect();
    let report = SettingsReport {
        support_size: a.support(SUPPORT_TOL).len(),
        minimal_settings: settings.len(),
        settings,
    };
    emit_json(&report, None, None)?;
    Ok(Outcome::Clean)
}

#[derive(Serialize)]
struct RoofReport<'a> {
    measure: MeasureKind,
    #[serde(flatten)]
    result: &'a RoofResult,
}

fn cmd_roof(args: RoofArgs) -> Result<Outcome, Failure> {
    let spec: StateSpec = read_json(&args.state).usage()?;
    let rho = spec.density().usage()?;
    let mut cfg = RoofConfig::default();
    if let Some(s) = args.starts {
        cfg.starts = s;
    }
    if args.m_max.is_some() {
        cfg.m_max = args.m_max;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let result = convex_roof(&rho, &args.measure, &cfg)?;
    eprintln!(
        "{}: roof {} with {} states (rank {})",
        args.measure,
        sig12(result.value),
        result.m_used,
        result.rank
    );
    let manifest = RunManifest::new("roof", &cfg, cfg.seed)?;
    let report = RoofReport {
        measure: args.measure,
        result: &result,
    };
    emit_json(&report, args.out.as_deref(), Some(manifest))?;
    Ok(if result.converged {
        Outcome::Clean
    } else {
        eprintln!("caveat: no start at the winning size met the tolerance");
        Outcome::Caveat
    })
}
