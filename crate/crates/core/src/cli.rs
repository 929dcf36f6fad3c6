//! Command-line front end: argument parsing, table emission and run manifests.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bayes_engine::{
    averaged_posterior_exact_zero, averaged_posterior_mc, confidence_report, posterior_sigma, Posterior,
};
use crate::experiments::{
    confidence_vs_p, cramer_rao_saturation, split_budget, tail_cancellation_check, uncertainty_vs_ntotal,
    GridPolicy, Metric, RemainderPolicy, StateFamily, SweepSpec, SWEEP_GAMMAS,
};
use crate::interferometer::likelihood;
use crate::rotation_kernels::{brute_force_rotation, wigner_d_column, MagneticIndex, SpinQuantum};

pub const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Parser, Debug, Serialize)]
#[command(name = "mz-bayes", version, about = "Bayesian phase estimation for a Mach-Zehnder interferometer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Output file; stdout when absent (no manifest is written then).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "MZ_BAYES_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Outcome probabilities P(mu | j, theta) for one run.
    Likelihood {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
    },
    /// Outcome-averaged posterior density on [0, pi/2].
    Posterior {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// MAP estimate, confidence half-width and spread.
    Confidence {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.6827)]
        gamma: f64,
    },
    /// Scaled half-width against the number of runs at a fixed budget.
    SweepP {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        p_values: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Uncertainty against the particle budget with a power-law fit.
    SweepNt {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        n_values: Vec<u32>,
        #[arg(long, value_enum, default_value_t = MetricArg::Confidence)]
        metric: MetricArg,
        #[arg(long, default_value_t = 0.6827)]
        gamma: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Spread for p runs of a fixed particle number.
    CramerRao {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        n_per_run: u32,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,9,12,16")]
        p_values: Vec<u32>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Single-run tail mass and cancellation residual for several m.
    TailCheck {
        /// Particles per run, 2j.
        #[arg(long)]
        n_total: u32,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        m_values: Vec<f64>,
    },
    /// Compare recurrence columns against the matrix-exponential rotation.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        max_two_j: u32,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}

#[derive(Args, Debug, Serialize)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::TwinFock)]
    pub family: FamilyArg,
    /// Explicit state label m; overrides --family.
    #[arg(long)]
    pub m: Option<f64>,
}

impl FamilyArgs {
    pub fn resolve(&self) -> anyhow::Result<StateFamily> {
        match self.m {
            Some(m) => {
                let m = MagneticIndex::from_value(m)?;
                let two_m = u32::try_from(m.two_mu()).context("m must be non-negative")?;
                Ok(StateFamily::General { two_m })
            }
            None => Ok(match self.family {
                FamilyArg::TwinFock => StateFamily::TwinFock,
                FamilyArg::TwinOne => StateFamily::TwinOne,
                FamilyArg::Noon => StateFamily::Noon,
                FamilyArg::Yurke => StateFamily::Yurke,
            }),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct StateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Total particle budget, split evenly over the runs.
    #[arg(long)]
    pub n_total: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    #[arg(long, value_enum, default_value_t = RemainderArg::Reject)]
    pub remainder: RemainderArg,
    /// Fixed grid resolution.
    #[arg(long)]
    pub grid: Option<usize>,
}

impl SplitArgs {
    fn grid_policy(&self) -> GridPolicy {
        self.grid.map_or(GridPolicy::default(), GridPolicy::Fixed)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    TwinFock,
    TwinOne,
    Noon,
    Yurke,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemainderArg {
    Reject,
    Nearest,
}

impl From<RemainderArg> for RemainderPolicy {
    fn from(r: RemainderArg) -> Self {
        match r {
            RemainderArg::Reject => RemainderPolicy::Reject,
            RemainderArg::Nearest => RemainderPolicy::Nearest,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Confidence,
    Sigma,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
}

impl Cell {
    fn csv_text(&self) -> String {
        match *self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Bool(v) => v.to_string(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match *self {
            Cell::Int(v) => v.into(),
            Cell::Float(v) => serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, Into::into),
            Cell::Bool(v) => v.into(),
        }
    }
}

/// Rows with a fixed column list.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }
}

/// Write `table` as CSV (17 significant digits, LF endings) or as a JSON array of objects.
pub fn emit_table(table: &Table, format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    if table.rows.is_empty() {
        bail!("refusing to emit an empty table");
    }
    if let Some(bad) = table.rows.iter().position(|r| r.len() != table.columns.len()) {
        bail!("row {bad} has {} cells, expected {}", table.rows[bad].len(), table.columns.len());
    }
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
            w.write_record(&table.columns)?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::csv_text))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let objects: Vec<serde_json::Map<String, serde_json::Value>> = table
                .rows
                .iter()
                .map(|row| table.columns.iter().map(|c| c.to_string()).zip(row.iter().map(Cell::json)).collect())
                .collect();
            serde_json::to_writer_pretty(&mut *out, &objects)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn float(v: f64) -> Cell {
    Cell::Float(v)
}

fn int(v: impl Into<i64>) -> Cell {
    Cell::Int(v.into())
}

fn averaged_posterior(
    family: StateFamily,
    n_total: u32,
    run: &RunArgs,
) -> anyhow::Result<(Posterior, u32)> {
    let n = split_budget(family, n_total, run.p, run.split.remainder.into())?;
    let state = family.state(n)?;
    let grid = run.split.grid_policy().grid_for(n)?;
    let post = if run.theta == 0.0 {
        averaged_posterior_exact_zero(&state, run.p as usize, grid)?
    } else {
        averaged_posterior_mc(&state, run.theta, run.p as usize, run.trials, run.seed, grid)?
    };
    Ok((post, n))
}

fn oracle_table(max_two_j: u32, points: usize) -> anyhow::Result<(Table, f64)> {
    if points < 2 {
        bail!("the angle mesh needs at least 2 points");
    }
    let mut table = Table::new(&["two_j", "max_deviation"]);
    let mut worst = 0.0f64;
    for two_j in 0..=max_two_j {
        let j = SpinQuantum::new(two_j);
        let mut deviation = 0.0f64;
        for k in 0..points {
            let theta = PI * k as f64 / (points - 1) as f64;
            let matrix = brute_force_rotation(j, theta)?;
            for nu in j.labels() {
                let column = wigner_d_column(j, nu, theta)?;
                let c = j.index_of(nu);
                for (i, v) in column.values.iter().enumerate() {
                    deviation = deviation.max((v - matrix[(i, c)]).abs());
                }
            }
        }
        worst = worst.max(deviation);
        table.push(vec![int(two_j), float(deviation)]);
    }
    Ok((table, worst))
}

/// Execute one parsed command and return its table.
pub fn execute(command: &Command) -> anyhow::Result<Table> {
    let table = match command {
        Command::Likelihood { state, theta } => {
            let family = state.family.resolve()?;
            let dist = likelihood(&family.state(state.n_total)?, *theta)?;
            let mut table = Table::new(&["mu", "prob"]);
            for (mu, prob) in dist.j.labels().zip(&dist.probs) {
                table.push(vec![float(mu.value()), float(*prob)]);
            }
            table
        }
        Command::Posterior { state, run } => {
            let (post, _) = averaged_posterior(state.family.resolve()?, state.n_total, run)?;
            let mut table = Table::new(&["phi", "density"]);
            for (phi, d) in post.grid().nodes().zip(post.density()) {
                table.push(vec![float(phi), float(*d)]);
            }
            table
        }
        Command::Confidence { state, run, gamma } => {
            let (post, n) = averaged_posterior(state.family.resolve()?, state.n_total, run)?;
            let report = confidence_report(&post, *gamma)?;
            let budget = f64::from(n * run.p);
            let mut table = Table::new(&[
                "n_total",
                "p",
                "n_per_run",
                "gamma",
                "phi_hat",
                "c_gamma",
                "c_gamma_times_nt",
                "sigma_about_estimate",
                "sigma_about_true",
            ]);
            table.push(vec![
                int(n * run.p),
                int(run.p),
                int(n),
                float(report.gamma),
                float(report.phi_hat),
                float(report.half_width),
                float(report.half_width * budget),
                float(report.sigma),
                float(posterior_sigma(&post, run.theta)),
            ]);
            table
        }
        Command::SweepP { state, p_values, gammas, split } => {
            let mut spec = SweepSpec::new(state.family.resolve()?);
            spec.n_total = state.n_total;
            spec.p_values = p_values.clone();
            if !gammas.is_empty() {
                spec.gamma_levels = gammas.clone();
            } else {
                spec.gamma_levels = SWEEP_GAMMAS.to_vec();
            }
            spec.remainder = split.remainder.into();
            spec.grid = split.grid_policy();
            let sweep = confidence_vs_p(&spec)?;
            let mut table = Table::new(&["gamma", "p", "n_per_run", "c_gamma", "c_gamma_times_nt"]);
            for r in &sweep.rows {
                table.push(vec![float(r.gamma), int(r.p), int(r.n_per_run), float(r.c_gamma), float(r.c_gamma_times_nt)]);
            }
            table
        }
        Command::SweepNt { family, n_values, metric, gamma, run } => {
            let mut spec = SweepSpec::new(family.resolve()?);
            spec.p_values = vec![run.p];
            spec.n_values = n_values.clone();
            spec.theta_true = run.theta;
            spec.trials = run.trials;
            spec.seed = run.seed;
            spec.remainder = run.split.remainder.into();
            spec.grid = run.split.grid_policy();
            let metric = match metric {
                MetricArg::Confidence => Metric::Confidence(*gamma),
                MetricArg::Sigma => Metric::Sigma,
            };
            let fit = uncertainty_vs_ntotal(&spec, metric)?;
            let mut table = Table::new(&["n_total", "metric_value", "fit_exponent", "fit_prefactor"]);
            for &(nt, value) in &fit.points {
                table.push(vec![int(nt as i64), float(value), float(fit.exponent), float(fit.prefactor)]);
            }
            table
        }
        Command::CramerRao { family, n_per_run, p_values, grid } => {
            let policy = grid.map_or(GridPolicy::default(), GridPolicy::Fixed);
            let rows = cramer_rao_saturation(family.resolve()?, *n_per_run, p_values, policy)?;
            let mut table = Table::new(&[
                "p",
                "n_total",
                "sigma",
                "sigma_times_nt",
                "sigma_times_nt_over_sqrt_p",
                "saturated",
            ]);
            for r in rows {
                table.push(vec![
                    int(r.p),
                    int(r.n_total),
                    float(r.sigma),
                    float(r.sigma_times_nt),
                    float(r.sigma_times_nt_over_sqrt_p),
                    Cell::Bool(r.saturated),
                ]);
            }
            table
        }
        Command::TailCheck { n_total, m_values } => {
            let ms = m_values.iter().map(|&m| MagneticIndex::from_value(m)).collect::<Result<Vec<_>, _>>()?;
            let reports = tail_cancellation_check(SpinQuantum::new(*n_total), &ms)?;
            let mut table = Table::new(&["j", "m", "tail_start", "tail_mass", "cancellation_residual"]);
            for r in reports {
                table.push(vec![
                    float(f64::from(r.two_j) / 2.0),
                    float(r.two_m as f64 / 2.0),
                    float(r.tail_start),
                    float(r.tail_mass),
                    float(r.cancellation_residual),
                ]);
            }
            table
        }
        Command::OracleCheck { max_two_j, points } => oracle_table(*max_two_j, *points)?.0,
    };
    Ok(table)
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a Cli,
    version: &'static str,
    wall_time_seconds: f64,
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Run the command, write its table and manifest. Returns `false` when a
/// self-check command ran but did not pass.
pub fn run(cli: &Cli) -> anyhow::Result<bool> {
    let start = Instant::now();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("configuring the worker pool")?;
    }

    let mut passed = true;
    let table = match &cli.command {
        Command::OracleCheck { max_two_j, points } => {
            let (table, worst) = oracle_table(*max_two_j, *points)?;
            passed = worst < ORACLE_TOLERANCE;
            eprintln!("{} max deviation {worst:.3e}", if passed { "PASS" } else { "FAIL" });
            table
        }
        command => execute(command)?,
    };

    match &cli.output {
        Some(path) => {
            let mut file = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            emit_table(&table, cli.format, &mut file)?;
            file.flush()?;
            let manifest = Manifest {
                config: cli,
                version: env!("CARGO_PKG_VERSION"),
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            let mpath = manifest_path(path);
            let mut mfile = File::create(&mpath).with_context(|| format!("creating {}", mpath.display()))?;
            serde_json::to_writer_pretty(&mut mfile, &manifest)?;
            mfile.write_all(b"\n")?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            emit_table(&table, cli.format, &mut lock)?;
        }
    }
    Ok(passed)
}
