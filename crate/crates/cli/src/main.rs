//! Command-line driver for the critical-point Tikhonov experiments.
//!
//! Subcommands mirror the three verifiable artifacts: `experiment` (noise
//! ladders from one or more starting points), `rates` (theorem-suite report:
//! rate fits, converse check, gap-rate constants, variational-inequality
//! constant), and `counterexample` (sequence-space exact identities).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use cpr_core::{
    converse_check, counterexample_run, default_source_profile, fit_rate, gap_rate_check,
    generic_source_profile, make_grid, make_source_instance, run_noise_ladder,
    verify_b2_constant, ConverseReport, CounterexampleReport, EpsSchedule, GapRateReport,
    GridFunction, LadderConfig, LadderRun, LinearProblemOperator, Metric, RateFit, Regularizer,
    RunRecord, Selection, SolverChoice, SourceSpec, StopReason, DEFAULT_ITERATION_CAP,
};

#[derive(Parser)]
#[command(name = "cpr", version, about = "Critical-point Tikhonov regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise-ladder reconstruction experiment from one or more starts.
    Experiment(RawConfig),
    /// Rate fits, converse check, and bound constants under a source instance.
    Rates(RawConfig),
    /// Sequence-space counterexample with exact identity checks.
    Counterexample(RawConfig),
}

/// All knobs, each optional so that a config file and flags can be merged;
/// flags win. Defaults are filled in per subcommand afterwards.
#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    /// Grid size for the depth-profiling operator.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated decreasing noise levels.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Proportionality constant in alpha = c * delta.
    #[arg(long = "alpha-c")]
    alpha_c: Option<f64>,
    /// Near-minimizer exponent: eta = alpha^beta.
    #[arg(long)]
    beta: Option<f64>,
    /// Constant starting value; repeat the flag for several starts.
    #[arg(long = "x0")]
    x0: Option<Vec<f64>>,
    /// gd | heavyball | oracle
    #[arg(long)]
    solver: Option<String>,
    /// convex | exact
    #[arg(long)]
    selection: Option<String>,
    /// quad | genquad | boundedpert
    #[arg(long)]
    regularizer: Option<String>,
    /// Perturbation amplitude for the boundedpert regularizer.
    #[arg(long = "pert-a")]
    pert_a: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration cap per ladder entry.
    #[arg(long)]
    cap: Option<usize>,
    /// Sequence-space dimension (counterexample).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of odd coordinates carrying data (counterexample).
    #[arg(long = "support-count")]
    support_count: Option<usize>,
    /// Perturbation size (counterexample).
    #[arg(long)]
    eps: Option<f64>,
    /// fixed | matchdelta (counterexample).
    #[arg(long = "eps-schedule")]
    eps_schedule: Option<String>,
    /// JSON config file; flags given on the command line override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
    /// Promote runtime-flagged issues (iteration caps hit, failed identity or
    /// boundedness checks) to exit status 1.
    #[arg(long)]
    #[serde(skip)]
    strict: bool,
}

impl RawConfig {
    /// Merge: values present in `self` (flags) win over `file`.
    fn merged_over(mut self, file: RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = file.$f; } )* };
        }
        take!(
            n, deltas, alpha_c, beta, x0, solver, selection, regularizer, pert_a, seed, cap,
            dim, support_count, eps, eps_schedule, out, format
        );
        self
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    Csv,
    Json,
}

/// Fully resolved run configuration; serialized verbatim as the sidecar.
#[derive(Serialize)]
struct ResolvedConfig {
    command: &'static str,
    n: usize,
    deltas: Vec<f64>,
    alpha_c: f64,
    beta: f64,
    x0: Vec<f64>,
    solver: String,
    selection: String,
    regularizer: String,
    pert_a: f64,
    seed: u64,
    cap: usize,
    dim: usize,
    support_count: usize,
    eps: f64,
    eps_schedule: String,
    out: PathBuf,
    format: OutputFormat,
    strict: bool,
}

fn resolve(command: &'static str, raw: RawConfig) -> anyhow::Result<ResolvedConfig> {
    let raw = match &raw.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let file: RawConfig = serde_json::from_str(&text)
                .with_context(|| format!("invalid config file {}", path.display()))?;
            raw.merged_over(file)
        }
        None => raw,
    };

    let default_deltas = match command {
        "counterexample" => (2..=10).map(|k| 2f64.powi(-2 * k)).collect(),
        "rates" => (2..=7).map(|k| 10f64.powi(-k)).collect(),
        _ => vec![1e-2, 1e-4, 1e-6],
    };
    let cfg = ResolvedConfig {
        command,
        n: raw.n.unwrap_or(256),
        deltas: raw.deltas.unwrap_or(default_deltas),
        alpha_c: raw.alpha_c.unwrap_or(1.0),
        beta: raw.beta.unwrap_or(0.1),
        x0: raw.x0.unwrap_or_else(|| match command {
            "rates" => vec![0.0],
            _ => vec![1.0, 0.0],
        }),
        solver: raw.solver.unwrap_or_else(|| {
            match command {
                "rates" => "oracle",
                _ => "gd",
            }
            .into()
        }),
        selection: raw.selection.unwrap_or_else(|| "exact".into()),
        regularizer: raw.regularizer.unwrap_or_else(|| "quad".into()),
        pert_a: raw.pert_a.unwrap_or(0.5),
        seed: raw.seed.unwrap_or(0),
        cap: raw.cap.unwrap_or(DEFAULT_ITERATION_CAP),
        dim: raw.dim.unwrap_or(64),
        support_count: raw.support_count.unwrap_or(1),
        eps: raw.eps.unwrap_or(0.5),
        eps_schedule: raw.eps_schedule.unwrap_or_else(|| "fixed".into()),
        out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
        format: match raw.format.as_deref() {
            None | Some("csv") => OutputFormat::Csv,
            Some("json") => OutputFormat::Json,
            Some(other) => bail!("unknown format '{other}' (expected csv or json)"),
        },
        strict: raw.strict,
    };

    // fail fast on anything the library would reject later
    cfg.solver.parse::<SolverChoice>()?;
    cfg.selection.parse::<Selection>()?;
    if !matches!(cfg.regularizer.as_str(), "quad" | "genquad" | "boundedpert") {
        bail!(
            "unknown regularizer '{}' (expected quad, genquad or boundedpert)",
            cfg.regularizer
        );
    }
    if !matches!(cfg.eps_schedule.as_str(), "fixed" | "matchdelta") {
        bail!(
            "unknown eps schedule '{}' (expected fixed or matchdelta)",
            cfg.eps_schedule
        );
    }
    if cfg.x0.is_empty() {
        bail!("need at least one starting value");
    }
    Ok(cfg)
}

impl ResolvedConfig {
    fn solver(&self) -> SolverChoice {
        self.solver.parse().unwrap()
    }

    fn selection(&self) -> Selection {
        self.selection.parse().unwrap()
    }

    fn regularizer(&self, grid_weight: f64) -> anyhow::Result<Regularizer> {
        Ok(match self.regularizer.as_str() {
            "quad" => Regularizer::quadratic(),
            "genquad" => {
                Regularizer::generalized_quadratic(forward_difference(self.n, grid_weight)?)
            }
            "boundedpert" => Regularizer::bounded_perturbation(self.pert_a)?,
            _ => unreachable!(),
        })
    }

    fn eps_schedule(&self) -> EpsSchedule {
        match self.eps_schedule.as_str() {
            "fixed" => EpsSchedule::Fixed(self.eps),
            _ => EpsSchedule::MatchDelta,
        }
    }
}

/// Forward difference quotient (K x)_i = (x_{i+1} - x_i) / h, last row zero:
/// the discrete gradient penalty used by the genquad regularizer.
fn forward_difference(n: usize, h: f64) -> anyhow::Result<LinearProblemOperator> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        m[(i, i)] = -1.0 / h;
        m[(i, i + 1)] = 1.0 / h;
    }
    Ok(LinearProblemOperator::from_matrix(m, h)?)
}

struct Outputs {
    dir: PathBuf,
    format: OutputFormat,
}

impl Outputs {
    fn new(cfg: &ResolvedConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&cfg.out)
            .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
        Ok(Self { dir: cfg.out.clone(), format: cfg.format })
    }

    fn write(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Tabular data: records.csv / rates.csv, or .json variants under
    /// --format json.
    fn write_table<T: Serialize>(
        &self,
        stem: &str,
        header: &str,
        rows: &[String],
        json_value: &T,
    ) -> anyhow::Result<()> {
        match self.format {
            OutputFormat::Csv => {
                let mut text = String::with_capacity(rows.len() * 64);
                text.push_str(header);
                text.push('\n');
                for row in rows {
                    text.push_str(row);
                    text.push('\n');
                }
                self.write(&format!("{stem}.csv"), &text)
            }
            OutputFormat::Json => self.write_json(&format!("{stem}.json"), json_value),
        }
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const RECORD_HEADER: &str = "x0,delta,alpha,eta,iterations,stop_reason,discrepancy,error_sq,\
bregman_abs,bregman_sym_abs,gap,sign_flag";

fn record_row(x0: f64, r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        x0,
        r.delta,
        r.alpha,
        r.eta,
        r.iterations,
        r.stop_reason,
        r.discrepancy,
        r.error_sq,
        r.bregman_abs,
        r.bregman_sym_abs,
        csv_opt(r.gap),
        r.sign_flag
    )
}

const RATE_HEADER: &str = "x0,metric,slope,intercept,r_squared,points_used,dropped";

fn rate_row(x0: f64, f: &RateFit) -> String {
    let dropped: Vec<String> = f.dropped.iter().map(|d| d.to_string()).collect();
    format!(
        "{},{},{},{},{},{},{}",
        x0,
        f.metric,
        f.slope,
        f.intercept,
        f.r_squared,
        f.points_used,
        dropped.join(";")
    )
}

/// Fits for every metric that has enough positive points.
fn fit_all(records: &[RunRecord]) -> Vec<RateFit> {
    Metric::ALL
        .iter()
        .filter_map(|&m| fit_rate(records, m).ok())
        .collect()
}

#[derive(Serialize)]
struct LadderGroup {
    x0: f64,
    records: Vec<RunRecord>,
    fits: Vec<RateFit>,
}

fn depth_instance(cfg: &ResolvedConfig) -> anyhow::Result<(LinearProblemOperator, SourceSpec)> {
    let grid = make_grid(cfg.n)?;
    let op = LinearProblemOperator::depth_profiling(&grid);
    let profile = match cfg.command {
        // the rates suite wants a source element without extra smoothness so
        // the O(delta) bounds it verifies are tight
        "rates" => generic_source_profile as fn(f64) -> f64,
        _ => default_source_profile,
    };
    let w = GridFunction::sample(&grid, profile);
    let source = make_source_instance(&op, &w)?;
    Ok((op, source))
}

fn run_groups(
    cfg: &ResolvedConfig,
    op: &LinearProblemOperator,
    source: &SourceSpec,
) -> anyhow::Result<Vec<(f64, Vec<LadderRun>)>> {
    let reg = cfg.regularizer(op.weight())?;
    let ladder = LadderConfig {
        deltas: cfg.deltas.clone(),
        alpha_c: cfg.alpha_c,
        beta: cfg.beta,
        solver: cfg.solver(),
        seed: cfg.seed,
        cap: cfg.cap,
    };
    let mut groups = Vec::with_capacity(cfg.x0.len());
    for &c in &cfg.x0 {
        let x0 = GridFunction::constant(c, cfg.n, op.weight());
        let runs = run_noise_ladder(op, source, &reg, cfg.selection(), &ladder, &x0)?;
        groups.push((c, runs));
    }
    Ok(groups)
}

fn flag_ladder_issues(groups: &[(f64, Vec<LadderRun>)], flags: &mut Vec<String>) {
    for (x0, runs) in groups {
        for run in runs {
            if run.record.stop_reason == StopReason::MaxIter {
                flags.push(format!(
                    "iteration cap hit at x0={x0}, delta={}",
                    run.record.delta
                ));
            }
        }
    }
}

fn run_experiment(cfg: &ResolvedConfig, out: &Outputs) -> anyhow::Result<Vec<String>> {
    let (op, source) = depth_instance(cfg)?;
    let groups = run_groups(cfg, &op, &source)?;
    let mut flags = Vec::new();
    flag_ladder_issues(&groups, &mut flags);

    let ladder_groups: Vec<LadderGroup> = groups
        .iter()
        .map(|(x0, runs)| {
            let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
            let fits = fit_all(&records);
            LadderGroup { x0: *x0, records, fits }
        })
        .collect();

    let record_rows: Vec<String> = ladder_groups
        .iter()
        .flat_map(|g| g.records.iter().map(|r| record_row(g.x0, r)))
        .collect();
    out.write_table("records", RECORD_HEADER, &record_rows, &ladder_groups)?;

    let rate_rows: Vec<String> = ladder_groups
        .iter()
        .flat_map(|g| g.fits.iter().map(|f| rate_row(g.x0, f)))
        .collect();
    let fit_view: Vec<&[RateFit]> = ladder_groups.iter().map(|g| g.fits.as_slice()).collect();
    out.write_table("rates", RATE_HEADER, &rate_rows, &fit_view)?;

    out.write("summary.txt", &experiment_summary(cfg, &ladder_groups))?;

    #[derive(Serialize)]
    struct Report<'a> {
        operator_norm: f64,
        groups: &'a [LadderGroup],
        flags: &'a [String],
    }
    out.write_json(
        "report.json",
        &Report {
            operator_norm: op.operator_norm()?,
            groups: &ladder_groups,
            flags: &flags,
        },
    )?;
    Ok(flags)
}

fn experiment_summary(cfg: &ResolvedConfig, groups: &[LadderGroup]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "squared reconstruction error |x_k - x\u{2021}|\u{00b2} (n = {}, alpha = {} delta, eta = alpha^{}, solver = {})",
        cfg.n, cfg.alpha_c, cfg.beta, cfg.solver
    );
    let mut header = format!("{:>12} | {:>12}", "delta", "delta^beta");
    for g in groups {
        let _ = write!(header, " | {:>12}", format!("x0={}", g.x0));
    }
    let _ = writeln!(s, "{header}");
    let _ = writeln!(s, "{}", "-".repeat(header.len()));
    for (i, &delta) in cfg.deltas.iter().enumerate() {
        let mut row = format!("{:>12.1e} | {:>12.4e}", delta, delta.powf(cfg.beta));
        for g in groups {
            let _ = write!(row, " | {:>12.4e}", g.records[i].error_sq);
        }
        let _ = writeln!(s, "{row}");
    }
    let _ = writeln!(s);
    for g in groups {
        if let Some(f) = g.fits.iter().find(|f| f.metric == "error_sq") {
            let _ = writeln!(
                s,
                "x0={}: fitted error_sq rate delta^{:.2} (r^2 = {:.3})",
                g.x0, f.slope, f.r_squared
            );
        }
    }
    s
}

fn run_rates(cfg: &ResolvedConfig, out: &Outputs) -> anyhow::Result<Vec<String>> {
    let (op, source) = depth_instance(cfg)?;
    let groups = run_groups(cfg, &op, &source)?;
    let mut flags = Vec::new();
    flag_ladder_issues(&groups, &mut flags);

    let reg = cfg.regularizer(op.weight())?;
    let selection = cfg.selection();
    let (x0, runs) = &groups[0];
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let fits = fit_all(&records);
    let converse = converse_check(runs, &source.x_dag, &reg, selection, &op)?;
    if !converse.bounded_flag {
        flags.push("source elements w_k not uniformly bounded across the ladder".into());
    }
    let gap_rates = match gap_rate_check(&records) {
        Ok(g) => {
            if !g.within_factor_10 {
                flags.push("gap-rate constants spread by more than a factor 10".into());
            }
            Some(g)
        }
        Err(_) => None,
    };
    let b2_constant = verify_b2_constant(&op, &source, &reg, selection, 500, 0.5, cfg.seed).ok();

    let record_rows: Vec<String> = records.iter().map(|r| record_row(*x0, r)).collect();
    out.write_table("records", RECORD_HEADER, &record_rows, &records)?;
    let rate_rows: Vec<String> = fits.iter().map(|f| rate_row(*x0, f)).collect();
    out.write_table("rates", RATE_HEADER, &rate_rows, &fits)?;

    #[derive(Serialize)]
    struct Report<'a> {
        operator_norm: f64,
        records: &'a [RunRecord],
        fits: &'a [RateFit],
        converse: &'a ConverseReport,
        gap_rates: &'a Option<GapRateReport>,
        b2_constant: Option<f64>,
        flags: &'a [String],
    }
    out.write_json(
        "report.json",
        &Report {
            operator_norm: op.operator_norm()?,
            records: &records,
            fits: &fits,
            converse: &converse,
            gap_rates: &gap_rates,
            b2_constant,
            flags: &flags,
        },
    )?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "rate fits over delta = {:?} (solver = {}, x0 = {})",
        cfg.deltas, cfg.solver, x0
    );
    for f in &fits {
        let _ = writeln!(
            s,
            "  {:<16} slope {:>7.4}  r^2 {:>7.4}  ({} points)",
            f.metric, f.slope, f.r_squared, f.points_used
        );
    }
    let _ = writeln!(
        s,
        "converse: sup|w_k| = {:.4}, bounded = {}, source residual at smallest delta = {:.3e}",
        converse.sup_w_norm, converse.bounded_flag, converse.source_residual
    );
    if let Some(g) = &gap_rates {
        let _ = writeln!(
            s,
            "gap-rate constants: discrepancy spread {:.3}, bregman spread {:.3}, within factor 10 = {}",
            g.c_discrepancy_spread, g.c_bregman_spread, g.within_factor_10
        );
    }
    if let Some(b) = b2_constant {
        let _ = writeln!(s, "variational-inequality constant estimate: {b:.4}");
    }
    out.write("summary.txt", &s)?;
    Ok(flags)
}

fn run_counterexample(cfg: &ResolvedConfig, out: &Outputs) -> anyhow::Result<Vec<String>> {
    let report = counterexample_run(cfg.dim, cfg.support_count, cfg.eps_schedule(), &cfg.deltas)?;
    let mut flags = Vec::new();
    if !report.identities_ok {
        flags.push("an exact identity exceeded its relative tolerance".into());
    }

    let header = "delta,alpha,eps,h_identity_residual,r_identity_residual,r_gap";
    let rows: Vec<String> = report
        .steps
        .iter()
        .map(|st| {
            format!(
                "{},{},{},{},{},{}",
                st.delta, st.alpha, st.eps, st.h_identity_residual, st.r_identity_residual,
                st.r_gap
            )
        })
        .collect();
    out.write_table("records", header, &rows, &report.steps)?;

    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        inner: &'a CounterexampleReport,
        flags: &'a [String],
    }
    out.write_json("report.json", &Report { inner: &report, flags: &flags })?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "sequence-space counterexample: dim = {}, support = {}, eps schedule = {}",
        cfg.dim, cfg.support_count, cfg.eps_schedule
    );
    let _ = writeln!(
        s,
        "{:>12} | {:>10} | {:>13} | {:>13} | {:>14}",
        "delta", "eps", "H residual", "R residual", "R(z_k)-R(x\u{2021})"
    );
    for st in &report.steps {
        let _ = writeln!(
            s,
            "{:>12.4e} | {:>10.3e} | {:>13.3e} | {:>13.3e} | {:>14.8}",
            st.delta, st.eps, st.h_identity_residual, st.r_identity_residual, st.r_gap
        );
    }
    let _ = writeln!(s, "all identities within 1e-12 relative: {}", report.identities_ok);
    out.write("summary.txt", &s)?;
    Ok(flags)
}

/// Marker so configuration problems exit with status 2 rather than 1.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for ConfigError {}

fn run(command: &'static str, raw: RawConfig) -> anyhow::Result<Vec<String>> {
    let cfg = resolve(command, raw).map_err(|e| anyhow::Error::new(ConfigError(e)))?;
    let out = Outputs::new(&cfg)?;
    out.write_json("config-resolved.json", &cfg)?;
    let flags = match command {
        "experiment" => run_experiment(&cfg, &out),
        "rates" => run_rates(&cfg, &out),
        _ => run_counterexample(&cfg, &out),
    }?;
    for flag in &flags {
        eprintln!("flagged: {flag}");
    }
    println!("wrote {}", out.dir.join("report.json").display());
    Ok(if cfg.strict { flags } else { Vec::new() })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, raw) = match cli.command {
        Command::Experiment(raw) => ("experiment", raw),
        Command::Rates(raw) => ("rates", raw),
        Command::Counterexample(raw) => ("counterexample", raw),
    };
    match run(command, raw) {
        Ok(flags) if flags.is_empty() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<ConfigError>().is_some()
                || matches!(
                    e.downcast_ref::<cpr_core::Error>(),
                    Some(cpr_core::Error::InvalidArgument(_))
                );
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
