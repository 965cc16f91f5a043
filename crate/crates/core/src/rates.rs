//! Experiment orchestration: source-condition instances, noise ladders,
//! log-log rate fits, converse and finite-dimensional diagnostics, and the
//! sequence-space counterexample with its exact identities.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::noise::{add_noise, NoiseSpec};
use crate::operator::LinearProblemOperator;
use crate::regularizer::{Regularizer, Selection};
use crate::variational::{
    choose_alpha, SolveOptions, StopReason, StoppingRule, TikhonovProblem,
};

/// A ground-truth instance satisfying the source condition by construction:
/// x_dag = A* w, y = A x_dag.
#[derive(Clone, Debug)]
pub struct SourceSpec {
    pub w: GridFunction,
    pub x_dag: GridFunction,
    pub y: GridFunction,
}

pub fn make_source_instance(op: &LinearProblemOperator, w: &GridFunction) -> Result<SourceSpec> {
    let x_dag = op.adjoint_apply(w)?;
    let y = op.apply(&x_dag)?;
    Ok(SourceSpec { w: w.clone(), x_dag, y })
}

impl SourceSpec {
    /// Instance from a direct target, bypassing the source condition
    /// (x_dag need not lie in ran(A*)). Used for converse contrast cases.
    pub fn from_target(op: &LinearProblemOperator, x_dag: &GridFunction) -> Result<Self> {
        let y = op.apply(x_dag)?;
        Ok(Self {
            w: GridFunction::zeros(x_dag.len(), x_dag.weight()),
            x_dag: x_dag.clone(),
            y,
        })
    }
}

/// A source element with a kink, w(s) = |s - 0.6| + cos(10 s). Its lack of
/// extra smoothness keeps the O(delta) rate bounds tight, making it the
/// better choice for slope-window checks (the smooth default profile
/// superconverges and fits a steeper slope).
pub fn generic_source_profile(s: f64) -> f64 {
    (s - 0.6).abs() + (10.0 * s).cos()
}

/// The source element of the depth-profiling experiment:
/// w(s) = cos(10 s) + sin(5 s^2).
pub fn default_source_profile(s: f64) -> f64 {
    (10.0 * s).cos() + (5.0 * s * s).sin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverChoice {
    GradientDescent,
    HeavyBall,
    /// Direct normal-equations solve (quadratic kinds only).
    Oracle,
}

impl std::str::FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Self::GradientDescent),
            "heavyball" => Ok(Self::HeavyBall),
            "oracle" => Ok(Self::Oracle),
            other => Err(Error::InvalidArgument(format!("unknown solver '{other}'"))),
        }
    }
}

/// Per-noise-level metrics, all measured against the known x_dag with
/// xi = G(x_dag).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub delta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// |A x_k - y_k|
    pub discrepancy: f64,
    /// |x_k - x_dag|^2
    pub error_sq: f64,
    /// |D_xi(x_k, x_dag)|
    pub bregman_abs: f64,
    /// |D^sym_G(x_k, x_dag)|
    pub bregman_sym_abs: f64,
    /// Tikhonov gap against the oracle minimizer, clipped at 0; None when no
    /// oracle exists for the regularizer kind.
    pub gap: Option<f64>,
    /// Whether <z_k, x_k> <= 0 held at exit.
    pub sign_flag: bool,
}

/// One ladder entry with the artifacts needed by downstream checks.
#[derive(Clone, Debug)]
pub struct LadderRun {
    pub record: RunRecord,
    pub iterate: GridFunction,
    pub noisy_data: GridFunction,
}

#[derive(Clone, Debug)]
pub struct LadderConfig {
    pub deltas: Vec<f64>,
    /// alpha = alpha_c * delta.
    pub alpha_c: f64,
    /// eta = alpha^beta; the gradient-norm tolerance is alpha * eta.
    pub beta: f64,
    pub solver: SolverChoice,
    pub seed: u64,
    pub cap: usize,
}

fn validate_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("empty noise ladder".into()));
    }
    if deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument("noise levels must be positive".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "noise levels must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Run the noise ladder: for each delta, perturb the data, solve the Tikhonov
/// problem with the configured solver and gradient-norm tolerance
/// tau = alpha * eta, and collect all metrics against x_dag.
pub fn run_noise_ladder(
    op: &LinearProblemOperator,
    source: &SourceSpec,
    reg: &Regularizer,
    selection: Selection,
    cfg: &LadderConfig,
    x0: &GridFunction,
) -> Result<Vec<LadderRun>> {
    validate_deltas(&cfg.deltas)?;
    let mut runs = Vec::with_capacity(cfg.deltas.len());
    for (index, &delta) in cfg.deltas.iter().enumerate() {
        let alpha = choose_alpha(delta, cfg.alpha_c);
        let eta = alpha.powf(cfg.beta);
        let noisy = add_noise(
            &source.y,
            &NoiseSpec { delta, seed: cfg.seed ^ index as u64 },
        )?;
        let problem = TikhonovProblem::new(
            op.clone(),
            noisy.clone(),
            alpha,
            reg.clone(),
            selection,
        )?;

        let (iterate, iterations, stop_reason, sign_flag) = match cfg.solver {
            SolverChoice::Oracle => {
                let x = problem.exact_minimizer()?;
                let z = problem.residual(&x)?;
                let sign = z.dot(&x) <= 0.0;
                (x, 0, StopReason::Oracle, sign)
            }
            SolverChoice::GradientDescent | SolverChoice::HeavyBall => {
                let stop = StoppingRule::GradNorm { tau: alpha * eta };
                let opts = SolveOptions { cap: cfg.cap, ..Default::default() };
                let report = match cfg.solver {
                    SolverChoice::GradientDescent => problem.gradient_descent(x0, &stop, &opts)?,
                    _ => problem.heavy_ball(x0, &stop, &opts)?,
                };
                (
                    report.final_iterate,
                    report.iterations,
                    report.stop_reason,
                    report.sign_flag,
                )
            }
        };

        let gap = if reg.is_convex() {
            let reference = problem.exact_minimizer()?;
            Some(problem.gap(&iterate, &reference)?.max(0.0))
        } else {
            None
        };

        let discrepancy = op.apply(&iterate)?.sub(&noisy).norm();
        let diff = iterate.sub(&source.x_dag);
        let record = RunRecord {
            delta,
            alpha,
            eta,
            iterations,
            stop_reason,
            discrepancy,
            error_sq: diff.norm_sq(),
            bregman_abs: reg.bregman(selection, &iterate, &source.x_dag)?.abs(),
            bregman_sym_abs: reg.bregman_sym(selection, &iterate, &source.x_dag)?.abs(),
            gap,
            sign_flag,
        };
        runs.push(LadderRun { record, iterate, noisy_data: noisy });
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Discrepancy,
    ErrorSq,
    BregmanAbs,
    BregmanSymAbs,
    Gap,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Discrepancy,
        Metric::ErrorSq,
        Metric::BregmanAbs,
        Metric::BregmanSymAbs,
        Metric::Gap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Discrepancy => "discrepancy",
            Metric::ErrorSq => "error_sq",
            Metric::BregmanAbs => "bregman_abs",
            Metric::BregmanSymAbs => "bregman_sym_abs",
            Metric::Gap => "gap",
        }
    }

    pub fn extract(&self, r: &RunRecord) -> Option<f64> {
        match self {
            Metric::Discrepancy => Some(r.discrepancy),
            Metric::ErrorSq => Some(r.error_sq),
            Metric::BregmanAbs => Some(r.bregman_abs),
            Metric::BregmanSymAbs => Some(r.bregman_sym_abs),
            Metric::Gap => r.gap,
        }
    }
}

/// Least-squares fit of log(metric) against log(delta).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub metric: String,
    pub points_used: usize,
    /// Noise levels dropped because the metric was nonpositive there.
    pub dropped: Vec<f64>,
}

fn regress(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

pub fn fit_rate(records: &[RunRecord], metric: Metric) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        match metric.extract(r) {
            Some(v) if v > 0.0 => {
                xs.push(r.delta.ln());
                ys.push(v.ln());
            }
            _ => dropped.push(r.delta),
        }
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "rate fit for {} needs at least 2 positive points, got {}",
            metric.name(),
            xs.len()
        )));
    }
    let (slope, intercept, r2) = regress(&xs, &ys);
    let mut fit = RateFit {
        slope,
        intercept,
        r_squared: r2,
        metric: metric.name().into(),
        points_used: xs.len(),
        dropped,
    };
    // The theorems are asymptotic: drop the largest delta when it clearly sits
    // in the pre-asymptotic regime.
    if xs.len() >= 3 {
        let largest = xs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let rxs: Vec<f64> = xs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != largest)
            .map(|(_, &v)| v)
            .collect();
        let rys: Vec<f64> = ys
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != largest)
            .map(|(_, &v)| v)
            .collect();
        let (s2, i2, r2b) = regress(&rxs, &rys);
        if r2b - r2 > 0.05 {
            fit.dropped.push(xs[largest].exp());
            fit.slope = s2;
            fit.intercept = i2;
            fit.r_squared = r2b;
            fit.points_used = rxs.len();
        }
    }
    Ok(fit)
}

/// Necessity check: w_k = (A x_k - y_k) / alpha_k must stay bounded exactly
/// when the source condition holds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConverseReport {
    pub w_norms: Vec<f64>,
    pub sup_w_norm: f64,
    /// |G(x_dag) + A* w_k| per ladder entry.
    pub source_residuals: Vec<f64>,
    /// Value at the smallest noise level.
    pub source_residual: f64,
    /// max / min of the w norms <= 10.
    pub bounded_flag: bool,
}

pub fn converse_check(
    runs: &[LadderRun],
    x_dag: &GridFunction,
    reg: &Regularizer,
    selection: Selection,
    op: &LinearProblemOperator,
) -> Result<ConverseReport> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("empty ladder".into()));
    }
    let g_dag = reg.gradient(selection, x_dag)?;
    let mut w_norms = Vec::with_capacity(runs.len());
    let mut source_residuals = Vec::with_capacity(runs.len());
    for run in runs {
        let w_k = op
            .apply(&run.iterate)?
            .sub(&run.noisy_data)
            .scale(1.0 / run.record.alpha);
        w_norms.push(w_k.norm());
        source_residuals.push(g_dag.add(&op.adjoint_apply(&w_k)?).norm());
    }
    let sup = w_norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inf = w_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConverseReport {
        sup_w_norm: sup,
        source_residual: *source_residuals.last().unwrap(),
        bounded_flag: inf > 0.0 && sup / inf <= 10.0,
        w_norms,
        source_residuals,
    })
}

/// Empirical check of the finite-dimensional variational inequality: maximum
/// of `<G(z), x_dag - z> / |A(z - x_dag)|` over random samples near x_dag,
/// restricted to samples with R(z) close to R(x_dag). Finiteness of the
/// estimate is the check; negative numerators count as 0.
pub fn verify_b2_constant(
    op: &LinearProblemOperator,
    source: &SourceSpec,
    reg: &Regularizer,
    selection: Selection,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let x_dag = &source.x_dag;
    let r_dag = reg.value(x_dag)?;
    let phi = reg.tolerance(selection, x_dag.len()).evaluate(x_dag);
    let level_window = phi.max(0.1 * (1.0 + r_dag.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<f64> = None;
    for _ in 0..sample_count {
        let dir = GridFunction::new(
            (0..x_dag.len()).map(|_| StandardNormal.sample(&mut rng)).collect(),
            x_dag.weight(),
        );
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let t: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
        let mut z = x_dag.clone();
        z.axpy(radius * t / norm, &dir);
        if (reg.value(&z)? - r_dag).abs() > level_window {
            continue;
        }
        let denom = op.apply(&z.sub(x_dag))?.norm();
        if denom < 1e-14 {
            continue;
        }
        let num = reg.gradient(selection, &z)?.dot(&x_dag.sub(&z)).max(0.0);
        let ratio = num / denom;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::Degenerate("all samples were degenerate".into()))
}

/// Epsilon schedule for the counterexample perturbation z_k = x_k + eps e_{2k}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpsSchedule {
    Fixed(f64),
    /// eps_k = delta_k.
    MatchDelta,
}

impl EpsSchedule {
    fn at(&self, delta: f64) -> f64 {
        match *self {
            EpsSchedule::Fixed(e) => e,
            EpsSchedule::MatchDelta => delta,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleStep {
    pub delta: f64,
    pub alpha: f64,
    pub eps: f64,
    /// Relative residual of H_k(z_k) - H_k(x_k) = alpha_k eps^2 / 2.
    pub h_identity_residual: f64,
    /// Relative residual of R(z_k) - R(x_k) = eps^2 / 2.
    pub r_identity_residual: f64,
    /// R(z_k) - R(x_dag).
    pub r_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub steps: Vec<CounterexampleStep>,
    pub identities_ok: bool,
}

pub const COUNTEREXAMPLE_IDENTITY_TOL: f64 = 1e-12;

/// Difference of quadratic misfits `|u - y|^2/2 - |v - y|^2/2`, evaluated in
/// factored form so that shared components cancel exactly.
fn misfit_diff(u: &GridFunction, v: &GridFunction, y: &GridFunction) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        let (a, b, c) = (u.values()[i], v.values()[i], y.values()[i]);
        s += (a - b) * (a + b - 2.0 * c);
    }
    0.5 * u.weight() * s
}

/// Difference of quadratic-part values `|u|^2/2 - |v|^2/2` in factored form.
fn quad_diff(u: &GridFunction, v: &GridFunction) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        let (a, b) = (u.values()[i], v.values()[i]);
        s += (a - b) * (a + b);
    }
    0.5 * u.weight() * s
}

/// Sequence-space counterexample: y supported on the first `support_count` odd
/// coordinates with values (2j-1)^{-2}; per ladder step the data is perturbed
/// by delta_k e_1, x_k is the componentwise exact minimizer, and
/// z_k = x_k + eps e_{2k}. Checks the two exact identities
/// H_k(z_k) - H_k(x_k) = alpha_k eps^2/2 and R(z_k) - R(x_k) = eps^2/2.
pub fn counterexample_run(
    dim: usize,
    support_count: usize,
    eps: EpsSchedule,
    deltas: &[f64],
) -> Result<CounterexampleReport> {
    validate_deltas(deltas)?;
    if dim < 2 * deltas.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "dim {dim} too small for {} ladder steps (need >= {})",
            deltas.len(),
            2 * deltas.len() + 1
        )));
    }
    if support_count == 0 || 2 * support_count - 1 > dim {
        return Err(Error::InvalidArgument(format!(
            "support_count {support_count} out of range for dim {dim}"
        )));
    }
    let op = LinearProblemOperator::diagonal_sequence(dim)?;
    let diag: Vec<f64> = (0..dim).map(|i| op.matrix()[(i, i)]).collect();

    let mut y = GridFunction::zeros(dim, 1.0);
    for j in 1..=support_count {
        let i = 2 * j - 2; // 0-based index of e_{2j-1}
        y.values_mut()[i] = 1.0 / ((2 * j - 1) as f64).powi(2);
    }
    // minimal-norm solution of A x = y
    let x_dag = GridFunction::sequence(
        (0..dim)
            .map(|i| if diag[i] != 0.0 { y.values()[i] / diag[i] } else { 0.0 })
            .collect(),
    );
    let reg = Regularizer::quadratic();

    let mut steps = Vec::with_capacity(deltas.len());
    let mut identities_ok = true;
    for (k, &delta) in deltas.iter().enumerate() {
        let alpha = delta;
        let eps_k = eps.at(delta);
        // noise on the odd support only
        let mut y_k = y.clone();
        y_k.values_mut()[0] += delta;
        let x_k = GridFunction::sequence(
            (0..dim)
                .map(|i| diag[i] * y_k.values()[i] / (diag[i] * diag[i] + alpha))
                .collect(),
        );
        let mut z_k = x_k.clone();
        z_k.values_mut()[2 * (k + 1) - 1] += eps_k; // e_{2(k+1)}, 1-based

        let a_x = op.apply(&x_k)?;
        let a_z = op.apply(&z_k)?;
        let r_diff = quad_diff(&z_k, &x_k);
        let h_diff = misfit_diff(&a_z, &a_x, &y_k) + alpha * r_diff;

        let r_expected = eps_k * eps_k / 2.0;
        let h_expected = alpha * r_expected;
        let rel = |got: f64, want: f64| {
            if want == 0.0 {
                got.abs()
            } else {
                (got - want).abs() / want.abs()
            }
        };
        let h_res = rel(h_diff, h_expected);
        let r_res = rel(r_diff, r_expected);
        if h_res > COUNTEREXAMPLE_IDENTITY_TOL || r_res > COUNTEREXAMPLE_IDENTITY_TOL {
            identities_ok = false;
        }

        let r_gap = reg.value(&z_k)? - reg.value(&x_dag)?;
        steps.push(CounterexampleStep {
            delta,
            alpha,
            eps: eps_k,
            h_identity_residual: h_res,
            r_identity_residual: r_res,
            r_gap,
        });
    }
    Ok(CounterexampleReport { steps, identities_ok })
}

/// Per-record constants for the Tikhonov-gap rate bounds, anchored at the
/// largest noise level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapRateReport {
    pub discrepancy_fit: RateFit,
    /// discrepancy^2 / (delta^2 + gap) per record.
    pub c_discrepancy: Vec<f64>,
    /// bregman_abs / (delta + gap/delta) per record.
    pub c_bregman: Vec<f64>,
    /// max over records of c / c(largest delta), per bound.
    pub c_discrepancy_spread: f64,
    pub c_bregman_spread: f64,
    /// Both spreads stay within a factor 10.
    pub within_factor_10: bool,
}

pub fn gap_rate_check(records: &[RunRecord]) -> Result<GapRateReport> {
    if records.iter().any(|r| r.gap.is_none()) {
        return Err(Error::InvalidArgument(
            "gap rate check needs gap values on every record".into(),
        ));
    }
    let discrepancy_fit = fit_rate(records, Metric::Discrepancy)?;
    let c_discrepancy: Vec<f64> = records
        .iter()
        .map(|r| r.discrepancy.powi(2) / (r.delta.powi(2) + r.gap.unwrap()))
        .collect();
    let c_bregman: Vec<f64> = records
        .iter()
        .map(|r| r.bregman_abs / (r.delta + r.gap.unwrap() / r.delta))
        .collect();
    let spread = |cs: &[f64]| {
        let anchor = cs[0].max(f64::MIN_POSITIVE);
        cs.iter().fold(0.0f64, |m, &c| m.max(c / anchor))
    };
    let c_discrepancy_spread = spread(&c_discrepancy);
    let c_bregman_spread = spread(&c_bregman);
    Ok(GapRateReport {
        discrepancy_fit,
        within_factor_10: c_discrepancy_spread <= 10.0 && c_bregman_spread <= 10.0,
        c_discrepancy,
        c_bregman,
        c_discrepancy_spread,
        c_bregman_spread,
    })
}

/// Dense pseudo-inverse of A*, used as a test oracle for the
/// finite-dimensional bound; exposed for the diagnostics suite.
pub fn adjoint_pseudo_inverse_apply(
    op: &LinearProblemOperator,
    v: &GridFunction,
) -> Result<GridFunction> {
    let svd = op.matrix().transpose().svd(true, true);
    let rhs = DVector::from_column_slice(v.values());
    let sol = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(GridFunction::new(sol.data.into(), v.weight()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Grid};

    fn depth_setup(n: usize) -> (Grid, LinearProblemOperator, SourceSpec) {
        let grid = make_grid(n).unwrap();
        let op = LinearProblemOperator::depth_profiling(&grid);
        let w = GridFunction::sample(&grid, default_source_profile);
        let source = make_source_instance(&op, &w).unwrap();
        (grid, op, source)
    }

    #[test]
    fn source_instance_examples() {
        let (grid, op, _) = depth_setup(64);
        let zero = GridFunction::zeros(64, grid.weight());
        let s = make_source_instance(&op, &zero).unwrap();
        assert_eq!(s.x_dag.norm(), 0.0);
        assert_eq!(s.y.norm(), 0.0);

        let id = LinearProblemOperator::identity(4, 1.0);
        let w = GridFunction::sequence(vec![1.0, -2.0, 0.5, 0.0]);
        let s = make_source_instance(&id, &w).unwrap();
        assert_eq!(s.x_dag, w);
    }

    #[test]
    fn source_profile_spot_value() {
        let s = std::f64::consts::FRAC_PI_4;
        let want = (10.0 * s).cos() + (5.0 * s * s).sin();
        assert!((default_source_profile(s) - want).abs() < 1e-15);
        assert!((want - 0.0573).abs() < 1e-3);
    }

    #[test]
    fn fit_rate_exact_line() {
        let mk = |delta: f64, v: f64| RunRecord {
            delta,
            alpha: delta,
            eta: 1.0,
            iterations: 0,
            stop_reason: StopReason::Oracle,
            discrepancy: v,
            error_sq: v,
            bregman_abs: v,
            bregman_sym_abs: v,
            gap: Some(0.0),
            sign_flag: true,
        };
        let recs = vec![mk(1e-1, 1e-1), mk(1e-2, 1e-2), mk(1e-3, 1e-3)];
        let fit = fit_rate(&recs, Metric::Discrepancy).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let recs = vec![mk(1e-2, 5.0), mk(1e-4, 5.0)];
        let fit = fit_rate(&recs, Metric::Discrepancy).unwrap();
        assert!(fit.slope.abs() < 1e-12);

        let recs = vec![mk(1e-2, 0.0)];
        assert!(fit_rate(&recs, Metric::Discrepancy).is_err());
    }

    #[test]
    fn ladder_rejects_bad_deltas() {
        let (grid, op, source) = depth_setup(16);
        let cfg = LadderConfig {
            deltas: vec![1e-2, 1e-2],
            alpha_c: 1.0,
            beta: 0.1,
            solver: SolverChoice::Oracle,
            seed: 0,
            cap: 1000,
        };
        let x0 = GridFunction::zeros(16, grid.weight());
        assert!(run_noise_ladder(&op, &source, &Regularizer::quadratic(), Selection::ExactGradient, &cfg, &x0)
            .is_err());
    }

    #[test]
    fn oracle_ladder_has_unit_discrepancy_slope() {
        let (grid, op, source) = depth_setup(64);
        let cfg = LadderConfig {
            deltas: vec![1e-2, 1e-3, 1e-4, 1e-5],
            alpha_c: 1.0,
            beta: 0.1,
            solver: SolverChoice::Oracle,
            seed: 0,
            cap: 1000,
        };
        let x0 = GridFunction::zeros(64, grid.weight());
        let runs = run_noise_ladder(
            &op,
            &source,
            &Regularizer::quadratic(),
            Selection::ExactGradient,
            &cfg,
            &x0,
        )
        .unwrap();
        let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
        let fit = fit_rate(&records, Metric::Discrepancy).unwrap();
        assert!((0.9..=1.1).contains(&fit.slope), "slope {}", fit.slope);
    }

    #[test]
    fn converse_identity_for_oracle_minimizers() {
        let (grid, op, source) = depth_setup(64);
        let cfg = LadderConfig {
            deltas: vec![1e-2, 1e-3, 1e-4],
            alpha_c: 1.0,
            beta: 0.1,
            solver: SolverChoice::Oracle,
            seed: 1,
            cap: 1000,
        };
        let x0 = GridFunction::zeros(64, grid.weight());
        let reg = Regularizer::quadratic();
        let runs =
            run_noise_ladder(&op, &source, &reg, Selection::ExactGradient, &cfg, &x0).unwrap();
        // normal equations give A* w_k = -x_k, so the source residual is
        // exactly |x_dag - x_k|
        for run in &runs {
            let w_k = op
                .apply(&run.iterate)
                .unwrap()
                .sub(&run.noisy_data)
                .scale(1.0 / run.record.alpha);
            let lhs = op.adjoint_apply(&w_k).unwrap();
            let rhs = run.iterate.scale(-1.0);
            assert!(lhs.sub(&rhs).norm() <= 1e-8 * rhs.norm().max(1.0));
        }
        let report =
            converse_check(&runs, &source.x_dag, &reg, Selection::ExactGradient, &op).unwrap();
        assert!(report.bounded_flag, "w norms {:?}", report.w_norms);
        assert!(report
            .source_residuals
            .windows(2)
            .all(|w| w[1] < w[0]));
    }

    #[test]
    fn b2_constant_is_finite_and_within_pseudo_inverse_bound() {
        let (_, op, source) = depth_setup(32);
        let reg = Regularizer::quadratic();
        let c = verify_b2_constant(&op, &source, &reg, Selection::ExactGradient, 200, 0.1, 3)
            .unwrap();
        assert!(c.is_finite() && c >= 0.0);
        // Corollary-style oracle: the ratio is bounded by
        // sup |(A*)^dagger G(z)| over the sampled region; bound it loosely by
        // evaluating at x_dag and inflating.
        let g = reg.gradient(Selection::ExactGradient, &source.x_dag).unwrap();
        let pinv = adjoint_pseudo_inverse_apply(&op, &g).unwrap();
        assert!(c <= 100.0 * pinv.norm().max(1.0), "c = {c}, pinv = {}", pinv.norm());
    }

    #[test]
    fn b2_degenerate_samples_error() {
        let (_, op, source) = depth_setup(16);
        let reg = Regularizer::quadratic();
        // radius 0 makes every sample coincide with x_dag
        assert!(verify_b2_constant(&op, &source, &reg, Selection::ExactGradient, 10, 0.0, 0)
            .is_err());
    }

    #[test]
    fn counterexample_identities_fixed_eps() {
        let deltas: Vec<f64> = (1..=8).map(|k| 0.5f64.powi(k)).collect();
        let report = counterexample_run(32, 2, EpsSchedule::Fixed(0.5), &deltas).unwrap();
        assert!(report.identities_ok);
        for s in &report.steps {
            assert!(s.h_identity_residual <= COUNTEREXAMPLE_IDENTITY_TOL);
            assert!(s.r_identity_residual <= COUNTEREXAMPLE_IDENTITY_TOL);
        }
        // R(z_k) - R(x_dag) approaches eps^2/2 = 0.125
        let last = report.steps.last().unwrap();
        assert!((last.r_gap - 0.125).abs() < 1e-2);
    }

    #[test]
    fn counterexample_zero_eps() {
        let deltas: Vec<f64> = (1..=4).map(|k| 0.5f64.powi(k)).collect();
        let report = counterexample_run(16, 1, EpsSchedule::Fixed(0.0), &deltas).unwrap();
        for s in &report.steps {
            assert_eq!(s.h_identity_residual, 0.0);
            assert_eq!(s.r_identity_residual, 0.0);
            assert!(s.r_gap.abs() < 1e-12);
        }
    }

    #[test]
    fn counterexample_delta_schedule_decays() {
        let deltas: Vec<f64> = (1..=10).map(|k| 0.5f64.powi(k)).collect();
        let report = counterexample_run(32, 1, EpsSchedule::MatchDelta, &deltas).unwrap();
        assert!(report.identities_ok);
        for s in &report.steps {
            // |R(z_k) - R(x_dag)| <= eps_k^2/2 + |R(x_k) - R(x_dag)|;
            // with support 1 the second term vanishes
            assert!(s.r_gap.abs() <= s.eps * s.eps / 2.0 + 1e-12);
        }
        let gaps: Vec<f64> = report.steps.iter().map(|s| s.r_gap.abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn counterexample_dimension_guard() {
        let deltas: Vec<f64> = (1..=8).map(|k| 0.5f64.powi(k)).collect();
        assert!(counterexample_run(10, 1, EpsSchedule::Fixed(0.1), &deltas).is_err());
    }

    #[test]
    fn gap_rate_check_oracle_reduces_to_classical() {
        let (grid, op, source) = depth_setup(64);
        let cfg = LadderConfig {
            deltas: vec![1e-2, 1e-3, 1e-4, 1e-5],
            alpha_c: 1.0,
            beta: 0.1,
            solver: SolverChoice::Oracle,
            seed: 2,
            cap: 1000,
        };
        let x0 = GridFunction::zeros(64, grid.weight());
        let runs = run_noise_ladder(
            &op,
            &source,
            &Regularizer::quadratic(),
            Selection::ExactGradient,
            &cfg,
            &x0,
        )
        .unwrap();
        let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
        let report = gap_rate_check(&records).unwrap();
        assert!((0.9..=1.1).contains(&report.discrepancy_fit.slope));
        assert!(report.within_factor_10);
    }
}
