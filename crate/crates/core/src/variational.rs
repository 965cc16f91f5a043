//! Tikhonov functional, critical-point residual, iterative solvers and the
//! exact-minimizer oracle.
//!
//! The residual of a candidate x is `z = A*(Ax - y) + alpha G(x)`; for smooth
//! regularizers with the exact-gradient selection this is the gradient of the
//! Tikhonov functional.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::LinearProblemOperator;
use crate::regularizer::{Regularizer, RegularizerKind, Selection};

pub const DEFAULT_ITERATION_CAP: usize = 1_000_000;

/// alpha = c * delta.
pub fn choose_alpha(delta: f64, c: f64) -> f64 {
    debug_assert!(delta > 0.0 && c > 0.0);
    c * delta
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoppingRule {
    /// Stop once the weighted residual norm drops to tau.
    GradNorm { tau: f64 },
    /// Stop once H(x) <= reference + alpha * eta, with `reference` the exact
    /// minimum value from the oracle.
    NearMinimizer { eta: f64, reference: f64 },
    /// Run until the iteration cap.
    MaxIter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradNorm,
    NearMinimizer,
    MaxIter,
    /// Direct solve; no iteration took place.
    Oracle,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::GradNorm => "gradnorm",
            StopReason::NearMinimizer => "nearmin",
            StopReason::MaxIter => "maxiter",
            StopReason::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub final_iterate: GridFunction,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Weighted norm of the residual at the exit iterate.
    pub residual_norm: f64,
    /// Whether <z, x> <= 0 held at the exit iterate. Recorded, never enforced.
    pub sign_flag: bool,
    /// Tikhonov value at the exit iterate.
    pub objective: f64,
    /// Optional per-iteration (objective, residual norm) pairs.
    pub trace: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Step size; None means 1/L with L = |A|^2 + alpha * curvature(R).
    pub step: Option<f64>,
    /// Heavy-ball momentum; None means the optimal value for the convex
    /// quadratic case.
    pub momentum: Option<f64>,
    pub cap: usize,
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            step: None,
            momentum: None,
            cap: DEFAULT_ITERATION_CAP,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TikhonovProblem {
    operator: LinearProblemOperator,
    data: GridFunction,
    alpha: f64,
    regularizer: Regularizer,
    selection: Selection,
}

impl TikhonovProblem {
    pub fn new(
        operator: LinearProblemOperator,
        data: GridFunction,
        alpha: f64,
        regularizer: Regularizer,
        selection: Selection,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if data.len() != operator.dim() {
            return Err(Error::DimensionMismatch {
                expected: operator.dim(),
                got: data.len(),
            });
        }
        Ok(Self {
            operator,
            data,
            alpha,
            regularizer,
            selection,
        })
    }

    pub fn operator(&self) -> &LinearProblemOperator {
        &self.operator
    }

    pub fn data(&self) -> &GridFunction {
        &self.data
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    fn check_dim(&self, x: &GridFunction) -> Result<()> {
        if x.len() != self.operator.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.operator.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// H(x) = |Ax - y|^2 / 2 + alpha R(x).
    pub fn value(&self, x: &GridFunction) -> Result<f64> {
        self.check_dim(x)?;
        let misfit = self.operator.apply(x)?.sub(&self.data).norm_sq();
        Ok(0.5 * misfit + self.alpha * self.regularizer.value(x)?)
    }

    /// z = A*(Ax - y) + alpha G(x).
    pub fn residual(&self, x: &GridFunction) -> Result<GridFunction> {
        self.check_dim(x)?;
        let mut z = self
            .operator
            .adjoint_apply(&self.operator.apply(x)?.sub(&self.data))?;
        z.axpy(self.alpha, &self.regularizer.gradient(self.selection, x)?);
        Ok(z)
    }

    /// Tikhonov gap H(x) - H(reference).
    pub fn gap(&self, x: &GridFunction, reference: &GridFunction) -> Result<f64> {
        Ok(self.value(x)? - self.value(reference)?)
    }

    /// 1/L with L = |A|^2 + alpha * curvature(R).
    pub fn auto_step(&self) -> Result<f64> {
        let a_norm = self.operator.operator_norm()?;
        let curv = self.regularizer.curvature_bound(self.selection)?;
        Ok(1.0 / (a_norm * a_norm + self.alpha * curv))
    }

    /// Direct dense solve of the normal equations `(A*A + alpha K*K) x = A*y`
    /// for the quadratic kinds. Independent of the iterative solvers.
    pub fn exact_minimizer(&self) -> Result<GridFunction> {
        let system = match self.regularizer.kind() {
            RegularizerKind::Quadratic => {
                let mut s = self.normal_matrix();
                for i in 0..s.nrows() {
                    s[(i, i)] += self.alpha;
                }
                s
            }
            RegularizerKind::GeneralizedQuadratic(k) => {
                let mut s = self.normal_matrix();
                s += (k.matrix().transpose() * k.matrix()) * self.alpha;
                s
            }
            RegularizerKind::BoundedPerturbation { .. } => {
                return Err(Error::Unsupported(
                    "exact minimizer is only available for quadratic regularizers".into(),
                ))
            }
        };
        let rhs = self.normal_rhs();
        let chol = system
            .cholesky()
            .ok_or_else(|| Error::Degenerate("normal equations not positive definite".into()))?;
        let x = chol.solve(&rhs);
        Ok(GridFunction::new(x.data.into(), self.data.weight()))
    }

    fn normal_matrix(&self) -> DMatrix<f64> {
        self.operator.matrix().transpose() * self.operator.matrix()
    }

    fn normal_rhs(&self) -> DVector<f64> {
        self.operator.matrix().transpose() * DVector::from_column_slice(self.data.values())
    }

    pub fn gradient_descent(
        &self,
        x0: &GridFunction,
        stop: &StoppingRule,
        opts: &SolveOptions,
    ) -> Result<SolveReport> {
        self.solve_iterative(x0, stop, opts, 0.0)
    }

    /// Gradient descent with a momentum term; convex regularizer kinds only.
    pub fn heavy_ball(
        &self,
        x0: &GridFunction,
        stop: &StoppingRule,
        opts: &SolveOptions,
    ) -> Result<SolveReport> {
        if !self.regularizer.is_convex() {
            return Err(Error::Unsupported(
                "heavy ball requires a convex regularizer kind".into(),
            ));
        }
        let momentum = match opts.momentum {
            Some(m) => {
                if !(0.0..1.0).contains(&m) {
                    return Err(Error::InvalidArgument(format!(
                        "momentum must lie in [0, 1), got {m}"
                    )));
                }
                m
            }
            None => self.optimal_momentum()?,
        };
        self.solve_iterative(x0, stop, opts, momentum)
    }

    /// Optimal heavy-ball momentum for the convex quadratic case, from the
    /// extreme curvatures mu = alpha and L = |A|^2 + alpha.
    fn optimal_momentum(&self) -> Result<f64> {
        let a_norm = self.operator.operator_norm()?;
        let curv = self.regularizer.curvature_bound(self.selection)?;
        let l = a_norm * a_norm + self.alpha * curv;
        let mu = self.alpha;
        let r = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
        Ok(r * r)
    }

    /// The matching step for the optimal momentum.
    fn optimal_heavy_ball_step(&self) -> Result<f64> {
        let a_norm = self.operator.operator_norm()?;
        let curv = self.regularizer.curvature_bound(self.selection)?;
        let l = a_norm * a_norm + self.alpha * curv;
        let mu = self.alpha;
        Ok(4.0 / (l.sqrt() + mu.sqrt()).powi(2))
    }

    fn solve_iterative(
        &self,
        x0: &GridFunction,
        stop: &StoppingRule,
        opts: &SolveOptions,
        momentum: f64,
    ) -> Result<SolveReport> {
        self.check_dim(x0)?;
        let weight = self.data.weight();
        let sqrt_weight = weight.sqrt();
        let n = self.operator.dim();

        let step = match opts.step {
            Some(s) if s > 0.0 => s,
            Some(s) => {
                return Err(Error::InvalidArgument(format!(
                    "step must be positive, got {s}"
                )))
            }
            None if momentum > 0.0 => self.optimal_heavy_ball_step()?,
            None => self.auto_step()?,
        };

        // B = A^T A + alpha Q with the linear part of the selected gradient
        // folded in; the sine perturbation stays as a per-iteration term.
        let mut system = self.normal_matrix();
        let mut perturbation: Option<f64> = None;
        match (self.regularizer.kind(), self.selection) {
            (RegularizerKind::Quadratic, _)
            | (RegularizerKind::BoundedPerturbation { .. }, Selection::ConvexPart) => {
                for i in 0..n {
                    system[(i, i)] += self.alpha;
                }
            }
            (RegularizerKind::GeneralizedQuadratic(k), _) => {
                system += (k.matrix().transpose() * k.matrix()) * self.alpha;
            }
            (RegularizerKind::BoundedPerturbation { a }, Selection::ExactGradient) => {
                for i in 0..n {
                    system[(i, i)] += self.alpha;
                }
                perturbation = Some(*a);
            }
        }
        let rhs = self.normal_rhs();

        let mut x = DVector::from_column_slice(x0.values());
        let mut x_prev = x.clone();
        let mut z = DVector::zeros(n);
        let mut iterations = 0usize;
        let mut trace = opts.record_trace.then(Vec::new);

        let stop_reason = loop {
            z.gemv(1.0, &system, &x, 0.0);
            z -= &rhs;
            if let Some(a) = perturbation {
                let scale = self.alpha * a / weight;
                for i in 0..n {
                    z[i] += scale * 0.5f64.powi(i as i32 + 1) * x[i].cos();
                }
            }
            let residual_norm = sqrt_weight * z.norm();

            if let Some(t) = trace.as_mut() {
                let gf = GridFunction::new(x.as_slice().to_vec(), weight);
                t.push((self.value(&gf)?, residual_norm));
            }

            match stop {
                StoppingRule::GradNorm { tau } => {
                    if residual_norm <= *tau {
                        break StopReason::GradNorm;
                    }
                }
                StoppingRule::NearMinimizer { eta, reference } => {
                    let gf = GridFunction::new(x.as_slice().to_vec(), weight);
                    if self.value(&gf)? <= reference + self.alpha * eta {
                        break StopReason::NearMinimizer;
                    }
                }
                StoppingRule::MaxIter => {}
            }
            if iterations >= opts.cap {
                break StopReason::MaxIter;
            }

            // x_next = (1 + m) x - m x_prev - step z, built in the old buffer
            x_prev *= -momentum;
            x_prev.axpy(1.0 + momentum, &x, 1.0);
            x_prev.axpy(-step, &z, 1.0);
            std::mem::swap(&mut x, &mut x_prev);
            iterations += 1;
        };

        let final_iterate = GridFunction::new(x.as_slice().to_vec(), weight);
        let residual = self.residual(&final_iterate)?;
        let residual_norm = residual.norm();
        let sign_flag = residual.dot(&final_iterate) <= 0.0;
        let objective = self.value(&final_iterate)?;
        Ok(SolveReport {
            final_iterate,
            iterations,
            stop_reason,
            residual_norm,
            sign_flag,
            objective,
            trace,
        })
    }
}
