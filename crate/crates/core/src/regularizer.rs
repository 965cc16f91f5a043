//! Regularization functionals, gradient selections, tolerance functions and
//! Bregman distances.
//!
//! The nonconvex demo regularizer is a bounded perturbation of the quadratic,
//! `R(x) = |x|^2/2 + a * sum_i 2^{-i} sin(x_i)`. Its convex-part selection
//! `G(x) = x` is a relative subgradient with the provable constant tolerance
//! `phi = 2 a M`, `M = sum_i 2^{-i} < 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::LinearProblemOperator;

/// Named gradient selections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Gradient of the convex quadratic part only.
    ConvexPart,
    /// Exact gradient of R.
    ExactGradient,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex" | "convex-part" => Ok(Self::ConvexPart),
            "exact" | "exact-gradient" => Ok(Self::ExactGradient),
            other => Err(Error::InvalidArgument(format!(
                "unknown gradient selection '{other}'"
            ))),
        }
    }
}

/// Constant-form tolerance function phi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ToleranceFn {
    Zero,
    Constant(f64),
}

impl ToleranceFn {
    pub fn evaluate(&self, _x: &GridFunction) -> f64 {
        match *self {
            ToleranceFn::Zero => 0.0,
            ToleranceFn::Constant(c) => c,
        }
    }
}

#[derive(Clone, Debug)]
pub enum RegularizerKind {
    /// R(x) = |x|^2 / 2
    Quadratic,
    /// R(x) = |K x|^2 / 2
    GeneralizedQuadratic(LinearProblemOperator),
    /// R(x) = |x|^2 / 2 + a * psi(x), psi(x) = sum_i 2^{-i} sin(x_i)
    BoundedPerturbation { a: f64 },
}

#[derive(Clone, Debug)]
pub struct Regularizer {
    kind: RegularizerKind,
}

/// Truncated perturbation bound M = sum_{i=1}^{dim} 2^{-i} = 1 - 2^{-dim}.
pub fn perturbation_bound(dim: usize) -> f64 {
    1.0 - 0.5f64.powi(dim.min(1074) as i32)
}

fn psi(x: &GridFunction) -> f64 {
    x.values()
        .iter()
        .enumerate()
        .map(|(i, &v)| 0.5f64.powi(i as i32 + 1) * v.sin())
        .sum()
}

impl Regularizer {
    pub fn quadratic() -> Self {
        Self { kind: RegularizerKind::Quadratic }
    }

    pub fn generalized_quadratic(k: LinearProblemOperator) -> Self {
        Self { kind: RegularizerKind::GeneralizedQuadratic(k) }
    }

    pub fn bounded_perturbation(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "perturbation strength must be positive, got {a}"
            )));
        }
        Ok(Self { kind: RegularizerKind::BoundedPerturbation { a } })
    }

    pub fn kind(&self) -> &RegularizerKind {
        &self.kind
    }

    /// Whether the functional itself is convex (kind-level).
    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, RegularizerKind::BoundedPerturbation { .. })
    }

    /// R(x).
    pub fn value(&self, x: &GridFunction) -> Result<f64> {
        match &self.kind {
            RegularizerKind::Quadratic => Ok(0.5 * x.norm_sq()),
            RegularizerKind::GeneralizedQuadratic(k) => Ok(0.5 * k.apply(x)?.norm_sq()),
            RegularizerKind::BoundedPerturbation { a } => Ok(0.5 * x.norm_sq() + a * psi(x)),
        }
    }

    /// The named gradient selection G(x), as a Riesz representative in the
    /// weighted inner product.
    pub fn gradient(&self, selection: Selection, x: &GridFunction) -> Result<GridFunction> {
        match (&self.kind, selection) {
            (RegularizerKind::Quadratic, _) => Ok(x.clone()),
            (RegularizerKind::GeneralizedQuadratic(k), _) => k.adjoint_apply(&k.apply(x)?),
            (RegularizerKind::BoundedPerturbation { .. }, Selection::ConvexPart) => Ok(x.clone()),
            (RegularizerKind::BoundedPerturbation { a }, Selection::ExactGradient) => {
                let mut g = x.clone();
                let scale = a / x.weight();
                for (i, v) in g.values_mut().iter_mut().enumerate() {
                    let coord = x.values()[i];
                    *v = coord + scale * 0.5f64.powi(i as i32 + 1) * coord.cos();
                }
                Ok(g)
            }
        }
    }

    /// Provable tolerance phi for the given selection: 2aM for the convex-part
    /// selection of the bounded perturbation, zero for the convex kinds.
    ///
    /// For the exact-gradient selection of the bounded perturbation no constant
    /// tolerance is established; callers should measure the empirical defect
    /// via [`check_relative_subgradient`].
    pub fn tolerance(&self, selection: Selection, dim: usize) -> ToleranceFn {
        match (&self.kind, selection) {
            (RegularizerKind::BoundedPerturbation { a }, Selection::ConvexPart) => {
                ToleranceFn::Constant(2.0 * a * perturbation_bound(dim))
            }
            _ => ToleranceFn::Zero,
        }
    }

    /// Upper bound on the curvature of R along the selection, used for step
    /// sizes: 1 for the quadratic part alone, 1 + a when the perturbation
    /// gradient is followed, |K|^2 for the generalized quadratic.
    pub fn curvature_bound(&self, selection: Selection) -> Result<f64> {
        match (&self.kind, selection) {
            (RegularizerKind::Quadratic, _) => Ok(1.0),
            (RegularizerKind::GeneralizedQuadratic(k), _) => {
                let n = k.operator_norm()?;
                Ok(n * n)
            }
            (RegularizerKind::BoundedPerturbation { .. }, Selection::ConvexPart) => Ok(1.0),
            (RegularizerKind::BoundedPerturbation { a }, Selection::ExactGradient) => Ok(1.0 + a),
        }
    }

    /// Bregman distance D_G(x, x0) = R(x) - R(x0) - <G(x0), x - x0>.
    ///
    /// May be negative for the nonconvex kind.
    pub fn bregman(&self, selection: Selection, x: &GridFunction, x0: &GridFunction) -> Result<f64> {
        let g0 = self.gradient(selection, x0)?;
        Ok(self.value(x)? - self.value(x0)? - g0.dot(&x.sub(x0)))
    }

    /// Symmetric Bregman distance D^sym_G(x, x0) = <G(x) - G(x0), x - x0>.
    pub fn bregman_sym(
        &self,
        selection: Selection,
        x: &GridFunction,
        x0: &GridFunction,
    ) -> Result<f64> {
        let g = self.gradient(selection, x)?;
        let g0 = self.gradient(selection, x0)?;
        Ok(g.sub(&g0).dot(&x.sub(x0)))
    }
}

/// Maximum defect of the relative-subgradient inequality over the samples:
/// `max_x R(x0) + <G(x0), x - x0> - R(x) - phi(x)`. Nonpositive means the
/// inequality holds on the whole sample set.
pub fn check_relative_subgradient(
    reg: &Regularizer,
    selection: Selection,
    phi: &ToleranceFn,
    x0: &GridFunction,
    samples: &[GridFunction],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let r0 = reg.value(x0)?;
    let g0 = reg.gradient(selection, x0)?;
    let mut worst = f64::NEG_INFINITY;
    for x in samples {
        let defect = r0 + g0.dot(&x.sub(x0)) - reg.value(x)? - phi.evaluate(x);
        worst = worst.max(defect);
    }
    Ok(worst)
}
