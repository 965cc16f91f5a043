//! Dense linear operators in the quadrature-weighted inner product.
//!
//! Since domain and range share the same weight, the adjoint in the weighted
//! inner product is the plain matrix transpose.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, DOMAIN_LENGTH};

const NORM_TOL: f64 = 1e-6;
const NORM_MAX_ITER: usize = 10_000;

/// Dense n x n operator with cached transpose and lazily cached norm estimate.
#[derive(Debug)]
pub struct LinearProblemOperator {
    matrix: DMatrix<f64>,
    adjoint: DMatrix<f64>,
    weight: f64,
    norm_cache: OnceLock<f64>,
}

impl Clone for LinearProblemOperator {
    fn clone(&self) -> Self {
        Self {
            matrix: self.matrix.clone(),
            adjoint: self.adjoint.clone(),
            weight: self.weight,
            norm_cache: self.norm_cache.clone(),
        }
    }
}

impl LinearProblemOperator {
    pub fn from_matrix(matrix: DMatrix<f64>, weight: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "operator matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(weight > 0.0) {
            return Err(Error::InvalidArgument(
                "inner-product weight must be positive".into(),
            ));
        }
        let adjoint = matrix.transpose();
        Ok(Self {
            matrix,
            adjoint,
            weight,
            norm_cache: OnceLock::new(),
        })
    }

    pub fn identity(n: usize, weight: f64) -> Self {
        Self::from_matrix(DMatrix::identity(n, n), weight).expect("identity is square")
    }

    /// Midpoint-rule discretization of the depth-profiling operator
    /// `(Ax)(s) = int_0^{pi/2 - s} exp(-sin t) cos(t) x(t) dt`.
    ///
    /// The cell containing the upper limit contributes the covered fraction of
    /// its width; the kernel is always evaluated at the cell midpoint.
    pub fn depth_profiling(grid: &Grid) -> Self {
        let n = grid.len();
        let h = grid.weight();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            // arcsin(cos s) = pi/2 - s on (0, pi/2)
            let limit = DOMAIN_LENGTH - grid.node(i);
            for j in 0..n {
                let covered = (limit - j as f64 * h).clamp(0.0, h);
                if covered == 0.0 {
                    break;
                }
                let tau = grid.node(j);
                m[(i, j)] = covered * (-tau.sin()).exp() * tau.cos();
            }
        }
        Self::from_matrix(m, h).expect("square by construction")
    }

    /// Truncation of the sequence operator `Ax = (x_1, 0, x_3/3, ...)` to
    /// `R^dim` with unit weight: `(Ax)_i = x_i / i` for odd i (1-based), else 0.
    pub fn diagonal_sequence(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "sequence operator needs dim >= 2, got {dim}"
            )));
        }
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let one_based = i + 1;
            if one_based % 2 == 1 {
                m[(i, i)] = 1.0 / one_based as f64;
            }
        }
        Self::from_matrix(m, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn check_dim(&self, x: &GridFunction) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// y = A x.
    pub fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        self.check_dim(x)?;
        Ok(self.mul_vec(&self.matrix, x))
    }

    /// x = A* y (transpose in the weighted inner product).
    pub fn adjoint_apply(&self, y: &GridFunction) -> Result<GridFunction> {
        self.check_dim(y)?;
        Ok(self.mul_vec(&self.adjoint, y))
    }

    fn mul_vec(&self, m: &DMatrix<f64>, x: &GridFunction) -> GridFunction {
        let v = DVector::from_column_slice(x.values());
        let mut out = DVector::zeros(self.dim());
        out.gemv(1.0, m, &v, 0.0);
        GridFunction::new(out.data.into(), self.weight)
    }

    /// Largest singular value, estimated by power iteration on A*A.
    ///
    /// Cached after the first successful computation.
    pub fn operator_norm(&self) -> Result<f64> {
        if let Some(&v) = self.norm_cache.get() {
            return Ok(v);
        }
        let v = self.power_iteration()?;
        Ok(*self.norm_cache.get_or_init(|| v))
    }

    fn power_iteration(&self) -> Result<f64> {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
        let mut v: DVector<f64> =
            DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let nv = v.norm();
        if nv == 0.0 {
            return Err(Error::Degenerate("zero start vector".into()));
        }
        v /= nv;

        let mut lambda = 0.0_f64;
        for it in 0..NORM_MAX_ITER {
            let w = &self.adjoint * (&self.matrix * &v);
            let nw = w.norm();
            if nw == 0.0 {
                // A*A v = 0 for a generic v: the operator is (numerically) zero.
                return Ok(0.0);
            }
            let next = v.dot(&w);
            v = w / nw;
            if it > 0 && (next - lambda).abs() <= NORM_TOL * next.abs().max(f64::MIN_POSITIVE) {
                return Ok(next.max(0.0).sqrt());
            }
            lambda = next;
        }
        Err(Error::NonConvergence {
            iterations: NORM_MAX_ITER,
            last: lambda.max(0.0).sqrt(),
        })
    }
}
