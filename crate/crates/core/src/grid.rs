//! Uniform midpoint grids on (0, pi/2) and quadrature-weighted vectors.
//!
//! A [`GridFunction`] carries its own inner-product weight so the same type
//! serves both the L2(0, pi/2) discretization (weight = h) and plain
//! sequence-space vectors (weight = 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the domain (0, pi/2).
pub const DOMAIN_LENGTH: f64 = std::f64::consts::FRAC_PI_2;

/// Uniform midpoint grid of (0, pi/2) with n cells of width h = (pi/2)/n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 nodes, got {n}"
            )));
        }
        Ok(Self {
            n,
            h: DOMAIN_LENGTH / n as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell width, which is also the quadrature weight of every node.
    pub fn weight(&self) -> f64 {
        self.h
    }

    /// Midpoint of cell i: s_i = (i + 1/2) h.
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.node(i))
    }
}

/// Real-valued function sampled on a grid, or a plain finite sequence.
///
/// The inner product is `weight * sum_i x_i y_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<f64>,
    weight: f64,
}

impl GridFunction {
    pub fn new(values: Vec<f64>, weight: f64) -> Self {
        assert!(weight > 0.0, "inner-product weight must be positive");
        Self { values, weight }
    }

    /// Sequence-space vector: unit weight.
    pub fn sequence(values: Vec<f64>) -> Self {
        Self::new(values, 1.0)
    }

    pub fn zeros(n: usize, weight: f64) -> Self {
        Self::new(vec![0.0; n], weight)
    }

    pub fn constant(c: f64, n: usize, weight: f64) -> Self {
        Self::new(vec![c; n], weight)
    }

    /// Sample a function at the grid nodes.
    pub fn sample(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::new(grid.nodes().map(f).collect(), grid.weight())
    }

    /// Standard basis vector e_i (0-based index), unit weight.
    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self::sequence(v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Weighted inner product `weight * sum_i x_i y_i`.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "inner product dimension mismatch");
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        self.weight * s
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(self.values.iter().map(|a| c * a).collect(), self.weight)
    }

    /// self += c * other, in place.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.len(), other.len(), "axpy dimension mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "dimension mismatch");
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            self.weight,
        )
    }
}

/// Convenience alias for [`Grid::new`].
pub fn make_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}
