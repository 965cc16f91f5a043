//! Reproducible noise with exact norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
}

/// y + e with a seeded standard-normal sample e rescaled so that the weighted
/// norm of e equals `delta` exactly. Deterministic given (seed, dimension).
pub fn add_noise(y: &GridFunction, spec: &NoiseSpec) -> Result<GridFunction> {
    if !(spec.delta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be nonnegative, got {}",
            spec.delta
        )));
    }
    if spec.delta == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = GridFunction::new(
        (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect(),
        y.weight(),
    );
    let norm = e.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("noise sample has zero norm".into()));
    }
    let mut out = y.clone();
    out.axpy(spec.delta / norm, &e);
    Ok(out)
}
