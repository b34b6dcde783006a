//! Shipped example environments. These are the models exercised by the test
//! suite and referenced by the configuration presets.

use crate::environment::{EnvironmentModel, FieldCoefficients, KernelSpec, MarkovDriver};
use crate::error::Result;

pub const DEFAULT_N_TORUS: usize = 64;
pub const LAMBDA_MIN: f64 = 0.5;
pub const LAMBDA_MAX: f64 = 1.5;

fn default_q3() -> Vec<f64> {
    vec![-1.0, 0.7, 0.3, 0.5, -1.2, 0.7, 0.4, 0.6, -1.0]
}

/// Λ ≡ 1, single frozen state: the constant-coefficient ground truth.
pub fn constant(n_torus: usize) -> Result<EnvironmentModel> {
    EnvironmentModel::from_coefficients(
        KernelSpec::uniform(1.0)?,
        MarkovDriver::new(1, vec![0.0], 0)?,
        n_torus,
        vec![FieldCoefficients { base: 1.0, alpha: 0.0, gamma: 0.0, delta: 0.0 }],
        LAMBDA_MIN,
        LAMBDA_MAX,
    )
}

/// Three-state symmetric default model (δ = 0, even kernel).
pub fn symmetric_default(n_torus: usize) -> Result<EnvironmentModel> {
    let alphas = [0.30, -0.20, 0.10];
    let gammas = [0.08, -0.05, 0.12];
    let coeffs = alphas
        .iter()
        .zip(gammas.iter())
        .map(|(a, g)| FieldCoefficients { base: 1.0, alpha: *a, gamma: *g, delta: 0.0 })
        .collect();
    EnvironmentModel::from_coefficients(
        KernelSpec::uniform(1.0)?,
        MarkovDriver::new(3, default_q3(), 0)?,
        n_torus,
        coeffs,
        LAMBDA_MIN,
        LAMBDA_MAX,
    )
}

/// Three-state non-symmetric default model (δ ≠ 0 breaks ξ ↔ η symmetry).
pub fn nonsymmetric_default(n_torus: usize) -> Result<EnvironmentModel> {
    let alphas = [0.20, -0.15, 0.10];
    let gammas = [0.05, -0.04, 0.06];
    let deltas = [0.15, -0.10, 0.08];
    let coeffs = (0..3)
        .map(|k| FieldCoefficients {
            base: 1.0,
            alpha: alphas[k],
            gamma: gammas[k],
            delta: deltas[k],
        })
        .collect();
    EnvironmentModel::from_coefficients(
        KernelSpec::uniform(1.0)?,
        MarkovDriver::new(3, default_q3(), 0)?,
        n_torus,
        coeffs,
        LAMBDA_MIN,
        LAMBDA_MAX,
    )
}

/// Two-state scalar toy: Λ = c_k with no ξ dependence, rate-1 flips.
/// Every effective quantity has a closed form through the 2x2 generator.
pub fn toy_two_state(n_torus: usize) -> Result<EnvironmentModel> {
    let coeffs = [0.7, 1.3]
        .iter()
        .map(|c| FieldCoefficients { base: *c, alpha: 0.0, gamma: 0.0, delta: 0.0 })
        .collect();
    EnvironmentModel::from_coefficients(
        KernelSpec::uniform(1.0)?,
        MarkovDriver::new(2, vec![-1.0, 1.0, 1.0, -1.0], 0)?,
        n_torus,
        coeffs,
        LAMBDA_MIN,
        LAMBDA_MAX,
    )
}

/// Single frozen non-symmetric state: the static case where dense linear
/// algebra oracles (null space, pseudo-inverse) are available.
pub fn frozen_nonsymmetric(n_torus: usize) -> Result<EnvironmentModel> {
    EnvironmentModel::from_coefficients(
        KernelSpec::uniform(1.0)?,
        MarkovDriver::new(1, vec![0.0], 0)?,
        n_torus,
        vec![FieldCoefficients { base: 1.0, alpha: 0.20, gamma: 0.05, delta: 0.15 }],
        LAMBDA_MIN,
        LAMBDA_MAX,
    )
}

/// All shipped environments by name, for sweep-style checks.
pub fn all_shipped(n_torus: usize) -> Result<Vec<(&'static str, EnvironmentModel)>> {
    Ok(vec![
        ("constant", constant(n_torus)?),
        ("symmetric_default", symmetric_default(n_torus)?),
        ("nonsymmetric_default", nonsymmetric_default(n_torus)?),
        ("toy_two_state", toy_two_state(n_torus)?),
        ("frozen_nonsymmetric", frozen_nonsymmetric(n_torus)?),
    ])
}
