//! Effective and limit coefficients: the local flux h and its aggregate
//! Θ(s), the effective diffusivity Θ^eff with fluctuations Θ̃, the drift
//! tensor H^eff, the Green-Kubo covariance C and its PSD square root A^eff.
//!
//! This build fixes d = 1, so the d×d and d×d×d objects are scalars; the
//! psd_sqrt routine is kept general (matrices in row-major vectorization)
//! because the covariance tests exercise higher-dimensional toys.

use crate::corrector::{
    drift_h_tensor_field, flux_h_field, CellProblems, Normalization, PipelineMode,
};
use crate::environment::EnvironmentModel;
use crate::error::{Error, Result};
use crate::stats;
use crate::torus::CellOperator;
use serde::{Deserialize, Serialize};

pub const N_BATCHES: usize = 16;
/// Production window must cover this many mixing times, else a precision
/// warning (error in strict mode).
pub const MIN_MIXING_TIMES: f64 = 50.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub mode: PipelineMode,
    pub normalization: Normalization,
    /// Θ^eff (scalar in d = 1) and its batch-means standard error.
    pub theta_eff: f64,
    pub theta_eff_se: f64,
    /// Θ̃(s) over the production nodes.
    pub theta_tilde: Vec<f64>,
    pub beta_bar: f64,
    pub h_eff: f64,
    pub h_eff_se: f64,
    /// Green-Kubo covariance C and its square root.
    pub covariance: f64,
    pub covariance_se: Option<f64>,
    pub a_eff: f64,
    /// Diagnostics of the Green-Kubo truncation.
    pub gk_r_max: f64,
    pub gk_tail_estimate: f64,
    /// Warnings that strict mode escalates.
    pub warnings: Vec<String>,
}

/// Local flux field h(·, s_m) and its aggregate Θ(s_m).
pub fn local_flux_h(
    env: &EnvironmentModel,
    op: &CellOperator,
    cell: &CellProblems,
    m: usize,
) -> (Vec<f64>, f64) {
    let k = cell.window.states[m];
    let nonsym = cell.mode == PipelineMode::NonSymmetric;
    let beta_bar = if nonsym { cell.beta.mean } else { 0.0 };
    let h = flux_h_field(env, op, k, &cell.chi1.values[m], beta_bar, nonsym);
    let dxi = 1.0 / env.n_torus as f64;
    let theta = if nonsym {
        h.iter().zip(&cell.p.values[m]).map(|(a, b)| a * b).sum::<f64>() * dxi
    } else {
        h.iter().sum::<f64>() * dxi
    };
    (h, theta)
}

/// Θ(s) over the production window.
pub fn theta_trajectory(
    env: &EnvironmentModel,
    op: &CellOperator,
    cell: &CellProblems,
) -> Vec<f64> {
    cell.window.production_nodes().map(|m| local_flux_h(env, op, cell, m).1).collect()
}

/// Time average, fluctuation trajectory and batch-means standard error.
pub fn theta_statistics(theta: &[f64]) -> (f64, Vec<f64>, f64) {
    let eff = stats::mean(theta);
    let tilde: Vec<f64> = theta.iter().map(|t| t - eff).collect();
    let se = stats::batch_means_se(theta, N_BATCHES);
    (eff, tilde, se)
}

/// H^eff: time average over production of ∫ H dξ (symmetric) or of
/// ∫ (H − χ1 Θ^eff − χ2 β̄) p dξ (non-symmetric), with batch-means error.
pub fn drift_tensor_h_eff(
    env: &EnvironmentModel,
    op: &CellOperator,
    cell: &CellProblems,
    theta_eff: f64,
) -> (f64, f64) {
    let n = env.n_torus;
    let dxi = 1.0 / n as f64;
    let nonsym = cell.mode == PipelineMode::NonSymmetric;
    let beta_bar = if nonsym { cell.beta.mean } else { 0.0 };
    let samples: Vec<f64> = cell
        .window
        .production_nodes()
        .map(|m| {
            let k = cell.window.states[m];
            let hh = drift_h_tensor_field(env, op, k, &cell.chi1.values[m], &cell.chi2.values[m]);
            if nonsym {
                (0..n)
                    .map(|i| {
                        (hh[i]
                            - cell.chi1.values[m][i] * theta_eff
                            - cell.chi2.values[m][i] * beta_bar)
                            * cell.p.values[m][i]
                    })
                    .sum::<f64>()
                    * dxi
            } else {
                hh.iter().sum::<f64>() * dxi
            }
        })
        .collect();
    (stats::mean(&samples), stats::batch_means_se(&samples, N_BATCHES))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub c: f64,
    pub se: Option<f64>,
    pub r_max: f64,
    pub tail_estimate: f64,
    pub n_lags: usize,
}

/// Green-Kubo integral C = ∫_0^{r_max} (R̂(r) + R̂(r)ᵀ) dr of the
/// fluctuation autocovariance (scalar here, so 2∫R̂), trapezoidal in the
/// lag. r_max = max(10 mixing times, noise-floor crossing); the exponential
/// tail beyond r_max is estimated and reported, not added.
pub fn fluctuation_covariance(
    theta_tilde: &[f64],
    ds: f64,
    lambda_gap: f64,
) -> Result<CovarianceEstimate> {
    let n = theta_tilde.len();
    if n < 8 {
        return Err(Error::EstimationQuality("fluctuation window too short".into()));
    }
    let scale = theta_tilde.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if scale == 0.0 {
        return Ok(CovarianceEstimate { c: 0.0, se: Some(0.0), r_max: 0.0, tail_estimate: 0.0, n_lags: 0 });
    }
    let mixing_time = if lambda_gap.is_finite() && lambda_gap > 0.0 { 1.0 / lambda_gap } else { 1.0 };
    let max_lag = ((40.0 * mixing_time / ds).ceil() as usize).min(n / 4).max(8);
    let r: Vec<f64> = (0..=max_lag).map(|l| stats::autocovariance(theta_tilde, l)).collect();

    // Noise floor from the far-lag half, where the true autocovariance is
    // negligible.
    let far = &r[max_lag / 2..];
    let noise = (far.iter().map(|x| x * x).sum::<f64>() / far.len() as f64).sqrt();
    let min_lag = ((10.0 * mixing_time / ds).ceil() as usize).min(max_lag);
    let mut cut = max_lag;
    for (l, v) in r.iter().enumerate().skip(min_lag) {
        if v.abs() < 2.0 * noise {
            cut = l;
            break;
        }
    }

    // Trapezoid over [0, cut·ds], doubled (R + Rᵀ for the scalar case).
    let mut integral = 0.5 * (r[0] + r[cut]);
    for v in &r[1..cut] {
        integral += v;
    }
    let c = 2.0 * integral * ds;

    // Exponential envelope of the decaying part for the tail report and the
    // mixing sanity check.
    let mut tail_estimate = 0.0;
    if r[0] > 0.0 {
        let pts: Vec<(f64, f64)> = (0..=cut)
            .filter(|l| r[*l] > 3.0 * noise.max(1e-300))
            .map(|l| (l as f64 * ds, r[l].ln()))
            .collect();
        if pts.len() >= 4 {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (slope, intercept, _) = stats::linear_fit(&xs, &ys);
            if slope >= 0.0 && r[0] > 1e-3 * scale {
                return Err(Error::MixingViolation(format!(
                    "autocovariance envelope not decaying (slope {slope:.3e})"
                )));
            }
            if slope < 0.0 {
                // ∫_{r_max}^∞ 2 A e^{slope r} dr.
                tail_estimate =
                    2.0 * (intercept + slope * cut as f64 * ds).exp() / (-slope);
            }
        }
    }

    // Batch-means error bar on C: recompute on N_BATCHES subwindows.
    let batch_len = n / N_BATCHES.min(n / 4).max(1);
    let mut batch_vals = Vec::new();
    if batch_len > 4 * cut.max(1) {
        for b in 0..n / batch_len {
            let seg = &theta_tilde[b * batch_len..(b + 1) * batch_len];
            let m = stats::mean(seg);
            let centered: Vec<f64> = seg.iter().map(|x| x - m).collect();
            let rc: Vec<f64> = (0..=cut).map(|l| stats::autocovariance(&centered, l)).collect();
            let mut integ = 0.5 * (rc[0] + rc[cut]);
            for v in &rc[1..cut] {
                integ += v;
            }
            batch_vals.push(2.0 * integ * ds);
        }
    }
    let se = if batch_vals.len() >= 4 {
        Some((stats::variance(&batch_vals) / batch_vals.len() as f64).sqrt())
    } else {
        None
    };

    Ok(CovarianceEstimate { c, se, r_max: cut as f64 * ds, tail_estimate, n_lags: cut })
}

/// PSD square root of a symmetric matrix (row-major, dim×dim): eigenvalues
/// in [−tol_neg, 0) are clipped to zero with tol_neg = 1e−8·trace; more
/// negative ones are an estimation-quality error.
pub fn psd_sqrt(c: &[f64], dim: usize) -> Result<Vec<f64>> {
    if c.len() != dim * dim {
        return Err(Error::Config("covariance matrix shape mismatch".into()));
    }
    for i in 0..dim {
        for j in 0..i {
            if (c[i * dim + j] - c[j * dim + i]).abs() > 1e-8 * (1.0 + c[i * dim + i].abs()) {
                return Err(Error::Validation("covariance not symmetric".into()));
            }
        }
    }
    let m = nalgebra::DMatrix::from_fn(dim, dim, |i, j| 0.5 * (c[i * dim + j] + c[j * dim + i]));
    let trace: f64 = (0..dim).map(|i| m[(i, i)]).sum();
    let tol_neg = 1e-8 * trace.abs().max(f64::MIN_POSITIVE);
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -tol_neg {
            return Err(Error::EstimationQuality(format!(
                "covariance eigenvalue {v:e} below -{tol_neg:e}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let a = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok((0..dim * dim).map(|idx| a[(idx / dim, idx % dim)]).collect())
}

/// Assemble all effective coefficients from a solved cell-problem window.
pub fn assemble_effective(
    env: &EnvironmentModel,
    op: &CellOperator,
    cell: &CellProblems,
    strict: bool,
) -> Result<EffectiveCoefficients> {
    let mut warnings = Vec::new();
    let ds = cell.window.grid.ds;
    let window_len = (cell.window.prod_end - cell.window.prod_start) as f64 * ds;
    let gap = env.driver.spectral_gap;
    if gap.is_finite() && window_len < MIN_MIXING_TIMES / gap {
        let msg = format!(
            "production window {window_len:.1} shorter than {MIN_MIXING_TIMES} mixing times"
        );
        if strict {
            return Err(Error::Precision(msg));
        }
        warnings.push(msg);
    }

    let theta = theta_trajectory(env, op, cell);
    let (theta_eff, theta_tilde, theta_eff_se) = theta_statistics(&theta);
    if theta_eff <= 0.0 {
        return Err(Error::Validation(format!("effective diffusivity {theta_eff} not positive")));
    }
    let (h_eff, h_eff_se) = drift_tensor_h_eff(env, op, cell, theta_eff);
    let gk = fluctuation_covariance(&theta_tilde, ds, gap)?;
    let a_eff = psd_sqrt(&[gk.c.max(0.0)], 1)?[0];
    let beta_bar = match cell.mode {
        PipelineMode::Symmetric => 0.0,
        PipelineMode::NonSymmetric => cell.beta.mean,
    };
    Ok(EffectiveCoefficients {
        mode: cell.mode,
        normalization: cell.normalization,
        theta_eff,
        theta_eff_se,
        theta_tilde,
        beta_bar,
        h_eff,
        h_eff_se,
        covariance: gk.c,
        covariance_se: gk.se,
        a_eff,
        gk_r_max: gk.r_max,
        gk_tail_estimate: gk.tail_estimate,
        warnings,
    })
}
