//! The full multiscale problem on a periodic physical box: explicit-Euler
//! evolution with the rescaled banded operator, the spectrally solved
//! homogenized limit, the normalized difference U^ε (with moving frame in
//! the non-symmetric case) and the fluctuation process κ^ε.

use crate::corrector::{
    solve_cell_problems, CellProblemOptions, CellProblems, PipelineMode, Window,
};
use crate::environment::EnvironmentModel;
use crate::error::{Error, Result};
use crate::torus::CellOperator;
use num_complex::Complex;
use rustfft::FftPlanner;

/// Periodic box [-B, B) with spacing Δx = ε/N_t, so x/ε mod 1 always lands
/// on a torus node (no interpolation path exists).
#[derive(Debug, Clone)]
pub struct PhysicalGrid {
    pub epsilon: f64,
    pub n_t: usize,
    pub dx: f64,
    pub half_width: f64,
    pub n_nodes: usize,
}

/// Relative tail mass beyond |x| > B - 1 above which a run is rejected.
pub const TAIL_MASS_TOL: f64 = 1e-6;

impl PhysicalGrid {
    /// Box sized B = 6 + 4 sqrt(2 Θ^eff T), rounded up to a whole number of
    /// cells.
    pub fn build(n_t: usize, epsilon: f64, theta_eff: f64, t_horizon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || n_t < 2 {
            return Err(Error::Config("physical grid needs epsilon > 0 and n_t >= 2".into()));
        }
        let b_target = 6.0 + 4.0 * (2.0 * theta_eff.max(0.0) * t_horizon).sqrt();
        let dx = epsilon / n_t as f64;
        let n_half = (b_target / dx).ceil() as usize;
        Ok(PhysicalGrid {
            epsilon,
            n_t,
            dx,
            half_width: n_half as f64 * dx,
            n_nodes: 2 * n_half,
        })
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - (self.n_nodes / 2) as f64) * self.dx
    }

    /// Torus node index of x_i / ε mod 1.
    pub fn fast_index(&self, i: usize) -> usize {
        let half = self.n_nodes / 2;
        (i + self.n_t - half % self.n_t) % self.n_t
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        (u.iter().map(|v| v * v).sum::<f64>() * self.dx).sqrt()
    }

    /// Fraction of the L² mass sitting within one unit of the box edge.
    pub fn tail_mass_fraction(&self, u: &[f64]) -> f64 {
        let total: f64 = u.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return 0.0;
        }
        let tail: f64 = (0..self.n_nodes)
            .filter(|i| self.x(*i).abs() > self.half_width - 1.0)
            .map(|i| u[i] * u[i])
            .sum();
        tail / total
    }
}

/// The Schwartz-class initial datum ı(x) = exp(-x²/2) on the grid.
pub fn gaussian_bump(grid: &PhysicalGrid) -> Vec<f64> {
    (0..grid.n_nodes).map(|i| (-grid.x(i).powi(2) / 2.0).exp()).collect()
}

/// (L^ε u)(x_i) = ε⁻² Σ_m A_m b(x_i/ε, x_{i-m}/ε) (u_{i-m} - u_i),
/// banded over the kernel cells, periodic wrap on the box.
pub fn rescaled_apply(
    env: &EnvironmentModel,
    op: &CellOperator,
    grid: &PhysicalGrid,
    state: usize,
    u: &[f64],
    out: &mut [f64],
) {
    let n = grid.n_nodes;
    let cells = &op.kernel.cell_moments[0];
    let m_min = op.kernel.m_min;
    let inv_eps2 = 1.0 / (grid.epsilon * grid.epsilon);
    let table = &env.tables[state];
    let nt = grid.n_t;
    for i in 0..n {
        let fi = grid.fast_index(i);
        let ui = u[i];
        let mut acc = 0.0;
        for (idx, a0) in cells.iter().enumerate() {
            if *a0 == 0.0 {
                continue;
            }
            let m = m_min + idx as i64;
            let j = (i as i64 - m).rem_euclid(n as i64) as usize;
            let fj = grid.fast_index(j);
            acc += a0 * table[fi * nt + fj] * (u[j] - ui);
        }
        out[i] = acc * inv_eps2;
    }
}

/// Result of a physical-grid evolution.
pub struct EvolveResult {
    pub final_field: Vec<f64>,
    /// Snapshots at the requested step indices.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub max_l2_growth: f64,
    pub mass_drift: f64,
    pub tail_mass: f64,
}

/// Explicit Euler u ← u + Δt (L^ε u + F) with Δt = ε² Δs, the driver state
/// frozen per step and read from the cell-problem window (the production
/// block of `window` covers fast times [0, n_steps Δs]).
pub fn evolve_physical(
    env: &EnvironmentModel,
    op: &CellOperator,
    grid: &PhysicalGrid,
    window: &Window,
    init: &[f64],
    n_steps: usize,
    mut forcing: Option<&mut dyn FnMut(usize, f64, &mut [f64])>,
    snapshot_steps: &[usize],
) -> Result<EvolveResult> {
    let n = grid.n_nodes;
    if init.len() != n {
        return Err(Error::Config("initial field length mismatch".into()));
    }
    if window.prod_start + n_steps > window.grid.n_nodes - 1 {
        return Err(Error::Config("cell-problem window shorter than the evolution".into()));
    }
    let ds = window.grid.ds;
    let dt = grid.epsilon * grid.epsilon * ds;
    let mut u = init.to_vec();
    let mut lu = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mass0: f64 = u.iter().sum::<f64>() * grid.dx;
    let mut l2_prev = grid.l2_norm(&u);
    let mut max_growth = 0.0f64;
    let mut snapshots = Vec::new();
    if snapshot_steps.contains(&0) {
        snapshots.push((0.0, u.clone()));
    }
    for step in 0..n_steps {
        let k = window.states[window.prod_start + step];
        rescaled_apply(env, op, grid, k, &u, &mut lu);
        let t = step as f64 * dt;
        if let Some(fc) = forcing.as_deref_mut() {
            f.iter_mut().for_each(|v| *v = 0.0);
            fc(step, t, &mut f);
            for i in 0..n {
                u[i] += dt * (lu[i] + f[i]);
            }
        } else {
            for i in 0..n {
                u[i] += dt * lu[i];
            }
        }
        if forcing.is_none() && env.symmetric {
            let l2 = grid.l2_norm(&u);
            max_growth = max_growth.max(l2 - l2_prev);
            l2_prev = l2;
        }
        if snapshot_steps.contains(&(step + 1)) {
            snapshots.push(((step + 1) as f64 * dt, u.clone()));
        }
    }
    let mass1: f64 = u.iter().sum::<f64>() * grid.dx;
    let tail = grid.tail_mass_fraction(&u);
    if tail > TAIL_MASS_TOL {
        return Err(Error::Truncation(format!(
            "tail mass fraction {tail:e} exceeds {TAIL_MASS_TOL:e}; increase the box"
        )));
    }
    Ok(EvolveResult {
        final_field: u,
        snapshots,
        max_l2_growth: max_growth,
        mass_drift: (mass1 - mass0).abs(),
        tail_mass: tail,
    })
}

/// Spectral solution of ∂_t u⁰ = Θ^eff Δu⁰ on the periodic box: exact heat
/// factors per mode, derivatives as Fourier multipliers, shifted arguments
/// as phase factors.
pub struct HomogenizedSolution {
    hat0: Vec<Complex<f64>>,
    pub n: usize,
    pub length: f64,
    pub theta: f64,
}

impl HomogenizedSolution {
    pub fn new(init: &[f64], length: f64, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Domain(format!("effective diffusivity {theta} not positive")));
        }
        let n = init.len();
        let mut buf: Vec<Complex<f64>> = init.iter().map(|v| Complex::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        Ok(HomogenizedSolution { hat0: buf, n, length, theta })
    }

    /// Raw forward-DFT coefficient of the initial datum.
    pub fn mode(&self, j: usize) -> Complex<f64> {
        self.hat0[j]
    }

    pub fn wavenumber(&self, j: usize) -> f64 {
        let jj = if j <= self.n / 2 { j as f64 } else { j as f64 - self.n as f64 };
        2.0 * std::f64::consts::PI * jj / self.length
    }

    /// ∂_x^deriv u⁰(x - shift, t) on the grid.
    pub fn eval(&self, t: f64, deriv: u32, shift: f64) -> Vec<f64> {
        let mut buf = self.hat0.clone();
        for (j, v) in buf.iter_mut().enumerate() {
            let k = self.wavenumber(j);
            // The unmatched Nyquist mode has no consistent odd derivative.
            if deriv % 2 == 1 && self.n % 2 == 0 && j == self.n / 2 {
                *v = Complex::new(0.0, 0.0);
                continue;
            }
            let mult = Complex::new(0.0, k).powu(deriv)
                * (-self.theta * k * k * t).exp()
                * Complex::new(0.0, -k * shift).exp();
            *v *= mult;
        }
        FftPlanner::new().plan_fft_inverse(self.n).process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|v| v.re * scale).collect()
    }
}

/// One full-scale realization: physical grid plus the cell problems solved
/// along the same driver path (fast production window [0, T/ε²]).
pub struct Realization {
    pub grid: PhysicalGrid,
    pub cell: CellProblems,
    pub n_steps: usize,
    /// Actual horizon (a whole number of steps).
    pub t_final: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn prepare_realization(
    env: &EnvironmentModel,
    op: &CellOperator,
    epsilon: f64,
    t_horizon: f64,
    theta_eff: f64,
    gamma0: f64,
    seed: u64,
    stream: u64,
    force_mode: Option<PipelineMode>,
) -> Result<Realization> {
    let grid = PhysicalGrid::build(env.n_torus, epsilon, theta_eff, t_horizon)?;
    let s_prod = t_horizon / (epsilon * epsilon);
    let cell = solve_cell_problems(
        env,
        op,
        &CellProblemOptions {
            s0: 0.0,
            s_prod,
            seed,
            stream,
            gamma0: Some(gamma0),
            force_mode,
            force_normalization: None,
        },
    )?;
    let ds = cell.window.grid.ds;
    let n_steps = ((t_horizon / (epsilon * epsilon * ds)).round() as usize)
        .min(cell.window.prod_end - cell.window.prod_start);
    let t_final = n_steps as f64 * epsilon * epsilon * ds;
    Ok(Realization { grid, cell, n_steps, t_final })
}

/// U^ε(x, t) = ε⁻¹ (u^ε(x, t) − u⁰(x^ε, t)) − χ1(x/ε, t/ε²) ∂_x u⁰(x^ε, t),
/// with x^ε = x − β̄ t / ε in non-symmetric mode.
#[allow(clippy::too_many_arguments)]
pub fn assemble_u_eps(
    grid: &PhysicalGrid,
    u_eps: &[f64],
    u0: &HomogenizedSolution,
    chi1: &[f64],
    t: f64,
    mode: PipelineMode,
    beta_bar: f64,
    h6_ok: bool,
) -> Result<Vec<f64>> {
    let shift = match mode {
        PipelineMode::Symmetric => 0.0,
        PipelineMode::NonSymmetric => {
            if !h6_ok {
                return Err(Error::Contract(
                    "non-symmetric mode requires a verified deterministic drift".into(),
                ));
            }
            beta_bar * t / grid.epsilon
        }
    };
    let u0_shifted = u0.eval(t, 0, shift);
    let du0_shifted = u0.eval(t, 1, shift);
    let eps = grid.epsilon;
    Ok((0..grid.n_nodes)
        .map(|i| {
            (u_eps[i] - u0_shifted[i]) / eps - chi1[grid.fast_index(i)] * du0_shifted[i]
        })
        .collect())
}

/// κ^ε(t_n) = ε Δs Σ_{m<n} Θ̃(s_m): exact integral of the step-frozen Θ̃.
pub fn kappa_trajectory(theta_tilde: &[f64], ds: f64, epsilon: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta_tilde.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for v in theta_tilde {
        acc += v * ds;
        out.push(acc * epsilon);
    }
    out
}

/// One sample of κ^ε(T): cell problems along a fresh driver path on
/// [0, T/ε²], then the integrated fluctuation of the local diffusivity.
#[allow(clippy::too_many_arguments)]
pub fn kappa_sample(
    env: &EnvironmentModel,
    op: &CellOperator,
    epsilon: f64,
    t_horizon: f64,
    theta_eff: f64,
    gamma0: f64,
    seed: u64,
    stream: u64,
) -> Result<f64> {
    let cell = solve_cell_problems(
        env,
        op,
        &CellProblemOptions {
            s0: 0.0,
            s_prod: t_horizon / (epsilon * epsilon),
            seed,
            stream,
            gamma0: Some(gamma0),
            force_mode: None,
            force_normalization: None,
        },
    )?;
    let theta = crate::effective::theta_trajectory(env, op, &cell);
    let ds = cell.window.grid.ds;
    let n_steps = ((t_horizon / (epsilon * epsilon * ds)).round() as usize).min(theta.len() - 1);
    let tilde: Vec<f64> = theta[..n_steps].iter().map(|t| t - theta_eff).collect();
    Ok(*kappa_trajectory(&tilde, ds, epsilon).last().unwrap())
}

/// R^{ε,(1)}: same stepping as the ε-problem with zero initial data and
/// forcing ε⁻¹ Θ̃(t/ε²) ∂²_x u⁰(x, t).
pub fn simulate_r1(
    env: &EnvironmentModel,
    op: &CellOperator,
    grid: &PhysicalGrid,
    window: &Window,
    theta_tilde: &[f64],
    u0: &HomogenizedSolution,
    n_steps: usize,
) -> Result<EvolveResult> {
    let eps = grid.epsilon;
    let dt = eps * eps * window.grid.ds;
    let mut forcing = |step: usize, _t: f64, f: &mut [f64]| {
        let t = step as f64 * dt;
        let d2 = u0.eval(t, 2, 0.0);
        let amp = theta_tilde[step] / eps;
        for i in 0..f.len() {
            f[i] = amp * d2[i];
        }
    };
    let zero = vec![0.0; grid.n_nodes];
    evolve_physical(env, op, grid, window, &zero, n_steps, Some(&mut forcing), &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    #[test]
    fn grid_commensurability_and_fast_index() {
        let g = PhysicalGrid::build(16, 0.2, 1.0 / 6.0, 0.5).unwrap();
        assert_relative_eq!(g.dx * g.n_t as f64, g.epsilon, epsilon = 1e-15);
        assert_eq!(g.n_nodes % 2, 0);
        for i in (0..g.n_nodes).step_by(7) {
            let xi = g.x(i) / g.epsilon;
            let frac = xi - xi.floor();
            let node = (frac * g.n_t as f64).round() as usize % g.n_t;
            assert_eq!(g.fast_index(i), node, "node {i}");
        }
    }

    #[test]
    fn rescaled_annihilates_constants_and_matches_symbol() {
        let env = presets::constant(16).unwrap();
        let op = CellOperator::new(&env).unwrap();
        let g = PhysicalGrid::build(16, 0.2, 1.0 / 6.0, 0.1).unwrap();
        let n = g.n_nodes;
        let ones = vec![3.0; n];
        let mut out = vec![f64::NAN; n];
        rescaled_apply(&env, &op, &g, 0, &ones, &mut out);
        assert!(out.iter().all(|v| *v == 0.0));

        // e^{ikx} is an eigenfunction with the discrete symbol
        // ε⁻² Σ_m A_m (e^{-i k m Δx} − 1).
        let j = 5usize;
        let k = 2.0 * std::f64::consts::PI * j as f64 / g.length();
        let re: Vec<f64> = (0..n).map(|i| (k * g.x(i)).cos()).collect();
        let im: Vec<f64> = (0..n).map(|i| (k * g.x(i)).sin()).collect();
        let mut lre = vec![0.0; n];
        let mut lim = vec![0.0; n];
        rescaled_apply(&env, &op, &g, 0, &re, &mut lre);
        rescaled_apply(&env, &op, &g, 0, &im, &mut lim);
        let mut symbol = 0.0;
        for (idx, a0) in op.kernel.cell_moments[0].iter().enumerate() {
            let m = (op.kernel.m_min + idx as i64) as f64;
            symbol += a0 * ((k * m * g.dx).cos() - 1.0);
        }
        symbol /= g.epsilon * g.epsilon;
        for i in 0..n {
            assert!((lre[i] - symbol * re[i]).abs() < 1e-9 * symbol.abs());
            assert!((lim[i] - symbol * im[i]).abs() < 1e-9 * symbol.abs());
        }
    }

    #[test]
    fn taylor_limit_of_the_symbol() {
        // Continuum symbol of L^ε on e^{ikx} is (sinc(kε) − 1)/ε² for the
        // uniform unit kernel; it approaches −k²/6 with an O(ε²) defect,
        // so the error ratio is ≈ 4 when ε halves.
        let k = 1.0f64;
        let cont = |eps: f64| ((k * eps).sin() / (k * eps) - 1.0) / (eps * eps);
        let err = |eps: f64| (cont(eps) + k * k / 6.0).abs();
        let ratio = err(0.2) / err(0.1);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");

        // The banded operator realizes the continuum symbol up to a fast-cell
        // quadrature defect that shrinks like 1/n_t² under grid refinement.
        let discrete_defect = |n_t: usize, eps: f64| {
            let env = presets::constant(n_t).unwrap();
            let op = CellOperator::new(&env).unwrap();
            let g = PhysicalGrid::build(n_t, eps, 1.0 / 6.0, 0.1).unwrap();
            let mut symbol = 0.0;
            for (idx, a0) in op.kernel.cell_moments[0].iter().enumerate() {
                let m = (op.kernel.m_min + idx as i64) as f64;
                symbol += a0 * ((k * m * g.dx).cos() - 1.0);
            }
            (symbol / (eps * eps) - cont(eps)).abs()
        };
        let coarse = discrete_defect(16, 0.1);
        let fine = discrete_defect(64, 0.1);
        assert!(coarse < 2e-3, "coarse defect {coarse}");
        let refine = coarse / fine;
        assert!(refine > 8.0, "refinement ratio {refine}");
    }

    #[test]
    fn epsilon_problem_matches_constant_coefficient_symbol_oracle() {
        let env = presets::constant(16).unwrap();
        let op = CellOperator::new(&env).unwrap();
        let eps = 0.2;
        let t = 0.25;
        let grid = PhysicalGrid::build(16, eps, 1.0 / 6.0, t).unwrap();
        let real = prepare_realization(&env, &op, eps, t, 1.0 / 6.0, 1.0, 5, 0, None).unwrap();
        let init = gaussian_bump(&grid);
        let res = evolve_physical(
            &env, &op, &grid, &real.cell.window, &init, real.n_steps, None, &[],
        )
        .unwrap();

        // Oracle: per-mode exact Euler iteration with the discrete symbol.
        let n = grid.n_nodes;
        let mut buf: Vec<Complex<f64>> = init.iter().map(|v| Complex::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let dt = eps * eps * real.cell.window.grid.ds;
        for (j, v) in buf.iter_mut().enumerate() {
            let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let k = 2.0 * std::f64::consts::PI * jj / grid.length();
            let mut symbol = 0.0;
            for (idx, a0) in op.kernel.cell_moments[0].iter().enumerate() {
                let m = (op.kernel.m_min + idx as i64) as f64;
                symbol += a0 * ((k * m * grid.dx).cos() - 1.0);
            }
            symbol /= eps * eps;
            *v *= Complex::new(1.0 + dt * symbol, 0.0).powu(real.n_steps as u32);
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        for i in 0..n {
            assert!(
                (res.final_field[i] - buf[i].re * scale).abs() < 1e-8,
                "node {i}: {} vs {}",
                res.final_field[i],
                buf[i].re * scale
            );
        }
        assert!(res.mass_drift < 1e-10);
        assert!(res.max_l2_growth <= 1e-12);
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let env = presets::symmetric_default(16).unwrap();
        let op = CellOperator::new(&env).unwrap();
        let real = prepare_realization(&env, &op, 0.2, 0.1, 1.0 / 6.0, 1.0, 6, 0, None).unwrap();
        let zero = vec![0.0; real.grid.n_nodes];
        let res = evolve_physical(
            &env, &op, &real.grid, &real.cell.window, &zero, real.n_steps, None, &[],
        )
        .unwrap();
        assert!(res.final_field.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn homogenized_closed_form_and_exactness() {
        let grid = PhysicalGrid::build(16, 0.2, 1.0 / 6.0, 1.0).unwrap();
        let init = gaussian_bump(&grid);
        let sol = HomogenizedSolution::new(&init, grid.length(), 1.0 / 6.0).unwrap();
        let at0 = sol.eval(0.0, 0, 0.0);
        for i in 0..grid.n_nodes {
            assert!((at0[i] - init[i]).abs() < 1e-12);
        }
        // Heat-kernel convolution of exp(-x²/2): u(0, t) = 1/sqrt(1 + 2Θt).
        let t = 1.0;
        let ut = sol.eval(t, 0, 0.0);
        let center = grid.n_nodes / 2;
        assert!(grid.x(center).abs() < 1e-12);
        let closed = 1.0 / (1.0 + 2.0 * t / 6.0).sqrt();
        assert!((ut[center] - closed).abs() < 1e-8, "{} vs {closed}", ut[center]);
        // Zero-mode preservation.
        let m0: f64 = init.iter().sum::<f64>() * grid.dx;
        let m1: f64 = ut.iter().sum::<f64>() * grid.dx;
        assert!((m1 - m0).abs() < 1e-12);
        // Phase shift evaluates u⁰(x - a) exactly.
        let a = 10.0 * grid.dx;
        let shifted = sol.eval(t, 0, a);
        let plain = sol.eval(t, 0, 0.0);
        assert!((shifted[center + 10] - plain[center]).abs() < 1e-10);
    }

    #[test]
    fn u_eps_assembly_trivial_case() {
        let grid = PhysicalGrid::build(16, 0.2, 1.0 / 6.0, 0.5).unwrap();
        let init = gaussian_bump(&grid);
        let sol = HomogenizedSolution::new(&init, grid.length(), 1.0 / 6.0).unwrap();
        let t = 0.3;
        let u0t = sol.eval(t, 0, 0.0);
        let chi1 = vec![0.0; 16];
        let u = assemble_u_eps(
            &grid, &u0t, &sol, &chi1, t, PipelineMode::Symmetric, 0.0, true,
        )
        .unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn kappa_zero_for_constant_environment() {
        let tilde = vec![0.0; 100];
        let k = kappa_trajectory(&tilde, 0.3, 0.1);
        assert!(k.iter().all(|v| *v == 0.0));
        // And linear accumulation for a constant fluctuation.
        let tilde = vec![2.0; 10];
        let k = kappa_trajectory(&tilde, 0.5, 0.1);
        assert_relative_eq!(k[10], 0.1 * 2.0 * 5.0, epsilon = 1e-14);
    }

    #[test]
    fn r1_zero_when_fluctuations_vanish() {
        let env = presets::constant(16).unwrap();
        let op = CellOperator::new(&env).unwrap();
        let real = prepare_realization(&env, &op, 0.2, 0.1, 1.0 / 6.0, 1.0, 8, 0, None).unwrap();
        let init = gaussian_bump(&real.grid);
        let u0 = HomogenizedSolution::new(&init, real.grid.length(), 1.0 / 6.0).unwrap();
        let tilde = vec![0.0; real.n_steps];
        let res = simulate_r1(
            &env, &op, &real.grid, &real.cell.window, &tilde, &u0, real.n_steps,
        )
        .unwrap();
        assert!(res.final_field.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn moving_frame_is_required_when_drift_is_nonzero() {
        // Frozen non-symmetric environment: β is constant (H6 exact).
        let env = presets::frozen_nonsymmetric(32).unwrap();
        let op = CellOperator::new(&env).unwrap();
        let eps = 0.1;
        let t = 0.25;
        let real = prepare_realization(&env, &op, eps, t, 1.0 / 6.0, 1.0, 9, 0, None).unwrap();
        let beta_bar = real.cell.beta.mean;
        assert!(beta_bar.abs() > 1e-4, "frozen drift too small: {beta_bar}");
        assert!(real.cell.beta.h6_satisfied);

        let init = gaussian_bump(&real.grid);
        let res = evolve_physical(
            &env, &op, &real.grid, &real.cell.window, &init, real.n_steps, None, &[],
        )
        .unwrap();
        // Effective diffusivity for the box/limit from this realization.
        let eff = crate::effective::assemble_effective(&env, &op, &real.cell, false).unwrap();
        let u0 = HomogenizedSolution::new(&init, real.grid.length(), eff.theta_eff).unwrap();
        let m_end = real.cell.window.prod_start + real.n_steps;
        let chi1 = &real.cell.chi1.values[m_end];
        let good = assemble_u_eps(
            &real.grid, &res.final_field, &u0, chi1, real.t_final,
            PipelineMode::NonSymmetric, beta_bar, true,
        )
        .unwrap();
        let bad = assemble_u_eps(
            &real.grid, &res.final_field, &u0, chi1, real.t_final,
            PipelineMode::Symmetric, 0.0, true,
        )
        .unwrap();
        let ng = real.grid.l2_norm(&good);
        let nb = real.grid.l2_norm(&bad);
        assert!(nb >= 5.0 * ng, "frame ablation: good {ng}, bad {nb}");
    }
}
