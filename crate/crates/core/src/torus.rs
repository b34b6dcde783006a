//! Discretization of the convolution operator on the unit torus.
//!
//! The kernel is resolved on the lattice of cells of width Δξ = 1/n centered
//! at z_m = m Δξ. Per-cell weighted moments ∫_cell a(z) z^r dz are computed
//! exactly (up to roundoff) and then folded modulo n. Carrying the moment
//! weight inside the cell integral keeps the discrete moments of the torus
//! operator equal to the continuum kernel moments, which the effective
//! quantities inherit.

use crate::environment::{EnvironmentModel, KernelSpec};
use crate::error::{Error, Result};

/// Per-cell and periodized (mod n) kernel moments of orders 0..3.
#[derive(Debug, Clone)]
pub struct PeriodizedKernel {
    pub n: usize,
    /// Index of the first lattice cell intersecting the support.
    pub m_min: i64,
    /// cell_moments[r][idx] = ∫_{cell (m_min + idx)} a(z) z^r dz.
    pub cell_moments: [Vec<f64>; 4],
    /// class_sums[r][c] = Σ_{m ≡ c (mod n)} cell_moments[r][m].
    pub class_sums: [Vec<f64>; 4],
}

impl PeriodizedKernel {
    pub fn new(kernel: &KernelSpec, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Resolution("torus grid needs n >= 2".into()));
        }
        let dxi = 1.0 / n as f64;
        let m_min = (kernel.support_lo / dxi - 0.5).floor() as i64;
        let m_max = (kernel.support_hi / dxi + 0.5).ceil() as i64;
        let n_cells = (m_max - m_min + 1) as usize;

        let mut cell_moments: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n_cells]);
        for idx in 0..n_cells {
            let m = m_min + idx as i64;
            let a = (m as f64 - 0.5) * dxi;
            let b = (m as f64 + 0.5) * dxi;
            for (r, arr) in cell_moments.iter_mut().enumerate() {
                arr[idx] = kernel.cell_moment(r as u32, a, b);
            }
        }

        // For even kernels, enforce the discrete parity A_{-m}^{(r)} =
        // (-1)^r A_m^{(r)} exactly so the downstream cancellation identities
        // hold to the last bit.
        if kernel.even {
            for r in 0..4 {
                let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                for idx in 0..n_cells {
                    let m = m_min + idx as i64;
                    let mirror = -m - m_min;
                    if mirror < 0 || mirror as usize >= n_cells || (m_min + mirror) < m {
                        continue;
                    }
                    let j = mirror as usize;
                    let avg = 0.5 * (cell_moments[r][idx] + sign * cell_moments[r][j]);
                    cell_moments[r][idx] = avg;
                    cell_moments[r][j] = sign * avg;
                }
            }
        }

        let mut class_sums: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for idx in 0..n_cells {
            let m = m_min + idx as i64;
            let c = m.rem_euclid(n as i64) as usize;
            for r in 0..4 {
                class_sums[r][c] += cell_moments[r][idx];
            }
        }
        Ok(PeriodizedKernel { n, m_min, cell_moments, class_sums })
    }

    /// Total moment Σ_m A_m^{(r)}; equals the continuum ∫ a z^r dz.
    pub fn total_moment(&self, r: usize) -> f64 {
        self.cell_moments[r].iter().sum()
    }
}

/// The torus convolution operator for every driver state, discretized as
/// (L_k u)_i = Σ_j w_k[i][j] (u_j - u_i) with
/// w_k[i][j] = S_0[(i - j) mod n] b_k(ξ_i, ξ_j).
#[derive(Debug, Clone)]
pub struct CellOperator {
    pub n: usize,
    pub kernel: PeriodizedKernel,
    /// w[k][i * n + j].
    w: Vec<Vec<f64>>,
    /// Row sums d[k][i] = Σ_j w_k[i][j]; the maximal exit rate bounds the
    /// stable explicit step.
    d: Vec<Vec<f64>>,
    pub symmetric: bool,
}

impl CellOperator {
    pub fn new(env: &EnvironmentModel) -> Result<Self> {
        let n = env.n_torus;
        let kernel = PeriodizedKernel::new(&env.kernel, n)?;
        let s0 = &kernel.class_sums[0];
        let mut w = Vec::with_capacity(env.driver.n_states);
        let mut d = Vec::with_capacity(env.driver.n_states);
        for k in 0..env.driver.n_states {
            let mut wk = vec![0.0; n * n];
            let mut dk = vec![0.0; n];
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    let c = (i + n - j) % n;
                    let v = s0[c] * env.b(k, i, j);
                    wk[i * n + j] = v;
                    row += v;
                }
                dk[i] = row;
            }
            w.push(wk);
            d.push(dk);
        }
        let symmetric = env.symmetric;
        Ok(CellOperator { n, kernel, w, d, symmetric })
    }

    pub fn n_states(&self) -> usize {
        self.w.len()
    }

    pub fn weight(&self, k: usize, i: usize, j: usize) -> f64 {
        self.w[k][i * self.n + j]
    }

    pub fn row_sum(&self, k: usize, i: usize) -> f64 {
        self.d[k][i]
    }

    /// Largest exit rate over all states and nodes.
    pub fn max_rate(&self) -> f64 {
        self.d.iter().flatten().fold(0.0f64, |a, b| a.max(*b))
    }

    /// (L_k u)_i = Σ_j w(i,j)(u_j - u_i).
    pub fn apply(&self, k: usize, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let wk = &self.w[k];
        for i in 0..n {
            let ui = u[i];
            let mut acc = 0.0;
            for j in 0..n {
                acc += wk[i * n + j] * (u[j] - ui);
            }
            out[i] = acc;
        }
    }

    /// Adjoint with respect to the counting inner product:
    /// (L*_k p)_i = Σ_j w(j,i) p_j - d_i p_i. Columns of L* sum to zero
    /// exactly, so the invariant-density evolution conserves mass.
    pub fn apply_adjoint(&self, k: usize, p: &[f64], out: &mut [f64]) {
        let n = self.n;
        let wk = &self.w[k];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += wk[j * n + i] * p[j];
            }
            out[i] = acc - self.d[k][i] * p[i];
        }
    }

    /// Σ_j S_r[(i - j) mod n] b_k(ξ_i, ξ_j), the discrete ∫ a Λ z^r dz at ξ_i.
    pub fn moment_rowsum(&self, r: usize, k: usize, env: &EnvironmentModel) -> Vec<f64> {
        let n = self.n;
        let sr = &self.kernel.class_sums[r];
        (0..n)
            .map(|i| (0..n).map(|j| sr[(i + n - j) % n] * env.b(k, i, j)).sum())
            .collect()
    }

    /// Σ_j S_r[(i - j) mod n] b_k(ξ_i, ξ_j) f_j, the discrete
    /// ∫ a Λ z^r f(ξ - z) dz at ξ_i.
    pub fn moment_apply(&self, r: usize, k: usize, env: &EnvironmentModel, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let sr = &self.kernel.class_sums[r];
        (0..n)
            .map(|i| (0..n).map(|j| sr[(i + n - j) % n] * env.b(k, i, j) * f[j]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{FieldCoefficients, KernelSpec, MarkovDriver};
    use approx::assert_relative_eq;

    fn env_with(coeffs: Vec<FieldCoefficients>, n: usize) -> EnvironmentModel {
        let kernel = KernelSpec::uniform(1.0).unwrap();
        let k = coeffs.len();
        let driver = if k == 1 {
            MarkovDriver::new(1, vec![0.0], 0).unwrap()
        } else {
            let mut q = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    q[i * k + j] = if i == j { -(k as f64 - 1.0) } else { 1.0 };
                }
            }
            MarkovDriver::new(k, q, 0).unwrap()
        };
        EnvironmentModel::from_coefficients(kernel, driver, n, coeffs, 0.4, 1.6).unwrap()
    }

    fn constant_env(n: usize) -> EnvironmentModel {
        env_with(vec![FieldCoefficients { base: 1.0, alpha: 0.0, gamma: 0.0, delta: 0.0 }], n)
    }

    #[test]
    fn periodization_preserves_all_moments() {
        let kernel = KernelSpec::uniform(1.0).unwrap();
        let pk = PeriodizedKernel::new(&kernel, 64).unwrap();
        assert_relative_eq!(pk.total_moment(0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(pk.total_moment(1), 0.0, epsilon = 1e-14);
        assert_relative_eq!(pk.total_moment(2), 1.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(pk.total_moment(3), 0.0, epsilon = 1e-14);
        for r in 0..4 {
            let folded: f64 = pk.class_sums[r].iter().sum();
            assert_relative_eq!(folded, pk.total_moment(r), epsilon = 1e-14);
        }
    }

    #[test]
    fn even_kernel_class_parity() {
        let kernel = KernelSpec::truncated_gaussian(0.4, 1.0).unwrap();
        let pk = PeriodizedKernel::new(&kernel, 32).unwrap();
        let n = pk.n;
        for c in 0..n {
            let cm = (n - c) % n;
            assert_eq!(pk.class_sums[0][c], pk.class_sums[0][cm]);
            assert_eq!(pk.class_sums[1][c], -pk.class_sums[1][cm]);
            assert_eq!(pk.class_sums[2][c], pk.class_sums[2][cm]);
            assert_eq!(pk.class_sums[3][c], -pk.class_sums[3][cm]);
        }
    }

    #[test]
    fn constants_are_annihilated_exactly() {
        let env = env_with(
            vec![FieldCoefficients { base: 1.0, alpha: 0.3, gamma: 0.08, delta: 0.1 }],
            48,
        );
        let op = CellOperator::new(&env).unwrap();
        let u = vec![5.0; 48];
        let mut out = vec![f64::NAN; 48];
        op.apply(0, &u, &mut out);
        for v in out {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn adjoint_identity_and_mass_conservation() {
        use rand::{Rng, SeedableRng};
        let env = env_with(
            vec![FieldCoefficients { base: 1.0, alpha: 0.2, gamma: 0.05, delta: 0.15 }],
            32,
        );
        let op = CellOperator::new(&env).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let phi: Vec<f64> = (0..32).map(|_| rng.gen::<f64>() - 0.5).collect();
        let p: Vec<f64> = (0..32).map(|_| rng.gen::<f64>() + 0.5).collect();
        let mut lphi = vec![0.0; 32];
        let mut lsp = vec![0.0; 32];
        op.apply(0, &phi, &mut lphi);
        op.apply_adjoint(0, &p, &mut lsp);
        let lhs: f64 = lphi.iter().zip(&p).map(|(a, b)| a * b).sum();
        let rhs: f64 = phi.iter().zip(&lsp).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-12);
        let mass_rate: f64 = lsp.iter().sum();
        assert!(mass_rate.abs() < 1e-13, "adjoint leaks mass: {mass_rate}");
    }

    #[test]
    fn symmetric_environment_gives_symmetric_weights() {
        let env = env_with(
            vec![FieldCoefficients { base: 1.0, alpha: 0.3, gamma: 0.08, delta: 0.0 }],
            32,
        );
        assert!(env.symmetric);
        let op = CellOperator::new(&env).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_relative_eq!(op.weight(0, i, j), op.weight(0, j, i), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn first_moment_rowsum_vanishes_in_mean_for_symmetric_field() {
        // The forcing of the first corrector is minus this rowsum; its grid
        // mean must vanish exactly under pairwise (i, j) cancellation.
        let env = env_with(
            vec![FieldCoefficients { base: 1.0, alpha: 0.3, gamma: 0.08, delta: 0.0 }],
            64,
        );
        let op = CellOperator::new(&env).unwrap();
        let rs = op.moment_rowsum(1, 0, &env);
        let mean: f64 = rs.iter().sum::<f64>();
        assert!(mean.abs() < 1e-13, "mean forcing {mean}");
    }

    #[test]
    fn constant_field_second_moment_rowsum_is_exact() {
        let env = constant_env(64);
        let op = CellOperator::new(&env).unwrap();
        let rs = op.moment_rowsum(2, 0, &env);
        for v in rs {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn moment_apply_reduces_to_rowsum_on_ones() {
        let env = env_with(
            vec![FieldCoefficients { base: 1.0, alpha: 0.2, gamma: 0.05, delta: 0.15 }],
            32,
        );
        let op = CellOperator::new(&env).unwrap();
        let ones = vec![1.0; 32];
        for r in 0..4 {
            let a = op.moment_rowsum(r, 0, &env);
            let b = op.moment_apply(r, 0, &env, &ones);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn max_rate_bounds_row_sums() {
        let env = env_with(
            vec![
                FieldCoefficients { base: 1.0, alpha: 0.3, gamma: 0.08, delta: 0.0 },
                FieldCoefficients { base: 1.0, alpha: -0.2, gamma: -0.05, delta: 0.0 },
            ],
            32,
        );
        let op = CellOperator::new(&env).unwrap();
        let mr = op.max_rate();
        assert!(mr > 0.0);
        for k in 0..op.n_states() {
            for i in 0..op.n {
                assert!(op.row_sum(k, i) <= mr + 1e-15);
            }
        }
        // Rates stay within the declared Λ bounds times the kernel mass.
        assert!(mr <= 1.6 * 1.0 + 1e-12);
    }
}
