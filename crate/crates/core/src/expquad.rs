//! Expectations `E[e^{-Y}]` of exponential-quadratic Gaussian functionals,
//! the closed form for finite-rank functionals, and a three-way cross-check
//! between the two and Monte Carlo sampling.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::chaos::QuadraticFunctional;
use crate::error::{Error, Result};
use crate::montecarlo::{run_paths, Estimate};
use crate::operator::{min_eigen_shifted, resolvent_apply, QuadratureGrid};
use crate::quad::legendre_with_derivative;

/// `E[e^{-Y}] = det_2(1+C)^{-N/2} exp(-A + (1/2) sum_mu int B_mu (1+C)^{-1} B_mu)`
/// for a functional with `N` independent components sharing the kernel `C`.
pub fn exp_quadratic_expectation(y: &QuadraticFunctional, grid: &QuadratureGrid) -> Result<f64> {
    Ok(log_exp_quadratic_expectation(y, grid)?.exp())
}

/// Natural logarithm of [`exp_quadratic_expectation`].
pub fn log_exp_quadratic_expectation(y: &QuadraticFunctional, grid: &QuadratureGrid) -> Result<f64> {
    let d = y.discretize(grid)?;
    let certificate = min_eigen_shifted(&d);
    if !(certificate > 0.0) {
        return Err(Error::NonPositiveSpectrum {
            mu: 1.0,
            value: certificate,
        });
    }
    let n = grid.len();
    let mut columns = vec![vec![0.0; n]; y.components];
    for (i, &s) in grid.nodes.iter().enumerate() {
        let b = (y.b_fn)(s)?;
        if b.len() != y.components {
            return Err(Error::invalid(
                "b_fn",
                format!("returned {} components, expected {}", b.len(), y.components),
            ));
        }
        for (col, v) in columns.iter_mut().zip(b) {
            col[i] = v;
        }
    }
    let mut quadratic = 0.0;
    for col in &columns {
        if col.iter().all(|v| *v == 0.0) {
            continue;
        }
        let solved = resolvent_apply(&d, 1.0, col)?;
        quadratic += (0..n).map(|i| grid.weights[i] * col[i] * solved[i]).sum::<f64>();
    }
    Ok(-0.5 * y.components as f64 * d.log_det2()? - y.a_const + 0.5 * quadratic)
}

/// `e^{-A} prod_i (1+c_i)^{-1/2} exp((c_i + b_i^2/(1+c_i))/2)` for
/// `Y = A + sum_i [b_i phi(g_i) + c_i :phi(g_i)^2:/2]` over orthonormal `g_i`.
pub fn finite_rank_expectation(a_const: f64, modes: &[(f64, f64)]) -> Result<f64> {
    let mut log = -a_const;
    for (index, &(b, c)) in modes.iter().enumerate() {
        if !(c > -1.0) {
            return Err(Error::ModeOutOfRange { index, c });
        }
        log += -0.5 * c.ln_1p() + 0.5 * (c + b * b / (1.0 + c));
    }
    Ok(log.exp())
}

/// The `i`-th orthonormal Legendre polynomial on `[t0, t_end]`.
pub fn legendre_mode(i: usize, t0: f64, t_end: f64) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
    let len = t_end - t0;
    let scale = ((2 * i + 1) as f64 / len).sqrt();
    move |t| scale * legendre_with_derivative(i, 2.0 * (t - t0) / len - 1.0).0
}

/// Finite-rank functional `A + sum_i [b_i phi(g_i) + c_i :phi(g_i)^2:/2]` with
/// Legendre modes `g_i` on `[t0, t_end]`.
pub fn finite_rank_functional(a_const: f64, modes: &[(f64, f64)], t0: f64, t_end: f64) -> QuadraticFunctional {
    let gs: Vec<_> = (0..modes.len()).map(|i| legendre_mode(i, t0, t_end)).collect();
    let bs: Vec<f64> = modes.iter().map(|m| m.0).collect();
    let cs: Vec<f64> = modes.iter().map(|m| m.1).collect();
    let gs_b = gs.clone();
    QuadraticFunctional {
        a_const,
        b_fn: Arc::new(move |t| Ok(vec![gs_b.iter().zip(&bs).map(|(g, b)| b * g(t)).sum()])),
        components: 1,
        c_kernel: Arc::new(move |s, t| gs.iter().zip(&cs).map(|(g, c)| c * g(s) * g(t)).sum()),
        row_integral: None,
        t0,
        t_end,
    }
}

/// Monte Carlo estimate of `E[e^{-Y}]` for the finite-rank functional, drawing
/// the mode coordinates `phi(g_i)` as independent standard normals.
pub fn finite_rank_monte_carlo(a_const: f64, modes: &[(f64, f64)], n_samples: usize, seed: u64) -> Result<Estimate> {
    let acc = run_paths(n_samples, seed, 1, |_, rng, out| {
        let mut y = a_const;
        for &(b, c) in modes {
            let x: f64 = rng.sample(StandardNormal);
            y += b * x + 0.5 * c * (x * x - 1.0);
        }
        out[0] = (-y).exp();
    });
    acc[0].estimate()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crosscheck {
    pub analytic: f64,
    pub operator_path: f64,
    pub mc: Estimate,
}

/// Evaluates a finite-rank functional (`A = 0`) in closed form, through the
/// operator path on `grid`, and by Monte Carlo.
pub fn oracle_crosscheck(modes: &[(f64, f64)], grid: &QuadratureGrid, n_samples: usize, seed: u64) -> Result<Crosscheck> {
    let analytic = finite_rank_expectation(0.0, modes)?;
    let y = finite_rank_functional(0.0, modes, grid.t0, grid.t_end);
    let operator_path = exp_quadratic_expectation(&y, grid)?;
    let mc = finite_rank_monte_carlo(0.0, modes, n_samples, seed)?;
    Ok(Crosscheck {
        analytic,
        operator_path,
        mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> QuadratureGrid {
        QuadratureGrid::gauss_legendre(64, 0.0, 1.0).unwrap()
    }

    #[test]
    fn deterministic_functional() {
        let y = QuadraticFunctional::scalar(0.7, |_| 0.0, |_, _| 0.0, 0.0, 1.0);
        assert_relative_eq!(exp_quadratic_expectation(&y, &grid()).unwrap(), (-0.7f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn gaussian_moment_generating_value() {
        let b = 1.3;
        let y = QuadraticFunctional::scalar(0.0, move |_| b, |_, _| 0.0, 0.0, 1.0);
        assert_relative_eq!(exp_quadratic_expectation(&y, &grid()).unwrap(), (0.5 * b * b).exp(), max_relative = 1e-13);
    }

    #[test]
    fn single_mode_value() {
        let expected = 0.5f64.sqrt() * 0.5f64.exp();
        assert_relative_eq!(finite_rank_expectation(0.0, &[(0.0, 1.0)]).unwrap(), expected, max_relative = 1e-15);
        assert_relative_eq!(expected, 1.1658, max_relative = 1e-4);
        let y = finite_rank_functional(0.0, &[(0.0, 1.0)], 0.0, 1.0);
        assert_relative_eq!(exp_quadratic_expectation(&y, &grid()).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn finite_rank_trivial_cases() {
        assert_eq!(finite_rank_expectation(0.0, &[]).unwrap(), 1.0);
        assert_relative_eq!(finite_rank_expectation(0.0, &[(1.0, 0.0)]).unwrap(), 0.5f64.exp(), max_relative = 1e-15);
        assert!(matches!(
            finite_rank_expectation(0.0, &[(0.0, 0.5), (0.1, -1.0)]),
            Err(Error::ModeOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn legendre_modes_orthonormal() {
        let g = QuadratureGrid::gauss_legendre(16, 0.5, 2.5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let (fi, fj) = (legendre_mode(i, 0.5, 2.5), legendre_mode(j, 0.5, 2.5));
                let v: f64 = g.nodes.iter().zip(&g.weights).map(|(&t, &w)| w * fi(t) * fj(t)).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn shifting_a_scales_exactly() {
        let modes = [(0.3, 0.8), (-1.0, 0.2)];
        let base = exp_quadratic_expectation(&finite_rank_functional(0.0, &modes, 0.0, 1.0), &grid()).unwrap();
        let shifted = exp_quadratic_expectation(&finite_rank_functional(0.37, &modes, 0.0, 1.0), &grid()).unwrap();
        assert_relative_eq!(shifted, base * (-0.37f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn outside_positive_cone_rejected() {
        let y = finite_rank_functional(0.0, &[(0.0, -1.5)], 0.0, 1.0);
        assert!(matches!(exp_quadratic_expectation(&y, &grid()), Err(Error::NonPositiveSpectrum { .. })));
    }

    #[test]
    fn lipschitz_along_kernel_path() {
        // E[e^{-Y}] along C_s = s * C_1 changes by O(ds).
        let f = |s: f64| {
            let modes = [(0.5, s), (0.2, 0.5 * s)];
            exp_quadratic_expectation(&finite_rank_functional(0.0, &modes, 0.0, 1.0), &grid()).unwrap()
        };
        let mut slopes = Vec::new();
        for ds in [1e-2, 1e-3, 1e-4] {
            slopes.push(((f(1.0 + ds) - f(1.0)) / ds).abs());
        }
        assert!(slopes.iter().all(|s| *s < 10.0));
        assert!((slopes[1] - slopes[2]).abs() < 1e-2 * slopes[2].max(1.0));
    }

    #[test]
    fn crosscheck_empty_modes() {
        let c = oracle_crosscheck(&[], &grid(), 1000, 1).unwrap();
        assert_eq!(c.analytic, 1.0);
        assert_eq!(c.operator_path, 1.0);
        assert_eq!(c.mc.mean, 1.0);
        assert_eq!(c.mc.stderr, 0.0);
    }
}
