//! Acceptance suite shared by the `acceptance` test target and the CLI
//! `validate` command. Each check returns a [`CheckReport`] with its measured
//! values; tolerances are fixed constants below.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chaos::{enumerate_pairings, hermite, wick_power, CirChaos, MAX_HERMITE_ORDER};
use crate::error::Result;
use crate::expquad::{oracle_crosscheck, Crosscheck};
use crate::model::{cir_kernel, embed_cir, general_kernel, CirParams};
use crate::montecarlo::{accumulate_functionals, Scheme, SimConfig, TestFn};
use crate::operator::{carleman_det2, discretize, min_eigen_shifted, resolvent_kernel_at, QuadratureGrid};
use crate::pricing::{cir_operator, operator_beta_alpha, riccati_closed};
use crate::quad::gauss_hermite;

/// Absolute tolerance on `beta` and `alpha` at the base node count.
pub const PRICING_TOL: f64 = 1e-4;
/// Base and refined node counts for the operator-vs-Riccati sweep.
pub const PRICING_NODES: (usize, usize) = (256, 512);
/// Required error reduction from the base to the refined node count.
pub const REFINEMENT_FACTOR: f64 = 4.0;
/// Errors below this level are treated as converged to rounding and exempt
/// from the refinement ratio.
pub const ROUNDING_FLOOR: f64 = 1e-12;
pub const RICCATI_FD_STEP: f64 = 1e-3;
pub const RICCATI_RESIDUAL_TOL: f64 = 1e-3;
pub const EXPQUAD_REL_TOL: f64 = 1e-8;
/// Monte Carlo agreement band, in standard errors.
pub const Z_BAND: f64 = 3.0;
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
pub const WICK_MEAN_TOL: f64 = 1e-10;
pub const WICK_SERIES_TOL: f64 = 1e-8;
pub const DET_IDENTITY_TOL: f64 = 1e-10;
pub const KERNEL_MATCH_TOL: f64 = 1e-10;

/// Rate parameters of the operator-vs-Riccati grid.
pub const SWEEP_SPEEDS: [f64; 3] = [0.1, 0.5, 1.0];
pub const SWEEP_DIMENSIONS: [usize; 3] = [2, 3, 4];
pub const SWEEP_MATURITIES: [f64; 4] = [0.5, 1.0, 5.0, 10.0];
/// Long-run level shared by the sweep; `c` follows from `N = 4ab/c^2`.
pub const SWEEP_LEVEL: f64 = 0.04;

/// Sample sizes and seeds. `full` runs at the stated scale; `fast` trims the
/// Monte Carlo work for smoke runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationConfig {
    pub expquad_samples: usize,
    pub expquad_nodes: usize,
    pub martingale_paths: usize,
    pub martingale_dt: f64,
    pub projection_paths: usize,
    pub projection_dt: f64,
    pub chaos_nodes: usize,
    pub seed: u64,
    /// Enforce the wall-clock budgets.
    pub enforce_budgets: bool,
}

impl ValidationConfig {
    pub fn full() -> Self {
        Self {
            expquad_samples: 1_000_000,
            expquad_nodes: 32,
            martingale_paths: 200_000,
            martingale_dt: 1e-3,
            projection_paths: 1_000_000,
            projection_dt: 1e-3,
            chaos_nodes: 256,
            seed: 20_240_601,
            enforce_budgets: true,
        }
    }

    pub fn fast() -> Self {
        Self {
            expquad_samples: 100_000,
            martingale_paths: 10_000,
            projection_paths: 50_000,
            ..Self::full()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub elapsed_secs: f64,
    pub budget_secs: Option<f64>,
    /// Measured values, one `key=value` item per entry.
    pub metrics: Vec<(String, f64)>,
    /// Human-readable notes on failing sub-checks.
    pub notes: Vec<String>,
}

impl CheckReport {
    /// One summary line: `PASS [3] title: key=value ... (elapsed)`.
    pub fn line(&self) -> String {
        let mut s = format!("{} [{}] {}:", if self.passed { "PASS" } else { "FAIL" }, self.id, self.title);
        for (k, v) in &self.metrics {
            if v.fract() == 0.0 && v.abs() < 1e9 {
                let _ = write!(s, " {k}={v}");
            } else {
                let _ = write!(s, " {k}={v:.6e}");
            }
        }
        match self.budget_secs {
            Some(b) => {
                let _ = write!(s, " ({:.2}s of {:.0}s)", self.elapsed_secs, b);
            }
            None => {
                let _ = write!(s, " ({:.2}s)", self.elapsed_secs);
            }
        }
        for n in &self.notes {
            let _ = write!(s, "\n    {n}");
        }
        s
    }
}

struct Check {
    metrics: Vec<(String, f64)>,
    notes: Vec<String>,
    ok: bool,
}

impl Check {
    fn new() -> Self {
        Self {
            metrics: Vec::new(),
            notes: Vec::new(),
            ok: true,
        }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), value));
    }

    fn require(&mut self, cond: bool, note: impl FnOnce() -> String) {
        if !cond {
            self.ok = false;
            self.notes.push(note());
        }
    }
}

fn run_check<F>(id: usize, title: &'static str, budget: Option<f64>, cfg: &ValidationConfig, body: F) -> CheckReport
where
    F: FnOnce(&mut Check) -> Result<()>,
{
    let start = Instant::now();
    let mut check = Check::new();
    if let Err(e) = body(&mut check) {
        check.ok = false;
        check.notes.push(format!("error {}: {e}", e.name()));
    }
    let elapsed = start.elapsed().as_secs_f64();
    if let (Some(b), true) = (budget, cfg.enforce_budgets) {
        check.require(elapsed <= b, || format!("runtime {elapsed:.1}s exceeds budget {b:.0}s"));
    }
    CheckReport {
        id,
        title,
        passed: check.ok,
        elapsed_secs: elapsed,
        budget_secs: budget,
        metrics: check.metrics,
        notes: check.notes,
    }
}

/// Parameter grid of the pricing sweep, `(a, N, params)` with `lambda_bar = 0`.
pub fn sweep_params() -> Result<Vec<CirParams>> {
    let mut out = Vec::new();
    for &a in &SWEEP_SPEEDS {
        for &n in &SWEEP_DIMENSIONS {
            let c = (4.0 * a * SWEEP_LEVEL / n as f64).sqrt();
            out.push(CirParams::with_dimension(a, c, n, 0.0, SWEEP_LEVEL)?);
        }
    }
    Ok(out)
}

/// One cell of the operator-vs-Riccati sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub a: f64,
    pub c: f64,
    pub n: usize,
    pub tau: f64,
    pub err_coarse: f64,
    pub err_fine: f64,
}

impl SweepCell {
    pub fn converges(&self) -> bool {
        self.err_fine <= self.err_coarse / REFINEMENT_FACTOR || self.err_coarse <= ROUNDING_FLOOR
    }
}

/// Maximum of `|beta - beta_cf|` and `|alpha - alpha_cf|` over the sweep at
/// both node counts.
pub fn pricing_sweep() -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for p in sweep_params()? {
        for &tau in &SWEEP_MATURITIES {
            let (beta_cf, alpha_cf) = riccati_closed(p.a, p.b, p.c, tau);
            let err = |nodes| -> Result<f64> {
                let (beta, alpha) = operator_beta_alpha(&p, 0.0, tau, nodes)?;
                Ok((beta - beta_cf).abs().max((alpha - alpha_cf).abs()))
            };
            cells.push(SweepCell {
                a: p.a,
                c: p.c,
                n: p.dimension()?,
                tau,
                err_coarse: err(PRICING_NODES.0)?,
                err_fine: err(PRICING_NODES.1)?,
            });
        }
    }
    Ok(cells)
}

pub fn check_operator_vs_riccati(cfg: &ValidationConfig) -> CheckReport {
    run_check(1, "operator vs Riccati bond pricing", Some(30.0), cfg, |ck| {
        let cells = pricing_sweep()?;
        let max_coarse = cells.iter().map(|c| c.err_coarse).fold(0.0, f64::max);
        let max_fine = cells.iter().map(|c| c.err_fine).fold(0.0, f64::max);
        ck.metric("cases", cells.len() as f64);
        ck.metric("max_err_256", max_coarse);
        ck.metric("max_err_512", max_fine);
        let ratio = cells
            .iter()
            .filter(|c| c.err_coarse > ROUNDING_FLOOR)
            .map(|c| c.err_coarse / c.err_fine)
            .fold(f64::INFINITY, f64::min);
        ck.metric("min_refinement_ratio", ratio);
        for c in &cells {
            ck.require(c.err_coarse <= PRICING_TOL, || {
                format!("a={} N={} tau={}: error {:e} at 256 nodes", c.a, c.n, c.tau, c.err_coarse)
            });
            ck.require(c.converges(), || {
                format!(
                    "a={} N={} tau={}: error {:e} -> {:e} shrinks less than {REFINEMENT_FACTOR}x",
                    c.a, c.n, c.tau, c.err_coarse, c.err_fine
                )
            });
        }
        Ok(())
    })
}

/// `d beta / dt - (c^2 beta^2 / 2 + a beta - 1)` at `t`, with `beta(t)` the
/// operator value on `[t, T]` and a central difference in `t`.
pub fn riccati_residual(p: &CirParams, t: f64, maturity: f64, nodes: usize, step: f64) -> Result<f64> {
    let beta = |s| operator_beta_alpha(p, s, maturity, nodes).map(|v| v.0);
    let (lo, mid, hi) = (beta(t - step)?, beta(t)?, beta(t + step)?);
    let derivative = (hi - lo) / (2.0 * step);
    Ok(derivative - (0.5 * p.c * p.c * mid * mid + p.a * mid - 1.0))
}

pub fn check_riccati_residual(cfg: &ValidationConfig) -> CheckReport {
    run_check(2, "Riccati residual of operator beta", None, cfg, |ck| {
        let mut worst: f64 = 0.0;
        for p in sweep_params()? {
            for &tau in &SWEEP_MATURITIES {
                // Valuation time one step in, so the backward point is t = 0.
                let t = RICCATI_FD_STEP;
                let res = riccati_residual(&p, t, t + tau, PRICING_NODES.0, RICCATI_FD_STEP)?;
                worst = worst.max(res.abs());
                ck.require(res.abs() < RICCATI_RESIDUAL_TOL, || {
                    format!("a={} c={} tau={tau}: residual {res:e}", p.a, p.c)
                });
            }
        }
        ck.metric("max_residual", worst);
        Ok(())
    })
}

/// Finite-rank `(b_i, c_i)` mode lists for the exponential-quadratic check.
/// The Monte Carlo estimator has finite variance only for `c_i > -1/2`.
pub fn expquad_cases() -> Vec<Vec<(f64, f64)>> {
    vec![
        vec![(0.0, 1.0)],
        vec![(0.5, -0.3), (0.0, 2.0)],
        vec![(-1.0, 0.5), (2.0, 1.0), (0.3, -0.2)],
        vec![(0.2, 5.0), (-0.4, 1.5), (1.0, 0.1), (0.0, -0.25)],
        vec![(0.1, 0.3), (-0.2, 3.0), (0.5, -0.1), (-1.5, 0.8), (0.0, 4.0)],
        vec![(1.2, 0.0), (-0.6, 0.7)],
    ]
}

/// Cases with a strongly negative mode, compared without Monte Carlo.
pub fn expquad_deterministic_cases() -> Vec<Vec<(f64, f64)>> {
    vec![vec![(0.4, -0.85)], vec![(-2.0, -0.6), (1.0, 0.2), (0.5, -0.75)]]
}

pub fn check_expquad(cfg: &ValidationConfig) -> CheckReport {
    run_check(3, "exponential-quadratic triangulation", Some(120.0), cfg, |ck| {
        let grid = QuadratureGrid::gauss_legendre(cfg.expquad_nodes, 0.0, 1.0)?;
        let mut worst_rel: f64 = 0.0;
        let mut worst_z: f64 = 0.0;
        for (k, modes) in expquad_cases().iter().enumerate() {
            let seed = cfg.seed.wrapping_add(k as u64);
            let Crosscheck {
                analytic,
                operator_path,
                mc,
            } = oracle_crosscheck(modes, &grid, cfg.expquad_samples, seed)?;
            let rel = (operator_path - analytic).abs() / analytic;
            let z = mc.z_score_to(analytic).abs().max(mc.z_score_to(operator_path).abs());
            worst_rel = worst_rel.max(rel);
            worst_z = worst_z.max(z);
            ck.require(rel <= EXPQUAD_REL_TOL, || format!("case {k}: relative gap {rel:e}"));
            ck.require(z <= Z_BAND, || {
                format!("case {k}: Monte Carlo {} +- {} is {z:.2} SE away", mc.mean, mc.stderr)
            });
        }
        for (k, modes) in expquad_deterministic_cases().iter().enumerate() {
            let analytic = crate::expquad::finite_rank_expectation(0.0, modes)?;
            let y = crate::expquad::finite_rank_functional(0.0, modes, grid.t0, grid.t_end);
            let operator_path = crate::expquad::exp_quadratic_expectation(&y, &grid)?;
            let rel = (operator_path - analytic).abs() / analytic;
            worst_rel = worst_rel.max(rel);
            ck.require(rel <= EXPQUAD_REL_TOL, || format!("negative-mode case {k}: relative gap {rel:e}"));
        }
        ck.metric("cases", (expquad_cases().len() + expquad_deterministic_cases().len()) as f64);
        ck.metric("max_rel_operator_vs_closed", worst_rel);
        ck.metric("max_mc_z", worst_z);
        Ok(())
    })
}

/// Model of the martingale check: `a = 0.5`, `b = 0.04`, `c = 0.2` (`N = 2`).
pub fn martingale_params() -> Result<CirParams> {
    CirParams::new(0.5, 0.04, 0.2, 0.0, 0.04)
}

pub const MARTINGALE_HORIZONS: [f64; 3] = [1.0, 5.0, 10.0];

pub fn check_martingale_identity(cfg: &ValidationConfig) -> CheckReport {
    run_check(4, "E[X_T^2] = 1 - E[V_T]", Some(180.0), cfg, |ck| {
        let g = embed_cir(&martingale_params()?)?;
        let horizon = *MARTINGALE_HORIZONS.last().expect("non-empty");
        let sim = SimConfig::new(cfg.martingale_paths, cfg.martingale_dt, horizon, cfg.seed, Scheme::OuExact)?;
        let est = accumulate_functionals(&g, &sim, &MARTINGALE_HORIZONS, &[])?;
        for e in &est {
            let z = e.gap.z_score_to(0.0);
            ck.metric(format!("T{}_EX2", e.horizon), e.x_squared.mean);
            ck.metric(format!("T{}_1-EV", e.horizon), e.one_minus_v.mean);
            ck.metric(format!("T{}_z", e.horizon), z);
            ck.require(z.abs() <= Z_BAND, || {
                format!("T={}: gap {:e} +- {:e} ({z:.2} SE)", e.horizon, e.gap.mean, e.gap.stderr)
            });
        }
        for w in est.windows(2) {
            let (early, late) = (&w[0].v, &w[1].v);
            let z = early.z_score(late);
            ck.metric(format!("EV_drop_z_T{}", w[1].horizon), z);
            ck.require(z > Z_BAND, || {
                format!(
                    "E[V] not decreasing from T={} to T={}: {} -> {} ({z:.2} SE)",
                    w[0].horizon, w[1].horizon, early.mean, late.mean
                )
            });
        }
        Ok(())
    })
}

/// Model of the first-chaos check: `r0 = 0`, `a = 0.5`, `c = 0.2`, `N = 2`.
pub fn projection_params() -> Result<CirParams> {
    CirParams::new(0.5, 0.04, 0.2, 0.0, 0.0)
}

pub fn projection_test_functions() -> Vec<(&'static str, TestFn)> {
    vec![
        ("1", Arc::new(|_| 1.0)),
        ("t", Arc::new(|t| t)),
        ("sin_t", Arc::new(f64::sin)),
    ]
}

pub fn check_first_chaos(cfg: &ValidationConfig) -> CheckReport {
    run_check(5, "first-chaos projection vs Monte Carlo", Some(180.0), cfg, |ck| {
        let p = projection_params()?;
        let horizon = 1.0;
        let chaos = CirChaos::new(&p, horizon, cfg.chaos_nodes)?;
        let fns = projection_test_functions();
        let test_fns: Vec<TestFn> = fns.iter().map(|(_, f)| f.clone()).collect();
        let sim = SimConfig::new(cfg.projection_paths, cfg.projection_dt, horizon, cfg.seed, Scheme::OuExact)?;
        let est = accumulate_functionals(&embed_cir(&p)?, &sim, &[horizon], &test_fns)?;
        for ((name, f), mc) in fns.iter().zip(&est[0].sigma_projection) {
            let analytic = chaos.first_chaos_projection(|t| f(t));
            let z = mc.z_score_to(analytic);
            ck.metric(format!("g={name}_analytic"), analytic);
            ck.metric(format!("g={name}_mc"), mc.mean);
            ck.metric(format!("g={name}_z"), z);
            ck.require(z.abs() <= Z_BAND, || {
                format!("g={name}: analytic {analytic:e}, Monte Carlo {:e} +- {:e}", mc.mean, mc.stderr)
            });
        }
        Ok(())
    })
}

fn double_factorial_odd(m: usize) -> usize {
    (1..=m).map(|k| 2 * k - 1).product()
}

pub fn check_feynman_graphs(cfg: &ValidationConfig) -> CheckReport {
    run_check(6, "Feynman-graph combinatorics", None, cfg, |ck| {
        for m in 1..=5 {
            let count = enumerate_pairings(2 * m)?.len();
            let expected = double_factorial_odd(m);
            ck.metric(format!("pairings_{}", 2 * m), count as f64);
            ck.require(count == expected, || format!("{} points: {count} matchings, expected {expected}", 2 * m));
        }
        let chaos = CirChaos::new(&projection_params()?, 1.0, cfg.chaos_nodes)?;
        let times = [0.2, 0.55, 0.9];
        let r = |x: f64, y: f64| resolvent_kernel_at(chaos.kernel(), 1.0, x, y);
        let l = |x: f64| chaos.terminal_link(x);
        let [t1, t2, t3] = times;
        let graphs = l(t1)? * r(t2, t3)? + l(t2)? * r(t1, t3)? + l(t3)? * r(t1, t2)?;
        let expected = chaos.m_t() * graphs;
        let value = chaos.coefficient(&times)?;
        let rel = (value - expected).abs() / expected.abs();
        ck.metric("f3", value);
        ck.metric("f3_graph_rel_gap", rel);
        ck.require(rel <= SYMMETRY_TOL, || format!("third-order coefficient {value:e} vs graph sum {expected:e}"));
        let mut worst: f64 = 0.0;
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let permuted: Vec<f64> = perm.iter().map(|&i| times[i]).collect();
            worst = worst.max((chaos.coefficient(&permuted)? - value).abs() / value.abs());
        }
        ck.metric("max_permutation_rel_gap", worst);
        ck.require(worst <= SYMMETRY_TOL, || format!("permutation gap {worst:e}"));
        Ok(())
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `(f, g)` pairs on `[0, 1]` whose normalized overlap sets the correlation.
fn overlap_pairs() -> Vec<(&'static str, fn(f64) -> f64, fn(f64) -> f64)> {
    vec![
        ("1,t", |_| 1.0, |t| t),
        ("sin,cos", |t| (PI * t).sin(), |t| (PI * t).cos()),
        ("t,t^2", |t| t, |t| t * t),
        ("exp,-t", f64::exp, |t| -t),
        ("1,1", |_| 1.0, |_| 1.0),
    ]
}

pub fn check_hermite_wick(cfg: &ValidationConfig) -> CheckReport {
    run_check(7, "Hermite and Wick identities", None, cfg, |ck| {
        let grid = QuadratureGrid::gauss_legendre(64, 0.0, 1.0)?;
        let inner = |f: fn(f64) -> f64, g: fn(f64) -> f64| -> f64 {
            grid.nodes.iter().zip(&grid.weights).map(|(&t, &w)| w * f(t) * g(t)).sum()
        };
        let (x, w) = gauss_hermite(48);
        let mut worst_orth: f64 = 0.0;
        for (name, f, g) in overlap_pairs() {
            let rho = inner(f, g) / (inner(f, f) * inner(g, g)).sqrt();
            let tail = (1.0 - rho * rho).max(0.0).sqrt();
            for n in 0..=5 {
                for m in 0..=5 {
                    let mut v = 0.0;
                    for i in 0..x.len() {
                        for j in 0..x.len() {
                            let y = rho * x[i] + tail * x[j];
                            v += w[i] * w[j] * hermite(n, x[i])? * hermite(m, y)?;
                        }
                    }
                    let expected = if n == m { factorial(n) * rho.powi(n as i32) } else { 0.0 };
                    let err = (v - expected).abs();
                    worst_orth = worst_orth.max(err);
                    ck.require(err <= ORTHOGONALITY_TOL, || format!("{name} n={n} m={m}: {v} vs {expected}"));
                }
            }
        }
        ck.metric("max_orthogonality_err", worst_orth);

        let mut worst_mean: f64 = 0.0;
        for sigma in [0.1, 0.5, 1.0, 2.0, 3.0] {
            let mean: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * (sigma * xi - 0.5 * sigma * sigma).exp()).sum();
            worst_mean = worst_mean.max((mean - 1.0).abs());
        }
        ck.metric("max_wick_mean_err", worst_mean);
        ck.require(worst_mean <= WICK_MEAN_TOL, || format!("Wick exponential mean off by {worst_mean:e}"));

        let mut worst_series: f64 = 0.0;
        for sigma in [0.2, 0.6, 1.0, 1.5] {
            for k in 0..=12 {
                let y = -3.0 + 0.5 * k as f64;
                let sum: f64 = (0..=MAX_HERMITE_ORDER)
                    .map(|n| Ok(wick_power(n, y, sigma)? / factorial(n)))
                    .sum::<Result<f64>>()?;
                let expected = (y - 0.5 * sigma * sigma).exp();
                worst_series = worst_series.max((sum - expected).abs() / expected);
            }
        }
        ck.metric("max_wick_series_rel_err", worst_series);
        ck.require(worst_series <= WICK_SERIES_TOL, || format!("Wick series off by {worst_series:e}"));
        Ok(())
    })
}

/// Random symmetric kernel on `[0, 1]`: a finite-rank Legendre part plus a
/// scaled exponential covariance.
fn random_kernel(rng: &mut ChaCha8Rng) -> impl Fn(f64, f64) -> f64 + Send + Sync + 'static {
    let rank = rng.random_range(1..=4);
    let coeffs: Vec<f64> = (0..rank).map(|_| rng.random_range(-0.3..1.0)).collect();
    let weight = rng.random_range(0.0..1.0);
    let theta = rng.random_range(0.5..3.0);
    let modes: Vec<_> = (0..rank).map(|i| crate::expquad::legendre_mode(i, 0.0, 1.0)).collect();
    move |s, t| {
        let low: f64 = modes.iter().zip(&coeffs).map(|(g, c)| c * g(s) * g(t)).sum();
        low + weight * (-theta * (s - t).abs()).exp()
    }
}

pub fn check_determinants(cfg: &ValidationConfig) -> CheckReport {
    run_check(8, "determinant identities and kernel agreement", None, cfg, |ck| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let grid = QuadratureGrid::gauss_legendre(48, 0.0, 1.0)?;
        let n = grid.len();
        let mut worst_det: f64 = 0.0;
        for _ in 0..20 {
            let d = discretize(random_kernel(&mut rng), &grid)?;
            // Independent route: LU determinant of I + C W and the weighted diagonal.
            let m = DMatrix::from_fn(n, n, |i, j| {
                f64::from(u8::from(i == j)) + d.values()[(i, j)] * grid.weights[j]
            });
            let tr: f64 = (0..n).map(|i| grid.weights[i] * d.values()[(i, i)]).sum();
            let expected = m.determinant() * (-tr).exp();
            let det2 = carleman_det2(&d)?;
            worst_det = worst_det.max((det2 - expected).abs() / expected.abs());
        }
        ck.metric("max_det2_rel_err", worst_det);
        ck.require(worst_det <= DET_IDENTITY_TOL, || format!("det2 identity off by {worst_det:e}"));

        let mut worst_kernel: f64 = 0.0;
        let times: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        for lb in [0.0, 0.5] {
            for base in sweep_params()? {
                let p = CirParams { lambda_bar: lb, ..base };
                let g = embed_cir(&p)?;
                let horizon = 1.0;
                let scale = cir_kernel(&p, horizon, 0.0, 0.0)?.abs().max(cir_kernel(&p, horizon, 1.0, 1.0)?.abs());
                for &t1 in &times {
                    for &t2 in &times {
                        let gap = (general_kernel(&g, horizon, t1, t2)? - cir_kernel(&p, horizon, t1, t2)?).abs();
                        worst_kernel = worst_kernel.max(gap / scale);
                    }
                }
            }
        }
        ck.metric("max_kernel_rel_gap", worst_kernel);
        ck.require(worst_kernel <= KERNEL_MATCH_TOL, || format!("general vs CIR kernel gap {worst_kernel:e}"));

        let mut min_cert = f64::INFINITY;
        for p in sweep_params()? {
            for &tau in &SWEEP_MATURITIES {
                let d = cir_operator(&p, 0.0, tau, PRICING_NODES.0)?;
                // The pricing operator is 1 + 2C; report the tighter of the two shifts.
                let lowest = d.eigenvalues().last().copied().unwrap_or(0.0);
                min_cert = min_cert.min(min_eigen_shifted(&d)).min(1.0 + 2.0 * lowest);
            }
        }
        ck.metric("min_certificate", min_cert);
        ck.require(min_cert > 0.0, || format!("certificate {min_cert:e} not positive"));
        Ok(())
    })
}

/// Runs every check in order.
pub fn run_all(cfg: &ValidationConfig) -> Vec<CheckReport> {
    vec![
        check_operator_vs_riccati(cfg),
        check_riccati_residual(cfg),
        check_expquad(cfg),
        check_martingale_identity(cfg),
        check_first_chaos(cfg),
        check_feynman_graphs(cfg),
        check_hermite_wick(cfg),
        check_determinants(cfg),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_has_integer_dimensions() {
        let ps = sweep_params().unwrap();
        assert_eq!(ps.len(), 9);
        for (p, n) in ps.iter().zip(SWEEP_DIMENSIONS.iter().cycle()) {
            assert_eq!(p.dimension().unwrap(), *n);
        }
    }

    #[test]
    fn double_factorials() {
        let v: Vec<usize> = (1..=5).map(double_factorial_odd).collect();
        assert_eq!(v, vec![1, 3, 15, 105, 945]);
    }

    #[test]
    fn report_line_format() {
        let r = CheckReport {
            id: 2,
            title: "x",
            passed: false,
            elapsed_secs: 0.5,
            budget_secs: None,
            metrics: vec![("k".into(), 1.5), ("n".into(), 36.0)],
            notes: vec!["bad".into()],
        };
        assert_eq!(r.line(), "FAIL [2] x: k=1.500000e0 n=36 (0.50s)\n    bad");
    }

    #[test]
    fn refinement_rule() {
        let cell = |c, f| SweepCell {
            a: 0.1,
            c: 0.1,
            n: 2,
            tau: 1.0,
            err_coarse: c,
            err_fine: f,
        };
        assert!(cell(1e-6, 2e-7).converges());
        assert!(!cell(1e-6, 5e-7).converges());
        assert!(cell(1e-13, 1e-13).converges());
    }

    #[test]
    fn fast_checks_without_monte_carlo_pass() {
        let cfg = ValidationConfig {
            enforce_budgets: false,
            ..ValidationConfig::fast()
        };
        for r in [check_feynman_graphs(&cfg), check_hermite_wick(&cfg), check_determinants(&cfg)] {
            assert!(r.passed, "{}", r.line());
        }
    }
}
