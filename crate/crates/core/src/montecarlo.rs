//! Monte Carlo simulation of the squared-Gaussian model (exact OU transitions)
//! and of the CIR SDE (full-truncation Euler), with reproducible parallel
//! estimators.
//!
//! Every path owns a ChaCha8 stream selected by its index, so a path's draws do
//! not depend on how paths are scheduled. Paths are processed in fixed-size
//! batches; per-batch accumulators are merged in batch order. Estimates are
//! therefore bitwise identical for any thread count.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CirParams, SqGaussParams};

/// Paths per work item.
const BATCH: usize = 2048;

/// Largest number of paths accepted by [`path_dump`].
pub const MAX_DUMP_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    OuExact,
    CirEulerFullTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt: f64, horizon: f64, seed: u64, scheme: Scheme) -> Result<Self> {
        let cfg = Self {
            n_paths,
            dt,
            horizon,
            seed,
            scheme,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::invalid("n_paths", "must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt * (1.0 - 1e-12)) {
            return Err(Error::invalid(
                "horizon",
                format!("must be finite and >= dt, got {}", self.horizon),
            ));
        }
        Ok(())
    }

    /// Number of uniform steps; the step is `horizon / n_steps <= dt`.
    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    /// Index of the grid time closest to `t`, provided it coincides with `t`.
    fn step_index(&self, t: f64) -> Result<usize> {
        let h = self.step();
        let idx = (t / h).round();
        if !(t > 0.0) || idx < 1.0 || idx as usize > self.n_steps() || (idx * h - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::invalid(
                "horizons",
                format!("{t} is not a positive multiple of the step {h} within the horizon"),
            ));
        }
        Ok(idx as usize)
    }

    fn rng(&self, path: usize) -> ChaCha8Rng {
        path_rng(self.seed, path)
    }
}

/// The random stream of path `path` under `seed`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Sample mean with its standard error `s / sqrt(n)`, `s` the unbiased sample
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    /// `|self - other| / sqrt(se_1^2 + se_2^2)`; infinite when both errors vanish
    /// and the means differ.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        let diff = (self.mean - other.mean).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }

    /// `|self - value| / stderr`.
    pub fn z_score_to(&self, value: f64) -> f64 {
        let diff = (self.mean - value).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.stderr
        }
    }
}

/// Streaming mean/variance accumulator with an exact pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn estimate(&self) -> Result<Estimate> {
        if self.n < 2 {
            return Err(Error::InsufficientSamples { n: self.n });
        }
        let var = (self.m2 / (self.n - 1) as f64).max(0.0);
        Ok(Estimate {
            mean: self.mean,
            stderr: (var / self.n as f64).sqrt(),
            n: self.n,
        })
    }
}

pub fn estimate(values: &[f64]) -> Result<Estimate> {
    let mut acc = Accumulator::default();
    values.iter().for_each(|&x| acc.push(x));
    acc.estimate()
}

/// Runs `n_paths` independent samples. `path_fn(index, rng, out)` writes
/// `n_outputs` per-sample values; each output slot is averaged.
pub fn run_paths<F>(n_paths: usize, seed: u64, n_outputs: usize, path_fn: F) -> Vec<Accumulator>
where
    F: Fn(usize, &mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let n_batches = n_paths.div_ceil(BATCH);
    let partial: Vec<Vec<Accumulator>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![Accumulator::default(); n_outputs];
            let mut out = vec![0.0; n_outputs];
            for path in b * BATCH..((b + 1) * BATCH).min(n_paths) {
                let mut rng = path_rng(seed, path);
                path_fn(path, &mut rng, &mut out);
                for (a, &x) in acc.iter_mut().zip(&out) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Accumulator::default(); n_outputs];
    for batch in &partial {
        for (t, a) in total.iter_mut().zip(batch) {
            t.merge(a);
        }
    }
    total
}

#[derive(Debug, Clone, Copy)]
struct SubStep {
    len: f64,
    decay: f64,
    /// Index into the table of distinct drift targets `rbar`.
    target_index: usize,
    /// Regression of the OU innovation on the Brownian increment.
    slope: f64,
    residual_sd: f64,
}

/// Exact OU transition tables on the simulation grid.
#[derive(Debug, Clone)]
struct OuStepper {
    dim: usize,
    steps: Vec<Vec<SubStep>>,
    targets: Vec<Vec<f64>>,
}

impl OuStepper {
    fn new(p: &SqGaussParams, cfg: &SimConfig) -> Self {
        let n = cfg.n_steps();
        let h = cfg.step();
        let breaks = p.breakpoints();
        let mut targets: Vec<Vec<f64>> = Vec::new();
        let mut steps = Vec::with_capacity(n);
        for i in 0..n {
            let t0 = i as f64 * h;
            let t1 = if i + 1 == n { cfg.horizon } else { (i + 1) as f64 * h };
            let mut edges = vec![t0];
            edges.extend(breaks.iter().copied().filter(|&b| b > t0 && b < t1));
            edges.push(t1);
            let mut subs = Vec::with_capacity(edges.len() - 1);
            for w in edges.windows(2) {
                let len = w[1] - w[0];
                let alpha = *p.alpha.at(w[0]);
                let gamma = *p.gamma.at(w[0]);
                let target = p.rbar.at(w[0]);
                let target_index = match targets.iter().position(|t| t == target) {
                    Some(k) => k,
                    None => {
                        targets.push(target.clone());
                        targets.len() - 1
                    }
                };
                let decay = (-alpha * len).exp();
                // Var(eta) and Cov(eta, dW) for eta = gamma int e^{-alpha(t1-s)} dW_s.
                let var = gamma * gamma * (-(-2.0 * alpha * len).exp_m1()) / (2.0 * alpha);
                let cov = gamma * (-(-alpha * len).exp_m1()) / alpha;
                let slope = cov / len;
                let residual_sd = (var - cov * slope).max(0.0).sqrt();
                subs.push(SubStep {
                    len,
                    decay,
                    target_index,
                    slope,
                    residual_sd,
                });
            }
            steps.push(subs);
        }
        Self {
            dim: p.dim,
            steps,
            targets,
        }
    }

    /// Advances `state` over step `i`, writing the step's Brownian increments.
    #[inline]
    fn advance(&self, i: usize, state: &mut [f64], dw: &mut [f64], rng: &mut ChaCha8Rng) {
        dw.iter_mut().for_each(|x| *x = 0.0);
        for sub in &self.steps[i] {
            let sd = sub.len.sqrt();
            let target = &self.targets[sub.target_index];
            for mu in 0..self.dim {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let inc = sd * z1;
                let eta = sub.slope * inc + sub.residual_sd * z2;
                state[mu] = target[mu] + (state[mu] - target[mu]) * sub.decay + eta;
                dw[mu] += inc;
            }
        }
    }
}

/// Simulated paths on the uniform grid `times`; `paths[k][i]` is the state of
/// path `k` at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle<S> {
    pub times: Vec<f64>,
    pub paths: Vec<Vec<S>>,
}

fn grid_times(cfg: &SimConfig) -> Vec<f64> {
    let n = cfg.n_steps();
    let h = cfg.step();
    (0..=n)
        .map(|i| if i == n { cfg.horizon } else { i as f64 * h })
        .collect()
}

fn require_scheme(cfg: &SimConfig, scheme: Scheme) -> Result<()> {
    cfg.validate()?;
    if cfg.scheme != scheme {
        return Err(Error::invalid(
            "scheme",
            format!("expected {scheme:?}, got {:?}", cfg.scheme),
        ));
    }
    Ok(())
}

/// Full OU path bundle. Memory grows with `n_paths * n_steps * dim`.
pub fn simulate_ou(p: &SqGaussParams, cfg: &SimConfig) -> Result<PathBundle<Vec<f64>>> {
    require_scheme(cfg, Scheme::OuExact)?;
    let stepper = OuStepper::new(p, cfg);
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = cfg.rng(k);
            let mut state = p.r0_vec.clone();
            let mut dw = vec![0.0; p.dim];
            let mut out = Vec::with_capacity(cfg.n_steps() + 1);
            out.push(state.clone());
            for i in 0..cfg.n_steps() {
                stepper.advance(i, &mut state, &mut dw, &mut rng);
                out.push(state.clone());
            }
            out
        })
        .collect();
    Ok(PathBundle {
        times: grid_times(cfg),
        paths,
    })
}

/// `R_T` for every path, without storing intermediate states.
pub fn sample_terminal_ou(p: &SqGaussParams, cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    require_scheme(cfg, Scheme::OuExact)?;
    let stepper = OuStepper::new(p, cfg);
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = cfg.rng(k);
            let mut state = p.r0_vec.clone();
            let mut dw = vec![0.0; p.dim];
            for i in 0..cfg.n_steps() {
                stepper.advance(i, &mut state, &mut dw, &mut rng);
            }
            state
        })
        .collect())
}

#[inline]
fn cir_euler_step(p: &CirParams, r: f64, h: f64, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let rp = r.max(0.0);
    r + p.a * (p.b - rp) * h + p.c * rp.sqrt() * h.sqrt() * z
}

/// Full-truncation Euler paths of the scalar CIR SDE. The integrality of
/// `4ab/c^2` is not required.
pub fn simulate_cir_direct(p: &CirParams, cfg: &SimConfig) -> Result<PathBundle<f64>> {
    require_scheme(cfg, Scheme::CirEulerFullTruncation)?;
    p.validate()?;
    let h = cfg.step();
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = cfg.rng(k);
            let mut r = p.r0;
            let mut out = Vec::with_capacity(cfg.n_steps() + 1);
            out.push(r);
            for _ in 0..cfg.n_steps() {
                r = cir_euler_step(p, r, h, &mut rng);
                out.push(r);
            }
            out
        })
        .collect();
    Ok(PathBundle {
        times: grid_times(cfg),
        paths,
    })
}

/// Terminal values `max(r_T, 0)` of the direct scheme.
pub fn sample_terminal_cir(p: &CirParams, cfg: &SimConfig) -> Result<Vec<f64>> {
    require_scheme(cfg, Scheme::CirEulerFullTruncation)?;
    p.validate()?;
    let h = cfg.step();
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = cfg.rng(k);
            let mut r = p.r0;
            for _ in 0..cfg.n_steps() {
                r = cir_euler_step(p, r, h, &mut rng);
            }
            r.max(0.0)
        })
        .collect())
}

pub type TestFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Estimates at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonEstimates {
    pub horizon: f64,
    /// State-price density `V_T`; with `lambda_bar = 0` this is `exp(-int r)`.
    pub v: Estimate,
    /// `X_T = int sigma . dW`.
    pub x: Estimate,
    pub x_squared: Estimate,
    pub one_minus_v: Estimate,
    /// Per-path `X_T^2 - (1 - V_T)`.
    pub gap: Estimate,
    /// Component-averaged `sigma_T . W(g) / N` for each test function `g`.
    pub sigma_projection: Vec<Estimate>,
}

/// Simulates the squared-Gaussian model once and evaluates the path
/// functionals at each requested horizon (each must lie on the step grid):
///
/// * `V_T = exp(-int R(1 + lb^2/2)R dt - int R lb . dW)` with a trapezoid rule
///   for the time integral and left-point Itô sums,
/// * `sigma_t = R_t V_t^{1/2}` and `X_T = sum sigma_{t_i} . dW_i`,
/// * `W(g) = sum g(t_i + h/2) dW_i` for the supplied test functions.
pub fn accumulate_functionals(
    p: &SqGaussParams,
    cfg: &SimConfig,
    horizons: &[f64],
    test_fns: &[TestFn],
) -> Result<Vec<HorizonEstimates>> {
    require_scheme(cfg, Scheme::OuExact)?;
    if horizons.is_empty() {
        return Err(Error::invalid("horizons", "need at least one horizon"));
    }
    let mut marks: Vec<usize> = horizons.iter().map(|&t| cfg.step_index(t)).collect::<Result<_>>()?;
    if marks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("horizons", "must be strictly increasing"));
    }
    let last = *marks.last().expect("non-empty");
    let stepper = OuStepper::new(p, cfg);
    let h = cfg.step();
    let dim = p.dim;
    let m = test_fns.len();
    let g_table: Vec<f64> = (0..last)
        .flat_map(|i| {
            let mid = (i as f64 + 0.5) * h;
            test_fns.iter().map(move |g| g(mid)).collect::<Vec<_>>()
        })
        .collect();
    let lb_table: Vec<f64> = (0..last).map(|i| *p.lambda_bar.at(i as f64 * h)).collect();
    let stride = 5 + m;
    let n_out = stride * marks.len();
    marks.push(usize::MAX);

    let acc = run_paths(cfg.n_paths, cfg.seed, n_out, |_, rng, out| {
        let mut state = p.r0_vec.clone();
        let mut dw = vec![0.0; dim];
        let mut wg = vec![0.0; m * dim];
        let mut exponent: f64 = 0.0;
        let mut x = 0.0;
        let mut r_old: f64 = state.iter().map(|v| v * v).sum();
        let mut next_mark = 0;
        let mut prev = vec![0.0; dim];
        for i in 0..last {
            let lb = lb_table[i];
            let sqrt_v = (0.5 * exponent).exp();
            // Itô integrands are evaluated at the left end of the step.
            prev.copy_from_slice(&state);
            stepper.advance(i, &mut state, &mut dw, rng);
            let left_dot: f64 = prev.iter().zip(&dw).map(|(a, b)| a * b).sum();
            x += sqrt_v * left_dot;
            let gi = &g_table[i * m..(i + 1) * m];
            for (j, g) in gi.iter().enumerate() {
                for mu in 0..dim {
                    wg[j * dim + mu] += g * dw[mu];
                }
            }
            let r_new: f64 = state.iter().map(|v| v * v).sum();
            exponent -= 0.5 * h * (1.0 + 0.5 * lb * lb) * (r_old + r_new) + lb * left_dot;
            r_old = r_new;
            if i + 1 == marks[next_mark] {
                let v = exponent.exp();
                let o = &mut out[next_mark * stride..(next_mark + 1) * stride];
                o[0] = v;
                o[1] = x;
                o[2] = x * x;
                o[3] = 1.0 - v;
                o[4] = x * x - (1.0 - v);
                let sv = v.sqrt();
                for j in 0..m {
                    let proj: f64 = (0..dim).map(|mu| state[mu] * wg[j * dim + mu]).sum();
                    o[5 + j] = sv * proj / dim as f64;
                }
                next_mark += 1;
            }
        }
    });

    horizons
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let e = |j: usize| acc[k * stride + j].estimate();
            Ok(HorizonEstimates {
                horizon: t,
                v: e(0)?,
                x: e(1)?,
                x_squared: e(2)?,
                one_minus_v: e(3)?,
                gap: e(4)?,
                sigma_projection: (0..m).map(|j| e(5 + j)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// One row of a path dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub path_id: usize,
    pub t: f64,
    pub r: f64,
    pub v: f64,
    pub x_partial: f64,
}

/// Per-step `(t, r, V, X)` along at most [`MAX_DUMP_PATHS`] paths, using the
/// same streams and accumulation rules as [`accumulate_functionals`].
pub fn path_dump(p: &SqGaussParams, cfg: &SimConfig) -> Result<Vec<PathPoint>> {
    require_scheme(cfg, Scheme::OuExact)?;
    if cfg.n_paths > MAX_DUMP_PATHS {
        return Err(Error::invalid(
            "n_paths",
            format!("path dumps are capped at {MAX_DUMP_PATHS} paths, got {}", cfg.n_paths),
        ));
    }
    let stepper = OuStepper::new(p, cfg);
    let h = cfg.step();
    let times = grid_times(cfg);
    let mut rows = Vec::with_capacity(cfg.n_paths * times.len());
    for k in 0..cfg.n_paths {
        let mut rng = cfg.rng(k);
        let mut state = p.r0_vec.clone();
        let mut dw = vec![0.0; p.dim];
        let mut exponent: f64 = 0.0;
        let mut x = 0.0;
        let mut r_old: f64 = state.iter().map(|v| v * v).sum();
        rows.push(PathPoint {
            path_id: k,
            t: 0.0,
            r: r_old,
            v: 1.0,
            x_partial: 0.0,
        });
        for i in 0..cfg.n_steps() {
            let lb = *p.lambda_bar.at(i as f64 * h);
            let sqrt_v = (0.5 * exponent).exp();
            let prev = state.clone();
            stepper.advance(i, &mut state, &mut dw, &mut rng);
            let left_dot: f64 = prev.iter().zip(&dw).map(|(a, b)| a * b).sum();
            x += sqrt_v * left_dot;
            let r_new: f64 = state.iter().map(|v| v * v).sum();
            exponent -= 0.5 * h * (1.0 + 0.5 * lb * lb) * (r_old + r_new) + lb * left_dot;
            r_old = r_new;
            rows.push(PathPoint {
                path_id: k,
                t: times[i + 1],
                r: r_new,
                v: exponent.exp(),
                x_partial: x,
            });
        }
    }
    Ok(rows)
}

pub fn path_dump_csv(rows: &[PathPoint]) -> String {
    let mut out = String::from("path_id,t,r,V,X_partial\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.path_id, r.t, r.r, r.v, r.x_partial);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{embed_cir, PiecewiseConstant};

    fn cir(r0: f64) -> CirParams {
        CirParams::new(0.5, 0.04, 0.2, 0.0, r0).unwrap()
    }

    #[test]
    fn estimate_hand_values() {
        let e = estimate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!((e.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.n, 3);
        assert_eq!(estimate(&[4.2; 10]).unwrap().stderr, 0.0);
        assert!(matches!(estimate(&[1.0]), Err(Error::InsufficientSamples { n: 1 })));
        assert!(matches!(estimate(&[]), Err(Error::InsufficientSamples { n: 0 })));
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.01).collect();
        let whole = estimate(&xs).unwrap();
        let mut a = Accumulator::default();
        let mut b = Accumulator::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        let merged = a.estimate().unwrap();
        assert!((merged.mean - whole.mean).abs() < 1e-14);
        assert!((merged.stderr - whole.stderr).abs() < 1e-14);
    }

    #[test]
    fn standard_normal_mean_clt() {
        let acc = run_paths(1_000_000, 5, 1, |_, rng, out| out[0] = rng.sample(StandardNormal));
        let e = acc[0].estimate().unwrap();
        assert!(e.mean.abs() < 3e-3);
        assert!((e.stderr - 1e-3).abs() < 1e-5);
    }

    #[test]
    fn config_validation_and_grid() {
        assert!(SimConfig::new(0, 0.1, 1.0, 0, Scheme::OuExact).is_err());
        assert!(SimConfig::new(1, 0.0, 1.0, 0, Scheme::OuExact).is_err());
        assert!(SimConfig::new(1, 0.5, 0.1, 0, Scheme::OuExact).is_err());
        let cfg = SimConfig::new(1, 1e-3, 10.0, 0, Scheme::OuExact).unwrap();
        assert_eq!(cfg.n_steps(), 10_000);
        let cfg = SimConfig::new(1, 0.3, 1.0, 0, Scheme::OuExact).unwrap();
        assert_eq!(cfg.n_steps(), 4);
        assert!(cfg.step() <= 0.3);
    }

    #[test]
    fn wrong_scheme_rejected() {
        let g = embed_cir(&cir(0.0)).unwrap();
        let cfg = SimConfig::new(4, 0.1, 1.0, 0, Scheme::CirEulerFullTruncation).unwrap();
        assert!(simulate_ou(&g, &cfg).is_err());
        let cfg = SimConfig::new(4, 0.1, 1.0, 0, Scheme::OuExact).unwrap();
        assert!(simulate_cir_direct(&cir(0.0), &cfg).is_err());
    }

    #[test]
    fn zero_noise_is_deterministic_flow() {
        let mut g = embed_cir(&cir(0.09)).unwrap();
        g.gamma = PiecewiseConstant::constant(0.0);
        let cfg = SimConfig::new(3, 0.1, 2.0, 9, Scheme::OuExact).unwrap();
        let bundle = simulate_ou(&g, &cfg).unwrap();
        for path in &bundle.paths {
            for (t, state) in bundle.times.iter().zip(path) {
                let expected = 0.3 * (-0.25 * t).exp();
                assert!((state[0] - expected).abs() < 1e-15);
                assert_eq!(state[1], 0.0);
            }
        }
    }

    #[test]
    fn ou_stationary_variance() {
        let g = embed_cir(&cir(0.0)).unwrap();
        let cfg = SimConfig::new(40_000, 5.0, 60.0, 21, Scheme::OuExact).unwrap();
        let terminal = sample_terminal_ou(&g, &cfg).unwrap();
        let sq: Vec<f64> = terminal.iter().map(|r| r[0] * r[0]).collect();
        let e = estimate(&sq).unwrap();
        let target = 0.04 / (4.0 * 0.5);
        assert!(e.z_score_to(target) < 3.0, "{e:?} vs {target}");
    }

    #[test]
    fn cir_mean_from_embedding() {
        let g = embed_cir(&cir(0.0)).unwrap();
        let cfg = SimConfig::new(40_000, 0.25, 1.5, 8, Scheme::OuExact).unwrap();
        let r: Vec<f64> = sample_terminal_ou(&g, &cfg)
            .unwrap()
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum())
            .collect();
        let e = estimate(&r).unwrap();
        let target = 0.04 * (1.0 - (-0.75f64).exp());
        assert!(e.z_score_to(target) < 3.0, "{e:?} vs {target}");
    }

    #[test]
    fn cir_direct_small_noise_relaxes_to_b() {
        let p = CirParams::new(0.5, 0.04, 1e-6, 0.0, 0.1).unwrap();
        let cfg = SimConfig::new(4, 1e-3, 2.0, 1, Scheme::CirEulerFullTruncation).unwrap();
        let bundle = simulate_cir_direct(&p, &cfg).unwrap();
        let expected = 0.04 + 0.06 * (-1.0f64).exp();
        for path in &bundle.paths {
            assert!((path.last().unwrap() - expected).abs() < 1e-4);
        }
    }

    #[test]
    fn cir_direct_mean() {
        let p = cir(0.02);
        let cfg = SimConfig::new(20_000, 1e-2, 1.0, 4, Scheme::CirEulerFullTruncation).unwrap();
        let e = estimate(&sample_terminal_cir(&p, &cfg).unwrap()).unwrap();
        let target = 0.04 + (0.02 - 0.04) * (-0.5f64).exp();
        assert!(e.z_score_to(target) < 3.0, "{e:?} vs {target}");
    }

    #[test]
    fn lambda_zero_v_is_discount_factor() {
        let g = embed_cir(&cir(0.03)).unwrap();
        let cfg = SimConfig::new(3, 0.01, 1.0, 2, Scheme::OuExact).unwrap();
        let rows = path_dump(&g, &cfg).unwrap();
        let path0: Vec<&PathPoint> = rows.iter().filter(|r| r.path_id == 0).collect();
        let mut integral = 0.0;
        for w in path0.windows(2) {
            integral += 0.5 * (w[1].t - w[0].t) * (w[0].r + w[1].r);
            assert!((w[1].v - (-integral).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn path_dump_agrees_with_accumulator() {
        let g = embed_cir(&CirParams::new(0.5, 0.04, 0.2, 0.3, 0.03).unwrap()).unwrap();
        let cfg = SimConfig::new(2, 0.05, 1.0, 17, Scheme::OuExact).unwrap();
        let rows = path_dump(&g, &cfg).unwrap();
        let est = accumulate_functionals(&g, &cfg, &[1.0], &[]).unwrap();
        let finals: Vec<&PathPoint> = rows.iter().filter(|r| r.t == 1.0).collect();
        let mean_v = 0.5 * (finals[0].v + finals[1].v);
        let mean_x = 0.5 * (finals[0].x_partial + finals[1].x_partial);
        assert!((est[0].v.mean - mean_v).abs() < 1e-15);
        assert!((est[0].x.mean - mean_x).abs() < 1e-15);
        let csv = path_dump_csv(&rows);
        assert!(csv.starts_with("path_id,t,r,V,X_partial\n"));
        let big = SimConfig::new(101, 0.05, 1.0, 17, Scheme::OuExact).unwrap();
        assert!(path_dump(&g, &big).is_err());
    }

    #[test]
    fn reproducible_estimates() {
        let g = embed_cir(&cir(0.04)).unwrap();
        let cfg = SimConfig::new(5000, 0.01, 1.0, 77, Scheme::OuExact).unwrap();
        let g1: TestFn = Arc::new(|t| t);
        let a = accumulate_functionals(&g, &cfg, &[0.5, 1.0], &[g1.clone()]).unwrap();
        let b = accumulate_functionals(&g, &cfg, &[0.5, 1.0], &[g1.clone()]).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| accumulate_functionals(&g, &cfg, &[0.5, 1.0], &[g1])).unwrap();
        assert_eq!(a, c);
        let other = SimConfig { seed: 78, ..cfg };
        let d = accumulate_functionals(&g, &other, &[0.5, 1.0], &[]).unwrap();
        assert_ne!(a[1].v.mean, d[1].v.mean);
    }

    #[test]
    fn horizons_must_be_on_grid() {
        let g = embed_cir(&cir(0.04)).unwrap();
        let cfg = SimConfig::new(10, 0.1, 1.0, 1, Scheme::OuExact).unwrap();
        assert!(accumulate_functionals(&g, &cfg, &[0.55], &[]).is_err());
        assert!(accumulate_functionals(&g, &cfg, &[1.5], &[]).is_err());
        assert!(accumulate_functionals(&g, &cfg, &[0.5, 0.3], &[]).is_err());
        assert!(accumulate_functionals(&g, &cfg, &[0.3, 0.5], &[]).is_ok());
    }

    #[test]
    fn piecewise_substeps_match_exact_mean() {
        let p = SqGaussParams::new(
            2,
            PiecewiseConstant::new(vec![0.37], vec![0.5, 1.5]).unwrap(),
            PiecewiseConstant::constant(0.0),
            PiecewiseConstant::new(vec![0.61], vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
            PiecewiseConstant::constant(0.0),
            vec![0.2, 0.2],
            0.5,
        )
        .unwrap();
        let cfg = SimConfig::new(1, 0.1, 1.0, 0, Scheme::OuExact).unwrap();
        let terminal = &sample_terminal_ou(&p, &cfg).unwrap()[0];
        let exact = crate::model::mean_function(&p, 1.0).unwrap();
        for (a, b) in terminal.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
