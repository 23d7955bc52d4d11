//! Hermite polynomials and Wick powers, perfect-matching (Feynman graph)
//! enumeration, the quadratic functional `Y_T` of the squared-Gaussian model,
//! and Wiener-chaos coefficients built from resolvent kernels.
//!
//! Hermite polynomials follow the probabilists' convention
//! `H_n(x) = x H_{n-1}(x) - (n-1) H_{n-2}(x)`, orthogonal under the standard
//! normal density with `E[H_n(Z)^2] = n!`. The physicists' polynomials differ
//! by the scaling `x -> x / sqrt(2)` and a factor `2^{n/2}`.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    self, cir_kernel_row_integral, cir_kernel_value, CirParams, SqGaussParams, DOMAIN_SLACK,
    TIME_INTEGRAL_RTOL,
};
use crate::operator::{
    self, discretize_subtracted, nystrom_extend, resolvent_apply, resolvent_kernel_at,
    DiscretizedKernel, KernelFn, QuadratureGrid, RowIntegralFn,
};
use crate::quad;

/// Largest Hermite order served by [`hermite`].
pub const MAX_HERMITE_ORDER: usize = 30;

/// Largest number of marked points for which matchings are enumerated.
pub const MAX_MARKED_POINTS: usize = 12;

/// Probabilists' Hermite polynomial `H_n(x)` for `n <= 30`.
pub fn hermite(n: usize, x: f64) -> Result<f64> {
    if n > MAX_HERMITE_ORDER {
        return Err(Error::OrderTooHigh {
            order: n,
            max: MAX_HERMITE_ORDER,
        });
    }
    Ok(hermite_recurrence(n, x))
}

/// The three-term recurrence without an order guard. Values grow like
/// `sqrt(n!)`, so high orders overflow or lose relative accuracy.
pub fn hermite_recurrence(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return h0;
    }
    for k in 2..=n {
        let h2 = x * h1 - (k - 1) as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Wick power `:phi(f)^n:` at the sample value `y = phi(f)`, where
/// `norm = ||f||`: `norm^n H_n(y / norm)`.
pub fn wick_power(n: usize, y: f64, norm: f64) -> Result<f64> {
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::invalid("norm", format!("must be finite and > 0, got {norm}")));
    }
    Ok(norm.powi(n as i32) * hermite(n, y / norm)?)
}

/// A perfect matching of `{0, ..., 2m-1}`. Pairs are stored as `(i, j)` with
/// `i < j`, sorted by `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeynmanGraph {
    pub pairs: Vec<(usize, usize)>,
}

impl FeynmanGraph {
    /// True when every index in `0..points` appears in exactly one pair.
    pub fn is_perfect_matching(&self, points: usize) -> bool {
        let mut seen = vec![false; points];
        for &(i, j) in &self.pairs {
            for k in [i, j] {
                if k >= points || seen[k] {
                    return false;
                }
                seen[k] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn check_point_count(points: usize) -> Result<()> {
    if points % 2 == 1 {
        return Err(Error::OddPointCount { points });
    }
    if points > MAX_MARKED_POINTS {
        return Err(Error::TooManyPoints {
            points,
            cap: MAX_MARKED_POINTS,
        });
    }
    Ok(())
}

/// All perfect matchings of `points` marked points (0-based) in lexicographic
/// order; there are `(points - 1)!!` of them.
pub fn enumerate_pairings(points: usize) -> Result<Vec<FeynmanGraph>> {
    check_point_count(points)?;
    let mut out = Vec::new();
    let mut used = vec![false; points];
    let mut current = Vec::with_capacity(points / 2);
    fn recurse(
        used: &mut [bool],
        current: &mut Vec<(usize, usize)>,
        out: &mut Vec<FeynmanGraph>,
    ) {
        let Some(first) = used.iter().position(|u| !u) else {
            out.push(FeynmanGraph {
                pairs: current.clone(),
            });
            return;
        };
        used[first] = true;
        for partner in first + 1..used.len() {
            if used[partner] {
                continue;
            }
            used[partner] = true;
            current.push((first, partner));
            recurse(used, current, out);
            current.pop();
            used[partner] = false;
        }
        used[first] = false;
    }
    recurse(&mut used, &mut current, &mut out);
    Ok(out)
}

/// `sum_G prod_{(i,j) in G} pair[i][j]` over all perfect matchings, summed in
/// enumeration order.
fn pairing_sum(pair: &[Vec<f64>]) -> Result<f64> {
    let graphs = enumerate_pairings(pair.len())?;
    Ok(graphs
        .iter()
        .map(|g| g.pairs.iter().map(|&(i, j)| pair[i][j]).product::<f64>())
        .sum())
}

pub type VectorFn = Arc<dyn Fn(f64) -> Result<Vec<f64>> + Send + Sync>;

/// `Y = A + sum_mu phi_mu(B_mu) + (1/2) sum_mu :phi_mu C phi_mu:` over
/// `components` independent copies of white noise on `[t0, t_end]`.
#[derive(Clone)]
pub struct QuadraticFunctional {
    pub a_const: f64,
    /// First-chaos density; returns one value per component.
    pub b_fn: VectorFn,
    pub components: usize,
    /// Symmetric second-chaos kernel, shared by all components.
    pub c_kernel: KernelFn,
    /// Optional exact row integrals `int C(s, r) dr` of `c_kernel`.
    pub row_integral: Option<RowIntegralFn>,
    pub t0: f64,
    pub t_end: f64,
}

impl std::fmt::Debug for QuadraticFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadraticFunctional")
            .field("a_const", &self.a_const)
            .field("components", &self.components)
            .field("interval", &(self.t0, self.t_end))
            .finish_non_exhaustive()
    }
}

impl QuadraticFunctional {
    /// Single-component functional from scalar pieces.
    pub fn scalar<B, C>(a_const: f64, b: B, c: C, t0: f64, t_end: f64) -> Self
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        C: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            a_const,
            b_fn: Arc::new(move |t| Ok(vec![b(t)])),
            components: 1,
            c_kernel: Arc::new(c),
            row_integral: None,
            t0,
            t_end,
        }
    }

    /// Nyström discretization of the kernel on `grid`.
    pub fn discretize(&self, grid: &QuadratureGrid) -> Result<DiscretizedKernel> {
        if (grid.t0 - self.t0).abs() > DOMAIN_SLACK || (grid.t_end - self.t_end).abs() > DOMAIN_SLACK {
            return Err(Error::invalid(
                "grid",
                format!(
                    "grid interval [{}, {}] differs from functional interval [{}, {}]",
                    grid.t0, grid.t_end, self.t0, self.t_end
                ),
            ));
        }
        let k = self.c_kernel.clone();
        discretize_subtracted(move |s, t| k(s, t), grid, self.row_integral.clone())
    }
}

/// Assembles `A_T`, `B_T` and `C_T` for the exponent of
/// `exp(-int_0^T [R^T(1/2 + lb^2/4)R + h^T h/2 - k^T R] dt - int_0^T (h + lb R/2)^T dW)`,
/// with `h` and `k` given as component vectors (`None` means zero).
pub fn assemble_yt(
    p: &SqGaussParams,
    h: Option<VectorFn>,
    k: Option<VectorFn>,
    horizon: f64,
) -> Result<QuadraticFunctional> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", format!("must be finite and > 0, got {horizon}")));
    }
    let dim = p.dim;
    let breaks = p.breakpoints();
    let mean_zero = p.r0_vec.iter().all(|x| *x == 0.0)
        && p.rbar.values().iter().all(|v| v.iter().all(|x| *x == 0.0));

    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let record = |e: Error| {
        failure.borrow_mut().get_or_insert(e);
    };
    let check_len = |name: &'static str, v: &[f64]| -> Result<()> {
        if v.len() != dim {
            Err(Error::invalid(name, format!("must return {dim} components, got {}", v.len())))
        } else {
            Ok(())
        }
    };

    // Deterministic part of A_T.
    let line1 = if mean_zero && h.is_none() {
        0.0
    } else {
        quad::integrate(
            |t| {
                let step = || -> Result<f64> {
                    let mut acc = 0.0;
                    if let Some(h) = &h {
                        let hv = h(t)?;
                        check_len("h", &hv)?;
                        acc += 0.5 * hv.iter().map(|x| x * x).sum::<f64>();
                    }
                    if !mean_zero {
                        let m = model::mean_function(p, t)?;
                        let lb = *p.lambda_bar.at(t);
                        acc += 0.5 * (1.0 + 0.5 * lb * lb) * m.iter().map(|x| x * x).sum::<f64>();
                        if let Some(k) = &k {
                            let kv = k(t)?;
                            check_len("k", &kv)?;
                            acc -= kv.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    Ok(acc)
                };
                step().unwrap_or_else(|e| {
                    record(e);
                    0.0
                })
            },
            0.0,
            horizon,
            &breaks,
            TIME_INTEGRAL_RTOL,
            1e-300,
        )?
    };
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }

    // Mean of the Wick-ordering remainder: (N/2) int Q(t, t) dt.
    let line2 = 0.5
        * dim as f64
        * quad::integrate(
            |t| model::kernel_quadratic_part(p, horizon, t, t),
            0.0,
            horizon,
            &breaks,
            TIME_INTEGRAL_RTOL,
            1e-300,
        )?;

    let params = Arc::new(p.clone());
    let b_fn: VectorFn = {
        let params = params.clone();
        let h = h.clone();
        let k = k.clone();
        let breaks = breaks.clone();
        Arc::new(move |t: f64| -> Result<Vec<f64>> {
            let p = &*params;
            let mut out = vec![0.0; p.dim];
            if let Some(h) = &h {
                let hv = h(t)?;
                if hv.len() != p.dim {
                    return Err(Error::invalid("h", "wrong number of components"));
                }
                for (o, x) in out.iter_mut().zip(hv) {
                    *o -= x;
                }
            }
            if !mean_zero {
                let lb = *p.lambda_bar.at(t);
                for (o, x) in out.iter_mut().zip(model::mean_function(p, t)?) {
                    *o += 0.5 * lb * x;
                }
            }
            if (k.is_some() || !mean_zero) && t < horizon {
                let err: RefCell<Option<Error>> = RefCell::new(None);
                let integral = quad::integrate_vec(
                    |s, buf: &mut [f64]| {
                        let mut fill = || -> Result<()> {
                            let w = model::propagator_unchecked(p, s, t);
                            buf.iter_mut().for_each(|b| *b = 0.0);
                            if !mean_zero {
                                let lb = *p.lambda_bar.at(s);
                                for (b, m) in buf.iter_mut().zip(model::mean_function(p, s)?) {
                                    *b += w * (1.0 + 0.5 * lb * lb) * m;
                                }
                            }
                            if let Some(k) = &k {
                                let kv = k(s)?;
                                if kv.len() != p.dim {
                                    return Err(Error::invalid("k", "wrong number of components"));
                                }
                                for (b, x) in buf.iter_mut().zip(kv) {
                                    *b -= w * x;
                                }
                            }
                            Ok(())
                        };
                        if let Err(e) = fill() {
                            err.borrow_mut().get_or_insert(e);
                        }
                    },
                    p.dim,
                    t,
                    horizon,
                    &breaks,
                    TIME_INTEGRAL_RTOL,
                    1e-300,
                )?;
                if let Some(e) = err.into_inner() {
                    return Err(e);
                }
                let g = *p.gamma.at(t);
                for (o, x) in out.iter_mut().zip(integral) {
                    *o += g * x;
                }
            }
            Ok(out)
        })
    };

    let (c_kernel, row_integral): (KernelFn, Option<RowIntegralFn>) = if p.is_time_homogeneous() {
        // Constant coefficients reduce to the closed-form CIR kernel with
        // a = 2 alpha and c = 2 gamma.
        let a = 2.0 * p.alpha.at(0.0);
        let c = 2.0 * p.gamma.at(0.0);
        let lb = *p.lambda_bar.at(0.0);
        (
            Arc::new(move |s, t| cir_kernel_value(a, c, lb, horizon, s, t)),
            Some(Arc::new(move |s| cir_kernel_row_integral(a, c, lb, horizon, 0.0, s))),
        )
    } else {
        let params = params.clone();
        (
            Arc::new(move |s, t| model::general_kernel_unchecked(&params, horizon, s, t)),
            None,
        )
    };

    Ok(QuadraticFunctional {
        a_const: line1 + line2,
        b_fn,
        components: dim,
        c_kernel,
        row_integral,
        t0: 0.0,
        t_end: horizon,
    })
}

/// Chaos coefficient `f_n(tau_1..tau_n)` of `exp(-(1/2) :phi C phi:)` normalized
/// as in the single-component exponential: `det_2(1+C)^{-1/2}` times the sum over
/// matchings of products of `[C(1+C)^{-1}](tau_i, tau_j)`. Zero for odd `n`.
pub fn exp_second_chaos_coeff(d: &DiscretizedKernel, times: &[f64]) -> Result<f64> {
    let n = times.len();
    if n % 2 == 1 {
        return Ok(0.0);
    }
    check_point_count(n)?;
    let norm = (-0.5 * d.log_det2()?).exp();
    let mut pair = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            pair[i][j] = resolvent_kernel_at(d, 1.0, times[i], times[j])?;
        }
    }
    Ok(norm * pairing_sum(&pair)?)
}

/// Precomputed data for the chaos expansion of
/// `sigma_T = R_T exp(-int_0^T r/2 ...)` in the CIR model started at `r0 = 0`.
#[derive(Debug, Clone)]
pub struct CirChaos {
    horizon: f64,
    a: f64,
    c: f64,
    dim: usize,
    d: DiscretizedKernel,
    /// Node values of `(1 + C_T)^{-1} k` with `k(s) = (c/2) e^{-a(T-s)/2}`.
    v: Vec<f64>,
    log_m: f64,
}

impl CirChaos {
    pub fn new(p: &CirParams, horizon: f64, nodes: usize) -> Result<Self> {
        if p.r0 != 0.0 {
            return Err(Error::NonZeroInitialRate { r0: p.r0 });
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("T", format!("must be finite and > 0, got {horizon}")));
        }
        let dim = model::embed_cir(p)?.dim;
        let (a, c, lb) = (p.a, p.c, p.lambda_bar);
        let grid = QuadratureGrid::gauss_legendre(nodes, 0.0, horizon)?;
        let d = discretize_subtracted(
            move |s, t| cir_kernel_value(a, c, lb, horizon, s, t),
            &grid,
            Some(Arc::new(move |s| cir_kernel_row_integral(a, c, lb, horizon, 0.0, s))),
        )?;
        if operator::min_eigen_shifted(&d) <= 0.0 {
            return Err(Error::NonPositiveSpectrum {
                mu: 1.0,
                value: operator::min_eigen_shifted(&d),
            });
        }
        let quadratic_trace =
            c * c / (4.0 * a) * (1.0 + 0.5 * lb * lb) * (horizon - (1.0 - (-a * horizon).exp()) / a);
        let log_m = -0.5 * dim as f64 * (d.log_det2()? + quadratic_trace);
        let k: Vec<f64> = grid.nodes.iter().map(|&s| Self::source(a, c, horizon, s)).collect();
        let v = resolvent_apply(&d, 1.0, &k)?;
        Ok(Self {
            horizon,
            a,
            c,
            dim,
            d,
            v,
            log_m,
        })
    }

    fn source(a: f64, c: f64, horizon: f64, s: f64) -> f64 {
        0.5 * c * (-0.5 * a * (horizon - s)).exp()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self) -> &DiscretizedKernel {
        &self.d
    }

    /// Normalization `M_T`; equals `det(1 + C_T)^{-N/2}` when `lambda_bar = 0`.
    pub fn m_t(&self) -> f64 {
        self.log_m.exp()
    }

    /// `[K_T gamma (1 + C_T)^{-1}](T, t)`, the pair weight of an edge touching `T`.
    pub fn terminal_link(&self, t: f64) -> Result<f64> {
        nystrom_extend(&self.d, 1.0, &self.v, Self::source(self.a, self.c, self.horizon, t), t)
    }

    /// Order-`n` coefficient `f_T(t_1..t_n)`; zero for even `n`. The times may
    /// be given in any order.
    pub fn coefficient(&self, times: &[f64]) -> Result<f64> {
        let n = times.len();
        for &t in times {
            self.d.grid().check_contains(t)?;
        }
        if n % 2 == 0 {
            return Ok(0.0);
        }
        check_point_count(n + 1)?;
        let mut pair = vec![vec![0.0; n + 1]; n + 1];
        for i in 0..n {
            for j in i + 1..n {
                pair[i][j] = resolvent_kernel_at(&self.d, 1.0, times[i], times[j])?;
            }
            pair[i][n] = self.terminal_link(times[i])?;
        }
        Ok(self.m_t() * pairing_sum(&pair)?)
    }

    /// `int_0^T f_T(t) g(t) dt` for the first-order coefficient.
    pub fn first_chaos_projection<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let grid = self.d.grid();
        let sum: f64 = (0..grid.len())
            .map(|j| grid.weights[j] * self.v[j] * g(grid.nodes[j]))
            .sum();
        self.m_t() * sum
    }
}

/// Order-`n` chaos coefficient at the default grid size.
pub fn cir_chaos_coeff(p: &CirParams, horizon: f64, times: &[f64]) -> Result<f64> {
    CirChaos::new(p, horizon, operator::DEFAULT_NODES)?.coefficient(times)
}

/// `E[sigma_T W(g)] = int_0^T f_T(t) g(t) dt` at the default grid size.
pub fn first_chaos_projection<G: Fn(f64) -> f64>(p: &CirParams, horizon: f64, g: G) -> Result<f64> {
    Ok(CirChaos::new(p, horizon, operator::DEFAULT_NODES)?.first_chaos_projection(g))
}
