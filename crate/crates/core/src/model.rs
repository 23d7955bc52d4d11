//! Model parameters: the scalar CIR coefficients, their squared-Gaussian
//! embedding, the Ornstein–Uhlenbeck propagator, the mean function, and the
//! second-chaos covariance kernel `C_T`.
//!
//! All matrix-valued coefficients of the general squared-Gaussian family are
//! restricted here to scalar multiples of the identity, piecewise constant in
//! time. With that restriction the propagator `K(t, s) = exp(-int_s^t alpha)`
//! is exact and every kernel below is a scalar acting identically on each of
//! the `N` vector components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Relative tolerance for deciding that `4ab/c^2` is an integer.
pub const DIMENSION_TOL: f64 = 1e-9;

/// Relative tolerance of the adaptive quadrature used for time integrals.
pub const TIME_INTEGRAL_RTOL: f64 = 1e-10;

/// Slack allowed when checking that a time lies inside a closed interval.
pub(crate) const DOMAIN_SLACK: f64 = 1e-12;

/// A right-continuous step function of time: `values[i]` holds on
/// `[breaks[i-1], breaks[i])`, with the first value extending to `-inf` and the
/// last to `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant<V> {
    breaks: Vec<f64>,
    values: Vec<V>,
}

impl<V: Clone> PiecewiseConstant<V> {
    pub fn constant(value: V) -> Self {
        Self {
            breaks: Vec::new(),
            values: vec![value],
        }
    }

    pub fn new(breaks: Vec<f64>, values: Vec<V>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::invalid(
                "values",
                format!("expected {} values for {} breaks", breaks.len() + 1, breaks.len()),
            ));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("breaks", "must be finite and strictly increasing"));
        }
        Ok(Self { breaks, values })
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn at(&self, t: f64) -> &V {
        let idx = self.breaks.partition_point(|&b| b <= t);
        &self.values[idx]
    }

    /// Maximal sub-intervals of `[s, t]` on which the function is constant.
    pub fn segments(&self, s: f64, t: f64) -> Vec<(f64, f64, &V)> {
        let mut out = Vec::new();
        if t <= s {
            return out;
        }
        let mut lo = s;
        let mut idx = self.breaks.partition_point(|&b| b <= s);
        while lo < t {
            let hi = self.breaks.get(idx).copied().unwrap_or(f64::INFINITY).min(t);
            out.push((lo, hi, &self.values[idx]));
            lo = hi;
            idx += 1;
        }
        out
    }
}

impl PiecewiseConstant<f64> {
    /// Exact integral over `[s, t]`; negative when `t < s`.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        if t < s {
            return -self.integral(t, s);
        }
        self.segments(s, t).iter().map(|(lo, hi, v)| (hi - lo) * **v).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Scalar CIR coefficients: `dr = a(b - r)dt + c sqrt(r) dW`, market price of
/// risk `|lambda|^2 = lambda_bar^2 r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lambda_bar: f64,
    pub r0: f64,
}

impl CirParams {
    pub fn new(a: f64, b: f64, c: f64, lambda_bar: f64, r0: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            c,
            lambda_bar,
            r0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        let non_negative = |name, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        positive("a", self.a)?;
        positive("b", self.b)?;
        positive("c", self.c)?;
        non_negative("lambda_bar", self.lambda_bar)?;
        non_negative("r0", self.r0)
    }

    /// `4ab/c^2` without the integrality check.
    pub fn raw_dimension(&self) -> f64 {
        4.0 * self.a * self.b / (self.c * self.c)
    }

    /// The squared-Gaussian dimension `N = 4ab/c^2`.
    pub fn dimension(&self) -> Result<usize> {
        let value = self.raw_dimension();
        let rounded = value.round();
        if rounded < 2.0 || (value - rounded).abs() > DIMENSION_TOL * value.abs() {
            return Err(Error::NonIntegerDimension { value });
        }
        Ok(rounded as usize)
    }

    /// Parameters with `b` chosen so that `4ab/c^2 = n`.
    pub fn with_dimension(a: f64, c: f64, n: usize, lambda_bar: f64, r0: f64) -> Result<Self> {
        Self::new(a, n as f64 * c * c / (4.0 * a), c, lambda_bar, r0)
    }
}

/// Scalar-coefficient squared-Gaussian model: `r = R.R`, `lambda = lambda_bar R`,
/// `dR = alpha (rbar - R) dt + gamma dW` in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqGaussParams {
    pub dim: usize,
    pub alpha: PiecewiseConstant<f64>,
    pub gamma: PiecewiseConstant<f64>,
    pub rbar: PiecewiseConstant<Vec<f64>>,
    pub lambda_bar: PiecewiseConstant<f64>,
    pub r0_vec: Vec<f64>,
    /// Declared lower bound `M` with `alpha(t) >= M > 0`.
    pub alpha_floor: f64,
}

impl SqGaussParams {
    pub fn new(
        dim: usize,
        alpha: PiecewiseConstant<f64>,
        gamma: PiecewiseConstant<f64>,
        rbar: PiecewiseConstant<Vec<f64>>,
        lambda_bar: PiecewiseConstant<f64>,
        r0_vec: Vec<f64>,
        alpha_floor: f64,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("dim", format!("must be >= 2, got {dim}")));
        }
        if !(alpha_floor > 0.0) || alpha.min_value() < alpha_floor {
            return Err(Error::invalid(
                "alpha",
                format!("must stay >= declared floor {alpha_floor} > 0"),
            ));
        }
        if gamma.values().iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("gamma", "must be finite and >= 0"));
        }
        if rbar.values().iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("rbar", format!("every value must have length {dim}")));
        }
        if r0_vec.len() != dim {
            return Err(Error::invalid("r0_vec", format!("must have length {dim}")));
        }
        Ok(Self {
            dim,
            alpha,
            gamma,
            rbar,
            lambda_bar,
            r0_vec,
            alpha_floor,
        })
    }

    /// Union of the breakpoints of all coefficients.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .alpha
            .breaks()
            .iter()
            .chain(self.gamma.breaks())
            .chain(self.rbar.breaks())
            .chain(self.lambda_bar.breaks())
            .copied()
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// True when every coefficient is constant in time.
    pub fn is_time_homogeneous(&self) -> bool {
        self.breakpoints().is_empty()
    }
}

/// Squared-Gaussian embedding of CIR: `N = 4ab/c^2`, `alpha = a/2`,
/// `gamma = c/2`, `rbar = 0`, `R_0 = (sqrt(r0), 0, ..., 0)`.
pub fn embed_cir(p: &CirParams) -> Result<SqGaussParams> {
    p.validate()?;
    let dim = p.dimension()?;
    let mut r0_vec = vec![0.0; dim];
    r0_vec[0] = p.r0.sqrt();
    SqGaussParams::new(
        dim,
        PiecewiseConstant::constant(0.5 * p.a),
        PiecewiseConstant::constant(0.5 * p.c),
        PiecewiseConstant::constant(vec![0.0; dim]),
        PiecewiseConstant::constant(p.lambda_bar),
        r0_vec,
        0.5 * p.a,
    )
}

/// OU propagator `K(t, s) = exp(-int_s^t alpha)`, for `s <= t`.
pub fn propagator(p: &SqGaussParams, t: f64, s: f64) -> Result<f64> {
    if s > t {
        return Err(Error::InvalidTimeOrder { s, t });
    }
    Ok(propagator_unchecked(p, t, s))
}

pub(crate) fn propagator_unchecked(p: &SqGaussParams, t: f64, s: f64) -> f64 {
    (-p.alpha.integral(s, t)).exp()
}

/// Mean path `R~(t) = K(t,0) R_0 + int_0^t K(t,s) alpha(s) rbar(s) ds`.
pub fn mean_function(p: &SqGaussParams, t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::OutOfDomain {
            value: t,
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    let k0 = propagator_unchecked(p, t, 0.0);
    let mut out: Vec<f64> = p.r0_vec.iter().map(|r| k0 * r).collect();
    if p.rbar.values().iter().all(|v| v.iter().all(|x| *x == 0.0)) {
        return Ok(out);
    }
    let forced = quad::integrate_vec(
        |s, buf| {
            let w = propagator_unchecked(p, t, s) * p.alpha.at(s);
            for (b, r) in buf.iter_mut().zip(p.rbar.at(s)) {
                *b = w * r;
            }
        },
        p.dim,
        0.0,
        t,
        &p.breakpoints(),
        TIME_INTEGRAL_RTOL,
        1e-300,
    )?;
    for (o, f) in out.iter_mut().zip(forced) {
        *o += f;
    }
    Ok(out)
}

fn check_in(value: f64, lower: f64, upper: f64) -> Result<()> {
    if value < lower - DOMAIN_SLACK || value > upper + DOMAIN_SLACK || value.is_nan() {
        Err(Error::OutOfDomain {
            value,
            lower,
            upper,
        })
    } else {
        Ok(())
    }
}

/// Closed-form CIR kernel on `[0, T]^2` (no domain check):
///
/// `(c^2/4a)(1 + lb^2/2)[e^{-a|t1-t2|/2} - e^{a(t1+t2-2T)/2}] + (c/4) lb e^{-a|t1-t2|/2}`.
///
/// The `lb` cross term is the Itô-consistent coefficient of `(1/2) int R lb dW`
/// on ordered pairs; it agrees with [`general_kernel`].
pub fn cir_kernel_value(a: f64, c: f64, lambda_bar: f64, horizon: f64, t1: f64, t2: f64) -> f64 {
    let near = (-0.5 * a * (t1 - t2).abs()).exp();
    let far = (0.5 * a * (t1 + t2 - 2.0 * horizon)).exp();
    c * c / (4.0 * a) * (1.0 + 0.5 * lambda_bar * lambda_bar) * (near - far)
        + 0.25 * c * lambda_bar * near
}

/// `int_{t0}^{T} C_T(s, r) dr` for the closed-form CIR kernel, used by the
/// singularity-subtracted discretization.
pub fn cir_kernel_row_integral(
    a: f64,
    c: f64,
    lambda_bar: f64,
    horizon: f64,
    t0: f64,
    s: f64,
) -> f64 {
    let h = 0.5 * a;
    let near = ((1.0 - (-h * (s - t0)).exp()) + (1.0 - (-h * (horizon - s)).exp())) / h;
    let far = (h * (s - 2.0 * horizon)).exp() * ((h * horizon).exp() - (h * t0).exp()) / h;
    c * c / (4.0 * a) * (1.0 + 0.5 * lambda_bar * lambda_bar) * (near - far)
        + 0.25 * c * lambda_bar * near
}

/// CIR second-chaos kernel `C_T(t1, t2)` with domain checks.
pub fn cir_kernel(p: &CirParams, horizon: f64, t1: f64, t2: f64) -> Result<f64> {
    check_in(t1, 0.0, horizon)?;
    check_in(t2, 0.0, horizon)?;
    Ok(cir_kernel_value(p.a, p.c, p.lambda_bar, horizon, t1, t2))
}

/// `int_m^T w(s) K(s, m)^2 ds` with `w = 1 + weight * lambda_bar(s)^2`, exact over
/// the piecewise-constant segments.
fn squared_propagator_integral(p: &SqGaussParams, m: f64, horizon: f64, weight: f64) -> f64 {
    let mut total = 0.0;
    let mut k_at_start = 1.0;
    for (lo, hi) in merged_segments(p, m, horizon) {
        let alpha = *p.alpha.at(lo);
        let lb = *p.lambda_bar.at(lo);
        let len = hi - lo;
        let decay = (-2.0 * alpha * len).exp();
        total += (1.0 + weight * lb * lb) * k_at_start * k_at_start * (1.0 - decay) / (2.0 * alpha);
        k_at_start *= (-alpha * len).exp();
    }
    total
}

fn merged_segments(p: &SqGaussParams, s: f64, t: f64) -> Vec<(f64, f64)> {
    let mut edges = vec![s];
    edges.extend(p.breakpoints().into_iter().filter(|&b| b > s && b < t));
    edges.push(t);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Quadratic part of `C_T`: `gamma(t1) gamma(t2) int_{max}^T K(s,t1)(1 + lb^2/2)K(s,t2) ds`.
pub(crate) fn kernel_quadratic_part(p: &SqGaussParams, horizon: f64, t1: f64, t2: f64) -> f64 {
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let link = propagator_unchecked(p, hi, lo);
    p.gamma.at(t1) * p.gamma.at(t2) * link * squared_propagator_integral(p, hi, horizon, 0.5)
}

/// General second-chaos kernel of `Y_T` for scalar coefficients:
///
/// `gamma(t1)[int K_T(s,t1)(1 + lb^2/2) K_T(s,t2) ds]gamma(t2)
///   + 1/2 [gamma(t1) K_T^T(t1,t2) lb + lb K_T(t1,t2) gamma(t2)]`,
///
/// where `K_T(u,v) = 1(v <= u <= T) K(u,v)`, so exactly one of the two cross
/// terms survives off the diagonal.
pub fn general_kernel(p: &SqGaussParams, horizon: f64, t1: f64, t2: f64) -> Result<f64> {
    check_in(t1, 0.0, horizon)?;
    check_in(t2, 0.0, horizon)?;
    Ok(general_kernel_unchecked(p, horizon, t1, t2))
}

pub(crate) fn general_kernel_unchecked(p: &SqGaussParams, horizon: f64, t1: f64, t2: f64) -> f64 {
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let cross = 0.5 * p.gamma.at(lo) * p.lambda_bar.at(hi) * propagator_unchecked(p, hi, lo);
    kernel_quadratic_part(p, horizon, t1, t2) + cross
}
