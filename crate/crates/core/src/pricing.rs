//! Zero-coupon bond prices `P(t, T) = exp(-beta r_t - alpha)` in the CIR model:
//! from the Fredholm operator of the second-chaos kernel, from the closed-form
//! Riccati solution, from an RK4 integration of the Riccati pair, and by
//! Monte Carlo.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cir_kernel_row_integral, cir_kernel_value, embed_cir, CirParams};
use crate::montecarlo::{accumulate_functionals, Scheme, SimConfig};
use crate::operator::{
    discretize_subtracted, min_eigen_shifted, resolvent_kernel_at, DiscretizedKernel, QuadratureGrid,
};

/// RK4 steps used by [`riccati_ode_solve`].
pub const RICCATI_STEPS: usize = 2048;

/// Finite-difference step of [`forward_density`].
pub const FORWARD_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingMethod {
    Operator,
    RiccatiClosed,
    RiccatiOde,
    Mc,
}

impl PricingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PricingMethod::Operator => "operator",
            PricingMethod::RiccatiClosed => "riccati_closed",
            PricingMethod::RiccatiOde => "riccati_ode",
            PricingMethod::Mc => "mc",
        }
    }
}

impl std::str::FromStr for PricingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "operator" => Ok(PricingMethod::Operator),
            "riccati_closed" => Ok(PricingMethod::RiccatiClosed),
            "riccati_ode" => Ok(PricingMethod::RiccatiOde),
            "mc" => Ok(PricingMethod::Mc),
            other => Err(Error::invalid(
                "method",
                format!("unknown method `{other}` (expected operator, riccati_closed, riccati_ode or mc)"),
            )),
        }
    }
}

/// Operator price recomputed on a finer grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Refinement {
    pub nodes: usize,
    pub price: f64,
    /// `|price_fine - price| / price_fine`.
    pub rel_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BondQuote {
    pub t: f64,
    pub maturity: f64,
    pub r_t: f64,
    pub price: f64,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub method: PricingMethod,
    /// Monte Carlo standard error.
    pub stderr: Option<f64>,
    pub refinement: Option<Refinement>,
}

impl BondQuote {
    fn affine(t: f64, maturity: f64, r_t: f64, beta: f64, alpha: f64, method: PricingMethod) -> Self {
        Self {
            t,
            maturity,
            r_t,
            price: (-beta * r_t - alpha).exp(),
            beta: Some(beta),
            alpha: Some(alpha),
            method,
            stderr: None,
            refinement: None,
        }
    }

    /// Continuously compounded yield `-log(P) / (T - t)`.
    pub fn yield_rate(&self) -> f64 {
        -self.price.ln() / (self.maturity - self.t)
    }
}

fn check_interval(t: f64, maturity: f64) -> Result<()> {
    if !(t.is_finite() && maturity.is_finite() && t < maturity) {
        return Err(Error::InvalidTimeOrder { s: maturity, t });
    }
    Ok(())
}

fn check_rate(r_t: f64) -> Result<()> {
    if !(r_t.is_finite() && r_t >= 0.0) {
        return Err(Error::invalid("r_t", format!("must be finite and >= 0, got {r_t}")));
    }
    Ok(())
}

fn require_zero_market_price(p: &CirParams) -> Result<()> {
    if p.lambda_bar != 0.0 {
        return Err(Error::MarketPriceUnsupported {
            lambda_bar: p.lambda_bar,
        });
    }
    Ok(())
}

/// The discretized CIR kernel `C_T` on `[t, T]`.
pub fn cir_operator(p: &CirParams, t: f64, maturity: f64, nodes: usize) -> Result<DiscretizedKernel> {
    let (a, c, lb) = (p.a, p.c, p.lambda_bar);
    let grid = QuadratureGrid::gauss_legendre(nodes, t, maturity)?;
    discretize_subtracted(
        move |s1, s2| cir_kernel_value(a, c, lb, maturity, s1, s2),
        &grid,
        Some(Arc::new(move |s| cir_kernel_row_integral(a, c, lb, maturity, t, s))),
    )
}

/// Operator `(beta, alpha)`:
/// `beta = (4/c^2)[C_T(1+2C_T)^{-1}](t,t)`, `alpha = (N/2) log det(1+2C_T)`.
pub fn operator_beta_alpha(p: &CirParams, t: f64, maturity: f64, nodes: usize) -> Result<(f64, f64)> {
    p.validate()?;
    require_zero_market_price(p)?;
    check_interval(t, maturity)?;
    let n = p.dimension()?;
    let d = cir_operator(p, t, maturity, nodes)?;
    let certificate = min_eigen_shifted(&d);
    if !(certificate > 0.0) {
        return Err(Error::NonPositiveSpectrum {
            mu: 1.0,
            value: certificate,
        });
    }
    let beta = 4.0 / (p.c * p.c) * resolvent_kernel_at(&d, 2.0, t, t)?;
    let alpha = 0.5 * n as f64 * d.log_det(2.0)?;
    Ok((beta, alpha))
}

/// Operator price with a companion value at twice the node count.
pub fn bond_price_operator(p: &CirParams, t: f64, maturity: f64, r_t: f64, nodes: usize) -> Result<BondQuote> {
    check_rate(r_t)?;
    let (beta, alpha) = operator_beta_alpha(p, t, maturity, nodes)?;
    let mut quote = BondQuote::affine(t, maturity, r_t, beta, alpha, PricingMethod::Operator);
    let (beta2, alpha2) = operator_beta_alpha(p, t, maturity, 2 * nodes)?;
    let fine = (-beta2 * r_t - alpha2).exp();
    quote.refinement = Some(Refinement {
        nodes: 2 * nodes,
        price: fine,
        rel_diff: (fine - quote.price).abs() / fine,
    });
    Ok(quote)
}

/// Closed-form `(beta, alpha)` at time to maturity `tau`, with
/// `rho = sqrt(a^2 + 2c^2)`. Written in terms of `e^{-rho tau}` so that long
/// maturities do not overflow; `c = 0` falls back to the linear solution.
pub fn riccati_closed(a: f64, b: f64, c: f64, tau: f64) -> (f64, f64) {
    if tau == 0.0 {
        return (0.0, 0.0);
    }
    if c == 0.0 {
        let beta = -(-a * tau).exp_m1() / a;
        return (beta, b * (tau - beta));
    }
    let rho = (a * a + 2.0 * c * c).sqrt();
    let decay = (-rho * tau).exp();
    let growth = -(-rho * tau).exp_m1();
    let den = (rho + a) * growth + 2.0 * rho * decay;
    let beta = 2.0 * growth / den;
    // log(den / 2 rho) = log1p((a - rho)(1 - e^{-rho tau}) / 2 rho).
    let log_ratio = ((a - rho) * growth / (2.0 * rho)).ln_1p();
    let alpha = -(2.0 * a * b / (c * c)) * (0.5 * (a - rho) * tau - log_ratio);
    (beta, alpha)
}

pub fn bond_price_riccati_closed(p: &CirParams, t: f64, maturity: f64, r_t: f64) -> Result<BondQuote> {
    p.validate()?;
    require_zero_market_price(p)?;
    check_interval(t, maturity)?;
    check_rate(r_t)?;
    let (beta, alpha) = riccati_closed(p.a, p.b, p.c, maturity - t);
    Ok(BondQuote::affine(t, maturity, r_t, beta, alpha, PricingMethod::RiccatiClosed))
}

/// Classical RK4 for `d beta/d tau = 1 - a beta - c^2 beta^2/2`,
/// `d alpha/d tau = a b beta` from zero, i.e. the Riccati pair integrated
/// backward in `t` from the maturity.
pub fn riccati_rk4(a: f64, b: f64, c: f64, tau: f64, steps: usize) -> (f64, f64) {
    let f = |beta: f64| 1.0 - a * beta - 0.5 * c * c * beta * beta;
    let h = tau / steps as f64;
    let (mut beta, mut alpha) = (0.0, 0.0);
    for _ in 0..steps {
        let k1 = f(beta);
        let k2 = f(beta + 0.5 * h * k1);
        let k3 = f(beta + 0.5 * h * k2);
        let k4 = f(beta + h * k3);
        let l1 = beta;
        let l2 = beta + 0.5 * h * k1;
        let l3 = beta + 0.5 * h * k2;
        let l4 = beta + h * k3;
        beta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        alpha += a * b * h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }
    (beta, alpha)
}

/// `(beta(t, T), alpha(t, T))` from [`riccati_rk4`] with 2048 steps.
pub fn riccati_ode_solve(p: &CirParams, t: f64, maturity: f64) -> Result<(f64, f64)> {
    p.validate()?;
    check_interval(t, maturity)?;
    Ok(riccati_rk4(p.a, p.b, p.c, maturity - t, RICCATI_STEPS))
}

pub fn bond_price_riccati_ode(p: &CirParams, t: f64, maturity: f64, r_t: f64) -> Result<BondQuote> {
    require_zero_market_price(p)?;
    check_rate(r_t)?;
    let (beta, alpha) = riccati_ode_solve(p, t, maturity)?;
    Ok(BondQuote::affine(t, maturity, r_t, beta, alpha, PricingMethod::RiccatiOde))
}

/// Monte Carlo price `E[V_{T-t}]` for the model restarted at `r_t`. The
/// horizon of `cfg` is replaced by `T - t`; `lambda_bar` may be nonzero.
pub fn bond_price_mc(p: &CirParams, t: f64, maturity: f64, r_t: f64, cfg: &SimConfig) -> Result<BondQuote> {
    check_interval(t, maturity)?;
    check_rate(r_t)?;
    let restarted = CirParams { r0: r_t, ..*p };
    let g = embed_cir(&restarted)?;
    let tau = maturity - t;
    let run = SimConfig {
        horizon: tau,
        scheme: Scheme::OuExact,
        ..*cfg
    };
    run.validate()?;
    let est = accumulate_functionals(&g, &run, &[tau], &[])?;
    let v = est[0].v;
    Ok(BondQuote {
        t,
        maturity,
        r_t,
        price: v.mean,
        beta: None,
        alpha: None,
        method: PricingMethod::Mc,
        stderr: Some(v.stderr),
        refinement: None,
    })
}

/// Risk-neutral CIR coefficients: under the pricing measure the drift speed is
/// `a + c lambda_bar` and `ab` is unchanged.
pub fn risk_neutral(p: &CirParams) -> Result<CirParams> {
    let a = p.a + p.c * p.lambda_bar;
    CirParams::new(a, p.a * p.b / a, p.c, 0.0, p.r0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub maturity: f64,
    pub price: f64,
    #[serde(rename = "yield")]
    pub yield_rate: f64,
}

/// Prices and yields for ascending maturities after `t`. `nodes` applies to
/// the operator method; `mc` uses `mc_cfg`.
pub fn yield_curve(
    p: &CirParams,
    t: f64,
    r_t: f64,
    maturities: &[f64],
    method: PricingMethod,
    nodes: usize,
    mc_cfg: Option<&SimConfig>,
) -> Result<Vec<CurvePoint>> {
    if maturities.is_empty() {
        return Err(Error::invalid("maturities", "need at least one maturity"));
    }
    if maturities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("maturities", "must be strictly increasing"));
    }
    maturities
        .iter()
        .map(|&m| {
            let quote = price(p, t, m, r_t, method, nodes, mc_cfg)?;
            Ok(CurvePoint {
                maturity: m,
                price: quote.price,
                yield_rate: quote.yield_rate(),
            })
        })
        .collect()
}

/// Dispatches to the pricing routine for `method`. The operator path skips the
/// refinement companion.
pub fn price(
    p: &CirParams,
    t: f64,
    maturity: f64,
    r_t: f64,
    method: PricingMethod,
    nodes: usize,
    mc_cfg: Option<&SimConfig>,
) -> Result<BondQuote> {
    match method {
        PricingMethod::Operator => {
            check_rate(r_t)?;
            let (beta, alpha) = operator_beta_alpha(p, t, maturity, nodes)?;
            Ok(BondQuote::affine(t, maturity, r_t, beta, alpha, PricingMethod::Operator))
        }
        PricingMethod::RiccatiClosed => bond_price_riccati_closed(p, t, maturity, r_t),
        PricingMethod::RiccatiOde => bond_price_riccati_ode(p, t, maturity, r_t),
        PricingMethod::Mc => {
            let cfg = mc_cfg.ok_or_else(|| Error::invalid("mc", "Monte Carlo pricing needs a simulation config"))?;
            bond_price_mc(p, t, maturity, r_t, cfg)
        }
    }
}

/// Initial forward density `h_T = -dP(0,T)/dT` from the closed form, by
/// central differences (forward differences when `T` is below the step).
pub fn forward_density(p: &CirParams, maturity: f64) -> Result<f64> {
    p.validate()?;
    require_zero_market_price(p)?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::invalid("T", format!("must be finite and > 0, got {maturity}")));
    }
    let price_at = |tau: f64| {
        let (beta, alpha) = riccati_closed(p.a, p.b, p.c, tau);
        (-beta * p.r0 - alpha).exp()
    };
    let h = FORWARD_FD_STEP;
    Ok(if maturity > h {
        -(price_at(maturity + h) - price_at(maturity - h)) / (2.0 * h)
    } else {
        -(price_at(maturity + h) - price_at(maturity)) / h
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(a: f64, n: usize, r0: f64) -> CirParams {
        CirParams::with_dimension(a, 0.2, n, 0.0, r0).unwrap()
    }

    #[test]
    fn closed_form_pinned_values() {
        let (a, c) = (0.1, 0.2);
        assert_relative_eq!((a * a + 2.0 * c * c as f64).sqrt(), 0.3, max_relative = 1e-15);
        let (beta, _) = riccati_closed(a, 0.2, c, 1.0);
        let direct = 2.0 * (0.3f64.exp() - 1.0) / (0.4 * (0.3f64.exp() - 1.0) + 0.6);
        assert_relative_eq!(beta, direct, max_relative = 1e-14);
        assert!((beta - 0.945_6).abs() < 1e-4);
        assert!((beta - 0.945_636_516).abs() < 1e-6, "{beta}");
    }

    #[test]
    fn closed_form_small_tau() {
        let (beta, alpha) = riccati_closed(0.5, 0.04, 0.2, 1e-8);
        assert_relative_eq!(beta, 1e-8, max_relative = 1e-7);
        assert!((alpha - 0.5 * 0.02 * 1e-16).abs() < 1e-22, "{alpha}");
        assert_eq!(riccati_closed(0.5, 0.04, 0.2, 0.0), (0.0, 0.0));
    }

    #[test]
    fn closed_alpha_is_integral_of_beta() {
        // alpha(tau) = ab int_0^tau beta.
        let (a, b, c, tau) = (0.5, 0.04, 0.2, 3.0);
        let integral = crate::quad::integrate(|s| riccati_closed(a, b, c, s).0, 0.0, tau, &[], 1e-14, 0.0).unwrap();
        assert_relative_eq!(riccati_closed(a, b, c, tau).1, a * b * integral, max_relative = 1e-12);
    }

    #[test]
    fn ode_matches_closed_form() {
        let p = params(0.1, 2, 0.0);
        for tau in [0.5, 1.0, 5.0, 10.0] {
            let (bo, ao) = riccati_ode_solve(&p, 0.0, tau).unwrap();
            let (bc, ac) = riccati_closed(p.a, p.b, p.c, tau);
            assert!((bo - bc).abs() < 1e-9 && (ao - ac).abs() < 1e-9, "tau={tau}");
        }
    }

    #[test]
    fn ode_linear_limit() {
        let (a, tau) = (0.3, 2.0);
        let (beta, _) = riccati_rk4(a, 0.1, 0.0, tau, RICCATI_STEPS);
        assert_relative_eq!(beta, (1.0 - (-a * tau).exp()) / a, max_relative = 1e-12);
        assert_eq!(riccati_rk4(a, 0.1, 0.2, 0.0, 16), (0.0, 0.0));
    }

    #[test]
    fn operator_matches_closed_form() {
        let p = params(0.1, 2, 0.04);
        let q = bond_price_operator(&p, 0.0, 1.0, 0.04, 128).unwrap();
        let cf = bond_price_riccati_closed(&p, 0.0, 1.0, 0.04).unwrap();
        assert_relative_eq!(q.price, cf.price, max_relative = 1e-6);
        assert_relative_eq!(q.price, (-q.beta.unwrap() * 0.04 - q.alpha.unwrap()).exp(), max_relative = 1e-12);
        assert!(q.refinement.unwrap().rel_diff < 1e-8);
    }

    #[test]
    fn operator_shifted_interval() {
        let p = params(0.5, 3, 0.0);
        let (b1, a1) = operator_beta_alpha(&p, 2.0, 3.5, 96).unwrap();
        let (b2, a2) = operator_beta_alpha(&p, 0.0, 1.5, 96).unwrap();
        assert!((b1 - b2).abs() < 1e-13 && (a1 - a2).abs() < 1e-13);
    }

    #[test]
    fn operator_zero_rate_is_determinant_power() {
        let p = params(0.5, 4, 0.0);
        let q = price(&p, 0.0, 2.0, 0.0, PricingMethod::Operator, 64, None).unwrap();
        let d = cir_operator(&p, 0.0, 2.0, 64).unwrap();
        let det = crate::operator::fredholm_det(&d, 2.0).unwrap();
        assert_relative_eq!(q.price, det.powf(-2.0), max_relative = 1e-12);
    }

    #[test]
    fn operator_short_maturity_limit() {
        let p = params(0.5, 2, 0.0);
        let q = price(&p, 1.0, 1.0 + 1e-6, 0.05, PricingMethod::Operator, 16, None).unwrap();
        assert!(q.beta.unwrap() < 2e-6 && q.alpha.unwrap().abs() < 1e-12);
        assert!((q.price - 1.0).abs() < 1e-7);
    }

    #[test]
    fn operator_rejects_unsupported_inputs() {
        let p = CirParams::new(0.5, 0.04, 0.2, 0.3, 0.0).unwrap();
        assert!(matches!(operator_beta_alpha(&p, 0.0, 1.0, 16), Err(Error::MarketPriceUnsupported { .. })));
        let p = CirParams::new(0.1, 0.09, 0.1, 0.0, 0.0).unwrap();
        assert!(matches!(operator_beta_alpha(&p, 0.0, 1.0, 16), Err(Error::NonIntegerDimension { .. })));
        let p = params(0.5, 2, 0.0);
        assert!(matches!(operator_beta_alpha(&p, 1.0, 1.0, 16), Err(Error::InvalidTimeOrder { .. })));
        assert!(bond_price_operator(&p, 0.0, 1.0, -0.01, 16).is_err());
    }

    #[test]
    fn yield_curve_shapes() {
        let p = params(0.5, 2, 0.03);
        let one = yield_curve(&p, 0.0, 0.03, &[2.0], PricingMethod::RiccatiClosed, 0, None).unwrap();
        assert_eq!(one.len(), 1);
        let mats: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let curve = yield_curve(&p, 0.0, 0.03, &mats, PricingMethod::RiccatiClosed, 0, None).unwrap();
        assert!(curve.windows(2).all(|w| w[1].price < w[0].price));
        assert!(curve.iter().all(|c| c.yield_rate > 0.0));
        let op = yield_curve(&p, 0.0, 0.03, &[1.0, 5.0, 10.0], PricingMethod::Operator, 256, None).unwrap();
        for (o, m) in op.iter().zip([1.0, 5.0, 10.0]) {
            let cf = curve.iter().find(|c| c.maturity == m).unwrap();
            assert!((o.yield_rate - cf.yield_rate).abs() < 1e-4);
        }
        assert!(yield_curve(&p, 0.0, 0.03, &[2.0, 1.0], PricingMethod::RiccatiClosed, 0, None).is_err());
        assert!(yield_curve(&p, 0.0, 0.03, &[1.0], PricingMethod::Mc, 0, None).is_err());
    }

    #[test]
    fn long_yield_asymptote() {
        let p = params(0.5, 2, 0.03);
        let rho = (p.a * p.a + 2.0 * p.c * p.c).sqrt();
        let q = bond_price_riccati_closed(&p, 0.0, 2000.0, 0.03).unwrap();
        let limit = 2.0 * p.a * p.b / (rho + p.a);
        assert!((q.yield_rate() - limit).abs() < 1e-4, "{} vs {limit}", q.yield_rate());
    }

    #[test]
    fn forward_density_properties() {
        let p = params(0.5, 2, 0.03);
        for k in 1..=300 {
            assert!(forward_density(&p, 0.1 * k as f64).unwrap() > 0.0);
        }
        assert!((forward_density(&p, 1e-7).unwrap() - 0.03).abs() < 1e-4);
        let total = crate::quad::integrate(|t| forward_density(&p, t).unwrap(), 1e-4, 200.0, &[1.0, 10.0], 1e-8, 1e-10)
            .unwrap();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
        // Against the analytic derivative P (beta' r0 + alpha').
        let tau: f64 = 3.0;
        let (beta, alpha) = riccati_closed(p.a, p.b, p.c, tau);
        let exact = (-beta * p.r0 - alpha).exp()
            * ((1.0 - p.a * beta - 0.5 * p.c * p.c * beta * beta) * p.r0 + p.a * p.b * beta);
        assert_relative_eq!(forward_density(&p, tau).unwrap(), exact, max_relative = 1e-7);
    }

    #[test]
    fn risk_neutral_shift() {
        let p = CirParams::new(0.5, 0.04, 0.2, 0.5, 0.01).unwrap();
        let q = risk_neutral(&p).unwrap();
        assert_relative_eq!(q.a, 0.6);
        assert_relative_eq!(q.a * q.b, 0.02);
        assert_eq!(q.dimension().unwrap(), 2);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [PricingMethod::Operator, PricingMethod::RiccatiClosed, PricingMethod::RiccatiOde, PricingMethod::Mc] {
            assert_eq!(m.as_str().parse::<PricingMethod>().unwrap(), m);
        }
        assert!("binomial".parse::<PricingMethod>().is_err());
    }
}
