//! Cross-module checks against closed-form CIR results and independent
//! simulation schemes.

use approx::assert_relative_eq;
use cir_chaos::chaos::assemble_yt;
use cir_chaos::expquad::exp_quadratic_expectation;
use cir_chaos::model::{embed_cir, CirParams, PiecewiseConstant, SqGaussParams};
use cir_chaos::montecarlo::{
    accumulate_functionals, estimate, sample_terminal_cir, sample_terminal_ou, Scheme, SimConfig,
};
use cir_chaos::operator::QuadratureGrid;
use cir_chaos::pricing::{
    bond_price_mc, bond_price_operator, riccati_closed, riccati_rk4, risk_neutral, RICCATI_STEPS,
};

fn closed_price(a: f64, b: f64, c: f64, tau: f64, r: f64) -> f64 {
    let (beta, alpha) = riccati_closed(a, b, c, tau);
    (-beta * r - alpha).exp()
}

/// `E[e^{-Y_T}]` for `h = k = 0` is the CIR bond price for the rate
/// `kappa r` under the drift tilted by `lambda_bar`, with
/// `kappa = 1/2 + lambda_bar^2 / 8`.
fn tilted_price(p: &CirParams, horizon: f64) -> f64 {
    let kappa = 0.5 + p.lambda_bar * p.lambda_bar / 8.0;
    let a = p.a + 0.5 * p.c * p.lambda_bar;
    let b = kappa * p.a * p.b / a;
    closed_price(a, b, p.c * kappa.sqrt(), horizon, kappa * p.r0)
}

fn yt_expectation(p: &CirParams, horizon: f64, nodes: usize) -> f64 {
    let g = embed_cir(p).unwrap();
    let y = assemble_yt(&g, None, None, horizon).unwrap();
    exp_quadratic_expectation(&y, &QuadratureGrid::gauss_legendre(nodes, 0.0, horizon).unwrap()).unwrap()
}

#[test]
fn assembled_exponent_matches_half_rate_bond_without_market_price() {
    for (a, c, n, r0, horizon) in [(0.5, 0.2, 2, 0.04, 1.0), (1.0, 0.3, 3, 0.02, 5.0), (0.2, 0.1, 4, 0.0, 2.0)] {
        let p = CirParams::with_dimension(a, c, n, 0.0, r0).unwrap();
        let expected = closed_price(a, 0.5 * p.b, c / 2f64.sqrt(), horizon, 0.5 * r0);
        assert_relative_eq!(yt_expectation(&p, horizon, 256), expected, max_relative = 1e-9);
    }
}

#[test]
fn assembled_exponent_matches_tilted_bond_with_market_price() {
    for (lb, r0, horizon) in [(0.6, 0.03, 2.0), (1.5, 0.05, 1.0), (0.3, 0.0, 4.0)] {
        let p = CirParams::with_dimension(0.5, 0.2, 2, lb, r0).unwrap();
        assert_relative_eq!(yt_expectation(&p, horizon, 128), tilted_price(&p, horizon), max_relative = 1e-9);
    }
}

#[test]
fn operator_bond_price_matches_closed_form() {
    let p = CirParams::with_dimension(0.3, 0.15, 3, 0.0, 0.05).unwrap();
    for (t, maturity) in [(0.0, 1.0), (2.0, 7.0), (1.0, 1.25)] {
        let q = bond_price_operator(&p, t, maturity, 0.035, 128).unwrap();
        let expected = closed_price(p.a, p.b, p.c, maturity - t, 0.035);
        assert_relative_eq!(q.price, expected, max_relative = 1e-7);
        let refinement = q.refinement.unwrap();
        assert_eq!(refinement.nodes, 256);
        assert!(refinement.rel_diff < 1e-7);
    }
}

#[test]
fn rk4_matches_closed_riccati() {
    for (a, b, c, tau) in [(0.5, 0.04, 0.2, 10.0), (0.1, 0.3, 0.5, 3.0), (2.0, 0.01, 0.05, 0.2)] {
        let (beta, alpha) = riccati_rk4(a, b, c, tau, RICCATI_STEPS);
        let (beta_cf, alpha_cf) = riccati_closed(a, b, c, tau);
        assert_relative_eq!(beta, beta_cf, max_relative = 1e-10);
        assert_relative_eq!(alpha, alpha_cf, max_relative = 1e-9);
    }
}

#[test]
fn monte_carlo_bond_prices_match_closed_form() {
    for (a, c, n, r0, tau) in [(0.5, 0.2, 2, 0.04, 2.0), (1.0, 0.4, 3, 0.1, 1.0)] {
        let p = CirParams::with_dimension(a, c, n, 0.0, r0).unwrap();
        let cfg = SimConfig::new(20_000, 1e-2, tau, 7, Scheme::OuExact).unwrap();
        let q = bond_price_mc(&p, 0.0, tau, r0, &cfg).unwrap();
        let expected = closed_price(a, p.b, c, tau, r0);
        let z = (q.price - expected).abs() / q.stderr.unwrap();
        assert!(z < 3.0, "price {} vs {expected} (z = {z})", q.price);
    }
}

#[test]
fn monte_carlo_with_market_price_matches_risk_neutral_closed_form() {
    let p = CirParams::with_dimension(0.5, 0.2, 2, 0.8, 0.06).unwrap();
    let q = risk_neutral(&p).unwrap();
    assert_relative_eq!(q.a, 0.66, max_relative = 1e-14);
    assert_relative_eq!(q.a * q.b, p.a * p.b, max_relative = 1e-14);
    let tau = 3.0;
    let cfg = SimConfig::new(20_000, 1e-2, tau, 11, Scheme::OuExact).unwrap();
    let mc = bond_price_mc(&p, 0.0, tau, p.r0, &cfg).unwrap();
    let expected = closed_price(q.a, q.b, q.c, tau, p.r0);
    let z = (mc.price - expected).abs() / mc.stderr.unwrap();
    assert!(z < 3.0, "price {} vs {expected} (z = {z})", mc.price);
}

#[test]
fn squared_ou_and_direct_cir_agree_in_distribution() {
    let p = CirParams::with_dimension(0.8, 0.3, 2, 0.0, 0.05).unwrap();
    let horizon = 1.5;
    let ou: Vec<f64> = sample_terminal_ou(
        &embed_cir(&p).unwrap(),
        &SimConfig::new(40_000, 0.05, horizon, 3, Scheme::OuExact).unwrap(),
    )
    .unwrap()
    .iter()
    .map(|x| x.iter().map(|v| v * v).sum())
    .collect();
    let direct = sample_terminal_cir(&p, &SimConfig::new(40_000, 1e-3, horizon, 4, Scheme::CirEulerFullTruncation).unwrap()).unwrap();

    let e = (-p.a * horizon).exp();
    let mean = p.b + (p.r0 - p.b) * e;
    let var = p.r0 * p.c * p.c / p.a * (e - e * e) + p.b * p.c * p.c / (2.0 * p.a) * (1.0 - e).powi(2);
    for sample in [&ou, &direct] {
        let m = estimate(sample).unwrap();
        assert!(m.z_score_to(mean) < 3.5, "mean {} vs {mean}", m.mean);
        let centered: Vec<f64> = sample.iter().map(|r| (r - mean).powi(2)).collect();
        let v = estimate(&centered).unwrap();
        assert!(v.z_score_to(var) < 3.5, "variance {} vs {var}", v.mean);
    }
    // Two-sample comparison of the upper quartile.
    let quantile = |s: &[f64], q: f64| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v[(q * v.len() as f64) as usize]
    };
    let (qa, qb) = (quantile(&ou, 0.75), quantile(&direct, 0.75));
    assert!((qa - qb).abs() < 0.03 * qa, "{qa} vs {qb}");
}

#[test]
fn deterministic_discount_error_is_second_order_in_step() {
    // With gamma = 0 the state is exact and the only error is the trapezoid rule.
    let p = SqGaussParams::new(
        2,
        PiecewiseConstant::constant(1.0),
        PiecewiseConstant::constant(0.0),
        PiecewiseConstant::constant(vec![0.0, 0.0]),
        PiecewiseConstant::constant(0.0),
        vec![1.0, 0.5],
        1.0,
    )
    .unwrap();
    let horizon = 1.0;
    let exact = (-1.25 * (1.0 - (-2.0f64 * horizon).exp()) / 2.0).exp();
    let err = |dt: f64| {
        let cfg = SimConfig::new(2, dt, horizon, 1, Scheme::OuExact).unwrap();
        let e = accumulate_functionals(&p, &cfg, &[horizon], &[]).unwrap();
        (e[0].v.mean - exact).abs()
    };
    let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
    let order1 = (e1 / e2).log2();
    let order2 = (e2 / e3).log2();
    assert!((order1 - 2.0).abs() < 0.1 && (order2 - 2.0).abs() < 0.1, "{order1} {order2}");
}

#[test]
fn halving_the_step_moves_estimates_within_noise() {
    let p = embed_cir(&CirParams::with_dimension(0.5, 0.2, 2, 0.0, 0.04).unwrap()).unwrap();
    let run = |dt| {
        let cfg = SimConfig::new(20_000, dt, 2.0, 5, Scheme::OuExact).unwrap();
        accumulate_functionals(&p, &cfg, &[2.0], &[]).unwrap().remove(0)
    };
    let (coarse, fine) = (run(0.02), run(0.01));
    assert!(coarse.v.z_score(&fine.v) < 3.0);
    assert!(coarse.x_squared.z_score(&fine.x_squared) < 3.0);
}


#[test]
fn discount_decays_and_quadratic_variation_grows_with_horizon() {
    let p = embed_cir(&CirParams::new(0.5, 0.04, 0.2, 0.0, 0.04).unwrap()).unwrap();
    let horizons = [1.0, 5.0, 10.0, 20.0];
    let cfg = SimConfig::new(5_000, 1e-2, 20.0, 17, Scheme::OuExact).unwrap();
    let est = accumulate_functionals(&p, &cfg, &horizons, &[]).unwrap();
    for w in est.windows(2) {
        let (early, late) = (&w[0], &w[1]);
        assert!(early.v.mean - late.v.mean > 3.0 * early.v.stderr.hypot(late.v.stderr));
        assert!(late.x_squared.mean - early.x_squared.mean > -3.0 * early.x_squared.stderr.hypot(late.x_squared.stderr));
    }
    assert!(est[3].v.mean < 0.5);
}
