use std::collections::HashSet;

use cir_chaos::chaos::{enumerate_pairings, hermite};
use cir_chaos::expquad::{exp_quadratic_expectation, finite_rank_expectation, finite_rank_functional};
use cir_chaos::model::{cir_kernel_value, CirParams};
use cir_chaos::montecarlo::{path_rng, run_paths, Accumulator};
use cir_chaos::operator::{carleman_det2, discretize, fredholm_det, trace, QuadratureGrid};
use cir_chaos::pricing::riccati_closed;
use proptest::prelude::*;
use rand::Rng;

fn modes(max_rank: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-2.0..=2.0f64, -0.9..=5.0f64), 1..=max_rank)
}

fn grid() -> QuadratureGrid {
    QuadratureGrid::gauss_legendre(24, 0.0, 1.0).unwrap()
}

/// `sum_{k} (-1)^k n! / (k! (n-2k)! 2^k) x^{n-2k}`.
fn hermite_explicit(n: usize, x: f64) -> f64 {
    let f = |m: usize| (1..=m).map(|k| k as f64).product::<f64>();
    (0..=n / 2)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * f(n) / (f(k) * f(n - 2 * k) * 2f64.powi(k as i32)) * x.powi((n - 2 * k) as i32)
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cir_kernel_is_symmetric(
        a in 0.05..2.0f64, c in 0.01..1.0f64, lb in 0.0..1.5f64,
        horizon in 0.1..10.0f64, u in 0.0..1.0f64, v in 0.0..1.0f64,
    ) {
        let (t1, t2) = (u * horizon, v * horizon);
        prop_assert_eq!(cir_kernel_value(a, c, lb, horizon, t1, t2), cir_kernel_value(a, c, lb, horizon, t2, t1));
    }

    #[test]
    fn finite_rank_operator_matches_closed_form(m in modes(5), shift in -1.0..1.0f64) {
        let analytic = finite_rank_expectation(shift, &m).unwrap();
        let y = finite_rank_functional(shift, &m, 0.0, 1.0);
        let operator = exp_quadratic_expectation(&y, &grid()).unwrap();
        prop_assert!((operator - analytic).abs() <= 1e-8 * analytic, "{} vs {}", operator, analytic);
    }

    #[test]
    fn shifting_the_constant_lowers_the_expectation(m in modes(3), a1 in -1.0..1.0f64, da in 0.01..1.0f64) {
        let low = exp_quadratic_expectation(&finite_rank_functional(a1, &m, 0.0, 1.0), &grid()).unwrap();
        let high = exp_quadratic_expectation(&finite_rank_functional(a1 + da, &m, 0.0, 1.0), &grid()).unwrap();
        prop_assert!(high < low);
        prop_assert!((high / low - (-da).exp()).abs() < 1e-12);
    }

    #[test]
    fn det2_identity_on_finite_rank_kernels(m in modes(5)) {
        let cs: Vec<f64> = m.iter().map(|x| x.1).collect();
        let k = finite_rank_functional(0.0, &m, 0.0, 1.0).c_kernel;
        let d = discretize(move |s, t| k(s, t), &grid()).unwrap();
        let expected: f64 = cs.iter().map(|c| (1.0 + c) * (-c).exp()).product();
        let det2 = carleman_det2(&d).unwrap();
        prop_assert!((det2 - expected).abs() <= 1e-10 * expected);
        let via_det = fredholm_det(&d, 1.0).unwrap() * (-trace(&d)).exp();
        prop_assert!((det2 - via_det).abs() <= 1e-10 * expected);
    }

    #[test]
    fn accumulator_merge_matches_single_pass(xs in prop::collection::vec(-100.0..100.0f64, 2..200), cut in 0.0..1.0f64) {
        let k = ((xs.len() as f64) * cut) as usize;
        let mut whole = Accumulator::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut left, mut right) = (Accumulator::default(), Accumulator::default());
        xs[..k].iter().for_each(|&x| left.push(x));
        xs[k..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        let (a, b) = (whole.estimate().unwrap(), left.estimate().unwrap());
        prop_assert_eq!(a.n, b.n);
        prop_assert!((a.mean - b.mean).abs() <= 1e-12 * (1.0 + a.mean.abs()));
        prop_assert!((a.stderr - b.stderr).abs() <= 1e-10 * (1.0 + a.stderr));
    }

    #[test]
    fn hermite_recurrence_matches_explicit_sum(n in 0usize..=14, x in -4.0..4.0f64) {
        let expected = hermite_explicit(n, x);
        let scale = (1..=n).map(|k| k as f64).product::<f64>().sqrt() * (1.0 + x.abs()).powi(n as i32);
        prop_assert!((hermite(n, x).unwrap() - expected).abs() <= 1e-12 * scale);
    }

    #[test]
    fn closed_riccati_solves_its_ode(
        a in 0.05..2.0f64, b in 0.001..0.5f64, c in 0.01..1.0f64, tau in 0.05..20.0f64,
    ) {
        let h = 1e-4;
        let (bp, ap) = riccati_closed(a, b, c, tau + h);
        let (bm, am) = riccati_closed(a, b, c, tau - h);
        let (beta, _) = riccati_closed(a, b, c, tau);
        let dbeta = (bp - bm) / (2.0 * h);
        let dalpha = (ap - am) / (2.0 * h);
        prop_assert!((dbeta - (1.0 - a * beta - 0.5 * c * c * beta * beta)).abs() < 1e-6);
        prop_assert!((dalpha - a * b * beta).abs() < 1e-6 * (1.0 + a * b * beta));
    }

    #[test]
    fn dimension_round_trip(a in 0.05..3.0f64, c in 0.01..1.0f64, n in 2usize..=12) {
        let p = CirParams::with_dimension(a, c, n, 0.0, 0.01).unwrap();
        prop_assert_eq!(p.dimension().unwrap(), n);
    }

    #[test]
    fn path_streams_are_reproducible(seed in any::<u64>(), path in 0usize..10_000) {
        let x: f64 = path_rng(seed, path).random();
        let y: f64 = path_rng(seed, path).random();
        prop_assert_eq!(x, y);
        let z: f64 = path_rng(seed, path + 1).random();
        prop_assert_ne!(x, z);
    }
}

#[test]
fn pairing_counts_are_double_factorials() {
    for m in 0..=6usize {
        let graphs = enumerate_pairings(2 * m).unwrap();
        let expected: usize = (1..=m).map(|k| 2 * k - 1).product();
        assert_eq!(graphs.len(), expected);
        let distinct: HashSet<_> = graphs.iter().collect();
        assert_eq!(distinct.len(), expected);
        assert!(graphs.iter().all(|g| g.is_perfect_matching(2 * m)));
    }
}

#[test]
fn run_paths_is_independent_of_batching_order() {
    let f = |_: usize, rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64]| {
        out[0] = rng.random::<f64>();
    };
    let a = run_paths(5_000, 9, 1, f)[0].estimate().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| run_paths(5_000, 9, 1, f))[0].estimate().unwrap();
    assert_eq!(a, b);
}
