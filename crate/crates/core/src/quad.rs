//! Quadrature rules: Gauss–Legendre and trapezoid node sets, globally adaptive
//! Gauss–Kronrod integration, and Gauss–Hermite rules for the standard normal
//! measure.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        // z is the i-th largest root.
        x[n - 1 - i] = mid + half * z;
        x[i] = mid - half * z;
        w[n - 1 - i] = half * wi;
        w[i] = half * wi;
    }
    (x, w)
}

/// Legendre polynomial P_n(z) and its derivative via the three-term recurrence.
pub fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = if (1.0 - z * z).abs() < 1e-300 {
        0.5 * nf * (nf + 1.0) * z.powi(n as i32 + 1)
    } else {
        nf * (z * p1 - p0) / (z * z - 1.0)
    };
    (p1, d)
}

/// Composite trapezoid rule with `n >= 2` equally spaced nodes including both
/// endpoints.
pub fn trapezoid(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "trapezoid rule needs at least two nodes");
    let h = (b - a) / (n - 1) as f64;
    let x = (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect();
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    (x, w)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_PANELS: usize = 4000;

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64, &mut [f64])>(f: &mut F, dim: usize, a: f64, b: f64, buf: &mut [f64]) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    f(c, buf);
    for d in 0..dim {
        kron[d] = WGK[7] * buf[d];
        gauss[d] = WG[3] * buf[d];
    }
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        for sign in [-1.0, 1.0] {
            f(c + sign * h * x, buf);
            for d in 0..dim {
                kron[d] += wk * buf[d];
                if j % 2 == 1 {
                    gauss[d] += WG[j / 2] * buf[d];
                }
            }
        }
    }
    let mut error: f64 = 0.0;
    for d in 0..dim {
        kron[d] *= h;
        gauss[d] *= h;
        error = error.max((kron[d] - gauss[d]).abs());
    }
    Panel {
        a,
        b,
        value: kron,
        error,
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) integration of a vector-valued
/// integrand over `[a, b]`. Interior `breakpoints` become initial panel
/// boundaries. Converges when the summed error estimate is below
/// `max(abs_tol, rel_tol * max_d |I_d|)`.
pub fn integrate_vec<F>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut edges = vec![lo];
    let mut inner: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(hi);

    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    for w in edges.windows(2) {
        heap.push(gk15(&mut f, dim, w[0], w[1], &mut buf));
    }
    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for p in heap.iter() {
            for d in 0..dim {
                total[d] += p.value[d];
            }
            err += p.error;
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if err <= abs_tol.max(rel_tol * scale) {
            return Ok(total.into_iter().map(|v| sign * v).collect());
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::QuadratureNotConverged { error: err });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split further in floating point.
            heap.push(Panel { error: 0.0, ..worst });
            continue;
        }
        heap.push(gk15(&mut f, dim, worst.a, mid, &mut buf));
        heap.push(gk15(&mut f, dim, mid, worst.b, &mut buf));
    }
}

/// Scalar wrapper around [`integrate_vec`].
pub fn integrate<F>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out| out[0] = f(x), 1, a, b, breakpoints, rel_tol, abs_tol).map(|v| v[0])
}

/// Gauss–Hermite rule for the standard normal density: `E[f(Z)] ~ sum w_i f(x_i)`
/// with `sum w_i = 1`. Nodes ascending.
///
/// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite polynomials,
/// polished by Newton steps on the orthonormal recurrence; weights come from the
/// Christoffel function so that tail weights keep full relative accuracy.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..5 {
            let (p, dp, _) = orthonormal_hermite(n, *x);
            if dp == 0.0 {
                break;
            }
            *x -= p / dp;
        }
        let (_, _, sum_sq) = orthonormal_hermite(n, *x);
        weights.push(1.0 / sum_sq);
    }
    (nodes, weights)
}

/// Orthonormal (w.r.t. N(0,1)) Hermite polynomial of degree n, its derivative,
/// and the sum of squares of degrees 0..n-1.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0;
    let mut d_prev = 0.0;
    let mut d = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += p * p;
        let kf = k as f64;
        let s = (kf + 1.0).sqrt();
        let p_next = (x * p - kf.sqrt() * p_prev) / s;
        let d_next = (p + x * d - kf.sqrt() * d_prev) / s;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d, sum_sq)
}
