//! Numerical building blocks: adaptive quadrature, bracketing root search,
//! unit-sphere constants and streaming moments.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive quadrature: value and estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Subdivides the interval with the largest error estimate until the summed
/// estimate falls below `max(abs_tol, rel_tol * |value|)` or the subdivision
/// limit is hit; the caller decides whether the returned error is acceptable.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    let (v0, e0) = kronrod15(&f, a, b);
    let mut pieces: Vec<(f64, f64, f64, f64)> = alloc::vec![(a, b, v0, e0)];
    let mut value = v0;
    let mut error = e0;
    for _ in 0..4000 {
        if error <= abs_tol.max(rel_tol * value.abs()) {
            break;
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, v, e) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (vl, el) = kronrod15(&f, lo, mid);
        let (vr, er) = kronrod15(&f, mid, hi);
        value += vl + vr - v;
        error += el + er - e;
        pieces.push((lo, mid, vl, el));
        pieces.push((mid, hi, vr, er));
    }
    // recompute sums to shed accumulated cancellation
    let value = pieces.iter().map(|p| p.2).sum();
    let error = pieces.iter().map(|p| p.3).sum();
    Quadrature { value, error }
}

/// Integral of `f` over `[a, inf)` through the map `x = a + t / (1 - t)`.
pub fn integrate_upper<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    integrate_upper_scaled(f, a, 1.0, abs_tol, rel_tol)
}

/// As [`integrate_upper`] with `x = a + scale * t / (1 - t)`; `scale` should
/// match the decay length of the integrand.
pub fn integrate_upper_scaled<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    scale: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let x = a + scale * t / s;
        let v = scale * f(x) / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, abs_tol, rel_tol)
}

/// Bisection for a sign change of `f` on `[lo, hi]`. Returns the midpoint of
/// the final bracket once it is narrower than `tol` (or after 200 halvings).
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol || mid == lo || mid == hi {
            return mid;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Surface area `s_{d-1}` of the unit sphere in `R^d`.
pub fn sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * PI.powf(h) / libm::tgamma(h)
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(dim: usize) -> f64 {
    sphere_area(dim) / dim as f64
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Streaming mean and variance (Welford), mergeable across batches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let wb = other.count as f64 / n;
        self.mean += delta * wb;
        self.m2 += other.m2 + delta * delta * self.count as f64 * wb;
        self.count += other.count;
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}
