//! Spherically symmetric tail models, their radial laws and samplers, and the
//! critical-radius scaling plans built on them.
//!
//! Two families are supported:
//!
//! * [`TailKind::ParetoRv`]: `f(x) = C / (1 + |x|^alpha)`, regularly varying
//!   with index `alpha > d`.
//! * [`TailKind::VonMisesPower`]: `f(x) = C exp(-|x|^tau / tau)` with
//!   `0 < tau <= 1`, i.e. `psi(z) = z^tau / tau`, `a(z) = z^(1 - tau)` and a
//!   constant slowly varying factor.

use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{ball_volume, bisect, integrate, integrate_upper_scaled, sphere_area};

/// Relative accuracy demanded of the normalizing constant.
pub const NORMALIZE_TOL: f64 = 1e-10;

/// Number of log-spaced knots in the radial survival table.
pub const RADIAL_KNOTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailKind {
    ParetoRv { alpha: f64 },
    VonMisesPower { tau: f64 },
}

impl TailKind {
    fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1"));
        }
        match *self {
            TailKind::ParetoRv { alpha } => {
                if !alpha.is_finite() || alpha <= dim as f64 {
                    return Err(Error::NonIntegrable { alpha, dim });
                }
            }
            TailKind::VonMisesPower { tau } => {
                if !(tau > 0.0 && tau <= 1.0) {
                    return Err(Error::InvalidParameter("tau must lie in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Unnormalized radial profile `g(rho)`.
    pub fn profile(&self, rho: f64) -> f64 {
        match *self {
            TailKind::ParetoRv { alpha } => 1.0 / (1.0 + rho.powf(alpha)),
            TailKind::VonMisesPower { tau } => (-rho.powf(tau) / tau).exp(),
        }
    }

    fn ln_profile(&self, rho: f64) -> f64 {
        match *self {
            TailKind::ParetoRv { alpha } => {
                let l = alpha * rho.ln();
                // ln(1 + e^l) without overflow
                if l > 30.0 {
                    -(l + (-l).exp().ln_1p())
                } else {
                    -(l.exp().ln_1p())
                }
            }
            TailKind::VonMisesPower { tau } => -rho.powf(tau) / tau,
        }
    }
}

/// A normalized spherically symmetric density on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub kind: TailKind,
    pub dim: usize,
    pub norm_const: f64,
}

/// Normalizing constant `C` such that `s_{d-1} C int_0^inf rho^{d-1} g(rho) = 1`.
pub fn normalize(kind: TailKind, dim: usize) -> Result<f64> {
    kind.validate(dim)?;
    let d = dim as f64;
    let q = match kind {
        TailKind::ParetoRv { alpha } => {
            // [0, 1] directly, [1, inf) through rho = 1 / u
            let inner = integrate(|r| r.powf(d - 1.0) / (1.0 + r.powf(alpha)), 0.0, 1.0, 1e-15, 1e-14);
            let outer = integrate(
                |u| {
                    if u <= 0.0 {
                        0.0
                    } else {
                        u.powf(alpha - d - 1.0) / (1.0 + u.powf(alpha))
                    }
                },
                0.0,
                1.0,
                1e-15,
                1e-14,
            );
            (inner.value + outer.value, inner.error + outer.error)
        }
        TailKind::VonMisesPower { tau } => {
            let scale = 1.0f64.max(d);
            let qq = integrate_upper_scaled(
                |r| r.powf(d - 1.0) * (-r.powf(tau) / tau).exp(),
                0.0,
                scale,
                1e-300,
                1e-14,
            );
            (qq.value, qq.error)
        }
    };
    let (value, err) = q;
    if !(value > 0.0) || !value.is_finite() || err > NORMALIZE_TOL * value {
        return Err(Error::QuadratureFailure { estimate: err / value });
    }
    Ok(1.0 / (sphere_area(dim) * value))
}

impl TailModel {
    pub fn new(kind: TailKind, dim: usize) -> Result<Self> {
        let norm_const = normalize(kind, dim)?;
        Ok(Self { kind, dim, norm_const })
    }

    pub fn pareto(alpha: f64, dim: usize) -> Result<Self> {
        Self::new(TailKind::ParetoRv { alpha }, dim)
    }

    pub fn von_mises_power(tau: f64, dim: usize) -> Result<Self> {
        Self::new(TailKind::VonMisesPower { tau }, dim)
    }

    /// `f(rho)`: the density at any point of norm `rho`.
    pub fn radial_density(&self, rho: f64) -> f64 {
        self.norm_const * self.kind.profile(rho)
    }

    pub fn ln_radial_density(&self, rho: f64) -> f64 {
        self.norm_const.ln() + self.kind.ln_profile(rho)
    }

    /// Density at a point of `R^d`.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        self.radial_density(norm(x))
    }

    /// Density of the norm `|X|`: `s_{d-1} C rho^{d-1} g(rho)`.
    pub fn norm_pdf(&self, rho: f64) -> f64 {
        sphere_area(self.dim) * rho.powi(self.dim as i32 - 1) * self.radial_density(rho)
    }

    /// `a(z) = 1 / psi'(z)` for von-Mises tails; `None` for Pareto tails.
    pub fn aux_a(&self, z: f64) -> Option<f64> {
        match self.kind {
            TailKind::VonMisesPower { tau } => Some(z.powf(1.0 - tau)),
            TailKind::ParetoRv { .. } => None,
        }
    }

    /// Limit `c = lim a(R) / M` at fixed `M`: finite only for `tau = 1`.
    pub fn c_limit(&self, m_scale: f64) -> Option<f64> {
        match self.kind {
            TailKind::VonMisesPower { tau } if tau == 1.0 => Some(1.0 / m_scale),
            TailKind::VonMisesPower { .. } => Some(f64::INFINITY),
            TailKind::ParetoRv { .. } => None,
        }
    }

    pub fn is_heavy(&self) -> bool {
        matches!(self.kind, TailKind::ParetoRv { .. })
    }

    /// `P(|X| <= rho)` by direct quadrature.
    pub fn norm_cdf(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let q = integrate(|t| self.norm_pdf(t), 0.0, rho, 1e-300, 1e-13);
        q.value.min(1.0)
    }

    /// `ln P(|X| > rho)`, accurate in the far tail.
    pub fn ln_survival(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let cdf = self.norm_cdf(rho);
        if cdf < 0.5 {
            return (-cdf).ln_1p();
        }
        let d = self.dim as f64;
        let s = sphere_area(self.dim) * self.norm_const;
        match self.kind {
            TailKind::ParetoRv { alpha } => {
                // rho / u substitution: s C rho^d int_0^1 u^{alpha-d-1} / (u^alpha + rho^alpha) du
                let ra = rho.powf(alpha);
                let q = integrate(
                    |u| {
                        if u <= 0.0 {
                            0.0
                        } else {
                            u.powf(alpha - d - 1.0) / (u.powf(alpha) + ra)
                        }
                    },
                    0.0,
                    1.0,
                    1e-300,
                    1e-13,
                );
                (s * q.value).ln() + d * rho.ln()
            }
            TailKind::VonMisesPower { tau } => {
                let psi0 = rho.powf(tau) / tau;
                let scale = rho.powf(1.0 - tau).max(1.0);
                let q = integrate_upper_scaled(
                    |x| {
                        let t = rho + x;
                        t.powf(d - 1.0) * (-(t.powf(tau) / tau - psi0)).exp()
                    },
                    0.0,
                    scale,
                    1e-300,
                    1e-13,
                );
                (s * q.value).ln() - psi0
            }
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Inverse of the radial law through a table of `ln S(rho)` against `ln rho`
/// on log-spaced knots, interpolated by monotone cubic Hermite segments.
#[derive(Debug, Clone)]
pub struct RadialSampler {
    tail: TailModel,
    ln_rho: Vec<f64>,
    ln_surv: Vec<f64>,
    slope: Vec<f64>,
}

impl RadialSampler {
    pub fn new(tail: TailModel) -> Self {
        let (lo, hi): (f64, f64) = match tail.kind {
            TailKind::ParetoRv { .. } => (1e-6, 1e12),
            TailKind::VonMisesPower { tau } => (1e-6, (750.0 * tau).powf(1.0 / tau)),
        };
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (RADIAL_KNOTS - 1) as f64;
        let mut ln_rho = Vec::with_capacity(RADIAL_KNOTS);
        let mut ln_surv = Vec::with_capacity(RADIAL_KNOTS);
        let mut slope = Vec::with_capacity(RADIAL_KNOTS);
        for i in 0..RADIAL_KNOTS {
            let x = a + step * i as f64;
            let rho = x.exp();
            let ls = tail.ln_survival(rho);
            // d ln S / d ln rho = -rho * pdf(rho) / S(rho)
            let ln_pdf = (sphere_area(tail.dim)).ln() + (tail.dim as f64 - 1.0) * x + tail.ln_radial_density(rho);
            ln_rho.push(x);
            ln_surv.push(ls);
            slope.push(-(x + ln_pdf - ls).exp());
        }
        let mut sampler = Self { tail, ln_rho, ln_surv, slope };
        sampler.enforce_monotone();
        sampler
    }

    pub fn tail(&self) -> &TailModel {
        &self.tail
    }

    // Fritsch-Carlson limiter on the exact slopes.
    fn enforce_monotone(&mut self) {
        for i in 0..self.ln_rho.len() - 1 {
            let h = self.ln_rho[i + 1] - self.ln_rho[i];
            let delta = (self.ln_surv[i + 1] - self.ln_surv[i]) / h;
            if delta == 0.0 {
                self.slope[i] = 0.0;
                self.slope[i + 1] = 0.0;
                continue;
            }
            let a = self.slope[i] / delta;
            let b = self.slope[i + 1] / delta;
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                self.slope[i] = t * a * delta;
                self.slope[i + 1] = t * b * delta;
            }
        }
    }

    fn hermite(&self, i: usize, t: f64) -> f64 {
        let h = self.ln_rho[i + 1] - self.ln_rho[i];
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ln_surv[i]
            + (t3 - 2.0 * t2 + t) * h * self.slope[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ln_surv[i + 1]
            + (t3 - t2) * h * self.slope[i + 1]
    }

    /// Interpolated `ln P(|X| > rho)`.
    pub fn ln_survival(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let x = rho.ln();
        let last = self.ln_rho.len() - 1;
        if x <= self.ln_rho[0] {
            let cdf = self.tail.norm_const * ball_volume(self.tail.dim) * rho.powi(self.tail.dim as i32);
            return (-cdf).ln_1p();
        }
        if x >= self.ln_rho[last] {
            return self.ln_surv[last] + self.slope[last] * (x - self.ln_rho[last]);
        }
        let i = self.ln_rho.partition_point(|&v| v <= x) - 1;
        let h = self.ln_rho[i + 1] - self.ln_rho[i];
        self.hermite(i, (x - self.ln_rho[i]) / h)
    }

    /// Radius with `ln P(|X| > rho) = target` (target <= 0).
    pub fn quantile_ln_survival(&self, target: f64) -> f64 {
        let last = self.ln_rho.len() - 1;
        if target >= self.ln_surv[0] {
            // below the first knot: invert the exact cdf (probability ~1e-12)
            let cdf = -target.exp_m1();
            if cdf <= 0.0 {
                return 0.0;
            }
            let c = self.tail.norm_const * ball_volume(self.tail.dim);
            let guess = (cdf / c).powf(1.0 / self.tail.dim as f64).ln();
            let lr = bisect(|l| self.tail.norm_cdf(l.exp()) - cdf, guess - 2.0, self.ln_rho[0], 1e-13);
            return lr.exp();
        }
        if target <= self.ln_surv[last] {
            return match self.tail.kind {
                TailKind::ParetoRv { alpha } => {
                    let slope = self.tail.dim as f64 - alpha;
                    (self.ln_rho[last] + (target - self.ln_surv[last]) / slope).exp()
                }
                TailKind::VonMisesPower { .. } => self.ln_rho[last].exp(),
            };
        }
        // ln_surv is non-increasing: first knot strictly below the target
        let j = self.ln_surv.partition_point(|&v| v >= target);
        let i = j - 1;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if self.hermite(i, mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = self.ln_rho[i + 1] - self.ln_rho[i];
        (self.ln_rho[i] + 0.5 * (lo + hi) * h).exp()
    }

    /// Draws a norm conditioned on `|X| >= r0`.
    pub fn sample_norm<R: Rng + ?Sized>(&self, rng: &mut R, ln_surv_r0: f64) -> f64 {
        // u in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        self.quantile_ln_survival(u.ln() + ln_surv_r0)
    }

    /// Poisson process with intensity `n f`: a `Poisson(n)` number of iid draws.
    pub fn sample_cloud(&self, n: f64, seed: u64) -> Result<PointCloud> {
        self.sample_shell(n, 0.0, seed)
    }

    /// The same process restricted to `{|x| >= r0}`: a `Poisson(n S(r0))`
    /// number of points drawn from the conditional law. Equal in law to
    /// `restrict_far(sample_cloud(n), r0)`.
    pub fn sample_shell(&self, n: f64, r0: f64, seed: u64) -> Result<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_shell_with(n, r0, seed, &mut rng)
    }

    pub fn sample_shell_with<R: Rng + ?Sized>(&self, n: f64, r0: f64, seed: u64, rng: &mut R) -> Result<PointCloud> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter("intensity n must be positive and finite"));
        }
        let ln_s0 = if r0 > 0.0 { self.tail.ln_survival(r0) } else { 0.0 };
        let mean = n * ln_s0.exp();
        let count = if mean > 0.0 {
            let pois = Poisson::new(mean).map_err(|_| Error::InvalidParameter("Poisson mean"))?;
            let c: f64 = pois.sample(rng);
            c as usize
        } else {
            0
        };
        let dim = self.tail.dim;
        let mut coords = Vec::with_capacity(count * dim);
        let mut dir = alloc::vec![0.0; dim];
        for _ in 0..count {
            let rho = self.sample_norm(rng, ln_s0).max(r0);
            random_direction(rng, &mut dir);
            coords.extend(dir.iter().map(|u| rho * u));
        }
        Ok(PointCloud { dim, coords, seed, intensity_n: n })
    }
}

/// Uniform point on the unit sphere `S^{d-1}`, written into `out`.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            s += *v * *v;
        }
        if s > 1e-24 {
            let inv = 1.0 / s.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Draws a Poissonized cloud with intensity `n f`, reproducible from `seed`.
pub fn sample_cloud(tail: &TailModel, n: f64, seed: u64) -> Result<PointCloud> {
    RadialSampler::new(*tail).sample_cloud(n, seed)
}

/// A finite point set in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub seed: u64,
    pub intensity_n: f64,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>, seed: u64, intensity_n: f64) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "coordinate count must be a multiple of dim");
        Self { dim, coords, seed, intensity_n }
    }

    pub fn from_points(dim: usize, points: &[&[f64]]) -> Self {
        let coords = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::new(dim, coords, 0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> core::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn norm(&self, i: usize) -> f64 {
        norm(self.point(i))
    }

    /// Copy of the points selected by `keep`, order preserved.
    pub fn filter<F: Fn(&[f64]) -> bool>(&self, keep: F) -> PointCloud {
        let coords = self.points().filter(|p| keep(p)).flat_map(|p| p.iter().copied()).collect();
        PointCloud { dim: self.dim, coords, seed: self.seed, intensity_n: self.intensity_n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Critical,
    /// Critical radius inflated by `kappa > 1`.
    Subcritical { kappa: f64 },
}

/// Experiment frame: dimension of homology `k`, component size `p`,
/// intensity `n`, connectivity scale `M` and the solved layer radius `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPlan {
    pub tail: TailModel,
    pub k: usize,
    pub p: usize,
    pub n: f64,
    pub m_scale: f64,
    pub r: f64,
    pub regime: Regime,
}

impl ScalingPlan {
    pub fn critical(tail: TailModel, k: usize, p: usize, n: f64, m_scale: f64) -> Result<Self> {
        if k < 1 || p < k + 2 {
            return Err(Error::InvalidParameter("need k >= 1 and p >= k + 2"));
        }
        let r = if tail.is_heavy() {
            solve_r_heavy(&tail, n, m_scale, p)?
        } else {
            solve_r_exp(&tail, n, m_scale, p)?
        };
        Ok(Self { tail, k, p, n, m_scale, r, regime: Regime::Critical })
    }

    pub fn subcritical(tail: TailModel, k: usize, p: usize, n: f64, m_scale: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 1.0) {
            return Err(Error::InvalidParameter("kappa must exceed 1"));
        }
        let mut plan = Self::critical(tail, k, p, n, m_scale)?;
        plan.r *= kappa;
        plan.regime = Regime::Subcritical { kappa };
        Ok(plan)
    }

    pub fn with_regime(tail: TailModel, k: usize, p: usize, n: f64, m_scale: f64, regime: Regime) -> Result<Self> {
        match regime {
            Regime::Critical => Self::critical(tail, k, p, n, m_scale),
            Regime::Subcritical { kappa } => Self::subcritical(tail, k, p, n, m_scale, kappa),
        }
    }

    pub fn dim(&self) -> usize {
        self.tail.dim
    }

    /// Left side of the scaling equation evaluated at the plan's `R`.
    pub fn scaling_lhs(&self) -> f64 {
        ln_scaling_lhs(&self.tail, self.n, self.m_scale, self.p, self.r).exp()
    }

    /// `n M^d f(R)`, the rate governing the size-(p-1) moments.
    pub fn density_scale(&self) -> f64 {
        self.n * self.m_scale.powi(self.dim() as i32) * self.tail.radial_density(self.r)
    }
}

/// `ln(n^p M^{d(p-1)} R^d f(R)^p)` for heavy tails and
/// `ln(n^p M^{d(p-1)} a(R) R^{d-1} f(R)^p)` for von-Mises tails.
pub fn ln_scaling_lhs(tail: &TailModel, n: f64, m_scale: f64, p: usize, r: f64) -> f64 {
    let d = tail.dim as f64;
    let p_f = p as f64;
    let common = p_f * n.ln() + d * (p_f - 1.0) * m_scale.ln() + p_f * tail.ln_radial_density(r);
    match tail.aux_a(r) {
        None => common + d * r.ln(),
        Some(a) => common + a.ln() + (d - 1.0) * r.ln(),
    }
}

fn solve_scaling(tail: &TailModel, n: f64, m_scale: f64, p: usize) -> Result<f64> {
    if !(n > 0.0) || !(m_scale > 0.0) {
        return Err(Error::InvalidParameter("n and M must be positive"));
    }
    let h = |ln_r: f64| ln_scaling_lhs(tail, n, m_scale, p, ln_r.exp());
    let lo = m_scale.ln();
    if !(h(lo) > 0.0) {
        return Err(Error::NoRoot { n });
    }
    let mut hi = lo + 1.0;
    let mut steps = 0;
    while h(hi) >= 0.0 {
        hi += (hi - lo).max(1.0);
        steps += 1;
        if steps > 200 {
            return Err(Error::NoRoot { n });
        }
    }
    Ok(bisect(h, lo, hi, 0.0).exp())
}

/// Critical `R` for a regularly varying tail: `n^p M^{d(p-1)} R^d f(R)^p = 1`.
pub fn solve_r_heavy(tail: &TailModel, n: f64, m_scale: f64, p: usize) -> Result<f64> {
    if !tail.is_heavy() {
        return Err(Error::InvalidParameter("solve_r_heavy needs a Pareto tail"));
    }
    solve_scaling(tail, n, m_scale, p)
}

/// Critical `R` for a von-Mises tail: `n^p M^{d(p-1)} a(R) R^{d-1} f(R)^p = 1`.
pub fn solve_r_exp(tail: &TailModel, n: f64, m_scale: f64, p: usize) -> Result<f64> {
    if tail.is_heavy() {
        return Err(Error::InvalidParameter("solve_r_exp needs a von-Mises tail"));
    }
    solve_scaling(tail, n, m_scale, p)
}
