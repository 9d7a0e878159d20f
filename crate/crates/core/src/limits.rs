//! Limiting objects of the crackle processes: the regions `Δ_{k,m}`,
//! `B_{k,m}`, `I_t`, `J_t`, the constants `π_{k,m}` and `b_{k,m}`, and Monte
//! Carlo estimates of the limiting Poisson mean measures.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{distance, UnionFind};
use crate::math::{factorial, sphere_area, Welford};
use crate::model::{random_direction, PointCloud, TailModel};
use crate::ph::{naive_diagram_oracle, point_set_pairs};
use crate::rng::stream_rng;

/// Boundary tolerance used by [`Shape::contains`].
pub const CONTAINS_TOL: f64 = 1e-9;

/// `a x + b y <= c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfPlane {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    fn slack(&self, x: f64, y: f64) -> f64 {
        self.c - self.a * x - self.b * y
    }
}

/// Intersection of half-planes. Always contains the constraints of `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Convex {
    pub planes: Vec<HalfPlane>,
}

/// Far corner of the clipping window used to turn unbounded pieces into
/// polygons for bounding boxes, areas and distances.
const WINDOW: f64 = 1e6;

impl Convex {
    fn delta() -> Self {
        Self { planes: vec![HalfPlane::new(-1.0, 0.0, 0.0), HalfPlane::new(1.0, -1.0, 0.0)] }
    }

    fn with(mut self, h: HalfPlane) -> Self {
        self.planes.push(h);
        self
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.planes.iter().all(|h| h.slack(x, y) >= -CONTAINS_TOL)
    }

    fn inset(&self, margin: f64) -> Self {
        let planes = self
            .planes
            .iter()
            .map(|h| HalfPlane { c: h.c - margin * (h.a * h.a + h.b * h.b).sqrt(), ..*h })
            .collect();
        Self { planes }
    }

    /// Vertices (counter-clockwise) of the piece clipped to the window.
    pub fn polygon(&self) -> Vec<(f64, f64)> {
        let mut poly = vec![(-1.0, -1.0), (WINDOW, -1.0), (WINDOW, WINDOW), (-1.0, WINDOW)];
        for h in &self.planes {
            if poly.is_empty() {
                break;
            }
            let mut out = Vec::with_capacity(poly.len() + 1);
            for i in 0..poly.len() {
                let p = poly[i];
                let q = poly[(i + 1) % poly.len()];
                let (sp, sq) = (h.slack(p.0, p.1), h.slack(q.0, q.1));
                if sp >= 0.0 {
                    out.push(p);
                }
                if (sp >= 0.0) != (sq >= 0.0) {
                    let t = sp / (sp - sq);
                    out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
                }
            }
            poly = out;
        }
        poly
    }

    pub fn area(&self) -> f64 {
        let p = self.polygon();
        let n = p.len();
        if n < 3 {
            return 0.0;
        }
        0.5 * (0..n).map(|i| p[i].0 * p[(i + 1) % n].1 - p[(i + 1) % n].0 * p[i].1).sum::<f64>().abs()
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            return 0.0;
        }
        let p = self.polygon();
        match p.len() {
            0 => f64::INFINITY,
            1 => ((x - p[0].0).powi(2) + (y - p[0].1).powi(2)).sqrt(),
            n => (0..n).map(|i| segment_distance((x, y), p[i], p[(i + 1) % n])).fold(f64::INFINITY, f64::min),
        }
    }
}

fn segment_distance(z: (f64, f64), p: (f64, f64), q: (f64, f64)) -> f64 {
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((z.0 - p.0) * dx + (z.1 - p.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (p.0 + t * dx, p.1 + t * dy);
    ((z.0 - cx).powi(2) + (z.1 - cy).powi(2)).sqrt()
}

/// A resolved region: a finite union of convex pieces, possibly widened to
/// an open envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub pieces: Vec<Convex>,
    pub envelope: f64,
}

impl Shape {
    pub fn empty() -> Self {
        Self { pieces: Vec::new(), envelope: 0.0 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        if self.envelope > 0.0 {
            let in_delta = x >= -CONTAINS_TOL && y - x >= -CONTAINS_TOL;
            return in_delta && self.pieces.iter().any(|c| c.distance(x, y) < self.envelope);
        }
        self.pieces.iter().any(|c| c.contains(x, y))
    }

    /// Bounding box `(x0, x1, y0, y1)` of the window-clipped region; `None`
    /// when empty.
    pub fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        let mut acc: Option<(f64, f64, f64, f64)> = None;
        for p in self.pieces.iter().flat_map(|c| c.polygon()) {
            acc = Some(match acc {
                None => (p.0, p.0, p.1, p.1),
                Some((a, b, c, d)) => (a.min(p.0), b.max(p.0), c.min(p.1), d.max(p.1)),
            });
        }
        acc.map(|(a, b, c, d)| (a - self.envelope, b + self.envelope, c - self.envelope, d + self.envelope))
    }

    pub fn is_bounded(&self) -> bool {
        self.bbox().is_some_and(|(_, x1, _, y1)| x1 < 0.5 * WINDOW && y1 < 0.5 * WINDOW)
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.iter().all(|c| c.polygon().len() < 3)
    }

    /// `T(F) = sup (y - x)` over the region; zero when empty.
    pub fn max_lifespan(&self) -> f64 {
        self.pieces.iter().flat_map(|c| c.polygon()).map(|(x, y)| y - x).fold(0.0, f64::max)
    }

    /// Centers of the `eps`-grid cells (aligned at the bounding box corner)
    /// that lie in the region.
    pub fn grid_centers(&self, eps: f64) -> Vec<(f64, f64)> {
        let Some((x0, x1, y0, y1)) = self.bbox() else { return Vec::new() };
        let nx = ((x1 - x0) / eps).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / eps).ceil().max(1.0) as usize;
        let mut out = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                let (x, y) = (x0 + (i as f64 + 0.5) * eps, y0 + (j as f64 + 0.5) * eps);
                if self.contains(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Region constructors, resolved against a [`ConstantsTable`].
#[derive(Debug, Clone, PartialEq)]
pub enum RegionSpec {
    Delta,
    DeltaKM { k: usize, m: usize },
    BKM { k: usize, m: usize },
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    IT { t: f64 },
    JT { t: f64, k: usize, p: usize },
    /// Pairs with lifespan `y - x >= l`.
    MinLifespan { l: f64 },
    Intersection(Vec<RegionSpec>),
    Union(Vec<RegionSpec>),
    /// Erosion by `margin` (exact for convex pieces).
    Inset { region: Box<RegionSpec>, margin: f64 },
    /// Open `eps`-envelope of a region, restricted to `Δ`.
    Envelope { region: Box<RegionSpec>, eps: f64 },
}

impl RegionSpec {
    pub fn resolve(&self, table: &ConstantsTable) -> Result<Shape> {
        let single = |c: Convex| Ok(Shape { pieces: vec![c], envelope: 0.0 });
        match self {
            RegionSpec::Delta => single(Convex::delta()),
            RegionSpec::DeltaKM { k, m } => {
                let pi = table.pi(*k, *m)?;
                single(Convex::delta().with(HalfPlane::new(-pi, 1.0, 0.0)))
            }
            RegionSpec::BKM { k, m } => {
                let e = table.get(*k, *m)?;
                single(Convex::delta().with(HalfPlane::new(-e.pi, 1.0, 0.0)).with(HalfPlane::new(1.0, 0.0, e.b)))
            }
            &RegionSpec::Rect { x0, x1, y0, y1 } => single(
                Convex::delta()
                    .with(HalfPlane::new(-1.0, 0.0, -x0))
                    .with(HalfPlane::new(1.0, 0.0, x1))
                    .with(HalfPlane::new(0.0, -1.0, -y0))
                    .with(HalfPlane::new(0.0, 1.0, y1)),
            ),
            &RegionSpec::IT { t } => single(Convex::delta().with(HalfPlane::new(1.0, 0.0, t))),
            &RegionSpec::MinLifespan { l } => single(Convex::delta().with(HalfPlane::new(1.0, -1.0, -l))),
            &RegionSpec::JT { t, k, p } => {
                let pi_p = table.pi(k, p)?;
                let floor = lifespan_floor(table, t, k, p)?;
                single(
                    Convex::delta()
                        .with(HalfPlane::new(-pi_p, 1.0, 0.0))
                        .with(HalfPlane::new(1.0, 0.0, t))
                        .with(HalfPlane::new(1.0, -1.0, -floor)),
                )
            }
            RegionSpec::Intersection(parts) => {
                let mut acc = Shape { pieces: vec![Convex::delta()], envelope: 0.0 };
                for part in parts {
                    let s = part.resolve(table)?;
                    if s.envelope > 0.0 {
                        return Err(Error::InvalidParameter("envelopes cannot be intersected"));
                    }
                    let mut pieces = Vec::new();
                    for a in &acc.pieces {
                        for b in &s.pieces {
                            let mut planes = a.planes.clone();
                            planes.extend_from_slice(&b.planes);
                            pieces.push(Convex { planes });
                        }
                    }
                    acc.pieces = pieces;
                }
                Ok(acc)
            }
            RegionSpec::Union(parts) => {
                let mut pieces = Vec::new();
                for part in parts {
                    let s = part.resolve(table)?;
                    if s.envelope > 0.0 {
                        return Err(Error::InvalidParameter("envelopes cannot be united"));
                    }
                    pieces.extend(s.pieces);
                }
                Ok(Shape { pieces, envelope: 0.0 })
            }
            RegionSpec::Inset { region, margin } => {
                let s = region.resolve(table)?;
                Ok(Shape { pieces: s.pieces.iter().map(|c| c.inset(*margin)).collect(), envelope: s.envelope })
            }
            RegionSpec::Envelope { region, eps } => {
                if !(*eps > 0.0) {
                    return Err(Error::InvalidParameter("envelope width must be positive"));
                }
                let s = region.resolve(table)?;
                Ok(Shape { pieces: s.pieces, envelope: *eps })
            }
        }
    }
}

/// `T(Δ_{k,p-1} ∩ I_t) = (π_{k,p-1} - 1) t`, or zero when `p - 1 < k + 2`.
pub fn lifespan_floor(table: &ConstantsTable, t: f64, k: usize, p: usize) -> Result<f64> {
    if p < k + 3 {
        return Ok(0.0);
    }
    Ok((table.pi(k, p - 1)? - 1.0) * t)
}

/// Membership test for a region specification.
pub fn region_contains(region: &RegionSpec, table: &ConstantsTable, point: (f64, f64)) -> Result<bool> {
    Ok(region.resolve(table)?.contains(point.0, point.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionConstants {
    pub k: usize,
    pub m: usize,
    /// Ambient dimension of the configurations.
    pub d: usize,
    pub pi: f64,
    pub b: f64,
    pub method: String,
    pub tol: f64,
}

pub const CONSTANTS_VERSION: u32 = 1;

/// Versioned table of `(k, m) -> (π_{k,m}, b_{k,m})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsTable {
    pub version: u32,
    pub entries: Vec<RegionConstants>,
}

impl Default for ConstantsTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ConstantsTable {
    /// Shipped values. `(1, 3)` is analytic; the rest are best values found
    /// by [`optimize_pi`] / [`optimize_b`] and are lower bounds on the sups.
    pub fn builtin() -> Self {
        let s3 = 3f64.sqrt();
        let e = |k, m, d, pi, b, method: &str, tol| RegionConstants { k, m, d, pi, b, method: method.into(), tol };
        Self {
            version: CONSTANTS_VERSION,
            entries: vec![
                e(1, 3, 2, 2.0 / s3, 2f64.sqrt(), "analytic", 0.0),
                e(1, 4, 2, BUILTIN_PI_1_4, BUILTIN_B_1_4, "optimizer", 1e-6),
                e(2, 4, 3, BUILTIN_PI_2_4, BUILTIN_B_2_4, "optimizer", 1e-6),
            ],
        }
    }

    pub fn get(&self, k: usize, m: usize) -> Result<&RegionConstants> {
        self.entries.iter().find(|e| e.k == k && e.m == m).ok_or(Error::Unsupported { k, m })
    }

    pub fn pi(&self, k: usize, m: usize) -> Result<f64> {
        self.get(k, m).map(|e| e.pi)
    }

    pub fn b(&self, k: usize, m: usize) -> Result<f64> {
        self.get(k, m).map(|e| e.b)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# crackle region constants\nversion {}\nk m d pi b method tol\n", self.version);
        for e in &self.entries {
            s.push_str(&format!("{} {} {} {:.16e} {:.16e} {} {:e}\n", e.k, e.m, e.d, e.pi, e.b, e.method, e.tol));
        }
        s
    }

    /// Parses the format written by [`ConstantsTable::to_text`]. Errors carry
    /// the 1-based line number.
    pub fn parse(text: &str) -> core::result::Result<Self, (usize, &'static str)> {
        let mut version = None;
        let mut entries = Vec::new();
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f[0] == "version" {
                let v = f.get(1).and_then(|v| v.parse().ok()).ok_or((lineno, "bad version"))?;
                if v != CONSTANTS_VERSION {
                    return Err((lineno, "unsupported version"));
                }
                version = Some(v);
                continue;
            }
            if f[0] == "k" {
                header = true;
                continue;
            }
            if !header || f.len() != 7 {
                return Err((lineno, "expected: k m d pi b method tol"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| (lineno, "bad integer"));
            let real = |s: &str| s.parse::<f64>().map_err(|_| (lineno, "bad number"));
            entries.push(RegionConstants {
                k: int(f[0])?,
                m: int(f[1])?,
                d: int(f[2])?,
                pi: real(f[3])?,
                b: real(f[4])?,
                method: f[5].into(),
                tol: real(f[6])?,
            });
        }
        Ok(Self { version: version.ok_or((0, "missing version"))?, entries })
    }
}

// Frozen from `optimize_pi` / `optimize_b` with the default options. The
// `(2, 4)` ratio is the regular tetrahedron's `3 / (2 sqrt 2)`.
const BUILTIN_PI_1_4: f64 = 1.4142135623730954;
const BUILTIN_B_1_4: f64 = 1.9999983670327894;
const BUILTIN_PI_2_4: f64 = 1.0606601717798192;
const BUILTIN_B_2_4: f64 = 1.9966676568109678;

/// Nelder-Mead settings for the region-constant search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub restarts: usize,
    pub max_evals: usize,
    pub seed: u64,
    /// Largest `m * d` accepted.
    pub max_coords: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { restarts: 200, max_evals: 4000, seed: 1, max_coords: 24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub value: f64,
    /// Best configuration, `m` points of dimension `d`, row-major.
    pub config: Vec<f64>,
    pub evaluations: usize,
}

fn max_ratio(coords: &[f64], d: usize, k: usize) -> f64 {
    let cloud = PointCloud::new(d, coords.to_vec(), 0, 0.0);
    match point_set_pairs(&cloud, k) {
        Ok(pairs) => pairs.iter().filter(|p| p.0 > 0.0).map(|p| p.1 / p.0).fold(0.0, f64::max),
        Err(_) => 0.0,
    }
}

fn max_birth(coords: &[f64], d: usize, k: usize) -> f64 {
    let cloud = PointCloud::new(d, coords.to_vec(), 0, 0.0);
    match point_set_pairs(&cloud, k) {
        Ok(pairs) => pairs.iter().map(|p| p.0).fold(0.0, f64::max),
        Err(_) => 0.0,
    }
}

/// Longest edge of a Euclidean minimum spanning tree (Prim).
fn mst_bottleneck(coords: &[f64], d: usize) -> f64 {
    let n = coords.len() / d;
    if n < 2 {
        return 0.0;
    }
    let pt = |i: usize| &coords[i * d..(i + 1) * d];
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = distance(pt(0), pt(j));
    }
    let mut longest = 0.0f64;
    for _ in 1..n {
        let (j, dj) = (0..n).filter(|&j| !in_tree[j]).map(|j| (j, best[j])).fold((0, f64::INFINITY), |a, b| {
            if b.1 < a.1 {
                b
            } else {
                a
            }
        });
        longest = longest.max(dj);
        in_tree[j] = true;
        for l in 0..n {
            if !in_tree[l] {
                best[l] = best[l].min(distance(pt(j), pt(l)));
            }
        }
    }
    longest
}

/// Minimizes `f` from `x0` with adaptive Nelder-Mead coefficients.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    let mut order: Vec<usize> = (0..=n).collect();
    while evals < max_evals {
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        if (values[worst] - values[best]).abs() <= 1e-13 * (1.0 + values[best].abs()) {
            let size = simplex.iter().map(|v| distance(v, &simplex[best])).fold(0.0, f64::max);
            if size < 1e-10 {
                break;
            }
        }
        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < values[best] {
            let xe = along(alpha * beta);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
        } else if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
        } else {
            let (xc, fc) = if fr < values[worst] {
                let x = along(alpha * gamma);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-gamma);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[worst].min(fr) {
                simplex[worst] = xc;
                values[worst] = fc;
            } else {
                let b = simplex[best].clone();
                for &i in &order[1..] {
                    let v: Vec<f64> = b.iter().zip(&simplex[i]).map(|(bx, x)| bx + delta * (x - bx)).collect();
                    values[i] = f(&v);
                    simplex[i] = v;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal)).unwrap();
    (simplex[best].clone(), values[best], evals)
}

fn check_budget(k: usize, m: usize, d: usize, opts: &OptimizerOptions) -> Result<()> {
    if m < k + 2 || d < k + 1 || m * d > opts.max_coords {
        return Err(Error::Unsupported { k, m });
    }
    Ok(())
}

fn multistart<F>(m: usize, d: usize, opts: &OptimizerOptions, objective: F) -> OptimizerResult
where
    F: Fn(&[f64]) -> f64,
{
    let mut best = OptimizerResult { value: f64::NEG_INFINITY, config: Vec::new(), evaluations: 0 };
    for r in 0..opts.restarts {
        let mut rng = stream_rng(opts.seed, r as u64);
        let x0: Vec<f64> = (0..m * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (x, _, evals) = nelder_mead(|x| -objective(x), &x0, 0.3, opts.max_evals);
        // polish from the end point
        let (x, _, more) = nelder_mead(|x| -objective(x), &x, 0.01, opts.max_evals.min(2000));
        best.evaluations += evals + more;
        let value = objective(&x);
        if value > best.value {
            best.value = value;
            best.config = x;
        }
    }
    best
}

/// Numerical sup of death/birth over `PH_k` pairs of `m`-point
/// configurations in `R^d` (a lower bound on `π_{k,m}`).
pub fn optimize_pi(k: usize, m: usize, d: usize, opts: &OptimizerOptions) -> Result<OptimizerResult> {
    check_budget(k, m, d, opts)?;
    Ok(multistart(m, d, opts, |x| max_ratio(x, d, k)))
}

/// Numerical sup of the birth over `PH_k` pairs of `m`-point configurations
/// connected at unit radius. Connectivity is enforced by an exact penalty on
/// the spanning-tree bottleneck; the returned configuration is shrunk until it
/// is strictly connected.
pub fn optimize_b(k: usize, m: usize, d: usize, opts: &OptimizerOptions) -> Result<OptimizerResult> {
    check_budget(k, m, d, opts)?;
    let penalized = |x: &[f64]| max_birth(x, d, k) - 10.0 * (mst_bottleneck(x, d) - 2.0).max(0.0);
    let mut res = multistart(m, d, opts, penalized);
    let bottleneck = mst_bottleneck(&res.config, d);
    let limit = 2.0 * (1.0 - 1e-12);
    if bottleneck >= limit {
        let s = limit / bottleneck;
        res.config.iter_mut().for_each(|v| *v *= s);
    }
    debug_assert!(mst_bottleneck(&res.config, d) < 2.0);
    res.value = max_birth(&res.config, d, k);
    Ok(res)
}

/// Looks up `π_{k,m}` in the shipped table.
pub fn pi_km(k: usize, m: usize) -> Result<f64> {
    if m < k + 2 {
        return Err(Error::InvalidParameter("m must be at least k + 2"));
    }
    ConstantsTable::builtin().pi(k, m)
}

/// Looks up `b_{k,m}` in the shipped table.
pub fn b_km(k: usize, m: usize) -> Result<f64> {
    if m < k + 2 {
        return Err(Error::InvalidParameter("m must be at least k + 2"));
    }
    ConstantsTable::builtin().b(k, m)
}

/// Monte Carlo estimate of a limiting mean measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    /// Analytic prefactor in front of the integral.
    pub coefficient: f64,
}

/// Which limiting intensity to integrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureKind {
    Heavy { alpha: f64 },
    /// Exponential-type tail with `c^{-1}` (zero for `c = ∞`).
    Exponential { c_inv: f64 },
}

/// Samples per Monte Carlo batch; batches own independent RNG streams.
pub const BATCH_SIZE: u64 = 4096;

/// Fewest accepted samples for which an estimate is reported.
pub const MIN_ACCEPTED: u64 = 100;

/// Monte Carlo integration of the limiting mean measure over several regions
/// on one shared random stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMeasure {
    pub kind: MeasureKind,
    pub k: usize,
    pub p: usize,
    pub dim: usize,
    pub samples: u64,
    pub seed: u64,
}

/// Per-batch accumulators, one per region.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTally {
    pub stats: Vec<Welford>,
    pub accepted: u64,
}

impl MeanMeasure {
    pub fn heavy(k: usize, p: usize, alpha: f64, dim: usize, samples: u64, seed: u64) -> Result<Self> {
        if !(alpha > dim as f64) {
            return Err(Error::NonIntegrable { alpha, dim });
        }
        Self::checked(MeasureKind::Heavy { alpha }, k, p, dim, samples, seed)
    }

    /// `c` may be `f64::INFINITY`.
    pub fn exponential(k: usize, p: usize, c: f64, dim: usize, samples: u64, seed: u64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter("c must lie in (0, inf]"));
        }
        Self::checked(MeasureKind::Exponential { c_inv: 1.0 / c }, k, p, dim, samples, seed)
    }

    fn checked(kind: MeasureKind, k: usize, p: usize, dim: usize, samples: u64, seed: u64) -> Result<Self> {
        if k == 0 || p < k + 2 {
            return Err(Error::InvalidParameter("need k >= 1 and p >= k + 2"));
        }
        if p > crate::ph::ORACLE_MAX_POINTS {
            return Err(Error::TooLarge { limit: crate::ph::ORACLE_MAX_POINTS, got: p });
        }
        if dim == 0 || samples == 0 {
            return Err(Error::InvalidParameter("dim and samples must be positive"));
        }
        Ok(Self { kind, k, p, dim, samples, seed })
    }

    /// Half-width of the proposal box for each `y_i`.
    pub fn box_half_width(&self) -> f64 {
        2.0 * (self.p - 1) as f64
    }

    pub fn box_volume(&self) -> f64 {
        (2.0 * self.box_half_width()).powi((self.dim * (self.p - 1)) as i32)
    }

    /// Prefactor of the `dy` integral.
    pub fn coefficient(&self) -> f64 {
        let s = sphere_area(self.dim);
        let pf = factorial(self.p);
        match self.kind {
            MeasureKind::Heavy { alpha } => s / (pf * (alpha * self.p as f64 - self.dim as f64)),
            MeasureKind::Exponential { .. } => s / (pf * self.p as f64),
        }
    }

    pub fn batch_count(&self) -> u64 {
        self.samples.div_ceil(BATCH_SIZE)
    }

    /// Runs batch `b`. The `y` draws use stream `2b` and the `(ρ, θ)` draws
    /// stream `2b + 1`, so heavy and exponential runs with the same seed see
    /// the same configurations.
    pub fn run_batch(&self, b: u64, regions: &[Shape]) -> BatchTally {
        let start = b * BATCH_SIZE;
        let count = BATCH_SIZE.min(self.samples.saturating_sub(start));
        let mut y_rng = stream_rng(self.seed, 2 * b);
        let mut extra_rng = stream_rng(self.seed, 2 * b + 1);
        let d = self.dim;
        let h = self.box_half_width();
        let scale = self.coefficient() * self.box_volume();
        let exp_p = Exp::new(self.p as f64).unwrap();
        let mut pts = vec![0.0; self.p * d];
        let mut theta = vec![0.0; d];
        let mut stats = vec![Welford::new(); regions.len()];
        let mut accepted = 0;
        let mut counts = vec![0u32; regions.len()];
        for _ in 0..count {
            for v in pts[d..].iter_mut() {
                *v = y_rng.random_range(-h..h);
            }
            let mut weight = scale;
            if let MeasureKind::Exponential { c_inv } = self.kind {
                let rho: f64 = exp_p.sample(&mut extra_rng);
                random_direction(&mut extra_rng, &mut theta);
                if c_inv > 0.0 {
                    let mut sum = 0.0;
                    for y in pts[d..].chunks_exact(d) {
                        let proj: f64 = y.iter().zip(&theta).map(|(a, b)| a * b).sum();
                        if rho + c_inv * proj < 0.0 {
                            weight = 0.0;
                        }
                        sum += proj;
                    }
                    weight *= (-c_inv * sum).exp();
                }
            }
            counts.iter_mut().for_each(|c| *c = 0);
            if unit_connected(&pts, d) {
                accepted += 1;
                if weight > 0.0 {
                    let refs: Vec<&[f64]> = pts.chunks_exact(d).collect();
                    let pairs = naive_diagram_oracle(&refs, self.k).expect("p is bounded by the oracle limit");
                    for pair in &pairs {
                        for (c, shape) in counts.iter_mut().zip(regions) {
                            if shape.contains(pair.birth, pair.death) {
                                *c += 1;
                            }
                        }
                    }
                }
            }
            for (w, &c) in stats.iter_mut().zip(&counts) {
                w.push(if c == 0 { 0.0 } else { weight * c as f64 });
            }
        }
        BatchTally { stats, accepted }
    }

    /// Merges batch tallies in the given (batch) order.
    pub fn finish<I: IntoIterator<Item = BatchTally>>(&self, tallies: I, regions: usize) -> Result<Vec<LimitEstimate>> {
        let mut stats = vec![Welford::new(); regions];
        let mut accepted = 0;
        for t in tallies {
            accepted += t.accepted;
            for (a, b) in stats.iter_mut().zip(&t.stats) {
                a.merge(b);
            }
        }
        if accepted < MIN_ACCEPTED {
            return Err(Error::InsufficientSamples { accepted, needed: MIN_ACCEPTED });
        }
        let coefficient = self.coefficient();
        Ok(stats
            .iter()
            .map(|w| LimitEstimate {
                value: w.mean.max(0.0),
                stderr: w.stderr(),
                samples: w.count,
                accepted,
                acceptance_rate: accepted as f64 / w.count as f64,
                coefficient,
            })
            .collect())
    }

    /// Sequential evaluation of all batches.
    pub fn estimate(&self, regions: &[Shape]) -> Result<Vec<LimitEstimate>> {
        let tallies = (0..self.batch_count()).map(|b| self.run_batch(b, regions));
        self.finish(tallies, regions.len())
    }
}

/// `g_1`: the graph on the points with edges of length `< 2` is connected.
pub fn unit_connected(coords: &[f64], d: usize) -> bool {
    let n = coords.len() / d;
    let mut uf = UnionFind::new(n);
    let mut joins = 0;
    for i in 0..n {
        for j in i + 1..n {
            if distance(&coords[i * d..(i + 1) * d], &coords[j * d..(j + 1) * d]) < 2.0 && uf.union(i, j) {
                joins += 1;
            }
        }
    }
    joins + 1 == n
}

/// Heavy-tail limiting mean measure of one region.
pub fn mean_measure_heavy(
    a: &Shape,
    k: usize,
    p: usize,
    alpha: f64,
    d: usize,
    samples: u64,
    seed: u64,
) -> Result<LimitEstimate> {
    let job = MeanMeasure::heavy(k, p, alpha, d, samples, seed)?;
    Ok(job.estimate(core::slice::from_ref(a))?[0])
}

/// Exponential-tail limiting mean measure of one region; `c = ∞` allowed.
pub fn mean_measure_exp(a: &Shape, k: usize, p: usize, c: f64, d: usize, samples: u64, seed: u64) -> Result<LimitEstimate> {
    let job = MeanMeasure::exponential(k, p, c, d, samples, seed)?;
    Ok(job.estimate(core::slice::from_ref(a))?[0])
}

/// Density mass `Q_r` of a union of balls, with its standard error.
pub fn ball_union_mass(centers: &[&[f64]], r: f64, tail: &TailModel, samples: u64, seed: u64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive"));
    }
    if centers.is_empty() || samples == 0 {
        return Ok((0.0, 0.0));
    }
    let d = tail.dim;
    let lo: Vec<f64> = (0..d).map(|j| centers.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min) - r).collect();
    let hi: Vec<f64> = (0..d).map(|j| centers.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max) + r).collect();
    let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let mut rng = stream_rng(seed, 0);
    let mut z = vec![0.0; d];
    let mut w = Welford::new();
    for _ in 0..samples {
        for (j, v) in z.iter_mut().enumerate() {
            *v = rng.random_range(lo[j]..hi[j]);
        }
        let inside = centers.iter().any(|c| distance(c, &z) <= r);
        w.push(if inside { volume * tail.density_at(&z) } else { 0.0 });
    }
    Ok((w.mean, w.stderr()))
}
