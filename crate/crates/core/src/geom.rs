//! Čech filtrations valued by smallest enclosing balls, and connectivity of
//! point clouds at a fixed radius.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::PointCloud;

/// Default cap on the number of simplices in one filtration.
pub const DEFAULT_SIMPLEX_BUDGET: usize = 2_000_000;

/// Relative slack used for ball containment tests.
const CONTAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    fn contains(&self, p: &[f64]) -> bool {
        let d2: f64 = self.center.iter().zip(p).map(|(c, x)| (c - x) * (c - x)).sum();
        d2.sqrt() <= self.radius * (1.0 + CONTAIN_EPS) + CONTAIN_EPS * 1e-3
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when the system is numerically singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())?;
        if a[piv * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for c in col..n {
                    a[row * n + c] -= f * a[col * n + c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut v = b[col];
        for c in col + 1..n {
            v -= a[col * n + c] * b[c];
        }
        b[col] = v / a[col * n + col];
    }
    Some(())
}

/// Smallest ball with all of `support` on its boundary, centered in their
/// affine hull. `None` if the support is affinely dependent.
fn circumball(support: &[&[f64]]) -> Option<Ball> {
    let q0 = support[0];
    if support.len() == 1 {
        return Some(Ball { center: q0.to_vec(), radius: 0.0 });
    }
    let k = support.len() - 1;
    let vs: Vec<Vec<f64>> = support[1..].iter().map(|q| sub(q, q0)).collect();
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            a[i * k + j] = 2.0 * dot(&vs[i], &vs[j]);
        }
        b[i] = dot(&vs[i], &vs[i]);
    }
    solve_dense(&mut a, &mut b, k)?;
    let mut center = q0.to_vec();
    for (lam, v) in b.iter().zip(&vs) {
        for (c, x) in center.iter_mut().zip(v) {
            *c += lam * x;
        }
    }
    let radius = support.iter().map(|q| distance(&center, q)).fold(0.0, f64::max);
    Some(Ball { center, radius })
}

/// Move-to-front Welzl recursion over `order[..end]` with `support` fixed on
/// the boundary.
fn mtf_ball<'a>(points: &[&'a [f64]], order: &mut Vec<usize>, end: usize, support: &mut Vec<&'a [f64]>, dim: usize) -> Option<Ball> {
    let mut ball = if support.is_empty() {
        Ball { center: points[order[0]].to_vec(), radius: 0.0 }
    } else {
        circumball(support)?
    };
    if support.len() == dim + 1 {
        return Some(ball);
    }
    let mut i = 0;
    while i < end {
        let idx = order[i];
        if !ball.contains(points[idx]) {
            support.push(points[idx]);
            let inner = mtf_ball(points, order, i, support, dim);
            support.pop();
            ball = inner?;
            // move to front
            order.remove(i);
            order.insert(0, idx);
        }
        i += 1;
    }
    Some(ball)
}

/// Smallest enclosing ball by exhaustive support enumeration; used when the
/// recursion meets a degenerate support.
fn meb_exhaustive(points: &[&[f64]], dim: usize) -> Ball {
    let n = points.len();
    let mut best: Option<Ball> = None;
    let max_support = (dim + 1).min(n);
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > max_support {
            continue;
        }
        let sup: Vec<&[f64]> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| points[i]).collect();
        if let Some(ball) = circumball(&sup) {
            if best.as_ref().is_some_and(|b| b.radius <= ball.radius) {
                continue;
            }
            if points.iter().all(|p| ball.contains(p)) {
                best = Some(ball);
            }
        }
    }
    best.expect("a diametral ball always encloses")
}

/// Smallest enclosing ball of a point set.
pub fn meb(points: &[&[f64]]) -> Ball {
    assert!(!points.is_empty(), "meb of an empty set");
    let dim = points[0].len();
    if points.len() == 1 {
        return Ball { center: points[0].to_vec(), radius: 0.0 };
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut support = Vec::with_capacity(dim + 1);
    match mtf_ball(points, &mut order, points.len(), &mut support, dim) {
        Some(b) if points.iter().all(|p| b.contains(p)) => b,
        _ if points.len() <= 20 => meb_exhaustive(points, dim),
        _ => panic!("degenerate support in a large point set"),
    }
}

/// Radius of the smallest enclosing ball: the entry radius of the simplex
/// spanned by `points` in the Čech filtration.
pub fn meb_radius(points: &[&[f64]]) -> f64 {
    match points.len() {
        0 | 1 => 0.0,
        2 => 0.5 * distance(points[0], points[1]),
        _ => meb(points).radius,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub vertices: Vec<u32>,
    pub value: f64,
}

impl Simplex {
    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }
}

/// Simplices in filtration order: `(value, dim, vertex list)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    pub simplices: Vec<Simplex>,
    pub max_dim: usize,
    pub point_count: usize,
}

pub fn filtration_order(a: &Simplex, b: &Simplex) -> Ordering {
    a.value
        .partial_cmp(&b.value)
        .unwrap_or(Ordering::Equal)
        .then(a.vertices.len().cmp(&b.vertices.len()))
        .then_with(|| a.vertices.cmp(&b.vertices))
}

/// Čech filtration of `cloud` up to dimension `max_dim`, keeping simplices
/// whose smallest enclosing ball has radius at most `value_cap`.
pub fn cech_filtration(cloud: &PointCloud, max_dim: usize, value_cap: f64) -> Result<Filtration> {
    cech_filtration_with_budget(cloud, max_dim, value_cap, DEFAULT_SIMPLEX_BUDGET)
}

pub fn cech_filtration_with_budget(cloud: &PointCloud, max_dim: usize, value_cap: f64, budget: usize) -> Result<Filtration> {
    let n = cloud.len();
    if n > u32::MAX as usize {
        return Err(Error::BudgetExceeded { limit: budget });
    }
    // neighbor lists of the 2 * cap graph; higher simplices are cliques in it
    let mut nbrs: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut edge_len: Vec<Vec<f64>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let half = 0.5 * distance(cloud.point(i), cloud.point(j));
            if half <= value_cap {
                nbrs[i].push(j as u32);
                edge_len[i].push(half);
            }
        }
    }
    let mut simplices: Vec<Simplex> = Vec::new();
    let push = |s: Simplex, simplices: &mut Vec<Simplex>| -> Result<()> {
        if simplices.len() >= budget {
            return Err(Error::BudgetExceeded { limit: budget });
        }
        simplices.push(s);
        Ok(())
    };
    for i in 0..n {
        push(Simplex { vertices: vec![i as u32], value: 0.0 }, &mut simplices)?;
    }
    if max_dim >= 1 {
        for i in 0..n {
            for (&j, &half) in nbrs[i].iter().zip(&edge_len[i]) {
                push(Simplex { vertices: vec![i as u32, j], value: half }, &mut simplices)?;
            }
        }
    }
    if max_dim >= 2 {
        let is_nbr = |a: u32, b: u32| {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            nbrs[lo as usize].binary_search(&hi).is_ok()
        };
        // grow cliques one vertex at a time, in increasing vertex order
        let mut frontier: Vec<(Vec<u32>, f64)> = simplices
            .iter()
            .filter(|s| s.vertices.len() == 2)
            .map(|s| (s.vertices.clone(), s.value))
            .collect();
        for _dim in 2..=max_dim {
            let mut next = Vec::new();
            for (verts, facet_value) in &frontier {
                let last = *verts.last().unwrap();
                for &c in &nbrs[verts[0] as usize] {
                    if c <= last || !verts[1..].iter().all(|&v| is_nbr(v, c)) {
                        continue;
                    }
                    let mut vs = verts.clone();
                    vs.push(c);
                    let pts: Vec<&[f64]> = vs.iter().map(|&v| cloud.point(v as usize)).collect();
                    let value = simplex_value(&pts).max(*facet_value);
                    if value <= value_cap {
                        next.push((vs, value));
                    }
                }
            }
            // a coface must dominate every facet, not only the one it grew from
            for (vs, value) in next.iter_mut() {
                for skip in 0..vs.len() {
                    let facet: Vec<&[f64]> = vs
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != skip)
                        .map(|(_, &v)| cloud.point(v as usize))
                        .collect();
                    *value = value.max(facet_value_of(&facet));
                }
            }
            next.retain(|(_, v)| *v <= value_cap);
            for (vs, value) in &next {
                push(Simplex { vertices: vs.clone(), value: *value }, &mut simplices)?;
            }
            frontier = next;
        }
    }
    simplices.sort_by(filtration_order);
    Ok(Filtration { simplices, max_dim, point_count: n })
}

/// Filtration value: enclosing radius lifted to dominate all faces.
fn simplex_value(pts: &[&[f64]]) -> f64 {
    meb_radius(pts)
}

fn facet_value_of(pts: &[&[f64]]) -> f64 {
    if pts.len() <= 2 {
        return meb_radius(pts);
    }
    let mut v = meb_radius(pts);
    for skip in 0..pts.len() {
        let sub: Vec<&[f64]> = pts.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, p)| *p).collect();
        v = v.max(facet_value_of(&sub));
    }
    v
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Connected components of the radius-`M` Čech complex (edges of length
/// `< 2M`). Component ids follow the order of each component's first point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComponentPartition {
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ComponentPartition {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Point indices of each component, in point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Ids of components lying entirely in `{|x| >= r}`.
    pub fn isolated_far(&self, cloud: &PointCloud, r: f64) -> Vec<usize> {
        let mut ok = vec![true; self.count()];
        for (i, &l) in self.labels.iter().enumerate() {
            if cloud.norm(i) < r {
                ok[l] = false;
            }
        }
        (0..self.count()).filter(|&c| ok[c]).collect()
    }
}

/// Components at scale `M` by uniform grid hashing with cell side `2M`.
pub fn components_at(cloud: &PointCloud, m_scale: f64) -> ComponentPartition {
    let n = cloud.len();
    if n == 0 {
        return ComponentPartition::default();
    }
    let dim = cloud.dim;
    let cell = 2.0 * m_scale;
    let threshold2 = cell * cell;
    let keys: Vec<i64> = cloud.coords.iter().map(|&x| (x / cell).floor() as i64).collect();
    let key = |i: usize| &keys[i * dim..(i + 1) * dim];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| key(a).cmp(key(b)));
    // runs of equal cell keys
    let mut cells: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || key(order[i]) != key(order[start]) {
            cells.push((start, i));
            start = i;
        }
    }
    let mut uf = UnionFind::new(n);
    let offsets = 3usize.pow(dim as u32);
    let mut probe = vec![0i64; dim];
    for &(s, e) in &cells {
        let base = key(order[s]);
        for code in 0..offsets {
            let mut c = code;
            for (slot, b) in probe.iter_mut().zip(base) {
                *slot = b + (c % 3) as i64 - 1;
                c /= 3;
            }
            // each unordered cell pair once
            if probe.as_slice() < base {
                continue;
            }
            let found = cells.binary_search_by(|&(cs, _)| key(order[cs]).cmp(probe.as_slice()));
            let Ok(ci) = found else { continue };
            let (os, oe) = cells[ci];
            let same = os == s;
            for a in s..e {
                let pa = cloud.point(order[a]);
                let from = if same { a + 1 } else { os };
                for b in from..oe {
                    let pb = cloud.point(order[b]);
                    let d2: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum();
                    if d2 < threshold2 {
                        uf.union(order[a], order[b]);
                    }
                }
            }
        }
    }
    relabel(&mut uf, n)
}

fn relabel(uf: &mut UnionFind, n: usize) -> ComponentPartition {
    let mut root_label = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut sizes = Vec::new();
    for i in 0..n {
        let r = uf.find(i);
        if root_label[r] == usize::MAX {
            root_label[r] = sizes.len();
            sizes.push(0);
        }
        let l = root_label[r];
        sizes[l] += 1;
        labels.push(l);
    }
    ComponentPartition { labels, sizes }
}

/// All-pairs variant of [`components_at`], quadratic in the point count.
pub fn components_naive(cloud: &PointCloud, m_scale: f64) -> ComponentPartition {
    let n = cloud.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if distance(cloud.point(i), cloud.point(j)) < 2.0 * m_scale {
                uf.union(i, j);
            }
        }
    }
    relabel(&mut uf, n)
}

/// Points with `|x| >= r`, order preserved.
pub fn restrict_far(cloud: &PointCloud, r: f64) -> PointCloud {
    if r <= 0.0 {
        return cloud.clone();
    }
    cloud.filter(|p| crate::model::norm(p) >= r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud2(pts: &[[f64; 2]]) -> PointCloud {
        PointCloud::new(2, pts.iter().flat_map(|p| p.iter().copied()).collect(), 0, 0.0)
    }

    #[test]
    fn meb_small_cases() {
        assert_eq!(meb_radius(&[&[1.0, 2.0][..]]), 0.0);
        let s3 = 3.0f64.sqrt();
        let tri: [&[f64]; 3] = [&[0.0, 0.0], &[2.0, 0.0], &[1.0, s3]];
        assert!((meb_radius(&tri) - 2.0 / s3).abs() < 1e-12);
        let obtuse: [&[f64]; 3] = [&[0.0, 0.0], &[4.0, 0.0], &[1.0, 0.1]];
        assert!((meb_radius(&obtuse) - 2.0).abs() < 1e-12);
        let collinear: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0]];
        assert!((meb_radius(&collinear) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn meb_duplicate_points() {
        let pts: [&[f64]; 4] = [&[1.0, 1.0], &[1.0, 1.0], &[3.0, 1.0], &[1.0, 1.0]];
        assert!((meb_radius(&pts) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_filtration() {
        let f = cech_filtration(&cloud2(&[[0.0, 0.0], [2.0, 0.0]]), 1, f64::INFINITY).unwrap();
        let vals: Vec<(Vec<u32>, f64)> = f.simplices.iter().map(|s| (s.vertices.clone(), s.value)).collect();
        assert_eq!(vals, vec![(vec![0], 0.0), (vec![1], 0.0), (vec![0, 1], 1.0)]);
    }

    #[test]
    fn value_cap_zero_keeps_vertices() {
        let f = cech_filtration(&cloud2(&[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]), 2, 0.0).unwrap();
        assert_eq!(f.simplices.len(), 3);
        assert!(f.simplices.iter().all(|s| s.dim() == 0));
    }

    #[test]
    fn unit_square_filtration() {
        let f = cech_filtration(&cloud2(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), 2, f64::INFINITY).unwrap();
        let by_dim = |d: usize| f.simplices.iter().filter(|s| s.dim() == d).count();
        assert_eq!((by_dim(0), by_dim(1), by_dim(2)), (4, 6, 4));
        let edges: Vec<f64> = f.simplices.iter().filter(|s| s.dim() == 1).map(|s| s.value).collect();
        assert_eq!(edges.iter().filter(|&&v| (v - 0.5).abs() < 1e-15).count(), 4);
        assert_eq!(edges.iter().filter(|&&v| (v - 0.5f64.sqrt()).abs() < 1e-15).count(), 2);
        // each 3-subset of the square is a right triangle: diametral ball of the diagonal
        for s in f.simplices.iter().filter(|s| s.dim() == 2) {
            assert!((s.value - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_enforced() {
        let pts: Vec<[f64; 2]> = (0..30).map(|i| [i as f64 * 0.01, 0.0]).collect();
        let err = cech_filtration_with_budget(&cloud2(&pts), 2, f64::INFINITY, 100).unwrap_err();
        assert_eq!(err, Error::BudgetExceeded { limit: 100 });
    }

    #[test]
    fn filtration_is_monotone_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let pts: Vec<[f64; 3]> = (0..7).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let cloud = PointCloud::new(3, pts.iter().flat_map(|p| p.iter().copied()).collect(), 0, 0.0);
            let f = cech_filtration(&cloud, 3, f64::INFINITY).unwrap();
            let pos: alloc::collections::BTreeMap<Vec<u32>, (usize, f64)> =
                f.simplices.iter().enumerate().map(|(i, s)| (s.vertices.clone(), (i, s.value))).collect();
            for (i, s) in f.simplices.iter().enumerate() {
                if s.vertices.len() < 2 {
                    continue;
                }
                for skip in 0..s.vertices.len() {
                    let facet: Vec<u32> = s.vertices.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &v)| v).collect();
                    let (fi, fv) = pos[&facet];
                    assert!(fv <= s.value && fi < i);
                }
                if s.dim() == 1 {
                    let d = distance(cloud.point(s.vertices[0] as usize), cloud.point(s.vertices[1] as usize));
                    assert_eq!(s.value, 0.5 * d);
                }
            }
            // 7 + 21 + 35 + 35
            assert_eq!(f.simplices.len(), 98);
        }
    }

    #[test]
    fn components_examples() {
        let p = components_at(&cloud2(&[[0.0, 0.0], [1.9, 0.0]]), 1.0);
        assert_eq!(p.count(), 1);
        let p = components_at(&cloud2(&[[0.0, 0.0], [3.9, 0.0]]), 1.0);
        assert_eq!(p.count(), 2);
        let p = components_at(&cloud2(&[[0.0, 0.0], [1.9, 0.0], [3.8, 0.0], [10.0, 0.0]]), 1.0);
        assert_eq!(p.labels, vec![0, 0, 0, 1]);
        assert_eq!(p.sizes, vec![3, 1]);
        let empty = PointCloud::new(2, Vec::new(), 0, 0.0);
        assert_eq!(components_at(&empty, 1.0).count(), 0);
    }

    #[test]
    fn components_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let n = rng.random_range(0..500);
            let side = 5.0 + trial as f64;
            let coords: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>() * side - side / 2.0).collect();
            let cloud = PointCloud::new(2, coords, 0, 0.0);
            let m = rng.random_range(0.1..1.0);
            let fast = components_at(&cloud, m);
            let slow = components_naive(&cloud, m);
            assert_eq!(fast, slow);
            assert_eq!(fast.sizes.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn restrict_far_cases() {
        let c = cloud2(&[[0.0, 1.0], [3.0, 4.0], [0.5, 0.5], [6.0, 0.0]]);
        assert_eq!(restrict_far(&c, 0.0), c);
        assert!(restrict_far(&c, 100.0).is_empty());
        let far = restrict_far(&c, 5.0);
        assert_eq!(far.coords, vec![3.0, 4.0, 6.0, 0.0]);
    }

    #[test]
    fn isolated_far_components() {
        let c = cloud2(&[[10.0, 0.0], [11.0, 0.0], [0.0, 0.0], [0.0, 10.0], [0.0, 8.5]]);
        let p = components_at(&c, 1.0);
        assert_eq!(p.isolated_far(&c, 9.0), vec![0]);
    }
}
