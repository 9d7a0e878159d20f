//! Persistence pairs by mod-2 boundary matrix reduction, and the crackle
//! diagrams assembled from far, isolated connected components.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geom::{self, cech_filtration, Filtration};
use crate::model::{PointCloud, ScalingPlan};

/// Default upper bound on the size of a component whose homology is computed.
pub const DEFAULT_M_CAP: usize = 16;

/// Pairs with `death - birth` at or below this (relative) gap are dropped.
const ZERO_PERSISTENCE: f64 = 1e-12;

fn is_zero_persistence(birth: f64, death: f64) -> bool {
    death - birth <= ZERO_PERSISTENCE * death.abs().max(1e-300)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePair {
    pub birth: f64,
    pub death: f64,
    pub dim: usize,
    /// Size `m` of the generating component.
    pub component_size: usize,
    pub component_id: usize,
}

impl PersistencePair {
    pub fn lifespan(&self) -> f64 {
        self.death - self.birth
    }
}

/// Column-reduces the boundary matrix of `(k+1)`-simplices against
/// `k`-simplices and returns the finite dimension-`k` pairs
/// `(birth, death)` with positive persistence.
pub fn reduce(filtration: &Filtration, k: usize) -> Result<Vec<(f64, f64)>> {
    if filtration.max_dim <= k {
        return Err(Error::InsufficientDim { max_dim: filtration.max_dim, needed: k + 1 });
    }
    let index: BTreeMap<&[u32], usize> = filtration
        .simplices
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dim() == k)
        .map(|(i, s)| (s.vertices.as_slice(), i))
        .collect();
    // pivot row -> reduced column owning it
    let mut pivots: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut facet = Vec::with_capacity(k + 1);
    for (col_idx, s) in filtration.simplices.iter().enumerate() {
        if s.dim() != k + 1 {
            continue;
        }
        let mut column: Vec<usize> = (0..s.vertices.len())
            .map(|skip| {
                facet.clear();
                facet.extend(s.vertices.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &v)| v));
                index[facet.as_slice()]
            })
            .collect();
        column.sort_unstable();
        while let Some(&low) = column.last() {
            match pivots.get(&low) {
                Some(other) => column = symmetric_difference(&column, other),
                None => break,
            }
        }
        if let Some(&low) = column.last() {
            let birth = filtration.simplices[low].value;
            let death = filtration.simplices[col_idx].value;
            if !is_zero_persistence(birth, death) {
                pairs.push((birth, death));
            }
            pivots.insert(low, column);
        }
    }
    Ok(pairs)
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            core::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            core::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Dimension-`k` pairs of the full Čech filtration of a small point set,
/// completed to its enclosing radius (so no class is essential).
pub fn point_set_pairs(cloud: &PointCloud, k: usize) -> Result<Vec<(f64, f64)>> {
    let f = cech_filtration(cloud, k + 1, f64::INFINITY)?;
    reduce(&f, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagramVariant {
    /// Components of the full cloud lying entirely in the layer `|x| >= R`.
    Isolated,
    /// Components of the radius-`M` complex on the layer points alone.
    ConnectedOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrackleDiagram {
    pub plan: ScalingPlan,
    /// Raw radii; see [`CrackleDiagram::scaled`] for the `1/M` view.
    pub pairs: Vec<PersistencePair>,
    pub variant: DiagramVariant,
    /// Components of admissible size skipped because they exceeded `m_cap`.
    pub skipped_components: usize,
    /// Number of layer points considered.
    pub far_points: usize,
}

impl CrackleDiagram {
    /// Pairs divided by `M` once.
    pub fn scaled(&self) -> impl Iterator<Item = PersistencePair> + '_ {
        let m = self.plan.m_scale;
        self.pairs.iter().map(move |p| PersistencePair { birth: p.birth / m, death: p.death / m, ..*p })
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Options for diagram assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramOptions {
    pub m_cap: usize,
}

impl Default for DiagramOptions {
    fn default() -> Self {
        Self { m_cap: DEFAULT_M_CAP }
    }
}

/// The isolated crackle diagram of `cloud` under `plan`.
///
/// Only points with `|x| >= R - 2M` can touch a layer component, so the
/// partition is computed on that shell; a component is kept when none of its
/// points falls inside `B(0; R)`.
pub fn crackle_diagram(cloud: &PointCloud, plan: &ScalingPlan) -> Result<CrackleDiagram> {
    crackle_diagram_with(cloud, plan, DiagramVariant::Isolated, DiagramOptions::default())
}

/// Variant that ignores points inside `B(0; R)` when forming components.
pub fn crackle_diagram_tilde(cloud: &PointCloud, plan: &ScalingPlan) -> Result<CrackleDiagram> {
    crackle_diagram_with(cloud, plan, DiagramVariant::ConnectedOnly, DiagramOptions::default())
}

pub fn crackle_diagram_with(
    cloud: &PointCloud,
    plan: &ScalingPlan,
    variant: DiagramVariant,
    opts: DiagramOptions,
) -> Result<CrackleDiagram> {
    let r = plan.r;
    let m = plan.m_scale;
    let shell_radius = match variant {
        DiagramVariant::Isolated => r - 2.0 * m,
        DiagramVariant::ConnectedOnly => r,
    };
    let shell = geom::restrict_far(cloud, shell_radius);
    let partition = geom::components_at(&shell, m);
    let kept = partition.isolated_far(&shell, r);
    let members = partition.members();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    let far_points = (0..shell.len()).filter(|&i| shell.norm(i) >= r).count();
    for cid in kept {
        let size = partition.sizes[cid];
        if size < plan.k + 2 {
            continue;
        }
        if size > opts.m_cap {
            skipped += 1;
            continue;
        }
        let coords = members[cid].iter().flat_map(|&i| shell.point(i).iter().copied()).collect();
        let comp = PointCloud::new(shell.dim, coords, 0, 0.0);
        for (birth, death) in point_set_pairs(&comp, plan.k)? {
            pairs.push(PersistencePair { birth, death, dim: plan.k, component_size: size, component_id: cid });
        }
    }
    Ok(CrackleDiagram { plan: *plan, pairs, variant, skipped_components: skipped, far_points })
}

/// Largest scaled lifespan among pairs born at or before `t`; zero when
/// there is none.
pub fn lifespan_max(diagram: &CrackleDiagram, t: f64) -> f64 {
    diagram.scaled().filter(|p| p.birth <= t).map(|p| p.lifespan()).fold(0.0, f64::max)
}

/// Upper limit on the point count accepted by [`naive_diagram_oracle`].
pub const ORACLE_MAX_POINTS: usize = 8;

/// Brute-force persistence: every nonempty subset becomes a simplex valued by
/// an exhaustive enclosing-ball search, and a dense mod-2 reduction pairs
/// them. Shares no code with the filtration/reduction path.
pub fn naive_diagram_oracle(points: &[&[f64]], k: usize) -> Result<Vec<PersistencePair>> {
    let n = points.len();
    if n > ORACLE_MAX_POINTS {
        return Err(Error::TooLarge { limit: ORACLE_MAX_POINTS, got: n });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let full = 1usize << n;
    // subset radius by enumeration, lifted to dominate all sub-subsets
    let mut value = vec![0.0f64; full];
    for mask in 1..full {
        let mut v = brute_enclosing_radius(points, mask);
        let mut rest = mask;
        while rest != 0 {
            let bit = rest & rest.wrapping_neg();
            rest ^= bit;
            let sub = mask ^ bit;
            if sub != 0 {
                v = v.max(value[sub]);
            }
        }
        value[mask] = v;
    }
    let mut order: Vec<usize> = (1..full).collect();
    order.sort_by(|&a, &b| {
        value[a]
            .partial_cmp(&value[b])
            .unwrap()
            .then(a.count_ones().cmp(&b.count_ones()))
            .then_with(|| subset_vertices(a).cmp(&subset_vertices(b)))
    });
    let mut position = vec![0usize; full];
    for (i, &mask) in order.iter().enumerate() {
        position[mask] = i;
    }
    let total = order.len();
    // dense boundary columns as bool rows
    let mut columns: Vec<Vec<bool>> = order
        .iter()
        .map(|&mask| {
            let mut col = vec![false; total];
            if mask.count_ones() > 1 {
                let mut rest = mask;
                while rest != 0 {
                    let bit = rest & rest.wrapping_neg();
                    rest ^= bit;
                    col[position[mask ^ bit]] = true;
                }
            }
            col
        })
        .collect();
    let low = |c: &Vec<bool>| c.iter().rposition(|&b| b);
    let mut pairs = Vec::new();
    for j in 0..total {
        loop {
            let Some(l) = low(&columns[j]) else { break };
            let Some(i) = (0..j).find(|&i| low(&columns[i]) == Some(l)) else { break };
            let other = columns[i].clone();
            for (x, y) in columns[j].iter_mut().zip(other) {
                *x ^= y;
            }
        }
        if let Some(l) = low(&columns[j]) {
            let birth_mask = order[l];
            if birth_mask.count_ones() as usize == k + 1 {
                let (b, d) = (value[birth_mask], value[order[j]]);
                if !is_zero_persistence(b, d) {
                    pairs.push(PersistencePair { birth: b, death: d, dim: k, component_size: n, component_id: 0 });
                }
            }
        }
    }
    Ok(pairs)
}

fn subset_vertices(mask: usize) -> Vec<u32> {
    (0..usize::BITS).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Minimum over candidate centers (points and circumcenters of every
/// sub-subset) of the largest distance to the subset's points.
fn brute_enclosing_radius(points: &[&[f64]], mask: usize) -> f64 {
    let idx: Vec<usize> = (0..points.len()).filter(|&i| mask & (1 << i) != 0).collect();
    if idx.len() == 1 {
        return 0.0;
    }
    let dim = points[0].len();
    let far = |c: &[f64]| idx.iter().map(|&i| dist(c, points[i])).fold(0.0, f64::max);
    let mut best = f64::INFINITY;
    let m = idx.len();
    for sub in 1usize..(1 << m) {
        let sz = sub.count_ones() as usize;
        if sz > dim + 1 {
            continue;
        }
        let sel: Vec<&[f64]> = (0..m).filter(|&j| sub & (1 << j) != 0).map(|j| points[idx[j]]).collect();
        if let Some(c) = affine_circumcenter(&sel) {
            best = best.min(far(&c));
        }
    }
    best
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Circumcenter within the affine hull, via Cramer-free normal equations
/// solved by Gauss-Jordan elimination.
fn affine_circumcenter(sel: &[&[f64]]) -> Option<Vec<f64>> {
    let base = sel[0];
    let k = sel.len() - 1;
    if k == 0 {
        return Some(base.to_vec());
    }
    let diffs: Vec<Vec<f64>> = sel[1..].iter().map(|p| p.iter().zip(base).map(|(a, b)| a - b).collect()).collect();
    let mut m: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum()).collect();
            row.push(0.5 * diffs[i].iter().map(|a| a * a).sum::<f64>());
            row
        })
        .collect();
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    for c in 0..k {
        let p = (c..k).max_by(|&a, &b| m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap())?;
        if m[p][c].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(p, c);
        let pivot = m[c][c];
        for v in m[c].iter_mut() {
            *v /= pivot;
        }
        for r in 0..k {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let rowc = m[c].clone();
                    for (x, y) in m[r].iter_mut().zip(rowc) {
                        *x -= f * y;
                    }
                }
            }
        }
    }
    let mut center = base.to_vec();
    for (i, d) in diffs.iter().enumerate() {
        let lam = m[i][k];
        for (c, x) in center.iter_mut().zip(d) {
            *c += lam * x;
        }
    }
    Some(center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Regime, TailModel};

    fn cloud2(pts: &[[f64; 2]]) -> PointCloud {
        PointCloud::new(2, pts.iter().flat_map(|p| p.iter().copied()).collect(), 0, 0.0)
    }

    fn plan_with(r: f64, m: f64) -> ScalingPlan {
        let tail = TailModel::pareto(3.0, 2).unwrap();
        ScalingPlan { tail, k: 1, p: 3, n: 1e4, m_scale: m, r, regime: Regime::Critical }
    }

    #[test]
    fn square_pair() {
        let pairs = point_set_pairs(&cloud2(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]), 1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].0 - 1.0).abs() < 1e-12 && (pairs[0].1 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn triangles() {
        let s3 = 3f64.sqrt();
        let eq = point_set_pairs(&cloud2(&[[0.0, 0.0], [2.0, 0.0], [1.0, s3]]), 1).unwrap();
        assert_eq!(eq.len(), 1);
        assert!((eq[0].0 - 1.0).abs() < 1e-12 && (eq[0].1 - 2.0 / s3).abs() < 1e-12);
        let obtuse = point_set_pairs(&cloud2(&[[0.0, 0.0], [4.0, 0.0], [1.0, 0.1]]), 1).unwrap();
        assert!(obtuse.is_empty());
    }

    #[test]
    fn reduce_needs_higher_simplices() {
        let f = cech_filtration(&cloud2(&[[0.0, 0.0], [1.0, 0.0]]), 1, f64::INFINITY).unwrap();
        assert_eq!(reduce(&f, 1), Err(Error::InsufficientDim { max_dim: 1, needed: 2 }));
    }

    #[test]
    fn oracle_examples() {
        let sq: [&[f64]; 4] = [&[0.0, 0.0], &[2.0, 0.0], &[2.0, 2.0], &[0.0, 2.0]];
        let p = naive_diagram_oracle(&sq, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].birth - 1.0).abs() < 1e-12 && (p[0].death - 2f64.sqrt()).abs() < 1e-12);
        let line: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[2.5, 0.0]];
        assert!(naive_diagram_oracle(&line, 1).unwrap().is_empty());
        // regular pentagon, side s: birth s/2, death = circumradius
        let s = 1.3;
        let rc = s / (2.0 * (core::f64::consts::PI / 5.0).sin());
        let pent: Vec<[f64; 2]> = (0..5)
            .map(|i| {
                let a = 2.0 * core::f64::consts::PI * i as f64 / 5.0;
                [rc * a.cos(), rc * a.sin()]
            })
            .collect();
        let refs: Vec<&[f64]> = pent.iter().map(|p| &p[..]).collect();
        let p = naive_diagram_oracle(&refs, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].birth - s / 2.0).abs() < 1e-12);
        assert!((p[0].death - rc).abs() < 1e-12);
        let nine: Vec<[f64; 2]> = (0..9).map(|i| [i as f64, 0.0]).collect();
        let refs: Vec<&[f64]> = nine.iter().map(|p| &p[..]).collect();
        assert_eq!(naive_diagram_oracle(&refs, 1), Err(Error::TooLarge { limit: 8, got: 9 }));
    }

    #[test]
    fn crackle_triangle_far_away() {
        let plan = plan_with(20.0, 1.0);
        let side = 2.0 * 0.9;
        let h = side * 3f64.sqrt() / 2.0;
        let c = [40.0, 0.0];
        let tri = [[c[0] - side / 2.0, c[1] - h / 3.0], [c[0] + side / 2.0, c[1] - h / 3.0], [c[0], c[1] + 2.0 * h / 3.0]];
        let d = crackle_diagram(&cloud2(&tri), &plan).unwrap();
        assert_eq!(d.pairs.len(), 1);
        let sp: Vec<PersistencePair> = d.scaled().collect();
        assert_eq!(sp[0].component_size, 3);
        assert!((sp[0].birth - 0.9).abs() < 1e-9);
        assert!((sp[0].death - 0.9 * 2.0 / 3f64.sqrt()).abs() < 1e-9);

        // an intruder inside B(0; R) within 2M of the triangle breaks isolation
        let mut pts = tri.to_vec();
        pts.push([tri[0][0] - 1.5, tri[0][1]]);
        let plan2 = plan_with(tri[0][0] - 1.0, 1.0);
        assert!(norm2(pts[3]) < plan2.r);
        let iso = crackle_diagram(&cloud2(&pts), &plan2).unwrap();
        assert!(iso.is_empty());
        let tilde = crackle_diagram_tilde(&cloud2(&pts), &plan2).unwrap();
        assert_eq!(tilde.pairs.len(), 1);
    }

    fn norm2(p: [f64; 2]) -> f64 {
        (p[0] * p[0] + p[1] * p[1]).sqrt()
    }

    #[test]
    fn empty_far_layer() {
        let plan = plan_with(50.0, 1.0);
        let d = crackle_diagram(&cloud2(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), &plan).unwrap();
        assert!(d.is_empty());
        assert!(crackle_diagram_tilde(&cloud2(&[]), &plan).unwrap().is_empty());
    }

    #[test]
    fn lifespans() {
        let plan = plan_with(1.0, 1.0);
        let mk = |b: f64, d: f64| PersistencePair { birth: b, death: d, dim: 1, component_size: 3, component_id: 0 };
        let mut diag = CrackleDiagram {
            plan,
            pairs: Vec::new(),
            variant: DiagramVariant::Isolated,
            skipped_components: 0,
            far_points: 0,
        };
        assert_eq!(lifespan_max(&diag, 1.0), 0.0);
        diag.pairs = vec![mk(0.5, 0.9), mk(2.0, 3.0)];
        assert!((lifespan_max(&diag, 1.0) - 0.4).abs() < 1e-15);
        assert!((lifespan_max(&diag, 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oversize_components_are_skipped() {
        let plan = plan_with(10.0, 1.0);
        let pts: Vec<[f64; 2]> = (0..20).map(|i| [30.0 + i as f64 * 0.5, (i % 2) as f64 * 0.7]).collect();
        let d = crackle_diagram(&cloud2(&pts), &plan).unwrap();
        assert_eq!(d.skipped_components, 1);
        assert!(d.is_empty());
    }

    fn sorted(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    fn clouds(max_pts: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
        (1..=max_pts).prop_flat_map(move |n| proptest::collection::vec(-2.0f64..2.0, n * dim))
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn pipeline_matches_oracle(coords in clouds(7, 2)) {
            let cloud = PointCloud::new(2, coords, 0, 0.0);
            let plan = plan_with(0.0, 1e6);
            let opts = DiagramOptions { m_cap: 64 };
            let d = crackle_diagram_with(&cloud, &plan, DiagramVariant::Isolated, opts).unwrap();
            let fast = sorted(d.pairs.iter().map(|p| (p.birth, p.death)).collect());
            let refs: Vec<&[f64]> = cloud.points().collect();
            let slow = sorted(naive_diagram_oracle(&refs, 1).unwrap().iter().map(|p| (p.birth, p.death)).collect());
            prop_assert_eq!(fast.len(), slow.len(), "{:?} vs {:?}", fast, slow);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
            }
        }

        #[test]
        fn meb_matches_brute_force(coords in clouds(6, 2), coords3 in clouds(6, 3)) {
            for (dim, c) in [(2, coords), (3, coords3)] {
                let refs: Vec<&[f64]> = c.chunks_exact(dim).collect();
                let fast = geom::meb_radius(&refs);
                let brute = brute_enclosing_radius(&refs, (1 << refs.len()) - 1);
                prop_assert!((fast - brute).abs() < 1e-9, "{} vs {}", fast, brute);
            }
        }

        #[test]
        fn pair_count_bounded(coords in clouds(8, 3)) {
            let cloud = PointCloud::new(3, coords, 0, 0.0);
            let m = cloud.len();
            prop_assert!(point_set_pairs(&cloud, 1).unwrap().len() <= crate::math::binomial(m, 2));
        }

        #[test]
        fn isolated_within_connected_only(seed in 0u64..10_000) {
            let tail = TailModel::pareto(3.0, 2).unwrap();
            let cloud = crate::model::sample_cloud(&tail, 400.0, seed).unwrap();
            let plan = plan_with(3.0, 0.8);
            let iso = crackle_diagram(&cloud, &plan).unwrap();
            let tilde = crackle_diagram_tilde(&cloud, &plan).unwrap();
            let mut pool: Vec<(f64, f64)> = tilde.pairs.iter().map(|p| (p.birth, p.death)).collect();
            for p in &iso.pairs {
                let pos = pool.iter().position(|q| *q == (p.birth, p.death));
                prop_assert!(pos.is_some());
                pool.swap_remove(pos.unwrap());
            }
        }

        #[test]
        fn scale_equivariance(seed in 0u64..10_000, lambda in 0.1f64..10.0) {
            let tail = TailModel::pareto(3.0, 2).unwrap();
            let cloud = crate::model::sample_cloud(&tail, 300.0, seed).unwrap();
            let stretched = PointCloud::new(2, cloud.coords.iter().map(|x| x * lambda).collect(), 0, 0.0);
            let a = crackle_diagram(&cloud, &plan_with(2.0, 0.7)).unwrap();
            let b = crackle_diagram(&stretched, &plan_with(2.0 * lambda, 0.7 * lambda)).unwrap();
            prop_assert_eq!(a.pairs.len(), b.pairs.len());
            let sa = sorted(a.scaled().map(|p| (p.birth, p.death)).collect());
            let sb = sorted(b.scaled().map(|p| (p.birth, p.death)).collect());
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x.0 - y.0).abs() < 1e-9 * (1.0 + x.0) && (x.1 - y.1).abs() < 1e-9 * (1.0 + x.1));
            }
        }
    }
}
