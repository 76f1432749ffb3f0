//! Independent reference implementations and random case generators shared
//! by the integration tests. Nothing here calls into the code under test
//! except for constructing its input types.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidmon::grid::CellMask;
use vidmon::model::{BBox, ClassId, ClassTable, FrameAnnotation, ObjectInstance, RegionMode, RegionSet};
use vidmon::predicates::{Comparator, CountPredicate, SpatialRelation};
use vidmon::query::{AttrConstraint, QueryAst, RegionPred, SelectKind, SpatialPred, SpatialTarget, VarDecl};

pub const RELATIONS: [SpatialRelation; 4] =
    [SpatialRelation::Left, SpatialRelation::Right, SpatialRelation::Above, SpatialRelation::Below];

pub const REGION_NAMES: [&str; 4] = ["upper_left", "upper_right", "lower_left", "lower_right"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn classes() -> ClassTable {
    ClassTable::new(["person", "car", "bus"]).unwrap()
}

// Coordinates on a 0.05 lattice so centroid ties and region-boundary hits
// occur often.
fn lattice(r: &mut impl Rng, lo: u32, hi: u32) -> f64 {
    r.random_range(lo..=hi) as f64 * 0.05
}

pub fn random_box(r: &mut impl Rng) -> BBox {
    let x0 = lattice(r, 0, 18);
    let y0 = lattice(r, 0, 18);
    let w = lattice(r, 1, 4);
    let h = lattice(r, 1, 4);
    BBox::new(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0)).unwrap()
}

pub fn random_frame(r: &mut impl Rng, frame_id: u64, n_classes: u16, max_objects: usize) -> FrameAnnotation {
    let n = r.random_range(0..=max_objects);
    let objects = (0..n)
        .map(|_| {
            let mut o = ObjectInstance::new(ClassId(r.random_range(0..n_classes)), random_box(r));
            if r.random_bool(0.5) {
                o = o.with_attr("color", if r.random_bool(0.5) { "red" } else { "blue" });
            }
            o
        })
        .collect();
    FrameAnnotation::new(frame_id, objects)
}

fn random_relation(r: &mut impl Rng) -> SpatialRelation {
    RELATIONS[r.random_range(0..4)]
}

fn random_count_pred(r: &mut impl Rng, n_classes: u16) -> CountPredicate {
    let class = if r.random_bool(0.25) { None } else { Some(ClassId(r.random_range(0..n_classes))) };
    let cmp = [Comparator::Eq, Comparator::Ge, Comparator::Le][r.random_range(0..3)];
    CountPredicate::new(class, cmp, r.random_range(0..=4))
}

/// A `SELECT FRAMES` query with one or two variables.
pub fn random_query(r: &mut impl Rng, n_classes: u16) -> QueryAst {
    let n_vars = r.random_range(1..=2);
    let vars: Vec<VarDecl> = (0..n_vars)
        .map(|k| VarDecl {
            name: format!("v{k}"),
            class_id: ClassId(r.random_range(0..n_classes)),
            attrs: if r.random_bool(0.2) {
                vec![AttrConstraint { key: "color".into(), value: "red".into() }]
            } else {
                Vec::new()
            },
        })
        .collect();
    let count_preds = (0..r.random_range(0..=2)).map(|_| random_count_pred(r, n_classes)).collect();
    let mut region_preds = Vec::new();
    let mut spatial_preds = Vec::new();
    for v in &vars {
        if r.random_bool(0.3) {
            let mode = if r.random_bool(0.5) {
                RegionMode::Center
            } else {
                RegionMode::OverlapFraction([0.25, 0.5, 1.0][r.random_range(0..3)])
            };
            region_preds.push(RegionPred { var: v.name.clone(), region: REGION_NAMES[r.random_range(0..4)].into(), mode });
        }
        if r.random_bool(0.15) {
            spatial_preds.push(SpatialPred {
                subject: v.name.clone(),
                target: SpatialTarget::Region(REGION_NAMES[r.random_range(0..4)].into()),
                relation: random_relation(r),
            });
        }
    }
    if n_vars == 2 && r.random_bool(0.7) {
        let (a, b) = if r.random_bool(0.5) { (0, 1) } else { (1, 0) };
        spatial_preds.push(SpatialPred {
            subject: vars[a].name.clone(),
            target: SpatialTarget::Var(vars[b].name.clone()),
            relation: random_relation(r),
        });
    }
    QueryAst { select: SelectKind::Frames, vars, count_preds, region_preds, spatial_preds, window: None }
}

fn centre(b: &BBox) -> (f64, f64) {
    let [x0, y0, x1, y1] = b.as_array();
    ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
}

/// `a` lies `rel` of `b`, comparing centroids.
fn lies(a: &BBox, b: &BBox, rel: SpatialRelation) -> bool {
    let (ax, ay) = centre(a);
    let (bx, by) = centre(b);
    match rel {
        SpatialRelation::Left => ax < bx,
        SpatialRelation::Right => ax > bx,
        SpatialRelation::Above => ay < by,
        SpatialRelation::Below => ay > by,
    }
}

fn inside(b: &BBox, rect: &BBox, mode: RegionMode) -> bool {
    let [rx0, ry0, rx1, ry1] = rect.as_array();
    match mode {
        RegionMode::Center => {
            let (cx, cy) = centre(b);
            rx0 <= cx && cx <= rx1 && ry0 <= cy && cy <= ry1
        }
        RegionMode::OverlapFraction(tau) => {
            let [x0, y0, x1, y1] = b.as_array();
            let w = x1.min(rx1) - x0.max(rx0);
            let h = y1.min(ry1) - y0.max(ry0);
            let overlap = if w > 0.0 && h > 0.0 { w * h } else { 0.0 };
            overlap / ((x1 - x0) * (y1 - y0)) >= tau
        }
    }
}

/// Reference evaluation by enumerating every injective assignment of
/// objects to variables. Relations use box centroids.
pub fn oracle_eval(q: &QueryAst, frame: &FrameAnnotation, regions: &RegionSet) -> bool {
    for p in &q.count_preds {
        let n = frame.objects.iter().filter(|o| p.class_id.is_none_or(|c| o.class_id == c)).count() as u32;
        let ok = match p.comparator {
            Comparator::Eq => n == p.value,
            Comparator::Ge => n >= p.value,
            Comparator::Le => n <= p.value,
        };
        if !ok {
            return false;
        }
    }
    let k = q.vars.len();
    let n = frame.objects.len();
    let index: BTreeMap<&str, usize> = q.vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let mut assignment = vec![0usize; k];
    // odometer over all k-tuples
    'outer: loop {
        let distinct = (0..k).all(|a| (0..a).all(|b| assignment[a] != assignment[b]));
        if distinct && (k == 0 || n > 0) && satisfies(q, frame, regions, &index, &assignment) {
            return true;
        }
        if k == 0 || n == 0 {
            return false;
        }
        for slot in 0..k {
            assignment[slot] += 1;
            if assignment[slot] < n {
                continue 'outer;
            }
            assignment[slot] = 0;
        }
        return false;
    }
}

fn satisfies(
    q: &QueryAst,
    frame: &FrameAnnotation,
    regions: &RegionSet,
    index: &BTreeMap<&str, usize>,
    assignment: &[usize],
) -> bool {
    let obj = |name: &str| &frame.objects[assignment[index[name]]];
    for v in &q.vars {
        let o = obj(&v.name);
        if o.class_id != v.class_id {
            return false;
        }
        if !v.attrs.iter().all(|a| o.attrs.get(&a.key) == Some(&a.value)) {
            return false;
        }
    }
    for rp in &q.region_preds {
        if !inside(&obj(&rp.var).bbox, &regions.get(&rp.region).unwrap().rect, rp.mode) {
            return false;
        }
    }
    for sp in &q.spatial_preds {
        let subject = &obj(&sp.subject).bbox;
        let ok = match &sp.target {
            SpatialTarget::Var(t) => lies(&obj(t).bbox, subject, sp.relation),
            SpatialTarget::Region(r) => lies(&regions.get(r).unwrap().rect, subject, sp.relation),
        };
        if !ok {
            return false;
        }
    }
    true
}

pub fn random_mask(r: &mut impl Rng, g: usize, density: f64) -> CellMask {
    let cells = (0..g * g).map(|_| r.random_bool(density)).collect();
    CellMask::from_cells(g, cells).unwrap()
}

/// Mask with exactly `n` distinct true cells.
pub fn mask_with_cells(r: &mut impl Rng, g: usize, n: usize) -> CellMask {
    let picks = rand::seq::index::sample(r, g * g, n.min(g * g));
    let cells: Vec<(usize, usize)> = picks.iter().map(|k| (k / g, k % g)).collect();
    CellMask::from_true_cells(g, &cells)
}

/// Some true cell of `a` and some true cell of `b` satisfy `rel` on the
/// cell indices, checked over all pairs.
pub fn brute_grid_relation(a: &CellMask, b: &CellMask, rel: SpatialRelation) -> bool {
    let g = a.g();
    for ai in 0..g {
        for aj in 0..g {
            if !a.get(ai, aj) {
                continue;
            }
            for bi in 0..g {
                for bj in 0..g {
                    if b.get(bi, bj)
                        && match rel {
                            SpatialRelation::Left => aj < bj,
                            SpatialRelation::Right => aj > bj,
                            SpatialRelation::Above => ai < bi,
                            SpatialRelation::Below => ai > bi,
                        }
                    {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Cells within Manhattan distance `radius` of some true cell.
pub fn brute_dilate(m: &CellMask, radius: usize) -> CellMask {
    let g = m.g();
    let mut out = CellMask::new(g);
    for i in 0..g {
        for j in 0..g {
            let near = m.true_cells().any(|(a, b)| a.abs_diff(i) + b.abs_diff(j) <= radius);
            out.set(i, j, near);
        }
    }
    out
}

/// Size of a maximum matching between true cells of `pred` and `truth`
/// within Manhattan `radius`, by exhaustive search. Small masks only.
pub fn brute_max_matching(pred: &CellMask, truth: &CellMask, radius: usize) -> u64 {
    let p: Vec<(usize, usize)> = pred.true_cells().collect();
    let t: Vec<(usize, usize)> = truth.true_cells().collect();
    fn go(k: usize, p: &[(usize, usize)], t: &[(usize, usize)], used: &mut [bool], radius: usize) -> u64 {
        if k == p.len() {
            return 0;
        }
        let mut best = go(k + 1, p, t, used, radius);
        for (m, &c) in t.iter().enumerate() {
            if !used[m] && p[k].0.abs_diff(c.0) + p[k].1.abs_diff(c.1) <= radius {
                used[m] = true;
                best = best.max(1 + go(k + 1, p, t, used, radius));
                used[m] = false;
            }
        }
        best
    }
    go(0, &p, &t, &mut vec![false; t.len()], radius)
}

/// Standard normal pair with correlation `rho`.
pub fn correlated_normals(r: &mut impl Rng, rho: f64) -> (f64, f64) {
    let a: f64 = r.sample(rand_distr::StandardNormal);
    let b: f64 = r.sample(rand_distr::StandardNormal);
    (a, rho * a + (1.0 - rho * rho).sqrt() * b)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}
