//! Count predicates, directional relations and region constraints, evaluated
//! either on exact annotations or on occupancy grids.
//!
//! `rel(a, b)` reads "a is `rel` of b": `Left(a, b)` holds when `a` lies to the
//! left of `b`. The y axis grows downward, so `Above` means a smaller `y`.
//! All comparisons are strict; ties are false.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_rect, CellMask};
use crate::model::{box_in_region, BBox, ClassId, CountVector, FrameAnnotation, ObjectInstance, RegionMode, RegionSet};
use crate::query::{QueryAst, SpatialTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SpatialRelation {
    Left,
    Right,
    Above,
    Below,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 4] =
        [SpatialRelation::Left, SpatialRelation::Right, SpatialRelation::Above, SpatialRelation::Below];

    /// The relation that holds with the arguments swapped.
    pub fn mirror(self) -> Self {
        match self {
            SpatialRelation::Left => SpatialRelation::Right,
            SpatialRelation::Right => SpatialRelation::Left,
            SpatialRelation::Above => SpatialRelation::Below,
            SpatialRelation::Below => SpatialRelation::Above,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            SpatialRelation::Left => "LEFT",
            SpatialRelation::Right => "RIGHT",
            SpatialRelation::Above => "ABOVE",
            SpatialRelation::Below => "BELOW",
        }
    }

    fn is_horizontal(self) -> bool {
        matches!(self, SpatialRelation::Left | SpatialRelation::Right)
    }

    /// Strict comparison of two coordinates along the relation's axis.
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            SpatialRelation::Left | SpatialRelation::Above => a < b,
            SpatialRelation::Right | SpatialRelation::Below => a > b,
        }
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for SpatialRelation {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        SpatialRelation::ALL.into_iter().find(|r| r.keyword().eq_ignore_ascii_case(s)).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Comparator {
    Eq,
    Ge,
    Le,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ge => ">=",
            Comparator::Le => "<=",
        }
    }

    pub fn apply(self, lhs: u32, rhs: u32) -> bool {
        match self {
            Comparator::Eq => lhs == rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Le => lhs <= rhs,
        }
    }
}

/// `COUNT(class) cmp value`; a missing class means all objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountPredicate {
    pub class_id: Option<ClassId>,
    pub comparator: Comparator,
    pub value: u32,
}

impl CountPredicate {
    pub fn new(class_id: Option<ClassId>, comparator: Comparator, value: u32) -> Self {
        Self { class_id, comparator, value }
    }

    /// True if some count within `±relax` of the reported one (floored at
    /// zero) satisfies the predicate.
    pub fn holds_widened(&self, reported: u32, relax: u32) -> bool {
        let lo = reported.saturating_sub(relax);
        let hi = reported.saturating_add(relax);
        match self.comparator {
            Comparator::Eq => lo <= self.value && self.value <= hi,
            Comparator::Ge => hi >= self.value,
            Comparator::Le => lo <= self.value,
        }
    }
}

pub fn eval_count(pred: &CountPredicate, counts: &CountVector) -> bool {
    pred.comparator.apply(counts.select(pred.class_id), pred.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRelationMode {
    /// Compare box centroids.
    #[default]
    Centroid,
    /// Require disjoint projections: `Left(a, b)` iff `a.x_max < b.x_min`.
    Extent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRelationMode {
    /// Some true cell of A and some true cell of B satisfy the relation.
    #[default]
    Exists,
    /// Compare the mean cell index of each mask.
    Centroid,
}

pub fn relation_between_boxes(a: &BBox, b: &BBox, rel: SpatialRelation, mode: ObjectRelationMode) -> bool {
    match mode {
        ObjectRelationMode::Centroid => {
            let (ax, ay) = a.center();
            let (bx, by) = b.center();
            if rel.is_horizontal() {
                rel.holds(ax, bx)
            } else {
                rel.holds(ay, by)
            }
        }
        ObjectRelationMode::Extent => match rel {
            SpatialRelation::Left => a.x_max() < b.x_min(),
            SpatialRelation::Right => a.x_min() > b.x_max(),
            SpatialRelation::Above => a.y_max() < b.y_min(),
            SpatialRelation::Below => a.y_min() > b.y_max(),
        },
    }
}

pub fn relation_between_objects(
    a: &ObjectInstance,
    b: &ObjectInstance,
    rel: SpatialRelation,
    mode: ObjectRelationMode,
) -> bool {
    relation_between_boxes(&a.bbox, &b.bbox, rel, mode)
}

/// Relation between the contents of two class masks. False when either mask
/// is empty.
pub fn relation_between_grids(
    a: &CellMask,
    b: &CellMask,
    rel: SpatialRelation,
    mode: GridRelationMode,
) -> Result<bool> {
    if a.g() != b.g() {
        return Err(Error::GridMismatch(a.g(), b.g()));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(false);
    }
    let pick = |(i, j): (usize, usize)| if rel.is_horizontal() { j } else { i };
    Ok(match mode {
        GridRelationMode::Exists => {
            // Only the extreme indices matter for an existential strict inequality.
            let (a_min, a_max) = index_range(a.true_cells().map(pick));
            let (b_min, b_max) = index_range(b.true_cells().map(pick));
            match rel {
                SpatialRelation::Left | SpatialRelation::Above => a_min < b_max,
                SpatialRelation::Right | SpatialRelation::Below => a_max > b_min,
            }
        }
        GridRelationMode::Centroid => {
            let mean = |m: &CellMask| {
                let (sum, n) = m.true_cells().map(pick).fold((0usize, 0usize), |(s, n), v| (s + v, n + 1));
                sum as f64 / n as f64
            };
            rel.holds(mean(a), mean(b))
        }
    })
}

fn index_range(it: impl Iterator<Item = usize>) -> (usize, usize) {
    it.fold((usize::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Whether `rect` can lie `rel` of some object whose occupied cells are
/// `mask`. Never false when an object rasterized into `mask` satisfies
/// `relation_between_boxes(rect, object, rel, mode)`.
pub fn region_relation_on_grid(mask: &CellMask, rect: &BBox, rel: SpatialRelation, mode: ObjectRelationMode) -> bool {
    let (cx, cy) = rect.center();
    let reference = match (mode, rel) {
        (ObjectRelationMode::Centroid, r) if r.is_horizontal() => cx,
        (ObjectRelationMode::Centroid, _) => cy,
        (ObjectRelationMode::Extent, SpatialRelation::Left) => rect.x_max(),
        (ObjectRelationMode::Extent, SpatialRelation::Right) => rect.x_min(),
        (ObjectRelationMode::Extent, SpatialRelation::Above) => rect.y_max(),
        (ObjectRelationMode::Extent, SpatialRelation::Below) => rect.y_min(),
    };
    let g = mask.g();
    mask.true_cells().any(|(i, j)| {
        let (x0, y0, x1, y1) = cell_rect(g, i, j);
        match rel {
            SpatialRelation::Left => x1 > reference,
            SpatialRelation::Right => x0 < reference,
            SpatialRelation::Above => y1 > reference,
            SpatialRelation::Below => y0 < reference,
        }
    })
}

/// Whether some true cell touches `rect` (closed rectangles).
pub fn mask_touches_region(mask: &CellMask, rect: &BBox) -> bool {
    let g = mask.g();
    mask.true_cells().any(|(i, j)| {
        let (x0, y0, x1, y1) = cell_rect(g, i, j);
        x0 <= rect.x_max() && x1 >= rect.x_min() && y0 <= rect.y_max() && y1 >= rect.y_min()
    })
}

/// Evaluation settings for exact frame predicates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub object_relation: ObjectRelationMode,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledVar {
    pub class_id: ClassId,
    pub attrs: Vec<(String, String)>,
    pub regions: Vec<(BBox, RegionMode)>,
    /// `(rect, rel)`: the rect must lie `rel` of the bound object.
    pub region_relations: Vec<(BBox, SpatialRelation)>,
}

/// `target` must lie `relation` of `subject`.
#[derive(Debug, Clone)]
pub(crate) struct CompiledSpatial {
    pub subject: usize,
    pub target: usize,
    pub relation: SpatialRelation,
}

/// A query with names resolved against a region set, ready for per-frame use.
#[derive(Debug, Clone)]
pub struct FramePredicate {
    pub(crate) counts: Vec<CountPredicate>,
    pub(crate) vars: Vec<CompiledVar>,
    pub(crate) spatial: Vec<CompiledSpatial>,
    pub(crate) options: EvalOptions,
}

impl FramePredicate {
    pub fn compile(query: &QueryAst, regions: &RegionSet, options: EvalOptions) -> Result<Self> {
        let region_rect = |name: &str| {
            regions
                .get(name)
                .map(|r| r.rect)
                .ok_or_else(|| Error::QueryShape(format!("unknown region `{name}`")))
        };
        let var_index = |name: &str| {
            query
                .vars
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::QueryShape(format!("undeclared variable `{name}`")))
        };
        let mut vars: Vec<CompiledVar> = query
            .vars
            .iter()
            .map(|v| CompiledVar {
                class_id: v.class_id,
                attrs: v.attrs.iter().map(|a| (a.key.clone(), a.value.clone())).collect(),
                regions: Vec::new(),
                region_relations: Vec::new(),
            })
            .collect();
        for rp in &query.region_preds {
            rp.mode.validate()?;
            let idx = var_index(&rp.var)?;
            vars[idx].regions.push((region_rect(&rp.region)?, rp.mode));
        }
        let mut spatial = Vec::new();
        for sp in &query.spatial_preds {
            let subject = var_index(&sp.subject)?;
            match &sp.target {
                SpatialTarget::Var(v) => {
                    spatial.push(CompiledSpatial { subject, target: var_index(v)?, relation: sp.relation })
                }
                SpatialTarget::Region(r) => vars[subject].region_relations.push((region_rect(r)?, sp.relation)),
            }
        }
        Ok(Self { counts: query.count_preds.clone(), vars, spatial, options })
    }

    pub fn has_objects(&self) -> bool {
        !self.vars.is_empty()
    }

    fn unary_ok(&self, var: &CompiledVar, obj: &ObjectInstance) -> bool {
        obj.class_id == var.class_id
            && var.attrs.iter().all(|(k, v)| obj.attrs.get(k) == Some(v))
            && var.regions.iter().all(|(rect, mode)| box_in_region(&obj.bbox, rect, *mode))
            && var
                .region_relations
                .iter()
                .all(|(rect, rel)| relation_between_boxes(rect, &obj.bbox, *rel, self.options.object_relation))
    }

    /// True iff the frame's counts satisfy every count predicate and some
    /// assignment of distinct objects to the variables satisfies every
    /// region and spatial predicate.
    pub fn eval(&self, frame: &FrameAnnotation) -> bool {
        let n_classes = frame.objects.iter().map(|o| o.class_id.index() + 1).max().unwrap_or(0);
        let n_classes = self
            .counts
            .iter()
            .filter_map(|c| c.class_id)
            .map(|c| c.index() + 1)
            .fold(n_classes, usize::max);
        let mut counts = CountVector::zeros(n_classes);
        for o in &frame.objects {
            counts.increment(o.class_id);
        }
        if !self.counts.iter().all(|p| eval_count(p, &counts)) {
            return false;
        }
        if self.vars.is_empty() {
            return true;
        }
        let candidates: Vec<Vec<usize>> = self
            .vars
            .iter()
            .map(|v| (0..frame.objects.len()).filter(|&k| self.unary_ok(v, &frame.objects[k])).collect())
            .collect();
        if candidates.iter().any(Vec::is_empty) {
            return false;
        }
        let mut assignment = vec![usize::MAX; self.vars.len()];
        self.search(0, &candidates, &mut assignment, frame)
    }

    fn search(&self, depth: usize, candidates: &[Vec<usize>], assignment: &mut [usize], frame: &FrameAnnotation) -> bool {
        if depth == self.vars.len() {
            return true;
        }
        for &obj in &candidates[depth] {
            if assignment[..depth].contains(&obj) {
                continue;
            }
            assignment[depth] = obj;
            if self.pairwise_ok(depth, assignment, frame) && self.search(depth + 1, candidates, assignment, frame) {
                return true;
            }
        }
        assignment[depth] = usize::MAX;
        false
    }

    /// Checks the var-var predicates whose later variable is `depth`.
    fn pairwise_ok(&self, depth: usize, assignment: &[usize], frame: &FrameAnnotation) -> bool {
        self.spatial.iter().all(|sp| {
            if sp.subject.max(sp.target) != depth {
                return true;
            }
            let subject = &frame.objects[assignment[sp.subject]];
            let target = &frame.objects[assignment[sp.target]];
            relation_between_objects(target, subject, sp.relation, self.options.object_relation)
        })
    }
}

/// Evaluates `query` on the exact annotation of one frame.
pub fn eval_frame_exact(
    query: &QueryAst,
    frame: &FrameAnnotation,
    regions: &RegionSet,
    options: EvalOptions,
) -> Result<bool> {
    Ok(FramePredicate::compile(query, regions, options)?.eval(frame))
}
