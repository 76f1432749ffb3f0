//! Filter oracles and the cascade decision.
//!
//! A filter emits per-class counts and per-class occupancy grids for a frame.
//! [`ExactFilter`] derives both from the annotation; [`NoisyFilter`] perturbs
//! them with a parametric [`ErrorModel`] so that count and localization
//! accuracy can be dialed in. [`cascade_decide`] checks a query against a
//! filter output and decides whether the frame deserves full evaluation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{rasterize, threshold_activation, ActivationMap, CellMask, OccupancyGrid, RasterMode, MAX_RELAX};
use crate::model::{count_objects, ClassId, ClassTable, CountVector, FrameAnnotation};
use crate::predicates::{
    mask_touches_region, region_relation_on_grid, relation_between_grids, Comparator, CountPredicate,
    FramePredicate, GridRelationMode,
};
use crate::rng;

pub const DEFAULT_FILTER_COST: f64 = 1.9;
pub const DEFAULT_DETECTOR_COST: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub counts: CountVector,
    pub grids: OccupancyGrid,
    pub cost_units: f64,
}

/// Anything that can stand in for a cheap per-frame filter.
pub trait FilterOracle: Send + Sync {
    fn name(&self) -> &str;
    fn grid_size(&self) -> usize;
    fn cost_per_frame(&self) -> f64;
    fn evaluate(&self, frame: &FrameAnnotation) -> Result<FilterOutput>;
}

/// Counts and grids taken straight from the annotation.
#[derive(Debug, Clone)]
pub struct ExactFilter {
    classes: ClassTable,
    g: usize,
    raster: RasterMode,
    cost: f64,
}

impl ExactFilter {
    pub fn new(classes: ClassTable, g: usize, cost: f64) -> Result<Self> {
        check_common(g, cost)?;
        Ok(Self { classes, g, raster: RasterMode::AllCells, cost })
    }

    pub fn with_raster(mut self, raster: RasterMode) -> Self {
        self.raster = raster;
        self
    }
}

fn check_common(g: usize, cost: f64) -> Result<()> {
    if g == 0 {
        return Err(Error::InvalidParameter("grid size must be >= 1".into()));
    }
    if !(cost.is_finite() && cost >= 0.0) {
        return Err(Error::InvalidParameter(format!("filter cost {cost} must be finite and >= 0")));
    }
    Ok(())
}

impl FilterOracle for ExactFilter {
    fn name(&self) -> &str {
        "exact"
    }

    fn grid_size(&self) -> usize {
        self.g
    }

    fn cost_per_frame(&self) -> f64 {
        self.cost
    }

    fn evaluate(&self, frame: &FrameAnnotation) -> Result<FilterOutput> {
        Ok(FilterOutput {
            counts: count_objects(frame, &self.classes, None)?,
            grids: rasterize(frame, self.classes.len(), self.g, self.raster)?,
            cost_units: self.cost,
        })
    }
}

/// Convenience wrapper: exact counts and all-cells grids.
pub fn exact_filter(frame: &FrameAnnotation, classes: &ClassTable, g: usize, cost: f64) -> Result<FilterOutput> {
    ExactFilter::new(classes.clone(), g, cost)?.evaluate(frame)
}

/// Discrete distribution over integer count offsets, given as
/// `[[offset, probability], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffsetDistribution(pub Vec<(i32, f64)>);

impl OffsetDistribution {
    pub fn exact() -> Self {
        Self(vec![(0, 1.0)])
    }

    pub fn constant(offset: i32) -> Self {
        Self(vec![(offset, 1.0)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidParameter("offset distribution is empty".into()));
        }
        check_probabilities(self.0.iter().map(|&(_, p)| p), "count offset")
    }

    /// Probability mass on offsets with `|offset| <= k`.
    pub fn mass_within(&self, k: u32) -> f64 {
        self.0.iter().filter(|(o, _)| o.unsigned_abs() <= k).map(|(_, p)| p).sum()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> i32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(o, p) in &self.0 {
            acc += p;
            if u < acc {
                return o;
            }
        }
        // rounding slack in the cumulative sum
        self.0.iter().rev().find(|(_, p)| *p > 0.0).map_or(0, |&(o, _)| o)
    }
}

fn check_probabilities(ps: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for p in ps {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("{what} probability {p} outside [0,1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("{what} probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// How the per-frame noise seed is derived from the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SeedMixing {
    /// SplitMix64 chain over `(stream_seed ^ salt, purpose, frame_id, class)`.
    SplitMix64 { salt: u64 },
}

impl Default for SeedMixing {
    fn default() -> Self {
        SeedMixing::SplitMix64 { salt: 0 }
    }
}

impl SeedMixing {
    fn stream(&self, seed: u64, tag: u64, frame_id: u64, class: ClassId) -> rand_chacha::ChaCha8Rng {
        match *self {
            SeedMixing::SplitMix64 { salt } => rng::stream(seed ^ salt, tag, frame_id, class.0 as u64),
        }
    }
}

/// Parametric filter error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModel {
    /// Offset distribution for classes without their own entry.
    pub count_offsets: OffsetDistribution,
    /// Per-class overrides keyed by class label.
    pub class_offsets: BTreeMap<String, OffsetDistribution>,
    /// Probability that a truly occupied cell is dropped.
    pub cell_fn_rate: f64,
    /// Probability that an unoccupied cell is spuriously set.
    pub cell_fp_rate: f64,
    /// Probabilities of shifting a surviving cell by Manhattan distance 0, 1, 2.
    pub displacement: [f64; 3],
    pub seed_mixing: SeedMixing,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl ErrorModel {
    /// No noise at all.
    pub fn zero() -> Self {
        Self {
            count_offsets: OffsetDistribution::exact(),
            class_offsets: BTreeMap::new(),
            cell_fn_rate: 0.0,
            cell_fp_rate: 0.0,
            displacement: [1.0, 0.0, 0.0],
            seed_mixing: SeedMixing::default(),
        }
    }

    /// Counts exact on 60% of frames and within one on 90%, with mildly
    /// displaced and thinned grids.
    pub fn calibrated() -> Self {
        Self {
            count_offsets: OffsetDistribution(vec![(-2, 0.05), (-1, 0.15), (0, 0.6), (1, 0.15), (2, 0.05)]),
            class_offsets: BTreeMap::new(),
            cell_fn_rate: 0.05,
            cell_fp_rate: 0.001,
            displacement: [0.7, 0.25, 0.05],
            seed_mixing: SeedMixing::default(),
        }
    }

    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        self.count_offsets.validate()?;
        for (label, d) in &self.class_offsets {
            if classes.id(label).is_none() {
                return Err(Error::UnknownClassLabel(label.clone()));
            }
            d.validate()?;
        }
        for (name, p) in [("cell_fn_rate", self.cell_fn_rate), ("cell_fp_rate", self.cell_fp_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} {p} outside [0,1]")));
            }
        }
        check_probabilities(self.displacement.iter().copied(), "displacement")
    }
}

/// Filter that perturbs the exact output with an [`ErrorModel`]; fully
/// deterministic given the stream seed and the frame id.
#[derive(Debug, Clone)]
pub struct NoisyFilter {
    classes: ClassTable,
    g: usize,
    raster: RasterMode,
    cost: f64,
    threshold: f64,
    model: ErrorModel,
    offsets: Vec<OffsetDistribution>,
    seed: u64,
}

impl NoisyFilter {
    pub fn new(classes: ClassTable, g: usize, model: ErrorModel, stream_seed: u64, cost: f64) -> Result<Self> {
        check_common(g, cost)?;
        model.validate(&classes)?;
        let offsets = classes
            .labels()
            .iter()
            .map(|l| model.class_offsets.get(l).unwrap_or(&model.count_offsets).clone())
            .collect();
        Ok(Self {
            classes,
            g,
            raster: RasterMode::AllCells,
            cost,
            threshold: crate::grid::DEFAULT_THRESHOLD,
            model,
            offsets,
            seed: stream_seed,
        })
    }

    pub fn with_raster(mut self, raster: RasterMode) -> Self {
        self.raster = raster;
        self
    }

    /// Activation threshold; noisy activations are 1 on occupied cells and 0
    /// elsewhere, so any threshold in `(0, 1]` gives the same grid.
    pub fn with_threshold(mut self, tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("threshold {tau} is not finite")));
        }
        self.threshold = tau;
        Ok(self)
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    fn perturb_mask(&self, truth: &CellMask, frame_id: u64, class: ClassId) -> CellMask {
        let g = self.g;
        let m = &self.model;
        let mut rng = m.seed_mixing.stream(self.seed, rng::TAG_GRID_NOISE, frame_id, class);
        let mut out = CellMask::new(g);
        for (i, j) in truth.true_cells() {
            if rng.random::<f64>() < m.cell_fn_rate {
                continue;
            }
            let u: f64 = rng.random();
            let d = if u < m.displacement[0] {
                0
            } else if u < m.displacement[0] + m.displacement[1] {
                1
            } else {
                2
            };
            let (ni, nj) = if d == 0 { (i, j) } else { shifted_cell(g, i, j, d, &mut rng).unwrap_or((i, j)) };
            out.set(ni, nj, true);
        }
        if m.cell_fp_rate > 0.0 {
            // independent Bernoulli trials over the free cells, drawn as
            // geometric gaps between successes
            let free: Vec<usize> = (0..g * g).filter(|&k| !out.get(k / g, k % g)).collect();
            let gaps = Geometric::new(m.cell_fp_rate).expect("rate validated");
            let mut pos = gaps.sample(&mut rng);
            while let Some(&k) = free.get(pos as usize) {
                out.set(k / g, k % g, true);
                pos = pos.saturating_add(1).saturating_add(gaps.sample(&mut rng));
            }
        }
        out
    }
}

/// Uniformly chosen in-bounds cell at Manhattan distance exactly `d`.
fn shifted_cell<R: Rng>(g: usize, i: usize, j: usize, d: isize, rng: &mut R) -> Option<(usize, usize)> {
    let (ii, jj, gi) = (i as isize, j as isize, g as isize);
    let ring: Vec<(usize, usize)> = (-d..=d)
        .flat_map(|di| {
            let rest = d - di.abs();
            let djs = if rest == 0 { vec![0] } else { vec![-rest, rest] };
            djs.into_iter().map(move |dj| (ii + di, jj + dj))
        })
        .filter(|&(a, b)| a >= 0 && b >= 0 && a < gi && b < gi)
        .map(|(a, b)| (a as usize, b as usize))
        .collect();
    if ring.is_empty() {
        None
    } else {
        Some(ring[rng.random_range(0..ring.len())])
    }
}

impl FilterOracle for NoisyFilter {
    fn name(&self) -> &str {
        "noisy"
    }

    fn grid_size(&self) -> usize {
        self.g
    }

    fn cost_per_frame(&self) -> f64 {
        self.cost
    }

    fn evaluate(&self, frame: &FrameAnnotation) -> Result<FilterOutput> {
        let truth_counts = count_objects(frame, &self.classes, None)?;
        let truth_grid = rasterize(frame, self.classes.len(), self.g, self.raster)?;
        let mut counts = CountVector::zeros(self.classes.len());
        let mut activation = ActivationMap::zeros(self.g, self.classes.len())?;
        for class in self.classes.ids() {
            let mut rng = self.model.seed_mixing.stream(self.seed, rng::TAG_COUNT_NOISE, frame.frame_id, class);
            let offset = self.offsets[class.index()].sample(&mut rng) as i64;
            let reported = (truth_counts.get(class) as i64 + offset).max(0);
            counts.set(class, reported as u32);

            let mask = self.perturb_mask(truth_grid.class(class), frame.frame_id, class);
            for (i, j) in mask.true_cells() {
                activation.set(class, i, j, 1.0)?;
            }
        }
        Ok(FilterOutput { counts, grids: threshold_activation(&activation, self.threshold)?, cost_units: self.cost })
    }
}

pub fn noisy_filter(
    frame: &FrameAnnotation,
    classes: &ClassTable,
    g: usize,
    model: &ErrorModel,
    stream_seed: u64,
    cost: f64,
) -> Result<FilterOutput> {
    NoisyFilter::new(classes.clone(), g, model.clone(), stream_seed, cost)?.evaluate(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Drop,
    FullEvaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeDecision {
    pub verdict: Verdict,
    pub filters_applied: Vec<String>,
    pub filter_cost: f64,
}

fn filter_name(base: &str, relax: u8) -> String {
    if relax == 0 {
        base.to_string()
    } else {
        format!("{base}-{relax}")
    }
}

/// Checks every predicate the filter output can speak to, relaxed by
/// `relax`: counts are widened by `±relax` and grids dilated by `relax`.
///
/// Count predicates and the implied per-class minimum of bound variables
/// go to the class-count check (CCF); variable presence, region and
/// directional predicates go to the class-location check (CLF). The frame
/// passes only if every applied check passes. Attribute constraints are not
/// visible to filters.
pub fn cascade_decide(query: &FramePredicate, fo: &FilterOutput, relax: u8) -> Result<CascadeDecision> {
    if relax > MAX_RELAX {
        return Err(Error::InvalidParameter(format!("relax {relax} > {MAX_RELAX}")));
    }
    let widen = relax as u32;
    let mut applied = Vec::new();
    let mut pass = true;

    let mut per_class: BTreeMap<ClassId, u32> = BTreeMap::new();
    for v in &query.vars {
        *per_class.entry(v.class_id).or_default() += 1;
    }
    if !query.counts.is_empty() || !per_class.is_empty() {
        applied.push(filter_name("CCF", relax));
        pass &= query.counts.iter().all(|p| p.holds_widened(fo.counts.select(p.class_id), widen));
        pass &= per_class
            .iter()
            .all(|(&c, &k)| CountPredicate::new(Some(c), Comparator::Ge, k).holds_widened(fo.counts.get(c), widen));
    }

    if pass && query.has_objects() {
        applied.push(filter_name("CLF", relax));
        let grids = fo.grids.dilate(relax)?;
        let mode = query.options.object_relation;
        pass &= query.vars.iter().all(|v| {
            let mask = grids.class(v.class_id);
            !mask.is_empty()
                && v.regions.iter().all(|(rect, _)| mask_touches_region(mask, rect))
                && v.region_relations.iter().all(|(rect, rel)| region_relation_on_grid(mask, rect, *rel, mode))
        });
        for sp in &query.spatial {
            if !pass {
                break;
            }
            let subject = grids.class(query.vars[sp.subject].class_id);
            let target = grids.class(query.vars[sp.target].class_id);
            pass &= relation_between_grids(target, subject, sp.relation, GridRelationMode::Exists)?;
        }
    }

    Ok(CascadeDecision {
        verdict: if pass { Verdict::FullEvaluate } else { Verdict::Drop },
        filters_applied: applied,
        filter_cost: fo.cost_units,
    })
}
