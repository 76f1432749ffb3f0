//! Filter accuracy: relaxed count accuracy, grid localization f1 and
//! answer-set scores.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellMask, OccupancyGrid, MAX_RELAX};
use crate::model::{ClassId, CountVector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    /// `tp / (tp + fp)`; 1 when nothing was predicted and nothing was there,
    /// 0 when only one side is empty.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.is_empty())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.is_empty())
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Both prediction and truth empty.
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn swapped(&self) -> Self {
        Self { tp: self.tp, fp: self.fn_, fn_: self.fp }
    }
}

fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Fraction of frames whose reported count is within `k` of the truth, for
/// one class or for the total.
pub fn count_accuracy(pred: &[CountVector], truth: &[CountVector], k: u32, class: Option<ClassId>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientSample("count accuracy needs at least one frame".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p.select(class).abs_diff(t.select(class)) <= k).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// How predicted cells are paired with truth cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Predicted cells in row-major order each claim the nearest unclaimed
    /// truth cell within the radius, ties broken row-major.
    Greedy,
    /// The greedy pairing, then grown by augmenting paths until no further
    /// pair can be added. Always a maximum matching.
    #[default]
    GreedyRepaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<ConfusionCounts> for GridScore {
    fn from(counts: ConfusionCounts) -> Self {
        Self { counts, precision: counts.precision(), recall: counts.recall(), f1: counts.f1() }
    }
}

/// Localization score of one class layer.
pub fn grid_f1(pred: &OccupancyGrid, truth: &OccupancyGrid, class: ClassId, radius: u8) -> Result<GridScore> {
    grid_f1_with(pred, truth, class, radius, MatchStrategy::default())
}

pub fn grid_f1_with(
    pred: &OccupancyGrid,
    truth: &OccupancyGrid,
    class: ClassId,
    radius: u8,
    strategy: MatchStrategy,
) -> Result<GridScore> {
    if pred.g() != truth.g() {
        return Err(Error::GridMismatch(pred.g(), truth.g()));
    }
    if class.index() >= pred.n_classes() || class.index() >= truth.n_classes() {
        return Err(Error::UnknownClassId { id: class.0, n_classes: pred.n_classes().min(truth.n_classes()) });
    }
    Ok(match_masks(pred.class(class), truth.class(class), radius, strategy)?.into())
}

/// Pairs true cells of `pred` with true cells of `truth` within Manhattan
/// distance `radius` and returns the confusion counts.
pub fn match_masks(pred: &CellMask, truth: &CellMask, radius: u8, strategy: MatchStrategy) -> Result<ConfusionCounts> {
    if pred.g() != truth.g() {
        return Err(Error::GridMismatch(pred.g(), truth.g()));
    }
    if radius > MAX_RELAX {
        return Err(Error::InvalidParameter(format!("radius {radius} > {MAX_RELAX}")));
    }
    if radius == 0 {
        // only identical cells can pair, so every strategy agrees
        let tp = pred.as_slice().iter().zip(truth.as_slice()).filter(|(a, b)| **a && **b).count() as u64;
        return Ok(ConfusionCounts::new(tp, pred.count() as u64 - tp, truth.count() as u64 - tp));
    }
    let p: Vec<(usize, usize)> = pred.true_cells().collect();
    let t: Vec<(usize, usize)> = truth.true_cells().collect();
    let (g, r) = (pred.g() as isize, radius as isize);
    let mut slot = vec![usize::MAX; (g * g) as usize];
    for (k, &(i, j)) in t.iter().enumerate() {
        slot[i * g as usize + j] = k;
    }

    // candidate truth cells per prediction, nearest first then row-major,
    // stored flat with per-prediction offsets
    let mut offsets = Vec::with_capacity(p.len() + 1);
    let mut flat = Vec::new();
    offsets.push(0);
    for &(pi, pj) in &p {
        let (pi, pj) = (pi as isize, pj as isize);
        for d in 0..=r {
            for di in -d..=d {
                let i = pi + di;
                if i < 0 || i >= g {
                    continue;
                }
                let rest = d - di.abs();
                for dj in [-rest, rest].into_iter().take(if rest == 0 { 1 } else { 2 }) {
                    let j = pj + dj;
                    if j >= 0 && j < g {
                        let k = slot[(i * g + j) as usize];
                        if k != usize::MAX {
                            flat.push(k);
                        }
                    }
                }
            }
        }
        offsets.push(flat.len());
    }
    let adj = Adjacency { offsets, flat };

    let mut owner: Vec<Option<usize>> = vec![None; t.len()];
    let mut partner: Vec<Option<usize>> = vec![None; p.len()];
    for i in 0..p.len() {
        if let Some(&k) = adj.of(i).iter().find(|&&k| owner[k].is_none()) {
            owner[k] = Some(i);
            partner[i] = Some(k);
        }
    }

    if strategy == MatchStrategy::GreedyRepaired {
        let mut seen = vec![0usize; t.len()];
        let mut stack = Vec::new();
        for i in 0..p.len() {
            if partner[i].is_none() {
                augment(i, i + 1, &adj, &mut owner, &mut partner, &mut seen, &mut stack);
            }
        }
    }

    let tp = partner.iter().filter(|m| m.is_some()).count() as u64;
    Ok(ConfusionCounts::new(tp, p.len() as u64 - tp, t.len() as u64 - tp))
}

struct Adjacency {
    offsets: Vec<usize>,
    flat: Vec<usize>,
}

impl Adjacency {
    fn of(&self, i: usize) -> &[usize] {
        &self.flat[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Depth-first search for an augmenting path from the unmatched prediction
/// `root`; truth cells marked with `stamp` are already visited.
fn augment(
    root: usize,
    stamp: usize,
    adj: &Adjacency,
    owner: &mut [Option<usize>],
    partner: &mut [Option<usize>],
    seen: &mut [usize],
    stack: &mut Vec<(usize, usize)>,
) -> bool {
    stack.clear();
    stack.push((root, adj.offsets[root]));
    while let Some(top) = stack.last_mut() {
        let (u, e) = *top;
        if e == adj.offsets[u + 1] {
            stack.pop();
            continue;
        }
        top.1 += 1;
        let k = adj.flat[e];
        if seen[k] == stamp {
            continue;
        }
        seen[k] = stamp;
        match owner[k] {
            Some(v) => stack.push((v, adj.offsets[v])),
            None => {
                for &(u, e) in stack.iter() {
                    let k = adj.flat[e - 1];
                    owner[k] = Some(u);
                    partner[u] = Some(k);
                }
                return true;
            }
        }
    }
    false
}

/// How per-frame confusion counts are folded into one f1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// f1 of the pooled tp/fp/fn.
    #[default]
    Micro,
    /// Mean of per-frame f1.
    Macro,
}

pub fn aggregate_f1(frames: &[ConfusionCounts], averaging: Averaging) -> f64 {
    match averaging {
        Averaging::Micro => frames.iter().copied().sum::<ConfusionCounts>().f1(),
        Averaging::Macro if frames.is_empty() => 1.0,
        Averaging::Macro => frames.iter().map(ConfusionCounts::f1).sum::<f64>() / frames.len() as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `|matched ∩ truth| / |truth|`; absent when the truth set is empty.
    pub accuracy: Option<f64>,
    pub confusion: ConfusionCounts,
}

pub fn answer_set_scores(matched: &BTreeSet<u64>, truth: &BTreeSet<u64>) -> AnswerScores {
    let tp = matched.intersection(truth).count() as u64;
    let confusion = ConfusionCounts::new(tp, matched.len() as u64 - tp, truth.len() as u64 - tp);
    AnswerScores {
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        accuracy: (!truth.is_empty()).then(|| tp as f64 / truth.len() as f64),
        confusion,
    }
}
