//! Per-class `g x g` occupancy grids.
//!
//! Cell `(i, j)` (row `i` from the top, column `j` from the left) covers
//! `[j/g, (j+1)/g) x [i/g, (i+1)/g)`; the last row and column are closed at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, ClassId, FrameAnnotation};

pub const DEFAULT_GRID_SIZE: usize = 56;
pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const MAX_RELAX: u8 = 2;

/// Boolean `g x g` mask for a single class, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellMask {
    g: usize,
    cells: Vec<bool>,
}

impl CellMask {
    pub fn new(g: usize) -> Self {
        Self { g, cells: vec![false; g * g] }
    }

    pub fn from_cells(g: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != g * g {
            return Err(Error::LengthMismatch(cells.len(), g * g));
        }
        Ok(Self { g, cells })
    }

    pub fn from_true_cells(g: usize, true_cells: &[(usize, usize)]) -> Self {
        let mut m = Self::new(g);
        for &(i, j) in true_cells {
            m.set(i, j, true);
        }
        m
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.g + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.g + j] = v;
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// True cells in row-major order.
    pub fn true_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let g = self.g;
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(move |(k, _)| (k / g, k % g))
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.cells
    }

    /// True iff every true cell of `self` is also true in `other`.
    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.g == other.g && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn dilate(&self, radius: u8) -> Result<CellMask> {
        check_radius(radius)?;
        if radius == 0 {
            return Ok(self.clone());
        }
        let r = radius as isize;
        let g = self.g as isize;
        let mut out = CellMask::new(self.g);
        for (i, j) in self.true_cells() {
            let (i, j) = (i as isize, j as isize);
            for di in -r..=r {
                let span = r - di.abs();
                for dj in -span..=span {
                    let (ni, nj) = (i + di, j + dj);
                    if ni >= 0 && nj >= 0 && ni < g && nj < g {
                        out.set(ni as usize, nj as usize, true);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_radius(radius: u8) -> Result<()> {
    if radius > MAX_RELAX {
        Err(Error::InvalidParameter(format!("relaxation radius {radius} > {MAX_RELAX}")))
    } else {
        Ok(())
    }
}

/// Normalized rectangle `(x0, y0, x1, y1)` covered by cell `(i, j)`.
pub fn cell_rect(g: usize, i: usize, j: usize) -> (f64, f64, f64, f64) {
    let gf = g as f64;
    (j as f64 / gf, i as f64 / gf, (j + 1) as f64 / gf, (i + 1) as f64 / gf)
}

/// Per-class occupancy: one [`CellMask`] per class, all of the same `g`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyGrid {
    g: usize,
    layers: Vec<CellMask>,
}

impl OccupancyGrid {
    pub fn new(g: usize, n_classes: usize) -> Self {
        Self { g, layers: vec![CellMask::new(g); n_classes] }
    }

    pub fn from_layers(g: usize, layers: Vec<CellMask>) -> Result<Self> {
        if let Some(bad) = layers.iter().find(|l| l.g != g) {
            return Err(Error::GridMismatch(g, bad.g));
        }
        Ok(Self { g, layers })
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn n_classes(&self) -> usize {
        self.layers.len()
    }

    pub fn class(&self, id: ClassId) -> &CellMask {
        &self.layers[id.index()]
    }

    pub fn class_mut(&mut self, id: ClassId) -> &mut CellMask {
        &mut self.layers[id.index()]
    }

    pub fn layers(&self) -> &[CellMask] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(CellMask::is_empty)
    }

    pub fn is_subset_of(&self, other: &OccupancyGrid) -> bool {
        self.g == other.g
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.is_subset_of(b))
    }

    /// Expands every true cell to its Manhattan ball of the given radius.
    pub fn dilate(&self, radius: u8) -> Result<OccupancyGrid> {
        let layers = self.layers.iter().map(|l| l.dilate(radius)).collect::<Result<_>>()?;
        Ok(OccupancyGrid { g: self.g, layers })
    }
}

/// Which cells an object marks when rasterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterMode {
    /// Every cell the box overlaps with positive area.
    #[default]
    AllCells,
    /// Only the cell containing the box centroid.
    CenterCell,
}

/// Column (or row) indices whose half-open interval overlaps `(lo, hi)`.
fn covered_span(g: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let gf = g as f64;
    let first = (0..g).find(|&j| (j + 1) as f64 / gf > lo).unwrap_or(g);
    let end = (first..g).find(|&j| j as f64 / gf >= hi).unwrap_or(g);
    first..end
}

/// Index of the cell containing coordinate `v`.
fn cell_index(g: usize, v: f64) -> usize {
    let gf = g as f64;
    let mut j = ((v * gf).floor().max(0.0) as usize).min(g - 1);
    while j > 0 && j as f64 / gf > v {
        j -= 1;
    }
    while j + 1 < g && (j + 1) as f64 / gf <= v {
        j += 1;
    }
    j
}

pub(crate) fn mark_box(mask: &mut CellMask, bbox: &BBox, mode: RasterMode) {
    let g = mask.g();
    match mode {
        RasterMode::AllCells => {
            let cols = covered_span(g, bbox.x_min(), bbox.x_max());
            for i in covered_span(g, bbox.y_min(), bbox.y_max()) {
                for j in cols.clone() {
                    mask.set(i, j, true);
                }
            }
        }
        RasterMode::CenterCell => {
            let (cx, cy) = bbox.center();
            mask.set(cell_index(g, cy), cell_index(g, cx), true);
        }
    }
}

/// Rasterizes the frame's boxes onto a per-class grid of side `g`.
pub fn rasterize(
    frame: &FrameAnnotation,
    n_classes: usize,
    g: usize,
    mode: RasterMode,
) -> Result<OccupancyGrid> {
    if g == 0 {
        return Err(Error::InvalidParameter("grid size must be >= 1".into()));
    }
    let mut grid = OccupancyGrid::new(g, n_classes);
    for obj in &frame.objects {
        if obj.class_id.index() >= n_classes {
            return Err(Error::UnknownClassId { id: obj.class_id.0, n_classes });
        }
        mark_box(grid.class_mut(obj.class_id), &obj.bbox, mode);
    }
    Ok(grid)
}

/// Per-class real-valued `g x g` map, thresholded into an occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    g: usize,
    n_classes: usize,
    values: Vec<f64>,
}

impl ActivationMap {
    pub fn zeros(g: usize, n_classes: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::InvalidParameter("grid size must be >= 1".into()));
        }
        Ok(Self { g, n_classes, values: vec![0.0; g * g * n_classes] })
    }

    /// `values` is class-major, then row-major.
    pub fn from_values(g: usize, n_classes: usize, values: Vec<f64>) -> Result<Self> {
        if g == 0 {
            return Err(Error::InvalidParameter("grid size must be >= 1".into()));
        }
        if values.len() != g * g * n_classes {
            return Err(Error::LengthMismatch(values.len(), g * g * n_classes));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("activation values must be finite".into()));
        }
        Ok(Self { g, n_classes, values })
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, class: ClassId, i: usize, j: usize) -> f64 {
        self.values[(class.index() * self.g + i) * self.g + j]
    }

    pub fn set(&mut self, class: ClassId, i: usize, j: usize, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::InvalidParameter("activation values must be finite".into()));
        }
        self.values[(class.index() * self.g + i) * self.g + j] = v;
        Ok(())
    }
}

/// A cell is occupied iff its activation is `>= tau`.
pub fn threshold_activation(map: &ActivationMap, tau: f64) -> Result<OccupancyGrid> {
    if !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("threshold {tau} is not finite")));
    }
    let gg = map.g * map.g;
    let layers = map
        .values
        .chunks(gg)
        .map(|chunk| CellMask { g: map.g, cells: chunk.iter().map(|&v| v >= tau).collect() })
        .collect();
    Ok(OccupancyGrid { g: map.g, layers })
}
