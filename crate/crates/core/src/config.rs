//! Engine configuration file.
//!
//! A TOML tree; every key has a default, so an empty file is a valid
//! configuration. Any key can be overridden by its dotted name, e.g.
//! `grid.size=32` or `filter.noise.cell_fn_rate=0.1`.
//!
//! ```toml
//! seed = 7
//! classes = ["person", "car", "bus", "truck"]
//! relax = 1
//!
//! [grid]
//! size = 56
//! threshold = 0.2
//!
//! [filter]
//! kind = "noisy"
//! [filter.noise]
//! count_offsets = [[-1, 0.2], [0, 0.6], [1, 0.2]]
//!
//! [regions]
//! crosswalk = [0.2, 0.6, 0.8, 0.8]
//!
//! [estimator]
//! method = "cv"
//! n = 500
//! controls = ["verdict:1"]
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Control, EngineSettings, Estimator, Evaluation, MuSource};
use crate::error::{Error, Result};
use crate::estimators::{BetaMode, WideLayout};
use crate::filters::{ErrorModel, ExactFilter, FilterOracle, NoisyFilter, DEFAULT_DETECTOR_COST, DEFAULT_FILTER_COST};
use crate::grid::{RasterMode, DEFAULT_GRID_SIZE, DEFAULT_THRESHOLD, MAX_RELAX};
use crate::model::{BBox, ClassTable, Region, RegionSet};
use crate::predicates::{EvalOptions, ObjectRelationMode};
use crate::sim::{ClassSpec, StreamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub classes: Vec<String>,
    pub relax: u8,
    pub grid: GridSection,
    pub filter: FilterSection,
    pub cost: CostSection,
    /// Extra named regions, `name = [x_min, y_min, x_max, y_max]`.
    pub regions: BTreeMap<String, [f64; 4]>,
    pub predicates: PredicateSection,
    pub simulator: StreamConfig,
    pub estimator: EstimatorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub size: usize,
    pub threshold: f64,
    pub raster: RasterMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    #[default]
    Exact,
    Noisy,
}

impl FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(FilterKind::Exact),
            "noisy" => Ok(FilterKind::Noisy),
            other => Err(Error::Config(format!("unknown filter kind `{other}` (exact | noisy)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub kind: FilterKind,
    pub noise: ErrorModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub filter: f64,
    pub detector: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredicateSection {
    pub object_relation: ObjectRelationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Plain,
    Cv,
    Mcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuKind {
    #[default]
    TwoStage,
    SampleMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    #[default]
    Optimal,
    SplitSample,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationKind {
    Exhaustive,
    #[default]
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub evaluation: EvaluationKind,
    pub method: Method,
    /// Frames sampled per window.
    pub n: usize,
    /// `verdict`, `verdict:<relax>`, `total` or `count:<class>`.
    pub controls: Vec<String>,
    pub mu: MuKind,
    pub wide_fraction: f64,
    pub layout: WideLayout,
    pub beta: BetaKind,
    pub beta_fixed: Vec<f64>,
    /// Repetitions for estimator experiments.
    pub repetitions: usize,
    pub include_partial: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { size: DEFAULT_GRID_SIZE, threshold: DEFAULT_THRESHOLD, raster: RasterMode::default() }
    }
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { kind: FilterKind::Exact, noise: ErrorModel::calibrated() }
    }
}

impl Default for CostSection {
    fn default() -> Self {
        Self { filter: DEFAULT_FILTER_COST, detector: DEFAULT_DETECTOR_COST }
    }
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            evaluation: EvaluationKind::Sampled,
            method: Method::Plain,
            n: 500,
            controls: vec!["verdict".into()],
            mu: MuKind::TwoStage,
            wide_fraction: 1.0,
            layout: WideLayout::Superset,
            beta: BetaKind::Optimal,
            beta_fixed: Vec::new(),
            repetitions: 200,
            include_partial: false,
        }
    }
}

pub const DEFAULT_CLASSES: [&str; 4] = ["person", "car", "bus", "truck"];

fn default_simulator() -> StreamConfig {
    let mut car = ClassSpec::new("car", 0.2, 25.0);
    car.attributes.insert(
        "color".into(),
        vec![("red".into(), 0.2), ("blue".into(), 0.2), ("white".into(), 0.3), ("black".into(), 0.3)],
    );
    let mut bus = ClassSpec::new("bus", 0.02, 30.0);
    bus.width = [0.15, 0.35];
    bus.height = [0.1, 0.25];
    let mut truck = ClassSpec::new("truck", 0.04, 25.0);
    truck.width = [0.1, 0.3];
    let mut person = ClassSpec::new("person", 0.15, 20.0);
    person.width = [0.02, 0.06];
    person.height = [0.05, 0.15];
    StreamConfig { classes: vec![person, car, bus, truck], ..StreamConfig::default() }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            relax: 0,
            grid: GridSection::default(),
            filter: FilterSection::default(),
            cost: CostSection::default(),
            regions: BTreeMap::new(),
            predicates: PredicateSection::default(),
            simulator: default_simulator(),
            estimator: EstimatorSection::default(),
        }
    }
}

/// Splits `a.b.c=value` into the key path and the raw value.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not of the form name=value")))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{text}` has an empty name")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn override_value(raw: &str) -> toml::Value {
    // bare words that are not TOML literals are taken as strings
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), override_value(raw));
    Ok(())
}

// Tables merge key by key; any other value replaces the default.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl EngineConfig {
    /// Parses `text` over the defaults, applies `overrides`, then validates.
    /// Sections and keys missing from `text` keep their default values.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut root = toml::Table::try_from(EngineConfig::default()).expect("defaults always serialize");
        merge(&mut root, user);
        for (k, v) in overrides {
            apply_override(&mut root, k, v)?;
        }
        let cfg: EngineConfig = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let table = self.class_table()?;
        if self.relax > MAX_RELAX {
            return Err(Error::Config(format!("relax {} > {MAX_RELAX}", self.relax)));
        }
        if self.grid.size == 0 {
            return Err(Error::Config("grid.size must be >= 1".into()));
        }
        if !self.grid.threshold.is_finite() {
            return Err(Error::Config("grid.threshold must be finite".into()));
        }
        for (name, c) in [("cost.filter", self.cost.filter), ("cost.detector", self.cost.detector)] {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        self.region_set()?;
        self.filter.noise.validate(&table)?;
        self.simulator.validate(&table)?;
        self.controls(&table)?;
        let e = &self.estimator;
        if e.beta == BetaKind::Fixed && e.beta_fixed.len() != self.estimator.controls.len() {
            return Err(Error::Config("estimator.beta_fixed needs one coefficient per control".into()));
        }
        if !(e.wide_fraction > 0.0 && e.wide_fraction <= 1.0) {
            return Err(Error::Config(format!("estimator.wide_fraction {} outside (0, 1]", e.wide_fraction)));
        }
        Ok(())
    }

    pub fn class_table(&self) -> Result<ClassTable> {
        ClassTable::new(self.classes.iter().cloned())
    }

    pub fn region_set(&self) -> Result<RegionSet> {
        let mut set = RegionSet::quadrants();
        for (name, rect) in &self.regions {
            let rect = BBox::try_from(*rect).map_err(|e| Error::Config(format!("region `{name}`: {e}")))?;
            set.insert(Region::new(name.clone(), rect));
        }
        Ok(set)
    }

    pub fn settings(&self) -> Result<EngineSettings> {
        Ok(EngineSettings {
            regions: self.region_set()?,
            eval: EvalOptions { object_relation: self.predicates.object_relation },
            detector_cost: self.cost.detector,
            seed: self.seed,
            include_partial: self.estimator.include_partial,
        })
    }

    pub fn exact_filter(&self) -> Result<ExactFilter> {
        Ok(ExactFilter::new(self.class_table()?, self.grid.size, self.cost.filter)?.with_raster(self.grid.raster))
    }

    pub fn build_filter(&self) -> Result<Box<dyn FilterOracle>> {
        Ok(match self.filter.kind {
            FilterKind::Exact => Box::new(self.exact_filter()?),
            FilterKind::Noisy => Box::new(
                NoisyFilter::new(self.class_table()?, self.grid.size, self.filter.noise.clone(), self.seed, self.cost.filter)?
                    .with_raster(self.grid.raster)
                    .with_threshold(self.grid.threshold)?,
            ),
        })
    }

    /// Simulator settings with the top-level seed.
    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig { seed: self.seed, ..self.simulator.clone() }
    }

    fn controls(&self, table: &ClassTable) -> Result<Vec<Control>> {
        self.estimator.controls.iter().map(|c| parse_control(c, table, self.relax)).collect()
    }

    pub fn evaluation(&self) -> Result<Evaluation> {
        let e = &self.estimator;
        if e.evaluation == EvaluationKind::Exhaustive {
            return Ok(Evaluation::Exhaustive);
        }
        let estimator = match e.method {
            Method::Plain => Estimator::Plain,
            Method::Cv | Method::Mcv => {
                let controls = self.controls(&self.class_table()?)?;
                if e.method == Method::Cv && controls.len() != 1 {
                    return Err(Error::Config(format!("method cv takes one control, got {}", controls.len())));
                }
                if e.method == Method::Mcv && controls.is_empty() {
                    return Err(Error::Config("method mcv needs at least one control".into()));
                }
                Estimator::ControlVariates {
                    controls,
                    mu: match e.mu {
                        MuKind::TwoStage => MuSource::TwoStage { wide_fraction: e.wide_fraction, layout: e.layout },
                        MuKind::SampleMean => MuSource::SampleMean,
                    },
                    beta: match e.beta {
                        BetaKind::Optimal => BetaMode::Optimal,
                        BetaKind::SplitSample => BetaMode::SplitSample,
                        BetaKind::Fixed => BetaMode::Fixed(e.beta_fixed.clone()),
                    },
                }
            }
        };
        Ok(Evaluation::Sampled { n: e.n, estimator })
    }
}

/// `verdict` uses `default_relax`.
pub fn parse_control(text: &str, classes: &ClassTable, default_relax: u8) -> Result<Control> {
    let (head, arg) = match text.split_once(':') {
        Some((h, a)) => (h.trim(), Some(a.trim())),
        None => (text.trim(), None),
    };
    match (head, arg) {
        ("verdict", None) => Ok(Control::Verdict { relax: default_relax }),
        ("verdict", Some(r)) => match r.parse::<u8>() {
            Ok(relax) if relax <= MAX_RELAX => Ok(Control::Verdict { relax }),
            _ => Err(Error::Config(format!("control `{text}`: relax must be 0, 1 or 2"))),
        },
        ("total", None) => Ok(Control::TotalCount),
        ("count", Some(label)) => classes
            .id(label)
            .map(|class_id| Control::ClassCount { class_id })
            .ok_or_else(|| Error::UnknownClassLabel(label.to_string())),
        _ => Err(Error::Config(format!("unknown control `{text}` (verdict[:k] | total | count:<class>)"))),
    }
}
