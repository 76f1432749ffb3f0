//! Synthetic annotation streams.
//!
//! Objects arrive per class as a Poisson process, stay for a geometric number
//! of frames and move linearly. Boxes are clamped to the unit square on
//! emission; an object leaves when its dwell time runs out or when it has
//! drifted entirely off frame.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, ClassId, ClassTable, FrameAnnotation, ObjectInstance};
use crate::rng;

/// Per-class generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSpec {
    pub label: String,
    /// Mean arrivals per frame.
    pub arrival_rate: f64,
    /// Mean frames an object stays, at least 1.
    pub dwell_mean: f64,
    pub width: [f64; 2],
    pub height: [f64; 2],
    /// Horizontal velocity range, normalized units per frame.
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    /// Attribute key to `[(value, probability)]`.
    pub attributes: BTreeMap<String, Vec<(String, f64)>>,
}

impl Default for ClassSpec {
    fn default() -> Self {
        Self {
            label: String::new(),
            arrival_rate: 0.0,
            dwell_mean: 20.0,
            width: [0.05, 0.2],
            height: [0.05, 0.2],
            vx: [-0.005, 0.005],
            vy: [-0.005, 0.005],
            attributes: BTreeMap::new(),
        }
    }
}

impl ClassSpec {
    pub fn new(label: impl Into<String>, arrival_rate: f64, dwell_mean: f64) -> Self {
        Self { label: label.into(), arrival_rate, dwell_mean, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("class `{}`: {m}", self.label)));
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return bad(format!("arrival rate {} must be finite and >= 0", self.arrival_rate));
        }
        if !(self.dwell_mean.is_finite() && self.dwell_mean >= 1.0) {
            return bad(format!("dwell mean {} must be >= 1", self.dwell_mean));
        }
        for (name, [lo, hi]) in [("width", self.width), ("height", self.height)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1"));
            }
        }
        for (name, [lo, hi]) in [("vx", self.vx), ("vy", self.vy)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        for (key, palette) in &self.attributes {
            let sum: f64 = palette.iter().map(|(_, p)| p).sum();
            if palette.is_empty() || palette.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                return bad(format!("attribute `{key}` probabilities must lie in [0,1] and sum to 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub n_frames: u64,
    #[serde(skip)]
    pub seed: u64,
    /// Frames simulated before the first emitted frame; defaults to ten
    /// times the longest mean dwell so the stream starts near steady state.
    pub warmup: Option<u64>,
    pub classes: Vec<ClassSpec>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { n_frames: 10_000, seed: 0, warmup: None, classes: Vec::new() }
    }
}

impl StreamConfig {
    pub fn validate(&self, table: &ClassTable) -> Result<()> {
        for c in &self.classes {
            if table.id(&c.label).is_none() {
                return Err(Error::UnknownClassLabel(c.label.clone()));
            }
            c.validate()?;
        }
        Ok(())
    }

    fn warmup_frames(&self) -> u64 {
        self.warmup.unwrap_or_else(|| {
            let longest = self.classes.iter().map(|c| c.dwell_mean).fold(0.0, f64::max);
            (10.0 * longest).ceil() as u64
        })
    }
}

struct Live {
    class_id: ClassId,
    track: u64,
    // unclamped box corners
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    vx: f64,
    vy: f64,
    remaining: u64,
    attrs: BTreeMap<String, String>,
}

impl Live {
    fn clamped(&self) -> Option<BBox> {
        let (x0, y0) = (self.x0.clamp(0.0, 1.0), self.y0.clamp(0.0, 1.0));
        let (x1, y1) = (self.x1.clamp(0.0, 1.0), self.y1.clamp(0.0, 1.0));
        if x1 > x0 && y1 > y0 {
            BBox::new(x0, y0, x1, y1).ok()
        } else {
            None
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn spawn(spec: &ClassSpec, class_id: ClassId, track: u64, seed: u64) -> Live {
    let mut r = rng::stream(seed, rng::TAG_OBJECT, track, 0);
    let w = uniform(&mut r, spec.width);
    let h = uniform(&mut r, spec.height);
    let cx: f64 = r.random();
    let cy: f64 = r.random();
    let vx = uniform(&mut r, spec.vx);
    let vy = uniform(&mut r, spec.vy);
    let extra = Geometric::new(1.0 / spec.dwell_mean).map_or(0, |d| d.sample(&mut r));
    let attrs = spec
        .attributes
        .iter()
        .map(|(key, palette)| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let pick = palette
                .iter()
                .find(|(_, p)| {
                    acc += p;
                    u < acc
                })
                .or(palette.last())
                .map(|(v, _)| v.clone())
                .unwrap_or_default();
            (key.clone(), pick)
        })
        .collect();
    Live {
        class_id,
        track,
        x0: cx - w / 2.0,
        y0: cy - h / 2.0,
        x1: cx + w / 2.0,
        y1: cy + h / 2.0,
        vx,
        vy,
        remaining: 1 + extra,
        attrs,
    }
}

/// Deterministic stream for `config`; labels resolve against `table`.
pub fn generate(config: &StreamConfig, table: &ClassTable) -> Result<Vec<FrameAnnotation>> {
    config.validate(table)?;
    let ids: Vec<ClassId> = config.classes.iter().map(|c| table.id(&c.label).expect("validated")).collect();
    let warmup = config.warmup_frames();
    let mut live: Vec<Live> = Vec::new();
    let mut next_track = 0u64;
    let mut out = Vec::with_capacity(config.n_frames as usize);

    for t in 0..warmup + config.n_frames {
        live.retain_mut(|o| {
            o.remaining -= 1;
            o.x0 += o.vx;
            o.x1 += o.vx;
            o.y0 += o.vy;
            o.y1 += o.vy;
            o.remaining > 0 && o.clamped().is_some()
        });
        for (k, spec) in config.classes.iter().enumerate() {
            if spec.arrival_rate <= 0.0 {
                continue;
            }
            let mut r = rng::stream(config.seed, rng::TAG_ARRIVALS, t, k as u64);
            let n = Poisson::new(spec.arrival_rate).map_or(0.0, |p| p.sample(&mut r)) as u64;
            for _ in 0..n {
                let o = spawn(spec, ids[k], next_track, config.seed);
                next_track += 1;
                if o.clamped().is_some() {
                    live.push(o);
                }
            }
        }
        if t >= warmup {
            let objects = live
                .iter()
                .filter_map(|o| {
                    let mut inst = ObjectInstance::new(o.class_id, o.clamped()?).with_track(o.track);
                    inst.attrs = o.attrs.clone();
                    Some(inst)
                })
                .collect();
            out.push(FrameAnnotation::new(t - warmup, objects));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamProfile {
    pub frames: usize,
    pub per_class: Vec<Moments>,
    pub total: Moments,
}

/// Per-class and total objects-per-frame mean and (population) standard
/// deviation.
pub fn profile(stream: &[FrameAnnotation], n_classes: usize) -> Result<StreamProfile> {
    if stream.is_empty() {
        return Err(Error::InsufficientSample("cannot profile an empty stream".into()));
    }
    let n = stream.len() as f64;
    let mut sums = vec![(0.0f64, 0.0f64); n_classes + 1];
    for f in stream {
        let mut counts = vec![0u64; n_classes];
        for o in &f.objects {
            let slot = counts
                .get_mut(o.class_id.index())
                .ok_or(Error::UnknownClassId { id: o.class_id.0, n_classes })?;
            *slot += 1;
        }
        let total = counts.iter().sum::<u64>();
        for (s, c) in sums.iter_mut().zip(counts.into_iter().chain([total])) {
            s.0 += c as f64;
            s.1 += (c * c) as f64;
        }
    }
    let mut moments: Vec<Moments> = sums
        .into_iter()
        .map(|(s, sq)| {
            let mean = s / n;
            Moments { mean, std: (sq / n - mean * mean).max(0.0).sqrt() }
        })
        .collect();
    let total = moments.pop().expect("total slot");
    Ok(StreamProfile { frames: stream.len(), per_class: moments, total })
}
