//! Query execution over annotation streams.
//!
//! The annotation itself plays the part of the expensive detector: a frame
//! that passes the filter cascade is evaluated exactly against its
//! annotation, at the configured detector cost.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{cv_estimate_with, mcv_estimate_with, plain_mean, two_stage_mu, BetaMode, CvEstimate, PairedSample, WideLayout};
use crate::filters::{cascade_decide, FilterOracle, FilterOutput, Verdict, DEFAULT_DETECTOR_COST};
use crate::metrics::{answer_set_scores, AnswerScores};
use crate::model::{ClassId, FrameAnnotation, RegionSet};
use crate::predicates::{EvalOptions, FramePredicate};
use crate::query::{QueryAst, SelectKind, WindowSpec};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub regions: RegionSet,
    pub eval: EvalOptions,
    pub detector_cost: f64,
    /// Seed for window sampling.
    pub seed: u64,
    /// Also report a trailing window shorter than the window size.
    pub include_partial: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            regions: RegionSet::default(),
            eval: EvalOptions::default(),
            detector_cost: DEFAULT_DETECTOR_COST,
            seed: 0,
            include_partial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub matched_frame_ids: Vec<u64>,
    pub frames_scanned: u64,
    pub frames_full_evaluated: u64,
    pub filter_cost_total: f64,
    pub detector_cost_total: f64,
    pub selectivity: f64,
    /// Distinct filter checks the cascade applied, in first-use order.
    pub filters_applied: Vec<String>,
    /// Frames a filterless scan matches.
    pub truth_matched: u64,
    /// Matched set scored against the filterless scan.
    pub scores: AnswerScores,
}

fn check_order(stream: &[FrameAnnotation]) -> Result<()> {
    for w in stream.windows(2) {
        if w[1].frame_id <= w[0].frame_id {
            return Err(Error::InvalidParameter(format!(
                "stream not ordered by frame id: {} follows {}",
                w[1].frame_id, w[0].frame_id
            )));
        }
    }
    Ok(())
}

pub fn compile(query: &QueryAst, settings: &EngineSettings) -> Result<FramePredicate> {
    FramePredicate::compile(query, &settings.regions, settings.eval)
}

/// Runs a `SELECT FRAMES` query. Without a filter every frame is evaluated.
pub fn run_selection(
    stream: &[FrameAnnotation],
    query: &QueryAst,
    filter: Option<&dyn FilterOracle>,
    relax: u8,
    settings: &EngineSettings,
) -> Result<RunReport> {
    if query.select != SelectKind::Frames || query.window.is_some() {
        return Err(Error::QueryShape("selection runs need SELECT FRAMES without a window".into()));
    }
    check_order(stream)?;
    let plan = compile(query, settings)?;
    let mut matched = Vec::new();
    let mut truth = BTreeSet::new();
    let mut full = 0u64;
    let mut filter_cost = 0.0;
    let mut applied: Vec<String> = Vec::new();

    for frame in stream {
        let holds = plan.eval(frame);
        if holds {
            truth.insert(frame.frame_id);
        }
        let pass = match filter {
            None => true,
            Some(f) => {
                let fo = f.evaluate(frame)?;
                filter_cost += fo.cost_units;
                let d = cascade_decide(&plan, &fo, relax)?;
                for name in d.filters_applied {
                    if !applied.contains(&name) {
                        applied.push(name);
                    }
                }
                d.verdict == Verdict::FullEvaluate
            }
        };
        if pass {
            full += 1;
            if holds {
                matched.push(frame.frame_id);
            }
        }
    }

    let scanned = stream.len() as u64;
    let matched_set: BTreeSet<u64> = matched.iter().copied().collect();
    Ok(RunReport {
        scores: answer_set_scores(&matched_set, &truth),
        truth_matched: truth.len() as u64,
        matched_frame_ids: matched,
        frames_scanned: scanned,
        frames_full_evaluated: full,
        filter_cost_total: filter_cost,
        detector_cost_total: full as f64 * settings.detector_cost,
        selectivity: if scanned == 0 { 0.0 } else { full as f64 / scanned as f64 },
        filters_applied: applied,
    })
}

/// Cost of running the detector on every scanned frame over the cost the
/// run actually incurred.
pub fn speedup_report(report: &RunReport, baseline_detector_cost: f64) -> Result<f64> {
    if report.frames_scanned == 0 {
        return Err(Error::InsufficientSample("no frames scanned".into()));
    }
    let spent = report.filter_cost_total + report.detector_cost_total;
    if spent <= 0.0 {
        return Err(Error::ZeroCost);
    }
    Ok(report.frames_scanned as f64 * baseline_detector_cost / spent)
}

/// A cheap per-frame statistic derived from filter output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Control {
    /// 1 when the cascade would forward the frame at this relax level.
    Verdict { relax: u8 },
    /// Reported total object count.
    TotalCount,
    /// Reported count of one class.
    ClassCount { class_id: ClassId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuSource {
    /// Filter statistic averaged over a wider sample of the window;
    /// `wide_fraction = 1` is the whole window.
    TwoStage { wide_fraction: f64, layout: WideLayout },
    /// Mean of the controls over the sampled frames themselves, which
    /// cancels the correction.
    SampleMean,
}

impl Default for MuSource {
    fn default() -> Self {
        MuSource::TwoStage { wide_fraction: 1.0, layout: WideLayout::Superset }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Estimator {
    Plain,
    /// One control, `controls.len() == 1`, or several.
    ControlVariates { controls: Vec<Control>, mu: MuSource, beta: BetaMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Evaluation {
    Exhaustive,
    Sampled { n: usize, estimator: Estimator },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window_index: u64,
    pub start_frame: u64,
    pub n_frames: u64,
    pub agg_value: f64,
    pub frames_full_evaluated: u64,
    pub filter_cost: f64,
    pub detector_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<CvEstimate>,
    /// Set when the requested estimator could not be applied and the
    /// plain sample mean was used instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Per-frame value of an aggregate: 1 or the class count when the predicate
/// holds, else 0.
pub fn frame_value(select: SelectKind, plan: &FramePredicate, frame: &FrameAnnotation) -> f64 {
    if !plan.eval(frame) {
        return 0.0;
    }
    match select {
        SelectKind::AvgClassCount(c) => frame.objects.iter().filter(|o| o.class_id == c).count() as f64,
        _ => 1.0,
    }
}

pub fn control_values(controls: &[Control], plan: &FramePredicate, fo: &FilterOutput) -> Result<Vec<f64>> {
    controls
        .iter()
        .map(|c| {
            Ok(match c {
                Control::Verdict { relax } => {
                    (cascade_decide(plan, fo, *relax)?.verdict == Verdict::FullEvaluate) as u8 as f64
                }
                Control::TotalCount => fo.counts.total() as f64,
                Control::ClassCount { class_id } => fo.counts.get(*class_id) as f64,
            })
        })
        .collect()
}

fn windows(len: usize, spec: WindowSpec, include_partial: bool) -> Vec<(usize, usize)> {
    let (size, adv) = (spec.size as usize, spec.advance as usize);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        if end - start == size || include_partial {
            out.push((start, end));
        }
        if start + size >= len {
            break;
        }
        start += adv;
    }
    out
}

/// Runs a windowed `COUNT` or `AVG` query. `COUNT` windows report the number
/// of matching frames, `AVG(class)` windows the mean per-frame count of the
/// class over frames that match.
pub fn run_window_aggregate(
    stream: &[FrameAnnotation],
    query: &QueryAst,
    filter: Option<&dyn FilterOracle>,
    relax: u8,
    evaluation: &Evaluation,
    settings: &EngineSettings,
) -> Result<Vec<WindowResult>> {
    let spec = match (query.select, query.window) {
        (SelectKind::Frames, _) | (_, None) => {
            return Err(Error::QueryShape("aggregate runs need SELECT COUNT or AVG with a window".into()))
        }
        (_, Some(w)) => w,
    };
    check_order(stream)?;
    let plan = compile(query, settings)?;
    let scale = |mean: f64, n: usize| match query.select {
        SelectKind::CountFrames => mean * n as f64,
        _ => mean,
    };

    let mut out = Vec::new();
    for (index, (lo, hi)) in windows(stream.len(), spec, settings.include_partial).into_iter().enumerate() {
        let frames = &stream[lo..hi];
        let len = frames.len();
        let mut result = WindowResult {
            window_index: index as u64,
            start_frame: frames[0].frame_id,
            n_frames: len as u64,
            agg_value: 0.0,
            frames_full_evaluated: 0,
            filter_cost: 0.0,
            detector_cost: 0.0,
            estimate: None,
            fallback: None,
        };
        match evaluation {
            Evaluation::Exhaustive => {
                let mut total = 0.0;
                for frame in frames {
                    if let Some(f) = filter {
                        let fo = f.evaluate(frame)?;
                        result.filter_cost += fo.cost_units;
                        if cascade_decide(&plan, &fo, relax)?.verdict == Verdict::Drop {
                            continue;
                        }
                    }
                    result.frames_full_evaluated += 1;
                    total += frame_value(query.select, &plan, frame);
                }
                result.detector_cost = result.frames_full_evaluated as f64 * settings.detector_cost;
                result.agg_value = match query.select {
                    SelectKind::CountFrames => total,
                    _ => total / len as f64,
                };
            }
            Evaluation::Sampled { n, estimator } => {
                if matches!(estimator, Estimator::ControlVariates { .. }) && filter.is_none() {
                    return Err(Error::Config("control-variate estimation needs a filter to derive controls".into()));
                }
                let controls: &[Control] = match estimator {
                    Estimator::ControlVariates { controls, .. } => controls,
                    Estimator::Plain => &[],
                };
                let mut filter_cost = 0.0;
                let s = sample_window(
                    len,
                    *n,
                    estimator,
                    settings.seed,
                    index as u64,
                    |k| frame_value(query.select, &plan, &frames[k]),
                    |k| {
                        let fo = filter.expect("checked above").evaluate(&frames[k])?;
                        filter_cost += fo.cost_units;
                        control_values(controls, &plan, &fo)
                    },
                )?;
                result.frames_full_evaluated = *n as u64;
                result.detector_cost = *n as f64 * settings.detector_cost;
                result.filter_cost = filter_cost;
                result.agg_value = scale(s.estimate.estimate, len);
                result.estimate = Some(s.estimate);
                result.fallback = s.fallback;
            }
        }
        out.push(result);
    }
    Ok(out)
}

/// Outcome of estimating one window from a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub estimate: CvEstimate,
    pub fallback: Option<String>,
    /// Window positions whose controls were evaluated.
    pub control_evaluations: usize,
}

/// Estimates the mean of `y_of` over window positions `0..len` from `n`
/// positions drawn without replacement. `z_of` yields the control vector of
/// a position and is called at most once per position.
///
/// The draw depends only on `(seed, window_index)`, so different estimators
/// with the same seed see the same sample.
pub fn sample_window<Y, Z>(
    len: usize,
    n: usize,
    estimator: &Estimator,
    seed: u64,
    window_index: u64,
    mut y_of: Y,
    mut z_of: Z,
) -> Result<WindowSample>
where
    Y: FnMut(usize) -> f64,
    Z: FnMut(usize) -> Result<Vec<f64>>,
{
    if n > len {
        return Err(Error::Sampling(format!("sample of {n} exceeds window of {len} frames")));
    }
    let mut r = rng::stream(seed, rng::TAG_SAMPLE, window_index, 0);
    let mut picks = rand::seq::index::sample(&mut r, len, n).into_vec();
    picks.sort_unstable();
    let y: Vec<f64> = picks.iter().map(|&k| y_of(k)).collect();

    let (controls, mu, beta) = match estimator {
        Estimator::Plain => {
            return Ok(WindowSample { estimate: plain_mean(&y)?, fallback: None, control_evaluations: 0 })
        }
        Estimator::ControlVariates { controls, mu, beta } => (controls, mu, beta),
    };
    if controls.is_empty() {
        return Err(Error::Config("control-variate estimation needs at least one control".into()));
    }
    let mut evaluated = vec![None::<Vec<f64>>; len];
    let mut count = 0usize;
    let mut evaluate = |k: usize| -> Result<Vec<f64>> {
        if let Some(v) = &evaluated[k] {
            return Ok(v.clone());
        }
        let v = z_of(k)?;
        count += 1;
        evaluated[k] = Some(v.clone());
        Ok(v)
    };
    let z: Vec<Vec<f64>> = picks.iter().map(|&k| evaluate(k)).collect::<Result<_>>()?;
    let mu_z = match *mu {
        MuSource::SampleMean => {
            (0..controls.len()).map(|j| z.iter().map(|row| row[j]).sum::<f64>() / n as f64).collect()
        }
        MuSource::TwoStage { wide_fraction, layout } => {
            two_stage_mu(len, &picks, wide_fraction, layout, &mut r, &mut evaluate)?
        }
    };
    let sample = PairedSample::new(y.clone(), &z, mu_z)?;
    let attempt = if controls.len() == 1 { cv_estimate_with(&sample, beta) } else { mcv_estimate_with(&sample, beta) };
    let (estimate, fallback) = match attempt {
        Ok(e) => (e, None),
        Err(e @ (Error::DegenerateControl(_) | Error::IllConditioned { .. })) => (plain_mean(&y)?, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(WindowSample { estimate, fallback, control_evaluations: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::ExactFilter;
    use crate::model::{BBox, ClassTable, ObjectInstance};
    use crate::query::parse_query;

    fn classes() -> ClassTable {
        ClassTable::new(["person", "car"]).unwrap()
    }

    fn stream(n: u64) -> Vec<FrameAnnotation> {
        (0..n)
            .map(|i| {
                let objects = (0..i % 3)
                    .map(|k| {
                        let x = 0.1 + 0.3 * k as f64;
                        ObjectInstance::new(ClassId((i % 2) as u16), BBox::new(x, 0.1, x + 0.1, 0.3).unwrap())
                    })
                    .collect();
                FrameAnnotation::new(i, objects)
            })
            .collect()
    }

    fn q(text: &str) -> QueryAst {
        parse_query(text, &classes(), &RegionSet::default()).unwrap()
    }

    #[test]
    fn exact_filter_passes_only_answers() {
        let s = stream(60);
        let f = ExactFilter::new(classes(), 8, 1.9).unwrap();
        let r = run_selection(&s, &q("SELECT FRAMES WHERE COUNT(person) = 2"), Some(&f), 0, &EngineSettings::default())
            .unwrap();
        assert_eq!(r.frames_full_evaluated, r.matched_frame_ids.len() as u64);
        assert_eq!(r.truth_matched, r.matched_frame_ids.len() as u64);
        assert_eq!(r.scores.accuracy, Some(1.0));
        assert_eq!(r.filters_applied, vec!["CCF"]);
        assert!((r.filter_cost_total - 60.0 * 1.9).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let s = stream(10);
        let agg = q("SELECT COUNT WHERE COUNT(*) >= 0 WINDOW 5 ADVANCE 5");
        assert!(matches!(
            run_selection(&s, &agg, None, 0, &EngineSettings::default()),
            Err(Error::QueryShape(_))
        ));
        let sel = q("SELECT FRAMES WHERE COUNT(*) >= 0");
        assert!(run_window_aggregate(&s, &sel, None, 0, &Evaluation::Exhaustive, &EngineSettings::default()).is_err());
        let mut unordered = stream(3);
        unordered.swap(0, 2);
        assert!(run_selection(&unordered, &sel, None, 0, &EngineSettings::default()).is_err());
    }

    #[test]
    fn speedup_closed_forms() {
        let mut r = run_selection(&stream(10), &q("SELECT FRAMES WHERE COUNT(*) >= 0"), None, 0, &EngineSettings::default())
            .unwrap();
        r.filter_cost_total = 1.9 * 10.0;
        r.detector_cost_total = 0.0;
        r.frames_full_evaluated = 0;
        assert!((speedup_report(&r, 200.0).unwrap() - 200.0 / 1.9).abs() < 1e-9);
        r.filter_cost_total = 0.0;
        assert!(matches!(speedup_report(&r, 200.0), Err(Error::ZeroCost)));
    }

    #[test]
    fn tautology_counts_whole_windows() {
        let s = stream(250);
        let query = q("SELECT COUNT WHERE COUNT(*) >= 0 WINDOW 100 ADVANCE 100");
        let w = run_window_aggregate(&s, &query, None, 0, &Evaluation::Exhaustive, &EngineSettings::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|r| r.agg_value == 100.0));
        let settings = EngineSettings { include_partial: true, ..Default::default() };
        let w = run_window_aggregate(&s, &query, None, 0, &Evaluation::Exhaustive, &settings).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!((w[2].start_frame, w[2].n_frames, w[2].agg_value), (200, 50, 50.0));
    }

    #[test]
    fn census_sample_equals_exhaustive() {
        let s = stream(90);
        let query = q("SELECT COUNT WHERE COUNT(car) >= 1 WINDOW 30 ADVANCE 30");
        let settings = EngineSettings::default();
        let ex = run_window_aggregate(&s, &query, None, 0, &Evaluation::Exhaustive, &settings).unwrap();
        let sampled = Evaluation::Sampled { n: 30, estimator: Estimator::Plain };
        let sa = run_window_aggregate(&s, &query, None, 0, &sampled, &settings).unwrap();
        for (a, b) in ex.iter().zip(&sa) {
            assert!((a.agg_value - b.agg_value).abs() < 1e-9);
        }
        let too_many = Evaluation::Sampled { n: 31, estimator: Estimator::Plain };
        assert!(matches!(run_window_aggregate(&s, &query, None, 0, &too_many, &settings), Err(Error::Sampling(_))));
    }

    #[test]
    fn exact_verdict_control_is_perfect() {
        let s = stream(300);
        let query = q("SELECT COUNT WHERE COUNT(car) >= 1 WINDOW 100 ADVANCE 100");
        let f = ExactFilter::new(classes(), 8, 1.9).unwrap();
        let est = Estimator::ControlVariates {
            controls: vec![Control::Verdict { relax: 0 }],
            mu: MuSource::default(),
            beta: BetaMode::Optimal,
        };
        let settings = EngineSettings::default();
        let ex = run_window_aggregate(&s, &query, None, 0, &Evaluation::Exhaustive, &settings).unwrap();
        let cv = run_window_aggregate(&s, &query, Some(&f), 0, &Evaluation::Sampled { n: 20, estimator: est }, &settings)
            .unwrap();
        for (a, b) in ex.iter().zip(&cv) {
            assert!((a.agg_value - b.agg_value).abs() < 1e-9, "{} vs {}", a.agg_value, b.agg_value);
            assert!(b.estimate.as_ref().unwrap().beta.len() == 1);
        }
    }

    #[test]
    fn windows_cover_stream_once() {
        let spec = WindowSpec::new(7, 7).unwrap();
        let w = windows(30, spec, true);
        let covered: usize = w.iter().map(|(a, b)| b - a).sum();
        assert_eq!(covered, 30);
        assert_eq!(windows(30, spec, false).len(), 4);
        assert_eq!(windows(10, WindowSpec::new(4, 2).unwrap(), false), vec![(0, 4), (2, 6), (4, 8), (6, 10)]);
    }
}
