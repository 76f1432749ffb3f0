//! Command-line front end. Reports go to stdout as one JSON record per
//! line; diagnostics go to stderr.
//!
//! Exit status: 0 on success, 2 for usage, configuration and query errors,
//! 3 for data and evaluation errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{parse_override, EngineConfig};
use crate::engine::{
    compile, control_values, frame_value, run_selection, run_window_aggregate, sample_window, speedup_report,
    Estimator, Evaluation, RunReport, WindowResult,
};
use crate::error::{Error, Result};
use crate::filters::FilterOracle;
use crate::io::{read_annotations, write_annotations, write_annotations_to};
use crate::metrics::{count_accuracy, match_masks, Averaging, ConfusionCounts, MatchStrategy};
use crate::model::{ClassTable, CountVector, FrameAnnotation};
use crate::query::{parse_query, print_query, QueryAst, SelectKind};
use crate::rng;
use crate::sim::{generate, profile, Moments};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vidmon", version, about = "Filtered and sampled query evaluation over video annotation streams")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Engine configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a configuration key by dotted name, e.g. `grid.size=32`.
    #[arg(long = "set", global = true, value_name = "NAME=VALUE")]
    pub set: Vec<String>,
    /// Seed for simulation, filter noise and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Filter relaxation: count widening and grid dilation radius.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(0..=2))]
    pub relax: Option<u8>,
    /// Filter used by the cascade and as the source of controls.
    #[arg(long, global = true)]
    pub filter: Option<FilterArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    Exact,
    Noisy,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Annotation file; without it the configured simulator generates the stream.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// File holding one query.
    #[arg(long, value_name = "FILE", conflicts_with = "expr", required_unless_present = "expr")]
    pub query: Option<PathBuf>,
    /// Query text given inline.
    #[arg(long, short = 'e', value_name = "TEXT")]
    pub expr: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotation stream.
    Simulate {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run a selection or windowed aggregate query.
    Run {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        stream: StreamArgs,
    },
    /// Score the configured filter against the annotations.
    EvalFilters {
        #[command(flatten)]
        stream: StreamArgs,
    },
    /// Repeat sampled estimation of a windowed aggregate and compare the
    /// configured estimator with the plain sample mean.
    Estimate {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        stream: StreamArgs,
    },
    /// Objects-per-frame statistics of a stream.
    Profile {
        #[command(flatten)]
        stream: StreamArgs,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Query(_) | Error::QueryShape(_) | Error::Config(_) | Error::UnknownClassLabel(_) | Error::InvalidClassTable(_) => {
            EXIT_USAGE
        }
        _ => EXIT_DATA,
    }
}

fn load_config(common: &Common) -> Result<EngineConfig> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = common.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(r) = common.relax {
        overrides.push(("relax".into(), r.to_string()));
    }
    if let Some(f) = common.filter {
        let kind = match f {
            FilterArg::Exact => "\"exact\"",
            FilterArg::Noisy => "\"noisy\"",
        };
        overrides.push(("filter.kind".into(), kind.into()));
    }
    EngineConfig::from_toml_str(&text, &overrides)
}

fn load_stream(args: &StreamArgs, cfg: &EngineConfig, classes: &ClassTable) -> Result<Vec<FrameAnnotation>> {
    match &args.annotations {
        Some(p) => read_annotations(p, classes),
        None => generate(&cfg.stream_config(), classes),
    }
}

fn load_query(args: &QueryArgs, cfg: &EngineConfig, classes: &ClassTable) -> Result<QueryAst> {
    let text = match (&args.expr, &args.query) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        (None, None) => return Err(Error::Config("no query given".into())),
    };
    Ok(parse_query(&text, classes, &cfg.region_set()?)?)
}

fn emit<T: Serialize>(out: &mut dyn Write, record: &str, body: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Tagged<'a, T> {
        record: &'a str,
        #[serde(flatten)]
        body: &'a T,
    }
    let line = serde_json::to_string(&Tagged { record, body }).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let classes = cfg.class_table()?;
    match &cli.command {
        Command::Simulate { out: path } => cmd_simulate(&cfg, &classes, path.as_deref(), out),
        Command::Run { query, stream } => {
            let q = load_query(query, &cfg, &classes)?;
            let frames = load_stream(stream, &cfg, &classes)?;
            cmd_run(&cfg, &classes, &q, &frames, out)
        }
        Command::EvalFilters { stream } => {
            let frames = load_stream(stream, &cfg, &classes)?;
            cmd_eval_filters(&cfg, &classes, &frames, out)
        }
        Command::Estimate { query, stream } => {
            let q = load_query(query, &cfg, &classes)?;
            let frames = load_stream(stream, &cfg, &classes)?;
            cmd_estimate(&cfg, &q, &frames, out)
        }
        Command::Profile { stream } => {
            let frames = load_stream(stream, &cfg, &classes)?;
            cmd_profile(&classes, &frames, out)
        }
    }
}

#[derive(Serialize)]
struct SimulateRecord<'a> {
    path: &'a Path,
    frames: usize,
    objects: usize,
}

pub fn cmd_simulate(cfg: &EngineConfig, classes: &ClassTable, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let frames = generate(&cfg.stream_config(), classes)?;
    match path {
        Some(p) => {
            write_annotations(p, &frames, classes)?;
            let objects = frames.iter().map(|f| f.objects.len()).sum();
            emit(out, "simulate", &SimulateRecord { path: p, frames: frames.len(), objects })
        }
        None => write_annotations_to(out, &frames, classes),
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    query: String,
    filter: &'a str,
    relax: u8,
    #[serde(flatten)]
    report: &'a RunReport,
    speedup: f64,
}

#[derive(Serialize)]
struct WindowRecord<'a> {
    query: &'a str,
    filter: &'a str,
    relax: u8,
    #[serde(flatten)]
    window: &'a WindowResult,
}

pub fn cmd_run(
    cfg: &EngineConfig,
    classes: &ClassTable,
    query: &QueryAst,
    frames: &[FrameAnnotation],
    out: &mut dyn Write,
) -> Result<()> {
    let filter = cfg.build_filter()?;
    let settings = cfg.settings()?;
    let text = print_query(query, classes);
    if query.select == SelectKind::Frames {
        let report = run_selection(frames, query, Some(filter.as_ref()), cfg.relax, &settings)?;
        let speedup = speedup_report(&report, cfg.cost.detector)?;
        emit(out, "run", &RunRecord { query: text, filter: filter.name(), relax: cfg.relax, report: &report, speedup })
    } else {
        let windows = run_window_aggregate(frames, query, Some(filter.as_ref()), cfg.relax, &cfg.evaluation()?, &settings)?;
        for w in &windows {
            emit(out, "window", &WindowRecord { query: &text, filter: filter.name(), relax: cfg.relax, window: w })?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct FilterEvalRecord<'a> {
    filter: &'a str,
    /// Class label, or absent for total counts.
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<&'a str>,
    frames: usize,
    /// Indexed by tolerance k = 0, 1, 2.
    count_accuracy: [f64; 3],
    /// Indexed by radius 0, 1, 2; absent for total counts.
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_f1: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_f1_macro: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_counts: Option<[ConfusionCounts; 3]>,
}

pub fn cmd_eval_filters(
    cfg: &EngineConfig,
    classes: &ClassTable,
    frames: &[FrameAnnotation],
    out: &mut dyn Write,
) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::InsufficientSample("no frames to evaluate".into()));
    }
    let truth_filter = cfg.exact_filter()?;
    let filter = cfg.build_filter()?;
    let nc = classes.len();
    let mut pred_counts: Vec<CountVector> = Vec::with_capacity(frames.len());
    let mut true_counts: Vec<CountVector> = Vec::with_capacity(frames.len());
    // per class, per radius: per-frame confusion counts
    let mut per_frame: Vec<[Vec<ConfusionCounts>; 3]> = vec![Default::default(); nc];
    for f in frames {
        let truth = truth_filter.evaluate(f)?;
        let pred = filter.evaluate(f)?;
        for c in classes.ids() {
            for (r, slot) in per_frame[c.index()].iter_mut().enumerate() {
                slot.push(match_masks(pred.grids.class(c), truth.grids.class(c), r as u8, MatchStrategy::default())?);
            }
        }
        pred_counts.push(pred.counts);
        true_counts.push(truth.counts);
    }
    let accuracy = |class| -> Result<[f64; 3]> {
        Ok([
            count_accuracy(&pred_counts, &true_counts, 0, class)?,
            count_accuracy(&pred_counts, &true_counts, 1, class)?,
            count_accuracy(&pred_counts, &true_counts, 2, class)?,
        ])
    };
    for c in classes.ids() {
        let grids = &per_frame[c.index()];
        let f1 = |a: Averaging| std::array::from_fn(|r| crate::metrics::aggregate_f1(&grids[r], a));
        emit(
            out,
            "filter_eval",
            &FilterEvalRecord {
                filter: filter.name(),
                class: classes.label(c),
                frames: frames.len(),
                count_accuracy: accuracy(Some(c))?,
                grid_f1: Some(f1(Averaging::Micro)),
                grid_f1_macro: Some(f1(Averaging::Macro)),
                grid_counts: Some(std::array::from_fn(|r| grids[r].iter().copied().sum())),
            },
        )?;
    }
    emit(
        out,
        "filter_eval",
        &FilterEvalRecord {
            filter: filter.name(),
            class: None,
            frames: frames.len(),
            count_accuracy: accuracy(None)?,
            grid_f1: None,
            grid_f1_macro: None,
            grid_counts: None,
        },
    )
}

#[derive(Serialize)]
struct Summary {
    mean: f64,
    variance: f64,
}

#[derive(Serialize)]
struct MethodSummary {
    #[serde(flatten)]
    summary: Summary,
    mean_reported_variance: f64,
    mean_reported_vrf: f64,
    mean_r_squared: f64,
    fallbacks: usize,
}

#[derive(Serialize)]
struct EstimateRecord<'a> {
    query: &'a str,
    window_index: u64,
    start_frame: u64,
    n_frames: usize,
    n: usize,
    repetitions: usize,
    truth: f64,
    plain: Summary,
    method: MethodSummary,
    /// Variance of the plain estimate across repetitions over that of the
    /// configured estimator.
    empirical_vrf: f64,
}

fn summarize(v: &[f64]) -> Summary {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let variance = if v.len() < 2 { 0.0 } else { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) };
    Summary { mean, variance }
}

pub fn cmd_estimate(cfg: &EngineConfig, query: &QueryAst, frames: &[FrameAnnotation], out: &mut dyn Write) -> Result<()> {
    let (n, estimator) = match cfg.evaluation()? {
        Evaluation::Sampled { n, estimator } => (n, estimator),
        Evaluation::Exhaustive => return Err(Error::Config("estimate needs estimator.evaluation = \"sampled\"".into())),
    };
    let spec = match (query.select, query.window) {
        (SelectKind::Frames, _) | (_, None) => {
            return Err(Error::QueryShape("estimate needs SELECT COUNT or AVG with a window".into()))
        }
        (_, Some(w)) => w,
    };
    let reps = cfg.estimator.repetitions;
    if reps == 0 {
        return Err(Error::Config("estimator.repetitions must be >= 1".into()));
    }
    let settings = cfg.settings()?;
    let plan = compile(query, &settings)?;
    let filter = cfg.build_filter()?;
    let classes = cfg.class_table()?;
    let text = print_query(query, &classes);

    let y: Vec<f64> = frames.iter().map(|f| frame_value(query.select, &plan, f)).collect();
    let z: Vec<Vec<f64>> = match &estimator {
        Estimator::Plain => Vec::new(),
        Estimator::ControlVariates { controls, .. } => frames
            .iter()
            .map(|f| control_values(controls, &plan, &filter.evaluate(f)?))
            .collect::<Result<_>>()?,
    };
    let scale = |mean: f64, len: usize| if query.select == SelectKind::CountFrames { mean * len as f64 } else { mean };

    let (size, adv) = (spec.size as usize, spec.advance as usize);
    let mut index = 0u64;
    let mut start = 0usize;
    while start < frames.len() {
        let end = (start + size).min(frames.len());
        let len = end - start;
        if len < size && !cfg.estimator.include_partial {
            break;
        }
        let truth = scale(y[start..end].iter().sum::<f64>() / len as f64, len);
        let (mut plain, mut method) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
        let (mut rep_var, mut rep_vrf, mut rep_r2, mut fallbacks) = (0.0, 0.0, 0.0, 0);
        for r in 0..reps {
            let seed = rng::mix(cfg.seed, rng::TAG_REPETITION, r as u64, 0);
            let yv = |k: usize| y[start + k];
            let p = sample_window(len, n, &Estimator::Plain, seed, index, yv, |_| Ok(Vec::new()))?;
            plain.push(scale(p.estimate.estimate, len));
            let m = sample_window(len, n, &estimator, seed, index, yv, |k| Ok(z[start + k].clone()))?;
            method.push(scale(m.estimate.estimate, len));
            let factor = scale(1.0, len);
            rep_var += m.estimate.sample_variance_of_mean * factor * factor;
            rep_vrf += m.estimate.variance_reduction_factor;
            rep_r2 += m.estimate.r_squared;
            fallbacks += m.fallback.is_some() as usize;
        }
        let (plain, method) = (summarize(&plain), summarize(&method));
        let empirical_vrf = if method.variance > 0.0 { plain.variance / method.variance } else { f64::INFINITY };
        let k = reps as f64;
        emit(
            out,
            "estimate",
            &EstimateRecord {
                query: &text,
                window_index: index,
                start_frame: frames[start].frame_id,
                n_frames: len,
                n,
                repetitions: reps,
                truth,
                plain,
                method: MethodSummary {
                    summary: method,
                    mean_reported_variance: rep_var / k,
                    mean_reported_vrf: rep_vrf / k,
                    mean_r_squared: rep_r2 / k,
                    fallbacks,
                },
                empirical_vrf,
            },
        )?;
        if end == frames.len() {
            break;
        }
        start += adv;
        index += 1;
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassMoments<'a> {
    class: &'a str,
    #[serde(flatten)]
    moments: Moments,
}

#[derive(Serialize)]
struct ProfileRecord<'a> {
    frames: usize,
    total: Moments,
    classes: Vec<ClassMoments<'a>>,
}

pub fn cmd_profile(classes: &ClassTable, frames: &[FrameAnnotation], out: &mut dyn Write) -> Result<()> {
    let p = profile(frames, classes.len())?;
    let per_class = classes
        .labels()
        .iter()
        .zip(p.per_class)
        .map(|(class, moments)| ClassMoments { class, moments })
        .collect();
    emit(out, "profile", &ProfileRecord { frames: p.frames, total: p.total, classes: per_class })
}
