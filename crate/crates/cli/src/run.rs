use std::fs::{self, File};
use std::io::{BufWriter, Write};

use serde::Serialize;

use gfloam::cloud_io::write_trajectory;
use gfloam::eval::{ate, AteReport};
use gfloam::geometry::Pose;
use gfloam::pipeline::{FrameOutput, PipelineState, SelectionSummary, StageLatency};

use crate::failure::Failure;
use crate::input::{load_config, Sequence};
use crate::RunArgs;

#[derive(Serialize)]
struct FrameStats<'a> {
    frame: usize,
    timestamp: f64,
    /// `tx ty tz qx qy qz qw`.
    pose: [f64; 7],
    ratio: f64,
    n_features: usize,
    n_matched: usize,
    n_selected: usize,
    logdet_selected: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    iterations: Option<usize>,
    final_cost: Option<f64>,
    converged: bool,
    near_singular: bool,
    keyframe: bool,
    skipped: bool,
    solver_failed: bool,
    selection: Option<&'a SelectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency: Option<&'a StageLatency>,
}

pub fn pose_array(p: &Pose) -> [f64; 7] {
    let t = p.translation;
    let q = p.rotation.coords;
    [t.x, t.y, t.z, q.x, q.y, q.z, q.w]
}

impl<'a> FrameStats<'a> {
    fn new(out: &'a FrameOutput, with_latency: bool) -> Self {
        Self {
            frame: out.frame,
            timestamp: out.timestamp,
            pose: pose_array(&out.pose),
            ratio: out.ratio,
            n_features: out.n_features,
            n_matched: out.n_matched,
            n_selected: out.selected.len(),
            logdet_selected: out.logdet_selected,
            lambda: out.degeneracy.map(|d| d.lambda),
            iterations: out.solve.as_ref().map(|s| s.iterations),
            final_cost: out.solve.as_ref().map(|s| s.final_cost),
            converged: out.converged,
            near_singular: out.solve.as_ref().is_some_and(|s| s.near_singular),
            keyframe: out.keyframe,
            skipped: out.skipped,
            solver_failed: out.solver_failed,
            selection: out.selection.as_ref(),
            latency: with_latency.then_some(&out.latency),
        }
    }
}

#[derive(Serialize, Default)]
struct MeanLatency {
    extraction_ms: f64,
    selection_ms: f64,
    optimization_ms: f64,
    map_update_ms: f64,
    registration_ms: f64,
    total_ms: f64,
}

#[derive(Serialize)]
struct Summary {
    mode: String,
    seed: u64,
    frames: usize,
    registered: usize,
    skipped: usize,
    solver_failures: usize,
    keyframes: usize,
    map_size: usize,
    mean_features: f64,
    mean_selected: f64,
    mean_logdet_selected: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency: Option<MeanLatency>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ate: Option<AteReport>,
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        config.pipeline.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.selector.seed = seed;
    }
    let sequence = Sequence::open(&args.input)?;
    if sequence.frames.is_empty() {
        return Err(Failure::data(format!("no scans found under {}", args.input.display())));
    }
    fs::create_dir_all(&args.output)?;
    let mode = config.pipeline.mode.to_string();
    let seed = config.selector.seed;
    let mut state = PipelineState::new(config)?;
    log::info!("run: {} frames, mode {mode}", sequence.frames.len());

    let mut stats = BufWriter::new(File::create(args.output.join("stats.jsonl"))?);
    let mut trajectory = Vec::with_capacity(sequence.frames.len());
    let mut latency = MeanLatency::default();
    let (mut registered, mut skipped, mut failures, mut keyframes) = (0, 0, 0, 0);
    let (mut features, mut selected) = (0usize, 0usize);
    let (mut logdet_sum, mut logdet_n) = (0.0, 0usize);
    for i in 0..sequence.frames.len() {
        let scan = sequence.load(i)?;
        let out = state.process_scan(&scan)?;
        if out.solver_failed {
            log::warn!("frame {i}: solver failed, keeping the predicted pose");
        }
        log::debug!("frame {i}: {} features, {} selected", out.n_features, out.selected.len());
        serde_json::to_writer(&mut stats, &FrameStats::new(&out, !args.no_latency)).map_err(std::io::Error::from)?;
        stats.write_all(b"\n")?;

        skipped += out.skipped as usize;
        failures += out.solver_failed as usize;
        keyframes += out.keyframe as usize;
        features += out.n_features;
        if out.solve.is_some() {
            registered += 1;
            selected += out.selected.len();
        }
        if let Some(l) = out.logdet_selected {
            logdet_sum += l;
            logdet_n += 1;
        }
        let l = &out.latency;
        latency.extraction_ms += l.extraction_ms;
        latency.selection_ms += l.selection_ms;
        latency.optimization_ms += l.optimization_ms;
        latency.map_update_ms += l.map_update_ms;
        latency.registration_ms += l.registration_ms();
        latency.total_ms += l.total_ms;
        trajectory.push(PipelineState::trajectory_record(&out));
    }
    stats.flush()?;
    write_trajectory(&trajectory, &args.output.join("traj.tum"))?;

    let n = trajectory.len() as f64;
    let per = |x: f64, k: usize| if k == 0 { 0.0 } else { x / k as f64 };
    let ate = match sequence.ground_truth()? {
        Some(gt) => ate(&trajectory, &gt).ok(),
        None => None,
    };
    let summary = Summary {
        mode,
        seed,
        frames: trajectory.len(),
        registered,
        skipped,
        solver_failures: failures,
        keyframes,
        map_size: state.map.len(),
        mean_features: features as f64 / n,
        mean_selected: per(selected as f64, registered),
        mean_logdet_selected: (logdet_n > 0).then(|| logdet_sum / logdet_n as f64),
        latency: (!args.no_latency).then(|| MeanLatency {
            extraction_ms: latency.extraction_ms / n,
            selection_ms: latency.selection_ms / n,
            optimization_ms: latency.optimization_ms / n,
            map_update_ms: latency.map_update_ms / n,
            registration_ms: latency.registration_ms / n,
            total_ms: latency.total_ms / n,
        }),
        ate,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)?;
    fs::write(args.output.join("summary.json"), text + "\n")?;
    Ok(())
}
