use serde::Serialize;

use gfloam::degeneracy::degeneracy_factor;
use gfloam::pipeline::{FrameCandidates, PipelineState};

use crate::failure::Failure;
use crate::input::{load_config, Sequence};
use crate::CalibrateArgs;

#[derive(Serialize)]
struct FrameLambda {
    frame: usize,
    timestamp: f64,
    lambda: f64,
    matched: usize,
    candidates: usize,
}

#[derive(Serialize)]
struct Histogram {
    edges: Vec<f64>,
    counts: Vec<usize>,
}

#[derive(Serialize)]
struct Report {
    lambda_threshold: f64,
    frames: Vec<FrameLambda>,
    below_threshold: usize,
    histogram: Histogram,
}

fn histogram(values: &[f64], bins: usize) -> Histogram {
    if values.is_empty() {
        return Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

/// λ of every registered frame, evaluated at the predicted pose against the
/// map built so far.
pub fn calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    if args.bins == 0 {
        return Err(Failure::usage("--bins must be at least 1"));
    }
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.selector.seed = seed;
    }
    let threshold = config.degeneracy.lambda_th;
    let prior = config.selector.prior_scale;
    let sequence = Sequence::open(&args.input)?;
    let mut state = PipelineState::new(config)?;
    let mut frames = Vec::new();
    for i in 0..sequence.frames.len() {
        let scan = sequence.load(i)?;
        let features = state.extract(&scan)?;
        if !state.map.is_empty() && !features.is_empty() {
            let source = FrameCandidates {
                features: &features.features,
                map: &state.map,
                pose: state.predict(scan.timestamp),
                config: &state.config,
                noise: &state.noise,
            };
            let (lambda, matched) = degeneracy_factor(&source, prior);
            frames.push(FrameLambda {
                frame: i,
                timestamp: scan.timestamp,
                lambda,
                matched,
                candidates: features.len(),
            });
        }
        state.process_features(&features, scan.timestamp, std::time::Instant::now(), 0.0)?;
    }
    let lambdas: Vec<f64> = frames.iter().map(|f| f.lambda).filter(|l| l.is_finite()).collect();
    let report = Report {
        lambda_threshold: threshold,
        below_threshold: frames.iter().filter(|f| f.lambda < threshold).count(),
        histogram: histogram(&lambdas, args.bins),
        frames,
    };
    println!("{}", serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?);
    Ok(())
}
