//! Frame loop: predict, extract, evaluate degeneracy, select, solve, update
//! the map.

use std::time::Instant;

use nalgebra::Matrix6;
use serde::Serialize;

use crate::association::{find_correspondence, FeatureMap};
use crate::cloud_io::{Scan, TrajectoryRecord};
use crate::config::{Config, ConfigError, SelectionMode};
use crate::degeneracy::{degeneracy_factor_cached, AdaptiveBudget, DegeneracyReport};
use crate::features::{extract_features, FeatureError, FeaturePoint, FeatureSet};
use crate::geometry::Pose;
use crate::residuals::{linearize, NoiseModel};
use crate::selector::{
    random_select, simple_greedy_select_cached, stochastic_greedy_select_cached, CandidateCache, CandidateSource,
    InfoMatrix, SelectionResult, SelectorConfig, Termination,
};
use crate::solver::{solve_pose, Correspondence, SolveResult};

/// Features of one frame matched against the map at a fixed pose.
pub struct FrameCandidates<'a> {
    pub features: &'a [FeaturePoint],
    pub map: &'a FeatureMap,
    pub pose: Pose,
    pub config: &'a Config,
    pub noise: &'a NoiseModel,
}

impl CandidateSource for FrameCandidates<'_> {
    type Payload = Correspondence;

    fn len(&self) -> usize {
        self.features.len()
    }

    fn evaluate(&self, index: usize) -> Option<(Matrix6<f64>, Correspondence)> {
        let feature = &self.features[index];
        let model = find_correspondence(self.map, feature, &self.pose, &self.config.assoc)?;
        let block = linearize(&self.pose, &feature.position, &model, self.noise);
        Some((
            block.info,
            Correspondence {
                point: feature.position,
                model,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageLatency {
    pub extraction_ms: f64,
    /// Association and selection.
    pub selection_ms: f64,
    /// Solving, including re-association passes.
    pub optimization_ms: f64,
    pub map_update_ms: f64,
    pub total_ms: f64,
}

impl StageLatency {
    /// Association + selection + optimization.
    pub fn registration_ms(&self) -> f64 {
        self.selection_ms + self.optimization_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub budget: usize,
    pub oracle_evaluations: usize,
    pub match_attempts: usize,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub predicted: Pose,
    pub latency: StageLatency,
    pub degeneracy: Option<DegeneracyReport>,
    pub selection: Option<SelectionSummary>,
    pub ratio: f64,
    pub n_features: usize,
    pub n_candidates: usize,
    pub n_matched: usize,
    /// Candidate indices handed to the solver, ascending.
    pub selected: Vec<usize>,
    pub logdet_selected: Option<f64>,
    pub solve: Option<SolveResult>,
    pub converged: bool,
    pub keyframe: bool,
    pub skipped: bool,
    pub solver_failed: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("timestamps must increase: {previous} then {current}")]
    NonMonotonicTimestamp { previous: f64, current: f64 },
}

pub struct PipelineState {
    pub config: Config,
    pub noise: NoiseModel,
    pub map: FeatureMap,
    pub frame_index: usize,
    last: Option<(f64, Pose)>,
    last_last: Option<(f64, Pose)>,
    last_keyframe: Option<Pose>,
    pub budget: AdaptiveBudget,
    pub initial_pose: Pose,
}

impl PipelineState {
    pub fn new(config: Config) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            noise: config.noise.model()?,
            map: FeatureMap::new(config.pipeline.map_voxel_edge, config.pipeline.map_voxel_planar),
            frame_index: 0,
            last: None,
            last_last: None,
            last_keyframe: None,
            budget: AdaptiveBudget::new(config.degeneracy),
            initial_pose: Pose::identity(),
            config,
        })
    }

    /// Starts the trajectory at `pose` instead of the identity.
    pub fn with_initial_pose(mut self, pose: Pose) -> Self {
        self.initial_pose = pose;
        self
    }

    /// Constant-velocity extrapolation of the last two poses to `timestamp`.
    pub fn predict(&self, timestamp: f64) -> Pose {
        match (self.last, self.last_last) {
            (Some((t1, p1)), Some((t0, p0))) => {
                let delta = p0.inverse().compose(&p1);
                let dt = t1 - t0;
                let scale = if dt > 0.0 { (timestamp - t1) / dt } else { 1.0 };
                let motion = Pose::from_parts(
                    delta.translation * scale,
                    delta.rotation.scaled_axis() * scale,
                );
                p1.compose(&motion)
            }
            (Some((_, p1)), None) => p1,
            _ => self.initial_pose,
        }
    }

    /// The selection ratio currently in force.
    pub fn active_ratio(&self) -> f64 {
        if self.config.degeneracy.adaptive {
            self.budget.ratio
        } else {
            self.config.selector.ratio
        }
    }

    fn selector_config(&self, ratio: f64) -> SelectorConfig {
        let mut c = self.config.selector;
        c.seed = c.seed.wrapping_add(self.frame_index as u64);
        if self.config.degeneracy.adaptive {
            c = c.with_ratio(ratio);
        }
        c
    }

    /// Extracted and downsampled features of `scan`.
    pub fn extract(&self, scan: &Scan) -> Result<FeatureSet, PipelineError> {
        let features = &self.config.features;
        Ok(extract_features(scan, features)?.downsampled(features.voxel_edge, features.voxel_planar))
    }

    pub fn process_scan(&mut self, scan: &Scan) -> Result<FrameOutput, PipelineError> {
        let start = Instant::now();
        let features = self.extract(scan)?;
        let extraction_ms = ms(start);
        self.process_features(&features, scan.timestamp, start, extraction_ms)
    }

    /// Registers an already extracted feature set.
    pub fn process_features(
        &mut self,
        features: &FeatureSet,
        timestamp: f64,
        start: Instant,
        extraction_ms: f64,
    ) -> Result<FrameOutput, PipelineError> {
        if let Some((previous, _)) = self.last {
            if !(timestamp > previous) {
                return Err(PipelineError::NonMonotonicTimestamp {
                    previous,
                    current: timestamp,
                });
            }
        }
        let frame = self.frame_index;
        let predicted = self.predict(timestamp);
        let mut out = FrameOutput {
            frame,
            timestamp,
            pose: predicted,
            predicted,
            latency: StageLatency {
                extraction_ms,
                ..Default::default()
            },
            degeneracy: None,
            selection: None,
            ratio: self.active_ratio(),
            n_features: features.len(),
            n_candidates: features.len(),
            n_matched: 0,
            selected: Vec::new(),
            logdet_selected: None,
            solve: None,
            converged: false,
            keyframe: false,
            skipped: false,
            solver_failed: false,
        };

        if features.is_empty() {
            log::warn!("frame {}: no features, skipped", out.frame);
            out.skipped = true;
        } else if self.map.is_empty() {
            // Bootstrap frame: the map starts at the initial pose.
            out.converged = true;
        } else {
            self.register(&features.features, predicted, &mut out);
        }

        let map_start = Instant::now();
        if !out.skipped {
            out.keyframe = self.update_map(&features.features, &out.pose);
        }
        out.latency.map_update_ms = ms(map_start);

        self.last_last = self.last;
        self.last = Some((timestamp, out.pose));
        self.frame_index += 1;
        out.latency.total_ms = ms(start);
        Ok(out)
    }

    fn register(&mut self, features: &[FeaturePoint], predicted: Pose, out: &mut FrameOutput) {
        let select_start = Instant::now();
        let source = FrameCandidates {
            features,
            map: &self.map,
            pose: predicted,
            config: &self.config,
            noise: &self.noise,
        };
        let mut cache = CandidateCache::new(source.len());
        let prior = self.config.selector.prior_scale;
        if self.config.degeneracy.adaptive && self.budget.due(out.frame) {
            let (lambda, matched) = degeneracy_factor_cached(&source, &mut cache, prior);
            out.degeneracy = Some(self.budget.update(lambda, out.frame, matched));
            log::debug!("frame {}: lambda {lambda:.2} over {matched} matches", out.frame);
        }
        let ratio = self.active_ratio();
        out.ratio = ratio;
        let sel_config = self.selector_config(ratio);
        let budget = sel_config.resolve_budget(source.len());

        let (mut selected, info, summary): (Vec<(usize, Correspondence)>, InfoMatrix, Option<SelectionSummary>) =
            match self.config.pipeline.mode {
                SelectionMode::Full => {
                    cache.fill(&source);
                    let mut info = InfoMatrix::new(prior);
                    let mut chosen = Vec::new();
                    for i in 0..source.len() {
                        if let Some((m, c)) = cache.get(&source, i) {
                            info.add(m);
                            chosen.push((i, *c));
                        }
                    }
                    (chosen, info, None)
                }
                mode => {
                    let result: SelectionResult<Correspondence> = match mode {
                        SelectionMode::Gf => stochastic_greedy_select_cached(&source, &mut cache, budget, &sel_config),
                        SelectionMode::Greedy => simple_greedy_select_cached(&source, &mut cache, budget, &sel_config),
                        _ => random_select(&source, budget, sel_config.seed, sel_config.metric, prior),
                    };
                    let summary = SelectionSummary {
                        budget,
                        oracle_evaluations: result.oracle_evaluations,
                        match_attempts: result.match_attempts,
                        terminated_by: result.terminated_by,
                    };
                    let chosen = result.selected.iter().copied().zip(result.payloads.iter().copied()).collect();
                    (chosen, result.info, Some(summary))
                }
            };
        let (matched, _) = cache.counts();
        out.n_matched = matched;
        out.selection = summary;
        out.logdet_selected = crate::selector::logdet(&info.lambda);
        selected.sort_by_key(|(i, _)| *i);
        out.latency.selection_ms = ms(select_start);

        let opt_start = Instant::now();
        let mut pose = predicted;
        let mut used = selected;
        let mut last_solve = None;
        for round in 0..self.config.pipeline.match_rounds {
            if round > 0 {
                used = used
                    .iter()
                    .filter_map(|&(i, _)| {
                        let f = &features[i];
                        find_correspondence(&self.map, f, &pose, &self.config.assoc).map(|model| {
                            (
                                i,
                                Correspondence {
                                    point: f.position,
                                    model,
                                },
                            )
                        })
                    })
                    .collect();
            }
            let corrs: Vec<Correspondence> = used.iter().map(|(_, c)| *c).collect();
            match solve_pose(&pose, &corrs, &self.noise, &self.config.solver) {
                Ok(r) => {
                    pose = r.pose;
                    last_solve = Some(r);
                }
                Err(e) => {
                    log::debug!("frame {}: solve round {round} failed: {e}", out.frame);
                    break;
                }
            }
        }
        out.latency.optimization_ms = ms(opt_start);
        out.selected = used.iter().map(|(i, _)| *i).collect();
        match last_solve {
            Some(r) if r.pose.translation.iter().all(|v| v.is_finite()) => {
                out.pose = r.pose;
                out.converged = r.converged;
                out.solve = Some(r);
            }
            _ => {
                log::warn!("frame {}: solver failed, keeping predicted pose", out.frame);
                out.pose = predicted;
                out.solver_failed = true;
            }
        }
    }

    /// Inserts `features` at `pose` if the motion since the last keyframe
    /// exceeds the policy thresholds. Returns whether it did.
    pub fn update_map(&mut self, features: &[FeaturePoint], pose: &Pose) -> bool {
        let fire = match &self.last_keyframe {
            None => true,
            Some(kf) => {
                let d = kf.inverse().compose(pose);
                d.translation.norm() >= self.config.pipeline.keyframe_translation
                    || d.rotation_angle() >= self.config.pipeline.keyframe_rotation
            }
        };
        if fire {
            self.map.insert_features(features, pose);
            self.last_keyframe = Some(*pose);
        }
        fire
    }

    pub fn trajectory_record(out: &FrameOutput) -> TrajectoryRecord {
        TrajectoryRecord {
            timestamp: out.timestamp,
            pose: out.pose,
        }
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Selected-set log-determinants of the three selectors on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectorComparison {
    pub greedy: f64,
    pub rnd: f64,
    pub full: f64,
    pub n_candidates: usize,
    pub budget: usize,
}

/// Runs stochastic-greedy, random and full selection on the same candidates
/// at `pose` and reports `log det Λ` (prior included) for each.
pub fn compare_selectors(
    features: &[FeaturePoint],
    map: &FeatureMap,
    pose: &Pose,
    config: &Config,
    noise: &NoiseModel,
    seed: u64,
) -> SelectorComparison {
    let source = FrameCandidates {
        features,
        map,
        pose: *pose,
        config,
        noise,
    };
    let mut cache = CandidateCache::new(source.len());
    cache.fill(&source);
    let prior = config.selector.prior_scale;
    let mut full = InfoMatrix::new(prior);
    for i in 0..cache.len() {
        if let Some(m) = cache.info(i) {
            full.add(m);
        }
    }
    let sel = SelectorConfig {
        seed,
        t_max: f64::MAX,
        ..config.selector
    };
    let budget = sel.resolve_budget(source.len());
    let greedy = stochastic_greedy_select_cached(&source, &mut cache.clone(), budget, &sel);
    let rnd = random_select(&source, budget, seed, sel.metric, prior);
    SelectorComparison {
        greedy: greedy.logdet(),
        rnd: rnd.logdet(),
        full: crate::selector::logdet(&full.lambda).unwrap_or(f64::NEG_INFINITY),
        n_candidates: source.len(),
        budget,
    }
}
