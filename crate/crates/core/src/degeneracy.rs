//! Scalar degeneracy factor and the adaptive selection ratio it drives.

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::selector::{logdet, CandidateCache, CandidateSource, InfoMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegeneracyConfig {
    pub adaptive: bool,
    pub lambda_th: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
    pub interval_frames: usize,
    /// Half-width of the switching band around `lambda_th`; 0 disables it.
    pub hysteresis: f64,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        Self {
            adaptive: false,
            lambda_th: 42.0,
            low_ratio: 0.2,
            high_ratio: 0.8,
            interval_frames: 10,
            hysteresis: 0.0,
        }
    }
}

impl DegeneracyConfig {
    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |r: f64| r > 0.0 && r <= 1.0;
        if !in_unit(self.low_ratio) || !in_unit(self.high_ratio) {
            return Err("degeneracy ratios must lie in (0, 1]".into());
        }
        if self.interval_frames == 0 {
            return Err("degeneracy.interval_frames must be at least 1".into());
        }
        if !(self.hysteresis >= 0.0) || !self.lambda_th.is_finite() {
            return Err("degeneracy.hysteresis must be non-negative and lambda_th finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub lambda: f64,
    pub lambda_threshold: f64,
    pub ratio_applied: f64,
    pub evaluated_at_frame: usize,
    pub matched: usize,
    /// No candidate matched; `lambda` is the prior's log-determinant.
    pub no_matches: bool,
}

/// `logdet(prior·I + Σ Λ_i)` over every matched candidate, and the match count.
pub fn degeneracy_factor<S: CandidateSource>(source: &S, prior_scale: f64) -> (f64, usize) {
    let mut cache = CandidateCache::new(source.len());
    degeneracy_factor_cached(source, &mut cache, prior_scale)
}

/// As [`degeneracy_factor`], leaving every match result in `cache`.
pub fn degeneracy_factor_cached<S: CandidateSource>(
    source: &S,
    cache: &mut CandidateCache<S::Payload>,
    prior_scale: f64,
) -> (f64, usize) {
    cache.fill(source);
    let mut info = InfoMatrix::new(prior_scale);
    let mut matched = 0;
    for i in 0..cache.len() {
        if let Some(m) = cache.info(i) {
            info.add(m);
            matched += 1;
        }
    }
    (factor_of(&info.lambda), matched)
}

fn factor_of(lambda: &Matrix6<f64>) -> f64 {
    logdet(lambda).unwrap_or(f64::NEG_INFINITY)
}

pub fn adaptive_ratio(lambda: f64, config: &DegeneracyConfig) -> f64 {
    if lambda >= config.lambda_th {
        config.low_ratio
    } else {
        config.high_ratio
    }
}

pub fn schedule_evaluation(frame_index: usize, interval_frames: usize) -> bool {
    frame_index.is_multiple_of(interval_frames.max(1))
}

/// Ratio state carried between evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveBudget {
    pub config: DegeneracyConfig,
    pub ratio: f64,
    pub last_report: Option<DegeneracyReport>,
}

impl AdaptiveBudget {
    pub fn new(config: DegeneracyConfig) -> Self {
        Self {
            ratio: config.high_ratio,
            config,
            last_report: None,
        }
    }

    pub fn due(&self, frame_index: usize) -> bool {
        schedule_evaluation(frame_index, self.config.interval_frames)
    }

    /// Applies a new factor; the ratio only changes once `λ` leaves the
    /// hysteresis band on the far side.
    pub fn update(&mut self, lambda: f64, frame_index: usize, matched: usize) -> DegeneracyReport {
        let h = self.config.hysteresis;
        self.ratio = if h == 0.0 || self.last_report.is_none() {
            adaptive_ratio(lambda, &self.config)
        } else if self.ratio == self.config.low_ratio {
            if lambda < self.config.lambda_th - h {
                self.config.high_ratio
            } else {
                self.config.low_ratio
            }
        } else if lambda >= self.config.lambda_th + h {
            self.config.low_ratio
        } else {
            self.config.high_ratio
        };
        let report = DegeneracyReport {
            lambda,
            lambda_threshold: self.config.lambda_th,
            ratio_applied: self.ratio,
            evaluated_at_frame: frame_index,
            matched,
            no_matches: matched == 0,
        };
        self.last_report = Some(report);
        report
    }
}
