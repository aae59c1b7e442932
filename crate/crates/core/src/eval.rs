//! Trajectory accuracy and selection-quality statistics.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::Serialize;

use crate::cloud_io::TrajectoryRecord;
use crate::geometry::Pose;

pub const ASSOCIATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("only {0} timestamp pairs associate; need at least 2")]
    TooFewPairs(usize),
    #[error("rpe delta {delta} must be smaller than the {pairs} associated poses")]
    DeltaTooLarge { delta: usize, pairs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    #[default]
    Se3,
    /// Yaw-only rotation; for planar ground truth.
    Se2,
}

/// Index pairs `(est, gt)` with timestamps within `ASSOCIATION_TOLERANCE`,
/// nearest ground-truth stamp per estimate.
pub fn associate(estimated: &[TrajectoryRecord], ground_truth: &[TrajectoryRecord]) -> Vec<(usize, usize)> {
    let mut gt: Vec<(f64, usize)> = ground_truth.iter().enumerate().map(|(i, r)| (r.timestamp, i)).collect();
    gt.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pairs = Vec::new();
    for (ei, rec) in estimated.iter().enumerate() {
        let at = gt.partition_point(|(t, _)| *t < rec.timestamp);
        let nearest = [at.checked_sub(1), Some(at)]
            .into_iter()
            .flatten()
            .filter(|&k| k < gt.len())
            .min_by(|&a, &b| (gt[a].0 - rec.timestamp).abs().total_cmp(&(gt[b].0 - rec.timestamp).abs()));
        if let Some(k) = nearest {
            if (gt[k].0 - rec.timestamp).abs() <= ASSOCIATION_TOLERANCE {
                pairs.push((ei, gt[k].1));
            }
        }
    }
    pairs
}

/// Rigid transform `T` minimizing `Σ ‖T·src_i − dst_i‖²`.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>], mode: Alignment) -> Pose {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let rotation = match mode {
        Alignment::Se3 => {
            let svd = h.svd(true, true);
            let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut fix = Matrix3::identity();
            if (u * v_t).determinant() < 0.0 {
                fix[(2, 2)] = -1.0;
            }
            Rotation3::from_matrix_unchecked(u * fix * v_t)
        }
        Alignment::Se2 => {
            let yaw = (h[(1, 0)] - h[(0, 1)]).atan2(h[(0, 0)] + h[(1, 1)]);
            Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
        }
    };
    let rotation = UnitQuaternion::from_rotation_matrix(&rotation);
    Pose::new(rotation, cd - rotation * cs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteReport {
    pub rmse_translation: f64,
    /// Degrees.
    pub rmse_rotation: f64,
    pub pairs: usize,
    #[serde(skip)]
    pub alignment: Pose,
    /// Per pair: timestamp, aligned estimate, ground truth, translation error.
    #[serde(skip)]
    pub aligned: Vec<(f64, Vector3<f64>, Vector3<f64>, f64)>,
}

impl AteReport {
    pub fn aligned_csv(&self) -> String {
        let mut out = String::from("timestamp,est_x,est_y,est_z,gt_x,gt_y,gt_z,error\n");
        for (t, e, g, err) in &self.aligned {
            out.push_str(&format!("{t:.6},{},{},{},{},{},{},{err}\n", e.x, e.y, e.z, g.x, g.y, g.z));
        }
        out
    }
}

pub fn ate(estimated: &[TrajectoryRecord], ground_truth: &[TrajectoryRecord]) -> Result<AteReport, EvalError> {
    ate_with(estimated, ground_truth, Alignment::Se3)
}

pub fn ate_with(
    estimated: &[TrajectoryRecord],
    ground_truth: &[TrajectoryRecord],
    mode: Alignment,
) -> Result<AteReport, EvalError> {
    let pairs = associate(estimated, ground_truth);
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let src: Vec<_> = pairs.iter().map(|&(e, _)| estimated[e].pose.translation).collect();
    let dst: Vec<_> = pairs.iter().map(|&(_, g)| ground_truth[g].pose.translation).collect();
    let alignment = align_rigid(&src, &dst, mode);
    let mut sq_t = 0.0;
    let mut sq_r = 0.0;
    let mut aligned = Vec::with_capacity(pairs.len());
    for &(e, g) in &pairs {
        let est = alignment.compose(&estimated[e].pose);
        let gt = &ground_truth[g].pose;
        let err = (est.translation - gt.translation).norm();
        let angle = gt.inverse().compose(&est).rotation_angle().to_degrees();
        sq_t += err * err;
        sq_r += angle * angle;
        aligned.push((estimated[e].timestamp, est.translation, gt.translation, err));
    }
    let n = pairs.len() as f64;
    Ok(AteReport {
        rmse_translation: (sq_t / n).sqrt(),
        rmse_rotation: (sq_r / n).sqrt(),
        pairs: pairs.len(),
        alignment,
        aligned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let n = samples.len() as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        Self {
            mean: samples.iter().sum::<f64>() / n,
            median,
            rmse: (samples.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
            max: *sorted.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpeReport {
    pub delta: usize,
    pub pairs: usize,
    pub translation: ErrorStats,
    /// Degrees.
    pub rotation: ErrorStats,
}

pub fn rpe(estimated: &[TrajectoryRecord], ground_truth: &[TrajectoryRecord], delta: usize) -> Result<RpeReport, EvalError> {
    let pairs = associate(estimated, ground_truth);
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    if delta == 0 || delta >= pairs.len() {
        return Err(EvalError::DeltaTooLarge {
            delta,
            pairs: pairs.len(),
        });
    }
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    for w in 0..pairs.len() - delta {
        let (e0, g0) = pairs[w];
        let (e1, g1) = pairs[w + delta];
        let rel_est = estimated[e0].pose.inverse().compose(&estimated[e1].pose);
        let rel_gt = ground_truth[g0].pose.inverse().compose(&ground_truth[g1].pose);
        let err = rel_gt.inverse().compose(&rel_est);
        trans.push(err.translation.norm());
        rot.push(err.rotation_angle().to_degrees());
    }
    Ok(RpeReport {
        delta,
        pairs: trans.len(),
        translation: ErrorStats::from_samples(&trans),
        rotation: ErrorStats::from_samples(&rot),
    })
}

/// Mean and population standard deviation of one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl CellStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            n,
            mean,
            std: var.sqrt(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub const METHOD_ORDER: [&str; 3] = ["greedy", "rnd", "full"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub sequence: String,
    pub cells: BTreeMap<String, CellStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionTable {
    /// Samples were taken at this pipeline stage.
    pub stage: String,
    pub methods: Vec<String>,
    pub rows: Vec<SelectionRow>,
    /// Column means over sequences.
    pub average: BTreeMap<String, f64>,
}

impl SelectionTable {
    /// Rows of sequences, columns of methods, cells `mean±std` at one decimal.
    pub fn render(&self) -> String {
        let mut out = format!("{:<12}", "sequence");
        for m in &self.methods {
            out.push_str(&format!(" {m:>12}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<12}", row.sequence));
            for m in &self.methods {
                let cell = row.cells.get(m).map_or("-".to_string(), |c| format!("{:.1}±{:.1}", c.mean, c.std));
                out.push_str(&format!(" {cell:>12}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<12}", "average"));
        for m in &self.methods {
            let cell = self.average.get(m).map_or("-".to_string(), |v| format!("{v:.2}"));
            out.push_str(&format!(" {cell:>12}"));
        }
        out.push('\n');
        out
    }
}

/// Builds the table from `sequence → method → per-frame log-determinants`.
/// Known methods come first in `METHOD_ORDER`.
pub fn selection_report(samples: &BTreeMap<String, BTreeMap<String, Vec<f64>>>, stage: &str) -> SelectionTable {
    let mut methods: Vec<String> = METHOD_ORDER
        .iter()
        .filter(|m| samples.values().any(|row| row.contains_key(**m)))
        .map(|m| m.to_string())
        .collect();
    for row in samples.values() {
        for m in row.keys() {
            if !methods.contains(m) {
                methods.push(m.clone());
            }
        }
    }
    let rows: Vec<SelectionRow> = samples
        .iter()
        .map(|(seq, row)| SelectionRow {
            sequence: seq.clone(),
            cells: row
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(m, v)| (m.clone(), CellStats::from_samples(v)))
                .collect(),
        })
        .collect();
    let average = methods
        .iter()
        .filter_map(|m| {
            let means: Vec<f64> = rows.iter().filter_map(|r| r.cells.get(m).map(|c| c.mean)).collect();
            (!means.is_empty()).then(|| (m.clone(), means.iter().sum::<f64>() / means.len() as f64))
        })
        .collect();
    SelectionTable {
        stage: stage.to_string(),
        methods,
        rows,
        average,
    }
}
