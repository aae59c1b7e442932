//! Curvature-based edge and planar feature extraction on organized scans.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::Scan;

/// Number of angular sectors a ring is split into when applying caps.
pub const SECTORS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("scan is not organized by ring")]
    Unorganized,
    #[error("half_window must be >= 1")]
    BadWindow,
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Edge,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    /// Sensor frame, meters.
    pub position: Vector3<f64>,
    pub kind: FeatureKind,
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub features: Vec<FeaturePoint>,
    pub frame_timestamp: f64,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn count(&self, kind: FeatureKind) -> usize {
        self.features.iter().filter(|f| f.kind == kind).count()
    }

    /// Voxel-filters each kind separately. A resolution of 0 keeps that kind
    /// unfiltered. Output: edges first, then planar, each in voxel order.
    pub fn downsampled(&self, edge_resolution: f64, planar_resolution: f64) -> FeatureSet {
        let mut features = Vec::with_capacity(self.len());
        for (kind, res) in [
            (FeatureKind::Edge, edge_resolution),
            (FeatureKind::Planar, planar_resolution),
        ] {
            let members: Vec<&FeaturePoint> = self.features.iter().filter(|f| f.kind == kind).collect();
            if res <= 0.0 {
                features.extend(members.into_iter().copied());
                continue;
            }
            let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, f64, usize)> = BTreeMap::new();
            for f in members {
                let cell = cells.entry(voxel_key(&f.position, res)).or_insert((Vector3::zeros(), 0.0, 0));
                cell.0 += f.position;
                cell.1 += f.curvature;
                cell.2 += 1;
            }
            features.extend(cells.into_values().map(|(sum, curv, n)| FeaturePoint {
                position: sum / n as f64,
                kind,
                curvature: curv / n as f64,
            }));
        }
        FeatureSet {
            features,
            frame_timestamp: self.frame_timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub edge_threshold: f64,
    pub planar_threshold: f64,
    pub edge_per_ring: usize,
    pub planar_per_ring: usize,
    pub half_window: usize,
    /// Voxel sizes for the frame's features and the map; 0 disables.
    pub voxel_edge: f64,
    pub voxel_planar: f64,
    /// Range jump (m) between ring neighbours treated as an occlusion
    /// boundary; the far side of the jump is not used for features.
    pub discontinuity: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            edge_threshold: 0.1,
            planar_threshold: 0.01,
            edge_per_ring: 24,
            planar_per_ring: 240,
            half_window: 5,
            voxel_edge: 0.2,
            voxel_planar: 0.4,
            discontinuity: 0.3,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.half_window < 1 {
            return Err(FeatureError::BadWindow);
        }
        if !(self.edge_threshold > self.planar_threshold && self.planar_threshold >= 0.0) {
            return Err(FeatureError::InvalidConfig(
                "need 0 <= planar_threshold < edge_threshold".into(),
            ));
        }
        if self.voxel_edge < 0.0 || self.voxel_planar < 0.0 || self.discontinuity <= 0.0 {
            return Err(FeatureError::InvalidConfig(
                "voxel sizes must be >= 0 and discontinuity > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Scan indices grouped by ring, each ring in scan order.
fn rings(scan: &Scan) -> Result<Vec<Vec<usize>>, FeatureError> {
    if scan.is_empty() {
        return Ok(Vec::new());
    }
    let mut by_ring: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, p) in scan.points.iter().enumerate() {
        by_ring.entry(p.ring.ok_or(FeatureError::Unorganized)?).or_default().push(i);
    }
    Ok(by_ring.into_values().collect())
}

/// Per-point curvature `‖Σ_j (p_i − p_j)‖ / (2·w·‖p_i‖)` over the `w` ring
/// neighbours on each side. Points without a full window get `+∞`.
pub fn compute_curvature(scan: &Scan, half_window: usize) -> Result<Vec<f64>, FeatureError> {
    if half_window < 1 {
        return Err(FeatureError::BadWindow);
    }
    let mut curvature = vec![f64::INFINITY; scan.len()];
    for ring in rings(scan)? {
        ring_curvature(scan, &ring, half_window, &mut curvature);
    }
    Ok(curvature)
}

fn ring_curvature(scan: &Scan, ring: &[usize], w: usize, out: &mut [f64]) {
    if ring.len() < 2 * w + 1 {
        return;
    }
    let pos = |k: usize| scan.points[ring[k]].position;
    for k in w..ring.len() - w {
        let center = pos(k);
        let mut sum = Vector3::zeros();
        for j in (k - w)..=(k + w) {
            if j != k {
                sum += center - pos(j);
            }
        }
        let range = center.norm();
        out[ring[k]] = if range > 0.0 {
            sum.norm() / (2.0 * w as f64 * range)
        } else {
            f64::INFINITY
        };
    }
}

/// Marks the far side of every range discontinuity in a ring.
fn occluded(scan: &Scan, ring: &[usize], w: usize, jump: f64, out: &mut [bool]) {
    let range = |k: usize| scan.points[ring[k]].position.norm();
    for k in 0..ring.len().saturating_sub(1) {
        let (a, b) = (range(k), range(k + 1));
        let gap = (scan.points[ring[k + 1]].position - scan.points[ring[k]].position).norm();
        if gap <= jump + 0.05 * a.min(b) {
            continue;
        }
        if a > b {
            for j in k.saturating_sub(w - 1)..=k {
                out[ring[j]] = true;
            }
        } else {
            for j in (k + 1)..(k + 1 + w).min(ring.len()) {
                out[ring[j]] = true;
            }
        }
    }
}

/// Splits `n` into `parts` near-equal shares (earlier shares take the remainder).
fn shares(n: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |i| n / parts + usize::from(i < n % parts))
}

pub fn extract_features(scan: &Scan, config: &FeatureConfig) -> Result<FeatureSet, FeatureError> {
    config.validate()?;
    let w = config.half_window;
    let curvature = compute_curvature(scan, w)?;
    let mut excluded = vec![false; scan.len()];
    let rings = rings(scan)?;
    for ring in &rings {
        occluded(scan, ring, w, config.discontinuity, &mut excluded);
    }

    let mut features = Vec::new();
    for ring in &rings {
        if ring.len() < 2 * w + 1 {
            continue;
        }
        let inner = &ring[w..ring.len() - w];
        let edge_caps: Vec<usize> = shares(config.edge_per_ring, SECTORS).collect();
        let planar_caps: Vec<usize> = shares(config.planar_per_ring, SECTORS).collect();
        let mut start = 0;
        for (sector, len) in shares(inner.len(), SECTORS).enumerate() {
            let mut members: Vec<usize> = inner[start..start + len]
                .iter()
                .copied()
                .filter(|&i| !excluded[i] && curvature[i].is_finite())
                .collect();
            start += len;
            // Ascending curvature, ties by scan index.
            members.sort_by(|&a, &b| curvature[a].total_cmp(&curvature[b]).then(a.cmp(&b)));
            let point = |i: usize, kind| FeaturePoint {
                position: scan.points[i].position,
                kind,
                curvature: curvature[i],
            };
            features.extend(
                members
                    .iter()
                    .rev()
                    .take_while(|&&i| curvature[i] >= config.edge_threshold)
                    .take(edge_caps[sector])
                    .map(|&i| point(i, FeatureKind::Edge)),
            );
            features.extend(
                members
                    .iter()
                    .take_while(|&&i| curvature[i] <= config.planar_threshold)
                    .take(planar_caps[sector])
                    .map(|&i| point(i, FeatureKind::Planar)),
            );
        }
    }
    Ok(FeatureSet {
        features,
        frame_timestamp: scan.timestamp,
    })
}

fn voxel_key(p: &Vector3<f64>, resolution: f64) -> [i64; 3] {
    [
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
        (p.z / resolution).floor() as i64,
    ]
}

/// One centroid per occupied voxel, ordered by voxel index.
pub fn voxel_downsample(points: &[Vector3<f64>], resolution: f64) -> Vec<Vector3<f64>> {
    assert!(resolution > 0.0, "voxel resolution must be positive");
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let cell = cells.entry(voxel_key(p, resolution)).or_insert((Vector3::zeros(), 0));
        cell.0 += p;
        cell.1 += 1;
    }
    cells.into_values().map(|(sum, n)| sum / n as f64).collect()
}
