//! Synthetic scenes, trajectories and ray-cast scans with ground truth.
//!
//! Scans are organized like a spinning multi-beam sensor: one ring per
//! elevation angle, points within a ring in increasing azimuth.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{Scan, ScanPoint, TrajectoryRecord};
use crate::geometry::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("invalid sensor model: {0}")]
    InvalidSensor(String),
    #[error("pose {0:?} is outside the scene's free space")]
    OutsideFreeSpace([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Corridor,
    Room,
    OutdoorGround,
}

impl std::str::FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corridor" => Ok(Self::Corridor),
            "room" => Ok(Self::Room),
            "outdoor-ground" => Ok(Self::OutdoorGround),
            other => Err(format!("unknown scene kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceRole {
    Ground,
    Wall,
    Ceiling,
    Clutter,
}

/// Rectangle `center + a·u + b·v` with `|a| ≤ half_u`, `|b| ≤ half_v`,
/// `v = normal × u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedPlane {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub u_axis: Vector3<f64>,
    pub half_u: f64,
    pub half_v: f64,
    pub role: SurfaceRole,
}

impl BoundedPlane {
    pub fn new(
        center: Vector3<f64>,
        normal: Vector3<f64>,
        u_hint: Vector3<f64>,
        half_u: f64,
        half_v: f64,
        role: SurfaceRole,
    ) -> Self {
        let normal = normal.normalize();
        let u_axis = (u_hint - normal * normal.dot(&u_hint)).normalize();
        Self {
            center,
            normal,
            u_axis,
            half_u,
            half_v,
            role,
        }
    }

    pub fn v_axis(&self) -> Vector3<f64> {
        self.normal.cross(&self.u_axis)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&(self.center - origin)) / denom;
        if s <= 0.0 {
            return None;
        }
        let local = origin + dir * s - self.center;
        (local.dot(&self.u_axis).abs() <= self.half_u && local.dot(&self.v_axis()).abs() <= self.half_v)
            .then_some(s)
    }
}

/// Thin cylinder around the segment `start → end` (poles, columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStructure {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub radius: f64,
}

impl EdgeStructure {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let axis_vec = self.end - self.start;
        let length = axis_vec.norm();
        let axis = axis_vec / length;
        let w = origin - self.start;
        let d_perp = dir - axis * axis.dot(dir);
        let w_perp = w - axis * axis.dot(&w);
        let a = d_perp.norm_squared();
        if a < 1e-15 {
            return None;
        }
        let b = 2.0 * d_perp.dot(&w_perp);
        let c = w_perp.norm_squared() - self.radius * self.radius;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
            .into_iter()
            .filter(|&s| s > 0.0)
            .find(|&s| {
                let along = (w + dir * s).dot(&axis);
                (0.0..=length).contains(&along)
            })
    }

    /// Distance from `p` to the segment axis.
    pub fn axis_distance(&self, p: &Vector3<f64>) -> f64 {
        let axis_vec = self.end - self.start;
        let t = ((p - self.start).dot(&axis_vec) / axis_vec.norm_squared()).clamp(0.0, 1.0);
        (p - (self.start + axis_vec * t)).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub kind: SceneKind,
    pub surfaces: Vec<BoundedPlane>,
    pub edge_structures: Vec<EdgeStructure>,
    /// Regions a sensor may occupy.
    pub free_space: Vec<Aabb>,
}

impl SceneModel {
    pub fn contains_pose(&self, pose: &Pose) -> bool {
        let p = &pose.translation;
        self.free_space.iter().any(|b| b.contains(p))
            && self
                .edge_structures
                .iter()
                .all(|e| e.axis_distance(p) > e.radius)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Nearest hit along a ray: `(range, label)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, SurfaceLabel)> {
        let planes = self
            .surfaces
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.intersect(origin, dir).map(|r| (r, SurfaceLabel::Plane(i))));
        let poles = self
            .edge_structures
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.intersect(origin, dir).map(|r| (r, SurfaceLabel::Edge(i))));
        planes
            .chain(poles)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn is_ground(&self, label: SurfaceLabel) -> bool {
        matches!(label, SurfaceLabel::Plane(i) if self.surfaces[i].role == SurfaceRole::Ground)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceLabel {
    Plane(usize),
    Edge(usize),
}

/// Geometry knobs; which fields matter depends on the scene kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    /// Corridor width / room extent along y (m).
    pub width: f64,
    /// Corridor length / room extent along x / outdoor half-extent (m).
    pub length: f64,
    pub height: f64,
    pub clutter_planes: usize,
    pub poles: usize,
}

impl SceneParams {
    pub fn default_for(kind: SceneKind) -> Self {
        match kind {
            SceneKind::Corridor => Self {
                width: 2.0,
                length: 40.0,
                height: 3.0,
                clutter_planes: 0,
                poles: 0,
            },
            SceneKind::Room => Self {
                width: 8.0,
                length: 10.0,
                height: 3.0,
                clutter_planes: 8,
                poles: 3,
            },
            SceneKind::OutdoorGround => Self {
                width: 0.0,
                length: 60.0,
                height: 8.0,
                clutter_planes: 6,
                poles: 8,
            },
        }
    }
}

impl Default for SceneParams {
    fn default() -> Self {
        Self::default_for(SceneKind::Room)
    }
}

fn x() -> Vector3<f64> {
    Vector3::x()
}
fn y() -> Vector3<f64> {
    Vector3::y()
}
fn z() -> Vector3<f64> {
    Vector3::z()
}

pub fn generate_scene(kind: SceneKind, seed: u64, params: &SceneParams) -> Result<SceneModel, SynthError> {
    let positive = [params.width, params.length, params.height];
    let needs = match kind {
        SceneKind::OutdoorGround => &positive[1..],
        _ => &positive[..],
    };
    if needs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(SynthError::InvalidParams(format!(
            "extents must be positive, got {params:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match kind {
        SceneKind::Corridor => corridor(params),
        SceneKind::Room => room(params, Vector3::zeros(), &mut rng)?,
        SceneKind::OutdoorGround => outdoor(params, &mut rng),
    })
}

/// Two walls at `x = ±width/2` plus a floor; the corridor axis is `y`.
fn corridor(p: &SceneParams) -> SceneModel {
    let (hw, hl, h) = (p.width / 2.0, p.length / 2.0, p.height);
    SceneModel {
        kind: SceneKind::Corridor,
        surfaces: vec![
            BoundedPlane::new(Vector3::new(-hw, 0.0, h / 2.0), x(), y(), hl, h / 2.0, SurfaceRole::Wall),
            BoundedPlane::new(Vector3::new(hw, 0.0, h / 2.0), -x(), y(), hl, h / 2.0, SurfaceRole::Wall),
            BoundedPlane::new(Vector3::zeros(), z(), y(), hl, hw, SurfaceRole::Ground),
        ],
        edge_structures: vec![],
        free_space: vec![Aabb {
            min: Vector3::new(-hw + 0.2, -hl, 0.2),
            max: Vector3::new(hw - 0.2, hl, h),
        }],
    }
}

/// Closed box centred at `origin` (floor at `origin.z`), clutter panels near
/// the walls at mixed orientations, and vertical poles.
fn room(p: &SceneParams, origin: Vector3<f64>, rng: &mut ChaCha8Rng) -> Result<SceneModel, SynthError> {
    let (hx, hy, h) = (p.length / 2.0, p.width / 2.0, p.height);
    if hx < 2.0 || hy < 2.0 || h < 1.5 {
        return Err(SynthError::InvalidParams("room too small for clutter ring".into()));
    }
    let c = |px: f64, py: f64, pz: f64| origin + Vector3::new(px, py, pz);
    let mut surfaces = vec![
        BoundedPlane::new(c(0.0, 0.0, 0.0), z(), x(), hx, hy, SurfaceRole::Ground),
        BoundedPlane::new(c(0.0, 0.0, h), -z(), x(), hx, hy, SurfaceRole::Ceiling),
        BoundedPlane::new(c(-hx, 0.0, h / 2.0), x(), y(), hy, h / 2.0, SurfaceRole::Wall),
        BoundedPlane::new(c(hx, 0.0, h / 2.0), -x(), y(), hy, h / 2.0, SurfaceRole::Wall),
        BoundedPlane::new(c(0.0, -hy, h / 2.0), y(), x(), hx, h / 2.0, SurfaceRole::Wall),
        BoundedPlane::new(c(0.0, hy, h / 2.0), -y(), x(), hx, h / 2.0, SurfaceRole::Wall),
    ];
    // Clutter lives in a band 0.4–1.1 m from the walls; the free space is the
    // interior beyond 1.3 m.
    for k in 0..p.clutter_planes {
        let side = k % 4;
        let along = rng.random_range(-0.6..0.6);
        let inset = rng.random_range(0.5..1.0);
        let center = match side {
            0 => c(-hx + inset, along * hy, 0.0),
            1 => c(hx - inset, along * hy, 0.0),
            2 => c(along * hx, -hy + inset, 0.0),
            _ => c(along * hx, hy - inset, 0.0),
        } + Vector3::new(0.0, 0.0, rng.random_range(0.5..h - 0.8));
        let tilt: f64 = rng.random_range(0.35..1.2);
        let azimuth: f64 = rng.random_range(0.0..TAU);
        let normal = Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), tilt.cos());
        surfaces.push(BoundedPlane::new(
            center,
            normal,
            Vector3::new(-azimuth.sin(), azimuth.cos(), 0.0),
            rng.random_range(0.3..0.45),
            rng.random_range(0.25..0.4),
            SurfaceRole::Clutter,
        ));
    }
    let corners = [(-1.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0)];
    let edge_structures = (0..p.poles)
        .map(|k| {
            let (sx, sy) = corners[k % 4];
            let base = c(sx * (hx - 0.8), sy * (hy - 0.8), 0.0);
            EdgeStructure {
                start: base,
                end: base + Vector3::new(0.0, 0.0, h),
                radius: 0.08,
            }
        })
        .collect();
    Ok(SceneModel {
        kind: SceneKind::Room,
        surfaces,
        edge_structures,
        free_space: vec![Aabb {
            min: c(-hx + 1.3, -hy + 1.3, 0.3),
            max: c(hx - 1.3, hy - 1.3, h - 0.3),
        }],
    })
}

fn outdoor(p: &SceneParams, rng: &mut ChaCha8Rng) -> SceneModel {
    let extent = p.length;
    let mut surfaces = vec![BoundedPlane::new(
        Vector3::zeros(),
        z(),
        x(),
        extent,
        extent,
        SurfaceRole::Ground,
    )];
    for k in 0..p.clutter_planes {
        let bearing = TAU * (k as f64 + rng.random_range(0.2..0.8)) / p.clutter_planes.max(1) as f64;
        let dist = rng.random_range(18.0..35.0);
        let facing = bearing + PI + rng.random_range(-0.6..0.6);
        let height = rng.random_range(0.6..1.0) * p.height;
        let normal = Vector3::new(facing.cos(), facing.sin(), 0.0);
        surfaces.push(BoundedPlane::new(
            Vector3::new(dist * bearing.cos(), dist * bearing.sin(), height / 2.0),
            normal,
            z().cross(&normal),
            rng.random_range(3.0..7.0),
            height / 2.0,
            SurfaceRole::Wall,
        ));
    }
    let edge_structures = (0..p.poles)
        .map(|_| {
            let bearing = rng.random_range(0.0..TAU);
            let dist = rng.random_range(6.0..15.0);
            let base = Vector3::new(dist * bearing.cos(), dist * bearing.sin(), 0.0);
            EdgeStructure {
                start: base,
                end: base + Vector3::new(0.0, 0.0, 5.0),
                radius: 0.15,
            }
        })
        .collect();
    SceneModel {
        kind: SceneKind::OutdoorGround,
        surfaces,
        edge_structures,
        free_space: vec![Aabb {
            min: Vector3::new(-5.0, -5.0, 0.5),
            max: Vector3::new(5.0, 5.0, 3.0),
        }],
    }
}

/// A corridor along `y ∈ [-corridor_length, 0]` opening into a room that
/// occupies `y ∈ [0, room_depth]`. Used to script degenerate → well-
/// conditioned transitions.
pub fn corridor_to_room_scene(seed: u64, corridor_length: f64) -> Result<SceneModel, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hw, h) = (1.0, 3.0);
    let room_params = SceneParams {
        width: 10.0,
        length: 10.0,
        height: h,
        clutter_planes: 8,
        poles: 3,
    };
    let mut model = room(&room_params, Vector3::new(0.0, 5.0, 0.0), &mut rng)?;
    // Replace the south wall (normal +y, at y = 0) with two segments leaving a
    // doorway the width of the corridor.
    let south = model
        .surfaces
        .iter()
        .position(|s| s.role == SurfaceRole::Wall && (s.normal - y()).norm() < 1e-9)
        .expect("room has a south wall");
    model.surfaces.remove(south);
    for sx in [-1.0, 1.0] {
        let half = (5.0 - hw) / 2.0;
        model.surfaces.push(BoundedPlane::new(
            Vector3::new(sx * (hw + half), 0.0, h / 2.0),
            y(),
            x(),
            half,
            h / 2.0,
            SurfaceRole::Wall,
        ));
    }
    let half_len = corridor_length / 2.0;
    let mid = Vector3::new(0.0, -half_len, 0.0);
    model.surfaces.extend([
        BoundedPlane::new(mid + Vector3::new(-hw, 0.0, h / 2.0), x(), y(), half_len, h / 2.0, SurfaceRole::Wall),
        BoundedPlane::new(mid + Vector3::new(hw, 0.0, h / 2.0), -x(), y(), half_len, h / 2.0, SurfaceRole::Wall),
        BoundedPlane::new(mid, z(), y(), half_len, hw, SurfaceRole::Ground),
    ]);
    model.free_space.push(Aabb {
        min: Vector3::new(-hw + 0.2, -corridor_length, 0.2),
        max: Vector3::new(hw - 0.2, 1.5, h),
    });
    model.free_space.push(Aabb {
        min: Vector3::new(-hw + 0.2, -0.5, 0.2),
        max: Vector3::new(hw - 0.2, 6.0, h - 0.3),
    });
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub rings: usize,
    /// Azimuth step (rad).
    pub horizontal_resolution: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub range_noise_sigma: f64,
    pub outlier_rate: f64,
    pub outlier_magnitude: f64,
}

impl Default for SensorModel {
    /// A 16-beam, ±15° spinning sensor at 0.2° azimuth steps.
    fn default() -> Self {
        Self {
            rings: 16,
            horizontal_resolution: 0.2f64.to_radians(),
            elevation_min: (-15.0f64).to_radians(),
            elevation_max: 15.0f64.to_radians(),
            min_range: 0.3,
            max_range: 50.0,
            range_noise_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 1.0,
        }
    }
}

impl SensorModel {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sensor serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSensor(m.into()));
        if self.rings < 1 {
            return bad("rings must be >= 1");
        }
        if !(self.horizontal_resolution > 0.0) {
            return bad("horizontal_resolution must be positive");
        }
        if !(self.range_noise_sigma >= 0.0) {
            return bad("range_noise_sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must lie in [0, 1]");
        }
        if !(self.max_range > self.min_range && self.min_range >= 0.0) {
            return bad("need 0 <= min_range < max_range");
        }
        Ok(())
    }

    pub fn elevation(&self, ring: usize) -> f64 {
        if self.rings == 1 {
            return 0.5 * (self.elevation_min + self.elevation_max);
        }
        self.elevation_min + (self.elevation_max - self.elevation_min) * ring as f64 / (self.rings - 1) as f64
    }

    pub fn azimuth_steps(&self) -> usize {
        (TAU / self.horizontal_resolution).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    pub scan: Scan,
    /// Ground-truth surface hit by each point.
    pub labels: Vec<SurfaceLabel>,
}

pub fn simulate_scan(
    scene: &SceneModel,
    sensor: &SensorModel,
    pose: &Pose,
    rng_seed: u64,
) -> Result<SimulatedScan, SynthError> {
    sensor.validate()?;
    if !scene.contains_pose(pose) {
        let t = pose.translation;
        return Err(SynthError::OutsideFreeSpace([t.x, t.y, t.z]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = (sensor.range_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, sensor.range_noise_sigma).expect("sigma validated"));
    let steps = sensor.azimuth_steps();
    let mut points = Vec::with_capacity(sensor.rings * steps);
    let mut labels = Vec::with_capacity(sensor.rings * steps);
    for ring in 0..sensor.rings {
        let (se, ce) = sensor.elevation(ring).sin_cos();
        for step in 0..steps {
            let (sa, ca) = (-PI + step as f64 * sensor.horizontal_resolution).sin_cos();
            let local_dir = Vector3::new(ce * ca, ce * sa, se);
            let world_dir = pose.rotation * local_dir;
            let Some((range, label)) = scene.cast(&pose.translation, &world_dir) else {
                continue;
            };
            if range < sensor.min_range || range > sensor.max_range {
                continue;
            }
            let mut measured = range;
            if let Some(n) = &noise {
                measured += n.sample(&mut rng);
            }
            if sensor.outlier_rate > 0.0 && rng.random::<f64>() < sensor.outlier_rate {
                measured += rng.random_range(-1.0..=1.0) * sensor.outlier_magnitude;
            }
            if measured < sensor.min_range {
                continue;
            }
            points.push(ScanPoint {
                position: local_dir * measured,
                intensity: None,
                ring: Some(ring as u16),
            });
            labels.push(label);
        }
    }
    Ok(SimulatedScan {
        scan: Scan {
            points,
            timestamp: 0.0,
        },
        labels,
    })
}

/// Ground-truth poses at `rate_hz` for a scene kind.
///
/// Room: an ellipse around the room centre with gentle roll/pitch/height
/// oscillation, 100 frames per loop. Corridor: straight along the axis at
/// 0.1 m per frame. Outdoor: forward drive with a slow turn.
pub fn generate_trajectory(kind: SceneKind, frames: usize, rate_hz: f64) -> Vec<TrajectoryRecord> {
    (0..frames)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let pose = match kind {
                SceneKind::Room => room_pose(i as f64, Vector3::zeros()),
                SceneKind::Corridor => Pose::from_euler(
                    Vector3::new(0.05 * (0.3 * i as f64).sin(), -8.0 + 0.1 * i as f64, 1.2),
                    0.02 * (0.2 * i as f64).sin(),
                    0.015 * (0.13 * i as f64).cos(),
                    PI / 2.0 + 0.05 * (0.1 * i as f64).sin(),
                ),
                SceneKind::OutdoorGround => {
                    let heading = 0.004 * i as f64;
                    Pose::from_euler(
                        Vector3::new(-4.0 + 0.08 * i as f64, 0.02 * i as f64 * heading, 1.8),
                        0.01 * (0.2 * i as f64).sin(),
                        0.01 * (0.17 * i as f64).cos(),
                        heading,
                    )
                }
            };
            TrajectoryRecord { timestamp: t, pose }
        })
        .collect()
}

fn room_pose(i: f64, center: Vector3<f64>) -> Pose {
    let phase = TAU * i / 100.0;
    let (s, c) = phase.sin_cos();
    let position = center + Vector3::new(2.0 * c, 1.5 * s, 1.5 + 0.15 * (2.0 * phase).sin());
    let heading = (1.5 * c).atan2(-2.0 * s);
    Pose::from_euler(
        position,
        0.05 * (3.0 * phase).sin(),
        0.04 * (2.0 * phase).cos(),
        heading + 0.1 * (4.0 * phase).sin(),
    )
}

/// Straight walk from inside the corridor into the room of
/// [`corridor_to_room_scene`].
pub fn corridor_to_room_trajectory(start_y: f64, end_y: f64, frames: usize, rate_hz: f64) -> Vec<TrajectoryRecord> {
    let step = (end_y - start_y) / (frames.max(2) - 1) as f64;
    (0..frames)
        .map(|i| TrajectoryRecord {
            timestamp: i as f64 / rate_hz,
            pose: Pose::from_euler(
                Vector3::new(0.03 * (0.4 * i as f64).sin(), start_y + step * i as f64, 1.3),
                0.01 * (0.3 * i as f64).sin(),
                0.01 * (0.2 * i as f64).cos(),
                PI / 2.0 + 0.03 * (0.15 * i as f64).sin(),
            ),
        })
        .collect()
}

/// Simulates every pose of a trajectory; frame `i` uses seed `seed + i`.
pub fn simulate_sequence(
    scene: &SceneModel,
    sensor: &SensorModel,
    trajectory: &[TrajectoryRecord],
    seed: u64,
) -> Result<Vec<SimulatedScan>, SynthError> {
    trajectory
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut sim = simulate_scan(scene, sensor, &rec.pose, seed.wrapping_add(i as u64))?;
            sim.scan.timestamp = rec.timestamp;
            Ok(sim)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn floor_only() -> SceneModel {
        SceneModel {
            kind: SceneKind::OutdoorGround,
            surfaces: vec![BoundedPlane::new(Vector3::zeros(), z(), x(), 200.0, 200.0, SurfaceRole::Ground)],
            edge_structures: vec![],
            free_space: vec![Aabb {
                min: Vector3::new(-10.0, -10.0, 0.1),
                max: Vector3::new(10.0, 10.0, 5.0),
            }],
        }
    }

    #[test]
    fn corridor_construction() {
        let scene = generate_scene(SceneKind::Corridor, 0, &SceneParams::default_for(SceneKind::Corridor)).unwrap();
        assert_eq!(scene.surfaces.len(), 3);
        let normals: Vec<_> = scene.surfaces.iter().map(|s| s.normal).collect();
        assert_eq!(normals[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(normals[1], Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(normals[2], Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(scene.surfaces[0].center.x, -1.0);
    }

    #[test]
    fn room_construction() {
        let params = SceneParams::default_for(SceneKind::Room);
        let scene = generate_scene(SceneKind::Room, 4, &params).unwrap();
        let boundary = scene.surfaces.iter().filter(|s| s.role != SurfaceRole::Clutter).count();
        assert_eq!(boundary, 6);
        assert_eq!(scene.surfaces.len(), 6 + params.clutter_planes);
        assert_eq!(scene.edge_structures.len(), params.poles);
        for s in &scene.surfaces {
            assert!((s.normal.norm() - 1.0).abs() < 1e-12);
            assert!(s.half_u > 0.0 && s.half_v > 0.0);
        }
        // Same seed, same scene.
        assert_eq!(scene, generate_scene(SceneKind::Room, 4, &params).unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut params = SceneParams::default_for(SceneKind::Corridor);
        params.width = -1.0;
        assert!(matches!(
            generate_scene(SceneKind::Corridor, 0, &params),
            Err(SynthError::InvalidParams(_))
        ));
    }

    #[test]
    fn outdoor_scan_is_mostly_ground() {
        let params = SceneParams::default_for(SceneKind::OutdoorGround);
        let scene = generate_scene(SceneKind::OutdoorGround, 11, &params).unwrap();
        let pose = Pose::new(Default::default(), Vector3::new(0.0, 0.0, 1.8));
        let sim = simulate_scan(&scene, &SensorModel::default(), &pose, 0).unwrap();
        let ground = sim.labels.iter().filter(|&&l| scene.is_ground(l)).count();
        assert!(ground * 2 >= sim.labels.len(), "{ground} of {}", sim.labels.len());
        assert!(sim.labels.iter().any(|l| matches!(l, SurfaceLabel::Edge(_))));
    }

    #[test]
    fn noise_free_floor_points_lie_on_floor() {
        let scene = floor_only();
        let pose = Pose::from_euler(Vector3::new(1.0, -2.0, 1.7), 0.1, -0.05, 0.7);
        let sim = simulate_scan(&scene, &SensorModel::default(), &pose, 9).unwrap();
        assert!(!sim.scan.is_empty());
        for p in &sim.scan.points {
            assert!(pose.transform_point(&p.position).z.abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let scene = generate_scene(SceneKind::Room, 1, &SceneParams::default()).unwrap();
        let sensor = SensorModel {
            range_noise_sigma: 0.02,
            outlier_rate: 0.1,
            ..Default::default()
        };
        let pose = Pose::new(Default::default(), Vector3::new(0.5, 0.2, 1.4));
        let a = simulate_scan(&scene, &sensor, &pose, 77).unwrap();
        let b = simulate_scan(&scene, &sensor, &pose, 77).unwrap();
        assert_eq!(a, b);
        let c = simulate_scan(&scene, &sensor, &pose, 78).unwrap();
        assert_ne!(a.scan, c.scan);
    }

    #[test]
    fn range_noise_statistics() {
        // 10^5 rays on a single plane; the spread of plane distance should
        // match the configured sigma (rays hit near normal incidence because
        // the sensor looks straight down at a close floor).
        let scene = floor_only();
        let sensor = SensorModel {
            rings: 56,
            horizontal_resolution: TAU / 1800.0,
            elevation_min: (-89.0f64).to_radians(),
            elevation_max: (-30.0f64).to_radians(),
            range_noise_sigma: 0.02,
            ..Default::default()
        };
        let pose = Pose::new(Default::default(), Vector3::new(0.0, 0.0, 2.0));
        let sim = simulate_scan(&scene, &sensor, &pose, 5).unwrap();
        assert!(sim.scan.len() >= 100_000);
        // Range error along each ray maps to plane distance via the incidence
        // cosine; undo it (sensor frame equals world frame up to translation).
        let errors: Vec<f64> = sim
            .scan
            .points
            .iter()
            .map(|p| {
                let dir = p.position.normalize();
                let true_range = 2.0 / -dir.z;
                p.position.norm() - true_range
            })
            .collect();
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.02).abs() < 0.002, "std {std}");
    }

    #[test]
    fn corridor_is_translation_invariant_along_axis() {
        let scene = generate_scene(SceneKind::Corridor, 0, &SceneParams::default_for(SceneKind::Corridor)).unwrap();
        let sensor = SensorModel {
            max_range: 12.0,
            ..Default::default()
        };
        let pose = Pose::from_euler(Vector3::new(0.1, 0.0, 1.2), 0.0, 0.0, PI / 2.0);
        let sim = simulate_scan(&scene, &sensor, &pose, 0).unwrap();
        for shift in [0.5, 3.0] {
            let moved = Pose::new(pose.rotation, pose.translation + Vector3::new(0.0, shift, 0.0));
            for (p, label) in sim.scan.points.iter().zip(&sim.labels) {
                let SurfaceLabel::Plane(i) = label else { unreachable!() };
                let d = scene.surfaces[i.to_owned()].signed_distance(&moved.transform_point(&p.position));
                assert!(d.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn outside_free_space_is_rejected() {
        let scene = generate_scene(SceneKind::Room, 0, &SceneParams::default()).unwrap();
        let pose = Pose::new(Default::default(), Vector3::new(20.0, 0.0, 1.0));
        assert!(matches!(
            simulate_scan(&scene, &SensorModel::default(), &pose, 0),
            Err(SynthError::OutsideFreeSpace(_))
        ));
    }

    #[test]
    fn trajectories_stay_in_free_space() {
        for kind in [SceneKind::Room, SceneKind::Corridor, SceneKind::OutdoorGround] {
            let scene = generate_scene(kind, 3, &SceneParams::default_for(kind)).unwrap();
            for rec in generate_trajectory(kind, 100, 10.0) {
                assert!(scene.contains_pose(&rec.pose), "{kind:?} {:?}", rec.pose.translation);
            }
        }
        let scene = corridor_to_room_scene(0, 30.0).unwrap();
        for rec in corridor_to_room_trajectory(-25.0, 5.0, 60, 10.0) {
            assert!(scene.contains_pose(&rec.pose));
        }
    }

    #[test]
    fn scene_toml_roundtrip() {
        let scene = generate_scene(SceneKind::Room, 2, &SceneParams::default()).unwrap();
        let back = SceneModel::from_toml(&scene.to_toml()).unwrap();
        assert_eq!(back.surfaces.len(), scene.surfaces.len());
        for (a, b) in back.surfaces.iter().zip(&scene.surfaces) {
            assert!((a.center - b.center).norm() < 1e-12);
            assert_eq!(a.role, b.role);
        }
    }
}
