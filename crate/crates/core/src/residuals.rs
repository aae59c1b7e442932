//! Point-to-plane and point-to-line residuals with analytic Jacobians,
//! iteratively reweighted covariances and per-feature information.
//!
//! A planar residual is `r = a·w` with `a = wᵀ(Rp+t) + d`. An edge residual
//! stacks two planar residuals against orthogonal planes through the line.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::association::{GeometricModel, LineModel, PlaneModel};
use crate::geometry::{skew, Pose};

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum RobustLoss {
    None,
    Huber { delta: f64 },
}

impl RobustLoss {
    /// `ρ′(s)` for a whitened squared norm `s`.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustLoss::None => 1.0,
            RobustLoss::Huber { delta } => {
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            }
        }
    }

    /// `ρ(s)`, continuous with continuous derivative at `δ²`.
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            RobustLoss::None => s,
            RobustLoss::Huber { delta } => {
                if s <= delta * delta {
                    s
                } else {
                    2.0 * delta * s.sqrt() - delta * delta
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("measurement covariance is not symmetric positive definite")]
    NotSpd,
    #[error("huber threshold must be positive, got {0}")]
    BadDelta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub covariance: Matrix3<f64>,
    pub loss: RobustLoss,
    information: Matrix3<f64>,
}

impl NoiseModel {
    pub fn new(covariance: Matrix3<f64>, loss: RobustLoss) -> Result<Self, NoiseError> {
        if (covariance - covariance.transpose()).abs().max() > 1e-12 {
            return Err(NoiseError::NotSpd);
        }
        let chol = covariance.cholesky().ok_or(NoiseError::NotSpd)?;
        if let RobustLoss::Huber { delta } = loss {
            if !(delta > 0.0) {
                return Err(NoiseError::BadDelta(delta));
            }
        }
        Ok(Self {
            covariance,
            loss,
            information: chol.inverse(),
        })
    }

    pub fn isotropic(sigma: f64, loss: RobustLoss) -> Result<Self, NoiseError> {
        Self::new(Matrix3::identity() * (sigma * sigma), loss)
    }

    /// `W⁻¹`.
    pub fn information(&self) -> &Matrix3<f64> {
        &self.information
    }

    /// `‖r‖²_W`, with `r` consumed in 3-row blocks.
    pub fn whitened_sq(&self, residual: &[f64]) -> f64 {
        residual
            .chunks(3)
            .map(|c| {
                let v = Vector3::new(c[0], c[1], c[2]);
                v.dot(&(self.information * v))
            })
            .sum()
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::isotropic(0.02, RobustLoss::Huber { delta: 0.1 }).expect("valid default")
    }
}

/// Linearized residual of one feature. Planar blocks use 3 rows, edge blocks
/// 6; storage is padded to 6 with zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBlock {
    pub rows: usize,
    pub residual: Vector6<f64>,
    pub jacobian: Matrix6<f64>,
    pub sigma_inv: Matrix6<f64>,
    pub info: Matrix6<f64>,
    /// `‖r‖²_W` before reweighting.
    pub whitened_sq: f64,
    pub weight: f64,
}

impl ResidualBlock {
    fn assemble(rows: usize, residual: Vector6<f64>, jacobian: Matrix6<f64>, noise: &NoiseModel) -> Self {
        let s = noise.whitened_sq(&residual.as_slice()[..rows]);
        let weight = noise.loss.weight(s);
        let mut sigma_inv = Matrix6::zeros();
        for b in 0..rows / 3 {
            sigma_inv
                .fixed_view_mut::<3, 3>(3 * b, 3 * b)
                .copy_from(&(noise.information() * weight));
        }
        let info = info_contribution(&jacobian, &sigma_inv);
        Self {
            rows,
            residual,
            jacobian,
            sigma_inv,
            info,
            whitened_sq: s,
            weight,
        }
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual.as_slice()[..self.rows]
    }

    /// `Jᵀ Σ⁻¹ r`.
    pub fn gradient(&self) -> Vector6<f64> {
        self.jacobian.transpose() * (self.sigma_inv * self.residual)
    }
}

/// Returns `(r, a)`.
pub fn planar_residual(pose: &Pose, p: &Vector3<f64>, plane: &PlaneModel) -> (Vector3<f64>, f64) {
    let a = plane.signed_distance(&pose.transform_point(p));
    (plane.normal * a, a)
}

/// `[A_w, −A_w R p^∧]` with `A_w = w wᵀ`.
pub fn planar_jacobian(pose: &Pose, p: &Vector3<f64>, plane: &PlaneModel) -> Matrix3x6 {
    let aw = plane.normal * plane.normal.transpose();
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&aw);
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-aw * pose.rotation_matrix() * skew(p)));
    j
}

/// Two planes containing `line`: the first also contains `q`, the second is
/// orthogonal to it. When `q` is on the line the first normal is the line
/// direction crossed with its least-aligned coordinate axis.
pub fn edge_planes(line: &LineModel, q: &Vector3<f64>) -> (PlaneModel, PlaneModel) {
    let dir = line.direction;
    let mut n1 = dir.cross(&(q - line.point_on_line));
    if n1.norm() < 1e-12 {
        let axis = dir.abs().imin();
        n1 = dir.cross(&Vector3::ith(axis, 1.0));
    }
    let n1 = n1.normalize();
    let n2 = dir.cross(&n1).normalize();
    let plane = |n: Vector3<f64>| PlaneModel {
        normal: n,
        offset: -n.dot(&line.point_on_line),
    };
    (plane(n1), plane(n2))
}

/// Stacked residual and Jacobian against a fixed plane pair.
pub fn stacked_planar(
    pose: &Pose,
    p: &Vector3<f64>,
    planes: &(PlaneModel, PlaneModel),
) -> (Vector6<f64>, Matrix6<f64>) {
    let mut r = Vector6::zeros();
    let mut j = Matrix6::zeros();
    for (b, plane) in [planes.0, planes.1].iter().enumerate() {
        r.fixed_rows_mut::<3>(3 * b).copy_from(&planar_residual(pose, p, plane).0);
        j.fixed_view_mut::<3, 6>(3 * b, 0).copy_from(&planar_jacobian(pose, p, plane));
    }
    (r, j)
}

pub fn edge_residual_jacobian(pose: &Pose, p: &Vector3<f64>, line: &LineModel, noise: &NoiseModel) -> ResidualBlock {
    let planes = edge_planes(line, &pose.transform_point(p));
    let (r, j) = stacked_planar(pose, p, &planes);
    ResidualBlock::assemble(6, r, j, noise)
}

pub fn planar_residual_block(pose: &Pose, p: &Vector3<f64>, plane: &PlaneModel, noise: &NoiseModel) -> ResidualBlock {
    let mut r = Vector6::zeros();
    let mut j = Matrix6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&planar_residual(pose, p, plane).0);
    j.fixed_view_mut::<3, 6>(0, 0).copy_from(&planar_jacobian(pose, p, plane));
    ResidualBlock::assemble(3, r, j, noise)
}

/// Residual block of sensor-frame point `p` against `model` at `pose`.
pub fn linearize(pose: &Pose, p: &Vector3<f64>, model: &GeometricModel, noise: &NoiseModel) -> ResidualBlock {
    match model {
        GeometricModel::Plane(plane) => planar_residual_block(pose, p, plane, noise),
        GeometricModel::Line(line) => edge_residual_jacobian(pose, p, line, noise),
    }
}

/// `ρ′(‖r‖²_W)·W⁻¹`, one 3×3 block shared by every 3-row group of `r`.
pub fn robust_reweight(residual: &[f64], noise: &NoiseModel) -> Matrix3<f64> {
    noise.information() * noise.loss.weight(noise.whitened_sq(residual))
}

/// `Jᵀ Σ⁻¹ J`, symmetrized.
pub fn info_contribution<const R: usize>(j: &SMatrix<f64, R, 6>, sigma_inv: &SMatrix<f64, R, R>) -> Matrix6<f64> {
    let info = j.transpose() * sigma_inv * j;
    (info + info.transpose()) * 0.5
}
