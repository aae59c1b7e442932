//! IRLS Gauss-Newton pose refinement with Marquardt damping.
//!
//! Residuals and robust weights are recomputed at the start of every
//! iteration. A step is accepted only if it does not raise the robust cost;
//! rejected or ill-conditioned steps raise the damping tenfold.

use nalgebra::{Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::association::GeometricModel;
use crate::geometry::{Pose, TangentDelta};
use crate::residuals::{linearize, NoiseModel};

const DAMPING_START: f64 = 1e-4;
const DAMPING_CEILING: f64 = 1e8;
const STEP_CONDITION_LIMIT: f64 = 1e12;
pub const NEAR_SINGULAR_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Sensor-frame point.
    pub point: Vector3<f64>,
    pub model: GeometricModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step_tol: f64,
    pub cost_tol: f64,
    pub lm_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            step_tol: 1e-8,
            cost_tol: 1e-9,
            lm_damping: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iters == 0 {
            return Err("solver.max_iters must be at least 1".into());
        }
        if !(self.step_tol > 0.0 && self.cost_tol > 0.0) {
            return Err("solver tolerances must be positive".into());
        }
        if !(self.lm_damping >= 0.0) {
            return Err("solver.lm_damping must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("no correspondences to solve with")]
    NoCorrespondences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub pose: Pose,
    /// `Ξ = Λ⁻¹` at the final pose, regularized when near-singular.
    pub covariance: Matrix6<f64>,
    pub information: Matrix6<f64>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Cost at the initial pose followed by the cost after each accepted step.
    pub per_iteration_costs: Vec<f64>,
    pub condition_number: f64,
    pub near_singular: bool,
    /// Least-constrained tangent direction `[δt; δθ]` when near-singular.
    pub null_direction: Option<Vector6<f64>>,
    pub final_damping: f64,
}

/// `Σ ρ(‖r‖²_W)` with residuals relinearized at `pose`.
pub fn evaluate_cost(pose: &Pose, correspondences: &[Correspondence], noise: &NoiseModel) -> f64 {
    correspondences
        .iter()
        .map(|c| noise.loss.rho(linearize(pose, &c.point, &c.model, noise).whitened_sq))
        .sum()
}

/// Normal equations `(H, g)` with `H = Σ JᵀΣ⁻¹J`, `g = Σ JᵀΣ⁻¹r`.
pub fn normal_equations(
    pose: &Pose,
    correspondences: &[Correspondence],
    noise: &NoiseModel,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in correspondences {
        let block = linearize(pose, &c.point, &c.model, noise);
        h += block.info;
        g += block.gradient();
    }
    (h, g)
}

/// Undamped step `−H⁻¹g`, `None` if `H` is not positive definite.
pub fn gauss_newton_step(pose: &Pose, correspondences: &[Correspondence], noise: &NoiseModel) -> Option<Vector6<f64>> {
    let (h, g) = normal_equations(pose, correspondences, noise);
    h.cholesky().map(|l| -l.solve(&g))
}

fn condition(m: &Matrix6<f64>) -> (f64, SymmetricEigen<f64, nalgebra::U6>) {
    let eig = SymmetricEigen::new(*m);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
    (cond, eig)
}

/// Damped solve; `None` when the damped system is still ill-conditioned.
fn damped_step(h: &Matrix6<f64>, g: &Vector6<f64>, mu: f64) -> Option<Vector6<f64>> {
    let floor = 1e-9 * h.diagonal().max().max(f64::MIN_POSITIVE);
    let mut a = *h;
    if mu > 0.0 {
        for i in 0..6 {
            a[(i, i)] += mu * h[(i, i)].max(floor);
        }
    }
    let (cond, _) = condition(&a);
    if !(cond <= STEP_CONDITION_LIMIT) {
        return None;
    }
    a.cholesky().map(|l| -l.solve(g))
}

pub fn solve_pose(
    initial: &Pose,
    correspondences: &[Correspondence],
    noise: &NoiseModel,
    config: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    if correspondences.is_empty() {
        return Err(SolverError::NoCorrespondences);
    }
    let mut pose = *initial;
    let mut cost = evaluate_cost(&pose, correspondences, noise);
    let initial_cost = cost;
    let mut costs = vec![cost];
    let mut mu = config.lm_damping;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < config.max_iters {
        iterations += 1;
        let (h, g) = normal_equations(&pose, correspondences, noise);
        loop {
            let step = damped_step(&h, &g, mu);
            let Some(step) = step else {
                mu = (mu * 10.0).max(DAMPING_START);
                if mu > DAMPING_CEILING {
                    break 'outer;
                }
                continue;
            };
            if step.norm() < config.step_tol {
                let candidate = pose.retract(&TangentDelta::from_vector(&step));
                let new_cost = evaluate_cost(&candidate, correspondences, noise);
                if new_cost <= cost {
                    pose = candidate;
                    cost = new_cost;
                }
                costs.push(cost);
                converged = true;
                break 'outer;
            }
            let candidate = pose.retract(&TangentDelta::from_vector(&step));
            let new_cost = evaluate_cost(&candidate, correspondences, noise);
            if new_cost <= cost {
                let decrease = cost - new_cost;
                pose = candidate;
                cost = new_cost;
                costs.push(cost);
                if mu > config.lm_damping {
                    mu = if mu / 10.0 < DAMPING_START { config.lm_damping } else { mu / 10.0 };
                }
                if decrease <= config.cost_tol * cost.max(f64::MIN_POSITIVE) || cost == 0.0 {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            mu = (mu * 10.0).max(DAMPING_START);
            if mu > DAMPING_CEILING {
                // No descent left at any damping: a stationary point up to rounding.
                converged = step.norm() < config.step_tol.sqrt();
                break 'outer;
            }
        }
    }

    let (information, _) = normal_equations(&pose, correspondences, noise);
    let (condition_number, eig) = condition(&information);
    let near_singular = !(condition_number <= NEAR_SINGULAR_CONDITION);
    let (covariance, null_direction) = if near_singular {
        let max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let reg = information + Matrix6::identity() * (max / NEAR_SINGULAR_CONDITION);
        let imin = eig.eigenvalues.imin();
        (
            reg.cholesky().map_or(Matrix6::identity() / f64::MIN_POSITIVE.sqrt(), |l| l.inverse()),
            Some(eig.eigenvectors.column(imin).into_owned()),
        )
    } else {
        (information.cholesky().expect("well conditioned").inverse(), None)
    };
    let covariance = (covariance + covariance.transpose()) * 0.5;

    Ok(SolveResult {
        pose,
        covariance,
        information,
        iterations,
        initial_cost,
        final_cost: cost,
        converged,
        per_iteration_costs: costs,
        condition_number,
        near_singular,
        null_direction,
        final_damping: mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{LineModel, PlaneModel};
    use crate::residuals::RobustLoss;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(n: [f64; 3], d: f64) -> GeometricModel {
        let n = Vector3::from(n).normalize();
        GeometricModel::Plane(PlaneModel { normal: n, offset: d })
    }

    /// Points on the six faces of a box around the origin, as seen from `truth`.
    fn box_correspondences(truth: &Pose, rng: &mut ChaCha8Rng, per_face: usize) -> Vec<Correspondence> {
        let faces = [
            ([1.0, 0.0, 0.0], -4.0),
            ([-1.0, 0.0, 0.0], -5.0),
            ([0.0, 1.0, 0.0], -3.0),
            ([0.0, -1.0, 0.0], -6.0),
            ([0.0, 0.0, 1.0], 1.5),
            ([0.0, 0.0, -1.0], -2.5),
            ([1.0, 1.0, 0.0], -7.0),
        ];
        let inv = truth.inverse();
        let mut out = Vec::new();
        for (n, d) in faces {
            let GeometricModel::Plane(pl) = plane(n, d) else { unreachable!() };
            for _ in 0..per_face {
                let v = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let world = v - pl.normal * pl.signed_distance(&v);
                out.push(Correspondence {
                    point: inv.transform_point(&world),
                    model: GeometricModel::Plane(pl),
                });
            }
        }
        out
    }

    fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
        let d = a.inverse().compose(b);
        (d.translation.norm(), d.rotation_angle())
    }

    #[test]
    fn cost_examples() {
        let none = NoiseModel::isotropic(1.0, RobustLoss::None).unwrap();
        let c = Correspondence {
            point: Vector3::new(0.0, 0.0, 2.0),
            model: plane([0.0, 0.0, 1.0], -1.0),
        };
        assert_eq!(evaluate_cost(&Pose::identity(), &[c], &none), 1.0);
        let on = Correspondence {
            point: Vector3::new(0.0, 0.0, 1.0),
            ..c
        };
        assert_eq!(evaluate_cost(&Pose::identity(), &[on, on], &none), 0.0);

        let delta = 0.25;
        let huber = NoiseModel::isotropic(1.0, RobustLoss::Huber { delta }).unwrap();
        // a = 2δ gives ‖r‖² = 4δ².
        let h = Correspondence {
            point: Vector3::new(0.0, 0.0, 1.0 + 2.0 * delta),
            ..c
        };
        assert!((evaluate_cost(&Pose::identity(), &[h], &huber) - 3.0 * delta * delta).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Pose::from_parts(Vector3::new(0.4, -0.3, 0.1), Vector3::new(0.02, -0.01, 0.3));
        let corr = box_correspondences(&truth, &mut rng, 20);
        let r = solve_pose(&truth, &corr, &NoiseModel::default(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        let (dt, dr) = pose_error(&r.pose, &truth);
        assert!(dt < 1e-9 && dr < 1e-9);
        assert!(!r.near_singular);
    }

    #[test]
    fn recovers_from_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let truth = Pose::from_parts(
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
                Vector3::new(0.0, 0.0, rng.random_range(-3.0..3.0)),
            );
            let corr = box_correspondences(&truth, &mut rng, 30);
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let init = truth.retract(&TangentDelta::new(dir * 0.2, axis * 5f64.to_radians()));
            let r = solve_pose(&init, &corr, &NoiseModel::default(), &SolverConfig::default()).unwrap();
            let (dt, dr) = pose_error(&r.pose, &truth);
            assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr} after {} iterations", r.iterations);
            assert!(r.iterations <= 10);
            assert!(r.per_iteration_costs.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn edge_constraints_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = Pose::from_parts(Vector3::new(0.1, 0.2, -0.1), Vector3::new(0.01, 0.02, 0.1));
        let mut corr = box_correspondences(&truth, &mut rng, 10);
        let inv = truth.inverse();
        for (p0, d) in [([2.0, 0.0, 0.0], [0.0, 0.0, 1.0]), ([0.0, 3.0, 0.0], [1.0, 0.0, 0.0]), ([0.0, 0.0, 2.0], [0.0, 1.0, 0.0])] {
            let line = LineModel {
                point_on_line: Vector3::from(p0),
                direction: Vector3::from(d),
            };
            for k in 0..5 {
                let world = line.point_on_line + line.direction * (k as f64 - 2.0);
                corr.push(Correspondence {
                    point: inv.transform_point(&world),
                    model: GeometricModel::Line(line),
                });
            }
        }
        let init = truth.retract(&TangentDelta::new(Vector3::new(0.1, -0.1, 0.05), Vector3::new(0.02, 0.0, -0.03)));
        let r = solve_pose(&init, &corr, &NoiseModel::default(), &SolverConfig::default()).unwrap();
        let (dt, dr) = pose_error(&r.pose, &truth);
        assert!(dt < 1e-6 && dr < 1e-6);
    }

    #[test]
    fn single_step_is_weighted_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = Pose::identity();
        let corr = box_correspondences(&truth, &mut rng, 8);
        let noise = NoiseModel::isotropic(0.05, RobustLoss::None).unwrap();
        let at = Pose::from_parts(Vector3::new(0.05, -0.02, 0.01), Vector3::new(0.01, 0.0, 0.02));
        // Stack whitened rows and solve by SVD.
        let rows = corr.len() * 3;
        let mut a = DMatrix::zeros(rows, 6);
        let mut b = DVector::zeros(rows);
        let s = 1.0 / 0.05;
        for (k, c) in corr.iter().enumerate() {
            let block = linearize(&at, &c.point, &c.model, &noise);
            for i in 0..3 {
                for j in 0..6 {
                    a[(3 * k + i, j)] = s * block.jacobian[(i, j)];
                }
                b[3 * k + i] = -s * block.residual[i];
            }
        }
        let expected = a.svd(true, true).solve(&b, 1e-14).unwrap();
        let step = gauss_newton_step(&at, &corr, &noise).unwrap();
        for j in 0..6 {
            assert!((step[j] - expected[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn corridor_is_flagged_along_axis() {
        // Two walls, floor and ceiling, all parallel to y.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let faces = [([1.0, 0.0, 0.0], -1.0), ([-1.0, 0.0, 0.0], -1.0), ([0.0, 0.0, 1.0], 0.0), ([0.0, 0.0, -1.0], 3.0)];
        let mut corr = Vec::new();
        for (n, d) in faces {
            let GeometricModel::Plane(pl) = plane(n, d) else { unreachable!() };
            for _ in 0..30 {
                let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..3.0));
                corr.push(Correspondence {
                    point: v - pl.normal * pl.signed_distance(&v),
                    model: GeometricModel::Plane(pl),
                });
            }
        }
        let init = Pose::from_parts(Vector3::new(0.05, 0.3, 0.02), Vector3::zeros());
        let r = solve_pose(&init, &corr, &NoiseModel::default(), &SolverConfig::default()).unwrap();
        assert!(r.near_singular);
        let null = r.null_direction.unwrap();
        let t = Vector3::new(null[0], null[1], null[2]);
        let angle = (t.y.abs() / null.norm()).min(1.0).acos().to_degrees();
        assert!(angle < 5.0, "{null}");
        assert!((r.covariance - r.covariance.transpose()).norm() < 1e-9 * r.covariance.norm());
        assert!(r.pose.translation.x.abs() < 1e-6);
    }

    #[test]
    fn covariance_shrinks_with_more_features() {
        let mut wins = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut prev = f64::INFINITY;
            let mut monotone = true;
            for per_face in [2usize, 8, 30] {
                let corr = box_correspondences(&Pose::identity(), &mut rng, per_face);
                let r = solve_pose(&Pose::identity(), &corr, &NoiseModel::default(), &SolverConfig::default()).unwrap();
                let max = SymmetricEigen::new(r.covariance).eigenvalues.max();
                monotone &= max < prev;
                prev = max;
            }
            wins += monotone as usize;
        }
        assert!(wins >= 18, "{wins}/20");
    }

    #[test]
    fn empty_and_damped() {
        assert_eq!(
            solve_pose(&Pose::identity(), &[], &NoiseModel::default(), &SolverConfig::default()),
            Err(SolverError::NoCorrespondences)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = Pose::from_parts(Vector3::new(0.2, 0.1, 0.0), Vector3::new(0.0, 0.0, 0.05));
        let corr = box_correspondences(&truth, &mut rng, 20);
        let config = SolverConfig {
            lm_damping: 1e-3,
            max_iters: 30,
            ..Default::default()
        };
        let r = solve_pose(&Pose::identity(), &corr, &NoiseModel::default(), &config).unwrap();
        let (dt, _) = pose_error(&r.pose, &truth);
        assert!(dt < 1e-6);
        assert!(r.per_iteration_costs.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn costs_never_increase(
            seed in any::<u64>(),
            dt in prop::array::uniform3(-0.5..0.5f64),
            dr in prop::array::uniform3(-0.2..0.2f64),
            jitter in 0.0..0.05f64,
            huber in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = Pose::identity();
            let mut corr = box_correspondences(&truth, &mut rng, 8);
            for c in &mut corr {
                c.point += Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * jitter;
            }
            let loss = if huber { RobustLoss::Huber { delta: 0.1 } } else { RobustLoss::None };
            let noise = NoiseModel::isotropic(0.02, loss).unwrap();
            let init = truth.retract(&TangentDelta::new(Vector3::from(dt), Vector3::from(dr)));
            let r = solve_pose(&init, &corr, &noise, &SolverConfig::default()).unwrap();
            prop_assert!(r.per_iteration_costs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(r.final_cost <= r.initial_cost);
            prop_assert_eq!(r.covariance, r.covariance.transpose());
        }
    }
}
