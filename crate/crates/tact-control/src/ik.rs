//! Velocity-level differential IK for the planar 3-link arms.
//!
//! Each arm is shoulder -> elbow -> wrist joint -> tip, with the tip treated
//! as the wrist tracking point. One IK step solves a small box-constrained QP
//! for the joint velocities: weighted least squares on the elbow and wrist
//! position tasks, a damping term, and bounds that keep the integrated joints
//! inside their limits.

use nalgebra::{DMatrix, DVector, Matrix2x3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tact_core::types::{ArmSide, ArmTarget, Vec2};

use crate::qp::{solve_qp, QpError, QpProblem};

#[derive(Debug, Error)]
pub enum IkError {
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Solver(#[from] QpError),
}

/// Kinematic model and limits of one planar arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub side: ArmSide,
    /// Shoulder anchor in the world frame (follows the torso).
    pub shoulder: Vec2,
    /// Direction of the fully extended chain at q = 0, in radians from +x.
    pub base_angle: f64,
    pub link_lengths: [f64; 3],
    pub q: [f64; 3],
    pub q_min: [f64; 3],
    pub q_max: [f64; 3],
    pub qd_max: [f64; 3],
}

/// Joint anchor points of the chain: shoulder, elbow, wrist joint, tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkResult {
    pub shoulder: Vec2,
    pub elbow: Vec2,
    pub wrist_joint: Vec2,
    pub tip: Vec2,
}

impl ArmModel {
    pub fn validate(&self) -> Result<(), IkError> {
        for i in 0..3 {
            if !(self.link_lengths[i] > 0.0) {
                return Err(IkError::InvalidModel(format!("link {i} length")));
            }
            if !(self.q_min[i] < self.q_max[i]) {
                return Err(IkError::InvalidModel(format!("limits of joint {i}")));
            }
            if self.q[i] < self.q_min[i] || self.q[i] > self.q_max[i] {
                return Err(IkError::InvalidModel(format!("joint {i} outside limits")));
            }
            if !(self.qd_max[i] > 0.0) {
                return Err(IkError::InvalidModel(format!("velocity limit {i}")));
            }
        }
        Ok(())
    }

    /// Forward kinematics with cumulative joint angles.
    pub fn fk(&self) -> FkResult {
        let t1 = self.base_angle + self.q[0];
        let t2 = t1 + self.q[1];
        let t3 = t2 + self.q[2];
        let dir = |t: f64| Vec2::new(t.cos(), t.sin());
        let elbow = self.shoulder + self.link_lengths[0] * dir(t1);
        let wrist_joint = elbow + self.link_lengths[1] * dir(t2);
        let tip = wrist_joint + self.link_lengths[2] * dir(t3);
        FkResult {
            shoulder: self.shoulder,
            elbow,
            wrist_joint,
            tip,
        }
    }

    /// Jacobian of a chain point with respect to the joint angles. `anchors`
    /// are the joint positions at or before the point; columns for joints
    /// beyond the point are zero.
    fn point_jacobian(&self, point: Vec2, fk: &FkResult, n_joints: usize) -> Matrix2x3<f64> {
        let anchors = [fk.shoulder, fk.elbow, fk.wrist_joint];
        let mut j = Matrix2x3::zeros();
        for (col, anchor) in anchors.iter().enumerate().take(n_joints) {
            let r = point - anchor;
            j[(0, col)] = -r.y;
            j[(1, col)] = r.x;
        }
        j
    }

    /// Integrate joint velocities over `dt`, clamping exactly to the limits.
    pub fn integrate(&mut self, q_dot: &[f64; 3], dt: f64) {
        for i in 0..3 {
            self.q[i] = (self.q[i] + q_dot[i] * dt).clamp(self.q_min[i], self.q_max[i]);
        }
    }
}

/// Task weights and regularization of the IK problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkConfig {
    pub elbow_weight: f64,
    pub wrist_weight: f64,
    /// Velocity damping lambda.
    pub damping: f64,
    /// Task-space proportional gain (1/s).
    pub task_gain: f64,
}

impl Default for IkConfig {
    fn default() -> IkConfig {
        IkConfig {
            elbow_weight: 0.2,
            wrist_weight: 1.0,
            damping: 1e-4,
            task_gain: 5.0,
        }
    }
}

/// One velocity-level IK step for a single arm. `target` positions are in
/// the same frame as the arm's shoulder anchor.
pub fn ik_step(
    arm: &ArmModel,
    target: &ArmTarget,
    cfg: &IkConfig,
    dt: f64,
) -> Result<[f64; 3], IkError> {
    debug_assert!(dt > 0.0);
    let fk = arm.fk();
    let j_elbow = arm.point_jacobian(fk.elbow, &fk, 1);
    let j_tip = arm.point_jacobian(fk.tip, &fk, 3);

    let e_elbow = (target.elbow - fk.elbow) * cfg.task_gain;
    let e_tip = (target.wrist - fk.tip) * cfg.task_gain;

    // H = sum w J'J + lambda I,  g = -sum w J' (k_p err)
    let mut h = DMatrix::<f64>::zeros(3, 3);
    let mut g = DVector::<f64>::zeros(3);
    for (j, err, w) in [
        (&j_elbow, e_elbow, cfg.elbow_weight),
        (&j_tip, e_tip, cfg.wrist_weight),
    ] {
        for r in 0..3 {
            for c in 0..3 {
                h[(r, c)] += w * (j[(0, r)] * j[(0, c)] + j[(1, r)] * j[(1, c)]);
            }
            g[r] -= w * (j[(0, r)] * err.x + j[(1, r)] * err.y);
        }
    }
    for i in 0..3 {
        h[(i, i)] += cfg.damping;
    }

    let mut lower = DVector::zeros(3);
    let mut upper = DVector::zeros(3);
    for i in 0..3 {
        lower[i] = (-arm.qd_max[i]).max((arm.q_min[i] - arm.q[i]) / dt);
        upper[i] = arm.qd_max[i].min((arm.q_max[i] - arm.q[i]) / dt);
    }

    let sol = solve_qp(&QpProblem::boxed(h, g, lower, upper))?;
    Ok([sol.x[0], sol.x[1], sol.x[2]])
}
