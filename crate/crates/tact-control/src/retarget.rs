//! Kinematic retargeting from operator trackers to robot arm targets.
//!
//! The operator calibrates by holding three straight-arm reference postures;
//! the elbow-wrist line of each posture passes through the shoulder, so the
//! least-squares intersection of the lines recovers the shoulder origin and
//! the segment lengths follow. At runtime, waist-relative tracker poses are
//! decomposed along the arm chain, scaled per segment, mirrored if requested,
//! smoothed by a first-order lag, and optionally shifted by a tactile
//! admittance offset.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tact_core::types::{ArmSide, ArmTarget, ArmTargets, TactileFrame, TrackerSample, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum RetargetError {
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("calibration residual {0} m exceeds tolerance")]
    CalibrationResidualTooLarge(f64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

/// Robot-side arm geometry used as the scaling reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotArmGeometry {
    /// Left shoulder origin in the robot waist frame; the right one mirrors
    /// the lateral coordinate.
    pub left_shoulder: Vec2,
    pub upper_len: f64,
    /// Forearm length as seen by retargeting (forearm plus hand segment).
    pub fore_len: f64,
}

impl RobotArmGeometry {
    pub fn shoulder(&self, side: ArmSide) -> Vec2 {
        match side {
            ArmSide::Left => self.left_shoulder,
            ArmSide::Right => Vec2::new(-self.left_shoulder.x, self.left_shoulder.y),
        }
    }
}

/// Calibration of one operator arm, in the operator waist frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmCalibration {
    pub shoulder: Vec2,
    pub upper_len: f64,
    pub fore_len: f64,
    pub scale_upper: f64,
    pub scale_fore: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub left: ArmCalibration,
    pub right: ArmCalibration,
}

impl CalibrationResult {
    pub fn arm(&self, side: ArmSide) -> &ArmCalibration {
        match side {
            ArmSide::Left => &self.left,
            ArmSide::Right => &self.right,
        }
    }

    /// Calibration as seen through a lateral flip: arms swapped, lateral
    /// shoulder coordinates negated.
    pub fn mirrored(&self) -> CalibrationResult {
        let flip = |a: &ArmCalibration| ArmCalibration {
            shoulder: Vec2::new(-a.shoulder.x, a.shoulder.y),
            ..*a
        };
        CalibrationResult {
            left: flip(&self.right),
            right: flip(&self.left),
        }
    }
}

const MIN_LINE_ANGLE_RAD: f64 = 10.0 * std::f64::consts::PI / 180.0;
const MAX_RESIDUAL_M: f64 = 0.02;

fn calibrate_arm(
    postures: &[&TrackerSample; 3],
    side: ArmSide,
    robot: &RobotArmGeometry,
) -> Result<ArmCalibration, RetargetError> {
    // Waist-relative elbow positions and unit elbow->wrist directions.
    let mut anchors = [Vec2::zeros(); 3];
    let mut dirs = [Vec2::zeros(); 3];
    for (k, s) in postures.iter().enumerate() {
        let elbow = s.elbow(side) - s.waist;
        let wrist = s.wrist(side) - s.waist;
        let d = wrist - elbow;
        let len = d.norm();
        if len < 1e-9 {
            return Err(RetargetError::DegenerateCalibration(format!(
                "posture {k}: wrist coincides with elbow"
            )));
        }
        anchors[k] = elbow;
        dirs[k] = d / len;
    }
    let min_sin = MIN_LINE_ANGLE_RAD.sin();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let cross = (dirs[i].x * dirs[j].y - dirs[i].y * dirs[j].x).abs();
            if cross < min_sin {
                return Err(RetargetError::DegenerateCalibration(format!(
                    "postures {i} and {j} are near-parallel"
                )));
            }
        }
    }

    // Least-squares intersection: minimize sum |(I - u u')(s - a)|^2.
    let mut m = Matrix2::zeros();
    let mut rhs = Vec2::zeros();
    for k in 0..3 {
        let u = dirs[k];
        let proj = Matrix2::identity() - u * u.transpose();
        m += proj;
        rhs += proj * anchors[k];
    }
    let shoulder = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| RetargetError::DegenerateCalibration("singular normal equations".into()))?;

    let mut sq_sum = 0.0;
    for k in 0..3 {
        let u = dirs[k];
        let d = shoulder - anchors[k];
        let perp = d - u * d.dot(&u);
        sq_sum += perp.norm_squared();
    }
    let residual = (sq_sum / 3.0).sqrt();
    if residual > MAX_RESIDUAL_M {
        return Err(RetargetError::CalibrationResidualTooLarge(residual));
    }

    let upper_len = postures
        .iter()
        .map(|s| (s.elbow(side) - s.waist - shoulder).norm())
        .sum::<f64>()
        / 3.0;
    let fore_len = postures
        .iter()
        .map(|s| (s.wrist(side) - s.elbow(side)).norm())
        .sum::<f64>()
        / 3.0;
    if upper_len < 1e-6 || fore_len < 1e-6 {
        return Err(RetargetError::DegenerateCalibration(
            "zero segment length".into(),
        ));
    }
    Ok(ArmCalibration {
        shoulder,
        upper_len,
        fore_len,
        scale_upper: robot.upper_len / upper_len,
        scale_fore: robot.fore_len / fore_len,
        residual,
    })
}

/// Three-posture calibration of both arms.
pub fn calibrate(
    forward: &TrackerSample,
    sideways: &TrackerSample,
    upward: &TrackerSample,
    robot: &RobotArmGeometry,
) -> Result<CalibrationResult, RetargetError> {
    let postures = [forward, sideways, upward];
    Ok(CalibrationResult {
        left: calibrate_arm(&postures, ArmSide::Left, robot)?,
        right: calibrate_arm(&postures, ArmSide::Right, robot)?,
    })
}

/// Lateral flip of a tracker sample: x coordinates negated relative to the
/// waist, arms and triggers swapped. An involution.
pub fn mirror_sample(s: &TrackerSample) -> TrackerSample {
    let flip = |p: Vec2, waist: Vec2| Vec2::new(waist.x - (p.x - waist.x), p.y);
    TrackerSample {
        waist: s.waist,
        left_elbow: flip(s.right_elbow, s.waist),
        left_wrist: flip(s.right_wrist, s.waist),
        right_elbow: flip(s.left_elbow, s.waist),
        right_wrist: flip(s.left_wrist, s.waist),
        left_trigger: s.right_trigger,
        right_trigger: s.left_trigger,
    }
}

/// Map a tracker sample to robot arm targets in the robot waist frame:
/// chain decomposition, per-segment scaling, optional left-right inversion.
pub fn retarget_pose(
    sample: &TrackerSample,
    calib: &CalibrationResult,
    robot: &RobotArmGeometry,
    mirror: bool,
) -> ArmTargets {
    let (sample, calib) = if mirror {
        (mirror_sample(sample), calib.mirrored())
    } else {
        (*sample, *calib)
    };
    let map_arm = |side: ArmSide| -> ArmTarget {
        let cal = calib.arm(side);
        let elbow_h = sample.elbow(side) - sample.waist;
        let wrist_h = sample.wrist(side) - sample.waist;
        let upper = elbow_h - cal.shoulder;
        let fore = wrist_h - elbow_h;
        let shoulder_r = robot.shoulder(side);
        let elbow_r = shoulder_r + upper * cal.scale_upper;
        let wrist_r = elbow_r + fore * cal.scale_fore;
        ArmTarget {
            elbow: elbow_r,
            wrist: wrist_r,
            gripper: sample.trigger(side).clamp(0.0, 1.0),
        }
    };
    ArmTargets {
        left: map_arm(ArmSide::Left),
        right: map_arm(ArmSide::Right),
    }
}

/// Inverse of [`retarget_pose`]: express robot arm targets as an operator
/// tracker sample. Used by the scripted demonstrators, which plan in robot
/// space but must command through the same retargeting pipeline an operator
/// would.
pub fn inverse_retarget(
    targets: &ArmTargets,
    calib: &CalibrationResult,
    robot: &RobotArmGeometry,
    mirror: bool,
    waist: Vec2,
) -> TrackerSample {
    let cal = if mirror { calib.mirrored() } else { *calib };
    let mut elbows = [Vec2::zeros(); 2];
    let mut wrists = [Vec2::zeros(); 2];
    let mut triggers = [0.0f64; 2];
    for (k, side) in ArmSide::BOTH.iter().enumerate() {
        let a = cal.arm(*side);
        let t = targets.arm(*side);
        let upper_r = t.elbow - robot.shoulder(*side);
        let fore_r = t.wrist - t.elbow;
        let elbow_h = a.shoulder + upper_r / a.scale_upper;
        let wrist_h = elbow_h + fore_r / a.scale_fore;
        elbows[k] = waist + elbow_h;
        wrists[k] = waist + wrist_h;
        triggers[k] = t.gripper;
    }
    let s = TrackerSample {
        waist,
        left_elbow: elbows[0],
        left_wrist: wrists[0],
        right_elbow: elbows[1],
        right_wrist: wrists[1],
        left_trigger: triggers[0],
        right_trigger: triggers[1],
    };
    if mirror {
        mirror_sample(&s)
    } else {
        s
    }
}

/// First-order lag on the arm targets: `x' = goal + (x - goal) exp(-dt/T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagFilterState {
    pub targets: ArmTargets,
    pub time_constant: f64,
}

impl LagFilterState {
    pub fn new(initial: ArmTargets, time_constant: f64) -> Result<LagFilterState, RetargetError> {
        if !(time_constant.is_finite() && time_constant > 0.0) {
            return Err(RetargetError::InvalidParams(
                "lag time constant must be > 0".into(),
            ));
        }
        Ok(LagFilterState {
            targets: initial,
            time_constant,
        })
    }

    pub fn step(&mut self, goal: &ArmTargets, dt: f64) -> ArmTargets {
        debug_assert!(dt > 0.0);
        let alpha = (-dt / self.time_constant).exp();
        let lerp = |x: f64, g: f64| g + (x - g) * alpha;
        let lerp2 = |x: Vec2, g: Vec2| Vec2::new(lerp(x.x, g.x), lerp(x.y, g.y));
        let mix = |x: &ArmTarget, g: &ArmTarget| ArmTarget {
            elbow: lerp2(x.elbow, g.elbow),
            wrist: lerp2(x.wrist, g.wrist),
            gripper: lerp(x.gripper, g.gripper),
        };
        self.targets = ArmTargets {
            left: mix(&self.targets.left, &goal.left),
            right: mix(&self.targets.right, &goal.right),
        };
        self.targets
    }
}

/// Which arm a tactile cell shifts, and the direction a positive intensity
/// pushes the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmittanceCell {
    pub side: ArmSide,
    pub normal: Vec2,
}

/// Shift each arm's targets along the per-cell normals in proportion to the
/// measured touch intensity: `offset = gain * sum(touch_i * normal_i)`,
/// the offset norm saturated at `cap`.
pub fn admittance_offset(
    targets: &ArmTargets,
    frame: &TactileFrame,
    cells: &[AdmittanceCell],
    gain: f64,
    cap: f64,
) -> ArmTargets {
    debug_assert!(gain >= 0.0);
    debug_assert_eq!(cells.len(), frame.touch.len());
    let mut out = *targets;
    for side in ArmSide::BOTH {
        let mut offset = Vec2::zeros();
        for (cell, &touch) in cells.iter().zip(frame.touch.iter()) {
            if cell.side == side {
                offset += touch * cell.normal;
            }
        }
        offset *= gain;
        let norm = offset.norm();
        if norm > cap && norm > 0.0 {
            offset *= cap / norm;
        }
        let t = out.arm_mut(side);
        t.elbow += offset;
        t.wrist += offset;
    }
    out
}
