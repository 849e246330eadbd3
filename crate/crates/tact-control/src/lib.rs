//! Model-based lower layer of the controller: LIPM biped balance (ZMP preview
//! control, DCM feedback, damping control), kinematic retargeting from
//! operator trackers to robot arm targets, and velocity-level QP inverse
//! kinematics for the planar arms.

pub mod ik;
pub mod lipm;
pub mod qp;
pub mod retarget;

pub use ik::{ArmModel, IkConfig, IkError};
pub use lipm::{
    DampingConfig, DcmFeedbackConfig, FootstepPlan, LipmError, LipmParams, LipmState,
    PreviewGains, PreviewTracker, ZmpReference,
};
pub use qp::{QpError, QpProblem, QpSolution};
pub use retarget::{CalibrationResult, LagFilterState, RetargetError, RobotArmGeometry};
