//! Value types shared across the control stack, the simulator and the policy.
//!
//! The world is the robot's frontal plane: `x` is lateral (robot's left is
//! positive), `z` is up. All positions are in meters.

use serde::{Deserialize, Serialize};

pub type Vec2 = nalgebra::Vector2<f64>;

/// Which arm of the robot (or of the operator) a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmSide {
    Left,
    Right,
}

impl ArmSide {
    pub const BOTH: [ArmSide; 2] = [ArmSide::Left, ArmSide::Right];

    pub fn opposite(self) -> ArmSide {
        match self {
            ArmSide::Left => ArmSide::Right,
            ArmSide::Right => ArmSide::Left,
        }
    }
}

/// The manipulation task being demonstrated or evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    HoldUp,
    Reorient,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::HoldUp => write!(f, "hold_up"),
            TaskKind::Reorient => write!(f, "reorient"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hold_up" | "holdup" => Ok(TaskKind::HoldUp),
            "reorient" => Ok(TaskKind::Reorient),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// One measurement of the operator's upper body in the world frame:
/// waist position, elbow and wrist positions per arm, and the two
/// gripper triggers in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerSample {
    pub waist: Vec2,
    pub left_elbow: Vec2,
    pub left_wrist: Vec2,
    pub right_elbow: Vec2,
    pub right_wrist: Vec2,
    pub left_trigger: f64,
    pub right_trigger: f64,
}

impl TrackerSample {
    pub fn elbow(&self, side: ArmSide) -> Vec2 {
        match side {
            ArmSide::Left => self.left_elbow,
            ArmSide::Right => self.right_elbow,
        }
    }

    pub fn wrist(&self, side: ArmSide) -> Vec2 {
        match side {
            ArmSide::Left => self.left_wrist,
            ArmSide::Right => self.right_wrist,
        }
    }

    pub fn trigger(&self, side: ArmSide) -> f64 {
        match side {
            ArmSide::Left => self.left_trigger,
            ArmSide::Right => self.right_trigger,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.waist,
            self.left_elbow,
            self.left_wrist,
            self.right_elbow,
            self.right_wrist,
        ]
        .iter()
        .all(|v| v.x.is_finite() && v.y.is_finite())
            && self.left_trigger.is_finite()
            && self.right_trigger.is_finite()
    }

    /// Flat numeric view used as the policy's action vector:
    /// `[le_x, le_y, lw_x, lw_y, lt, re_x, re_y, rw_x, rw_y, rt]`,
    /// all relative to the waist.
    pub fn to_action_vec(&self) -> Vec<f64> {
        let rel = |p: Vec2| p - self.waist;
        let le = rel(self.left_elbow);
        let lw = rel(self.left_wrist);
        let re = rel(self.right_elbow);
        let rw = rel(self.right_wrist);
        vec![
            le.x,
            le.y,
            lw.x,
            lw.y,
            self.left_trigger,
            re.x,
            re.y,
            rw.x,
            rw.y,
            self.right_trigger,
        ]
    }

    /// Inverse of [`to_action_vec`] for a given waist position.
    pub fn from_action_vec(a: &[f64], waist: Vec2) -> Option<TrackerSample> {
        if a.len() != ACTION_DIM {
            return None;
        }
        Some(TrackerSample {
            waist,
            left_elbow: waist + Vec2::new(a[0], a[1]),
            left_wrist: waist + Vec2::new(a[2], a[3]),
            left_trigger: a[4],
            right_elbow: waist + Vec2::new(a[5], a[6]),
            right_wrist: waist + Vec2::new(a[7], a[8]),
            right_trigger: a[9],
        })
    }
}

/// Dimension of the flat action vector produced by [`TrackerSample::to_action_vec`].
pub const ACTION_DIM: usize = 10;

/// Targets for one robot arm in the robot waist frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmTarget {
    pub elbow: Vec2,
    pub wrist: Vec2,
    pub gripper: f64,
}

/// Targets for both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmTargets {
    pub left: ArmTarget,
    pub right: ArmTarget,
}

impl ArmTargets {
    pub fn arm(&self, side: ArmSide) -> &ArmTarget {
        match side {
            ArmSide::Left => &self.left,
            ArmSide::Right => &self.right,
        }
    }

    pub fn arm_mut(&mut self, side: ArmSide) -> &mut ArmTarget {
        match side {
            ArmSide::Left => &mut self.left,
            ArmSide::Right => &mut self.right,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.left, self.right].iter().all(|a| {
            a.elbow.x.is_finite()
                && a.elbow.y.is_finite()
                && a.wrist.x.is_finite()
                && a.wrist.y.is_finite()
                && a.gripper.is_finite()
        })
    }
}

/// Per-cell touch and proximity intensities, each in `[0, 1]`.
///
/// The flattened observation is all touch values followed by all proximity
/// values, giving `2 * n_cells` elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    pub touch: Vec<f64>,
    pub proximity: Vec<f64>,
}

impl TactileFrame {
    pub fn zeros(n_cells: usize) -> TactileFrame {
        TactileFrame {
            touch: vec![0.0; n_cells],
            proximity: vec![0.0; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.touch.len()
    }

    /// Flatten order is fixed: `[touch_0..touch_{N-1}, prox_0..prox_{N-1}]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.touch.len());
        out.extend_from_slice(&self.touch);
        out.extend_from_slice(&self.proximity);
        out
    }

    pub fn validate(&self) -> Result<(), crate::CoreError> {
        if self.touch.len() != self.proximity.len() {
            return Err(crate::CoreError::schema(format!(
                "tactile channel lengths differ: {} touch vs {} proximity",
                self.touch.len(),
                self.proximity.len()
            )));
        }
        for v in self.touch.iter().chain(self.proximity.iter()) {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(crate::CoreError::schema(format!(
                    "tactile intensity {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// An 8-bit RGB image, row-major from the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl CameraImage {
    pub fn new(width: usize, height: usize) -> CameraImage {
        CameraImage {
            width,
            height,
            rgb: vec![0; 3 * width * height],
        }
    }

    pub fn validate(&self) -> Result<(), crate::CoreError> {
        if self.rgb.len() != 3 * self.width * self.height {
            return Err(crate::CoreError::schema(format!(
                "image byte length {} != 3*{}*{}",
                self.rgb.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// Normalized channel-first float view in `[0, 1]`, shape `[3, H, W]`.
    pub fn to_chw_f64(&self) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.width * self.height];
        let plane = self.width * self.height;
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                let i = y * self.width + x;
                out[i] = p[0] as f64 / 255.0;
                out[plane + i] = p[1] as f64 / 255.0;
                out[2 * plane + i] = p[2] as f64 / 255.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_vec_round_trips() {
        let s = TrackerSample {
            waist: Vec2::new(0.1, 1.0),
            left_elbow: Vec2::new(0.3, 1.2),
            left_wrist: Vec2::new(0.5, 1.1),
            right_elbow: Vec2::new(-0.3, 1.2),
            right_wrist: Vec2::new(-0.5, 1.1),
            left_trigger: 0.2,
            right_trigger: 0.9,
        };
        let a = s.to_action_vec();
        assert_eq!(a.len(), ACTION_DIM);
        let back = TrackerSample::from_action_vec(&a, s.waist).unwrap();
        for (orig, rt) in [
            (s.left_elbow, back.left_elbow),
            (s.left_wrist, back.left_wrist),
            (s.right_elbow, back.right_elbow),
            (s.right_wrist, back.right_wrist),
        ] {
            assert!((orig - rt).norm() < 1e-15);
        }
        assert_eq!(s.left_trigger, back.left_trigger);
        assert_eq!(s.right_trigger, back.right_trigger);
    }

    #[test]
    fn tactile_flatten_is_touch_then_proximity() {
        let f = TactileFrame {
            touch: vec![0.1, 0.2],
            proximity: vec![0.3, 0.4],
        };
        assert_eq!(f.flatten(), vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn tactile_validate_rejects_out_of_range() {
        let f = TactileFrame {
            touch: vec![1.5],
            proximity: vec![0.0],
        };
        assert!(f.validate().is_err());
    }

    #[test]
    fn image_chw_layout() {
        let mut img = CameraImage::new(2, 1);
        img.set_pixel(0, 0, [255, 0, 0]);
        img.set_pixel(1, 0, [0, 255, 0]);
        let f = img.to_chw_f64();
        assert_eq!(f, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
