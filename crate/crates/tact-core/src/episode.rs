//! Episode files: one JSON header line, then one JSON record per 10 Hz frame.
//!
//! Floats go through serde_json and therefore serialize as the shortest
//! decimal that round-trips the exact 64-bit value, so write → read → write
//! is byte-identical.

use std::io::{BufRead, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::types::{CameraImage, TactileFrame, TaskKind, Vec2, ACTION_DIM};
use crate::CoreError;

/// Number of arm joints recorded per frame (3 per arm).
pub const JOINT_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub task: TaskKind,
    pub box_size: f64,
    pub box_position: f64,
    pub seed: u64,
    pub config_hash: String,
    pub n_cells: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Control ticks between recorded frames (500 Hz -> 10 Hz gives 50).
    pub frame_period_ticks: u64,
    pub control_dt: f64,
    /// Operator waist position used to reconstruct absolute tracker poses.
    pub operator_waist: Vec2,
}

/// One 10 Hz record: measured joint positions and gripper states, the
/// tactile frame, the camera image, and the operator-frame action that was
/// commanded at this tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub q: Vec<f64>,
    pub grippers: [f64; 2],
    pub tactile: TactileFrame,
    pub image_b64: String,
    pub action: Vec<f64>,
}

impl Frame {
    pub fn decode_image(&self, header: &EpisodeHeader) -> Result<CameraImage, CoreError> {
        let rgb = B64
            .decode(&self.image_b64)
            .map_err(|e| CoreError::schema(format!("bad image payload: {e}")))?;
        let img = CameraImage {
            width: header.image_width,
            height: header.image_height,
            rgb,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn encode_image(img: &CameraImage) -> String {
        B64.encode(&img.rgb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CoreError> {
        let mut line = serde_json::to_string(&self.header)
            .map_err(|e| CoreError::schema(e.to_string()))?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for frame in &self.frames {
            let mut line =
                serde_json::to_string(frame).map_err(|e| CoreError::schema(e.to_string()))?;
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Episode, CoreError> {
        let mut lines = r.lines();
        let head_line = lines
            .next()
            .ok_or_else(|| CoreError::Malformed {
                line: 1,
                msg: "empty file".into(),
            })?
            .map_err(CoreError::Io)?;
        let header: EpisodeHeader =
            serde_json::from_str(&head_line).map_err(|e| CoreError::Malformed {
                line: 1,
                msg: e.to_string(),
            })?;
        let mut frames = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(CoreError::Io)?;
            if line.is_empty() {
                continue;
            }
            let frame: Frame = serde_json::from_str(&line).map_err(|e| CoreError::Malformed {
                line: i + 2,
                msg: e.to_string(),
            })?;
            frames.push(frame);
        }
        let episode = Episode { header, frames };
        episode.validate()?;
        Ok(episode)
    }

    pub fn load(path: &Path) -> Result<Episode, CoreError> {
        let file = std::fs::File::open(path)?;
        Episode::read_from(std::io::BufReader::new(file))
    }

    /// Schema validation run on every reload: frame rate, per-frame shapes,
    /// value ranges and finiteness.
    pub fn validate(&self) -> Result<(), CoreError> {
        let h = &self.header;
        if h.frame_period_ticks == 0 {
            return Err(CoreError::schema("frame_period_ticks must be positive"));
        }
        if !(h.control_dt.is_finite() && h.control_dt > 0.0) {
            return Err(CoreError::schema("control_dt must be positive"));
        }
        if h.n_cells == 0 || h.image_width == 0 || h.image_height == 0 {
            return Err(CoreError::schema("empty sensor dimensions"));
        }
        if !(h.box_size.is_finite() && h.box_size > 0.0) || !h.box_position.is_finite() {
            return Err(CoreError::schema("bad box geometry in header"));
        }
        let expected_image_len = base64_len(3 * h.image_width * h.image_height);
        for (i, f) in self.frames.iter().enumerate() {
            let at = |msg: String| CoreError::Malformed { line: i + 2, msg };
            if f.tick != i as u64 * h.frame_period_ticks {
                return Err(at(format!(
                    "frame tick {} breaks the {}-tick cadence",
                    f.tick, h.frame_period_ticks
                )));
            }
            if f.q.len() != JOINT_DIM {
                return Err(at(format!("expected {} joints, got {}", JOINT_DIM, f.q.len())));
            }
            if f.action.len() != ACTION_DIM {
                return Err(at(format!(
                    "expected {} action dims, got {}",
                    ACTION_DIM,
                    f.action.len()
                )));
            }
            if f.tactile.n_cells() != h.n_cells {
                return Err(at(format!(
                    "expected {} tactile cells, got {}",
                    h.n_cells,
                    f.tactile.n_cells()
                )));
            }
            f.tactile.validate().map_err(|e| at(e.to_string()))?;
            if f.image_b64.len() != expected_image_len {
                return Err(at(format!(
                    "image payload length {} != {}",
                    f.image_b64.len(),
                    expected_image_len
                )));
            }
            for v in f.q.iter().chain(f.action.iter()).chain(f.grippers.iter()) {
                if !v.is_finite() {
                    return Err(at("non-finite value in frame".into()));
                }
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 * self.header.frame_period_ticks as f64 * self.header.control_dt
    }
}

fn base64_len(bytes: usize) -> usize {
    bytes.div_ceil(3) * 4
}
