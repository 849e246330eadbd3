//! Dataset manifest: the index written next to collected episodes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::TaskKind;
use crate::CoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub box_size: f64,
    pub box_position: f64,
    pub seed: u64,
    pub frames: usize,
    /// Failed expert attempts (re-seeded) before this episode succeeded.
    pub discards: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: TaskKind,
    pub config_hash: String,
    pub n_cells: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<DatasetManifest, CoreError> {
        let m: DatasetManifest =
            serde_json::from_str(s).map_err(|e| CoreError::schema(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetManifest, CoreError> {
        let s = std::fs::read_to_string(path)?;
        DatasetManifest::from_json(&s)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.config_hash.len() != 64 || !self.config_hash.bytes().all(|b| b.is_ascii_hexdigit())
        {
            return Err(CoreError::schema("config_hash is not a sha256 hex digest"));
        }
        if self.n_cells == 0 {
            return Err(CoreError::schema("n_cells must be positive"));
        }
        for e in &self.entries {
            if e.file.is_empty() || e.frames == 0 {
                return Err(CoreError::schema(format!("degenerate entry {:?}", e.file)));
            }
            if !e.box_size.is_finite() || !e.box_position.is_finite() || e.box_size <= 0.0 {
                return Err(CoreError::schema(format!("bad geometry in {:?}", e.file)));
            }
        }
        Ok(())
    }

    /// Hash over the manifest content itself; identical collections yield
    /// identical hashes.
    pub fn manifest_hash(&self) -> String {
        crate::hash::sha256_hex(self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_stable_hash() {
        let m = DatasetManifest {
            task: TaskKind::HoldUp,
            config_hash: "0".repeat(64),
            n_cells: 40,
            entries: vec![ManifestEntry {
                file: "ep_000.jsonl".into(),
                box_size: 0.25,
                box_position: 0.0,
                seed: 3,
                frames: 180,
                discards: 1,
            }],
        };
        let json = m.to_json();
        let back = DatasetManifest::from_json(&json).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.manifest_hash(), back.manifest_hash());
    }

    #[test]
    fn rejects_bad_hash() {
        let m = DatasetManifest {
            task: TaskKind::HoldUp,
            config_hash: "nothex".into(),
            n_cells: 40,
            entries: vec![],
        };
        assert!(DatasetManifest::from_json(&m.to_json()).is_err());
    }
}
