//! Synthetic ground truth: procedural motion, a head-mounted rig, heatmaps
//! rendered from known joints and simulated hand observations.

pub mod motion;
pub mod render;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use motion::{gen_motion, max_step, sequence_seed, GeneratedMotion, MotionFamily, MotionSpec};
pub use render::{
    corrupt_sequence, observe_hands, render_body_frame, render_heatmap, splat, Corruption, EgoRig, HandFrame,
    HandObservation,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub family: MotionFamily,
}

/// Index of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub spec: MotionSpec,
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(crate::Error::Version {
                kind: "manifest",
                expected: MANIFEST_VERSION,
                found: m.version,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| crate::Error::io(path, e))
    }
}
