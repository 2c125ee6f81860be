use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::skeleton::{LAYOUT_VERSION, WHOLE_BODY_JOINTS};

/// Time-indexed whole-body poses in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    /// `L x 57` joint positions.
    pub frames: Vec<Vec<Vector3<f64>>>,
    pub fps: f64,
    /// Optional `L x 57` per-joint uncertainty.
    pub uncertainty: Option<Vec<Vec<f64>>>,
    /// World up direction in the sequence's coordinates, when known.
    pub up: Option<Vector3<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    layout_version: u32,
    fps: f64,
    frames: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uncertainty: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    up: Option<[f64; 3]>,
}

impl MotionSequence {
    pub fn new(frames: Vec<Vec<Vector3<f64>>>, fps: f64) -> Result<Self> {
        let seq = MotionSequence {
            frames,
            fps,
            uncertainty: None,
            up: None,
        };
        seq.check()?;
        Ok(seq)
    }

    pub fn with_uncertainty(mut self, uncertainty: Vec<Vec<f64>>) -> Result<Self> {
        self.uncertainty = Some(uncertainty);
        self.check()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Shape("motion sequence has no frames".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Shape(format!("frame rate {} must be > 0", self.fps)));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != WHOLE_BODY_JOINTS {
                return Err(Error::Shape(format!(
                    "frame {t} has {} joints, expected {WHOLE_BODY_JOINTS}",
                    f.len()
                )));
            }
            if f.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(Error::Domain(format!("frame {t} has non-finite joints")));
            }
        }
        if let Some(u) = &self.uncertainty {
            if u.len() != self.frames.len() || u.iter().any(|r| r.len() != WHOLE_BODY_JOINTS) {
                return Err(Error::Shape("uncertainty must be L x 57".into()));
            }
        }
        Ok(())
    }

    /// Flattens frame `t` into 171 coordinates.
    pub fn frame_flat(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        self.frames[t].iter().flat_map(|p| [p.x, p.y, p.z])
    }

    pub fn to_json(&self) -> String {
        let file = MotionFile {
            layout_version: LAYOUT_VERSION,
            fps: self.fps,
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
                .collect(),
            uncertainty: self.uncertainty.clone(),
            up: self.up.map(|u| [u.x, u.y, u.z]),
        };
        serde_json::to_string(&file).expect("motion serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MotionFile = serde_json::from_str(text)?;
        if file.layout_version != LAYOUT_VERSION {
            return Err(Error::Version {
                kind: "motion layout",
                expected: LAYOUT_VERSION,
                found: file.layout_version,
            });
        }
        let seq = MotionSequence {
            frames: file
                .frames
                .into_iter()
                .map(|f| f.into_iter().map(Vector3::from).collect())
                .collect(),
            fps: file.fps,
            uncertainty: file.uncertainty,
            up: file.up.map(Vector3::from),
        };
        seq.check()?;
        Ok(seq)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = binio::read_file(path)?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }
}
