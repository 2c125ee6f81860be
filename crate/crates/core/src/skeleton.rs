//! Joint layouts for the 15-joint body, the 21-joint hand and the 57-joint
//! whole body, plus the reference skeleton used for bone-length
//! normalization.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const BODY_JOINTS: usize = 15;
pub const HAND_JOINTS: usize = 21;
pub const WHOLE_BODY_JOINTS: usize = BODY_JOINTS + 2 * HAND_JOINTS;
pub const LAYOUT_VERSION: u32 = 1;

pub const NECK: usize = 0;
pub const R_SHOULDER: usize = 1;
pub const R_ELBOW: usize = 2;
pub const R_WRIST: usize = 3;
pub const L_SHOULDER: usize = 4;
pub const L_ELBOW: usize = 5;
pub const L_WRIST: usize = 6;
pub const R_HIP: usize = 7;
pub const R_KNEE: usize = 8;
pub const R_ANKLE: usize = 9;
pub const R_TOE: usize = 10;
pub const L_HIP: usize = 11;
pub const L_KNEE: usize = 12;
pub const L_ANKLE: usize = 13;
pub const L_TOE: usize = 14;

/// First whole-body index of the left hand (its wrist).
pub const LEFT_HAND: usize = BODY_JOINTS;
/// First whole-body index of the right hand (its wrist).
pub const RIGHT_HAND: usize = BODY_JOINTS + HAND_JOINTS;

pub const BODY_NAMES: [&str; BODY_JOINTS] = [
    "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip", "r_knee", "r_ankle",
    "r_toe", "l_hip", "l_knee", "l_ankle", "l_toe",
];

const BODY_PARENTS: [Option<usize>; BODY_JOINTS] = [
    None,
    Some(NECK),
    Some(R_SHOULDER),
    Some(R_ELBOW),
    Some(NECK),
    Some(L_SHOULDER),
    Some(L_ELBOW),
    None,
    Some(R_HIP),
    Some(R_KNEE),
    Some(R_ANKLE),
    None,
    Some(L_HIP),
    Some(L_KNEE),
    Some(L_ANKLE),
];

pub const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
const THUMB_SEGMENTS: [&str; 4] = ["cmc", "mcp", "ip", "tip"];
const FINGER_SEGMENTS: [&str; 4] = ["mcp", "pip", "dip", "tip"];

pub fn hand_names() -> Vec<String> {
    let mut out = vec!["wrist".to_string()];
    for (f, finger) in FINGERS.iter().enumerate() {
        let segs = if f == 0 { THUMB_SEGMENTS } else { FINGER_SEGMENTS };
        out.extend(segs.iter().map(|s| format!("{finger}_{s}")));
    }
    out
}

/// Where the layout's root point sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootSpec {
    Joint(usize),
    /// The midpoint of two joints (the pelvis proxy between the hips).
    Midpoint(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonLayout {
    pub names: Vec<String>,
    /// Parent joint, or `None` for joints hanging directly off the root point.
    /// Parents always precede their children.
    pub parents: Vec<Option<usize>>,
    pub root: RootSpec,
}

impl SkeletonLayout {
    pub fn body() -> Self {
        SkeletonLayout {
            names: BODY_NAMES.iter().map(|s| s.to_string()).collect(),
            parents: BODY_PARENTS.to_vec(),
            root: RootSpec::Midpoint(R_HIP, L_HIP),
        }
    }

    pub fn hand() -> Self {
        let mut parents = vec![None];
        for f in 0..5 {
            let base = 1 + 4 * f;
            parents.push(Some(0));
            for k in 1..4 {
                parents.push(Some(base + k - 1));
            }
        }
        SkeletonLayout {
            names: hand_names(),
            parents,
            root: RootSpec::Joint(0),
        }
    }

    /// Body followed by left and right hands; each hand wrist hangs off the
    /// corresponding body wrist.
    pub fn whole_body() -> Self {
        let body = Self::body();
        let hand = Self::hand();
        let mut names = body.names.clone();
        let mut parents = body.parents.clone();
        for (side, offset, wrist) in [("l", LEFT_HAND, L_WRIST), ("r", RIGHT_HAND, R_WRIST)] {
            for (k, name) in hand.names.iter().enumerate() {
                names.push(format!("{side}h_{name}"));
                parents.push(match hand.parents[k] {
                    None => Some(wrist),
                    Some(p) => Some(p + offset),
                });
            }
        }
        SkeletonLayout {
            names,
            parents,
            root: body.root,
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.names.len() != self.parents.len() {
            return Err(Error::Shape("layout names and parents differ in length".into()));
        }
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::Shape(format!(
                        "joint {} has parent {p} that does not precede it",
                        self.names[i]
                    )));
                }
            }
        }
        match self.root {
            RootSpec::Joint(r) if r >= self.len() || self.parents[r].is_some() => {
                Err(Error::Shape(format!("root joint {r} is not a parentless joint")))
            }
            RootSpec::Midpoint(a, b) if a >= self.len() || b >= self.len() => {
                Err(Error::Shape("root midpoint joints out of range".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn root_point(&self, joints: &[Vector3<f64>]) -> Vector3<f64> {
        match self.root {
            RootSpec::Joint(r) => joints[r],
            RootSpec::Midpoint(a, b) => (joints[a] + joints[b]) * 0.5,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A layout with target bone lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSkeleton {
    pub layout: SkeletonLayout,
    /// Distance from each joint to its parent (or to the root point).
    pub lengths: Vec<f64>,
}

#[derive(Deserialize)]
struct ReferenceFile {
    body: HashMap<String, f64>,
    hand: HashMap<String, f64>,
}

const REFERENCE_JSON: &str = include_str!("../data/reference_skeleton.json");

fn reference_file() -> &'static ReferenceFile {
    static FILE: OnceLock<ReferenceFile> = OnceLock::new();
    FILE.get_or_init(|| serde_json::from_str(REFERENCE_JSON).expect("bundled reference skeleton parses"))
}

fn lengths_for(names: &[String], table: &HashMap<String, f64>) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            table
                .get(n)
                .copied()
                .ok_or_else(|| Error::Config(format!("reference skeleton lacks joint `{n}`")))
        })
        .collect()
}

impl ReferenceSkeleton {
    pub fn body() -> Self {
        let layout = SkeletonLayout::body();
        let lengths = lengths_for(&layout.names, &reference_file().body).expect("body lengths complete");
        ReferenceSkeleton { layout, lengths }
    }

    pub fn hand() -> Self {
        let layout = SkeletonLayout::hand();
        let lengths = lengths_for(&layout.names, &reference_file().hand).expect("hand lengths complete");
        ReferenceSkeleton { layout, lengths }
    }

    pub fn whole_body() -> Self {
        let body = Self::body();
        let hand = Self::hand();
        let mut lengths = body.lengths;
        lengths.extend(&hand.lengths);
        lengths.extend(&hand.lengths);
        ReferenceSkeleton {
            layout: SkeletonLayout::whole_body(),
            lengths,
        }
    }

    /// Reads a reference skeleton from a JSON file with the bundled schema.
    pub fn from_json(text: &str, which: &str) -> Result<Self> {
        let file: ReferenceFile = serde_json::from_str(text)?;
        let (layout, lengths) = match which {
            "body" => {
                let l = SkeletonLayout::body();
                let len = lengths_for(&l.names, &file.body)?;
                (l, len)
            }
            "hand" => {
                let l = SkeletonLayout::hand();
                let len = lengths_for(&l.names, &file.hand)?;
                (l, len)
            }
            "whole_body" => {
                let mut len = lengths_for(&SkeletonLayout::body().names, &file.body)?;
                let hand = lengths_for(&SkeletonLayout::hand().names, &file.hand)?;
                len.extend(&hand);
                len.extend(&hand);
                (SkeletonLayout::whole_body(), len)
            }
            other => return Err(Error::Config(format!("unknown skeleton `{other}`"))),
        };
        Ok(ReferenceSkeleton { layout, lengths })
    }
}

/// Direction (in the hand frame) from the wrist to each finger's first
/// joint. The hand frame has x along the fingers, y out of the back of the
/// hand and z toward the thumb side of a left hand.
pub(crate) fn finger_base_directions() -> [Vector3<f64>; 5] {
    [
        Vector3::new(0.55, -0.10, 0.83).normalize(),
        Vector3::new(0.96, 0.0, 0.28).normalize(),
        Vector3::new(1.0, 0.0, 0.05).normalize(),
        Vector3::new(0.98, 0.0, -0.18).normalize(),
        Vector3::new(0.92, 0.0, -0.40).normalize(),
    ]
}

/// Chain direction of each finger past its first joint in the rest pose.
pub(crate) fn finger_chain_directions() -> [Vector3<f64>; 5] {
    [
        Vector3::new(0.70, -0.05, 0.70).normalize(),
        Vector3::new(1.0, 0.0, 0.06).normalize(),
        Vector3::x(),
        Vector3::new(1.0, 0.0, -0.05).normalize(),
        Vector3::new(1.0, 0.0, -0.12).normalize(),
    ]
}

/// Flat open hand with the wrist at the origin, in the hand frame.
/// `left = false` mirrors the thumb side.
pub fn rest_hand(left: bool) -> Vec<Vector3<f64>> {
    let lengths = &ReferenceSkeleton::hand().lengths;
    let base = finger_base_directions();
    let chain = finger_chain_directions();
    let mirror = |v: Vector3<f64>| if left { v } else { Vector3::new(v.x, v.y, -v.z) };
    let mut out = vec![Vector3::zeros()];
    for f in 0..5 {
        let first = 1 + 4 * f;
        let mut p = mirror(base[f]) * lengths[first];
        out.push(p);
        for k in 1..4 {
            p += mirror(chain[f]) * lengths[first + k];
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_are_valid_trees() {
        for l in [SkeletonLayout::body(), SkeletonLayout::hand(), SkeletonLayout::whole_body()] {
            l.check().unwrap();
        }
        assert_eq!(SkeletonLayout::whole_body().len(), WHOLE_BODY_JOINTS);
        let wb = SkeletonLayout::whole_body();
        assert_eq!(wb.parents[LEFT_HAND], Some(L_WRIST));
        assert_eq!(wb.parents[RIGHT_HAND], Some(R_WRIST));
        assert_eq!(wb.parents[LEFT_HAND + 2], Some(LEFT_HAND + 1));
        assert_eq!(wb.index_of("rh_pinky_tip"), Some(WHOLE_BODY_JOINTS - 1));
    }

    #[test]
    fn hand_names_follow_thumb_to_pinky() {
        let names = hand_names();
        assert_eq!(names.len(), HAND_JOINTS);
        assert_eq!(names[0], "wrist");
        assert_eq!(names[1], "thumb_cmc");
        assert_eq!(names[5], "index_mcp");
        assert_eq!(names[20], "pinky_tip");
    }

    #[test]
    fn reference_lengths_cover_layouts() {
        let wb = ReferenceSkeleton::whole_body();
        assert_eq!(wb.lengths.len(), WHOLE_BODY_JOINTS);
        assert_eq!(wb.lengths[LEFT_HAND], 0.0);
        assert!(ReferenceSkeleton::from_json(REFERENCE_JSON, "body").is_ok());
        assert!(ReferenceSkeleton::from_json(REFERENCE_JSON, "tail").is_err());
    }

    #[test]
    fn rest_hand_matches_reference_lengths() {
        let hand = rest_hand(true);
        let reference = ReferenceSkeleton::hand();
        for (i, p) in reference.layout.parents.iter().enumerate().skip(1) {
            let parent = p.map(|p| hand[p]).unwrap_or(hand[0]);
            assert!(((hand[i] - parent).norm() - reference.lengths[i]).abs() < 1e-12);
        }
        let right = rest_hand(false);
        assert!((right[4].z + hand[4].z).abs() < 1e-12);
    }
}
