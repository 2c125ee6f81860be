//! Head-mounted camera rig, synthetic heatmaps and synthetic observations.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::FisheyeCamera;
use crate::error::{Error, Result};
use crate::heatmap::{Heatmap3D, VoxelCoord, MAX_UNCERTAINTY};
use crate::motion::MotionSequence;
use crate::patch::tangent_frame;
use crate::pose::hand_rotation;
use crate::skeleton::{BODY_JOINTS, HAND_JOINTS, LEFT_HAND, L_HIP, NECK, RIGHT_HAND, R_HIP, WHOLE_BODY_JOINTS};

pub const DEFAULT_SIGMA_VOXELS: f64 = 2.0;
pub const DEFAULT_DEPTH_RANGE: (f64, f64) = (0.05, 2.45);
pub const DEFAULT_NOISE_M: f64 = 0.02;

/// Camera mounted in front of the face and pitched down, following the
/// wearer's yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoRig {
    pub pitch_deg: f64,
    /// Mount point relative to the neck in the yawed body frame.
    pub offset: [f64; 3],
}

impl Default for EgoRig {
    fn default() -> Self {
        EgoRig {
            pitch_deg: 60.0,
            offset: [0.0, 0.18, 0.12],
        }
    }
}

impl EgoRig {
    /// Camera axes as columns, in the yawed body frame.
    fn axes(&self) -> Matrix3<f64> {
        let p = self.pitch_deg.to_radians();
        Matrix3::from_columns(&[
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, -p.cos(), -p.sin()),
            Vector3::new(0.0, -p.sin(), p.cos()),
        ])
    }

    /// World up expressed in camera coordinates.
    pub fn up(&self) -> Vector3<f64> {
        self.axes().transpose() * Vector3::y()
    }

    /// Re-expresses a world-frame sequence in per-frame camera coordinates.
    /// The result carries the rig's up axis.
    pub fn to_camera(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        seq.check()?;
        let axes = self.axes();
        let offset = Vector3::from(self.offset);
        let frames = seq
            .frames
            .iter()
            .map(|f| {
                let l = f[L_HIP] - f[R_HIP];
                let facing = l.cross(&Vector3::y());
                if facing.x.hypot(facing.z) < 1e-9 {
                    return Err(Error::Geometry("hip line is vertical or degenerate".into()));
                }
                let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), facing.x.atan2(facing.z));
                let r_wc = yaw.matrix() * axes;
                let c = f[NECK] + yaw * offset;
                Ok(f.iter().map(|p| r_wc.transpose() * (p - c)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionSequence {
            frames,
            fps: seq.fps,
            uncertainty: seq.uncertainty.clone(),
            up: Some(self.up()),
        })
    }
}

/// Continuous voxel position of a camera-frame point, or `None` when it
/// leaves the field of view or the volume.
pub fn joint_voxel(
    p: &Vector3<f64>,
    camera: &FisheyeCamera,
    hm: &Heatmap3D,
) -> Option<VoxelCoord> {
    let px = camera.project(p).ok()?;
    let c = hm.uvd_to_voxel(&[px.x, px.y, p.norm()]);
    let inside = |x: f64, n: usize| (-0.5..=n as f64 - 0.5).contains(&x);
    (inside(c.w, hm.width) && inside(c.h, hm.height) && inside(c.d, hm.depth)).then_some(c)
}

/// Adds a peak-1 isotropic Gaussian truncated at `ceil(3 sigma)` voxels
/// (keeps the larger value where blobs overlap).
pub fn splat(volume: &mut [f32], dims: (usize, usize, usize), c: &VoxelCoord, sigma: f64) {
    let (d, h, w) = dims;
    let r = (3.0 * sigma).ceil();
    let range = |x: f64, n: usize| {
        let lo = (x - r).floor().max(0.0) as usize;
        let hi = ((x + r).ceil() as isize).clamp(-1, n as isize - 1);
        lo..(hi + 1).max(0) as usize
    };
    let s2 = 2.0 * sigma * sigma;
    for dd in range(c.d, d) {
        let ed = (dd as f64 - c.d).powi(2);
        for hh in range(c.h, h) {
            let eh = (hh as f64 - c.h).powi(2);
            for ww in range(c.w, w) {
                let r2 = ed + eh + (ww as f64 - c.w).powi(2);
                if r2 > r * r {
                    continue;
                }
                let v = (-r2 / s2).exp() as f32;
                let slot = &mut volume[(dd * h + hh) * w + ww];
                *slot = slot.max(v);
            }
        }
    }
}

/// Renders camera-frame joints into a pixel-aligned heatmap. Joints out of
/// view or out of the depth range get an all-zero volume and a `false` flag.
pub fn render_heatmap(
    joints: &[Vector3<f64>],
    camera: &FisheyeCamera,
    dims: (usize, usize, usize),
    sigma_voxels: f64,
    depth_range: (f64, f64),
) -> Result<(Heatmap3D, Vec<bool>)> {
    if !(sigma_voxels > 0.0) {
        return Err(Error::Config(format!("sigma {sigma_voxels} must be > 0")));
    }
    let mut hm = Heatmap3D::zeros(
        joints.len(),
        dims,
        depth_range,
        (camera.height as usize, camera.width as usize),
    )?;
    let mut flags = Vec::with_capacity(joints.len());
    for (j, p) in joints.iter().enumerate() {
        let c = joint_voxel(p, camera, &hm);
        if let Some(c) = &c {
            splat(hm.volume_mut(j), dims, c, sigma_voxels);
        }
        flags.push(c.is_some());
    }
    Ok((hm, flags))
}

/// Per-joint corruption settings shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    /// Probability that a (frame, joint) pair is corrupted.
    pub probability: f64,
    /// Per-axis standard deviation in meters.
    pub noise_m: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption {
            probability: 0.25,
            noise_m: DEFAULT_NOISE_M,
        }
    }
}

impl Corruption {
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) || !(self.noise_m >= 0.0) {
            return Err(Error::Config(format!("bad corruption settings {self:?}")));
        }
        Ok(())
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let n = Normal::new(0.0, self.noise_m).expect("checked std");
        Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    }
}

/// Adds Gaussian noise to a random subset of joints and marks them with
/// the maximal uncertainty; untouched joints get zero uncertainty.
pub fn corrupt_sequence(seq: &MotionSequence, corruption: &Corruption, rng: &mut ChaCha8Rng) -> Result<MotionSequence> {
    corruption.check()?;
    let mut out = seq.clone();
    let mut u = vec![vec![0.0; WHOLE_BODY_JOINTS]; seq.len()];
    for (frame, row) in out.frames.iter_mut().zip(u.iter_mut()) {
        for (p, uj) in frame.iter_mut().zip(row.iter_mut()) {
            if rng.random_bool(corruption.probability) {
                *p += corruption.noise(rng);
                *uj = MAX_UNCERTAINTY;
            }
        }
    }
    out.uncertainty = Some(u);
    Ok(out)
}

/// Renders one frame of body joints. Corrupted joints get two equal blobs
/// at independent noisy offsets, which decode between them with high
/// uncertainty.
pub fn render_body_frame(
    joints: &[Vector3<f64>],
    camera: &FisheyeCamera,
    dims: (usize, usize, usize),
    sigma_voxels: f64,
    depth_range: (f64, f64),
    corruption: &Corruption,
    rng: &mut ChaCha8Rng,
) -> Result<(Heatmap3D, Vec<bool>)> {
    corruption.check()?;
    if !(sigma_voxels > 0.0) {
        return Err(Error::Config(format!("sigma {sigma_voxels} must be > 0")));
    }
    let mut hm = Heatmap3D::zeros(
        joints.len(),
        dims,
        depth_range,
        (camera.height as usize, camera.width as usize),
    )?;
    let mut flags = Vec::with_capacity(joints.len());
    for (j, p) in joints.iter().enumerate() {
        let corrupt = rng.random_bool(corruption.probability);
        let points = if corrupt {
            vec![p + corruption.noise(rng), p + corruption.noise(rng)]
        } else {
            vec![*p]
        };
        let mut any = false;
        for q in &points {
            if let Some(c) = joint_voxel(q, camera, &hm) {
                splat(hm.volume_mut(j), dims, &c, sigma_voxels);
                any = true;
            }
        }
        flags.push(any);
    }
    Ok((hm, flags))
}

/// A simulated hand-network output for one hand in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandObservation {
    /// Crop center in pixels.
    pub center: [f64; 2],
    /// Crop side in pixels.
    pub bbox: f64,
    /// Joints in the crop's tangent frame relative to the wrist.
    pub local_joints: Vec<[f64; 3]>,
    pub uncertainty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub left: Option<HandObservation>,
    pub right: Option<HandObservation>,
}

/// Simulates hand crops and local hand estimates for a camera-frame pose.
/// The crop is centered on the projected hand centroid; a hand whose crop
/// falls outside the view is reported missing.
pub fn observe_hands(
    frame: &[Vector3<f64>],
    camera: &FisheyeCamera,
    bbox: f64,
    corruption: &Corruption,
    rng: &mut ChaCha8Rng,
) -> Result<HandFrame> {
    corruption.check()?;
    if frame.len() != WHOLE_BODY_JOINTS {
        return Err(Error::Shape(format!("expected {WHOLE_BODY_JOINTS} joints, got {}", frame.len())));
    }
    let mut one = |offset: usize| -> Result<Option<HandObservation>> {
        let hand = &frame[offset..offset + HAND_JOINTS];
        let centroid = hand.iter().sum::<Vector3<f64>>() / HAND_JOINTS as f64;
        let Ok(center) = camera.project(&centroid) else {
            return Ok(None);
        };
        let Ok(tf) = tangent_frame(&center, bbox / 2.0, camera) else {
            return Ok(None);
        };
        let r = hand_rotation(&tf)?;
        let mut local = Vec::with_capacity(HAND_JOINTS);
        let mut u = Vec::with_capacity(HAND_JOINTS);
        for (i, p) in hand.iter().enumerate() {
            let mut q = r.transpose() * (p - hand[0]);
            let mut uj = 0.0;
            if i > 0 && rng.random_bool(corruption.probability) {
                q += corruption.noise(rng);
                uj = MAX_UNCERTAINTY;
            }
            local.push([q.x, q.y, q.z]);
            u.push(uj);
        }
        Ok(Some(HandObservation {
            center: [center.x, center.y],
            bbox,
            local_joints: local,
            uncertainty: u,
        }))
    };
    let left = one(LEFT_HAND)?;
    let right = one(RIGHT_HAND)?;
    Ok(HandFrame { left, right })
}

impl HandObservation {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.center[0], self.center[1])
    }

    pub fn local(&self) -> Vec<Vector3<f64>> {
        self.local_joints.iter().map(|p| Vector3::from(*p)).collect()
    }
}

/// Body joints of a whole-body frame.
pub fn body_joints(frame: &[Vector3<f64>]) -> &[Vector3<f64>] {
    &frame[..BODY_JOINTS]
}
