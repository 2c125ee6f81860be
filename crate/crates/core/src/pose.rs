//! Whole-body pose assembly from a body estimate and two hand estimates.
//!
//! Hand joints are regressed in the local frame of the hand crop's tangent
//! plane. They are rotated into the camera frame with the crop's tangent
//! axes and translated so the hand wrist lands on the body wrist.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::heatmap::MAX_UNCERTAINTY;
use crate::patch::TangentFrame;
use crate::skeleton::{
    rest_hand, BODY_JOINTS, HAND_JOINTS, LAYOUT_VERSION, LEFT_HAND, L_WRIST, RIGHT_HAND, R_WRIST,
    WHOLE_BODY_JOINTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartValidity {
    pub body: bool,
    pub left: bool,
    pub right: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WholeBodyPose {
    pub joints: Vec<Vector3<f64>>,
    pub uncertainty: Vec<f64>,
    pub valid: PartValidity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyEstimate {
    pub joints: Vec<Vector3<f64>>,
    pub uncertainty: Vec<f64>,
}

/// A hand estimate in its crop's tangent frame, wrist at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HandEstimate {
    pub local_joints: Vec<Vector3<f64>>,
    pub uncertainty: Vec<f64>,
    pub frame: TangentFrame,
}

/// Rotation taking crop-local coordinates to the camera frame; its columns
/// are the tangent axes.
pub fn hand_rotation(frame: &TangentFrame) -> Result<Matrix3<f64>> {
    let r = Matrix3::from_columns(&[frame.x_axis, frame.y_axis, frame.z_axis]);
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
        return Err(Error::Geometry(format!(
            "tangent frame is not a proper rotation (orthogonality error {ortho:.2e}, det {det:.6})"
        )));
    }
    Ok(r)
}

/// Rotates a local hand into the camera frame and pins its wrist to `body_wrist`.
pub fn attach_hand(local_hand: &[Vector3<f64>], rotation: &Matrix3<f64>, body_wrist: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let Some(wrist) = local_hand.first() else {
        return Vec::new();
    };
    local_hand
        .iter()
        .map(|p| rotation * (p - wrist) + body_wrist)
        .collect()
}

fn check_len<T>(what: &str, v: &[T], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Shape(format!("{what}: expected {n} entries, got {}", v.len())));
    }
    Ok(())
}

/// Combines body and hands into a 57-joint pose. A missing hand becomes the
/// rest hand at the wrist with maximal uncertainty and its validity flag off.
pub fn assemble(body: &BodyEstimate, left: Option<&HandEstimate>, right: Option<&HandEstimate>) -> Result<WholeBodyPose> {
    check_len("body joints", &body.joints, BODY_JOINTS)?;
    check_len("body uncertainty", &body.uncertainty, BODY_JOINTS)?;
    let mut joints = body.joints.clone();
    let mut uncertainty = body.uncertainty.clone();
    let mut valid = PartValidity {
        body: true,
        left: false,
        right: false,
    };
    for (hand, wrist, is_left, offset) in [(left, L_WRIST, true, LEFT_HAND), (right, R_WRIST, false, RIGHT_HAND)] {
        debug_assert_eq!(joints.len(), offset);
        let body_wrist = body.joints[wrist];
        match hand {
            Some(h) => {
                check_len("hand joints", &h.local_joints, HAND_JOINTS)?;
                check_len("hand uncertainty", &h.uncertainty, HAND_JOINTS)?;
                let r = hand_rotation(&h.frame)?;
                joints.extend(attach_hand(&h.local_joints, &r, &body_wrist));
                uncertainty.extend(&h.uncertainty);
            }
            None => {
                joints.extend(rest_hand(is_left).iter().map(|p| p + body_wrist));
                uncertainty.extend(std::iter::repeat(MAX_UNCERTAINTY).take(HAND_JOINTS));
            }
        }
        if is_left {
            valid.left = hand.is_some();
        } else {
            valid.right = hand.is_some();
        }
    }
    Ok(WholeBodyPose {
        joints,
        uncertainty,
        valid,
    })
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    layout_version: u32,
    joints: Vec<[f64; 3]>,
    uncertainty: Vec<f64>,
    valid: PartValidity,
}

impl WholeBodyPose {
    pub fn to_json(&self) -> String {
        let file = PoseFile {
            layout_version: LAYOUT_VERSION,
            joints: self.joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
            uncertainty: self.uncertainty.clone(),
            valid: self.valid,
        };
        serde_json::to_string(&file).expect("pose serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PoseFile = serde_json::from_str(text)?;
        if file.layout_version != LAYOUT_VERSION {
            return Err(Error::Version {
                kind: "pose layout",
                expected: LAYOUT_VERSION,
                found: file.layout_version,
            });
        }
        check_len("pose joints", &file.joints, WHOLE_BODY_JOINTS)?;
        check_len("pose uncertainty", &file.uncertainty, WHOLE_BODY_JOINTS)?;
        Ok(WholeBodyPose {
            joints: file.joints.iter().map(|p| Vector3::from(*p)).collect(),
            uncertainty: file.uncertainty,
            valid: file.valid,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = binio::read_file(path)?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::make_equidistant_camera;
    use crate::patch::{hand_crop_grid, tangent_frame};
    use nalgebra::{Rotation3, Vector2};

    fn frame_at(u: f64, v: f64) -> TangentFrame {
        let cam = make_equidistant_camera(100.0, 256, 6).unwrap();
        tangent_frame(&Vector2::new(u, v), 16.0, &cam).unwrap()
    }

    fn sample_hand() -> Vec<Vector3<f64>> {
        (0..HAND_JOINTS)
            .map(|k| Vector3::new(0.01 * k as f64, 0.003 * (k as f64).sin(), -0.002 * k as f64))
            .collect()
    }

    #[test]
    fn rotation_at_principal_point_is_identity() {
        let r = hand_rotation(&frame_at(128.0, 128.0)).unwrap();
        assert!((r - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn rotation_is_proper_everywhere() {
        for (u, v) in [(30.0, 40.0), (200.0, 90.0), (128.0, 20.0)] {
            let r = hand_rotation(&frame_at(u, v)).unwrap();
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_turn_about_axis_rotates_frame() {
        // A center rotated 90 degrees about the principal point gives a frame
        // whose z axis is the rotated ray and whose in-plane axes match the
        // frame built there directly.
        let a = frame_at(128.0 + 60.0, 128.0);
        let b = frame_at(128.0, 128.0 + 60.0);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        assert!((rz * a.z_axis - b.z_axis).norm() < 1e-9);
        let ra = hand_rotation(&a).unwrap();
        let rb = hand_rotation(&b).unwrap();
        // Orientation is pinned by the +u offset, so the rotated frame differs
        // from b only by an in-plane turn about b's normal.
        let rel = rb.transpose() * rz.matrix() * ra;
        assert!((rel[(2, 2)] - 1.0).abs() < 1e-9);

        let mut c = frame_at(128.0, 128.0);
        c.x_axis = rz * c.x_axis;
        c.y_axis = rz * c.y_axis;
        let r = hand_rotation(&c).unwrap();
        assert!((r - rz.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn non_orthonormal_frame_is_rejected() {
        let mut f = frame_at(100.0, 100.0);
        f.x_axis *= 1.1;
        assert!(matches!(hand_rotation(&f), Err(Error::Geometry(_))));
    }

    #[test]
    fn attach_examples() {
        let hand = sample_hand();
        let out = attach_hand(&hand, &Matrix3::identity(), &hand[0]);
        assert_eq!(out, hand);

        let wrist = Vector3::new(0.3, -0.2, 0.9);
        let r = *Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
        let out = attach_hand(&hand, &r, &wrist);
        assert_eq!(out[0], wrist);
        for i in 0..HAND_JOINTS {
            for j in 0..HAND_JOINTS {
                let a = (hand[i] - hand[j]).norm();
                let b = (out[i] - out[j]).norm();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn body() -> BodyEstimate {
        BodyEstimate {
            joints: (0..BODY_JOINTS).map(|k| Vector3::new(0.1 * k as f64, 0.5, 1.0)).collect(),
            uncertainty: (0..BODY_JOINTS).map(|k| 0.001 * k as f64).collect(),
        }
    }

    #[test]
    fn assemble_examples() {
        let cam = make_equidistant_camera(100.0, 256, 6).unwrap();
        let (_, frame) = hand_crop_grid(&Vector2::new(90.0, 170.0), 48.0, &cam, 8).unwrap();
        let hand = HandEstimate {
            local_joints: sample_hand(),
            uncertainty: vec![0.01; HAND_JOINTS],
            frame,
        };
        let b = body();
        let pose = assemble(&b, Some(&hand), Some(&hand)).unwrap();
        assert_eq!(pose.joints.len(), WHOLE_BODY_JOINTS);
        assert_eq!(pose.uncertainty.len(), WHOLE_BODY_JOINTS);
        assert_eq!(&pose.uncertainty[..BODY_JOINTS], &b.uncertainty[..]);
        assert_eq!(pose.joints[LEFT_HAND], b.joints[L_WRIST]);
        assert_eq!(pose.joints[RIGHT_HAND], b.joints[R_WRIST]);
        assert!(pose.valid.left && pose.valid.right);

        let pose = assemble(&b, None, Some(&hand)).unwrap();
        assert!(!pose.valid.left && pose.valid.right);
        let rest = rest_hand(true);
        for k in 0..HAND_JOINTS {
            assert_eq!(pose.joints[LEFT_HAND + k], b.joints[L_WRIST] + rest[k]);
            assert_eq!(pose.uncertainty[LEFT_HAND + k], 0.05);
        }
        assert!(pose.uncertainty.iter().all(|u| (0.0..=0.05).contains(u)));
    }

    #[test]
    fn assemble_rejects_bad_shapes() {
        let mut b = body();
        b.joints.pop();
        assert!(matches!(assemble(&b, None, None), Err(Error::Shape(_))));
    }

    #[test]
    fn pose_json_roundtrip() {
        let pose = assemble(&body(), None, None).unwrap();
        let back = WholeBodyPose::from_json(&pose.to_json()).unwrap();
        assert_eq!(back, pose);
        let bumped = pose.to_json().replace("\"layout_version\":1", "\"layout_version\":7");
        assert!(matches!(WholeBodyPose::from_json(&bumped), Err(Error::Version { found: 7, .. })));
    }
}
