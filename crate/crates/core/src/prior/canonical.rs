//! Pelvis-relative, yaw-aligned motion.
//!
//! The sequence's up axis is rotated onto +y, then one yaw per sequence turns
//! the mean facing direction (hip line crossed with up) onto +z. Every frame
//! is translated so its hip midpoint sits at the origin.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::skeleton::{L_HIP, R_HIP};

/// The rigid motion removed by [`canonicalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTransform {
    /// Rotation from the input frame to the canonical frame.
    pub rotation: Matrix3<f64>,
    /// Hip midpoint of each input frame, in input coordinates.
    pub pelvis: Vec<Vector3<f64>>,
}

fn up_alignment(up: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let n = up.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::Geometry(format!("up vector {up:?} is not a direction")));
    }
    let up = up / n;
    let y = Vector3::y();
    if (up - y).norm() < 1e-15 {
        return Ok(Matrix3::identity());
    }
    if up.dot(&y) < -1.0 + 1e-12 {
        return Ok(*Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI).matrix());
    }
    let axis = Unit::new_normalize(up.cross(&y));
    let angle = up.dot(&y).clamp(-1.0, 1.0).acos();
    Ok(*Rotation3::from_axis_angle(&axis, angle).matrix())
}

pub fn canonicalize(seq: &MotionSequence) -> Result<(MotionSequence, CanonicalTransform)> {
    seq.check()?;
    let r_up = up_alignment(&seq.up.unwrap_or_else(Vector3::y))?;
    let mut hip_line = Vector3::zeros();
    let mut pelvis = Vec::with_capacity(seq.len());
    for (t, f) in seq.frames.iter().enumerate() {
        let l = f[L_HIP] - f[R_HIP];
        if l.norm() < 1e-9 {
            return Err(Error::Geometry(format!("hips coincide in frame {t}")));
        }
        hip_line += r_up * l;
        pelvis.push((f[L_HIP] + f[R_HIP]) * 0.5);
    }
    let facing = hip_line.cross(&Vector3::y());
    if facing.norm() < 1e-9 * seq.len() as f64 {
        return Err(Error::Geometry("mean hip line is vertical or vanishes".into()));
    }
    let yaw = facing.x.atan2(facing.z);
    let rotation = Rotation3::from_axis_angle(&Vector3::y_axis(), -yaw).matrix() * r_up;
    let frames = seq
        .frames
        .iter()
        .zip(&pelvis)
        .map(|(f, p)| f.iter().map(|j| rotation * (j - p)).collect())
        .collect();
    let canonical = MotionSequence {
        frames,
        fps: seq.fps,
        uncertainty: seq.uncertainty.clone(),
        up: None,
    };
    Ok((canonical, CanonicalTransform { rotation, pelvis }))
}

impl CanonicalTransform {
    /// Maps a canonical sequence of the same length back to input coordinates.
    pub fn invert(&self, canonical: &MotionSequence, up: Option<Vector3<f64>>) -> Result<MotionSequence> {
        if canonical.len() != self.pelvis.len() {
            return Err(Error::Shape(format!(
                "transform covers {} frames, sequence has {}",
                self.pelvis.len(),
                canonical.len()
            )));
        }
        let rt = self.rotation.transpose();
        let frames = canonical
            .frames
            .iter()
            .zip(&self.pelvis)
            .map(|(f, p)| f.iter().map(|j| rt * j + p).collect())
            .collect();
        Ok(MotionSequence {
            frames,
            fps: canonical.fps,
            uncertainty: canonical.uncertainty.clone(),
            up,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::WHOLE_BODY_JOINTS;

    fn toy(len: usize) -> MotionSequence {
        let frames = (0..len)
            .map(|t| {
                let s = t as f64 * 0.1;
                (0..WHOLE_BODY_JOINTS)
                    .map(|j| {
                        let base = Vector3::new((j as f64 * 0.7).sin() * 0.4, j as f64 * 0.03, (j as f64 * 1.3).cos() * 0.2);
                        match j {
                            R_HIP => Vector3::new(0.4 + s, 1.0, 2.0 + 0.1 * s),
                            L_HIP => Vector3::new(0.4 + s - 0.12, 1.0, 2.0 + 0.1 * s - 0.1),
                            _ => base + Vector3::new(s, 1.0, 2.0),
                        }
                    })
                    .collect()
            })
            .collect();
        MotionSequence::new(frames, 30.0).unwrap()
    }

    fn max_diff(a: &MotionSequence, b: &MotionSequence) -> f64 {
        a.frames
            .iter()
            .flatten()
            .zip(b.frames.iter().flatten())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn pelvis_at_origin_and_facing_forward() {
        let (c, _) = canonicalize(&toy(5)).unwrap();
        let mut line = Vector3::zeros();
        for f in &c.frames {
            assert!(((f[L_HIP] + f[R_HIP]) * 0.5).norm() < 1e-12);
            line += f[L_HIP] - f[R_HIP];
        }
        let facing = line.cross(&Vector3::y());
        assert!(facing.z > 0.0 && facing.x.abs() < 1e-12);
    }

    #[test]
    fn idempotent_and_invertible() {
        let seq = toy(6);
        let (c, tf) = canonicalize(&seq).unwrap();
        let (cc, _) = canonicalize(&c).unwrap();
        assert!(max_diff(&c, &cc) < 1e-9);
        let back = tf.invert(&c, None).unwrap();
        assert!(max_diff(&back, &seq) < 1e-12);
    }

    #[test]
    fn invariant_to_yaw_and_translation() {
        let seq = toy(4);
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), 37f64.to_radians());
        let moved = MotionSequence {
            frames: seq
                .frames
                .iter()
                .map(|f| f.iter().map(|p| r * p + Vector3::new(3.0, -1.0, 0.5)).collect())
                .collect(),
            ..seq.clone()
        };
        let (a, _) = canonicalize(&seq).unwrap();
        let (b, _) = canonicalize(&moved).unwrap();
        assert!(max_diff(&a, &b) < 1e-6);
    }

    #[test]
    fn tilted_up_axis_is_leveled() {
        let seq = toy(3);
        let tilt = Rotation3::from_euler_angles(1.0, 0.3, -0.4);
        let tilted = MotionSequence {
            frames: seq.frames.iter().map(|f| f.iter().map(|p| tilt * p).collect()).collect(),
            up: Some(tilt * Vector3::y()),
            ..seq.clone()
        };
        let (a, _) = canonicalize(&seq).unwrap();
        let (b, _) = canonicalize(&tilted).unwrap();
        assert!(max_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn coincident_hips_fail() {
        let mut seq = toy(3);
        seq.frames[1][L_HIP] = seq.frames[1][R_HIP];
        assert!(matches!(canonicalize(&seq), Err(Error::Geometry(_))));
    }
}
