//! Pose error metrics. Inputs are in meters, results in millimeters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{ReferenceSkeleton, SkeletonLayout};

const MM: f64 = 1000.0;

/// Similarity (or rigid) transform taking `pred` onto `gt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: Option<f64>,
    /// Mean per-joint distance after alignment, in millimeters.
    pub residual_mm: f64,
}

impl AlignmentResult {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale.unwrap_or(1.0) + self.translation
    }
}

fn check_pair(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} joints, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("no joints to compare".into()));
    }
    Ok(())
}

pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(mean_distance(pred.iter().copied(), gt) * MM)
}

fn mean_distance(pred: impl Iterator<Item = Vector3<f64>>, gt: &[Vector3<f64>]) -> f64 {
    pred.zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / gt.len() as f64
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

/// Least-squares alignment from the SVD of the cross-covariance, with the
/// smallest singular direction flipped when needed so the result is never a
/// reflection.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<AlignmentResult> {
    check_pair(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::Alignment(format!("need at least 3 joints, got {}", pred.len())));
    }
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let x = p - mu_p;
        let y = g - mu_g;
        cross += y * x.transpose();
        scatter += x * x.transpose();
        var_p += x.norm_squared();
    }
    let spread = scatter.symmetric_eigen().eigenvalues;
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Alignment("prediction is collinear or coincident".into()));
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        Some(trace / var_p)
    } else {
        None
    };
    let s = scale.unwrap_or(1.0);
    let translation = mu_g - rotation * mu_p * s;
    let mut out = AlignmentResult {
        rotation,
        translation,
        scale,
        residual_mm: 0.0,
    };
    out.residual_mm = mean_distance(pred.iter().map(|p| out.apply(p)), gt) * MM;
    Ok(out)
}

pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<f64> {
    Ok(procrustes_align(pred, gt, with_scale)?.residual_mm)
}

/// Re-poses a skeleton so every bone has the reference length while keeping
/// its direction. The root point stays where it is.
pub fn normalize_bones(pose: &[Vector3<f64>], reference: &ReferenceSkeleton) -> Result<Vec<Vector3<f64>>> {
    let layout = &reference.layout;
    if pose.len() != layout.len() {
        return Err(Error::Shape(format!(
            "pose has {} joints, skeleton {}",
            pose.len(),
            layout.len()
        )));
    }
    let root = layout.root_point(pose);
    let mut out = vec![Vector3::zeros(); pose.len()];
    for (i, parent) in layout.parents.iter().enumerate() {
        let (from_orig, from_new) = match parent {
            Some(p) => (pose[*p], out[*p]),
            None => (root, root),
        };
        let target = reference.lengths[i];
        if target == 0.0 {
            out[i] = from_new;
            continue;
        }
        let bone = pose[i] - from_orig;
        let len = bone.norm();
        if len < 1e-12 {
            return Err(Error::Metric(format!("zero-length bone at joint `{}`", layout.names[i])));
        }
        out[i] = from_new + bone * (target / len);
    }
    Ok(out)
}

pub fn ba_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], reference: &ReferenceSkeleton) -> Result<f64> {
    check_pair(pred, gt)?;
    let p = normalize_bones(pred, reference)?;
    let g = normalize_bones(gt, reference)?;
    pa_mpjpe(&p, &g, true)
}

/// Hand errors after moving both wrists (index 0) to the origin.
pub fn hand_root_mpjpe(pred_hand: &[Vector3<f64>], gt_hand: &[Vector3<f64>]) -> Result<(f64, f64)> {
    check_pair(pred_hand, gt_hand)?;
    let p: Vec<_> = pred_hand.iter().map(|x| x - pred_hand[0]).collect();
    let g: Vec<_> = gt_hand.iter().map(|x| x - gt_hand[0]).collect();
    Ok((mpjpe(&p, &g)?, pa_mpjpe(&p, &g, true)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Similarity,
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Mpjpe,
    PaMpjpe,
    BaMpjpe,
}

/// Evaluation report written by `egomocap eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub value_mm: f64,
    pub alignment: Alignment,
    pub n_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_frame: Option<Vec<f64>>,
}

/// Averages a per-frame metric over two equally long pose sequences.
pub fn evaluate_frames(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    metric: MetricKind,
    alignment: Alignment,
    reference: Option<&ReferenceSkeleton>,
) -> Result<EvalReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let with_scale = alignment == Alignment::Similarity;
    let fallback;
    let reference = match reference {
        Some(r) => r,
        None => {
            fallback = ReferenceSkeleton::whole_body();
            &fallback
        }
    };
    let per_frame = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| match metric {
            MetricKind::Mpjpe => mpjpe(p, g),
            MetricKind::PaMpjpe => pa_mpjpe(p, g, with_scale),
            MetricKind::BaMpjpe => {
                check_pair(p, g)?;
                let pn = normalize_bones(p, reference)?;
                let gn = normalize_bones(g, reference)?;
                pa_mpjpe(&pn, &gn, with_scale)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        metric,
        value_mm: per_frame.iter().sum::<f64>() / per_frame.len() as f64,
        alignment,
        n_frames: per_frame.len(),
        per_frame: Some(per_frame),
    })
}

/// Restricts a whole-body layout evaluation to the body joints.
pub fn body_only(frames: &[Vec<Vector3<f64>>]) -> Vec<Vec<Vector3<f64>>> {
    let n = SkeletonLayout::body().len();
    frames.iter().map(|f| f[..n].to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5)))
            .collect()
    }

    #[test]
    fn mpjpe_examples() {
        let a = cloud(10, 1);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        let b: Vec<_> = a.iter().map(|p| p + Vector3::new(0.003, 0.004, 0.0)).collect();
        assert!((mpjpe(&b, &a).unwrap() - 5.0).abs() < 1e-9);

        let c = cloud(10, 2);
        let mut oracle = 0.0;
        for i in 0..10 {
            let d = a[i] - c[i];
            oracle += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        }
        assert!((mpjpe(&a, &c).unwrap() - oracle * 100.0).abs() < 1e-9);
        assert!(matches!(mpjpe(&a, &c[..9]), Err(Error::Shape(_))));
    }

    #[test]
    fn procrustes_recovers_exact_similarity() {
        let a = cloud(12, 3);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let gt: Vec<_> = a.iter().map(|p| rz * p + Vector3::new(5.0, 5.0, 5.0)).collect();
        let al = procrustes_align(&a, &gt, true).unwrap();
        assert!(al.residual_mm < 1e-9);
        assert!((al.rotation - rz.matrix()).abs().max() < 1e-9);

        let gt: Vec<_> = a.iter().map(|p| p * 2.0).collect();
        let al = procrustes_align(&a, &gt, true).unwrap();
        assert!(al.residual_mm < 1e-9);
        assert!((al.scale.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_alignment_of_scaled_copy_matches_closed_form() {
        let a = cloud(12, 4);
        let gt: Vec<_> = a.iter().map(|p| p * 2.0).collect();
        let al = procrustes_align(&a, &gt, false).unwrap();
        // The best rigid fit of 2x onto x is the identity after centering, so
        // the residual is the mean distance of the points to their centroid.
        let mu = centroid(&a);
        let oracle = a.iter().map(|p| (p - mu).norm()).sum::<f64>() / a.len() as f64 * 1000.0;
        assert!(al.residual_mm > 0.0);
        assert!((al.residual_mm - oracle).abs() < 1e-6);
        assert!((al.rotation - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn procrustes_never_reflects() {
        let a = cloud(8, 5);
        let mirrored: Vec<_> = a.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let al = procrustes_align(&a, &mirrored, true).unwrap();
        assert!((al.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(al.residual_mm > 0.0);
    }

    #[test]
    fn procrustes_rejects_degenerate_input() {
        let line: Vec<_> = (0..5).map(|k| Vector3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        assert!(matches!(procrustes_align(&line, &line, true), Err(Error::Alignment(_))));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(procrustes_align(&same, &same, false), Err(Error::Alignment(_))));
        assert!(procrustes_align(&line[..2], &line[..2], true).is_err());
    }

    #[test]
    fn pa_mpjpe_bounds() {
        let a = cloud(15, 6);
        assert!(pa_mpjpe(&a, &a, true).unwrap() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noisy: Vec<_> = a
            .iter()
            .map(|p| p + Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)))
            .collect();
        let ca: Vec<_> = a.iter().map(|p| p - centroid(&a)).collect();
        let cn: Vec<_> = noisy.iter().map(|p| p - centroid(&noisy)).collect();
        let root_centered = mpjpe(&cn, &ca).unwrap();
        assert!(pa_mpjpe(&noisy, &a, true).unwrap() <= root_centered + 1e-9);
        assert!(pa_mpjpe(&noisy, &a, false).unwrap() <= root_centered + 1e-9);
    }

    fn body_pose(seed: u64) -> Vec<Vector3<f64>> {
        let layout = SkeletonLayout::body();
        let reference = ReferenceSkeleton::body();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![Vector3::zeros(); layout.len()];
        let pelvis = Vector3::new(0.1, -0.8, 1.2);
        for (i, p) in layout.parents.iter().enumerate() {
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            out[i] = match p {
                Some(p) => out[*p] + dir * reference.lengths[i] * rng.random_range(0.8..1.2),
                None => pelvis + dir * reference.lengths[i],
            };
        }
        // Keep the pelvis at the hip midpoint.
        let hips = (out[7] + out[11]) / 2.0 - pelvis;
        out[7] -= hips;
        out[11] -= hips;
        out
    }

    /// Independent re-posing: explicit recursion from the root with the
    /// bone directions read from the original pose.
    fn repose_oracle(pose: &[Vector3<f64>], reference: &ReferenceSkeleton, joint: usize) -> Vector3<f64> {
        let layout = &reference.layout;
        let (orig_parent, new_parent) = match layout.parents[joint] {
            Some(p) => (pose[p], repose_oracle(pose, reference, p)),
            None => {
                let r = layout.root_point(pose);
                (r, r)
            }
        };
        let dir = (pose[joint] - orig_parent).normalize();
        new_parent + dir * reference.lengths[joint]
    }

    #[test]
    fn ba_mpjpe_examples() {
        let reference = ReferenceSkeleton::body();
        let gt = body_pose(8);
        assert!(ba_mpjpe(&gt, &gt, &reference).unwrap() < 1e-9);

        // Scale every bone by 1.3 from the root outward.
        let layout = &reference.layout;
        let root = layout.root_point(&gt);
        let mut scaled = vec![Vector3::zeros(); gt.len()];
        for (i, p) in layout.parents.iter().enumerate() {
            let (o, n) = match p {
                Some(p) => (gt[*p], scaled[*p]),
                None => (root, root),
            };
            scaled[i] = n + (gt[i] - o) * 1.3;
        }
        assert!(ba_mpjpe(&scaled, &gt, &reference).unwrap() < 1e-6);

        let pred = body_pose(9);
        let reposed = normalize_bones(&pred, &reference).unwrap();
        for j in 0..pred.len() {
            assert!((reposed[j] - repose_oracle(&pred, &reference, j)).norm() < 1e-12);
        }
        let oracle_p: Vec<_> = (0..pred.len()).map(|j| repose_oracle(&pred, &reference, j)).collect();
        let oracle_g: Vec<_> = (0..gt.len()).map(|j| repose_oracle(&gt, &reference, j)).collect();
        let want = pa_mpjpe(&oracle_p, &oracle_g, true).unwrap();
        assert!((ba_mpjpe(&pred, &gt, &reference).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ba_mpjpe_names_zero_bone() {
        let reference = ReferenceSkeleton::body();
        let mut pose = body_pose(10);
        pose[2] = pose[1];
        match ba_mpjpe(&pose, &body_pose(11), &reference) {
            Err(Error::Metric(msg)) => assert!(msg.contains("r_elbow")),
            other => panic!("expected metric error, got {other:?}"),
        }
    }

    #[test]
    fn hand_root_examples() {
        let hand = cloud(21, 12);
        let (a, b) = hand_root_mpjpe(&hand, &hand).unwrap();
        assert!(a == 0.0 && b < 1e-9);
        let moved: Vec<_> = hand.iter().map(|p| p + Vector3::new(0.2, -0.1, 0.05)).collect();
        let (a, b) = hand_root_mpjpe(&moved, &hand).unwrap();
        assert!(a < 1e-9 && b < 1e-9);
        let r = Rotation3::from_euler_angles(0.4, 0.2, -0.3);
        let rotated: Vec<_> = hand.iter().map(|p| r * p).collect();
        let (a, b) = hand_root_mpjpe(&rotated, &hand).unwrap();
        assert!(a > 0.0 && b < 1e-6);
    }

    #[test]
    fn report_serializes_with_field_names() {
        let a = vec![cloud(57, 13), cloud(57, 14)];
        let r = evaluate_frames(&a, &a, MetricKind::PaMpjpe, Alignment::Rigid, None).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"metric\":\"pa-mpjpe\""));
        assert!(text.contains("\"alignment\":\"rigid\""));
        assert_eq!(r.n_frames, 2);
    }
}
