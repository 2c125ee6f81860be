//! Polynomial omnidirectional (Scaramuzza-style) fisheye camera.
//!
//! The model is a pair of radial polynomials. The forward polynomial `f`
//! maps the elevation angle `rho = atan(z / sqrt(x^2 + y^2))` of a ray to an
//! image radius in pixels; the backward polynomial `f'` maps an image radius
//! back to the axial component of the viewing ray. Both are stored with
//! coefficients in ascending powers. Pixel coordinates are absolute; the
//! principal point is subtracted internally.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};

/// Full field of view assumed when a calibration does not declare one.
pub const DEFAULT_FOV_DEG: f64 = 190.0;

/// Number of radius samples used when fitting a synthetic backward polynomial.
const FIT_SAMPLES: usize = 512;

/// Tolerance a synthetic camera must meet before it is handed out.
const CONSTRUCTION_TOL_PX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisheyeCamera {
    pub width: u32,
    pub height: u32,
    pub cx: f64,
    pub cy: f64,
    /// `f(rho)`: elevation angle (rad) to image radius (px).
    pub forward_poly: Vec<f64>,
    /// `f'(rho')`: image radius (px) to axial ray component (px).
    pub backward_poly: Vec<f64>,
    /// Full field of view in degrees; projection rejects rays whose angle
    /// from the optical axis exceeds half of it.
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
}

fn default_fov() -> f64 {
    DEFAULT_FOV_DEG
}

/// Evaluates `sum_i coeffs[i] * arg^i` with Horner's scheme.
pub fn eval_poly(coeffs: &[f64], arg: f64) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::Domain("empty polynomial".into()));
    }
    if !arg.is_finite() {
        return Err(Error::Domain(format!("non-finite polynomial argument {arg}")));
    }
    Ok(horner(coeffs, arg))
}

#[inline]
fn horner(coeffs: &[f64], arg: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * arg + c)
}

/// Round-trip validation summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_err: f64,
    pub mean_err: f64,
    pub tol_px: f64,
    pub passed: bool,
    /// Invariant violations found before the round trip was attempted.
    pub violations: Vec<String>,
}

impl FisheyeCamera {
    /// Builds a camera and checks its structural invariants.
    pub fn new(
        width: u32,
        height: u32,
        cx: f64,
        cy: f64,
        forward_poly: Vec<f64>,
        backward_poly: Vec<f64>,
        fov_deg: f64,
    ) -> Result<Self> {
        let cam = FisheyeCamera {
            width,
            height,
            cx,
            cy,
            forward_poly,
            backward_poly,
            fov_deg,
        };
        let violations = cam.invariant_violations();
        if violations.is_empty() {
            Ok(cam)
        } else {
            Err(Error::InvalidCamera(violations.join("; ")))
        }
    }

    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.width == 0 || self.height == 0 {
            out.push(format!("image size {}x{} must be positive", self.width, self.height));
        }
        if self.forward_poly.is_empty() {
            out.push("forward polynomial is empty".into());
        }
        if self.backward_poly.is_empty() {
            out.push("backward polynomial is empty".into());
        } else if !(self.backward_poly[0] > 0.0) {
            out.push(format!("f'(0) = {} must be > 0", self.backward_poly[0]));
        }
        let all_finite = self
            .forward_poly
            .iter()
            .chain(&self.backward_poly)
            .chain([&self.cx, &self.cy])
            .all(|v| v.is_finite());
        if !all_finite {
            out.push("non-finite camera parameter".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 360.0) {
            out.push(format!("fov_deg {} outside (0, 360)", self.fov_deg));
        }
        out
    }

    /// Largest admissible angle between a ray and the optical axis (rad).
    pub fn max_incidence(&self) -> f64 {
        self.fov_deg.to_radians() / 2.0
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    /// Projects a camera-frame point to absolute pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !point.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite point".into()));
        }
        let r = point.x.hypot(point.y);
        if r == 0.0 && point.z == 0.0 {
            return Err(Error::Domain("cannot project the camera origin".into()));
        }
        let rho = point.z.atan2(r);
        if FRAC_PI_2 - rho > self.max_incidence() {
            return Err(Error::OutOfFov { rho });
        }
        if r == 0.0 {
            return Ok(self.principal_point());
        }
        let radius = horner(&self.forward_poly, rho);
        Ok(Vector2::new(
            self.cx + radius * point.x / r,
            self.cy + radius * point.y / r,
        ))
    }

    /// Back-projects a pixel to the 3D point at Euclidean distance `distance`.
    pub fn unproject(&self, pixel: &Vector2<f64>, distance: f64) -> Result<Vector3<f64>> {
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(Error::Domain(format!("distance {distance} must be > 0")));
        }
        if !pixel.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite pixel".into()));
        }
        Ok(self.ray(pixel) * distance)
    }

    /// Unit viewing ray through a pixel.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let u = pixel.x - self.cx;
        let v = pixel.y - self.cy;
        let axial = horner(&self.backward_poly, u.hypot(v));
        Vector3::new(u, v, axial).normalize()
    }

    /// Angle between a ray and the optical axis.
    pub fn incidence(point: &Vector3<f64>) -> f64 {
        point.x.hypot(point.y).atan2(point.z)
    }

    pub fn in_fov(&self, point: &Vector3<f64>) -> bool {
        Self::incidence(point) <= self.max_incidence()
    }

    /// Projects, unprojects at unit distance and reprojects `samples`
    /// quasi-uniform in-FOV directions.
    pub fn validate(&self, samples: usize, tol_px: f64) -> ValidationReport {
        let violations = self.invariant_violations();
        if !violations.is_empty() || samples == 0 {
            let mut violations = violations;
            if samples == 0 {
                violations.push("at least one sample is required".into());
            }
            return ValidationReport {
                samples,
                max_err: f64::INFINITY,
                mean_err: f64::INFINITY,
                tol_px,
                passed: false,
                violations,
            };
        }
        let mut max_err: f64 = 0.0;
        let mut sum = 0.0;
        for dir in fov_directions(samples, self.max_incidence()) {
            let err = self
                .project(&dir)
                .and_then(|px| {
                    let back = self.unproject(&px, 1.0)?;
                    Ok((self.project(&back)? - px).norm())
                })
                .unwrap_or(f64::INFINITY);
            max_err = max_err.max(err);
            sum += err;
        }
        let mean_err = sum / samples as f64;
        ValidationReport {
            samples,
            max_err,
            mean_err,
            tol_px,
            passed: max_err <= tol_px,
            violations,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: FisheyeCamera = serde_json::from_str(text)?;
        FisheyeCamera::new(
            raw.width,
            raw.height,
            raw.cx,
            raw.cy,
            raw.forward_poly,
            raw.backward_poly,
            raw.fov_deg,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = binio::read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{}: calibration is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, self.to_json().as_bytes())
    }
}

/// Quasi-uniform directions on the spherical cap within `max_incidence` of
/// the optical axis (a Fibonacci lattice in `cos(theta)`). The first
/// direction is always the optical axis.
pub fn fov_directions(n: usize, max_incidence: f64) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let cos_min = max_incidence.cos();
    (0..n)
        .map(|k| {
            let s = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            let cos_t = 1.0 - s * (1.0 - cos_min);
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
        })
        .collect()
}

/// Synthetic equidistant fisheye (`r = f_c * theta`) of `size x size` pixels.
///
/// The forward polynomial is exact. The backward polynomial is a least
/// squares fit of `r / tan(r / f_c)`. The covered field of view reaches
/// 5 degrees past the image corner and never drops below 190 degrees.
pub fn make_equidistant_camera(focal: f64, size: u32, fit_degree: usize) -> Result<FisheyeCamera> {
    if !(focal > 0.0) || !focal.is_finite() {
        return Err(Error::Config(format!("focal length {focal} must be > 0")));
    }
    if size == 0 {
        return Err(Error::Config("image size must be > 0".into()));
    }
    if fit_degree < 1 {
        return Err(Error::Config("fit degree must be >= 1".into()));
    }
    let half = size as f64 / 2.0;
    let corner_incidence = (half * std::f64::consts::SQRT_2) / focal;
    let max_incidence = (corner_incidence + 5f64.to_radians()).max(95f64.to_radians());
    let r_max = focal * max_incidence;

    let radii: Vec<f64> = (0..FIT_SAMPLES)
        .map(|k| r_max * k as f64 / (FIT_SAMPLES - 1) as f64)
        .collect();
    let target = |r: f64| {
        if r == 0.0 {
            focal
        } else {
            r / (r / focal).tan()
        }
    };
    // Fit in the scaled variable r / r_max for conditioning.
    let cols = fit_degree + 1;
    let vander = DMatrix::from_fn(FIT_SAMPLES, cols, |i, j| (radii[i] / r_max).powi(j as i32));
    let rhs = DVector::from_iterator(FIT_SAMPLES, radii.iter().map(|&r| target(r)));
    let scaled = vander
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Construction(format!("least squares failed: {e}")))?;
    let backward_poly: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(j, c)| c / r_max.powi(j as i32))
        .collect();

    let cam = FisheyeCamera::new(
        size,
        size,
        half,
        half,
        vec![focal * FRAC_PI_2, -focal],
        backward_poly,
        2.0 * max_incidence.to_degrees(),
    )
    .map_err(|e| Error::Construction(e.to_string()))?;
    let report = cam.validate(1000, CONSTRUCTION_TOL_PX);
    if !report.passed {
        return Err(Error::Construction(format!(
            "degree-{fit_degree} backward fit leaves {:.3} px round-trip error (bound {CONSTRUCTION_TOL_PX} px)",
            report.max_err
        )));
    }
    Ok(cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    fn exact_equidistant(focal: f64) -> FisheyeCamera {
        // Only the forward polynomial matters for projection tests.
        FisheyeCamera::new(256, 256, 128.0, 128.0, vec![focal * FRAC_PI_2, -focal], vec![focal], 190.0)
            .unwrap()
    }

    #[test]
    fn poly_examples() {
        assert_eq!(eval_poly(&[5.0], 3.0).unwrap(), 5.0);
        assert_eq!(eval_poly(&[0.0, 1.0], 2.5).unwrap(), 2.5);
        let v = eval_poly(&[157.0796, -100.0], FRAC_PI_4).unwrap();
        assert!((v - 78.5398).abs() < 1e-4, "{v}");
        assert!(matches!(eval_poly(&[1.0], f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(eval_poly(&[], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn project_examples() {
        let cam = exact_equidistant(100.0);
        assert_eq!(cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(128.0, 128.0));
        let p = cam.project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.x, 128.0 + 100.0 * FRAC_PI_4, epsilon = 1e-9);
        assert_relative_eq!(p.y, 128.0, epsilon = 1e-12);
        let p = cam.project(&Vector3::new(0.0, -1.0, 1.0)).unwrap();
        assert_relative_eq!(p.x, 128.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 128.0 - 100.0 * FRAC_PI_4, epsilon = 1e-9);
    }

    #[test]
    fn project_errors() {
        let cam = exact_equidistant(100.0);
        assert!(matches!(cam.project(&Vector3::zeros()), Err(Error::Domain(_))));
        // 120 degrees off axis, beyond the 95 degree bound.
        let theta: f64 = 120f64.to_radians();
        let p = Vector3::new(theta.sin(), 0.0, theta.cos());
        match cam.project(&p) {
            Err(Error::OutOfFov { rho }) => assert_relative_eq!(rho, FRAC_PI_2 - theta, epsilon = 1e-12),
            other => panic!("expected out-of-FOV, got {other:?}"),
        }
    }

    #[test]
    fn unproject_examples() {
        let cam = make_equidistant_camera(100.0, 256, 6).unwrap();
        let p = cam.unproject(&Vector2::new(128.0, 128.0), 2.0).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);

        let p = cam.unproject(&Vector2::new(128.0 + 100.0 * FRAC_PI_4, 128.0), 2f64.sqrt()).unwrap();
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-4);

        let p = cam.unproject(&Vector2::new(3.0, 250.0), 1.0).unwrap();
        assert_relative_eq!(p.norm(), 1.0, epsilon = 1e-12);

        assert!(matches!(cam.unproject(&Vector2::new(1.0, 1.0), 0.0), Err(Error::Domain(_))));
        assert!(matches!(cam.unproject(&Vector2::new(1.0, 1.0), -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn equidistant_construction() {
        let cam = make_equidistant_camera(100.0, 256, 6).unwrap();
        assert_eq!(cam.forward_poly, vec![100.0 * FRAC_PI_2, -100.0]);
        assert_eq!(cam.forward_poly[1], -100.0);
        assert!((cam.backward_poly[0] - 100.0).abs() < 0.05, "{}", cam.backward_poly[0]);
        assert!(cam.validate(1000, 0.1).passed);
        assert!(cam.fov_deg > 2.0 * 103.7);

        assert!(matches!(make_equidistant_camera(100.0, 256, 1), Err(Error::Construction(_))));
        assert!(matches!(make_equidistant_camera(-1.0, 256, 6), Err(Error::Config(_))));
    }

    #[test]
    fn validation_reports() {
        let mut cam = make_equidistant_camera(100.0, 256, 6).unwrap();
        let r = cam.validate(1, 0.0);
        assert_eq!(r.max_err, 0.0);
        assert!(r.passed);

        cam.backward_poly[0] = -1.0;
        let r = cam.validate(10, 0.5);
        assert!(!r.passed);
        assert!(r.violations.iter().any(|v| v.contains("f'(0)")));
        assert!(FisheyeCamera::from_json(&cam.to_json()).is_err());
    }

    #[test]
    fn fov_directions_cover_cap() {
        let dirs = fov_directions(500, 1.5);
        assert_eq!(dirs[0], Vector3::new(0.0, 0.0, 1.0));
        let max = dirs.iter().map(FisheyeCamera::incidence).fold(0.0, f64::max);
        assert_relative_eq!(max, 1.5, epsilon = 1e-12);
        assert!(dirs.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn json_roundtrip_and_extra_keys() {
        let cam = make_equidistant_camera(80.0, 200, 6).unwrap();
        assert_eq!(FisheyeCamera::from_json(&cam.to_json()).unwrap(), cam);

        let text = r#"{"width":10,"height":10,"cx":5,"cy":5,"forward_poly":[1.0],
                       "backward_poly":[2.0],"fov_deg":180,"vendor":"acme"}"#;
        assert_eq!(FisheyeCamera::from_json(text).unwrap().fov_deg, 180.0);
        let missing = r#"{"width":10,"height":10,"cx":5,"forward_poly":[1.0],"backward_poly":[2.0]}"#;
        assert!(FisheyeCamera::from_json(missing).is_err());
        let no_fov = r#"{"width":10,"height":10,"cx":5,"cy":5,"forward_poly":[1.0],"backward_poly":[2.0]}"#;
        assert_eq!(FisheyeCamera::from_json(no_fov).unwrap().fov_deg, DEFAULT_FOV_DEG);
    }

    #[test]
    fn radial_symmetry_quarter_turn() {
        let cam = make_equidistant_camera(100.0, 256, 6).unwrap();
        let p = Vector3::new(0.3, 0.1, 0.8);
        let q = Vector3::new(-0.1, 0.3, 0.8);
        let a = cam.project(&p).unwrap() - cam.principal_point();
        let b = cam.project(&q).unwrap() - cam.principal_point();
        assert_relative_eq!(b, Vector2::new(-a.y, a.x), epsilon = 1e-9);
    }
}
