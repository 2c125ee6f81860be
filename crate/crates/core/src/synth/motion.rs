//! Procedural whole-body motion built by forward kinematics.
//!
//! Body frame: +x toward the left hip, +y up, +z forward. Every joint
//! angle is a smooth function of time, so trajectories are C1 and bone
//! lengths are fixed per sequence.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::skeleton::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionFamily {
    Walk,
    Reach,
    Wave,
    Hand,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 4] = [MotionFamily::Walk, MotionFamily::Reach, MotionFamily::Wave, MotionFamily::Hand];

    pub fn name(&self) -> &'static str {
        match self {
            MotionFamily::Walk => "walk",
            MotionFamily::Reach => "reach",
            MotionFamily::Wave => "wave",
            MotionFamily::Hand => "hand",
        }
    }
}

impl fmt::Display for MotionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub n_sequences: usize,
    pub length: usize,
    pub fps: f64,
    pub seed: u64,
    pub families: Vec<MotionFamily>,
    /// Bound on any joint's speed in m/s.
    pub v_max: f64,
}

impl MotionSpec {
    pub fn new(n_sequences: usize, seed: u64) -> Self {
        MotionSpec {
            n_sequences,
            length: 196,
            fps: 30.0,
            seed,
            families: MotionFamily::ALL.to_vec(),
            v_max: DEFAULT_V_MAX,
        }
    }
}

pub const DEFAULT_V_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMotion {
    pub family: MotionFamily,
    pub seed: u64,
    pub sequence: MotionSequence,
}

/// Seed of sequence `index` derived from the spec seed.
pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn gen_motion(spec: &MotionSpec) -> Result<Vec<GeneratedMotion>> {
    if spec.length < 2 {
        return Err(Error::Config(format!("sequence length {} must be >= 2", spec.length)));
    }
    if spec.families.is_empty() {
        return Err(Error::Config("no motion families selected".into()));
    }
    if !(spec.fps > 0.0) || !(spec.v_max > 0.0) {
        return Err(Error::Config("fps and speed bound must be positive".into()));
    }
    (0..spec.n_sequences)
        .map(|i| {
            let family = spec.families[i % spec.families.len()];
            let seed = sequence_seed(spec.seed, i);
            let params = Params::sample(family, &mut ChaCha8Rng::seed_from_u64(seed));
            let sequence = params.sequence(spec.length, spec.fps, spec.v_max)?;
            Ok(GeneratedMotion { family, seed, sequence })
        })
        .collect()
}

fn rx(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix()
}

fn ry(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix()
}

fn rz(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix()
}

/// Smooth raised cosine in [0, 1].
fn bump(x: f64) -> f64 {
    0.5 - 0.5 * x.cos()
}

/// Joint angles of one frame.
#[derive(Debug, Clone, Copy, Default)]
struct Angles {
    heading: f64,
    lean: f64,
    side: f64,
    /// Per side (right, left): shoulder flexion, abduction, elbow flexion,
    /// wrist twist, hip flexion, knee flexion, ankle.
    shoulder_flex: [f64; 2],
    shoulder_abd: [f64; 2],
    elbow: [f64; 2],
    twist: [f64; 2],
    hip: [f64; 2],
    knee: [f64; 2],
    ankle: [f64; 2],
    /// Finger curl per side and finger.
    curl: [[f64; 5]; 2],
}

#[derive(Debug, Clone)]
struct Params {
    family: MotionFamily,
    body_scale: f64,
    hand_scale: f64,
    origin: Vector3<f64>,
    heading: f64,
    turn_rate: f64,
    speed: f64,
    /// Main rate in rad/s.
    omega: f64,
    phase: f64,
    amp: [f64; 4],
    side: usize,
    finger_phase: [f64; 5],
    finger_rate: [f64; 5],
}

impl Params {
    fn sample(family: MotionFamily, rng: &mut ChaCha8Rng) -> Self {
        let mut finger_phase = [0.0; 5];
        let mut finger_rate = [0.0; 5];
        for f in 0..5 {
            finger_phase[f] = rng.random_range(0.0..TAU);
            finger_rate[f] = rng.random_range(2.0..5.0);
        }
        let omega = match family {
            MotionFamily::Walk => rng.random_range(5.0..7.5),
            MotionFamily::Reach => rng.random_range(1.5..3.0),
            MotionFamily::Wave => rng.random_range(7.0..10.0),
            MotionFamily::Hand => rng.random_range(2.0..4.0),
        };
        Params {
            family,
            body_scale: rng.random_range(0.9..1.1),
            hand_scale: rng.random_range(0.9..1.1),
            origin: Vector3::new(rng.random_range(-2.0..2.0), 0.0, rng.random_range(-2.0..2.0)),
            heading: rng.random_range(-PI..PI),
            turn_rate: rng.random_range(-0.3..0.3),
            speed: rng.random_range(0.8..1.5),
            omega,
            phase: rng.random_range(0.0..TAU),
            amp: [
                rng.random_range(0.6..1.0),
                rng.random_range(0.6..1.0),
                rng.random_range(0.6..1.0),
                rng.random_range(0.6..1.0),
            ],
            side: rng.random_range(0..2),
            finger_phase,
            finger_rate,
        }
    }

    fn angles(&self, t: f64) -> Angles {
        let mut a = Angles {
            heading: self.heading,
            ..Angles::default()
        };
        let ph = self.omega * t + self.phase;
        for s in 0..2 {
            a.elbow[s] = 0.25;
            a.shoulder_abd[s] = 0.1;
            a.knee[s] = 0.05;
            for f in 0..5 {
                a.curl[s][f] = 0.25 + 0.1 * (self.finger_rate[f] * 0.3 * t + self.finger_phase[f]).sin();
            }
        }
        let [a0, a1, a2, a3] = self.amp;
        let (act, rest) = (self.side, 1 - self.side);
        match self.family {
            MotionFamily::Walk => {
                a.heading = self.heading + self.turn_rate * t;
                a.lean = 0.08 * a0;
                for (s, sign) in [(0usize, 1.0), (1, -1.0)] {
                    let g = ph + if s == 0 { 0.0 } else { PI };
                    a.hip[s] = 0.45 * a1 * g.sin();
                    a.knee[s] = 0.05 + 0.9 * a2 * bump(g + 0.6);
                    a.ankle[s] = 0.2 * (g + 1.0).sin();
                    a.shoulder_flex[s] = -0.4 * a3 * g.sin();
                    a.elbow[s] = 0.35 + 0.25 * bump(g);
                    a.side = 0.03 * sign * ph.sin();
                }
            }
            MotionFamily::Reach => {
                let r = bump(ph);
                a.lean = 0.25 * a0 * r;
                a.shoulder_flex[act] = 0.2 + 1.5 * a1 * r;
                a.shoulder_abd[act] = 0.1 + 0.3 * a2 * r;
                a.elbow[act] = 1.5 - 1.3 * r;
                for f in 0..5 {
                    a.curl[act][f] = 0.2 + 0.7 * (1.0 - r);
                }
                a.shoulder_flex[rest] = 0.1 * (0.5 * ph).sin();
                a.hip = [0.1 * a3 * r; 2];
                a.knee = [0.05 + 0.2 * a3 * r; 2];
            }
            MotionFamily::Wave => {
                a.shoulder_flex[act] = 0.6 + 0.2 * a0;
                a.shoulder_abd[act] = 1.2 + 0.4 * a1;
                a.elbow[act] = 1.3 + 0.45 * a2 * ph.sin();
                a.twist[act] = 0.3 * (ph + 0.5).sin();
                for f in 0..5 {
                    a.curl[act][f] = 0.05;
                }
                a.side = 0.05 * a3 * (0.5 * ph).sin();
                a.shoulder_flex[rest] = 0.15 * (0.3 * ph).sin();
            }
            MotionFamily::Hand => {
                for s in 0..2 {
                    a.shoulder_flex[s] = 0.5 + 0.2 * a0;
                    a.shoulder_abd[s] = -0.1;
                    a.elbow[s] = 1.4 + 0.2 * (0.5 * ph + s as f64).sin();
                    a.twist[s] = 0.4 * a1 * (0.7 * ph + s as f64).sin();
                    for f in 0..5 {
                        a.curl[s][f] = 0.1 + 1.1 * a2 * bump(self.finger_rate[f] * t * 0.5 + self.finger_phase[f]);
                    }
                }
                a.lean = 0.15 * a3;
            }
        }
        a
    }

    fn root(&self, t: f64) -> Vector3<f64> {
        let h = 0.9 * self.body_scale;
        match self.family {
            MotionFamily::Walk => {
                // Closed-form integral of a constant-speed path with linearly
                // turning heading.
                let (p0, w) = (self.heading, self.turn_rate);
                let (dx, dz) = if w.abs() < 1e-9 {
                    (t * p0.sin(), t * p0.cos())
                } else {
                    ((p0.cos() - (p0 + w * t).cos()) / w, ((p0 + w * t).sin() - p0.sin()) / w)
                };
                let bob = 0.02 * (2.0 * (self.omega * t + self.phase)).cos();
                self.origin + Vector3::new(self.speed * dx, h + bob, self.speed * dz)
            }
            _ => self.origin + Vector3::new(0.0, h, 0.0),
        }
    }

    fn frame(&self, t: f64) -> Vec<Vector3<f64>> {
        let a = self.angles(t);
        let body = &ReferenceSkeleton::body().lengths;
        let hand = &ReferenceSkeleton::hand().lengths;
        let s = self.body_scale;
        let down = Vector3::new(0.0, -1.0, 0.0);
        let pelvis = self.root(t);
        let r_root = ry(a.heading);
        let r_torso = r_root * rx(a.lean) * rz(a.side);
        let mut j = vec![Vector3::zeros(); WHOLE_BODY_JOINTS];
        j[NECK] = pelvis + r_torso * Vector3::new(0.0, body[NECK] * s, 0.0);
        let sides = [
            (0usize, -1.0, R_SHOULDER, R_ELBOW, R_WRIST, R_HIP, R_KNEE, R_ANKLE, R_TOE, RIGHT_HAND),
            (1usize, 1.0, L_SHOULDER, L_ELBOW, L_WRIST, L_HIP, L_KNEE, L_ANKLE, L_TOE, LEFT_HAND),
        ];
        for (k, sign, sh, el, wr, hp, kn, an, to, hand0) in sides {
            j[sh] = j[NECK] + r_torso * Vector3::new(sign * body[sh] * s, 0.0, 0.0);
            let r_upper = r_torso * rx(-a.shoulder_flex[k]) * rz(sign * a.shoulder_abd[k]);
            j[el] = j[sh] + r_upper * down * (body[el] * s);
            let r_fore = r_upper * rx(-a.elbow[k]);
            j[wr] = j[el] + r_fore * down * (body[wr] * s);
            // Hand frame columns (fingers, back of hand, thumb side) in the
            // forearm frame; the right hand is the mirror image.
            let mount = Matrix3::from_columns(&[down, Vector3::new(sign, 0.0, 0.0), Vector3::new(0.0, 0.0, sign)]);
            let r_hand = r_fore * ry(a.twist[k]) * mount;
            let local = curled_hand(&a.curl[k], hand, self.hand_scale, k == 1);
            for (i, p) in local.iter().enumerate() {
                j[hand0 + i] = j[wr] + r_hand * p;
            }

            j[hp] = pelvis + r_root * Vector3::new(sign * body[hp] * s, 0.0, 0.0);
            let r_thigh = r_root * rx(-a.hip[k]);
            j[kn] = j[hp] + r_thigh * down * (body[kn] * s);
            let r_shin = r_thigh * rx(a.knee[k]);
            j[an] = j[kn] + r_shin * down * (body[an] * s);
            let r_foot = r_shin * rx(-a.ankle[k]);
            j[to] = j[an] + r_foot * Vector3::new(0.0, 0.0, body[to] * s);
        }
        j
    }

    fn sequence(&self, length: usize, fps: f64, v_max: f64) -> Result<MotionSequence> {
        let bound = v_max / fps;
        let mut rate = 1.0;
        loop {
            let frames: Vec<_> = (0..length).map(|f| self.frame(rate * f as f64 / fps)).collect();
            let step = max_step(&frames);
            if step <= bound {
                return MotionSequence::new(frames, fps);
            }
            if rate < 1e-6 {
                return Err(Error::Config(format!("cannot meet speed bound {v_max} m/s")));
            }
            // Slow the clock until the fastest joint respects the bound.
            rate *= 0.95 * bound / step;
        }
    }
}

/// Largest frame-to-frame joint displacement.
pub fn max_step(frames: &[Vec<Vector3<f64>>]) -> f64 {
    frames
        .windows(2)
        .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).norm()))
        .fold(0.0, f64::max)
}

/// Hand with per-finger curl, wrist at the origin of the hand frame.
fn curled_hand(curl: &[f64; 5], lengths: &[f64], scale: f64, left: bool) -> Vec<Vector3<f64>> {
    let base = finger_base_directions();
    let chain = finger_chain_directions();
    let mut out = vec![Vector3::zeros()];
    for f in 0..5 {
        let first = 1 + 4 * f;
        let axis = Unit::new_normalize(Vector3::y().cross(&chain[f]));
        let mut p = base[f] * lengths[first] * scale;
        out.push(p);
        for k in 1..4 {
            let r = Rotation3::from_axis_angle(&axis, curl[f] * k as f64);
            p += r * chain[f] * lengths[first + k] * scale;
            out.push(p);
        }
    }
    if !left {
        for p in &mut out {
            p.z = -p.z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::canonicalize;

    fn bones(frame: &[Vector3<f64>]) -> Vec<f64> {
        let layout = SkeletonLayout::whole_body();
        layout
            .parents
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                Some(p) => (frame[i] - frame[*p]).norm(),
                None => (frame[i] - layout.root_point(frame)).norm(),
            })
            .collect()
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = MotionSpec {
            length: 20,
            ..MotionSpec::new(4, 5)
        };
        assert_eq!(gen_motion(&spec).unwrap(), gen_motion(&spec).unwrap());
        let other = MotionSpec { seed: 6, ..spec.clone() };
        assert_ne!(gen_motion(&spec).unwrap()[0].sequence, gen_motion(&other).unwrap()[0].sequence);
    }

    #[test]
    fn bone_lengths_constant_and_speed_bounded() {
        let spec = MotionSpec {
            length: 60,
            ..MotionSpec::new(8, 1)
        };
        for g in gen_motion(&spec).unwrap() {
            let first = bones(&g.sequence.frames[0]);
            for f in &g.sequence.frames {
                for (a, b) in bones(f).iter().zip(&first) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
            assert!(max_step(&g.sequence.frames) <= spec.v_max / spec.fps + 1e-12);
            let (c, _) = canonicalize(&g.sequence).unwrap();
            let (cc, _) = canonicalize(&c).unwrap();
            for (p, q) in c.frames.iter().flatten().zip(cc.frames.iter().flatten()) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn hands_hang_off_wrists() {
        let g = &gen_motion(&MotionSpec {
            length: 3,
            ..MotionSpec::new(4, 2)
        })
        .unwrap()[3];
        let f = &g.sequence.frames[0];
        assert_eq!(f[LEFT_HAND], f[L_WRIST]);
        assert_eq!(f[RIGHT_HAND], f[R_WRIST]);
        // Left thumb on the +x side of the left hand's fingers, right thumb
        // mirrored.
        let flat = curled_hand(&[0.0; 5], &ReferenceSkeleton::hand().lengths, 1.0, true);
        for (a, b) in flat.iter().zip(rest_hand(true)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn family_names_parse() {
        assert_eq!("wave".parse::<MotionFamily>().unwrap(), MotionFamily::Wave);
        assert!(matches!("jump".parse::<MotionFamily>(), Err(Error::UnknownFamily(_))));
        let spec = MotionSpec {
            length: 1,
            ..MotionSpec::new(1, 0)
        };
        assert!(gen_motion(&spec).is_err());
    }
}
