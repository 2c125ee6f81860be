//! Pixel-aligned 3D heatmap decoding.
//!
//! A heatmap holds one `D x H x W` score volume per joint. The two spatial
//! axes are aligned with the fisheye image; the depth axis bins the distance
//! from the camera center linearly over `depth_range`. Decoding takes the
//! soft-argmax of each volume, maps voxel coordinates to pixels and meters
//! and back-projects through the camera. Per-joint uncertainty is read off a
//! Gaussian-smoothed copy of the volume at the decoded location.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::camera::FisheyeCamera;
use crate::error::{Error, Result};

pub const HEATMAP_MAGIC: &[u8; 4] = b"EGHM";
pub const HEATMAP_VERSION: u32 = 1;

/// Uncertainty assigned when the heatmap value at the prediction is zero.
pub const MAX_UNCERTAINTY: f64 = 0.05;

/// Default softmax temperature for decoding. Scores are expected in `[0, 1]`
/// with the joint peak near 1; this temperature turns them into a sharply
/// peaked distribution.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// Default smoothing applied before reading uncertainty.
pub const DEFAULT_SMOOTH_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap3D {
    pub joints: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `(joint, d, h, w)`.
    pub values: Vec<f32>,
    pub depth_range: (f64, f64),
    pub image_height: usize,
    pub image_width: usize,
}

/// Continuous voxel coordinates `(w, h, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub w: f64,
    pub h: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedJoints {
    /// `(u, v)` pixels and distance in meters.
    pub uvd: Vec<[f64; 3]>,
    pub xyz: Vec<Vector3<f64>>,
    pub uncertainty: Vec<f64>,
    pub voxel: Vec<VoxelCoord>,
    /// `false` when the decoded ray lies outside the camera field of view.
    pub in_fov: Vec<bool>,
    /// `true` when the uncertainty lookup had to clamp to the volume border.
    pub clamped: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub temperature: f64,
    pub smooth_sigma: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            temperature: DEFAULT_TEMPERATURE,
            smooth_sigma: DEFAULT_SMOOTH_SIGMA,
        }
    }
}

impl Heatmap3D {
    pub fn zeros(
        joints: usize,
        dims: (usize, usize, usize),
        depth_range: (f64, f64),
        image_size: (usize, usize),
    ) -> Result<Self> {
        let (depth, height, width) = dims;
        let hm = Heatmap3D {
            joints,
            depth,
            height,
            width,
            values: vec![0.0; joints * depth * height * width],
            depth_range,
            image_height: image_size.0,
            image_width: image_size.1,
        };
        hm.check()?;
        Ok(hm)
    }

    pub fn check(&self) -> Result<()> {
        if self.joints == 0 {
            return Err(Error::Shape("heatmap needs at least one joint".into()));
        }
        if self.depth < 2 || self.height < 2 || self.width < 2 {
            return Err(Error::Shape(format!(
                "heatmap volume {}x{}x{} must be at least 2 per axis",
                self.depth, self.height, self.width
            )));
        }
        if !(self.depth_range.0 < self.depth_range.1) {
            return Err(Error::Shape(format!("empty depth range {:?}", self.depth_range)));
        }
        if self.values.len() != self.joints * self.volume_len() {
            return Err(Error::Shape(format!(
                "heatmap needs {} values, got {}",
                self.joints * self.volume_len(),
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("heatmap contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn volume_len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn volume(&self, joint: usize) -> &[f32] {
        let n = self.volume_len();
        &self.values[joint * n..(joint + 1) * n]
    }

    pub fn volume_mut(&mut self, joint: usize) -> &mut [f32] {
        let n = self.volume_len();
        &mut self.values[joint * n..(joint + 1) * n]
    }

    pub fn depth_bin(&self) -> f64 {
        (self.depth_range.1 - self.depth_range.0) / self.depth as f64
    }

    /// Voxel-center convention: index `k` covers `[k, k+1)` scaled to the
    /// target axis and maps to its midpoint.
    pub fn voxel_to_uvd(&self, c: &VoxelCoord) -> [f64; 3] {
        [
            (c.w + 0.5) * self.image_width as f64 / self.width as f64,
            (c.h + 0.5) * self.image_height as f64 / self.height as f64,
            self.depth_range.0 + (c.d + 0.5) * self.depth_bin(),
        ]
    }

    pub fn uvd_to_voxel(&self, uvd: &[f64; 3]) -> VoxelCoord {
        VoxelCoord {
            w: uvd[0] * self.width as f64 / self.image_width as f64 - 0.5,
            h: uvd[1] * self.height as f64 / self.image_height as f64 - 0.5,
            d: (uvd[2] - self.depth_range.0) / self.depth_bin() - 0.5,
        }
    }

    pub(crate) fn write_to(&self, w: &mut Writer) {
        w.bytes(HEATMAP_MAGIC);
        w.u32(HEATMAP_VERSION);
        for v in [
            self.joints,
            self.depth,
            self.height,
            self.width,
            self.image_height,
            self.image_width,
        ] {
            w.u32(v as u32);
        }
        w.f64(self.depth_range.0);
        w.f64(self.depth_range.1);
        w.f32s(&self.values);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.write_to(&mut w);
        w.into_inner()
    }

    pub(crate) fn read_from(r: &mut Reader) -> Result<Self> {
        r.header(HEATMAP_MAGIC, "heatmap", HEATMAP_VERSION)?;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [joints, depth, height, width, image_height, image_width] = dims;
        let depth_range = (r.f64()?, r.f64()?);
        let values = r.f32s(joints * depth * height * width)?;
        let hm = Heatmap3D {
            joints,
            depth,
            height,
            width,
            values,
            depth_range,
            image_height,
            image_width,
        };
        hm.check()?;
        Ok(hm)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let hm = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Format(format!("heatmap: {} trailing bytes", r.remaining())));
        }
        Ok(hm)
    }
}

/// Writes a sequence of heatmaps as back-to-back EGHM records.
pub fn save_heatmap_stream(path: &Path, frames: &[Heatmap3D]) -> Result<()> {
    let mut w = Writer::default();
    for hm in frames {
        hm.write_to(&mut w);
    }
    binio::write_file(path, &w.into_inner())
}

/// Reads one or more concatenated EGHM records.
pub fn load_heatmap_stream(path: &Path) -> Result<Vec<Heatmap3D>> {
    let bytes = binio::read_file(path)?;
    let mut r = Reader::new(&bytes);
    let mut out = Vec::new();
    while !r.is_empty() {
        out.push(Heatmap3D::read_from(&mut r)?);
    }
    if out.is_empty() {
        return Err(Error::Format(format!("{}: no heatmap records", path.display())));
    }
    Ok(out)
}

/// Expected `(w, h, d)` voxel index under `softmax(values / temperature)`.
pub fn soft_argmax(volume: &[f32], dims: (usize, usize, usize), temperature: f64) -> Result<VoxelCoord> {
    let (depth, height, width) = dims;
    if volume.len() != depth * height * width {
        return Err(Error::Shape(format!(
            "volume has {} values, dims {dims:?} need {}",
            volume.len(),
            depth * height * width
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature {temperature} must be > 0")));
    }
    let max = volume.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !max.is_finite() {
        return Err(Error::Degenerate("volume has no finite maximum".into()));
    }
    let (mut z, mut sw, mut sh, mut sd) = (0.0, 0.0, 0.0, 0.0);
    let mut idx = 0;
    for d in 0..depth {
        let mut zd = 0.0;
        for h in 0..height {
            let mut zh = 0.0;
            for w in 0..width {
                let p = ((volume[idx] as f64 - max) / temperature).exp();
                zh += p;
                sw += p * w as f64;
                idx += 1;
            }
            zd += zh;
            sh += zh * h as f64;
        }
        z += zd;
        sd += zd * d as f64;
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Degenerate("softmax normalizer vanished".into()));
    }
    Ok(VoxelCoord {
        w: sw / z,
        h: sh / z,
        d: sd / z,
    })
}

/// Normalized sampled Gaussian truncated at `ceil(3 sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Convolves `data` along one axis with zero padding, `stride` being the
/// distance between successive elements along that axis.
fn convolve_axis(data: &mut [f64], len: usize, stride: usize, kernel: &[f64], scratch: &mut Vec<f64>) {
    let radius = kernel.len() / 2;
    let outer = stride * len;
    for block in data.chunks_exact_mut(outer) {
        scratch.clear();
        scratch.extend_from_slice(block);
        if stride == 1 {
            for (i, o) in block.iter_mut().enumerate() {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                *o = (lo..=hi).map(|j| kernel[j + radius - i] * scratch[j]).sum();
            }
            continue;
        }
        // Rows of `stride` contiguous values are combined whole, so the
        // inner loop vectorizes for every axis but the fastest one.
        for i in 0..len {
            let out = &mut block[i * stride..(i + 1) * stride];
            out.fill(0.0);
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(len - 1);
            for j in lo..=hi {
                let kv = kernel[j + radius - i];
                let row = &scratch[j * stride..(j + 1) * stride];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += kv * v;
                }
            }
        }
    }
}

/// Separable 3D Gaussian smoothing of every joint volume.
pub fn gaussian_smooth3d(heatmap: &Heatmap3D, sigma: f64) -> Result<Heatmap3D> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("smoothing sigma {sigma} must be > 0")));
    }
    let kernel = gaussian_kernel(sigma);
    let (depth, height, width) = heatmap.dims();
    let mut out = heatmap.clone();
    let mut buf = Vec::with_capacity(heatmap.volume_len());
    let mut scratch = Vec::new();
    for j in 0..heatmap.joints {
        buf.clear();
        buf.extend(heatmap.volume(j).iter().map(|&v| v as f64));
        convolve_axis(&mut buf, width, 1, &kernel, &mut scratch);
        convolve_axis(&mut buf, height, width, &kernel, &mut scratch);
        convolve_axis(&mut buf, depth, width * height, &kernel, &mut scratch);
        for (o, v) in out.volume_mut(j).iter_mut().zip(&buf) {
            *o = *v as f32;
        }
    }
    Ok(out)
}

/// Trilinear interpolation at a continuous voxel coordinate, clamped to the
/// volume. Returns the value and whether clamping was needed.
pub fn trilinear(volume: &[f32], dims: (usize, usize, usize), c: &VoxelCoord) -> (f64, bool) {
    let (depth, height, width) = dims;
    let clamp = |x: f64, n: usize| x.clamp(0.0, (n - 1) as f64);
    let (w, h, d) = (clamp(c.w, width), clamp(c.h, height), clamp(c.d, depth));
    let clamped = w != c.w || h != c.h || d != c.d;
    let split = |x: f64, n: usize| {
        let i0 = (x.floor() as usize).min(n - 2);
        (i0, x - i0 as f64)
    };
    let (w0, fw) = split(w, width);
    let (h0, fh) = split(h, height);
    let (d0, fd) = split(d, depth);
    let at = |dd: usize, hh: usize, ww: usize| volume[(dd * height + hh) * width + ww] as f64;
    let mut acc = 0.0;
    for (dd, wd) in [(d0, 1.0 - fd), (d0 + 1, fd)] {
        for (hh, wh) in [(h0, 1.0 - fh), (h0 + 1, fh)] {
            for (ww, ww_) in [(w0, 1.0 - fw), (w0 + 1, fw)] {
                acc += wd * wh * ww_ * at(dd, hh, ww);
            }
        }
    }
    (acc, clamped)
}

/// Per-joint uncertainty `0.05 * (1 - HM)` where `HM` is the smoothed value
/// at the prediction divided by that joint's volume maximum.
pub fn uncertainty(smoothed: &Heatmap3D, coords: &[VoxelCoord]) -> Result<Vec<(f64, bool)>> {
    if coords.len() != smoothed.joints {
        return Err(Error::Shape(format!(
            "{} coordinates for {} joints",
            coords.len(),
            smoothed.joints
        )));
    }
    Ok(coords
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let vol = smoothed.volume(j);
            let max = vol.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let (value, clamped) = trilinear(vol, smoothed.dims(), c);
            let hm = if max > 0.0 { (value / max).clamp(0.0, 1.0) } else { 0.0 };
            (uncertainty_from_score(hm), clamped)
        })
        .collect())
}

pub fn uncertainty_from_score(hm: f64) -> f64 {
    MAX_UNCERTAINTY * (1.0 - hm)
}

pub fn decode(heatmap: &Heatmap3D, camera: &FisheyeCamera, opts: &DecodeOptions) -> Result<DecodedJoints> {
    heatmap.check()?;
    if heatmap.image_height != camera.height as usize || heatmap.image_width != camera.width as usize {
        return Err(Error::Shape(format!(
            "heatmap aligned to {}x{} image, camera is {}x{}",
            heatmap.image_height, heatmap.image_width, camera.height, camera.width
        )));
    }
    let voxel = (0..heatmap.joints)
        .map(|j| soft_argmax(heatmap.volume(j), heatmap.dims(), opts.temperature))
        .collect::<Result<Vec<_>>>()?;
    let smoothed = gaussian_smooth3d(heatmap, opts.smooth_sigma)?;
    let unc = uncertainty(&smoothed, &voxel)?;

    let mut out = DecodedJoints {
        uvd: Vec::with_capacity(heatmap.joints),
        xyz: Vec::with_capacity(heatmap.joints),
        uncertainty: Vec::with_capacity(heatmap.joints),
        voxel: voxel.clone(),
        in_fov: Vec::with_capacity(heatmap.joints),
        clamped: Vec::with_capacity(heatmap.joints),
    };
    for (c, (u, clamped)) in voxel.iter().zip(unc) {
        let uvd = heatmap.voxel_to_uvd(c);
        let depth = uvd[2].max(f64::MIN_POSITIVE);
        let xyz = camera.unproject(&Vector2::new(uvd[0], uvd[1]), depth)?;
        out.in_fov.push(camera.in_fov(&xyz));
        out.uvd.push(uvd);
        out.xyz.push(xyz);
        out.uncertainty.push(u);
        out.clamped.push(clamped);
    }
    Ok(out)
}
