//! Gnomonic (tangent-plane) patch sampling on a fisheye image.
//!
//! Each patch center is lifted onto the unit view sphere, a tangent frame is
//! built whose x axis points toward the pixel `d` columns to the right of the
//! center, an `M x M` grid of points is laid out on the tangent plane and the
//! grid is projected back into the fisheye image. Bilinear sampling at those
//! coordinates yields locally undistorted patches with a consistent
//! orientation across the image.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::camera::FisheyeCamera;
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const GRID_MAGIC: &[u8; 4] = b"EGSG";
pub const GRID_VERSION: u32 = 1;
pub const PATCH_MAGIC: &[u8; 4] = b"EGPT";
pub const PATCH_VERSION: u32 = 1;

/// Guard on `<v_u, v_c>` when intersecting a ray with the tangent plane.
const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGridConfig {
    /// Patches per image side (`N`).
    pub n_patches_per_side: usize,
    /// Samples per patch side (`M`).
    pub patch_resolution: usize,
    /// Pixel offset used to orient each tangent frame.
    pub orientation_offset: f64,
    /// Side length of the sampled square on the unit-distance tangent plane.
    pub patch_side: f64,
    pub image_height: usize,
    pub image_width: usize,
}

impl PatchGridConfig {
    /// Patch layout used for 256 x 256 inputs.
    pub fn standard(image_height: usize, image_width: usize) -> Self {
        PatchGridConfig {
            n_patches_per_side: 16,
            patch_resolution: 16,
            orientation_offset: 8.0,
            patch_side: 0.2,
            image_height,
            image_width,
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n_patches_per_side;
        if n == 0 || self.patch_resolution == 0 {
            return Err(Error::Config("N and M must be >= 1".into()));
        }
        if !(self.orientation_offset >= 1.0) {
            return Err(Error::Config(format!(
                "orientation offset d = {} must be >= 1",
                self.orientation_offset
            )));
        }
        if !(self.patch_side > 0.0) {
            return Err(Error::Config(format!("patch side l = {} must be > 0", self.patch_side)));
        }
        if self.image_height == 0
            || self.image_width == 0
            || self.image_height % n != 0
            || self.image_width % n != 0
        {
            return Err(Error::Config(format!(
                "image {}x{} does not divide into {n}x{n} cells",
                self.image_height, self.image_width
            )));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches_per_side * self.n_patches_per_side
    }

    pub fn samples_per_patch(&self) -> usize {
        self.patch_resolution * self.patch_resolution
    }
}

/// Orthonormal frame on the plane tangent to the unit sphere at a patch center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentFrame {
    pub center_pixel: Vector2<f64>,
    /// Unit-sphere lift of the center pixel; also the plane normal.
    pub sphere_point: Vector3<f64>,
    /// Intersection of the offset pixel's ray with the tangent plane.
    pub x_point: Vector3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    pub z_axis: Vector3<f64>,
}

/// Row-major patch centers `((H/N)(i + 1/2), (W/N)(j + 1/2))`.
pub fn patch_centers(image_height: usize, image_width: usize, n: usize) -> Vec<Vector2<f64>> {
    let step_u = image_height as f64 / n as f64;
    let step_v = image_width as f64 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(Vector2::new(step_u * (i as f64 + 0.5), step_v * (j as f64 + 0.5)));
        }
    }
    out
}

pub fn tangent_frame(center: &Vector2<f64>, offset_d: f64, camera: &FisheyeCamera) -> Result<TangentFrame> {
    let sphere_point = camera.unproject(center, 1.0)?;
    if !camera.in_fov(&sphere_point) {
        return Err(Error::OutOfFov {
            rho: std::f64::consts::FRAC_PI_2 - FisheyeCamera::incidence(&sphere_point),
        });
    }
    let offset_ray = camera.unproject(&Vector2::new(center.x + offset_d, center.y), 1.0)?;
    let along = offset_ray.dot(&sphere_point);
    if along <= PARALLEL_EPS {
        return Err(Error::Geometry(format!(
            "offset ray is parallel to the tangent plane (<v_u, v_c> = {along:.3e})"
        )));
    }
    // <P_c, v_c> = 1 on the unit sphere.
    let x_point = offset_ray / along;
    let x_axis = (x_point - sphere_point).normalize();
    let z_axis = sphere_point.normalize();
    let y_axis = z_axis.cross(&x_axis);
    Ok(TangentFrame {
        center_pixel: *center,
        sphere_point,
        x_point,
        x_axis,
        y_axis,
        z_axis,
    })
}

/// Half-integer ladder `-(M-1)/2, ..., (M-1)/2`.
fn ladder(m_res: usize) -> impl Iterator<Item = f64> {
    let half = (m_res as f64 - 1.0) / 2.0;
    (0..m_res).map(move |k| k as f64 - half)
}

/// `M x M` tangent-plane points around the frame center, row-major in `(m, n)`.
pub fn grid_points(frame: &TangentFrame, m_res: usize, side: f64) -> Vec<Vector3<f64>> {
    let scale = side / m_res as f64;
    let mut out = Vec::with_capacity(m_res * m_res);
    for m in ladder(m_res) {
        for n in ladder(m_res) {
            out.push(frame.sphere_point + frame.x_axis * (scale * m) + frame.y_axis * (scale * n));
        }
    }
    out
}

/// Precomputed fisheye sampling coordinates for every patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub config: PatchGridConfig,
    /// Tangent frames in row-major `(i, j)` order. Empty for grids read from
    /// disk, which only carry coordinates.
    pub frames: Vec<TangentFrame>,
    /// `(u, v)` fisheye pixel per sample, patch-major then row-major `(m, n)`.
    pub coords: Vec<[f64; 2]>,
}

pub fn precompute_grid(camera: &FisheyeCamera, config: &PatchGridConfig) -> Result<SamplingGrid> {
    config.check()?;
    let n = config.n_patches_per_side;
    let centers = patch_centers(config.image_height, config.image_width, n);
    let mut frames = Vec::with_capacity(centers.len());
    let mut coords = Vec::with_capacity(config.n_patches() * config.samples_per_patch());
    for (idx, center) in centers.iter().enumerate() {
        let (i, j) = (idx / n, idx % n);
        let wrap = |e: Error| Error::Patch {
            i,
            j,
            source: Box::new(e),
        };
        let frame = tangent_frame(center, config.orientation_offset, camera).map_err(wrap)?;
        for p in grid_points(&frame, config.patch_resolution, config.patch_side) {
            let px = camera.project(&p).map_err(wrap)?;
            coords.push([px.x, px.y]);
        }
        frames.push(frame);
    }
    Ok(SamplingGrid {
        config: *config,
        frames,
        coords,
    })
}

impl SamplingGrid {
    pub fn patch_coords(&self, patch: usize) -> &[[f64; 2]] {
        let s = self.config.samples_per_patch();
        &self.coords[patch * s..(patch + 1) * s]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::with_header(GRID_MAGIC, GRID_VERSION);
        w.u32(c.n_patches_per_side as u32);
        w.u32(c.patch_resolution as u32);
        w.u32(c.image_height as u32);
        w.u32(c.image_width as u32);
        w.f64(c.orientation_offset);
        w.f64(c.patch_side);
        for [u, v] in &self.coords {
            w.f32(*u as f32);
            w.f32(*v as f32);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(GRID_MAGIC, "sampling grid", GRID_VERSION)?;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let config = PatchGridConfig {
            n_patches_per_side: n,
            patch_resolution: m,
            orientation_offset: r.f64()?,
            patch_side: r.f64()?,
            image_height: h,
            image_width: w,
        };
        config.check()?;
        let flat = r.f32s(2 * config.n_patches() * config.samples_per_patch())?;
        if !r.is_empty() {
            return Err(Error::Format(format!("sampling grid: {} trailing bytes", r.remaining())));
        }
        let coords = flat
            .chunks_exact(2)
            .map(|c| [c[0] as f64, c[1] as f64])
            .collect();
        Ok(SamplingGrid {
            config,
            frames: Vec::new(),
            coords,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Stack of undistorted patches, layout `(patch, m, n, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStack {
    pub n_patches: usize,
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PatchStack {
    pub fn patch(&self, idx: usize) -> &[f32] {
        let s = self.resolution * self.resolution * self.channels;
        &self.data[idx * s..(idx + 1) * s]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(PATCH_MAGIC, PATCH_VERSION);
        w.u32(self.n_patches as u32);
        w.u32(self.resolution as u32);
        w.u32(self.resolution as u32);
        w.u32(self.channels as u32);
        w.f32s(&self.data);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(PATCH_MAGIC, "patch stack", PATCH_VERSION)?;
        let n_patches = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let channels = r.u32()? as usize;
        if rows != cols {
            return Err(Error::Format(format!("patch stack: non-square patches {rows}x{cols}")));
        }
        let data = r.f32s(n_patches * rows * cols * channels)?;
        Ok(PatchStack {
            n_patches,
            resolution: rows,
            channels,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }
}

/// Bilinearly samples every grid coordinate; out-of-image samples are 0.
pub fn extract_patches(image: &Raster, grid: &SamplingGrid) -> Result<PatchStack> {
    let c = &grid.config;
    if image.height != c.image_height || image.width != c.image_width {
        return Err(Error::Shape(format!(
            "image is {}x{}, grid expects {}x{}",
            image.height, image.width, c.image_height, c.image_width
        )));
    }
    let ch = image.channels;
    let mut data = vec![0.0f32; grid.coords.len() * ch];
    for (out, [u, v]) in data.chunks_exact_mut(ch.max(1)).zip(&grid.coords) {
        image.bilinear(*u, *v, out);
    }
    Ok(PatchStack {
        n_patches: c.n_patches(),
        resolution: c.patch_resolution,
        channels: ch,
        data,
    })
}

/// Single-patch grid for a detected hand.
///
/// The bounding-box half size orients the frame, and the sampled square is
/// twice the tangent-plane distance between the center and that offset point.
pub fn hand_crop_grid(
    hand_center: &Vector2<f64>,
    bbox_size: f64,
    camera: &FisheyeCamera,
    m_res: usize,
) -> Result<(SamplingGrid, TangentFrame)> {
    if !(bbox_size > 0.0) {
        return Err(Error::Domain(format!("bounding box size {bbox_size} must be > 0")));
    }
    if m_res == 0 {
        return Err(Error::Config("patch resolution must be >= 1".into()));
    }
    let frame = tangent_frame(hand_center, bbox_size / 2.0, camera)?;
    let side = 2.0 * (frame.x_point - frame.sphere_point).norm();
    let coords = grid_points(&frame, m_res, side)
        .iter()
        .map(|p| camera.project(p).map(|px| [px.x, px.y]))
        .collect::<Result<Vec<_>>>()?;
    let config = PatchGridConfig {
        n_patches_per_side: 1,
        patch_resolution: m_res,
        orientation_offset: bbox_size / 2.0,
        patch_side: side,
        image_height: camera.height as usize,
        image_width: camera.width as usize,
    };
    Ok((
        SamplingGrid {
            config,
            frames: vec![frame],
            coords,
        },
        frame,
    ))
}
