//! Deterministic CPU forward rasterizer for Gaussian splats.
//!
//! A splat touches a pixel only when the pixel center lies inside both its
//! 3-sigma bounding box and its 3-sigma ellipse. The tiled path and the
//! per-pixel reference path share that predicate and the compositing
//! arithmetic, so they agree bit for bit.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use image::{ImageFormat, RgbImage};
use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{CameraModel, ViewPose};
use crate::error::{Error, Result};
use crate::splat_io::{Gaussian3D, SplatCloud, SH_REST_PER_CHANNEL};
use crate::LabelId;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const NEAR_PLANE: f64 = 0.2;
pub const COV2D_FLOOR: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Squared Mahalanobis radius of the splat footprint (3 sigma).
const FOOTPRINT_M2: f64 = 9.0;
const TILE: usize = 16;

/// Real SH basis values for `dir`, in the 3DGS coefficient order.
fn sh_basis(degree: u8, dir: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = dir;
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Evaluates view-dependent color: clamp(sum_k c_k Y_k(dir) + 0.5, 0, 1).
///
/// `rest` is channel-major with a stride of 15 coefficients per channel.
pub fn eval_sh(dc: [f32; 3], rest: &[f32], degree: u8, view_dir: [f64; 3]) -> [f64; 3] {
    let basis = sh_basis(degree.min(3), view_dir);
    let n = (degree.min(3) as usize + 1).pow(2);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut v = basis[0] * dc[c] as f64;
        for k in 1..n {
            v += basis[k] * rest[c * SH_REST_PER_CHANNEL + k - 1] as f64;
        }
        *o = (v + 0.5).clamp(0.0, 1.0);
    }
    out
}

/// Screen-space footprint of one gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub center_px: [f64; 2],
    /// (xx, xy, yy), floor included.
    pub cov2d: [f64; 3],
    /// Inverse covariance (xx, xy, yy).
    pub conic: [f64; 3],
    pub depth: f64,
    pub color_rgb: [f64; 3],
    pub alpha_peak: f64,
    /// Inclusive pixel ranges covered by the 3-sigma box, clamped to the image.
    pub px_range: [usize; 2],
    pub py_range: [usize; 2],
}

impl Splat2D {
    /// Opacity contributed at pixel (x, y), or `None` when the pixel lies
    /// outside the footprint or the contribution is below 1/255.
    #[inline]
    pub fn alpha_at(&self, x: usize, y: usize) -> Option<f64> {
        if x < self.px_range[0] || x > self.px_range[1] || y < self.py_range[0] || y > self.py_range[1]
        {
            return None;
        }
        let dx = x as f64 + 0.5 - self.center_px[0];
        let dy = y as f64 + 0.5 - self.center_px[1];
        let m2 = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        if !(0.0..=FOOTPRINT_M2).contains(&m2) {
            return None;
        }
        let alpha = (self.alpha_peak * (-0.5 * m2).exp()).min(ALPHA_MAX);
        (alpha >= ALPHA_MIN).then_some(alpha)
    }
}

fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// World-space covariance R S S^T R^T with activated scales.
pub fn world_covariance(g: &Gaussian3D) -> Matrix3<f64> {
    let r = quat_to_matrix(g.rotation());
    let s = g.scales();
    let m = r * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    m * m.transpose()
}

struct ViewGeometry {
    r: Matrix3<f64>,
    t: Vector3<f64>,
    center: Vector3<f64>,
}

impl ViewGeometry {
    fn new(pose: &ViewPose) -> Self {
        ViewGeometry {
            r: pose.rotation_matrix(),
            t: pose.translation_vector(),
            center: pose.center(),
        }
    }
}

/// EWA projection of one gaussian; `None` when culled (near plane,
/// degenerate covariance, or footprint entirely off-image).
pub fn project_gaussian(
    g: &Gaussian3D,
    sh_degree: u8,
    camera: &CameraModel,
    pose: &ViewPose,
) -> Option<Splat2D> {
    project_with(g, sh_degree, camera, &ViewGeometry::new(pose))
}

fn project_with(
    g: &Gaussian3D,
    sh_degree: u8,
    camera: &CameraModel,
    view: &ViewGeometry,
) -> Option<Splat2D> {
    let p = Vector3::new(
        g.position[0] as f64,
        g.position[1] as f64,
        g.position[2] as f64,
    );
    let pc = view.r * p + view.t;
    let z = pc.z;
    if z <= NEAR_PLANE {
        return None;
    }
    let u = camera.fx * pc.x / z + camera.cx;
    let v = camera.fy * pc.y / z + camera.cy;

    let j = Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * pc.x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * pc.y / (z * z),
    );
    let t = j * view.r;
    let cov = t * world_covariance(g) * t.transpose();
    let a = cov[(0, 0)] + COV2D_FLOOR;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + COV2D_FLOOR;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let hx = 3.0 * a.sqrt();
    let hy = 3.0 * c.sqrt();
    let (w, h) = (camera.width as f64, camera.height as f64);
    if u + hx < 0.0 || u - hx > w || v + hy < 0.0 || v - hy > h {
        return None;
    }
    let x0 = (u - hx - 0.5).ceil().max(0.0);
    let x1 = (u + hx - 0.5).floor().min(w - 1.0);
    let y0 = (v - hy - 0.5).ceil().max(0.0);
    let y1 = (v + hy - 0.5).floor().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }

    let dir = (p - view.center).normalize();
    let color = eval_sh(g.sh_dc, &g.sh_rest, sh_degree, [dir.x, dir.y, dir.z]);
    Some(Splat2D {
        center_px: [u, v],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: z,
        color_rgb: color,
        alpha_peak: g.opacity(),
        px_range: [x0 as usize, x1 as usize],
        py_range: [y0 as usize, y1 as usize],
    })
}

/// Linear RGB image in [0, 1], row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<f32>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut rgb = Vec::with_capacity(3 * n);
        for _ in 0..n {
            rgb.extend_from_slice(&color);
        }
        Image { width, height, rgb }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn bitwise_eq(&self, other: &Image) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .rgb
                .iter()
                .zip(&other.rgb)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// 8-bit PNG, value = round(255 * v); no transfer curve applied.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self
            .rgb
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = RgbImage::from_raw(self.width, self.height, bytes)
            .ok_or_else(|| Error::Argument("image buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::ImageFormat(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Decodes PNG/JPEG into [0, 1] (value / 255, alpha dropped).
    pub fn from_encoded(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::ImageFormat(e.to_string()))?
            .to_rgb8();
        Ok(Image {
            width: img.width(),
            height: img.height(),
            rgb: img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_encoded(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: [0.0; 3],
            min_transmittance: 1e-4,
        }
    }
}

/// Projects and depth-sorts (ties by original index) all visible splats.
pub fn prepare_splats(cloud: &SplatCloud, camera: &CameraModel, pose: &ViewPose) -> Vec<Splat2D> {
    let view = ViewGeometry::new(pose);
    let mut splats: Vec<(usize, Splat2D)> = cloud
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_with(g, cloud.sh_degree, camera, &view).map(|s| (i, s)))
        .collect();
    splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    splats.into_iter().map(|(_, s)| s).collect()
}

/// Front-to-back compositing of `splats` (already sorted) at one pixel.
#[inline]
pub fn composite_pixel<'a>(
    splats: impl IntoIterator<Item = &'a Splat2D>,
    x: usize,
    y: usize,
    opts: &RenderOptions,
) -> [f32; 3] {
    let mut color = [0.0f64; 3];
    let mut transmittance = 1.0f64;
    for s in splats {
        let Some(alpha) = s.alpha_at(x, y) else {
            continue;
        };
        let weight = transmittance * alpha;
        for c in 0..3 {
            color[c] += weight * s.color_rgb[c];
        }
        transmittance *= 1.0 - alpha;
        if transmittance < opts.min_transmittance {
            break;
        }
    }
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        out[c] = (color[c] + transmittance * opts.background[c]).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Renders a cloud with tile binning; rows of tiles are processed in parallel.
pub fn render(
    cloud: &SplatCloud,
    camera: &CameraModel,
    pose: &ViewPose,
    opts: &RenderOptions,
) -> Image {
    let splats = prepare_splats(cloud, camera, pose);
    render_splats(&splats, camera.width, camera.height, opts)
}

pub fn render_splats(splats: &[Splat2D], width: u32, height: u32, opts: &RenderOptions) -> Image {
    let (w, h) = (width as usize, height as usize);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        for ty in s.py_range[0] / TILE..=s.py_range[1] / TILE {
            for tx in s.px_range[0] / TILE..=s.px_range[1] / TILE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let mut rgb = vec![0.0f32; 3 * w * h];
    rgb.par_chunks_mut(3 * w * TILE)
        .enumerate()
        .for_each(|(ty, band)| {
            let rows = band.len() / (3 * w);
            for tx in 0..tiles_x {
                let bin = &bins[ty * tiles_x + tx];
                let x_end = ((tx + 1) * TILE).min(w);
                for ry in 0..rows {
                    let y = ty * TILE + ry;
                    for x in tx * TILE..x_end {
                        let px = composite_pixel(
                            bin.iter().map(|&i| &splats[i as usize]),
                            x,
                            y,
                            opts,
                        );
                        let o = 3 * (ry * w + x);
                        band[o..o + 3].copy_from_slice(&px);
                    }
                }
            }
        });
    Image { width, height, rgb }
}

/// Order-preserving filter of the gaussians carrying label `l`.
pub fn subset_by_label(cloud: &SplatCloud, labels: &[LabelId], l: LabelId) -> Result<SplatCloud> {
    if labels.len() != cloud.len() {
        return Err(Error::Argument(format!(
            "{} labels for {} gaussians",
            labels.len(),
            cloud.len()
        )));
    }
    Ok(SplatCloud {
        gaussians: cloud
            .gaussians
            .iter()
            .zip(labels)
            .filter(|(_, &lab)| lab == l)
            .map(|(g, _)| *g)
            .collect(),
        sh_degree: cloud.sh_degree,
    })
}

#[derive(Debug, Clone)]
pub struct CompositionEntry {
    pub label_id: LabelId,
    pub iteration: u32,
    pub cloud: Arc<SplatCloud>,
}

/// Per-label clouds chosen for one composed scene, at most one per label.
#[derive(Debug, Clone, Default)]
pub struct CompositionManifest {
    pub entries: Vec<CompositionEntry>,
}

impl CompositionManifest {
    pub fn new(entries: Vec<CompositionEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.label_id) {
                return Err(Error::Composition(format!(
                    "label {} appears more than once",
                    e.label_id
                )));
            }
        }
        Ok(CompositionManifest { entries })
    }

    /// Concatenation in ascending label order, so the result does not
    /// depend on entry order.
    pub fn merged(&self) -> SplatCloud {
        let mut sorted: Vec<&CompositionEntry> = self.entries.iter().collect();
        sorted.sort_by_key(|e| e.label_id);
        SplatCloud::concat(sorted.into_iter().map(|e| e.cloud.as_ref()))
    }

    pub fn total_gaussians(&self) -> usize {
        self.entries.iter().map(|e| e.cloud.len()).sum()
    }
}

/// Renders the composition in splat space: all entries merged, then one
/// global depth sort.
pub fn render_composed(
    manifest: &CompositionManifest,
    camera: &CameraModel,
    pose: &ViewPose,
    opts: &RenderOptions,
) -> Image {
    render(&manifest.merged(), camera, pose, opts)
}
