//! Semantic masks, multi-view majority voting onto 3D points, and
//! back-projection of point labels into a view.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project_with, CameraModel, Projection, ViewPose, ViewSet};
use crate::error::{Error, Result};
use crate::ply;
use crate::{LabelId, UNLABELED};

/// Label id → class name. Serialized as a JSON object keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    pub entries: BTreeMap<LabelId, String>,
}

impl LabelMap {
    pub fn new(entries: impl IntoIterator<Item = (LabelId, String)>) -> Result<Self> {
        let map = LabelMap {
            entries: entries.into_iter().collect(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.contains_key(&UNLABELED) {
            return Err(Error::Argument(format!(
                "label id {UNLABELED} is reserved for unlabeled pixels"
            )));
        }
        let mut names: Vec<&String> = self.entries.values().collect();
        names.sort();
        names.dedup();
        if names.len() != self.entries.len() {
            return Err(Error::Argument("label names must be unique".into()));
        }
        Ok(())
    }

    pub fn name(&self, id: LabelId) -> String {
        self.entries
            .get(&id)
            .cloned()
            .unwrap_or_else(|| format!("label_{id}"))
    }

    pub fn id_of(&self, name: &str) -> Option<LabelId> {
        self.entries
            .iter()
            .find_map(|(id, n)| (n == name).then_some(*id))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: LabelMap = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    pub width: u32,
    pub height: u32,
    /// Row-major, one id per pixel; [`UNLABELED`] means ignore.
    pub labels: Vec<LabelId>,
    pub view_id: u32,
}

impl SemanticMask {
    pub fn unlabeled(width: u32, height: u32, view_id: u32) -> Self {
        SemanticMask {
            width,
            height,
            labels: vec![UNLABELED; width as usize * height as usize],
            view_id,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> LabelId {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Pixel count per label id (index 255 counts unlabeled pixels).
    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn pixel_count(&self, label: LabelId) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }

    pub fn check_against(&self, camera: &CameraModel) -> Result<()> {
        if self.width != camera.width || self.height != camera.height {
            return Err(Error::Geometry(format!(
                "mask for view {} is {}x{}, camera is {}x{}",
                self.view_id, self.width, self.height, camera.width, camera.height
            )));
        }
        Ok(())
    }

    /// Every id below 255 must be present in `map`.
    pub fn check_labels(&self, map: &LabelMap) -> Result<()> {
        let h = self.histogram();
        for (id, &n) in h.iter().enumerate().take(UNLABELED as usize) {
            if n > 0 && !map.entries.contains_key(&(id as LabelId)) {
                return Err(Error::Argument(format!(
                    "mask for view {} uses id {id} missing from the label map",
                    self.view_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_raw(self.width, self.height, self.labels.clone())
            .ok_or_else(|| Error::Argument("mask buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::ImageFormat(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Decodes an 8-bit single-channel PNG mask. When `camera` is given the
/// dimensions must agree with it.
pub fn load_mask(bytes: &[u8], view_id: u32, camera: Option<&CameraModel>) -> Result<SemanticMask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::ImageFormat(e.to_string()))?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::ImageFormat(format!(
                "mask must be 8-bit single-channel, got {:?}",
                other.color()
            )))
        }
    };
    let mask = SemanticMask {
        width: gray.width(),
        height: gray.height(),
        labels: gray.into_raw(),
        view_id,
    };
    if let Some(cam) = camera {
        mask.check_against(cam)?;
    }
    Ok(mask)
}

/// 3D points with one semantic label each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<LabelId>,
    /// Per point, (label, votes) sorted by label. Empty for clouds that
    /// were not produced by voting.
    pub vote_counts: Vec<Vec<(LabelId, u32)>>,
}

impl LabeledCloud {
    pub fn new(points: Vec<[f64; 3]>, labels: Vec<LabelId>) -> Self {
        assert_eq!(points.len(), labels.len());
        LabeledCloud {
            points,
            labels,
            vote_counts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label_ids(&self) -> Vec<LabelId> {
        let mut ids: Vec<LabelId> = self
            .labels
            .iter()
            .copied()
            .filter(|&l| l != UNLABELED)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Binary PLY with float x,y,z and uchar label.
    pub fn to_ply(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256 + self.len() * 13);
        ply::write_header(
            &mut out,
            self.len(),
            &[("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "label")],
        );
        for (p, &l) in self.points.iter().zip(&self.labels) {
            for v in p {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.push(l);
        }
        out
    }

    /// Reads x,y,z (any scalar type) and an optional `label` property;
    /// points without one are unlabeled.
    pub fn from_ply(bytes: &[u8]) -> Result<Self> {
        let header = ply::parse_header(bytes)?;
        let vertex = header
            .vertex()
            .ok_or_else(|| Error::Schema("vertex".into()))?;
        let idx = |name: &str| vertex.properties.iter().position(|p| p.name == name);
        let xyz = [
            idx("x").ok_or_else(|| Error::Schema("x".into()))?,
            idx("y").ok_or_else(|| Error::Schema("y".into()))?,
            idx("z").ok_or_else(|| Error::Schema("z".into()))?,
        ];
        let label = idx("label");
        let mut cloud = LabeledCloud::default();
        ply::for_each_vertex(bytes, &header, |index, row| {
            let p = xyz.map(|i| row[i]);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation {
                    index,
                    message: "non-finite position".into(),
                });
            }
            cloud.points.push(p);
            cloud
                .labels
                .push(label.map_or(UNLABELED, |i| row[i].clamp(0.0, 255.0) as LabelId));
            Ok(())
        })?;
        Ok(cloud)
    }

    /// COLMAP `points3D.txt`; all points unlabeled.
    pub fn from_colmap_points(text: &str) -> Result<Self> {
        let mut cloud = LabeledCloud::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected POINT3D_ID X Y Z ...".into(),
                });
            }
            let mut p = [0.0; 3];
            for (k, t) in toks[1..4].iter().enumerate() {
                p[k] = t.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("invalid coordinate `{t}`"),
                })?;
            }
            cloud.points.push(p);
            cloud.labels.push(UNLABELED);
        }
        Ok(cloud)
    }

    /// Loads `.ply` or COLMAP `points3D.txt` by extension.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt")) {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Parse { line: 0, message: "not UTF-8".into() })?;
            Self::from_colmap_points(&text)
        } else {
            Self::from_ply(&bytes)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotingOptions {
    /// Only let a point vote in views where it is the nearest point on its
    /// pixel (within `depth_tolerance`, relative).
    pub occlusion_test: bool,
    pub depth_tolerance: f64,
}

impl Default for VotingOptions {
    fn default() -> Self {
        VotingOptions {
            occlusion_test: false,
            depth_tolerance: 0.01,
        }
    }
}

struct PreparedView<'a> {
    camera: &'a CameraModel,
    r: nalgebra::Matrix3<f64>,
    t: nalgebra::Vector3<f64>,
    mask: &'a SemanticMask,
    zbuf: Option<Vec<f64>>,
}

impl PreparedView<'_> {
    #[inline]
    fn lookup(&self, p: [f64; 3]) -> Option<(usize, f64)> {
        let (pixel, depth) = project_with(self.camera, &self.r, &self.t, p).visible()?;
        let (x, y) = self.camera.pixel_index(pixel)?;
        Some((y as usize * self.mask.width as usize + x as usize, depth))
    }
}

/// Majority-vote label assignment. A point gets one vote per view where it
/// projects in-bounds with positive depth onto a labeled pixel; the most
/// frequent label wins, ties going to the lowest id. Points without votes
/// stay [`UNLABELED`].
pub fn assign_labels(
    points: &[[f64; 3]],
    views: &ViewSet,
    masks: &[SemanticMask],
    opts: VotingOptions,
) -> Result<LabeledCloud> {
    if masks.is_empty() {
        return Err(Error::Argument("no masks supplied".into()));
    }
    let mut prepared = Vec::with_capacity(masks.len());
    for mask in masks {
        let pose = views.pose(mask.view_id).ok_or_else(|| {
            Error::Argument(format!("mask for view {} has no pose", mask.view_id))
        })?;
        let camera = views.camera_of(pose)?;
        mask.check_against(camera)?;
        prepared.push(PreparedView {
            camera,
            r: pose.rotation_matrix(),
            t: pose.translation_vector(),
            mask,
            zbuf: None,
        });
    }

    if opts.occlusion_test {
        prepared.par_iter_mut().for_each(|v| {
            let mut zbuf = vec![f64::INFINITY; v.mask.labels.len()];
            for p in points {
                if let Some((idx, depth)) = v.lookup(*p) {
                    if depth < zbuf[idx] {
                        zbuf[idx] = depth;
                    }
                }
            }
            v.zbuf = Some(zbuf);
        });
    }

    let votes: Vec<Vec<(LabelId, u32)>> = points
        .par_iter()
        .map(|p| {
            let mut counts: Vec<(LabelId, u32)> = Vec::new();
            for v in &prepared {
                let Some((idx, depth)) = v.lookup(*p) else {
                    continue;
                };
                if let Some(zbuf) = &v.zbuf {
                    if depth > zbuf[idx] * (1.0 + opts.depth_tolerance) {
                        continue;
                    }
                }
                let label = v.mask.labels[idx];
                if label == UNLABELED {
                    continue;
                }
                match counts.binary_search_by_key(&label, |&(l, _)| l) {
                    Ok(i) => counts[i].1 += 1,
                    Err(i) => counts.insert(i, (label, 1)),
                }
            }
            counts
        })
        .collect();

    let labels = votes.iter().map(|c| majority(c)).collect();
    Ok(LabeledCloud {
        points: points.to_vec(),
        labels,
        vote_counts: votes,
    })
}

/// Argmax over counts sorted by label; first (lowest id) wins ties.
fn majority(counts: &[(LabelId, u32)]) -> LabelId {
    let mut best = (UNLABELED, 0u32);
    for &(l, n) in counts {
        if n > best.1 {
            best = (l, n);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackprojectOptions {
    /// Disc radius stamped by each point, in pixels (>= 0.5).
    pub splat_radius_px: f64,
    /// Unlabeled pixels farther than this from any stamped pixel stay 255.
    pub fill_limit_px: f64,
}

impl Default for BackprojectOptions {
    fn default() -> Self {
        BackprojectOptions {
            splat_radius_px: 2.0,
            fill_limit_px: 32.0,
        }
    }
}

/// Renders point labels into a mask for `pose`: z-buffered disc stamping,
/// then nearest-label hole filling up to the fill limit.
pub fn backproject_mask(
    cloud: &LabeledCloud,
    camera: &CameraModel,
    pose: &ViewPose,
    opts: BackprojectOptions,
) -> Result<SemanticMask> {
    if opts.splat_radius_px < 0.5 || !opts.splat_radius_px.is_finite() {
        return Err(Error::Argument(format!(
            "splat radius {} px is below 0.5",
            opts.splat_radius_px
        )));
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut mask = SemanticMask::unlabeled(camera.width, camera.height, pose.view_id);
    let mut depth = vec![f64::INFINITY; w * h];
    let r = pose.rotation_matrix();
    let t = pose.translation_vector();
    let radius = opts.splat_radius_px;
    let r2 = radius * radius;

    for (p, &label) in cloud.points.iter().zip(&cloud.labels) {
        if label == UNLABELED {
            continue;
        }
        let Projection::Visible { pixel, depth: z } = project_with(camera, &r, &t, *p) else {
            continue;
        };
        let x0 = (pixel[0] - radius - 0.5).ceil().max(0.0);
        let x1 = (pixel[0] + radius - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (pixel[1] - radius - 0.5).ceil().max(0.0);
        let y1 = (pixel[1] + radius - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            let dy = y as f64 + 0.5 - pixel[1];
            for x in x0 as usize..=x1 as usize {
                let dx = x as f64 + 0.5 - pixel[0];
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let i = y * w + x;
                let cur = depth[i];
                if z < cur || (z == cur && label < mask.labels[i]) {
                    depth[i] = z;
                    mask.labels[i] = label;
                }
            }
        }
    }

    fill_nearest(&mut mask, opts.fill_limit_px);
    Ok(mask)
}

/// Assigns each unlabeled pixel the label of its nearest labeled pixel
/// (exact Euclidean distance transform) when within `limit` pixels.
pub fn fill_nearest(mask: &mut SemanticMask, limit: f64) {
    let (w, h) = (mask.width as usize, mask.height as usize);
    if w == 0 || h == 0 || limit <= 0.0 {
        return;
    }
    let sites = nearest_site(&mask.labels, w, h);
    let limit2 = limit * limit;
    let src = mask.labels.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if src[i] != UNLABELED {
                continue;
            }
            if let Some((sx, sy)) = sites[i] {
                let dx = sx as f64 - x as f64;
                let dy = sy as f64 - y as f64;
                if dx * dx + dy * dy <= limit2 {
                    mask.labels[i] = src[sy * w + sx];
                }
            }
        }
    }
}

/// Nearest labeled pixel for every pixel (Felzenszwalb-Huttenlocher
/// separable EDT, tracking the argmin).
fn nearest_site(labels: &[LabelId], w: usize, h: usize) -> Vec<Option<(usize, usize)>> {
    // column pass: nearest labeled row in the same column
    let mut col_site: Vec<Option<usize>> = vec![None; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if labels[y * w + x] != UNLABELED {
                last = Some(y);
            }
            col_site[y * w + x] = last;
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if labels[y * w + x] != UNLABELED {
                next = Some(y);
            }
            let i = y * w + x;
            col_site[i] = match (col_site[i], next) {
                (Some(a), Some(b)) => Some(if y - a <= b - y { a } else { b }),
                (a, b) => a.or(b),
            };
        }
    }

    // row pass: lower envelope of parabolas f(q) + (x - q)^2
    let mut out = vec![None; w * h];
    let mut v = vec![0usize; w];
    let mut z = vec![0f64; w + 1];
    for y in 0..h {
        let f = |q: usize| -> Option<f64> {
            col_site[y * w + q].map(|sy| {
                let d = sy as f64 - y as f64;
                d * d
            })
        };
        let finite: Vec<usize> = (0..w).filter(|&q| f(q).is_some()).collect();
        if finite.is_empty() {
            continue;
        }
        let mut k = 0usize;
        v[0] = finite[0];
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for &q in &finite[1..] {
            let fq = f(q).unwrap() + (q * q) as f64;
            loop {
                let p = v[k];
                let fp = f(p).unwrap() + (p * p) as f64;
                let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    // k == 0: q dominates everything left of it
                    v[0] = q;
                    z[1] = f64::INFINITY;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                }
                break;
            }
        }
        let mut k = 0usize;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let q = v[k];
            out[y * w + x] = col_site[y * w + q].map(|sy| (q, sy));
        }
    }
    out
}
