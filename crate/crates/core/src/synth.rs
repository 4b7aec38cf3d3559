//! Deterministic synthetic scenes: labeled splat objects, orbit cameras,
//! ground-truth renders, back-projected masks, and emulated checkpoint
//! series obtained by degrading the full-detail cloud.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{write_colmap, CameraModel, ViewPose, ViewSet};
use crate::error::{Error, Result};
use crate::renderer::{render, subset_by_label, Image, RenderOptions, SH_C0};
use crate::semantics::{backproject_mask, BackprojectOptions, LabelMap, LabeledCloud, SemanticMask};
use crate::splat_io::{write_catalog, CheckpointSet, Gaussian3D, SplatCloud};
use crate::LabelId;

/// Position jitter at level 0, in units of each gaussian's largest scale.
pub const JITTER_AT_ZERO: f64 = 1.5;
const OPACITY: f64 = 0.9;
const COLOR_VARIATION: f64 = 0.12;
const SPHERE_RADIAL_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Horizontal square of half-width `size` at `center`.
    Plane,
    /// Shell of radius `size`.
    Sphere,
    /// Five gaussian blobs within `size` of `center`.
    BlobCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label_id: LabelId,
    pub name: String,
    pub shape: Shape,
    pub budget: usize,
    pub center: [f64; 3],
    pub size: f64,
    /// Base linear RGB; gaussians vary around it.
    pub color: [f64; 3],
}

/// Cameras on a circle around `target`, world z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub count: u32,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Camera height above `target`.
    pub elevation: f64,
    pub target: [f64; 3],
    /// Focal length as a multiple of image width.
    pub focal_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub cameras: OrbitSpec,
    pub width: u32,
    pub height: u32,
}

impl SceneSpec {
    /// The frozen three-label, six-view fixture.
    pub fn standard() -> Self {
        SceneSpec {
            seed: 7,
            objects: vec![
                ObjectSpec {
                    label_id: 0,
                    name: "ground".into(),
                    shape: Shape::Plane,
                    budget: 1600,
                    center: [0.0, 0.0, 0.0],
                    size: 2.5,
                    color: [0.42, 0.5, 0.3],
                },
                ObjectSpec {
                    label_id: 1,
                    name: "ball".into(),
                    shape: Shape::Sphere,
                    budget: 900,
                    center: [0.7, 0.3, 1.1],
                    size: 0.6,
                    color: [0.85, 0.3, 0.2],
                },
                ObjectSpec {
                    label_id: 2,
                    name: "shrub".into(),
                    shape: Shape::BlobCluster,
                    budget: 1000,
                    center: [-0.8, -0.5, 1.0],
                    size: 0.55,
                    color: [0.2, 0.65, 0.3],
                },
            ],
            cameras: OrbitSpec {
                count: 6,
                radius_min: 3.2,
                radius_max: 6.5,
                elevation: 1.8,
                target: [0.0, 0.0, 0.4],
                focal_factor: 0.9,
            },
            width: 80,
            height: 64,
        }
    }

    /// Levels and iteration labels used with [`SceneSpec::standard`].
    pub fn standard_series() -> (Vec<f64>, Vec<u32>) {
        (vec![0.25, 0.5, 0.75, 1.0], vec![5000, 10000, 15000, 30000])
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Config("scene has no objects".into()));
        }
        let mut ids: Vec<LabelId> = self.objects.iter().map(|o| o.label_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return Err(Error::Config("object label ids must be unique".into()));
        }
        for o in &self.objects {
            if o.budget == 0 || !(o.size > 0.0) {
                return Err(Error::Config(format!(
                    "object `{}` needs a positive budget and size",
                    o.name
                )));
            }
        }
        let c = &self.cameras;
        if c.count == 0
            || !(c.radius_min > 0.0)
            || c.radius_max < c.radius_min
            || !(c.focal_factor > 0.0)
            || self.width == 0
            || self.height == 0
        {
            return Err(Error::Config("invalid camera orbit or image size".into()));
        }
        LabelMap::new(self.objects.iter().map(|o| (o.label_id, o.name.clone())))?;
        Ok(())
    }

    pub fn label_map(&self) -> LabelMap {
        LabelMap {
            entries: self
                .objects
                .iter()
                .map(|o| (o.label_id, o.name.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub label_map: LabelMap,
    /// Full-detail cloud; `gaussian_labels[i]` labels gaussian `i`.
    pub full: SplatCloud,
    pub gaussian_labels: Vec<LabelId>,
    /// SfM-like points: every fourth gaussian center.
    pub sfm: LabeledCloud,
    pub views: ViewSet,
    pub masks: Vec<SemanticMask>,
    pub ground_truth: Vec<Image>,
}

impl SyntheticScene {
    pub fn masks_by_view(&self) -> BTreeMap<u32, SemanticMask> {
        self.masks.iter().map(|m| (m.view_id, m.clone())).collect()
    }

    pub fn ground_truth_by_view(&self) -> BTreeMap<u32, Image> {
        self.views
            .poses
            .iter()
            .zip(&self.ground_truth)
            .map(|(p, img)| (p.view_id, img.clone()))
            .collect()
    }

    pub fn label_cloud(&self, label: LabelId) -> Result<SplatCloud> {
        subset_by_label(&self.full, &self.gaussian_labels, label)
    }
}

fn log_f32(v: f64) -> f32 {
    v.ln() as f32
}

fn make_gaussian(
    rng: &mut ChaCha8Rng,
    position: [f64; 3],
    scale: [f64; 3],
    rotation: [f64; 4],
    color: [f64; 3],
) -> Gaussian3D {
    let mut g = Gaussian3D {
        position: position.map(|v| v as f32),
        opacity_raw: (OPACITY / (1.0 - OPACITY)).ln() as f32,
        scale_raw: scale.map(log_f32),
        rotation_raw: rotation.map(|v| v as f32),
        ..Default::default()
    };
    for c in 0..3 {
        let jitter = rng.random_range(-COLOR_VARIATION..=COLOR_VARIATION);
        let value = (color[c] + jitter).clamp(0.02, 0.98);
        g.sh_dc[c] = ((value - 0.5) / SH_C0) as f32;
    }
    g
}

fn normal3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ]
}

fn object_gaussians(o: &ObjectSpec, rng: &mut ChaCha8Rng) -> Vec<Gaussian3D> {
    let n = o.budget;
    let [cx, cy, cz] = o.center;
    let identity = [1.0, 0.0, 0.0, 0.0];
    match o.shape {
        Shape::Plane => {
            let spacing = 2.0 * o.size / (n as f64).sqrt();
            let s = 0.6 * spacing;
            (0..n)
                .map(|_| {
                    let x = cx + rng.random_range(-o.size..=o.size);
                    let y = cy + rng.random_range(-o.size..=o.size);
                    make_gaussian(rng, [x, y, cz], [s, s, 0.1 * s], identity, o.color)
                })
                .collect()
        }
        Shape::Sphere => {
            let area = 4.0 * std::f64::consts::PI * o.size * o.size;
            let s = 0.6 * (area / n as f64).sqrt();
            let sigma = SPHERE_RADIAL_SIGMA * o.size;
            (0..n)
                .map(|_| {
                    let mut d = normal3(rng);
                    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    d = d.map(|v| v / norm);
                    let noise: f64 = StandardNormal.sample(rng);
                    let r = o.size + sigma * noise.clamp(-3.0, 3.0);
                    let p = [cx + r * d[0], cy + r * d[1], cz + r * d[2]];
                    make_gaussian(rng, p, [s; 3], identity, o.color)
                })
                .collect()
        }
        Shape::BlobCluster => {
            let blobs: Vec<[f64; 3]> = (0..5)
                .map(|_| {
                    let d = normal3(rng);
                    [
                        cx + 0.5 * o.size * d[0].clamp(-1.5, 1.5),
                        cy + 0.5 * o.size * d[1].clamp(-1.5, 1.5),
                        cz + 0.4 * o.size * d[2].clamp(-1.5, 1.5),
                    ]
                })
                .collect();
            let spread = 0.35 * o.size;
            let s = 0.8 * o.size / (n as f64).cbrt();
            (0..n)
                .map(|i| {
                    let b = blobs[i % blobs.len()];
                    let d = normal3(rng);
                    let p = [b[0] + spread * d[0], b[1] + spread * d[1], b[2] + spread * d[2]];
                    // random orientation, mildly anisotropic
                    let q = normal3(rng);
                    let w: f64 = StandardNormal.sample(rng);
                    let qn = (w * w + q.iter().map(|v| v * v).sum::<f64>()).sqrt().max(1e-12);
                    let rot = [w / qn, q[0] / qn, q[1] / qn, q[2] / qn];
                    make_gaussian(rng, p, [s * 1.4, s, s * 0.7], rot, o.color)
                })
                .collect()
        }
    }
}

fn orbit_views(spec: &SceneSpec) -> ViewSet {
    let o = &spec.cameras;
    let f = o.focal_factor * spec.width as f64;
    let camera = CameraModel {
        width: spec.width,
        height: spec.height,
        fx: f,
        fy: f,
        cx: spec.width as f64 / 2.0,
        cy: spec.height as f64 / 2.0,
    };
    let n = o.count;
    let poses = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.3;
            // radii visit the range out of angular order
            let slot = (k as u64 * 5 % n as u64) as f64;
            let frac = if n > 1 { slot / (n - 1) as f64 } else { 0.0 };
            let radius = o.radius_min + (o.radius_max - o.radius_min) * frac;
            let eye = [
                o.target[0] + radius * angle.cos(),
                o.target[1] + radius * angle.sin(),
                o.target[2] + o.elevation * radius / o.radius_max.max(1e-9),
            ];
            ViewPose::look_at(k, 1, format!("view_{k:03}.png"), eye, o.target, [0.0, 0.0, 1.0])
        })
        .collect();
    ViewSet {
        cameras: BTreeMap::from([(1, camera)]),
        poses,
    }
}

/// Builds the full scene. Deterministic in `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gaussians = Vec::new();
    let mut labels = Vec::new();
    for o in &spec.objects {
        let gs = object_gaussians(o, &mut rng);
        labels.extend(std::iter::repeat_n(o.label_id, gs.len()));
        gaussians.extend(gs);
    }
    let full = SplatCloud::new(gaussians, 0);
    let sfm = LabeledCloud::new(
        full.gaussians
            .iter()
            .step_by(4)
            .map(|g| g.position.map(|v| v as f64))
            .collect(),
        labels.iter().step_by(4).copied().collect(),
    );
    // masks come from every labeled center; the sparse subsample leaves
    // gaps that let farther objects show through
    let centers = LabeledCloud::new(
        full.gaussians.iter().map(|g| g.position.map(|v| v as f64)).collect(),
        labels.clone(),
    );
    let views = orbit_views(spec);
    let opts = RenderOptions::default();
    let per_view: Vec<(SemanticMask, Image)> = views
        .poses
        .par_iter()
        .map(|pose| {
            let cam = &views.cameras[&pose.camera_id];
            let mask = backproject_mask(&centers, cam, pose, BackprojectOptions::default())?;
            Ok((mask, render(&full, cam, pose, &opts)))
        })
        .collect::<Result<_>>()?;
    let (masks, ground_truth) = per_view.into_iter().unzip();
    Ok(SyntheticScene {
        spec: spec.clone(),
        label_map: spec.label_map(),
        full,
        gaussian_labels: labels,
        sfm,
        views,
        masks,
        ground_truth,
    })
}

/// Emulates an earlier checkpoint: keeps `ceil(level * N)` gaussians (a
/// seeded permutation prefix, so lower levels are subsets of higher ones),
/// inflates scales by `level^(-1/3)` and jitters positions with
/// `sigma = JITTER_AT_ZERO * (1 - level) * max scale`, using noise vectors
/// that depend only on the seed.
pub fn degrade(cloud: &SplatCloud, level: f64, seed: u64) -> Result<SplatCloud> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Argument(format!("level {level} not in (0, 1]")));
    }
    let n = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let noise: Vec<[f64; 3]> = (0..n).map(|_| normal3(&mut rng)).collect();

    let keep = ((level * n as f64).ceil() as usize).min(n);
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    let inflate = (-level.ln() / 3.0) as f32;
    let gaussians = kept
        .into_iter()
        .map(|i| {
            let mut g = cloud.gaussians[i];
            if level < 1.0 {
                let sigma =
                    JITTER_AT_ZERO * (1.0 - level) * g.scales().into_iter().fold(0.0, f64::max);
                for k in 0..3 {
                    g.position[k] = (g.position[k] as f64 + sigma * noise[i][k]) as f32;
                    g.scale_raw[k] += inflate;
                }
            }
            g
        })
        .collect();
    Ok(SplatCloud::new(gaussians, cloud.sh_degree))
}

fn label_seed(seed: u64, label: LabelId) -> u64 {
    seed ^ (label as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Degrades each label partition independently, so every label keeps
/// `ceil(level * N_l)` gaussians. Returns the cloud and its labels.
pub fn degrade_labeled(
    cloud: &SplatCloud,
    labels: &[LabelId],
    level: f64,
    seed: u64,
) -> Result<(SplatCloud, Vec<LabelId>)> {
    let mut ids = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut parts = Vec::new();
    let mut out_labels = Vec::new();
    for l in ids {
        let part = degrade(&subset_by_label(cloud, labels, l)?, level, label_seed(seed, l))?;
        out_labels.extend(std::iter::repeat_n(l, part.len()));
        parts.push(part);
    }
    Ok((SplatCloud::concat(&parts), out_labels))
}

fn check_series(levels: &[f64], iterations: &[u32]) -> Result<()> {
    if levels.is_empty() || levels.len() != iterations.len() {
        return Err(Error::Argument(
            "levels and iteration labels must be non-empty and of equal length".into(),
        ));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) || iterations.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("levels and iterations must be ascending".into()));
    }
    Ok(())
}

fn series_clouds(
    scene: &SyntheticScene,
    levels: &[f64],
    iterations: &[u32],
) -> Result<BTreeMap<(LabelId, u32), SplatCloud>> {
    check_series(levels, iterations)?;
    let mut clouds = BTreeMap::new();
    for &label in scene.label_map.entries.keys() {
        let part = scene.label_cloud(label)?;
        for (&level, &it) in levels.iter().zip(iterations) {
            let seed = label_seed(scene.spec.seed, label);
            clouds.insert((label, it), degrade(&part, level, seed)?);
        }
    }
    Ok(clouds)
}

/// In-memory checkpoint series, one degraded cloud per (label, level).
pub fn checkpoint_series(
    scene: &SyntheticScene,
    levels: &[f64],
    iterations: &[u32],
) -> Result<CheckpointSet> {
    let clouds = series_clouds(scene, levels, iterations)?;
    CheckpointSet::from_clouds(
        clouds
            .into_iter()
            .map(|((l, i), c)| (l, scene.label_map.name(l), i, c)),
    )
}

/// Writes the series as a catalog under `root` and loads it back.
pub fn emit_checkpoint_series(
    scene: &SyntheticScene,
    levels: &[f64],
    iterations: &[u32],
    root: &Path,
) -> Result<CheckpointSet> {
    let clouds = series_clouds(scene, levels, iterations)?;
    write_catalog(root, &scene.label_map.entries, &clouds)?;
    CheckpointSet::load(root)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// COLMAP `points3D.txt` for the SfM-like cloud (no tracks).
pub fn colmap_points(cloud: &LabeledCloud) -> String {
    use std::fmt::Write;
    let mut out = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = writeln!(out, "{} {} {} {} 128 128 128 0", i + 1, p[0], p[1], p[2]);
    }
    out
}

/// Writes a scene directory: `images/`, `masks/`, `sparse/0/`,
/// `checkpoints/`, `labels.json` and `scene.json`.
pub fn write_scene(
    scene: &SyntheticScene,
    root: &Path,
    levels: &[f64],
    iterations: &[u32],
) -> Result<CheckpointSet> {
    for (pose, (img, mask)) in scene
        .views
        .poses
        .iter()
        .zip(scene.ground_truth.iter().zip(&scene.masks))
    {
        write_file(&root.join("images").join(&pose.image_name), &img.to_png()?)?;
        write_file(&root.join("masks").join(&pose.image_name), &mask.to_png()?)?;
    }
    let sparse = root.join("sparse").join("0");
    let (cams, imgs) = write_colmap(&scene.views);
    write_file(&sparse.join("cameras.txt"), cams.as_bytes())?;
    write_file(&sparse.join("images.txt"), imgs.as_bytes())?;
    write_file(&sparse.join("points3D.txt"), colmap_points(&scene.sfm).as_bytes())?;
    write_file(
        &root.join("labels.json"),
        serde_json::to_string_pretty(&scene.label_map)?.as_bytes(),
    )?;
    write_file(
        &root.join("scene.json"),
        serde_json::to_string_pretty(&scene.spec)?.as_bytes(),
    )?;
    emit_checkpoint_series(scene, levels, iterations, &root.join("checkpoints"))
}
