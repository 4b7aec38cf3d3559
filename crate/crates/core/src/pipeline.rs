//! Scene-directory pipeline behind the `sage-lod` binary: configuration,
//! one function per subcommand, and the report.
//!
//! A scene directory follows the usual splatting layout:
//!
//! ```text
//! images/            ground-truth images, named as in images.txt
//! masks/             8-bit label PNGs with the same names
//! sparse/0/          cameras.txt, images.txt, points3D.txt
//! checkpoints/       <label>/iteration_<i>/point_cloud.ply + manifest.json
//! labels.json        {"0": "ground", ...}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::camera::{parse_colmap, ViewPose, ViewSet};
use crate::error::{Error, Result};
use crate::lod::{
    compose_selection, dense_curve, fit_profile, select_iterations, CurveSet, FitFailure,
    SelectionMode, SelectionPlan, DENSE_SAMPLES,
};
use crate::metrics::{
    build_quality_profile, masked_psnr, masked_ssim, psnr, ssim, DistanceSource, ProfileMetadata,
    ProfileOptions, QualityProfile,
};
use crate::renderer::{render, Image, RenderOptions};
use crate::semantics::{assign_labels, load_mask, LabelMap, LabeledCloud, SemanticMask, VotingOptions};
use crate::splat_io::{
    bytes_to_mb, format_bytes, occupancy_bytes, save_splat_ply, CheckpointSet, BYTES_PER_GAUSSIAN,
};
use crate::synth::{generate_scene, write_scene, SceneSpec};
use crate::LabelId;

pub const CONFIG_FILE: &str = "config.json";
pub const LABELED_POINTS_FILE: &str = "labeled_points.ply";
pub const PROFILE_JSON: &str = "profile.json";
pub const PROFILE_CSV: &str = "profile.csv";
pub const MEAN_SERIES_CSV: &str = "mean_ssim.csv";
pub const CURVES_JSON: &str = "curves.json";
pub const CURVE_SAMPLES_CSV: &str = "curve_samples.csv";
pub const FIT_FAILURES_JSON: &str = "fit_failures.json";
pub const RENDER_METRICS_JSON: &str = "render_metrics.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

fn default_images() -> PathBuf {
    "images".into()
}
fn default_masks() -> PathBuf {
    "masks".into()
}
fn default_sparse() -> PathBuf {
    "sparse/0".into()
}
fn default_checkpoints() -> PathBuf {
    "checkpoints".into()
}
fn default_labels() -> PathBuf {
    "labels.json".into()
}
fn default_out() -> PathBuf {
    "out".into()
}
fn default_targets() -> Vec<f64> {
    vec![0.5, 0.7]
}

/// Which views to profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewSelection {
    #[default]
    #[serde(with = "all_keyword")]
    All,
    Names(Vec<String>),
}

mod all_keyword {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected \"all\" or a list of view names"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f64; 3],
    pub min_transmittance: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let d = RenderOptions::default();
        RenderConfig {
            background: d.background,
            min_transmittance: d.min_transmittance,
        }
    }
}

impl From<RenderConfig> for RenderOptions {
    fn from(c: RenderConfig) -> Self {
        RenderOptions {
            background: c.background,
            min_transmittance: c.min_transmittance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    pub occlusion_test: bool,
    pub depth_tolerance: f64,
}

impl Default for VotingConfig {
    fn default() -> Self {
        let d = VotingOptions::default();
        VotingConfig {
            occlusion_test: d.occlusion_test,
            depth_tolerance: d.depth_tolerance,
        }
    }
}

/// Scene spec and emulated checkpoint series for `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub levels: Vec<f64>,
    pub iterations: Vec<u32>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let (levels, iterations) = SceneSpec::standard_series();
        SynthConfig {
            scene: SceneSpec::standard(),
            levels,
            iterations,
        }
    }
}

/// Pipeline configuration. Relative `scene_root` and `out` resolve against
/// the config file's directory; the other paths against `scene_root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scene_root: PathBuf,
    #[serde(default)]
    pub scene_id: String,
    #[serde(default = "default_images")]
    pub images: PathBuf,
    #[serde(default = "default_masks")]
    pub masks: PathBuf,
    #[serde(default = "default_sparse")]
    pub sparse: PathBuf,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: PathBuf,
    #[serde(default = "default_labels")]
    pub labels: PathBuf,
    /// SfM points (`points3D.txt` or PLY); defaults to `sparse/points3D.txt`.
    #[serde(default)]
    pub points: Option<PathBuf>,
    #[serde(default)]
    pub views: ViewSelection,
    /// View used by `select`, `report`; defaults to the first profiled view.
    #[serde(default)]
    pub select_view: Option<String>,
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
    #[serde(default)]
    pub mode: SelectionMode,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub voting: VotingConfig,
    #[serde(default)]
    pub distance_source: DistanceSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn for_scene(scene_root: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            scene_root: scene_root.into(),
            scene_id: String::new(),
            images: default_images(),
            masks: default_masks(),
            sparse: default_sparse(),
            checkpoints: default_checkpoints(),
            labels: default_labels(),
            points: None,
            views: ViewSelection::All,
            select_view: None,
            targets: default_targets(),
            mode: SelectionMode::Empirical,
            out: default_out(),
            render: RenderConfig::default(),
            voting: VotingConfig::default(),
            distance_source: DistanceSource::SfmPoints,
            seed: 0,
            synth: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate_values()?;
        Ok(cfg)
    }

    pub fn validate_values(&self) -> Result<()> {
        for &t in &self.targets {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("target {t} not in (0, 1)")));
            }
        }
        if let ViewSelection::Names(v) = &self.views {
            if v.is_empty() {
                return Err(Error::Config("empty view list".into()));
            }
        }
        Ok(())
    }

    pub fn root(&self) -> PathBuf {
        self.base_dir.join(&self.scene_root)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base_dir.join(&self.out)
    }

    fn scene_path(&self, p: &Path) -> PathBuf {
        self.root().join(p)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    fn scene_id(&self) -> String {
        if !self.scene_id.is_empty() {
            return self.scene_id.clone();
        }
        self.root()
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    }

    fn points_path(&self) -> PathBuf {
        match &self.points {
            Some(p) => self.scene_path(p),
            None => self.scene_path(&self.sparse).join("points3D.txt"),
        }
    }

    fn require(path: &Path, what: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} not found: {}", path.display())))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `{hint}` first",
            path.display()
        )));
    }
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn load_views(cfg: &PipelineConfig) -> Result<ViewSet> {
    let sparse = cfg.scene_path(&cfg.sparse);
    let cams = sparse.join("cameras.txt");
    let imgs = sparse.join("images.txt");
    PipelineConfig::require(&cams, "cameras.txt")?;
    PipelineConfig::require(&imgs, "images.txt")?;
    let cam_bytes = fs::read(&cams).map_err(|e| Error::io(&cams, e))?;
    let img_bytes = fs::read(&imgs).map_err(|e| Error::io(&imgs, e))?;
    parse_colmap(&cam_bytes, &img_bytes)
}

fn load_label_map(cfg: &PipelineConfig) -> Result<LabelMap> {
    let path = cfg.scene_path(&cfg.labels);
    PipelineConfig::require(&path, "label map")?;
    LabelMap::from_json(&read_text(&path)?)
}

/// Mask file for a view: same file name with a `.png` extension.
fn mask_path(cfg: &PipelineConfig, pose: &ViewPose) -> PathBuf {
    cfg.scene_path(&cfg.masks)
        .join(Path::new(&pose.image_name).with_extension("png"))
}

fn profiled_poses<'a>(cfg: &PipelineConfig, views: &'a ViewSet) -> Result<Vec<&'a ViewPose>> {
    match &cfg.views {
        ViewSelection::All => Ok(views.poses.iter().collect()),
        ViewSelection::Names(names) => names
            .iter()
            .map(|n| {
                views
                    .find_by_name(n)
                    .ok_or_else(|| Error::Config(format!("view `{n}` not in images.txt")))
            })
            .collect(),
    }
}

/// Masks of the given views that exist on disk; missing ones are skipped
/// with a warning.
fn load_masks(
    cfg: &PipelineConfig,
    views: &ViewSet,
    poses: &[&ViewPose],
) -> Result<Vec<SemanticMask>> {
    let mut masks = Vec::new();
    for pose in poses {
        let path = mask_path(cfg, pose);
        if !path.exists() {
            warn!("no mask for view `{}` ({})", pose.image_name, path.display());
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        masks.push(load_mask(&bytes, pose.view_id, Some(views.camera_of(pose)?))?);
    }
    Ok(masks)
}

/// `label`: majority-votes mask labels onto the SfM points and writes the
/// labeled PLY.
pub fn cmd_label(cfg: &PipelineConfig) -> Result<PathBuf> {
    let views = load_views(cfg)?;
    let poses: Vec<&ViewPose> = views.poses.iter().collect();
    let masks = load_masks(cfg, &views, &poses)?;
    if masks.is_empty() {
        return Err(Error::Config(format!(
            "no masks found under {}",
            cfg.scene_path(&cfg.masks).display()
        )));
    }
    let points_path = cfg.points_path();
    PipelineConfig::require(&points_path, "SfM points")?;
    let points = LabeledCloud::read(&points_path)?;
    let labeled = assign_labels(
        &points.points,
        &views,
        &masks,
        VotingOptions {
            occlusion_test: cfg.voting.occlusion_test,
            depth_tolerance: cfg.voting.depth_tolerance,
        },
    )?;
    let unlabeled = labeled
        .labels
        .iter()
        .filter(|&&l| l == crate::UNLABELED)
        .count();
    info!(
        "labeled {} of {} points from {} masks",
        labeled.len() - unlabeled,
        labeled.len(),
        masks.len()
    );
    let out = cfg.out_path(LABELED_POINTS_FILE);
    write_bytes(&out, &labeled.to_ply())?;
    Ok(out)
}

fn load_labeled_points(cfg: &PipelineConfig) -> Result<LabeledCloud> {
    let path = cfg.out_path(LABELED_POINTS_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `label` first",
            path.display()
        )));
    }
    LabeledCloud::read(&path)
}

fn load_checkpoints(cfg: &PipelineConfig) -> Result<CheckpointSet> {
    let root = cfg.scene_path(&cfg.checkpoints);
    PipelineConfig::require(&root, "checkpoint directory")?;
    CheckpointSet::load(&root)
}

/// `profile`: masked SSIM/PSNR for every (label, iteration, view).
pub fn cmd_profile(cfg: &PipelineConfig) -> Result<QualityProfile> {
    let views = load_views(cfg)?;
    let label_map = load_label_map(cfg)?;
    let poses = profiled_poses(cfg, &views)?;
    let cloud = load_labeled_points(cfg)?;
    let checkpoints = load_checkpoints(cfg)?;

    let mut masks = BTreeMap::new();
    let mut gt = BTreeMap::new();
    let mut ids = Vec::new();
    for m in load_masks(cfg, &views, &poses)? {
        let pose = views.pose(m.view_id).expect("mask loaded for a known view");
        let img_path = cfg.scene_path(&cfg.images).join(&pose.image_name);
        if !img_path.exists() {
            warn!("no ground truth for `{}`; view skipped", pose.image_name);
            continue;
        }
        gt.insert(m.view_id, Image::read(&img_path)?);
        ids.push(m.view_id);
        masks.insert(m.view_id, m);
    }
    if ids.is_empty() {
        return Err(Error::Config("no view has both a mask and an image".into()));
    }
    let profile = build_quality_profile(
        &checkpoints,
        &views,
        &masks,
        &gt,
        &cloud,
        &label_map,
        &ProfileOptions {
            scene_id: cfg.scene_id(),
            render: cfg.render.into(),
            views: Some(ids),
            distance_source: cfg.distance_source,
        },
    )?;
    write_json(&cfg.out_path(PROFILE_JSON), &profile)?;
    let mut csv = Vec::new();
    profile.write_csv(&mut csv)?;
    write_bytes(&cfg.out_path(PROFILE_CSV), &csv)?;
    let mut series = Vec::new();
    profile.write_mean_series_csv(&mut series)?;
    write_bytes(&cfg.out_path(MEAN_SERIES_CSV), &series)?;
    Ok(profile)
}

fn load_profile(cfg: &PipelineConfig) -> Result<QualityProfile> {
    read_json(&cfg.out_path(PROFILE_JSON), "profile")
}

/// `fit`: curves for every (label, iteration) plus dense samples for plots.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<(CurveSet, Vec<FitFailure>)> {
    let profile = load_profile(cfg)?;
    let (curves, failures) = fit_profile(&profile);
    for f in &failures {
        warn!(
            "no curve for {} @ {}: {}",
            profile.label_map.name(f.label_id),
            f.iteration,
            f.reason
        );
    }
    write_json(&cfg.out_path(CURVES_JSON), &curves)?;
    write_json(&cfg.out_path(FIT_FAILURES_JSON), &failures)?;

    let mut text = String::from("label,iteration,d,ssim\n");
    for c in &curves.curves {
        let ds: Vec<f64> = profile
            .samples
            .iter()
            .filter(|s| s.label_id == c.label_id && s.iteration == c.iteration)
            .filter_map(|s| s.d_min)
            .collect();
        let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (d, q) in dense_curve(c, lo, hi, DENSE_SAMPLES) {
            let _ = writeln!(
                text,
                "{},{},{d},{q}",
                profile.label_map.name(c.label_id),
                c.iteration
            );
        }
    }
    write_bytes(&cfg.out_path(CURVE_SAMPLES_CSV), text.as_bytes())?;
    Ok((curves, failures))
}

/// Per-invocation overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub targets: Option<Vec<f64>>,
    pub view: Option<String>,
    pub mode: Option<SelectionMode>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(t) = &self.targets {
            cfg.targets = t.clone();
        }
        if let Some(v) = &self.view {
            cfg.select_view = Some(v.clone());
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate_values()
    }
}

pub fn plan_file_name(target: f64) -> String {
    format!("plan_t{target:.2}.json")
}

fn selection_view(cfg: &PipelineConfig, profile: &QualityProfile) -> Result<String> {
    let views = profile.views();
    match &cfg.select_view {
        Some(v) => {
            let stem = |s: &str| {
                Path::new(s)
                    .file_stem()
                    .map(|x| x.to_string_lossy().into_owned())
                    .unwrap_or_default()
            };
            views
                .iter()
                .find(|p| *p == v || stem(p) == *v)
                .cloned()
                .ok_or_else(|| Error::Config(format!("view `{v}` is not in the profile")))
        }
        None => views
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("profile has no views".into())),
    }
}

/// `select`: one plan per configured target.
pub fn cmd_select(cfg: &PipelineConfig) -> Result<Vec<SelectionPlan>> {
    if cfg.targets.is_empty() {
        return Err(Error::Config("no targets configured".into()));
    }
    let profile = load_profile(cfg)?;
    let curves: Option<CurveSet> = match cfg.mode {
        SelectionMode::Model => Some(read_json(&cfg.out_path(CURVES_JSON), "fit")?),
        SelectionMode::Empirical => None,
    };
    let view = selection_view(cfg, &profile)?;
    let mut plans = Vec::new();
    for &t in &cfg.targets {
        let plan = select_iterations(&profile, curves.as_ref(), &view, t, cfg.mode)?;
        plan.check_invariants()?;
        write_json(&cfg.out_path(&plan_file_name(t)), &plan)?;
        plans.push(plan);
    }
    Ok(plans)
}

fn load_plans(cfg: &PipelineConfig) -> Result<Vec<SelectionPlan>> {
    if cfg.targets.is_empty() {
        return Err(Error::Config("no targets configured".into()));
    }
    cfg.targets
        .iter()
        .map(|&t| read_json(&cfg.out_path(&plan_file_name(t)), "select"))
        .collect()
}

pub fn composed_file_name(target: f64) -> String {
    format!("composed_t{target:.2}.ply")
}

/// `compose`: merged cloud per plan.
pub fn cmd_compose(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let checkpoints = load_checkpoints(cfg)?;
    let mut written = Vec::new();
    for plan in load_plans(cfg)? {
        let (manifest, merged) = compose_selection(&plan, &checkpoints)?;
        let path = cfg.out_path(&composed_file_name(plan.target_ssim));
        save_splat_ply(&path, &merged)?;
        let entries: Vec<_> = manifest
            .entries
            .iter()
            .map(|e| (e.label_id, e.iteration, e.cloud.len()))
            .collect();
        write_json(
            &cfg.out_path(&format!("composed_t{:.2}.json", plan.target_ssim)),
            &entries,
        )?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQuality {
    pub label_id: LabelId,
    pub label: String,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
}

/// Full-view and per-label quality of one composed render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMetrics {
    pub target_ssim: f64,
    pub view: String,
    pub image: String,
    pub ssim: f64,
    pub psnr: Option<f64>,
    pub labels: Vec<LabelQuality>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// `render`: renders each composed scene from the selection view (or all
/// profiled views when none is set) and scores it.
pub fn cmd_render(cfg: &PipelineConfig) -> Result<Vec<RenderMetrics>> {
    let views = load_views(cfg)?;
    let label_map = load_label_map(cfg)?;
    let poses: Vec<&ViewPose> = match &cfg.select_view {
        Some(v) => vec![views
            .find_by_name(v)
            .ok_or_else(|| Error::Config(format!("view `{v}` not in images.txt")))?],
        None => profiled_poses(cfg, &views)?,
    };
    let opts: RenderOptions = cfg.render.into();
    let mut metrics = Vec::new();
    for &t in &cfg.targets {
        let path = cfg.out_path(&composed_file_name(t));
        if !path.exists() {
            return Err(Error::Config(format!(
                "{} not found; run `compose` first",
                path.display()
            )));
        }
        let cloud = crate::splat_io::read_splat_ply(&path)?;
        for pose in &poses {
            let cam = views.camera_of(pose)?;
            let img = render(&cloud, cam, pose, &opts);
            let stem = Path::new(&pose.image_name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let name = format!("render_t{t:.2}_{stem}.png");
            write_bytes(&cfg.out_path(&name), &img.to_png()?)?;

            let gt_path = cfg.scene_path(&cfg.images).join(&pose.image_name);
            if !gt_path.exists() {
                warn!("no ground truth for `{}`; render not scored", pose.image_name);
                continue;
            }
            let gt = Image::read(&gt_path)?;
            let mask_file = mask_path(cfg, pose);
            let mask = if mask_file.exists() {
                let bytes = fs::read(&mask_file).map_err(|e| Error::io(&mask_file, e))?;
                Some(load_mask(&bytes, pose.view_id, Some(cam))?)
            } else {
                None
            };
            let mut labels = Vec::new();
            if let Some(mask) = &mask {
                for &id in label_map.entries.keys() {
                    labels.push(LabelQuality {
                        label_id: id,
                        label: label_map.name(id),
                        ssim: masked_ssim(&img, &gt, mask, id)?,
                        psnr: masked_psnr(&img, &gt, mask, id)?.and_then(finite),
                    });
                }
            }
            metrics.push(RenderMetrics {
                target_ssim: t,
                view: pose.image_name.clone(),
                image: name,
                ssim: ssim(&img, &gt)?,
                psnr: finite(psnr(&img, &gt)?),
                labels,
            });
        }
    }
    write_json(&cfg.out_path(RENDER_METRICS_JSON), &metrics)?;
    Ok(metrics)
}

/// Choice of one label under one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCell {
    pub target_ssim: f64,
    pub iteration: u32,
    pub gaussians: u64,
    pub bytes: u64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label_id: LabelId,
    pub label: String,
    pub d_min: Option<f64>,
    pub d_avg: Option<f64>,
    /// Masked SSIM of the report view per iteration.
    pub ssim: BTreeMap<u32, f64>,
    /// Gaussians at the largest iteration.
    pub full_gaussians: u64,
    pub full_bytes: u64,
    pub targets: Vec<TargetCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTotal {
    pub target_ssim: f64,
    pub gaussians: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scene_id: String,
    pub view: String,
    pub mode: SelectionMode,
    pub iterations: Vec<u32>,
    pub rows: Vec<ReportRow>,
    pub full_gaussians: u64,
    pub full_bytes: u64,
    pub totals: Vec<TargetTotal>,
    #[serde(default)]
    pub renders: Vec<RenderMetrics>,
    pub metadata: ProfileMetadata,
}

impl Report {
    /// Builds the report from a profile and its plans (all for one view).
    pub fn build(profile: &QualityProfile, plans: &[SelectionPlan]) -> Result<Self> {
        let view = plans
            .first()
            .map(|p| p.view.clone())
            .or_else(|| profile.views().into_iter().next())
            .unwrap_or_default();
        if plans.iter().any(|p| p.view != view) {
            return Err(Error::Argument("plans were made for different views".into()));
        }
        let iterations = profile.iterations();
        let mut rows = Vec::new();
        for label in profile.labels() {
            let in_view: Vec<_> = profile
                .samples
                .iter()
                .filter(|s| s.label_id == label && s.view == view)
                .collect();
            let ssim: BTreeMap<u32, f64> = in_view.iter().map(|s| (s.iteration, s.ssim)).collect();
            let full_n = profile
                .samples
                .iter()
                .filter(|s| s.label_id == label)
                .max_by_key(|s| s.iteration)
                .map_or(0, |s| s.gaussian_count);
            let targets = plans
                .iter()
                .filter_map(|p| {
                    p.choices.get(&label).map(|c| TargetCell {
                        target_ssim: p.target_ssim,
                        iteration: c.iteration,
                        gaussians: c.gaussians,
                        bytes: occupancy_bytes(c.gaussians),
                        fallback: c.fallback,
                    })
                })
                .collect();
            rows.push(ReportRow {
                label_id: label,
                label: profile.label_map.name(label),
                d_min: in_view.iter().find_map(|s| s.d_min),
                d_avg: in_view.iter().find_map(|s| s.d_avg),
                ssim,
                full_gaussians: full_n,
                full_bytes: occupancy_bytes(full_n),
                targets,
            });
        }
        let full_gaussians = rows.iter().map(|r| r.full_gaussians).sum();
        let totals = plans
            .iter()
            .map(|p| TargetTotal {
                target_ssim: p.target_ssim,
                gaussians: p.total_gaussians,
                bytes: p.total_bytes,
            })
            .collect();
        let report = Report {
            scene_id: profile.scene_id.clone(),
            view,
            mode: plans.first().map(|p| p.mode).unwrap_or_default(),
            iterations,
            rows,
            full_gaussians,
            full_bytes: occupancy_bytes(full_gaussians),
            totals,
            renders: Vec::new(),
            metadata: ProfileMetadata::current(),
        };
        report.check()?;
        Ok(report)
    }

    /// Totals equal column sums and every byte count is 248 per gaussian.
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Argument(format!("report inconsistent: {what}")));
        if self.full_gaussians != self.rows.iter().map(|r| r.full_gaussians).sum::<u64>() {
            return bad("full total");
        }
        if self.full_bytes != self.full_gaussians * BYTES_PER_GAUSSIAN {
            return bad("full bytes");
        }
        for r in &self.rows {
            if r.full_bytes != r.full_gaussians * BYTES_PER_GAUSSIAN
                || r.targets.iter().any(|c| c.bytes != c.gaussians * BYTES_PER_GAUSSIAN)
            {
                return bad("row bytes");
            }
        }
        for t in &self.totals {
            let sum: u64 = self
                .rows
                .iter()
                .flat_map(|r| r.targets.iter())
                .filter(|c| c.target_ssim == t.target_ssim)
                .map(|c| c.gaussians)
                .sum();
            if sum != t.gaussians || t.bytes != t.gaussians * BYTES_PER_GAUSSIAN {
                return bad("target totals");
            }
        }
        Ok(())
    }

    /// Aligned text table: label, distances, SSIM per iteration, gaussians
    /// and occupancy for the full cloud and each target.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Label".to_string(), "d_min".into(), "d_avg".into()];
        header.extend(self.iterations.iter().map(|i| format!("SSIM@{i}")));
        header.push("N full".into());
        for t in &self.totals {
            header.push(format!("N t={:.2}", t.target_ssim));
        }
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let mut rows: Vec<Vec<String>> = Vec::new();
        for r in &self.rows {
            let mut row = vec![r.label.clone(), opt(r.d_min), opt(r.d_avg)];
            row.extend(
                self.iterations
                    .iter()
                    .map(|i| r.ssim.get(i).map_or("-".into(), |v| format!("{v:.3}"))),
            );
            row.push(group_thousands(r.full_gaussians));
            for t in &self.totals {
                row.push(
                    r.targets
                        .iter()
                        .find(|c| c.target_ssim == t.target_ssim)
                        .map_or("-".into(), |c| {
                            let mark = if c.fallback { "*" } else { "" };
                            format!("{}{mark}", group_thousands(c.gaussians))
                        }),
                );
            }
            rows.push(row);
        }
        let mut total = vec!["Total".to_string(), String::new(), String::new()];
        total.extend(self.iterations.iter().map(|_| String::new()));
        total.push(group_thousands(self.full_gaussians));
        total.extend(self.totals.iter().map(|t| group_thousands(t.gaussians)));
        rows.push(total);
        let mut mem = vec!["Memory".to_string(), String::new(), String::new()];
        mem.extend(self.iterations.iter().map(|_| String::new()));
        mem.push(format_bytes(self.full_bytes));
        mem.extend(self.totals.iter().map(|t| format_bytes(t.bytes)));
        rows.push(mem);

        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .map(|r| r[c].len())
                    .chain(std::iter::once(header[c].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (c, cell) in cells.iter().enumerate() {
                if c == 0 {
                    let _ = write!(s, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(s, "  {cell:>w$}", w = widths[c]);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = format!(
            "scene {}  view {}  mode {:?}\n",
            self.scene_id, self.view, self.mode
        );
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str("* no checkpoint met the target; largest iteration used\n");
        for m in &self.renders {
            let _ = writeln!(
                out,
                "render t={:.2} {}: SSIM {:.4}  PSNR {}",
                m.target_ssim,
                m.view,
                m.ssim,
                m.psnr.map_or("inf".into(), |p| format!("{p:.2} dB"))
            );
        }
        out
    }
}

fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// `report`: JSON and text report from the profile, plans and (if present)
/// render metrics.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Report> {
    let profile = load_profile(cfg)?;
    let plans = load_plans(cfg)?;
    let mut report = Report::build(&profile, &plans)?;
    let metrics_path = cfg.out_path(RENDER_METRICS_JSON);
    if metrics_path.exists() {
        report.renders = serde_json::from_str(&read_text(&metrics_path)?)?;
    }
    write_json(&cfg.out_path(REPORT_JSON), &report)?;
    write_bytes(&cfg.out_path(REPORT_TXT), report.to_table().as_bytes())?;
    Ok(report)
}

/// `synth`: writes a synthetic scene under `scene_root` and a config next
/// to it when none exists yet.
pub fn cmd_synth(cfg: &PipelineConfig, config_path: &Path) -> Result<CheckpointSet> {
    let mut synth = cfg.synth.clone().unwrap_or_default();
    synth.scene.seed = if cfg.seed != 0 { cfg.seed } else { synth.scene.seed };
    let scene = generate_scene(&synth.scene)?;
    let set = write_scene(&scene, &cfg.root(), &synth.levels, &synth.iterations)?;
    if !config_path.exists() {
        write_json(config_path, cfg)?;
    }
    info!(
        "wrote {} views, {} checkpoints ({:.2} MB full detail) to {}",
        scene.views.poses.len(),
        set.len(),
        bytes_to_mb(occupancy_bytes(scene.full.len() as u64)),
        cfg.root().display()
    );
    Ok(set)
}
