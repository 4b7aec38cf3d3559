//! Full-image and mask-restricted SSIM / PSNR, and the per-(label,
//! iteration, view) quality profile.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{label_distances, ViewSet};
use crate::error::{Error, Result};
use crate::renderer::{render, Image, RenderOptions};
use crate::semantics::{LabelMap, LabeledCloud, SemanticMask};
use crate::splat_io::CheckpointSet;
use crate::LabelId;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * line[reflect(x as isize + j as isize - r, w)];
            }
            *out = acc;
        }
    });
    let mut dst = vec![0.0; w * h];
    dst.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + j as isize - r, h) * w + x];
            }
            *out = acc;
        }
    });
    dst
}

/// Per-pixel SSIM (channel-averaged) and its mean.
#[derive(Debug, Clone)]
pub struct SsimMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
    pub mean: f64,
}

impl SsimMap {
    /// Mean of the map over pixels where `mask == label`.
    pub fn masked_mean(&self, mask: &SemanticMask, label: LabelId) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for (v, &l) in self.values.iter().zip(&mask.labels) {
            if l == label {
                sum += v;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Argument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn check_mask(img: &Image, mask: &SemanticMask) -> Result<()> {
    if img.width != mask.width || img.height != mask.height {
        return Err(Error::Geometry(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width, mask.height, img.width, img.height
        )));
    }
    Ok(())
}

pub fn ssim_map(img: &Image, reference: &Image) -> Result<SsimMap> {
    check_dims(img, reference)?;
    let (w, h) = (img.width as usize, img.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let n = w * h;
    let mut values = vec![0.0f64; n];
    for c in 0..3 {
        let x: Vec<f64> = (0..n).map(|i| img.rgb[3 * i + c] as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| reference.rgb[3 * i + c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, w, h, &k);
        let mu_y = blur(&y, w, h, &k);
        let e_xx = blur(&xx, w, h, &k);
        let e_yy = blur(&yy, w, h, &k);
        let e_xy = blur(&xy, w, h, &k);
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2));
            values[i] += s;
        }
    }
    values.iter_mut().for_each(|v| *v /= 3.0);
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(SsimMap {
        width: img.width,
        height: img.height,
        values,
        mean,
    })
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, channel-averaged).
pub fn ssim(img: &Image, reference: &Image) -> Result<f64> {
    ssim_map(img, reference).map(|m| m.mean)
}

/// Mean of the full-image SSIM map restricted to `mask == label`.
pub fn masked_ssim(
    img: &Image,
    reference: &Image,
    mask: &SemanticMask,
    label: LabelId,
) -> Result<Option<f64>> {
    check_mask(img, mask)?;
    Ok(ssim_map(img, reference)?.masked_mean(mask, label))
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR in dB on the [0, 1] range with channel-pooled MSE.
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    check_dims(img, reference)?;
    let se: f64 = img
        .rgb
        .iter()
        .zip(&reference.rgb)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(se / img.rgb.len().max(1) as f64))
}

pub fn masked_psnr(
    img: &Image,
    reference: &Image,
    mask: &SemanticMask,
    label: LabelId,
) -> Result<Option<f64>> {
    check_dims(img, reference)?;
    check_mask(img, mask)?;
    let (mut se, mut n) = (0.0, 0usize);
    for (i, &l) in mask.labels.iter().enumerate() {
        if l != label {
            continue;
        }
        for c in 0..3 {
            let d = img.rgb[3 * i + c] as f64 - reference.rgb[3 * i + c] as f64;
            se += d * d;
        }
        n += 3;
    }
    Ok((n > 0).then(|| psnr_from_mse(se / n as f64)))
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySample {
    pub label_id: LabelId,
    pub iteration: u32,
    pub view: String,
    pub ssim: f64,
    /// Infinite for a perfect match (JSON null).
    #[serde(with = "infinite_as_null")]
    pub psnr: f64,
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_avg: Option<f64>,
    pub gaussian_count: u64,
    pub mask_pixel_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileMetadata {
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub ssim_channels: String,
    pub bytes_per_gaussian: u64,
}

impl ProfileMetadata {
    pub fn current() -> Self {
        ProfileMetadata {
            ssim_window: SSIM_WINDOW,
            ssim_sigma: SSIM_SIGMA,
            ssim_c1: SSIM_C1,
            ssim_c2: SSIM_C2,
            ssim_channels: "rgb-averaged".into(),
            bytes_per_gaussian: crate::splat_io::BYTES_PER_GAUSSIAN,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityProfile {
    pub scene_id: String,
    pub label_map: LabelMap,
    pub samples: Vec<QualitySample>,
    #[serde(default)]
    pub metadata: ProfileMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    scene: String,
    label: String,
    iteration: u32,
    view: String,
    ssim: f64,
    psnr: f64,
    d_min: Option<f64>,
    n_gaussians: u64,
    mask_px: u64,
}

impl QualityProfile {
    pub fn new(scene_id: impl Into<String>, label_map: LabelMap) -> Self {
        QualityProfile {
            scene_id: scene_id.into(),
            label_map,
            samples: Vec::new(),
            metadata: ProfileMetadata::current(),
        }
    }

    /// Adds a sample; at most one per (label, iteration, view).
    pub fn push(&mut self, sample: QualitySample) -> Result<()> {
        if self.samples.iter().any(|s| {
            s.label_id == sample.label_id && s.iteration == sample.iteration && s.view == sample.view
        }) {
            return Err(Error::Argument(format!(
                "duplicate sample for label {} iteration {} view {}",
                sample.label_id, sample.iteration, sample.view
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn labels(&self) -> Vec<LabelId> {
        let mut v: Vec<LabelId> = self.samples.iter().map(|s| s.label_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn iterations(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.samples.iter().map(|s| s.iteration).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn views(&self) -> Vec<String> {
        let mut v: Vec<String> = self.samples.iter().map(|s| s.view.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn sample(&self, label: LabelId, iteration: u32, view: &str) -> Option<&QualitySample> {
        self.samples
            .iter()
            .find(|s| s.label_id == label && s.iteration == iteration && s.view == view)
    }

    /// Per label, mean SSIM over views for each iteration.
    pub fn mean_ssim_series(&self) -> BTreeMap<LabelId, Vec<(u32, f64, usize)>> {
        let mut acc: BTreeMap<(LabelId, u32), (f64, usize)> = BTreeMap::new();
        for s in &self.samples {
            let e = acc.entry((s.label_id, s.iteration)).or_default();
            e.0 += s.ssim;
            e.1 += 1;
        }
        let mut out: BTreeMap<LabelId, Vec<(u32, f64, usize)>> = BTreeMap::new();
        for ((l, i), (sum, n)) in acc {
            out.entry(l).or_default().push((i, sum / n as f64, n));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.samples {
            wtr.serialize(CsvRow {
                scene: self.scene_id.clone(),
                label: self.label_map.name(s.label_id),
                iteration: s.iteration,
                view: s.view.clone(),
                ssim: s.ssim,
                psnr: s.psnr,
                d_min: s.d_min,
                n_gaussians: s.gaussian_count,
                mask_px: s.mask_pixel_count,
            })?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the CSV form. Label names are resolved through `label_map`;
    /// unknown names get the lowest unused id and are added to it.
    pub fn read_csv<R: Read>(r: R, label_map: LabelMap) -> Result<Self> {
        let mut profile = QualityProfile::new(String::new(), label_map);
        let mut rdr = csv::Reader::from_reader(r);
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            if profile.scene_id.is_empty() {
                profile.scene_id = row.scene.clone();
            }
            let label_id = match profile.label_map.id_of(&row.label) {
                Some(id) => id,
                None => {
                    let id = (0..crate::UNLABELED)
                        .find(|id| !profile.label_map.entries.contains_key(id))
                        .ok_or_else(|| Error::Argument("too many labels".into()))?;
                    profile.label_map.entries.insert(id, row.label.clone());
                    id
                }
            };
            profile.push(QualitySample {
                label_id,
                iteration: row.iteration,
                view: row.view,
                ssim: row.ssim,
                psnr: row.psnr,
                d_min: row.d_min,
                d_avg: None,
                gaussian_count: row.n_gaussians,
                mask_pixel_count: row.mask_px,
                lpips: None,
            })?;
        }
        Ok(profile)
    }

    /// Per-label mean over views: label, iteration, mean SSIM, number of views.
    pub fn write_mean_series_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["label", "iteration", "mean_ssim", "n_views"])?;
        for (l, series) in self.mean_ssim_series() {
            for (i, m, n) in series {
                wtr.write_record([
                    self.label_map.name(l),
                    i.to_string(),
                    format!("{m}"),
                    n.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Where d_min is measured from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    /// Labeled SfM points.
    #[default]
    SfmPoints,
    /// Centers of the checkpoint's own gaussians.
    SplatCenters,
}

#[derive(Debug, Clone, Default)]
pub struct ProfileOptions {
    pub scene_id: String,
    pub render: RenderOptions,
    /// Restrict to these view ids; all poses when `None`.
    pub views: Option<Vec<u32>>,
    pub distance_source: DistanceSource,
}

/// Renders every per-label checkpoint from every profiled view and records
/// masked SSIM / PSNR against ground truth, d_min and N_l(i).
pub fn build_quality_profile(
    checkpoints: &CheckpointSet,
    views: &ViewSet,
    masks: &BTreeMap<u32, SemanticMask>,
    ground_truth: &BTreeMap<u32, Image>,
    cloud: &LabeledCloud,
    label_map: &LabelMap,
    opts: &ProfileOptions,
) -> Result<QualityProfile> {
    let poses: Vec<_> = match &opts.views {
        None => views.poses.iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                views
                    .pose(*id)
                    .ok_or_else(|| Error::Profiling(format!("view {id} not in the view set")))
            })
            .collect::<Result<_>>()?,
    };
    if poses.is_empty() {
        return Err(Error::Profiling("no views to profile".into()));
    }
    for pose in &poses {
        let cam = views.camera_of(pose)?;
        let gt = ground_truth.get(&pose.view_id).ok_or_else(|| {
            Error::Profiling(format!("missing ground truth for view `{}`", pose.image_name))
        })?;
        if gt.width != cam.width || gt.height != cam.height {
            return Err(Error::Geometry(format!(
                "ground truth for `{}` is {}x{}, camera is {}x{}",
                pose.image_name, gt.width, gt.height, cam.width, cam.height
            )));
        }
        masks
            .get(&pose.view_id)
            .ok_or_else(|| {
                Error::Profiling(format!("missing mask for view `{}`", pose.image_name))
            })?
            .check_against(cam)?;
    }

    let mut profile = QualityProfile::new(opts.scene_id.clone(), label_map.clone());
    for entry in checkpoints.entries() {
        let label = entry.label_id;
        let splats = entry.load()?;
        info!(
            "profiling {} @ {} ({} gaussians)",
            entry.label_name, entry.iteration, entry.count
        );
        let centers;
        let distance_cloud = match opts.distance_source {
            DistanceSource::SfmPoints => cloud,
            DistanceSource::SplatCenters => {
                centers = LabeledCloud::new(
                    splats
                        .gaussians
                        .iter()
                        .map(|g| g.position.map(|v| v as f64))
                        .collect(),
                    vec![label; splats.len()],
                );
                &centers
            }
        };
        let results: Vec<Result<Option<QualitySample>>> = poses
            .par_iter()
            .map(|pose| {
                let cam = views.camera_of(pose)?;
                let mask = &masks[&pose.view_id];
                let mask_px = mask.pixel_count(label);
                if mask_px == 0 {
                    info!(
                        "skip {} @ {} in `{}`: label absent from mask",
                        entry.label_name, entry.iteration, pose.image_name
                    );
                    return Ok(None);
                }
                let gt = &ground_truth[&pose.view_id];
                let img = render(&splats, cam, pose, &opts.render);
                let ssim = ssim_map(&img, gt)?
                    .masked_mean(mask, label)
                    .expect("mask has pixels");
                let psnr = masked_psnr(&img, gt, mask, label)?.expect("mask has pixels");
                let dist = label_distances(distance_cloud, cam, pose, label);
                if dist.is_none() {
                    warn!(
                        "no in-frustum points of {} for `{}`; d_min left empty",
                        entry.label_name, pose.image_name
                    );
                }
                Ok(Some(QualitySample {
                    label_id: label,
                    iteration: entry.iteration,
                    view: pose.image_name.clone(),
                    ssim,
                    psnr,
                    d_min: dist.map(|d| d.0),
                    d_avg: dist.map(|d| d.1),
                    gaussian_count: entry.count as u64,
                    mask_pixel_count: mask_px as u64,
                    lpips: None,
                }))
            })
            .collect();
        for r in results {
            if let Some(sample) = r? {
                profile.push(sample)?;
            }
        }
    }
    Ok(profile)
}
