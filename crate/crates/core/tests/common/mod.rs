#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sage_lod::camera::{CameraModel, ViewPose};
use sage_lod::metrics::{QualityProfile, QualitySample};
use sage_lod::semantics::LabelMap;
use sage_lod::splat_io::{Gaussian3D, SplatCloud, SH_REST_PER_CHANNEL};
use sage_lod::LabelId;

pub const TABLE_VIEW: &str = "DSC8719";
pub const TABLE_ITERATIONS: [u32; 4] = [5000, 10000, 15000, 30000];

/// Single-view table: per-label SSIM at each iteration, gaussian counts at
/// each iteration and (d_min, d_avg). Counts printed in the table are used
/// as is; the others are filled in nondecreasing order between them.
pub const TABLE_ROWS: [(&str, [f64; 4], [u64; 4], f64, f64); 6] = [
    ("bench", [0.587, 0.697, 0.742, 0.750], [141_804, 250_000, 334_433, 336_632], 2.615, 4.621),
    ("bicycle", [0.632, 0.713, 0.759, 0.758], [50_965, 111_799, 130_000, 146_103], 3.046, 4.358),
    ("grass-merged", [0.341, 0.393, 0.434, 0.419], [500_000, 700_000, 900_000, 985_863], 1.609, 6.809),
    ("pavement-merged", [0.586, 0.662, 0.688, 0.693], [163_298, 337_966, 400_000, 424_124], 2.671, 6.335),
    ("sky-other-merged", [0.805, 0.794, 0.795, 0.803], [278_139, 400_000, 500_000, 578_378], 8.980, 27.192),
    ("tree-merged", [0.595, 0.612, 0.642, 0.634], [1_428_984, 2_500_000, 3_000_000, 3_343_641], 0.753, 16.424),
];

pub fn sample(label: LabelId, iteration: u32, view: &str, ssim: f64, count: u64) -> QualitySample {
    QualitySample {
        label_id: label,
        iteration,
        view: view.to_string(),
        ssim,
        psnr: 20.0,
        d_min: Some(1.0),
        d_avg: None,
        gaussian_count: count,
        mask_pixel_count: 100,
        lpips: None,
    }
}

pub fn table_profile() -> QualityProfile {
    let map = LabelMap::new(
        TABLE_ROWS
            .iter()
            .enumerate()
            .map(|(i, r)| (i as LabelId, r.0.to_string())),
    )
    .unwrap();
    let mut p = QualityProfile::new("bicycle", map);
    for (l, (_, q, n, d_min, d_avg)) in TABLE_ROWS.iter().enumerate() {
        for k in 0..4 {
            let mut s = sample(l as LabelId, TABLE_ITERATIONS[k], TABLE_VIEW, q[k], n[k]);
            s.d_min = Some(*d_min);
            s.d_avg = Some(*d_avg);
            p.push(s).unwrap();
        }
    }
    p
}

pub fn camera(width: u32, height: u32, focal: f64) -> CameraModel {
    CameraModel {
        width,
        height,
        fx: focal,
        fy: focal,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
    }
}

/// Camera on a sphere of radius `r` around the origin, looking at it.
pub fn orbit_pose(rng: &mut ChaCha8Rng, view_id: u32, r: f64) -> ViewPose {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let z = rng.random_range(-0.6..0.9);
    let s = (1.0f64 - z * z).sqrt();
    let eye = [r * s * theta.cos(), r * s * theta.sin(), r * z];
    ViewPose::look_at(view_id, 1, format!("view_{view_id:03}.png"), eye, [0.0; 3], [0.0, 0.0, 1.0])
}

/// Random gaussian in a cube of half-width `extent` around the origin.
pub fn random_gaussian(rng: &mut ChaCha8Rng, degree: u8, extent: f32) -> Gaussian3D {
    let mut g = Gaussian3D::default();
    for k in 0..3 {
        g.position[k] = rng.random_range(-extent..extent);
        g.sh_dc[k] = rng.random_range(-1.5..1.5);
        g.scale_raw[k] = rng.random_range(-4.5f32..-1.0);
    }
    let used = sage_lod::splat_io::sh_rest_per_channel(degree);
    for c in 0..3 {
        for j in 0..used {
            g.sh_rest[c * SH_REST_PER_CHANNEL + j] = rng.random_range(-0.3..0.3);
        }
    }
    g.opacity_raw = rng.random_range(-3.0..5.0);
    g.rotation_raw = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];
    if g.rotation_raw.iter().all(|v| v.abs() < 1e-3) {
        g.rotation_raw = [1.0, 0.0, 0.0, 0.0];
    }
    g
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f32) -> SplatCloud {
    let degree = rng.random_range(0..=3u8);
    SplatCloud::new((0..n).map(|_| random_gaussian(rng, degree, extent)).collect(), degree)
}
