//! Pinhole cameras, COLMAP text ingestion, point projection and the
//! per-label closest-point distance.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::LabeledCloud;
use crate::LabelId;

/// Depths at or below this are treated as behind the camera.
pub const BEHIND_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.fx > 0.0
            && self.fy > 0.0
            && (0.0..=self.width as f64).contains(&self.cx)
            && (0.0..=self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid camera {self:?}")))
        }
    }

    pub fn contains(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] < self.width as f64
            && pixel[1] < self.height as f64
    }

    /// Integer pixel index of an in-bounds continuous coordinate.
    /// Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i+0.5, j+0.5).
    pub fn pixel_index(&self, pixel: [f64; 2]) -> Option<(u32, u32)> {
        self.contains(pixel)
            .then(|| (pixel[0].floor() as u32, pixel[1].floor() as u32))
    }
}

/// World-to-camera pose (COLMAP convention: x_cam = R x_world + t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub view_id: u32,
    pub camera_id: u32,
    /// (w, x, y, z)
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub image_name: String,
}

impl ViewPose {
    pub fn identity(view_id: u32, camera_id: u32, image_name: impl Into<String>) -> Self {
        ViewPose {
            view_id,
            camera_id,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
            image_name: image_name.into(),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Camera center in world coordinates, -R^T t.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    /// Builds a pose from a camera center looking at `target`, with image
    /// +y pointing along -`up` (OpenCV axes: x right, y down, z forward).
    pub fn look_at(
        view_id: u32,
        camera_id: u32,
        image_name: impl Into<String>,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Self {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let q = UnitQuaternion::from_matrix(&r);
        let t = -(r * eye);
        ViewPose {
            view_id,
            camera_id,
            rotation: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
            image_name: image_name.into(),
        }
    }

    fn quaternion_norm(&self) -> f64 {
        self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    pub cameras: BTreeMap<u32, CameraModel>,
    pub poses: Vec<ViewPose>,
}

impl ViewSet {
    pub fn validate(&self) -> Result<()> {
        for cam in self.cameras.values() {
            cam.validate()?;
        }
        for pose in &self.poses {
            if !self.cameras.contains_key(&pose.camera_id) {
                return Err(Error::Argument(format!(
                    "view `{}` references missing camera {}",
                    pose.image_name, pose.camera_id
                )));
            }
            if (pose.quaternion_norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Argument(format!(
                    "view `{}` quaternion is not unit-norm",
                    pose.image_name
                )));
            }
        }
        Ok(())
    }

    pub fn camera_of(&self, pose: &ViewPose) -> Result<&CameraModel> {
        self.cameras.get(&pose.camera_id).ok_or_else(|| {
            Error::Argument(format!(
                "view `{}` references missing camera {}",
                pose.image_name, pose.camera_id
            ))
        })
    }

    pub fn pose(&self, view_id: u32) -> Option<&ViewPose> {
        self.poses.iter().find(|p| p.view_id == view_id)
    }

    /// Looks a view up by image name, with or without the file extension.
    pub fn find_by_name(&self, name: &str) -> Option<&ViewPose> {
        self.poses.iter().find(|p| {
            p.image_name == name
                || std::path::Path::new(&p.image_name)
                    .file_stem()
                    .is_some_and(|s| s == name)
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: ViewSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn fields<T: std::str::FromStr>(line_no: usize, toks: &[&str], what: &str) -> Result<Vec<T>> {
    toks.iter()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| parse_err(line_no, format!("invalid {what} `{t}`")))
        })
        .collect()
}

/// Parses COLMAP `cameras.txt` and `images.txt`.
pub fn parse_colmap(cameras_file: &[u8], images_file: &[u8]) -> Result<ViewSet> {
    let cameras_text = std::str::from_utf8(cameras_file)
        .map_err(|_| parse_err(0, "cameras file is not UTF-8"))?;
    let images_text =
        std::str::from_utf8(images_file).map_err(|_| parse_err(0, "images file is not UTF-8"))?;

    let mut cameras = BTreeMap::new();
    for (i, line) in cameras_text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(parse_err(line_no, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"));
        }
        let id: u32 = fields(line_no, &toks[0..1], "camera id")?[0];
        let model = toks[1];
        let wh: Vec<u32> = fields(line_no, &toks[2..4], "image size")?;
        let params: Vec<f64> = fields(line_no, &toks[4..], "camera parameter")?;
        let (fx, fy, cx, cy) = match model {
            "SIMPLE_PINHOLE" if params.len() == 3 => (params[0], params[0], params[1], params[2]),
            "PINHOLE" if params.len() == 4 => (params[0], params[1], params[2], params[3]),
            "SIMPLE_PINHOLE" | "PINHOLE" => {
                return Err(parse_err(
                    line_no,
                    format!("{model} with {} parameters", params.len()),
                ))
            }
            other => return Err(Error::UnsupportedModel(other.to_string())),
        };
        cameras.insert(
            id,
            CameraModel {
                width: wh[0],
                height: wh[1],
                fx,
                fy,
                cx,
                cy,
            },
        );
    }

    // images.txt alternates pose lines with 2D-point lines.
    let mut poses = Vec::new();
    let mut expect_points = false;
    for (i, line) in images_text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim_start().starts_with('#') {
            continue;
        }
        if expect_points {
            expect_points = false;
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() < 10 {
            return Err(parse_err(
                line_no,
                "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME",
            ));
        }
        let view_id: u32 = fields(line_no, &toks[0..1], "image id")?[0];
        let q: Vec<f64> = fields(line_no, &toks[1..5], "quaternion")?;
        let t: Vec<f64> = fields(line_no, &toks[5..8], "translation")?;
        let camera_id: u32 = fields(line_no, &toks[8..9], "camera id")?[0];
        // names may contain spaces
        let image_name = toks[9..].join(" ");
        poses.push(ViewPose {
            view_id,
            camera_id,
            rotation: [q[0], q[1], q[2], q[3]],
            translation: [t[0], t[1], t[2]],
            image_name,
        });
        expect_points = true;
    }

    let set = ViewSet { cameras, poses };
    set.validate()?;
    Ok(set)
}

/// Writes COLMAP text files (empty 2D-point lines).
pub fn write_colmap(views: &ViewSet) -> (String, String) {
    use std::fmt::Write;
    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for (id, c) in &views.cameras {
        let _ = writeln!(
            cams,
            "{id} PINHOLE {} {} {} {} {} {}",
            c.width, c.height, c.fx, c.fy, c.cx, c.cy
        );
    }
    let mut imgs = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for p in &views.poses {
        let [qw, qx, qy, qz] = p.rotation;
        let [tx, ty, tz] = p.translation;
        let _ = writeln!(
            imgs,
            "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}\n",
            p.view_id, p.camera_id, p.image_name
        );
    }
    (cams, imgs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { pixel: [f64; 2], depth: f64 },
    Behind,
}

impl Projection {
    pub fn visible(self) -> Option<([f64; 2], f64)> {
        match self {
            Projection::Visible { pixel, depth } => Some((pixel, depth)),
            Projection::Behind => None,
        }
    }
}

/// Projects a world point; pixel coordinates are continuous, see
/// [`CameraModel::pixel_index`].
pub fn project_point(camera: &CameraModel, pose: &ViewPose, p: [f64; 3]) -> Projection {
    project_with(camera, &pose.rotation_matrix(), &pose.translation_vector(), p)
}

#[inline]
pub(crate) fn project_with(
    camera: &CameraModel,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    p: [f64; 3],
) -> Projection {
    let pc = r * Vector3::from(p) + t;
    if pc.z <= BEHIND_EPS {
        return Projection::Behind;
    }
    Projection::Visible {
        pixel: [
            camera.fx * pc.x / pc.z + camera.cx,
            camera.fy * pc.y / pc.z + camera.cy,
        ],
        depth: pc.z,
    }
}

/// Distance from the camera center to the nearest point with `label` that
/// projects inside the image with positive depth.
pub fn min_label_distance(
    cloud: &LabeledCloud,
    camera: &CameraModel,
    pose: &ViewPose,
    label: LabelId,
) -> Option<f64> {
    label_distances(cloud, camera, pose, label).map(|(min, _)| min)
}

/// (min, mean) distance over in-frustum points of `label`.
pub fn label_distances(
    cloud: &LabeledCloud,
    camera: &CameraModel,
    pose: &ViewPose,
    label: LabelId,
) -> Option<(f64, f64)> {
    let r = pose.rotation_matrix();
    let t = pose.translation_vector();
    let center = pose.center();
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        if l != label {
            continue;
        }
        if let Projection::Visible { pixel, .. } = project_with(camera, &r, &t, *p) {
            if camera.contains(pixel) {
                let d = (Vector3::from(*p) - center).norm();
                min = min.min(d);
                sum += d;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (min, sum / n as f64))
}
