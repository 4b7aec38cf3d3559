//! Gaussian-splat clouds in the standard 3DGS PLY layout, the per-label
//! checkpoint catalog, and the byte model used for occupancy reporting.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ply;
use crate::LabelId;

/// SH coefficients of degrees 1..=3, per channel.
pub const SH_REST_PER_CHANNEL: usize = 15;
pub const SH_REST_MAX: usize = 3 * SH_REST_PER_CHANNEL;
/// Per-vertex float32 properties of the canonical layout (incl. normals).
pub const PROPERTIES_PER_GAUSSIAN: usize = 62;
pub const BYTES_PER_GAUSSIAN: u64 = 4 * PROPERTIES_PER_GAUSSIAN as u64;

/// Rest coefficients per channel for an SH degree.
pub const fn sh_rest_per_channel(degree: u8) -> usize {
    let d = degree as usize;
    (d + 1) * (d + 1) - 1
}

/// One splat primitive, stored exactly as in the PLY (pre-activation).
///
/// `sh_rest` is channel-major with a fixed stride of 15 per channel;
/// coefficients beyond the cloud's SH degree are zero.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian3D {
    pub position: [f32; 3],
    pub sh_dc: [f32; 3],
    pub sh_rest: [f32; SH_REST_MAX],
    pub opacity_raw: f32,
    pub scale_raw: [f32; 3],
    /// Quaternion (w, x, y, z), not necessarily normalized.
    pub rotation_raw: [f32; 4],
}

impl Default for Gaussian3D {
    fn default() -> Self {
        Gaussian3D {
            position: [0.0; 3],
            sh_dc: [0.0; 3],
            sh_rest: [0.0; SH_REST_MAX],
            opacity_raw: 0.0,
            scale_raw: [0.0; 3],
            rotation_raw: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl Gaussian3D {
    fn floats(&self) -> impl Iterator<Item = f32> + '_ {
        self.position
            .iter()
            .chain(&self.sh_dc)
            .chain(&self.sh_rest)
            .chain(std::iter::once(&self.opacity_raw))
            .chain(&self.scale_raw)
            .chain(&self.rotation_raw)
            .copied()
    }

    pub fn is_finite(&self) -> bool {
        self.floats().all(f32::is_finite)
    }

    /// Field-for-field bit equality.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.floats()
            .zip(other.floats())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn opacity(&self) -> f64 {
        1.0 / (1.0 + (-(self.opacity_raw as f64)).exp())
    }

    pub fn scales(&self) -> [f64; 3] {
        self.scale_raw.map(|s| (s as f64).exp())
    }

    /// Normalized (w, x, y, z); identity when the stored quaternion is zero.
    pub fn rotation(&self) -> [f64; 4] {
        let q = self.rotation_raw.map(|v| v as f64);
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            q.map(|v| v / n)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplatCloud {
    pub gaussians: Vec<Gaussian3D>,
    pub sh_degree: u8,
}

impl SplatCloud {
    pub fn new(gaussians: Vec<Gaussian3D>, sh_degree: u8) -> Self {
        SplatCloud {
            gaussians,
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.sh_degree == other.sh_degree
            && self.len() == other.len()
            && self
                .gaussians
                .iter()
                .zip(&other.gaussians)
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Concatenates clouds in order; the result carries the highest SH degree.
    pub fn concat<'a>(clouds: impl IntoIterator<Item = &'a SplatCloud>) -> SplatCloud {
        let mut out = SplatCloud::default();
        for c in clouds {
            out.sh_degree = out.sh_degree.max(c.sh_degree);
            out.gaussians.extend_from_slice(&c.gaussians);
        }
        out
    }

    /// Checks the structural invariants: finite fields, SH degree in range,
    /// and zeroed rest coefficients above the degree.
    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > 3 {
            return Err(Error::Argument(format!(
                "sh_degree {} out of range 0..=3",
                self.sh_degree
            )));
        }
        let used = sh_rest_per_channel(self.sh_degree);
        for (index, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Validation {
                    index,
                    message: "non-finite field".into(),
                });
            }
            for c in 0..3 {
                let tail = &g.sh_rest[c * SH_REST_PER_CHANNEL + used..(c + 1) * SH_REST_PER_CHANNEL];
                if tail.iter().any(|&v| v != 0.0) {
                    return Err(Error::Validation {
                        index,
                        message: format!(
                            "SH coefficients above degree {} are non-zero",
                            self.sh_degree
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Bytes needed to store `count` gaussians in the canonical layout.
pub fn occupancy_bytes(count: u64) -> u64 {
    count * BYTES_PER_GAUSSIAN
}

/// Decimal megabytes (10^6 bytes).
pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// Human-readable decimal size: "83.48 MB", "1.45 GB".
pub fn format_bytes(bytes: u64) -> String {
    if bytes >= 1_000_000_000 {
        format!("{:.2} GB", bytes as f64 / 1e9)
    } else if bytes >= 1_000_000 {
        format!("{:.2} MB", bytes as f64 / 1e6)
    } else if bytes >= 1_000 {
        format!("{:.2} kB", bytes as f64 / 1e3)
    } else {
        format!("{bytes} B")
    }
}

fn canonical_property_names(sh_degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..3 * sh_rest_per_channel(sh_degree) {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".into());
    for i in 0..3 {
        names.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names
}

/// Parses a binary (either endianness) or ASCII 3DGS PLY.
pub fn parse_splat_ply(bytes: &[u8]) -> Result<SplatCloud> {
    let header = ply::parse_header(bytes)?;
    let vertex = header
        .vertex()
        .ok_or_else(|| Error::Schema("vertex".into()))?;

    let find = |name: &str| -> Result<usize> {
        vertex
            .properties
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };

    let rest_count = vertex
        .properties
        .iter()
        .filter(|p| p.name.starts_with("f_rest_"))
        .count();
    let sh_degree = match rest_count {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => {
            return Err(Error::Format {
                offset: 0,
                message: format!("{n} f_rest properties do not match any SH degree"),
            })
        }
    };
    let per_channel = sh_rest_per_channel(sh_degree);

    let pos = [find("x")?, find("y")?, find("z")?];
    for n in ["nx", "ny", "nz"] {
        find(n)?;
    }
    let dc = [find("f_dc_0")?, find("f_dc_1")?, find("f_dc_2")?];
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| find(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let opacity = find("opacity")?;
    let scale = [find("scale_0")?, find("scale_1")?, find("scale_2")?];
    let rot = [find("rot_0")?, find("rot_1")?, find("rot_2")?, find("rot_3")?];

    let mut gaussians = Vec::with_capacity(vertex.count);
    ply::for_each_vertex(bytes, &header, |index, row| {
        let v = |i: usize| row[i] as f32;
        let mut g = Gaussian3D {
            position: pos.map(v),
            sh_dc: dc.map(v),
            sh_rest: [0.0; SH_REST_MAX],
            opacity_raw: v(opacity),
            scale_raw: scale.map(v),
            rotation_raw: rot.map(v),
        };
        for (k, &col) in rest.iter().enumerate() {
            let (c, j) = (k / per_channel, k % per_channel);
            g.sh_rest[c * SH_REST_PER_CHANNEL + j] = v(col);
        }
        if !g.is_finite() {
            return Err(Error::Validation {
                index,
                message: "non-finite property value".into(),
            });
        }
        gaussians.push(g);
        Ok(())
    })?;

    Ok(SplatCloud {
        gaussians,
        sh_degree,
    })
}

/// Serializes to binary little-endian PLY with float32 properties in the
/// canonical order and zeroed normals.
pub fn write_splat_ply(cloud: &SplatCloud) -> Result<Vec<u8>> {
    cloud.validate()?;
    let names = canonical_property_names(cloud.sh_degree);
    let props: Vec<(&str, &str)> = names.iter().map(|n| ("float", n.as_str())).collect();
    let per_channel = sh_rest_per_channel(cloud.sh_degree);
    let mut out = Vec::with_capacity(2048 + cloud.len() * names.len() * 4);
    ply::write_header(&mut out, cloud.len(), &props);
    for g in &cloud.gaussians {
        let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        g.position.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        g.sh_dc.iter().for_each(|&v| put(v));
        for c in 0..3 {
            for j in 0..per_channel {
                put(g.sh_rest[c * SH_REST_PER_CHANNEL + j]);
            }
        }
        put(g.opacity_raw);
        g.scale_raw.iter().for_each(|&v| put(v));
        g.rotation_raw.iter().for_each(|&v| put(v));
    }
    Ok(out)
}

pub fn read_splat_ply(path: &Path) -> Result<SplatCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_splat_ply(&bytes)
}

pub fn save_splat_ply(path: &Path, cloud: &SplatCloud) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_splat_ply(cloud)?).map_err(|e| Error::io(path, e))
}

/// Vertex count from the header alone.
pub fn read_vertex_count(path: &Path) -> Result<usize> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let header = ply::read_header(&mut BufReader::new(file))?;
    Ok(header.vertex_count())
}

/// On-disk manifest of a checkpoint catalog.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CatalogManifest {
    pub labels: BTreeMap<String, LabelId>,
    #[serde(default)]
    pub iterations: Vec<u32>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
enum EntrySource {
    File(PathBuf),
    Memory(Arc<SplatCloud>),
}

/// One (label, iteration) checkpoint. The cloud is only read on [`load`](Self::load).
#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub label_id: LabelId,
    pub label_name: String,
    pub iteration: u32,
    pub count: usize,
    source: EntrySource,
}

impl CheckpointEntry {
    pub fn path(&self) -> Option<&Path> {
        match &self.source {
            EntrySource::File(p) => Some(p),
            EntrySource::Memory(_) => None,
        }
    }

    pub fn load(&self) -> Result<Arc<SplatCloud>> {
        match &self.source {
            EntrySource::Memory(c) => Ok(Arc::clone(c)),
            EntrySource::File(p) => read_splat_ply(p).map(Arc::new),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    entries: BTreeMap<(LabelId, u32), CheckpointEntry>,
    iterations: Vec<u32>,
    labels: BTreeMap<LabelId, String>,
}

pub fn iteration_dir_name(iteration: u32) -> String {
    format!("iteration_{iteration}")
}

impl CheckpointSet {
    /// Builds an in-memory catalog. Every label must cover the same iterations.
    pub fn from_clouds(
        items: impl IntoIterator<Item = (LabelId, String, u32, SplatCloud)>,
    ) -> Result<Self> {
        let mut set = CheckpointSet::default();
        for (label_id, label_name, iteration, cloud) in items {
            set.labels.insert(label_id, label_name.clone());
            set.entries.insert(
                (label_id, iteration),
                CheckpointEntry {
                    label_id,
                    label_name,
                    iteration,
                    count: cloud.len(),
                    source: EntrySource::Memory(Arc::new(cloud)),
                },
            );
        }
        set.finish()?;
        Ok(set)
    }

    fn finish(&mut self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Catalog("no checkpoints found".into()));
        }
        let grid_of = |label: LabelId| -> Vec<u32> {
            self.entries
                .keys()
                .filter(|(l, _)| *l == label)
                .map(|(_, i)| *i)
                .collect()
        };
        let first = *self.labels.keys().next().expect("non-empty");
        let reference = grid_of(first);
        for (&label, name) in &self.labels {
            if grid_of(label) != reference {
                return Err(Error::Catalog(format!(
                    "label `{name}` has iterations {:?}, expected {:?}",
                    grid_of(label),
                    reference
                )));
            }
        }
        self.iterations = reference;
        Ok(())
    }

    /// Loads `root/<label_name>/iteration_<i>/point_cloud.ply` guided by
    /// `root/manifest.json`. Only PLY headers are read.
    pub fn load(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound && root.is_dir() {
                Error::Catalog(format!("{} has no {MANIFEST_FILE}", root.display()))
            } else {
                Error::io(&manifest_path, e)
            }
        })?;
        let manifest: CatalogManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;

        let mut set = CheckpointSet::default();
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
            let label_id = *manifest.labels.get(&name).ok_or_else(|| {
                Error::Manifest(format!("label directory `{name}` is not listed"))
            })?;
            set.labels.insert(label_id, name.clone());
            for it_dir in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let it_dir = it_dir.map_err(|e| Error::io(&dir, e))?.path();
                let Some(iteration) = it_dir
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_prefix("iteration_"))
                    .and_then(|n| n.parse::<u32>().ok())
                else {
                    continue;
                };
                let ply_path = it_dir.join("point_cloud.ply");
                if !ply_path.is_file() {
                    continue;
                }
                let count = read_vertex_count(&ply_path)?;
                set.entries.insert(
                    (label_id, iteration),
                    CheckpointEntry {
                        label_id,
                        label_name: name.clone(),
                        iteration,
                        count,
                        source: EntrySource::File(ply_path),
                    },
                );
            }
        }
        set.finish()?;
        if !manifest.iterations.is_empty() {
            let mut listed = manifest.iterations.clone();
            listed.sort_unstable();
            if listed != set.iterations {
                return Err(Error::Manifest(format!(
                    "manifest lists iterations {:?} but directories hold {:?}",
                    listed, set.iterations
                )));
            }
        }
        Ok(set)
    }

    pub fn iterations(&self) -> &[u32] {
        &self.iterations
    }

    pub fn labels(&self) -> &BTreeMap<LabelId, String> {
        &self.labels
    }

    pub fn get(&self, label: LabelId, iteration: u32) -> Option<&CheckpointEntry> {
        self.entries.get(&(label, iteration))
    }

    pub fn count(&self, label: LabelId, iteration: u32) -> Option<usize> {
        self.get(label, iteration).map(|e| e.count)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CheckpointEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes a catalog directory from in-memory clouds.
pub fn write_catalog(
    root: &Path,
    labels: &BTreeMap<LabelId, String>,
    clouds: &BTreeMap<(LabelId, u32), SplatCloud>,
) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut iterations: Vec<u32> = clouds.keys().map(|(_, i)| *i).collect();
    iterations.sort_unstable();
    iterations.dedup();
    for ((label, iteration), cloud) in clouds {
        let name = labels
            .get(label)
            .ok_or_else(|| Error::Manifest(format!("label id {label} has no name")))?;
        let path = root
            .join(name)
            .join(iteration_dir_name(*iteration))
            .join("point_cloud.ply");
        save_splat_ply(&path, cloud)?;
    }
    let manifest = CatalogManifest {
        labels: labels.iter().map(|(id, n)| (n.clone(), *id)).collect(),
        iterations,
    };
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, degree: u8) -> SplatCloud {
        let per = sh_rest_per_channel(degree);
        let gaussians = (0..n)
            .map(|i| {
                let f = i as f32;
                let mut g = Gaussian3D {
                    position: [f, -f * 0.5, 1.0 + f],
                    sh_dc: [0.1, 0.2, 0.3 * f],
                    opacity_raw: 0.7 - f,
                    scale_raw: [-2.0, -2.5, -3.0],
                    rotation_raw: [1.0, 0.1 * f, 0.0, 0.2],
                    ..Default::default()
                };
                for c in 0..3 {
                    for j in 0..per {
                        g.sh_rest[c * SH_REST_PER_CHANNEL + j] = (c * 100 + j) as f32 * 0.01;
                    }
                }
                g
            })
            .collect();
        SplatCloud::new(gaussians, degree)
    }

    #[test]
    fn zero_vertex_roundtrip() {
        let mut bytes = Vec::new();
        let names = canonical_property_names(3);
        let props: Vec<(&str, &str)> = names.iter().map(|n| ("float", n.as_str())).collect();
        ply::write_header(&mut bytes, 1, &props);
        bytes.extend(std::iter::repeat_n(0u8, 248));
        let cloud = parse_splat_ply(&bytes).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.sh_degree, 3);
        assert_eq!(cloud.gaussians[0].position, [0.0; 3]);
    }

    #[test]
    fn empty_cloud_is_valid_ply() {
        let bytes = write_splat_ply(&SplatCloud::new(vec![], 3)).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert_eq!(parse_splat_ply(&bytes).unwrap().len(), 0);
    }

    #[test]
    fn payload_is_248_bytes_per_gaussian() {
        let empty = write_splat_ply(&SplatCloud::new(vec![], 3)).unwrap();
        let c = sample(17, 3);
        let bytes = write_splat_ply(&c).unwrap();
        let header = ply::parse_header(&bytes).unwrap();
        // header differs from the empty one only in the count digits
        assert_eq!(bytes.len() - header.len, 17 * 248);
        assert_eq!(header.len, empty.len() + 1);
    }

    #[test]
    fn roundtrip_all_degrees() {
        for degree in 0..=3 {
            let c = sample(5, degree);
            let bytes = write_splat_ply(&c).unwrap();
            let back = parse_splat_ply(&bytes).unwrap();
            assert!(back.bitwise_eq(&c), "degree {degree}");
            assert_eq!(write_splat_ply(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn ascii_matches_binary() {
        let c = sample(3, 1);
        let names = canonical_property_names(1);
        let mut text = String::from("ply\nformat ascii 1.0\ncomment made by hand\n");
        text.push_str(&format!("element vertex {}\n", c.len()));
        for n in &names {
            text.push_str(&format!("property float {n}\n"));
        }
        text.push_str("end_header\n");
        let bin = write_splat_ply(&c).unwrap();
        let header = ply::parse_header(&bin).unwrap();
        ply::for_each_vertex(&bin, &header, |_, row| {
            let line: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
            Ok(())
        })
        .unwrap();
        let parsed = parse_splat_ply(text.as_bytes()).unwrap();
        assert!(parsed.bitwise_eq(&c));
    }

    #[test]
    fn missing_property_is_named() {
        let mut bytes = Vec::new();
        let names: Vec<String> = canonical_property_names(0)
            .into_iter()
            .filter(|n| n != "scale_1")
            .collect();
        let props: Vec<(&str, &str)> = names.iter().map(|n| ("float", n.as_str())).collect();
        ply::write_header(&mut bytes, 0, &props);
        match parse_splat_ply(&bytes) {
            Err(Error::Schema(name)) => assert_eq!(name, "scale_1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_reports_vertex_index() {
        let mut c = sample(4, 0);
        let mut bytes = write_splat_ply(&c).unwrap();
        let header = ply::parse_header(&bytes).unwrap();
        // opacity of vertex 2: offset = 2 rows + 9 leading floats
        let off = header.len + 2 * 17 * 4 + 9 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match parse_splat_ply(&bytes) {
            Err(Error::Validation { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        c.gaussians[1].scale_raw[0] = f32::INFINITY;
        assert!(write_splat_ply(&c).is_err());
    }

    #[test]
    fn malformed_header_has_offset() {
        let err = parse_splat_ply(b"ply\nformat binary_little_endian 1.0\nelement vertex x\n")
            .unwrap_err();
        assert!(matches!(err, Error::Format { offset: 36, .. }), "{err:?}");
    }

    #[test]
    fn occupancy_matches_byte_model() {
        assert_eq!(occupancy_bytes(0), 0);
        assert_eq!(occupancy_bytes(336_632), 83_484_736);
        assert!((bytes_to_mb(occupancy_bytes(336_632)) - 83.48).abs() < 0.01);
        assert!((bytes_to_mb(occupancy_bytes(3_049_053)) - 756.16).abs() < 0.01);
        assert_eq!(format_bytes(83_484_736), "83.48 MB");
    }

    #[test]
    fn catalog_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let labels: BTreeMap<LabelId, String> =
            [(0, "bench".to_string()), (1, "bicycle".to_string())].into();
        let mut clouds = BTreeMap::new();
        for (l, n) in [(0u8, 3usize), (1, 5)] {
            clouds.insert((l, 5000), sample(n, 0));
            clouds.insert((l, 10000), sample(n * 2, 0));
        }
        write_catalog(dir.path(), &labels, &clouds).unwrap();
        let set = CheckpointSet::load(dir.path()).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.iterations(), &[5000, 10000]);
        for e in set.entries() {
            assert_eq!(e.count, e.load().unwrap().len());
        }
        assert_eq!(set.count(1, 10000), Some(10));

        // inconsistent grids
        save_splat_ply(
            &dir.path().join("bicycle/iteration_15000/point_cloud.ply"),
            &sample(1, 0),
        )
        .unwrap();
        let err = CheckpointSet::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Catalog(ref m) if m.contains("bicycle")), "{err}");
        fs::remove_dir_all(dir.path().join("bicycle/iteration_15000")).unwrap();

        // unknown label directory
        save_splat_ply(
            &dir.path().join("vase/iteration_5000/point_cloud.ply"),
            &sample(1, 0),
        )
        .unwrap();
        assert!(matches!(
            CheckpointSet::load(dir.path()),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn empty_directory_is_catalog_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            CheckpointSet::load(dir.path()),
            Err(Error::Catalog(_))
        ));
        fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"labels": {"bench": 0}, "iterations": []}"#,
        )
        .unwrap();
        assert!(matches!(
            CheckpointSet::load(dir.path()),
            Err(Error::Catalog(_))
        ));
    }
}
