//! Serialization: sequence directories (JSON manifest + binary point
//! blobs), the "XRTN" tensor file format, PLY export, and track files.
//!
//! Point blobs are little-endian float32 (x, y, z, intensity) records, 16
//! bytes per point. The manifest is JSON with a `format_version` field;
//! floats round-trip exactly, so write -> read -> write is byte-stable.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{Frame, Sequence};
use crate::distill::Tensor;
use crate::geometry::{BoundingBox3D, Point3, PointCloud, RigidTransform};
use crate::tracking::{DetectedInstance, Track};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_MAGIC: &[u8; 4] = b"XRTN";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: blob size {size} not divisible by 16")]
    BadBlobSize { path: PathBuf, size: u64 },
    #[error("{path}: bad tensor file: {message}")]
    BadTensor { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------- blobs

pub fn write_points(path: &Path, pc: &PointCloud) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(pc.len() * 16);
    for p in pc.iter() {
        buf.extend_from_slice(&(p.x as f32).to_le_bytes());
        buf.extend_from_slice(&(p.y as f32).to_le_bytes());
        buf.extend_from_slice(&(p.z as f32).to_le_bytes());
        buf.extend_from_slice(&(p.intensity as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(file_err(path))
}

pub fn read_points(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::BadBlobSize { path: path.to_path_buf(), size: bytes.len() as u64 });
    }
    let points = bytes
        .chunks_exact(16)
        .map(|rec| {
            let f = |i: usize| {
                f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]) as f64
            };
            Point3::new(f(0), f(4), f(8), f(12))
        })
        .collect();
    Ok(points)
}

// --------------------------------------------------------------- tensors

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(8 + t.shape.len() * 4 + t.data.len() * 4);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(file_err(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    let bad = |message: &str| IoError::BadTensor {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let bytes = fs::read(path).map_err(file_err(path))?;
    if bytes.len() < 8 || &bytes[0..4] != TENSOR_MAGIC {
        return Err(bad("missing XRTN magic"));
    }
    let ndim = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let header = 8 + ndim * 4;
    if bytes.len() < header {
        return Err(bad("truncated dimension list"));
    }
    let shape: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 8 + i * 4;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = shape.iter().product();
    if bytes.len() != header + count * 4 {
        return Err(bad("payload length does not match dimensions"));
    }
    let data: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

// ------------------------------------------------------------------ ply

pub fn export_ply(pc: &PointCloud, path: &Path, color: (u8, u8, u8)) -> Result<(), IoError> {
    export_ply_colored(path, &[(pc, color)])
}

/// Writes several clouds into one PLY, each with its own color.
pub fn export_ply_colored(
    path: &Path,
    groups: &[(&PointCloud, (u8, u8, u8))],
) -> Result<(), IoError> {
    let total: usize = groups.iter().map(|(pc, _)| pc.len()).sum();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {total}\n"));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("end_header\n");
    for (pc, (r, g, b)) in groups {
        for p in pc.iter() {
            out.push_str(&format!("{} {} {} {r} {g} {b}\n", p.x as f32, p.y as f32, p.z as f32));
        }
    }
    let mut file = fs::File::create(path).map_err(file_err(path))?;
    file.write_all(out.as_bytes()).map_err(file_err(path))
}

// ------------------------------------------------------------- manifest

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPose {
    /// (w, x, y, z)
    quaternion: [f64; 4],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestBox {
    cx: f64,
    cy: f64,
    cz: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestInstance {
    #[serde(skip_serializing_if = "Option::is_none")]
    instance_id: Option<u64>,
    class: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(rename = "box")]
    bbox: ManifestBox,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    index: usize,
    timestamp_us: i64,
    ego_pose: ManifestPose,
    points_file: String,
    instances: Vec<ManifestInstance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    name: String,
    frames: Vec<ManifestFrame>,
}

pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let points_file = format!("points_{:06}.bin", frame.index);
        write_points(&dir.join(&points_file), &frame.cloud)?;
        frames.push(ManifestFrame {
            index: frame.index,
            timestamp_us: frame.timestamp_us,
            ego_pose: ManifestPose {
                quaternion: frame.ego_pose.quaternion_wxyz(),
                translation: [
                    frame.ego_pose.translation.x,
                    frame.ego_pose.translation.y,
                    frame.ego_pose.translation.z,
                ],
            },
            points_file,
            instances: frame
                .instances
                .iter()
                .map(|inst| ManifestInstance {
                    instance_id: inst.instance_id,
                    class: inst.class_label.clone(),
                    score: Some(inst.score),
                    bbox: ManifestBox {
                        cx: inst.bbox.center.x,
                        cy: inst.bbox.center.y,
                        cz: inst.bbox.center.z,
                        l: inst.bbox.size.0,
                        w: inst.bbox.size.1,
                        h: inst.bbox.size.2,
                        yaw: inst.bbox.yaw,
                    },
                })
                .collect(),
        });
    }
    let manifest = Manifest { format_version: 1, name: seq.name.clone(), frames };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|source| IoError::Json { path: path.clone(), source })?;
    fs::write(&path, json + "\n").map_err(file_err(&path))
}

pub fn read_sequence(dir: &Path) -> Result<Sequence, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let manifest_err = |message: String| IoError::Manifest { path: path.clone(), message };
    let text = fs::read_to_string(&path).map_err(file_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|source| IoError::Json { path: path.clone(), source })?;
    if manifest.format_version != 1 {
        return Err(manifest_err(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (k, mf) in manifest.frames.iter().enumerate() {
        if mf.index != k {
            return Err(manifest_err(format!(
                "frames[{k}].index is {}, expected consecutive index {k}",
                mf.index
            )));
        }
        let q = mf.ego_pose.quaternion;
        let t = Vector3::new(
            mf.ego_pose.translation[0],
            mf.ego_pose.translation[1],
            mf.ego_pose.translation[2],
        );
        let ego_pose = RigidTransform::from_quaternion_wxyz(q, t).map_err(|_| {
            manifest_err(format!("frames[{k}].ego_pose.quaternion is not unit norm"))
        })?;
        let cloud = read_points(&dir.join(&mf.points_file))?;
        let instances = mf
            .instances
            .iter()
            .enumerate()
            .map(|(i, mi)| {
                let bbox = BoundingBox3D::new(
                    Vector3::new(mi.bbox.cx, mi.bbox.cy, mi.bbox.cz),
                    (mi.bbox.l, mi.bbox.w, mi.bbox.h),
                    mi.bbox.yaw,
                )
                .map_err(|e| {
                    manifest_err(format!("frames[{k}].instances[{i}].box: {e}"))
                })?;
                Ok(DetectedInstance {
                    bbox,
                    class_label: mi.class.clone(),
                    score: mi.score.unwrap_or(1.0),
                    instance_id: mi.instance_id,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        frames.push(Frame {
            index: mf.index,
            timestamp_us: mf.timestamp_us,
            ego_pose,
            cloud,
            instances,
        });
    }
    Ok(Sequence { name: manifest.name, frames })
}

// --------------------------------------------------------------- tracks

pub fn write_tracks(path: &Path, tracks: &[Track]) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(tracks)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, json + "\n").map_err(file_err(path))
}

pub fn read_tracks(path: &Path) -> Result<Vec<Track>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, json + "\n").map_err(file_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

// ---------------------------------------------------------- ground truth

pub const GROUND_TRUTH_DIR: &str = "ground_truth";

/// On-disk companion of the simulator's ground truth.
pub fn write_ground_truth(gt: &crate::simulate::GroundTruth, dir: &Path) -> Result<(), IoError> {
    let gt_dir = dir.join(GROUND_TRUTH_DIR);
    fs::create_dir_all(&gt_dir).map_err(file_err(&gt_dir))?;
    for (o, surface) in gt.full_surfaces.iter().enumerate() {
        write_points(&gt_dir.join(format!("full_surface_{o:03}.bin")), surface)?;
    }
    write_tracks(&gt_dir.join("tracks.json"), &gt.tracks)
}

/// Reads back the surfaces and identity chains written by
/// [`write_ground_truth`].
pub fn read_ground_truth(dir: &Path) -> Result<(Vec<PointCloud>, Vec<Track>), IoError> {
    let gt_dir = dir.join(GROUND_TRUTH_DIR);
    let mut surfaces = Vec::new();
    loop {
        let path = gt_dir.join(format!("full_surface_{:03}.bin", surfaces.len()));
        if !path.exists() {
            break;
        }
        surfaces.push(read_points(&path)?);
    }
    let tracks = read_tracks(&gt_dir.join("tracks.json"))?;
    Ok((surfaces, tracks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn blob_round_trip_and_size_law() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pts.bin");
        let pc: PointCloud = (0..7)
            .map(|i| Point3::new(i as f64 * 0.25, -1.5, 3.0, 0.5))
            .collect();
        write_points(&path, &pc).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 7 * 16);
        let back = read_points(&path).unwrap();
        assert_eq!(back, pc);

        fs::write(&path, [0u8; 32]).unwrap();
        assert_eq!(read_points(&path).unwrap().len(), 2);
        fs::write(&path, [0u8; 17]).unwrap();
        assert!(matches!(read_points(&path), Err(IoError::BadBlobSize { size: 17, .. })));
    }

    #[test]
    fn tensor_round_trip_and_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.xrtn");
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.5, -3.0, 0.0, 4.25, 5.5]).unwrap();
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);

        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_tensor(&path), Err(IoError::BadTensor { .. })));
    }

    #[test]
    fn empty_sequence_round_trip() {
        let dir = tempdir().unwrap();
        let seq = Sequence { name: "empty".into(), frames: vec![] };
        write_sequence(&seq, dir.path()).unwrap();
        assert_eq!(read_sequence(dir.path()).unwrap(), seq);
    }

    #[test]
    fn ply_export_counts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        export_ply(&PointCloud::default(), &path, (255, 0, 0)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 0"));
        assert_eq!(text.lines().count(), 10);

        let one = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0, 0.5)]);
        export_ply(&one, &path, (0, 255, 0)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 1"));
        assert_eq!(text.lines().count(), 11);
        assert!(text.trim_end().ends_with("1 2 3 0 255 0"));
    }

    #[test]
    fn manifest_errors_are_specific() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{").unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(IoError::Json { .. })));
        fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"format_version": 2, "name": "x", "frames": []}"#,
        )
        .unwrap();
        let err = read_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("format_version"));
    }
}
