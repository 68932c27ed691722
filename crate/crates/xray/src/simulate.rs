//! Synthetic LiDAR scene generator. Objects are sampled as dense surface
//! point sets with outward normals; per frame, a point is visible iff it is
//! within sensor range, faces the sensor (back-face culling), and the ray
//! from the sensor reaches it without passing through another object's box.
//! The generator also emits exact ground truth: full canonical surfaces,
//! identity chains, and per-frame boxes.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{Frame, Sequence};
use crate::geometry::{BoundingBox3D, Point3, PointCloud, RigidTransform};
use crate::rng;
use crate::tracking::{DetectedInstance, Track};

// Emitted boxes are inflated by this much per dimension so that points
// sampled exactly on the surface stay inside after round-tripped poses.
const BOX_INFLATION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("n_frames must be >= 1")]
    NoFrames,
    #[error("object {0}: trajectory length {1} != n_frames {2}")]
    TrajectoryLength(usize, usize, usize),
    #[error("ego trajectory length {0} != n_frames {1}")]
    EgoTrajectoryLength(usize, usize),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("object {0}: invalid size")]
    BadSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectShape {
    Box,
    Cylinder,
}

/// Per-frame pose: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub center: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    /// (length, width, height); a cylinder uses min(length, width)/2 as its
    /// radius.
    pub size: (f64, f64, f64),
    #[serde(default = "default_class")]
    pub class_label: String,
    pub trajectory: Vec<PoseSpec>,
}

fn default_class() -> String {
    "vehicle".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_frames: usize,
    pub objects: Vec<ObjectSpec>,
    pub ego_trajectory: Vec<PoseSpec>,
    pub points_per_m2: f64,
    pub lidar_range: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub background_points_per_frame: usize,
    pub seed: u64,
}

/// Exact per-scene ground truth backing the evaluation suite.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Canonical full surface per object.
    pub full_surfaces: Vec<PointCloud>,
    /// Identity chains: object o appears as instance o in every frame.
    pub tracks: Vec<Track>,
    /// Pre-noise boxes per frame, in the global frame.
    pub per_frame_boxes: Vec<Vec<BoundingBox3D>>,
}

struct SurfaceSample {
    /// Canonical position (object frame).
    position: Vector3<f64>,
    normal: Vector3<f64>,
    intensity: f64,
}

fn sample_box_surface(size: (f64, f64, f64), density: f64, rng: &mut impl Rng) -> Vec<SurfaceSample> {
    let (l, w, h) = size;
    // face areas: +-x, +-y, +-z
    let areas = [w * h, w * h, l * h, l * h, l * w, l * w];
    let total: f64 = areas.iter().sum();
    let n = (total * density).ceil() as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u = rng.gen_range(-0.5..0.5);
        let v = rng.gen_range(-0.5..0.5);
        let (p, nrm) = match face {
            0 => (Vector3::new(l / 2.0, u * w, v * h), Vector3::x()),
            1 => (Vector3::new(-l / 2.0, u * w, v * h), -Vector3::x()),
            2 => (Vector3::new(u * l, w / 2.0, v * h), Vector3::y()),
            3 => (Vector3::new(u * l, -w / 2.0, v * h), -Vector3::y()),
            4 => (Vector3::new(u * l, v * w, h / 2.0), Vector3::z()),
            _ => (Vector3::new(u * l, v * w, -h / 2.0), -Vector3::z()),
        };
        out.push(SurfaceSample { position: p, normal: nrm, intensity: rng.gen_range(0.0..1.0) });
    }
    out
}

fn sample_cylinder_surface(
    size: (f64, f64, f64),
    density: f64,
    rng: &mut impl Rng,
) -> Vec<SurfaceSample> {
    let (l, w, h) = size;
    let r = l.min(w) / 2.0;
    let lateral = 2.0 * std::f64::consts::PI * r * h;
    let cap = std::f64::consts::PI * r * r;
    let total = lateral + 2.0 * cap;
    let n = (total * density).ceil() as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.gen_range(0.0..total);
        let (p, nrm) = if pick < lateral {
            let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let z = rng.gen_range(-0.5..0.5) * h;
            (
                Vector3::new(r * theta.cos(), r * theta.sin(), z),
                Vector3::new(theta.cos(), theta.sin(), 0.0),
            )
        } else {
            let top = pick < lateral + cap;
            // uniform on a disc
            let rho = r * rng.gen_range(0.0f64..1.0).sqrt();
            let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let z = if top { h / 2.0 } else { -h / 2.0 };
            let nz = if top { Vector3::z() } else { -Vector3::z() };
            (Vector3::new(rho * theta.cos(), rho * theta.sin(), z), nz)
        };
        out.push(SurfaceSample { position: p, normal: nrm, intensity: rng.gen_range(0.0..1.0) });
    }
    out
}

fn validate(cfg: &SceneConfig) -> Result<(), SimulateError> {
    if cfg.n_frames == 0 {
        return Err(SimulateError::NoFrames);
    }
    if cfg.points_per_m2 <= 0.0 {
        return Err(SimulateError::NonPositive("points_per_m2"));
    }
    if cfg.lidar_range <= 0.0 {
        return Err(SimulateError::NonPositive("lidar_range"));
    }
    if cfg.noise_sigma < 0.0 {
        return Err(SimulateError::NonPositive("noise_sigma"));
    }
    if cfg.ego_trajectory.len() != cfg.n_frames {
        return Err(SimulateError::EgoTrajectoryLength(cfg.ego_trajectory.len(), cfg.n_frames));
    }
    for (o, obj) in cfg.objects.iter().enumerate() {
        if obj.trajectory.len() != cfg.n_frames {
            return Err(SimulateError::TrajectoryLength(o, obj.trajectory.len(), cfg.n_frames));
        }
        let (l, w, h) = obj.size;
        if !(l > 0.0 && w > 0.0 && h > 0.0) {
            return Err(SimulateError::BadSize(o));
        }
    }
    Ok(())
}

fn pose_of(spec: &PoseSpec) -> RigidTransform {
    RigidTransform::from_yaw_translation(
        spec.yaw,
        Vector3::new(spec.center[0], spec.center[1], spec.center[2]),
    )
}

/// Segment-vs-oriented-box test: does the segment from `a` to `b` enter the
/// box strictly before reaching `b`?
fn segment_hits_box(a: Vector3<f64>, b: Vector3<f64>, bbox: &BoundingBox3D) -> bool {
    let la = bbox.to_local(a);
    let lb = bbox.to_local(b);
    let d = lb - la;
    let half = Vector3::new(bbox.size.0 / 2.0, bbox.size.1 / 2.0, bbox.size.2 / 2.0);
    let mut t_min = 0.0f64;
    let mut t_max: f64 = 1.0 - 1e-9;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if la[axis].abs() > half[axis] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut t0 = (-half[axis] - la[axis]) * inv;
        let mut t1 = (half[axis] - la[axis]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_min = t_min.max(t0);
        t_max = t_max.min(t1);
        if t_min > t_max {
            return false;
        }
    }
    true
}

fn inflated_box(center: Vector3<f64>, size: (f64, f64, f64), yaw: f64) -> BoundingBox3D {
    BoundingBox3D::new(
        center,
        (size.0 + BOX_INFLATION, size.1 + BOX_INFLATION, size.2 + BOX_INFLATION),
        yaw,
    )
    .expect("positive size")
}

/// Indices of `surface` samples visible from `sensor`, given the object's
/// pose and the other objects' occluder boxes.
fn visible_indices(
    surface: &[SurfaceSample],
    object_pose: &RigidTransform,
    sensor: Vector3<f64>,
    lidar_range: f64,
    occluders: &[BoundingBox3D],
) -> Vec<usize> {
    let mut out = Vec::new();
    'point: for (i, s) in surface.iter().enumerate() {
        let p = object_pose.apply_point(s.position);
        let to_sensor = sensor - p;
        if to_sensor.norm() > lidar_range {
            continue;
        }
        let n = object_pose.rotation * s.normal;
        if n.dot(&to_sensor) <= 0.0 {
            continue;
        }
        for occ in occluders {
            if segment_hits_box(sensor, p, occ) {
                continue 'point;
            }
        }
        out.push(i);
    }
    out
}

/// Generates the sequence and its ground truth. Deterministic in the seed;
/// every random draw comes from a stream keyed by its purpose and indices.
pub fn generate(cfg: &SceneConfig) -> Result<(Sequence, GroundTruth), SimulateError> {
    validate(cfg)?;

    let surfaces: Vec<Vec<SurfaceSample>> = cfg
        .objects
        .iter()
        .enumerate()
        .map(|(o, obj)| {
            let mut stream = rng::stream(cfg.seed, "surface", &[o as u64]);
            match obj.shape {
                ObjectShape::Box => sample_box_surface(obj.size, cfg.points_per_m2, &mut stream),
                ObjectShape::Cylinder => {
                    sample_cylinder_surface(obj.size, cfg.points_per_m2, &mut stream)
                }
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut per_frame_boxes = Vec::with_capacity(cfg.n_frames);

    for f in 0..cfg.n_frames {
        let ego = pose_of(&cfg.ego_trajectory[f]);
        let ego_inv = ego.inverse();
        let sensor = ego.translation;

        let global_boxes: Vec<BoundingBox3D> = cfg
            .objects
            .iter()
            .map(|obj| {
                let pose = obj.trajectory[f];
                inflated_box(
                    Vector3::new(pose.center[0], pose.center[1], pose.center[2]),
                    obj.size,
                    pose.yaw,
                )
            })
            .collect();

        let mut cloud = PointCloud::default();
        let mut instances = Vec::with_capacity(cfg.objects.len());
        for (o, obj) in cfg.objects.iter().enumerate() {
            let object_pose = pose_of(&obj.trajectory[f]);
            let occluders: Vec<BoundingBox3D> = global_boxes
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != o)
                .map(|(_, b)| *b)
                .collect();
            let vis = visible_indices(
                &surfaces[o],
                &object_pose,
                sensor,
                cfg.lidar_range,
                &occluders,
            );
            let mut noise = rng::stream(cfg.seed, "noise", &[f as u64, o as u64]);
            let normal = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
            for i in vis {
                let s = &surfaces[o][i];
                let mut p = object_pose.apply_point(s.position);
                if cfg.noise_sigma > 0.0 {
                    p += Vector3::new(
                        normal.sample(&mut noise),
                        normal.sample(&mut noise),
                        normal.sample(&mut noise),
                    );
                }
                let q = ego_inv.apply_point(p);
                cloud.points.push(Point3::new(q.x, q.y, q.z, s.intensity));
            }
            // box in the ego frame
            let gb = &global_boxes[o];
            let ego_box = BoundingBox3D::new(
                ego_inv.apply_point(gb.center),
                gb.size,
                gb.yaw - ego.yaw(),
            )
            .expect("positive size");
            instances.push(
                DetectedInstance::new(ego_box, obj.class_label.clone(), 1.0).with_id(o as u64),
            );
        }

        if cfg.background_points_per_frame > 0 {
            let mut ground = rng::stream(cfg.seed, "ground", &[f as u64]);
            for _ in 0..cfg.background_points_per_frame {
                let theta = ground.gen_range(0.0..2.0 * std::f64::consts::PI);
                let radius = cfg.lidar_range * ground.gen_range(0.1f64..1.0).sqrt();
                let g = sensor + Vector3::new(radius * theta.cos(), radius * theta.sin(), 0.0)
                    - Vector3::new(0.0, 0.0, 1.8);
                let q = ego_inv.apply_point(g);
                cloud.points.push(Point3::new(q.x, q.y, q.z, ground.gen_range(0.0..1.0)));
            }
        }

        frames.push(Frame {
            index: f,
            timestamp_us: f as i64 * 100_000,
            ego_pose: ego,
            cloud,
            instances,
        });
        per_frame_boxes.push(global_boxes);
    }

    let tracks = (0..cfg.objects.len())
        .map(|o| Track {
            track_id: o as u64,
            occurrences: (0..cfg.n_frames).map(|f| (f, o)).collect(),
        })
        .collect();

    let full_surfaces = surfaces
        .iter()
        .map(|s| {
            s.iter()
                .map(|p| Point3::new(p.position.x, p.position.y, p.position.z, p.intensity))
                .collect()
        })
        .collect();

    Ok((
        Sequence { name: format!("sim-{}", cfg.seed), frames },
        GroundTruth { full_surfaces, tracks, per_frame_boxes },
    ))
}

/// Perturbs every instance box's center and yaw with Gaussian noise, leaving
/// the points untouched. Deterministic in the seed.
pub fn inject_box_noise(
    seq: &Sequence,
    yaw_sigma: f64,
    center_sigma: f64,
    seed: u64,
) -> Sequence {
    let mut out = seq.clone();
    if yaw_sigma == 0.0 && center_sigma == 0.0 {
        return out;
    }
    for frame in &mut out.frames {
        for (i, inst) in frame.instances.iter_mut().enumerate() {
            let mut stream = rng::stream(seed, "boxnoise", &[frame.index as u64, i as u64]);
            let yaw_noise = Normal::new(0.0, yaw_sigma.max(f64::MIN_POSITIVE)).unwrap();
            let center_noise = Normal::new(0.0, center_sigma.max(f64::MIN_POSITIVE)).unwrap();
            let dyaw = if yaw_sigma > 0.0 { yaw_noise.sample(&mut stream) } else { 0.0 };
            let dc = if center_sigma > 0.0 {
                Vector3::new(
                    center_noise.sample(&mut stream),
                    center_noise.sample(&mut stream),
                    center_noise.sample(&mut stream),
                )
            } else {
                Vector3::zeros()
            };
            inst.bbox = BoundingBox3D::new(
                inst.bbox.center + dc,
                inst.bbox.size,
                inst.bbox.yaw + dyaw,
            )
            .expect("sizes unchanged");
        }
    }
    out
}

/// An orbit of `n_frames` viewpoints at `radius` around the origin, facing
/// inward. The elevation alternates between +height and -height so that
/// over a full orbit every face of a convex object is seen from some
/// viewpoint. Shared by tests and benchmarks.
pub fn orbit_trajectory(n_frames: usize, radius: f64, height: f64) -> Vec<PoseSpec> {
    (0..n_frames)
        .map(|f| {
            let theta = 2.0 * std::f64::consts::PI * f as f64 / n_frames as f64;
            let z = if f % 2 == 0 { height } else { -height };
            PoseSpec {
                center: [radius * theta.cos(), radius * theta.sin(), z],
                yaw: theta + std::f64::consts::PI,
            }
        })
        .collect()
}

/// A static box-car scene observed from an orbiting sensor.
pub fn orbit_scene(n_frames: usize, points_per_m2: f64, seed: u64) -> SceneConfig {
    SceneConfig {
        n_frames,
        objects: vec![ObjectSpec {
            shape: ObjectShape::Box,
            size: (4.0, 2.0, 1.5),
            class_label: "vehicle".into(),
            trajectory: vec![PoseSpec { center: [0.0, 0.0, 0.75], yaw: 0.0 }; n_frames],
        }],
        ego_trajectory: orbit_trajectory(n_frames, 10.0, 3.0),
        points_per_m2,
        lidar_range: 50.0,
        noise_sigma: 0.0,
        background_points_per_frame: 0,
        seed,
    }
}
