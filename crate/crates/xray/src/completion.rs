//! The temporal-fusion pipeline: track objects, merge each track's views
//! into a dense canonical object, then patch every frame so each instance
//! carries the full merged cloud. Original points are always retained;
//! only points contributed by other frames count as "new" and are subject
//! to the subsampling budget.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_transform, points_in_box, BoundingBox3D, PointCloud, RigidTransform};
use crate::parallel::map_indexed;
use crate::registration::{
    merge_track, CanonicalObject, IcpParams, MergeStrategy, RegistrationError,
};
use crate::rng;
use crate::tracking::{greedy_track, track_instances_from_ids, DetectedInstance, Track, TrackingError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("track {track_id} references missing instance ({frame}, {instance})")]
    MissingInstance { track_id: u64, frame: usize, instance: usize },
    #[error("track {track_id}: {source}")]
    Merge { track_id: u64, source: RegistrationError },
    #[error(transparent)]
    Tracking(#[from] TrackingError),
}

/// One LiDAR sweep: points and detections in the ego frame, plus the
/// ego-to-global pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub timestamp_us: i64,
    pub ego_pose: RigidTransform,
    pub cloud: PointCloud,
    pub instances: Vec<DetectedInstance>,
}

impl Frame {
    /// Instance boxes lifted into the global frame. The ego rotation is
    /// treated as yaw-only for the box heading, matching the boxes' single
    /// orientation degree of freedom.
    pub fn global_boxes(&self) -> Vec<BoundingBox3D> {
        let ego_yaw = self.ego_pose.yaw();
        self.instances
            .iter()
            .map(|inst| {
                BoundingBox3D::new(
                    self.ego_pose.apply_point(inst.bbox.center),
                    inst.bbox.size,
                    inst.bbox.yaw + ego_yaw,
                )
                .expect("sizes preserved")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    Greedy,
    InstanceIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: MergeStrategy,
    /// Budget for newly added points, as a multiple of the original frame's
    /// point count. `f64::INFINITY` disables subsampling.
    pub subsample_factor: f64,
    pub seed: u64,
    pub icp: IcpParams,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: MergeStrategy::Geometry,
            subsample_factor: 1.5,
            seed: 0,
            icp: IcpParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TrackReport {
    pub track_id: u64,
    pub view_count: usize,
    pub merged_points: usize,
    pub icp_fallbacks: usize,
    pub icp_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FusionReport {
    pub tracks: Vec<TrackReport>,
    /// Per frame: points offered for insertion before subsampling.
    pub new_points_offered: Vec<usize>,
    /// Per frame: points kept after the subsampling budget.
    pub new_points_kept: Vec<usize>,
}

/// Keeps min(|new_points|, floor(factor * original_count)) points chosen
/// uniformly without replacement; the surviving points keep their order.
pub fn subsample_added_points(
    original_count: usize,
    new_points: &PointCloud,
    factor: f64,
    rng_stream: &mut impl rand::Rng,
) -> PointCloud {
    let n = new_points.len();
    let budget = if factor.is_infinite() {
        n
    } else {
        let b = (factor * original_count as f64).floor();
        if b >= n as f64 {
            n
        } else {
            b.max(0.0) as usize
        }
    };
    if budget >= n {
        return new_points.clone();
    }
    let mut keep = sample(rng_stream, n, budget).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| new_points.points[i]).collect()
}

fn track_views(
    seq: &Sequence,
    track: &Track,
) -> Result<Vec<(usize, PointCloud, BoundingBox3D)>, FusionError> {
    let mut views = Vec::with_capacity(track.occurrences.len());
    for &(f, i) in &track.occurrences {
        let frame = seq.frames.get(f).ok_or(FusionError::MissingInstance {
            track_id: track.track_id,
            frame: f,
            instance: i,
        })?;
        if i >= frame.instances.len() {
            return Err(FusionError::MissingInstance {
                track_id: track.track_id,
                frame: f,
                instance: i,
            });
        }
        let ego_box = &frame.instances[i].bbox;
        let global_box = frame.global_boxes()[i];
        let idx = points_in_box(ego_box, &frame.cloud);
        let ego_points: PointCloud = idx.iter().map(|&k| frame.cloud.points[k]).collect();
        let global_points = apply_transform(&frame.ego_pose, &ego_points);
        views.push((f, global_points, global_box));
    }
    Ok(views)
}

/// Merges every track's views into canonical objects; tracks are
/// independent and merge in parallel.
pub fn merge_tracks(
    seq: &Sequence,
    tracks: &[Track],
    cfg: &FusionConfig,
) -> Result<Vec<CanonicalObject>, FusionError> {
    let results = map_indexed(tracks, |_, track| {
        let views = track_views(seq, track)?;
        merge_track(track.track_id, &views, cfg.strategy, &cfg.icp)
            .map_err(|source| FusionError::Merge { track_id: track.track_id, source })
    });
    results.into_iter().collect()
}

/// Patches one frame: the original cloud is kept untouched and the merged
/// objects' points from *other* frames are re-posed into each instance's
/// box and appended, subject to the frame-level subsampling budget.
fn fuse_frame(
    frame: &Frame,
    instance_objects: &[Option<&CanonicalObject>],
    cfg: &FusionConfig,
) -> (Frame, usize, usize) {
    let mut new_points = PointCloud::default();
    for (i, obj) in instance_objects.iter().enumerate() {
        let Some(obj) = obj else { continue };
        // points contributed by this frame's own view are already present
        let own_span = obj
            .view_spans
            .iter()
            .find(|(f, _)| *f == frame.index)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0);
        let canonical_new: PointCloud = obj
            .cloud
            .iter()
            .enumerate()
            .filter(|(k, _)| !own_span.contains(k))
            .map(|(_, p)| *p)
            .collect();
        let pose = frame.instances[i].bbox.pose();
        new_points.extend(&apply_transform(&pose, &canonical_new));
    }
    let offered = new_points.len();
    let mut stream = rng::stream(cfg.seed, "subsample", &[frame.index as u64]);
    let kept = subsample_added_points(frame.cloud.len(), &new_points, cfg.subsample_factor, &mut stream);
    let kept_count = kept.len();
    let mut cloud = frame.cloud.clone();
    cloud.extend(&kept);
    (
        Frame {
            index: frame.index,
            timestamp_us: frame.timestamp_us,
            ego_pose: frame.ego_pose,
            cloud,
            instances: frame.instances.clone(),
        },
        offered,
        kept_count,
    )
}

/// Produces the object-complete sequence for the given tracks.
pub fn fuse_sequence(
    seq: &Sequence,
    tracks: &[Track],
    cfg: &FusionConfig,
) -> Result<(Sequence, FusionReport), FusionError> {
    let objects = merge_tracks(seq, tracks, cfg)?;
    // instance -> merged object lookup per frame
    let mut owner: Vec<Vec<Option<usize>>> =
        seq.frames.iter().map(|f| vec![None; f.instances.len()]).collect();
    for (t, track) in tracks.iter().enumerate() {
        for &(f, i) in &track.occurrences {
            owner[f][i] = Some(t);
        }
    }

    let fused = map_indexed(&seq.frames, |f, frame| {
        let instance_objects: Vec<Option<&CanonicalObject>> =
            owner[f].iter().map(|o| o.map(|t| &objects[t])).collect();
        fuse_frame(frame, &instance_objects, cfg)
    });

    let mut frames = Vec::with_capacity(fused.len());
    let mut report = FusionReport {
        tracks: objects
            .iter()
            .map(|o| TrackReport {
                track_id: o.track_id,
                view_count: o.source_count,
                merged_points: o.cloud.len(),
                icp_fallbacks: o.fallback_count,
                icp_residuals: o.icp_residuals.clone(),
            })
            .collect(),
        ..FusionReport::default()
    };
    for (frame, offered, kept) in fused {
        report.new_points_offered.push(offered);
        report.new_points_kept.push(kept);
        frames.push(frame);
    }
    Ok((Sequence { name: seq.name.clone(), frames }, report))
}

/// Tracking, merging, and fusion in one call.
pub fn run_pipeline(
    seq: &Sequence,
    cfg: &FusionConfig,
    mode: TrackingMode,
) -> Result<(Sequence, Vec<Track>, FusionReport), FusionError> {
    let tracks = match mode {
        TrackingMode::Greedy => greedy_track(seq)?,
        TrackingMode::InstanceIds => track_instances_from_ids(seq)?,
    };
    let (fused, report) = fuse_sequence(seq, &tracks, cfg)?;
    Ok((fused, tracks, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use nalgebra::Vector3;

    fn simple_frame(index: usize, cloud: PointCloud, instances: Vec<DetectedInstance>) -> Frame {
        Frame {
            index,
            timestamp_us: index as i64 * 100_000,
            ego_pose: RigidTransform::identity(),
            cloud,
            instances,
        }
    }

    fn box_at(center: (f64, f64, f64)) -> BoundingBox3D {
        BoundingBox3D::new(Vector3::new(center.0, center.1, center.2), (4.0, 2.0, 2.0), 0.0)
            .unwrap()
    }

    #[test]
    fn frame_without_instances_is_unchanged() {
        let cloud = PointCloud::new(vec![
            Point3::new(1.0, 2.0, 3.0, 0.25),
            Point3::new(-7.0, 0.5, 0.1, 0.75),
        ]);
        let seq = Sequence {
            name: "s".into(),
            frames: vec![simple_frame(0, cloud, vec![])],
        };
        let (fused, tracks, _) =
            run_pipeline(&seq, &FusionConfig::default(), TrackingMode::Greedy).unwrap();
        assert!(tracks.is_empty());
        assert_eq!(fused, seq);
    }

    #[test]
    fn static_object_two_frames_union() {
        // one object, distinct points per frame, exact identical boxes
        let obj_box = box_at((0.0, 0.0, 0.0));
        let f0_pts = PointCloud::new(vec![
            Point3::new(0.5, 0.0, 0.0, 0.5),
            Point3::new(0.6, 0.1, 0.0, 0.5),
        ]);
        let f1_pts = PointCloud::new(vec![
            Point3::new(-0.5, 0.0, 0.0, 0.5),
            Point3::new(-0.6, -0.1, 0.0, 0.5),
            Point3::new(-0.7, 0.2, 0.3, 0.5),
        ]);
        let seq = Sequence {
            name: "s".into(),
            frames: vec![
                simple_frame(0, f0_pts, vec![DetectedInstance::new(obj_box, "vehicle", 0.9)]),
                simple_frame(1, f1_pts, vec![DetectedInstance::new(obj_box, "vehicle", 0.9)]),
            ],
        };
        let cfg = FusionConfig { subsample_factor: f64::INFINITY, ..FusionConfig::default() };
        let (fused, _, report) = run_pipeline(&seq, &cfg, TrackingMode::Greedy).unwrap();
        // in-box counts are the union of both views
        for f in &fused.frames {
            let idx = points_in_box(&obj_box, &f.cloud);
            assert_eq!(idx.len(), 5);
        }
        assert_eq!(report.new_points_offered, vec![3, 2]);
        assert_eq!(report.new_points_kept, vec![3, 2]);
    }

    #[test]
    fn originals_always_retained_and_background_untouched() {
        let obj_box = box_at((10.0, 0.0, 0.0));
        let mk = |i: usize, inside: (f64, f64, f64)| {
            let cloud = PointCloud::new(vec![
                Point3::new(99.0, 50.0, 1.0, 0.3), // background
                Point3::new(inside.0, inside.1, inside.2, 0.5),
            ]);
            simple_frame(i, cloud, vec![DetectedInstance::new(obj_box, "vehicle", 0.9)])
        };
        let seq = Sequence {
            name: "s".into(),
            frames: vec![mk(0, (10.5, 0.0, 0.0)), mk(1, (9.5, 0.2, 0.1))],
        };
        // tight budget: factor 0 discards every new point
        let cfg = FusionConfig { subsample_factor: 0.0, ..FusionConfig::default() };
        let (fused, _, report) = run_pipeline(&seq, &cfg, TrackingMode::Greedy).unwrap();
        for (orig, out) in seq.frames.iter().zip(fused.frames.iter()) {
            assert_eq!(out.cloud, orig.cloud, "all originals retained, nothing added");
        }
        assert_eq!(report.new_points_kept, vec![0, 0]);
    }

    #[test]
    fn subsample_law_examples() {
        let mk = |n: usize| -> PointCloud {
            (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0, 0.5)).collect()
        };
        let mut stream = rng::stream(1, "t", &[]);
        assert_eq!(subsample_added_points(1000, &mk(2000), 1.5, &mut stream).len(), 1500);
        assert_eq!(subsample_added_points(1000, &mk(1000), 1.5, &mut stream).len(), 1000);
        assert_eq!(subsample_added_points(1000, &mk(500), 0.0, &mut stream).len(), 0);
        assert_eq!(
            subsample_added_points(3, &mk(100), f64::INFINITY, &mut stream).len(),
            100
        );
    }

    #[test]
    fn subsample_preserves_order() {
        let cloud: PointCloud = (0..100).map(|i| Point3::new(i as f64, 0.0, 0.0, 0.5)).collect();
        let mut stream = rng::stream(9, "t", &[]);
        let kept = subsample_added_points(10, &cloud, 2.0, &mut stream);
        assert_eq!(kept.len(), 20);
        for w in kept.points.windows(2) {
            assert!(w[0].x < w[1].x);
        }
    }

    #[test]
    fn dangling_track_reference_is_error() {
        let seq = Sequence { name: "s".into(), frames: vec![simple_frame(0, PointCloud::default(), vec![])] };
        let tracks = vec![Track { track_id: 0, occurrences: vec![(0, 3)] }];
        let err = fuse_sequence(&seq, &tracks, &FusionConfig::default()).unwrap_err();
        assert!(matches!(err, FusionError::MissingInstance { track_id: 0, frame: 0, instance: 3 }));
    }
}
