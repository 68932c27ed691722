//! Metrics against simulator ground truth: surface coverage, chamfer
//! distance, tracking precision/recall, and rigid-transform error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::Sequence;
use crate::geometry::{compose, PointCloud, RigidTransform};
use crate::grid::VoxelGrid;
use crate::tracking::Track;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0} cloud")]
    EmptyCloud(&'static str),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("track {track_id} references missing instance ({frame}, {instance})")]
    BadTrackRef { track_id: u64, frame: usize, instance: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ObjectReport {
    pub object_index: usize,
    /// Coverage of the ground-truth surface per frame.
    pub coverage_per_frame: Vec<f64>,
    pub coverage_best: f64,
    pub chamfer_best: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub objects: Vec<ObjectReport>,
    pub tracking_precision: f64,
    pub tracking_recall: f64,
}

/// Fraction of `gt_full` points with a `completed` point within `radius`.
pub fn coverage(completed: &PointCloud, gt_full: &PointCloud, radius: f64) -> Result<f64, EvalError> {
    if gt_full.is_empty() {
        return Err(EvalError::EmptyCloud("ground-truth"));
    }
    if radius <= 0.0 {
        return Err(EvalError::BadRadius(radius));
    }
    if completed.is_empty() {
        return Ok(0.0);
    }
    let grid = VoxelGrid::build(completed, radius);
    let hit = gt_full
        .iter()
        .filter(|p| grid.nearest_within(p.position(), radius).is_some())
        .count();
    Ok(hit as f64 / gt_full.len() as f64)
}

/// Symmetric mean nearest-neighbor distance (non-squared, meters).
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, EvalError> {
    if a.is_empty() {
        return Err(EvalError::EmptyCloud("first"));
    }
    if b.is_empty() {
        return Err(EvalError::EmptyCloud("second"));
    }
    let mean_nn = |from: &PointCloud, to: &PointCloud| -> f64 {
        // cell size from the target's extent; the unbounded query expands
        // shells as needed either way
        let grid = VoxelGrid::build(to, 0.5);
        let sum: f64 = from
            .iter()
            .map(|p| grid.nearest(p.position()).expect("nonempty").1)
            .sum();
        sum / from.len() as f64
    };
    Ok(0.5 * (mean_nn(a, b) + mean_nn(b, a)))
}

fn adjacent_associations(tracks: &[Track]) -> Vec<((usize, usize), (usize, usize))> {
    let mut out = Vec::new();
    for t in tracks {
        for w in t.occurrences.windows(2) {
            if w[1].0 == w[0].0 + 1 {
                out.push((w[0], w[1]));
            }
        }
    }
    out
}

/// Precision/recall of adjacent-frame associations against ground-truth
/// identity chains. Empty denominators score 1.0.
pub fn tracking_score(
    pred: &[Track],
    gt: &[Track],
    seq: &Sequence,
) -> Result<(f64, f64), EvalError> {
    // instance -> ground-truth id
    let mut gt_id: Vec<Vec<Option<u64>>> =
        seq.frames.iter().map(|f| vec![None; f.instances.len()]).collect();
    for t in gt {
        for &(f, i) in &t.occurrences {
            if f >= gt_id.len() || i >= gt_id[f].len() {
                return Err(EvalError::BadTrackRef { track_id: t.track_id, frame: f, instance: i });
            }
            gt_id[f][i] = Some(t.track_id);
        }
    }
    for t in pred {
        for &(f, i) in &t.occurrences {
            if f >= gt_id.len() || i >= gt_id[f].len() {
                return Err(EvalError::BadTrackRef { track_id: t.track_id, frame: f, instance: i });
            }
        }
    }
    let pred_assoc = adjacent_associations(pred);
    let gt_assoc = adjacent_associations(gt);
    let correct = pred_assoc
        .iter()
        .filter(|((f0, i0), (f1, i1))| {
            let a = gt_id[*f0][*i0];
            let b = gt_id[*f1][*i1];
            a.is_some() && a == b
        })
        .count();
    let precision = if pred_assoc.is_empty() { 1.0 } else { correct as f64 / pred_assoc.len() as f64 };
    let recall = if gt_assoc.is_empty() { 1.0 } else { correct as f64 / gt_assoc.len() as f64 };
    Ok((precision, recall))
}

/// (rotation error in degrees, translation error in meters) of
/// `estimated * truth^-1`.
pub fn transform_error(estimated: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let residual = compose(estimated, &truth.inverse());
    let angle = residual.rotation.angle().to_degrees();
    (angle, residual.translation.norm())
}
