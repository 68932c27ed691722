//! Greedy frame-to-frame multi-object tracking, plus the supervised
//! variant that chains detections by externally supplied instance ids.
//!
//! The greedy matcher walks the sequence in time order. For an instance in
//! frame i, the candidates in frame i+1 are the same-class instances whose
//! box centers lie within twice the larger of the two boxes' maximum
//! dimensions; the nearest one is claimed. A track with no candidate left
//! terminates, and every unclaimed instance starts a new track.
//!
//! Alternative associators (Kalman + IoU, ReID embeddings) would slot in as
//! further implementations of the same `Sequence -> Vec<Track>` shape; only
//! the greedy matcher is provided here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::Sequence;
use crate::geometry::BoundingBox3D;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("frame timestamps not strictly increasing at frame {0}")]
    NonMonotonicTimestamps(usize),
    #[error("instance {instance} in frame {frame} has no instance_id")]
    MissingInstanceId { frame: usize, instance: usize },
    #[error("duplicate instance_id {id} in frame {frame}")]
    DuplicateInstanceId { frame: usize, id: u64 },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

/// One detection in one frame. The box is expressed in the frame the caller
/// chose; the tracker lifts ego-frame boxes into the global frame using the
/// frame's ego pose before measuring distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedInstance {
    pub bbox: BoundingBox3D,
    pub class_label: String,
    pub score: f64,
    pub instance_id: Option<u64>,
}

impl DetectedInstance {
    pub fn new(bbox: BoundingBox3D, class_label: impl Into<String>, score: f64) -> Self {
        Self { bbox, class_label: class_label.into(), score, instance_id: None }
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.instance_id = Some(id);
        self
    }
}

/// A chain of instance occurrences with a stable identity. Greedy tracks
/// cover strictly consecutive frames; id-based tracks may have gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    /// (frame_index, instance_index) pairs in frame order.
    pub occurrences: Vec<(usize, usize)>,
}

/// Association radius for a candidate pair: twice the larger of the two
/// boxes' maximum dimensions.
pub fn association_radius(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    2.0 * a.max_dimension().max(b.max_dimension())
}

fn check_timestamps(seq: &Sequence) -> Result<(), TrackingError> {
    for w in seq.frames.windows(2) {
        if w[1].timestamp_us <= w[0].timestamp_us {
            return Err(TrackingError::NonMonotonicTimestamps(w[1].index));
        }
    }
    Ok(())
}

/// Chains detections frame-to-frame by greedy nearest-neighbor association.
pub fn greedy_track(seq: &Sequence) -> Result<Vec<Track>, TrackingError> {
    check_timestamps(seq)?;
    let global_boxes: Vec<Vec<BoundingBox3D>> =
        seq.frames.iter().map(|f| f.global_boxes()).collect();

    let mut tracks: Vec<Track> = Vec::new();
    // assigned[f][i] = index into `tracks` for instance i of frame f
    let mut assigned: Vec<Vec<Option<usize>>> =
        seq.frames.iter().map(|f| vec![None; f.instances.len()]).collect();

    for f in 0..seq.frames.len() {
        // Unclaimed instances open new tracks, in ascending index order.
        for i in 0..seq.frames[f].instances.len() {
            if assigned[f][i].is_none() {
                let id = tracks.len() as u64;
                tracks.push(Track { track_id: id, occurrences: vec![(f, i)] });
                assigned[f][i] = Some(tracks.len() - 1);
            }
        }
        if f + 1 >= seq.frames.len() {
            break;
        }
        let next = &seq.frames[f + 1];
        let mut claimed = vec![false; next.instances.len()];
        for i in 0..seq.frames[f].instances.len() {
            let cur = &seq.frames[f].instances[i];
            let cur_box = &global_boxes[f][i];
            let mut best: Option<(usize, f64)> = None;
            for (k, cand) in next.instances.iter().enumerate() {
                if claimed[k] || cand.class_label != cur.class_label {
                    continue;
                }
                let cand_box = &global_boxes[f + 1][k];
                let dist = (cand_box.center - cur_box.center).norm();
                if dist <= association_radius(cur_box, cand_box)
                    && best.map_or(true, |(_, bd)| dist < bd)
                {
                    // ties break toward the lowest candidate index, which
                    // the ascending scan already guarantees
                    best = Some((k, dist));
                }
            }
            if let Some((k, _)) = best {
                claimed[k] = true;
                let t = assigned[f][i].expect("assigned above");
                tracks[t].occurrences.push((f + 1, k));
                assigned[f + 1][k] = Some(t);
            }
        }
    }
    Ok(tracks)
}

/// Groups detections by their ground-truth instance ids. Gaps are allowed:
/// an object that leaves and re-enters view stays one track.
pub fn track_instances_from_ids(seq: &Sequence) -> Result<Vec<Track>, TrackingError> {
    check_timestamps(seq)?;
    let mut order: Vec<u64> = Vec::new();
    let mut by_id: std::collections::HashMap<u64, Vec<(usize, usize)>> =
        std::collections::HashMap::new();
    for (f, frame) in seq.frames.iter().enumerate() {
        let mut seen = std::collections::HashSet::new();
        for (i, inst) in frame.instances.iter().enumerate() {
            let id = inst
                .instance_id
                .ok_or(TrackingError::MissingInstanceId { frame: f, instance: i })?;
            if !seen.insert(id) {
                return Err(TrackingError::DuplicateInstanceId { frame: f, id });
            }
            let entry = by_id.entry(id).or_default();
            if entry.is_empty() {
                order.push(id);
            }
            entry.push((f, i));
        }
    }
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(t, id)| Track { track_id: t as u64, occurrences: by_id.remove(&id).unwrap() })
        .collect())
}
