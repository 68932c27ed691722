//! Canonicalization and rigid registration of instance point clouds, and the
//! merging of a track's views into a single dense object.
//!
//! The registrar slot is deliberately narrow: `MergeStrategy::Geometry`
//! concatenates canonicalized views as-is, `MergeStrategy::Icp` refines each
//! view against the accumulated cloud with classical point-to-point ICP
//! before concatenating. Corrections are applied sequentially in track
//! order, so an early misregistration can propagate — the same behavior the
//! noisy-box tests probe.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_transform, compose, BoundingBox3D, PointCloud, RigidTransform,
};
use crate::grid::VoxelGrid;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("empty {0} cloud")]
    EmptyCloud(&'static str),
    #[error("no overlap: zero correspondences within {0} m")]
    NoOverlap(f64),
    #[error("empty view list")]
    NoViews,
}

/// Point-to-point ICP parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop when the RMSE improvement falls below this (meters).
    pub convergence_tol: f64,
    /// Correspondences farther than this are discarded (meters).
    pub max_correspondence_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_iterations: 50, convergence_tol: 1e-4, max_correspondence_dist: 0.5 }
    }
}

/// Outcome of one registration: the transform mapping source into the
/// target frame, the final inlier RMSE, and the iteration trace.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub residual_rmse: f64,
    pub iterations: usize,
    /// RMSE after each accepted iteration; non-increasing.
    pub rmse_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    Geometry,
    Icp,
}

/// The merged, completed point cloud of one track, expressed in the
/// canonical frame (box center at the origin, yaw zero).
#[derive(Debug, Clone)]
pub struct CanonicalObject {
    pub track_id: u64,
    pub cloud: PointCloud,
    pub source_count: usize,
    /// Per-view provenance: (frame_index, range of `cloud` contributed).
    pub view_spans: Vec<(usize, std::ops::Range<usize>)>,
    /// Views appended without correction after an ICP failure.
    pub fallback_count: usize,
    /// Final ICP residuals of the corrected views (empty for geometry).
    pub icp_residuals: Vec<f64>,
}

/// Maps an instance cloud into the box's canonical frame:
/// p -> R(-yaw) * (p - center). Exactly inverted by the box pose.
pub fn canonicalize(instance_cloud: &PointCloud, bbox: &BoundingBox3D) -> PointCloud {
    let inv = bbox.pose().inverse();
    apply_transform(&inv, instance_cloud)
}

/// Closed-form least-squares rigid fit taking `src` onto `dst`. The
/// rotation is constrained to yaw about z — the only orientation degree of
/// freedom anywhere in this toolkit — which keeps the fit well-conditioned
/// on the thin, plane-dominated clouds LiDAR views produce (an
/// unconstrained Kabsch fit happily tilts a single-face view out of plane).
/// With fewer than 3 pairs, or a degenerate planar covariance, falls back
/// to translation-only.
fn kabsch_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> RigidTransform {
    let n = src.len();
    debug_assert_eq!(n, dst.len());
    debug_assert!(n > 0);
    let inv_n = 1.0 / n as f64;
    let c_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() * inv_n;
    let c_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() * inv_n;
    if n < 3 {
        return RigidTransform::from_translation(c_dst - c_src);
    }
    // planar Kabsch: yaw* = atan2(Σ sx'dy' − sy'dx', Σ sx'dx' + sy'dy')
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (s, d) in src.iter().zip(dst.iter()) {
        let (sx, sy) = (s.x - c_src.x, s.y - c_src.y);
        let (dx, dy) = (d.x - c_dst.x, d.y - c_dst.y);
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    if dot == 0.0 && cross == 0.0 {
        return RigidTransform::from_translation(c_dst - c_src);
    }
    let yaw = cross.atan2(dot);
    let tf = RigidTransform::from_yaw_translation(yaw, Vector3::zeros());
    let t = c_dst - tf.rotation_matrix() * c_src;
    RigidTransform::from_yaw_translation(yaw, t)
}

/// Iterative closest point: nearest-neighbor correspondences within
/// `max_correspondence_dist`, closed-form rigid fit, repeat. Stops when the
/// RMSE improvement drops below `convergence_tol` or the iteration cap is
/// hit; an iteration that would raise the RMSE is rejected, so the trace is
/// non-increasing.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    params: &IcpParams,
) -> Result<RegistrationResult, RegistrationError> {
    if source.is_empty() {
        return Err(RegistrationError::EmptyCloud("source"));
    }
    if target.is_empty() {
        return Err(RegistrationError::EmptyCloud("target"));
    }
    let grid = VoxelGrid::build(target, params.max_correspondence_dist);
    let target_pos: Vec<Vector3<f64>> = target.iter().map(|p| p.position()).collect();

    let mut accumulated = RigidTransform::identity();
    let mut moved: Vec<Vector3<f64>> = source.iter().map(|p| p.position()).collect();

    let rmse_of = |pos: &[Vector3<f64>]| -> Result<f64, RegistrationError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in pos {
            if let Some((_, d)) = grid.nearest_within(*p, params.max_correspondence_dist) {
                sum += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(RegistrationError::NoOverlap(params.max_correspondence_dist));
        }
        Ok((sum / count as f64).sqrt())
    };

    let mut rmse = rmse_of(&moved)?;
    let mut trace = vec![rmse];
    let mut iterations = 0;

    for _ in 0..params.max_iterations {
        let mut src_pairs = Vec::new();
        let mut dst_pairs = Vec::new();
        for p in &moved {
            if let Some((j, _)) = grid.nearest_within(*p, params.max_correspondence_dist) {
                src_pairs.push(*p);
                dst_pairs.push(target_pos[j]);
            }
        }
        if src_pairs.is_empty() {
            return Err(RegistrationError::NoOverlap(params.max_correspondence_dist));
        }
        let step = kabsch_fit(&src_pairs, &dst_pairs);
        let candidate: Vec<Vector3<f64>> = moved.iter().map(|p| step.apply_point(*p)).collect();
        let new_rmse = rmse_of(&candidate)?;
        if new_rmse > rmse {
            break;
        }
        accumulated = compose(&step, &accumulated);
        moved = candidate;
        iterations += 1;
        let improvement = rmse - new_rmse;
        rmse = new_rmse;
        trace.push(rmse);
        if improvement < params.convergence_tol {
            break;
        }
    }

    Ok(RegistrationResult {
        transform: accumulated,
        residual_rmse: rmse,
        iterations,
        rmse_trace: trace,
    })
}

/// Merges a track's views into one canonical object. Geometry strategy
/// concatenates canonicalized views; ICP strategy refines each view against
/// the accumulated cloud first, falling back to plain concatenation when a
/// view has no overlap.
pub fn merge_track(
    track_id: u64,
    views: &[(usize, PointCloud, BoundingBox3D)],
    strategy: MergeStrategy,
    icp_params: &IcpParams,
) -> Result<CanonicalObject, RegistrationError> {
    if views.is_empty() {
        return Err(RegistrationError::NoViews);
    }
    let mut cloud = PointCloud::default();
    let mut view_spans = Vec::with_capacity(views.len());
    let mut fallback_count = 0;
    let mut icp_residuals = Vec::new();

    for (view_idx, (frame_index, view_cloud, bbox)) in views.iter().enumerate() {
        let mut canon = canonicalize(view_cloud, bbox);
        if strategy == MergeStrategy::Icp && view_idx > 0 && !canon.is_empty() && !cloud.is_empty()
        {
            match icp_register(&canon, &cloud, icp_params) {
                Ok(result) => {
                    canon = apply_transform(&result.transform, &canon);
                    icp_residuals.push(result.residual_rmse);
                }
                Err(RegistrationError::NoOverlap(_)) | Err(RegistrationError::EmptyCloud(_)) => {
                    fallback_count += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let start = cloud.len();
        cloud.extend(&canon);
        view_spans.push((*frame_index, start..cloud.len()));
    }

    Ok(CanonicalObject {
        track_id,
        cloud,
        source_count: views.len(),
        view_spans,
        fallback_count,
        icp_residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    fn grid_cloud(n_side: usize, spacing: f64) -> PointCloud {
        // points on three faces of a box surface, non-degenerate geometry
        let mut pts = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                let a = i as f64 * spacing;
                let b = j as f64 * spacing;
                pts.push(Point3::new(a, b, 0.0, 0.5));
                pts.push(Point3::new(a, 0.0, b, 0.5));
                pts.push(Point3::new(0.0, a, b, 0.5));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn canonicalize_identity_box_is_noop() {
        let pc = grid_cloud(4, 0.5);
        let b = BoundingBox3D::new(Vector3::zeros(), (4.0, 4.0, 4.0), 0.0).unwrap();
        assert_eq!(canonicalize(&pc, &b), pc);
    }

    #[test]
    fn canonicalize_hand_computed() {
        // R(-pi/2) * ((1,0,0) - (5,0,0)) = R(-pi/2) * (-4,0,0) = (0,4,0)
        let pc = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0, 0.5)]);
        let b =
            BoundingBox3D::new(Vector3::new(5.0, 0.0, 0.0), (4.0, 2.0, 2.0), FRAC_PI_2).unwrap();
        let out = canonicalize(&pc, &b);
        assert_relative_eq!(out.points[0].x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.points[0].y, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn canonicalize_round_trips() {
        let pc = grid_cloud(5, 0.3);
        let b = BoundingBox3D::new(Vector3::new(2.0, -1.0, 0.5), (3.0, 2.0, 1.5), 0.8).unwrap();
        let back = apply_transform(&b.pose(), &canonicalize(&pc, &b));
        for (p, q) in back.iter().zip(pc.iter()) {
            assert!(p.distance(q) < 1e-9);
        }
    }

    #[test]
    fn icp_identical_clouds_is_identity() {
        let pc = grid_cloud(10, 0.2);
        let r = icp_register(&pc, &pc, &IcpParams::default()).unwrap();
        assert!(r.residual_rmse < 1e-9);
        assert!(r.transform.translation.norm() < 1e-6);
        assert!(r.transform.yaw().abs() < 1e-6);
    }

    #[test]
    fn icp_single_point_translation_only() {
        let src = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0, 0.5)]);
        let dst = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0, 0.5)]);
        let params = IcpParams { max_correspondence_dist: 10.0, ..IcpParams::default() };
        let r = icp_register(&src, &dst, &params).unwrap();
        assert_relative_eq!(r.transform.translation.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(r.transform.translation.y, 2.0, epsilon = 1e-9);
        assert_relative_eq!(r.transform.translation.z, 3.0, epsilon = 1e-9);
        assert!(r.transform.yaw().abs() < 1e-9);
    }

    fn random_surface(n: usize, seed: u64) -> PointCloud {
        // random samples on the faces of a 4 x 2 x 1.5 box
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = rng.gen_range(-0.5..0.5);
                let v = rng.gen_range(-0.5..0.5);
                match rng.gen_range(0..5) {
                    0 => Point3::new(2.0, u * 2.0, v * 1.5, 0.5),
                    1 => Point3::new(-2.0, u * 2.0, v * 1.5, 0.5),
                    2 => Point3::new(u * 4.0, 1.0, v * 1.5, 0.5),
                    3 => Point3::new(u * 4.0, -1.0, v * 1.5, 0.5),
                    _ => Point3::new(u * 4.0, v * 2.0, 0.75, 0.5),
                }
            })
            .collect()
    }

    #[test]
    fn icp_recovers_known_perturbation() {
        let target = random_surface(1000, 17);
        let perturb = RigidTransform::from_yaw_translation(
            10f64.to_radians(),
            Vector3::new(0.1, -0.08, 0.05),
        );
        let source = apply_transform(&perturb, &target);
        let r = icp_register(&source, &target, &IcpParams::default()).unwrap();
        let residual = compose(&r.transform, &perturb);
        assert!(residual.yaw().abs().to_degrees() < 0.5, "yaw {}", residual.yaw().to_degrees());
        assert!(residual.translation.norm() < 0.02);
        // trace non-increasing
        for w in r.rmse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn icp_errors() {
        let pc = grid_cloud(3, 0.5);
        assert!(matches!(
            icp_register(&PointCloud::default(), &pc, &IcpParams::default()),
            Err(RegistrationError::EmptyCloud("source"))
        ));
        assert!(matches!(
            icp_register(&pc, &PointCloud::default(), &IcpParams::default()),
            Err(RegistrationError::EmptyCloud("target"))
        ));
        let far = apply_transform(
            &RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0)),
            &pc,
        );
        assert!(matches!(
            icp_register(&far, &pc, &IcpParams::default()),
            Err(RegistrationError::NoOverlap(_))
        ));
    }

    #[test]
    fn merge_single_view_equals_canonicalize() {
        let pc = grid_cloud(4, 0.5);
        let b = BoundingBox3D::new(Vector3::new(1.0, 2.0, 0.0), (4.0, 4.0, 4.0), 0.3).unwrap();
        let obj = merge_track(5, &[(0, pc.clone(), b)], MergeStrategy::Geometry, &IcpParams::default())
            .unwrap();
        assert_eq!(obj.track_id, 5);
        assert_eq!(obj.source_count, 1);
        assert_eq!(obj.cloud, canonicalize(&pc, &b));
        assert_eq!(obj.view_spans, vec![(0, 0..pc.len())]);
    }

    #[test]
    fn merge_geometry_concatenates_counts() {
        let pc1 = grid_cloud(4, 0.5);
        let pc2 = grid_cloud(3, 0.5);
        let b = BoundingBox3D::new(Vector3::zeros(), (4.0, 4.0, 4.0), 0.0).unwrap();
        let obj = merge_track(
            0,
            &[(0, pc1.clone(), b), (1, pc2.clone(), b)],
            MergeStrategy::Geometry,
            &IcpParams::default(),
        )
        .unwrap();
        assert_eq!(obj.cloud.len(), pc1.len() + pc2.len());
        assert_eq!(obj.source_count, 2);
        assert_eq!(obj.fallback_count, 0);
    }

    #[test]
    fn merge_empty_views_is_error() {
        assert!(matches!(
            merge_track(0, &[], MergeStrategy::Geometry, &IcpParams::default()),
            Err(RegistrationError::NoViews)
        ));
    }
}
