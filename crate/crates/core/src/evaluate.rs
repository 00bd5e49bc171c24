//! Registration quality metrics: inlier fraction and inlier RMSE.
//!
//! A registered target point counts as an inlier when its nearest neighbor
//! in the source cloud lies strictly closer than the distance threshold;
//! the RMSE is taken over those inliers only. Metrics are meaningful on
//! the densest clouds available (denoised originals), not on downsampled
//! working copies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::kdtree::build_index;
use crate::se3::RigidTransform;

/// Quality of a registration, measured target-against-source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Share of target points whose nearest source neighbor is strictly
    /// within the threshold, in [0, 1].
    pub inlier_fraction: f64,
    /// Root mean square nearest-neighbor distance over the inliers;
    /// undefined (`None`) when there are no inliers.
    pub inlier_rmse: Option<f64>,
    /// Number of target points evaluated.
    pub target_size: usize,
    /// Inlier distance threshold in meters.
    pub threshold: f64,
}

/// Default inlier distance threshold in meters.
pub const DEFAULT_METRIC_THRESHOLD: f64 = 0.5;

/// Evaluate how well `t` registers the target cloud onto the source cloud:
/// transform every target point by `t`, measure its distance to the
/// nearest source point, and aggregate as described on [`Metrics`].
pub fn compute_metrics(
    source: &PointCloud,
    target: &PointCloud,
    t: &RigidTransform,
    threshold: f64,
) -> Result<Metrics> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::Param(format!(
            "metric threshold must be > 0, got {threshold}"
        )));
    }
    if target.is_empty() {
        return Err(Error::EmptyInput("metrics need a non-empty target cloud"));
    }
    let kd = build_index(source)?; // rejects an empty source
    let mut inliers = 0usize;
    let mut sum_sq = 0.0;
    for i in 0..target.len() {
        let x = t.transform_point(&target.point(i));
        let (_, d) = kd.nearest(&x, 1)[0];
        if d < threshold {
            inliers += 1;
            sum_sq += d * d;
        }
    }
    let inlier_rmse = (inliers > 0).then(|| (sum_sq / inliers as f64).sqrt());
    Ok(Metrics {
        inlier_fraction: inliers as f64 / target.len() as f64,
        inlier_rmse,
        target_size: target.len(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point3, Vec3};
    use crate::se3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_cloud(n: usize, h: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * h, j as f64 * h, 0.0));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn identical_clouds_under_identity_score_perfectly() {
        let cloud = plane_cloud(10, 0.2);
        let m = compute_metrics(&cloud, &cloud, &RigidTransform::identity(), 0.5).unwrap();
        // Exact identity leaves every coordinate bit-identical, so the
        // nearest distance is exactly zero for every point.
        assert_eq!(m.inlier_fraction, 1.0);
        assert_eq!(m.inlier_rmse, Some(0.0));
        assert_eq!(m.target_size, cloud.len());
        assert_eq!(m.threshold, 0.5);
    }

    #[test]
    fn plane_shifted_a_meter_normal_to_itself_has_no_inliers() {
        let source = plane_cloud(10, 0.2);
        let target = se3::apply(
            &RigidTransform::translation_of(Vec3::new(0.0, 0.0, 1.0)),
            &source,
        );
        let m = compute_metrics(&source, &target, &RigidTransform::identity(), 0.5).unwrap();
        assert_eq!(m.inlier_fraction, 0.0);
        assert_eq!(m.inlier_rmse, None);
    }

    #[test]
    fn matches_linear_scan_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let source = PointCloud::new(
            (0..150)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect(),
        )
        .unwrap();
        let target = PointCloud::new(
            (0..120)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-2.5..2.5),
                        rng.random_range(-2.5..2.5),
                        rng.random_range(-2.5..2.5),
                    )
                })
                .collect(),
        )
        .unwrap();
        let t = se3::compose(
            &RigidTransform::translation_of(Vec3::new(0.3, -0.2, 0.1)),
            &RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 0.4).unwrap(),
        );
        let threshold = 0.6;

        // Independent route: brute-force nearest distances with the same
        // arithmetic as the tree (sqrt of summed squared differences).
        let mut inliers = 0usize;
        let mut sum_sq = 0.0;
        for i in 0..target.len() {
            let x = t.transform_point(&target.point(i));
            let mut best = f64::INFINITY;
            for j in 0..source.len() {
                let diff = x.coords - source.point(j).coords;
                let d = diff.norm_squared().sqrt();
                if d < best {
                    best = d;
                }
            }
            if best < threshold {
                inliers += 1;
                sum_sq += best * best;
            }
        }
        let expected_fraction = inliers as f64 / target.len() as f64;
        let expected_rmse = (sum_sq / inliers as f64).sqrt();

        let m = compute_metrics(&source, &target, &t, threshold).unwrap();
        assert_eq!(m.inlier_fraction, expected_fraction);
        assert_eq!(m.inlier_rmse, Some(expected_rmse));
    }

    #[test]
    fn threshold_is_strict_and_fraction_monotone_in_threshold() {
        // Two source points; target point exactly 0.5 from the nearest.
        let source = PointCloud::new(vec![Point3::origin(), Point3::new(10.0, 0.0, 0.0)]).unwrap();
        let target = PointCloud::new(vec![Point3::new(0.5, 0.0, 0.0)]).unwrap();
        let at = compute_metrics(&source, &target, &RigidTransform::identity(), 0.5).unwrap();
        assert_eq!(at.inlier_fraction, 0.0, "boundary distance must not count");
        let above =
            compute_metrics(&source, &target, &RigidTransform::identity(), 0.5000001).unwrap();
        assert_eq!(above.inlier_fraction, 1.0);

        // Monotonicity over a sweep on a random pair.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = PointCloud::new(
            (0..80)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap();
        let tgt = PointCloud::new(
            (0..80)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap();
        let mut last = 0.0;
        for k in 1..=20 {
            let m =
                compute_metrics(&src, &tgt, &RigidTransform::identity(), 0.02 * k as f64).unwrap();
            assert!(m.inlier_fraction >= last);
            last = m.inlier_fraction;
        }
    }

    #[test]
    fn rejects_empty_inputs_and_bad_threshold() {
        let cloud = plane_cloud(3, 0.1);
        let empty = PointCloud::empty();
        assert!(matches!(
            compute_metrics(&empty, &cloud, &RigidTransform::identity(), 0.5),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            compute_metrics(&cloud, &empty, &RigidTransform::identity(), 0.5),
            Err(Error::EmptyInput(_))
        ));
        assert!(compute_metrics(&cloud, &cloud, &RigidTransform::identity(), 0.0).is_err());
        assert!(compute_metrics(&cloud, &cloud, &RigidTransform::identity(), f64::NAN).is_err());
    }

    #[test]
    fn metrics_serialize_round_trip() {
        let m = Metrics {
            inlier_fraction: 0.75,
            inlier_rmse: Some(0.01),
            target_size: 400,
            threshold: 0.5,
        };
        let json = serde_json::to_string(&m).unwrap();
        let back: Metrics = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        let none = Metrics {
            inlier_rmse: None,
            ..m
        };
        let back: Metrics = serde_json::from_str(&serde_json::to_string(&none).unwrap()).unwrap();
        assert_eq!(none, back);
    }
}
