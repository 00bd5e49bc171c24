//! Iterative closest point refinement (point-to-point).
//!
//! Minimizes the summed squared distance between source points and their
//! nearest transformed target points, re-deriving the correspondence set
//! every iteration and solving each incremental update in closed form.

use serde::{Deserialize, Serialize};

use crate::coarse_align::kabsch_umeyama;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::kdtree::build_index;
use crate::se3::{compose, RigidTransform};

/// Refinement parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    /// Iteration cap (≥ 1).
    pub max_iterations: usize,
    /// Pairs farther apart than this are discarded each iteration (> 0).
    pub max_correspondence_dist: f64,
    /// Converged when the relative RMSE change drops below this (> 0).
    pub convergence_tol: f64,
    /// Fewer surviving pairs than this aborts with `InsufficientOverlap`
    /// (≥ 3; the incremental fit needs three pairs).
    pub min_correspondences: usize,
}

impl IcpParams {
    /// Defaults scaled to a preprocessing resolution: correspondence cap at
    /// twice the voxel size.
    pub fn for_resolution(voxel_size: f64) -> Self {
        IcpParams {
            max_iterations: 50,
            max_correspondence_dist: 2.0 * voxel_size,
            convergence_tol: 1e-6,
            min_correspondences: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Param("icp max_iterations must be ≥ 1".to_string()));
        }
        if !(self.max_correspondence_dist.is_finite() && self.max_correspondence_dist > 0.0) {
            return Err(Error::Param(format!(
                "icp max_correspondence_dist must be > 0, got {}",
                self.max_correspondence_dist
            )));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(Error::Param(format!(
                "icp convergence_tol must be > 0, got {}",
                self.convergence_tol
            )));
        }
        if self.min_correspondences < 3 {
            return Err(Error::Param(
                "icp min_correspondences must be ≥ 3 (rigid fit needs three pairs)".to_string(),
            ));
        }
        Ok(())
    }
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams::for_resolution(0.1)
    }
}

/// Why the iteration loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpTermination {
    /// Relative RMSE change fell below the tolerance (or RMSE hit zero).
    Converged,
    /// Iteration cap reached without convergence.
    MaxIterations,
    /// Surviving correspondences dropped below the minimum; the result
    /// carries the best transform found so far.
    InsufficientOverlap,
}

/// Refinement outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Pose mapping target-frame points into the source frame.
    pub transform: RigidTransform,
    /// RMSE over the final surviving correspondence set, under the final
    /// transform. `None` only when the first iteration already lacked
    /// enough correspondences.
    pub rmse: Option<f64>,
    /// Completed iterations.
    pub iterations: usize,
    pub converged: bool,
    pub termination: IcpTermination,
    /// Final surviving correspondence set as (source index, target index)
    /// pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Root mean square distance between paired source points and transformed
/// target points.
fn rmse_over(
    source: &PointCloud,
    target: &PointCloud,
    pairs: &[(usize, usize)],
    t: &RigidTransform,
) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|&(si, ti)| {
            (source.point(si).coords - t.transform_point(&target.point(ti)).coords).norm_squared()
        })
        .sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Refine an initial pose by iterated nearest-neighbor matching and
/// closed-form rigid fitting. Each iteration matches every transformed
/// target point to its nearest source point, keeps pairs within the
/// distance cap, and composes the best-fit incremental transform. Stops on
/// relative RMSE change below the tolerance, on the iteration cap, or —
/// reported via the termination variant, not an error — when too few pairs
/// survive the cap.
pub fn refine(
    source: &PointCloud,
    target: &PointCloud,
    initial: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    params.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput("icp needs a non-empty source cloud"));
    }
    if target.is_empty() {
        return Err(Error::EmptyInput("icp needs a non-empty target cloud"));
    }
    let kd = build_index(source)?;

    let mut t = *initial;
    let mut prev_rmse: Option<f64> = None;
    let mut pairs: Vec<(usize, usize)> = Vec::new();

    for iteration in 1..=params.max_iterations {
        // Re-derive the correspondence set under the current pose.
        pairs.clear();
        for ti in 0..target.len() {
            let x = t.transform_point(&target.point(ti));
            let (si, d) = kd.nearest(&x, 1)[0];
            if d <= params.max_correspondence_dist {
                pairs.push((si, ti));
            }
        }
        if pairs.len() < params.min_correspondences {
            return Ok(IcpResult {
                transform: t,
                rmse: prev_rmse,
                iterations: iteration - 1,
                converged: false,
                termination: IcpTermination::InsufficientOverlap,
                pairs,
            });
        }

        // Fit the increment on (source point, currently transformed target
        // point) pairs, then fold it into the cumulative pose.
        let src_pts: Vec<_> = pairs.iter().map(|&(si, _)| source.point(si)).collect();
        let moved_pts: Vec<_> = pairs
            .iter()
            .map(|&(_, ti)| t.transform_point(&target.point(ti)))
            .collect();
        let delta = kabsch_umeyama(&src_pts, &moved_pts)?;
        let t_before = t;
        t = compose(&delta, &t);

        let rmse = rmse_over(source, target, &pairs, &t);
        // The closed-form fit is optimal over this pair set, so the update
        // cannot be worse than the pose the pairs were matched under.
        debug_assert!(rmse <= rmse_over(source, target, &pairs, &t_before) + 1e-9);

        let converged = rmse < 1e-12
            || prev_rmse.is_some_and(|p| (p - rmse).abs() / p < params.convergence_tol);
        prev_rmse = Some(rmse);
        if converged {
            return Ok(IcpResult {
                transform: t,
                rmse: Some(rmse),
                iterations: iteration,
                converged: true,
                termination: IcpTermination::Converged,
                pairs,
            });
        }
    }

    Ok(IcpResult {
        transform: t,
        rmse: prev_rmse,
        iterations: params.max_iterations,
        converged: false,
        termination: IcpTermination::MaxIterations,
        pairs,
    })
}
