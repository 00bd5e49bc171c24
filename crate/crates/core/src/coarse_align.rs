//! Coarse alignment: descriptor matching and RANSAC rigid-transform
//! estimation between two keypoint sets.
//!
//! The estimated transform maps target-frame keypoints into the source
//! frame, consistent with the rest of the crate.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpfh::FpfhDescriptor;
use crate::geom::Point3;
use crate::se3::RigidTransform;

/// A matched keypoint pair: indices into the source and target keypoint
/// lists plus their descriptor-space Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub distance: f64,
}

/// RANSAC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Number of hypothesis iterations (≥ 1).
    pub max_iterations: usize,
    /// Inlier residual bound in meters (> 0).
    pub inlier_threshold: f64,
    /// Correspondences per minimal sample (exactly 3 for a rigid fit).
    pub sample_size: usize,
    /// Consensus size a model must reach to be accepted (≥ sample_size).
    pub min_inlier_count: usize,
    /// Pairwise edge-length ratio bound in (0, 1): a sample is rejected
    /// when any min(d_src, d_tgt)/max(d_src, d_tgt) falls below this.
    pub edge_similarity: f64,
    /// PRNG seed; same seed and inputs → identical result.
    pub seed: u64,
}

impl RansacParams {
    /// Defaults scaled to a cloud resolution (inlier threshold 3×).
    pub fn for_resolution(voxel_size: f64) -> Self {
        RansacParams {
            max_iterations: 4096,
            inlier_threshold: 3.0 * voxel_size,
            sample_size: 3,
            min_inlier_count: 3,
            edge_similarity: 0.9,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Param("max_iterations must be ≥ 1".to_string()));
        }
        if !(self.inlier_threshold.is_finite() && self.inlier_threshold > 0.0) {
            return Err(Error::Param(format!(
                "inlier_threshold must be > 0, got {}",
                self.inlier_threshold
            )));
        }
        if self.sample_size != 3 {
            return Err(Error::Param(
                "sample_size must be 3 (minimal sample of a rigid fit)".to_string(),
            ));
        }
        if self.min_inlier_count < self.sample_size {
            return Err(Error::Param(
                "min_inlier_count must be ≥ sample_size".to_string(),
            ));
        }
        if !(self.edge_similarity > 0.0 && self.edge_similarity < 1.0) {
            return Err(Error::Param(format!(
                "edge_similarity must be in (0,1), got {}",
                self.edge_similarity
            )));
        }
        Ok(())
    }
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams::for_resolution(0.1)
    }
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mutual nearest-neighbor matching in descriptor space: each target
/// descriptor proposes its Euclidean-nearest source descriptor, and the
/// pair survives only if that source's nearest target is the proposer.
/// Result is sorted by ascending distance (ties by source, then target
/// index).
pub fn match_descriptors(
    source: &[FpfhDescriptor],
    target: &[FpfhDescriptor],
) -> Result<Vec<Correspondence>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput(
            "descriptor matching needs non-empty lists",
        ));
    }
    let dim = source[0].values.len();
    if source
        .iter()
        .chain(target.iter())
        .any(|d| d.values.len() != dim)
    {
        return Err(Error::Param(
            "descriptor lengths differ between lists".to_string(),
        ));
    }

    // Nearest source for each target, ties to the lower source index.
    let nearest_source: Vec<(usize, f64)> = target
        .iter()
        .map(|t| {
            let mut best = (0usize, f64::INFINITY);
            for (s_idx, s) in source.iter().enumerate() {
                let d = descriptor_distance(&s.values, &t.values);
                if d < best.1 {
                    best = (s_idx, d);
                }
            }
            best
        })
        .collect();
    // Nearest target for each source, ties to the lower target index.
    let nearest_target: Vec<usize> = source
        .iter()
        .map(|s| {
            let mut best = (0usize, f64::INFINITY);
            for (t_idx, t) in target.iter().enumerate() {
                let d = descriptor_distance(&s.values, &t.values);
                if d < best.1 {
                    best = (t_idx, d);
                }
            }
            best.0
        })
        .collect();

    let mut pairs: Vec<Correspondence> = nearest_source
        .iter()
        .enumerate()
        .filter(|&(t_idx, &(s_idx, _))| nearest_target[s_idx] == t_idx)
        .map(|(t_idx, &(s_idx, d))| Correspondence {
            source: s_idx,
            target: t_idx,
            distance: d,
        })
        .collect();
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.source.cmp(&b.source))
            .then(a.target.cmp(&b.target))
    });
    Ok(pairs)
}

/// Least-squares rigid fit: the transform T minimizing Σ‖T(target_i) −
/// source_i‖² over SE(3), via SVD of the cross-covariance with determinant
/// correction (reflections excluded).
pub fn kabsch_umeyama(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::Param(format!(
            "point count mismatch: {} source vs {} target",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Param(format!(
            "rigid fit needs ≥ 3 pairs, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let mut mu_s = nalgebra::Vector3::zeros();
    let mut mu_t = nalgebra::Vector3::zeros();
    for (s, t) in source.iter().zip(target.iter()) {
        mu_s += s.coords;
        mu_t += t.coords;
    }
    mu_s /= n;
    mu_t /= n;

    // Cross-covariance M = Σ (s−μ_s)(t−μ_t)ᵀ; R = U·diag(1,1,det(UVᵀ))·Vᵀ
    // maximizes tr(RᵀM), i.e. minimizes the rotated residual.
    let mut m = Matrix3::<f64>::zeros();
    for (s, t) in source.iter().zip(target.iter()) {
        m += (s.coords - mu_s) * (t.coords - mu_t).transpose();
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    // Rank < 2 (collinear or coincident configurations) leaves a rotation
    // degree of freedom undetermined.
    if sv[0] <= 1e-12 || sv[1] <= 1e-9 * sv[0] {
        return Err(Error::DegenerateGeometry(
            "point pairs are collinear or coincident; rotation is underdetermined",
        ));
    }
    let mut u_corr = u;
    if (u * v_t).determinant() < 0.0 {
        // Flip the column of the smallest singular value (nalgebra sorts
        // them descending) to stay in SO(3) at minimal cost.
        for r in 0..3 {
            u_corr[(r, 2)] = -u_corr[(r, 2)];
        }
    }
    let rotation = u_corr * v_t;
    let translation = mu_s - rotation * mu_t;
    RigidTransform::from_parts(rotation, translation)
}

/// RANSAC over correspondences. Returns the refit transform and the indices
/// (into `correspondences`) of its inliers, both fully determined by the
/// inputs and `params.seed`.
pub fn ransac_estimate(
    source_keypoints: &[Point3],
    target_keypoints: &[Point3],
    correspondences: &[Correspondence],
    params: &RansacParams,
) -> Result<(RigidTransform, Vec<usize>)> {
    params.validate()?;
    let n = correspondences.len();
    if n < params.sample_size {
        return Err(Error::Param(format!(
            "ransac needs ≥ {} correspondences, got {n}",
            params.sample_size
        )));
    }
    for c in correspondences {
        if c.source >= source_keypoints.len() || c.target >= target_keypoints.len() {
            return Err(Error::Param(
                "correspondence index out of bounds".to_string(),
            ));
        }
    }

    struct Best {
        transform: RigidTransform,
        inliers: Vec<usize>,
        residual_sum: f64,
    }
    let mut best: Option<Best> = None;

    let score_inliers = |t: &RigidTransform| -> (Vec<usize>, f64) {
        let mut inliers = Vec::new();
        let mut residual_sum = 0.0;
        for (ci, c) in correspondences.iter().enumerate() {
            let mapped = t.transform_point(&target_keypoints[c.target]);
            let r = (mapped - source_keypoints[c.source]).norm();
            if r <= params.inlier_threshold {
                inliers.push(ci);
                residual_sum += r;
            }
        }
        (inliers, residual_sum)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for iteration in 0..params.max_iterations {
        // Independent per-iteration substream: the sample sequence depends
        // only on (seed, iteration).
        rng.set_stream(iteration as u64);
        let mut sample = [0usize; 3];
        for slot in 0..3 {
            loop {
                let pick = rng.random_range(0..n);
                if !sample[..slot].contains(&pick) {
                    sample[slot] = pick;
                    break;
                }
            }
        }

        // Edge-similarity pre-check: corresponding keypoint triangles must
        // have comparable side lengths or the sample cannot be rigid.
        let mut plausible = true;
        'edges: for a in 0..3 {
            for b in (a + 1)..3 {
                let (ca, cb) = (correspondences[sample[a]], correspondences[sample[b]]);
                let d_src = (source_keypoints[ca.source] - source_keypoints[cb.source]).norm();
                let d_tgt = (target_keypoints[ca.target] - target_keypoints[cb.target]).norm();
                let hi = d_src.max(d_tgt);
                let ratio = if hi > 0.0 { d_src.min(d_tgt) / hi } else { 0.0 };
                if ratio < params.edge_similarity {
                    plausible = false;
                    break 'edges;
                }
            }
        }
        if !plausible {
            continue;
        }

        let src: Vec<Point3> = sample
            .iter()
            .map(|&ci| source_keypoints[correspondences[ci].source])
            .collect();
        let tgt: Vec<Point3> = sample
            .iter()
            .map(|&ci| target_keypoints[correspondences[ci].target])
            .collect();
        let Ok(transform) = kabsch_umeyama(&src, &tgt) else {
            continue; // degenerate sample (collinear keypoints)
        };
        let (inliers, residual_sum) = score_inliers(&transform);
        let better = match &best {
            None => true,
            Some(b) => {
                inliers.len() > b.inliers.len()
                    || (inliers.len() == b.inliers.len() && residual_sum < b.residual_sum)
            }
        };
        if better {
            best = Some(Best {
                transform,
                inliers,
                residual_sum,
            });
        }
    }

    let best_count = best.as_ref().map(|b| b.inliers.len()).unwrap_or(0);
    let best = best
        .filter(|b| b.inliers.len() >= params.min_inlier_count)
        .ok_or(Error::NoConsensus {
            best_inliers: best_count,
            required: params.min_inlier_count,
        })?;

    // Refit on the full consensus set, then re-evaluate the inliers under
    // the refit transform so every reported inlier verifiably satisfies the
    // threshold. A degenerate refit (collinear consensus) keeps the sample
    // fit.
    let src: Vec<Point3> = best
        .inliers
        .iter()
        .map(|&ci| source_keypoints[correspondences[ci].source])
        .collect();
    let tgt: Vec<Point3> = best
        .inliers
        .iter()
        .map(|&ci| target_keypoints[correspondences[ci].target])
        .collect();
    let refit = kabsch_umeyama(&src, &tgt).unwrap_or(best.transform);
    let (inliers, _) = score_inliers(&refit);
    Ok((refit, inliers))
}
