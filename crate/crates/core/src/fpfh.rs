//! Fast Point Feature Histogram descriptors.
//!
//! For a point pair (p_i, n_i), (p_j, n_j) a Darboux frame is anchored at
//! p_i: u = n_i, v = normalize((p_j − p_i) × u), w = u × v. Three invariant
//! angle features describe the pair: α = v·n_j, φ = u·(p_j − p_i)/‖p_j −
//! p_i‖ (both raw cosines in [−1, 1]) and θ = atan2(w·n_j, u·n_j) in
//! (−π, π]. A point's SPFH bins these features over its radius neighbors
//! (percent-normalized per feature), and the FPFH blends neighborhood
//! SPFHs:
//!
//! FPFH(p_i) = SPFH(p_i) + (1/k)·Σ_k (1/d(p_i, p_k))·SPFH(p_k)
//!
//! with k the neighbor count. The blended descriptor is deliberately NOT
//! renormalized. All three features are rigid-motion invariants, so the
//! descriptor is too.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};
use crate::kdtree::{build_index, KdIndex};

/// Descriptor parameters, shared by source and target clouds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpfhParams {
    /// Neighborhood radius in meters (> 0); should exceed the keypoint
    /// detector's saliency radius so descriptors capture context.
    pub radius: f64,
    /// Histogram resolution per angle feature (≥ 2); the descriptor length
    /// is three times this.
    pub bins_per_feature: usize,
}

impl FpfhParams {
    /// Default radius scaled to a cloud resolution (10×).
    pub fn for_resolution(voxel_size: f64) -> Self {
        FpfhParams {
            radius: 10.0 * voxel_size,
            bins_per_feature: 11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Param(format!(
                "fpfh radius must be > 0, got {}",
                self.radius
            )));
        }
        if self.bins_per_feature < 2 {
            return Err(Error::Param("bins_per_feature must be ≥ 2".to_string()));
        }
        Ok(())
    }
}

impl Default for FpfhParams {
    fn default() -> Self {
        FpfhParams::for_resolution(0.1)
    }
}

/// Simplified Point Feature Histogram: three concatenated per-feature
/// histograms (α, φ, θ), each normalized to percentages summing to 100, or
/// all-zero when the point has no usable neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpfhHistogram {
    pub values: Vec<f64>,
}

/// FPFH descriptor attached to the keypoint (cloud index) it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct FpfhDescriptor {
    pub keypoint_index: usize,
    pub values: Vec<f64>,
}

/// Darboux-frame angle features of an ordered point pair. Returns `None`
/// for degenerate pairs: coincident points (‖p_j − p_i‖ < 1e-12) or a
/// displacement parallel to n_i (‖(p_j − p_i) × n_i‖ < 1e-9), where the
/// frame is undefined.
pub fn darboux_angles(
    p_i: &Point3,
    n_i: &Vec3,
    p_j: &Point3,
    n_j: &Vec3,
) -> Option<(f64, f64, f64)> {
    let d = p_j - p_i;
    let dist = d.norm();
    if dist < 1e-12 {
        return None;
    }
    let u = *n_i;
    let v_raw = d.cross(&u);
    let v_norm = v_raw.norm();
    if v_norm < 1e-9 {
        return None;
    }
    let v = v_raw / v_norm;
    let w = u.cross(&v);
    let alpha = v.dot(n_j);
    let phi = u.dot(&d) / dist;
    let theta = w.dot(n_j).atan2(u.dot(n_j));
    Some((alpha, phi, theta))
}

/// Uniform binning of `x` over `[lo, hi]`, clamped to the valid bin range.
#[inline]
fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let raw = ((x - lo) / (hi - lo) * bins as f64).floor();
    (raw.max(0.0) as usize).min(bins - 1)
}

/// SPFH of one point over its radius neighborhood, neighbors iterated in
/// ascending index order (self and degenerate pairs skipped).
fn spfh_at(
    cloud: &PointCloud,
    index: &KdIndex,
    center: usize,
    params: &FpfhParams,
) -> SpfhHistogram {
    let bins = params.bins_per_feature;
    let mut values = vec![0.0; 3 * bins];
    let normals = cloud.normals().expect("spfh requires normals");
    let p_i = cloud.point(center);
    let n_i = normals[center];

    let mut hits: Vec<usize> = index
        .radius_search(&p_i, params.radius)
        .into_iter()
        .map(|(j, _)| j)
        .filter(|&j| j != center)
        .collect();
    hits.sort_unstable();

    let mut used = 0usize;
    for j in hits {
        let Some((alpha, phi, theta)) = darboux_angles(&p_i, &n_i, &cloud.point(j), &normals[j])
        else {
            continue;
        };
        values[bin_of(alpha, -1.0, 1.0, bins)] += 1.0;
        values[bins + bin_of(phi, -1.0, 1.0, bins)] += 1.0;
        values[2 * bins + bin_of(theta, -std::f64::consts::PI, std::f64::consts::PI, bins)] += 1.0;
        used += 1;
    }
    if used > 0 {
        // Each feature block counts exactly `used` pairs; normalize each to
        // percentages independently.
        for block in 0..3 {
            let sum: f64 = values[block * bins..(block + 1) * bins].iter().sum();
            for v in &mut values[block * bins..(block + 1) * bins] {
                *v *= 100.0 / sum;
            }
        }
    }
    SpfhHistogram { values }
}

/// SPFH of a single point (see [`compute_fpfh`] for descriptors at many
/// keypoints, which shares one search index and memoizes neighbor SPFHs).
pub fn compute_spfh(
    cloud: &PointCloud,
    center: usize,
    params: &FpfhParams,
) -> Result<SpfhHistogram> {
    params.validate()?;
    if cloud.normals().is_none() {
        return Err(Error::Param(
            "spfh requires a cloud with normals".to_string(),
        ));
    }
    if center >= cloud.len() {
        return Err(Error::Param(format!(
            "center index {center} out of bounds for cloud of {}",
            cloud.len()
        )));
    }
    let index = build_index(cloud)?;
    Ok(spfh_at(cloud, &index, center, params))
}

/// FPFH descriptors at the given keypoint indices. Neighbor SPFHs are
/// computed over the full cloud (neighbors need not be keypoints) and
/// memoized across keypoints. Output order follows the keypoint list.
pub fn compute_fpfh(
    cloud: &PointCloud,
    keypoints: &[usize],
    params: &FpfhParams,
) -> Result<Vec<FpfhDescriptor>> {
    params.validate()?;
    if cloud.normals().is_none() {
        return Err(Error::Param(
            "fpfh requires a cloud with normals".to_string(),
        ));
    }
    for &k in keypoints {
        if k >= cloud.len() {
            return Err(Error::Param(format!(
                "keypoint index {k} out of bounds for cloud of {}",
                cloud.len()
            )));
        }
    }
    let index = build_index(cloud)?;
    let mut spfh_cache: Vec<Option<SpfhHistogram>> = vec![None; cloud.len()];
    let mut cached_spfh = |i: usize, cloud: &PointCloud| -> SpfhHistogram {
        if spfh_cache[i].is_none() {
            spfh_cache[i] = Some(spfh_at(cloud, &index, i, params));
        }
        spfh_cache[i].clone().unwrap()
    };

    let bins = params.bins_per_feature;
    let mut out = Vec::with_capacity(keypoints.len());
    for &kp in keypoints {
        let p_i = cloud.point(kp);
        // Neighbors in ascending index order; coincident points carry no
        // geometric information and would divide by zero, so skip them.
        let mut neighbors: Vec<(usize, f64)> = index
            .radius_search(&p_i, params.radius)
            .into_iter()
            .filter(|&(j, d)| j != kp && d >= 1e-12)
            .collect();
        neighbors.sort_unstable_by_key(|n| n.0);

        let mut values = cached_spfh(kp, cloud).values;
        if !neighbors.is_empty() {
            let inv_k = 1.0 / neighbors.len() as f64;
            for &(j, d) in &neighbors {
                let neighbor = cached_spfh(j, cloud);
                let w = inv_k / d;
                for (acc, x) in values.iter_mut().zip(neighbor.values.iter()) {
                    *acc += w * x;
                }
            }
        }
        debug_assert_eq!(values.len(), 3 * bins);
        out.push(FpfhDescriptor {
            keypoint_index: kp,
            values,
        });
    }
    Ok(out)
}

/// Text dump of descriptors: one line per keypoint, "index d_0 … d_{3B−1}"
/// with 6 significant digits.
pub fn format_descriptors(descriptors: &[FpfhDescriptor]) -> String {
    let mut out = String::new();
    for d in descriptors {
        out.push_str(&d.keypoint_index.to_string());
        for v in &d.values {
            out.push(' ');
            out.push_str(&format!("{v:.5e}"));
        }
        out.push('\n');
    }
    out
}
