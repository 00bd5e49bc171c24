//! Normal Distributions Transform refinement.
//!
//! The source cloud is discretized into a voxel grid; each sufficiently
//! populated voxel stores the Gaussian (μ, Σ) of its points. A pose is
//! scored by the total log-likelihood of the transformed target points
//! under the Gaussian of their single containing voxel (no neighbor
//! blending), and refined by gradient ascent with a backtracking line
//! search.
//!
//! Pose increments are 6-vectors [δt; δω] applied on the right of the
//! current estimate: x(δ) = R·Exp(δω)·p + t + δt.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector6};

use serde::{Deserialize, Serialize};

use crate::eigen::{sym_eigen3, SymMat3};
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};
use crate::se3::{so3_exp, RigidTransform};

/// Grid construction and refinement parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdtParams {
    /// Grid voxel edge length in meters (> 0); voxels are coarser than the
    /// preprocessing resolution (4× by default).
    pub voxel_size: f64,
    /// Minimum points for a voxel to store a Gaussian (≥ 2, default 6).
    pub min_points: usize,
    /// Ascent iteration cap (≥ 1).
    pub max_iterations: usize,
    /// Initial line-search step length, in pose 6-vector norm (> 0).
    pub step_init: f64,
    /// Convergence threshold on the accepted pose-delta norm (> 0).
    pub convergence_tol: f64,
    /// Relative eigenvalue floor for covariance conditioning (in (0, 1)).
    pub eps_rel: f64,
}

impl NdtParams {
    /// Defaults scaled to a preprocessing resolution: grid voxels 4×
    /// coarser.
    pub fn for_resolution(voxel_size: f64) -> Self {
        NdtParams {
            voxel_size: 4.0 * voxel_size,
            min_points: 6,
            max_iterations: 50,
            step_init: 0.1,
            convergence_tol: 1e-4,
            eps_rel: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::Param(format!(
                "ndt voxel_size must be > 0, got {}",
                self.voxel_size
            )));
        }
        if self.min_points < 2 {
            return Err(Error::Param(
                "ndt min_points must be ≥ 2 (sample covariance needs n−1 ≥ 1)".to_string(),
            ));
        }
        if self.max_iterations < 1 {
            return Err(Error::Param("ndt max_iterations must be ≥ 1".to_string()));
        }
        if !(self.step_init.is_finite() && self.step_init > 0.0) {
            return Err(Error::Param(format!(
                "ndt step_init must be > 0, got {}",
                self.step_init
            )));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(Error::Param(format!(
                "ndt convergence_tol must be > 0, got {}",
                self.convergence_tol
            )));
        }
        if !(self.eps_rel > 0.0 && self.eps_rel < 1.0) {
            return Err(Error::Param(format!(
                "ndt eps_rel must be in (0,1), got {}",
                self.eps_rel
            )));
        }
        Ok(())
    }
}

impl Default for NdtParams {
    fn default() -> Self {
        NdtParams::for_resolution(0.1)
    }
}

/// One grid cell's Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct NdtVoxel {
    pub mean: Vec3,
    /// Conditioned covariance (positive definite).
    pub covariance: SymMat3,
    /// Cached inverse of the conditioned covariance.
    pub inv_covariance: SymMat3,
    /// Points that contributed at build time.
    pub count: usize,
    /// Cached log of the density normalizer: −½(3·ln 2π + ln det Σ).
    pub log_norm: f64,
}

impl NdtVoxel {
    /// Build a voxel Gaussian from raw sample moments, conditioning the
    /// covariance: eigenvalues below `eps_rel·λ_max` are clamped up to that
    /// floor; a fully degenerate covariance (λ_max ≈ 0, coincident points)
    /// becomes isotropic with standard deviation `iso_floor`.
    pub fn from_moments(
        mean: Vec3,
        covariance: SymMat3,
        count: usize,
        eps_rel: f64,
        iso_floor: f64,
    ) -> NdtVoxel {
        let (evals, evecs) = sym_eigen3(&covariance);
        let (conditioned, lambdas) = if evals[2] <= 1e-12 {
            let v = iso_floor * iso_floor;
            (SymMat3::new(v, 0.0, 0.0, v, 0.0, v), [v; 3])
        } else {
            let floor = eps_rel * evals[2];
            if evals[0] >= floor {
                // Already well-conditioned; keep the exact sample covariance.
                (covariance, [evals[0], evals[1], evals[2]])
            } else {
                let lambdas = [evals[0].max(floor), evals[1].max(floor), evals[2]];
                let lam = Matrix3::from_diagonal(&Vec3::new(lambdas[0], lambdas[1], lambdas[2]));
                (
                    SymMat3::from_matrix(&(evecs * lam * evecs.transpose())),
                    lambdas,
                )
            }
        };
        // Inverse via the same eigenbasis: Σ⁻¹ = V·diag(1/λ)·Vᵀ.
        let (evals_c, evecs_c) = if conditioned == covariance {
            (lambdas, evecs)
        } else {
            let (e, v) = sym_eigen3(&conditioned);
            ([e[0], e[1], e[2]], v)
        };
        let inv_lam = Matrix3::from_diagonal(&Vec3::new(
            1.0 / evals_c[0],
            1.0 / evals_c[1],
            1.0 / evals_c[2],
        ));
        let inv_covariance = SymMat3::from_matrix(&(evecs_c * inv_lam * evecs_c.transpose()));
        let log_det: f64 = evals_c.iter().map(|l| l.ln()).sum();
        let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + log_det);
        NdtVoxel {
            mean,
            covariance: conditioned,
            inv_covariance,
            count,
            log_norm,
        }
    }

    /// Log of the Gaussian density at `x`.
    pub fn log_density(&self, x: &Point3) -> f64 {
        let q = x.coords - self.mean;
        self.log_norm - 0.5 * q.dot(&(self.inv_covariance.to_matrix() * q))
    }
}

/// Voxelized Gaussian model of a source cloud. Guaranteed non-empty: the
/// only constructor fails with `GridEmpty` otherwise.
#[derive(Debug, Clone)]
pub struct NdtGrid {
    voxel_size: f64,
    voxels: HashMap<(i64, i64, i64), NdtVoxel>,
}

#[inline]
fn voxel_key(p: &Point3, s: f64) -> (i64, i64, i64) {
    (
        (p.z / s).floor() as i64,
        (p.y / s).floor() as i64,
        (p.x / s).floor() as i64,
    )
}

impl NdtGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// The Gaussian of the voxel containing `p`, if that voxel is stored.
    pub fn voxel_containing(&self, p: &Point3) -> Option<&NdtVoxel> {
        self.voxels.get(&voxel_key(p, self.voxel_size))
    }
}

/// Build the Gaussian voxel grid of a source cloud. Voxels with fewer than
/// `min_points` points are dropped; if none survives the grid is an error.
pub fn build_grid(source: &PointCloud, params: &NdtParams) -> Result<NdtGrid> {
    params.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput("ndt grid needs a non-empty source cloud"));
    }
    let mut members: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for i in 0..source.len() {
        members
            .entry(voxel_key(&source.point(i), params.voxel_size))
            .or_default()
            .push(i);
    }
    let iso_floor = params.eps_rel * params.voxel_size;
    let mut voxels = HashMap::new();
    for (key, ids) in members {
        if ids.len() < params.min_points {
            continue;
        }
        let n = ids.len() as f64;
        let mut mean = Vec3::zeros();
        for &i in &ids {
            mean += source.point(i).coords;
        }
        mean /= n;
        let mut scatter = SymMat3::default();
        for &i in &ids {
            scatter.add_outer(&(source.point(i).coords - mean));
        }
        let covariance = scatter.scale(1.0 / (n - 1.0));
        voxels.insert(
            key,
            NdtVoxel::from_moments(mean, covariance, ids.len(), params.eps_rel, iso_floor),
        );
    }
    if voxels.is_empty() {
        return Err(Error::GridEmpty);
    }
    Ok(NdtGrid {
        voxel_size: params.voxel_size,
        voxels,
    })
}

/// Total log-likelihood of the cloud under the grid at pose `t`, plus its
/// analytic gradient with respect to the pose increment [δt; δω] (applied
/// as x = R·Exp(δω)·p + t + δt, evaluated at δ = 0). Points outside every
/// stored voxel contribute zero to both.
pub fn score(grid: &NdtGrid, cloud: &PointCloud, t: &RigidTransform) -> (f64, Vector6<f64>) {
    let mut total = 0.0;
    let mut grad = Vector6::zeros();
    let r_t = t.rotation().transpose();
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let x = t.transform_point(&p);
        let Some(voxel) = grid.voxel_containing(&x) else {
            continue;
        };
        let q = x.coords - voxel.mean;
        let aq = voxel.inv_covariance.to_matrix() * q;
        total += voxel.log_norm - 0.5 * q.dot(&aq);
        // ∂/∂δt of −½qᵀΣ⁻¹q is −Σ⁻¹q; for δω the chain rule through
        // x = R·Exp(δω)p gives −(p × Rᵀ·Σ⁻¹q).
        let back = r_t * aq;
        for a in 0..3 {
            grad[a] -= aq[a];
        }
        let rot = p.coords.cross(&back);
        for a in 0..3 {
            grad[3 + a] -= rot[a];
        }
    }
    (total, grad)
}

/// Score only (used by the line search, which does not need gradients).
fn score_value(grid: &NdtGrid, cloud: &PointCloud, t: &RigidTransform) -> f64 {
    let mut total = 0.0;
    for i in 0..cloud.len() {
        let x = t.transform_point(&cloud.point(i));
        if let Some(voxel) = grid.voxel_containing(&x) {
            let q = x.coords - voxel.mean;
            total += voxel.log_norm - 0.5 * q.dot(&(voxel.inv_covariance.to_matrix() * q));
        }
    }
    total
}

/// Refinement outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdtResult {
    /// Pose mapping target-frame points into the source frame.
    pub transform: RigidTransform,
    /// Accepted ascent iterations.
    pub iterations: usize,
    pub converged: bool,
}

fn apply_increment(t: &RigidTransform, delta: &Vector6<f64>) -> RigidTransform {
    let delta_t = Vec3::new(delta[0], delta[1], delta[2]);
    let omega = Vec3::new(delta[3], delta[4], delta[5]);
    RigidTransform::from_parts_unchecked(t.rotation() * so3_exp(&omega), t.translation() + delta_t)
}

/// Maximize the NDT score from `initial` by gradient ascent with a
/// backtracking line search (step halved up to 10 times until the score is
/// non-decreasing). Converged means: an accepted step's pose delta fell
/// below `convergence_tol`, or the line search exhausted with its last
/// tried step already below the tolerance. A zero gradient (no point in
/// any stored voxel, or an exact stationary point) returns the current
/// pose un-converged.
pub fn refine(
    grid: &NdtGrid,
    target: &PointCloud,
    initial: &RigidTransform,
    params: &NdtParams,
) -> Result<NdtResult> {
    refine_with_trace(grid, target, initial, params).map(|(result, _)| result)
}

/// [`refine`], also returning the score after the initial pose and after
/// each accepted step. The trace is non-decreasing by construction of the
/// line search.
pub fn refine_with_trace(
    grid: &NdtGrid,
    target: &PointCloud,
    initial: &RigidTransform,
    params: &NdtParams,
) -> Result<(NdtResult, Vec<f64>)> {
    params.validate()?;
    let mut t = *initial;
    let mut trace = Vec::with_capacity(params.max_iterations + 1);
    let mut iterations = 0usize;
    let mut converged = false;

    let (mut current_score, mut grad) = score(grid, target, &t);
    trace.push(current_score);

    for _ in 0..params.max_iterations {
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            // Plateau: nothing to ascend (e.g. the cloud is entirely
            // outside the grid's support).
            break;
        }
        let dir = grad / gnorm;
        let mut step = params.step_init;
        let mut accepted = None;
        for _ in 0..=10 {
            let candidate = apply_increment(&t, &(dir * step));
            let s = score_value(grid, target, &candidate);
            if s >= current_score {
                accepted = Some((candidate, s));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((next, s)) => {
                debug_assert!(s >= current_score);
                t = next;
                current_score = s;
                trace.push(s);
                iterations += 1;
                if step < params.convergence_tol {
                    converged = true;
                    break;
                }
                grad = score(grid, target, &t).1;
            }
            None => {
                // Line search exhausted: no improving direction at even the
                // smallest step. That is convergence exactly when the step
                // scale has shrunk below the pose tolerance.
                converged = step < params.convergence_tol;
                break;
            }
        }
    }
    Ok((
        NdtResult {
            transform: t,
            iterations,
            converged,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_blob(n: usize, center: Vec3, sigmas: Vec3, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        center.x + sigmas.x * rng.sample::<f64, _>(normal),
                        center.y + sigmas.y * rng.sample::<f64, _>(normal),
                        center.z + sigmas.z * rng.sample::<f64, _>(normal),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn coincident_points_get_isotropic_floor_covariance() {
        let params = NdtParams {
            voxel_size: 1.0,
            ..NdtParams::default()
        };
        let cloud = PointCloud::new(vec![Point3::new(0.25, 0.5, 0.75); 6]).unwrap();
        let grid = build_grid(&cloud, &params).unwrap();
        assert_eq!(grid.len(), 1);
        let v = grid
            .voxel_containing(&Point3::new(0.25, 0.5, 0.75))
            .unwrap();
        assert_relative_eq!(v.mean.x, 0.25, epsilon = 1e-12);
        let expected = (params.eps_rel * params.voxel_size).powi(2);
        assert_relative_eq!(v.covariance.xx, expected, epsilon = 1e-15);
        assert_relative_eq!(v.covariance.yy, expected, epsilon = 1e-15);
        assert_relative_eq!(v.covariance.zz, expected, epsilon = 1e-15);
        assert_eq!(v.covariance.xy, 0.0);
        assert_eq!(v.count, 6);
    }

    #[test]
    fn voxel_moments_match_sample_statistics_oracle() {
        // All points inside one huge voxel; its Gaussian must carry the
        // exact sample mean and (n−1)-divisor covariance.
        let cloud = gaussian_blob(400, Vec3::new(5.0, 5.0, 5.0), Vec3::new(0.8, 0.5, 0.3), 7);
        let params = NdtParams {
            voxel_size: 100.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();
        assert_eq!(grid.len(), 1);
        let v = grid.voxel_containing(&Point3::new(5.0, 5.0, 5.0)).unwrap();

        let n = cloud.len() as f64;
        let mut mean = Vec3::zeros();
        for i in 0..cloud.len() {
            mean += cloud.point(i).coords;
        }
        mean /= n;
        let mut cov = Matrix3::<f64>::zeros();
        for i in 0..cloud.len() {
            let d = cloud.point(i).coords - mean;
            cov += d * d.transpose();
        }
        cov /= n - 1.0;
        assert!((v.mean - mean).norm() < 1e-9);
        assert!((v.covariance.to_matrix() - cov).norm() < 1e-9);
        // Cached inverse actually inverts.
        let product = v.inv_covariance.to_matrix() * v.covariance.to_matrix();
        assert!((product - Matrix3::identity()).norm() < 1e-6);
    }

    #[test]
    fn underpopulated_voxels_are_dropped() {
        let mut pts = vec![Point3::new(0.5, 0.5, 0.5); 6];
        for i in 0..5 {
            pts.push(Point3::new(10.5 + 0.01 * i as f64, 0.5, 0.5));
        }
        let cloud = PointCloud::new(pts).unwrap();
        let params = NdtParams {
            voxel_size: 1.0,
            min_points: 6,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();
        assert_eq!(grid.len(), 1);
        assert!(grid
            .voxel_containing(&Point3::new(10.5, 0.5, 0.5))
            .is_none());

        let sparse = PointCloud::new(vec![Point3::origin(); 5]).unwrap();
        assert!(matches!(
            build_grid(&sparse, &params),
            Err(Error::GridEmpty)
        ));
    }

    #[test]
    fn log_density_at_mean_of_unit_gaussian_is_known_constant() {
        let v = NdtVoxel::from_moments(
            Vec3::new(1.0, 2.0, 3.0),
            SymMat3::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0),
            6,
            1e-3,
            1e-3,
        );
        let expected = -1.5 * (2.0 * std::f64::consts::PI).ln(); // ≈ −2.7568
        assert_relative_eq!(
            v.log_density(&Point3::new(1.0, 2.0, 3.0)),
            expected,
            epsilon = 1e-12
        );
        assert_relative_eq!(expected, -2.756_815_599_614_018_5, epsilon = 1e-12);
    }

    #[test]
    fn log_density_matches_lu_solver_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let mean = Vec3::new(rng.random(), rng.random(), rng.random());
            // Random SPD covariance via A·Aᵀ + small ridge.
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let spd = a * a.transpose() + Matrix3::identity() * 0.05;
            let v = NdtVoxel::from_moments(mean, SymMat3::from_matrix(&spd), 6, 1e-9, 1e-3);
            let x = Point3::new(
                mean.x + rng.random_range(-2.0..2.0),
                mean.y + rng.random_range(-2.0..2.0),
                mean.z + rng.random_range(-2.0..2.0),
            );

            // Independent route: LU decomposition for both solve and
            // determinant.
            let cov = v.covariance.to_matrix();
            let lu = cov.lu();
            let q = x.coords - mean;
            let solved = lu.solve(&q).unwrap();
            let log_oracle = -0.5
                * (3.0 * (2.0 * std::f64::consts::PI).ln()
                    + lu.determinant().ln()
                    + q.dot(&solved));
            let got = v.log_density(&x);
            assert_relative_eq!(got, log_oracle, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn conditioned_covariances_stay_positive_definite() {
        // A perfectly planar voxel: rank-2 covariance must be floored.
        let mut pts = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            pts.push(Point3::new(
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                0.5,
            ));
        }
        let cloud = PointCloud::new(pts).unwrap();
        let params = NdtParams {
            voxel_size: 1.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();
        let v = grid.voxel_containing(&Point3::new(0.5, 0.5, 0.5)).unwrap();
        let (evals, _) = sym_eigen3(&v.covariance);
        assert!(evals[0] >= params.eps_rel * evals[2] - 1e-12);
        assert!(evals[0] > 0.0);
    }

    #[test]
    fn score_is_zero_outside_grid_support() {
        let cloud = gaussian_blob(100, Vec3::zeros(), Vec3::new(0.3, 0.3, 0.3), 1);
        let params = NdtParams {
            voxel_size: 2.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();
        let far = se3::apply(
            &RigidTransform::translation_of(Vec3::new(500.0, 0.0, 0.0)),
            &cloud,
        );
        let (s, g) = score(&grid, &far, &RigidTransform::identity());
        assert_eq!(s, 0.0);
        assert_eq!(g, Vector6::zeros());
    }

    /// Central finite differences of the score along each pose coordinate.
    fn fd_gradient(grid: &NdtGrid, cloud: &PointCloud, t: &RigidTransform, h: f64) -> Vector6<f64> {
        let mut g = Vector6::zeros();
        for i in 0..6 {
            let mut dp = Vector6::zeros();
            dp[i] = h;
            let plus = score(grid, cloud, &apply_increment(t, &dp)).0;
            dp[i] = -h;
            let minus = score(grid, cloud, &apply_increment(t, &dp)).0;
            g[i] = (plus - minus) / (2.0 * h);
        }
        g
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // Single-voxel grid: no voxel-boundary crossings anywhere near the
        // evaluation region, so the score is smooth and the FD comparison
        // clean.
        let cloud = gaussian_blob(
            300,
            Vec3::new(50.0, 50.0, 50.0),
            Vec3::new(0.6, 0.4, 0.25),
            21,
        );
        let params = NdtParams {
            voxel_size: 1000.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let axis = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) + Vec3::x() * 0.01;
            let t = se3::compose(
                &RigidTransform::translation_of(Vec3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                )),
                &RigidTransform::from_axis_angle(axis, rng.random_range(-0.05..0.05)).unwrap(),
            );
            let (_, analytic) = score(&grid, &cloud, &t);
            let fd = fd_gradient(&grid, &cloud, &t, 1e-6);
            let rel = (analytic - fd).norm() / fd.norm().max(1.0);
            assert!(rel < 1e-4, "gradient mismatch: rel {rel}");
        }
    }

    #[test]
    fn refine_holds_still_when_already_aligned() {
        let cloud = gaussian_blob(2000, Vec3::new(2.0, 2.0, 2.0), Vec3::new(1.5, 1.0, 0.6), 33);
        let params = NdtParams {
            voxel_size: 1.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();
        let (result, trace) =
            refine_with_trace(&grid, &cloud, &RigidTransform::identity(), &params).unwrap();
        assert!(result.converged);
        assert!(result.transform.translation().norm() < 0.1 * params.voxel_size);
        let angle = ((result.transform.rotation().trace() - 1.0) / 2.0)
            .clamp(-1.0, 1.0)
            .acos();
        assert!(angle.to_degrees() < 1.0);
        // Score can only have improved on the initial pose.
        assert!(*trace.last().unwrap() >= trace[0]);
    }

    #[test]
    fn refine_recovers_half_voxel_translation() {
        // A surface cloud displaced along its normal, staying within one
        // voxel layer: the situation NDT refinement is built for. The plane
        // sits at z = 0.75 inside the layer [0, 1); the displaced copy at
        // z = 0.25 shares every voxel column, so the score is smooth along
        // the recovery path. Centered laterally at the origin so the
        // rotation gradient (moment arm about the target-frame origin)
        // stays near zero.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut pts = Vec::new();
        for i in 0..81 {
            for j in 0..81 {
                pts.push(Point3::new(
                    -3.0 + 0.075 * i as f64,
                    -3.0 + 0.075 * j as f64,
                    0.75 + 0.005 * rng.sample::<f64, _>(StandardNormal),
                ));
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let params = NdtParams {
            voxel_size: 1.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();

        let truth = RigidTransform::translation_of(Vec3::new(0.0, 0.0, 0.5));
        let target = se3::apply(&se3::invert(&truth), &cloud);
        let (result, trace) =
            refine_with_trace(&grid, &target, &RigidTransform::identity(), &params).unwrap();
        let err = (result.transform.translation() - truth.translation()).norm();
        assert!(err < 0.1 * params.voxel_size, "translation error {err}");
        for w in trace.windows(2) {
            assert!(w[1] >= w[0], "accepted scores must be non-decreasing");
        }
    }

    #[test]
    fn refine_outside_support_returns_initial_unconverged() {
        let cloud = gaussian_blob(200, Vec3::zeros(), Vec3::new(0.4, 0.4, 0.4), 9);
        let params = NdtParams {
            voxel_size: 1.0,
            ..NdtParams::default()
        };
        let grid = build_grid(&cloud, &params).unwrap();
        let initial = RigidTransform::translation_of(Vec3::new(1000.0, 0.0, 0.0));
        let result = refine(&grid, &cloud, &initial, &params).unwrap();
        assert_eq!(result.iterations, 0);
        assert!(!result.converged);
        assert_eq!(
            result.transform.to_row_major().map(f64::to_bits),
            initial.to_row_major().map(f64::to_bits)
        );
    }

    #[test]
    fn params_validate_ranges() {
        assert!(NdtParams::default().validate().is_ok());
        assert!(NdtParams {
            voxel_size: 0.0,
            ..NdtParams::default()
        }
        .validate()
        .is_err());
        assert!(NdtParams {
            min_points: 1,
            ..NdtParams::default()
        }
        .validate()
        .is_err());
        assert!(NdtParams {
            eps_rel: 1.0,
            ..NdtParams::default()
        }
        .validate()
        .is_err());
        assert!(NdtParams {
            step_init: -0.1,
            ..NdtParams::default()
        }
        .validate()
        .is_err());
    }
}
