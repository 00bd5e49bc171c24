//! Stage orchestration: the five registration configurations and the
//! machine-readable registration report.
//!
//! A run denoises both clouds, downsamples working copies, executes the
//! configured stage sequence (coarse feature alignment, distribution
//! refinement, point refinement), and evaluates every stage's cumulative
//! pose against the denoised full-resolution clouds. Soft stage failures
//! (no coarse consensus, empty refinement grid, lost overlap) are recorded
//! as report flags and the run continues from the last good pose.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coarse_align::{match_descriptors, ransac_estimate, RansacParams};
use crate::error::{Error, Result};
use crate::evaluate::{compute_metrics, Metrics, DEFAULT_METRIC_THRESHOLD};
use crate::fpfh::{compute_fpfh, FpfhParams};
use crate::geom::PointCloud;
use crate::icp::{self, IcpParams, IcpTermination};
use crate::io::load_cloud;
use crate::iss::{detect_keypoints, IssParams};
use crate::ndt::{self, NdtParams};
use crate::preprocess::{
    estimate_normals, remove_statistical_outliers, voxel_downsample, PreprocessParams,
};
use crate::se3::{compose, invert, RigidTransform};

/// The five stage sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineKind {
    /// Coarse feature alignment only.
    #[serde(rename = "fpfh")]
    Fpfh,
    /// Coarse alignment then distribution refinement.
    #[serde(rename = "fpfh+ndt")]
    FpfhNdt,
    /// Coarse alignment then point refinement.
    #[serde(rename = "fpfh+icp")]
    FpfhIcp,
    /// Both refinements from an identity initial guess (no coarse stage).
    #[serde(rename = "ndt+icp")]
    NdtIcp,
    /// The full three-stage sequence.
    #[serde(rename = "fpfh+ndt+icp")]
    FpfhNdtIcp,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 5] = [
        PipelineKind::Fpfh,
        PipelineKind::FpfhNdt,
        PipelineKind::FpfhIcp,
        PipelineKind::NdtIcp,
        PipelineKind::FpfhNdtIcp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PipelineKind::Fpfh => "fpfh",
            PipelineKind::FpfhNdt => "fpfh+ndt",
            PipelineKind::FpfhIcp => "fpfh+icp",
            PipelineKind::NdtIcp => "ndt+icp",
            PipelineKind::FpfhNdtIcp => "fpfh+ndt+icp",
        }
    }

    fn has_fpfh(&self) -> bool {
        !matches!(self, PipelineKind::NdtIcp)
    }

    fn has_ndt(&self) -> bool {
        matches!(
            self,
            PipelineKind::FpfhNdt | PipelineKind::NdtIcp | PipelineKind::FpfhNdtIcp
        )
    }

    fn has_icp(&self) -> bool {
        matches!(
            self,
            PipelineKind::FpfhIcp | PipelineKind::NdtIcp | PipelineKind::FpfhNdtIcp
        )
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Param(format!(
                    "unknown configuration {s:?}; expected one of fpfh, fpfh+ndt, fpfh+icp, ndt+icp, fpfh+ndt+icp"
                ))
            })
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub configuration: PipelineKind,
    pub preprocess: PreprocessParams,
    pub iss: IssParams,
    pub fpfh: FpfhParams,
    pub ransac: RansacParams,
    pub ndt: NdtParams,
    pub icp: IcpParams,
    /// Metric inlier distance threshold in meters.
    pub metric_threshold: f64,
    /// Seed for the stochastic coarse stage (echoed into `ransac.seed`
    /// when that is not set explicitly).
    pub seed: u64,
}

impl PipelineConfig {
    /// Defaults for a stage sequence, everything derived from the default
    /// preprocessing resolution.
    pub fn with_kind(configuration: PipelineKind) -> Self {
        let preprocess = PreprocessParams::default();
        let v = preprocess.voxel_size;
        PipelineConfig {
            configuration,
            preprocess,
            iss: IssParams::for_resolution(v),
            fpfh: FpfhParams::for_resolution(v),
            ransac: RansacParams::for_resolution(v),
            ndt: NdtParams::for_resolution(v),
            icp: IcpParams::for_resolution(v),
            metric_threshold: DEFAULT_METRIC_THRESHOLD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.iss.validate()?;
        self.fpfh.validate()?;
        self.ransac.validate()?;
        self.ndt.validate()?;
        self.icp.validate()?;
        if !(self.metric_threshold.is_finite() && self.metric_threshold > 0.0) {
            return Err(Error::Param(format!(
                "metric_threshold must be > 0, got {}",
                self.metric_threshold
            )));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::with_kind(PipelineKind::FpfhNdtIcp)
    }
}

/// Partial configuration as read from a JSON config file: every field
/// optional, unknown fields rejected. Resolved against defaults derived
/// from the (possibly overridden) preprocessing voxel size.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub configuration: Option<PipelineKind>,
    #[serde(default)]
    pub preprocess: PartialPreprocess,
    #[serde(default)]
    pub iss: PartialIss,
    #[serde(default)]
    pub fpfh: PartialFpfh,
    #[serde(default)]
    pub ransac: PartialRansac,
    #[serde(default)]
    pub ndt: PartialNdt,
    #[serde(default)]
    pub icp: PartialIcp,
    pub metric_threshold: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialPreprocess {
    pub voxel_size: Option<f64>,
    pub sor_k: Option<usize>,
    pub sor_std_mult: Option<f64>,
    pub normal_k: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialIss {
    pub r_salient: Option<f64>,
    pub d_voxel: Option<f64>,
    pub lambda_threshold: Option<f64>,
    pub gamma21: Option<f64>,
    pub gamma32: Option<f64>,
    pub min_neighbors: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialFpfh {
    pub radius: Option<f64>,
    pub bins_per_feature: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialRansac {
    pub max_iterations: Option<usize>,
    pub inlier_threshold: Option<f64>,
    pub sample_size: Option<usize>,
    pub min_inlier_count: Option<usize>,
    pub edge_similarity: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialNdt {
    pub voxel_size: Option<f64>,
    pub min_points: Option<usize>,
    pub max_iterations: Option<usize>,
    pub step_init: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub eps_rel: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialIcp {
    pub max_iterations: Option<usize>,
    pub max_correspondence_dist: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub min_correspondences: Option<usize>,
}

macro_rules! take {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl PartialConfig {
    /// Parse a partial configuration from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Param(format!("bad config: {e}")))
    }

    /// Fill the gaps: defaults are derived from the preprocessing voxel
    /// size (overridden or default), the coarse-stage seed falls back to
    /// the top-level seed, and explicit values win over everything.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let kind = self.configuration.unwrap_or(PipelineKind::FpfhNdtIcp);
        let mut config = PipelineConfig::with_kind(kind);
        if let Some(v) = self.preprocess.voxel_size {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Param(format!(
                    "preprocess voxel_size must be > 0, got {v}"
                )));
            }
            config.preprocess.voxel_size = v;
            config.iss = IssParams::for_resolution(v);
            config.fpfh = FpfhParams::for_resolution(v);
            config.ransac = RansacParams::for_resolution(v);
            config.ndt = NdtParams::for_resolution(v);
            config.icp = IcpParams::for_resolution(v);
        }
        take!(config.preprocess.sor_k, self.preprocess.sor_k);
        take!(config.preprocess.sor_std_mult, self.preprocess.sor_std_mult);
        take!(config.preprocess.normal_k, self.preprocess.normal_k);

        take!(config.iss.r_salient, self.iss.r_salient);
        take!(config.iss.d_voxel, self.iss.d_voxel);
        take!(config.iss.lambda_threshold, self.iss.lambda_threshold);
        take!(config.iss.gamma21, self.iss.gamma21);
        take!(config.iss.gamma32, self.iss.gamma32);
        take!(config.iss.min_neighbors, self.iss.min_neighbors);

        take!(config.fpfh.radius, self.fpfh.radius);
        take!(config.fpfh.bins_per_feature, self.fpfh.bins_per_feature);

        take!(config.ransac.max_iterations, self.ransac.max_iterations);
        take!(config.ransac.inlier_threshold, self.ransac.inlier_threshold);
        take!(config.ransac.sample_size, self.ransac.sample_size);
        take!(config.ransac.min_inlier_count, self.ransac.min_inlier_count);
        take!(config.ransac.edge_similarity, self.ransac.edge_similarity);

        take!(config.ndt.voxel_size, self.ndt.voxel_size);
        take!(config.ndt.min_points, self.ndt.min_points);
        take!(config.ndt.max_iterations, self.ndt.max_iterations);
        take!(config.ndt.step_init, self.ndt.step_init);
        take!(config.ndt.convergence_tol, self.ndt.convergence_tol);
        take!(config.ndt.eps_rel, self.ndt.eps_rel);

        take!(config.icp.max_iterations, self.icp.max_iterations);
        take!(
            config.icp.max_correspondence_dist,
            self.icp.max_correspondence_dist
        );
        take!(config.icp.convergence_tol, self.icp.convergence_tol);
        take!(config.icp.min_correspondences, self.icp.min_correspondences);

        take!(config.metric_threshold, self.metric_threshold);
        take!(config.seed, self.seed);
        config.ransac.seed = self.ransac.seed.unwrap_or(config.seed);
        config.validate()?;
        Ok(config)
    }
}

/// How a stage ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    /// Produced a usable pose update (possibly unconverged).
    Ok,
    /// Soft failure; the identity update was substituted.
    Fallback,
    /// Could not run at all; the previous pose carries through.
    Skipped,
}

/// One executed (or skipped) stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// Stage name: "fpfh", "ndt", or "icp".
    pub name: String,
    pub status: StageStatus,
    /// Convergence flag for iterative refinement stages; absent for the
    /// coarse stage.
    pub converged: Option<bool>,
    /// Iterations used by iterative refinement stages.
    pub iterations: Option<usize>,
    /// This stage's pose update, row-major 4×4.
    pub transform: [f64; 16],
    /// Pose after this stage (composition of all updates so far),
    /// row-major 4×4.
    pub cumulative: [f64; 16],
    /// Wall-clock time of the stage in milliseconds.
    pub wall_ms: f64,
    /// Quality of the cumulative pose on the denoised full-resolution
    /// clouds.
    pub metrics: Metrics,
}

/// Cloud and feature cardinalities along the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub source_points: usize,
    pub target_points: usize,
    pub source_denoised: usize,
    pub target_denoised: usize,
    pub source_downsampled: usize,
    pub target_downsampled: usize,
    pub source_keypoints: Option<usize>,
    pub target_keypoints: Option<usize>,
    pub correspondences: Option<usize>,
    pub ransac_inliers: Option<usize>,
}

/// Complete machine-readable record of one registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// Report format version.
    pub schema: u32,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub counts: ReportCounts,
    /// Soft-failure notices; an empty list means a clean run.
    pub flags: Vec<String>,
    pub stages: Vec<StageReport>,
    /// Final pose mapping target-frame points into the source frame,
    /// row-major 4×4.
    pub final_transform: [f64; 16],
    /// Quality of the final pose on the denoised full-resolution clouds.
    pub final_metrics: Metrics,
    pub total_wall_ms: f64,
}

/// Report format version written by this build.
pub const REPORT_SCHEMA: u32 = 1;

/// Run a configured registration on clouds loaded from disk.
pub fn run(
    source_path: &Path,
    target_path: &Path,
    config: &PipelineConfig,
) -> Result<RegistrationReport> {
    let source = load_cloud(source_path)?;
    let target = load_cloud(target_path)?;
    run_on_clouds(&source, &target, config)
}

/// Run a configured registration on in-memory clouds.
pub fn run_on_clouds(
    source: &PointCloud,
    target: &PointCloud,
    config: &PipelineConfig,
) -> Result<RegistrationReport> {
    config.validate()?;
    let started = Instant::now();
    let mut flags: Vec<String> = Vec::new();

    // Denoise both clouds; these full-resolution survivors are what all
    // metrics are evaluated against.
    let (source_denoised, _) = remove_statistical_outliers(
        source,
        config.preprocess.sor_k,
        config.preprocess.sor_std_mult,
    )?;
    let (target_denoised, _) = remove_statistical_outliers(
        target,
        config.preprocess.sor_k,
        config.preprocess.sor_std_mult,
    )?;
    if source_denoised.is_empty() || target_denoised.is_empty() {
        return Err(Error::EmptyInput("denoising removed every point"));
    }

    // Downsampled working copies drive the actual stages.
    let source_work = voxel_downsample(&source_denoised, config.preprocess.voxel_size)?;
    let target_work = voxel_downsample(&target_denoised, config.preprocess.voxel_size)?;

    let mut counts = ReportCounts {
        source_points: source.len(),
        target_points: target.len(),
        source_denoised: source_denoised.len(),
        target_denoised: target_denoised.len(),
        source_downsampled: source_work.len(),
        target_downsampled: target_work.len(),
        source_keypoints: None,
        target_keypoints: None,
        correspondences: None,
        ransac_inliers: None,
    };

    let mut stages: Vec<StageReport> = Vec::new();
    let mut cumulative = RigidTransform::identity();
    let kind = config.configuration;

    let push_stage = |stages: &mut Vec<StageReport>,
                      name: &str,
                      status: StageStatus,
                      converged: Option<bool>,
                      iterations: Option<usize>,
                      before: &RigidTransform,
                      after: &RigidTransform,
                      stage_start: Instant|
     -> Result<()> {
        let increment = compose(after, &invert(before));
        let metrics = compute_metrics(
            &source_denoised,
            &target_denoised,
            after,
            config.metric_threshold,
        )?;
        stages.push(StageReport {
            name: name.to_string(),
            status,
            converged,
            iterations,
            transform: increment.to_row_major(),
            cumulative: after.to_row_major(),
            wall_ms: stage_start.elapsed().as_secs_f64() * 1000.0,
            metrics,
        });
        Ok(())
    };

    if kind.has_fpfh() {
        let stage_start = Instant::now();
        let before = cumulative;
        let mut status = StageStatus::Ok;

        // Normals oriented toward the cloud's own interior midpoint, which
        // travels with the cloud under rigid motion, so both clouds get
        // consistently oriented normals.
        let (lo, hi) = source_work
            .bounding_box()
            .expect("non-empty after downsample");
        let src_center = nalgebra::center(&lo, &hi);
        let src = estimate_normals(&source_work, config.preprocess.normal_k, Some(src_center))?;
        let (lo, hi) = target_work
            .bounding_box()
            .expect("non-empty after downsample");
        let tgt_center = nalgebra::center(&lo, &hi);
        let tgt = estimate_normals(&target_work, config.preprocess.normal_k, Some(tgt_center))?;

        let src_keypoints = detect_keypoints(&src, &config.iss)?;
        let tgt_keypoints = detect_keypoints(&tgt, &config.iss)?;
        counts.source_keypoints = Some(src_keypoints.len());
        counts.target_keypoints = Some(tgt_keypoints.len());

        if src_keypoints.is_empty() || tgt_keypoints.is_empty() {
            flags.push(
                "coarse stage found no keypoints; continuing from the identity pose".to_string(),
            );
            status = StageStatus::Fallback;
        } else {
            let src_idx: Vec<usize> = src_keypoints.iter().map(|k| k.index).collect();
            let tgt_idx: Vec<usize> = tgt_keypoints.iter().map(|k| k.index).collect();
            let src_desc = compute_fpfh(&src, &src_idx, &config.fpfh)?;
            let tgt_desc = compute_fpfh(&tgt, &tgt_idx, &config.fpfh)?;
            let matches = match_descriptors(&src_desc, &tgt_desc)?;
            counts.correspondences = Some(matches.len());
            if matches.is_empty() {
                flags.push(
                    "descriptor matching produced no mutual pairs; continuing from the identity pose"
                        .to_string(),
                );
                status = StageStatus::Fallback;
            } else {
                let src_pts: Vec<_> = src_idx.iter().map(|&i| src.point(i)).collect();
                let tgt_pts: Vec<_> = tgt_idx.iter().map(|&i| tgt.point(i)).collect();
                let mut params = config.ransac;
                params.seed = config.ransac.seed;
                match ransac_estimate(&src_pts, &tgt_pts, &matches, &params) {
                    Ok((t, inliers)) => {
                        counts.ransac_inliers = Some(inliers.len());
                        cumulative = t;
                    }
                    Err(Error::NoConsensus {
                        best_inliers,
                        required,
                    }) => {
                        flags.push(format!(
                            "coarse alignment found no consensus ({best_inliers} of {required} required inliers); continuing from the identity pose"
                        ));
                        counts.ransac_inliers = Some(best_inliers);
                        status = StageStatus::Fallback;
                    }
                    Err(Error::DegenerateGeometry(what)) => {
                        flags.push(format!(
                            "coarse alignment degenerate ({what}); continuing from the identity pose"
                        ));
                        status = StageStatus::Fallback;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        push_stage(
            &mut stages,
            "fpfh",
            status,
            None,
            None,
            &before,
            &cumulative,
            stage_start,
        )?;
    }

    if kind.has_ndt() {
        let stage_start = Instant::now();
        let before = cumulative;
        match ndt::build_grid(&source_work, &config.ndt) {
            Ok(grid) => {
                let result = ndt::refine(&grid, &target_work, &cumulative, &config.ndt)?;
                cumulative = result.transform;
                push_stage(
                    &mut stages,
                    "ndt",
                    StageStatus::Ok,
                    Some(result.converged),
                    Some(result.iterations),
                    &before,
                    &cumulative,
                    stage_start,
                )?;
            }
            Err(Error::GridEmpty) => {
                flags.push(
                    "distribution grid had no sufficiently populated voxel; refinement skipped"
                        .to_string(),
                );
                push_stage(
                    &mut stages,
                    "ndt",
                    StageStatus::Skipped,
                    None,
                    None,
                    &before,
                    &cumulative,
                    stage_start,
                )?;
            }
            Err(e) => return Err(e),
        }
    }

    if kind.has_icp() {
        let stage_start = Instant::now();
        let before = cumulative;
        match icp::refine(&source_work, &target_work, &cumulative, &config.icp) {
            Ok(result) => {
                if result.termination == IcpTermination::InsufficientOverlap {
                    flags.push(format!(
                        "point refinement lost overlap after {} iterations ({} pairs under the minimum {})",
                        result.iterations,
                        result.pairs.len(),
                        config.icp.min_correspondences
                    ));
                }
                cumulative = result.transform;
                push_stage(
                    &mut stages,
                    "icp",
                    StageStatus::Ok,
                    Some(result.converged),
                    Some(result.iterations),
                    &before,
                    &cumulative,
                    stage_start,
                )?;
            }
            Err(Error::DegenerateGeometry(what)) => {
                flags.push(format!(
                    "point refinement hit degenerate geometry ({what}); stage skipped"
                ));
                push_stage(
                    &mut stages,
                    "icp",
                    StageStatus::Skipped,
                    None,
                    None,
                    &before,
                    &cumulative,
                    stage_start,
                )?;
            }
            Err(e) => return Err(e),
        }
    }

    let final_metrics = compute_metrics(
        &source_denoised,
        &target_denoised,
        &cumulative,
        config.metric_threshold,
    )?;
    Ok(RegistrationReport {
        schema: REPORT_SCHEMA,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        counts,
        flags,
        stages,
        final_transform: cumulative.to_row_major(),
        final_metrics,
        total_wall_ms: started.elapsed().as_secs_f64() * 1000.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::se3;
    use crate::synthgen::{generate_scene, make_pair, pose_error, DegradationParams, SceneParams};
    use crate::Vec3;

    fn test_scene(seed: u64) -> PointCloud {
        generate_scene(&SceneParams {
            tunnel_length: 6.0,
            radius: 1.8,
            roughness: 0.06,
            density: 28.0,
            junction_count: 1,
            seed,
        })
        .unwrap()
    }

    fn zero_timings(value: &mut serde_json::Value) {
        value["total_wall_ms"] = 0.0.into();
        for stage in value["stages"].as_array_mut().unwrap() {
            stage["wall_ms"] = 0.0.into();
        }
    }

    #[test]
    fn configuration_names_round_trip() {
        for kind in PipelineKind::ALL {
            assert_eq!(kind.name().parse::<PipelineKind>().unwrap(), kind);
            assert_eq!(kind.to_string(), kind.name());
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
            assert_eq!(serde_json::from_str::<PipelineKind>(&json).unwrap(), kind);
        }
        assert!("fpfh+ransac".parse::<PipelineKind>().is_err());
    }

    #[test]
    fn stage_sequences_match_configuration() {
        let expected: [(&str, &[&str]); 5] = [
            ("fpfh", &["fpfh"]),
            ("fpfh+ndt", &["fpfh", "ndt"]),
            ("fpfh+icp", &["fpfh", "icp"]),
            ("ndt+icp", &["ndt", "icp"]),
            ("fpfh+ndt+icp", &["fpfh", "ndt", "icp"]),
        ];
        let scene = test_scene(2);
        for (name, stage_names) in expected {
            let config = PipelineConfig::with_kind(name.parse().unwrap());
            let report = run_on_clouds(&scene, &scene, &config).unwrap();
            let got: Vec<&str> = report.stages.iter().map(|s| s.name.as_str()).collect();
            assert_eq!(got, stage_names, "configuration {name}");
        }
    }

    #[test]
    fn identity_pair_scores_near_perfect_metrics() {
        let scene = test_scene(5);
        let config = PipelineConfig::default();
        let report = run_on_clouds(&scene, &scene, &config).unwrap();
        assert_eq!(report.schema, REPORT_SCHEMA);
        assert!(
            report.final_metrics.inlier_fraction > 0.99,
            "{:?}",
            report.final_metrics
        );
        assert!(report.final_metrics.inlier_rmse.unwrap() < 0.05);
        let (rot_err, trans_err) = pose_error(
            &RigidTransform::from_row_major(&report.final_transform).unwrap(),
            &RigidTransform::identity(),
        );
        assert!(rot_err < 1.0, "rotation error {rot_err}°");
        assert!(trans_err < 0.1, "translation error {trans_err}");
    }

    #[test]
    fn cumulative_transforms_chain_across_stages() {
        let scene = test_scene(6);
        let truth = se3::compose(
            &RigidTransform::translation_of(Vec3::new(0.4, -0.2, 0.1)),
            &RigidTransform::from_axis_angle(Vec3::new(0.1, 0.3, 1.0), 0.15).unwrap(),
        );
        let (source, target, _) = make_pair(&scene, &truth, &DegradationParams::none(), 3).unwrap();
        let config = PipelineConfig::default();
        let report = run_on_clouds(&source, &target, &config).unwrap();

        let mut running = RigidTransform::identity();
        for stage in &report.stages {
            let increment = RigidTransform::from_row_major(&stage.transform).unwrap();
            running = compose(&increment, &running);
            let gap = running
                .to_row_major()
                .iter()
                .zip(stage.cumulative.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(gap < 1e-9, "stage {} chain gap {gap}", stage.name);
        }
        assert_eq!(
            report.stages.last().unwrap().cumulative,
            report.final_transform
        );
    }

    #[test]
    fn reports_are_reproducible_modulo_timing() {
        let scene = test_scene(8);
        let truth = RigidTransform::translation_of(Vec3::new(0.3, 0.2, 0.0));
        let degradation = DegradationParams {
            noise_sigma: 0.01,
            dust_fraction: 0.05,
            dropout_fraction: 0.05,
            overlap_fraction: 0.9,
        };
        let (source, target, _) = make_pair(&scene, &truth, &degradation, 12).unwrap();
        let config = PipelineConfig {
            seed: 7,
            ..PipelineConfig::default()
        };

        let a = run_on_clouds(&source, &target, &config).unwrap();
        let b = run_on_clouds(&source, &target, &config).unwrap();
        let mut ja = serde_json::to_value(&a).unwrap();
        let mut jb = serde_json::to_value(&b).unwrap();
        zero_timings(&mut ja);
        zero_timings(&mut jb);
        assert_eq!(ja, jb);
    }

    #[test]
    fn featureless_clouds_fall_back_to_identity_with_flags() {
        // A flat plane has no salient structure: the coarse stage must
        // flag the fallback and leave the pose at identity.
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let plane = PointCloud::new(pts).unwrap();
        let mut config = PipelineConfig::with_kind(PipelineKind::Fpfh);
        // Guard the saliency gate against eigen-solver roundoff on the
        // exactly planar input, as a strict zero threshold admits edge
        // points whose smallest eigenvalue is computed as ~1e-17.
        config.iss.lambda_threshold = 1e-9;
        let report = run_on_clouds(&plane, &plane, &config).unwrap();
        assert!(!report.flags.is_empty());
        assert_eq!(report.stages[0].status, StageStatus::Fallback);
        assert_eq!(
            report.final_transform,
            RigidTransform::identity().to_row_major(),
            "fallback must leave the identity pose"
        );
        assert_eq!(report.counts.source_keypoints, Some(0));
    }

    #[test]
    fn partial_config_resolution_and_seed_fallback() {
        // Empty object: all defaults.
        let config = PartialConfig::from_json("{}").unwrap().resolve().unwrap();
        assert_eq!(config, PipelineConfig::default());

        // Voxel size rederives every scaled default; explicit values win.
        let text = r#"{
            "configuration": "ndt+icp",
            "preprocess": {"voxel_size": 0.2},
            "ransac": {"max_iterations": 512},
            "seed": 9
        }"#;
        let config = PartialConfig::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(config.configuration, PipelineKind::NdtIcp);
        assert_eq!(config.preprocess.voxel_size, 0.2);
        assert_eq!(config.iss.r_salient, 1.2000000000000002);
        assert_eq!(config.fpfh.radius, 2.0);
        assert_eq!(config.ransac.inlier_threshold, 0.6000000000000001);
        assert_eq!(config.ndt.voxel_size, 0.8);
        assert_eq!(config.icp.max_correspondence_dist, 0.4);
        assert_eq!(config.ransac.max_iterations, 512);
        assert_eq!(config.seed, 9);
        assert_eq!(
            config.ransac.seed, 9,
            "coarse seed falls back to the top-level seed"
        );

        // Explicit coarse seed beats the fallback.
        let text = r#"{"ransac": {"seed": 3}, "seed": 9}"#;
        let config = PartialConfig::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(config.ransac.seed, 3);

        // Unknown fields are rejected.
        assert!(PartialConfig::from_json(r#"{"vexel_size": 0.1}"#).is_err());
        assert!(PartialConfig::from_json(r#"{"preprocess": {"voxelsize": 0.1}}"#).is_err());
        // Out-of-range values are rejected at resolution.
        assert!(
            PartialConfig::from_json(r#"{"preprocess": {"voxel_size": -1.0}}"#)
                .unwrap()
                .resolve()
                .is_err()
        );
    }
}
