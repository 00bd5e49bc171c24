//! `pcreg` — point-cloud registration from the command line.
//!
//! Subcommands: `register` runs a configured registration and writes the
//! report and transform; `eval` scores an existing transform; `synth`
//! generates ground-truthed synthetic tunnel pairs; `bench` runs every
//! configuration over a directory of pairs into a CSV matrix.
//!
//! Exit codes: 0 success, 1 fatal error (including usage errors), 2 for a
//! registration that completed with fallback/overlap flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pcreg::evaluate::compute_metrics;
use pcreg::io::{load_cloud, load_transform, save_cloud, save_transform, PlyFormat};
use pcreg::pipeline::{run_on_clouds, PartialConfig, PipelineConfig, PipelineKind};
use pcreg::se3::{self, RigidTransform};
use pcreg::synthgen::{generate_scene, make_pair, pose_error, DegradationParams, SceneParams};
use pcreg::{PointCloud, Vec3};

#[derive(Parser)]
#[command(
    name = "pcreg",
    version,
    about = "Rigid point-cloud registration: coarse feature alignment with distribution- and point-based refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a target cloud onto a source cloud and write a report.
    Register(RegisterArgs),
    /// Evaluate an existing transform against a cloud pair.
    Eval(EvalArgs),
    /// Generate a ground-truthed synthetic tunnel pair.
    Synth(SynthArgs),
    /// Run every configuration over a directory of pairs into a CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Source (reference map) cloud: .ply or .xyz.
    #[arg(long)]
    source: PathBuf,
    /// Target (to be registered) cloud: .ply or .xyz.
    #[arg(long)]
    target: PathBuf,
    /// JSON configuration file; fields omitted there fall back to defaults.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration: fpfh, fpfh+ndt, fpfh+icp, ndt+icp, fpfh+ndt+icp.
    #[arg(long)]
    preset: Option<String>,
    /// Where to write the JSON registration report.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the recovered 4×4 transform (text, row per line).
    #[arg(long)]
    transform: PathBuf,
    /// Override the run seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Transform file as written by `register` (or hand-authored).
    #[arg(long)]
    transform: PathBuf,
    /// Inlier distance threshold in meters.
    #[arg(long, default_value_t = pcreg::evaluate::DEFAULT_METRIC_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON scene description (scene, degradation, truth, pair_seed).
    #[arg(long = "scene-config")]
    scene_config: PathBuf,
    /// Directory receiving source.ply, target.ply, truth.txt, manifest.json.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of pair subdirectories (source.ply, target.ply,
    /// optional truth.txt each).
    #[arg(long = "pairs-dir")]
    pairs_dir: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("REG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::Register(args) => cmd_register(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

/// Write a file atomically: the content lands under a temporary name in
/// the destination directory and is renamed into place, so readers never
/// observe a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), String> {
    let tmp = sibling_tmp(path);
    fs::write(&tmp, contents).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| format!("cannot move {} into place: {e}", tmp.display()))
}

fn sibling_tmp(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn resolve_config(args: &RegisterArgs) -> Result<PipelineConfig, String> {
    let mut config = if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        PartialConfig::from_json(&text)
            .and_then(|p| p.resolve())
            .map_err(|e| format!("{}: {e}", path.display()))?
    } else if let Some(name) = &args.preset {
        let kind: PipelineKind = name.parse().map_err(|e| format!("{e}"))?;
        PipelineConfig::with_kind(kind)
    } else {
        PipelineConfig::default()
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.ransac.seed = seed;
    }
    Ok(config)
}

fn cmd_register(args: &RegisterArgs) -> Result<u8, String> {
    let config = resolve_config(args)?;
    let source = load_cloud(&args.source).map_err(|e| e.to_string())?;
    let target = load_cloud(&args.target).map_err(|e| e.to_string())?;
    let report = run_on_clouds(&source, &target, &config).map_err(|e| e.to_string())?;

    let mut report_json =
        serde_json::to_string_pretty(&report).map_err(|e| format!("report serialization: {e}"))?;
    report_json.push('\n');
    write_atomic(&args.out, report_json.as_bytes())?;

    let final_transform = RigidTransform::from_row_major(&report.final_transform)
        .map_err(|e| format!("final transform invalid: {e}"))?;
    let tmp = sibling_tmp(&args.transform);
    save_transform(&final_transform, &tmp).map_err(|e| e.to_string())?;
    fs::rename(&tmp, &args.transform)
        .map_err(|e| format!("cannot move {} into place: {e}", tmp.display()))?;

    for flag in &report.flags {
        log::warn!("{flag}");
    }
    Ok(if report.flags.is_empty() { 0 } else { 2 })
}

fn cmd_eval(args: &EvalArgs) -> Result<u8, String> {
    let source = load_cloud(&args.source).map_err(|e| e.to_string())?;
    let target = load_cloud(&args.target).map_err(|e| e.to_string())?;
    let transform = load_transform(&args.transform).map_err(|e| e.to_string())?;
    let metrics =
        compute_metrics(&source, &target, &transform, args.threshold).map_err(|e| e.to_string())?;
    let line =
        serde_json::to_string(&metrics).map_err(|e| format!("metrics serialization: {e}"))?;
    println!("{line}");
    Ok(0)
}

/// Scene-file schema for `synth`: every field optional except that a
/// `truth` block, when present, must be either explicit or random.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default)]
    scene: PartialScene,
    #[serde(default)]
    degradation: PartialDegradation,
    truth: Option<TruthSpec>,
    /// Seed for the pair derivation (dropout/noise/dust and random truth).
    pair_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialScene {
    tunnel_length: Option<f64>,
    radius: Option<f64>,
    roughness: Option<f64>,
    density: Option<f64>,
    junction_count: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialDegradation {
    noise_sigma: Option<f64>,
    dust_fraction: Option<f64>,
    dropout_fraction: Option<f64>,
    overlap_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TruthSpec {
    Explicit {
        axis: [f64; 3],
        angle_deg: f64,
        translation: [f64; 3],
    },
    Random {
        random: RandomTruth,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomTruth {
    max_angle_deg: f64,
    max_translation: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scene: &'a SceneParams,
    degradation: &'a DegradationParams,
    pair_seed: u64,
    /// Ground-truth transform mapping target-frame points into the source
    /// frame, row-major 4×4.
    truth: [f64; 16],
    source_points: usize,
    target_points: usize,
}

fn build_truth(spec: &Option<TruthSpec>, pair_seed: u64) -> Result<RigidTransform, String> {
    match spec {
        None => Ok(RigidTransform::identity()),
        Some(TruthSpec::Explicit {
            axis,
            angle_deg,
            translation,
        }) => {
            let axis = Vec3::new(axis[0], axis[1], axis[2]);
            let rotation = RigidTransform::from_axis_angle(axis, angle_deg.to_radians())
                .map_err(|e| e.to_string())?;
            Ok(se3::compose(
                &RigidTransform::translation_of(Vec3::new(
                    translation[0],
                    translation[1],
                    translation[2],
                )),
                &rotation,
            ))
        }
        Some(TruthSpec::Random { random }) => {
            if !(random.max_angle_deg >= 0.0 && random.max_translation >= 0.0) {
                return Err("random truth bounds must be ≥ 0".to_string());
            }
            // Separate stream so the truth draw never overlaps the pair
            // degradation draws made from the same seed.
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
            rng.set_stream(1);
            let axis = loop {
                let v = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm_squared() > 1e-6 {
                    break v;
                }
            };
            let angle = rng.random_range(0.0..=random.max_angle_deg).to_radians();
            let dir = loop {
                let v = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 1e-3 {
                    break v / n;
                }
            };
            let magnitude = rng.random_range(0.0..=random.max_translation);
            let rotation =
                RigidTransform::from_axis_angle(axis, angle).map_err(|e| e.to_string())?;
            Ok(se3::compose(
                &RigidTransform::translation_of(dir * magnitude),
                &rotation,
            ))
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<u8, String> {
    let text = fs::read_to_string(&args.scene_config)
        .map_err(|e| format!("cannot read {}: {e}", args.scene_config.display()))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| format!("bad scene config {}: {e}", args.scene_config.display()))?;

    let defaults = SceneParams::default();
    let scene_params = SceneParams {
        tunnel_length: file.scene.tunnel_length.unwrap_or(defaults.tunnel_length),
        radius: file.scene.radius.unwrap_or(defaults.radius),
        roughness: file.scene.roughness.unwrap_or(defaults.roughness),
        density: file.scene.density.unwrap_or(defaults.density),
        junction_count: file.scene.junction_count.unwrap_or(defaults.junction_count),
        seed: file.scene.seed.unwrap_or(defaults.seed),
    };
    let no_degradation = DegradationParams::none();
    let degradation = DegradationParams {
        noise_sigma: file
            .degradation
            .noise_sigma
            .unwrap_or(no_degradation.noise_sigma),
        dust_fraction: file
            .degradation
            .dust_fraction
            .unwrap_or(no_degradation.dust_fraction),
        dropout_fraction: file
            .degradation
            .dropout_fraction
            .unwrap_or(no_degradation.dropout_fraction),
        overlap_fraction: file
            .degradation
            .overlap_fraction
            .unwrap_or(no_degradation.overlap_fraction),
    };
    let pair_seed = file.pair_seed.unwrap_or(0);
    let truth = build_truth(&file.truth, pair_seed)?;

    let scene = generate_scene(&scene_params).map_err(|e| e.to_string())?;
    let (source, target, truth) =
        make_pair(&scene, &truth, &degradation, pair_seed).map_err(|e| e.to_string())?;

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
    save_cloud_atomic(&source, &args.out_dir.join("source.ply"))?;
    save_cloud_atomic(&target, &args.out_dir.join("target.ply"))?;

    let truth_path = args.out_dir.join("truth.txt");
    let tmp = sibling_tmp(&truth_path);
    save_transform(&truth, &tmp).map_err(|e| e.to_string())?;
    fs::rename(&tmp, &truth_path).map_err(|e| format!("cannot finalize truth.txt: {e}"))?;

    let manifest = Manifest {
        scene: &scene_params,
        degradation: &degradation,
        pair_seed,
        truth: truth.to_row_major(),
        source_points: source.len(),
        target_points: target.len(),
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| format!("manifest serialization: {e}"))?;
    manifest_json.push('\n');
    write_atomic(
        &args.out_dir.join("manifest.json"),
        manifest_json.as_bytes(),
    )?;
    Ok(0)
}

fn save_cloud_atomic(cloud: &PointCloud, path: &Path) -> Result<(), String> {
    let tmp = sibling_tmp(path);
    save_cloud(cloud, &tmp, PlyFormat::BinaryLittleEndian).map_err(|e| e.to_string())?;
    fs::rename(&tmp, path).map_err(|e| format!("cannot move {} into place: {e}", tmp.display()))
}

fn csv_field(value: Option<f64>, precision: usize) -> String {
    value
        .map(|v| format!("{v:.precision$}"))
        .unwrap_or_default()
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, String> {
    let mut pair_dirs: Vec<PathBuf> = fs::read_dir(&args.pairs_dir)
        .map_err(|e| format!("cannot read {}: {e}", args.pairs_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    pair_dirs.sort();
    if pair_dirs.is_empty() {
        log::warn!("no pair directories under {}", args.pairs_dir.display());
    }

    let mut csv = String::from("pair,config,rmse_m,inlier_pct,rot_err_deg,trans_err_m,wall_ms\n");
    for dir in &pair_dirs {
        let pair_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let source = load_cloud(&dir.join("source.ply")).map_err(|e| e.to_string())?;
        let target = load_cloud(&dir.join("target.ply")).map_err(|e| e.to_string())?;
        let truth_path = dir.join("truth.txt");
        let truth = if truth_path.exists() {
            Some(load_transform(&truth_path).map_err(|e| e.to_string())?)
        } else {
            None
        };

        for kind in PipelineKind::ALL {
            let config = PipelineConfig::with_kind(kind);
            let report = run_on_clouds(&source, &target, &config)
                .map_err(|e| format!("{pair_name}/{kind}: {e}"))?;
            let estimate = RigidTransform::from_row_major(&report.final_transform)
                .map_err(|e| format!("{pair_name}/{kind}: {e}"))?;
            let (rot_err, trans_err) = match &truth {
                Some(t) => {
                    let (r, d) = pose_error(&estimate, t);
                    (Some(r), Some(d))
                }
                None => (None, None),
            };
            csv.push_str(&format!(
                "{pair_name},{kind},{},{:.2},{},{},{:.1}\n",
                csv_field(report.final_metrics.inlier_rmse, 4),
                report.final_metrics.inlier_fraction * 100.0,
                csv_field(rot_err, 3),
                csv_field(trans_err, 3),
                report.total_wall_ms,
            ));
        }
    }
    write_atomic(&args.out, csv.as_bytes())?;
    Ok(0)
}
