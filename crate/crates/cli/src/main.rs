//! `diform`: command-line driver for the shape model.
//!
//! Subcommands cover the full pipeline: dataset synthesis, auto-decoder
//! training, pose-regressor training, reconstruction (canonical, joint,
//! conditioned, posed), 4D tracking, mesh extraction, latent interpolation
//! grids, and metric reports. Every command is deterministic given its
//! config and seed; all outputs land under the declared output path.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{Matrix3, Vector3};

use diform_core::field::{interpolate_codes, InterpMode, LatentPair};
use diform_core::geometry::{RigidPose, RotationMatrix};
use diform_core::io;
use diform_core::meshing::extract_mesh;
use diform_core::metrics::{
    chamfer_report, relative_pose_error, sample_mesh_surface, MESH_SAMPLE_COUNT,
};
use diform_core::pose_init::{train_posenet, MheConfig, PgConfig, PoseNetTrainConfig};
use diform_core::reconstructor::{
    reconstruct_conditioned, reconstruct_joint, reconstruct_posed, track_sequence, ReconConfig,
    ReconRecord, ReconResult, RotationInit, TrackConfig,
};
use diform_core::sampling::OrientedPointCloud;
use diform_core::synth::{
    make_dataset, make_sequence, script_deformation, subject_identity, MotionPath, SynthManifest,
};
use diform_core::trainer::{init_state, train_epochs, Dataset, ShapeRecord, TrainConfig};

#[derive(Parser)]
#[command(name = "diform", version, about = "Latent SDF shape model pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Flat `key = value` run-config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory or file, depending on the subcommand.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Cap the worker-thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force single-threaded, strictly ordered execution.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (and optionally a 4D sequence).
    Synth {
        #[arg(long, default_value_t = 3)]
        subjects: usize,
        #[arg(long, default_value_t = 4)]
        deforms: usize,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        /// Also emit a world-coordinate tracking sequence of this length.
        #[arg(long, default_value_t = 0)]
        frames: usize,
    },
    /// Train the auto-decoder on a synthesized dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the pose regressor against a trained field checkpoint.
    TrainPosenet {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Reconstruct one or more observed clouds.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input PLY clouds (canonical coords; world coords for --mode posed).
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Single)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Init::Identity)]
        init: Init,
        /// Frozen identity code (JSON array) for --mode conditioned.
        #[arg(long)]
        identity_json: Option<PathBuf>,
        /// Row-major rotation, 9 comma-separated values, for --init given.
        #[arg(long)]
        rotation: Option<String>,
        /// Pose-regressor checkpoint for --init posenet.
        #[arg(long)]
        posenet: Option<PathBuf>,
        /// Canonical reference cloud (PLY) for --init posenet.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Also extract meshes at this resolution (0 = skip).
        #[arg(long, default_value_t = 0)]
        mesh_resolution: usize,
    },
    /// Track an ordered sequence of world-coordinate clouds.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame clouds in order.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Init::Identity)]
        init: Init,
        #[arg(long)]
        rotation: Option<String>,
        #[arg(long)]
        posenet: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Extract a mesh from a checkpoint at chosen codes.
    Mesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        sample: Option<String>,
        /// Codes from a reconstruction result JSON (first deformation code).
        #[arg(long)]
        codes_json: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Latent interpolation grid: identity varies per row, deformation per
    /// column; one mesh per cell.
    Interp {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        subject_a: String,
        #[arg(long)]
        sample_a: String,
        #[arg(long)]
        subject_b: String,
        #[arg(long)]
        sample_b: String,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long, default_value_t = 48)]
        resolution: usize,
    },
    /// Chamfer / pose-error report for one reconstruction.
    Eval {
        /// Reconstruction (OBJ mesh or PLY cloud).
        #[arg(long)]
        recon: PathBuf,
        /// Ground-truth cloud (PLY).
        #[arg(long)]
        gt: PathBuf,
        /// Estimated pose (reconstruction result JSON).
        #[arg(long)]
        result_json: Option<PathBuf>,
        /// Ground-truth pose (JSON with rotation + translation).
        #[arg(long)]
        gt_pose_json: Option<PathBuf>,
        #[arg(long, default_value = "shape")]
        id: String,
        #[arg(long, default_value_t = MESH_SAMPLE_COUNT)]
        samples: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Single,
    Joint,
    Conditioned,
    Posed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    Identity,
    Given,
    Pg,
    Mhe,
    Posenet,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIFORM_LOG", "error"))
        .init();
    let cli = Cli::parse();
    let threads = if cli.global.deterministic {
        Some(cli.global.threads.unwrap_or(1))
    } else {
        cli.global.threads
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("diform: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = run(&cli) {
        eprintln!("diform: {e:#}");
        std::process::exit(1);
    }
}

fn config_pairs(global: &Global) -> Result<Vec<(String, String)>> {
    match &global.config {
        Some(path) => Ok(io::read_config_file(path)?),
        None => Ok(Vec::new()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth { subjects, deforms, points, frames } => {
            cmd_synth(g, *subjects, *deforms, *points, *frames)
        }
        Command::Train { data, resume } => cmd_train(g, data, resume.as_deref()),
        Command::TrainPosenet { checkpoint, data } => cmd_train_posenet(g, checkpoint, data),
        Command::Reconstruct {
            checkpoint,
            input,
            mode,
            init,
            identity_json,
            rotation,
            posenet,
            reference,
            mesh_resolution,
        } => cmd_reconstruct(
            g,
            checkpoint,
            input,
            *mode,
            *init,
            identity_json.as_deref(),
            rotation.as_deref(),
            posenet.as_deref(),
            reference.as_deref(),
            *mesh_resolution,
        ),
        Command::Track { checkpoint, input, init, rotation, posenet, reference } => cmd_track(
            g,
            checkpoint,
            input,
            *init,
            rotation.as_deref(),
            posenet.as_deref(),
            reference.as_deref(),
        ),
        Command::Mesh { checkpoint, subject, sample, codes_json, resolution } => cmd_mesh(
            g,
            checkpoint,
            subject.as_deref(),
            sample.as_deref(),
            codes_json.as_deref(),
            *resolution,
        ),
        Command::Interp {
            checkpoint,
            subject_a,
            sample_a,
            subject_b,
            sample_b,
            steps,
            resolution,
        } => cmd_interp(
            g, checkpoint, subject_a, sample_a, subject_b, sample_b, *steps, *resolution,
        ),
        Command::Eval { recon, gt, result_json, gt_pose_json, id, samples } => cmd_eval(
            g,
            recon,
            gt,
            result_json.as_deref(),
            gt_pose_json.as_deref(),
            id,
            *samples,
        ),
    }
}

// ------------------------------------------------------------------ synth

fn cmd_synth(g: &Global, subjects: usize, deforms: usize, points: usize, frames: usize) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    std::fs::create_dir_all(&g.out)?;
    let (dataset, mut manifest) = make_dataset(subjects, deforms, points, seed)?;
    for (shape, entry) in dataset.shapes.iter().zip(&mut manifest.entries) {
        let name = format!("{}_{}.ply", shape.subject, shape.sample);
        io::write_ply_binary(&g.out.join(&name), &shape.cloud)?;
        entry.path = Some(name);
    }
    io::write_json(&g.out.join("manifest.json"), &manifest)?;
    log::info!("wrote {} shapes to {}", dataset.shapes.len(), g.out.display());

    if frames > 0 {
        let id = subject_identity(seed, 0);
        let keyframes: Vec<_> =
            (0..deforms.max(2)).map(|k| script_deformation(seed, k)).collect();
        let motion = MotionPath {
            angular_velocity: Vector3::new(0.3, 0.5, 0.2),
            linear_velocity: Vector3::new(0.2, -0.1, 0.15),
        };
        let seq = make_sequence(
            &id,
            &keyframes,
            frames,
            Some(motion),
            &dataset.frame,
            points,
            diform_core::synth::stream_seed(seed, "cli-sequence", 0),
        )?;
        let mut poses = Vec::with_capacity(seq.len());
        for (i, frame) in seq.iter().enumerate() {
            io::write_ply_binary(&g.out.join(format!("seq_{i:03}.ply")), &frame.cloud_world)?;
            poses.push(pose_json(&frame.pose_cw));
        }
        io::write_json(&g.out.join("sequence.json"), &poses)?;
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Dataset, SynthManifest)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .with_context(|| format!("reading {}/manifest.json", dir.display()))?;
    let manifest: SynthManifest = serde_json::from_str(&text)?;
    let mut shapes = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let rel = entry
            .path
            .as_ref()
            .ok_or_else(|| anyhow!("manifest entry {} has no cloud path", entry.sample_id))?;
        shapes.push(ShapeRecord {
            subject: entry.subject_id.clone(),
            sample: entry.sample_id.clone(),
            cloud: io::read_ply(&dir.join(rel))?,
        });
    }
    Ok((Dataset { shapes, frame: manifest.frame }, manifest))
}

// ------------------------------------------------------------------ train

fn cmd_train(g: &Global, data: &Path, resume: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(&g.out)?;
    let mut config = TrainConfig::default();
    let pairs = config_pairs(g)?;
    io::apply_train_config(g.config.as_deref().unwrap_or(Path::new("<flags>")), &pairs, &mut config)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    let (dataset, _) = load_dataset(data)?;
    // epochs = 0 writes the freshly initialized checkpoint without training.
    let init_only = config.epochs == 0;
    if init_only {
        config.epochs = 1;
    }
    let mut state = match resume {
        Some(path) => io::read_checkpoint(path)?,
        None => init_state(&dataset, &config)?,
    };
    let ck_path = g.out.join("checkpoint.bin");
    let mut logs = Vec::new();
    let every = config.checkpoint_every;
    if !init_only {
        train_epochs(&mut state, &dataset, &config, config.epochs, |state, log| {
            log::info!("epoch {} loss {:.6}", log.epoch, log.mean.total);
            logs.push(log.clone());
            if every > 0 && log.epoch % every == 0 {
                io::write_checkpoint(&ck_path, state)?;
            }
            Ok(())
        })?;
    }
    io::write_checkpoint(&ck_path, &state)?;
    io::write_train_log(&g.out.join("train_log.csv"), &logs)?;
    Ok(())
}

fn cmd_train_posenet(g: &Global, checkpoint: &Path, data: &Path) -> Result<()> {
    std::fs::create_dir_all(&g.out)?;
    let state = io::read_checkpoint(checkpoint)?;
    let (dataset, _) = load_dataset(data)?;
    let mut config = PoseNetTrainConfig::default();
    let pairs = config_pairs(g)?;
    let cfg_path = g.config.clone().unwrap_or_else(|| PathBuf::from("<flags>"));
    for (k, v) in &pairs {
        io::apply_posenet_key(&cfg_path, k, v, &mut config)?;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    let (model, losses) = train_posenet(&state.model, &dataset, &config)?;
    io::write_posenet(&g.out.join("posenet.bin"), &model)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", e + 1, l));
    }
    std::fs::write(g.out.join("posenet_log.csv"), csv)?;
    Ok(())
}

// ------------------------------------------------------------ reconstruct

fn parse_rotation(text: &str) -> Result<RotationMatrix> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("parsing --rotation")?;
    if vals.len() != 9 {
        bail!("--rotation needs 9 comma-separated values, got {}", vals.len());
    }
    let m = Matrix3::from_row_slice(&vals);
    Ok(RotationMatrix::new(m)?)
}

fn build_init(
    init: Init,
    rotation: Option<&str>,
    posenet: Option<&Path>,
    reference: Option<&Path>,
    pairs: &[(String, String)],
    cfg_path: &Path,
) -> Result<RotationInit> {
    Ok(match init {
        Init::Identity => RotationInit::Identity,
        Init::Given => {
            let text = rotation.ok_or_else(|| anyhow!("--init given requires --rotation"))?;
            RotationInit::Given(parse_rotation(text)?)
        }
        Init::Pg => {
            let mut pg = PgConfig::default();
            for (k, v) in pairs {
                if let Some(sub) = k.strip_prefix("pg.") {
                    io::apply_pg_key(cfg_path, sub, v, &mut pg)?;
                }
            }
            RotationInit::PolicyGradient(pg)
        }
        Init::Mhe => {
            let mut mhe = MheConfig::default();
            for (k, v) in pairs {
                if let Some(sub) = k.strip_prefix("mhe.") {
                    io::apply_mhe_key(cfg_path, sub, v, &mut mhe)?;
                }
            }
            RotationInit::Mhe(mhe)
        }
        Init::Posenet => {
            let net = posenet.ok_or_else(|| anyhow!("--init posenet requires --posenet"))?;
            let reference =
                reference.ok_or_else(|| anyhow!("--init posenet requires --reference"))?;
            RotationInit::PoseNet {
                model: io::read_posenet(net)?,
                reference: io::read_ply(reference)?.points,
            }
        }
    })
}

/// Applies recon-scope config pairs, skipping initializer-scoped prefixes.
fn recon_config(g: &Global, pairs: &[(String, String)]) -> Result<ReconConfig> {
    let mut config = ReconConfig::default();
    let cfg_path = g.config.clone().unwrap_or_else(|| PathBuf::from("<flags>"));
    for (k, v) in pairs {
        if k.starts_with("pg.") || k.starts_with("mhe.") || k.starts_with("track.") {
            continue;
        }
        io::apply_recon_key(&cfg_path, k, v, &mut config)?;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    Ok(config)
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    g: &Global,
    checkpoint: &Path,
    inputs: &[PathBuf],
    mode: Mode,
    init: Init,
    identity_json: Option<&Path>,
    rotation: Option<&str>,
    posenet: Option<&Path>,
    reference: Option<&Path>,
    mesh_resolution: usize,
) -> Result<()> {
    std::fs::create_dir_all(&g.out)?;
    let state = io::read_checkpoint(checkpoint)?;
    let pairs = config_pairs(g)?;
    let config = recon_config(g, &pairs)?;
    let clouds: Vec<OrientedPointCloud> =
        inputs.iter().map(|p| io::read_ply(p)).collect::<std::result::Result<_, _>>()?;

    let result: ReconResult = match mode {
        Mode::Single | Mode::Joint => {
            if mode == Mode::Single && clouds.len() != 1 {
                bail!("--mode single takes exactly one --input");
            }
            reconstruct_joint(&state.model, &clouds, &config)?
        }
        Mode::Conditioned => {
            if clouds.len() != 1 {
                bail!("--mode conditioned takes exactly one --input");
            }
            let path =
                identity_json.ok_or_else(|| anyhow!("--mode conditioned requires --identity-json"))?;
            let z_i: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            reconstruct_conditioned(&state.model, &clouds[0], &z_i, &config)?
        }
        Mode::Posed => {
            if clouds.len() != 1 {
                bail!("--mode posed takes exactly one --input");
            }
            let cfg_path = g.config.clone().unwrap_or_else(|| PathBuf::from("<flags>"));
            let init = build_init(init, rotation, posenet, reference, &pairs, &cfg_path)?;
            reconstruct_posed(&state.model, &clouds[0], &init, &config)?
        }
    };
    io::write_json(&g.out.join("result.json"), &ReconRecord::from(&result))?;
    if mesh_resolution > 0 {
        for (i, z_d) in result.z_d.iter().enumerate() {
            let codes = LatentPair { z_i: result.z_i.clone(), z_d: z_d.clone() };
            let mesh = extract_mesh(&state.model, &codes, mesh_resolution, None)?;
            io::write_obj(&g.out.join(format!("recon_{i}.obj")), &mesh)?;
        }
    }
    Ok(())
}

fn cmd_track(
    g: &Global,
    checkpoint: &Path,
    inputs: &[PathBuf],
    init: Init,
    rotation: Option<&str>,
    posenet: Option<&Path>,
    reference: Option<&Path>,
) -> Result<()> {
    std::fs::create_dir_all(&g.out)?;
    let state = io::read_checkpoint(checkpoint)?;
    let pairs = config_pairs(g)?;
    let recon = recon_config(g, &pairs)?;
    let cfg_path = g.config.clone().unwrap_or_else(|| PathBuf::from("<flags>"));
    let init = build_init(init, rotation, posenet, reference, &pairs, &cfg_path)?;
    let mut track = TrackConfig::new(recon, init);
    for (k, v) in &pairs {
        if let Some(sub) = k.strip_prefix("track.") {
            io::apply_track_key(&cfg_path, sub, v, &mut track)?;
        }
    }
    let clouds: Vec<OrientedPointCloud> =
        inputs.iter().map(|p| io::read_ply(p)).collect::<std::result::Result<_, _>>()?;
    let results = track_sequence(&state.model, &clouds, &track)?;
    let records: Vec<ReconRecord> = results.iter().map(ReconRecord::from).collect();
    io::write_json(&g.out.join("track.json"), &records)?;
    Ok(())
}

// ------------------------------------------------------------------- mesh

fn resolve_codes(
    state: &diform_core::trainer::TrainState,
    subject: Option<&str>,
    sample: Option<&str>,
    codes_json: Option<&Path>,
) -> Result<LatentPair> {
    if let Some(path) = codes_json {
        let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let z_i: Vec<f64> = serde_json::from_value(record["z_i"].clone())?;
        let z_d: Vec<Vec<f64>> = serde_json::from_value(record["z_d"].clone())?;
        let z_d = z_d.into_iter().next().ok_or_else(|| anyhow!("result has no z_d"))?;
        return Ok(LatentPair { z_i, z_d });
    }
    match (subject, sample) {
        (Some(s), Some(d)) => state
            .codes
            .pair(s, d)
            .ok_or_else(|| anyhow!("no trained codes for subject '{s}' sample '{d}'")),
        (None, None) => Ok(LatentPair::zeros(&state.model.config)),
        _ => bail!("--subject and --sample must be given together"),
    }
}

fn cmd_mesh(
    g: &Global,
    checkpoint: &Path,
    subject: Option<&str>,
    sample: Option<&str>,
    codes_json: Option<&Path>,
    resolution: usize,
) -> Result<()> {
    let state = io::read_checkpoint(checkpoint)?;
    let codes = resolve_codes(&state, subject, sample, codes_json)?;
    let mesh = extract_mesh(&state.model, &codes, resolution, None)?;
    if let Some(parent) = g.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let out = if g.out.extension().is_some() { g.out.clone() } else { g.out.join("mesh.obj") };
    if out != g.out {
        std::fs::create_dir_all(&g.out)?;
    }
    io::write_obj(&out, &mesh)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_interp(
    g: &Global,
    checkpoint: &Path,
    subject_a: &str,
    sample_a: &str,
    subject_b: &str,
    sample_b: &str,
    steps: usize,
    resolution: usize,
) -> Result<()> {
    if steps < 2 {
        bail!("--steps must be at least 2");
    }
    std::fs::create_dir_all(&g.out)?;
    let state = io::read_checkpoint(checkpoint)?;
    let a = state
        .codes
        .pair(subject_a, sample_a)
        .ok_or_else(|| anyhow!("no trained codes for '{subject_a}/{sample_a}'"))?;
    let b = state
        .codes
        .pair(subject_b, sample_b)
        .ok_or_else(|| anyhow!("no trained codes for '{subject_b}/{sample_b}'"))?;
    for i in 0..steps {
        let ti = i as f64 / (steps - 1) as f64;
        let row = interpolate_codes(&a, &b, ti, InterpMode::IdentityOnly)?;
        for j in 0..steps {
            let tj = j as f64 / (steps - 1) as f64;
            let cell = interpolate_codes(&row, &b, tj, InterpMode::DeformationOnly)?;
            let mesh = extract_mesh(&state.model, &cell, resolution, None)?;
            io::write_obj(&g.out.join(format!("interp_{i}_{j}.obj")), &mesh)?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------- eval

#[derive(serde::Serialize, serde::Deserialize)]
struct PoseJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

fn pose_json(pose: &RigidPose) -> PoseJson {
    let m = pose.rotation.matrix();
    PoseJson {
        rotation: [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ],
        translation: [pose.translation.x, pose.translation.y, pose.translation.z],
    }
}

fn pose_from_json(path: &Path) -> Result<RigidPose> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let rotation: [[f64; 3]; 3] = serde_json::from_value(v["rotation"].clone())
        .with_context(|| format!("{}: missing rotation", path.display()))?;
    let translation: [f64; 3] = serde_json::from_value(v["translation"].clone())
        .with_context(|| format!("{}: missing translation", path.display()))?;
    let m = Matrix3::from_fn(|r, c| rotation[r][c]);
    Ok(RigidPose::new(
        RotationMatrix::renormalize(m),
        Vector3::new(translation[0], translation[1], translation[2]),
    ))
}

fn cmd_eval(
    g: &Global,
    recon: &Path,
    gt: &Path,
    result_json: Option<&Path>,
    gt_pose_json: Option<&Path>,
    id: &str,
    samples: usize,
) -> Result<()> {
    let gt_cloud = io::read_ply(gt)?;
    let recon_points: Vec<Vector3<f64>> = match recon.extension().and_then(|e| e.to_str()) {
        Some("obj") => {
            let mesh = io::read_obj(recon)?;
            sample_mesh_surface(&mesh, samples, 0)?
        }
        _ => io::read_ply(recon)?.points,
    };
    let chamfer = chamfer_report(&recon_points, &gt_cloud.points)?;
    let (rpe_deg, rpe_len) = match (result_json, gt_pose_json) {
        (Some(est), Some(gtp)) => {
            let est = pose_from_json(est)?;
            let gtp = pose_from_json(gtp)?;
            let (deg, len) = relative_pose_error(&est, &gtp);
            (Some(deg), Some(len))
        }
        _ => (None, None),
    };
    let row = io::EvalRow { shape_id: id.to_string(), chamfer, rpe_deg, rpe_len };
    if let Some(parent) = g.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let out = if g.out.extension().is_some() { g.out.clone() } else { g.out.join("eval.csv") };
    if out != g.out {
        std::fs::create_dir_all(&g.out)?;
    }
    io::write_eval_csv(&out, &[row])?;
    Ok(())
}
