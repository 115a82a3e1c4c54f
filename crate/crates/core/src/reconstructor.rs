//! Inference against novel observations: optimize latent codes, and
//! optionally a world-to-canonical rigid pose, on the frozen decoder.
//!
//! Variants: single-shape, joint (one shared identity over several shapes of
//! a subject), conditioned (frozen identity), posed (6DoF + codes in world
//! coordinates), and sequential tracking with warm starts.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::ReconError;
use crate::field::{FieldModel, LatentPair};
use crate::geometry::{apply_pose, RigidPose, RotationMatrix};
use crate::objective::{
    energy_gradients, total_energy, DecodedField, LossReport, LossWeights, WrtMask,
};
use crate::pose_init::{
    centroid_translation, mhe_init, policy_gradient_init, posenet_predict, MheConfig, PgConfig,
    PoseNetModel,
};
use crate::sampling::{make_batch, OrientedPointCloud, SamplerConfig};
use crate::synth::stream_seed;
use crate::trainer::{adam_step, AdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub iterations: usize,
    pub learning_rate_codes: f64,
    pub learning_rate_translation: f64,
    pub learning_rate_rotation: f64,
    pub sampler: SamplerConfig,
    pub weights: LossWeights,
    /// Keep the identity code fixed at its initial value.
    pub freeze_identity: bool,
    /// Keep the pose fixed at its initial value; the optimization then runs
    /// on the pre-transformed cloud in canonical coordinates.
    pub freeze_pose: bool,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate_codes: 5e-4,
            learning_rate_translation: 1e-3,
            learning_rate_rotation: 1e-3,
            sampler: SamplerConfig::default(),
            weights: LossWeights::default(),
            freeze_identity: false,
            freeze_pose: false,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn desk() -> Self {
        Self { iterations: 300, sampler: SamplerConfig::desk(256), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        if self.learning_rate_codes <= 0.0
            || self.learning_rate_translation <= 0.0
            || self.learning_rate_rotation <= 0.0
        {
            return Err(ReconError::InitFailed {
                diagnostics: "learning rates must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Rotation (and for PoseNet, full pose) initializer for world-coordinate
/// reconstruction.
#[derive(Debug, Clone)]
pub enum RotationInit {
    Identity,
    Given(RotationMatrix),
    PolicyGradient(PgConfig),
    Mhe(MheConfig),
    PoseNet { model: PoseNetModel, reference: Vec<Vector3<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub z_i: Vec<f64>,
    /// One deformation code per input shape, in input order.
    pub z_d: Vec<Vec<f64>>,
    pub pose: Option<RigidPose>,
    /// Loss at the returned solution, on the held-out evaluation batch.
    pub report: LossReport,
    /// Per-iteration mean batch energy.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Flat serializable record of a reconstruction result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconRecord {
    pub z_i: Vec<f64>,
    pub z_d: Vec<Vec<f64>>,
    /// Row-major rotation, present with a pose.
    pub rotation: Option<[[f64; 3]; 3]>,
    pub translation: Option<[f64; 3]>,
    pub loss: LossReport,
    pub iterations: usize,
}

impl From<&ReconResult> for ReconRecord {
    fn from(r: &ReconResult) -> Self {
        let rotation = r.pose.as_ref().map(|p| {
            let m = p.rotation.matrix();
            [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ]
        });
        let translation =
            r.pose.as_ref().map(|p| [p.translation.x, p.translation.y, p.translation.z]);
        Self {
            z_i: r.z_i.clone(),
            z_d: r.z_d.clone(),
            rotation,
            translation,
            loss: r.report,
            iterations: r.iterations,
        }
    }
}

/// Content fingerprint of a cloud; batch streams are keyed by it so results
/// depend on the observations, not on list position.
fn cloud_key(cloud: &OrientedPointCloud) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |v: f64| {
        for b in v.to_bits().to_le_bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
    };
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        for c in 0..3 {
            eat(p[c]);
        }
        for c in 0..3 {
            eat(n[c]);
        }
    }
    h
}

struct Problem<'a> {
    model: &'a FieldModel,
    clouds: Vec<&'a OrientedPointCloud>,
    z_i0: Vec<f64>,
    z_d0: Vec<Vec<f64>>,
    pose0: Option<RigidPose>,
    freeze_zi: bool,
    /// Multiplier on the code learning rate for the identity block.
    zi_lr_scale: f64,
    iterations: usize,
    seed: u64,
}

/// Shared descent engine. Snapshots the state on a fixed evaluation batch
/// and returns the best snapshot, so the reported energy never exceeds the
/// energy at initialization.
fn run(problem: Problem<'_>, config: &ReconConfig) -> Result<ReconResult, ReconError> {
    config.validate()?;
    let model = problem.model;
    let n = problem.clouds.len();
    assert!(n >= 1, "engine needs at least one cloud");
    assert!(problem.pose0.is_none() || n == 1, "pose optimization is single-shape");

    let dims = (model.config.identity_dim, model.config.deformation_dim);
    if problem.z_i0.len() != dims.0 {
        return Err(ReconError::DimMismatch { expected: dims.0, got: problem.z_i0.len() });
    }
    for zd in &problem.z_d0 {
        if zd.len() != dims.1 {
            return Err(ReconError::DimMismatch { expected: dims.1, got: zd.len() });
        }
    }

    let keys: Vec<u64> = problem.clouds.iter().map(|c| cloud_key(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&s| (keys[s], s));

    let mut z_i = problem.z_i0.clone();
    let mut z_d = problem.z_d0.clone();
    let mut pose = problem.pose0.clone();
    let mut opt_zi = AdamState::new(dims.0);
    let mut opt_zd: Vec<AdamState> = (0..n).map(|_| AdamState::new(dims.1)).collect();
    let mut opt_t = AdamState::new(3);

    let eval_batches: Vec<_> = problem
        .clouds
        .iter()
        .enumerate()
        .map(|(s, c)| {
            make_batch(c, &config.sampler, stream_seed(problem.seed ^ keys[s], "recon-eval", 0))
        })
        .collect::<Result<_, _>>()?;
    let evaluate = |z_i: &Vec<f64>, z_d: &Vec<Vec<f64>>, pose: &Option<RigidPose>| {
        let mut mean = LossReport::default();
        for s in 0..n {
            let codes = LatentPair { z_i: z_i.clone(), z_d: z_d[s].clone() };
            let field = DecodedField { model, codes: &codes };
            let r = total_energy(&field, &codes, &eval_batches[s], &config.weights, pose.as_ref())?;
            mean.total += r.total / n as f64;
            mean.surface_sdf += r.surface_sdf / n as f64;
            mean.normal += r.normal / n as f64;
            mean.eikonal += r.eikonal / n as f64;
            mean.offsurface += r.offsurface / n as f64;
            mean.code_reg += r.code_reg / n as f64;
        }
        Ok::<LossReport, ReconError>(mean)
    };

    let mut best_report = evaluate(&z_i, &z_d, &pose)?;
    let mut best = (z_i.clone(), z_d.clone(), pose.clone());
    let cadence = (problem.iterations / 20).max(1);

    let zi_lr = config.learning_rate_codes * problem.zi_lr_scale;
    let mut trace = Vec::with_capacity(problem.iterations);
    for iter in 0..problem.iterations {
        let mut zi_grads: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n);
        let mut iter_total = 0.0;
        for &s in &order {
            let batch = make_batch(
                problem.clouds[s],
                &config.sampler,
                stream_seed(problem.seed ^ keys[s], "recon-batch", iter as u64),
            )?;
            let codes = LatentPair { z_i: z_i.clone(), z_d: z_d[s].clone() };
            let wrt = if pose.is_some() { WrtMask::codes_and_pose() } else { WrtMask::codes() };
            let bundle =
                energy_gradients(model, &codes, &batch, &config.weights, pose.as_ref(), wrt)?;
            if !bundle.report.total.is_finite() {
                return Err(ReconError::NonFiniteLoss { iter });
            }
            iter_total += bundle.report.total;
            zi_grads.push((s, bundle.z_i.unwrap()));
            adam_step(
                &mut opt_zd[s],
                &mut z_d[s],
                &bundle.z_d.as_ref().unwrap(),
                config.learning_rate_codes,
            )?;
            if let Some(p) = pose.as_mut() {
                let mut t = [p.translation.x, p.translation.y, p.translation.z];
                let gt = bundle.translation.unwrap();
                adam_step(&mut opt_t, &mut t, &[gt.x, gt.y, gt.z], config.learning_rate_translation)?;
                p.translation = Vector3::new(t[0], t[1], t[2]);
                p.rotation = crate::geometry::rotation_step(
                    &p.rotation,
                    &bundle.rotation.unwrap(),
                    config.learning_rate_rotation,
                );
            }
        }
        trace.push(iter_total / n as f64);

        if !(problem.freeze_zi || config.freeze_identity) {
            // Identity gradient: summed over shapes in content-key order.
            let mut g = vec![0.0; dims.0];
            for (_, gs) in &zi_grads {
                for (a, b) in g.iter_mut().zip(gs) {
                    *a += b;
                }
            }
            adam_step(&mut opt_zi, &mut z_i, &g, zi_lr)?;
        }

        if (iter + 1) % cadence == 0 || iter + 1 == problem.iterations {
            let report = evaluate(&z_i, &z_d, &pose)?;
            if report.total < best_report.total {
                best_report = report;
                best = (z_i.clone(), z_d.clone(), pose.clone());
            }
        }
    }

    Ok(ReconResult {
        z_i: best.0,
        z_d: best.1,
        pose: best.2,
        report: best_report,
        trace,
        iterations: problem.iterations,
    })
}

/// DiForm-S: one shape, codes from the 0-code, model frozen.
pub fn reconstruct_single(
    model: &FieldModel,
    cloud_canonical: &OrientedPointCloud,
    config: &ReconConfig,
) -> Result<ReconResult, ReconError> {
    reconstruct_joint(model, &[cloud_canonical.clone()], config)
}

/// DiForm-J: several shapes of one subject share the identity code.
pub fn reconstruct_joint(
    model: &FieldModel,
    clouds: &[OrientedPointCloud],
    config: &ReconConfig,
) -> Result<ReconResult, ReconError> {
    if clouds.is_empty() {
        return Err(ReconError::InitFailed { diagnostics: "no input clouds".into() });
    }
    run(
        Problem {
            model,
            clouds: clouds.iter().collect(),
            z_i0: vec![0.0; model.config.identity_dim],
            z_d0: vec![vec![0.0; model.config.deformation_dim]; clouds.len()],
            pose0: None,
            freeze_zi: false,
            zi_lr_scale: 1.0,
            iterations: config.iterations,
            seed: config.seed,
        },
        config,
    )
}

/// DiForm-C: identity frozen to a known code, only deformation optimized.
pub fn reconstruct_conditioned(
    model: &FieldModel,
    cloud_canonical: &OrientedPointCloud,
    frozen_z_i: &[f64],
    config: &ReconConfig,
) -> Result<ReconResult, ReconError> {
    if frozen_z_i.len() != model.config.identity_dim {
        return Err(ReconError::DimMismatch {
            expected: model.config.identity_dim,
            got: frozen_z_i.len(),
        });
    }
    run(
        Problem {
            model,
            clouds: vec![cloud_canonical],
            z_i0: frozen_z_i.to_vec(),
            z_d0: vec![vec![0.0; model.config.deformation_dim]],
            pose0: None,
            freeze_zi: true,
            zi_lr_scale: 1.0,
            iterations: config.iterations,
            seed: config.seed,
        },
        config,
    )
}

/// Resolves the initial pose for a world-coordinate cloud.
fn initial_pose(
    model: &FieldModel,
    cloud_world: &OrientedPointCloud,
    init: &RotationInit,
    config: &ReconConfig,
) -> Result<RigidPose, ReconError> {
    let wrap = |e: ReconError| match e {
        ReconError::InitFailed { .. } => e,
        other => ReconError::InitFailed { diagnostics: other.to_string() },
    };
    let rotation = match init {
        RotationInit::Identity => RotationMatrix::identity(),
        RotationInit::Given(r) => r.clone(),
        RotationInit::PolicyGradient(pg) => {
            let codes = LatentPair::zeros(&model.config);
            policy_gradient_init(model, &codes, cloud_world, pg, config.seed)
                .map_err(wrap)?
                .0
        }
        RotationInit::Mhe(cfg) => mhe_init(model, cloud_world, cfg, config.seed).map_err(wrap)?,
        RotationInit::PoseNet { model: net, reference } => {
            return posenet_predict(net, cloud_world, reference).map_err(wrap);
        }
    };
    Ok(RigidPose::new(rotation.clone(), centroid_translation(&rotation, cloud_world)))
}

/// World-coordinate reconstruction: joint descent over codes, translation,
/// and rotation from the chosen initializer.
pub fn reconstruct_posed(
    model: &FieldModel,
    cloud_world: &OrientedPointCloud,
    init: &RotationInit,
    config: &ReconConfig,
) -> Result<ReconResult, ReconError> {
    let pose0 = initial_pose(model, cloud_world, init, config)?;
    reconstruct_posed_from(model, cloud_world, pose0, None, config)
}

/// Posed reconstruction from an explicit starting state (tracking warm
/// starts land here).
fn reconstruct_posed_from(
    model: &FieldModel,
    cloud_world: &OrientedPointCloud,
    pose0: RigidPose,
    warm: Option<(&ReconResult, usize, f64, u64)>,
    config: &ReconConfig,
) -> Result<ReconResult, ReconError> {
    let (z_i0, z_d0, iterations, zi_lr_scale, seed) = match warm {
        Some((prev, iters, zi_scale, seed)) => {
            (prev.z_i.clone(), prev.z_d[0].clone(), iters, zi_scale, seed)
        }
        None => (
            vec![0.0; model.config.identity_dim],
            vec![0.0; model.config.deformation_dim],
            config.iterations,
            1.0,
            config.seed,
        ),
    };
    if config.freeze_pose {
        // Canonical optimization of the pre-transformed cloud; identical to
        // the canonical path on the same cloud and seed.
        let canonical = apply_pose(&pose0, cloud_world);
        let mut result = run(
            Problem {
                model,
                clouds: vec![&canonical],
                z_i0,
                z_d0: vec![z_d0],
                pose0: None,
                freeze_zi: false,
                zi_lr_scale,
                iterations,
                seed,
            },
            config,
        )?;
        result.pose = Some(pose0);
        return Ok(result);
    }
    run(
        Problem {
            model,
            clouds: vec![cloud_world],
            z_i0,
            z_d0: vec![z_d0],
            pose0: Some(pose0),
            freeze_zi: false,
            zi_lr_scale,
            iterations,
            seed,
        },
        config,
    )
}

#[derive(Debug, Clone)]
pub struct TrackConfig {
    pub recon: ReconConfig,
    pub init: RotationInit,
    /// Iteration budget for warm-started frames; 0 means iterations / 10.
    pub warm_iterations: usize,
    /// Freeze the identity code after this many frames, once observed.
    pub freeze_identity_after: Option<usize>,
    /// Identity learning-rate multiplier on warm-started frames.
    pub identity_lr_ratio: f64,
}

impl TrackConfig {
    pub fn new(recon: ReconConfig, init: RotationInit) -> Self {
        Self {
            recon,
            init,
            warm_iterations: 0,
            freeze_identity_after: None,
            identity_lr_ratio: 0.01,
        }
    }

    fn warm_budget(&self) -> usize {
        if self.warm_iterations > 0 {
            self.warm_iterations
        } else {
            (self.recon.iterations / 10).max(1)
        }
    }
}

/// Sequential 4D tracking: frame 0 runs the full posed reconstruction, later
/// frames warm-start from the previous estimate. A failed frame falls back
/// to the frame-0 treatment.
pub fn track_sequence(
    model: &FieldModel,
    clouds: &[OrientedPointCloud],
    config: &TrackConfig,
) -> Result<Vec<ReconResult>, ReconError> {
    if clouds.is_empty() {
        return Err(ReconError::InitFailed { diagnostics: "empty sequence".into() });
    }
    let mut results: Vec<ReconResult> = Vec::with_capacity(clouds.len());
    for (t, cloud) in clouds.iter().enumerate() {
        let frame_seed = stream_seed(config.recon.seed, "track-frame", t as u64);
        let cold = |cfg_seed: u64| -> Result<ReconResult, ReconError> {
            let mut cfg = config.recon.clone();
            cfg.seed = cfg_seed;
            reconstruct_posed(model, cloud, &config.init, &cfg)
        };
        let attempt = match results.last() {
            None => cold(frame_seed),
            Some(prev) => {
                let frozen =
                    config.freeze_identity_after.map_or(false, |after| t >= after.max(1));
                let mut cfg = config.recon.clone();
                cfg.seed = frame_seed;
                cfg.freeze_identity = cfg.freeze_identity || frozen;
                let pose0 = prev.pose.clone().expect("posed tracking result carries a pose");
                reconstruct_posed_from(
                    model,
                    cloud,
                    pose0,
                    Some((prev, config.warm_budget(), config.identity_lr_ratio, frame_seed)),
                    &cfg,
                )
            }
        };
        let result = match attempt {
            Ok(r) => r,
            // Warm start failed: retry this frame cold.
            Err(_) if !results.is_empty() => cold(frame_seed)?,
            Err(e) => return Err(e),
        };
        results.push(result);
    }
    Ok(results)
}

/// Posed reconstruction from an explicit full initial pose (e.g. ground
/// truth in ablations).
pub fn reconstruct_posed_with_pose(
    model: &FieldModel,
    cloud_world: &OrientedPointCloud,
    pose0: RigidPose,
    config: &ReconConfig,
) -> Result<ReconResult, ReconError> {
    reconstruct_posed_from(model, cloud_world, pose0, None, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_model, FieldConfig};
    use crate::geometry::{geodesic_angle, sample_uniform_rotations};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_field() -> FieldModel {
        let config = FieldConfig {
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            hidden_width: 16,
            n_layers: 8,
            skip_layer: 4,
        };
        init_model(&config, 3)
    }

    /// A briefly trained tiny model shared by the descent-quality tests; the
    /// untrained init is nearly code-insensitive, so codes must matter here.
    fn trained() -> &'static (FieldModel, crate::trainer::Dataset) {
        use std::sync::OnceLock;
        static CELL: OnceLock<(FieldModel, crate::trainer::Dataset)> = OnceLock::new();
        CELL.get_or_init(|| {
            let (dataset, _) = crate::synth::make_dataset(2, 2, 128, 40).unwrap();
            let cfg = crate::trainer::TrainConfig {
                epochs: 400,
                batch_size: 4,
                learning_rate: 2e-4,
                sampler: SamplerConfig::desk(64),
                field: FieldConfig {
                    pe_bands: 2,
                    identity_dim: 4,
                    deformation_dim: 4,
                    hidden_width: 16,
                    n_layers: 8,
                    skip_layer: 4,
                },
                seed: 41,
                checkpoint_every: 0,
                ..crate::trainer::TrainConfig::default()
            };
            let (state, _) = crate::trainer::train(&dataset, &cfg).unwrap();
            (state.model, dataset)
        })
    }

    fn sphere_cloud(n: usize, radius: f64, seed: u64) -> OrientedPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for _ in 0..n {
            let v: Vector3<f64> = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() < 1e-6 {
                continue;
            }
            let d = v / v.norm();
            points.push(radius * d);
            normals.push(d);
        }
        OrientedPointCloud { points, normals }
    }

    fn fast_config(iterations: usize, seed: u64) -> ReconConfig {
        ReconConfig {
            iterations,
            sampler: SamplerConfig::desk(32),
            seed,
            ..ReconConfig::default()
        }
    }

    #[test]
    fn zero_iterations_returns_zero_codes_and_initial_loss() {
        let model = tiny_field();
        let cloud = sphere_cloud(64, 0.4, 1);
        let result = reconstruct_single(&model, &cloud, &fast_config(0, 2)).unwrap();
        assert!(result.z_i.iter().all(|&z| z == 0.0));
        assert!(result.z_d[0].iter().all(|&z| z == 0.0));
        assert!(result.report.total.is_finite());
        assert!(result.trace.is_empty());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let model = tiny_field();
        let cloud = sphere_cloud(64, 0.4, 3);
        let cfg = fast_config(20, 4);
        let a = reconstruct_single(&model, &cloud, &cfg).unwrap();
        let b = reconstruct_single(&model, &cloud, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn joint_of_one_equals_single() {
        let model = tiny_field();
        let cloud = sphere_cloud(64, 0.4, 5);
        let cfg = fast_config(15, 6);
        let single = reconstruct_single(&model, &cloud, &cfg).unwrap();
        let joint = reconstruct_joint(&model, &[cloud], &cfg).unwrap();
        assert_eq!(single, joint);
    }

    #[test]
    fn joint_is_permutation_symmetric() {
        let model = tiny_field();
        let a = sphere_cloud(64, 0.35, 7);
        let b = sphere_cloud(64, 0.45, 8);
        let cfg = fast_config(15, 9);
        let fwd = reconstruct_joint(&model, &[a.clone(), b.clone()], &cfg).unwrap();
        let rev = reconstruct_joint(&model, &[b, a], &cfg).unwrap();
        assert_eq!(fwd.z_i, rev.z_i);
        assert_eq!(fwd.z_d[0], rev.z_d[1]);
        assert_eq!(fwd.z_d[1], rev.z_d[0]);
    }

    #[test]
    fn conditioned_identity_is_bit_equal_and_dims_checked() {
        let model = tiny_field();
        let cloud = sphere_cloud(64, 0.4, 10);
        let frozen = vec![0.25, -0.5, 0.125, 0.0625];
        let cfg = fast_config(12, 11);
        let result = reconstruct_conditioned(&model, &cloud, &frozen, &cfg).unwrap();
        assert_eq!(result.z_i, frozen);

        let zero_iter = reconstruct_conditioned(&model, &cloud, &frozen, &fast_config(0, 11))
            .unwrap();
        assert!(zero_iter.z_d[0].iter().all(|&z| z == 0.0));

        let err = reconstruct_conditioned(&model, &cloud, &[0.0; 3], &cfg).unwrap_err();
        assert!(matches!(err, ReconError::DimMismatch { expected: 4, got: 3 }));
    }

    #[test]
    fn optimization_descends() {
        let (model, dataset) = trained();
        let cloud = &dataset.shapes[0].cloud;
        let init = reconstruct_single(model, cloud, &fast_config(0, 13)).unwrap();
        let out = reconstruct_single(model, cloud, &fast_config(200, 13)).unwrap();
        assert!(out.report.total <= init.report.total);
        let lead: f64 = out.trace[..100].iter().sum::<f64>() / 100.0;
        let trail: f64 = out.trace[100..].iter().sum::<f64>() / 100.0;
        assert!(trail <= lead, "leading mean {lead}, trailing mean {trail}");
    }

    #[test]
    fn canonical_cloud_with_identity_init_keeps_pose() {
        let (model, dataset) = trained();
        let cloud = &dataset.shapes[1].cloud;
        let cfg = fast_config(30, 15);
        // The identity pose is already optimal for a canonical cloud; the
        // joint optimization must not walk away from it.
        let result =
            reconstruct_posed_with_pose(model, cloud, RigidPose::identity(), &cfg).unwrap();
        let pose = result.pose.unwrap();
        assert!(
            geodesic_angle(&pose.rotation, &RotationMatrix::identity()) < 2.0,
            "drifted {} degrees",
            geodesic_angle(&pose.rotation, &RotationMatrix::identity())
        );
        assert!(pose.translation.norm() < 0.05, "drifted {}", pose.translation.norm());
    }

    #[test]
    fn frozen_gt_pose_matches_canonical_reconstruction() {
        let model = tiny_field();
        let canonical = sphere_cloud(64, 0.4, 16);
        let rot = sample_uniform_rotations(1, 17).pop().unwrap();
        let pose_wc = RigidPose::new(rot, Vector3::new(0.3, -0.2, 0.5));
        let pose_cw = pose_wc.inverse();
        let world = apply_pose(&pose_wc, &canonical);
        let transformed = apply_pose(&pose_cw, &world);

        let mut cfg = fast_config(25, 18);
        cfg.freeze_pose = true;
        let posed =
            reconstruct_posed_with_pose(&model, &world, pose_cw.clone(), &cfg).unwrap();
        let canonical_run = reconstruct_single(&model, &transformed, &cfg).unwrap();
        assert_eq!(posed.z_i, canonical_run.z_i);
        assert_eq!(posed.z_d, canonical_run.z_d);
        assert_eq!(posed.report, canonical_run.report);
        assert_eq!(posed.pose.unwrap().translation, pose_cw.translation);
    }

    #[test]
    fn tracking_warm_starts_and_freezes_identity() {
        let model = tiny_field();
        let cloud = sphere_cloud(64, 0.45, 19);
        let clouds = vec![cloud.clone(), cloud.clone(), cloud];
        let mut track = TrackConfig::new(fast_config(40, 20), RotationInit::Identity);
        track.warm_iterations = 8;
        track.freeze_identity_after = Some(1);
        let results = track_sequence(&model, &clouds, &track).unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].iterations, 40);
        assert_eq!(results[1].iterations, 8);
        assert_eq!(results[2].iterations, 8);
        for r in &results {
            assert!(r.pose.is_some());
        }
        // Identity frozen after frame 0: later frames keep frame 0's code.
        assert_eq!(results[1].z_i, results[0].z_i);
        assert_eq!(results[2].z_i, results[0].z_i);
    }

    #[test]
    fn recon_record_serializes_pose_row_major() {
        let model = tiny_field();
        let cloud = sphere_cloud(64, 0.5, 21);
        let result =
            reconstruct_posed(&model, &cloud, &RotationInit::Identity, &fast_config(2, 22))
                .unwrap();
        let record = ReconRecord::from(&result);
        let pose = result.pose.unwrap();
        let m = pose.rotation.matrix();
        let rot = record.rotation.unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(rot[r][c], m[(r, c)]);
            }
        }
        assert_eq!(record.iterations, 2);
        serde_json::to_string(&record).unwrap();
    }
}
