//! Full-pipeline acceptance gate. Runs every check sequentially against one
//! shared desk-scale training run and prints one PASS/FAIL line per
//! criterion. Run with `--nocapture` to watch progress; the whole suite is
//! CPU-bound and takes tens of minutes single-threaded.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diform_core::field::{init_model, FieldConfig, FieldModel, LatentPair};
use diform_core::geometry::{
    apply_pose, exp_so3, geodesic_angle, log_so3, rotation_from_6d, sample_uniform_rotations,
    RigidPose, RotationMatrix,
};
use diform_core::meshing::{eval_sdf_grid, extract_mesh, marching_cubes};
use diform_core::metrics::{chamfer_report, relative_pose_error, sample_mesh_surface};
use diform_core::objective::{
    energy_gradients, total_energy, DecodedField, LossWeights, SdfField, WrtMask,
};
use diform_core::pose_init::{
    centroid_translation, policy_gradient_init, posenet_predict, train_posenet, PgConfig,
    PoseNetTrainConfig,
};
use diform_core::reconstructor::{
    reconstruct_conditioned, reconstruct_posed_with_pose, reconstruct_single, track_sequence,
    ReconConfig, ReconResult, RotationInit, TrackConfig,
};
use diform_core::sampling::{make_batch, OrientedPointCloud, SampleBatch, SamplerConfig};
use diform_core::synth::{
    analytic_sdf_gradient, make_dataset, make_sequence, script_deformation, stream_seed,
    subject_identity, MotionPath,
};
use diform_core::trainer::{init_state, train_epochs, Dataset, TrainConfig, TrainState};

const SEED: u64 = 5;
/// Canonical-box diagonal used as the Chamfer normalizer.
const DIAG: f64 = 3.464_101_615_137_754_6;

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ------------------------------------------------------------ criterion 1

fn random_small_config(rng: &mut ChaCha8Rng) -> FieldConfig {
    let n_layers = rng.gen_range(4..7);
    FieldConfig {
        hidden_width: *[8usize, 12, 16].get(rng.gen_range(0..3)).unwrap(),
        pe_bands: rng.gen_range(2..4),
        identity_dim: rng.gen_range(2..5),
        deformation_dim: rng.gen_range(2..5),
        n_layers,
        skip_layer: rng.gen_range(1..n_layers),
    }
}

fn gradients_match_fd() -> Result<(), String> {
    let t0 = Instant::now();
    let weights = LossWeights::default();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for case in 0..20 {
        let cfg = random_small_config(&mut rng);
        let mut model = init_model(&cfg, rng.gen());
        for p in model.params.iter_mut() {
            *p += 0.05 * gauss(&mut rng);
        }
        let codes = LatentPair {
            z_i: (0..cfg.identity_dim).map(|_| 0.3 * gauss(&mut rng)).collect(),
            z_d: (0..cfg.deformation_dim).map(|_| 0.3 * gauss(&mut rng)).collect(),
        };
        let surface: Vec<(Vector3<f64>, Vector3<f64>)> = (0..6)
            .map(|_| {
                let p = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * 0.4;
                let n = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng));
                (p, n / n.norm().max(1e-9))
            })
            .collect();
        let offsurface: Vec<Vector3<f64>> = (0..4)
            .map(|_| Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * 0.6)
            .collect();
        let batch = SampleBatch { surface, offsurface };
        let pose = RigidPose::new(
            exp_so3(&Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng))),
            Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * 0.2,
        );
        let with_pose = case % 2 == 0;
        let pose_opt = if with_pose { Some(&pose) } else { None };
        let bundle = energy_gradients(&model, &codes, &batch, &weights, pose_opt, WrtMask::all())
            .map_err(|e| format!("case {case}: {e}"))?;

        let energy = |m: &FieldModel, c: &LatentPair, p: Option<&RigidPose>| {
            let f = DecodedField { model: m, codes: c };
            total_energy(&f, c, &batch, &weights, p).unwrap().total
        };
        let check = |tag: &str, exact: f64, fd: f64| -> Result<(), String> {
            let rel = (exact - fd).abs() / fd.abs().max(1e-6);
            if rel < 1e-4 {
                Ok(())
            } else {
                Err(format!("case {case} {tag}: exact {exact} fd {fd} rel {rel:.2e}"))
            }
        };

        let zi = bundle.z_i.as_ref().unwrap();
        for k in 0..cfg.identity_dim {
            let mut cp = codes.clone();
            cp.z_i[k] += h;
            let mut cm = codes.clone();
            cm.z_i[k] -= h;
            let fd = (energy(&model, &cp, pose_opt) - energy(&model, &cm, pose_opt)) / (2.0 * h);
            check("z_i", zi[k], fd)?;
        }
        let zd = bundle.z_d.as_ref().unwrap();
        for k in 0..cfg.deformation_dim {
            let mut cp = codes.clone();
            cp.z_d[k] += h;
            let mut cm = codes.clone();
            cm.z_d[k] -= h;
            let fd = (energy(&model, &cp, pose_opt) - energy(&model, &cm, pose_opt)) / (2.0 * h);
            check("z_d", zd[k], fd)?;
        }
        let gp = bundle.params.as_ref().unwrap();
        let step = (model.params.len() / 12).max(1);
        for i in (0..model.params.len()).step_by(step) {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let lp = energy(&model, &codes, pose_opt);
            model.params[i] = orig - h;
            let lm = energy(&model, &codes, pose_opt);
            model.params[i] = orig;
            check("params", gp[i], (lp - lm) / (2.0 * h))?;
        }
        if with_pose {
            let gt = bundle.translation.unwrap();
            let gw = bundle.rotation.unwrap();
            for d in 0..3 {
                let mut pp = pose;
                pp.translation[d] += h;
                let mut pm = pose;
                pm.translation[d] -= h;
                let fd =
                    (energy(&model, &codes, Some(&pp)) - energy(&model, &codes, Some(&pm)))
                        / (2.0 * h);
                check("translation", gt[d], fd)?;

                let mut dw = Vector3::zeros();
                dw[d] = h;
                let rp = RigidPose::new(pose.rotation.compose(&exp_so3(&dw)), pose.translation);
                dw[d] = -h;
                let rm = RigidPose::new(pose.rotation.compose(&exp_so3(&dw)), pose.translation);
                let fd =
                    (energy(&model, &codes, Some(&rp)) - energy(&model, &codes, Some(&rm)))
                        / (2.0 * h);
                check("rotation", gw[d], fd)?;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs > 60.0 {
        return Err(format!("finite-difference sweep took {secs:.1}s (> 60s)"));
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 2

fn geometry_algebra() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for i in 0..1000 {
        let dir = {
            let v = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng));
            v / v.norm().max(1e-12)
        };
        let omega = dir * rng.gen_range(1e-6..std::f64::consts::PI - 1e-3);
        let back = log_so3(&exp_so3(&omega));
        if (back - omega).norm() > 1e-9 {
            return Err(format!("exp/log trip {i}: error {:.2e}", (back - omega).norm()));
        }
    }
    let rots = sample_uniform_rotations(1000, 82);
    for (i, r) in rots.iter().enumerate() {
        let m = r.matrix();
        let six = [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]];
        let rr = rotation_from_6d(&six).map_err(|e| e.to_string())?;
        let err = (rr.matrix() - m).norm();
        if err > 1e-9 {
            return Err(format!("6d idempotence {i}: error {err:.2e}"));
        }
    }
    let pairs = sample_uniform_rotations(2000, 83);
    for (i, pair) in pairs.chunks(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let ours = geodesic_angle(a, b);
        let qa = nalgebra::UnitQuaternion::from_matrix(a.matrix());
        let qb = nalgebra::UnitQuaternion::from_matrix(b.matrix());
        let oracle = qa.angle_to(&qb);
        if (ours - oracle).abs() > 1e-6 {
            return Err(format!("geodesic {i}: {ours} vs quaternion {oracle}"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 3

struct UnitSphere;
impl SdfField for UnitSphere {
    fn eval_batch(&self, points: &[Vector3<f64>]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let vals = points.iter().map(|p| p.norm() - 1.0).collect();
        let grads = points.iter().map(|p| p / p.norm().max(1e-12)).collect();
        (vals, grads)
    }
}

struct PlaneZ(f64);
impl SdfField for PlaneZ {
    fn eval_batch(&self, points: &[Vector3<f64>]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        (points.iter().map(|p| p.z - self.0).collect(),
         points.iter().map(|_| Vector3::new(0.0, 0.0, 1.0)).collect())
    }
}

fn loss_oracles() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let surface: Vec<(Vector3<f64>, Vector3<f64>)> = (0..200)
        .map(|_| {
            let v = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng));
            let n = v / v.norm().max(1e-12);
            (n, n)
        })
        .collect();
    let offsurface: Vec<Vector3<f64>> = (0..100)
        .map(|_| Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * 0.8)
        .collect();
    let batch = SampleBatch { surface, offsurface };
    let codes = LatentPair { z_i: vec![0.0], z_d: vec![0.0] };
    let report = total_energy(&UnitSphere, &codes, &batch, &LossWeights::default(), None)
        .map_err(|e| e.to_string())?;
    if report.surface_sdf >= 1e-8 || report.eikonal >= 1e-8 {
        return Err(format!(
            "unit sphere: surface {:.2e} eikonal {:.2e}",
            report.surface_sdf, report.eikonal
        ));
    }

    // Blended capsule field: eikonal residual near the surface.
    let id = subject_identity(SEED, 1);
    let def = script_deformation(SEED, 2);
    let cloud = diform_core::synth::make_shape(&id, &def, 600, 17).map_err(|e| e.to_string())?;
    let mut residual = 0.0;
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let q = p + n * (0.01 * gauss(&mut rng));
        let g = analytic_sdf_gradient(&id, &def, &q);
        residual += (g.norm() - 1.0).abs();
    }
    residual /= cloud.points.len() as f64;
    if residual >= 0.05 {
        return Err(format!("blended-field eikonal residual {residual:.4} >= 0.05"));
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 4

fn marching_cubes_oracles() -> Result<(), String> {
    let res = 64;
    let lo = Vector3::new(-1.2, -1.2, -1.2);
    let hi = Vector3::new(1.2, 1.2, 1.2);
    let grid = eval_sdf_grid(&UnitSphere, (lo, hi), res).map_err(|e| e.to_string())?;
    let mesh = marching_cubes(&grid, 0.0).map_err(|e| e.to_string())?;
    if mesh.vertices.is_empty() {
        return Err("sphere mesh empty".into());
    }
    let voxel_diag = (2.4 / (res - 1) as f64) * 3f64.sqrt();
    for v in &mesh.vertices {
        if (v.norm() - 1.0).abs() > voxel_diag {
            return Err(format!("sphere vertex radial error {:.4} > {voxel_diag:.4}",
                (v.norm() - 1.0).abs()));
        }
    }
    let grid = eval_sdf_grid(&PlaneZ(0.25), (lo, hi), 16).map_err(|e| e.to_string())?;
    let mesh = marching_cubes(&grid, 0.0).map_err(|e| e.to_string())?;
    if mesh.vertices.is_empty() {
        return Err("plane mesh empty".into());
    }
    for v in &mesh.vertices {
        if (v.z - 0.25).abs() > 1e-9 {
            return Err(format!("plane vertex z error {:.2e}", (v.z - 0.25).abs()));
        }
    }
    Ok(())
}

// -------------------------------------------------- shared trained model

struct Trained {
    state: TrainState,
    dataset: Dataset,
    epoch1_total: f64,
    final_total: f64,
    train_secs: f64,
}

fn train_shared() -> Trained {
    let (dataset, _) = make_dataset(6, 6, 4000, SEED).unwrap();
    let mut cfg = TrainConfig {
        sampler: SamplerConfig::desk(256),
        seed: SEED,
        ..TrainConfig::desk()
    };
    let t0 = Instant::now();
    let mut state = init_state(&dataset, &cfg).unwrap();
    let mut epoch1 = f64::NAN;
    let mut last = f64::NAN;
    let mut cb = |log: &diform_core::trainer::EpochLog| {
        if log.epoch == 1 {
            epoch1 = log.mean.total;
        }
        last = log.mean.total;
        if log.epoch % 50 == 0 {
            println!("  [train] epoch {} mean total {:.4}", log.epoch, log.mean.total);
        }
    };
    cfg.learning_rate = 5e-4;
    train_epochs(&mut state, &dataset, &cfg, 150, |_, l| {
        cb(l);
        Ok(())
    })
    .unwrap();
    cfg.learning_rate = 1e-4;
    train_epochs(&mut state, &dataset, &cfg, 200, |_, l| {
        cb(l);
        Ok(())
    })
    .unwrap();
    Trained {
        state,
        dataset,
        epoch1_total: epoch1,
        final_total: last,
        train_secs: t0.elapsed().as_secs_f64(),
    }
}

fn recon_config(iterations: usize) -> ReconConfig {
    ReconConfig {
        iterations,
        sampler: SamplerConfig::desk(128),
        seed: 23,
        ..ReconConfig::desk()
    }
}

/// Samples the reconstructed surface and reports symmetric Chamfer against a
/// reference cloud, both in the reference's coordinate frame.
fn recon_cd(
    model: &FieldModel,
    result: &ReconResult,
    reference: &OrientedPointCloud,
) -> Result<f64, String> {
    let codes = LatentPair { z_i: result.z_i.clone(), z_d: result.z_d[0].clone() };
    // Mesh in canonical space, bounded by the observation mapped there.
    let canonical: Vec<Vector3<f64>> = match &result.pose {
        Some(p) => reference.points.iter().map(|x| p.apply_point(x)).collect(),
        None => reference.points.clone(),
    };
    let (mut lo, mut hi) = (canonical[0], canonical[0]);
    for v in &canonical {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let m = Vector3::repeat((hi - lo).norm() * 0.08);
    let mesh = extract_mesh(model, &codes, 48, Some((lo - m, hi + m)))
        .map_err(|e| e.to_string())?;
    if mesh.is_empty() {
        return Err("empty reconstruction mesh".into());
    }
    let mut pts = sample_mesh_surface(&mesh, 4000, 7).map_err(|e| e.to_string())?;
    if let Some(p) = &result.pose {
        let back = p.inverse();
        for q in pts.iter_mut() {
            *q = back.apply_point(q);
        }
    }
    Ok(chamfer_report(&pts, &reference.points).map_err(|e| e.to_string())?.cd_sym)
}

// ------------------------------------------------------------ criterion 5

fn desk_training(tr: &Trained) -> Result<(), String> {
    if tr.train_secs > 30.0 * 60.0 {
        return Err(format!("training took {:.0}s (> 30 min)", tr.train_secs));
    }
    if !(tr.final_total < 0.25 * tr.epoch1_total) {
        return Err(format!(
            "final mean total {:.3} not < 25% of epoch-1 {:.3}",
            tr.final_total, tr.epoch1_total
        ));
    }
    // Held-out same-subject deformation, identity code frozen.
    let id = subject_identity(SEED, 2);
    let kf = [script_deformation(SEED, 40), script_deformation(SEED, 41)];
    let held = make_sequence(&id, &kf, 1, None, &tr.dataset.frame, 4000, 999)
        .map_err(|e| e.to_string())?
        .remove(0);
    let z_i = tr.state.codes.identity.get("s002").unwrap().clone();
    let r = reconstruct_conditioned(&tr.state.model, &held.cloud_world, &z_i, &recon_config(300))
        .map_err(|e| e.to_string())?;
    let cd = recon_cd(&tr.state.model, &r, &held.cloud_world)?;
    println!("  [c5] held-out conditioned CD {:.4} ({:.2}% of diagonal)", cd, 100.0 * cd / DIAG);
    if cd >= 0.02 * DIAG {
        return Err(format!("held-out CD {:.2}% of diagonal >= 2%", 100.0 * cd / DIAG));
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 6

fn nearest_code<'a, I>(query: &[f64], bank: I) -> Option<&'a str>
where
    I: Iterator<Item = (&'a str, &'a Vec<f64>)>,
{
    let mut best: Option<(&str, f64)> = None;
    for (name, code) in bank {
        let d: f64 = query.iter().zip(code).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((name, d));
        }
    }
    best.map(|(n, _)| n)
}

fn disentanglement_swaps(tr: &Trained) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let cfg = recon_config(200);
    let mut hits = 0;
    let trials = 20;
    for t in 0..trials {
        let si = rng.gen_range(0..6);
        let di = rng.gen_range(0..6);
        let id = subject_identity(SEED, si);
        let kf = [script_deformation(SEED, di), script_deformation(SEED, di + 1)];
        let cloud = make_sequence(&id, &kf, 1, None, &tr.dataset.frame, 4000, 5000 + t)
            .map_err(|e| e.to_string())?
            .remove(0)
            .cloud_world;
        let r = reconstruct_single(&tr.state.model, &cloud, &cfg).map_err(|e| e.to_string())?;
        let id_nn = nearest_code(
            &r.z_i,
            tr.state.codes.identity.iter().map(|(k, v)| (k.as_str(), v)),
        )
        .unwrap()
        .to_string();
        let keys: Vec<(String, &Vec<f64>)> = tr
            .state
            .codes
            .deformation
            .iter()
            .map(|((s, d), v)| (format!("{s}/{d}"), v))
            .collect();
        let def_nn = nearest_code(&r.z_d[0], keys.iter().map(|(k, v)| (k.as_str(), *v)))
            .unwrap()
            .to_string();
        let want_id = format!("s{si:03}");
        let want_def = format!("s{si:03}/d{di:03}");
        if id_nn == want_id && def_nn == want_def {
            hits += 1;
        } else {
            println!("  [c6] trial {t}: got {id_nn} / {def_nn}, wanted {want_id} / {want_def}");
        }
    }
    println!("  [c6] {hits}/{trials} swaps matched their training codes");
    if hits * 5 < trials * 4 {
        return Err(format!("{hits}/{trials} < 80%"));
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 7

fn pg_config() -> PgConfig {
    PgConfig {
        n_actions: 1500,
        samples_per_iter: 150,
        inner_shape_steps: 1,
        eval_points: 24,
        max_iters: 40,
        ..PgConfig::desk()
    }
}

fn pose_pipeline(tr: &Trained) -> Result<(), String> {
    let n = 30;
    let rots = sample_uniform_rotations(n, 777);
    let mut rng = ChaCha8Rng::seed_from_u64(778);
    let zero = LatentPair::zeros(&tr.state.model.config);
    let cfg = recon_config(150);
    let mut pg_hits = 0;
    let mut rpes = Vec::new();
    let mut cds = Vec::new();
    let mut cases = Vec::new();
    for (i, r) in rots.iter().enumerate() {
        let shape = &tr.dataset.shapes[(i * 7) % tr.dataset.shapes.len()];
        let t = Vector3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        );
        let pose_wc = RigidPose::new(r.clone(), t);
        let world = apply_pose(&pose_wc, &shape.cloud);
        let gt_cw = pose_wc.inverse();
        let (rot, _) =
            policy_gradient_init(&tr.state.model, &zero, &world, &pg_config(), 1000 + i as u64)
                .map_err(|e| e.to_string())?;
        let init_err = geodesic_angle(&rot, &gt_cw.rotation).to_degrees();
        if init_err < 20.0 {
            pg_hits += 1;
        }
        let pose0 = RigidPose::new(rot.clone(), centroid_translation(&rot, &world));
        let res = reconstruct_posed_with_pose(&tr.state.model, &world, pose0, &cfg)
            .map_err(|e| e.to_string())?;
        let (deg, _) = relative_pose_error(res.pose.as_ref().unwrap(), &gt_cw);
        let cd = recon_cd(&tr.state.model, &res, &world)?;
        println!("  [c7] shape {i}: pg init {init_err:.1} deg, final rpe {deg:.2} deg, world CD {:.2}%",
            100.0 * cd / DIAG);
        rpes.push(deg);
        cds.push(cd);
        cases.push((world, gt_cw));
    }
    println!("  [c7] pg within 20 deg: {pg_hits}/{n}");
    let med_rpe = median(&mut rpes.clone());
    let med_cd = median(&mut cds.clone());
    println!("  [c7] median rpe {med_rpe:.2} deg, median world CD {:.2}%", 100.0 * med_cd / DIAG);
    if pg_hits * 10 < n * 9 {
        return Err(format!("pg hits {pg_hits}/{n} < 90%"));
    }
    if med_rpe >= 10.0 {
        return Err(format!("median rpe {med_rpe:.2} >= 10 deg"));
    }
    if med_cd >= 0.02 * DIAG {
        return Err(format!("median world CD {:.2}% >= 2%", 100.0 * med_cd / DIAG));
    }
    // GT-pose init must strictly beat identity init in final CD.
    let (mut cd_gt, mut cd_id) = (0.0, 0.0);
    for (world, gt_cw) in cases.iter().take(10) {
        let res = reconstruct_posed_with_pose(&tr.state.model, world, *gt_cw, &cfg)
            .map_err(|e| e.to_string())?;
        cd_gt += recon_cd(&tr.state.model, &res, world)?;
        let rid = RotationMatrix::identity();
        let pose0 = RigidPose::new(rid.clone(), centroid_translation(&rid, world));
        let res = reconstruct_posed_with_pose(&tr.state.model, world, pose0, &cfg)
            .map_err(|e| e.to_string())?;
        cd_id += recon_cd(&tr.state.model, &res, world)?;
    }
    println!("  [c7] mean final CD over 10 shapes: gt-init {:.4}, identity-init {:.4}",
        cd_gt / 10.0, cd_id / 10.0);
    if !(cd_gt < cd_id) {
        return Err(format!("gt-init CD {cd_gt:.4} not strictly below identity-init {cd_id:.4}"));
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 8

fn posenet(tr: &Trained) -> Result<(), String> {
    let cfg = PoseNetTrainConfig {
        mesh_resolution: 16,
        seed: 31,
        ..PoseNetTrainConfig::desk()
    };
    let (net, losses) =
        train_posenet(&tr.state.model, &tr.dataset, &cfg).map_err(|e| e.to_string())?;
    println!("  [c8] posenet loss {:.3} -> {:.3}", losses[0], losses[losses.len() - 1]);
    let zero = LatentPair::zeros(&tr.state.model.config);
    let mesh =
        extract_mesh(&tr.state.model, &zero, 24, None).map_err(|e| e.to_string())?;
    let reference = sample_mesh_surface(&mesh, 256, 5).map_err(|e| e.to_string())?;
    let rots = sample_uniform_rotations(20, 900);
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let mut errs = Vec::new();
    for (i, r) in rots.iter().enumerate() {
        let shape = &tr.dataset.shapes[(i * 11) % tr.dataset.shapes.len()];
        let t = Vector3::new(
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        );
        let world = apply_pose(&RigidPose::new(r.clone(), t), &shape.cloud);
        let est = posenet_predict(&net, &world, &reference).map_err(|e| e.to_string())?;
        let (deg, _) =
            relative_pose_error(&est, &RigidPose::new(r.clone(), t).inverse());
        errs.push(deg);
    }
    let med = median(&mut errs);
    println!("  [c8] validation median rpe {med:.1} deg");
    if med >= 15.0 {
        return Err(format!("validation median rpe {med:.1} >= 15 deg"));
    }
    // Permutation invariance of the encoder, bit-exact through prediction.
    let world = apply_pose(
        &RigidPose::new(rots[3].clone(), Vector3::new(0.1, -0.2, 0.05)),
        &tr.dataset.shapes[0].cloud,
    );
    let mut permuted = world.clone();
    permuted.points.reverse();
    permuted.normals.reverse();
    let a = posenet_predict(&net, &world, &reference).map_err(|e| e.to_string())?;
    let b = posenet_predict(&net, &permuted, &reference).map_err(|e| e.to_string())?;
    let bits = |p: &RigidPose| {
        let mut v: Vec<u64> = p.rotation.matrix().iter().map(|x| x.to_bits()).collect();
        v.extend(p.translation.iter().map(|x| x.to_bits()));
        v
    };
    if bits(&a) != bits(&b) {
        return Err("encoder output changed under input permutation".into());
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 9

fn tracking(tr: &Trained) -> Result<(), String> {
    let id = subject_identity(SEED, 1);
    let kf = [
        script_deformation(SEED, 1),
        script_deformation(SEED, 2),
        script_deformation(SEED, 3),
    ];
    let motion = MotionPath {
        angular_velocity: Vector3::new(0.25, 0.4, -0.2),
        linear_velocity: Vector3::new(0.15, -0.1, 0.1),
    };
    let frames = make_sequence(&id, &kf, 20, Some(motion), &tr.dataset.frame, 3000,
        stream_seed(SEED, "accept-seq", 0))
        .map_err(|e| e.to_string())?;
    let clouds: Vec<OrientedPointCloud> =
        frames.iter().map(|f| f.cloud_world.clone()).collect();
    let track = TrackConfig {
        warm_iterations: 60,
        ..TrackConfig::new(
            recon_config(150),
            RotationInit::PolicyGradient(pg_config()),
        )
    };
    let results = track_sequence(&tr.state.model, &clouds, &track).map_err(|e| e.to_string())?;

    let weights = LossWeights::default();
    let mut rpes = Vec::new();
    let mut cds = Vec::new();
    let mut warm_wins = 0;
    for (t, (res, frame)) in results.iter().zip(&frames).enumerate() {
        let (deg, _) = relative_pose_error(res.pose.as_ref().unwrap(), &frame.pose_cw);
        let cd = recon_cd(&tr.state.model, res, &frame.cloud_world)?;
        rpes.push(deg);
        cds.push(cd);
        if t > 0 {
            let batch = make_batch(&clouds[t], &SamplerConfig::desk(128), 4200 + t as u64)
                .map_err(|e| e.to_string())?;
            let prev = &results[t - 1];
            let warm_codes =
                LatentPair { z_i: prev.z_i.clone(), z_d: prev.z_d[0].clone() };
            let warm_field = DecodedField { model: &tr.state.model, codes: &warm_codes };
            let warm = total_energy(&warm_field, &warm_codes, &batch, &weights,
                prev.pose.as_ref())
                .map_err(|e| e.to_string())?
                .total;
            let zero = LatentPair::zeros(&tr.state.model.config);
            let rid = RotationMatrix::identity();
            let cold_pose = RigidPose::new(rid.clone(), centroid_translation(&rid, &clouds[t]));
            let cold_field = DecodedField { model: &tr.state.model, codes: &zero };
            let cold = total_energy(&cold_field, &zero, &batch, &weights, Some(&cold_pose))
                .map_err(|e| e.to_string())?
                .total;
            if warm < cold {
                warm_wins += 1;
            }
        }
        println!("  [c9] frame {t}: rpe {deg:.2} deg, CD {:.2}%", 100.0 * cd / DIAG);
    }
    let med_rpe = median(&mut rpes);
    let med_cd = median(&mut cds);
    println!("  [c9] median rpe {med_rpe:.2} deg, median CD {:.2}%, warm wins {warm_wins}/19",
        100.0 * med_cd / DIAG);
    if med_rpe >= 5.0 {
        return Err(format!("median rpe {med_rpe:.2} >= 5 deg"));
    }
    if med_cd >= 0.02 * DIAG {
        return Err(format!("median CD {:.2}% >= 2%", 100.0 * med_cd / DIAG));
    }
    if warm_wins * 10 < 19 * 9 {
        return Err(format!("warm-start cheaper on only {warm_wins}/19 frames"));
    }
    Ok(())
}

// ----------------------------------------------------------- criterion 10

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_diform"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("diform {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            if e.path().is_dir() {
                stack.push(e.path());
            } else {
                let rel = e.path().strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(e.path()).unwrap()));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

fn cli_determinism() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let train_cfg = root.join("train.cfg");
    std::fs::write(
        &train_cfg,
        "epochs = 2\nbatch_size = 4\nlearning_rate = 5e-4\nsampler.n_surface = 24\n\
         sampler.n_offsurface = 8\nfield.hidden_width = 16\nfield.pe_bands = 2\n\
         field.identity_dim = 4\nfield.deformation_dim = 4\n",
    )
    .map_err(|e| e.to_string())?;
    let recon_cfg = root.join("recon.cfg");
    std::fs::write(
        &recon_cfg,
        "iterations = 6\nsampler.n_surface = 24\nsampler.n_offsurface = 8\n\
         track.warm_iterations = 3\npg.n_actions = 8\npg.samples_per_iter = 4\n\
         pg.inner_shape_steps = 1\npg.eval_points = 12\npg.max_iters = 3\n",
    )
    .map_err(|e| e.to_string())?;
    let pn_cfg = root.join("pn.cfg");
    std::fs::write(&pn_cfg, "epochs = 2\npoints = 16\nmesh_resolution = 10\n")
        .map_err(|e| e.to_string())?;

    for rep in ["a", "b"] {
        let r = root.join(rep);
        let d = r.join("data");
        let ds = d.to_str().unwrap();
        run_cli(&["synth", "--subjects", "2", "--deforms", "2", "--points", "120",
            "--frames", "2", "--seed", "9", "--out", ds])?;
        let run = r.join("run");
        run_cli(&["train", "--data", ds, "--config", train_cfg.to_str().unwrap(),
            "--seed", "11", "--out", run.to_str().unwrap()])?;
        let ck = run.join("checkpoint.bin");
        let cks = ck.to_str().unwrap();
        run_cli(&["mesh", "--checkpoint", cks, "--resolution", "12", "--out",
            r.join("mesh.obj").to_str().unwrap()])?;
        run_cli(&["reconstruct", "--checkpoint", cks, "--input",
            d.join("s000_d000.ply").to_str().unwrap(), "--config",
            recon_cfg.to_str().unwrap(), "--mesh-resolution", "10", "--out",
            r.join("rec").to_str().unwrap()])?;
        run_cli(&["reconstruct", "--checkpoint", cks, "--input",
            d.join("seq_000.ply").to_str().unwrap(), "--mode", "posed", "--init", "pg",
            "--config", recon_cfg.to_str().unwrap(), "--out",
            r.join("recp").to_str().unwrap()])?;
        run_cli(&["track", "--checkpoint", cks, "--input",
            d.join("seq_000.ply").to_str().unwrap(),
            d.join("seq_001.ply").to_str().unwrap(), "--config",
            recon_cfg.to_str().unwrap(), "--out", r.join("trk").to_str().unwrap()])?;
        run_cli(&["train-posenet", "--checkpoint", cks, "--data", ds, "--config",
            pn_cfg.to_str().unwrap(), "--seed", "13", "--out",
            r.join("pn").to_str().unwrap()])?;
        run_cli(&["interp", "--checkpoint", cks, "--subject-a", "s000", "--sample-a",
            "d000", "--subject-b", "s001", "--sample-b", "d001", "--steps", "2",
            "--resolution", "10", "--out", r.join("interp").to_str().unwrap()])?;
        run_cli(&["eval", "--recon", r.join("rec/recon_0.obj").to_str().unwrap(),
            "--gt", d.join("s000_d000.ply").to_str().unwrap(), "--id", "x",
            "--samples", "200", "--out", r.join("eval.csv").to_str().unwrap()])?;
    }
    let a = tree_bytes(&root.join("a"));
    let b = tree_bytes(&root.join("b"));
    if a.len() != b.len() {
        return Err(format!("file count differs: {} vs {}", a.len(), b.len()));
    }
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        if na != nb {
            return Err(format!("file set differs: {na} vs {nb}"));
        }
        // Wall-clock columns are the one permitted difference.
        if na.ends_with("train_log.csv") || na.ends_with("posenet_log.csv") {
            continue;
        }
        if ba != bb {
            return Err(format!("{na} differs between identical seeded runs"));
        }
    }
    // Logs must still agree on everything except the timing column.
    for log in ["run/train_log.csv"] {
        let strip = |bytes: &[u8]| -> Vec<String> {
            String::from_utf8_lossy(bytes)
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        let fa = &a.iter().find(|(n, _)| n == log).unwrap().1;
        let fb = &b.iter().find(|(n, _)| n == log).unwrap().1;
        if strip(fa) != strip(fb) {
            return Err(format!("{log} differs beyond the wall-clock column"));
        }
    }
    Ok(())
}

// TEMP calibration entry, remove before finishing.
#[test]
#[ignore]
fn fast_criteria() {
    println!("c1 {:?}", gradients_match_fd());
    println!("c2 {:?}", geometry_algebra());
    println!("c3 {:?}", loss_oracles());
    println!("c4 {:?}", marching_cubes_oracles());
}

// ------------------------------------------------------------------ gate

#[test]
fn acceptance() {
    let mut failures = 0;
    let mut report = |n: usize, what: &str, r: Result<(), String>| {
        match r {
            Ok(()) => println!("criterion {n:>2} ({what}): PASS"),
            Err(e) => {
                failures += 1;
                println!("criterion {n:>2} ({what}): FAIL - {e}");
            }
        }
    };

    report(1, "energy gradients vs finite differences", gradients_match_fd());
    report(2, "rotation algebra round trips", geometry_algebra());
    report(3, "analytic loss oracles", loss_oracles());
    report(4, "marching cubes oracles", marching_cubes_oracles());

    println!("training shared desk-scale model (6x6x4000, width 128, 200 epochs)...");
    let tr = train_shared();
    println!("  [train] {:.0}s, epoch-1 {:.3}, final {:.3}", tr.train_secs, tr.epoch1_total,
        tr.final_total);

    report(5, "desk-scale training and held-out reconstruction", desk_training(&tr));
    report(6, "identity/deformation disentanglement swaps", disentanglement_swaps(&tr));
    report(7, "pose pipeline with policy-gradient init", pose_pipeline(&tr));
    report(8, "pose regressor accuracy and invariance", posenet(&tr));
    report(9, "sequence tracking with warm starts", tracking(&tr));
    report(10, "CLI byte-determinism", cli_determinism());

    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
