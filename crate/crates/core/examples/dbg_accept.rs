use std::time::Instant;

use nalgebra::Vector3;

use diform_core::field::LatentPair;
use diform_core::geometry::{apply_pose, geodesic_angle, sample_uniform_rotations, RigidPose};
use diform_core::metrics::{chamfer_report, relative_pose_error, sample_mesh_surface};
use diform_core::pose_init::{policy_gradient_init, PgConfig};
use diform_core::reconstructor::{
    reconstruct_conditioned, reconstruct_posed_with_pose, ReconConfig,
};
use diform_core::sampling::SamplerConfig;
use diform_core::synth::{
    make_dataset, make_sequence, script_deformation, stream_seed, subject_identity,
};
use diform_core::trainer::{init_state, train_epochs, TrainConfig, TrainState};

const CK: &str = "/tmp/accept_probe.bin";
const SEED: u64 = 5;

fn trained(dataset: &diform_core::trainer::Dataset) -> TrainState {
    if let Ok(state) = diform_core::io::read_checkpoint(std::path::Path::new(CK)) {
        if state.epoch >= 200 {
            println!("loaded cached checkpoint at epoch {}", state.epoch);
            return state;
        }
    }
    let mut cfg = TrainConfig { sampler: SamplerConfig::desk(256), ..TrainConfig::desk() };
    cfg.seed = SEED;
    let t0 = Instant::now();
    let mut state = init_state(dataset, &cfg).unwrap();
    cfg.learning_rate = 1e-3;
    train_epochs(&mut state, dataset, &cfg, 120, |_, log| {
        if log.epoch % 20 == 0 {
            println!("epoch {} total {:.4}", log.epoch, log.mean.total);
        }
        Ok(())
    })
    .unwrap();
    cfg.learning_rate = 2e-4;
    train_epochs(&mut state, dataset, &cfg, 200, |_, log| {
        if log.epoch % 20 == 0 {
            println!("epoch {} total {:.4}", log.epoch, log.mean.total);
        }
        Ok(())
    })
    .unwrap();
    println!("train 200 epochs: {:?}", t0.elapsed());
    diform_core::io::write_checkpoint(std::path::Path::new(CK), &state).unwrap();
    state
}

fn main() {
    let which: String = std::env::args().nth(1).unwrap_or_else(|| "train".into());
    let (dataset, _) = make_dataset(6, 6, 4000, SEED).unwrap();
    let state = trained(&dataset);
    let diag = 2.0 * 3f64.sqrt();

    match which.as_str() {
        "train" => {
            // epoch-1 total was printed; check held-out conditioned recon.
            let id = subject_identity(SEED, 2);
            let kf = [script_deformation(SEED, 40), script_deformation(SEED, 41)];
            let held =
                &make_sequence(&id, &kf, 1, None, &dataset.frame, 4000, 999).unwrap()[0];
            let z_i = state.codes.identity.get("s002").unwrap().clone();
            let rcfg = ReconConfig {
                iterations: 300,
                sampler: SamplerConfig::desk(128),
                ..ReconConfig::desk()
            };
            let t0 = Instant::now();
            let r = reconstruct_conditioned(&state.model, &held.cloud_world, &z_i, &rcfg)
                .unwrap();
            println!("conditioned recon: {:?} loss {:.4}", t0.elapsed(), r.report.total);
            let codes = LatentPair { z_i: r.z_i.clone(), z_d: r.z_d[0].clone() };
            let t0 = Instant::now();
            let mesh =
                diform_core::meshing::extract_mesh(&state.model, &codes, 48, None).unwrap();
            println!("mesh res 48: {:?} verts {}", t0.elapsed(), mesh.vertices.len());
            let pts = sample_mesh_surface(&mesh, 4000, 7).unwrap();
            let cd = chamfer_report(&pts, &held.cloud_world.points).unwrap();
            println!("held-out CD {:.4} ({:.2}% of diag {:.3})", cd.cd_sym,
                100.0 * cd.cd_sym / diag, diag);
            // also check a training shape at its trained codes
            let tc = state.codes.pair("s000", "d003").unwrap();
            let mesh2 = diform_core::meshing::extract_mesh(&state.model, &tc, 48, None).unwrap();
            let pts2 = sample_mesh_surface(&mesh2, 4000, 7).unwrap();
            let cd2 = chamfer_report(&pts2, &dataset.shapes[3].cloud.points).unwrap();
            println!("train-shape CD {:.4} ({:.2}%)", cd2.cd_sym, 100.0 * cd2.cd_sym / diag);
        }
        "pg" => {
            let n: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(5);
            let pg = PgConfig {
                n_actions: 1500,
                samples_per_iter: 150,
                inner_shape_steps: 1,
                eval_points: 24,
                max_iters: 40,
                ..PgConfig::desk()
            };
            let gts = sample_uniform_rotations(n, 777);
            let mut hits = 0;
            for (i, gt_r) in gts.iter().enumerate() {
                let shape = &dataset.shapes[(i * 7) % dataset.shapes.len()];
                let pose_wc = RigidPose::new(gt_r.clone(), Vector3::new(0.1, -0.05, 0.2));
                let world = apply_pose(&pose_wc, &shape.cloud);
                let codes = LatentPair::zeros(&state.model.config);
                let t0 = Instant::now();
                let (rot, stats) =
                    policy_gradient_init(&state.model, &codes, &world, &pg, 1000 + i as u64)
                        .unwrap();
                // estimated pose maps world->canonical: R should equal gt_r^T
                let err = geodesic_angle(&rot, &pose_wc.rotation.transpose()).to_degrees();
                println!(
                    "shape {i}: err {err:.1} deg, evals {}, {:?}",
                    stats.evaluations,
                    t0.elapsed()
                );
                if err < 20.0 {
                    hits += 1;
                }
            }
            println!("within 20 deg: {hits}/{n}");
        }
        "posed" => {
            let n: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(3);
            let gts = sample_uniform_rotations(n, 778);
            let rcfg = ReconConfig {
                iterations: 150,
                sampler: SamplerConfig::desk(128),
                ..ReconConfig::desk()
            };
            for (i, gt_r) in gts.iter().enumerate() {
                let shape = &dataset.shapes[(i * 5 + 2) % dataset.shapes.len()];
                let pose_wc = RigidPose::new(gt_r.clone(), Vector3::new(-0.2, 0.1, 0.05));
                let world = apply_pose(&pose_wc, &shape.cloud);
                let gt_cw = pose_wc.inverse();
                // perturbed GT init (simulating a good PG result ~8 deg off)
                let noise = diform_core::geometry::exp_so3(&Vector3::new(0.1, -0.08, 0.05));
                let pose0 = RigidPose::new(
                    noise.compose(&gt_cw.rotation),
                    diform_core::pose_init::centroid_translation(
                        &noise.compose(&gt_cw.rotation),
                        &world,
                    ),
                );
                let t0 = Instant::now();
                let r = reconstruct_posed_with_pose(&state.model, &world, pose0, &rcfg).unwrap();
                let est = r.pose.unwrap();
                let (rpe_deg, rpe_len) = relative_pose_error(&est, &gt_cw);
                let codes = LatentPair { z_i: r.z_i.clone(), z_d: r.z_d[0].clone() };
                let mesh =
                    diform_core::meshing::extract_mesh(&state.model, &codes, 40, None).unwrap();
                let pts = sample_mesh_surface(&mesh, 3000, 7).unwrap();
                let world_pose = est.inverse();
                let pts_w: Vec<Vector3<f64>> =
                    pts.iter().map(|p| world_pose.apply_point(p)).collect();
                let cd = chamfer_report(&pts_w, &world.points).unwrap();
                println!(
                    "shape {i}: rpe {rpe_deg:.2} deg / {rpe_len:.3}, world CD {:.2}% , {:?}",
                    100.0 * cd.cd_sym / (2.0 * 3f64.sqrt()),
                    t0.elapsed()
                );
            }
        }
        "posenet" => {
            let epochs: usize =
                std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(60);
            let mut cfg = diform_core::pose_init::PoseNetTrainConfig::desk();
            cfg.epochs = epochs;
            cfg.mesh_resolution = 16;
            cfg.seed = 31;
            let t0 = Instant::now();
            let (net, losses) = diform_core::pose_init::train_posenet(
                &state.model, &dataset, &cfg,
            )
            .unwrap();
            println!(
                "posenet {epochs} epochs: {:?}, loss {:.4} -> {:.4}",
                t0.elapsed(),
                losses[0],
                losses[losses.len() - 1]
            );
            // validation: fresh poses on training shapes
            let codes = LatentPair::zeros(&state.model.config);
            let mesh = diform_core::meshing::extract_mesh(&state.model, &codes, 24, None)
                .unwrap();
            let reference = sample_mesh_surface(&mesh, 256, 5).unwrap();
            let rots = sample_uniform_rotations(20, 900);
            let mut errs: Vec<f64> = Vec::new();
            for (i, r) in rots.iter().enumerate() {
                let shape = &dataset.shapes[(i * 11) % dataset.shapes.len()];
                let pose_wc = RigidPose::new(r.clone(), Vector3::new(0.05, 0.2, -0.1));
                let world = apply_pose(&pose_wc, &shape.cloud);
                let est = diform_core::pose_init::posenet_predict(&net, &world, &reference)
                    .unwrap();
                let (deg, _) = relative_pose_error(&est, &pose_wc.inverse());
                errs.push(deg);
            }
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("validation RPE degrees: median {:.1}, all {:?}", errs[errs.len() / 2],
                errs.iter().map(|e| *e as i64).collect::<Vec<_>>());
        }
        "track" => {
            let id = subject_identity(SEED, 1);
            let kf = [
                script_deformation(SEED, 1),
                script_deformation(SEED, 2),
                script_deformation(SEED, 3),
            ];
            let motion = diform_core::synth::MotionPath {
                angular_velocity: Vector3::new(0.25, 0.4, -0.2),
                linear_velocity: Vector3::new(0.15, -0.1, 0.1),
            };
            let frames = make_sequence(
                &id, &kf, 20, Some(motion), &dataset.frame, 3000,
                stream_seed(SEED, "probe-seq", 0),
            )
            .unwrap();
            let rcfg = ReconConfig {
                iterations: 150,
                sampler: SamplerConfig::desk(128),
                ..ReconConfig::desk()
            };
            let track = diform_core::reconstructor::TrackConfig {
                warm_iterations: 60,
                ..diform_core::reconstructor::TrackConfig::new(
                    rcfg,
                    diform_core::reconstructor::RotationInit::Given(
                        frames[0].pose_cw.rotation.clone(),
                    ),
                )
            };
            let t0 = Instant::now();
            let results = diform_core::reconstructor::track_sequence(
                &state.model,
                &frames.iter().map(|f| f.cloud_world.clone()).collect::<Vec<_>>(),
                &track,
            )
            .unwrap();
            println!("track 20 frames: {:?}", t0.elapsed());
            for (t, (r, f)) in results.iter().zip(&frames).enumerate() {
                let (deg, len) = relative_pose_error(r.pose.as_ref().unwrap(), &f.pose_cw);
                println!("frame {t}: rpe {deg:.2} deg {len:.3}, loss {:.3}", r.report.total);
            }
        }
        other => panic!("unknown probe {other}"),
    }
}
