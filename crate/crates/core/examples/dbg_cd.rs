use diform_core::metrics::*;
use diform_core::sampling::SamplerConfig;
use diform_core::synth::make_dataset;
use diform_core::trainer::{init_state, train_epochs, TrainConfig};
use nalgebra::Vector3;
use std::time::Instant;

fn main() {
    let lr1: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let lr2: f64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let split: usize = std::env::args().nth(3).unwrap().parse().unwrap();
    let out = std::env::args().nth(4).unwrap();
    let (dataset, _) = make_dataset(6, 6, 4000, 5).unwrap();
    let mut cfg =
        TrainConfig { sampler: SamplerConfig::desk(256), batch_size: 1, ..TrainConfig::desk() };
    cfg.seed = 5;
    let t0 = Instant::now();
    let mut state = init_state(&dataset, &cfg).unwrap();
    let cb = |_: &_, log: &diform_core::trainer::EpochLog| {
        if log.epoch % 20 == 0 || log.epoch == 1 {
            println!("epoch {}: total {:.4} surf {:.4} norm {:.4} eik {:.4} off {:.4}",
                log.epoch, log.mean.total, log.mean.surface_sdf, log.mean.normal,
                log.mean.eikonal, log.mean.offsurface);
        }
        Ok(())
    };
    cfg.learning_rate = lr1;
    train_epochs(&mut state, &dataset, &cfg, split, cb).unwrap();
    cfg.learning_rate = lr2;
    train_epochs(&mut state, &dataset, &cfg, 200, cb).unwrap();
    println!("train: {:?}", t0.elapsed());
    diform_core::io::write_checkpoint(std::path::Path::new(&out), &state).unwrap();

    let shape = &dataset.shapes[3];
    let tc = state.codes.pair("s000", "d003").unwrap();
    let vals = diform_core::field::sdf_eval_batch(&state.model, &tc, &shape.cloud.points);
    let neg = vals.iter().filter(|v| **v < 0.0).count();
    let mean_abs = vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64;
    println!("f at cloud: mean|f| {:.4}, frac negative {:.3}", mean_abs, neg as f64 / vals.len() as f64);
    let c = shape.cloud.centroid();
    println!("centroid f = {:.4}, corner f = {:.4}",
        diform_core::field::sdf_eval(&state.model, &tc, &c),
        diform_core::field::sdf_eval(&state.model, &tc, &Vector3::new(0.95, 0.95, 0.95)));
    let (mut lo, mut hi) = (shape.cloud.points[0], shape.cloud.points[0]);
    for v in &shape.cloud.points { for k in 0..3 { lo[k]=lo[k].min(v[k]); hi[k]=hi[k].max(v[k]); } }
    let m = Vector3::repeat((hi - lo).norm() * 0.08);
    let mesh = diform_core::meshing::extract_mesh(&state.model, &tc, 48, Some((lo - m, hi + m))).unwrap();
    if mesh.vertices.is_empty() { println!("EMPTY MESH"); return; }
    let pts = sample_mesh_surface(&mesh, 4000, 7).unwrap();
    let cd = chamfer_report(&pts, &shape.cloud.points).unwrap();
    let diag = 2.0 * 3f64.sqrt();
    println!("train-shape CD {:.4} ({:.2}%) r->g {:.4} g->r {:.4}", cd.cd_sym, 100.0*cd.cd_sym/diag, cd.cd_r_to_g, cd.cd_g_to_r);
}
