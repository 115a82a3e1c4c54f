use diform_core::synth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for si in 0..6 {
        for di in [0, 2, 5] {
            let id = subject_identity(5, si);
            let def = script_deformation(5, di);
            let cloud = make_shape(&id, &def, 1200, 31 + si as u64 * 7 + di as u64).unwrap();
            let mut sum = 0.0;
            for (p, n) in cloud.points.iter().zip(&cloud.normals) {
                let g1: f64 = rng.gen();
                let g2: f64 = rng.gen();
                let g = (-2.0 * g1.ln()).sqrt() * (std::f64::consts::TAU * g2).cos();
                let q = p + n * (0.01 * g);
                sum += (analytic_sdf_gradient(&id, &def, &q).norm() - 1.0).abs();
            }
            let m = sum / cloud.points.len() as f64;
            worst = worst.max(m);
            print!("s{si}d{di}:{m:.4} ");
        }
        println!();
    }
    println!("worst {worst:.4}");
}
