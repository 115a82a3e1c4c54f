use diform_core::synth::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Isolate one straight finger: shrink everything else to negligible size.
fn main() {
    let mut id = IdentityParams::nominal();
    for f in 0..5 {
        if f != 2 {
            for s in 0..3 {
                id.bone_lengths[f][s] = 0.01;
                id.radii[f][s] = 0.004;
            }
        }
    }
    let curl: f64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let shrink_palm = std::env::args().nth(2).map(|s| s == "nopalm").unwrap_or(false);
    if shrink_palm {
        id.palm_semi_axes = Vector3::new(0.02, 0.02, 0.02);
    }
    let mut def = DeformParams::rest();
    for s in 0..3 {
        def.flexion[2][s] = curl * [1.0, 0.8, 0.6][s];
    }
    let cloud = make_shape(&id, &def, 3000, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bands: Vec<Vec<f64>> = vec![vec![]; 20];
    let mut all = vec![];
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        // only the finger of interest
        if (p.x).abs() > 0.12 || p.y < 0.1 {
            continue;
        }
        let q = p + n * (0.01 * rng.gen_range(-1.0..1.0f64));
        let r = (analytic_sdf_gradient(&id, &def, &q).norm() - 1.0).abs();
        let b = (((p.y - 0.1) / 0.9 * 20.0) as usize).min(19);
        bands[b].push(r);
        all.push(r);
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!("finger-only mean {:.4} (n {})", m(&all), all.len());
    for (i, b) in bands.iter().enumerate() {
        if !b.is_empty() {
            println!(
                "  y [{:.3},{:.3}) n {:4} mean {:.4} max {:.4}",
                0.1 + i as f64 * 0.045,
                0.145 + i as f64 * 0.045,
                b.len(),
                m(b),
                b.iter().cloned().fold(0.0, f64::max)
            );
        }
    }
}
