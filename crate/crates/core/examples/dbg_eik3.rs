use diform_core::geometry::exp_so3;
use diform_core::synth::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Cap {
    a: Vector3<f64>,
    b: Vector3<f64>,
    r: f64,
    label: String,
}

fn cap_sdf(c: &Cap, x: &Vector3<f64>) -> f64 {
    let ab = c.b - c.a;
    let t = ((x - c.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (x - (c.a + t * ab)).norm() - c.r
}

fn main() {
    let id = subject_identity(5, 0);
    let def = script_deformation(5, 0);
    // mirror of build_primitives
    let spread = [-0.84, -0.42, 0.0, 0.42, 0.84];
    let mut caps: Vec<Cap> = vec![];
    for f in 0..5 {
        let x = spread[f] * id.palm_semi_axes.x;
        let y = id.palm_semi_axes.y * (1.0f64 - spread[f] * spread[f]).sqrt() * 0.92;
        let mut origin = Vector3::new(x, y, 0.0);
        let mut rot = exp_so3(&Vector3::new(0.0, 0.0, def.abduction[f]));
        for s in 0..3 {
            rot = rot.compose(&exp_so3(&Vector3::new(-def.flexion[f][s], 0.0, 0.0)));
            let back = if s == 0 { 0.05 } else { 0.0 };
            let dir = rot.rotate(&Vector3::y());
            let a = origin - back * dir;
            let tip = origin + dir * id.bone_lengths[f][s];
            caps.push(Cap { a, b: tip, r: id.radii[f][s], label: format!("f{f}s{s}") });
            origin = tip;
        }
    }
    let cloud = make_shape(&id, &def, 2000, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows: Vec<(f64, Vector3<f64>, String)> = vec![];
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let q = p + n * (0.01 * rng.gen_range(-1.0..1.0f64));
        let r = (analytic_sdf_gradient(&id, &def, &q).norm() - 1.0).abs();
        // top-3 primitive distances at q (ellipsoid handled crudely by scaled dist)
        let mut ds: Vec<(f64, String)> =
            caps.iter().map(|c| (cap_sdf(c, &q), c.label.clone())).collect();
        let k0 = q.component_div(&id.palm_semi_axes).norm();
        let k1 = q
            .component_div(&id.palm_semi_axes.component_mul(&id.palm_semi_axes))
            .norm();
        ds.push((k0 * (k0 - 1.0) / k1, "palm".into()));
        ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let info = format!(
            "{}:{:.3} {}:{:.3} {}:{:.3}",
            ds[0].1, ds[0].0, ds[1].1, ds[1].0, ds[2].1, ds[2].0
        );
        rows.push((r, q, info));
    }
    rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (r, q, info) in rows.iter().take(30) {
        println!("res {:.3} at ({:+.3},{:+.3},{:+.3})  {}", r, q.x, q.y, q.z, info);
    }
    // histogram of residual contributions by nearest pair
    use std::collections::BTreeMap;
    let mut by_pair: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (r, _, info) in &rows {
        let mut parts = info.split_whitespace();
        let a = parts.next().unwrap().split(':').next().unwrap();
        let b = parts.next().unwrap().split(':').next().unwrap();
        let key = format!("{a}|{b}");
        let e = by_pair.entry(key).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    let mut v: Vec<_> = by_pair.into_iter().collect();
    v.sort_by(|a, b| b.1 .0.partial_cmp(&a.1 .0).unwrap());
    println!("\ntotal residual mass by (nearest, second) pair:");
    for (k, (sum, n)) in v.iter().take(15) {
        println!("  {:12} sum {:.2} n {:4} mean {:.4}", k, sum, n, *sum / *n as f64);
    }
}
