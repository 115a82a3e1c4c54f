// Standalone copy of the blended-hand construction with free parameters,
// used to search geometry that keeps the LSE field near-eikonal at k = 32.
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: f64 = 32.0;

#[derive(Clone)]
enum Prim {
    Cap { a: Vector3<f64>, b: Vector3<f64>, r: f64 },
    Ell { s: Vector3<f64> },
}

fn sdf(p: &Prim, x: &Vector3<f64>) -> f64 {
    match p {
        Prim::Cap { a, b, r } => {
            let ab = b - a;
            let t = ((x - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (x - (a + t * ab)).norm() - r
        }
        Prim::Ell { s } => {
            if x.norm() < 1e-9 {
                return -s.min();
            }
            let k0 = x.component_div(s).norm();
            let k1 = x.component_div(&s.component_mul(s)).norm();
            k0 * (k0 - 1.0) / k1
        }
    }
}

fn grad(p: &Prim, x: &Vector3<f64>) -> Vector3<f64> {
    match p {
        Prim::Cap { a, b, .. } => {
            let ab = b - a;
            let t = ((x - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let d = x - (a + t * ab);
            let n = d.norm();
            if n < 1e-12 { Vector3::z() } else { d / n }
        }
        Prim::Ell { s } => {
            if x.norm() < 1e-9 {
                return Vector3::z();
            }
            let s2 = s.component_mul(s);
            let u = x.component_div(s);
            let v = x.component_div(&s2);
            let k0 = u.norm();
            let k1 = v.norm();
            let gk0 = u.component_div(s) / k0;
            let gk1 = v.component_div(&s2) / k1;
            ((2.0 * k0 - 1.0) * gk0 * k1 - k0 * (k0 - 1.0) * gk1) / (k1 * k1)
        }
    }
}

fn field(prims: &[Prim], x: &Vector3<f64>) -> f64 {
    let d: Vec<f64> = prims.iter().map(|p| sdf(p, x)).collect();
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum: f64 = d.iter().map(|di| (-K * (di - dmin)).exp()).sum();
    dmin - sum.ln() / K
}

fn fgrad(prims: &[Prim], x: &Vector3<f64>) -> Vector3<f64> {
    let d: Vec<f64> = prims.iter().map(|p| sdf(p, x)).collect();
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|di| (-K * (di - dmin)).exp()).collect();
    let ws: f64 = w.iter().sum();
    let mut g = Vector3::zeros();
    for (p, wi) in prims.iter().zip(&w) {
        g += (*wi / ws) * grad(p, x);
    }
    g
}

#[derive(Clone, Debug)]
struct Geo {
    semi: Vector3<f64>,
    bones: [f64; 3],
    radii: [f64; 3],
    spread_max: f64,
    rimf: f64,
    back: f64,
    curl: f64,
}

fn rot_x(theta: f64) -> impl Fn(&Vector3<f64>) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    move |v: &Vector3<f64>| Vector3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
}

fn build(g: &Geo) -> Vec<Prim> {
    let mut prims = vec![Prim::Ell { s: g.semi }];
    let fr = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let scale = [0.85, 1.0, 1.05, 0.95, 0.75];
    for f in 0..5 {
        let sp = fr[f] * g.spread_max;
        let x = sp * g.semi.x;
        let y = g.semi.y * (1.0 - sp * sp).sqrt() * g.rimf;
        let mut origin = Vector3::new(x, y, 0.0);
        let mut theta = 0.0;
        for s in 0..3 {
            theta -= g.curl * [1.0, 0.8, 0.6][s];
            let rx = rot_x(-theta);
            let dir = rx(&Vector3::y());
            let back = if s == 0 { g.back } else { 0.0 };
            let a = origin - back * dir;
            let tip = origin + dir * (g.bones[s] * scale[f]);
            prims.push(Prim::Cap { a, b: tip, r: g.radii[s] * (0.9 + 0.2 * scale[f] / 1.05) });
            origin = tip;
        }
    }
    prims
}

fn sample_surface(prims: &[Prim], n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = prims
        .iter()
        .map(|p| match p {
            Prim::Cap { a, b, r } => 2.0 * std::f64::consts::PI * r * (b - a).norm(),
            Prim::Ell { s } => 4.0 * std::f64::consts::PI * (s.x * s.y).max(s.x * s.z),
        })
        .collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < 10 * n {
        tries += 1;
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                idx = i;
                break;
            }
            pick -= a;
        }
        let u = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        )
        .normalize();
        let mut p = match &prims[idx] {
            Prim::Cap { a, b, r } => {
                let t: f64 = rng.gen_range(0.0..1.0);
                a + t * (b - a) + u * *r
            }
            Prim::Ell { s } => u.component_mul(s),
        };
        let mut ok = false;
        for _ in 0..30 {
            let f = field(prims, &p);
            if f.abs() < 1e-6 {
                ok = true;
                break;
            }
            let gr = fgrad(prims, &p);
            let n2 = gr.norm_squared();
            if n2 < 1e-12 {
                break;
            }
            p -= gr * (f / n2);
        }
        if ok {
            out.push(p);
        }
    }
    out
}

fn score(g: &Geo, seed: u64) -> (f64, f64, f64) {
    let prims = build(g);
    let pts = sample_surface(&prims, 1500, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut sum = 0.0;
    let mut mx: f64 = 0.0;
    let mut n90 = vec![];
    for p in &pts {
        let nrm = fgrad(&prims, p).normalize();
        let q = p + nrm * (0.01 * rng.gen_range(-1.0..1.0f64));
        let r = (fgrad(&prims, &q).norm() - 1.0).abs();
        sum += r;
        mx = mx.max(r);
        n90.push(r);
    }
    n90.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p90 = n90[(n90.len() as f64 * 0.9) as usize];
    (sum / pts.len() as f64, p90, mx)
}

fn attribute(g: &Geo, seed: u64) {
    let prims = build(g);
    let pts = sample_surface(&prims, 3000, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    // class = (nearest, second nearest) primitive index pair
    use std::collections::BTreeMap;
    let mut by: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for p in &pts {
        let nrm = fgrad(&prims, p).normalize();
        let q = p + nrm * (0.01 * rng.gen_range(-1.0..1.0f64));
        let r = (fgrad(&prims, &q).norm() - 1.0).abs();
        let mut ds: Vec<(f64, usize)> =
            prims.iter().enumerate().map(|(i, pr)| (sdf(pr, &q), i)).collect();
        ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let e = by.entry((ds[0].1, ds[1].1)).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    let total: f64 = by.values().map(|v| v.0).sum();
    let mut v: Vec<_> = by.into_iter().collect();
    v.sort_by(|a, b| b.1 .0.partial_cmp(&a.1 .0).unwrap());
    let lbl = |i: usize| {
        if i == 0 { "palm".to_string() } else { format!("f{}s{}", (i - 1) / 3, (i - 1) % 3) }
    };
    println!("  overall mean {:.4}", total / pts.len() as f64);
    for ((a, b), (sum, n)) in v.iter().take(10) {
        println!(
            "    {}|{}  mass {:.1}% n {:4} mean {:.4}",
            lbl(*a),
            lbl(*b),
            100.0 * sum / total,
            n,
            sum / *n as f64
        );
    }
}

fn main() {
    let base = Geo {
        semi: Vector3::new(0.55, 0.30, 0.20),
        bones: [0.28, 0.20, 0.15],
        radii: [0.050, 0.045, 0.040],
        spread_max: 0.84,
        rimf: 1.0,
        back: 0.0,
        curl: 0.0,
    };
    println!("base rest:");
    attribute(&base, 11);
    let mut c = base.clone();
    c.curl = 0.5;
    println!("base curl 0.5:");
    attribute(&c, 12);

    let mut variants: Vec<(String, Geo)> = vec![];
    let mut g = base.clone();
    g.bones = [0.38, 0.27, 0.20];
    variants.push(("long bones".into(), g));
    let mut g = base.clone();
    g.radii = [0.068, 0.062, 0.056];
    g.semi.x = 0.62;
    g.spread_max = 0.95;
    variants.push(("fat fingers wide".into(), g));
    let mut g = base.clone();
    g.bones = [0.38, 0.27, 0.20];
    g.radii = [0.068, 0.062, 0.056];
    g.semi.x = 0.62;
    g.spread_max = 0.95;
    variants.push(("long + fat + wide".into(), g));
    let mut g = base.clone();
    g.bones = [0.45, 0.32, 0.24];
    g.radii = [0.075, 0.068, 0.061];
    g.semi = Vector3::new(0.68, 0.34, 0.24);
    g.spread_max = 0.95;
    variants.push(("scaled-up hand".into(), g));
    for (name, g) in &variants {
        let (m0, p0, x0) = score(g, 11);
        let mut gc = g.clone();
        gc.curl = 0.5;
        let (m1, p1, _) = score(&gc, 12);
        println!(
            "{name:20} rest: mean {m0:.4} p90 {p0:.3} max {x0:.2} | curl0.5: mean {m1:.4} p90 {p1:.3}"
        );
    }
    println!("long + fat + wide attribution:");
    attribute(&variants[2].1, 13);

    // scale sweep: base geometry times s (k fixed, so bands shrink relative)
    for &s in &[1.0f64, 1.2, 1.4, 1.6, 1.8] {
        let g = Geo {
            semi: Vector3::new(0.55 * s, 0.30 * s, 0.20 * s),
            bones: [0.28 * s, 0.20 * s, 0.15 * s],
            radii: [0.050 * s, 0.045 * s, 0.040 * s],
            spread_max: 0.84,
            rimf: 1.0,
            back: 0.0,
            curl: 0.0,
        };
        let (m0, p0, _) = score(&g, 21);
        let mut gc = g.clone();
        gc.curl = 0.4;
        let (m1, p1, _) = score(&gc, 22);
        let mut gc = g.clone();
        gc.curl = 0.7;
        let (m2, p2, _) = score(&gc, 23);
        println!(
            "scale {s:.1}: rest mean {m0:.4} p90 {p0:.3} | curl0.4 {m1:.4} p90 {p1:.3} | curl0.7 {m2:.4} p90 {p2:.3}"
        );
    }
}
