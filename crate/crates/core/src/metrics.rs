//! Evaluation metrics: sided/symmetric Chamfer distance and relative pose
//! error.
//!
//! Chamfer uses exact nearest neighbors (parallel brute force; exactness is
//! part of the contract). Distances are Euclidean, not squared, reported in
//! whatever units the inputs carry.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::geometry::{geodesic_angle, RigidPose};
use crate::meshing::TriangleMesh;

/// Default number of seeded surface samples taken from a mesh input.
pub const MESH_SAMPLE_COUNT: usize = 30000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Average of the two sided means.
    pub cd_sym: f64,
    /// Reconstruction-to-ground-truth sided mean.
    pub cd_r_to_g: f64,
    /// Ground-truth-to-reconstruction sided mean.
    pub cd_g_to_r: f64,
}

/// Mean over `a` of the exact nearest-neighbor distance into `b`.
pub fn chamfer_one_sided(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    if a.is_empty() {
        return Err(MetricsError::EmptySet { which: "source" });
    }
    if b.is_empty() {
        return Err(MetricsError::EmptySet { which: "target" });
    }
    let total: f64 = a
        .par_iter()
        .map(|p| {
            b.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// Both sided means plus their average.
pub fn chamfer_report(
    recon: &[Vector3<f64>],
    gt: &[Vector3<f64>],
) -> Result<ChamferReport, MetricsError> {
    let cd_r_to_g = chamfer_one_sided(recon, gt)?;
    let cd_g_to_r = chamfer_one_sided(gt, recon)?;
    Ok(ChamferReport { cd_sym: (cd_r_to_g + cd_g_to_r) / 2.0, cd_r_to_g, cd_g_to_r })
}

/// Area-weighted uniform surface samples from a triangle mesh, seeded.
pub fn sample_mesh_surface(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<Vec<Vector3<f64>>, MetricsError> {
    if mesh.triangles.is_empty() {
        return Err(MetricsError::EmptySet { which: "mesh" });
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        let (a, b, c) = triangle(mesh, t);
        total += (b - a).cross(&(c - a)).norm() / 2.0;
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(MetricsError::EmptySet { which: "mesh (zero area)" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen_range(0.0..total);
        let ti = cumulative.partition_point(|&c| c <= r).min(mesh.triangles.len() - 1);
        let (a, b, c) = triangle(mesh, &mesh.triangles[ti]);
        // Uniform barycentric draw via square-root trick.
        let (u, v): (f64, f64) = (rng.gen(), rng.gen());
        let su = u.sqrt();
        out.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
    }
    Ok(out)
}

/// Chamfer report for a reconstructed mesh against a ground-truth cloud,
/// sampling the mesh surface with a seeded draw.
pub fn chamfer_report_mesh(
    recon: &TriangleMesh,
    gt: &[Vector3<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<ChamferReport, MetricsError> {
    let samples = sample_mesh_surface(recon, n_samples, seed)?;
    chamfer_report(&samples, gt)
}

/// Relative pose error: (geodesic rotation error in degrees, Euclidean
/// translation error).
pub fn relative_pose_error(est: &RigidPose, gt: &RigidPose) -> (f64, f64) {
    (
        geodesic_angle(&est.rotation, &gt.rotation),
        (est.translation - gt.translation).norm(),
    )
}

fn triangle(mesh: &TriangleMesh, t: &[u32; 3]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    (
        mesh.vertices[t[0] as usize],
        mesh.vertices[t[1] as usize],
        mesh.vertices[t[2] as usize],
    )
}
