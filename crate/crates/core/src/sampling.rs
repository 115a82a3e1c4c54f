//! Observation containers and batch sampling.
//!
//! Every observation is an oriented point cloud. Training/inference batches
//! pair surface samples (with normals) with off-surface points: half of the
//! off-surface set is Gaussian-perturbed surface points, half is uniform in
//! the expanded bounding box. All randomness goes through ChaCha8, a seeded
//! counter-based generator, so batches are reproducible across platforms.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SamplingError;

/// Point cloud with per-point unit normals; the sole observation type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedPointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

impl OrientedPointCloud {
    pub fn new(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, SamplingError> {
        if points.is_empty() || points.len() != normals.len() {
            return Err(SamplingError::EmptyCloud);
        }
        Ok(Self { points, normals })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }
}

/// One optimization batch: surface samples with normals (Omega_0) and
/// off-surface points (Omega \ Omega_0).
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub surface: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub offsurface: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_surface: usize,
    pub n_offsurface: usize,
    /// Std-dev of the near-surface Gaussian, as a fraction of the bounding-box
    /// diagonal.
    pub near_sigma_frac: f64,
    /// Bounding-box expansion fraction for the uniform volume samples.
    pub volume_margin: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_surface: 16384,
            n_offsurface: 16384,
            near_sigma_frac: 0.01,
            volume_margin: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn desk(n: usize) -> Self {
        Self { n_surface: n, n_offsurface: n, ..Self::default() }
    }
}

/// Uniform-with-replacement draw of `n` surface samples.
pub fn sample_surface(
    cloud: &OrientedPointCloud,
    n: usize,
    seed: u64,
) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>, SamplingError> {
    if cloud.is_empty() {
        return Err(SamplingError::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let i = rng.gen_range(0..cloud.len());
            (cloud.points[i], cloud.normals[i])
        })
        .collect())
}

/// Off-surface points: half near-surface Gaussian, half uniform in the
/// expanded bounding box.
pub fn sample_offsurface(
    cloud: &OrientedPointCloud,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Vector3<f64>>, SamplingError> {
    if cloud.is_empty() {
        return Err(SamplingError::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = cloud.bbox_diagonal().max(1e-12);
    let sigma = config.near_sigma_frac * diag;
    let (lo, hi) = cloud.bounds();
    let margin = (hi - lo) * config.volume_margin;
    let (vlo, vhi) = (lo - margin, hi + margin);

    let n = config.n_offsurface;
    let n_near = n / 2;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n_near {
        let i = rng.gen_range(0..cloud.len());
        let noise = Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng));
        out.push(cloud.points[i] + sigma * noise);
    }
    for _ in n_near..n {
        out.push(Vector3::new(
            rng.gen_range(vlo.x..=vhi.x.max(vlo.x + f64::MIN_POSITIVE)),
            rng.gen_range(vlo.y..=vhi.y.max(vlo.y + f64::MIN_POSITIVE)),
            rng.gen_range(vlo.z..=vhi.z.max(vlo.z + f64::MIN_POSITIVE)),
        ));
    }
    Ok(out)
}

/// Draws a full batch for one shape.
pub fn make_batch(
    cloud: &OrientedPointCloud,
    config: &SamplerConfig,
    seed: u64,
) -> Result<SampleBatch, SamplingError> {
    Ok(SampleBatch {
        surface: sample_surface(cloud, config.n_surface, seed)?,
        offsurface: sample_offsurface(cloud, config, seed.wrapping_add(0x9e3779b97f4a7c15))?,
    })
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// PCA plane normals from k nearest neighbors, with orientation propagated
/// over a minimum spanning tree of the neighbor graph (Hoppe-style, no
/// viewpoint). The root is the highest point, oriented toward +z.
pub fn estimate_normals(
    points: &[Vector3<f64>],
    k: usize,
) -> Result<Vec<Vector3<f64>>, SamplingError> {
    let n = points.len();
    if k < 3 || n <= k {
        return Err(SamplingError::BadNeighborhoodSize { n, k });
    }

    // Brute-force kNN; desk-scale clouds keep this cheap enough.
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((points[j] - points[i]).norm_squared(), j))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        neighbors.push(dist.iter().take(k).map(|&(_, j)| j).collect());
    }

    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let nb = &neighbors[i];
        let mut mean = points[i];
        for &j in nb {
            mean += points[j];
        }
        mean /= (nb.len() + 1) as f64;
        let mut cov = Matrix3::zeros();
        let d0 = points[i] - mean;
        cov += d0 * d0.transpose();
        for &j in nb {
            let d = points[j] - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        // Smallest-eigenvalue eigenvector is the plane normal; collinear
        // neighborhoods have two near-zero eigenvalues.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let scale = eig.eigenvalues[order[2]].max(1e-300);
        if eig.eigenvalues[order[1]] / scale < 1e-9 {
            return Err(SamplingError::DegenerateNeighborhood { index: i });
        }
        normals.push(eig.eigenvectors.column(order[0]).normalize());
    }

    // Orientation propagation: Prim MST over the kNN graph with weight
    // 1 - |n_i . n_j|, flipping each child to agree with its parent.
    let root = (0..n)
        .max_by(|&a, &b| points[a].z.total_cmp(&points[b].z))
        .unwrap();
    if normals[root].z < 0.0 {
        normals[root] = -normals[root];
    }
    let mut in_tree = vec![false; n];
    let mut best_cost = vec![f64::INFINITY; n];
    let mut best_parent = vec![usize::MAX; n];
    in_tree[root] = true;
    let frontier_updates = |i: usize,
                                in_tree: &[bool],
                                best_cost: &mut [f64],
                                best_parent: &mut [usize],
                                normals: &[Vector3<f64>]| {
        for &j in &neighbors[i] {
            if !in_tree[j] {
                let w = 1.0 - normals[i].dot(&normals[j]).abs();
                if w < best_cost[j] {
                    best_cost[j] = w;
                    best_parent[j] = i;
                }
            }
        }
    };
    frontier_updates(root, &in_tree, &mut best_cost, &mut best_parent, &normals);
    for _ in 1..n {
        let next = match (0..n)
            .filter(|&j| !in_tree[j] && best_parent[j] != usize::MAX)
            .min_by(|&a, &b| best_cost[a].total_cmp(&best_cost[b]))
        {
            Some(j) => j,
            // kNN graph disconnected: seed remaining components by height.
            None => match (0..n)
                .filter(|&j| !in_tree[j])
                .max_by(|&a, &b| points[a].z.total_cmp(&points[b].z))
            {
                Some(j) => {
                    if normals[j].z < 0.0 {
                        normals[j] = -normals[j];
                    }
                    in_tree[j] = true;
                    frontier_updates(j, &in_tree, &mut best_cost, &mut best_parent, &normals);
                    continue;
                }
                None => break,
            },
        };
        let parent = best_parent[next];
        if normals[parent].dot(&normals[next]) < 0.0 {
            normals[next] = -normals[next];
        }
        in_tree[next] = true;
        frontier_updates(next, &in_tree, &mut best_cost, &mut best_parent, &normals);
    }
    Ok(normals)
}

/// Canonical normalization shared by a dataset and anything derived from it
/// (sequences, evaluation clouds): `x' = scale * (x - center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFrame {
    pub scale: f64,
    pub center: Vector3<f64>,
}

impl CanonicalFrame {
    pub fn identity() -> Self {
        Self { scale: 1.0, center: Vector3::zeros() }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (p - self.center)
    }

    pub fn apply(&self, cloud: &OrientedPointCloud) -> OrientedPointCloud {
        OrientedPointCloud {
            points: cloud.points.iter().map(|p| self.apply_point(p)).collect(),
            normals: cloud.normals.clone(),
        }
    }
}

/// Fits a global multiplier so the union bounding box of all clouds lands in
/// [-1, 1]^3 after scaling about the union-box center. Returns
/// (scale, center); apply as `x' = scale * (x - center)`.
pub fn fit_canonical_scale(clouds: &[&OrientedPointCloud]) -> (f64, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in clouds {
        let (clo, chi) = c.bounds();
        for d in 0..3 {
            lo[d] = lo[d].min(clo[d]);
            hi[d] = hi[d].max(chi[d]);
        }
    }
    let center = (lo + hi) / 2.0;
    let half_extent = ((hi - lo) / 2.0).max().max(1e-12);
    (1.0 / half_extent, center)
}
