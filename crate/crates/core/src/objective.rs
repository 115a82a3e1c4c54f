//! The training/inference energy and its gradients.
//!
//! Three terms: a surface term (zero SDF + normal alignment on Omega_0), a
//! field regularizer (eikonal over Omega plus an off-surface repeller), and a
//! code-norm regularizer. Sums are implemented as means over the batch so the
//! default weights are batch-size independent.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::ObjectiveError;
use crate::field::{self, FieldModel, LatentPair};
use crate::geometry::RigidPose;
use crate::sampling::SampleBatch;

/// Loss weights `(lambda_s, lambda_n, lambda_g, lambda_i, lambda_z, alpha)`;
/// defaults (30, 1, 0.1, 1, 0.0001, 100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub surface: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub offsurface: f64,
    pub code_reg: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            surface: 30.0,
            normal: 1.0,
            eikonal: 0.1,
            offsurface: 1.0,
            code_reg: 0.0001,
            alpha: 100.0,
        }
    }
}

/// Weighted loss components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub surface_sdf: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub offsurface: f64,
    pub code_reg: f64,
}

impl LossReport {
    pub(crate) fn close(mut self) -> Self {
        self.total =
            self.surface_sdf + self.normal + self.eikonal + self.offsurface + self.code_reg;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Anything that can report SDF values and spatial gradients at a batch of
/// points. Analytic fields implement this in tests as ground-truth oracles.
pub trait SdfField {
    fn eval_batch(&self, points: &[Vector3<f64>]) -> (Vec<f64>, Vec<Vector3<f64>>);
}

/// The learned decoder evaluated at a fixed code pair.
pub struct DecodedField<'a> {
    pub model: &'a FieldModel,
    pub codes: &'a LatentPair,
}

impl SdfField for DecodedField<'_> {
    fn eval_batch(&self, points: &[Vector3<f64>]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let fwd = field::forward(self.model, self.codes, points);
        (fwd.values().to_vec(), fwd.spatial_gradients().to_vec())
    }
}

impl<F, G> SdfField for (F, G)
where
    F: Fn(&Vector3<f64>) -> f64,
    G: Fn(&Vector3<f64>) -> Vector3<f64>,
{
    fn eval_batch(&self, points: &[Vector3<f64>]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        (
            points.iter().map(&self.0).collect(),
            points.iter().map(&self.1).collect(),
        )
    }
}

/// Normal-alignment residual `1 - |n . g| / ||g||` for one surface sample.
/// The gradient is normalized so the term is bounded in [0, 1]; without the
/// normalization the energy is unbounded below (inflating `||grad f||` buys
/// more from this term than the eikonal penalty charges) and training
/// diverges. A vanishing gradient counts as fully misaligned.
fn normal_residual(nrm: &Vector3<f64>, g: &Vector3<f64>) -> f64 {
    let gn = g.norm();
    if gn < 1e-12 {
        1.0
    } else {
        1.0 - nrm.dot(g).abs() / gn
    }
}

/// Surface term: `lambda_s mean|f| + lambda_n mean(1 - |n . ghat|)` over
/// Omega_0, with ghat the unit spatial gradient. Returns
/// (value, sdf component, normal component).
pub fn surface_loss<S: SdfField>(
    field: &S,
    surface: &[(Vector3<f64>, Vector3<f64>)],
    weights: &LossWeights,
) -> Result<(f64, f64, f64), ObjectiveError> {
    if surface.is_empty() {
        return Err(ObjectiveError::EmptyBatch { what: "surface" });
    }
    let points: Vec<Vector3<f64>> = surface.iter().map(|(p, _)| *p).collect();
    let (values, grads) = field.eval_batch(&points);
    let n = surface.len() as f64;
    let sdf_term = weights.surface * values.iter().map(|f| f.abs()).sum::<f64>() / n;
    let normal_term = weights.normal
        * surface
            .iter()
            .zip(&grads)
            .map(|((_, nrm), g)| normal_residual(nrm, g))
            .sum::<f64>()
        / n;
    Ok((sdf_term + normal_term, sdf_term, normal_term))
}

/// Field regularizer: `lambda_g mean over Omega |1 - ||grad f|||` plus
/// `lambda_i mean over Omega \ Omega_0 exp(-alpha |f|)`, with Omega the
/// union of the surface and off-surface samples. Returns
/// (value, eikonal component, off-surface component).
pub fn eikonal_offsurface_loss<S: SdfField>(
    field: &S,
    batch: &SampleBatch,
    weights: &LossWeights,
) -> Result<(f64, f64, f64), ObjectiveError> {
    if batch.surface.is_empty() && batch.offsurface.is_empty() {
        return Err(ObjectiveError::EmptyBatch { what: "surface and offsurface" });
    }
    let points: Vec<Vector3<f64>> = batch
        .surface
        .iter()
        .map(|(p, _)| *p)
        .chain(batch.offsurface.iter().copied())
        .collect();
    let (values, grads) = field.eval_batch(&points);
    let eik = weights.eikonal
        * grads.iter().map(|g| (1.0 - g.norm()).abs()).sum::<f64>()
        / points.len() as f64;
    let off = if batch.offsurface.is_empty() {
        0.0
    } else {
        weights.offsurface
            * values[batch.surface.len()..]
                .iter()
                .map(|f| (-weights.alpha * f.abs()).exp())
                .sum::<f64>()
            / batch.offsurface.len() as f64
    };
    Ok((eik + off, eik, off))
}

/// Code regularizer: `lambda_z sum(||z_I|| + ||z_D||)` over the given pairs,
/// Euclidean norms.
pub fn code_reg_loss(codes: &[&LatentPair], weights: &LossWeights) -> f64 {
    weights.code_reg
        * codes
            .iter()
            .map(|c| norm(&c.z_i) + norm(&c.z_d))
            .sum::<f64>()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn transform_batch(batch: &SampleBatch, pose: &RigidPose) -> SampleBatch {
    SampleBatch {
        surface: batch
            .surface
            .iter()
            .map(|(p, n)| (pose.apply_point(p), pose.rotation.rotate(n)))
            .collect(),
        offsurface: batch.offsurface.iter().map(|p| pose.apply_point(p)).collect(),
    }
}

/// Full energy over one shape's batch. With a pose, the batch is given in
/// world coordinates and is transformed to canonical space first.
pub fn total_energy<S: SdfField>(
    field: &S,
    codes: &LatentPair,
    batch: &SampleBatch,
    weights: &LossWeights,
    pose: Option<&RigidPose>,
) -> Result<LossReport, ObjectiveError> {
    let canonical;
    let batch = match pose {
        Some(p) => {
            canonical = transform_batch(batch, p);
            &canonical
        }
        None => batch,
    };
    let mut report = LossReport::default();
    if !batch.surface.is_empty() {
        let (_, sdf, normal) = surface_loss(field, &batch.surface, weights)?;
        report.surface_sdf = sdf;
        report.normal = normal;
    }
    let (_, eik, off) = eikonal_offsurface_loss(field, batch, weights)?;
    report.eikonal = eik;
    report.offsurface = off;
    report.code_reg = code_reg_loss(&[codes], weights);
    Ok(report.close())
}

/// Which gradient blocks `energy_gradients` should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WrtMask {
    pub params: bool,
    pub z_i: bool,
    pub z_d: bool,
    pub translation: bool,
    pub rotation: bool,
}

impl WrtMask {
    pub fn all() -> Self {
        Self { params: true, z_i: true, z_d: true, translation: true, rotation: true }
    }

    pub fn codes() -> Self {
        Self { z_i: true, z_d: true, ..Self::default() }
    }

    pub fn codes_and_pose() -> Self {
        Self { z_i: true, z_d: true, translation: true, rotation: true, ..Self::default() }
    }
}

/// Energy value plus the requested exact gradient blocks. The rotation block
/// is `dE/d(dw)` for the right-perturbation `R exp([dw]x)` at `dw = 0`.
pub struct GradientBundle {
    pub report: LossReport,
    pub params: Option<Vec<f64>>,
    pub z_i: Option<Vec<f64>>,
    pub z_d: Option<Vec<f64>>,
    pub translation: Option<Vector3<f64>>,
    pub rotation: Option<Vector3<f64>>,
}

/// Evaluates the energy and its gradients for the learned decoder.
///
/// The spatial-gradient-dependent terms require second-order mixed
/// derivatives; those come out of the exact reverse-over-forward pass in the
/// field module, never finite differences.
pub fn energy_gradients(
    model: &FieldModel,
    codes: &LatentPair,
    batch: &SampleBatch,
    weights: &LossWeights,
    pose: Option<&RigidPose>,
    wrt: WrtMask,
) -> Result<GradientBundle, ObjectiveError> {
    if batch.surface.is_empty() && batch.offsurface.is_empty() {
        return Err(ObjectiveError::EmptyBatch { what: "surface and offsurface" });
    }
    let canonical;
    let world = batch;
    let batch = match pose {
        Some(p) => {
            canonical = transform_batch(batch, p);
            &canonical
        }
        None => batch,
    };

    let n_surf = batch.surface.len();
    let n_off = batch.offsurface.len();
    let n_all = n_surf + n_off;
    let points: Vec<Vector3<f64>> = batch
        .surface
        .iter()
        .map(|(p, _)| *p)
        .chain(batch.offsurface.iter().copied())
        .collect();

    let fwd = field::forward(model, codes, &points);
    let values = fwd.values();
    let grads = fwd.spatial_gradients();

    // Report and per-point loss sensitivities a = dL/df, b = dL/dg.
    let mut report = LossReport::default();
    let mut a = vec![0.0; n_all];
    let mut b = vec![Vector3::zeros(); n_all];
    // Per-surface-point sensitivity to the (rotated) normal, for the rotation
    // gradient.
    let mut nbar = vec![Vector3::zeros(); n_surf];

    for j in 0..n_all {
        let g = grads[j];
        let gn = g.norm();
        report.eikonal += (1.0 - gn).abs();
        if gn > 1e-12 {
            b[j] += weights.eikonal * (-(1.0 - gn).signum()) * g / gn / n_all as f64;
        }
    }
    report.eikonal *= weights.eikonal / n_all as f64;

    for (j, (_, nrm)) in batch.surface.iter().enumerate() {
        let f = values[j];
        let g = grads[j];
        report.surface_sdf += f.abs();
        report.normal += normal_residual(nrm, &g);
        a[j] += weights.surface * f.signum() / n_surf as f64;
        let gn = g.norm();
        if gn > 1e-12 {
            let ghat = g / gn;
            let cos = nrm.dot(&ghat);
            let s = cos.signum();
            b[j] += -weights.normal * s * (nrm - cos * ghat) / gn / n_surf as f64;
            nbar[j] = -weights.normal * s * ghat / n_surf as f64;
        }
    }
    if n_surf > 0 {
        report.surface_sdf *= weights.surface / n_surf as f64;
        report.normal *= weights.normal / n_surf as f64;
    }

    for j in 0..n_off {
        let f = values[n_surf + j];
        let e = (-weights.alpha * f.abs()).exp();
        report.offsurface += e;
        a[n_surf + j] += weights.offsurface * (-weights.alpha * f.signum()) * e / n_off as f64;
    }
    if n_off > 0 {
        report.offsurface *= weights.offsurface / n_off as f64;
    }

    report.code_reg = code_reg_loss(&[codes], weights);
    let report = report.close();

    let need_net = wrt.params || wrt.z_i || wrt.z_d || wrt.translation || wrt.rotation;
    let net = if need_net {
        Some(field::backward(model, &fwd, &a, &b, wrt.params))
    } else {
        None
    };

    let mut bundle = GradientBundle {
        report,
        params: None,
        z_i: None,
        z_d: None,
        translation: None,
        rotation: None,
    };
    let net = match net {
        Some(net) => net,
        None => return Ok(bundle),
    };

    if wrt.params {
        bundle.params = Some(net.params);
    }
    if wrt.z_i {
        let mut zi = net.z_i;
        let n = norm(&codes.z_i);
        if n > 1e-12 {
            for (gz, z) in zi.iter_mut().zip(&codes.z_i) {
                *gz += weights.code_reg * z / n;
            }
        }
        bundle.z_i = Some(zi);
    }
    if wrt.z_d {
        let mut zd = net.z_d;
        let n = norm(&codes.z_d);
        if n > 1e-12 {
            for (gz, z) in zd.iter_mut().zip(&codes.z_d) {
                *gz += weights.code_reg * z / n;
            }
        }
        bundle.z_d = Some(zd);
    }
    if wrt.translation {
        bundle.translation = Some(net.x.iter().sum());
    }
    if wrt.rotation {
        // x_c = R exp([dw]x) x_w + t, n_c = R exp([dw]x) n_w; at dw = 0 the
        // chain rule gives [x_w]x R^T xbar per point (and likewise for the
        // normal channel of the surface term).
        let pose = pose.cloned().unwrap_or_else(RigidPose::identity);
        let rt = pose.rotation.transpose();
        let mut gw = Vector3::zeros();
        for (j, (xw, nw)) in world.surface.iter().enumerate() {
            gw += xw.cross(&rt.rotate(&net.x[j]));
            gw += nw.cross(&rt.rotate(&nbar[j]));
        }
        for (j, xw) in world.offsurface.iter().enumerate() {
            gw += xw.cross(&rt.rotate(&net.x[n_surf + j]));
        }
        bundle.rotation = Some(gw);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_model, FieldConfig};
    use crate::geometry::{exp_so3, RotationMatrix};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere_field() -> impl SdfField {
        (
            |p: &Vector3<f64>| p.norm() - 1.0,
            |p: &Vector3<f64>| p.normalize(),
        )
    }

    fn sphere_batch(n: usize, seed: u64) -> SampleBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = || {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let surface: Vec<_> = (0..n)
            .map(|_| {
                let p = Vector3::new(gauss(), gauss(), gauss()).normalize();
                (p, p)
            })
            .collect();
        let offsurface: Vec<_> = (0..n)
            .map(|_| Vector3::new(gauss(), gauss(), gauss()) * 0.7)
            .collect();
        SampleBatch { surface, offsurface }
    }

    #[test]
    fn surface_loss_zero_on_exact_sphere() {
        let w = LossWeights::default();
        let batch = sphere_batch(64, 1);
        let (v, s, n) = surface_loss(&unit_sphere_field(), &batch.surface, &w).unwrap();
        assert!(v < 1e-10, "v = {v}");
        assert!(s < 1e-10 && n < 1e-10);
    }

    #[test]
    fn surface_loss_flipped_normals_symmetric() {
        let w = LossWeights::default();
        let batch = sphere_batch(64, 2);
        let flipped: Vec<_> = batch.surface.iter().map(|(p, n)| (*p, -n)).collect();
        let (_, _, n) = surface_loss(&unit_sphere_field(), &flipped, &w).unwrap();
        assert!(n < 1e-10);
    }

    #[test]
    fn surface_loss_constant_field() {
        let w = LossWeights::default();
        let c = 0.3;
        let field = (
            move |_: &Vector3<f64>| c,
            |_: &Vector3<f64>| Vector3::zeros(),
        );
        let batch = sphere_batch(32, 3);
        let (v, s, n) = surface_loss(&field, &batch.surface, &w).unwrap();
        assert_abs_diff_eq!(s, w.surface * c, epsilon = 1e-10);
        assert_abs_diff_eq!(n, w.normal, epsilon = 1e-10);
        assert_abs_diff_eq!(v, s + n, epsilon = 1e-10);
    }

    #[test]
    fn surface_loss_empty_batch() {
        let w = LossWeights::default();
        assert!(matches!(
            surface_loss(&unit_sphere_field(), &[], &w),
            Err(ObjectiveError::EmptyBatch { .. })
        ));
    }

    #[test]
    fn eikonal_zero_on_exact_sphere() {
        let w = LossWeights::default();
        let batch = sphere_batch(64, 4);
        let (_, eik, off) = eikonal_offsurface_loss(&unit_sphere_field(), &batch, &w).unwrap();
        assert!(eik < 1e-10, "eik = {eik}");
        // Off-surface term per point is exp(-alpha |d(x)|).
        let expected = w.offsurface
            * batch
                .offsurface
                .iter()
                .map(|p| (-w.alpha * (p.norm() - 1.0).abs()).exp())
                .sum::<f64>()
            / batch.offsurface.len() as f64;
        assert_abs_diff_eq!(off, expected, epsilon = 1e-12);
    }

    #[test]
    fn eikonal_on_flat_fields() {
        let w = LossWeights::default();
        let batch = sphere_batch(32, 5);
        let zero_field = (
            |_: &Vector3<f64>| 0.0,
            |_: &Vector3<f64>| Vector3::zeros(),
        );
        let (_, eik, off) = eikonal_offsurface_loss(&zero_field, &batch, &w).unwrap();
        assert_abs_diff_eq!(eik, w.eikonal, epsilon = 1e-12);
        assert_abs_diff_eq!(off, w.offsurface, epsilon = 1e-12);

        let steep = (
            |p: &Vector3<f64>| 2.0 * p.x,
            |_: &Vector3<f64>| Vector3::new(2.0, 0.0, 0.0),
        );
        let (_, eik, _) = eikonal_offsurface_loss(&steep, &batch, &w).unwrap();
        assert_abs_diff_eq!(eik, w.eikonal, epsilon = 1e-12);
    }

    #[test]
    fn code_reg_analytic() {
        let w = LossWeights::default();
        let mut z = LatentPair { z_i: vec![0.0; 8], z_d: vec![0.0; 8] };
        assert_eq!(code_reg_loss(&[&z], &w), 0.0);
        z.z_i[0] = 3.0;
        z.z_i[1] = 4.0;
        assert_abs_diff_eq!(code_reg_loss(&[&z], &w), w.code_reg * 5.0, epsilon = 1e-12);
        let doubled = LatentPair {
            z_i: z.z_i.iter().map(|v| 2.0 * v).collect(),
            z_d: z.z_d.clone(),
        };
        assert_abs_diff_eq!(
            code_reg_loss(&[&doubled], &w),
            2.0 * code_reg_loss(&[&z], &w),
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_energy_sphere_reduces_to_offsurface() {
        let w = LossWeights::default();
        let batch = sphere_batch(64, 6);
        let codes = LatentPair { z_i: vec![0.0; 4], z_d: vec![0.0; 4] };
        let report = total_energy(&unit_sphere_field(), &codes, &batch, &w, None).unwrap();
        assert!(report.surface_sdf < 1e-10);
        assert!(report.normal < 1e-10);
        assert!(report.eikonal < 1e-10);
        assert_eq!(report.code_reg, 0.0);
        assert_abs_diff_eq!(report.total, report.offsurface, epsilon = 1e-10);
    }

    #[test]
    fn total_energy_identity_pose_matches_no_pose() {
        let cfg = FieldConfig {
            hidden_width: 16,
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            ..FieldConfig::desk()
        };
        let model = init_model(&cfg, 3);
        let codes = LatentPair { z_i: vec![0.1; 4], z_d: vec![-0.2; 4] };
        let field = DecodedField { model: &model, codes: &codes };
        let w = LossWeights::default();
        let batch = sphere_batch(16, 7);
        let a = total_energy(&field, &codes, &batch, &w, None).unwrap();
        let b = total_energy(&field, &codes, &batch, &w, Some(&RigidPose::identity())).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn total_energy_pose_commutes_with_pretransform() {
        let cfg = FieldConfig {
            hidden_width: 16,
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            ..FieldConfig::desk()
        };
        let model = init_model(&cfg, 4);
        let codes = LatentPair { z_i: vec![0.1; 4], z_d: vec![-0.2; 4] };
        let field = DecodedField { model: &model, codes: &codes };
        let w = LossWeights::default();
        let batch = sphere_batch(16, 8);
        let pose = RigidPose::new(
            exp_so3(&Vector3::new(0.4, -0.8, 0.2)),
            Vector3::new(0.1, 0.2, -0.3),
        );
        let with_pose = total_energy(&field, &codes, &batch, &w, Some(&pose)).unwrap();
        let pre = transform_batch(&batch, &pose);
        let without = total_energy(&field, &codes, &pre, &w, None).unwrap();
        assert_abs_diff_eq!(with_pose.total, without.total, epsilon = 1e-12);
    }

    #[test]
    fn report_total_is_weighted_sum() {
        let cfg = FieldConfig {
            hidden_width: 16,
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            ..FieldConfig::desk()
        };
        let model = init_model(&cfg, 5);
        let codes = LatentPair { z_i: vec![0.3; 4], z_d: vec![-0.1; 4] };
        let field = DecodedField { model: &model, codes: &codes };
        let report =
            total_energy(&field, &codes, &sphere_batch(32, 9), &LossWeights::default(), None)
                .unwrap();
        let sum = report.surface_sdf + report.normal + report.eikonal + report.offsurface
            + report.code_reg;
        assert_abs_diff_eq!(report.total, sum, epsilon = 1e-10);
        assert!(report.surface_sdf >= 0.0 && report.normal >= 0.0);
        assert!(report.eikonal >= 0.0 && report.offsurface >= 0.0 && report.code_reg >= 0.0);
    }

    #[test]
    fn energy_invariant_under_batch_permutation() {
        let cfg = FieldConfig {
            hidden_width: 16,
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            ..FieldConfig::desk()
        };
        let model = init_model(&cfg, 6);
        let codes = LatentPair { z_i: vec![0.3; 4], z_d: vec![-0.1; 4] };
        let field = DecodedField { model: &model, codes: &codes };
        let w = LossWeights::default();
        let batch = sphere_batch(24, 10);
        let mut permuted = batch.clone();
        permuted.surface.reverse();
        permuted.offsurface.rotate_left(7);
        let a = total_energy(&field, &codes, &batch, &w, None).unwrap();
        let b = total_energy(&field, &codes, &permuted, &w, None).unwrap();
        assert_abs_diff_eq!(a.total, b.total, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let cfg = FieldConfig {
            hidden_width: 16,
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            ..FieldConfig::desk()
        };
        let model = init_model(&cfg, 7);
        let codes = LatentPair { z_i: vec![0.3; 4], z_d: vec![-0.1; 4] };
        let zero = LossWeights {
            surface: 0.0,
            normal: 0.0,
            eikonal: 0.0,
            offsurface: 0.0,
            code_reg: 0.0,
            alpha: 100.0,
        };
        let bundle = energy_gradients(
            &model,
            &codes,
            &sphere_batch(16, 11),
            &zero,
            None,
            WrtMask::all(),
        )
        .unwrap();
        assert!(bundle.params.unwrap().iter().all(|v| *v == 0.0));
        assert!(bundle.z_i.unwrap().iter().all(|v| *v == 0.0));
        assert!(bundle.z_d.unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(bundle.translation.unwrap(), Vector3::zeros());
        assert_eq!(bundle.rotation.unwrap(), Vector3::zeros());
    }

    #[test]
    fn code_reg_gradient_is_unit_direction() {
        let w = LossWeights { surface: 0.0, normal: 0.0, eikonal: 0.0, offsurface: 0.0, ..LossWeights::default() };
        let cfg = FieldConfig {
            hidden_width: 16,
            pe_bands: 2,
            identity_dim: 4,
            deformation_dim: 4,
            ..FieldConfig::desk()
        };
        let mut model = init_model(&cfg, 8);
        // Dead network: only the code regularizer contributes.
        let (w_off, _) = cfg.layer_offsets(cfg.n_layers - 1);
        for p in &mut model.params[w_off..] {
            *p = 0.0;
        }
        let codes = LatentPair { z_i: vec![3.0, 4.0, 0.0, 0.0], z_d: vec![0.0; 4] };
        let bundle = energy_gradients(
            &model,
            &codes,
            &sphere_batch(8, 12),
            &w,
            None,
            WrtMask::codes(),
        )
        .unwrap();
        let zi = bundle.z_i.unwrap();
        assert_abs_diff_eq!(zi[0], w.code_reg * 3.0 / 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(zi[1], w.code_reg * 4.0 / 5.0, epsilon = 1e-10);
        // z_d sits exactly at zero; the norm subgradient there is zero.
        assert!(bundle.z_d.unwrap().iter().all(|v| *v == 0.0));
    }

    // The FD sweep over every gradient block (params, codes, translation,
    // rotation) lives in the acceptance suite; here a single smoke
    // configuration guards the plumbing.
    #[test]
    fn gradient_blocks_match_finite_differences_smoke() {
        let cfg = FieldConfig {
            hidden_width: 12,
            pe_bands: 2,
            identity_dim: 3,
            deformation_dim: 3,
            n_layers: 5,
            skip_layer: 2,
        };
        let mut model = init_model(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for p in &mut model.params {
            *p += 0.05 * (rng.gen::<f64>() - 0.5);
        }
        let codes = LatentPair {
            z_i: vec![0.2, -0.3, 0.1],
            z_d: vec![-0.1, 0.4, 0.05],
        };
        let batch = sphere_batch(12, 14);
        let w = LossWeights::default();
        let pose = RigidPose::new(
            exp_so3(&Vector3::new(0.3, 0.5, -0.2)),
            Vector3::new(0.05, -0.1, 0.2),
        );
        let bundle =
            energy_gradients(&model, &codes, &batch, &w, Some(&pose), WrtMask::all()).unwrap();
        let energy = |m: &FieldModel, c: &LatentPair, p: &RigidPose| {
            let f = DecodedField { model: m, codes: c };
            total_energy(&f, c, &batch, &w, Some(p)).unwrap().total
        };

        let h = 1e-5;
        // Codes.
        let zi = bundle.z_i.as_ref().unwrap();
        for k in 0..cfg.identity_dim {
            let mut cp = codes.clone();
            cp.z_i[k] += h;
            let mut cm = codes.clone();
            cm.z_i[k] -= h;
            let fd = (energy(&model, &cp, &pose) - energy(&model, &cm, &pose)) / (2.0 * h);
            assert!(((zi[k] - fd) / fd.abs().max(1e-6)).abs() < 1e-4, "z_i[{k}]");
        }
        // Translation.
        let gt = bundle.translation.unwrap();
        for d in 0..3 {
            let mut pp = pose;
            pp.translation[d] += h;
            let mut pm = pose;
            pm.translation[d] -= h;
            let fd = (energy(&model, &codes, &pp) - energy(&model, &codes, &pm)) / (2.0 * h);
            assert!(((gt[d] - fd) / fd.abs().max(1e-6)).abs() < 1e-4, "t[{d}]");
        }
        // Rotation at dw = 0.
        let gw = bundle.rotation.unwrap();
        for d in 0..3 {
            let mut dw = Vector3::zeros();
            dw[d] = h;
            let rp = RigidPose::new(pose.rotation.compose(&exp_so3(&dw)), pose.translation);
            dw[d] = -h;
            let rm = RigidPose::new(pose.rotation.compose(&exp_so3(&dw)), pose.translation);
            let fd = (energy(&model, &codes, &rp) - energy(&model, &codes, &rm)) / (2.0 * h);
            assert!(((gw[d] - fd) / fd.abs().max(1e-6)).abs() < 1e-4, "dw[{d}]: exact {} fd {fd}", gw[d]);
        }
        // Params (subset).
        let gp = bundle.params.as_ref().unwrap();
        for i in (0..model.params.len()).step_by(41) {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let lp = energy(&model, &codes, &pose);
            model.params[i] = orig - h;
            let lm = energy(&model, &codes, &pose);
            model.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(((gp[i] - fd) / fd.abs().max(1e-6)).abs() < 1e-4, "param {i}");
        }
    }

    #[test]
    fn rotation_matrix_constructor_rejects_garbage() {
        let bad = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RotationMatrix::new(bad).is_err());
    }
}
