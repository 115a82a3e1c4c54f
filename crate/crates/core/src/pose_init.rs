//! Rotation initialization for world-coordinate observations.
//!
//! Three routes: a policy-gradient search over a fixed action space of
//! uniformly sampled rotations, an exhaustive multi-hypothesis baseline that
//! scores every candidate, and a learned Siamese point-cloud regressor that
//! predicts the relative pose against a reference cloud.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ReconError;
use crate::field::{FieldModel, LatentPair};
use crate::geometry::{rotation_from_6d, sample_uniform_rotations, RigidPose, RotationMatrix};
use crate::objective::{energy_gradients, LossWeights, WrtMask};
use crate::sampling::{sample_surface, OrientedPointCloud, SampleBatch};
use crate::synth::stream_seed;
use crate::trainer::{adam_step, AdamState};

// ------------------------------------------------------------- PG search

/// Discrete policy over a fixed rotation action space: unconstrained logits,
/// probabilities by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPolicy {
    pub actions: Vec<RotationMatrix>,
    pub logits: Vec<f64>,
}

impl RotationPolicy {
    /// Uniformly sampled action space with a flat initial policy.
    pub fn uniform(k: usize, seed: u64) -> Self {
        Self { actions: sample_uniform_rotations(k, seed), logits: vec![0.0; k] }
    }

    /// Softmax probabilities; max-shifted for stability, sums to 1.
    pub fn probabilities(&self) -> Vec<f64> {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|&t| (t - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    /// Index of the highest-probability action (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &t) in self.logits.iter().enumerate() {
            if t > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgConfig {
    /// Action-space size K.
    pub n_actions: usize,
    /// Actions sampled per policy iteration (X), with replacement.
    pub samples_per_iter: usize,
    /// Inner code-optimization steps per hypothesis (Y).
    pub inner_shape_steps: usize,
    /// Surface samples used to score a hypothesis.
    pub eval_points: usize,
    /// Learning rate for the inner code optimization.
    pub code_lr: f64,
    pub policy_lr: f64,
    pub max_iters: usize,
    /// Stop once the best action's probability reaches this.
    pub converge_prob: f64,
    /// Score a hypothesis by the mean energy over every inner step instead of
    /// the final energy only.
    pub std_mode: bool,
    pub weights: LossWeights,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            n_actions: 2000,
            samples_per_iter: 400,
            inner_shape_steps: 10,
            eval_points: 250,
            code_lr: 5e-4,
            policy_lr: 0.01,
            max_iters: 50,
            converge_prob: 0.5,
            std_mode: false,
            weights: LossWeights::default(),
        }
    }
}

impl PgConfig {
    pub fn desk() -> Self {
        Self { n_actions: 128, samples_per_iter: 48, eval_points: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        if self.n_actions == 0
            || self.samples_per_iter == 0
            || self.eval_points == 0
            || self.max_iters == 0
        {
            return Err(ReconError::InitFailed { diagnostics: "zero-sized PG config".into() });
        }
        if self.samples_per_iter > self.n_actions {
            return Err(ReconError::InitFailed {
                diagnostics: format!(
                    "samples_per_iter {} exceeds action count {}",
                    self.samples_per_iter, self.n_actions
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub evaluations: usize,
    pub max_probability: f64,
    pub best_index: usize,
    pub best_reward: f64,
}

/// REINFORCE over a fixed reward table: sample actions from the policy,
/// evaluate unseen ones through `reward_fn` (cached, each action at most
/// once), ascend the logits with a batch-mean baseline.
pub fn pg_search<F>(
    policy: &mut RotationPolicy,
    pg: &PgConfig,
    seed: u64,
    mut reward_fn: F,
) -> Result<(usize, SearchStats), ReconError>
where
    F: FnMut(usize, &RotationMatrix) -> f64,
{
    pg.validate()?;
    let k = policy.actions.len();
    if k == 1 {
        return Ok((
            0,
            SearchStats {
                iterations: 0,
                evaluations: 0,
                max_probability: 1.0,
                best_index: 0,
                best_reward: reward_fn(0, &policy.actions[0]),
            },
        ));
    }

    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut iterations = 0;
    for iter in 0..pg.max_iters {
        iterations = iter + 1;
        let probs = policy.probabilities();
        let mut cdf = probs.clone();
        for i in 1..k {
            cdf[i] += cdf[i - 1];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "pg-sample", iter as u64));
        let picks: Vec<usize> = (0..pg.samples_per_iter)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..1.0);
                cdf.partition_point(|&c| c < u).min(k - 1)
            })
            .collect();

        for &a in &picks {
            if !cache.contains_key(&a) {
                let r = reward_fn(a, &policy.actions[a]);
                cache.insert(a, r);
            }
        }
        let rewards: Vec<f64> = picks.iter().map(|a| cache[a]).collect();
        let finite: Vec<f64> = rewards.iter().copied().filter(|r| r.is_finite()).collect();
        if finite.is_empty() {
            if cache.values().all(|r| !r.is_finite()) {
                return Err(ReconError::InitFailed {
                    diagnostics: format!(
                        "all {} evaluated hypothesis rewards are non-finite",
                        cache.len()
                    ),
                });
            }
            continue;
        }
        let baseline = finite.iter().sum::<f64>() / finite.len() as f64;

        // grad log pi(a) = e_a - pi; non-finite rewards contribute nothing.
        let scale = pg.policy_lr / pg.samples_per_iter as f64;
        let mut adv_sum = 0.0;
        for (&a, &r) in picks.iter().zip(&rewards) {
            if r.is_finite() {
                let adv = r - baseline;
                policy.logits[a] += scale * adv;
                adv_sum += adv;
            }
        }
        for (t, &p) in policy.logits.iter_mut().zip(&probs) {
            *t -= scale * adv_sum * p;
        }

        let max_p = policy.probabilities().iter().cloned().fold(0.0, f64::max);
        if max_p >= pg.converge_prob {
            break;
        }
    }

    let best = policy.argmax();
    let max_probability = policy.probabilities()[best];
    let best_reward = cache.get(&best).copied().unwrap_or(f64::NEG_INFINITY);
    Ok((
        best,
        SearchStats {
            iterations,
            evaluations: cache.len(),
            max_probability,
            best_index: best,
            best_reward,
        },
    ))
}

/// Canonicalizing translation for a rotation hypothesis: maps the observed
/// centroid onto the canonical origin.
pub fn centroid_translation(rotation: &RotationMatrix, cloud_world: &OrientedPointCloud) -> Vector3<f64> {
    -rotation.rotate(&cloud_world.centroid())
}

/// Runs the fixed-rotation inner code optimization and returns the final
/// (std_mode: mean per-step) energy on the hypothesis batch.
fn hypothesis_energy(
    model: &FieldModel,
    codes_init: &LatentPair,
    cloud_world: &OrientedPointCloud,
    rotation: &RotationMatrix,
    steps: usize,
    eval_points: usize,
    code_lr: f64,
    std_mode: bool,
    weights: &LossWeights,
    seed: u64,
) -> Result<f64, ReconError> {
    let pose = RigidPose::new(rotation.clone(), centroid_translation(rotation, cloud_world));
    let batch = SampleBatch {
        surface: sample_surface(cloud_world, eval_points, seed)?,
        offsurface: Vec::new(),
    };
    let mut codes = codes_init.clone();
    let mut opt_i = AdamState::new(codes.z_i.len());
    let mut opt_d = AdamState::new(codes.z_d.len());
    let mut step_sum = 0.0;
    for _ in 0..steps {
        let bundle =
            energy_gradients(model, &codes, &batch, weights, Some(&pose), WrtMask::codes())?;
        adam_step(&mut opt_i, &mut codes.z_i, &bundle.z_i.as_ref().unwrap(), code_lr)?;
        adam_step(&mut opt_d, &mut codes.z_d, &bundle.z_d.as_ref().unwrap(), code_lr)?;
        if std_mode {
            let field = crate::objective::DecodedField { model, codes: &codes };
            step_sum +=
                crate::objective::total_energy(&field, &codes, &batch, weights, Some(&pose))?
                    .total;
        }
    }
    if std_mode && steps > 0 {
        return Ok(step_sum / steps as f64);
    }
    let field = crate::objective::DecodedField { model, codes: &codes };
    Ok(crate::objective::total_energy(&field, &codes, &batch, weights, Some(&pose))?.total)
}

/// Policy-gradient rotation search against the learned field.
pub fn policy_gradient_init(
    model: &FieldModel,
    codes_init: &LatentPair,
    cloud_world: &OrientedPointCloud,
    pg: &PgConfig,
    seed: u64,
) -> Result<(RotationMatrix, SearchStats), ReconError> {
    pg.validate()?;
    if cloud_world.is_empty() {
        return Err(ReconError::InitFailed { diagnostics: "empty observation cloud".into() });
    }
    let mut policy = RotationPolicy::uniform(pg.n_actions, stream_seed(seed, "pg-actions", 0));
    let (best, stats) = pg_search(&mut policy, pg, seed, |a, rot| {
        hypothesis_energy(
            model,
            codes_init,
            cloud_world,
            rot,
            pg.inner_shape_steps,
            pg.eval_points,
            pg.code_lr,
            pg.std_mode,
            &pg.weights,
            stream_seed(seed, "pg-eval", a as u64),
        )
        .map(|e| -e)
        .unwrap_or(f64::NAN)
    })?;
    Ok((policy.actions[best].clone(), stats))
}

// ------------------------------------------------------------------ MHE

#[derive(Debug, Clone, PartialEq)]
pub struct MheConfig {
    pub n_hypotheses: usize,
    /// Code-optimization steps per hypothesis.
    pub steps: usize,
    pub eval_points: usize,
    pub code_lr: f64,
    pub weights: LossWeights,
}

impl Default for MheConfig {
    fn default() -> Self {
        Self {
            n_hypotheses: 2000,
            steps: 400,
            eval_points: 1000,
            code_lr: 5e-4,
            weights: LossWeights::default(),
        }
    }
}

impl MheConfig {
    pub fn desk() -> Self {
        Self { n_hypotheses: 128, steps: 10, eval_points: 128, ..Self::default() }
    }
}

/// Scores every hypothesis and returns (argmin index, per-hypothesis final
/// energies). Hypotheses run in parallel; the result order is fixed.
pub fn mhe_select(
    model: &FieldModel,
    codes_init: &LatentPair,
    cloud_world: &OrientedPointCloud,
    hypotheses: &[RotationMatrix],
    cfg: &MheConfig,
    seed: u64,
) -> Result<(usize, Vec<f64>), ReconError> {
    if hypotheses.is_empty() {
        return Err(ReconError::InitFailed { diagnostics: "empty hypothesis set".into() });
    }
    let energies: Vec<f64> = hypotheses
        .par_iter()
        .enumerate()
        .map(|(i, rot)| {
            hypothesis_energy(
                model,
                codes_init,
                cloud_world,
                rot,
                cfg.steps,
                cfg.eval_points,
                cfg.code_lr,
                false,
                &cfg.weights,
                stream_seed(seed, "mhe-eval", i as u64),
            )
            .unwrap_or(f64::INFINITY)
        })
        .collect();
    let mut best = None;
    for (i, &e) in energies.iter().enumerate() {
        if e.is_finite() && best.map_or(true, |b: usize| e < energies[b]) {
            best = Some(i);
        }
    }
    match best {
        Some(i) => Ok((i, energies)),
        None => Err(ReconError::InitFailed {
            diagnostics: format!("all {} hypothesis energies non-finite", hypotheses.len()),
        }),
    }
}

/// Exhaustive multi-hypothesis rotation selection.
pub fn mhe_init(
    model: &FieldModel,
    cloud_world: &OrientedPointCloud,
    cfg: &MheConfig,
    seed: u64,
) -> Result<RotationMatrix, ReconError> {
    let hypotheses =
        sample_uniform_rotations(cfg.n_hypotheses, stream_seed(seed, "mhe-actions", 0));
    let codes = LatentPair::zeros(&model.config);
    let (best, _) = mhe_select(model, &codes, cloud_world, &hypotheses, cfg, seed)?;
    Ok(hypotheses[best].clone())
}

// -------------------------------------------------------------- PoseNet

/// Layer widths of the Siamese point-cloud pose regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseNetConfig {
    /// Shared pointwise encoder widths; the last is the pooled feature size.
    pub encoder_widths: [usize; 3],
    /// Hidden widths of the regression head (output is fixed at 9).
    pub head_widths: [usize; 2],
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        Self { encoder_widths: [64, 256, 1024], head_widths: [512, 256] }
    }
}

impl PoseNetConfig {
    pub fn desk() -> Self {
        Self { encoder_widths: [32, 64, 128], head_widths: [64, 32] }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder_widths[2]
    }

    /// (in, out) per layer: 3 encoder layers then 3 head layers.
    pub fn layer_dims(&self) -> [(usize, usize); 6] {
        let [e0, e1, e2] = self.encoder_widths;
        let [h0, h1] = self.head_widths;
        [(3, e0), (e0, e1), (e1, e2), (2 * e2, h0), (h0, h1), (h1, 9)]
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| o * i + o).sum()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_dims()[..layer].iter().map(|(i, o)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseNetModel {
    pub config: PoseNetConfig,
    pub params: Vec<f64>,
}

/// He-style random init; the head bias starts at the 6D identity rotation so
/// an untrained model predicts a near-identity pose.
pub fn init_posenet(config: &PoseNetConfig, seed: u64) -> PoseNetModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; config.param_count()];
    for (layer, (n_in, n_out)) in config.layer_dims().iter().enumerate() {
        let off = config.layer_offset(layer);
        let sigma = (2.0 / *n_in as f64).sqrt();
        for w in &mut params[off..off + n_out * n_in] {
            *w = sigma * gaussian(&mut rng);
        }
    }
    let off = config.layer_offset(5) + 9 * config.head_widths[1];
    let identity_6d = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    params[off..off + 6].copy_from_slice(&identity_6d);
    PoseNetModel { config: *config, params }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn layer_slices<'a>(model: &'a PoseNetModel, layer: usize) -> (&'a [f64], &'a [f64]) {
    let (n_in, n_out) = model.config.layer_dims()[layer];
    let off = model.config.layer_offset(layer);
    (&model.params[off..off + n_out * n_in], &model.params[off + n_out * n_in..off + n_out * n_in + n_out])
}

fn relu(x: f64) -> f64 {
    if x > 0.0 { x } else { 0.0 }
}

/// Per-point encoder activations kept for backprop, plus the pooled feature
/// and the argmax point per channel.
struct EncoderTrace {
    /// acts[l][p * width + c]: post-ReLU output of encoder layer l, point p.
    acts: Vec<Vec<f64>>,
    feature: Vec<f64>,
    argmax: Vec<usize>,
    n_points: usize,
}

fn encode_trace(model: &PoseNetModel, points: &[Vector3<f64>]) -> EncoderTrace {
    let n = points.len();
    let mut prev: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mut acts = Vec::with_capacity(3);
    for layer in 0..3 {
        let (n_in, n_out) = model.config.layer_dims()[layer];
        let (w, b) = layer_slices(model, layer);
        let mut out = vec![0.0; n * n_out];
        for p in 0..n {
            let x = &prev[p * n_in..(p + 1) * n_in];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for i in 0..n_in {
                    s += row[i] * x[i];
                }
                out[p * n_out + o] = relu(s);
            }
        }
        acts.push(out.clone());
        prev = out;
    }
    let d = model.config.feature_dim();
    let mut feature = vec![f64::NEG_INFINITY; d];
    let mut argmax = vec![0usize; d];
    let last = &acts[2];
    for p in 0..n {
        for c in 0..d {
            let v = last[p * d + c];
            if v > feature[c] {
                feature[c] = v;
                argmax[c] = p;
            }
        }
    }
    EncoderTrace { acts, feature, argmax, n_points: n }
}

/// Max-pooled global feature of a point set. Invariant to point order and to
/// duplication of existing points.
pub fn posenet_encode(model: &PoseNetModel, points: &[Vector3<f64>]) -> Vec<f64> {
    encode_trace(model, points).feature
}

struct HeadTrace {
    /// Post-ReLU hidden activations of the two hidden head layers.
    hidden: [Vec<f64>; 2],
    out: [f64; 9],
}

fn head_forward(model: &PoseNetModel, joint: &[f64]) -> HeadTrace {
    let mut prev = joint.to_vec();
    let mut hidden: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for layer in 3..5 {
        let (n_in, n_out) = model.config.layer_dims()[layer];
        let (w, b) = layer_slices(model, layer);
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut s = b[o];
            for i in 0..n_in {
                s += row[i] * prev[i];
            }
            out[o] = relu(s);
        }
        hidden[layer - 3] = out.clone();
        prev = out;
    }
    let (n_in, _) = model.config.layer_dims()[5];
    let (w, b) = layer_slices(model, 5);
    let mut out = [0.0; 9];
    for o in 0..9 {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut s = b[o];
        for i in 0..n_in {
            s += row[i] * prev[i];
        }
        out[o] = s;
    }
    HeadTrace { hidden, out }
}

/// Raw 9-dimensional regression output for a (world, reference) cloud pair,
/// after the centroid shift.
fn posenet_raw(
    model: &PoseNetModel,
    world: &[Vector3<f64>],
    reference: &[Vector3<f64>],
) -> ([f64; 9], Vector3<f64>) {
    let cw = centroid_of(world);
    let cr = centroid_of(reference);
    let t_star = cr - cw;
    let shifted: Vec<Vector3<f64>> = world.iter().map(|p| p + t_star).collect();
    let fw = posenet_encode(model, &shifted);
    let fr = posenet_encode(model, reference);
    let joint: Vec<f64> = fw.iter().chain(fr.iter()).copied().collect();
    (head_forward(model, &joint).out, t_star)
}

fn centroid_of(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len().max(1) as f64
}

/// Composes the final pose from the regressed relative rotation/translation
/// and the centroid shift: `R = R~`, `t = R~ t* + t~`.
pub fn compose_prediction(
    rtilde: &RotationMatrix,
    ttilde: &Vector3<f64>,
    t_star: &Vector3<f64>,
) -> RigidPose {
    RigidPose::new(rtilde.clone(), rtilde.rotate(t_star) + ttilde)
}

/// Predicts the world-to-canonical pose of `cloud_world` relative to a
/// canonical reference cloud. Normals are ignored; only positions feed the
/// encoder.
pub fn posenet_predict(
    model: &PoseNetModel,
    cloud_world: &OrientedPointCloud,
    reference: &[Vector3<f64>],
) -> Result<RigidPose, ReconError> {
    if cloud_world.is_empty() || reference.is_empty() {
        return Err(ReconError::InitFailed { diagnostics: "empty cloud for posenet".into() });
    }
    let (out, t_star) = posenet_raw(model, &cloud_world.points, reference);
    let r6: [f64; 6] = out[..6].try_into().unwrap();
    let rtilde = rotation_from_6d(&r6)?;
    let ttilde = Vector3::new(out[6], out[7], out[8]);
    Ok(compose_prediction(&rtilde, &ttilde, &t_star))
}

// --------------------------------------------------- PoseNet training

/// Gram-Schmidt 6D-to-rotation forward with reverse-mode pullback:
/// given dL/dR returns dL/d(6D input).
fn rotation_6d_backward(v: &[f64; 6], rbar: &Matrix3<f64>) -> Result<[f64; 6], ReconError> {
    let v1 = Vector3::new(v[0], v[1], v[2]);
    let v2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = v1.norm();
    let a = v1 / n1;
    let p = a.dot(&v2);
    let w = v2 - p * a;
    let nw = w.norm();
    if n1 < 1e-12 || nw < 1e-12 {
        return Err(ReconError::Geometry(crate::error::GeometryError::DegenerateInput {
            what: "6D rotation input degenerate in backward pass",
        }));
    }
    let b = w / nw;
    let abar_col = rbar.column(0).into_owned();
    let bbar_col = rbar.column(1).into_owned();
    let cbar = rbar.column(2).into_owned();

    // c = a x b
    let mut abar = abar_col + b.cross(&cbar);
    let bbar = bbar_col + cbar.cross(&a);
    // b = w / ||w||
    let wbar = (bbar - b.dot(&bbar) * b) / nw;
    // w = v2 - (a . v2) a
    let v2bar = wbar - a.dot(&wbar) * a;
    abar += -(wbar.dot(&a)) * v2 - p * wbar;
    // a = v1 / ||v1||
    let v1bar = (abar - a.dot(&abar) * a) / n1;
    Ok([v1bar.x, v1bar.y, v1bar.z, v2bar.x, v2bar.y, v2bar.z])
}

/// Supervised loss for one training pair: geodesic rotation error (radians)
/// plus squared translation error of the composed pose.
pub fn posenet_loss(
    model: &PoseNetModel,
    world: &[Vector3<f64>],
    reference: &[Vector3<f64>],
    gt: &RigidPose,
) -> Result<(f64, Vec<f64>), ReconError> {
    let cw = centroid_of(world);
    let cr = centroid_of(reference);
    let t_star = cr - cw;
    let shifted: Vec<Vector3<f64>> = world.iter().map(|p| p + t_star).collect();
    let tw = encode_trace(model, &shifted);
    let tr = encode_trace(model, reference);
    let joint: Vec<f64> = tw.feature.iter().chain(tr.feature.iter()).copied().collect();
    let head = head_forward(model, &joint);

    let r6: [f64; 6] = head.out[..6].try_into().unwrap();
    let rtilde = rotation_from_6d(&r6)?;
    let ttilde = Vector3::new(head.out[6], head.out[7], head.out[8]);
    let t_pred = rtilde.rotate(&t_star) + ttilde;

    let c = ((gt.rotation.matrix().transpose() * rtilde.matrix()).trace() - 1.0) / 2.0;
    let cc = c.clamp(-1.0, 1.0);
    let theta = cc.acos();
    let dt = t_pred - gt.translation;
    let loss = theta + dt.norm_squared();

    // dL/dR~ = -R_gt / (2 sqrt(1 - c^2)) from the geodesic term (guarded near
    // the endpoints) plus 2 dt t*^T from the translation term.
    let denom = (1.0 - cc * cc).max(1e-9).sqrt();
    let rbar = gt.rotation.matrix() * (-0.5 / denom) + 2.0 * dt * t_star.transpose();
    let r6bar = rotation_6d_backward(&r6, &rbar)?;
    let mut out_bar = [0.0; 9];
    out_bar[..6].copy_from_slice(&r6bar);
    out_bar[6] = 2.0 * dt.x;
    out_bar[7] = 2.0 * dt.y;
    out_bar[8] = 2.0 * dt.z;

    let mut grad = vec![0.0; model.params.len()];
    let joint_bar = head_backward(model, &joint, &head, &out_bar, &mut grad);
    let d = model.config.feature_dim();
    encoder_backward(model, &shifted, &tw, &joint_bar[..d], &mut grad);
    encoder_backward(model, reference, &tr, &joint_bar[d..], &mut grad);
    Ok((loss, grad))
}

/// Backprops the 3-layer head; returns dL/d(joint feature) and accumulates
/// parameter gradients.
fn head_backward(
    model: &PoseNetModel,
    joint: &[f64],
    trace: &HeadTrace,
    out_bar: &[f64; 9],
    grad: &mut [f64],
) -> Vec<f64> {
    let mut delta: Vec<f64> = out_bar.to_vec();
    for layer in (3..6).rev() {
        let (n_in, n_out) = model.config.layer_dims()[layer];
        let off = model.config.layer_offset(layer);
        let input: &[f64] = match layer {
            3 => joint,
            4 => &trace.hidden[0],
            _ => &trace.hidden[1],
        };
        // ReLU mask on hidden layers (output layer is linear).
        if layer < 5 {
            let act = &trace.hidden[layer - 3];
            for (d, &a) in delta.iter_mut().zip(act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let (w, _) = layer_slices(model, layer);
        let mut prev_bar = vec![0.0; n_in];
        for o in 0..n_out {
            let db = delta[o];
            if db == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grad[off + o * n_in + i] += db * input[i];
                prev_bar[i] += db * row[i];
            }
            grad[off + n_out * n_in + o] += db;
        }
        delta = prev_bar;
    }
    delta
}

/// Backprops one encoder tower: pooled-feature cotangent routes to the
/// argmax point per channel, then down the shared pointwise layers.
fn encoder_backward(
    model: &PoseNetModel,
    points: &[Vector3<f64>],
    trace: &EncoderTrace,
    feature_bar: &[f64],
    grad: &mut [f64],
) {
    let n = trace.n_points;
    let d = model.config.feature_dim();
    let mut delta = vec![0.0; n * d];
    for c in 0..d {
        delta[trace.argmax[c] * d + c] = feature_bar[c];
    }
    let raw: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    for layer in (0..3).rev() {
        let (n_in, n_out) = model.config.layer_dims()[layer];
        let off = model.config.layer_offset(layer);
        let input: &[f64] = if layer == 0 { &raw } else { &trace.acts[layer - 1] };
        let act = &trace.acts[layer];
        let (w, _) = layer_slices(model, layer);
        let mut prev_bar = vec![0.0; n * n_in];
        for p in 0..n {
            let x = &input[p * n_in..(p + 1) * n_in];
            for o in 0..n_out {
                let db = delta[p * n_out + o];
                if db == 0.0 || act[p * n_out + o] <= 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grad[off + o * n_in + i] += db * x[i];
                    prev_bar[p * n_in + i] += db * row[i];
                }
                grad[off + n_out * n_in + o] += db;
            }
        }
        delta = prev_bar;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseNetTrainConfig {
    pub net: PoseNetConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Points subsampled per cloud for each training pair.
    pub points: usize,
    /// Sigma of the latent perturbation used to synthesize reference shapes.
    pub code_sigma: f64,
    /// Random poses draw translations uniformly from this half-extent box.
    pub translation_extent: f64,
    /// Marching-cubes resolution for the per-epoch reference shape.
    pub mesh_resolution: usize,
    pub seed: u64,
}

impl Default for PoseNetTrainConfig {
    fn default() -> Self {
        Self {
            net: PoseNetConfig::default(),
            epochs: 1000,
            learning_rate: 5e-4,
            points: 256,
            code_sigma: 0.05,
            translation_extent: 0.5,
            mesh_resolution: 32,
            seed: 0,
        }
    }
}

impl PoseNetTrainConfig {
    pub fn desk() -> Self {
        Self {
            net: PoseNetConfig::desk(),
            epochs: 100,
            points: 128,
            mesh_resolution: 24,
            ..Self::default()
        }
    }
}

/// Reference cloud for PoseNet supervision: surface samples of the learned
/// shape at a small random perturbation of the 0-code.
pub fn posenet_reference(
    field: &FieldModel,
    cfg: &PoseNetTrainConfig,
    epoch: usize,
) -> Result<Vec<Vector3<f64>>, ReconError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "pn-code", epoch as u64));
    let mut codes = LatentPair::zeros(&field.config);
    for z in codes.z_i.iter_mut().chain(codes.z_d.iter_mut()) {
        *z = cfg.code_sigma * gaussian(&mut rng);
    }
    let mesh = crate::meshing::extract_mesh(field, &codes, cfg.mesh_resolution, None)?;
    Ok(crate::metrics::sample_mesh_surface(
        &mesh,
        cfg.points,
        stream_seed(cfg.seed, "pn-ref", epoch as u64),
    )?)
}

/// Trains the pose regressor against random SE(3) placements of the
/// canonical dataset shapes. Returns the model and per-epoch mean losses.
pub fn train_posenet(
    field: &FieldModel,
    dataset: &crate::trainer::Dataset,
    cfg: &PoseNetTrainConfig,
) -> Result<(PoseNetModel, Vec<f64>), ReconError> {
    if dataset.shapes.is_empty() {
        return Err(ReconError::Train(crate::error::TrainError::EmptyDataset));
    }
    let mut model = init_posenet(&cfg.net, stream_seed(cfg.seed, "pn-init", 0));
    let mut opt = AdamState::new(model.params.len());
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let reference = posenet_reference(field, cfg, epoch)?;
        let mut order: Vec<usize> = (0..dataset.shapes.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "pn-epoch", epoch as u64));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for (j, &si) in order.iter().enumerate() {
            let step = (epoch * dataset.shapes.len() + j) as u64;
            let pair_seed = stream_seed(cfg.seed, "pn-pair", step);
            let mut prng = ChaCha8Rng::seed_from_u64(pair_seed);
            let cloud = &dataset.shapes[si].cloud;
            let canonical: Vec<Vector3<f64>> = (0..cfg.points)
                .map(|_| cloud.points[prng.gen_range(0..cloud.len())])
                .collect();
            let rot = sample_uniform_rotations(1, stream_seed(pair_seed, "rot", 0))
                .pop()
                .unwrap();
            let e = cfg.translation_extent;
            let t = Vector3::new(
                prng.gen_range(-e..=e),
                prng.gen_range(-e..=e),
                prng.gen_range(-e..=e),
            );
            // pose_wc places the canonical shape in the world; supervision is
            // the inverse, world to canonical.
            let pose_wc = RigidPose::new(rot, t);
            let gt = pose_wc.inverse();
            let world: Vec<Vector3<f64>> =
                canonical.iter().map(|p| pose_wc.apply_point(p)).collect();
            let (loss, grad) = posenet_loss(&model, &world, &reference, &gt)?;
            if !loss.is_finite() {
                return Err(ReconError::NonFiniteLoss { iter: epoch });
            }
            adam_step(&mut opt, &mut model.params, &grad, cfg.learning_rate)?;
            epoch_loss += loss;
        }
        losses.push(epoch_loss / dataset.shapes.len() as f64);
    }
    Ok((model, losses))
}
