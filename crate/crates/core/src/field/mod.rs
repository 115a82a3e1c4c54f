//! The implicit field decoder `f(x; z_I, z_D; phi)` and its code banks.
//!
//! Parameter layout of `FieldModel::params` (documented, checkpoint-stable):
//! layers in order 0..n_layers, each layer stores its row-major weight matrix
//! `(out x in)` followed by its bias vector `(out)`. Layer input dims:
//! layer 0 takes the full `input_dim`, the skip layer takes
//! `hidden_width + input_dim` (previous activation with the raw input
//! re-concatenated), every other layer takes `hidden_width`. The last layer
//! outputs a single scalar, all earlier layers `hidden_width`.
//!
//! The input layout is `PE(x) (+) z_D (+) z_I` (191 dims at defaults);
//! reordering it is a checkpoint-format break.

mod net;

pub use net::{backward, forward, positional_encode, BatchForward, NetGradients};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::FieldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub pe_bands: usize,
    pub identity_dim: usize,
    pub deformation_dim: usize,
    pub hidden_width: usize,
    pub n_layers: usize,
    pub skip_layer: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            pe_bands: 10,
            identity_dim: 64,
            deformation_dim: 64,
            hidden_width: 512,
            n_layers: 8,
            skip_layer: 4,
        }
    }
}

impl FieldConfig {
    /// Desk-scale variant used throughout the test suite.
    pub fn desk() -> Self {
        Self { hidden_width: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.identity_dim == 0 || self.deformation_dim == 0 {
            return Err(FieldError::BadConfig { what: "latent dims must be >= 1".into() });
        }
        if self.n_layers < 2 || self.skip_layer == 0 || self.skip_layer >= self.n_layers {
            return Err(FieldError::BadConfig {
                what: format!(
                    "need 1 <= skip_layer < n_layers, got skip {} layers {}",
                    self.skip_layer, self.n_layers
                ),
            });
        }
        Ok(())
    }

    pub fn pe_dim(&self) -> usize {
        3 + 6 * self.pe_bands
    }

    pub fn input_dim(&self) -> usize {
        self.pe_dim() + self.identity_dim + self.deformation_dim
    }

    /// (out, in) dims of layer `i`.
    pub fn layer_dims(&self, i: usize) -> (usize, usize) {
        let out = if i + 1 == self.n_layers { 1 } else { self.hidden_width };
        let inp = if i == 0 {
            self.input_dim()
        } else if i == self.skip_layer {
            self.hidden_width + self.input_dim()
        } else {
            self.hidden_width
        };
        (out, inp)
    }

    /// (weight offset, bias offset) of layer `i` into the flat parameter
    /// array.
    pub fn layer_offsets(&self, i: usize) -> (usize, usize) {
        let mut off = 0;
        for l in 0..i {
            let (out, inp) = self.layer_dims(l);
            off += out * inp + out;
        }
        let (out, inp) = self.layer_dims(i);
        (off, off + out * inp)
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers)
            .map(|i| {
                let (out, inp) = self.layer_dims(i);
                out * inp + out
            })
            .sum()
    }
}

/// Decoder weights plus architecture config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub config: FieldConfig,
    pub params: Vec<f64>,
}

/// One (identity, deformation) code pair fed to the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub z_i: Vec<f64>,
    pub z_d: Vec<f64>,
}

impl LatentPair {
    pub fn zeros(config: &FieldConfig) -> Self {
        Self { z_i: vec![0.0; config.identity_dim], z_d: vec![0.0; config.deformation_dim] }
    }
}

/// Radius of the sphere the freshly initialized field approximates.
pub const INIT_RADIUS: f64 = 0.5;

/// Geometric initialization: the initial field approximates the SDF of a
/// sphere of radius `INIT_RADIUS` around the origin, so training starts from
/// a well-posed zero-level set.
///
/// Construction: the first layer projects the raw coordinates onto paired
/// `+/-` random directions; the second layer sums each pair, and
/// `softplus(t) + softplus(-t)` is a smooth `|t|`, so its outputs are
/// smoothed `|g_m . x|`. The remaining hidden layers pass values through
/// near-identity maps (softplus is ~linear on the positive operating range),
/// and the linear head averages the directional distances into ~`||x||/2`.
/// The head is then calibrated on-axis so the radial slope is ~1 and
/// `f(0, 0-codes) = -INIT_RADIUS` exactly. Small Gaussian noise on all
/// weights breaks symmetry; everything is deterministic per seed.
pub fn init_model(config: &FieldConfig, seed: u64) -> FieldModel {
    config.validate().expect("invalid field config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; config.param_count()];
    let w = config.hidden_width;
    let pairs = (w / 2).max(1);
    let sharpness = 4.0;

    // Random unit directions for the first-layer projections.
    let dirs: Vec<Vector3<f64>> = (0..pairs)
        .map(|_| loop {
            let v = Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng));
            if v.norm() > 1e-6 {
                break v.normalize();
            }
        })
        .collect();

    for i in 0..config.n_layers {
        let (out, inp) = config.layer_dims(i);
        let (w_off, b_off) = config.layer_offsets(i);
        let mut set = |r: usize, c: usize, v: f64| params[w_off + r * inp + c] = v;

        if i == 0 {
            // Rows 0..pairs: +s g_m . x; rows pairs..2*pairs: -s g_m . x.
            for r in 0..out {
                let m = r % pairs;
                let sign = if r / pairs == 1 { -1.0 } else { 1.0 };
                for d in 0..3 {
                    set(r, d, sign * sharpness * dirs[m][d]);
                }
            }
        } else if i == 1 && config.skip_layer != 1 {
            // Row m: (sp(+t) + sp(-t)) / s ~ |g_m . x|, lifted by +3 into the
            // near-linear range of softplus.
            for r in 0..out {
                let m = r % pairs;
                set(r, m, 1.0 / sharpness);
                if pairs + m < w {
                    set(r, pairs + m, 1.0 / sharpness);
                }
            }
            for slot in &mut params[b_off..b_off + out] {
                *slot = 3.0;
            }
        } else if i + 1 == config.n_layers {
            let scale = 2.0 / inp as f64;
            for c in 0..inp.min(w) {
                set(0, c, scale);
            }
        } else {
            // Near-identity pass-through; the skip layer ignores the
            // re-concatenated input columns at init.
            for r in 0..out {
                set(r, r % w, 1.0);
            }
        }
    }

    // Symmetry-breaking noise.
    for slot in params.iter_mut() {
        *slot += 1e-3 * gaussian(&mut rng);
    }

    let mut model = FieldModel { config: *config, params };

    // Calibrate the head: unit radial slope on average over the axes, then
    // exact value at the origin.
    let zero = LatentPair::zeros(config);
    let f0 = sdf_eval(&model, &zero, &Vector3::zeros());
    let probe = 0.5;
    let mut mean_rise = 0.0;
    for dir in [
        Vector3::x(),
        Vector3::y(),
        Vector3::z(),
        -Vector3::x(),
        -Vector3::y(),
        -Vector3::z(),
    ] {
        mean_rise += (sdf_eval(&model, &zero, &(probe * dir)) - f0) / 6.0;
    }
    let (w_off, b_off) = config.layer_offsets(config.n_layers - 1);
    let gain = probe / mean_rise.max(1e-6);
    for slot in &mut model.params[w_off..b_off] {
        *slot *= gain;
    }
    let f0 = sdf_eval(&model, &zero, &Vector3::zeros());
    model.params[b_off] = model.params[b_off] - f0 - INIT_RADIUS;
    model
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn sdf_eval(model: &FieldModel, codes: &LatentPair, x: &Vector3<f64>) -> f64 {
    forward(model, codes, std::slice::from_ref(x)).values()[0]
}

pub fn sdf_eval_batch(model: &FieldModel, codes: &LatentPair, xs: &[Vector3<f64>]) -> Vec<f64> {
    forward(model, codes, xs).values().to_vec()
}

/// Exact spatial gradient `df/dx` (reverse mode, not finite differences).
pub fn sdf_spatial_gradient(model: &FieldModel, codes: &LatentPair, x: &Vector3<f64>) -> Vector3<f64> {
    forward(model, codes, std::slice::from_ref(x)).spatial_gradients()[0]
}

/// Which code halves to blend in `interpolate_codes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpMode {
    Both,
    IdentityOnly,
    DeformationOnly,
}

/// Componentwise `(1 - t) a + t b`, per selected code half; the unselected
/// half is taken from `a`.
pub fn interpolate_codes(
    a: &LatentPair,
    b: &LatentPair,
    t: f64,
    mode: InterpMode,
) -> Result<LatentPair, FieldError> {
    if a.z_i.len() != b.z_i.len() {
        return Err(FieldError::DimMismatch { expected: a.z_i.len(), got: b.z_i.len() });
    }
    if a.z_d.len() != b.z_d.len() {
        return Err(FieldError::DimMismatch { expected: a.z_d.len(), got: b.z_d.len() });
    }
    let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(u, v)| (1.0 - t) * u + t * v).collect()
    };
    Ok(match mode {
        InterpMode::Both => LatentPair { z_i: lerp(&a.z_i, &b.z_i), z_d: lerp(&a.z_d, &b.z_d) },
        InterpMode::IdentityOnly => LatentPair { z_i: lerp(&a.z_i, &b.z_i), z_d: a.z_d.clone() },
        InterpMode::DeformationOnly => {
            LatentPair { z_i: a.z_i.clone(), z_d: lerp(&a.z_d, &b.z_d) }
        }
    })
}

/// Identity codes keyed by subject, deformation codes keyed by
/// (subject, sample). Identity sharing is structural: there is exactly one
/// identity vector per subject and every sample handle resolves to it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CodeBank {
    pub identity: BTreeMap<String, Vec<f64>>,
    pub deformation: BTreeMap<(String, String), Vec<f64>>,
}

impl CodeBank {
    /// Registers a sample, creating zero codes where missing.
    pub fn register(&mut self, config: &FieldConfig, subject: &str, sample: &str) {
        self.identity
            .entry(subject.to_string())
            .or_insert_with(|| vec![0.0; config.identity_dim]);
        self.deformation
            .entry((subject.to_string(), sample.to_string()))
            .or_insert_with(|| vec![0.0; config.deformation_dim]);
    }

    /// Gaussian init with the given std, deterministic per seed. Subjects and
    /// samples are visited in sorted order.
    pub fn randomize(&mut self, sigma: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for code in self.identity.values_mut() {
            for v in code.iter_mut() {
                *v = sigma * gaussian(&mut rng);
            }
        }
        for code in self.deformation.values_mut() {
            for v in code.iter_mut() {
                *v = sigma * gaussian(&mut rng);
            }
        }
    }

    pub fn pair(&self, subject: &str, sample: &str) -> Option<LatentPair> {
        Some(LatentPair {
            z_i: self.identity.get(subject)?.clone(),
            z_d: self.deformation.get(&(subject.to_string(), sample.to_string()))?.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.identity.values().chain(self.deformation.values())
            .all(|c| c.iter().all(|v| v.is_finite()))
    }
}
