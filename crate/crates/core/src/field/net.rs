//! Batched forward/backward machinery for the decoder MLP.
//!
//! The decoder maps `u = [PE(x); z_D; z_I]` through `n_layers` fully-connected
//! layers with softplus activations, re-concatenating `u` at the skip layer,
//! ending in a linear scalar head.
//!
//! Losses contain both `f` and its spatial gradient `g = df/dx`, so parameter
//! and code gradients need exact second-order mixed derivatives. Those are
//! obtained by reverse-mode differentiation over a forward-tangent (dual)
//! pass: each point carries a tangent direction `b` through the network, the
//! tangent output equals `b . g`, and backpropagating the scalar
//! `sum_j a_j f_j + bdot_j` yields exact gradients of any loss with local
//! sensitivities `a = dL/df`, `b = dL/dg` with respect to weights, codes and
//! point positions.

use nalgebra::Vector3;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{FieldConfig, FieldModel, LatentPair};

/// Sigmoid, the derivative of softplus.
#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    // Stable log(1 + e^x).
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Positional encoding of a single point:
/// `[x; (sin(2^k pi x_d), cos(2^k pi x_d)) for k, d]`, laid out as entry
/// `3 + 6k + 2d` = sin, `3 + 6k + 2d + 1` = cos.
pub fn positional_encode(x: &Vector3<f64>, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * bands);
    out.extend_from_slice(&[x.x, x.y, x.z]);
    for k in 0..bands {
        let c = (1u64 << k) as f64 * std::f64::consts::PI;
        for d in 0..3 {
            out.push((c * x[d]).sin());
            out.push((c * x[d]).cos());
        }
    }
    out
}

/// Gradients of all loss blocks produced by one backward pass.
pub struct NetGradients {
    /// Flat parameter gradient, same layout as `FieldModel::params`.
    pub params: Vec<f64>,
    pub z_i: Vec<f64>,
    pub z_d: Vec<f64>,
    /// Per-point gradient with respect to the (canonical-space) position.
    pub x: Vec<Vector3<f64>>,
}

impl NetGradients {
    pub fn zeros(config: &FieldConfig, n_points: usize) -> Self {
        Self {
            params: vec![0.0; config.param_count()],
            z_i: vec![0.0; config.identity_dim],
            z_d: vec![0.0; config.deformation_dim],
            x: vec![Vector3::zeros(); n_points],
        }
    }

    pub fn add_assign(&mut self, other: &NetGradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
        for (a, b) in self.z_i.iter_mut().zip(&other.z_i) {
            *a += b;
        }
        for (a, b) in self.z_d.iter_mut().zip(&other.z_d) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.params {
            *v *= s;
        }
        for v in &mut self.z_i {
            *v *= s;
        }
        for v in &mut self.z_d {
            *v *= s;
        }
        for v in &mut self.x {
            *v *= s;
        }
    }
}

/// Stored forward pass over a batch of points: values, spatial gradients and
/// every intermediate needed for the backward pass.
pub struct BatchForward {
    points: Vec<Vector3<f64>>,
    input: Array2<f64>,           // (in_dim, n)
    pre: Vec<Array2<f64>>,        // Z_i, (out_i, n)
    act: Vec<Array2<f64>>,        // X_i = softplus(Z_i) for hidden layers
    values: Vec<f64>,             // f_j
    grads: Vec<Vector3<f64>>,     // g_j = df/dx_j
    input_grad: Array2<f64>,      // dbar f / dbar u per point, (in_dim, n)
}

impl BatchForward {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spatial_gradients(&self) -> &[Vector3<f64>] {
        &self.grads
    }

    /// Code gradient of `sum_j f_j` (from the value-only reverse pass); used
    /// where only first-order code sensitivity is needed.
    pub fn code_gradient_of_sum(&self, config: &FieldConfig) -> (Vec<f64>, Vec<f64>) {
        let pe = config.pe_dim();
        let zd: Vec<f64> = (0..config.deformation_dim)
            .map(|k| self.input_grad.row(pe + k).sum())
            .collect();
        let zi: Vec<f64> = (0..config.identity_dim)
            .map(|k| self.input_grad.row(pe + config.deformation_dim + k).sum())
            .collect();
        (zi, zd)
    }
}

struct LayerViews<'a> {
    w: ArrayView2<'a, f64>,
    b: ArrayView1<'a, f64>,
}

fn layer_views<'a>(model: &'a FieldModel, i: usize) -> LayerViews<'a> {
    let cfg = &model.config;
    let (w_off, b_off) = cfg.layer_offsets(i);
    let (out, inp) = cfg.layer_dims(i);
    LayerViews {
        w: ArrayView2::from_shape((out, inp), &model.params[w_off..w_off + out * inp]).unwrap(),
        b: ArrayView1::from_shape(out, &model.params[b_off..b_off + out]).unwrap(),
    }
}

/// Builds the (in_dim, n) input matrix `[PE(x); z_D; z_I]` per column.
fn input_matrix(config: &FieldConfig, codes: &LatentPair, points: &[Vector3<f64>]) -> Array2<f64> {
    let n = points.len();
    let pe_dim = config.pe_dim();
    let mut u = Array2::zeros((config.input_dim(), n));
    for (j, p) in points.iter().enumerate() {
        let enc = positional_encode(p, config.pe_bands);
        for (r, v) in enc.iter().enumerate() {
            u[(r, j)] = *v;
        }
        for (k, v) in codes.z_d.iter().enumerate() {
            u[(pe_dim + k, j)] = *v;
        }
        for (k, v) in codes.z_i.iter().enumerate() {
            u[(pe_dim + config.deformation_dim + k, j)] = *v;
        }
    }
    u
}

/// Runs the forward pass and the value-only reverse pass (for `g`).
pub fn forward(model: &FieldModel, codes: &LatentPair, points: &[Vector3<f64>]) -> BatchForward {
    let cfg = &model.config;
    let n = points.len();
    let u = input_matrix(cfg, codes, points);
    let n_layers = cfg.n_layers;

    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    let mut act: Vec<Array2<f64>> = Vec::with_capacity(n_layers - 1);
    for i in 0..n_layers {
        let lv = layer_views(model, i);
        let (out, _) = cfg.layer_dims(i);
        let mut z = Array2::zeros((out, n));
        if i == 0 {
            general_mat_mul(1.0, &lv.w, &u, 0.0, &mut z);
        } else if i == cfg.skip_layer {
            let hidden = cfg.hidden_width;
            general_mat_mul(1.0, &lv.w.slice(s![.., ..hidden]), &act[i - 1], 0.0, &mut z);
            general_mat_mul(1.0, &lv.w.slice(s![.., hidden..]), &u, 1.0, &mut z);
        } else {
            general_mat_mul(1.0, &lv.w, &act[i - 1], 0.0, &mut z);
        }
        for (mut col, _) in z.axis_iter_mut(Axis(1)).zip(0..n) {
            col += &lv.b;
        }
        if i + 1 < n_layers {
            act.push(z.mapv(softplus));
        }
        pre.push(z);
    }
    let values: Vec<f64> = pre[n_layers - 1].row(0).to_vec();

    // Value-only reverse pass seeded with 1 per point: input_grad[:, j] is
    // dbar f_j / dbar u_j, from which the spatial gradient follows through the
    // PE Jacobian.
    let mut input_grad: Array2<f64> = Array2::zeros((cfg.input_dim(), n));
    let mut zbar: Array2<f64> = Array1::ones(n).insert_axis(Axis(0));
    for i in (0..n_layers).rev() {
        let lv = layer_views(model, i);
        if i == 0 {
            general_mat_mul(1.0, &lv.w.t(), &zbar, 1.0, &mut input_grad);
        } else if i == cfg.skip_layer {
            let hidden = cfg.hidden_width;
            let mut xbar = Array2::zeros((hidden, n));
            general_mat_mul(1.0, &lv.w.slice(s![.., ..hidden]).t(), &zbar, 0.0, &mut xbar);
            general_mat_mul(1.0, &lv.w.slice(s![.., hidden..]).t(), &zbar, 1.0, &mut input_grad);
            zbar = xbar * pre[i - 1].mapv(sigmoid);
        } else {
            let mut xbar = Array2::zeros((cfg.hidden_width, n));
            general_mat_mul(1.0, &lv.w.t(), &zbar, 0.0, &mut xbar);
            zbar = xbar * pre[i - 1].mapv(sigmoid);
        }
    }

    let grads = spatial_from_input_grad(cfg, points, &input_grad);

    BatchForward { points: points.to_vec(), input: u, pre, act, values, grads, input_grad }
}

fn spatial_from_input_grad(
    config: &FieldConfig,
    points: &[Vector3<f64>],
    input_grad: &Array2<f64>,
) -> Vec<Vector3<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut g = Vector3::new(input_grad[(0, j)], input_grad[(1, j)], input_grad[(2, j)]);
            for k in 0..config.pe_bands {
                let c = (1u64 << k) as f64 * std::f64::consts::PI;
                for d in 0..3 {
                    let r = 3 + 6 * k + 2 * d;
                    g[d] += input_grad[(r, j)] * c * (c * p[d]).cos();
                    g[d] += input_grad[(r + 1, j)] * (-c) * (c * p[d]).sin();
                }
            }
            g
        })
        .collect()
}

/// Backward pass for the scalar `L = sum_j a_j f_j + b_j . g_j`.
///
/// `a` and `b` are the local loss sensitivities per point. Returns exact
/// gradients with respect to parameters, both codes and point positions
/// (the latter includes the Hessian-vector term `H_j b_j`). Pass
/// `with_params = false` to skip the weight-gradient accumulation when only
/// code/position gradients are needed (inference-time optimization).
pub fn backward(
    model: &FieldModel,
    fwd: &BatchForward,
    a: &[f64],
    b: &[Vector3<f64>],
    with_params: bool,
) -> NetGradients {
    let cfg = &model.config;
    let n = fwd.points.len();
    let n_layers = cfg.n_layers;
    assert_eq!(a.len(), n);
    assert_eq!(b.len(), n);

    // Dual forward: tangent of the input along b_j per point.
    let mut udot: Array2<f64> = Array2::zeros((cfg.input_dim(), n));
    for (j, p) in fwd.points.iter().enumerate() {
        for d in 0..3 {
            udot[(d, j)] = b[j][d];
        }
        for k in 0..cfg.pe_bands {
            let c = (1u64 << k) as f64 * std::f64::consts::PI;
            for d in 0..3 {
                let r = 3 + 6 * k + 2 * d;
                udot[(r, j)] = c * (c * p[d]).cos() * b[j][d];
                udot[(r + 1, j)] = -c * (c * p[d]).sin() * b[j][d];
            }
        }
    }

    let sig: Vec<Array2<f64>> = (0..n_layers - 1).map(|i| fwd.pre[i].mapv(sigmoid)).collect();

    let mut actdot: Vec<Array2<f64>> = Vec::with_capacity(n_layers - 1);
    let mut predot: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let lv = layer_views(model, i);
        let (out, _) = cfg.layer_dims(i);
        let mut zdot = Array2::zeros((out, n));
        if i == 0 {
            general_mat_mul(1.0, &lv.w, &udot, 0.0, &mut zdot);
        } else if i == cfg.skip_layer {
            let hidden = cfg.hidden_width;
            general_mat_mul(1.0, &lv.w.slice(s![.., ..hidden]), &actdot[i - 1], 0.0, &mut zdot);
            general_mat_mul(1.0, &lv.w.slice(s![.., hidden..]), &udot, 1.0, &mut zdot);
        } else {
            general_mat_mul(1.0, &lv.w, &actdot[i - 1], 0.0, &mut zdot);
        }
        if i + 1 < n_layers {
            actdot.push(&sig[i] * &zdot);
        }
        predot.push(zdot);
    }

    // Reverse pass over the (value, tangent) pair.
    let mut grads = NetGradients::zeros(cfg, n);
    let mut ubar: Array2<f64> = Array2::zeros((cfg.input_dim(), n));
    let mut udotbar: Array2<f64> = Array2::zeros((cfg.input_dim(), n));
    let mut zbar: Array2<f64> = ArrayView1::from(a).to_owned().insert_axis(Axis(0));
    let mut zdotbar: Array2<f64> = Array1::ones(n).insert_axis(Axis(0));

    for i in (0..n_layers).rev() {
        let lv = layer_views(model, i);
        let (out, inp) = cfg.layer_dims(i);
        let (w_off, b_off) = cfg.layer_offsets(i);

        // Weight/bias gradients: Wbar += zbar in^T + zdotbar indot^T.
        if with_params {
            let mut wbar =
                ndarray::ArrayViewMut2::from_shape((out, inp), &mut grads.params[w_off..w_off + out * inp])
                    .unwrap();
            if i == 0 {
                general_mat_mul(1.0, &zbar, &fwd.input.t(), 1.0, &mut wbar);
                general_mat_mul(1.0, &zdotbar, &udot.t(), 1.0, &mut wbar);
            } else if i == cfg.skip_layer {
                let hidden = cfg.hidden_width;
                {
                    let mut wh = wbar.slice_mut(s![.., ..hidden]);
                    general_mat_mul(1.0, &zbar, &fwd.act[i - 1].t(), 1.0, &mut wh);
                    general_mat_mul(1.0, &zdotbar, &actdot[i - 1].t(), 1.0, &mut wh);
                }
                let mut wu = wbar.slice_mut(s![.., hidden..]);
                general_mat_mul(1.0, &zbar, &fwd.input.t(), 1.0, &mut wu);
                general_mat_mul(1.0, &zdotbar, &udot.t(), 1.0, &mut wu);
            } else {
                general_mat_mul(1.0, &zbar, &fwd.act[i - 1].t(), 1.0, &mut wbar);
                general_mat_mul(1.0, &zdotbar, &actdot[i - 1].t(), 1.0, &mut wbar);
            }
            for (r, bslot) in grads.params[b_off..b_off + out].iter_mut().enumerate() {
                *bslot += zbar.row(r).sum();
            }
        }

        // Input adjoints.
        let (mut xbar, mut xdotbar) = if i > 0 {
            (
                Array2::zeros((cfg.hidden_width, n)),
                Array2::zeros((cfg.hidden_width, n)),
            )
        } else {
            (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
        };
        if i == 0 {
            general_mat_mul(1.0, &lv.w.t(), &zbar, 1.0, &mut ubar);
            general_mat_mul(1.0, &lv.w.t(), &zdotbar, 1.0, &mut udotbar);
        } else if i == cfg.skip_layer {
            let hidden = cfg.hidden_width;
            general_mat_mul(1.0, &lv.w.slice(s![.., ..hidden]).t(), &zbar, 0.0, &mut xbar);
            general_mat_mul(1.0, &lv.w.slice(s![.., ..hidden]).t(), &zdotbar, 0.0, &mut xdotbar);
            general_mat_mul(1.0, &lv.w.slice(s![.., hidden..]).t(), &zbar, 1.0, &mut ubar);
            general_mat_mul(1.0, &lv.w.slice(s![.., hidden..]).t(), &zdotbar, 1.0, &mut udotbar);
        } else {
            general_mat_mul(1.0, &lv.w.t(), &zbar, 0.0, &mut xbar);
            general_mat_mul(1.0, &lv.w.t(), &zdotbar, 0.0, &mut xdotbar);
        }

        if i > 0 {
            // Through X = softplus(Z), Xdot = sigmoid(Z) * Zdot:
            //   Zbar    = sigmoid(Z) xbar + sigmoid'(Z) Zdot xdotbar
            //   Zdotbar = sigmoid(Z) xdotbar
            let sg = &sig[i - 1];
            let sgp = sg * &sg.mapv(|v| 1.0 - v);
            zbar = sg * &xbar + sgp * &predot[i - 1] * &xdotbar;
            zdotbar = sg * &xdotbar;
        }
    }

    // Code gradients: value-adjoint rows of the code slice (code tangents are
    // identically zero, so the tangent adjoint does not contribute).
    let pe = cfg.pe_dim();
    for k in 0..cfg.deformation_dim {
        grads.z_d[k] = ubar.row(pe + k).sum();
    }
    for k in 0..cfg.identity_dim {
        grads.z_i[k] = ubar.row(pe + cfg.deformation_dim + k).sum();
    }

    // Position gradients through PE (value path) and through the tangent
    // seed du/dx along b (second derivative of PE).
    for (j, p) in fwd.points.iter().enumerate() {
        let mut gx = Vector3::new(ubar[(0, j)], ubar[(1, j)], ubar[(2, j)]);
        for k in 0..cfg.pe_bands {
            let c = (1u64 << k) as f64 * std::f64::consts::PI;
            for d in 0..3 {
                let r = 3 + 6 * k + 2 * d;
                let (sn, cs) = ((c * p[d]).sin(), (c * p[d]).cos());
                gx[d] += ubar[(r, j)] * c * cs - ubar[(r + 1, j)] * c * sn;
                gx[d] += udotbar[(r, j)] * (-c * c * sn) * b[j][d]
                    + udotbar[(r + 1, j)] * (-c * c * cs) * b[j][d];
            }
        }
        grads.x[j] = gx;
    }

    grads
}
