//! Softplus MLP signed distance field with hand-derived derivatives.
//!
//! The forward pass carries three tangent channels alongside the primal
//! activations, one per input axis, which yields the spatial gradient of the
//! field in a single sweep. The reverse pass differentiates through both the
//! primal and the tangent channels, so a loss that depends on the spatial
//! gradient (the Eikonal term) gets exact parameter gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoding::{encode_into, EncodingConfig};
use crate::error::{domain, Error, Result};
use crate::gaussian::Aabb;
use crate::{Rng, Vec3};

const SKIP_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Above this value of `beta * z` softplus is evaluated as the identity.
const SOFTPLUS_LINEAR_THRESHOLD: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoding: EncodingConfig,
    pub hidden_layers: usize,
    pub width: usize,
    /// Hidden layer whose input is `[previous activations, encoded input]`.
    pub skip_at: Option<usize>,
    /// Softplus sharpness.
    pub beta: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            hidden_layers: 8,
            width: 256,
            skip_at: Some(4),
            beta: 100.0,
        }
    }
}

impl NetworkConfig {
    /// 4 x 64 network used by tests and quick runs.
    pub fn desk() -> Self {
        Self {
            hidden_layers: 4,
            width: 64,
            skip_at: Some(2),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.hidden_layers > 0 && self.width == 0 {
            return Err(domain("network width must be positive"));
        }
        if let Some(s) = self.skip_at {
            if s == 0 || s >= self.hidden_layers {
                return Err(domain(format!(
                    "skip_at {s} must name a hidden layer in 1..{}",
                    self.hidden_layers
                )));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(domain(format!(
                "softplus beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Placement of one dense layer inside the flat parameter vector.
///
/// Weights are column-major: the weight from input `k` to output `i` lives
/// at `offset + k * outputs + i`; the `outputs` biases follow the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn end(&self) -> usize {
        self.bias_offset() + self.outputs
    }
}

/// Field value and spatial gradient at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfEval {
    pub value: f64,
    pub gradient: Vec3,
}

/// Derivative of a scalar loss with respect to the network output at one
/// point and with respect to its spatial gradient there.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Upstream {
    pub value: f64,
    pub gradient: Vec3,
}

/// Softplus `ln(1 + exp(beta z)) / beta` with its first two derivatives.
#[inline]
pub fn softplus(z: f64, beta: f64) -> (f64, f64, f64) {
    let t = beta * z;
    let value = if t > SOFTPLUS_LINEAR_THRESHOLD {
        z
    } else {
        t.exp().ln_1p() / beta
    };
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    (value, s, beta * s * (1.0 - s))
}

/// Signed distance field `f(x) = h * g((x - c) / h)` where `g` is the MLP,
/// `c` the scene center and `h` its half extent. Inputs are normalized to
/// roughly `[-1, 1]^3` and the output stays in scene units.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfNetwork {
    config: NetworkConfig,
    center: Vec3,
    half_extent: f64,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl SdfNetwork {
    /// Network with every parameter zero.
    pub fn zeros(config: NetworkConfig, bounds: &Aabb) -> Result<Self> {
        Self::with_frame(config, bounds.center(), bounds.half_extent())
    }

    pub(crate) fn with_frame(
        config: NetworkConfig,
        center: Vec3,
        half_extent: f64,
    ) -> Result<Self> {
        config.validate()?;
        if !(half_extent > 0.0 && half_extent.is_finite()) || !center.iter().all(|c| c.is_finite())
        {
            return Err(domain(
                "network normalization frame must be finite and non-degenerate",
            ));
        }
        let enc = config.encoding.dim();
        let mut layers = Vec::with_capacity(config.hidden_layers + 1);
        let mut offset = 0;
        let mut prev = enc;
        for l in 0..config.hidden_layers {
            let inputs = if config.skip_at == Some(l) {
                prev + enc
            } else {
                prev
            };
            let shape = LayerShape {
                inputs,
                outputs: config.width,
                offset,
            };
            offset = shape.end();
            layers.push(shape);
            prev = config.width;
        }
        let out = LayerShape {
            inputs: prev,
            outputs: 1,
            offset,
        };
        layers.push(out);
        Ok(Self {
            config,
            center,
            half_extent,
            layers,
            params: vec![0.0; out.end()],
        })
    }

    /// Geometric initialization: the initial field approximates the signed
    /// distance to a sphere of radius `radius` around the scene center.
    ///
    /// Hidden weights are drawn from `N(0, 2 / width)` with every sinusoid
    /// input zeroed, the output weights start from `N(sqrt(pi / width), 1e-4)`
    /// and are then refit to the radial distance, and the output bias is
    /// `-radius`. Without raw coordinates in the encoding, the band-0 sines
    /// stand in for them.
    pub fn init_geometric(
        config: NetworkConfig,
        bounds: &Aabb,
        radius: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(domain(format!(
                "init radius must be positive, got {radius}"
            )));
        }
        let mut net = Self::zeros(config, bounds)?;
        let enc = net.config.encoding;
        let coord_cols = if enc.include_raw {
            0
        } else {
            enc.band_offset()
        };
        let hidden = net.config.hidden_layers;
        for l in 0..hidden {
            let shape = net.layers[l];
            let std = (2.0 / shape.outputs as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            // Input columns that carry coordinates (the rest start at zero).
            let live: Vec<usize> = if l == 0 {
                (coord_cols..coord_cols + 3).collect()
            } else if net.config.skip_at == Some(l) {
                let hidden_cols = shape.inputs - enc.dim();
                (0..hidden_cols)
                    .chain(hidden_cols + coord_cols..hidden_cols + coord_cols + 3)
                    .collect()
            } else {
                (0..shape.inputs).collect()
            };
            for k in live {
                for i in 0..shape.outputs {
                    net.params[shape.offset + k * shape.outputs + i] = normal.sample(rng);
                }
            }
        }
        let out = net.layers[hidden];
        if hidden == 0 {
            // A linear field cannot bend into a sphere; start from a plane
            // through the center offset by the radius.
            net.params[out.bias_offset()] = -radius / net.half_extent;
            net.params[out.offset + coord_cols] = 1.0;
            return Ok(net);
        }
        let mean = (std::f64::consts::PI / out.inputs as f64).sqrt();
        let normal = Normal::new(mean, 1e-4).expect("positive std");
        for k in 0..out.inputs {
            net.params[out.offset + k] = normal.sample(rng);
        }
        net.params[out.bias_offset()] = -radius / net.half_extent;
        net.refit_output_to_radial(rng)?;
        Ok(net)
    }

    /// Ridge least-squares refit of the output weights so that, in
    /// normalized coordinates, `w . h(x)` tracks `|x|` over the unit cube.
    /// The bias is left alone. Narrow networks need this: the random hidden
    /// features alone leave the radial slope off by tens of percent.
    fn refit_output_to_radial(&mut self, rng: &mut Rng) -> Result<()> {
        const RIDGE: f64 = 1e-3;
        let hidden = self.config.hidden_layers;
        let out = self.layers[hidden];
        let n = out.inputs;
        let probes = 4 * n + 512;
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        {
            let mut ev = Evaluator::new(self);
            for _ in 0..probes {
                let xn = Vec3::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0);
                ev.eval(&(self.center + xn * self.half_extent), false)?;
                let feat = DVector::from_column_slice(&ev.inputs[hidden]);
                gram.ger(1.0, &feat, &feat, 1.0);
                rhs.axpy(xn.norm(), &feat, 1.0);
            }
        }
        let w0 = DVector::from_column_slice(&self.params[out.offset..out.bias_offset()]);
        let scale = gram.trace() / n as f64;
        for i in 0..n {
            gram[(i, i)] += RIDGE * scale;
        }
        rhs.axpy(RIDGE * scale, &w0, 1.0);
        let w = gram
            .cholesky()
            .ok_or_else(|| Error::Computation("geometric init: singular feature matrix".into()))?
            .solve(&rhs);
        self.params[out.offset..out.bias_offset()].copy_from_slice(w.as_slice());
        Ok(())
    }

    /// Random small network for derivative checks: every weight drawn from
    /// `N(0, 1 / fan_in)`, biases `N(0, 0.1)`.
    pub fn init_random(config: NetworkConfig, bounds: &Aabb, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(config, bounds)?;
        for shape in net.layers.clone() {
            let std = (1.0 / shape.inputs as f64).sqrt();
            for k in 0..shape.weight_len() {
                net.params[shape.offset + k] =
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * std;
            }
            for i in 0..shape.outputs {
                net.params[shape.bias_offset() + i] =
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.1;
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    /// Hidden layers followed by the output layer.
    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces every parameter; the length must match.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Weights (column-major) and biases of layer `l`.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let s = self.layers[l];
        let (w, rest) = self.params[s.offset..s.end()].split_at_mut(s.weight_len());
        (w, rest)
    }

    pub fn validate(&self) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            Some(i) => Err(Error::Computation(format!(
                "network parameter {i} is not finite"
            ))),
            None => Ok(()),
        }
    }

    pub fn forward(&self, x: &Vec3) -> Result<f64> {
        Evaluator::new(self).value(x)
    }

    /// Evaluates every point with the same per-point code path, so results
    /// equal repeated calls to [`forward`](Self::forward) exactly.
    pub fn forward_batch(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        let mut ev = Evaluator::new(self);
        xs.iter().map(|x| ev.value(x)).collect()
    }

    pub fn forward_with_input_gradient(&self, x: &Vec3) -> Result<SdfEval> {
        Evaluator::new(self).eval(x, true)
    }

    /// Parameter gradient of `sum_i up_i.value * f(x_i) + up_i.gradient . grad f(x_i)`.
    pub fn backward(&self, xs: &[Vec3], upstream: &[Upstream]) -> Result<Vec<f64>> {
        if xs.len() != upstream.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} upstream values",
                xs.len(),
                upstream.len()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut ev = Evaluator::new(self);
        for (x, up) in xs.iter().zip(upstream) {
            let needs_tangents = up.gradient != Vec3::zeros();
            ev.eval(x, needs_tangents)?;
            ev.accumulate(up, &mut grads)?;
        }
        Ok(grads)
    }
}

/// Reusable buffers for forward and reverse sweeps over one network.
pub struct Evaluator<'a> {
    net: &'a SdfNetwork,
    /// Input of every layer, output layer last.
    inputs: Vec<Vec<f64>>,
    input_tan: Vec<[Vec<f64>; 3]>,
    /// Per hidden layer: pre-activation tangents and softplus derivatives.
    pre_tan: Vec<[Vec<f64>; 3]>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    enc: Vec<f64>,
    enc_tan: [Vec<f64>; 3],
    has_tangents: bool,
    adj: Vec<f64>,
    adj_tan: [Vec<f64>; 3],
    next_adj: Vec<f64>,
    next_adj_tan: [Vec<f64>; 3],
    zbar: Vec<f64>,
    zbar_tan: [Vec<f64>; 3],
}

fn tan3(n: usize) -> [Vec<f64>; 3] {
    [vec![0.0; n], vec![0.0; n], vec![0.0; n]]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(net: &'a SdfNetwork) -> Self {
        let hidden = net.config.hidden_layers;
        let width = net.config.width;
        let max_in = net
            .layers
            .iter()
            .map(|l| l.inputs)
            .max()
            .unwrap_or(0)
            .max(width);
        let enc = net.config.encoding.dim();
        Self {
            net,
            inputs: net.layers.iter().map(|l| vec![0.0; l.inputs]).collect(),
            input_tan: net.layers.iter().map(|l| tan3(l.inputs)).collect(),
            pre_tan: (0..hidden).map(|_| tan3(width)).collect(),
            d1: (0..hidden).map(|_| vec![0.0; width]).collect(),
            d2: (0..hidden).map(|_| vec![0.0; width]).collect(),
            enc: vec![0.0; enc],
            enc_tan: tan3(enc),
            has_tangents: false,
            adj: vec![0.0; max_in],
            adj_tan: tan3(max_in),
            next_adj: vec![0.0; max_in],
            next_adj_tan: tan3(max_in),
            zbar: vec![0.0; width],
            zbar_tan: tan3(width),
        }
    }

    pub fn value(&mut self, x: &Vec3) -> Result<f64> {
        self.eval(x, false).map(|e| e.value)
    }

    /// Forward sweep. With `tangents`, also computes the spatial gradient and
    /// keeps what [`accumulate`](Self::accumulate) needs for gradient-path
    /// upstreams.
    pub fn eval(&mut self, x: &Vec3, tangents: bool) -> Result<SdfEval> {
        let net = self.net;
        let cfg = &net.config;
        let beta = cfg.beta;
        let h = net.half_extent;
        let xn = (x - net.center) / h;
        encode_into(
            &xn,
            &cfg.encoding,
            &mut self.enc,
            tangents.then_some((&mut self.enc_tan, 1.0 / h)),
        );
        self.has_tangents = tangents;
        let enc_dim = self.enc.len();
        self.inputs[0].copy_from_slice(&self.enc);
        if tangents {
            for d in 0..3 {
                self.input_tan[0][d].copy_from_slice(&self.enc_tan[d]);
            }
        }

        let params = &net.params;
        for l in 0..cfg.hidden_layers {
            let shape = net.layers[l];
            let out = shape.outputs;
            let (prev, rest) = self.inputs.split_at_mut(l + 1);
            let a = &prev[l];
            let next = &mut rest[0];
            let z = &mut next[..out];
            z.copy_from_slice(&params[shape.bias_offset()..shape.end()]);
            for (k, &ak) in a.iter().enumerate() {
                let col = &params[shape.offset + k * out..shape.offset + (k + 1) * out];
                axpy(ak, col, z);
            }
            if tangents {
                for d in 0..3 {
                    let zt = &mut self.pre_tan[l][d];
                    zt.iter_mut().for_each(|v| *v = 0.0);
                    for (k, &ak) in self.input_tan[l][d].iter().enumerate() {
                        if ak != 0.0 {
                            let col = &params[shape.offset + k * out..shape.offset + (k + 1) * out];
                            axpy(ak, col, zt);
                        }
                    }
                }
            }
            // Activation in place.
            let (d1, d2) = (&mut self.d1[l], &mut self.d2[l]);
            for i in 0..out {
                let (v, s1, s2) = softplus(z[i], beta);
                z[i] = v;
                d1[i] = s1;
                d2[i] = s2;
            }
            let skip_next = cfg.skip_at == Some(l + 1);
            if skip_next {
                for v in z.iter_mut() {
                    *v *= SKIP_SCALE;
                }
                for (dst, src) in next[out..out + enc_dim].iter_mut().zip(&self.enc) {
                    *dst = src * SKIP_SCALE;
                }
            }
            if tangents {
                let scale = if skip_next { SKIP_SCALE } else { 1.0 };
                for d in 0..3 {
                    let nt = &mut self.input_tan[l + 1][d];
                    let zt = &self.pre_tan[l][d];
                    for i in 0..out {
                        nt[i] = scale * d1[i] * zt[i];
                    }
                    if skip_next {
                        for (dst, src) in nt[out..out + enc_dim].iter_mut().zip(&self.enc_tan[d]) {
                            *dst = src * SKIP_SCALE;
                        }
                    }
                }
            }
        }

        let out = net.layers[cfg.hidden_layers];
        let a = &self.inputs[cfg.hidden_layers];
        let w = &params[out.offset..out.bias_offset()];
        let value = h * (params[out.bias_offset()] + dot(w, a));
        let mut gradient = Vec3::zeros();
        if tangents {
            for d in 0..3 {
                gradient[d] = h * dot(w, &self.input_tan[cfg.hidden_layers][d]);
            }
        }
        if !value.is_finite() || !gradient.iter().all(|g| g.is_finite()) {
            return Err(Error::Computation(
                "network produced a non-finite value; parameters may have diverged".into(),
            ));
        }
        Ok(SdfEval { value, gradient })
    }

    /// Reverse sweep for the point of the last [`eval`](Self::eval), adding
    /// parameter gradients into `grads`.
    pub fn accumulate(&mut self, up: &Upstream, grads: &mut [f64]) -> Result<()> {
        let net = self.net;
        if grads.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, network has {}",
                grads.len(),
                net.params.len()
            )));
        }
        let use_tan = up.gradient != Vec3::zeros();
        if use_tan && !self.has_tangents {
            return Err(Error::Shape(
                "gradient-path upstream requires an evaluation with tangents".into(),
            ));
        }
        let cfg = &net.config;
        let params = &net.params;
        let h = net.half_extent;
        let hidden = cfg.hidden_layers;

        // Output layer.
        let out = net.layers[hidden];
        let a = &self.inputs[hidden];
        let n_in = out.inputs;
        let fbar = h * up.value;
        axpy(fbar, a, &mut grads[out.offset..out.bias_offset()]);
        grads[out.bias_offset()] += fbar;
        let w = &params[out.offset..out.bias_offset()];
        for (dst, wk) in self.adj[..n_in].iter_mut().zip(w) {
            *dst = fbar * wk;
        }
        if use_tan {
            for d in 0..3 {
                let gbar = h * up.gradient[d];
                axpy(
                    gbar,
                    &self.input_tan[hidden][d],
                    &mut grads[out.offset..out.bias_offset()],
                );
                for (dst, wk) in self.adj_tan[d][..n_in].iter_mut().zip(w) {
                    *dst = gbar * wk;
                }
            }
        }

        for l in (0..hidden).rev() {
            let shape = net.layers[l];
            let o = shape.outputs;
            let scale = if cfg.skip_at == Some(l + 1) {
                SKIP_SCALE
            } else {
                1.0
            };
            let (d1, d2) = (&self.d1[l], &self.d2[l]);
            for ((z, a), d) in self.zbar[..o].iter_mut().zip(&self.adj).zip(d1) {
                *z = scale * a * d;
            }
            if use_tan {
                for d in 0..3 {
                    let zt = &self.pre_tan[l][d];
                    for i in 0..o {
                        let ht = scale * self.adj_tan[d][i];
                        self.zbar[i] += ht * d2[i] * zt[i];
                        self.zbar_tan[d][i] = ht * d1[i];
                    }
                }
            }
            let a = &self.inputs[l];
            let g = &mut grads[shape.offset..shape.end()];
            let (gw, gb) = g.split_at_mut(shape.weight_len());
            for (k, &ak) in a.iter().enumerate() {
                axpy(ak, &self.zbar[..o], &mut gw[k * o..(k + 1) * o]);
            }
            if use_tan {
                for d in 0..3 {
                    for (k, &ak) in self.input_tan[l][d].iter().enumerate() {
                        if ak != 0.0 {
                            axpy(ak, &self.zbar_tan[d][..o], &mut gw[k * o..(k + 1) * o]);
                        }
                    }
                }
            }
            for (b, z) in gb.iter_mut().zip(&self.zbar[..o]) {
                *b += z;
            }
            if l == 0 {
                break;
            }
            let n_in = shape.inputs;
            for k in 0..n_in {
                let col = &params[shape.offset + k * o..shape.offset + (k + 1) * o];
                self.next_adj[k] = dot(col, &self.zbar[..o]);
                if use_tan {
                    for d in 0..3 {
                        self.next_adj_tan[d][k] = dot(col, &self.zbar_tan[d][..o]);
                    }
                }
            }
            std::mem::swap(&mut self.adj, &mut self.next_adj);
            if use_tan {
                std::mem::swap(&mut self.adj_tan, &mut self.next_adj_tan);
            }
        }
        Ok(())
    }
}
