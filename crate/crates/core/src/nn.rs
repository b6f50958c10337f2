//! Minimal feed-forward network engine over a flat parameter vector.
//!
//! Each layer computes `z = x Wᵀ + b`, optionally layer-normalizes `z` with a
//! learned gain and bias, then applies its activation. Every parameter lives in
//! one contiguous `theta` vector; the [`Layout`] records where each block sits
//! so masks over `theta` address individual weights exactly.
//!
//! Batches are row-major `(batch, features)` matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitMask;
use crate::error::{Error, Result};

/// Variance below which a layer-norm input is treated as constant and normalizes to zero.
pub const LN_VAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation, layer_norm: bool) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
            layer_norm,
        }
    }

    /// Hidden stack `input -> hidden... -> output` with the given hidden activation
    /// and an identity head.
    pub fn stack(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        layer_norm: bool,
    ) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            specs.push(LayerSpec::new(prev, h, activation, layer_norm));
            prev = h;
        }
        specs.push(LayerSpec::new(prev, output_dim, Activation::Identity, false));
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    LnGain,
    LnBias,
}

impl ParamKind {
    /// Whether subnetwork masks apply to this kind of parameter.
    pub fn maskable(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
}

/// Placement of every parameter block inside the flat vector.
///
/// Per layer the order is weight `(out, in)` row-major, bias, then layer-norm
/// gain and bias when enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    specs: Vec<LayerSpec>,
    entries: Vec<LayoutEntry>,
    len: usize,
}

struct LayerOffsets {
    weight: usize,
    bias: usize,
    ln: Option<(usize, usize)>,
}

impl Layout {
    pub fn new(specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut entries = Vec::new();
        let mut offset = 0;
        for (l, spec) in specs.iter().enumerate() {
            if spec.input_dim == 0 || spec.output_dim == 0 {
                return Err(Error::config(format!("layer {l} has a zero dimension")));
            }
            if l > 0 && specs[l - 1].output_dim != spec.input_dim {
                return Err(Error::LayerChain {
                    layer: l,
                    expected: spec.input_dim,
                    got: specs[l - 1].output_dim,
                });
            }
            let mut push = |kind, len| {
                entries.push(LayoutEntry {
                    layer: l,
                    kind,
                    offset,
                    len,
                });
                offset += len;
            };
            push(ParamKind::Weight, spec.input_dim * spec.output_dim);
            push(ParamKind::Bias, spec.output_dim);
            if spec.layer_norm {
                push(ParamKind::LnGain, spec.output_dim);
                push(ParamKind::LnBias, spec.output_dim);
            }
        }
        Ok(Self {
            specs: specs.to_vec(),
            entries,
            len: offset,
        })
    }

    /// Total number of parameters.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].output_dim
    }

    /// Bit `j` is set when parameter `j` may be masked out by a subnetwork.
    pub fn coverage(&self) -> BitMask {
        let mut cov = BitMask::zeros(self.len);
        for e in self.entries.iter().filter(|e| e.kind.maskable()) {
            for j in e.offset..e.offset + e.len {
                cov.set(j, true);
            }
        }
        cov
    }

    fn offsets(&self, layer: usize) -> LayerOffsets {
        let mut out = LayerOffsets {
            weight: 0,
            bias: 0,
            ln: None,
        };
        let mut gain = None;
        for e in self.entries.iter().filter(|e| e.layer == layer) {
            match e.kind {
                ParamKind::Weight => out.weight = e.offset,
                ParamKind::Bias => out.bias = e.offset,
                ParamKind::LnGain => gain = Some(e.offset),
                ParamKind::LnBias => out.ln = gain.map(|g| (g, e.offset)),
            }
        }
        out
    }

    /// Forward pass for a batch using an explicit parameter slice laid out as `self`.
    pub fn forward_batch(&self, theta: &[f64], inputs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        Error::check_len("parameter vector", self.len, theta.len())?;
        Error::check_len("input features", self.input_dim(), inputs.ncols())?;

        let mut layers = Vec::with_capacity(self.specs.len());
        let mut x = inputs.to_owned();
        for (l, spec) in self.specs.iter().enumerate() {
            let off = self.offsets(l);
            let (din, dout) = (spec.input_dim, spec.output_dim);
            let w = ArrayView2::from_shape((dout, din), &theta[off.weight..off.weight + din * dout])
                .expect("layout weight block");
            let b = ArrayView1::from(&theta[off.bias..off.bias + dout]);

            let mut z = x.dot(&w.t());
            z += &b;

            let mut norm = None;
            if let Some((g_off, lb_off)) = off.ln {
                let gain = ArrayView1::from(&theta[g_off..g_off + dout]);
                let shift = ArrayView1::from(&theta[lb_off..lb_off + dout]);
                let (zhat, inv_std) = layer_norm_rows(&z);
                z = &zhat * &gain + shift;
                norm = Some(NormTrace { zhat, inv_std });
            }

            let act = spec.activation;
            z.mapv_inplace(|v| act.apply(v));
            layers.push(LayerTrace {
                input: x,
                norm,
                output: z.clone(),
            });
            x = z;
        }
        Ok((x, ForwardTrace { layers }))
    }

    /// Reverse pass: gradient of `sum(output_grad ⊙ output)` w.r.t. `theta` and the inputs.
    pub fn backward_batch(
        &self,
        theta: &[f64],
        trace: &ForwardTrace,
        output_grad: ArrayView2<f64>,
    ) -> Result<Backprop> {
        Error::check_len("parameter vector", self.len, theta.len())?;
        Error::check_len("trace layers", self.specs.len(), trace.layers.len())?;
        let batch = trace.layers[0].input.nrows();
        let last = &trace.layers[self.specs.len() - 1].output;
        if output_grad.dim() != last.dim() {
            return Err(Error::LengthMismatch {
                what: "output gradient",
                expected: last.len(),
                got: output_grad.len(),
            });
        }

        let mut grad = vec![0.0; self.len];
        let mut upstream = output_grad.to_owned();
        for l in (0..self.specs.len()).rev() {
            let spec = &self.specs[l];
            let lt = &trace.layers[l];
            let off = self.offsets(l);
            let (din, dout) = (spec.input_dim, spec.output_dim);
            if lt.input.ncols() != din || lt.output.ncols() != dout || lt.input.nrows() != batch {
                return Err(Error::Malformed {
                    what: "forward trace",
                    reason: format!("layer {l} shapes do not match the layout"),
                });
            }

            // through the activation
            let act = spec.activation;
            let mut dz = upstream;
            ndarray::Zip::from(&mut dz)
                .and(&lt.output)
                .for_each(|d, &y| *d *= act.derivative_from_output(y));

            // through layer norm
            if let Some((g_off, lb_off)) = off.ln {
                let norm = lt.norm.as_ref().ok_or_else(|| Error::Malformed {
                    what: "forward trace",
                    reason: format!("layer {l} is missing layer-norm statistics"),
                })?;
                let gain = ArrayView1::from(&theta[g_off..g_off + dout]);
                let d_gain = (&dz * &norm.zhat).sum_axis(Axis(0));
                let d_shift = dz.sum_axis(Axis(0));
                grad[g_off..g_off + dout].copy_from_slice(d_gain.as_slice().unwrap());
                grad[lb_off..lb_off + dout].copy_from_slice(d_shift.as_slice().unwrap());

                let dzhat = &dz * &gain;
                dz = layer_norm_backward_rows(&dzhat, &norm.zhat, &norm.inv_std);
            }

            // through the affine map
            let dw = dz.t().dot(&lt.input);
            let db = dz.sum_axis(Axis(0));
            grad[off.weight..off.weight + din * dout].copy_from_slice(
                dw.as_standard_layout()
                    .as_slice()
                    .expect("standard layout"),
            );
            grad[off.bias..off.bias + dout].copy_from_slice(db.as_slice().unwrap());

            let w = ArrayView2::from_shape((dout, din), &theta[off.weight..off.weight + din * dout])
                .expect("layout weight block");
            upstream = dz.dot(&w);
        }
        Ok(Backprop {
            params: grad,
            input: upstream,
        })
    }
}

/// Per-row normalization: returns `(zhat, inv_std)`; rows with variance below
/// [`LN_VAR_EPS`] normalize to zero and get `inv_std = 0`.
fn layer_norm_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = z.ncols() as f64;
    let mut zhat = z.clone();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, inv) in zhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        if var < LN_VAR_EPS {
            row.fill(0.0);
            *inv = 0.0;
        } else {
            let is = 1.0 / var.sqrt();
            row.mapv_inplace(|v| v * is);
            *inv = is;
        }
    }
    (zhat, inv_std)
}

fn layer_norm_backward_rows(dzhat: &Array2<f64>, zhat: &Array2<f64>, inv_std: &Array1<f64>) -> Array2<f64> {
    let d = dzhat.ncols() as f64;
    let mut dz = Array2::zeros(dzhat.dim());
    for (r, mut out) in dz.rows_mut().into_iter().enumerate() {
        let is = inv_std[r];
        if is == 0.0 {
            continue;
        }
        let g = dzhat.row(r);
        let zh = zhat.row(r);
        let mean_g = g.sum() / d;
        let mean_gz = g.dot(&zh) / d;
        ndarray::Zip::from(&mut out)
            .and(&g)
            .and(&zh)
            .for_each(|o, &gi, &zi| *o = is * (gi - mean_g - zi * mean_gz));
    }
    dz
}

struct NormTrace {
    zhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerTrace {
    input: Array2<f64>,
    norm: Option<NormTrace>,
    output: Array2<f64>,
}

/// Everything a forward pass saw, enough to run the exact reverse pass.
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn batch_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.nrows())
    }

    /// Normalized (pre-gain) values of layer `l`, if it uses layer norm.
    pub fn normalized(&self, l: usize) -> Option<ArrayView2<'_, f64>> {
        self.layers.get(l)?.norm.as_ref().map(|n| n.zhat.view())
    }

    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.layers.last().expect("non-empty trace").output.view()
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Gradient w.r.t. every entry of `theta`.
    pub params: Vec<f64>,
    /// Gradient w.r.t. the network inputs, `(batch, input_dim)`.
    pub input: Array2<f64>,
}

/// Dense parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub theta: Vec<f64>,
    layout: Layout,
}

impl MlpParams {
    pub fn from_parts(layout: Layout, theta: Vec<f64>) -> Result<Self> {
        Error::check_len("parameter vector", layout.len(), theta.len())?;
        Ok(Self { theta, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Same layout, different values.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.layout.clone(), theta)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        self.layout.forward_batch(&self.theta, inputs)
    }

    pub fn backward_batch(&self, trace: &ForwardTrace, output_grad: ArrayView2<f64>) -> Result<Backprop> {
        self.layout.backward_batch(&self.theta, trace, output_grad)
    }

    /// Slice of `theta` holding one layout block.
    pub fn block(&self, layer: usize, kind: ParamKind) -> Option<&[f64]> {
        let e = self.layout.entries.iter().find(|e| e.layer == layer && e.kind == kind)?;
        Some(&self.theta[e.offset..e.offset + e.len])
    }

    pub fn block_mut(&mut self, layer: usize, kind: ParamKind) -> Option<&mut [f64]> {
        let e = *self.layout.entries.iter().find(|e| e.layer == layer && e.kind == kind)?;
        Some(&mut self.theta[e.offset..e.offset + e.len])
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, layer-norm gain one and bias zero.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<MlpParams> {
    let layout = Layout::new(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; layout.len()];
    for e in &layout.entries {
        let block = &mut theta[e.offset..e.offset + e.len];
        match e.kind {
            ParamKind::Weight => {
                let bound = 1.0 / (layout.specs[e.layer].input_dim as f64).sqrt();
                for w in block {
                    *w = rng.gen_range(-bound..=bound);
                }
            }
            ParamKind::LnGain => block.fill(1.0),
            ParamKind::Bias | ParamKind::LnBias => {}
        }
    }
    MlpParams::from_parts(layout, theta)
}

/// Single-sample forward pass.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
    Error::check_len("input", params.layout.input_dim(), x.len())?;
    let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let (out, trace) = params.forward_batch(input)?;
    Ok((out.into_raw_vec_and_offset().0, trace))
}

/// Single-sample reverse pass; returns `∂(output_gradᵀ · output)/∂θ`.
pub fn backward(params: &MlpParams, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Vec<f64>> {
    let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
    if trace.batch_size() != 1 {
        return Err(Error::Malformed {
            what: "forward trace",
            reason: format!("expected a single-sample trace, got batch {}", trace.batch_size()),
        });
    }
    Ok(params.backward_batch(trace, g)?.params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            config,
        }
    }

    /// One Adam step on `theta`. Indices where `update_mask` is unset keep their
    /// parameter and both moments untouched. Returns the number of indices written.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], update_mask: Option<&BitMask>) -> Result<usize> {
        Error::check_len("gradient", theta.len(), grad.len())?;
        Error::check_len("adam moments", theta.len(), self.m.len())?;
        if let Some(mask) = update_mask {
            Error::check_len("update mask", theta.len(), mask.len())?;
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut touched = 0;
        for j in 0..theta.len() {
            if let Some(mask) = update_mask {
                if !mask.get(j) {
                    continue;
                }
            }
            let g = grad[j];
            self.m[j] = beta1 * self.m[j] + (1.0 - beta1) * g;
            self.v[j] = beta2 * self.v[j] + (1.0 - beta2) * g * g;
            let m_hat = self.m[j] / c1;
            let v_hat = self.v[j] / c2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            touched += 1;
        }
        Ok(touched)
    }
}

pub fn adam_step(
    params: &mut MlpParams,
    grad: &[f64],
    state: &mut AdamState,
    update_mask: Option<&BitMask>,
) -> Result<usize> {
    state.step(&mut params.theta, grad, update_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn linear(din: usize, dout: usize) -> LayerSpec {
        LayerSpec::new(din, dout, Activation::Identity, false)
    }

    #[test]
    fn init_is_deterministic() {
        let specs = [LayerSpec::new(3, 5, Activation::Relu, true), linear(5, 2)];
        let a = init_params(&specs, 7).unwrap();
        let b = init_params(&specs, 7).unwrap();
        let bits = |p: &MlpParams| p.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_params(&specs, 8).unwrap()));
    }

    #[test]
    fn init_rules() {
        let specs = [LayerSpec::new(4, 16, Activation::Tanh, true), linear(16, 3)];
        let p = init_params(&specs, 1).unwrap();
        assert!(p.block(0, ParamKind::Bias).unwrap().iter().all(|&b| b == 0.0));
        assert!(p.block(1, ParamKind::Bias).unwrap().iter().all(|&b| b == 0.0));
        assert!(p.block(0, ParamKind::LnGain).unwrap().iter().all(|&g| g == 1.0));
        assert!(p.block(0, ParamKind::LnBias).unwrap().iter().all(|&g| g == 0.0));
        // fan_in = 4 gives bound 1/2
        assert!(p.block(0, ParamKind::Weight).unwrap().iter().all(|w| w.abs() <= 0.5));
        let bound = 1.0 / 4.0;
        assert!(p.block(1, ParamKind::Weight).unwrap().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn layout_is_contiguous() {
        let specs = LayerSpec::stack(3, &[8, 8], 2, Activation::Relu, true);
        let layout = Layout::new(&specs).unwrap();
        let mut next = 0;
        for e in layout.entries() {
            assert_eq!(e.offset, next);
            next += e.len;
        }
        assert_eq!(next, layout.len());
        assert_eq!(layout.len(), 3 * 8 + 8 + 16 + 8 * 8 + 8 + 16 + 8 * 2 + 2);
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let err = Layout::new(&[linear(2, 3), linear(4, 1)]).unwrap_err();
        assert!(matches!(err, Error::LayerChain { layer: 1, expected: 4, got: 3 }));
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let p = init_params(&[linear(2, 1)], 0).unwrap();
        assert!(forward(&p, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let specs = LayerSpec::stack(3, &[4, 4], 2, Activation::Relu, false);
        let mut p = init_params(&specs, 3).unwrap();
        p.theta.fill(0.0);
        let (y, _) = forward(&p, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_two_layer_identity_net() {
        // W1 = [1, 2]ᵀ, W2 = [3, 4], biases zero: f(x) = (3·1 + 4·2)·x = 11x
        let mut p = init_params(&[linear(1, 2), linear(2, 1)], 0).unwrap();
        p.block_mut(0, ParamKind::Weight).unwrap().copy_from_slice(&[1.0, 2.0]);
        p.block_mut(1, ParamKind::Weight).unwrap().copy_from_slice(&[3.0, 4.0]);
        for x in [-2.0, 0.5, 3.0] {
            assert_eq!(forward(&p, &[x]).unwrap().0, vec![11.0 * x]);
        }
    }

    #[test]
    fn constant_layer_norm_input_yields_ln_bias() {
        let mut p = init_params(&[LayerSpec::new(2, 3, Activation::Identity, true)], 0).unwrap();
        p.block_mut(0, ParamKind::Weight).unwrap().fill(0.0);
        p.block_mut(0, ParamKind::Bias).unwrap().copy_from_slice(&[0.7, 0.7, 0.7]);
        p.block_mut(0, ParamKind::LnGain).unwrap().copy_from_slice(&[2.0, 3.0, 4.0]);
        p.block_mut(0, ParamKind::LnBias).unwrap().copy_from_slice(&[0.1, -0.2, 0.3]);
        let (y, _) = forward(&p, &[1.0, -1.0]).unwrap();
        assert_eq!(y, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let p = init_params(&[LayerSpec::new(5, 7, Activation::Relu, true)], 11).unwrap();
        let x = array![[0.1, -0.4, 2.0, 0.3, 1.0], [3.0, 1.0, -2.0, 0.0, 0.5]];
        let (_, trace) = p.forward_batch(x.view()).unwrap();
        let zhat = trace.normalized(0).unwrap();
        for row in zhat.rows() {
            let mean = row.sum() / 7.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_net_weight_gradient_is_outer_product() {
        let mut p = init_params(&[linear(3, 2)], 0).unwrap();
        p.theta.fill(0.0);
        let x = [0.5, -1.5, 2.0];
        let g = [3.0, -0.25];
        let (_, trace) = forward(&p, &x).unwrap();
        let grad = backward(&p, &trace, &g).unwrap();
        let w = &grad[..6];
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(w[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(&grad[6..], &g);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient() {
        let specs = LayerSpec::stack(3, &[6], 2, Activation::Tanh, true);
        let p = init_params(&specs, 5).unwrap();
        let (_, trace) = forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        assert!(backward(&p, &trace, &[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = init_params(&[linear(3, 2)], 4).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(p.len(), AdamConfig::default());
        let g = vec![0.0; p.len()];
        adam_step(&mut p, &g, &mut st, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_all_zero_mask_touches_nothing() {
        let mut p = init_params(&[linear(3, 2)], 4).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(p.len(), AdamConfig::default());
        st.m.iter_mut().enumerate().for_each(|(i, m)| *m = i as f64 * 0.1);
        let (m0, v0) = (st.m.clone(), st.v.clone());
        let (g, mask) = (vec![1.0; p.len()], BitMask::zeros(p.len()));
        let touched = adam_step(&mut p, &g, &mut st, Some(&mask)).unwrap();
        assert_eq!(touched, 0);
        assert_eq!(p, before);
        assert_eq!(st.m, m0);
        assert_eq!(st.v, v0);
    }

    #[test]
    fn adam_first_step_scalar_oracle() {
        for g in [0.37, -2.5, 1e-3] {
            let theta0 = 1.25;
            let mut theta = [theta0];
            let mut st = AdamState::new(1, AdamConfig::default());
            st.step(&mut theta, &[g], None).unwrap();
            // first step: m̂ = g, v̂ = g², so the move is lr·g/(|g| + ε)
            let expected = theta0 - 3e-4 * g / (g.abs() + 1e-8);
            assert!((theta[0] - expected).abs() < 1e-15, "{} vs {}", theta[0], expected);
        }
    }

    #[test]
    fn adam_length_mismatch() {
        let mut st = AdamState::new(2, AdamConfig::default());
        assert!(st.step(&mut [0.0, 0.0], &[1.0], None).is_err());
        assert!(st.step(&mut [0.0, 0.0], &[1.0, 1.0], Some(&BitMask::ones(3))).is_err());
    }
}
