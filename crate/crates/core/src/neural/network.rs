//! Dense sine-activated network with exact input derivatives.
//!
//! Every layer propagates a jet per point: the value, the first derivative
//! with respect to each input, and the pure second derivative with respect
//! to selected inputs. Parameter gradients of any loss built from those
//! jets come from a reverse sweep over the same propagation.
//!
//! Activations are stored as `width × (C·n)` row-major blocks, where `n`
//! is the number of points and `C` the number of jet channels; column
//! `c·n + p` holds channel `c` of point `p`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NeuralError;
use crate::units::{seeded_rng, streams, DomainSpec, PointSet};

/// Affine map `x̂ = scale · (x − offset)` applied to inputs before the
/// first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(width: usize) -> Self {
        Self {
            offset: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Maps `[lower_i, upper_i]` onto `[−1, 1]`.
    pub fn unit_box(lower: &[f64], upper: &[f64]) -> Self {
        Self {
            offset: lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            scale: lower.iter().zip(upper).map(|(l, u)| 2.0 / (u - l)).collect(),
        }
    }

    /// Space axes then time of a domain onto `[−1, 1]`.
    pub fn for_domain(domain: &DomainSpec) -> Self {
        let mut lower = vec![0.0; domain.dim()];
        let mut upper = domain.extents.clone();
        lower.push(domain.t_start);
        upper.push(domain.t_end);
        Self::unit_box(&lower, &upper)
    }
}

/// Affine map `y = offset + scale · ŷ` applied to the last layer's
/// outputs, so the trainable part works at order-one magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub output_width: usize,
    /// Multiplies the first hidden layer's pre-activation.
    pub first_layer_omega: f64,
    pub scaling: InputScaling,
    /// Identity when absent.
    #[serde(default)]
    pub output: Option<OutputScaling>,
}

impl NetworkSpec {
    pub fn new(input_width: usize, hidden: Vec<usize>, output_width: usize) -> Result<Self, NeuralError> {
        let spec = Self {
            input_width,
            hidden,
            output_width,
            first_layer_omega: 1.0,
            scaling: InputScaling::identity(input_width),
            output: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Network for a `d`-dimensional domain: inputs `(x, t)` rescaled to
    /// `[−1, 1]`, outputs `(ρ, v_1..v_d, φ)`.
    pub fn for_domain(domain: &DomainSpec, hidden: Vec<usize>) -> Result<Self, NeuralError> {
        let d = domain.dim();
        let mut spec = Self::new(d + 1, hidden, d + 2)?;
        spec.scaling = InputScaling::for_domain(domain);
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_width == 0 || self.output_width == 0 || self.hidden.contains(&0) {
            return Err(NeuralError::Spec("all layer widths must be >= 1".into()));
        }
        if self.scaling.offset.len() != self.input_width || self.scaling.scale.len() != self.input_width {
            return Err(NeuralError::Spec("input scaling width mismatch".into()));
        }
        if let Some(o) = &self.output {
            if o.offset.len() != self.output_width || o.scale.len() != self.output_width {
                return Err(NeuralError::Spec("output scaling width mismatch".into()));
            }
            if o.offset.iter().chain(&o.scale).any(|v| !v.is_finite()) {
                return Err(NeuralError::Spec("output scaling must be finite".into()));
            }
        }
        if !(self.first_layer_omega.is_finite() && self.first_layer_omega > 0.0) {
            return Err(NeuralError::Spec("first-layer frequency must be > 0".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width];
        widths.extend(&self.hidden);
        widths.push(self.output_width);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights and biases, stored flat layer by layer as `W (out × in,
/// row-major)` followed by `b (out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl NetworkParams {
    pub fn zeros(spec: NetworkSpec) -> Self {
        let n = spec.param_count();
        Self::from_flat(spec, vec![0.0; n]).expect("sized by spec")
    }

    pub fn from_flat(spec: NetworkSpec, values: Vec<f64>) -> Result<Self, NeuralError> {
        if values.len() != spec.param_count() {
            return Err(NeuralError::Spec(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        let mut offsets = Vec::new();
        let mut at = 0;
        for (i, o) in spec.layer_dims() {
            offsets.push(at);
            at += i * o + o;
        }
        Ok(Self { spec, values, offsets })
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    /// Same architecture with new parameter values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, NeuralError> {
        Self::from_flat(self.spec.clone(), values)
    }

    pub fn num_layers(&self) -> usize {
        self.offsets.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (i, o) = self.spec.layer_dims()[layer];
        &self.values[self.offsets[layer]..self.offsets[layer] + i * o]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (i, o) = self.spec.layer_dims()[layer];
        let start = self.offsets[layer] + i * o;
        &self.values[start..start + o]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (i, o) = self.spec.layer_dims()[layer];
        let start = self.offsets[layer];
        &mut self.values[start..start + i * o]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (i, o) = self.spec.layer_dims()[layer];
        let start = self.offsets[layer] + i * o;
        &mut self.values[start..start + o]
    }

    /// Range of flat indices belonging to one layer.
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let (i, o) = self.spec.layer_dims()[layer];
        self.offsets[layer]..self.offsets[layer] + i * o + o
    }
}

/// He-normal weights truncated at two standard deviations, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut params = NetworkParams::zeros(spec.clone());
    let mut rng = seeded_rng(seed, streams::INIT);
    for (layer, (fan_in, _)) in spec.layer_dims().into_iter().enumerate() {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for w in params.weights_mut(layer) {
            *w = loop {
                let z: f64 = normal.sample(&mut rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            };
        }
    }
    // keep the generator's stream position independent of layer count
    let _: u64 = rng.gen();
    params
}

/// Which derivative channels a jet carries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JetRequest {
    pub first: bool,
    /// Inputs whose pure second derivative is propagated.
    pub second_axes: Vec<usize>,
}

impl JetRequest {
    pub fn values() -> Self {
        Self::default()
    }

    pub fn first() -> Self {
        Self {
            first: true,
            second_axes: Vec::new(),
        }
    }

    pub fn second(axes: Vec<usize>) -> Self {
        Self {
            first: true,
            second_axes: axes,
        }
    }

    fn channels(&self, inputs: usize) -> usize {
        1 + if self.first { inputs } else { 0 } + self.second_axes.len()
    }
}

/// Outputs and their input derivatives for a batch of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub n: usize,
    pub outputs: usize,
    pub inputs: usize,
    pub request: JetRequest,
    data: Vec<f64>,
}

impl Jet {
    pub fn zeros(n: usize, outputs: usize, inputs: usize, request: JetRequest) -> Self {
        let c = request.channels(inputs);
        Self {
            n,
            outputs,
            inputs,
            request,
            data: vec![0.0; outputs * c * n],
        }
    }

    /// A zero jet with the same shape, used to hold adjoints.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.outputs, self.inputs, self.request.clone())
    }

    pub fn channels(&self) -> usize {
        self.request.channels(self.inputs)
    }

    #[inline]
    fn at(&self, output: usize, channel: usize, point: usize) -> usize {
        (output * self.channels() + channel) * self.n + point
    }

    #[inline]
    fn second_channel(&self, axis: usize) -> usize {
        let s = self
            .request
            .second_axes
            .iter()
            .position(|&a| a == axis)
            .expect("second derivative not requested for this input");
        1 + self.inputs + s
    }

    #[inline]
    pub fn value(&self, output: usize, point: usize) -> f64 {
        self.data[self.at(output, 0, point)]
    }

    #[inline]
    pub fn d1(&self, output: usize, input: usize, point: usize) -> f64 {
        debug_assert!(self.request.first);
        self.data[self.at(output, 1 + input, point)]
    }

    #[inline]
    pub fn d2(&self, output: usize, input: usize, point: usize) -> f64 {
        self.data[self.at(output, self.second_channel(input), point)]
    }

    /// Contiguous slice over points of one output channel.
    pub fn value_slice(&self, output: usize) -> &[f64] {
        let s = self.at(output, 0, 0);
        &self.data[s..s + self.n]
    }

    pub fn d1_slice(&self, output: usize, input: usize) -> &[f64] {
        let s = self.at(output, 1 + input, 0);
        &self.data[s..s + self.n]
    }

    pub fn d2_slice(&self, output: usize, input: usize) -> &[f64] {
        let s = self.at(output, self.second_channel(input), 0);
        &self.data[s..s + self.n]
    }

    pub fn value_slice_mut(&mut self, output: usize) -> &mut [f64] {
        let s = self.at(output, 0, 0);
        let n = self.n;
        &mut self.data[s..s + n]
    }

    pub fn d1_slice_mut(&mut self, output: usize, input: usize) -> &mut [f64] {
        let s = self.at(output, 1 + input, 0);
        let n = self.n;
        &mut self.data[s..s + n]
    }

    pub fn d2_slice_mut(&mut self, output: usize, input: usize) -> &mut [f64] {
        let s = self.at(output, self.second_channel(input), 0);
        let n = self.n;
        &mut self.data[s..s + n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Intermediate activations kept for the reverse sweep.
pub struct Tape {
    n: usize,
    channels: usize,
    request: JetRequest,
    /// Input block of every layer (`A_0` is the scaled input jet).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

/// `C = beta·C + A·B` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1 || k == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index matrixmultiply touches
    // and the three slices are distinct borrows.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_points(spec: &NetworkSpec, points: &PointSet) -> Result<(), NeuralError> {
    if points.width != spec.input_width {
        return Err(NeuralError::InputWidth {
            expected: spec.input_width,
            got: points.width,
        });
    }
    if points.coords.iter().any(|x| !x.is_finite()) {
        return Err(NeuralError::NonFiniteInput);
    }
    Ok(())
}

fn input_block(spec: &NetworkSpec, points: &PointSet, request: &JetRequest) -> Vec<f64> {
    let n = points.len();
    let d_in = spec.input_width;
    let c = request.channels(d_in);
    let m = c * n;
    let mut a = vec![0.0; d_in * m];
    for j in 0..d_in {
        let (off, sc) = (spec.scaling.offset[j], spec.scaling.scale[j]);
        let row = &mut a[j * m..(j + 1) * m];
        for (p, x) in points.iter().enumerate() {
            row[p] = sc * (x[j] - off);
        }
        if request.first {
            row[(1 + j) * n..(2 + j) * n].iter_mut().for_each(|v| *v = sc);
        }
    }
    a
}

/// Sine jet propagation for one hidden layer, in place on a copy of `z`.
fn sine_forward(z: &[f64], width: usize, n: usize, inputs: usize, request: &JetRequest) -> Vec<f64> {
    let c = request.channels(inputs);
    let m = c * n;
    let mut h = vec![0.0; width * m];
    for r in 0..width {
        let zr = &z[r * m..(r + 1) * m];
        let hr = &mut h[r * m..(r + 1) * m];
        for p in 0..n {
            let (s, co) = zr[p].sin_cos();
            hr[p] = s;
            if request.first {
                for j in 0..inputs {
                    let idx = (1 + j) * n + p;
                    hr[idx] = co * zr[idx];
                }
            }
            for (si, &axis) in request.second_axes.iter().enumerate() {
                let zj = zr[(1 + axis) * n + p];
                let idx = (1 + inputs + si) * n + p;
                hr[idx] = -s * zj * zj + co * zr[idx];
            }
        }
    }
    h
}

/// Adjoint of [`sine_forward`]: maps `h̄` to `z̄` (overwrites `hbar`).
fn sine_backward(z: &[f64], hbar: &mut [f64], width: usize, n: usize, inputs: usize, request: &JetRequest) {
    let c = request.channels(inputs);
    let m = c * n;
    for r in 0..width {
        let zr = &z[r * m..(r + 1) * m];
        let gr = &mut hbar[r * m..(r + 1) * m];
        for p in 0..n {
            let (s, co) = zr[p].sin_cos();
            let mut z0bar = gr[p] * co;
            if request.first {
                for j in 0..inputs {
                    let idx = (1 + j) * n + p;
                    let hj = gr[idx];
                    z0bar -= hj * s * zr[idx];
                    gr[idx] = hj * co;
                }
            }
            for (si, &axis) in request.second_axes.iter().enumerate() {
                let jdx = (1 + axis) * n + p;
                let idx = (1 + inputs + si) * n + p;
                let hs = gr[idx];
                let zj = zr[jdx];
                z0bar -= hs * (co * zj * zj + s * zr[idx]);
                gr[jdx] -= hs * 2.0 * s * zj;
                gr[idx] = hs * co;
            }
            gr[p] = z0bar;
        }
    }
}

/// Propagates the jet through all layers, optionally recording a tape.
fn propagate(
    params: &NetworkParams,
    points: &PointSet,
    request: &JetRequest,
    record: bool,
) -> Result<(Jet, Option<Tape>), NeuralError> {
    let spec = &params.spec;
    check_points(spec, points)?;
    if !request.second_axes.is_empty() && !request.first {
        return Err(NeuralError::Spec("second derivatives need first-derivative channels".into()));
    }
    if request.second_axes.iter().any(|&a| a >= spec.input_width) {
        return Err(NeuralError::Spec("second-derivative axis out of range".into()));
    }
    let n = points.len();
    let d_in = spec.input_width;
    let c = request.channels(d_in);
    let m = c * n;
    let dims = spec.layer_dims();
    let last = dims.len() - 1;

    let mut a = input_block(spec, points, request);
    let mut tape = record.then(|| Tape {
        n,
        channels: c,
        request: request.clone(),
        inputs: Vec::with_capacity(dims.len()),
        pre: Vec::with_capacity(last),
    });

    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let mut z = vec![0.0; fan_out * m];
        gemm(fan_out, fan_in, m, params.weights(l), (fan_in, 1), &a, (m, 1), 0.0, &mut z);
        let b = params.bias(l);
        for r in 0..fan_out {
            z[r * m..r * m + n].iter_mut().for_each(|v| *v += b[r]);
        }
        if l == 0 && spec.first_layer_omega != 1.0 {
            let w0 = spec.first_layer_omega;
            z.iter_mut().for_each(|v| *v *= w0);
        }
        if l == last {
            if let Some(o) = &spec.output {
                for r in 0..fan_out {
                    let row = &mut z[r * m..(r + 1) * m];
                    row.iter_mut().for_each(|v| *v *= o.scale[r]);
                    row[..n].iter_mut().for_each(|v| *v += o.offset[r]);
                }
            }
            if let Some(t) = tape.as_mut() {
                t.inputs.push(a);
            }
            let jet = Jet {
                n,
                outputs: fan_out,
                inputs: d_in,
                request: request.clone(),
                data: z,
            };
            return Ok((jet, tape));
        }
        let h = sine_forward(&z, fan_out, n, d_in, request);
        if let Some(t) = tape.as_mut() {
            t.inputs.push(std::mem::replace(&mut a, h));
            t.pre.push(z);
        } else {
            a = h;
        }
    }
    unreachable!("a network always has an output layer")
}

/// Plain forward pass; the returned jet carries values only.
pub fn forward(params: &NetworkParams, points: &PointSet) -> Result<Jet, NeuralError> {
    propagate(params, points, &JetRequest::values(), false).map(|(j, _)| j)
}

/// Outputs with exact first derivatives (all inputs, physical units) and
/// the requested pure second derivatives.
pub fn input_jet(params: &NetworkParams, points: &PointSet, request: &JetRequest) -> Result<Jet, NeuralError> {
    propagate(params, points, request, false).map(|(j, _)| j)
}

/// [`input_jet`] that also records what [`backward`] needs.
pub fn input_jet_with_tape(
    params: &NetworkParams,
    points: &PointSet,
    request: &JetRequest,
) -> Result<(Jet, Tape), NeuralError> {
    propagate(params, points, request, true).map(|(j, t)| (j, t.expect("tape requested")))
}

/// Accumulates `∂L/∂θ` into `grad` given `∂L/∂(output jet)`.
pub fn backward(params: &NetworkParams, tape: &Tape, adjoint: &Jet, grad: &mut [f64]) {
    let spec = &params.spec;
    assert_eq!(grad.len(), spec.param_count());
    assert_eq!(adjoint.n, tape.n);
    assert_eq!(adjoint.channels(), tape.channels);
    let n = tape.n;
    let m = tape.channels * n;
    let d_in = spec.input_width;
    let dims = spec.layer_dims();
    let last = dims.len() - 1;

    let mut zbar = adjoint.data.clone();
    if let Some(o) = &spec.output {
        for (r, sc) in o.scale.iter().enumerate() {
            zbar[r * m..(r + 1) * m].iter_mut().for_each(|v| *v *= sc);
        }
    }
    for l in (0..=last).rev() {
        let (fan_in, fan_out) = dims[l];
        if l < last {
            sine_backward(&tape.pre[l], &mut zbar, fan_out, n, d_in, &tape.request);
        }
        if l == 0 && spec.first_layer_omega != 1.0 {
            let w0 = spec.first_layer_omega;
            zbar.iter_mut().for_each(|v| *v *= w0);
        }
        let a = &tape.inputs[l];
        let range = params.layer_range(l);
        let (wgrad, bgrad) = grad[range].split_at_mut(fan_in * fan_out);
        // W̄ += Z̄ Aᵀ
        gemm(fan_out, m, fan_in, &zbar, (m, 1), a, (1, m), 1.0, wgrad);
        for (r, bg) in bgrad.iter_mut().enumerate() {
            *bg += pairwise_sum(&zbar[r * m..r * m + n]);
        }
        if l > 0 {
            // Ā = Wᵀ Z̄
            let mut abar = vec![0.0; fan_in * m];
            gemm(fan_in, fan_out, m, params.weights(l), (1, fan_in), &zbar, (m, 1), 0.0, &mut abar);
            zbar = abar;
        }
    }
}

/// Pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(width: usize, n: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..width * n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        PointSet::from_coords(width, coords)
    }

    fn sin_net() -> NetworkParams {
        let spec = NetworkSpec::new(1, vec![1], 1).unwrap();
        let mut p = NetworkParams::zeros(spec);
        p.weights_mut(0)[0] = 1.0;
        p.weights_mut(1)[0] = 1.0;
        p
    }

    #[test]
    fn init_is_deterministic_and_truncated() {
        let spec = NetworkSpec::new(2, vec![32, 32, 32], 3).unwrap();
        let a = init_params(&spec, 9);
        assert_eq!(a, init_params(&spec, 9));
        assert_ne!(a, init_params(&spec, 10));
        let bound = 2.0 * (2.0f64 / 32.0).sqrt();
        assert!(a.weights(1).iter().all(|w| w.abs() <= bound));
        for l in 0..a.num_layers() {
            assert!(a.bias(l).iter().all(|b| *b == 0.0));
        }
    }

    /// He scaling keeps pre-activation variance near `2 · E[a²]` per layer;
    /// for unit-variance inputs the first layer's pre-activations have
    /// variance close to 2 (less after truncation at 2σ, factor ≈ 0.774).
    #[test]
    fn he_init_preactivation_statistics() {
        let spec = NetworkSpec::new(64, vec![256], 1).unwrap();
        let p = init_params(&spec, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let w = p.weights(0);
        let mut acc = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let x: Vec<f64> = (0..64).map(|_| normal.sample(&mut rng)).collect();
            for r in 0..256 {
                let z: f64 = (0..64).map(|j| w[r * 64 + j] * x[j]).sum();
                acc += z * z;
            }
        }
        let var = acc / (trials * 256) as f64;
        assert!((var / (2.0 * 0.774) - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn flat_round_trip() {
        let spec = NetworkSpec::new(3, vec![4, 5], 2).unwrap();
        let p = init_params(&spec, 1);
        let q = NetworkParams::from_flat(spec.clone(), p.as_flat().to_vec()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.as_flat().len(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        assert!(NetworkParams::from_flat(spec, vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = NetworkSpec::new(2, vec![8, 8], 3).unwrap();
        let p = NetworkParams::zeros(spec);
        let out = forward(&p, &random_points(2, 10, 1)).unwrap();
        assert!((0..3).all(|o| out.value_slice(o).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn sin_network_closed_form() {
        let p = sin_net();
        let xs = PointSet::from_coords(1, vec![-1.0, 0.0, 0.3, 2.0]);
        let jet = input_jet(&p, &xs, &JetRequest::second(vec![0])).unwrap();
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(jet.value(0, i), x[0].sin());
            assert!((jet.d1(0, 0, i) - x[0].cos()).abs() < 1e-15);
            assert!((jet.d2(0, 0, i) + x[0].sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_pure_and_batch_independent() {
        let spec = NetworkSpec::new(3, vec![16, 16], 4).unwrap();
        let p = init_params(&spec, 5);
        let pts = random_points(3, 40, 2);
        let a = forward(&p, &pts).unwrap();
        assert_eq!(a, forward(&p, &pts).unwrap());
        let single = forward(&p, &PointSet::from_coords(3, pts.point(17).to_vec())).unwrap();
        for o in 0..4 {
            assert!((single.value(o, 0) - a.value(o, 17)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = NetworkSpec::new(2, vec![4], 1).unwrap();
        let p = init_params(&spec, 1);
        assert!(matches!(
            forward(&p, &PointSet::from_coords(3, vec![0.0; 3])),
            Err(NeuralError::InputWidth { .. })
        ));
        assert!(matches!(
            forward(&p, &PointSet::from_coords(2, vec![0.0, f64::NAN])),
            Err(NeuralError::NonFiniteInput)
        ));
    }

    #[test]
    fn zero_last_layer_gives_zero_derivatives() {
        let spec = NetworkSpec::new(2, vec![8, 8], 2).unwrap();
        let mut p = init_params(&spec, 2);
        p.weights_mut(2).iter_mut().for_each(|w| *w = 0.0);
        p.bias_mut(2)[0] = 0.7;
        let jet = input_jet(&p, &random_points(2, 5, 3), &JetRequest::second(vec![0, 1])).unwrap();
        for pt in 0..5 {
            assert_eq!(jet.value(0, pt), 0.7);
            for j in 0..2 {
                assert_eq!(jet.d1(0, j, pt), 0.0);
                assert_eq!(jet.d2(0, j, pt), 0.0);
            }
        }
    }

    fn fd_check(spec: NetworkSpec, seed: u64) {
        let d_in = spec.input_width;
        let p = init_params(&spec, seed);
        let pts = random_points(d_in, 12, seed + 1);
        let axes: Vec<usize> = (0..d_in).collect();
        let jet = input_jet(&p, &pts, &JetRequest::second(axes)).unwrap();
        let h1 = 1e-5;
        let h2 = 1e-4;
        let mut worst1: f64 = 0.0;
        let mut worst2: f64 = 0.0;
        for pt in 0..pts.len() {
            for j in 0..d_in {
                let shifted = |h: f64| {
                    let mut x = pts.point(pt).to_vec();
                    x[j] += h;
                    forward(&p, &PointSet::from_coords(d_in, x)).unwrap()
                };
                let (fp, fm) = (shifted(h1), shifted(-h1));
                let (gp, gm) = (shifted(h2), shifted(-h2));
                for o in 0..spec.output_width {
                    let d1 = (fp.value(o, 0) - fm.value(o, 0)) / (2.0 * h1);
                    let d2 = (gp.value(o, 0) - 2.0 * jet.value(o, pt) + gm.value(o, 0)) / (h2 * h2);
                    let s1 = jet.d1(o, j, pt).abs().max(1.0);
                    let s2 = jet.d2(o, j, pt).abs().max(1.0);
                    worst1 = worst1.max((d1 - jet.d1(o, j, pt)).abs() / s1);
                    worst2 = worst2.max((d2 - jet.d2(o, j, pt)).abs() / s2);
                }
            }
        }
        assert!(worst1 < 1e-6, "first-derivative error {worst1}");
        assert!(worst2 < 1e-4, "second-derivative error {worst2}");
    }

    #[test]
    fn jet_matches_finite_differences() {
        fd_check(NetworkSpec::new(2, vec![8, 8], 3).unwrap(), 1);
        let mut spec = NetworkSpec::new(4, vec![16, 16, 16], 5).unwrap();
        spec.scaling = InputScaling::unit_box(&[0.0, 0.0, 0.0, 0.0], &[2.0, 3.0, 1.0, 5.0]);
        spec.first_layer_omega = 3.0;
        fd_check(spec, 7);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
