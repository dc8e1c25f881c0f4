//! Fully connected networks with exact first- and second-order reverse passes.
//!
//! Parameters live in one flat vector, layer by layer: the `out x in` weight
//! matrix in row-major order followed by the `out` biases. Optimizers and the
//! trust-region step operate on that vector directly.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Swish,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        self.eval2(z).0
    }

    pub fn derivative(self, z: f64) -> f64 {
        self.eval2(z).1
    }

    pub fn second_derivative(self, z: f64) -> f64 {
        self.eval2(z).2
    }

    /// Value, first and second derivative at `z`.
    #[inline]
    fn eval2(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Identity => (z, 1.0, 0.0),
            Activation::Tanh => {
                let t = libm::tanh(z);
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                let ds = s * (1.0 - s);
                (z * s, s + z * ds, ds * (2.0 + z * (1.0 - 2.0 * s)))
            }
        }
    }
}

/// Multilayer perceptron `h_l = act_l(W_l h_{l-1} + b_l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values of a forward pass, kept for reverse sweeps.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `h_0 = input, ..., h_L = output`.
    activations: Vec<Vec<f64>>,
    /// Activation derivatives at each layer's pre-activation.
    slopes: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape has at least one layer")
    }
}

/// Forward pass carrying one tangent per input coordinate, i.e. the full
/// input Jacobian of every layer.
#[derive(Debug, Clone)]
pub struct TangentTape {
    n_in: usize,
    activations: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    curvatures: Vec<Vec<f64>>,
    /// Tangents of `h_l`, laid out `[j * width + i]` for input direction `j`.
    tangents: Vec<Vec<f64>>,
    /// Tangents of the pre-activation `z_l`, same layout.
    pre_tangents: Vec<Vec<f64>>,
}

impl TangentTape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape has at least one layer")
    }

    /// `d output_i / d input_j`.
    pub fn jacobian(&self) -> DenseMatrix {
        let out = self.output().len();
        let last = self.tangents.last().expect("tape has at least one layer");
        let mut j = DenseMatrix::zeros(out, self.n_in);
        for dir in 0..self.n_in {
            for i in 0..out {
                j.set(i, dir, last[dir * out + i]);
            }
        }
        j
    }
}

impl MlpNetwork {
    /// Network with every parameter set to zero.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(invalid("layer_sizes", "need at least input and output sizes"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(invalid("layer_sizes", "layer sizes must be positive"));
        }
        let count = layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            hidden_activation,
            output_activation,
            params: vec![0.0; count],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden_activation, output_activation)?;
        net.reinitialize(rng);
        Ok(net)
    }

    pub fn reinitialize(&mut self, rng: &mut SimRng) {
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let bound = 1.0 / libm::sqrt(n_in as f64);
            let w = self.offset(l);
            for p in &mut self.params[w..w + n_in * n_out] {
                *p = rng.random_range(-bound..bound);
            }
            for p in &mut self.params[w + n_in * n_out..w + (n_in + 1) * n_out] {
                *p = 0.0;
            }
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("MlpNetwork::set_params", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Checks structural invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(
            &self.layer_sizes,
            self.hidden_activation,
            self.output_activation,
        )?;
        check_len("MlpNetwork params", expected.params.len(), self.params.len())?;
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("MlpNetwork params"));
        }
        Ok(())
    }

    /// Offset of layer `l`'s weight block in the flat parameter vector.
    fn offset(&self, l: usize) -> usize {
        self.layer_sizes[..=l]
            .windows(2)
            .take(l)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        let n_in = self.layer_sizes[layer];
        self.params[self.offset(layer) + row * n_in + col]
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, v: f64) {
        let n_in = self.layer_sizes[layer];
        let o = self.offset(layer);
        self.params[o + row * n_in + col] = v;
    }

    pub fn bias(&self, layer: usize, row: usize) -> f64 {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        self.params[self.offset(layer) + n_in * n_out + row]
    }

    pub fn set_bias(&mut self, layer: usize, row: usize, v: f64) {
        let n_in = self.layer_sizes[layer];
        let n_out = self.layer_sizes[layer + 1];
        let o = self.offset(layer);
        self.params[o + n_in * n_out + row] = v;
    }

    /// Multiplies one layer's weights and biases by `factor`.
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let o = self.offset(layer);
        for p in &mut self.params[o..o + (n_in + 1) * n_out] {
            *p *= factor;
        }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        check_len("MlpNetwork input", self.input_dim(), input.len())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut h = input.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let act = self.activation(l);
            h = (0..n_out)
                .map(|i| act.apply(b[i] + dot(&w[i * n_in..(i + 1) * n_in], &h)))
                .collect();
            offset += (n_in + 1) * n_out;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut slopes = Vec::with_capacity(self.num_layers());
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let act = self.activation(l);
            let prev = &activations[l];
            let mut h = Vec::with_capacity(n_out);
            let mut s = Vec::with_capacity(n_out);
            for i in 0..n_out {
                let (v, d, _) = act.eval2(b[i] + dot(&w[i * n_in..(i + 1) * n_in], prev));
                h.push(v);
                s.push(d);
            }
            activations.push(h);
            slopes.push(s);
            offset += (n_in + 1) * n_out;
        }
        Ok(Tape {
            activations,
            slopes,
        })
    }

    /// Reverse sweep for the scalar `upstream . output`.
    ///
    /// Adds `scale` times the parameter gradient into `param_grad` when given
    /// and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &[f64],
        mut param_grad: Option<(&mut [f64], f64)>,
    ) -> Result<Vec<f64>> {
        check_len("MlpNetwork upstream gradient", self.output_dim(), upstream.len())?;
        if let Some((g, _)) = &param_grad {
            check_len("MlpNetwork parameter gradient", self.param_count(), g.len())?;
        }
        let mut hbar = upstream.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let zbar: Vec<f64> = hbar
                .iter()
                .zip(&tape.slopes[l])
                .map(|(h, s)| h * s)
                .collect();
            let prev = &tape.activations[l];
            if let Some((g, scale)) = param_grad.as_mut() {
                let (gw, gb) = g[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for i in 0..n_out {
                    let zi = *scale * zbar[i];
                    if zi == 0.0 {
                        continue;
                    }
                    for (gk, pk) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(prev) {
                        *gk += zi * pk;
                    }
                    gb[i] += zi;
                }
            }
            let w = &self.params[offset..offset + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for i in 0..n_out {
                let zi = zbar[i];
                if zi == 0.0 {
                    continue;
                }
                for (nk, wk) in next.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *nk += wk * zi;
                }
            }
            hbar = next;
        }
        Ok(hbar)
    }

    /// Gradient of `upstream . output` with respect to every parameter.
    pub fn backward_params(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_tape(input)?;
        let mut grad = vec![0.0; self.param_count()];
        self.backward(&tape, upstream, Some((&mut grad, 1.0)))?;
        Ok(grad)
    }

    /// `J[i][j] = d output_i / d input_j`, one reverse sweep per output.
    pub fn input_jacobian(&self, input: &[f64]) -> Result<DenseMatrix> {
        let tape = self.forward_tape(input)?;
        self.input_jacobian_from_tape(&tape)
    }

    pub fn input_jacobian_from_tape(&self, tape: &Tape) -> Result<DenseMatrix> {
        let (m, n) = (self.output_dim(), self.input_dim());
        let mut jac = DenseMatrix::zeros(m, n);
        let mut e = vec![0.0; m];
        for i in 0..m {
            e[i] = 1.0;
            let row = self.backward(tape, &e, None)?;
            jac.row_mut(i).copy_from_slice(&row);
            e[i] = 0.0;
        }
        Ok(jac)
    }

    /// Forward pass that also propagates the identity through every layer,
    /// giving the input Jacobian and what [`MlpNetwork::jacobian_backward`]
    /// needs.
    pub fn forward_tangents(&self, input: &[f64]) -> Result<TangentTape> {
        self.check_input(input)?;
        let n = self.input_dim();
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut slopes = Vec::with_capacity(layers);
        let mut curvatures = Vec::with_capacity(layers);
        let mut tangents = Vec::with_capacity(layers + 1);
        let mut pre_tangents = Vec::with_capacity(layers);
        activations.push(input.to_vec());
        let mut eye = vec![0.0; n * n];
        for j in 0..n {
            eye[j * n + j] = 1.0;
        }
        tangents.push(eye);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let act = self.activation(l);
            let prev = &activations[l];
            let prev_t = &tangents[l];
            let mut h = Vec::with_capacity(n_out);
            let mut s = Vec::with_capacity(n_out);
            let mut c = Vec::with_capacity(n_out);
            let mut dz = vec![0.0; n * n_out];
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                let (v, d1, d2) = act.eval2(b[i] + dot(row, prev));
                h.push(v);
                s.push(d1);
                c.push(d2);
                for j in 0..n {
                    dz[j * n_out + i] = dot(row, &prev_t[j * n_in..(j + 1) * n_in]);
                }
            }
            let dh: Vec<f64> = (0..n * n_out).map(|k| s[k % n_out] * dz[k]).collect();
            activations.push(h);
            slopes.push(s);
            curvatures.push(c);
            pre_tangents.push(dz);
            tangents.push(dh);
            offset += (n_in + 1) * n_out;
        }
        Ok(TangentTape {
            n_in: n,
            activations,
            slopes,
            curvatures,
            tangents,
            pre_tangents,
        })
    }

    /// Adds `scale * d/dparams [ out_cot . y + <jac_cot, dy/dx> ]` into
    /// `param_grad`, where `jac_cot` has the shape of the input Jacobian.
    pub fn jacobian_backward(
        &self,
        tape: &TangentTape,
        out_cot: &[f64],
        jac_cot: &DenseMatrix,
        param_grad: &mut [f64],
        scale: f64,
    ) -> Result<()> {
        let (m, n) = (self.output_dim(), self.input_dim());
        check_len("jacobian_backward output cotangent", m, out_cot.len())?;
        check_len("jacobian_backward jacobian rows", m, jac_cot.rows())?;
        check_len("jacobian_backward jacobian cols", n, jac_cot.cols())?;
        check_len("jacobian_backward gradient", self.param_count(), param_grad.len())?;

        let mut hbar = out_cot.to_vec();
        let mut dhbar = vec![0.0; n * m];
        for j in 0..n {
            for i in 0..m {
                dhbar[j * m + i] = jac_cot.get(i, j);
            }
        }
        let mut offset = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let s = &tape.slopes[l];
            let c = &tape.curvatures[l];
            let dz = &tape.pre_tangents[l];
            let mut zbar: Vec<f64> = (0..n_out).map(|i| s[i] * hbar[i]).collect();
            let mut dzbar = vec![0.0; n * n_out];
            for j in 0..n {
                for i in 0..n_out {
                    let k = j * n_out + i;
                    zbar[i] += c[i] * dz[k] * dhbar[k];
                    dzbar[k] = s[i] * dhbar[k];
                }
            }
            let prev = &tape.activations[l];
            let prev_t = &tape.tangents[l];
            {
                let (gw, gb) =
                    param_grad[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for i in 0..n_out {
                    let grow = &mut gw[i * n_in..(i + 1) * n_in];
                    let zi = scale * zbar[i];
                    for (g, p) in grow.iter_mut().zip(prev) {
                        *g += zi * p;
                    }
                    for j in 0..n {
                        let dzi = scale * dzbar[j * n_out + i];
                        if dzi == 0.0 {
                            continue;
                        }
                        for (g, p) in grow.iter_mut().zip(&prev_t[j * n_in..(j + 1) * n_in]) {
                            *g += dzi * p;
                        }
                    }
                    gb[i] += zi;
                }
            }
            if l > 0 {
                let w = &self.params[offset..offset + n_in * n_out];
                let mut next = vec![0.0; n_in];
                let mut next_t = vec![0.0; n * n_in];
                for i in 0..n_out {
                    let row = &w[i * n_in..(i + 1) * n_in];
                    for (nk, wk) in next.iter_mut().zip(row) {
                        *nk += wk * zbar[i];
                    }
                    for j in 0..n {
                        let dzi = dzbar[j * n_out + i];
                        for (nk, wk) in next_t[j * n_in..(j + 1) * n_in].iter_mut().zip(row) {
                            *nk += wk * dzi;
                        }
                    }
                }
                hbar = next;
                dhbar = next_t;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn parameter_count_matches_layer_formula() {
        let net = MlpNetwork::zeros(&[3, 64, 64, 2], Activation::Swish, Activation::Identity)
            .unwrap();
        assert_eq!(net.param_count(), 4 * 64 + 65 * 64 + 65 * 2);
        assert!(MlpNetwork::zeros(&[3], Activation::Tanh, Activation::Identity).is_err());
        assert!(MlpNetwork::zeros(&[3, 0, 1], Activation::Tanh, Activation::Identity).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::zeros(&[2, 8, 3], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[0.3, -7.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer() {
        let mut net =
            MlpNetwork::zeros(&[2, 2], Activation::Identity, Activation::Identity).unwrap();
        net.set_weight(0, 0, 0, 1.0);
        net.set_weight(0, 1, 1, 1.0);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let j = net.input_jacobian(&[0.4, 0.1]).unwrap();
        assert_eq!(j, DenseMatrix::identity(2));
        assert_eq!(j.frobenius_sq(), 2.0);
    }

    #[test]
    fn linear_layer_gradients_are_outer_products() {
        let mut net =
            MlpNetwork::zeros(&[3, 2], Activation::Identity, Activation::Identity).unwrap();
        let mut rng = seeded(3);
        net.reinitialize(&mut rng);
        net.set_bias(0, 1, 0.7);
        let x = [0.5, -1.0, 2.0];
        let g = [3.0, -2.0];
        let grad = net.backward_params(&x, &g).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                assert_eq!(grad[i * 3 + k], g[i] * x[k]);
            }
            assert_eq!(grad[6 + i], g[i]);
        }
        let j = net.input_jacobian(&x).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                assert_eq!(j.get(i, k), net.weight(0, i, k));
            }
        }
        assert_eq!(net.backward_params(&x, &[0.0, 0.0]).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = MlpNetwork::zeros(&[2, 4, 1], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(net.backward_params(&[1.0, 2.0], &[1.0, 1.0]).is_err());
        assert!(net.input_jacobian(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Swish, Activation::Identity] {
            for &z in &[-3.1, -0.7, 0.0, 0.4, 2.5] {
                let d = fd(|v| act.apply(v), z, 1e-6);
                assert!((d - act.derivative(z)).abs() < 1e-7, "{act:?} {z}");
                let d2 = fd(|v| act.derivative(v), z, 1e-6);
                assert!((d2 - act.second_derivative(z)).abs() < 1e-7, "{act:?} {z}");
            }
        }
        // swish(x) = x * sigmoid(x)
        assert!((Activation::Swish.apply(1.3) - 1.3 / (1.0 + libm::exp(-1.3))).abs() < 1e-15);
    }

    #[test]
    fn tangent_jacobian_equals_reverse_jacobian() {
        let mut rng = seeded(11);
        let net =
            MlpNetwork::random(&[3, 7, 5, 2], Activation::Swish, Activation::Tanh, &mut rng)
                .unwrap();
        let x = [0.3, -0.8, 1.2];
        let a = net.input_jacobian(&x).unwrap();
        let t = net.forward_tangents(&x).unwrap();
        assert_eq!(t.output(), net.forward(&x).unwrap().as_slice());
        let b = t.jacobian();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
