//! Small fully connected Q-network: affine layers, ReLU on hidden layers,
//! identity on the two-valued output.
//!
//! Each layer stores its weights input-major (`weights[i * n_out + o]`), so a
//! forward pass is a sum of scaled fan-out rows and zero inputs are skipped.
//! Rendered frames are mostly black, which makes the first layer sparse.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    /// Builds a layer from `rows[o][i]`, the weight from input `i` to output `o`.
    pub fn from_rows(rows: &[Vec<f64>], biases: Vec<f64>) -> Result<Self> {
        let n_out = rows.len();
        let n_in = rows.first().map_or(0, Vec::len);
        if biases.len() != n_out {
            return Err(Error::Shape {
                expected: n_out,
                actual: biases.len(),
            });
        }
        let mut layer = Self::zeros(n_in, n_out);
        layer.biases = biases;
        for (o, row) in rows.iter().enumerate() {
            if row.len() != n_in {
                return Err(Error::Shape {
                    expected: n_in,
                    actual: row.len(),
                });
            }
            for (i, &w) in row.iter().enumerate() {
                layer.set_weight(o, i, w);
            }
        }
        Ok(layer)
    }

    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights[input * self.n_out + out]
    }

    pub fn set_weight(&mut self, out: usize, input: usize, value: f64) {
        self.weights[input * self.n_out + out] = value;
    }

    /// Fan-out of one input to every output.
    pub fn input_row(&self, input: usize) -> &[f64] {
        &self.weights[input * self.n_out..(input + 1) * self.n_out]
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.biases);
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                axpy(x, self.input_row(i), out);
            }
        }
    }

    /// `Σ_i input[i] · W[i, :]`, without the bias.
    pub fn linear(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_out];
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                axpy(x, self.input_row(i), &mut out);
            }
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Per-layer outputs of one forward pass, input first.
#[derive(Default)]
pub struct Activations {
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().map_or(&[], Vec::as_slice)
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Shape {
                    expected: pair[0].n_out,
                    actual: pair[1].n_in,
                });
            }
        }
        let out = layers.last().expect("non-empty").n_out;
        if out != N_ACTIONS {
            return Err(Error::Shape {
                expected: N_ACTIONS,
                actual: out,
            });
        }
        Ok(Self { layers })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Self::from_layers(layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect())
    }

    /// Uniform fan-in initialisation, `±1/sqrt(n_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].n_in];
        sizes.extend(self.layers.iter().map(|l| l.n_out));
        sizes
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Every parameter in checkpoint order: per layer, weights as an
    /// `n_out × n_in` row-major matrix, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for o in 0..layer.n_out {
                for i in 0..layer.n_in {
                    out.push(layer.weight(o, i));
                }
            }
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Inverse of [`flat_params`](Self::flat_params).
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            for o in 0..layer.n_out {
                for i in 0..layer.n_in {
                    layer.set_weight(o, i, it.next().expect("length checked"));
                }
            }
            for b in &mut layer.biases {
                *b = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<[f64; N_ACTIONS]> {
        let mut acts = Activations::default();
        self.forward_cached(input, &mut acts)?;
        let out = acts.output();
        Ok([out[0], out[1]])
    }

    pub fn forward_cached(&self, input: &[f64], acts: &mut Activations) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Shape {
                expected: self.input_len(),
                actual: input.len(),
            });
        }
        let n = self.layers.len();
        acts.values.resize_with(n + 1, Vec::new);
        acts.values[0].clear();
        acts.values[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.values.split_at_mut(l + 1);
            let out = &mut rest[0];
            layer.affine(&done[l], out);
            if l + 1 < n {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        Ok(())
    }

    /// Finishes a forward pass given the first layer's pre-activation.
    pub fn forward_from_first(&self, first_preactivation: &[f64]) -> [f64; N_ACTIONS] {
        let n = self.layers.len();
        let mut h = first_preactivation.to_vec();
        let mut next = Vec::new();
        for l in 0..n {
            if l > 0 {
                self.layers[l].affine(&h, &mut next);
                std::mem::swap(&mut h, &mut next);
            }
            if l + 1 < n {
                for v in h.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        [h[0], h[1]]
    }

    /// Accumulates `d loss / d params` into `grads`, given `d loss / d output`
    /// for the pass recorded in `acts`.
    pub fn backward(&self, acts: &Activations, output_grad: &[f64], grads: &mut MlpParams) {
        let mut delta = output_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts.values[l];
            let g = &mut grads.layers[l];
            axpy(1.0, &delta, &mut g.biases);
            for (i, &x) in input.iter().enumerate() {
                if x != 0.0 {
                    let n_out = g.n_out;
                    axpy(x, &delta, &mut g.weights[i * n_out..(i + 1) * n_out]);
                }
            }
            if l == 0 {
                break;
            }
            // Hidden activations are ReLU outputs: the derivative is 1 where positive.
            delta = input
                .iter()
                .enumerate()
                .map(|(i, &a)| if a > 0.0 { dot(layer.input_row(i), &delta) } else { 0.0 })
                .collect();
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// Visits parameter, gradient and two optimizer moments element-wise.
    pub fn zip_update<F>(&mut self, grads: &MlpParams, m: &mut MlpParams, v: &mut MlpParams, mut f: F)
    where
        F: FnMut(&mut f64, f64, &mut f64, &mut f64),
    {
        for (((p, g), m), v) in self.values_mut().zip(grads.values()).zip(m.values_mut()).zip(v.values_mut()) {
            f(p, *g, m, v);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    /// `self += alpha * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, other: &MlpParams, alpha: f64) {
        for (v, o) in self.values_mut().zip(other.values()) {
            *v += alpha * o;
        }
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("bad layer sizes {layer_sizes:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[5, 32, 32, 2]).unwrap();
        assert_eq!(p.forward(&[0.3, -1.0, 2.0, 0.0, 1.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn hand_linear_layer() {
        let layer = Dense::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0, 0.0]).unwrap();
        let p = MlpParams::from_layers(vec![layer]).unwrap();
        assert_eq!(p.forward(&[1.0, 1.0]).unwrap(), [3.0, 7.0]);
    }

    #[test]
    fn shape_errors() {
        let p = MlpParams::zeros(&[5, 8, 2]).unwrap();
        assert!(matches!(p.forward(&[0.0; 4]), Err(Error::Shape { expected: 5, actual: 4 })));
        assert!(MlpParams::zeros(&[5, 8, 3]).is_err());
        assert!(MlpParams::zeros(&[5]).is_err());
    }

    #[test]
    fn forward_is_repeatable_and_flat_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(&[6, 10, 7, 2], &mut rng).unwrap();
        let x = [0.1, -0.4, 0.0, 2.0, 0.5, -1.0];
        assert_eq!(p.forward(&x).unwrap(), p.forward(&x).unwrap());
        let mut q = p.zeros_like();
        q.set_flat_params(&p.flat_params()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.layer_sizes(), vec![6, 10, 7, 2]);
        assert_eq!(p.param_count(), 6 * 10 + 10 + 10 * 7 + 7 + 7 * 2 + 2);
    }

    #[test]
    fn flat_order_is_output_major() {
        let layer = Dense::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![5.0, 6.0]).unwrap();
        let p = MlpParams::from_layers(vec![layer]).unwrap();
        assert_eq!(p.flat_params(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
