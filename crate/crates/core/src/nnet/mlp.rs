use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths from input to output; ReLU on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    layer_sizes: Vec<usize>,
}

impl Arch {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::ShapeMismatch(format!(
                "need input, at least one hidden and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::ShapeMismatch(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(Self { layer_sizes })
    }

    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }
}

/// Affine layer, weight stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Gradients (or any other per-parameter quantity) shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn dot(&self, other: &Grads) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| (&a.weight * &b.weight).sum() + a.bias.dot(&b.bias))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

/// Dense ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Intermediate values kept by a batched forward pass.
struct Tape {
    /// Inputs to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization of weights and biases.
    pub fn new<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Self {
        let layers = arch
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::from_shape_simple_fn(fan_out, || dist.sample(rng)),
                }
            })
            .collect();
        Self { layers }
    }

    /// Builds a network from explicit layers; any depth ≥ 1 is accepted.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network without layers".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::ShapeMismatch("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite()))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        Grads {
            layers: self.layers.clone(),
        }
        .to_flat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().expect("sized"));
            l.bias.iter_mut().for_each(|b| *b = *it.next().expect("sized"));
        }
        Ok(())
    }

    /// `self += scale · delta`.
    pub fn add_scaled(&mut self, delta: &Grads, scale: f64) {
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            l.weight.scaled_add(scale, &d.weight);
            l.bias.scaled_add(scale, &d.bias);
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn check_batch(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network takes {}",
                x.ncols(),
                self.input_size()
            )));
        }
        Ok(())
    }

    fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Tape {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight.t());
            z += &l.bias;
            if i != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(a);
            a = z;
        }
        Tape { inputs, output: a }
    }

    /// Row-wise forward pass over a `batch × input` matrix.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight.t());
            z += &l.bias;
            if i != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.forward_batch(view)?.into_raw_vec())
    }

    /// Reverse-mode pass for `Σ_rows upstreamᵀ · output`.
    ///
    /// Returns the batch output, the summed parameter gradients and the
    /// per-row input gradients.
    pub fn backward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Grads, Array2<f64>)> {
        self.check_batch(&x)?;
        if upstream.nrows() != x.nrows() || upstream.ncols() != self.output_size() {
            return Err(Error::ShapeMismatch(format!(
                "upstream is {}×{}, expected {}×{}",
                upstream.nrows(),
                upstream.ncols(),
                x.nrows(),
                self.output_size()
            )));
        }
        let tape = self.forward_tape(x);
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a = &tape.inputs[i];
            let gw = delta.t().dot(a);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense {
                weight: gw,
                bias: gb,
            });
            let mut next = delta.dot(&l.weight);
            if i > 0 {
                // `a` is the ReLU output of layer i-1; zero where inactive.
                ndarray::Zip::from(&mut next).and(a).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = next;
        }
        grads.reverse();
        Ok((tape.output, Grads { layers: grads }, delta))
    }

    /// Gradients of `upstreamᵀ · f(x)` with respect to parameters and input.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<(Grads, Vec<f64>)> {
        let xv = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let uv = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let (_, g, dx) = self.backward_batch(xv, uv)?;
        Ok((g, dx.into_raw_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arch_requires_hidden_layer() {
        assert!(Arch::new(vec![3, 1]).is_err());
        assert!(Arch::new(vec![3, 0, 1]).is_err());
        assert!(Arch::new(vec![3, 4, 1]).is_ok());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = Arch::new(vec![3, 5, 2]).unwrap();
        let mut net = Mlp::new(&arch, &mut ChaCha8Rng::seed_from_u64(0));
        let n = net.num_params();
        net.set_params_flat(&vec![0.0; n]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let net = Mlp::from_layers(vec![Dense {
            weight: array![[2.0]],
            bias: array![1.0],
        }])
        .unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn relu_blocks_negative_preactivation() {
        let net = Mlp::from_layers(vec![
            Dense {
                weight: array![[1.0]],
                bias: array![0.0],
            },
            Dense {
                weight: array![[5.0]],
                bias: array![0.5],
            },
        ])
        .unwrap();
        assert_eq!(net.forward(&[-1.0]).unwrap(), vec![0.5]);
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![5.5]);
    }

    #[test]
    fn shape_mismatch_reported() {
        let arch = Arch::new(vec![3, 4, 1]).unwrap();
        let net = Mlp::new(&arch, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(net.grad(&[1.0, 2.0, 3.0], &[1.0, 1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let arch = Arch::new(vec![3, 4, 2]).unwrap();
        let net = Mlp::new(&arch, &mut ChaCha8Rng::seed_from_u64(1));
        let (g, dx) = net.grad(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_input_grad_is_transpose() {
        let net = Mlp::from_layers(vec![Dense {
            weight: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            bias: array![0.0, 0.0, 0.0],
        }])
        .unwrap();
        let (_, dx) = net.grad(&[0.1, 0.2], &[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(dx, vec![1.0 - 3.0 + 10.0, 2.0 - 4.0 + 12.0]);
    }

    #[test]
    fn batch_grads_sum_rows() {
        let arch = Arch::new(vec![2, 6, 1]).unwrap();
        let net = Mlp::new(&arch, &mut ChaCha8Rng::seed_from_u64(2));
        let xs = array![[0.3, 0.1], [-0.4, 0.8]];
        let up = array![[1.0], [2.0]];
        let (_, g, _) = net.backward_batch(xs.view(), up.view()).unwrap();
        let (mut g0, _) = net.grad(&[0.3, 0.1], &[1.0]).unwrap();
        let (g1, _) = net.grad(&[-0.4, 0.8], &[2.0]).unwrap();
        g0.add_assign(&g1);
        assert!(g0.to_flat().iter().zip(g.to_flat()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
