//! Minimal dense neural-network substrate: multilayer perceptrons with ReLU
//! hidden layers and a softmax or linear head, exact reverse-mode gradients,
//! and a plain SGD step with optional momentum and gradient clipping. Double
//! precision throughout; matrix work delegated to ndarray.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Output head of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Linear,
}

/// Architecture of a multilayer perceptron: ReLU hidden layers, configurable
/// head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("all layer dimensions must be >= 1".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// One dense layer: weights `[out, in]` and bias `[out]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A multilayer perceptron with its parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.raw_dim()) })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(|x| x * x).sum::<f64>() + l.b.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }
}

/// Forward-pass cache: pre-activations and post-activations per layer.
pub struct ForwardCache {
    /// inputs to each layer (activations of the previous layer), plus the
    /// final output as the last entry
    activations: Vec<Array1<f64>>,
    /// pre-activation values per layer
    pre: Vec<Array1<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array1<f64> {
        self.activations.last().unwrap()
    }
}

/// Forward-pass cache for a batch of inputs; matrices are `[batch, dim]`.
pub struct BatchCache {
    activations: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e /= s;
    e
}

impl Mlp {
    /// He-uniform weight initialization with zero biases, seeded.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng: ChaCha8Rng = derived_rng(seed, &[0x4e4e]);
        let layers = spec
            .layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.random::<f64>() * 2.0 * bound - bound
                });
                Layer { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass with cached intermediates for the backward pass.
    pub fn forward_cached(&self, input: ArrayView1<f64>) -> Result<ForwardCache> {
        if input.len() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input length {} vs input_dim {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        activations.push(input.to_owned());
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.w.dot(activations.last().unwrap()) + &layer.b;
            let a = if li + 1 < n_layers {
                z.mapv(|v| v.max(0.0))
            } else {
                match self.spec.output_activation {
                    OutputActivation::Softmax => softmax(&z),
                    OutputActivation::Linear => z.clone(),
                }
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Forward pass returning the output only.
    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut cache = self.forward_cached(input)?;
        Ok(cache.activations.pop().unwrap())
    }

    /// Reverse-mode gradients of a scalar objective with upstream gradient
    /// `dl_doutput` = ∂L/∂output (after the head activation).
    ///
    /// For the softmax head the Jacobian is applied exactly:
    /// `dz = p ⊙ (g − (g·p))` with `p` the softmax output and `g` the
    /// upstream gradient.
    pub fn backward(&self, cache: &ForwardCache, dl_doutput: ArrayView1<f64>) -> Result<Gradients> {
        if dl_doutput.len() != self.spec.output_dim {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient length {} vs output_dim {}",
                dl_doutput.len(),
                self.spec.output_dim
            )));
        }
        let n_layers = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        // gradient w.r.t. the pre-activation of the output layer
        let mut dz: Array1<f64> = match self.spec.output_activation {
            OutputActivation::Linear => dl_doutput.to_owned(),
            OutputActivation::Softmax => {
                let p = cache.output();
                let dot = dl_doutput.dot(p);
                p * &(&dl_doutput.to_owned() - dot)
            }
        };
        for li in (0..n_layers).rev() {
            let a_in = &cache.activations[li];
            // accumulate parameter gradients: dW = dz ⊗ a_in, db = dz
            {
                let g = &mut grads.layers[li];
                let dz2 = dz.view().insert_axis(Axis(1));
                let a2 = a_in.view().insert_axis(Axis(0));
                g.w += &dz2.dot(&a2);
                g.b += &dz;
            }
            if li > 0 {
                let da = self.layers[li].w.t().dot(&dz);
                // ReLU derivative on the previous layer's pre-activation
                dz = &da * &cache.pre[li - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            }
        }
        Ok(grads)
    }

    /// Batched forward pass over rows of `inputs` (`[batch, input_dim]`),
    /// with cached intermediates. Row `i` of every matrix corresponds to
    /// sample `i`.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<BatchCache> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "batch input width {} vs input_dim {}",
                inputs.ncols(),
                self.spec.input_dim
            )));
        }
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        activations.push(inputs.clone());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = activations.last().unwrap().dot(&layer.w.t());
            z += &layer.b;
            let a = if li + 1 < n_layers {
                z.mapv(|v| v.max(0.0))
            } else {
                match self.spec.output_activation {
                    OutputActivation::Softmax => {
                        let mut p = z.clone();
                        for mut row in p.rows_mut() {
                            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                            row.mapv_inplace(|v| (v - m).exp());
                            let s = row.sum();
                            row /= s;
                        }
                        p
                    }
                    OutputActivation::Linear => z.clone(),
                }
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(BatchCache { activations, pre })
    }

    /// Reverse pass for a batch: `dl_doutput` is `[batch, output_dim]`
    /// (∂L/∂output per sample, after the head activation); returns parameter
    /// gradients summed over the batch.
    pub fn backward_batch(&self, cache: &BatchCache, dl_doutput: &Array2<f64>) -> Result<Gradients> {
        if dl_doutput.ncols() != self.spec.output_dim
            || dl_doutput.nrows() != cache.activations[0].nrows()
        {
            return Err(Error::ShapeMismatch("batch upstream gradient shape".into()));
        }
        let n_layers = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        let mut dz: Array2<f64> = match self.spec.output_activation {
            OutputActivation::Linear => dl_doutput.clone(),
            OutputActivation::Softmax => {
                let p = cache.output();
                let mut dz = dl_doutput * p;
                for (mut row, (g, pr)) in
                    dz.rows_mut().into_iter().zip(dl_doutput.rows().into_iter().zip(p.rows()))
                {
                    let dot = g.dot(&pr);
                    row.zip_mut_with(&pr, |d, &pv| *d -= dot * pv);
                }
                dz
            }
        };
        for li in (0..n_layers).rev() {
            let a_in = &cache.activations[li];
            {
                let g = &mut grads.layers[li];
                g.w += &dz.t().dot(a_in);
                g.b += &dz.sum_axis(Axis(0));
            }
            if li > 0 {
                let da = dz.dot(&self.layers[li].w);
                dz = &da * &cache.pre[li - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            }
        }
        Ok(grads)
    }

    /// One gradient-ascent step: `params += lr · grads`, with optional
    /// global-norm clipping applied to the gradient first.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, clip_norm: Option<f64>) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        let scale = match clip_norm {
            Some(c) => {
                let n = grads.norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.w.scaled_add(lr * scale, &g.w);
            layer.b.scaled_add(lr * scale, &g.b);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }
}

/// Momentum accumulator for optional heavy-ball SGD.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub beta: f64,
    velocity: Gradients,
}

impl Momentum {
    pub fn new(net: &Mlp, beta: f64) -> Self {
        Momentum { beta, velocity: Gradients::zeros_like(net) }
    }

    /// Folds the gradient into the velocity and returns a reference to it;
    /// the caller applies the returned direction with `sgd_step`.
    pub fn direction(&mut self, grads: &Gradients) -> &Gradients {
        self.velocity.scale(self.beta);
        self.velocity.add(grads);
        &self.velocity
    }
}

/// Adam accumulator (bias-corrected first and second moments) for
/// gradient-ascent steps.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    /// One ascent step `params += lr · m̂ / (√v̂ + ε)`; the optional
    /// global-norm clip applies to the raw gradient before the moment
    /// updates.
    pub fn step(
        &mut self,
        net: &mut Mlp,
        grads: &Gradients,
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        let scale = match clip_norm {
            Some(c) => {
                let n = grads.norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(&mut self.v.layers))
        {
            for ((w, &gw), (mw, vw)) in layer
                .w
                .iter_mut()
                .zip(g.w.iter())
                .zip(m.w.iter_mut().zip(v.w.iter_mut()))
            {
                let gw = gw * scale;
                *mw = self.beta1 * *mw + (1.0 - self.beta1) * gw;
                *vw = self.beta2 * *vw + (1.0 - self.beta2) * gw * gw;
                *w += lr * (*mw / c1) / ((*vw / c2).sqrt() + self.eps);
            }
            for ((b, &gb), (mb, vb)) in layer
                .b
                .iter_mut()
                .zip(g.b.iter())
                .zip(m.b.iter_mut().zip(v.b.iter_mut()))
            {
                let gb = gb * scale;
                *mb = self.beta1 * *mb + (1.0 - self.beta1) * gb;
                *vb = self.beta2 * *vb + (1.0 - self.beta2) * gb * gb;
                *b += lr * (*mb / c1) / ((*vb / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Gradient of `log softmax_output[class]` with respect to the network
/// output distribution, for use as the upstream gradient of [`Mlp::backward`]
/// on a softmax net: ∂ log p[class] / ∂ p = e_class / p[class].
pub fn log_prob_upstream(probs: &Array1<f64>, class: usize) -> Array1<f64> {
    let mut g = Array1::zeros(probs.len());
    g[class] = 1.0 / probs[class];
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn finite_difference_check(net: &Mlp, input: &Array1<f64>, upstream: &Array1<f64>) {
        // the objective is L(params) = upstream · output(params)
        let cache = net.forward_cached(input.view()).unwrap();
        let grads = net.backward(&cache, upstream.view()).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for li in 0..net.layers.len() {
            let shape = net.layers[li].w.raw_dim();
            for idx_flat in 0..net.layers[li].w.len() {
                let idx = (idx_flat / shape[1], idx_flat % shape[1]);
                let mut plus = net.clone();
                plus.layers[li].w[idx] += h;
                let mut minus = net.clone();
                minus.layers[li].w[idx] -= h;
                let lp = upstream.dot(plus.forward_cached(input.view()).unwrap().output());
                let lm = upstream.dot(minus.forward_cached(input.view()).unwrap().output());
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.layers[li].w[idx];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max((fd - an).abs() / denom);
            }
            for j in 0..net.layers[li].b.len() {
                let mut plus = net.clone();
                plus.layers[li].b[j] += h;
                let mut minus = net.clone();
                minus.layers[li].b[j] -= h;
                let lp = upstream.dot(plus.forward_cached(input.view()).unwrap().output());
                let lm = upstream.dot(minus.forward_cached(input.view()).unwrap().output());
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.layers[li].b[j];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max((fd - an).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn zero_weight_softmax_is_uniform() {
        let spec = MlpSpec {
            input_dim: 4,
            hidden: vec![5],
            output_dim: 3,
            output_activation: OutputActivation::Softmax,
        };
        let mut net = Mlp::init(spec, 0).unwrap();
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let out = net.forward_cached(array![1.0, -2.0, 0.5, 3.0].view()).unwrap();
        for &p in out.output() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_linear_net_passes_input_through() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![],
            output_dim: 3,
            output_activation: OutputActivation::Linear,
        };
        let mut net = Mlp::init(spec, 0).unwrap();
        net.layers[0].w = Array2::eye(3);
        net.layers[0].b.fill(0.0);
        let x = array![0.3, -1.2, 4.0];
        let cache = net.forward_cached(x.view()).unwrap();
        for (a, b) in cache.output().iter().zip(x.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn softmax_output_is_a_distribution() {
        let spec = MlpSpec {
            input_dim: 7,
            hidden: vec![11, 5],
            output_dim: 4,
            output_activation: OutputActivation::Softmax,
        };
        let net = Mlp::init(spec, 42).unwrap();
        let x = Array1::from_shape_fn(7, |i| (i as f64 - 3.0) * 0.7);
        let out = net.forward_cached(x.view()).unwrap();
        let sum: f64 = out.output().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(out.output().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn gradients_match_finite_differences_linear_head() {
        let spec = MlpSpec {
            input_dim: 4,
            hidden: vec![6, 5],
            output_dim: 1,
            output_activation: OutputActivation::Linear,
        };
        let net = Mlp::init(spec, 7).unwrap();
        let x = array![0.2, -0.4, 1.1, 0.05];
        finite_difference_check(&net, &x, &array![1.0]);
    }

    #[test]
    fn gradients_match_finite_differences_softmax_head() {
        let spec = MlpSpec {
            input_dim: 5,
            hidden: vec![8],
            output_dim: 3,
            output_activation: OutputActivation::Softmax,
        };
        let net = Mlp::init(spec, 13).unwrap();
        let x = array![0.9, -0.3, 0.1, 0.7, -1.4];
        // log-prob objective of class 1
        let cache = net.forward_cached(x.view()).unwrap();
        let upstream = log_prob_upstream(cache.output(), 1);
        finite_difference_check(&net, &x, &upstream);
    }

    #[test]
    fn gradient_checks_hold_for_experiment_architectures() {
        // the layer widths used by the actors and critic in the experiments
        for (hidden, out, act) in [
            (vec![100, 100], 3, OutputActivation::Softmax),
            (vec![150, 150], 3, OutputActivation::Softmax),
            (vec![200, 200], 1, OutputActivation::Linear),
            (vec![300, 300], 1, OutputActivation::Linear),
        ] {
            let spec = MlpSpec {
                input_dim: 6,
                hidden,
                output_dim: out,
                output_activation: act,
            };
            let net = Mlp::init(spec, 5).unwrap();
            let x = array![0.25, 0.5, 0.25, 0.0, 0.3, 1.0];
            // spot-check a subset of parameters for the big nets
            let cache = net.forward_cached(x.view()).unwrap();
            let upstream = match act {
                OutputActivation::Softmax => log_prob_upstream(cache.output(), 0),
                OutputActivation::Linear => Array1::ones(1),
            };
            let grads = net.backward(&cache, upstream.view()).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for li in 0..net.layers.len() {
                let cols = net.layers[li].w.raw_dim()[1];
                let len = net.layers[li].w.len();
                let stride = (len / 40).max(1);
                for flat in (0..len).step_by(stride) {
                    let idx = (flat / cols, flat % cols);
                    let mut plus = net.clone();
                    plus.layers[li].w[idx] += h;
                    let mut minus = net.clone();
                    minus.layers[li].w[idx] -= h;
                    let lp = upstream.dot(plus.forward_cached(x.view()).unwrap().output());
                    let lm = upstream.dot(minus.forward_cached(x.view()).unwrap().output());
                    let fd = (lp - lm) / (2.0 * h);
                    let an = grads.layers[li].w[idx];
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    worst = worst.max((fd - an).abs() / denom);
                }
            }
            assert!(worst < 1e-4, "worst relative error {worst}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![4],
            output_dim: 2,
            output_activation: OutputActivation::Softmax,
        };
        let net = Mlp::init(spec, 3).unwrap();
        let x = array![1.0, 2.0, 3.0];
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, array![0.0, 0.0].view()).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn log_softmax_gradient_at_uniform_output() {
        // log π gradient on the chosen class logit equals 1 − 1/K at uniform
        let spec = MlpSpec {
            input_dim: 2,
            hidden: vec![],
            output_dim: 4,
            output_activation: OutputActivation::Softmax,
        };
        let mut net = Mlp::init(spec, 0).unwrap();
        net.layers[0].w.fill(0.0);
        net.layers[0].b.fill(0.0);
        let x = array![1.0, 1.0];
        let cache = net.forward_cached(x.view()).unwrap();
        let upstream = log_prob_upstream(cache.output(), 2);
        let g = net.backward(&cache, upstream.view()).unwrap();
        // bias gradient on the output layer IS the logit gradient
        assert_relative_eq!(g.layers[0].b[2], 1.0 - 0.25, epsilon = 1e-12);
        for k in [0usize, 1, 3] {
            assert_relative_eq!(g.layers[0].b[k], -0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn sgd_step_moves_parameters_exactly() {
        let spec = MlpSpec {
            input_dim: 2,
            hidden: vec![],
            output_dim: 1,
            output_activation: OutputActivation::Linear,
        };
        let mut net = Mlp::init(spec, 1).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].w[(0, 0)] = 2.0;
        g.layers[0].b[0] = -1.0;
        net.sgd_step(&g, 1.0, None).unwrap();
        assert_relative_eq!(net.layers[0].w[(0, 0)], before.layers[0].w[(0, 0)] + 2.0);
        assert_relative_eq!(net.layers[0].b[0], before.layers[0].b[0] - 1.0);
        // zero gradient leaves parameters unchanged
        let snapshot = net.clone();
        net.sgd_step(&Gradients::zeros_like(&net), 0.5, None).unwrap();
        assert_eq!(net, snapshot);
        // NaN gradient is rejected
        let mut bad = Gradients::zeros_like(&net);
        bad.layers[0].b[0] = f64::NAN;
        assert!(net.sgd_step(&bad, 0.5, None).is_err());
    }

    #[test]
    fn ascent_converges_on_quadratic_toy() {
        // maximize L(w) = -(w - 3)^2 using a 1-parameter "network":
        // output = w·x with x = 1; dL/d output = -2(output - 3)
        let spec = MlpSpec {
            input_dim: 1,
            hidden: vec![],
            output_dim: 1,
            output_activation: OutputActivation::Linear,
        };
        let mut net = Mlp::init(spec, 9).unwrap();
        net.layers[0].b.fill(0.0);
        let x = array![1.0];
        for _ in 0..500 {
            let cache = net.forward_cached(x.view()).unwrap();
            let out = cache.output()[0];
            let upstream = array![-2.0 * (out - 3.0)];
            let g = net.backward(&cache, upstream.view()).unwrap();
            net.sgd_step(&g, 0.1, None).unwrap();
        }
        let out = net.forward_cached(x.view()).unwrap().output()[0];
        assert_relative_eq!(out, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn clipping_bounds_the_applied_step() {
        let spec = MlpSpec {
            input_dim: 1,
            hidden: vec![],
            output_dim: 1,
            output_activation: OutputActivation::Linear,
        };
        let mut net = Mlp::init(spec, 2).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].w[(0, 0)] = 300.0;
        g.layers[0].b[0] = 400.0; // norm 500
        net.sgd_step(&g, 1.0, Some(5.0)).unwrap();
        let dw = net.layers[0].w[(0, 0)] - before.layers[0].w[(0, 0)];
        let db = net.layers[0].b[0] - before.layers[0].b[0];
        assert_relative_eq!((dw * dw + db * db).sqrt(), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![10, 10],
            output_dim: 2,
            output_activation: OutputActivation::Softmax,
        };
        let a = Mlp::init(spec.clone(), 77).unwrap();
        let b = Mlp::init(spec, 77).unwrap();
        assert_eq!(a, b);
        let x = array![0.1, 0.2, 0.3];
        assert_eq!(
            a.forward_cached(x.view()).unwrap().output(),
            b.forward_cached(x.view()).unwrap().output()
        );
    }

    #[test]
    fn batch_pass_matches_per_sample_pass() {
        for act in [OutputActivation::Softmax, OutputActivation::Linear] {
            let spec = MlpSpec {
                input_dim: 5,
                hidden: vec![7, 6],
                output_dim: 3,
                output_activation: act,
            };
            let net = Mlp::init(spec, 21).unwrap();
            let batch = 4;
            let inputs =
                Array2::from_shape_fn((batch, 5), |(i, j)| ((i * 5 + j) as f64).sin());
            let upstream =
                Array2::from_shape_fn((batch, 3), |(i, j)| ((i + 2 * j) as f64).cos());
            let bcache = net.forward_batch(&inputs).unwrap();
            let bgrads = net.backward_batch(&bcache, &upstream).unwrap();
            let mut sum = Gradients::zeros_like(&net);
            for i in 0..batch {
                let cache = net.forward_cached(inputs.row(i)).unwrap();
                for (a, b) in bcache.output().row(i).iter().zip(cache.output().iter()) {
                    assert_relative_eq!(a, b, epsilon = 1e-12);
                }
                let g = net.backward(&cache, upstream.row(i)).unwrap();
                sum.add(&g);
            }
            for (a, b) in bgrads.layers.iter().zip(&sum.layers) {
                for (x, y) in a.w.iter().zip(b.w.iter()) {
                    assert_relative_eq!(x, y, epsilon = 1e-10);
                }
                for (x, y) in a.b.iter().zip(b.b.iter()) {
                    assert_relative_eq!(x, y, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let spec = MlpSpec {
            input_dim: 1,
            hidden: vec![],
            output_dim: 1,
            output_activation: OutputActivation::Linear,
        };
        let net = Mlp::init(spec, 4).unwrap();
        let mut mom = Momentum::new(&net, 0.5);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].b[0] = 1.0;
        let d1 = mom.direction(&g).layers[0].b[0];
        assert_relative_eq!(d1, 1.0);
        let d2 = mom.direction(&g).layers[0].b[0];
        assert_relative_eq!(d2, 1.5);
    }

    #[test]
    fn adam_first_step_has_unit_scale_and_converges() {
        let spec = MlpSpec {
            input_dim: 1,
            hidden: vec![],
            output_dim: 1,
            output_activation: OutputActivation::Linear,
        };
        let mut net = Mlp::init(spec, 9).unwrap();
        let mut adam = Adam::new(&net);
        // first step moves by exactly lr·sign(g) regardless of magnitude
        let before = net.layers[0].b[0];
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].b[0] = 1e-3;
        adam.step(&mut net, &g, 0.1, None).unwrap();
        assert_relative_eq!(net.layers[0].b[0] - before, 0.1, epsilon = 1e-6);

        // ascent on -(out(2.0) - 5)^2 / 2 drives the output to the target
        let x = array![2.0];
        let mut adam = Adam::new(&net);
        for _ in 0..2_000 {
            let cache = net.forward_cached(x.view()).unwrap();
            let upstream = array![5.0 - cache.output()[0]];
            let g = net.backward(&cache, upstream.view()).unwrap();
            adam.step(&mut net, &g, 0.01, None).unwrap();
        }
        assert_relative_eq!(net.forward(x.view()).unwrap()[0], 5.0, epsilon = 1e-3);
    }
}
