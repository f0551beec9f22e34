//! Executor for sequential networks: parameter storage, inference and
//! training forward passes, and backpropagation producing per-parameter
//! gradients aligned with the parameter list.

use super::{LayerSpec, NetworkSpec, NnError};
use crate::tensor::{self, ConvKernel, Tensor};
use rand::Rng;

/// Learnable state of one layer.
#[derive(Debug, Clone, PartialEq)]
enum LayerParams {
    Conv(ConvKernel),
    Dense { weights: Tensor, bias: Tensor },
    None,
}

/// A network spec bound to concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
}

/// Per-layer context captured by a training forward pass, consumed by
/// [`Network::backward`].
pub struct Trace {
    /// Input to each layer, in order.
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    output: Tensor,
}

enum Aux {
    None,
    Pool(Vec<u32>),
    Mask { mask: Vec<bool>, rate: f32 },
    Softmax(Tensor),
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Gradients for every parameter tensor of a network, in
/// [`Network::param_tensors`] order (weights then bias per parametric layer).
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(
            net.param_tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        )
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f32) {
        assert_eq!(self.0.len(), other.0.len(), "gradient arity mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (av, &bv) in a.data_mut().iter_mut().zip(b.data()) {
                *av += bv * scale;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for t in &mut self.0 {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    /// Euclidean norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

impl Network {
    /// Initialize parameters with Glorot-uniform weights and zero biases.
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Self, NnError> {
        let shapes = spec.output_shapes()?; // validates the chain
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut input_shape = spec.input_shape.clone();
        for (layer, out_shape) in spec.layers.iter().zip(&shapes) {
            params.push(match layer {
                LayerSpec::Conv { kh, kw, out_channels } => {
                    let cin = input_shape[2];
                    let fan_in = kh * kw * cin;
                    let fan_out = kh * kw * out_channels;
                    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                    let weights = Tensor::from_fn(&[*kh, *kw, cin, *out_channels], |_| {
                        (rng.random::<f32>() * 2.0 - 1.0) * limit
                    });
                    LayerParams::Conv(ConvKernel::new(weights, Tensor::zeros(&[*out_channels]))?)
                }
                LayerSpec::Dense { units } => {
                    let fan_in = input_shape[0];
                    let limit = (6.0 / (fan_in + units) as f32).sqrt();
                    let weights = Tensor::from_fn(&[fan_in, *units], |_| {
                        (rng.random::<f32>() * 2.0 - 1.0) * limit
                    });
                    LayerParams::Dense {
                        weights,
                        bias: Tensor::zeros(&[*units]),
                    }
                }
                _ => LayerParams::None,
            });
            input_shape = out_shape.clone();
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// All parameter tensors in layer order, weights before bias.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for p in &self.params {
            match p {
                LayerParams::Conv(k) => {
                    out.push(&k.weights);
                    out.push(&k.bias);
                }
                LayerParams::Dense { weights, bias } => {
                    out.push(weights);
                    out.push(bias);
                }
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for p in &mut self.params {
            match p {
                LayerParams::Conv(k) => {
                    out.push(&mut k.weights);
                    out.push(&mut k.bias);
                }
                LayerParams::Dense { weights, bias } => {
                    out.push(weights);
                    out.push(bias);
                }
                LayerParams::None => {}
            }
        }
        out
    }

    /// Stable names for the parameter tensors, aligned with
    /// [`Network::param_tensors`]; used by the weight container.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            let kind = match p {
                LayerParams::Conv(_) => "conv",
                LayerParams::Dense { .. } => "dense",
                LayerParams::None => continue,
            };
            out.push(format!("layer{i:02}.{kind}.weights"));
            out.push(format!("layer{i:02}.{kind}.bias"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// Inference forward pass: dropout is the identity.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut rng = NoRng;
        let (out, _) = self.run(input, false, &mut rng, false)?;
        Ok(out)
    }

    /// Training forward pass: applies dropout using `rng` and records the
    /// per-layer context needed by [`Network::backward`].
    pub fn forward_trace<R: Rng>(&self, input: &Tensor, rng: &mut R) -> Result<Trace, NnError> {
        let (_, trace) = self.run(input, true, rng, true)?;
        Ok(trace.expect("trace requested"))
    }

    /// Forward pass that records a trace but keeps dropout inactive; used by
    /// gradient checking so the sampled subnetwork is deterministic.
    pub fn forward_trace_eval(&self, input: &Tensor) -> Result<Trace, NnError> {
        let mut rng = NoRng;
        let (_, trace) = self.run(input, false, &mut rng, true)?;
        Ok(trace.expect("trace requested"))
    }

    fn run<R: Rng>(
        &self,
        input: &Tensor,
        training: bool,
        rng: &mut R,
        keep_trace: bool,
    ) -> Result<(Tensor, Option<Trace>), NnError> {
        if input.shape() != self.spec.input_shape {
            return Err(NnError::ShapeInference {
                index: 0,
                layer: "input".into(),
                detail: format!(
                    "got {:?}, network expects {:?}",
                    input.shape(),
                    self.spec.input_shape
                ),
            });
        }
        let mut inputs = Vec::new();
        let mut aux = Vec::new();
        let mut cur = input.clone();
        for (layer, params) in self.spec.layers.iter().zip(&self.params) {
            if keep_trace {
                inputs.push(cur.clone());
            }
            let (next, a) = match (layer, params) {
                (LayerSpec::Conv { .. }, LayerParams::Conv(k)) => {
                    (tensor::conv2d(&cur, k)?, Aux::None)
                }
                (LayerSpec::MaxPool2, _) => {
                    let (o, idx) = tensor::maxpool2(&cur)?;
                    (o, Aux::Pool(idx))
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let (o, mask) = tensor::dropout(&cur, *rate, rng, training)?;
                    (o, Aux::Mask { mask, rate: *rate })
                }
                (LayerSpec::Flatten, _) => (tensor::flatten(&cur), Aux::None),
                (LayerSpec::Dense { .. }, LayerParams::Dense { weights, bias }) => {
                    (tensor::dense(&cur, weights, bias)?, Aux::None)
                }
                (LayerSpec::Relu, _) => (tensor::relu(&cur), Aux::None),
                (LayerSpec::Softmax, _) => {
                    let o = tensor::softmax(&cur)?;
                    let a = Aux::Softmax(o.clone());
                    (o, a)
                }
                (LayerSpec::GlobalAvgPool, _) => (tensor::global_avg_pool(&cur)?, Aux::None),
                (l, _) => unreachable!("layer/params mismatch at {}", l.name()),
            };
            if keep_trace {
                aux.push(a);
            }
            cur = next;
        }
        let trace = keep_trace.then(|| Trace {
            inputs,
            aux,
            output: cur.clone(),
        });
        Ok((cur, trace))
    }

    /// Backpropagate `grad_output` through a recorded trace. Returns the
    /// gradient with respect to the network input together with parameter
    /// gradients aligned with [`Network::param_tensors`].
    pub fn backward(&self, trace: &Trace, grad_output: &Tensor) -> Result<(Tensor, Gradients), NnError> {
        let mut grads_rev: Vec<Tensor> = Vec::new();
        let mut g = grad_output.clone();
        for idx in (0..self.spec.layers.len()).rev() {
            let layer = &self.spec.layers[idx];
            let input = &trace.inputs[idx];
            let aux = &trace.aux[idx];
            g = match (layer, &self.params[idx], aux) {
                (LayerSpec::Conv { .. }, LayerParams::Conv(k), _) => {
                    let (gi, gw, gb) = tensor::conv2d_backward(input, k, &g)?;
                    grads_rev.push(gb);
                    grads_rev.push(gw);
                    gi
                }
                (LayerSpec::MaxPool2, _, Aux::Pool(idxs)) => {
                    tensor::maxpool2_backward(input.shape(), idxs, &g)
                }
                (LayerSpec::Dropout { .. }, _, Aux::Mask { mask, rate }) => {
                    tensor::dropout_backward(mask, *rate, &g)
                }
                (LayerSpec::Flatten, _, _) => g.reshaped(input.shape())?,
                (LayerSpec::Dense { .. }, LayerParams::Dense { weights, .. }, _) => {
                    let (gi, gw, gb) = tensor::dense_backward(input, weights, &g)?;
                    grads_rev.push(gb);
                    grads_rev.push(gw);
                    gi
                }
                (LayerSpec::Relu, _, _) => tensor::relu_backward(input, &g),
                (LayerSpec::Softmax, _, Aux::Softmax(y)) => tensor::softmax_backward(y, &g),
                (LayerSpec::GlobalAvgPool, _, _) => {
                    tensor::global_avg_pool_backward(input.shape(), &g)
                }
                (l, _, _) => unreachable!("layer/aux mismatch at {}", l.name()),
            };
        }
        grads_rev.reverse();
        Ok((g, Gradients(grads_rev)))
    }
}

/// Panicking RNG stand-in for inference paths; dropout never samples when
/// `training` is false, so it must never be called.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("randomness requested on an inference path")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("randomness requested on an inference path")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("randomness requested on an inference path")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{conv2x2, ocr_spec, NetworkSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ocr_forward_shapes_and_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(ocr_spec(60), &mut rng).unwrap();
        assert_eq!(net.param_count(), 80 + 2080 + 8256 + 32896 + 131328 + 65792 + 131584 + 30780);
        let input = Tensor::from_fn(&[64, 64, 1], |i| ((i % 97) as f32) / 96.0);
        let out = net.forward(&input).unwrap();
        assert_eq!(out.shape(), &[60]);
        let sum: f32 = out.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "softmax sum {sum}");
        assert!(out.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(ocr_spec(10), &mut rng).unwrap();
        let input = Tensor::zeros(&[32, 32, 1]);
        assert!(net.forward(&input).is_err());
    }

    #[test]
    fn init_is_seed_reproducible() {
        let mk = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Network::init(ocr_spec(10), &mut rng).unwrap()
        };
        assert_eq!(mk(5), mk(5));
        assert_ne!(mk(5), mk(6));
    }

    #[test]
    fn trace_backward_matches_loss_decrease() {
        // One SGD step along the analytic gradient must reduce the loss.
        let spec = NetworkSpec::new(
            "toy",
            vec![6, 6, 1],
            vec![
                conv2x2(4),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 5 },
                LayerSpec::Softmax,
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::init(spec, &mut rng).unwrap();
        let input = Tensor::from_fn(&[6, 6, 1], |i| (i as f32 / 35.0) - 0.5);
        let target = 2usize;

        let before = {
            let trace = net.forward_trace_eval(&input).unwrap();
            crate::nn::cross_entropy(trace.output(), target)
        };
        let trace = net.forward_trace_eval(&input).unwrap();
        let grad = crate::nn::cross_entropy_grad(trace.output(), target);
        let (_, grads) = net.backward(&trace, &grad).unwrap();
        let lr = 0.1f32;
        for (p, g) in net.param_tensors_mut().into_iter().zip(&grads.0) {
            for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
        let after = {
            let trace = net.forward_trace_eval(&input).unwrap();
            crate::nn::cross_entropy(trace.output(), target)
        };
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn backward_grad_count_matches_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::init(ocr_spec(10), &mut rng).unwrap();
        let input = Tensor::filled(&[64, 64, 1], 0.3);
        let trace = net.forward_trace_eval(&input).unwrap();
        let grad = crate::nn::cross_entropy_grad(trace.output(), 0);
        let (gi, grads) = net.backward(&trace, &grad).unwrap();
        assert_eq!(gi.shape(), &[64, 64, 1]);
        assert_eq!(grads.0.len(), net.param_tensors().len());
        for (g, p) in grads.0.iter().zip(net.param_tensors()) {
            assert_eq!(g.shape(), p.shape());
        }
    }

    #[test]
    fn dropout_trace_respects_seed() {
        let spec = NetworkSpec::new(
            "drop",
            vec![10],
            vec![LayerSpec::Dropout { rate: 0.5 }, LayerSpec::Dense { units: 3 }],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::init(spec, &mut rng).unwrap();
        let input = Tensor::filled(&[10], 1.0);
        let out1 = {
            let mut r = ChaCha8Rng::seed_from_u64(11);
            net.forward_trace(&input, &mut r).unwrap().output().clone()
        };
        let out2 = {
            let mut r = ChaCha8Rng::seed_from_u64(11);
            net.forward_trace(&input, &mut r).unwrap().output().clone()
        };
        assert_eq!(out1, out2);
        // Inference ignores dropout entirely.
        let inf = net.forward(&input).unwrap();
        assert_eq!(inf.shape(), &[3]);
    }

    #[test]
    fn gradients_accumulate_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::init(
            NetworkSpec::new("d", vec![4], vec![LayerSpec::Dense { units: 2 }]),
            &mut rng,
        )
        .unwrap();
        let mut acc = Gradients::zeros_like(&net);
        let mut ones = Gradients::zeros_like(&net);
        for t in &mut ones.0 {
            for v in t.data_mut() {
                *v = 1.0;
            }
        }
        acc.add_scaled(&ones, 0.5);
        acc.add_scaled(&ones, 0.25);
        assert!(acc.0[0].data().iter().all(|&v| (v - 0.75).abs() < 1e-6));
        acc.scale(2.0);
        assert!(acc.0[0].data().iter().all(|&v| (v - 1.5).abs() < 1e-6));
        assert!(acc.norm() > 0.0);
    }
}
