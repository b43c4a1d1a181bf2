//! Minimal dense-network kernel: forward, exact reverse-mode backward
//! (parameters and input), Adam. Everything is f64 so finite-difference
//! checks at 1e-4 are meaningful.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Logistic,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative at pre-activation z.
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// One dense layer; weights are out x in, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: self.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub hidden_act: Activation,
    pub output_act: Activation,
}

/// Pre-activations and layer inputs from a forward pass, needed by backward.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Parameter gradients plus the gradient with respect to the network input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub input: Vec<f64>,
}

impl Network {
    pub fn input_width(&self) -> usize {
        self.layers[0].weights[0].len()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("nonempty").bias.len()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            input: vec![0.0; self.input_width()],
        }
    }
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_network(
    layer_sizes: &[usize],
    hidden_act: Activation,
    output_act: Activation,
    seed: u64,
) -> Result<Network> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config("need at least input and output sizes".into()));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config("zero-width layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_out)
            .map(|_| (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect())
            .collect();
        layers.push(Layer {
            weights,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(Network {
        layers,
        hidden_act,
        output_act,
    })
}

pub fn forward(net: &Network, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if input.len() != net.input_width() {
        return Err(Error::Dimension {
            expected: net.input_width(),
            got: input.len(),
        });
    }
    let n_layers = net.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    let mut a = input.to_vec();
    for (li, layer) in net.layers.iter().enumerate() {
        let act = if li + 1 == n_layers { net.output_act } else { net.hidden_act };
        let mut z = layer.bias.clone();
        for (o, row) in layer.weights.iter().enumerate() {
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(&a) {
                acc += w * x;
            }
            z[o] += acc;
        }
        inputs.push(a);
        a = z.iter().map(|&v| act.apply(v)).collect();
        preacts.push(z);
    }
    Ok((a, ForwardCache { inputs, preacts }))
}

/// Reverse-mode gradients of `output . output_gradient` with respect to all
/// parameters and the input.
pub fn backward(net: &Network, cache: &ForwardCache, output_gradient: &[f64]) -> Result<Gradients> {
    let n_layers = net.layers.len();
    if cache.preacts.len() != n_layers || output_gradient.len() != net.output_width() {
        return Err(Error::Dimension {
            expected: net.output_width(),
            got: output_gradient.len(),
        });
    }
    let mut grads = net.zero_gradients();
    // delta = dL/dz for the current layer
    let mut delta: Vec<f64> = Vec::new();
    for li in (0..n_layers).rev() {
        let act = if li + 1 == n_layers { net.output_act } else { net.hidden_act };
        let z = &cache.preacts[li];
        let upstream: &[f64] = if li + 1 == n_layers { output_gradient } else { &delta };
        if upstream.len() != z.len() {
            return Err(Error::Dimension {
                expected: z.len(),
                got: upstream.len(),
            });
        }
        let dz: Vec<f64> = upstream
            .iter()
            .zip(z)
            .map(|(g, &zz)| g * act.grad(zz))
            .collect();

        let a_in = &cache.inputs[li];
        let layer = &net.layers[li];
        if a_in.len() != layer.weights[0].len() {
            return Err(Error::Dimension {
                expected: layer.weights[0].len(),
                got: a_in.len(),
            });
        }
        let g = &mut grads.layers[li];
        for (o, &d) in dz.iter().enumerate() {
            g.bias[o] += d;
            for (i, &x) in a_in.iter().enumerate() {
                g.weights[o][i] += d * x;
            }
        }
        // propagate to the layer input
        let mut next = vec![0.0; a_in.len()];
        for (o, &d) in dz.iter().enumerate() {
            for (i, &w) in layer.weights[o].iter().enumerate() {
                next[i] += d * w;
            }
        }
        delta = next;
    }
    grads.input = delta;
    Ok(grads)
}

/// In-place gradient accumulation: `into += g`.
pub fn accumulate(into: &mut Gradients, g: &Gradients) {
    for (a, b) in into.layers.iter_mut().zip(&g.layers) {
        for (ra, rb) in a.weights.iter_mut().zip(&b.weights) {
            for (x, y) in ra.iter_mut().zip(rb) {
                *x += y;
            }
        }
        for (x, y) in a.bias.iter_mut().zip(&b.bias) {
            *x += y;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> AdamState {
        AdamState {
            m: net.layers.iter().map(Layer::zeros_like).collect(),
            v: net.layers.iter().map(Layer::zeros_like).collect(),
            t: 0,
        }
    }
}

pub fn adam_step(
    net: &mut Network,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Dimension {
            expected: net.layers.len(),
            got: grads.layers.len(),
        });
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        if g.bias.len() != layer.bias.len() || g.weights.len() != layer.weights.len() {
            return Err(Error::Dimension {
                expected: layer.bias.len(),
                got: g.bias.len(),
            });
        }
        let m = &mut state.m[li];
        let v = &mut state.v[li];
        for o in 0..layer.bias.len() {
            for i in 0..layer.weights[o].len() {
                let gr = g.weights[o][i];
                m.weights[o][i] = beta1 * m.weights[o][i] + (1.0 - beta1) * gr;
                v.weights[o][i] = beta2 * v.weights[o][i] + (1.0 - beta2) * gr * gr;
                let mh = m.weights[o][i] / c1;
                let vh = v.weights[o][i] / c2;
                layer.weights[o][i] -= lr * mh / (vh.sqrt() + eps);
            }
            let gr = g.bias[o];
            m.bias[o] = beta1 * m.bias[o] + (1.0 - beta1) * gr;
            v.bias[o] = beta2 * v.bias[o] + (1.0 - beta2) * gr * gr;
            let mh = m.bias[o] / c1;
            let vh = v.bias[o] / c2;
            layer.bias[o] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_bound() {
        let net = init_network(&[4, 8, 3], Activation::Relu, Activation::Linear, 1).unwrap();
        assert_eq!(net.layers.len(), 2);
        assert_eq!(net.layers[0].weights.len(), 8);
        assert_eq!(net.layers[0].weights[0].len(), 4);
        assert_eq!(net.layers[1].weights.len(), 3);
        let bound = (6.0 / 12.0_f64).sqrt();
        for row in &net.layers[0].weights {
            for w in row {
                assert!(w.abs() <= bound);
            }
        }
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn init_deterministic() {
        let a = init_network(&[3, 5, 2], Activation::Relu, Activation::Linear, 9).unwrap();
        let b = init_network(&[3, 5, 2], Activation::Relu, Activation::Linear, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_zero_width() {
        assert!(init_network(&[3, 0, 2], Activation::Relu, Activation::Linear, 0).is_err());
        assert!(init_network(&[3], Activation::Relu, Activation::Linear, 0).is_err());
    }

    #[test]
    fn forward_zero_net() {
        let mut net = init_network(&[2, 3], Activation::Relu, Activation::Linear, 0).unwrap();
        for row in &mut net.layers[0].weights {
            row.fill(0.0);
        }
        let (out, _) = forward(&net, &[1.0, -2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_affine_1x1() {
        let net = Network {
            layers: vec![Layer { weights: vec![vec![2.0]], bias: vec![1.0] }],
            hidden_act: Activation::Relu,
            output_act: Activation::Linear,
        };
        let (out, _) = forward(&net, &[3.0]).unwrap();
        assert_eq!(out, vec![7.0]);
    }

    #[test]
    fn logistic_at_zero_is_half() {
        let net = Network {
            layers: vec![Layer { weights: vec![vec![0.0]], bias: vec![0.0] }],
            hidden_act: Activation::Relu,
            output_act: Activation::Logistic,
        };
        let (out, _) = forward(&net, &[5.0]).unwrap();
        assert_eq!(out, vec![0.5]);
    }

    #[test]
    fn backward_linear_net_matches_analytic() {
        let net = Network {
            layers: vec![Layer { weights: vec![vec![0.7]], bias: vec![0.1] }],
            hidden_act: Activation::Relu,
            output_act: Activation::Linear,
        };
        let (_, cache) = forward(&net, &[3.0]).unwrap();
        let g = backward(&net, &cache, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights[0][0], 3.0); // dL/dw = x
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(g.input[0], 0.7); // dL/dx = w
    }

    #[test]
    fn backward_zero_gradient() {
        let net = init_network(&[3, 4, 2], Activation::Relu, Activation::Linear, 3).unwrap();
        let (_, cache) = forward(&net, &[0.5, -0.5, 0.25]).unwrap();
        let g = backward(&net, &cache, &[0.0, 0.0]).unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().flatten().all(|w| *w == 0.0)));
        assert!(g.input.iter().all(|v| *v == 0.0));
    }

    /// Central finite differences over every parameter and input component.
    fn finite_diff_check(sizes: &[usize], output_act: Activation, seed: u64) -> f64 {
        let net = init_network(sizes, Activation::Relu, output_act, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out_grad: Vec<f64> = (0..*sizes.last().unwrap())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss = |n: &Network, x: &[f64]| -> f64 {
            let (out, _) = forward(n, x).unwrap();
            out.iter().zip(&out_grad).map(|(o, g)| o * g).sum()
        };
        let (_, cache) = forward(&net, &input).unwrap();
        let analytic = backward(&net, &cache, &out_grad).unwrap();

        let h = 1e-6;
        let mut max_rel = 0.0_f64;
        let mut check = |a: f64, n: f64| {
            let denom = a.abs().max(n.abs()).max(1e-8);
            max_rel = max_rel.max((a - n).abs() / denom);
        };
        for li in 0..net.layers.len() {
            for o in 0..net.layers[li].bias.len() {
                for i in 0..net.layers[li].weights[o].len() {
                    let mut plus = net.clone();
                    plus.layers[li].weights[o][i] += h;
                    let mut minus = net.clone();
                    minus.layers[li].weights[o][i] -= h;
                    let num = (loss(&plus, &input) - loss(&minus, &input)) / (2.0 * h);
                    check(analytic.layers[li].weights[o][i], num);
                }
                let mut plus = net.clone();
                plus.layers[li].bias[o] += h;
                let mut minus = net.clone();
                minus.layers[li].bias[o] -= h;
                let num = (loss(&plus, &input) - loss(&minus, &input)) / (2.0 * h);
                check(analytic.layers[li].bias[o], num);
            }
        }
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let num = (loss(&net, &plus) - loss(&net, &minus)) / (2.0 * h);
            check(analytic.input[i], num);
        }
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let e = finite_diff_check(&[5, 8, 4], Activation::Linear, seed);
            assert!(e < 1e-4, "seed {seed}: rel error {e}");
            let e = finite_diff_check(&[4, 6, 3], Activation::Logistic, seed);
            assert!(e < 1e-4, "seed {seed} logistic: rel error {e}");
        }
    }

    #[test]
    fn adam_zero_gradient_no_change() {
        let mut net = init_network(&[2, 3, 1], Activation::Relu, Activation::Linear, 5).unwrap();
        let before = net.clone();
        let g = net.zero_gradients();
        let mut st = AdamState::new(&net);
        adam_step(&mut net, &g, &mut st, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_constant_gradient_limit() {
        // with a constant gradient the step magnitude tends to lr
        let mut net = Network {
            layers: vec![Layer { weights: vec![vec![0.0]], bias: vec![0.0] }],
            hidden_act: Activation::Relu,
            output_act: Activation::Linear,
        };
        let mut g = net.zero_gradients();
        g.layers[0].weights[0][0] = 0.3;
        let mut st = AdamState::new(&net);
        let lr = 1e-3;
        let mut prev = net.layers[0].weights[0][0];
        for _ in 0..500 {
            adam_step(&mut net, &g, &mut st, lr, 0.9, 0.999, 1e-8).unwrap();
            prev = net.layers[0].weights[0][0];
        }
        let before = prev;
        adam_step(&mut net, &g, &mut st, lr, 0.9, 0.999, 1e-8).unwrap();
        let step = (net.layers[0].weights[0][0] - before).abs();
        assert!((step - lr).abs() < lr * 0.05, "step {step} vs lr {lr}");
    }

    #[test]
    fn adam_zero_lr_no_change() {
        let mut net = init_network(&[2, 2], Activation::Relu, Activation::Linear, 8).unwrap();
        let before = net.clone();
        let mut g = net.zero_gradients();
        g.layers[0].bias[0] = 1.0;
        let mut st = AdamState::new(&net);
        adam_step(&mut net, &g, &mut st, 0.0, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(net, before);
    }
}
