//! Layer-sequence network with skip connections, reverse-mode gradients,
//! seeded initialization, and the U-Net / MLP builders.

use crate::error::{Error, Result};
use crate::nn::layers::Layer;
use crate::nn::tensor::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// A frozen network propagates input gradients but reports no parameter
    /// gradients, and its parameters must never be updated.
    pub frozen: bool,
}

/// Forward cache: activation per index, acts[0] = input, acts[i+1] = output
/// of layer i.
pub struct ForwardCache {
    pub acts: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutActivation {
    Sigmoid,
    Identity,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers, frozen: false }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardCache> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let skip = match layer {
                Layer::SkipConcat(src) => {
                    if *src > i {
                        return Err(Error::TensorShape("skip source must precede the layer".into()));
                    }
                    Some(&acts[*src])
                }
                _ => None,
            };
            let out = layer.forward(&acts[i], skip)?;
            acts.push(out);
        }
        Ok(ForwardCache { acts })
    }

    /// Reverse-mode pass for one sample. Returns the parameter gradients (in
    /// `params()` order; empty for a frozen network) and the gradient with
    /// respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let n = self.layers.len();
        if cache.acts.len() != n + 1 {
            return Err(Error::TensorShape("forward cache does not match network".into()));
        }
        // gradient w.r.t. each activation index; entries fill in as layers
        // are processed in reverse
        let mut grads: Vec<Option<Tensor>> = vec![None; n + 1];
        grads[n] = Some(grad_out.clone());
        let mut param_grads_rev: Vec<Vec<Tensor>> = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let g_out = grads[i + 1].take().ok_or_else(|| {
                Error::TensorShape("missing upstream gradient (disconnected layer output)".into())
            })?;
            let layer = &self.layers[i];
            let skip_act = match layer {
                Layer::SkipConcat(src) => Some(&cache.acts[*src]),
                _ => None,
            };
            let (g_in, pg, g_skip) =
                layer.backward(&cache.acts[i], &cache.acts[i + 1], &g_out, skip_act)?;
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&g_in),
                slot => *slot = Some(g_in),
            }
            if let (Layer::SkipConcat(src), Some(gs)) = (layer, g_skip) {
                match &mut grads[*src] {
                    Some(existing) => existing.add_assign(&gs),
                    slot => *slot = Some(gs),
                }
            }
            param_grads_rev.push(pg);
        }
        let input_grad = grads[0].take().expect("input gradient always produced");
        let param_grads = if self.frozen {
            Vec::new()
        } else {
            param_grads_rev.into_iter().rev().flatten().collect()
        };
        Ok((param_grads, input_grad))
    }

    /// Seed-deterministic initialization: He-uniform fan-in for layers that
    /// feed a ReLU, Glorot-uniform for layers feeding a sigmoid or the
    /// output; biases zero. Parameters land on the f32 grid.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = Rng::new(seed, 0);
        let n = self.layers.len();
        for i in 0..n {
            let Some((fan_in, fan_out)) = self.layers[i].fans() else { continue };
            // next activation after this layer decides the scheme
            let mut he = false;
            for later in &self.layers[i + 1..] {
                match later {
                    Layer::ReLU => {
                        he = true;
                        break;
                    }
                    Layer::Sigmoid => break,
                    Layer::Dense { .. } | Layer::Conv3x3 { .. } => break,
                    _ => continue,
                }
            }
            let bound = if he {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            for p in self.layers[i].params_mut() {
                if p.shape().len() == 1 {
                    p.data_mut().fill(0.0); // biases
                } else {
                    for v in p.data_mut() {
                        *v = rng.uniform(-bound, bound);
                    }
                }
                p.quantize_f32();
            }
        }
    }
}

/// Per-pixel MLP: Dense(in, hidden) + ReLU, repeated, then Dense(hidden, 1)
/// with an identity head.
pub fn build_mlp(in_f: usize, hidden: &[usize], out_f: usize) -> Network {
    let mut layers = Vec::new();
    let mut prev = in_f;
    for &h in hidden {
        layers.push(Layer::dense(prev, h));
        layers.push(Layer::ReLU);
        prev = h;
    }
    layers.push(Layer::dense(prev, out_f));
    Network::new(layers)
}

/// Encoder-decoder U-Net: `depth` encoder blocks (two 3x3 convs + ReLU,
/// channels doubling from `base_ch`) with 2x2 max pooling between levels, a
/// bottleneck block, then mirrored decoder stages with nearest upsampling and
/// skip concatenation, closed by a 3x3 conv to one channel.
pub fn build_unet(in_ch: usize, base_ch: usize, depth: usize, out_activation: OutActivation) -> Network {
    assert!(depth >= 1, "unet depth must be >= 1");
    let mut layers: Vec<Layer> = Vec::new();
    let mut skip_acts: Vec<usize> = Vec::new();
    let mut prev_ch = in_ch;
    // activation index after pushing k layers is k (acts[0] is the input)
    for d in 0..depth {
        let ch = base_ch << d;
        layers.push(Layer::conv3x3(prev_ch, ch));
        layers.push(Layer::ReLU);
        layers.push(Layer::conv3x3(ch, ch));
        layers.push(Layer::ReLU);
        skip_acts.push(layers.len()); // activation index of this block's output
        layers.push(Layer::MaxPool2);
        prev_ch = ch;
    }
    let bottleneck_ch = base_ch << depth;
    layers.push(Layer::conv3x3(prev_ch, bottleneck_ch));
    layers.push(Layer::ReLU);
    layers.push(Layer::conv3x3(bottleneck_ch, bottleneck_ch));
    layers.push(Layer::ReLU);
    prev_ch = bottleneck_ch;
    for d in (0..depth).rev() {
        let ch = base_ch << d;
        layers.push(Layer::UpsampleNearest2);
        layers.push(Layer::SkipConcat(skip_acts[d]));
        layers.push(Layer::conv3x3(prev_ch + ch, ch));
        layers.push(Layer::ReLU);
        layers.push(Layer::conv3x3(ch, ch));
        layers.push(Layer::ReLU);
        prev_ch = ch;
    }
    layers.push(Layer::conv3x3(prev_ch, 1));
    if out_activation == OutActivation::Sigmoid {
        layers.push(Layer::Sigmoid);
    }
    Network::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(net: &Network, input: &Tensor, tol: f64) {
        // scalar objective: sum of squared outputs
        let loss = |n: &Network| -> f64 {
            let c = n.forward(input).unwrap();
            c.output().data().iter().map(|v| v * v).sum::<f64>()
        };
        let cache = net.forward(input).unwrap();
        let grad_out = Tensor::new(
            cache.output().shape().to_vec(),
            cache.output().data().iter().map(|v| 2.0 * v).collect(),
        )
        .unwrap();
        let (pg, _) = net.backward(&cache, &grad_out).unwrap();
        let mut net2 = net.clone();
        let flat: Vec<(usize, usize)> = net2
            .params()
            .iter()
            .enumerate()
            .flat_map(|(t, p)| (0..p.len()).map(move |k| (t, k)))
            .collect();
        for (t, k) in flat {
            let h = 1e-5;
            let orig = net2.params()[t].data()[k];
            net2.params_mut()[t].data_mut()[k] = orig + h;
            let lp = loss(&net2);
            net2.params_mut()[t].data_mut()[k] = orig - h;
            let lm = loss(&net2);
            net2.params_mut()[t].data_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = pg[t].data()[k];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < tol,
                "param ({t},{k}): fd={fd} analytic={an}"
            );
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = build_mlp(3, &[4], 1);
        net.init_weights(1);
        let x = Tensor::new(vec![3], vec![0.4, -0.2, 0.9]).unwrap();
        let cache = net.forward(&x).unwrap();
        let (pg, gx) = net.backward(&cache, &Tensor::zeros(&[1])).unwrap();
        assert!(pg.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut net = build_mlp(3, &[4], 1);
        net.init_weights(7);
        let x = Tensor::new(vec![3], vec![0.31, -0.6, 1.2]).unwrap();
        fd_check(&net, &x, 1e-4);
    }

    #[test]
    fn every_layer_type_gradients_match_finite_differences() {
        // conv + relu + pool + upsample + skip + sigmoid in one small net
        let mut layers = vec![
            Layer::conv3x3(2, 3),
            Layer::ReLU,
            Layer::MaxPool2,
            Layer::conv3x3(3, 3),
            Layer::ReLU,
            Layer::UpsampleNearest2,
            Layer::SkipConcat(2),
            Layer::conv3x3(6, 2),
            Layer::Sigmoid,
        ];
        // SkipConcat(2) refers to the ReLU activation before the pool
        let mut net = Network::new(std::mem::take(&mut layers));
        net.init_weights(11);
        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|i| ((i * 7 % 13) as f64) * 0.1 - 0.6).collect()).unwrap();
        fd_check(&net, &x, 1e-4);
    }

    #[test]
    fn frozen_network_propagates_input_grad_only() {
        let mut net = build_mlp(2, &[5], 1);
        net.init_weights(3);
        let x = Tensor::new(vec![2], vec![0.2, 0.8]).unwrap();
        let cache = net.forward(&x).unwrap();
        let up = Tensor::new(vec![1], vec![1.0]).unwrap();
        let (pg_live, gx_live) = net.backward(&cache, &up).unwrap();
        assert!(!pg_live.is_empty());
        let mut frozen = net.clone();
        frozen.freeze();
        let cache2 = frozen.forward(&x).unwrap();
        let (pg_frozen, gx_frozen) = frozen.backward(&cache2, &up).unwrap();
        assert!(pg_frozen.is_empty());
        assert_eq!(gx_frozen, gx_live);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let mut a = build_mlp(100, &[100], 1);
        let mut b = build_mlp(100, &[100], 1);
        a.init_weights(9);
        b.init_weights(9);
        assert_eq!(a, b);
        // He bound for fan-in 100 is sqrt(6/100)
        let bound = (6.0f64 / 100.0).sqrt();
        let w = a.params()[0];
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // biases zero
        assert!(a.params()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unet_shape_and_sigmoid_range() {
        let mut net = build_unet(2, 8, 2, OutActivation::Sigmoid);
        net.init_weights(5);
        let x = Tensor::new(vec![2, 16, 16], (0..512).map(|i| (i as f64 * 0.01).sin()).collect()).unwrap();
        let cache = net.forward(&x).unwrap();
        assert_eq!(cache.output().shape(), &[1, 16, 16]);
        assert!(cache.output().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn unet_param_count_regression() {
        let net = build_unet(2, 8, 2, OutActivation::Sigmoid);
        // frozen regression value: counted per layer as
        // sum(out*in*9 + out) over convs for depth 2 / base 8 / in 2
        let by_hand: usize = [
            (2, 8),   // enc0 conv a
            (8, 8),   // enc0 conv b
            (8, 16),  // enc1 conv a
            (16, 16), // enc1 conv b
            (16, 32), // bottleneck a
            (32, 32), // bottleneck b
            (48, 16), // dec1 conv a (32 up + 16 skip)
            (16, 16), // dec1 conv b
            (24, 8),  // dec0 conv a (16 up + 8 skip)
            (8, 8),   // dec0 conv b
            (8, 1),   // head
        ]
        .iter()
        .map(|&(i, o)| i * o * 9 + o)
        .sum();
        assert_eq!(by_hand, 29753);
        assert_eq!(net.param_count(), 29753);
    }

    #[test]
    fn unet_gradients_through_skip_paths() {
        let mut net = build_unet(1, 2, 1, OutActivation::Sigmoid);
        net.init_weights(13);
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(|i| (i as f64) * 0.07 - 0.5).collect()).unwrap();
        fd_check(&net, &x, 1e-4);
    }
}
