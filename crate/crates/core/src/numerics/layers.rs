//! Layer specifications and a sequential network built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::{conv_output_extent, Graph, Var};
use crate::numerics::spectral::{self, SpectralState};
use crate::numerics::tensor::{ParamStore, Tensor};

/// One layer. Shapes are per sample (no batch axis).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Affine {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        slope: f32,
    },
    Sigmoid,
    Softmax,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Upsample {
        factor: usize,
    },
    AvgPool {
        k: usize,
    },
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Affine { .. } | Layer::Conv2d { .. })
    }

    /// Output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let numel: usize = input.iter().product();
        match *self {
            Layer::Affine { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::shape("affine layer", &[inputs], input));
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(Error::shape("conv2d layer", &[in_channels, 0, 0], input));
                }
                match (
                    conv_output_extent(input[1], kernel, stride, pad),
                    conv_output_extent(input[2], kernel, stride, pad),
                ) {
                    (Some(h), Some(w)) => Ok(vec![out_channels, h, w]),
                    _ => Err(Error::shape("conv2d window", &[kernel, kernel], &input[1..])),
                }
            }
            Layer::LeakyRelu { .. } | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.is_empty() {
                    return Err(Error::shape("softmax layer", &[1], input));
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => Ok(vec![numel]),
            Layer::Reshape { ref shape } => {
                if shape.iter().product::<usize>() != numel {
                    return Err(Error::shape("reshape layer", shape, input));
                }
                Ok(shape.clone())
            }
            Layer::Upsample { factor } => {
                if input.len() != 3 || factor == 0 {
                    return Err(Error::shape("upsample layer", &[0, 0, 0], input));
                }
                Ok(vec![input[0], input[1] * factor, input[2] * factor])
            }
            Layer::AvgPool { k } => {
                if input.len() != 3 || k == 0 || !input[1].is_multiple_of(k) || !input[2].is_multiple_of(k) {
                    return Err(Error::shape("avg_pool layer", &[0, k, k], input));
                }
                Ok(vec![input[0], input[1] / k, input[2] / k])
            }
        }
    }

    fn param_shapes(&self) -> Option<(Vec<usize>, usize, usize)> {
        match *self {
            Layer::Affine { inputs, outputs } => Some((vec![outputs, inputs], outputs, inputs)),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                out_channels,
                in_channels * kernel * kernel,
            )),
            _ => None,
        }
    }
}

/// How weights enter a forward pass.
pub enum WeightMode<'a> {
    /// Weights are differentiable leaves.
    Trainable,
    /// Weights are constants; no gradient flows to them.
    Frozen,
    /// Weights are divided by a power-iteration estimate of their spectral norm.
    /// `power_iters` rounds update the persisted vectors in `state`.
    Spectral {
        state: &'a mut SpectralState,
        power_iters: usize,
        frozen: bool,
    },
}

/// Sequential stack of layers with parameters named `{prefix}.{index}.{weight|bias}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub prefix: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(prefix: impl Into<String>, input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            prefix: prefix.into(),
            input_shape,
            layers,
        };
        net.shapes()?;
        Ok(net)
    }

    /// Per-sample activation shapes: entry 0 is the input, entry `i + 1` the output of layer `i`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes().expect("validated at construction").pop().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.prefix)
    }

    /// Names of every weight matrix (biases excluded).
    pub fn weight_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].has_params())
            .map(|i| self.weight_name(i))
            .collect()
    }

    /// Fan-in scaled uniform initialisation: weights `U(-√(6/fan_in), √(6/fan_in))`,
    /// which preserves activation variance through rectifier layers; biases
    /// `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((wshape, outputs, fan_in)) = layer.param_shapes() {
                let bound = 1.0 / (fan_in as f32).sqrt();
                let wbound = 6f32.sqrt() * bound;
                let n: usize = wshape.iter().product();
                let w = (0..n).map(|_| rng.random_range(-wbound..wbound)).collect();
                let b = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
                store.insert(self.weight_name(i), Tensor::new(wshape, w)?)?;
                store.insert(self.bias_name(i), Tensor::new([outputs], b)?)?;
            }
        }
        Ok(store)
    }

    /// Seeds one persisted power-iteration vector per weight matrix.
    pub fn init_spectral<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralState {
        let mut state = SpectralState::default();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((_, rows, _)) = layer.param_shapes() {
                state
                    .vectors
                    .insert(self.weight_name(i), spectral::random_unit(rows, rng));
            }
        }
        state
    }

    /// Runs the network on `x` (`[B, ..input_shape]`), returning every activation
    /// (index 0 is `x`, index `i + 1` the output of layer `i`).
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, x: Var, mode: &mut WeightMode<'_>) -> Result<Vec<Var>> {
        self.forward_until(g, params, x, mode, self.layers.len())
    }

    /// Like [`Self::forward`] but stops after `depth` layers.
    pub fn forward_until(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        x: Var,
        mode: &mut WeightMode<'_>,
        depth: usize,
    ) -> Result<Vec<Var>> {
        let xs = g.try_value(x)?.shape().to_vec();
        if xs.len() != self.input_shape.len() + 1 || xs[1..] != self.input_shape[..] {
            let mut expected = vec![xs.first().copied().unwrap_or(0)];
            expected.extend(&self.input_shape);
            return Err(Error::shape(format!("{} input", self.prefix), &expected, &xs));
        }
        let mut acts = vec![x];
        let mut h = x;
        for i in 0..depth.min(self.layers.len()) {
            h = self.apply_layer(g, params, i, h, mode)?;
            acts.push(h);
        }
        Ok(acts)
    }

    fn apply_layer(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        i: usize,
        h: Var,
        mode: &mut WeightMode<'_>,
    ) -> Result<Var> {
        let batch = g.try_value(h)?.shape()[0];
        match self.layers[i] {
            Layer::Affine { .. } => {
                let (w, b) = self.weights(g, params, i, mode)?;
                g.affine(h, w, Some(b))
            }
            Layer::Conv2d { stride, pad, .. } => {
                let (w, b) = self.weights(g, params, i, mode)?;
                g.conv2d(h, w, Some(b), stride, pad)
            }
            Layer::LeakyRelu { slope } => g.leaky_relu(h, slope),
            Layer::Sigmoid => g.sigmoid(h),
            Layer::Softmax => g.softmax(h),
            Layer::Flatten => g.flatten(h),
            Layer::Reshape { ref shape } => {
                let mut full = vec![batch];
                full.extend(shape);
                g.reshape(h, &full)
            }
            Layer::Upsample { factor } => g.upsample(h, factor),
            Layer::AvgPool { k } => g.avg_pool(h, k),
        }
    }

    fn weights(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        layer: usize,
        mode: &mut WeightMode<'_>,
    ) -> Result<(Var, Var)> {
        let wname = self.weight_name(layer);
        let bname = self.bias_name(layer);
        match mode {
            WeightMode::Trainable => Ok((g.param(params, &wname)?, g.param(params, &bname)?)),
            WeightMode::Frozen => Ok((g.frozen_param(params, &wname)?, g.frozen_param(params, &bname)?)),
            WeightMode::Spectral {
                state,
                power_iters,
                frozen,
            } => {
                let raw = params.require(&wname)?;
                let (rows, cols) = spectral::matrix_dims(raw)?;
                let u = state
                    .vectors
                    .get(&wname)
                    .ok_or_else(|| Error::InvalidArgument(format!("no spectral vector for {wname}")))?;
                let est = spectral::power_iteration(raw.data(), rows, cols, u, *power_iters)?;
                let (w, b) = if *frozen {
                    (g.frozen_param(params, &wname)?, g.frozen_param(params, &bname)?)
                } else {
                    (g.param(params, &wname)?, g.param(params, &bname)?)
                };
                let wn = g.spectral_norm(w, est.u.clone(), est.v, est.sigma)?;
                state.vectors.insert(wname, est.u);
                Ok((wn, b))
            }
        }
    }

    /// Pure evaluation of layer `index` on a batch, without gradient tracking.
    pub fn layer_forward(&self, params: &ParamStore, index: usize, input: &Tensor) -> Result<Tensor> {
        let shapes = self.shapes()?;
        let expected = &shapes[index];
        if input.shape().len() != expected.len() + 1 || input.shape()[1..] != expected[..] {
            return Err(Error::shape(
                format!("{} layer {index}", self.prefix),
                expected,
                input.shape(),
            ));
        }
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let out = self.apply_layer(&mut g, params, index, x, &mut WeightMode::Frozen)?;
        Ok(g.value(out).clone())
    }

    /// Pure forward pass returning the final activation.
    pub fn predict(&self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let acts = self.forward(&mut g, params, x, &mut WeightMode::Frozen)?;
        Ok(g.value(*acts.last().unwrap()).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_affine() {
        let net = Network::new("n", vec![3], vec![Layer::Affine { inputs: 3, outputs: 3 }]).unwrap();
        let mut p = ParamStore::new();
        p.insert(
            "n.0.weight",
            Tensor::new([3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        )
        .unwrap();
        p.insert("n.0.bias", Tensor::zeros([3])).unwrap();
        let y = net
            .layer_forward(&p, 0, &Tensor::new([1, 3], vec![1., 2., 3.]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[1., 2., 3.]);
    }

    #[test]
    fn shape_rules_chain() {
        let net = Network::new(
            "g",
            vec![10],
            vec![
                Layer::Affine {
                    inputs: 10,
                    outputs: 32,
                },
                Layer::Reshape { shape: vec![2, 4, 4] },
                Layer::Upsample { factor: 2 },
                Layer::Conv2d {
                    in_channels: 2,
                    out_channels: 1,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                Layer::Sigmoid,
                Layer::Flatten,
            ],
        )
        .unwrap();
        assert_eq!(net.output_shape(), vec![64]);
        let bad = Network::new("b", vec![10], vec![Layer::Affine { inputs: 9, outputs: 1 }]);
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn layer_forward_rejects_wrong_input() {
        let net = Network::new("n", vec![1, 4, 4], vec![Layer::Flatten]).unwrap();
        let p = ParamStore::new();
        assert!(net.layer_forward(&p, 0, &Tensor::zeros([2, 1, 4, 3])).is_err());
        let y = net.layer_forward(&p, 0, &Tensor::zeros([2, 1, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[2, 16]);
    }

    #[test]
    fn init_is_seeded() {
        let net = Network::new("n", vec![4], vec![Layer::Affine { inputs: 4, outputs: 2 }]).unwrap();
        let a = net.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = net.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = net.init(&mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f32 / 4.0).sqrt();
        assert!(a.get("n.0.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("n.0.bias").unwrap().data().iter().all(|v| v.abs() <= 0.5));
    }
}
