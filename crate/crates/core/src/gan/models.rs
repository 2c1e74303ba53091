use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::spectral::{matrix_dims, power_iteration};
use crate::numerics::{Graph, Layer, Network, ParamStore, SpectralState, Tensor, Var, WeightMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    pub hidden: usize,
    /// Channels of the half-resolution feature map before upsampling.
    pub channels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            noise_dim: 16,
            hidden: 128,
            channels: 16,
        }
    }
}

/// Maps `z ⊕ f` to an image in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub network: Network,
    pub params: ParamStore,
    pub noise_dim: usize,
    pub feature_dim: usize,
    /// When false the codes are accepted (and shape-checked) but not fed to the network.
    pub conditioned: bool,
}

impl Generator {
    /// dense → leaky → dense → leaky → reshape to half resolution → upsample ×2
    /// → conv3×3 → leaky → conv3×3 → sigmoid.
    pub fn new<R: Rng + ?Sized>(
        spec: &GeneratorSpec,
        feature_dim: usize,
        image_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(spec, feature_dim, true, image_shape, rng)
    }

    /// A generator of `z` alone that ignores the `feature_dim`-long codes it is given.
    pub fn unconditional<R: Rng + ?Sized>(
        spec: &GeneratorSpec,
        feature_dim: usize,
        image_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(spec, feature_dim, false, image_shape, rng)
    }

    fn build<R: Rng + ?Sized>(
        spec: &GeneratorSpec,
        feature_dim: usize,
        conditioned: bool,
        image_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let &[c, h, w] = image_shape else {
            return Err(Error::shape("generator image [C, H, W]", &[1, 2, 2], image_shape));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "generator needs even image sides, got {h}×{w}"
            )));
        }
        let inputs = spec.noise_dim + if conditioned { feature_dim } else { 0 };
        if inputs == 0 || spec.hidden == 0 || spec.channels == 0 {
            return Err(Error::InvalidArgument("generator dimensions must be positive".into()));
        }
        let ch = spec.channels;
        let network = Network::new(
            "gen",
            vec![inputs],
            vec![
                Layer::Affine {
                    inputs,
                    outputs: spec.hidden,
                },
                Layer::LeakyRelu { slope: 0.2 },
                Layer::Affine {
                    inputs: spec.hidden,
                    outputs: ch * (h / 2) * (w / 2),
                },
                Layer::LeakyRelu { slope: 0.2 },
                Layer::Reshape {
                    shape: vec![ch, h / 2, w / 2],
                },
                Layer::Upsample { factor: 2 },
                conv3(ch, ch, 1),
                Layer::LeakyRelu { slope: 0.2 },
                conv3(ch, c, 1),
                Layer::Sigmoid,
            ],
        )?;
        let params = network.init(rng)?;
        Ok(Self {
            network,
            params,
            noise_dim: spec.noise_dim,
            feature_dim,
            conditioned,
        })
    }

    pub fn image_shape(&self) -> Vec<usize> {
        self.network.output_shape()
    }

    /// Row-wise concatenation `[z | f]` (just `z` when unconditioned).
    pub fn input(&self, z: &Tensor, f: &Tensor) -> Result<Tensor> {
        let b = z.shape().first().copied().unwrap_or(0);
        if z.shape() != [b, self.noise_dim] || f.shape() != [b, self.feature_dim] {
            return Err(Error::shape(
                "generator input z ⊕ f",
                &[b, self.noise_dim, b, self.feature_dim],
                &[z.shape(), f.shape()].concat(),
            ));
        }
        if !self.conditioned {
            return Ok(z.clone());
        }
        let mut data = Vec::with_capacity(b * (self.noise_dim + self.feature_dim));
        for i in 0..b {
            data.extend_from_slice(z.row(i));
            data.extend_from_slice(f.row(i));
        }
        Tensor::new([b, self.noise_dim + self.feature_dim], data)
    }

    /// Records the forward pass; parameters are trainable leaves when `trainable`.
    pub fn forward(&self, g: &mut Graph, z: &Tensor, f: &Tensor, trainable: bool) -> Result<Var> {
        let x = g.input(self.input(z, f)?);
        let mut mode = if trainable {
            WeightMode::Trainable
        } else {
            WeightMode::Frozen
        };
        let acts = self.network.forward(g, &self.params, x, &mut mode)?;
        Ok(*acts.last().unwrap())
    }

    pub fn generate(&self, z: &Tensor, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, z, f, false)?;
        Ok(g.value(out).clone())
    }
}

fn conv3(inputs: usize, outputs: usize, stride: usize) -> Layer {
    Layer::Conv2d {
        in_channels: inputs,
        out_channels: outputs,
        kernel: 3,
        stride,
        pad: 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorKind {
    /// Judges one image.
    Single,
    /// Judges a channel-concatenated pair `[a, b]`.
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub width: usize,
    pub spectral_norm: bool,
    /// Start the final dense layer at zero so every output is exactly 0.5.
    pub zero_final: bool,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            width: 16,
            spectral_norm: true,
            zero_final: false,
        }
    }
}

/// conv3×3 → leaky → conv3×3/2 → leaky → flatten → dense → sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub kind: DiscriminatorKind,
    pub network: Network,
    pub params: ParamStore,
    /// Persisted power-iteration vectors; `None` without spectral normalisation.
    pub spectral: Option<SpectralState>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        kind: DiscriminatorKind,
        spec: &DiscriminatorSpec,
        image_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let &[c, h, w] = image_shape else {
            return Err(Error::shape("discriminator image [C, H, W]", &[1, 2, 2], image_shape));
        };
        if spec.width == 0 {
            return Err(Error::InvalidArgument("discriminator width must be positive".into()));
        }
        if spec.zero_final && spec.spectral_norm {
            return Err(Error::InvalidArgument(
                "a zero final layer has no spectral norm; disable one of the two".into(),
            ));
        }
        let in_ch = match kind {
            DiscriminatorKind::Single => c,
            DiscriminatorKind::Coupled => 2 * c,
        };
        let wd = spec.width;
        let network = Network::new(
            match kind {
                DiscriminatorKind::Single => "disc",
                DiscriminatorKind::Coupled => "cdisc",
            },
            vec![in_ch, h, w],
            vec![
                conv3(in_ch, wd, 1),
                Layer::LeakyRelu { slope: 0.2 },
                conv3(wd, 2 * wd, 2),
                Layer::LeakyRelu { slope: 0.2 },
                Layer::Flatten,
                Layer::Affine {
                    inputs: 2 * wd * h.div_ceil(2) * w.div_ceil(2),
                    outputs: 1,
                },
                Layer::Sigmoid,
            ],
        )?;
        let mut params = network.init(rng)?;
        if spec.zero_final {
            for name in [network.weight_name(5), network.bias_name(5)] {
                params.get_mut(&name).expect("initialised").data_mut().fill(0.0);
            }
        }
        let spectral = spec.spectral_norm.then(|| network.init_spectral(rng));
        Ok(Self {
            kind,
            network,
            params,
            spectral,
        })
    }

    pub fn image_shape(&self) -> Vec<usize> {
        let mut s = self.network.input_shape.clone();
        if self.kind == DiscriminatorKind::Coupled {
            s[0] /= 2;
        }
        s
    }

    /// One power-iteration round on every weight, updating the persisted vectors.
    pub fn advance_power_iteration(&mut self, iters: usize) -> Result<()> {
        let Some(state) = self.spectral.as_mut() else {
            return Ok(());
        };
        for name in self.network.weight_names() {
            let w = self.params.require(&name)?;
            let (rows, cols) = matrix_dims(w)?;
            let u = state
                .vectors
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("no spectral vector for {name}")))?;
            let est = power_iteration(w.data(), rows, cols, u, iters)?;
            state.vectors.insert(name, est.u);
        }
        Ok(())
    }

    /// Weights as they enter the forward pass (divided by σ̂ when normalised).
    pub fn effective_weights(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for name in self.network.weight_names() {
            let w = self.params.require(&name)?.clone();
            let w = match &self.spectral {
                Some(state) => {
                    let u = &state.vectors[&name];
                    crate::numerics::spectral_normalize(&w, u, 0)?.0
                }
                None => w,
            };
            out.insert(name, w)?;
        }
        Ok(out)
    }

    /// Records `D(a)` or `D([a, b])` as a `[B, 1]` probability. The persisted
    /// vectors are read, never updated, here.
    pub fn forward(&self, g: &mut Graph, a: Var, b: Option<Var>, trainable: bool) -> Result<Var> {
        let x = match (self.kind, b) {
            (DiscriminatorKind::Single, None) => a,
            (DiscriminatorKind::Coupled, Some(b)) => g.concat_channels(a, b)?,
            (kind, _) => {
                return Err(Error::InvalidArgument(format!(
                    "{kind:?} discriminator called with the wrong number of images"
                )))
            }
        };
        let mut state;
        let mut mode = match (&self.spectral, trainable) {
            (Some(s), _) => {
                state = s.clone();
                WeightMode::Spectral {
                    state: &mut state,
                    power_iters: 0,
                    frozen: !trainable,
                }
            }
            (None, true) => WeightMode::Trainable,
            (None, false) => WeightMode::Frozen,
        };
        let acts = self.network.forward(g, &self.params, x, &mut mode)?;
        Ok(*acts.last().unwrap())
    }

    /// Pure evaluation; returns one probability per row.
    pub fn discriminate(&self, a: &Tensor, b: Option<&Tensor>) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let av = g.input(a.clone());
        let bv = b.map(|b| g.input(b.clone()));
        let p = self.forward(&mut g, av, bv, false)?;
        Ok(g.value(p).data().to_vec())
    }
}
