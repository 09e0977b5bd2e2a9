//! The image encoder: a strided convolutional trunk, global average pooling
//! and a two-layer projection head (FC → LeakyReLU → FC).
//!
//! There is no batch normalization, so every output row depends only on its
//! own input image.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VinceError};
use crate::rng;
use crate::tensor::{Conv2dSpec, Graph, Reduce, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlock {
    pub fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
        }
    }

    /// Same-style padding for odd kernels.
    pub fn conv_spec(&self) -> Conv2dSpec {
        Conv2dSpec {
            stride: self.stride,
            padding: self.kernel / 2,
        }
    }
}

/// Weight initialization. Both draw uniformly from `±bound` and zero the
/// biases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `bound = sqrt(1 / fan_in)`.
    FanIn,
    /// `bound = sqrt(6 / fan_in)`.
    #[default]
    HeUniform,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize) -> f32 {
        let numerator = match self {
            InitScheme::FanIn => 1.0,
            InitScheme::HeUniform => 6.0,
        };
        (numerator / fan_in as f32).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub trunk: Vec<ConvBlock>,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub leaky_slope: f32,
    pub init: InitScheme,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_size: 64,
            trunk: vec![
                ConvBlock::new(16, 3, 2),
                ConvBlock::new(32, 3, 2),
                ConvBlock::new(64, 3, 2),
            ],
            hidden_dim: 128,
            embed_dim: 32,
            leaky_slope: 0.01,
            init: InitScheme::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(VinceError::Config(format!(
                "embed_dim must be at least 2, got {}",
                self.embed_dim
            )));
        }
        if self.input_channels == 0 || self.hidden_dim == 0 || self.trunk.is_empty() {
            return Err(VinceError::Config(
                "encoder needs input channels, a hidden width and at least one conv block".into(),
            ));
        }
        if self.trunk.iter().any(|b| b.out_channels == 0 || b.kernel == 0 || b.stride == 0) {
            return Err(VinceError::Config("conv blocks need non-zero sizes".into()));
        }
        self.spatial_size_for(self.input_size)?;
        Ok(())
    }

    /// Spatial side length of the trunk output for a square input.
    pub fn spatial_size_for(&self, input: usize) -> Result<usize> {
        let mut size = input;
        for (i, block) in self.trunk.iter().enumerate() {
            size = block
                .conv_spec()
                .output_size(size, block.kernel)
                .filter(|&s| s >= 1)
                .ok_or_else(|| {
                    VinceError::Config(format!("conv block {i} collapses a {size}px input"))
                })?;
        }
        Ok(size)
    }

    pub fn feature_channels(&self) -> usize {
        self.trunk
            .last()
            .map_or(self.input_channels, |b| b.out_channels)
    }

    /// Total downsampling factor of the trunk.
    pub fn total_stride(&self) -> usize {
        self.trunk.iter().map(|b| b.stride).product()
    }

    /// Parameter names and shapes, in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut layout = Vec::new();
        let mut in_ch = self.input_channels;
        for (i, b) in self.trunk.iter().enumerate() {
            layout.push((
                format!("trunk.{i}.weight"),
                vec![b.out_channels, in_ch, b.kernel, b.kernel],
            ));
            layout.push((format!("trunk.{i}.bias"), vec![b.out_channels]));
            in_ch = b.out_channels;
        }
        layout.push(("head.fc1.weight".into(), vec![in_ch, self.hidden_dim]));
        layout.push(("head.fc1.bias".into(), vec![self.hidden_dim]));
        layout.push(("head.fc2.weight".into(), vec![self.hidden_dim, self.embed_dim]));
        layout.push(("head.fc2.bias".into(), vec![self.embed_dim]));
        layout
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    /// Uniform weights per [`InitScheme`], zero biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "init", 0);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.param_layout() {
            let len: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; len]
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let bound = config.init.bound(fan_in);
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..len).map(|_| dist.sample(&mut rng)).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    /// Rebuilds params from stored tensors, checking them against the layout.
    pub fn from_tensors(config: &EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != tensors.len() {
            return Err(VinceError::dim(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(VinceError::dim(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            names: layout.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over every parameter's bits, in layout order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// `self ← alpha · self + (1 − alpha) · other`, element-wise.
    pub fn blend_towards(&mut self, other: &EncoderParams, alpha: f32) -> Result<()> {
        if self.config != other.config {
            return Err(VinceError::Precondition(
                "momentum update between encoders of different configs".into(),
            ));
        }
        for (g, f) in self.tensors.iter_mut().zip(&other.tensors) {
            for (gv, &fv) in g.data_mut().iter_mut().zip(f.data()) {
                *gv = alpha * *gv + (1.0 - alpha) * fv;
            }
        }
        Ok(())
    }

    /// Places every parameter on `graph`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundEncoder {
        BoundEncoder {
            config: self.config.clone(),
            vars: self
                .tensors
                .iter()
                .map(|t| graph.leaf(t.clone(), trainable))
                .collect(),
        }
    }
}

/// Encoder parameters living on a particular graph.
#[derive(Clone, Debug)]
pub struct BoundEncoder {
    config: EncoderConfig,
    vars: Vec<Var>,
}

impl BoundEncoder {
    /// Wraps leaves already on a graph, in [`EncoderConfig::param_layout`]
    /// order.
    pub fn from_vars(config: &EncoderConfig, graph: &Graph, vars: Vec<Var>) -> Result<Self> {
        let layout = config.param_layout();
        if vars.len() != layout.len() {
            return Err(VinceError::dim(format!(
                "{} vars for {} parameters",
                vars.len(),
                layout.len()
            )));
        }
        for ((name, shape), v) in layout.iter().zip(&vars) {
            if graph.value(*v).shape() != shape.as_slice() {
                return Err(VinceError::dim(format!("{name} has the wrong shape")));
            }
        }
        Ok(Self {
            config: config.clone(),
            vars,
        })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn check_input(&self, graph: &Graph, images: Var) -> Result<()> {
        let (_, c, h, w) = graph.value(images).dims4()?;
        if c != self.config.input_channels {
            return Err(VinceError::dim(format!(
                "encoder expects {} channels, got {c}",
                self.config.input_channels
            )));
        }
        self.config
            .spatial_size_for(h.min(w))
            .map_err(|e| VinceError::dim(e.to_string()))?;
        Ok(())
    }

    /// Trunk output before pooling. Accepts any spatial size the trunk can
    /// reduce to at least 1×1.
    pub fn spatial_features(&self, graph: &mut Graph, images: Var) -> Result<Var> {
        self.check_input(graph, images)?;
        let mut x = images;
        for (i, block) in self.config.trunk.iter().enumerate() {
            let (w, b) = (self.vars[2 * i], self.vars[2 * i + 1]);
            x = graph.conv2d(x, w, Some(b), block.conv_spec())?;
            x = graph.leaky_relu(x, self.config.leaky_slope)?;
        }
        Ok(x)
    }

    /// Global average pool of `n × c × h × w` features to `n × c`.
    pub fn pool(&self, graph: &mut Graph, features: Var) -> Result<Var> {
        let (n, c, h, w) = graph.value(features).dims4()?;
        let flat = graph.reshape(features, [n * c, h * w])?;
        let mean = graph.reduce(Reduce::Mean, flat, 1)?;
        graph.reshape(mean, [n, c])
    }

    pub fn head(&self, graph: &mut Graph, pooled: Var) -> Result<Var> {
        let t = 2 * self.config.trunk.len();
        let v = &self.vars;
        let hidden = graph.linear(pooled, v[t], v[t + 1])?;
        let hidden = graph.leaky_relu(hidden, self.config.leaky_slope)?;
        graph.linear(hidden, v[t + 2], v[t + 3])
    }

    /// Raw (un-normalized) `n × d` embeddings.
    pub fn encode(&self, graph: &mut Graph, images: Var) -> Result<Var> {
        let (_, _, h, w) = graph.value(images).dims4()?;
        if h != self.config.input_size || w != self.config.input_size {
            return Err(VinceError::dim(format!(
                "encoder expects {0}×{0} images, got {h}×{w}",
                self.config.input_size
            )));
        }
        let features = self.spatial_features(graph, images)?;
        let pooled = self.pool(graph, features)?;
        self.head(graph, pooled)
    }
}

const INFERENCE_CHUNK: usize = 128;

fn chunked(
    params: &EncoderParams,
    images: &Tensor,
    run: impl Fn(&BoundEncoder, &mut Graph, Var) -> Result<Var>,
) -> Result<Tensor> {
    let (n, _, _, _) = images.dims4()?;
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n || (n == 0 && parts.is_empty()) {
        let end = (start + INFERENCE_CHUNK).min(n);
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, false);
        let x = graph.constant(images.slice_outer(start, end)?);
        let out = run(&bound, &mut graph, x)?;
        parts.push(graph.value(out).clone());
        if n == 0 {
            break;
        }
        start = end;
    }
    let row_shape = parts[0].shape()[1..].to_vec();
    let mut data = Vec::new();
    for p in parts {
        data.extend(p.into_data());
    }
    let mut shape = vec![n];
    shape.extend(row_shape);
    Tensor::new(shape, data)
}

/// Gradient-free embedding of a batch of images, `n × d`.
pub fn encode(params: &EncoderParams, images: &Tensor) -> Result<Tensor> {
    chunked(params, images, |b, g, x| b.encode(g, x))
}

/// Gradient-free trunk features, `n × c' × h' × w'`.
pub fn spatial_features(params: &EncoderParams, images: &Tensor) -> Result<Tensor> {
    chunked(params, images, |b, g, x| b.spatial_features(g, x))
}
