//! U-Net style encoder-decoder shared by the reconstruction and segmentation tasks.
//!
//! The network is written directly against dense buffers: each layer keeps the
//! activations it needs in a per-sample [`Trace`], and [`Model::backward`]
//! accumulates parameter gradients from a gradient on the output logits.
//! Convolutions lower to GEMM through `matrixmultiply`.

mod adam;
mod checkpoint;
mod layers;
mod scalar;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use scalar::Scalar;
pub use train::{fit, FitConfig};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use layers::{maxpool2, maxpool2_backward, BlockCache, Conv, DoubleConv, GroupNorm, UpConv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Reconstruction,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub norm_groups: usize,
    /// `(height, width)` of the inputs the model accepts.
    pub input_size: (usize, usize),
    pub head: Head,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 32,
            depth: 4,
            norm_groups: 8,
            input_size: (64, 64),
            head: Head::Reconstruction,
        }
    }
}

impl NetConfig {
    pub fn with_head(&self, head: Head) -> Self {
        Self { head, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 {
            return Err(Error::Config("net.in_channels must be 1 (grayscale)".into()));
        }
        if self.base_channels == 0 || self.depth == 0 || self.norm_groups == 0 {
            return Err(Error::Config("net.base_channels, depth and norm_groups must be >= 1".into()));
        }
        let (h, w) = self.input_size;
        let step = 1usize << self.depth;
        if h == 0 || w == 0 || h % step != 0 || w % step != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} not divisible by 2^depth = {step}"
            )));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level.min(self.depth - 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.level_channels(self.depth - 1)
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_size.0 >> self.depth, self.input_size.1 >> self.depth)
    }
}

/// A named, shaped parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
}

/// Gradient buffers aligned with [`Model::params`].
pub type Grads<F> = Vec<Vec<F>>;

/// Which parameters [`Model::transfer_from`] copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferScope {
    #[default]
    EncoderDecoder,
    EncoderOnly,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<DoubleConv>,
    ups: Vec<UpConv>,
    decoder: Vec<DoubleConv>,
    head: Conv,
}

#[derive(Debug, Clone)]
pub struct Model<F: Scalar = f32> {
    config: NetConfig,
    seed: u64,
    params: Vec<Param<F>>,
    layout: Layout,
}

/// Activation of the deepest encoder stage, `channels x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<F> {
    encoder: Vec<BlockCache<F>>,
    pools: Vec<Vec<u32>>,
    decoder: Vec<BlockCache<F>>,
    head_cols: Vec<F>,
    pub logits: Vec<F>,
    pub probs: Vec<F>,
}

struct Builder<'a, F> {
    params: Vec<Param<F>>,
    rng: &'a mut crate::rng::Rng,
    groups: usize,
}

impl<F: Scalar> Builder<'_, F> {
    fn push(&mut self, name: String, shape: Vec<usize>, value: Vec<F>) -> usize {
        self.params.push(Param { name, shape, value });
        self.params.len() - 1
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<F> {
        (0..n).map(|_| F::of(self.rng.gen_range(-bound..bound))).collect()
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let fan_in = cin * k * k;
        let w = self.uniform(cout * fan_in, (6.0 / fan_in as f64).sqrt());
        let weight = self.push(format!("{prefix}.weight"), vec![cout, cin, k, k], w);
        let bias = self.push(format!("{prefix}.bias"), vec![cout], vec![F::zero(); cout]);
        Conv {
            weight,
            bias,
            cin,
            cout,
            k,
        }
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> GroupNorm {
        let gamma = self.push(format!("{prefix}.gamma"), vec![channels], vec![F::one(); channels]);
        let beta = self.push(format!("{prefix}.beta"), vec![channels], vec![F::zero(); channels]);
        GroupNorm {
            gamma,
            beta,
            channels,
            groups: gcd(channels, self.groups),
        }
    }

    fn double(&mut self, prefix: &str, cin: usize, cout: usize) -> DoubleConv {
        DoubleConv {
            conv1: self.conv(&format!("{prefix}.conv1"), cin, cout, 3),
            norm1: self.norm(&format!("{prefix}.norm1"), cout),
            conv2: self.conv(&format!("{prefix}.conv2"), cout, cout, 3),
            norm2: self.norm(&format!("{prefix}.norm2"), cout),
        }
    }

    fn up(&mut self, prefix: &str, cin: usize, cout: usize) -> UpConv {
        let w = self.uniform(cout * 4 * cin, (6.0 / cin as f64).sqrt());
        let weight = self.push(format!("{prefix}.weight"), vec![cin, cout, 2, 2], w);
        let bias = self.push(format!("{prefix}.bias"), vec![cout], vec![F::zero(); cout]);
        UpConv {
            weight,
            bias,
            cin,
            cout,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl<F: Scalar> Model<F> {
    /// Deterministic construction: identical `(config, seed)` give identical parameters.
    pub fn build(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let mut b = Builder {
            params: Vec::new(),
            rng: &mut rng,
            groups: config.norm_groups,
        };
        let depth = config.depth;
        let mut encoder = Vec::with_capacity(depth + 1);
        for level in 0..depth {
            let cin = if level == 0 {
                config.in_channels
            } else {
                config.level_channels(level - 1)
            };
            encoder.push(b.double(&format!("encoder.{level}"), cin, config.level_channels(level)));
        }
        let bc = config.bottleneck_channels();
        encoder.push(b.double(&format!("encoder.{depth}"), bc, bc));
        let mut ups = Vec::with_capacity(depth);
        let mut decoder = Vec::with_capacity(depth);
        for level in 0..depth {
            let c = config.level_channels(level);
            let cin = if level + 1 == depth {
                bc
            } else {
                config.level_channels(level + 1)
            };
            ups.push(b.up(&format!("decoder.{level}.up"), cin, c));
            decoder.push(b.double(&format!("decoder.{level}"), 2 * c, c));
        }
        let head = b.conv("head", config.base_channels, 1, 1);
        let params = b.params;
        Ok(Self {
            config: config.clone(),
            seed,
            params,
            layout: Layout {
                encoder,
                ups,
                decoder,
                head,
            },
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<F> {
        self.params.iter().map(|p| vec![F::zero(); p.value.len()]).collect()
    }

    /// Same architecture and values in another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| G::of(v.f64())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn check_input(&self, x: &[F]) -> Result<()> {
        let (h, w) = self.config.input_size;
        let want = self.config.in_channels * h * w;
        if x.len() != want {
            return Err(Error::Shape(format!(
                "model expects {h}x{w} input ({want} values), got {}",
                x.len()
            )));
        }
        Ok(())
    }

    fn run_encoder(&self, x: &[F]) -> (Vec<BlockCache<F>>, Vec<Vec<u32>>) {
        let (mut h, mut w) = self.config.input_size;
        let depth = self.config.depth;
        let mut caches = Vec::with_capacity(depth + 1);
        let mut pools = Vec::with_capacity(depth);
        let mut input = x.to_vec();
        for level in 0..depth {
            let block = &self.layout.encoder[level];
            let cache = block.forward(&self.params, &input, h, w);
            let (pooled, idx) = maxpool2(&cache.out, block.cout(), h, w);
            caches.push(cache);
            pools.push(idx);
            input = pooled;
            h /= 2;
            w /= 2;
        }
        caches.push(self.layout.encoder[depth].forward(&self.params, &input, h, w));
        (caches, pools)
    }

    /// Forward pass keeping every activation needed by [`Model::backward`].
    pub fn forward_trace(&self, x: &[F]) -> Result<Trace<F>> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let (encoder, pools) = self.run_encoder(x);
        let (h0, w0) = self.config.input_size;
        let mut decoder: Vec<Option<BlockCache<F>>> = (0..depth).map(|_| None).collect();
        for level in (0..depth).rev() {
            let (h, w) = (h0 >> level, w0 >> level);
            let below = if level + 1 == depth {
                &encoder[depth].out
            } else {
                &decoder[level + 1].as_ref().expect("deeper level done").out
            };
            let up = self.layout.ups[level].forward(&self.params, below, h / 2, w / 2);
            let mut cat = encoder[level].out.clone();
            cat.extend_from_slice(&up);
            decoder[level] = Some(self.layout.decoder[level].forward(&self.params, &cat, h, w));
        }
        let decoder: Vec<BlockCache<F>> = decoder.into_iter().map(|c| c.expect("filled")).collect();
        let (logits, head_cols) = self.layout.head.forward(&self.params, &decoder[0].out, h0, w0);
        let probs = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(Trace {
            encoder,
            pools,
            decoder,
            head_cols,
            logits,
            probs,
        })
    }

    /// Output probabilities (sigmoid of the head logits).
    pub fn forward(&self, x: &[F]) -> Result<Vec<F>> {
        Ok(self.forward_trace(x)?.probs)
    }

    /// Accumulate parameter gradients given `dL/dlogits`.
    pub fn backward(&self, trace: &Trace<F>, grad_logits: &[F], grads: &mut Grads<F>) {
        let p = &self.params;
        let depth = self.config.depth;
        let (h0, w0) = self.config.input_size;
        let mut dy = self
            .layout
            .head
            .backward(p, &trace.head_cols, grad_logits, h0, w0, grads, true)
            .expect("dx requested");
        let mut dskips: Vec<Vec<F>> = Vec::with_capacity(depth);
        for level in 0..depth {
            let (h, w) = (h0 >> level, w0 >> level);
            let c = self.config.level_channels(level);
            let dcat = self.layout.decoder[level]
                .backward(p, &trace.decoder[level], dy, h, w, grads, true)
                .expect("dx requested");
            let (dskip, dup) = dcat.split_at(c * h * w);
            dskips.push(dskip.to_vec());
            let below = if level + 1 == depth {
                &trace.encoder[depth].out
            } else {
                &trace.decoder[level + 1].out
            };
            dy = self.layout.ups[level].backward(p, below, dup, h / 2, w / 2, grads);
        }
        let (hb, wb) = self.config.bottleneck_size();
        let mut dx = self.layout.encoder[depth]
            .backward(p, &trace.encoder[depth], dy, hb, wb, grads, true)
            .expect("dx requested");
        for level in (0..depth).rev() {
            let (h, w) = (h0 >> level, w0 >> level);
            let len = self.config.level_channels(level) * h * w;
            let mut dout = maxpool2_backward(&dx, &trace.pools[level], len);
            for (d, s) in dout.iter_mut().zip(&dskips[level]) {
                *d += *s;
            }
            match self.layout.encoder[level].backward(p, &trace.encoder[level], dout, h, w, grads, level > 0) {
                Some(next) => dx = next,
                None => break,
            }
        }
    }

    /// Deepest encoder activation for one input image.
    pub fn bottleneck(&self, x: &[F]) -> Result<FeatureMap> {
        self.check_input(x)?;
        let (mut caches, _) = self.run_encoder(x);
        let out = caches.pop().expect("bottleneck stage").out;
        let (height, width) = self.config.bottleneck_size();
        Ok(FeatureMap {
            channels: self.config.bottleneck_channels(),
            height,
            width,
            data: out.iter().map(|v| v.f64() as f32).collect(),
        })
    }

    /// Copy pretrained weights from `source` into `self`, keeping this model's head.
    ///
    /// The architectures must agree parameter-for-parameter; the first
    /// mismatching name is reported otherwise.
    pub fn transfer_from(&mut self, source: &Model<F>, scope: TransferScope) -> Result<()> {
        if self.config.with_head(Head::Segmentation) != source.config.with_head(Head::Segmentation)
        {
            let first = self
                .params
                .iter()
                .zip(&source.params)
                .find(|(a, b)| a.name != b.name || a.shape != b.shape)
                .map(|(a, _)| a.name.clone())
                .unwrap_or_else(|| "<config>".into());
            return Err(Error::Config(format!("architecture mismatch at {first}")));
        }
        if self.params.len() != source.params.len() {
            return Err(Error::Config("architecture mismatch: parameter counts differ".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&source.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::Config(format!("architecture mismatch at {}", dst.name)));
            }
            let copy = match scope {
                TransferScope::EncoderDecoder => !dst.name.starts_with("head."),
                TransferScope::EncoderOnly => dst.name.starts_with("encoder."),
            };
            if copy {
                dst.value.clone_from(&src.value);
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(config: NetConfig, seed: u64, named: Vec<(String, Vec<usize>, Vec<F>)>) -> Result<Self> {
        let mut model = Self::build(&config, seed)?;
        let mut by_name: std::collections::BTreeMap<String, (Vec<usize>, Vec<F>)> =
            named.into_iter().map(|(n, s, v)| (n, (s, v))).collect();
        for p in &mut model.params {
            let (shape, value) = by_name
                .remove(&p.name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {}", p.name)))?;
            if shape != p.shape || value.len() != p.value.len() {
                return Err(Error::format("checkpoint", format!("tensor {} has wrong shape", p.name)));
            }
            p.value = value;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::format("checkpoint", format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }
}

pub(crate) fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}
