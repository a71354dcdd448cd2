//! Isotropic blocks, the network that stacks them, and the pixel head.
//!
//! Every block maps an `n × d` representation to one of the same shape using
//! two residual sub-layers, each behind a channel-wise LayerNorm:
//!
//! * conv: `U = X + GELU(Conv(LN(X)))`, `Y = U + GELU(Conv(LN(U)))`
//! * mixer: channel MLP `U = X + W₂ GELU(W₁ LN(X))`, then token MLP
//!   `Y = (Uᵀ + W₄ GELU(W₃ LN(U)ᵀ))ᵀ`
//! * transformer: `U = X + MHA(LN(X))`, `Y = U + W₂ GELU(W₁ LN(U))`
//!
//! Tokens are stored one per row in raster order. Conv blocks operate on the
//! channel-major `d × h × w` view of the same data.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encodings::{
    EncoderParams, EncodingKind, EncodingSpec, FourierBasis, InputEncoder, CHANNELS, EMBEDDING_STD,
    LEVELS,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{LayerNorm, Linear, MultiHeadAttention};
use crate::param::{Init, ParamId, ParamStore};
use crate::rng::{RngStreams, Stream};
use crate::tensor::{Scalar, Tensor};

/// Width of the per-token logit vector: 256 levels for each of 3 channels.
pub const HEAD_OUTPUTS: usize = CHANNELS * LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Conv,
    Mixer,
    Transformer,
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockType::Conv => "conv",
            BlockType::Mixer => "mixer",
            BlockType::Transformer => "transformer",
        })
    }
}

impl FromStr for BlockType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" | "convolutional" => Ok(BlockType::Conv),
            "mixer" => Ok(BlockType::Mixer),
            "transformer" => Ok(BlockType::Transformer),
            _ => Err(Error::Config(format!(
                "unknown block type {s:?} (conv, mixer, transformer)"
            ))),
        }
    }
}

/// Architecture of an [`IsotropicNetwork`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub block_type: BlockType,
    pub encoding: EncodingKind,
    pub depth: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub kernel: usize,
    pub expansion: usize,
    pub positional_embedding: bool,
    pub rff_k: usize,
    pub rff_sigma: f64,
    /// Side of the square input image.
    pub image_size: usize,
    pub bias: bool,
    pub attention_output_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            block_type: BlockType::Conv,
            encoding: EncodingKind::Pix2vec,
            depth: 1,
            latent_dim: 128,
            heads: 1,
            kernel: 3,
            expansion: 1,
            positional_embedding: false,
            rff_k: 64,
            rff_sigma: 1.0,
            image_size: 32,
            bias: true,
            attention_output_projection: true,
        }
    }
}

impl ModelConfig {
    pub fn tokens(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn encoding_spec(&self) -> EncodingSpec {
        EncodingSpec {
            kind: self.encoding,
            latent_dim: self.latent_dim,
            rff_k: self.rff_k,
            rff_sigma: self.rff_sigma,
            rff_range: [0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.depth == 0 {
            return fail("depth", "at least one block is required".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim", "must be positive".into());
        }
        if self.image_size == 0 {
            return fail("image_size", "must be positive".into());
        }
        if self.expansion == 0 {
            return fail("expansion", "must be positive".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return fail("kernel", format!("must be odd, got {}", self.kernel));
        }
        if self.heads == 0 || self.latent_dim % self.heads != 0 {
            return fail(
                "heads",
                format!(
                    "{} does not divide latent_dim {}",
                    self.heads, self.latent_dim
                ),
            );
        }
        self.encoding_spec().validate()
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Conv {
            weight: store.add_init(
                format!("{name}.weight"),
                &[d, d, k, k],
                Init::FanIn(d * k * k),
                rng,
            )?,
            bias: if bias {
                Some(store.add_init(format!("{name}.bias"), &[d], Init::Zeros, rng)?)
            } else {
                None
            },
        })
    }

    fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub norm1: LayerNorm,
    pub conv1: Conv,
    pub norm2: LayerNorm,
    pub conv2: Conv,
}

impl ConvBlock {
    /// `x: d × h × w` → `d × h × w`.
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let u = self.sublayer(g, store, x, &self.norm1, &self.conv1)?;
        self.sublayer(g, store, u, &self.norm2, &self.conv2)
    }

    fn sublayer<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
        norm: &LayerNorm,
        conv: &Conv,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let [d, h, w] = shape[..] else {
            return Err(Error::Input(format!(
                "conv block expects d×h×w, got {shape:?}"
            )));
        };
        let flat = g.reshape(x, &[d, h * w])?;
        let tokens = g.transpose(flat)?;
        let normed = norm.forward(g, store, tokens)?;
        let back = g.transpose(normed)?;
        let planes = g.reshape(back, &[d, h, w])?;
        let conv = conv.forward(g, store, planes)?;
        let act = g.gelu(conv);
        g.add(x, act)
    }
}

#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub norm1: LayerNorm,
    pub channel_fc1: Linear,
    pub channel_fc2: Linear,
    pub norm2: LayerNorm,
    pub token_fc1: Linear,
    pub token_fc2: Linear,
}

impl MixerBlock {
    /// `x: n × d` → `n × d`.
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let (n, _) = g.value(x).dims2()?;
        if n != self.token_fc1.fan_in {
            return Err(Error::Config(format!(
                "mixer built for {} tokens, got {n}",
                self.token_fc1.fan_in
            )));
        }
        let h = self.norm1.forward(g, store, x)?;
        let h = self.channel_fc1.forward(g, store, h)?;
        let h = g.gelu(h);
        let h = self.channel_fc2.forward(g, store, h)?;
        let u = g.add(x, h)?;

        let t = self.norm2.forward(g, store, u)?;
        let t = g.transpose(t)?;
        let t = self.token_fc1.forward(g, store, t)?;
        let t = g.gelu(t);
        let t = self.token_fc2.forward(g, store, t)?;
        let t = g.transpose(t)?;
        g.add(u, t)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    /// `x: n × d` → `n × d`.
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let h = self.norm1.forward(g, store, x)?;
        let h = self.attention.forward(g, store, h)?;
        let u = g.add(x, h)?;
        let m = self.norm2.forward(g, store, u)?;
        let m = self.fc1.forward(g, store, m)?;
        let m = g.gelu(m);
        let m = self.fc2.forward(g, store, m)?;
        g.add(u, m)
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Conv(ConvBlock),
    Mixer(MixerBlock),
    Transformer(TransformerBlock),
}

impl Block {
    /// Registers a block's parameters under `prefix`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.latent_dim;
        let n = cfg.tokens();
        let e = cfg.expansion;
        let bias = cfg.bias;
        let ln = |store: &mut ParamStore<T>, name: &str| {
            LayerNorm::new(store, &format!("{prefix}.{name}"), d)
        };
        Ok(match cfg.block_type {
            BlockType::Conv => Block::Conv(ConvBlock {
                norm1: ln(store, "norm1")?,
                conv1: Conv::new(store, &format!("{prefix}.conv1"), d, cfg.kernel, bias, rng)?,
                norm2: ln(store, "norm2")?,
                conv2: Conv::new(store, &format!("{prefix}.conv2"), d, cfg.kernel, bias, rng)?,
            }),
            BlockType::Mixer => Block::Mixer(MixerBlock {
                norm1: ln(store, "norm1")?,
                channel_fc1: Linear::new(
                    store,
                    &format!("{prefix}.channel_fc1"),
                    d,
                    e * d,
                    bias,
                    rng,
                )?,
                channel_fc2: Linear::new(
                    store,
                    &format!("{prefix}.channel_fc2"),
                    e * d,
                    d,
                    bias,
                    rng,
                )?,
                norm2: ln(store, "norm2")?,
                token_fc1: Linear::new(store, &format!("{prefix}.token_fc1"), n, e * n, bias, rng)?,
                token_fc2: Linear::new(store, &format!("{prefix}.token_fc2"), e * n, n, bias, rng)?,
            }),
            BlockType::Transformer => Block::Transformer(TransformerBlock {
                norm1: ln(store, "norm1")?,
                attention: MultiHeadAttention::new(
                    store,
                    &format!("{prefix}.attention"),
                    d,
                    cfg.heads,
                    bias,
                    cfg.attention_output_projection,
                    rng,
                )?,
                norm2: ln(store, "norm2")?,
                fc1: Linear::new(store, &format!("{prefix}.fc1"), d, e * d, bias, rng)?,
                fc2: Linear::new(store, &format!("{prefix}.fc2"), e * d, d, bias, rng)?,
            }),
        })
    }

    /// Applies the block to `n × d` tokens of a `side × side` image.
    pub fn forward_tokens<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
        side: usize,
    ) -> Result<Var> {
        match self {
            Block::Conv(b) => {
                let (n, d) = g.value(x).dims2()?;
                if n != side * side {
                    return Err(Error::dim("conv block tokens", &[n, d], &[side, side]));
                }
                let planes = g.transpose(x)?;
                let planes = g.reshape(planes, &[d, side, side])?;
                let y = b.forward(g, store, planes)?;
                let y = g.reshape(y, &[d, n])?;
                g.transpose(y)
            }
            Block::Mixer(b) => b.forward(g, store, x),
            Block::Transformer(b) => b.forward(g, store, x),
        }
    }

    pub fn num_params<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        let count = |id: ParamId| store.value(id).numel();
        match self {
            Block::Conv(b) => {
                let conv = |c: &Conv| count(c.weight) + c.bias.map_or(0, count);
                b.norm1.num_params() + conv(&b.conv1) + b.norm2.num_params() + conv(&b.conv2)
            }
            Block::Mixer(b) => {
                b.norm1.num_params()
                    + b.channel_fc1.num_params()
                    + b.channel_fc2.num_params()
                    + b.norm2.num_params()
                    + b.token_fc1.num_params()
                    + b.token_fc2.num_params()
            }
            Block::Transformer(b) => {
                b.norm1.num_params()
                    + b.attention.num_params()
                    + b.norm2.num_params()
                    + b.fc1.num_params()
                    + b.fc2.num_params()
            }
        }
    }
}

/// Final LayerNorm and projection to per-channel byte logits.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub norm: LayerNorm,
    pub projection: Linear,
}

impl OutputHead {
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let h = self.norm.forward(g, store, x)?;
        self.projection.forward(g, store, h)
    }

    pub fn num_params(&self) -> usize {
        self.norm.num_params() + self.projection.num_params()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCounts {
    pub encoder: usize,
    pub positional: usize,
    pub blocks: Vec<usize>,
    pub head: usize,
}

impl ParameterCounts {
    pub fn blocks_total(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.encoder + self.positional + self.blocks_total() + self.head
    }
}

/// Result of a full forward pass on plain tensors.
#[derive(Clone, Debug)]
pub struct NetworkOutput<T> {
    /// `n × 3 × 256`.
    pub logits: Tensor<T>,
    /// `L + 1` tensors of shape `n × d`; entry 0 is the encoded input.
    pub activations: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct IsotropicNetwork<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: InputEncoder<T>,
    pub positional: Option<ParamId>,
    pub blocks: Vec<Block>,
    pub head: OutputHead,
}

impl<T: Scalar> IsotropicNetwork<T> {
    /// Builds a network with parameters drawn from the init stream and the
    /// Fourier basis (if any) from its own stream.
    pub fn new(config: &ModelConfig, streams: &RngStreams) -> Result<Self> {
        let mut init = streams.stream(Stream::Init);
        let mut basis = streams.stream(Stream::FourierBasis);
        Self::with_rngs(config, &mut init, &mut basis)
    }

    pub fn with_rngs<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        config: &ModelConfig,
        init: &mut R1,
        basis: &mut R2,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let mut store = ParamStore::new();
        let encoder = InputEncoder::new(
            &mut store,
            &config.encoding_spec(),
            config.bias,
            init,
            basis,
        )?;
        let positional = if config.positional_embedding {
            Some(store.add_init(
                "positional",
                &[config.tokens(), d],
                Init::Normal { std: EMBEDDING_STD },
                init,
            )?)
        } else {
            None
        };
        let blocks = (0..config.depth)
            .map(|i| Block::new(&mut store, &format!("blocks.{i}"), config, init))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut store, "head.norm", d)?;
        // small head weights keep the initial logits near uniform
        let weight = store.add_init(
            "head.projection.weight",
            &[d, HEAD_OUTPUTS],
            Init::Normal { std: EMBEDDING_STD },
            init,
        )?;
        let bias = if config.bias {
            Some(store.add_init("head.projection.bias", &[HEAD_OUTPUTS], Init::Zeros, init)?)
        } else {
            None
        };
        let head = OutputHead {
            norm,
            projection: Linear {
                weight,
                bias,
                fan_in: d,
                fan_out: HEAD_OUTPUTS,
            },
        };
        Ok(IsotropicNetwork {
            config: config.clone(),
            store,
            encoder,
            positional,
            blocks,
            head,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Records the encoder and all blocks; returns the `L + 1` activations.
    pub fn forward_activations<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        image: &[u8],
        mask: &[usize],
    ) -> Result<Vec<Var>> {
        self.forward_activations_with(&self.store, g, image, mask)
    }

    /// [`Self::forward_activations`] reading parameter values from `store`,
    /// which must share this network's layout (e.g. a perturbed copy).
    pub fn forward_activations_with<'a>(
        &self,
        store: &'a ParamStore<T>,
        g: &mut Graph<'a, T>,
        image: &[u8],
        mask: &[usize],
    ) -> Result<Vec<Var>> {
        let n = self.config.tokens();
        if image.len() != CHANNELS * n {
            return Err(Error::Input(format!(
                "expected a 3×{s}×{s} image ({} bytes), got {} bytes",
                CHANNELS * n,
                image.len(),
                s = self.config.image_size
            )));
        }
        let mut x = self.encoder.encode_image(g, store, image, mask)?;
        if let Some(pos) = self.positional {
            let p = g.param(store, pos);
            x = g.add(x, p)?;
        }
        let mut acts = Vec::with_capacity(self.blocks.len() + 1);
        acts.push(x);
        for block in &self.blocks {
            x = block.forward_tokens(g, store, x, self.config.image_size)?;
            acts.push(x);
        }
        Ok(acts)
    }

    /// Head logits (`rows × 768`) for the listed token rows of `x`, or for
    /// every token when `rows` is `None`.
    pub fn head_logits<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        x: Var,
        rows: Option<&[usize]>,
    ) -> Result<Var> {
        self.head_logits_with(&self.store, g, x, rows)
    }

    pub fn head_logits_with<'a>(
        &self,
        store: &'a ParamStore<T>,
        g: &mut Graph<'a, T>,
        x: Var,
        rows: Option<&[usize]>,
    ) -> Result<Var> {
        let x = match rows {
            Some(rows) => g.gather_rows(x, rows)?,
            None => x,
        };
        self.head.forward(g, store, x)
    }

    pub fn network_forward(&self, image: &[u8], mask: &[usize]) -> Result<NetworkOutput<T>> {
        let mut g = Graph::new();
        let acts = self.forward_activations(&mut g, image, mask)?;
        let logits = self.head_logits(&mut g, *acts.last().expect("depth ≥ 1"), None)?;
        let n = self.config.tokens();
        Ok(NetworkOutput {
            logits: g.value(logits).clone().reshape(&[n, CHANNELS, LEVELS])?,
            activations: acts.iter().map(|&a| g.value(a).clone()).collect(),
        })
    }

    pub fn count_parameters(&self) -> ParameterCounts {
        ParameterCounts {
            encoder: self.encoder.num_params(),
            positional: self.positional.map_or(0, |p| self.store.value(p).numel()),
            blocks: self
                .blocks
                .iter()
                .map(|b| b.num_params(&self.store))
                .collect(),
            head: self.head.num_params(),
        }
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> IsotropicNetwork<U> {
        let encoder = InputEncoder {
            spec: self.encoder.spec.clone(),
            mask_embedding: self.encoder.mask_embedding,
            params: match &self.encoder.params {
                EncoderParams::Pix2vec { tables } => EncoderParams::Pix2vec { tables: *tables },
                EncoderParams::Continuous { projection } => EncoderParams::Continuous {
                    projection: projection.clone(),
                },
                EncoderParams::Rff { basis, projection } => EncoderParams::Rff {
                    basis: FourierBasis::from_betas(
                        basis.all_betas().to_vec(),
                        basis.k(),
                        basis.range(),
                    )
                    .expect("valid basis"),
                    projection: projection.clone(),
                },
            },
        };
        IsotropicNetwork {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder,
            positional: self.positional,
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(block_type: BlockType, encoding: EncodingKind) -> ModelConfig {
        ModelConfig {
            block_type,
            encoding,
            depth: 2,
            latent_dim: 8,
            heads: 2,
            image_size: 4,
            rff_k: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn conv_block_parameter_count_at_width_128() {
        let cfg = ModelConfig {
            depth: 1,
            ..ModelConfig::default()
        };
        let net = IsotropicNetwork::<f32>::new(&cfg, &RngStreams::new(0)).unwrap();
        assert_eq!(net.count_parameters().blocks, vec![295_680]);
    }

    #[test]
    fn transformer_block_parameter_count_at_width_128() {
        let cfg = ModelConfig {
            block_type: BlockType::Transformer,
            depth: 1,
            ..ModelConfig::default()
        };
        let net = IsotropicNetwork::<f32>::new(&cfg, &RngStreams::new(0)).unwrap();
        // 4·d² + 4·d for Q, K, V, O; 2·d² + 2·d for the MLP; 2·2·d LayerNorm
        let d = 128;
        assert_eq!(
            net.count_parameters().blocks,
            vec![6 * d * d + 6 * d + 4 * d]
        );
    }

    #[test]
    fn doubling_depth_doubles_block_parameters() {
        for bt in [BlockType::Conv, BlockType::Mixer, BlockType::Transformer] {
            let cfg = small(bt, EncodingKind::Pix2vec);
            let deeper = ModelConfig {
                depth: 4,
                ..cfg.clone()
            };
            let a = IsotropicNetwork::<f32>::new(&cfg, &RngStreams::new(1))
                .unwrap()
                .count_parameters();
            let b = IsotropicNetwork::<f32>::new(&deeper, &RngStreams::new(1))
                .unwrap()
                .count_parameters();
            assert_eq!(2 * a.blocks_total(), b.blocks_total());
        }
    }

    #[test]
    fn counts_match_store_size() {
        for bt in [BlockType::Conv, BlockType::Mixer, BlockType::Transformer] {
            for enc in [
                EncodingKind::Pix2vec,
                EncodingKind::Rff,
                EncodingKind::Continuous,
            ] {
                let cfg = ModelConfig {
                    positional_embedding: true,
                    ..small(bt, enc)
                };
                let net = IsotropicNetwork::<f32>::new(&cfg, &RngStreams::new(2)).unwrap();
                assert_eq!(net.count_parameters().total(), net.store.num_scalars());
            }
        }
    }

    #[test]
    fn forward_shapes() {
        for bt in [BlockType::Conv, BlockType::Mixer, BlockType::Transformer] {
            let cfg = small(bt, EncodingKind::Continuous);
            let net = IsotropicNetwork::<f64>::new(&cfg, &RngStreams::new(3)).unwrap();
            let img: Vec<u8> = (0..48).map(|i| (i * 37 % 256) as u8).collect();
            let out = net.network_forward(&img, &[1, 5]).unwrap();
            assert_eq!(out.activations.len(), 3);
            assert!(out.activations.iter().all(|a| a.shape() == [16, 8]));
            assert_eq!(out.logits.shape(), &[16, 3, 256]);
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let bad = ModelConfig {
            kernel: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("kernel"));
        let bad = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("heads"));
        let bad = ModelConfig {
            depth: 0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("depth"));
    }
}
