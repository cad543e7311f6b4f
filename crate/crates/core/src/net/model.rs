//! ERF-PSPNet and its bilateral variant BiERF-PSPNet at configurable scale.
//!
//! ERF-PSPNet: downsampler ×2 → non-bottleneck-1D blocks → pyramid pooling →
//! 3×3 re-weighting conv → 1×1 classifier → bilinear upsample to the input.
//!
//! BiERF-PSPNet adds a full-resolution spatial path (three stride-2 3×3
//! convs) and runs the ERF trunk on a bilinearly downscaled copy of the
//! input; the two are attention-fused at the spatial path's 1/8 resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{
    AttentionFusion, Conv, Downsampler, DownsamplerCache, FusionCache, NonBottleneck1d,
    NonBottleneckCache, PyramidCache, PyramidPooling,
};
use super::layers::{bilinear_resize, bilinear_resize_backward, relu, relu_backward};
use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Erf,
    Bierf,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erf" => Ok(Variant::Erf),
            "bierf" => Ok(Variant::Bierf),
            other => Err(Error::InvalidArgument(format!("unknown network `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Erf => "erf",
            Variant::Bierf => "bierf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub variant: Variant,
    pub num_classes: usize,
    /// Context-path input size (the whole input for ERF).
    pub height: usize,
    pub width: usize,
    /// Full-resolution input size of the bilateral variant.
    pub large_height: usize,
    pub large_width: usize,
    /// Output channels of the two downsamplers.
    pub encoder_channels: [usize; 2],
    /// One non-bottleneck-1D block per entry.
    pub dilations: Vec<usize>,
    pub bins: Vec<usize>,
    pub head_channels: usize,
    pub spatial_channels: [usize; 3],
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            variant: Variant::Erf,
            num_classes: 9,
            height: 64,
            width: 128,
            large_height: 128,
            large_width: 256,
            encoder_channels: [16, 64],
            dilations: vec![1, 2, 4],
            bins: vec![1, 2, 4],
            head_channels: 64,
            spatial_channels: [16, 32, 64],
            init_seed: 0,
        }
    }
}

impl NetConfig {
    /// Spatial size of the images this network consumes.
    pub fn input_size(&self) -> (usize, usize) {
        match self.variant {
            Variant::Erf => (self.height, self.width),
            Variant::Bierf => (self.large_height, self.large_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return bad(format!(
                "input {}x{} must be a positive multiple of 4",
                self.height, self.width
            ));
        }
        let [c1, c2] = self.encoder_channels;
        if c1 <= 3 || c2 <= c1 {
            return bad(format!(
                "encoder channels {:?} must grow past the 3 input channels",
                self.encoder_channels
            ));
        }
        if self.bins.is_empty() || self.bins.contains(&0) || c2 / self.bins.len() == 0 {
            return bad(format!("invalid pyramid bins {:?}", self.bins));
        }
        if self.head_channels == 0 || self.dilations.contains(&0) {
            return bad("head channels and dilations must be positive".into());
        }
        if self.variant == Variant::Bierf {
            let (h1, w1) = (self.large_height, self.large_width);
            if h1 % 8 != 0 || w1 % 8 != 0 || h1 < self.height {
                return bad(format!(
                    "large input {h1}x{w1} must be a multiple of 8 and at least the context size"
                ));
            }
            // uniform scale factor: h1 / h == w1 / w
            if h1 * self.width != w1 * self.height {
                return bad(format!(
                    "bilateral scale must be uniform: {h1}x{w1} vs {}x{}",
                    self.height, self.width
                ));
            }
            if self.spatial_channels.contains(&0) {
                return bad("spatial channels must be positive".into());
            }
        }
        Ok(())
    }
}

/// Encoder + pyramid pooling + re-weighting conv, shared by both variants.
#[derive(Debug, Clone)]
struct Trunk {
    down1: Downsampler,
    down2: Downsampler,
    blocks: Vec<NonBottleneck1d>,
    ppm: PyramidPooling,
    reweight: Conv,
}

struct TrunkCache<T> {
    d1: DownsamplerCache<T>,
    r1: Tensor<T>,
    d2: DownsamplerCache<T>,
    r2: Tensor<T>,
    blocks: Vec<NonBottleneckCache<T>>,
    ppm: PyramidCache<T>,
    ppm_out: Tensor<T>,
    features: Tensor<T>,
}

impl Trunk {
    fn new<T: Real>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let [c1, c2] = cfg.encoder_channels;
        let down1 = Downsampler::new(store, "encoder.down1", 3, c1 - 3, rng)?;
        let down2 = Downsampler::new(store, "encoder.down2", c1, c2 - c1, rng)?;
        let blocks = cfg
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| NonBottleneck1d::new(store, &format!("encoder.nb{}", i + 1), c2, d, rng))
            .collect::<Result<_>>()?;
        let ppm = PyramidPooling::new(store, "decoder.ppm", c2, &cfg.bins, rng)?;
        let ppm_out = PyramidPooling::output_channels(c2, cfg.bins.len());
        let reweight = Conv::new(store, "decoder.reweight", (3, 3), ppm_out, cfg.head_channels, 1, 1, rng)?;
        Ok(Trunk {
            down1,
            down2,
            blocks,
            ppm,
            reweight,
        })
    }

    fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<(Tensor<T>, TrunkCache<T>)> {
        let (y1, d1) = self.down1.forward(p, x)?;
        let r1 = relu(&y1);
        let (y2, d2) = self.down2.forward(p, &r1)?;
        let r2 = relu(&y2);
        let mut h = r2.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(p, &h)?;
            blocks.push(cache);
            h = y;
        }
        let (ppm_out, ppm) = self.ppm.forward(p, &h)?;
        let features = relu(&self.reweight.forward(p, &ppm_out)?);
        Ok((
            features.clone(),
            TrunkCache {
                d1,
                r1,
                d2,
                r2,
                blocks,
                ppm,
                ppm_out,
                features,
            },
        ))
    }

    fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &TrunkCache<T>,
        dfeatures: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let dz = relu_backward(&cache.features, dfeatures);
        let dppm = self.reweight.backward(p, &cache.ppm_out, &dz, grads)?;
        let mut dh = self.ppm.backward(p, &cache.ppm, &dppm, grads)?;
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = block.backward(p, bc, &dh, grads)?;
        }
        let dr1 = self.down2.backward(p, &cache.d2, &relu_backward(&cache.r2, &dh), grads)?;
        self.down1.backward(p, &cache.d1, &relu_backward(&cache.r1, &dr1), grads)
    }
}

#[derive(Debug, Clone)]
struct SpatialPath {
    convs: [Conv; 3],
}

/// Forward intermediates needed by [`Network::backward`].
pub struct NetCache<T> {
    input_shape: Vec<usize>,
    trunk: TrunkCache<T>,
    context_input_shape: Vec<usize>,
    bilateral: Option<BilateralCache<T>>,
    head_input: Tensor<T>,
    small_logits_shape: Vec<usize>,
}

struct BilateralCache<T> {
    /// Inputs of the three spatial convs; the last entry is the path output.
    spatial: Vec<Tensor<T>>,
    fusion: FusionCache<T>,
}

/// A network variant together with its parameters.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetConfig,
    params: ParamStore<T>,
    trunk: Trunk,
    spatial: Option<SpatialPath>,
    fusion: Option<AttentionFusion>,
    classifier: Conv,
}

impl<T: Real> Network<T> {
    /// Builds the network with parameters drawn from `config.init_seed`.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&config, &mut store, &mut rng)?;
        let (spatial, fusion) = match config.variant {
            Variant::Erf => (None, None),
            Variant::Bierf => {
                let [s1, s2, s3] = config.spatial_channels;
                let convs = [
                    Conv::new(&mut store, "spatial.conv1", (3, 3), 3, s1, 2, 1, &mut rng)?,
                    Conv::new(&mut store, "spatial.conv2", (3, 3), s1, s2, 2, 1, &mut rng)?,
                    Conv::new(&mut store, "spatial.conv3", (3, 3), s2, s3, 2, 1, &mut rng)?,
                ];
                let fusion = AttentionFusion::new(
                    &mut store,
                    "fusion",
                    s3 + config.head_channels,
                    config.head_channels,
                    &mut rng,
                )?;
                (Some(SpatialPath { convs }), Some(fusion))
            }
        };
        let classifier = Conv::new(
            &mut store,
            "classifier",
            (1, 1),
            config.head_channels,
            config.num_classes,
            1,
            1,
            &mut rng,
        )?;
        Ok(Network {
            config,
            params: store,
            trunk,
            spatial,
            fusion,
            classifier,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same architecture with parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            trunk: self.trunk.clone(),
            spatial: self.spatial.clone(),
            fusion: self.fusion.clone(),
            classifier: self.classifier.clone(),
        }
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        if image.shape().len() != 4 {
            return Err(Error::Shape(format!("expected NHWC image, got {:?}", image.shape())));
        }
        let (_, h, w, c) = image.dims4();
        if (h, w) != self.config.input_size() || c != 3 {
            return Err(Error::Shape(format!(
                "{} network expects {:?}x3 input, got {h}x{w}x{c}",
                self.config.variant,
                self.config.input_size()
            )));
        }
        Ok(())
    }

    /// Logits at the input resolution, `n × H × W × C`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<(Tensor<T>, NetCache<T>)> {
        self.check_input(image)?;
        let p = &self.params;
        let (_, h, w, _) = image.dims4();
        let context_input = match self.config.variant {
            Variant::Erf => image.clone(),
            Variant::Bierf => bilinear_resize(image, self.config.height, self.config.width),
        };
        let (features, trunk) = self.trunk.forward(p, &context_input)?;

        let (head_input, bilateral) = match (&self.spatial, &self.fusion) {
            (Some(sp), Some(fusion)) => {
                let mut acts = vec![image.clone()];
                for conv in &sp.convs {
                    let y = relu(&conv.forward(p, acts.last().expect("input"))?);
                    acts.push(y);
                }
                let (fused, fcache) = fusion.forward(p, acts.last().expect("spatial"), &features)?;
                (
                    relu(&fused),
                    Some(BilateralCache {
                        spatial: acts,
                        fusion: fcache,
                    }),
                )
            }
            _ => (features, None),
        };
        let small = self.classifier.forward(p, &head_input)?;
        let logits = bilinear_resize(&small, h, w);
        Ok((
            logits,
            NetCache {
                input_shape: image.shape().to_vec(),
                trunk,
                context_input_shape: context_input.shape().to_vec(),
                bilateral,
                head_input,
                small_logits_shape: small.shape().to_vec(),
            },
        ))
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(image)?.0)
    }

    /// Parameter gradients and the input gradient for `dlogits = ∂L/∂logits`.
    pub fn backward(&self, cache: &NetCache<T>, dlogits: &Tensor<T>) -> Result<(Grads<T>, Tensor<T>)> {
        let p = &self.params;
        let mut grads = p.zero_grads();
        let dsmall = bilinear_resize_backward(&cache.small_logits_shape, dlogits);
        let dhead = self.classifier.backward(p, &cache.head_input, &dsmall, &mut grads)?;

        let dimage = match (&self.spatial, &self.fusion, &cache.bilateral) {
            (Some(sp), Some(fusion), Some(bc)) => {
                let dfused = relu_backward(&cache.head_input, &dhead);
                let (mut ds, dfeat) = fusion.backward(p, &bc.fusion, &dfused, &mut grads)?;
                for (i, conv) in sp.convs.iter().enumerate().rev() {
                    let dz = relu_backward(&bc.spatial[i + 1], &ds);
                    ds = conv.backward(p, &bc.spatial[i], &dz, &mut grads)?;
                }
                let dctx = self.trunk.backward(p, &cache.trunk, &dfeat, &mut grads)?;
                let mut dimage = bilinear_resize_backward(&cache.input_shape, &dctx);
                dimage.add_assign(&ds);
                dimage
            }
            _ => {
                let dctx = self.trunk.backward(p, &cache.trunk, &dhead, &mut grads)?;
                debug_assert_eq!(cache.context_input_shape, cache.input_shape);
                dctx
            }
        };
        Ok((grads, dimage))
    }

    /// Context path alone (trunk + classifier on the downscaled input),
    /// upsampled straight to the input size.
    pub fn context_path_logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(image)?;
        let (_, h, w, _) = image.dims4();
        let ctx = bilinear_resize(image, self.config.height, self.config.width);
        let (features, _) = self.trunk.forward(&self.params, &ctx)?;
        let small = self.classifier.forward(&self.params, &features)?;
        Ok(bilinear_resize(&small, h, w))
    }

    /// Neutralizes the spatial path and makes the fusion pass the context
    /// features through unchanged (saturated gate, identity projection on the
    /// context channels). Only meaningful for the bilateral variant.
    pub fn neutralize_spatial_path(&mut self) -> Result<()> {
        let (Some(sp), Some(fusion)) = (&self.spatial, &self.fusion) else {
            return Err(Error::InvalidArgument("network has no spatial path".into()));
        };
        let sp = sp.clone();
        let fusion = fusion.clone();
        for conv in &sp.convs {
            self.params.get_mut(conv.weight).fill(T::zero());
            self.params.get_mut(conv.bias).fill(T::zero());
        }
        self.params.get_mut(fusion.gate.weight).fill(T::zero());
        self.params.get_mut(fusion.gate.bias).fill(T::lit(40.0));
        let s3 = self.config.spatial_channels[2];
        let head = self.config.head_channels;
        let proj = self.params.get_mut(fusion.proj.weight);
        proj.fill(T::zero());
        // weight layout [1, 1, s3 + head, head]; identity on the context rows
        for k in 0..head {
            proj.data_mut()[(s3 + k) * head + k] = T::one();
        }
        self.params.get_mut(fusion.proj.bias).fill(T::zero());
        Ok(())
    }
}
