//! Building blocks of the ERF-PSPNet family, each with an explicit backward.
//!
//! Blocks only hold [`ParamId`]s; parameter values live in a [`ParamStore`]
//! and gradients accumulate into a matching [`Grads`].

use rand_chacha::ChaCha8Rng;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, bilinear_resize, bilinear_resize_backward,
    max_pool2x2, max_pool2x2_backward, relu, relu_backward, sigmoid,
};
use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, split_channels, Real, Tensor};

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        (kh, kw): (usize, usize),
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (weight, bias) = store.add_conv(name, kh, kw, cin, cout, rng)?;
        Ok(Conv {
            weight,
            bias,
            geom: ConvGeom::new(kh, kw, stride, dilation),
        })
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, p.get(self.weight), p.get(self.bias), &self.geom)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, p.get(self.weight), &self.geom, dy)?;
        grads.accumulate(self.weight, &g.dw);
        grads.accumulate(self.bias, &g.db);
        Ok(g.dx)
    }

    pub fn out_channels<T: Real>(&self, p: &ParamStore<T>) -> usize {
        p.get(self.weight).shape()[3]
    }
}

/// Parallel stride-2 3×3 convolution and 2×2 max-pool, concatenated
/// `[conv, pool]` along channels.
#[derive(Debug, Clone)]
pub struct Downsampler {
    pub conv: Conv,
}

pub struct DownsamplerCache<T> {
    x: Tensor<T>,
    pool_arg: Vec<usize>,
    conv_channels: usize,
}

impl Downsampler {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        conv_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Downsampler {
            conv: Conv::new(store, &format!("{name}.conv"), (3, 3), cin, conv_out, 2, 1, rng)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, DownsamplerCache<T>)> {
        let (_, h, w, _) = x.dims4();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("downsampler needs even size, got {h}x{w}")));
        }
        let conv = self.conv.forward(p, x)?;
        let (pool, pool_arg) = max_pool2x2(x);
        let conv_channels = conv.dims4().3;
        let y = concat_channels(&conv, &pool)?;
        Ok((
            y,
            DownsamplerCache {
                x: x.clone(),
                pool_arg,
                conv_channels,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &DownsamplerCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let (dconv, dpool) = split_channels(dy, cache.conv_channels);
        let mut dx = self.conv.backward(p, &cache.x, &dconv, grads)?;
        dx.add_assign(&max_pool2x2_backward(cache.x.shape(), &cache.pool_arg, &dpool));
        Ok(dx)
    }
}

/// Factorized residual block: 3×1 → ReLU → 1×3 → ReLU → 3×1 (dilated) →
/// ReLU → 1×3 (dilated), identity skip, final ReLU.
#[derive(Debug, Clone)]
pub struct NonBottleneck1d {
    pub convs: [Conv; 4],
}

pub struct NonBottleneckCache<T> {
    x: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
    a3: Tensor<T>,
    y: Tensor<T>,
}

impl NonBottleneck1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c = channels;
        Ok(NonBottleneck1d {
            convs: [
                Conv::new(store, &format!("{name}.conv3x1_1"), (3, 1), c, c, 1, 1, rng)?,
                Conv::new(store, &format!("{name}.conv1x3_1"), (1, 3), c, c, 1, 1, rng)?,
                Conv::new(store, &format!("{name}.conv3x1_2"), (3, 1), c, c, 1, dilation, rng)?,
                Conv::new(store, &format!("{name}.conv1x3_2"), (1, 3), c, c, 1, dilation, rng)?,
            ],
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, NonBottleneckCache<T>)> {
        let a1 = relu(&self.convs[0].forward(p, x)?);
        let a2 = relu(&self.convs[1].forward(p, &a1)?);
        let a3 = relu(&self.convs[2].forward(p, &a2)?);
        let mut z = self.convs[3].forward(p, &a3)?;
        if z.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "residual branch {:?} vs input {:?}",
                z.shape(),
                x.shape()
            )));
        }
        z.add_assign(x);
        let y = relu(&z);
        Ok((
            y.clone(),
            NonBottleneckCache {
                x: x.clone(),
                a1,
                a2,
                a3,
                y,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &NonBottleneckCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let dz = relu_backward(&cache.y, dy);
        let da3 = self.convs[3].backward(p, &cache.a3, &dz, grads)?;
        let da2 = self.convs[2].backward(p, &cache.a2, &relu_backward(&cache.a3, &da3), grads)?;
        let da1 = self.convs[1].backward(p, &cache.a1, &relu_backward(&cache.a2, &da2), grads)?;
        let mut dx = self.convs[0].backward(p, &cache.x, &relu_backward(&cache.a1, &da1), grads)?;
        dx.add_assign(&dz);
        Ok(dx)
    }
}

/// Multi-bin context pooling: per bin, adaptive average pool → 1×1 conv to
/// `c_in / |bins|` channels → bilinear upsample; all concatenated after the input.
#[derive(Debug, Clone)]
pub struct PyramidPooling {
    pub bins: Vec<usize>,
    pub convs: Vec<Conv>,
}

pub struct PyramidCache<T> {
    x: Tensor<T>,
    pooled: Vec<Tensor<T>>,
    branch_shapes: Vec<Vec<usize>>,
}

impl PyramidPooling {
    pub fn branch_channels(cin: usize, bins: usize) -> usize {
        cin / bins
    }

    pub fn output_channels(cin: usize, bins: usize) -> usize {
        cin + bins * Self::branch_channels(cin, bins)
    }

    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        bins: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let branch = Self::branch_channels(cin, bins.len());
        if bins.is_empty() || branch == 0 || bins.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "pyramid pooling with bins {bins:?} over {cin} channels"
            )));
        }
        let convs = bins
            .iter()
            .map(|b| Conv::new(store, &format!("{name}.bin{b}"), (1, 1), cin, branch, 1, 1, rng))
            .collect::<Result<_>>()?;
        Ok(PyramidPooling {
            bins: bins.to_vec(),
            convs,
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, PyramidCache<T>)> {
        let (_, h, w, _) = x.dims4();
        let mut out = x.clone();
        let mut pooled = Vec::with_capacity(self.bins.len());
        let mut branch_shapes = Vec::with_capacity(self.bins.len());
        for (&bin, conv) in self.bins.iter().zip(&self.convs) {
            let pool = adaptive_avg_pool(x, bin);
            let z = conv.forward(p, &pool)?;
            branch_shapes.push(z.shape().to_vec());
            out = concat_channels(&out, &bilinear_resize(&z, h, w))?;
            pooled.push(pool);
        }
        Ok((
            out,
            PyramidCache {
                x: x.clone(),
                pooled,
                branch_shapes,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &PyramidCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let cin = cache.x.dims4().3;
        let (mut dx, mut rest) = split_channels(dy, cin);
        for (i, conv) in self.convs.iter().enumerate() {
            let branch = cache.branch_shapes[i][3];
            let (dup, tail) = split_channels(&rest, branch);
            rest = tail;
            let dz = bilinear_resize_backward(&cache.branch_shapes[i], &dup);
            let dpool = conv.backward(p, &cache.pooled[i], &dz, grads)?;
            dx.add_assign(&adaptive_avg_pool_backward(cache.x.shape(), self.bins[i], &dpool));
        }
        Ok(dx)
    }
}

/// Fuses a spatial-detail map with a (resized) context map:
/// concat → global average pool → 1×1 conv → sigmoid channel gate →
/// gated concat → 1×1 projection.
#[derive(Debug, Clone)]
pub struct AttentionFusion {
    pub gate: Conv,
    pub proj: Conv,
}

pub struct FusionCache<T> {
    context_shape: Vec<usize>,
    spatial_channels: usize,
    cat: Tensor<T>,
    pooled: Tensor<T>,
    gate: Vec<T>,
    gated: Tensor<T>,
}

impl AttentionFusion {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cat_channels: usize,
        out_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let gate = Conv::new(store, &format!("{name}.gate"), (1, 1), cat_channels, cat_channels, 1, 1, rng)?;
        store.set_decay(gate.weight, false);
        let proj = Conv::new(store, &format!("{name}.proj"), (1, 1), cat_channels, out_channels, 1, 1, rng)?;
        Ok(AttentionFusion { gate, proj })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        spatial: &Tensor<T>,
        context: &Tensor<T>,
    ) -> Result<(Tensor<T>, FusionCache<T>)> {
        let (n, h, w, cs) = spatial.dims4();
        let ctx = bilinear_resize(context, h, w);
        let cat = concat_channels(spatial, &ctx)?;
        let c = cat.dims4().3;
        let pooled = adaptive_avg_pool(&cat, 1);
        let logits = self.gate.forward(p, &pooled)?;
        let gate: Vec<T> = logits.data().iter().map(|&v| sigmoid(v)).collect();
        let mut gated = cat.clone();
        for b in 0..n {
            let g = &gate[b * c..(b + 1) * c];
            for px in gated.data_mut()[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                for (v, &a) in px.iter_mut().zip(g) {
                    *v *= a;
                }
            }
        }
        let out = self.proj.forward(p, &gated)?;
        Ok((
            out,
            FusionCache {
                context_shape: context.shape().to_vec(),
                spatial_channels: cs,
                cat,
                pooled,
                gate,
                gated,
            },
        ))
    }

    /// Returns `(d_spatial, d_context)`.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &FusionCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, h, w, c) = cache.cat.dims4();
        let dgated = self.proj.backward(p, &cache.gated, dy, grads)?;
        let mut dcat = dgated.clone();
        let mut dgate_logit = vec![T::zero(); n * c];
        for b in 0..n {
            let g = &cache.gate[b * c..(b + 1) * c];
            let range = b * h * w * c..(b + 1) * h * w * c;
            let da = &mut dgate_logit[b * c..(b + 1) * c];
            for ((dpx, gpx), xpx) in dcat.data_mut()[range.clone()]
                .chunks_exact_mut(c)
                .zip(dgated.data()[range.clone()].chunks_exact(c))
                .zip(cache.cat.data()[range].chunks_exact(c))
            {
                for k in 0..c {
                    dpx[k] = gpx[k] * g[k];
                    da[k] += gpx[k] * xpx[k];
                }
            }
            for (d, &a) in da.iter_mut().zip(g) {
                *d *= a * (T::one() - a);
            }
        }
        let dz = Tensor::from_vec(&[n, 1, 1, c], dgate_logit)?;
        let dpooled = self.gate.backward(p, &cache.pooled, &dz, grads)?;
        dcat.add_assign(&adaptive_avg_pool_backward(cache.cat.shape(), 1, &dpooled));
        let (ds, dctx) = split_channels(&dcat, cache.spatial_channels);
        let dc = bilinear_resize_backward(&cache.context_shape, &dctx);
        Ok((ds, dc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn downsampler_shapes_and_pool_half() {
        let mut store = ParamStore::<f64>::new();
        let d = Downsampler::new(&mut store, "d", 3, 13, &mut rng()).unwrap();
        let x = Tensor::full(&[1, 8, 8, 3], 0.7);
        let (y, _) = d.forward(&store, &x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 16]);
        for px in y.data().chunks_exact(16) {
            assert!(px[13..].iter().all(|&v| v == 0.7));
        }
        assert!(d.forward(&store, &Tensor::zeros(&[1, 7, 8, 3])).is_err());
    }

    #[test]
    fn non_bottleneck_zero_weights_is_relu() {
        let mut store = ParamStore::<f64>::new();
        let nb = NonBottleneck1d::new(&mut store, "nb", 4, 2, &mut rng()).unwrap();
        for prm in store.params_mut() {
            prm.value.fill(0.0);
        }
        let x = Tensor::from_vec(&[1, 3, 3, 4], (0..36).map(|v| v as f64 / 10.0 - 1.0).collect()).unwrap();
        let (y, _) = nb.forward(&store, &x).unwrap();
        assert_eq!(y, relu(&x));
    }

    #[test]
    fn non_bottleneck_preserves_shape_for_any_dilation() {
        for dil in [1, 2, 4, 8] {
            let mut store = ParamStore::<f64>::new();
            let nb = NonBottleneck1d::new(&mut store, "nb", 3, dil, &mut rng()).unwrap();
            let x = Tensor::full(&[2, 5, 6, 3], 0.1);
            assert_eq!(nb.forward(&store, &x).unwrap().0.shape(), x.shape());
        }
    }

    #[test]
    fn pyramid_pooling_constant_input() {
        let mut store = ParamStore::<f64>::new();
        let ppm = PyramidPooling::new(&mut store, "ppm", 6, &[1, 2, 4], &mut rng()).unwrap();
        let x = Tensor::full(&[1, 8, 8, 6], 0.5);
        let (y, _) = ppm.forward(&store, &x).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8, 12]);
        let first = y.data()[..12].to_vec();
        for px in y.data().chunks_exact(12) {
            for (a, b) in px.iter().zip(&first) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fusion_saturated_gate_is_plain_projection() {
        let mut store = ParamStore::<f64>::new();
        let fusion = AttentionFusion::new(&mut store, "ffm", 5, 4, &mut rng()).unwrap();
        store.get_mut(fusion.gate.weight).fill(0.0);
        store.get_mut(fusion.gate.bias).fill(40.0);
        let s = Tensor::from_vec(&[1, 4, 4, 2], (0..32).map(|v| (v as f64).sin()).collect()).unwrap();
        let c = Tensor::from_vec(&[1, 2, 2, 3], (0..12).map(|v| (v as f64).cos()).collect()).unwrap();
        let (fused, _) = fusion.forward(&store, &s, &c).unwrap();
        assert_eq!(fused.shape(), &[1, 4, 4, 4]);
        let cat = concat_channels(&s, &bilinear_resize(&c, 4, 4)).unwrap();
        let plain = fusion.proj.forward(&store, &cat).unwrap();
        for (a, b) in fused.data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
