//! Parameter-free layers on NHWC maps, each with its backward pass.

use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its *output* (or input; the sign pattern is shared).
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(dy.shape(), data).expect("relu grad shape")
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// 2×2, stride-2 max pooling. Returns the output and, per output element,
/// the flat input index it was taken from (first maximum wins).
pub fn max_pool2x2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (n, h, w, c) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, ho, wo, c]);
    let mut arg = vec![0usize; n * ho * wo * c];
    let xd = x.data();
    for b in 0..n {
        for oi in 0..ho {
            for oj in 0..wo {
                for ch in 0..c {
                    let mut best = ((b * h + 2 * oi) * w + 2 * oj) * c + ch;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oi + di) * w + 2 * oj + dj) * c + ch;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    let o = ((b * ho + oi) * wo + oj) * c + ch;
                    y.data_mut()[o] = xd[best];
                    arg[o] = best;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2x2_backward<T: Real>(input_shape: &[usize], arg: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&src, &g) in arg.iter().zip(dy.data()) {
        dx.data_mut()[src] += g;
    }
    dx
}

/// Pooling window `[start, end)` of bin `i` out of `bins` over `len` cells.
fn adaptive_window(i: usize, bins: usize, len: usize) -> (usize, usize) {
    let start = i * len / bins;
    let end = ((i + 1) * len).div_ceil(bins);
    (start, end)
}

/// Adaptive average pooling to `bins × bins` cells.
pub fn adaptive_avg_pool<T: Real>(x: &Tensor<T>, bins: usize) -> Tensor<T> {
    let (n, h, w, c) = x.dims4();
    let mut y = Tensor::zeros(&[n, bins, bins, c]);
    for b in 0..n {
        for bi in 0..bins {
            let (i0, i1) = adaptive_window(bi, bins, h);
            for bj in 0..bins {
                let (j0, j1) = adaptive_window(bj, bins, w);
                let inv = T::one() / T::lit(((i1 - i0) * (j1 - j0)) as f64);
                let o = ((b * bins + bi) * bins + bj) * c;
                for i in i0..i1 {
                    for j in j0..j1 {
                        let src = ((b * h + i) * w + j) * c;
                        for ch in 0..c {
                            let v = x.data()[src + ch];
                            y.data_mut()[o + ch] += v;
                        }
                    }
                }
                for v in &mut y.data_mut()[o..o + c] {
                    *v *= inv;
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward<T: Real>(input_shape: &[usize], bins: usize, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let (n, h, w, c) = dx.dims4();
    for b in 0..n {
        for bi in 0..bins {
            let (i0, i1) = adaptive_window(bi, bins, h);
            for bj in 0..bins {
                let (j0, j1) = adaptive_window(bj, bins, w);
                let inv = T::one() / T::lit(((i1 - i0) * (j1 - j0)) as f64);
                let o = ((b * bins + bi) * bins + bj) * c;
                for i in i0..i1 {
                    for j in j0..j1 {
                        let dst = ((b * h + i) * w + j) * c;
                        for ch in 0..c {
                            let g = dy.data()[o + ch] * inv;
                            dx.data_mut()[dst + ch] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Interpolation taps along one axis: `(lo, hi, w_lo, w_hi)` per output index.
fn bilinear_taps<T: Real>(input: usize, output: usize) -> Vec<(usize, usize, T, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            let frac = if hi == lo { 0.0 } else { frac };
            (lo, hi, T::lit(1.0 - frac), T::lit(frac))
        })
        .collect()
}

/// Bilinear resize, half-pixel centers (align-corners = false).
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, ho: usize, wo: usize) -> Tensor<T> {
    let (n, h, w, c) = x.dims4();
    if (h, w) == (ho, wo) {
        return x.clone();
    }
    let rows = bilinear_taps::<T>(h, ho);
    let cols = bilinear_taps::<T>(w, wo);
    let mut y = Tensor::zeros(&[n, ho, wo, c]);
    let xd = x.data();
    for b in 0..n {
        for (oi, &(i0, i1, wi0, wi1)) in rows.iter().enumerate() {
            for (oj, &(j0, j1, wj0, wj1)) in cols.iter().enumerate() {
                let o = ((b * ho + oi) * wo + oj) * c;
                let p00 = ((b * h + i0) * w + j0) * c;
                let p01 = ((b * h + i0) * w + j1) * c;
                let p10 = ((b * h + i1) * w + j0) * c;
                let p11 = ((b * h + i1) * w + j1) * c;
                for ch in 0..c {
                    let top = wj0 * xd[p00 + ch] + wj1 * xd[p01 + ch];
                    let bottom = wj0 * xd[p10 + ch] + wj1 * xd[p11 + ch];
                    y.data_mut()[o + ch] = wi0 * top + wi1 * bottom;
                }
            }
        }
    }
    y
}

pub fn bilinear_resize_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (n, ho, wo, c) = dy.dims4();
    let (h, w) = (input_shape[1], input_shape[2]);
    if (h, w) == (ho, wo) {
        return dy.clone();
    }
    let rows = bilinear_taps::<T>(h, ho);
    let cols = bilinear_taps::<T>(w, wo);
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for (oi, &(i0, i1, wi0, wi1)) in rows.iter().enumerate() {
            for (oj, &(j0, j1, wj0, wj1)) in cols.iter().enumerate() {
                let o = ((b * ho + oi) * wo + oj) * c;
                let taps = [
                    (((b * h + i0) * w + j0) * c, wi0 * wj0),
                    (((b * h + i0) * w + j1) * c, wi0 * wj1),
                    (((b * h + i1) * w + j0) * c, wi1 * wj0),
                    (((b * h + i1) * w + j1) * c, wi1 * wj1),
                ];
                for ch in 0..c {
                    let g = dy.data()[o + ch];
                    for &(p, wt) in &taps {
                        dx.data_mut()[p + ch] += wt * g;
                    }
                }
            }
        }
    }
    dx
}

/// Channel softmax per pixel, max-subtracted.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = *logits.shape().last().expect("softmax needs a channel axis");
    let mut out = logits.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let max = px.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Backward of [`softmax`] given its output `y`: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let c = *y.shape().last().expect("softmax needs a channel axis");
    let mut dx = Tensor::zeros(y.shape());
    for ((yp, gp), dp) in y
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        let dot = yp.iter().zip(gp).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        for ((d, &yv), &g) in dp.iter_mut().zip(yp).zip(gp) {
            *d = yv * (g - dot);
        }
    }
    dx
}
