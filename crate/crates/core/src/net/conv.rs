//! 2-D cross-correlation on NHWC maps, lowered to im2col + GEMM.
//!
//! Weights are laid out `[kh, kw, c_in, c_out]`, so a row of the im2col
//! matrix (one output pixel) times the weight matrix gives that pixel's
//! output channels directly.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Kernel geometry with "same" zero padding: `pad = dilation · (k − 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(kh: usize, kw: usize, stride: usize, dilation: usize) -> Self {
        ConvGeom {
            kh,
            kw,
            stride,
            dilation,
        }
    }

    pub fn pointwise() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub fn pad(&self) -> (usize, usize) {
        (
            self.dilation * (self.kh - 1) / 2,
            self.dilation * (self.kw - 1) / 2,
        )
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.pad();
        let eh = self.dilation * (self.kh - 1) + 1;
        let ew = self.dilation * (self.kw - 1) + 1;
        if self.stride == 0 || h + 2 * ph < eh || w + 2 * pw < ew {
            return Err(Error::Shape(format!(
                "kernel {}x{} (dilation {}, stride {}) does not fit a {h}x{w} input",
                self.kh, self.kw, self.dilation, self.stride
            )));
        }
        Ok((
            (h + 2 * ph - eh) / self.stride + 1,
            (w + 2 * pw - ew) / self.stride + 1,
        ))
    }

    fn is_identity_lowering(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

fn check_weights<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<(usize, usize)> {
    let (_, _, _, cin) = x.dims4();
    let ws = w.shape();
    if ws.len() != 4 || ws[0] != geom.kh || ws[1] != geom.kw || ws[2] != cin {
        return Err(Error::Shape(format!(
            "conv weight {:?} incompatible with {}x{} kernel over {cin} input channels",
            ws, geom.kh, geom.kw
        )));
    }
    let cout = ws[3];
    if b.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv bias {:?} does not match {cout} output channels",
            b.shape()
        )));
    }
    Ok((cin, cout))
}

/// Fill `cols` (`ho·wo × kh·kw·cin`) for batch element `n`.
fn im2col<T: Real>(x: &Tensor<T>, n: usize, geom: &ConvGeom, ho: usize, wo: usize, cols: &mut [T]) {
    let (_, h, w, c) = x.dims4();
    let (ph, pw) = geom.pad();
    let k = geom.kh * geom.kw * c;
    let img = &x.data()[n * h * w * c..(n + 1) * h * w * c];
    for oi in 0..ho {
        for oj in 0..wo {
            let row = &mut cols[(oi * wo + oj) * k..(oi * wo + oj + 1) * k];
            for ki in 0..geom.kh {
                let ii = (oi * geom.stride + ki * geom.dilation) as isize - ph as isize;
                for kj in 0..geom.kw {
                    let jj = (oj * geom.stride + kj * geom.dilation) as isize - pw as isize;
                    let dst = &mut row[(ki * geom.kw + kj) * c..(ki * geom.kw + kj + 1) * c];
                    if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= w {
                        dst.fill(T::zero());
                    } else {
                        let src = (ii as usize * w + jj as usize) * c;
                        dst.copy_from_slice(&img[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Scatter-add `dcols` back onto batch element `n` of `dx`.
fn col2im<T: Real>(dcols: &[T], geom: &ConvGeom, ho: usize, wo: usize, dx: &mut Tensor<T>, n: usize) {
    let (_, h, w, c) = dx.dims4();
    let (ph, pw) = geom.pad();
    let k = geom.kh * geom.kw * c;
    let img = &mut dx.data_mut()[n * h * w * c..(n + 1) * h * w * c];
    for oi in 0..ho {
        for oj in 0..wo {
            let row = &dcols[(oi * wo + oj) * k..(oi * wo + oj + 1) * k];
            for ki in 0..geom.kh {
                let ii = (oi * geom.stride + ki * geom.dilation) as isize - ph as isize;
                if ii < 0 || ii as usize >= h {
                    continue;
                }
                for kj in 0..geom.kw {
                    let jj = (oj * geom.stride + kj * geom.dilation) as isize - pw as isize;
                    if jj < 0 || jj as usize >= w {
                        continue;
                    }
                    let src = &row[(ki * geom.kw + kj) * c..(ki * geom.kw + kj + 1) * c];
                    let dst = &mut img[(ii as usize * w + jj as usize) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (n, h, wd, cin) = x.dims4();
    let (_, cout) = check_weights(x, w, b, geom)?;
    let (ho, wo) = geom.output_size(h, wd)?;
    let k = geom.kh * geom.kw * cin;
    let p = ho * wo;
    let mut y = Tensor::zeros(&[n, ho, wo, cout]);
    let mut cols = if geom.is_identity_lowering() {
        Vec::new()
    } else {
        vec![T::zero(); p * k]
    };
    for bn in 0..n {
        let out = &mut y.data_mut()[bn * p * cout..(bn + 1) * p * cout];
        for px in out.chunks_exact_mut(cout) {
            px.copy_from_slice(b.data());
        }
        let lhs: &[T] = if geom.is_identity_lowering() {
            &x.data()[bn * p * cin..(bn + 1) * p * cin]
        } else {
            im2col(x, bn, geom, ho, wo, &mut cols);
            &cols
        };
        T::gemm(
            p,
            k,
            cout,
            lhs,
            (k as isize, 1),
            w.data(),
            (cout as isize, 1),
            T::one(),
            out,
            (cout as isize, 1),
        );
    }
    Ok(y)
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: &ConvGeom,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, h, wd, cin) = x.dims4();
    let cout = w.shape()[3];
    let (ho, wo) = geom.output_size(h, wd)?;
    if dy.shape() != [n, ho, wo, cout] {
        return Err(Error::Shape(format!(
            "conv output gradient {:?}, expected {:?}",
            dy.shape(),
            [n, ho, wo, cout]
        )));
    }
    let k = geom.kh * geom.kw * cin;
    let p = ho * wo;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    let identity = geom.is_identity_lowering();
    let mut cols = if identity { Vec::new() } else { vec![T::zero(); p * k] };
    let mut dcols = if identity { Vec::new() } else { vec![T::zero(); p * k] };

    for bn in 0..n {
        let g = &dy.data()[bn * p * cout..(bn + 1) * p * cout];
        for px in g.chunks_exact(cout) {
            for (acc, &v) in db.data_mut().iter_mut().zip(px) {
                *acc += v;
            }
        }
        let lhs: &[T] = if identity {
            &x.data()[bn * p * cin..(bn + 1) * p * cin]
        } else {
            im2col(x, bn, geom, ho, wo, &mut cols);
            &cols
        };
        // dW (k × cout) += colsᵀ (k × p) · dy (p × cout)
        T::gemm(
            k,
            p,
            cout,
            lhs,
            (1, k as isize),
            g,
            (cout as isize, 1),
            T::one(),
            dw.data_mut(),
            (cout as isize, 1),
        );
        // dcols (p × k) = dy (p × cout) · Wᵀ (cout × k)
        if identity {
            let dst = &mut dx.data_mut()[bn * p * cin..(bn + 1) * p * cin];
            T::gemm(
                p,
                cout,
                k,
                g,
                (cout as isize, 1),
                w.data(),
                (1, cout as isize),
                T::zero(),
                dst,
                (k as isize, 1),
            );
        } else {
            T::gemm(
                p,
                cout,
                k,
                g,
                (cout as isize, 1),
                w.data(),
                (1, cout as isize),
                T::zero(),
                &mut dcols,
                (k as isize, 1),
            );
            col2im(&dcols, geom, ho, wo, &mut dx, bn);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}
