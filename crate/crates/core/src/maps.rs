//! Per-pixel label and probability maps shared by the loss, metrics and data code.
//!
//! Both carry a leading batch dimension; a batch is scored as one pixel set.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    ids: Vec<u32>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, ids: Vec<u32>) -> Result<Self> {
        Self::batched(1, h, w, ids)
    }

    pub fn batched(n: usize, h: usize, w: usize, ids: Vec<u32>) -> Result<Self> {
        if n * h * w != ids.len() {
            return Err(Error::Shape(format!(
                "label map {n}x{h}x{w} needs {} ids, got {}",
                n * h * w,
                ids.len()
            )));
        }
        Ok(LabelMap { n, h, w, ids })
    }

    pub fn filled(h: usize, w: usize, id: u32) -> Self {
        LabelMap {
            n: 1,
            h,
            w,
            ids: vec![id; h * w],
        }
    }

    /// Stack single maps of equal size into one batch.
    pub fn stack<'a>(maps: impl IntoIterator<Item = &'a LabelMap>) -> Result<Self> {
        let mut iter = maps.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero label maps".into()))?;
        let mut out = first.clone();
        for m in iter {
            if (m.h, m.w) != (out.h, out.w) {
                return Err(Error::Shape(format!(
                    "cannot stack {}x{} with {}x{}",
                    m.h, m.w, out.h, out.w
                )));
            }
            out.ids.extend_from_slice(&m.ids);
            out.n += m.n;
        }
        Ok(out)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn num_pixels(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> u32 {
        self.ids[(n * self.h + i) * self.w + j]
    }

    /// `(n, i, j)` of a flat pixel index, for error messages.
    pub fn position(&self, flat: usize) -> (usize, usize, usize) {
        let j = flat % self.w;
        let i = (flat / self.w) % self.h;
        (flat / (self.w * self.h), i, j)
    }
}

/// Softmax output: `n × h × w × c`, each pixel a distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    /// Wraps an NHWC tensor, checking that every pixel is a distribution.
    pub fn new(probs: Tensor<f64>) -> Result<Self> {
        let (n, h, w, c) = probs.dims4();
        if c == 0 {
            return Err(Error::Shape("probability map with zero classes".into()));
        }
        for (idx, px) in probs.data().chunks_exact(c).enumerate() {
            let sum: f64 = px.iter().sum();
            let in_range = px.iter().all(|p| (0.0..=1.0).contains(p));
            if !in_range || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "pixel {idx} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(ProbMap {
            n,
            h,
            w,
            c,
            data: probs.into_data(),
        })
    }

    pub(crate) fn from_raw(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * h * w * c);
        ProbMap { n, h, w, c, data }
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn num_pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.c..(flat + 1) * self.c]
    }

    pub fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        if (self.n, self.h, self.w) != (labels.batch(), labels.height(), labels.width()) {
            return Err(Error::Shape(format!(
                "probability map {}x{}x{} vs label map {}x{}x{}",
                self.n,
                self.h,
                self.w,
                labels.batch(),
                labels.height(),
                labels.width()
            )));
        }
        Ok(())
    }

    /// Per-pixel argmax, ties broken by the lowest class id.
    pub fn argmax(&self) -> LabelMap {
        let ids = self.data.chunks_exact(self.c).map(argmax_lowest).collect();
        LabelMap::batched(self.n, self.h, self.w, ids).expect("argmax shape")
    }
}

pub(crate) fn argmax_lowest<T: PartialOrd + Copy>(px: &[T]) -> u32 {
    let mut best = 0;
    for (k, v) in px.iter().enumerate().skip(1) {
        if *v > px[best] {
            best = k;
        }
    }
    best as u32
}
