//! Frequency-weighted cross-entropy and the importance-aware loss (IAL).
//!
//! The cross-entropy is split into one term per importance group,
//! `I_g = -(1/N) Σ_{pixels of rank g} ω_y · ln p_y`, and recombined as
//!
//! ```text
//! IAL = Σ_g  Π_{t=2..g} (f_t + α) · I_g
//! ```
//!
//! where `f_t` is the dynamic importance weight measured against matrix
//! `M_{t-1}`. The `f_t` are treated as constants when differentiating.
//!
//! All reductions run serially in pixel order, so identical inputs give
//! bit-identical results.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{
    build_matrix_specs, group_rank_map, rasterize_ranks, GroupRankMap, ImportanceHierarchy,
    TriStateMap,
};
use crate::maps::{LabelMap, ProbMap};
use crate::net::layers::softmax;
use crate::tensor::Tensor;

/// Lower bound applied to the true-class probability inside `ln`.
pub const LOG_CLAMP: f64 = 1e-12;

pub const DEFAULT_A: f64 = 1.02;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Frequency-weighted cross-entropy.
    Wce,
    /// Importance-aware loss.
    Ial,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wce" => Ok(LossKind::Wce),
            "ial" => Ok(LossKind::Ial),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Wce => "wce",
            LossKind::Ial => "ial",
        })
    }
}

/// Hyper-parameters of the loss block in a training config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub loss: LossKind,
    pub a: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            loss: LossKind::Ial,
            a: DEFAULT_A,
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LossConfig {
    pub fn ial_params(&self) -> IalParams {
        IalParams {
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IalParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for IalParams {
    fn default() -> Self {
        IalParams {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Per-class frequency weights `ω_c = 1 / ln(a + f_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
    a: f64,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; num_classes],
            a: f64::NAN,
        }
    }

    pub fn from_raw(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(
                "class weights must be finite and positive".into(),
            ));
        }
        Ok(ClassWeights {
            weights,
            a: f64::NAN,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, class: u32) -> f64 {
        self.weights[class as usize]
    }

    /// The `a` the weights were derived with (`NaN` for hand-made weights).
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Fraction of scored pixels per class over a whole dataset.
pub fn class_frequencies<'a>(
    labels: impl IntoIterator<Item = &'a LabelMap>,
    num_classes: usize,
    ignore_id: Option<u32>,
) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; num_classes];
    let mut total = 0u64;
    for map in labels {
        for (flat, &id) in map.ids().iter().enumerate() {
            if ignore_id == Some(id) {
                continue;
            }
            let slot = counts.get_mut(id as usize).ok_or_else(|| {
                let (n, i, j) = map.position(flat);
                Error::UnknownClass { id, n, i, j }
            })?;
            *slot += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect())
}

pub fn enet_weights(freqs: &[f64], a: f64) -> Result<ClassWeights> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "frequency-weight offset a must exceed 1, got {a}"
        )));
    }
    if let Some(f) = freqs.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InvalidArgument(format!(
            "class frequency {f} outside [0, 1]"
        )));
    }
    Ok(ClassWeights {
        weights: freqs.iter().map(|f| 1.0 / (a + f).ln()).collect(),
        a,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `I_1 … I_G`.
    pub per_group: Vec<f64>,
    /// `f_2 … f_G`; empty for a single-group hierarchy.
    pub dynamic_weights: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// Composed multiplier `Π_{t=2..g} (f_t + α)` for each 1-based group `g`.
    pub fn group_coefficients(&self) -> Vec<f64> {
        group_coefficients(&self.dynamic_weights, self.alpha, self.per_group.len())
    }

    /// Recompute the IAL total from the stored parts.
    pub fn composed_total(&self) -> f64 {
        compose(&self.per_group, &self.group_coefficients())
    }
}

fn group_coefficients(dynamic: &[f64], alpha: f64, groups: usize) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(groups);
    let mut running = 1.0;
    coeffs.push(running);
    for f in dynamic.iter().take(groups.saturating_sub(1)) {
        running *= f + alpha;
        coeffs.push(running);
    }
    coeffs
}

fn compose(per_group: &[f64], coeffs: &[f64]) -> f64 {
    per_group
        .iter()
        .zip(coeffs)
        .fold(0.0, |acc, (i_g, k)| acc + k * i_g)
}

fn check_inputs(prob: &ProbMap, labels: &LabelMap, weights: &ClassWeights) -> Result<()> {
    prob.check_labels(labels)?;
    if weights.len() != prob.num_classes() {
        return Err(Error::Shape(format!(
            "{} class weights for {} probability channels",
            weights.len(),
            prob.num_classes()
        )));
    }
    Ok(())
}

fn scored_pixels(ranks: &GroupRankMap) -> usize {
    ranks.ranks().iter().filter(|&&r| r != 0).count()
}

/// Weighted cross-entropy split by importance group: `(I_total, [I_1 … I_G])`.
///
/// Normalized by the number of scored (non-ignored) pixels.
pub fn weighted_ce(
    prob: &ProbMap,
    labels: &LabelMap,
    weights: &ClassWeights,
    ranks: &GroupRankMap,
    num_groups: usize,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(prob, labels, weights)?;
    let mut sums = vec![0.0; num_groups];
    let scored = scored_pixels(ranks);
    for (flat, (&id, &rank)) in labels.ids().iter().zip(ranks.ranks()).enumerate() {
        if rank == 0 {
            continue;
        }
        let p_true = prob.pixel(flat)[id as usize].max(LOG_CLAMP);
        sums[rank as usize - 1] -= weights.get(id) * p_true.ln();
    }
    if scored > 0 {
        let norm = scored as f64;
        sums.iter_mut().for_each(|s| *s /= norm);
    }
    let total = sums.iter().fold(0.0, |acc, v| acc + v);
    Ok((total, sums))
}

/// Dynamic importance weight against one rasterized importance matrix.
///
/// `f = (1/N) Σ (M + λ) · (p_y − M)²` over non-`DontCare` pixels, where `N`
/// is the number of such pixels; `f = 0` when `N = 0`.
pub fn dynamic_weight(
    prob: &ProbMap,
    labels: &LabelMap,
    tri: &TriStateMap,
    lambda: f64,
) -> Result<f64> {
    prob.check_labels(labels)?;
    if tri.dims() != (labels.batch(), labels.height(), labels.width()) {
        return Err(Error::Shape("tri-state map does not match label map".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (flat, (&id, cell)) in labels.ids().iter().zip(tri.cells()).enumerate() {
        let Some(m) = cell.value() else { continue };
        let diff = prob.pixel(flat)[id as usize] - m;
        sum += (m + lambda) * diff * diff;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// All dynamic weights `f_2 … f_G` for a batch.
pub fn dynamic_weights(
    prob: &ProbMap,
    labels: &LabelMap,
    hierarchy: &ImportanceHierarchy,
    ranks: &GroupRankMap,
    lambda: f64,
) -> Result<Vec<f64>> {
    if hierarchy.num_groups() < 2 {
        return Ok(Vec::new());
    }
    build_matrix_specs(hierarchy)?
        .iter()
        .map(|spec| dynamic_weight(prob, labels, &rasterize_ranks(spec, ranks), lambda))
        .collect()
}

pub fn ial_loss(
    prob: &ProbMap,
    labels: &LabelMap,
    hierarchy: &ImportanceHierarchy,
    weights: &ClassWeights,
    params: IalParams,
) -> Result<LossBreakdown> {
    if hierarchy.num_classes() != prob.num_classes() {
        return Err(Error::Shape(format!(
            "hierarchy has {} classes, probability map {}",
            hierarchy.num_classes(),
            prob.num_classes()
        )));
    }
    let ranks = group_rank_map(hierarchy, labels)?;
    let (_, per_group) = weighted_ce(prob, labels, weights, &ranks, hierarchy.num_groups())?;
    let dynamic = dynamic_weights(prob, labels, hierarchy, &ranks, params.lambda)?;
    let coeffs = group_coefficients(&dynamic, params.alpha, per_group.len());
    Ok(LossBreakdown {
        total: compose(&per_group, &coeffs),
        per_group,
        dynamic_weights: dynamic,
        alpha: params.alpha,
        lambda: params.lambda,
    })
}

/// `∂IAL/∂logits` with the dynamic weights held fixed at their current values.
pub fn ial_gradient(
    logits: &Tensor<f64>,
    labels: &LabelMap,
    hierarchy: &ImportanceHierarchy,
    weights: &ClassWeights,
    params: IalParams,
) -> Result<Tensor<f64>> {
    Ok(loss_and_gradient(LossKind::Ial, logits, labels, hierarchy, weights, params)?.1)
}

/// Loss breakdown plus gradient with respect to the logits.
///
/// For [`LossKind::Wce`] the dynamic weights are still measured (for logging)
/// but every group coefficient is 1 and `total` is the plain weighted CE.
pub fn loss_and_gradient(
    kind: LossKind,
    logits: &Tensor<f64>,
    labels: &LabelMap,
    hierarchy: &ImportanceHierarchy,
    weights: &ClassWeights,
    params: IalParams,
) -> Result<(LossBreakdown, Tensor<f64>)> {
    let (n, h, w, c) = logits.dims4();
    let probs = softmax(logits);
    let prob = ProbMap::from_raw(n, h, w, c, probs.into_data());
    let mut breakdown = ial_loss(&prob, labels, hierarchy, weights, params)?;
    let coeffs = match kind {
        LossKind::Ial => breakdown.group_coefficients(),
        LossKind::Wce => {
            breakdown.total = breakdown.per_group.iter().fold(0.0, |acc, v| acc + v);
            vec![1.0; hierarchy.num_groups()]
        }
    };

    let ranks = group_rank_map(hierarchy, labels)?;
    let scored = scored_pixels(&ranks);
    let mut grad = vec![0.0; n * h * w * c];
    if scored > 0 {
        let norm = scored as f64;
        for (flat, (&id, &rank)) in labels.ids().iter().zip(ranks.ranks()).enumerate() {
            if rank == 0 {
                continue;
            }
            let scale = coeffs[rank as usize - 1] * weights.get(id) / norm;
            let p = prob.pixel(flat);
            let g = &mut grad[flat * c..(flat + 1) * c];
            for (k, (gk, &pk)) in g.iter_mut().zip(p).enumerate() {
                let q = if k == id as usize { 1.0 } else { 0.0 };
                *gk = scale * (pk - q);
            }
        }
    }
    Ok((breakdown, Tensor::from_vec(&[n, h, w, c], grad)?))
}
