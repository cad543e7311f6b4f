//! Central finite-difference verification of every analytic gradient.
//!
//! Layers and blocks are checked against the scalar objective `Σ r ⊙ y` for a
//! fixed random `r`; the loss is checked directly with its dynamic weights
//! frozen at the evaluation point; full networks are checked end to end
//! through the importance-aware loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::hierarchy::{group_rank_map, ClassDef, ImportanceHierarchy};
use crate::loss::{
    class_frequencies, enet_weights, loss_and_gradient, ClassWeights, IalParams,
    LossKind, DEFAULT_A, LOG_CLAMP,
};
use crate::maps::{LabelMap, ProbMap};
use crate::net::blocks::{AttentionFusion, Conv, Downsampler, NonBottleneck1d, PyramidPooling};
use crate::net::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, bilinear_resize, bilinear_resize_backward,
    max_pool2x2, max_pool2x2_backward, relu, relu_backward, softmax, softmax_backward,
};
use crate::net::{Grads, NetConfig, Network, ParamStore, Variant};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<CheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }
}

/// Central difference of `Σ_k w_k · y_k(x)`, differenced term by term so
/// that terms the perturbation leaves unchanged cancel exactly instead of
/// contributing the rounding error of a large total.
fn central<F: FnMut(f64) -> Result<Vec<f64>>>(mut y: F, weights: Option<&[f64]>, x0: f64) -> Result<f64> {
    let plus = y(x0 + STEP)?;
    let minus = y(x0 - STEP)?;
    let diff: f64 = match weights {
        Some(w) => plus.iter().zip(&minus).zip(w).map(|((a, b), w)| w * (a - b)).sum(),
        None => plus.iter().zip(&minus).map(|(a, b)| a - b).sum(),
    };
    Ok(diff / (2.0 * STEP))
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Tensor<f64> {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| normal.sample(rng)).collect()).expect("shape")
}

fn sample_coords(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(rng);
    all.truncate(max);
    all
}

/// A forward map from parameters and inputs to one output tensor, plus its
/// vector-Jacobian product.
trait Probe {
    fn forward(&self, p: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    fn backward(
        &self,
        p: &ParamStore<f64>,
        inputs: &[Tensor<f64>],
        dy: &Tensor<f64>,
    ) -> Result<(Grads<f64>, Vec<Tensor<f64>>)>;
}

struct FnProbe<F, B> {
    f: F,
    b: B,
}

impl<F, B> Probe for FnProbe<F, B>
where
    F: Fn(&ParamStore<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&ParamStore<f64>, &[Tensor<f64>], &Tensor<f64>) -> Result<(Grads<f64>, Vec<Tensor<f64>>)>,
{
    fn forward(&self, p: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (self.f)(p, inputs)
    }

    fn backward(
        &self,
        p: &ParamStore<f64>,
        inputs: &[Tensor<f64>],
        dy: &Tensor<f64>,
    ) -> Result<(Grads<f64>, Vec<Tensor<f64>>)> {
        (self.b)(p, inputs, dy)
    }
}

fn probe<F, B>(f: F, b: B) -> FnProbe<F, B>
where
    F: Fn(&ParamStore<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&ParamStore<f64>, &[Tensor<f64>], &Tensor<f64>) -> Result<(Grads<f64>, Vec<Tensor<f64>>)>,
{
    FnProbe { f, b }
}

fn check_probe(
    name: &str,
    m: &impl Probe,
    store: &ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    max_coords: usize,
) -> Result<CheckEntry> {
    let y = m.forward(store, &inputs)?;
    let r = gaussian(rng, y.shape(), 1.0);
    let (grads, dinputs) = m.backward(store, &inputs, &r)?;

    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut inputs = inputs;
    for k in 0..inputs.len() {
        for idx in sample_coords(rng, inputs[k].len(), max_coords) {
            let x0 = inputs[k].data()[idx];
            let numeric = central(
                |v| {
                    inputs[k].data_mut()[idx] = v;
                    Ok(m.forward(store, &inputs)?.into_data())
                },
                Some(r.data()),
                x0,
            )?;
            inputs[k].data_mut()[idx] = x0;
            worst = worst.max(relative_error(dinputs[k].data()[idx], numeric));
            coords += 1;
        }
    }
    let mut store = store.clone();
    for (slot, analytic) in grads.slots().iter().enumerate() {
        for idx in sample_coords(rng, analytic.len(), max_coords) {
            let x0 = store.params()[slot].value.data()[idx];
            let numeric = central(
                |v| {
                    store.params_mut()[slot].value.data_mut()[idx] = v;
                    Ok(m.forward(&store, &inputs)?.into_data())
                },
                Some(r.data()),
                x0,
            )?;
            store.params_mut()[slot].value.data_mut()[idx] = x0;
            worst = worst.max(relative_error(analytic.data()[idx], numeric));
            coords += 1;
        }
    }
    Ok(CheckEntry {
        name: name.to_string(),
        max_rel_error: worst,
        coords,
    })
}

/// Random importance-aware loss problem.
#[derive(Debug, Clone)]
pub struct IalInstance {
    pub logits: Tensor<f64>,
    pub labels: LabelMap,
    pub hierarchy: ImportanceHierarchy,
    pub weights: ClassWeights,
}

impl IalInstance {
    pub fn probs(&self) -> ProbMap {
        inst_probs(&self.logits)
    }
}

/// Up to `max_h × max_w` pixels and `3..=max_c` classes split into
/// `groups` non-empty groups; roughly a quarter of instances carry an
/// ignore label on some pixels.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_h: usize,
    max_w: usize,
    max_c: usize,
    groups: usize,
) -> IalInstance {
    let c = rng.random_range(groups.max(2)..=max_c.max(groups.max(2)));
    let (h, w) = (rng.random_range(1..=max_h), rng.random_range(1..=max_w));
    let mut ids: Vec<u32> = (0..c as u32).collect();
    ids.shuffle(rng);
    let mut cuts: Vec<usize> = (1..c).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(groups - 1).collect();
    cuts.sort();
    let mut parts = Vec::with_capacity(groups);
    let mut start = 0;
    for &cut in cuts.iter().chain(std::iter::once(&c)) {
        parts.push(ids[start..cut].to_vec());
        start = cut;
    }
    let ignore = rng.random_bool(0.25).then_some(255u32);
    let classes = (0..c as u32)
        .map(|id| ClassDef {
            id,
            name: format!("c{id}"),
        })
        .collect();
    let hierarchy = ImportanceHierarchy::new(classes, parts, ignore).expect("valid partition");
    let labels: Vec<u32> = (0..h * w)
        .map(|_| match ignore {
            Some(i) if rng.random_bool(0.15) => i,
            _ => rng.random_range(0..c as u32),
        })
        .collect();
    let labels = LabelMap::new(h, w, labels).expect("sizes");
    let weights = match class_frequencies([&labels], c, ignore) {
        Ok(freqs) => enet_weights(&freqs, DEFAULT_A).expect("valid frequencies"),
        Err(_) => ClassWeights::uniform(c),
    };
    IalInstance {
        logits: gaussian(rng, &[1, h, w, c], 1.5),
        labels,
        hierarchy,
        weights,
    }
}

/// Per-pixel terms of `Σ_g k_g · I_g(softmax(z))` with the group
/// coefficients `k` frozen; ignored pixels contribute 0.
fn frozen_ial_terms(inst: &IalInstance, logits: &Tensor<f64>, coeffs: &[f64]) -> Result<Vec<f64>> {
    let c = logits.dims4().3;
    let prob = softmax(logits);
    let ranks = group_rank_map(&inst.hierarchy, &inst.labels)?;
    let scored = ranks.ranks().iter().filter(|&&r| r != 0).count().max(1) as f64;
    Ok(inst
        .labels
        .ids()
        .iter()
        .zip(ranks.ranks())
        .enumerate()
        .map(|(px, (&id, &rank))| {
            if rank == 0 {
                return 0.0;
            }
            let p = prob.data()[px * c + id as usize].max(LOG_CLAMP);
            -coeffs[rank as usize - 1] * inst.weights.get(id) * p.ln() / scored
        })
        .collect())
}

fn inst_probs(logits: &Tensor<f64>) -> ProbMap {
    let (n, h, w, c) = logits.dims4();
    ProbMap::from_raw(n, h, w, c, softmax(logits).into_data())
}

/// Checks every logit of one instance.
pub fn check_ial_instance(inst: &IalInstance, kind: LossKind, params: IalParams) -> Result<f64> {
    let (breakdown, grad) = loss_and_gradient(
        kind,
        &inst.logits,
        &inst.labels,
        &inst.hierarchy,
        &inst.weights,
        params,
    )?;
    let coeffs = match kind {
        LossKind::Ial => breakdown.group_coefficients(),
        LossKind::Wce => vec![1.0; inst.hierarchy.num_groups()],
    };
    let mut z = inst.logits.clone();
    let mut worst = 0.0f64;
    for idx in 0..z.len() {
        let x0 = z.data()[idx];
        let numeric = central(
            |v| {
                z.data_mut()[idx] = v;
                frozen_ial_terms(inst, &z, &coeffs)
            },
            None,
            x0,
        )?;
        z.data_mut()[idx] = x0;
        worst = worst.max(relative_error(grad.data()[idx], numeric));
    }
    Ok(worst)
}

pub fn check_ial(seed: u64, instances: usize) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut coords = 0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 8, 8, 6, 3);
        worst = worst.max(check_ial_instance(&inst, LossKind::Ial, IalParams::default())?);
        coords += inst.logits.len();
    }
    Ok(CheckEntry {
        name: format!("ial loss ({instances} instances)"),
        max_rel_error: worst,
        coords,
    })
}

const MAX_COORDS: usize = 24;

/// Every layer and block at small random sizes.
pub fn check_layers(seed: u64) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let empty = ParamStore::<f64>::new();
    let none = |p: &ParamStore<f64>| p.zero_grads();

    let x = gaussian(&mut rng, &[2, 5, 6, 3], 1.0);
    out.push(check_probe(
        "softmax",
        &probe(
            |_, i| Ok(softmax(&i[0])),
            |p, i, dy| Ok((none(p), vec![softmax_backward(&softmax(&i[0]), dy)])),
        ),
        &empty,
        vec![x],
        &mut rng,
        MAX_COORDS,
    )?);

    let x = gaussian(&mut rng, &[1, 4, 5, 3], 1.0);
    out.push(check_probe(
        "relu",
        &probe(
            |_, i| Ok(relu(&i[0])),
            |p, i, dy| Ok((none(p), vec![relu_backward(&relu(&i[0]), dy)])),
        ),
        &empty,
        vec![x],
        &mut rng,
        MAX_COORDS,
    )?);

    let x = gaussian(&mut rng, &[1, 6, 8, 2], 1.0);
    out.push(check_probe(
        "max pool 2x2",
        &probe(
            |_, i| Ok(max_pool2x2(&i[0]).0),
            |p, i, dy| {
                let (_, arg) = max_pool2x2(&i[0]);
                Ok((none(p), vec![max_pool2x2_backward(i[0].shape(), &arg, dy)]))
            },
        ),
        &empty,
        vec![x],
        &mut rng,
        MAX_COORDS,
    )?);

    for bins in [1, 2, 3] {
        let x = gaussian(&mut rng, &[1, 5, 7, 2], 1.0);
        out.push(check_probe(
            &format!("adaptive avg pool {bins}"),
            &probe(
                move |_, i| Ok(adaptive_avg_pool(&i[0], bins)),
                move |p, i, dy| Ok((none(p), vec![adaptive_avg_pool_backward(i[0].shape(), bins, dy)])),
            ),
            &empty,
            vec![x],
            &mut rng,
            MAX_COORDS,
        )?);
    }

    for (ho, wo) in [(9, 11), (3, 2)] {
        let x = gaussian(&mut rng, &[1, 4, 5, 2], 1.0);
        out.push(check_probe(
            &format!("bilinear resize to {ho}x{wo}"),
            &probe(
                move |_, i| Ok(bilinear_resize(&i[0], ho, wo)),
                move |p, i, dy| Ok((none(p), vec![bilinear_resize_backward(i[0].shape(), dy)])),
            ),
            &empty,
            vec![x],
            &mut rng,
            MAX_COORDS,
        )?);
    }

    for (label, k, stride, dilation) in [
        ("conv 3x3", (3, 3), 1, 1),
        ("conv 3x3 stride 2", (3, 3), 2, 1),
        ("conv 3x1 dilation 2", (3, 1), 1, 2),
        ("conv 1x3 dilation 3", (1, 3), 1, 3),
        ("conv 1x1", (1, 1), 1, 1),
    ] {
        let mut store = ParamStore::new();
        let conv = Conv::new(&mut store, "c", k, 3, 4, stride, dilation, &mut rng)?;
        perturb_biases(&mut store, &mut rng);
        let x = gaussian(&mut rng, &[2, 6, 7, 3], 1.0);
        out.push(check_probe(
            label,
            &probe(
                |p, i| conv.forward(p, &i[0]),
                |p, i, dy| {
                    let mut g = p.zero_grads();
                    let dx = conv.backward(p, &i[0], dy, &mut g)?;
                    Ok((g, vec![dx]))
                },
            ),
            &store,
            vec![x],
            &mut rng,
            MAX_COORDS,
        )?);
    }

    let mut store = ParamStore::new();
    let down = Downsampler::new(&mut store, "down", 3, 5, &mut rng)?;
    perturb_biases(&mut store, &mut rng);
    let x = gaussian(&mut rng, &[1, 6, 8, 3], 1.0);
    out.push(check_probe(
        "downsampler",
        &probe(
            |p, i| Ok(down.forward(p, &i[0])?.0),
            |p, i, dy| {
                let (_, cache) = down.forward(p, &i[0])?;
                let mut g = p.zero_grads();
                let dx = down.backward(p, &cache, dy, &mut g)?;
                Ok((g, vec![dx]))
            },
        ),
        &store,
        vec![x],
        &mut rng,
        MAX_COORDS,
    )?);

    let mut store = ParamStore::new();
    let nb = NonBottleneck1d::new(&mut store, "nb", 4, 2, &mut rng)?;
    perturb_biases(&mut store, &mut rng);
    let x = gaussian(&mut rng, &[1, 6, 6, 4], 1.0);
    out.push(check_probe(
        "non-bottleneck-1d",
        &probe(
            |p, i| Ok(nb.forward(p, &i[0])?.0),
            |p, i, dy| {
                let (_, cache) = nb.forward(p, &i[0])?;
                let mut g = p.zero_grads();
                let dx = nb.backward(p, &cache, dy, &mut g)?;
                Ok((g, vec![dx]))
            },
        ),
        &store,
        vec![x],
        &mut rng,
        MAX_COORDS,
    )?);

    let mut store = ParamStore::new();
    let ppm = PyramidPooling::new(&mut store, "ppm", 6, &[1, 2, 4], &mut rng)?;
    perturb_biases(&mut store, &mut rng);
    let x = gaussian(&mut rng, &[1, 5, 7, 6], 1.0);
    out.push(check_probe(
        "pyramid pooling",
        &probe(
            |p, i| Ok(ppm.forward(p, &i[0])?.0),
            |p, i, dy| {
                let (_, cache) = ppm.forward(p, &i[0])?;
                let mut g = p.zero_grads();
                let dx = ppm.backward(p, &cache, dy, &mut g)?;
                Ok((g, vec![dx]))
            },
        ),
        &store,
        vec![x],
        &mut rng,
        MAX_COORDS,
    )?);

    let mut store = ParamStore::new();
    let fusion = AttentionFusion::new(&mut store, "fusion", 3 + 4, 4, &mut rng)?;
    perturb_biases(&mut store, &mut rng);
    let spatial = gaussian(&mut rng, &[1, 4, 6, 3], 1.0);
    let context = gaussian(&mut rng, &[1, 2, 3, 4], 1.0);
    out.push(check_probe(
        "attention fusion",
        &probe(
            |p, i| Ok(fusion.forward(p, &i[0], &i[1])?.0),
            |p, i, dy| {
                let (_, cache) = fusion.forward(p, &i[0], &i[1])?;
                let mut g = p.zero_grads();
                let (ds, dc) = fusion.backward(p, &cache, dy, &mut g)?;
                Ok((g, vec![ds, dc]))
            },
        ),
        &store,
        vec![spatial, context],
        &mut rng,
        MAX_COORDS,
    )?);

    Ok(out)
}

/// Non-zero biases so that bias gradients are exercised away from the
/// all-zero initialization.
fn perturb_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
}

/// Tiny network configuration used for end-to-end checks.
pub fn tiny_config(variant: Variant, seed: u64) -> NetConfig {
    NetConfig {
        variant,
        num_classes: 4,
        height: 8,
        width: 12,
        large_height: 16,
        large_width: 24,
        encoder_channels: [5, 8],
        dilations: vec![1, 2],
        bins: vec![1, 2],
        head_channels: 6,
        spatial_channels: [3, 4, 5],
        init_seed: seed,
    }
}

/// Whole network under the importance-aware loss, with the dynamic weights
/// frozen at the evaluation point.
pub fn check_network(variant: Variant, seed: u64, max_coords: usize) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = tiny_config(variant, seed);
    let mut net = Network::<f64>::new(config.clone())?;
    perturb_biases(net.params_mut(), &mut rng);
    let (h, w) = config.input_size();
    let image = Tensor::from_vec(
        &[1, h, w, 3],
        (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect(),
    )?;
    let hierarchy = ImportanceHierarchy::from_names(&["a", "b", "c", "d"], &[&[0, 1], &[2], &[3]], None)?;
    let labels = LabelMap::new(
        h,
        w,
        (0..h * w).map(|_| rng.random_range(0..4)).collect(),
    )?;
    let weights = enet_weights(&class_frequencies([&labels], 4, None)?, DEFAULT_A)?;
    let params = IalParams::default();

    let (logits, cache) = net.forward(&image)?;
    let (breakdown, dlogits) =
        loss_and_gradient(LossKind::Ial, &logits, &labels, &hierarchy, &weights, params)?;
    let coeffs = breakdown.group_coefficients();
    let (grads, dimage) = net.backward(&cache, &dlogits)?;
    let inst = IalInstance {
        logits: logits.clone(),
        labels,
        hierarchy,
        weights,
    };
    let objective = |net: &Network<f64>, image: &Tensor<f64>| -> Result<Vec<f64>> {
        frozen_ial_terms(&inst, &net.forward(image)?.0, &coeffs)
    };

    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut img = image.clone();
    for idx in sample_coords(&mut rng, img.len(), max_coords) {
        let x0 = img.data()[idx];
        let numeric = central(
            |v| {
                img.data_mut()[idx] = v;
                objective(&net, &img)
            },
            None,
            x0,
        )?;
        img.data_mut()[idx] = x0;
        worst = worst.max(relative_error(dimage.data()[idx], numeric));
        coords += 1;
    }
    for (slot, analytic) in grads.slots().iter().enumerate() {
        for idx in sample_coords(&mut rng, analytic.len(), max_coords) {
            let x0 = net.params().params()[slot].value.data()[idx];
            let numeric = central(
                |v| {
                    net.params_mut().params_mut()[slot].value.data_mut()[idx] = v;
                    objective(&net, &image)
                },
                None,
                x0,
            )?;
            net.params_mut().params_mut()[slot].value.data_mut()[idx] = x0;
            worst = worst.max(relative_error(analytic.data()[idx], numeric));
            coords += 1;
        }
    }
    Ok(CheckEntry {
        name: format!("{variant} network end to end"),
        max_rel_error: worst,
        coords,
    })
}

/// Loss instances, every layer and block, and both full networks.
pub fn run_suite(seed: u64, ial_instances: usize) -> Result<GradCheckReport> {
    let mut entries = vec![check_ial(seed, ial_instances)?];
    entries.extend(check_layers(seed.wrapping_add(1))?);
    entries.push(check_network(Variant::Erf, seed.wrapping_add(2), 4)?);
    entries.push(check_network(Variant::Bierf, seed.wrapping_add(3), 4)?);
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::weighted_ce;

    #[test]
    fn random_instances_respect_the_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let inst = random_instance(&mut rng, 8, 8, 6, 3);
            let (n, h, w, c) = inst.logits.dims4();
            assert!(n == 1 && h <= 8 && w <= 8 && (3..=6).contains(&c));
            assert_eq!(inst.hierarchy.num_groups(), 3);
            assert_eq!(inst.hierarchy.num_classes(), c);
        }
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let entry = check_ial(11, 10).unwrap();
        assert!(entry.passed(), "{entry:?}");
    }

    fn frozen_ial(inst: &IalInstance, logits: &Tensor<f64>, coeffs: &[f64]) -> Result<f64> {
        let prob = inst_probs(logits);
        let ranks = group_rank_map(&inst.hierarchy, &inst.labels)?;
        let (_, per_group) = weighted_ce(
            &prob,
            &inst.labels,
            &inst.weights,
            &ranks,
            inst.hierarchy.num_groups(),
        )?;
        Ok(per_group.iter().zip(coeffs).map(|(i, k)| i * k).sum())
    }

    #[test]
    fn pixel_terms_sum_to_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 6, 6, 5, 3);
            let coeffs = [1.0, 1.7, 2.9];
            let terms: f64 = frozen_ial_terms(&inst, &inst.logits, &coeffs).unwrap().iter().sum();
            let whole = frozen_ial(&inst, &inst.logits, &coeffs).unwrap();
            assert!((terms - whole).abs() <= 1e-12 * whole.abs().max(1.0), "{terms} vs {whole}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-10, 0.0) < TOLERANCE);
    }
}
