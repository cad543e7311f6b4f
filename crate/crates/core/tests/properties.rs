use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ialseg::data::{batches, generate_scene, SceneConfig};
use ialseg::gradcheck::{random_instance, tiny_config, IalInstance};
use ialseg::hierarchy::{
    build_matrix_specs, group_rank_map, rasterize_matrix, CellValue, ImportanceHierarchy,
};
use ialseg::loss::oracle::naive_loss_oracle;
use ialseg::loss::{
    dynamic_weights, ial_loss, loss_and_gradient, weighted_ce, ClassWeights, IalParams, LossKind,
};
use ialseg::metrics::{class_metrics, ConfusionMatrix};
use ialseg::net::layers::softmax;
use ialseg::net::{Network, Variant};
use ialseg::optim::OptimConfig;
use ialseg::{LabelMap, ProbMap, Tensor};

fn probs(logits: &Tensor<f64>) -> ProbMap {
    ProbMap::new(softmax(logits)).unwrap()
}

fn instance(seed: u64, max: usize, max_c: usize) -> IalInstance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), max, max, max_c, 3)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_cells_follow_the_rank_rule(groups in 2usize..7) {
        let names: Vec<String> = (0..groups).map(|g| format!("c{g}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let parts: Vec<Vec<u32>> = (0..groups as u32).map(|g| vec![g]).collect();
        let parts: Vec<&[u32]> = parts.iter().map(Vec::as_slice).collect();
        let h = ImportanceHierarchy::from_names(&names, &parts, None).unwrap();
        let specs = build_matrix_specs(&h).unwrap();
        prop_assert_eq!(specs.len(), groups - 1);
        for spec in &specs {
            let t = spec.index();
            let count = |v| spec.cells().iter().filter(|&&c| c == v).count();
            prop_assert_eq!(count(CellValue::DontCare), t - 1);
            prop_assert_eq!(count(CellValue::Zero), 1);
            prop_assert_eq!(count(CellValue::One), groups - t);
        }
    }

    #[test]
    fn rasterization_is_pointwise(seed in any::<u64>()) {
        let inst = instance(seed, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (_, h, w, _) = inst.logits.dims4();
        let mut perm: Vec<usize> = (0..h * w).collect();
        perm.shuffle(&mut rng);
        let shuffled = LabelMap::new(h, w, perm.iter().map(|&k| inst.labels.ids()[k]).collect()).unwrap();
        for spec in build_matrix_specs(&inst.hierarchy).unwrap() {
            let a = rasterize_matrix(&spec, &inst.hierarchy, &inst.labels).unwrap();
            let b = rasterize_matrix(&spec, &inst.hierarchy, &shuffled).unwrap();
            for (k, &src) in perm.iter().enumerate() {
                prop_assert_eq!(b.cells()[k], a.cells()[src]);
            }
        }
    }

    #[test]
    fn dynamic_weights_are_non_negative(seed in any::<u64>()) {
        let inst = instance(seed, 8, 6);
        let p = probs(&inst.logits);
        let ranks = group_rank_map(&inst.hierarchy, &inst.labels).unwrap();
        for f in dynamic_weights(&p, &inst.labels, &inst.hierarchy, &ranks, 0.5).unwrap() {
            prop_assert!(f >= 0.0);
        }
    }

    #[test]
    fn ial_dominates_plain_sum_at_unit_alpha(seed in any::<u64>()) {
        let inst = instance(seed, 8, 6);
        let b = ial_loss(&probs(&inst.logits), &inst.labels, &inst.hierarchy, &inst.weights, IalParams::default()).unwrap();
        let plain: f64 = b.per_group.iter().sum();
        prop_assert!(b.total >= plain * (1.0 - 1e-15));
    }

    #[test]
    fn total_matches_stored_composition(seed in any::<u64>()) {
        let inst = instance(seed, 8, 6);
        let b = ial_loss(&probs(&inst.logits), &inst.labels, &inst.hierarchy, &inst.weights, IalParams::default()).unwrap();
        prop_assert!(close(b.total, b.composed_total(), 1e-9));
    }

    #[test]
    fn loss_is_invariant_under_relabeling(seed in any::<u64>()) {
        let inst = instance(seed, 6, 6);
        let (n, h, w, c) = inst.logits.dims4();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let mut perm: Vec<u32> = (0..c as u32).collect();
        perm.shuffle(&mut rng);

        let hierarchy = inst.hierarchy.relabeled(&perm).unwrap();
        let labels = LabelMap::new(h, w, inst.labels.ids().iter().map(|&id| {
            if inst.hierarchy.is_ignored(id) { id } else { perm[id as usize] }
        }).collect()).unwrap();
        let mut weights = vec![0.0; c];
        let mut logits = vec![0.0; n * h * w * c];
        for old in 0..c {
            weights[perm[old] as usize] = inst.weights.weights()[old];
        }
        for px in 0..n * h * w {
            for old in 0..c {
                logits[px * c + perm[old] as usize] = inst.logits.data()[px * c + old];
            }
        }
        let logits = Tensor::from_vec(&[n, h, w, c], logits).unwrap();
        let a = ial_loss(&probs(&inst.logits), &inst.labels, &inst.hierarchy, &inst.weights, IalParams::default()).unwrap();
        let b = ial_loss(&probs(&logits), &labels, &hierarchy, &ClassWeights::from_raw(weights).unwrap(), IalParams::default()).unwrap();
        prop_assert!(close(a.total, b.total, 1e-12), "{} vs {}", a.total, b.total);
    }

    #[test]
    fn lowering_a_top_rank_probability_never_lowers_the_loss(seed in any::<u64>(), shrink in 0.05f64..0.95) {
        let inst = instance(seed, 6, 6);
        let c = inst.logits.dims4().3;
        let top = inst.hierarchy.num_groups();
        let Some(px) = inst.labels.ids().iter().position(|&id| inst.hierarchy.rank_of(id) == Some(top)) else {
            return Ok(());
        };
        let p = probs(&inst.logits);
        let before = ial_loss(&p, &inst.labels, &inst.hierarchy, &inst.weights, IalParams::default()).unwrap();
        let coeffs = before.group_coefficients();

        let y = inst.labels.ids()[px] as usize;
        let mut data = p.data().to_vec();
        let row = &mut data[px * c..(px + 1) * c];
        let removed = row[y] * shrink;
        row[y] -= removed;
        let others = (c - 1) as f64;
        for (k, v) in row.iter_mut().enumerate() {
            if k != y {
                *v += removed / others;
            }
        }
        let (n, h, w, _) = inst.logits.dims4();
        let q = ProbMap::new(Tensor::from_vec(&[n, h, w, c], data).unwrap()).unwrap();
        let ranks = group_rank_map(&inst.hierarchy, &inst.labels).unwrap();
        let (_, after) = weighted_ce(&q, &inst.labels, &inst.weights, &ranks, top).unwrap();
        let frozen = |parts: &[f64]| parts.iter().zip(&coeffs).map(|(i, k)| i * k).sum::<f64>();
        prop_assert!(frozen(&after) >= frozen(&before.per_group));
    }

    #[test]
    fn ignored_pixels_get_zero_gradient(seed in any::<u64>()) {
        let inst = instance(seed, 8, 6);
        let c = inst.logits.dims4().3;
        let (_, grad) = loss_and_gradient(LossKind::Ial, &inst.logits, &inst.labels, &inst.hierarchy, &inst.weights, IalParams::default()).unwrap();
        for (px, &id) in inst.labels.ids().iter().enumerate() {
            if inst.hierarchy.is_ignored(id) {
                prop_assert!(grad.data()[px * c..(px + 1) * c].iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn oracle_agrees_on_small_instances(seed in any::<u64>()) {
        let inst = instance(seed, 10, 8);
        let p = probs(&inst.logits);
        let b = ial_loss(&p, &inst.labels, &inst.hierarchy, &inst.weights, IalParams::default()).unwrap();
        let o = naive_loss_oracle(&p, &inst.labels, &inst.hierarchy, &inst.weights, 1.0, 0.5);
        prop_assert!(close(b.total, o, 1e-10), "{} vs {}", b.total, o);
    }

    #[test]
    fn softmax_is_shift_invariant(seed in any::<u64>(), shift in -20.0f64..20.0) {
        let inst = instance(seed, 4, 6);
        let a = softmax(&inst.logits);
        let b = softmax(&inst.logits.map(|v| v + shift));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn confusion_counts_are_additive_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..7u32);
        let len = rng.random_range(1..60usize);
        let truth: Vec<u32> = (0..len).map(|_| rng.random_range(0..c)).collect();
        let pred: Vec<u32> = (0..len).map(|_| rng.random_range(0..c)).collect();
        let cut = rng.random_range(0..=len);

        let mut whole = ConfusionMatrix::new(c as usize);
        whole.accumulate(&LabelMap::new(1, len, truth.clone()).unwrap(), &LabelMap::new(1, len, pred.clone()).unwrap(), None).unwrap();
        prop_assert_eq!(whole.total(), len as u64);
        let mut parts = ConfusionMatrix::new(c as usize);
        for (lo, hi) in [(0, cut), (cut, len)] {
            if lo == hi { continue; }
            let mut m = ConfusionMatrix::new(c as usize);
            m.accumulate(&LabelMap::new(1, hi - lo, truth[lo..hi].to_vec()).unwrap(), &LabelMap::new(1, hi - lo, pred[lo..hi].to_vec()).unwrap(), None).unwrap();
            parts.merge(&m).unwrap();
        }
        prop_assert_eq!(&parts, &whole);

        let metrics = class_metrics(&whole);
        for m in &metrics {
            if let (Some(i), Some(p)) = (m.iou, m.precision) { prop_assert!(i <= p); }
            if let (Some(i), Some(r)) = (m.iou, m.recall) { prop_assert!(i <= r); }
        }

        let mut perm: Vec<u32> = (0..c).collect();
        perm.shuffle(&mut rng);
        let mut relabeled = ConfusionMatrix::new(c as usize);
        relabeled.accumulate(
            &LabelMap::new(1, len, truth.iter().map(|&t| perm[t as usize]).collect()).unwrap(),
            &LabelMap::new(1, len, pred.iter().map(|&p| perm[p as usize]).collect()).unwrap(),
            None,
        ).unwrap();
        let mean_iou = |cm: &ConfusionMatrix| {
            let v: Vec<f64> = class_metrics(cm).iter().filter_map(|m| m.iou).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        prop_assert!((mean_iou(&whole) - mean_iou(&relabeled)).abs() < 1e-12);
    }

    #[test]
    fn batches_partition_the_dataset(len in 0usize..50, size in 1usize..12, seed in any::<u64>()) {
        let b = batches(len, size, seed).unwrap();
        let mut all: Vec<usize> = b.concat();
        all.sort();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert!(b.iter().all(|x| !x.is_empty() && x.len() <= size));
    }

    #[test]
    fn learning_rate_never_increases(every in 0usize..20, factor in 0.01f64..1.0) {
        let cfg = OptimConfig { decay_every: every, decay_factor: factor, ..OptimConfig::default() };
        for e in 0..60 {
            prop_assert!(cfg.lr_at(e + 1) <= cfg.lr_at(e));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scenes_only_use_table_classes(seed in any::<u64>(), index in any::<u64>()) {
        let cfg = SceneConfig { seed, ..SceneConfig::default() };
        let s = generate_scene(&cfg, index).unwrap();
        prop_assert!(s.labels.ids().iter().all(|&id| id < 9));
    }

    #[test]
    fn forward_passes_stay_finite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for variant in [Variant::Erf, Variant::Bierf] {
            let mut net = Network::<f64>::new(tiny_config(variant, seed)).unwrap();
            for p in net.params_mut().params_mut() {
                for v in p.value.data_mut() {
                    *v = rng.random_range(-1.0..=1.0);
                }
            }
            let (h, w) = net.config().input_size();
            let x = Tensor::from_vec(&[1, h, w, 3], (0..h * w * 3).map(|_| rng.random_range(-10.0..=10.0)).collect()).unwrap();
            prop_assert!(net.forward(&x).unwrap().0.is_finite());
        }
    }
}

#[test]
fn batch_forward_equals_independent_forwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for variant in [Variant::Erf, Variant::Bierf] {
        let net = Network::<f32>::new(tiny_config(variant, 3)).unwrap();
        let (h, w) = net.config().input_size();
        let one = h * w * 3;
        let data: Vec<f32> = (0..2 * one).map(|_| rng.random_range(0.0..1.0)).collect();
        let both = net.predict(&Tensor::from_vec(&[2, h, w, 3], data.clone()).unwrap()).unwrap();
        let a = net.predict(&Tensor::from_vec(&[1, h, w, 3], data[..one].to_vec()).unwrap()).unwrap();
        let b = net.predict(&Tensor::from_vec(&[1, h, w, 3], data[one..].to_vec()).unwrap()).unwrap();
        let joined: Vec<f32> = a.data().iter().chain(b.data()).copied().collect();
        assert_eq!(both.data(), joined.as_slice(), "{variant}");
    }
}
