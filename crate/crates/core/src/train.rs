//! Training and evaluation loops.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{batches, scene_hierarchy, Dataset, DatasetMeta, SceneConfig};
use crate::error::{Error, Result};
use crate::hierarchy::ImportanceHierarchy;
use crate::loss::{class_frequencies, enet_weights, loss_and_gradient, ClassWeights, LossConfig};
use crate::maps::LabelMap;
use crate::metrics::ConfusionMatrix;
use crate::net::checkpoint;
use crate::net::{NetConfig, Network};
use crate::optim::{AdamState, OptimConfig};
use crate::tensor::Tensor;

/// Where the training and evaluation images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// Directories written by `gen-data` (or hand-made PPM/PGM pairs).
    Dir {
        train: PathBuf,
        #[serde(default)]
        eval: Option<PathBuf>,
    },
    /// Scenes generated in memory: training scenes `0..train`, evaluation
    /// scenes `train..train + eval`.
    Synthetic {
        #[serde(default)]
        scene: SceneConfig,
        train: usize,
        eval: usize,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            scene: SceneConfig::default(),
            train: 200,
            eval: 50,
        }
    }
}

fn default_batch_size() -> usize {
    8
}

fn default_checkpoint_every() -> usize {
    1
}

/// Everything `train` needs. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    /// Hierarchy JSON; defaults to the dataset's `meta.json`, then to the
    /// synthetic scene hierarchy.
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Seeds parameter initialization and the per-epoch shuffles.
    pub seed: u64,
    /// Write `checkpoints/epoch_NNN.ckpt` every this many epochs (0 = never).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            hierarchy: None,
            net: NetConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            batch_size: default_batch_size(),
            seed,
            checkpoint_every: default_checkpoint_every(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// The network configuration actually trained: `init_seed` follows `seed`.
    pub fn effective_net(&self) -> NetConfig {
        NetConfig {
            init_seed: self.seed,
            ..self.net.clone()
        }
    }

    /// Shuffle seed of one epoch.
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64)
    }
}

/// Training split, optional evaluation split and the hierarchy to train with.
pub struct Datasets {
    pub train: Dataset,
    pub eval: Option<Dataset>,
    pub hierarchy: ImportanceHierarchy,
}

pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let (train, eval, meta_hierarchy) = match &cfg.dataset {
        DatasetSpec::Dir { train, eval } => {
            let meta = DatasetMeta::load(train).ok();
            let h = meta.map(|m| m.hierarchy()).transpose()?;
            let eval = eval.as_deref().map(Dataset::load_dir).transpose()?;
            (Dataset::load_dir(train)?, eval, h)
        }
        DatasetSpec::Synthetic { scene, train, eval } => {
            let tr = Dataset::generate(scene, 0, *train)?;
            let ev = (*eval > 0)
                .then(|| Dataset::generate(scene, *train as u64, *eval))
                .transpose()?;
            (tr, ev, Some(scene_hierarchy()))
        }
    };
    let hierarchy = match &cfg.hierarchy {
        Some(path) => ImportanceHierarchy::load(path)?,
        None => meta_hierarchy.unwrap_or_else(scene_hierarchy),
    };
    Ok(Datasets {
        train,
        eval,
        hierarchy,
    })
}

/// Batch means of the loss parts over one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub per_group: Vec<f64>,
    pub dynamic_weights: Vec<f64>,
    pub total: f64,
}

pub fn loss_curve_header(groups: usize) -> String {
    let mut cols = vec!["epoch".to_string(), "lr".to_string()];
    cols.extend((1..=groups).map(|g| format!("I_{g}")));
    cols.extend((2..=groups).map(|t| format!("f_{t}")));
    cols.push("total".into());
    cols.join(",")
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), self.lr.to_string()];
        cols.extend(self.per_group.iter().map(f64::to_string));
        cols.extend(self.dynamic_weights.iter().map(f64::to_string));
        cols.push(self.total.to_string());
        cols.join(",")
    }
}

pub fn class_weights(cfg: &RunConfig, train: &Dataset, h: &ImportanceHierarchy) -> Result<ClassWeights> {
    let freqs = class_frequencies(train.label_maps(), h.num_classes(), h.ignore_id())?;
    enet_weights(&freqs, cfg.loss.a)
}

fn check_sizes(net: &NetConfig, data: &Dataset, h: &ImportanceHierarchy) -> Result<()> {
    if data.size() != net.input_size() {
        return Err(Error::Shape(format!(
            "{} network expects {:?} images, dataset has {:?}",
            net.variant,
            net.input_size(),
            data.size()
        )));
    }
    if net.num_classes != h.num_classes() {
        return Err(Error::Shape(format!(
            "network has {} classes, hierarchy {}",
            net.num_classes,
            h.num_classes()
        )));
    }
    Ok(())
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub log: Vec<EpochLog>,
    pub weights: ClassWeights,
}

/// Trains from scratch; `on_epoch` sees the network after every epoch.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    hierarchy: &ImportanceHierarchy,
    mut on_epoch: impl FnMut(&Network<f32>, &EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    let net_cfg = cfg.effective_net();
    check_sizes(&net_cfg, data, hierarchy)?;
    let weights = class_weights(cfg, data, hierarchy)?;
    let params = cfg.loss.ial_params();
    let mut net = Network::<f32>::new(net_cfg)?;
    let mut adam = AdamState::new(net.params(), cfg.optim.clone());
    let mut log = Vec::with_capacity(cfg.optim.epochs);

    for epoch in 0..cfg.optim.epochs {
        let lr = cfg.optim.lr_at(epoch);
        let groups = hierarchy.num_groups();
        let mut sums = EpochLog {
            epoch,
            lr,
            per_group: vec![0.0; groups],
            dynamic_weights: vec![0.0; groups.saturating_sub(1)],
            total: 0.0,
        };
        let order = batches(data.len(), cfg.batch_size, cfg.epoch_seed(epoch))?;
        for batch in &order {
            let images = data.images::<f32>(batch);
            let labels = data.labels(batch);
            let (logits, cache) = net.forward(&images)?;
            let (breakdown, dlogits) = loss_and_gradient(
                cfg.loss.loss,
                &logits.cast::<f64>(),
                &labels,
                hierarchy,
                &weights,
                params,
            )?;
            let (grads, _) = net.backward(&cache, &dlogits.cast::<f32>())?;
            adam.step(net.params_mut(), &grads, lr)?;

            for (s, v) in sums.per_group.iter_mut().zip(&breakdown.per_group) {
                *s += v;
            }
            for (s, v) in sums.dynamic_weights.iter_mut().zip(&breakdown.dynamic_weights) {
                *s += v;
            }
            sums.total += breakdown.total;
        }
        let n = order.len() as f64;
        sums.per_group.iter_mut().for_each(|v| *v /= n);
        sums.dynamic_weights.iter_mut().for_each(|v| *v /= n);
        sums.total /= n;
        on_epoch(&net, &sums)?;
        log.push(sums);
    }
    Ok(TrainOutcome {
        network: net,
        log,
        weights,
    })
}

/// Runs [`train`] and writes `loss_curve.csv`, per-epoch checkpoints,
/// `final.ckpt` and `run.json` (the config plus `extra`) into `out`.
pub fn train_to_dir(
    cfg: &RunConfig,
    data: &Dataset,
    hierarchy: &ImportanceHierarchy,
    out: &Path,
    extra: serde_json::Value,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let mut run = serde_json::to_value(cfg)?;
    run["effective_net"] = serde_json::to_value(cfg.effective_net())?;
    run["cli"] = extra;
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    std::fs::write(out.join("hierarchy.json"), hierarchy.to_json())?;

    let mut csv = loss_curve_header(hierarchy.num_groups()) + "\n";
    let ckpt_dir = out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let outcome = train(cfg, data, hierarchy, |net, row| {
        csv.push_str(&row.csv_row());
        csv.push('\n');
        std::fs::write(out.join("loss_curve.csv"), &csv)?;
        if cfg.checkpoint_every > 0 && (row.epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoint::save(net.params(), &ckpt_dir.join(format!("epoch_{:03}.ckpt", row.epoch + 1)))?;
        }
        Ok(())
    })?;
    std::fs::write(out.join("loss_curve.csv"), &csv)?;
    checkpoint::save(outcome.network.params(), &out.join("final.ckpt"))?;
    Ok(outcome)
}

/// Per-pixel argmax of the logits; ties go to the lowest class id.
pub fn predict(net: &Network<f32>, images: &Tensor<f32>) -> Result<LabelMap> {
    let logits = net.forward(images)?.0;
    let (n, h, w, c) = logits.dims4();
    let ids = logits
        .data()
        .chunks_exact(c)
        .map(crate::maps::argmax_lowest)
        .collect();
    LabelMap::batched(n, h, w, ids)
}

pub fn evaluate(
    net: &Network<f32>,
    data: &Dataset,
    hierarchy: &ImportanceHierarchy,
    batch_size: usize,
) -> Result<ConfusionMatrix> {
    check_sizes(net.config(), data, hierarchy)?;
    let mut cm = ConfusionMatrix::new(hierarchy.num_classes());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let preds = predict(net, &data.images::<f32>(chunk))?;
        cm.accumulate(&data.labels(chunk), &preds, hierarchy.ignore_id())?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::tiny_config;
    use crate::net::Variant;

    fn tiny_run(seed: u64) -> (RunConfig, Dataset, ImportanceHierarchy) {
        let scene = SceneConfig {
            height: 8,
            width: 12,
            object_size: [2, 3],
            ..SceneConfig::default()
        };
        let mut cfg = RunConfig::new(seed);
        cfg.net = NetConfig {
            num_classes: 9,
            ..tiny_config(Variant::Erf, 0)
        };
        cfg.optim.epochs = 3;
        cfg.batch_size = 3;
        let data = Dataset::generate(&scene, 0, 7).unwrap();
        (cfg, data, scene_hierarchy())
    }

    #[test]
    fn seed_is_mandatory_in_json() {
        assert!(RunConfig::parse("{}").is_err());
        let cfg = RunConfig::parse(r#"{"seed": 4}"#).unwrap();
        assert_eq!(cfg, RunConfig::new(4));
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn loss_curve_columns() {
        assert_eq!(loss_curve_header(3), "epoch,lr,I_1,I_2,I_3,f_2,f_3,total");
        assert_eq!(loss_curve_header(1), "epoch,lr,I_1,total");
    }

    #[test]
    fn training_is_deterministic_and_lowers_the_loss() {
        let (mut cfg, data, h) = tiny_run(3);
        cfg.loss.loss = crate::loss::LossKind::Wce;
        cfg.optim.epochs = 8;
        cfg.optim.lr = 5e-3;
        let a = train(&cfg, &data, &h, |_, _| Ok(())).unwrap();
        let b = train(&cfg, &data, &h, |_, _| Ok(())).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(
            checkpoint::encode(a.network.params()),
            checkpoint::encode(b.network.params())
        );
        assert!(a.log.last().unwrap().total < a.log[0].total);
    }

    #[test]
    fn evaluation_scores_every_pixel() {
        let (cfg, data, h) = tiny_run(1);
        let net = Network::<f32>::new(cfg.effective_net()).unwrap();
        let cm = evaluate(&net, &data, &h, 4).unwrap();
        assert_eq!(cm.total(), (data.len() * 8 * 12) as u64);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let (mut cfg, data, h) = tiny_run(1);
        cfg.net.width = 16;
        assert!(matches!(train(&cfg, &data, &h, |_, _| Ok(())), Err(Error::Shape(_))));
    }
}
