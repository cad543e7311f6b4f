//! Synthetic scenes, netpbm I/O, on-disk datasets and shuffled batching.

pub mod netpbm;
pub mod scene;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use netpbm::{load_pgm, load_ppm, save_pgm, save_ppm, RgbImage};
pub use scene::{generate_scene, scene_hierarchy, Sample, SceneConfig};

use crate::error::{Error, Result};
use crate::hierarchy::ImportanceHierarchy;
use crate::maps::LabelMap;
use crate::tensor::{Real, Tensor};

/// Same-sized image / label pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        };
        let size = (first.image.height(), first.image.width());
        for (k, s) in samples.iter().enumerate() {
            if (s.image.height(), s.image.width()) != size
                || (s.labels.height(), s.labels.width()) != size
                || s.labels.batch() != 1
            {
                return Err(Error::Shape(format!("sample {k} does not match {size:?}")));
            }
        }
        Ok(Dataset { samples })
    }

    /// Scenes `first .. first + count` of the generator stream.
    pub fn generate(config: &SceneConfig, first: u64, count: usize) -> Result<Self> {
        let samples = (first..first + count as u64)
            .map(|i| generate_scene(config, i))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn size(&self) -> (usize, usize) {
        let s = &self.samples[0];
        (s.image.height(), s.image.width())
    }

    /// NHWC images scaled to `[0, 1]`.
    pub fn images<T: Real>(&self, indices: &[usize]) -> Tensor<T> {
        let (h, w) = self.size();
        let mut data = Vec::with_capacity(indices.len() * h * w * 3);
        for &i in indices {
            data.extend(self.samples[i].image.to_unit::<T>());
        }
        Tensor::from_vec(&[indices.len(), h, w, 3], data).expect("sizes checked")
    }

    pub fn labels(&self, indices: &[usize]) -> LabelMap {
        LabelMap::stack(indices.iter().map(|&i| &self.samples[i].labels)).expect("sizes checked")
    }

    pub fn label_maps(&self) -> impl Iterator<Item = &LabelMap> {
        self.samples.iter().map(|s| &s.labels)
    }

    /// Writes `images/NNNNN.ppm`, `labels/NNNNN.pgm` and `meta.json`.
    pub fn save_dir(&self, dir: &Path, meta: &DatasetMeta) -> Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("labels"))?;
        for (k, s) in self.samples.iter().enumerate() {
            save_ppm(&s.image, &dir.join("images").join(format!("{k:05}.ppm")))?;
            save_pgm(&s.labels, &dir.join("labels").join(format!("{k:05}.pgm")))?;
        }
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)? + "\n")?;
        Ok(())
    }

    /// Reads every `images/*.ppm` with a same-named `labels/*.pgm`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut names: Vec<String> = std::fs::read_dir(dir.join("images"))?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.retain(|n| n.ends_with(".ppm"));
        names.sort();
        let samples = names
            .iter()
            .map(|n| {
                let stem = n.trim_end_matches(".ppm");
                Ok(Sample {
                    image: load_ppm(&dir.join("images").join(n))?,
                    labels: load_pgm(&dir.join("labels").join(format!("{stem}.pgm")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }
}

/// Contents of a dataset's `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: String,
    /// Index of the first scene in the generator stream.
    pub first_index: u64,
    pub count: usize,
    pub scene: SceneConfig,
    pub hierarchy: serde_json::Value,
}

impl DatasetMeta {
    pub fn new(split: &str, first_index: u64, count: usize, scene: &SceneConfig, h: &ImportanceHierarchy) -> Self {
        DatasetMeta {
            split: split.to_string(),
            first_index,
            count,
            scene: scene.clone(),
            hierarchy: serde_json::from_str(&h.to_json()).expect("hierarchy JSON"),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?)
    }

    pub fn hierarchy(&self) -> Result<ImportanceHierarchy> {
        ImportanceHierarchy::parse(&self.hierarchy.to_string())
    }
}

/// Index batches of a random permutation of `0..len` seeded by `epoch_seed`.
/// The last batch is shorter when `batch_size` does not divide `len`.
pub fn batches(len: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_batch_when_size_equals_len() {
        let b = batches(10, 10, 3).unwrap();
        assert_eq!(b.len(), 1);
        let mut all = b[0].clone();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_are_a_seeded_partition() {
        let a = batches(23, 8, 42).unwrap();
        assert_eq!(a, batches(23, 8, 42).unwrap());
        assert_ne!(a, batches(23, 8, 43).unwrap());
        assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 8, 7]);
        let mut all: Vec<usize> = a.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(batches(3, 0, 0).is_err());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let cfg = SceneConfig::default();
        let ds = Dataset::generate(&cfg, 0, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = DatasetMeta::new("train", 0, 3, &cfg, &scene_hierarchy());
        ds.save_dir(dir.path(), &meta).unwrap();
        assert_eq!(Dataset::load_dir(dir.path()).unwrap(), ds);
        let back = DatasetMeta::load(dir.path()).unwrap();
        assert_eq!(back, meta);
        assert_eq!(back.hierarchy().unwrap(), scene_hierarchy());
    }

    #[test]
    fn image_tensor_is_unit_scaled() {
        let ds = Dataset::generate(&SceneConfig::default(), 5, 2).unwrap();
        let t = ds.images::<f32>(&[1, 0]);
        assert_eq!(t.shape(), &[2, 64, 128, 3]);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(t.data()[0], ds.samples()[1].image.data()[0] as f32 / 255.0);
        assert_eq!(ds.labels(&[1, 0]).batch(), 2);
    }
}
