//! Procedural street scenes.
//!
//! Top to bottom a scene is a sky band, a background band split into
//! building / vegetation columns, a fence band, a sidewalk band and the road.
//! Small cars (on the road), pedestrians (on the sidewalk) and signs (in the
//! background band) are then painted on top, and every region gets its own
//! color jitter plus per-pixel Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::netpbm::RgbImage;
use crate::error::{Error, Result};
use crate::hierarchy::ImportanceHierarchy;
use crate::maps::LabelMap;

pub const SKY: u32 = 0;
pub const BUILDING: u32 = 1;
pub const VEGETATION: u32 = 2;
pub const ROAD: u32 = 3;
pub const SIDEWALK: u32 = 4;
pub const FENCE: u32 = 5;
pub const CAR: u32 = 6;
pub const SIGN: u32 = 7;
pub const PEDESTRIAN: u32 = 8;

pub const CLASS_NAMES: [&str; 9] = [
    "sky",
    "building",
    "vegetation",
    "road",
    "sidewalk",
    "fence",
    "car",
    "sign",
    "pedestrian",
];

/// Mean RGB of each class before jitter and noise.
pub const CLASS_COLORS: [[f64; 3]; 9] = [
    [0.55, 0.70, 0.90],
    [0.45, 0.40, 0.38],
    [0.25, 0.50, 0.22],
    [0.35, 0.35, 0.37],
    [0.60, 0.55, 0.50],
    [0.50, 0.42, 0.30],
    [0.44, 0.30, 0.36],
    [0.62, 0.46, 0.26],
    [0.50, 0.44, 0.58],
];

/// Three groups of three: background, ground, small objects.
pub fn scene_hierarchy() -> ImportanceHierarchy {
    ImportanceHierarchy::from_names(
        &CLASS_NAMES,
        &[
            &[SKY, BUILDING, VEGETATION],
            &[ROAD, SIDEWALK, FENCE],
            &[CAR, SIGN, PEDESTRIAN],
        ],
        None,
    )
    .expect("static hierarchy is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Nominal band heights as fractions of the image height; the road
    /// takes whatever remains.
    pub sky: f64,
    pub background: f64,
    pub fence: f64,
    pub sidewalk: f64,
    /// Each band boundary moves by up to this fraction of the height.
    pub band_jitter: f64,
    /// Inclusive range of the number of small objects per scene.
    pub objects: [usize; 2],
    /// Inclusive range of an object's larger side, in pixels.
    pub object_size: [usize; 2],
    /// Standard deviation of the per-pixel noise.
    pub noise: f64,
    /// Half-width of the uniform per-region color shift.
    pub color_jitter: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 128,
            sky: 0.25,
            background: 0.35,
            fence: 0.06,
            sidewalk: 0.12,
            band_jitter: 0.04,
            objects: [2, 6],
            object_size: [4, 14],
            noise: 0.08,
            color_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SceneConfig(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!("{}x{} is smaller than 8x8", self.height, self.width));
        }
        let fractions = [self.sky, self.background, self.fence, self.sidewalk];
        if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return bad(format!("band fractions {fractions:?} must be positive"));
        }
        let used: f64 = fractions.iter().sum();
        if used + 2.0 * self.band_jitter >= 1.0 {
            return bad(format!("bands take {used} of the height, leaving no road"));
        }
        if !(0.0..0.5).contains(&self.band_jitter) {
            return bad(format!("band jitter {} outside [0, 0.5)", self.band_jitter));
        }
        let [lo, hi] = self.objects;
        if lo > hi {
            return bad(format!("object count range {lo}..={hi} is empty"));
        }
        let [smin, smax] = self.object_size;
        if smin < 2 || smin > smax || 2 * smax >= self.height.min(self.width) {
            return bad(format!(
                "object sizes {smin}..={smax} must be at least 2 and below half of {}",
                self.height.min(self.width)
            ));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        if !self.color_jitter.is_finite() || self.color_jitter < 0.0 {
            return bad(format!("color jitter {} must be non-negative", self.color_jitter));
        }
        Ok(())
    }

    /// Row boundaries `[sky_end, background_end, fence_end, sidewalk_end]`
    /// without jitter.
    pub fn nominal_bands(&self) -> [usize; 4] {
        let h = self.height as f64;
        let mut acc = 0.0;
        [self.sky, self.background, self.fence, self.sidewalk].map(|f| {
            acc += f;
            ((acc * h).round() as usize).clamp(1, self.height - 1)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image: RgbImage,
    pub labels: LabelMap,
}

struct Canvas {
    h: usize,
    w: usize,
    labels: Vec<u32>,
    /// Region color per pixel.
    colors: Vec<[f64; 3]>,
}

impl Canvas {
    fn paint(&mut self, i: usize, j: usize, class: u32, color: [f64; 3]) {
        let k = i * self.w + j;
        self.labels[k] = class;
        self.colors[k] = color;
    }
}

fn jittered(rng: &mut ChaCha8Rng, class: u32, amount: f64) -> [f64; 3] {
    CLASS_COLORS[class as usize].map(|c| {
        if amount > 0.0 {
            c + rng.random_range(-amount..=amount)
        } else {
            c
        }
    })
}

/// Deterministic scene `index` of the stream selected by `config.seed`.
pub fn generate_scene(config: &SceneConfig, index: u64) -> Result<Sample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let (h, w) = (config.height, config.width);

    let mut bands = config.nominal_bands();
    let shift = (config.band_jitter * h as f64).round() as i64;
    if shift > 0 {
        for b in &mut bands {
            *b = (*b as i64 + rng.random_range(-shift..=shift)).clamp(1, h as i64 - 1) as usize;
        }
    }
    for k in 1..4 {
        bands[k] = bands[k].max(bands[k - 1] + 1).min(h - 1);
    }
    let [sky_end, bg_end, fence_end, walk_end] = bands;

    let mut canvas = Canvas {
        h,
        w,
        labels: vec![ROAD; h * w],
        colors: vec![[0.0; 3]; h * w],
    };
    let jitter = config.color_jitter;

    let fill_rows = |canvas: &mut Canvas, rows: std::ops::Range<usize>, class, color| {
        for i in rows {
            for j in 0..w {
                canvas.paint(i, j, class, color);
            }
        }
    };
    let sky = jittered(&mut rng, SKY, jitter);
    fill_rows(&mut canvas, 0..sky_end, SKY, sky);
    let fence = jittered(&mut rng, FENCE, jitter);
    fill_rows(&mut canvas, bg_end..fence_end, FENCE, fence);
    let walk = jittered(&mut rng, SIDEWALK, jitter);
    fill_rows(&mut canvas, fence_end..walk_end, SIDEWALK, walk);
    let road = jittered(&mut rng, ROAD, jitter);
    fill_rows(&mut canvas, walk_end..h, ROAD, road);

    let mut j0 = 0;
    while j0 < w {
        let span = rng.random_range(w / 10..=w / 3).max(1);
        let class = if rng.random_bool(0.5) { BUILDING } else { VEGETATION };
        let color = jittered(&mut rng, class, jitter);
        for i in sky_end..bg_end {
            for j in j0..(j0 + span).min(w) {
                canvas.paint(i, j, class, color);
            }
        }
        j0 += span;
    }

    let count = rng.random_range(config.objects[0]..=config.objects[1]);
    for _ in 0..count {
        let class = [CAR, SIGN, PEDESTRIAN][rng.random_range(0..3)];
        let size = rng.random_range(config.object_size[0]..=config.object_size[1]);
        let (oh, ow, floor) = match class {
            CAR => ((size * 3 / 5).max(2), size, h),
            PEDESTRIAN => (size, (size * 2 / 5).max(2), walk_end),
            _ => ((size * 3 / 5).max(2), (size * 3 / 5).max(2), bg_end),
        };
        // Anchor the object's bottom edge inside its home band.
        let (top_band, bottom_band) = match class {
            CAR => (walk_end, floor),
            PEDESTRIAN => (fence_end, floor),
            _ => (sky_end, floor),
        };
        let bottom = rng.random_range(top_band.max(oh)..=bottom_band.max(top_band.max(oh)));
        let top = bottom.saturating_sub(oh);
        let left = rng.random_range(0..=w - ow);
        let ellipse = rng.random_bool(0.5);
        let color = jittered(&mut rng, class, jitter);
        let (ci, cj) = ((oh as f64 - 1.0) / 2.0, (ow as f64 - 1.0) / 2.0);
        for di in 0..oh {
            for dj in 0..ow {
                let inside = !ellipse || {
                    let y = (di as f64 - ci) / (oh as f64 / 2.0);
                    let x = (dj as f64 - cj) / (ow as f64 / 2.0);
                    x * x + y * y <= 1.0
                };
                let i = top + di;
                if inside && i < h {
                    canvas.paint(i, left + dj, class, color);
                }
            }
        }
    }

    let noise = (config.noise > 0.0)
        .then(|| Normal::new(0.0, config.noise).expect("validated noise"));
    let mut pixels = Vec::with_capacity(h * w * 3);
    for color in &canvas.colors {
        for &c in color {
            let v = match &noise {
                Some(n) => c + n.sample(&mut rng),
                None => c,
            };
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(Sample {
        image: RgbImage::new(h, w, pixels)?,
        labels: LabelMap::new(canvas.h, canvas.w, canvas.labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_index_is_bit_identical() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 7).unwrap(), generate_scene(&cfg, 7).unwrap());
        assert_ne!(generate_scene(&cfg, 7).unwrap(), generate_scene(&cfg, 8).unwrap());
    }

    #[test]
    fn noiseless_empty_scene_is_exact_bands() {
        let cfg = SceneConfig {
            noise: 0.0,
            objects: [0, 0],
            band_jitter: 0.0,
            color_jitter: 0.0,
            ..SceneConfig::default()
        };
        let [sky, bg, fence, walk] = cfg.nominal_bands();
        let s = generate_scene(&cfg, 3).unwrap();
        for i in 0..cfg.height {
            for j in 0..cfg.width {
                let id = s.labels.get(0, i, j);
                let ok = match i {
                    i if i < sky => id == SKY,
                    i if i < bg => id == BUILDING || id == VEGETATION,
                    i if i < fence => id == FENCE,
                    i if i < walk => id == SIDEWALK,
                    _ => id == ROAD,
                };
                assert!(ok, "row {i} col {j} has class {id}");
                let rgb = &s.image.data()[(i * cfg.width + j) * 3..][..3];
                let want = CLASS_COLORS[id as usize].map(|c| (c * 255.0).round() as u8);
                assert_eq!(rgb, want);
            }
        }
    }

    #[test]
    fn labels_stay_in_the_class_table() {
        let cfg = SceneConfig::default();
        for idx in 0..20 {
            let s = generate_scene(&cfg, idx).unwrap();
            assert!(s.labels.ids().iter().all(|&id| (id as usize) < CLASS_NAMES.len()));
        }
    }

    #[test]
    fn default_draw_has_rare_small_objects() {
        let cfg = SceneConfig::default();
        let mut counts = [0u64; 9];
        for idx in 0..200 {
            for &id in generate_scene(&cfg, idx).unwrap().labels.ids() {
                counts[id as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let group = |ids: &[u32]| ids.iter().map(|&i| counts[i as usize]).sum::<u64>() as f64 / total as f64;
        let (g1, g2, g3) = (
            group(&[SKY, BUILDING, VEGETATION]),
            group(&[ROAD, SIDEWALK, FENCE]),
            group(&[CAR, SIGN, PEDESTRIAN]),
        );
        assert!((0.005..=0.08).contains(&g3), "G3 frequency {g3}");
        assert!(g1 > g2 && g2 > g3, "{g1} {g2} {g3}");
    }

    #[test]
    fn infeasible_configs_fail_before_generation() {
        let too_big = SceneConfig {
            object_size: [4, 40],
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&too_big, 0), Err(Error::SceneConfig(_))));
        let no_road = SceneConfig {
            sky: 0.5,
            background: 0.5,
            ..SceneConfig::default()
        };
        assert!(no_road.validate().is_err());
    }
}
