//! Synthetic steatosis images and stratified splits.
//!
//! Each image is a speckled mid-gray background carrying non-overlapping
//! bright ellipses ("fat droplets"). The fraction of droplet pixels sets the
//! steatosis grade:
//!
//! | droplet fraction | grade |
//! |------------------|-------|
//! | `< 0.05`         | 0     |
//! | `0.05 ..< 0.33`  | 1     |
//! | `0.33 ..= 0.66`  | 2     |
//! | `> 0.66`         | 3     |
//!
//! Grades 0 and 1 are transplantable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetIndex, IndexEntry, Label};
use crate::error::{Error, Result};
use crate::model::epoch_seed;
use crate::tensor::Tensor;

/// Pixels at or above this value are droplet pixels; the background never
/// reaches it.
pub const DROPLET_THRESHOLD: f64 = 0.9;
const BACKGROUND_MAX: f64 = 0.8;
const DROPLET_MIN: f64 = 0.93;

pub const GRADE_THRESHOLDS: [f64; 3] = [0.05, 0.33, 0.66];

/// Steatosis grade of a droplet area fraction.
pub fn grade_of_fraction(fraction: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    let [g1, g2, g3] = GRADE_THRESHOLDS;
    Ok(if fraction < g1 {
        0
    } else if fraction < g2 {
        1
    } else if fraction <= g3 {
        2
    } else {
        3
    })
}

pub fn label_of_grade(grade: u8) -> Label {
    if grade <= 1 {
        Label::Transplantable
    } else {
        Label::NonTransplantable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub per_grade: usize,
    /// Droplet radius range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    pub background: f64,
    /// Standard deviation of the background speckle.
    pub noise: f64,
    /// Target fractions stay this far inside each grade interval.
    pub margin: f64,
    pub max_fraction: f64,
    /// Placement attempts per image before giving up.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            per_grade: 1100,
            radius_min: 1.5,
            radius_max: 6.0,
            background: 0.45,
            noise: 0.08,
            margin: 0.02,
            max_fraction: 0.8,
            max_attempts: 200_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_grade == 0 {
            return Err(Error::Invalid("samples per grade must be >= 1".into()));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::Invalid("image must be at least 4x4".into()));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::Invalid("need 0 < radius_min <= radius_max".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Invalid(format!("negative margin {}", self.margin)));
        }
        let [_, _, g3] = GRADE_THRESHOLDS;
        if self.max_fraction <= g3 + self.margin || self.max_fraction > 1.0 {
            return Err(Error::Invalid(format!(
                "max_fraction {} must lie in ({}, 1]",
                self.max_fraction,
                g3 + self.margin
            )));
        }
        for g in 0..4 {
            let (lo, hi) = self.target_interval(g);
            if lo >= hi {
                return Err(Error::Invalid(format!("margin {} empties grade {g}", self.margin)));
            }
        }
        Ok(())
    }

    /// Interval the target fraction of a grade-`g` image is drawn from.
    pub fn target_interval(&self, grade: u8) -> (f64, f64) {
        let [g1, g2, g3] = GRADE_THRESHOLDS;
        let m = self.margin;
        match grade {
            0 => (0.01, g1 - m),
            1 => (g1 + m, g2 - m),
            2 => (g2 + m, g3 - m),
            _ => (g3 + m, self.max_fraction),
        }
    }
}

/// A generated image and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `[1, height, width]`, values in `[0, 1]`.
    pub image: Tensor,
    /// Measured fraction of droplet pixels.
    pub droplet_fraction: f64,
    pub grade: u8,
    pub label: Label,
    pub seed: u64,
}

/// Fraction of pixels at or above [`DROPLET_THRESHOLD`].
pub fn measure_fraction(image: &Tensor) -> f64 {
    let n = image.data().iter().filter(|v| **v >= DROPLET_THRESHOLD).count();
    n as f64 / image.len() as f64
}

fn ellipse_pixels(
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    phi: f64,
    h: usize,
    w: usize,
    out: &mut Vec<usize>,
) -> bool {
    out.clear();
    let r = rx.max(ry);
    // droplets may be cut by the image border
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h - 1);
    let x1 = ((cx + r).ceil() as usize).min(w - 1);
    let (s, c) = phi.sin_cos();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * c + dy * s) / rx;
            let v = (-dx * s + dy * c) / ry;
            if u * u + v * v <= 1.0 {
                out.push(y * w + x);
            }
        }
    }
    !out.is_empty()
}

/// Places droplets until the covered fraction lies in `[target, cap]`.
fn place_droplets(cfg: &SynthConfig, target: f64, cap: f64, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    let (h, w) = (cfg.height, cfg.width);
    let n = h * w;
    let need = (target * n as f64).ceil() as usize;
    let limit = ((cap * n as f64).floor() as usize).max(need);
    let mut mask = vec![false; n];
    let mut covered = 0usize;
    let mut r_max = cfg.radius_max;
    let mut failures = 0usize;
    let mut pixels = Vec::new();
    for _ in 0..cfg.max_attempts {
        if covered >= need {
            return Ok(mask);
        }
        let r = if r_max > cfg.radius_min {
            rng.random_range(cfg.radius_min..=r_max)
        } else {
            r_max
        };
        let ecc = rng.random_range(0.6..=1.0);
        let phi = rng.random_range(0.0..std::f64::consts::PI);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let ok = ellipse_pixels(cx, cy, r, r * ecc, phi, h, w, &mut pixels)
            && covered + pixels.len() <= limit
            && pixels.iter().all(|&p| !mask[p]);
        if ok {
            for &p in &pixels {
                mask[p] = true;
            }
            covered += pixels.len();
            failures = 0;
        } else {
            failures += 1;
            if failures >= 64 {
                // free space is fragmented: shrink droplets, down to single pixels
                r_max = (r_max * 0.8).max(0.5);
                failures = 0;
            }
        }
    }
    if covered >= need {
        return Ok(mask);
    }
    Err(Error::Generation(format!(
        "reached fraction {:.4} of target {target:.4} after {} attempts ({h}x{w}, radius now {r_max:.2})",
        covered as f64 / n as f64,
        cfg.max_attempts
    )))
}

/// One image of the given grade from its own seed.
pub fn gen_sample(cfg: &SynthConfig, grade: u8, seed: u64) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.target_interval(grade);
    let target = rng.random_range(lo..=hi);
    let cap = (hi + cfg.margin / 2.0).min(1.0);
    let mask = place_droplets(cfg, target, cap, &mut rng)?;
    let speckle = Normal::new(0.0, cfg.noise.max(0.0))
        .map_err(|e| Error::Invalid(format!("noise: {e}")))?;
    let data = mask
        .iter()
        .map(|&droplet| {
            if droplet {
                rng.random_range(DROPLET_MIN..=1.0)
            } else {
                (cfg.background + speckle.sample(&mut rng)).clamp(0.0, BACKGROUND_MAX)
            }
        })
        .collect();
    let image = Tensor::new(vec![1, cfg.height, cfg.width], data)?;
    let droplet_fraction = measure_fraction(&image);
    let measured_grade = grade_of_fraction(droplet_fraction)?;
    if measured_grade != grade {
        return Err(Error::Generation(format!(
            "grade {grade} image measured {droplet_fraction:.4} (grade {measured_grade})"
        )));
    }
    Ok(SynthSample {
        image,
        droplet_fraction,
        grade,
        label: label_of_grade(grade),
        seed,
    })
}

/// Seed of sample `index`; generation order is grade-major.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    epoch_seed(seed ^ 0x5EED_DA7A, index as u64)
}

/// `per_grade` images for each of the four grades, grade-major order.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    (0..4 * cfg.per_grade)
        .into_par_iter()
        .map(|i| gen_sample(cfg, (i / cfg.per_grade) as u8, sample_seed(cfg.seed, i)))
        .collect()
}

pub fn to_dataset(samples: &[SynthSample]) -> Dataset {
    Dataset {
        inputs: samples.iter().map(|s| s.image.clone()).collect(),
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

pub fn to_index(cfg: &SynthConfig, samples: &[SynthSample]) -> DatasetIndex {
    DatasetIndex {
        channels: 1,
        height: cfg.height,
        width: cfg.width,
        samples: samples
            .iter()
            .enumerate()
            .map(|(i, s)| IndexEntry {
                file: format!("{i:05}.f32"),
                fraction: s.droplet_fraction,
                grade: s.grade,
                label: s.label,
                seed: s.seed,
            })
            .collect(),
    }
}

/// Train/test index lists of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_by_class(labels: &[Label], seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }
    by_class
}

/// Stratified k-fold: every class count must be divisible by `k`. Test sets
/// are disjoint and cover the dataset; index lists are sorted.
pub fn kfold_splits(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let by_class = shuffled_by_class(labels, seed);
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() % k != 0 {
            return Err(Error::Invalid(format!(
                "class {c} has {} samples, not divisible into {k} folds",
                idx.len()
            )));
        }
    }
    let folds = (0..k)
        .map(|f| {
            let mut test = Vec::new();
            let mut train = Vec::new();
            for idx in &by_class {
                let size = idx.len() / k;
                for (j, &i) in idx.iter().enumerate() {
                    if j / size.max(1) == f && size > 0 {
                        test.push(i);
                    } else {
                        train.push(i);
                    }
                }
            }
            test.sort_unstable();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect();
    Ok(folds)
}

/// Draws a class-balanced test set of `test_size` (even) and returns the
/// remaining indices as the training pool.
pub fn stratified_holdout(labels: &[Label], test_size: usize, seed: u64) -> Result<Fold> {
    if test_size % 2 != 0 {
        return Err(Error::Invalid(format!("test size {test_size} must be even")));
    }
    let by_class = shuffled_by_class(labels, seed);
    let per = test_size / 2;
    let mut fold = Fold {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < per {
            return Err(Error::Invalid(format!(
                "class {c} has {} samples, {per} needed for the test set",
                idx.len()
            )));
        }
        fold.test.extend_from_slice(&idx[..per]);
        fold.train.extend_from_slice(&idx[per..]);
    }
    fold.test.sort_unstable();
    fold.train.sort_unstable();
    Ok(fold)
}

/// A class-balanced subset of `pool` of size `n` (even), sorted.
pub fn stratified_subset(labels: &[Label], pool: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n % 2 != 0 {
        return Err(Error::Invalid(format!("subset size {n} must be even")));
    }
    let pool_labels: Vec<Label> = pool.iter().map(|&i| labels[i]).collect();
    let by_class = shuffled_by_class(&pool_labels, seed);
    let mut out = Vec::with_capacity(n);
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < n / 2 {
            return Err(Error::Invalid(format!(
                "class {c} has {} samples in the pool, {} requested",
                idx.len(),
                n / 2
            )));
        }
        out.extend(idx[..n / 2].iter().map(|&j| pool[j]));
    }
    out.sort_unstable();
    Ok(out)
}
