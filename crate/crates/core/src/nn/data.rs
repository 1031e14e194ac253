//! Seeded synthetic image classification data.
//!
//! Each class is a fixed grey-level texture built from a few 2-D cosine
//! modes; samples add i.i.d. Gaussian pixel noise and clamp to `[0, 1]`.
//! Classes never share a mode. The modes sit between 4 and 12 cycles per
//! image side, so pooling to a low resolution blurs or aliases them and
//! accuracy grows with the resolution a subnet sees.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_NOISE: f64 = 0.3;
const AMPLITUDE: (f64, f64) = (0.08, 0.16);

/// `n` square greyscale images, row-major, plus labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub side: usize,
    pub num_classes: usize,
    pub images: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn view(&self) -> Images<'_> {
        Images {
            data: &self.images,
            side: self.side,
        }
    }

    /// The same images pooled to `r x r`.
    pub fn pooled(&self, r: usize) -> Vec<f64> {
        pool_images(&self.images, self.side, r)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Borrowed batch of square images.
#[derive(Clone, Copy, Debug)]
pub struct Images<'a> {
    pub data: &'a [f64],
    pub side: usize,
}

impl<'a> Images<'a> {
    pub fn new(data: &'a [f64], side: usize) -> Self {
        debug_assert_eq!(data.len() % (side * side), 0);
        Images { data, side }
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.side * self.side)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> Images<'a> {
        let n = self.side * self.side;
        Images {
            data: &self.data[start * n..end * n],
            side: self.side,
        }
    }
}

/// Exact block averages: output cell `(i, j)` is the mean of input rows
/// `[floor(i S / r), floor((i + 1) S / r))` and the same columns.
pub fn adaptive_avg_pool(image: &[f64], side: usize, r: usize) -> Vec<f64> {
    assert!(r >= 1 && r <= side, "target side {r} outside 1..={side}");
    if r == side {
        return image.to_vec();
    }
    let bounds: Vec<(usize, usize)> = (0..r).map(|i| (i * side / r, (i + 1) * side / r)).collect();
    let mut out = Vec::with_capacity(r * r);
    for &(y0, y1) in &bounds {
        for &(x0, x1) in &bounds {
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += image[y * side + x0..y * side + x1].iter().sum::<f64>();
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

pub fn pool_images(images: &[f64], side: usize, r: usize) -> Vec<f64> {
    if r == side {
        return images.to_vec();
    }
    images
        .chunks_exact(side * side)
        .flat_map(|img| adaptive_avg_pool(img, side, r))
        .collect()
}

/// The noiseless class templates.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPatterns {
    pub side: usize,
    pub patterns: Vec<Vec<f64>>,
}

impl ClassPatterns {
    pub fn generate(seed: u64, num_classes: usize, side: usize) -> Result<ClassPatterns> {
        let mut rng = rng::stream(seed, "class-patterns");
        // Distinct oriented frequencies, up to sign.
        let mut modes: Vec<(i32, i32)> = Vec::new();
        for fx in 0..=12 {
            for fy in -12..=12 {
                let f2 = fx * fx + fy * fy;
                if (fx == 0 && fy <= 0) || !(16..=144).contains(&f2) {
                    continue;
                }
                modes.push((fx, fy));
            }
        }
        modes.shuffle(&mut rng);
        let mut pool = modes.into_iter();
        let mut patterns = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            let count = rng.gen_range(2..=3);
            let picked: Vec<(i32, i32)> = pool.by_ref().take(count).collect();
            if picked.len() < 2 {
                return Err(Error::Data(format!(
                    "too many classes ({num_classes}) for distinct patterns"
                )));
            }
            let terms: Vec<(i32, i32, f64, f64)> = picked
                .into_iter()
                .map(|(fx, fy)| {
                    (
                        fx,
                        fy,
                        rng.gen_range(AMPLITUDE.0..AMPLITUDE.1),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let mut img = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    let v: f64 = terms
                        .iter()
                        .map(|&(fx, fy, amp, phase)| {
                            amp * (2.0 * PI * (fx as f64 * x as f64 + fy as f64 * y as f64) / side as f64 + phase).cos()
                        })
                        .sum();
                    img.push(0.5 + v);
                }
            }
            patterns.push(img);
        }
        Ok(ClassPatterns { side, patterns })
    }

    /// Index of the template nearest in squared distance.
    pub fn nearest(&self, image: &[f64]) -> usize {
        let dist = |p: &[f64]| p.iter().zip(image).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..self.patterns.len())
            .min_by(|&a, &b| dist(&self.patterns[a]).total_cmp(&dist(&self.patterns[b])))
            .expect("at least one class")
    }

    /// Balanced labels in seeded order, each image its template plus noise.
    pub fn sample(&self, seed: u64, n: usize, noise: f64) -> Result<Dataset> {
        let classes = self.patterns.len();
        let normal = Normal::new(0.0, noise).map_err(|e| Error::Data(format!("noise {noise}: {e}")))?;
        let mut rng = rng::stream(seed, "samples");
        let mut labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
        labels.shuffle(&mut rng);
        let mut images = Vec::with_capacity(n * self.side * self.side);
        for &l in &labels {
            images.extend(
                self.patterns[l as usize]
                    .iter()
                    .map(|&p| (p + normal.sample(&mut rng)).clamp(0.0, 1.0)),
            );
        }
        Ok(Dataset {
            side: self.side,
            num_classes: classes,
            images,
            labels,
        })
    }
}

pub fn gen_dataset(seed: u64, n: usize, num_classes: usize, side: usize) -> Result<Dataset> {
    ClassPatterns::generate(seed, num_classes, side)?.sample(rng::derive_seed(seed, "split"), n, DEFAULT_NOISE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Defaults to a stream of the run's master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub train: usize,
    pub calib: usize,
    pub val: usize,
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: None,
            train: 1024,
            calib: 512,
            val: 512,
            noise: DEFAULT_NOISE,
        }
    }
}

/// Train, calibration, and validation splits sharing one set of templates.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub calib: Dataset,
    pub val: Dataset,
}

pub fn gen_splits(seed: u64, cfg: &DatasetConfig, num_classes: usize, side: usize) -> Result<DataSplits> {
    let patterns = ClassPatterns::generate(seed, num_classes, side)?;
    Ok(DataSplits {
        train: patterns.sample(rng::derive_seed(seed, "train"), cfg.train, cfg.noise)?,
        calib: patterns.sample(rng::derive_seed(seed, "calib"), cfg.calib, cfg.noise)?,
        val: patterns.sample(rng::derive_seed(seed, "val"), cfg.val, cfg.noise)?,
    })
}
