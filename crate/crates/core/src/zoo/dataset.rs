//! Deterministic 10-class synthetic image datasets. Four generator families
//! stand in for four real datasets; each renders a class-dependent pattern
//! with random jitter, amplitude and additive Gaussian noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Oriented sinusoidal gratings, one orientation per class.
    Gratings,
    /// A Gaussian bump at one of ten positions on a circle.
    Blobs,
    /// A ring whose radius encodes the class.
    Rings,
    /// A stroke from the centre in one of ten directions.
    Strokes,
}

impl Generator {
    pub const ALL: [Generator; 4] = [Generator::Gratings, Generator::Blobs, Generator::Rings, Generator::Strokes];

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Generator::Gratings => "gratings",
            Generator::Blobs => "blobs",
            Generator::Rings => "rings",
            Generator::Strokes => "strokes",
        };
        f.write_str(s)
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.to_string() == s)
            .ok_or_else(|| validation(format!("unknown dataset generator {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub channels: usize,
    pub size: usize,
    pub train: usize,
    pub test: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.channels, 1 | 3) {
            return Err(validation(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.size < 8 {
            return Err(validation(format!("image size {} is below the minimum of 8", self.size)));
        }
        if self.train < NUM_CLASSES || self.test < NUM_CLASSES {
            return Err(validation("need at least one image per class in each split"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(validation(format!("noise {} must be non-negative", self.noise)));
        }
        Ok(())
    }
}

/// Images are `[n, channels, size, size]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub train: Split,
    pub test: Split,
}

impl SyntheticDataset {
    pub fn image_len(&self) -> usize {
        self.spec.channels * self.spec.size * self.spec.size
    }

    /// Image shape `[channels, size, size]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.spec.channels, self.spec.size, self.spec.size]
    }
}

/// Pattern value in roughly `[-1, 1]` at pixel `(y, x)`.
fn pattern(gen: Generator, class: usize, s: f64, y: f64, x: f64, jitter: (f64, f64), phase: f64) -> f64 {
    let k = class as f64;
    let (cy, cx) = ((s - 1.0) / 2.0 + jitter.0, (s - 1.0) / 2.0 + jitter.1);
    let (dy, dx) = (y - cy, x - cx);
    match gen {
        Generator::Gratings => {
            let theta = k * PI / NUM_CLASSES as f64;
            let u = dx * theta.cos() + dy * theta.sin();
            (2.0 * PI * u / (s / 3.0) + phase).cos()
        }
        Generator::Blobs => {
            let a = 2.0 * PI * k / NUM_CLASSES as f64;
            let r = s / 4.0;
            let (by, bx) = (cy + r * a.sin(), cx + r * a.cos());
            let d2 = (y - by).powi(2) + (x - bx).powi(2);
            2.0 * (-d2 / (2.0 * (s / 8.0).powi(2))).exp() - 1.0
        }
        Generator::Rings => {
            let radius = s * (0.08 + 0.035 * k);
            let d = (dy * dy + dx * dx).sqrt();
            2.0 * (-(d - radius).powi(2) / (2.0 * (s / 24.0).max(0.5).powi(2))).exp() - 1.0
        }
        Generator::Strokes => {
            let a = 2.0 * PI * k / NUM_CLASSES as f64;
            let (ux, uy) = (a.cos(), a.sin());
            let along = dx * ux + dy * uy;
            let across = (dx * uy - dy * ux).abs();
            let on = along >= 0.0 && along <= s * 0.45;
            if on {
                2.0 * (-across * across / (2.0 * (s / 20.0).max(0.6).powi(2))).exp() - 1.0
            } else {
                -1.0
            }
        }
    }
}

/// Per-class color weights for 3-channel datasets.
fn tint(class: usize, channel: usize, channels: usize) -> f64 {
    if channels == 1 {
        return 1.0;
    }
    let a = 2.0 * PI * class as f64 / NUM_CLASSES as f64 + 2.0 * PI * channel as f64 / 3.0;
    0.75 + 0.25 * a.cos()
}

fn render_split<R: Rng>(spec: &DatasetSpec, n: usize, rng: &mut R) -> Split {
    let mut labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
    labels.shuffle(rng);
    let (c, s) = (spec.channels, spec.size);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut images = Vec::with_capacity(n * c * s * s);
    let max_shift = (s as f64 / 10.0).max(1.0);
    for &label in &labels {
        let jitter = (rng.gen_range(-max_shift..=max_shift), rng.gen_range(-max_shift..=max_shift));
        let amp = rng.gen_range(0.6..1.4);
        let phase = rng.gen_range(-PI / 4.0..PI / 4.0);
        for ch in 0..c {
            let t = tint(label, ch, c);
            for y in 0..s {
                for x in 0..s {
                    let v = amp * t * pattern(spec.generator, label, s as f64, y as f64, x as f64, jitter, phase);
                    let e = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    images.push(v + e);
                }
            }
        }
    }
    Split { images, labels }
}

/// Renders the dataset; identical specs give bit-identical data.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.generator.index());
    let train = render_split(spec, spec.train, &mut rng);
    let test = render_split(spec, spec.test, &mut rng);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        train,
        test,
    })
}
