//! Seeded procedural datasets for tests and desk-scale experiments.
//!
//! Each class owns a smooth prototype pattern; a sample is the mid-gray image
//! plus the class prototype at a random per-sample amplitude plus i.i.d.
//! Gaussian pixel noise, clamped to `[0, 1]`. With a low `signal` relative to
//! `noise` the classes are separable but only by small per-pixel margins,
//! which is the regime where ℓ∞ attacks bite.

use std::f64::consts::PI;

use ndarray::{Array3, Array4, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{LabeledImages, Split};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Training samples per class.
    pub per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Prototype amplitude in pixel units.
    pub signal: f64,
    /// Standard deviation of the pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 100,
            test_per_class: 20,
            channels: 3,
            height: 16,
            width: 16,
            signal: 0.15,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn prototypes(&self) -> Vec<Array3<f64>> {
        let mut rng = seed::rng(self.seed, "synthetic-prototypes", 0, 0);
        (0..self.classes)
            .map(|_| {
                let waves: Vec<(f64, f64, f64, Vec<f64>)> = (0..4)
                    .map(|_| {
                        let fy = rng.random_range(0.5..3.0);
                        let fx = rng.random_range(0.5..3.0);
                        let phase = rng.random_range(0.0..2.0 * PI);
                        let weights = (0..self.channels)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect();
                        (fy, fx, phase, weights)
                    })
                    .collect();
                let mut proto = Array3::from_shape_fn(
                    (self.channels, self.height, self.width),
                    |(c, y, x)| {
                        let (yy, xx) = (
                            y as f64 / self.height as f64,
                            x as f64 / self.width as f64,
                        );
                        waves
                            .iter()
                            .map(|(fy, fx, ph, w)| w[c] * (2.0 * PI * (fy * yy + fx * xx) + ph).sin())
                            .sum()
                    },
                );
                let peak = proto.iter().fold(0.0f64, |a: f64, v: &f64| a.max(v.abs())).max(1e-12);
                proto.mapv_inplace(|v| v / peak);
                proto
            })
            .collect()
    }

    pub fn generate(&self, split: Split) -> LabeledImages {
        let per_class = match split {
            Split::Train => self.per_class,
            Split::Test => self.test_per_class,
        };
        let protos = self.prototypes();
        let n = per_class * self.classes;
        let mut rng = seed::rng(self.seed, "synthetic-samples", split as u64, 0);
        let mut images = Array4::<f64>::zeros((n, self.channels, self.height, self.width));
        // interleave classes so unshuffled prefixes stay balanced
        let labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        for (i, mut img) in images.axis_iter_mut(Axis(0)).enumerate() {
            let amp = self.signal * rng.random_range(0.6..1.4);
            let proto = &protos[labels[i]];
            for (dst, p) in img.iter_mut().zip(proto.iter()) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *dst = (0.5 + amp * p + self.noise * z).clamp(0.0, 1.0);
            }
        }
        LabeledImages::new(images, labels, self.classes, vec![])
            .expect("synthetic data satisfies the dataset invariants")
    }
}
