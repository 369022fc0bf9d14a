//! Three-class geometric pattern images for exercising the full pipeline
//! without real radiographs: a filled disk, horizontal bars, a checkerboard.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, Dataset};
use crate::tensor::Tensor;

pub const PATTERN_CLASSES: [&str; 3] = ["disk", "bars", "checkerboard"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Disk,
    Bars,
    Checkerboard,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Disk, Pattern::Bars, Pattern::Checkerboard];
}

/// Draws one grayscale pattern (replicated to three channels) with additive
/// Gaussian noise of standard deviation `noise`, clamped to [0,1].
pub fn render<R: Rng>(pattern: Pattern, size: usize, noise: f64, rng: &mut R) -> Tensor<f32> {
    let s = size as f32;
    let background = rng.random_range(0.1f32..0.4);
    let foreground = rng.random_range(0.6f32..0.9);
    let fill: Box<dyn Fn(f32, f32) -> bool> = match pattern {
        Pattern::Disk => {
            let cy = rng.random_range(0.35..0.65) * s;
            let cx = rng.random_range(0.35..0.65) * s;
            let r = rng.random_range(0.15..0.3) * s;
            Box::new(move |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r)
        }
        Pattern::Bars => {
            let period = rng.random_range(0.1..0.2) * s;
            let phase = rng.random_range(0.0..period);
            Box::new(move |y, _| ((y + phase) / period).fract() < 0.5)
        }
        Pattern::Checkerboard => {
            let cell = rng.random_range(0.075..0.15) * s;
            let (py, px) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            Box::new(move |y, x| {
                let a = ((y + py) / cell).floor() as i64;
                let b = ((x + px) / cell).floor() as i64;
                (a + b).rem_euclid(2) == 0
            })
        }
    };
    let gauss = Normal::new(0.0, noise.max(0.0)).expect("finite sigma");
    let mut plane = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let base = if fill(y as f32 + 0.5, x as f32 + 0.5) {
                foreground
            } else {
                background
            };
            let v = base as f64 + if noise > 0.0 { gauss.sample(rng) } else { 0.0 };
            plane.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new(&[3, size, size], data).expect("shape matches")
}

/// `per_class[c]` images of pattern `c`, each drawn from its own seeded stream.
pub fn pattern_dataset(per_class: [usize; 3], size: usize, noise: f64, seed: u64) -> Dataset {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, (&count, pattern)) in per_class.iter().zip(Pattern::ALL).enumerate() {
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[label as u64, i as u64]));
            images.push(render(pattern, size, noise, &mut rng));
            labels.push(label);
        }
    }
    Dataset::new(
        PATTERN_CLASSES.iter().map(|s| s.to_string()).collect(),
        images,
        labels,
    )
    .expect("generator output is consistent")
}
