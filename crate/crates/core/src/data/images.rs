use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_CHANNELS: usize = 3;
const NOISE: f32 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    /// `[n, h, w, c]`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.images.len() / self.len().max(1)
    }
}

/// Noise-free value of class `k` at pixel `(y, x)`, channel `ch`: a gradient
/// along the class orientation plus a sinusoid whose frequency grows with `k`.
pub fn class_pattern(k: usize, num_classes: usize, y: usize, x: usize, ch: usize, h: usize, w: usize) -> f32 {
    let theta = std::f32::consts::PI * k as f32 / num_classes as f32;
    let (sy, sx) = (y as f32 / h as f32 - 0.5, x as f32 / w as f32 - 0.5);
    let u = sx * theta.cos() + sy * theta.sin();
    let phase = ch as f32 * 2.0 * std::f32::consts::PI / IMAGE_CHANNELS as f32;
    let wave = (2.0 * std::f32::consts::PI * (k + 1) as f32 * u + phase).sin();
    0.5 + 0.3 * u + 0.25 * wave
}

/// `n` images of size `h x w x 3`, labels cycling through the classes so the
/// class histogram is exactly uniform.
pub fn gen_images(num_classes: usize, n: usize, h: usize, w: usize, seed: u64) -> Result<ImageDataset> {
    if num_classes < 2 || n == 0 || n % num_classes != 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "need at least 2 classes and a positive image count divisible by them (got {num_classes} classes, {n} images)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let per = h * w * IMAGE_CHANNELS;
    let mut data = Vec::with_capacity(n * per);
    for &k in &labels {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..IMAGE_CHANNELS {
                    let v = class_pattern(k, num_classes, y, x, ch, h, w) + rng.gen_range(-NOISE..NOISE);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(ImageDataset { images: Tensor::new([n, h, w, IMAGE_CHANNELS], data)?, labels, num_classes, seed })
}
