use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

/// Default square image side of the synthetic task.
pub const SYNTHETIC_SIZE: usize = 64;

/// Largest class count with a distinct channel signature.
pub const MAX_CLASSES: usize = 8;

/// Labelled images whose class is carried by per-channel means.
///
/// Class `k` shifts channel `c` by `+1` or `-1` according to bit `c` of
/// `k`, so any two classes differ by 2 on at least one channel; pixels add
/// independent `N(0, 1)` noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub classes: usize,
    pub size: usize,
    /// `[n, 3, size, size]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl SyntheticTask {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean of channel `c` for class `k`.
    pub fn signature(k: usize, c: usize) -> Scalar {
        if (k >> c) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Images `start..start + len` as a batch with their labels.
    pub fn batch(&self, start: usize, len: usize) -> (Tensor, &[usize]) {
        let per = 3 * self.size * self.size;
        let end = (start + len).min(self.len());
        let data = self.images.data()[start * per..end * per].to_vec();
        let t = Tensor::new(&[end - start, 3, self.size, self.size], data).expect("batch shape");
        (t, &self.labels[start..end])
    }
}

/// Balanced task of `n` images over `classes` classes at 64×64.
pub fn gen_synthetic(seed: u64, n: usize, classes: usize) -> Result<SyntheticTask> {
    gen_synthetic_sized(seed, n, classes, SYNTHETIC_SIZE)
}

pub fn gen_synthetic_sized(seed: u64, n: usize, classes: usize, size: usize) -> Result<SyntheticTask> {
    if !(2..=MAX_CLASSES).contains(&classes) {
        return Err(invalid(
            "gen_synthetic",
            format!("classes must be in 2..={MAX_CLASSES}, got {classes}"),
        ));
    }
    if n < classes {
        return Err(invalid(
            "gen_synthetic",
            format!("n = {n} is smaller than classes = {classes}"),
        ));
    }
    if size == 0 {
        return Err(invalid("gen_synthetic", "image size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let plane = size * size;
    let mut data = Vec::with_capacity(n * 3 * plane);
    for &k in &labels {
        for c in 0..3 {
            let mean = SyntheticTask::signature(k, c);
            for _ in 0..plane {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(mean + noise as Scalar);
            }
        }
    }
    Ok(SyntheticTask {
        seed,
        classes,
        size,
        images: Tensor::new(&[n, 3, size, size], data)?,
        labels,
    })
}
