//! Normalized mini-batches with seeded shuffling and augmentation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelStats, DatasetHandle, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{digest_values, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    None,
    /// Random crop from a 4-pixel zero-padded image plus horizontal flip.
    #[default]
    CropFlip,
}

const PAD: i64 = 4;

#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub images: FeatureMap<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn digest(&self) -> String {
        let labels: Vec<T> = self.labels.iter().map(|&l| T::from_f64_lossy(l as f64)).collect();
        let mut all = self.images.data.clone();
        all.extend(labels);
        digest_values(&all)
    }
}

#[derive(Debug, Clone, Copy)]
struct View {
    dy: i64,
    dx: i64,
    flip: bool,
}

const IDENTITY: View = View { dy: 0, dx: 0, flip: false };

fn assemble<T: Scalar>(split: &Split, stats: &ChannelStats, rows: &[usize], views: &[View]) -> Batch<T> {
    let (h, w, c) = (split.height, split.width, split.channels);
    let mut data = Vec::with_capacity(rows.len() * h * w * c);
    let scale: Vec<(f64, f64)> = (0..c).map(|ch| (stats.mean[ch], 1.0 / stats.std[ch])).collect();
    for (&r, v) in rows.iter().zip(views) {
        let img = split.image(r);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let sy = y + v.dy;
                let sx0 = x + v.dx;
                let sx = if v.flip { w as i64 - 1 - sx0 } else { sx0 };
                let inside = sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64;
                for (ch, &(m, inv)) in scale.iter().enumerate() {
                    let raw = if inside { img[(sy as usize * w + sx as usize) * c + ch] as f64 } else { 0.0 };
                    data.push(T::from_f64_lossy((raw / 255.0 - m) * inv));
                }
            }
        }
    }
    Batch {
        images: FeatureMap::from_vec(rows.len(), h, w, c, data),
        labels: rows.iter().map(|&r| split.labels[r] as usize).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct TrainLoader {
    split: Arc<Split>,
    stats: ChannelStats,
    batch: usize,
    augment: Augment,
    seed: u64,
}

impl TrainLoader {
    pub fn len(&self) -> usize {
        self.split.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split.is_empty()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.split.len().div_ceil(self.batch)
    }

    /// Shuffled, augmented batches for `epoch`; a pure function of the seed and epoch.
    pub fn epoch<T: Scalar>(&self, epoch: u64) -> impl Iterator<Item = Batch<T>> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.split.len()).collect();
        order.shuffle(&mut rng);
        let views: Vec<View> = order
            .iter()
            .map(|_| match self.augment {
                Augment::None => IDENTITY,
                Augment::CropFlip => View {
                    dy: rng.gen_range(-PAD..=PAD),
                    dx: rng.gen_range(-PAD..=PAD),
                    flip: rng.gen_bool(0.5),
                },
            })
            .collect();
        let batch = self.batch;
        (0..self.batches_per_epoch()).map(move |b| {
            let lo = b * batch;
            let hi = (lo + batch).min(order.len());
            assemble(&self.split, &self.stats, &order[lo..hi], &views[lo..hi])
        })
    }
}

#[derive(Debug, Clone)]
pub struct TestLoader {
    split: Arc<Split>,
    stats: ChannelStats,
    batch: usize,
}

impl TestLoader {
    pub fn len(&self) -> usize {
        self.split.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split.is_empty()
    }

    /// Unaugmented batches in storage order.
    pub fn batches<T: Scalar>(&self) -> impl Iterator<Item = Batch<T>> + '_ {
        let n = self.split.len();
        (0..n.div_ceil(self.batch)).map(move |b| {
            let rows: Vec<usize> = (b * self.batch..((b + 1) * self.batch).min(n)).collect();
            let views = vec![IDENTITY; rows.len()];
            assemble(&self.split, &self.stats, &rows, &views)
        })
    }
}

#[derive(Debug, Clone)]
pub struct Loaders {
    pub train: TrainLoader,
    pub test: TestLoader,
}

/// Normalization uses the training split statistics of `handle` for both loaders.
pub fn make_loaders(handle: &DatasetHandle, batch: usize, augment: Augment, seed: u64) -> Result<Loaders> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    Ok(Loaders {
        train: TrainLoader {
            split: handle.train.clone(),
            stats: handle.stats.clone(),
            batch,
            augment,
            seed,
        },
        test: TestLoader {
            split: handle.test.clone(),
            stats: handle.stats.clone(),
            batch,
        },
    })
}
