//! Dataset ingestion, preprocessing, augmentation and batching.

pub mod augment;
pub mod image;
mod manifest;
pub mod synthetic;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{AugmentDraw, AugmentPolicy};
pub use image::load_and_resize;
pub use manifest::{compute_class_weights, scan_dataset, DatasetManifest, Record, ScanReport, Split};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_474d;

/// RNG for augmenting sample `index` in `epoch`.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[AUGMENT_STREAM, epoch as u64, index as u64]))
}

/// Seeded permutation of `0..len` cut into batches; the last may be partial.
pub fn batch_order(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batches", "batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SHUFFLE_STREAM, epoch as u64]));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Augmentation applied while assembling a batch.
#[derive(Clone, Copy, Debug)]
pub struct Augmentation<'a> {
    pub policy: &'a AugmentPolicy,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn one_hot<T: Scalar>(&self, classes: usize) -> Tensor<T> {
        crate::train::loss::one_hot(&self.labels, classes).expect("labels validated by Dataset")
    }
}

/// Preprocessed `[3,H,W]` images with class labels, held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    classes: Vec<String>,
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(classes: Vec<String>, images: Vec<Tensor<f32>>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid("dataset", "one label per image required"));
        }
        if let Some(first) = images.first() {
            if first.rank() != 3 {
                return Err(Error::invalid("dataset", "images must be [C,H,W]"));
            }
            if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::shape("dataset", first.shape(), bad.shape()));
            }
        }
        if labels.iter().any(|&l| l >= classes.len()) {
            return Err(Error::invalid("dataset", "label outside the class list"));
        }
        Ok(Self {
            classes,
            images,
            labels,
        })
    }

    /// Loads and resizes every record of `split`.
    pub fn from_manifest(manifest: &DatasetManifest, split: Split, size: usize) -> Result<Self> {
        let records: Vec<&Record> = manifest.split(split).collect();
        let images = parallel::map_indexed(records.len(), |i| {
            load_and_resize(&manifest.absolute(records[i]), size)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let labels = records.iter().map(|r| r.label).collect();
        Self::new(manifest.classes.clone(), images, labels)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Tensor<f32> {
        &self.images[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }

    /// Stacks the given samples, augmenting each with its own RNG stream.
    pub fn assemble(&self, indices: &[usize], augmentation: Option<Augmentation<'_>>) -> Batch {
        let shape = self.images[indices[0]].shape().to_vec();
        let per = self.images[indices[0]].len();
        let mut data = vec![0.0f32; indices.len() * per];
        parallel::for_each_chunk_mut(&mut data, per, |slot, dst| {
            let i = indices[slot];
            match augmentation {
                Some(a) => {
                    let mut rng = sample_rng(a.seed, a.epoch, i);
                    let img = augment::augment(&self.images[i], a.policy, &mut rng);
                    dst.copy_from_slice(img.data());
                }
                None => dst.copy_from_slice(self.images[i].data()),
            }
        });
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend(shape);
        Batch {
            images: Tensor::from_parts(batch_shape, data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// Batches of one epoch in seeded order.
    pub fn batches<'a>(
        &'a self,
        batch_size: usize,
        seed: u64,
        epoch: usize,
        policy: Option<&'a AugmentPolicy>,
    ) -> Result<impl Iterator<Item = Batch> + 'a> {
        let order = batch_order(self.len(), batch_size, seed, epoch)?;
        let augmentation = policy.map(|policy| Augmentation {
            policy,
            seed,
            epoch,
        });
        Ok(order
            .into_iter()
            .map(move |idx| self.assemble(&idx, augmentation)))
    }

    /// Batches in storage order, without augmentation.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        let n = self.len();
        (0..n)
            .step_by(batch_size.max(1))
            .map(move |s| self.assemble(&(s..(s + batch_size).min(n)).collect::<Vec<_>>(), None))
    }

    /// Writes every image as an 8-bit PNG under `root/{split}/{class}/`.
    pub fn write_tree(&self, root: &Path, split: Split) -> Result<()> {
        for (i, (img, &label)) in self.images.iter().zip(&self.labels).enumerate() {
            let dir = root.join(split.as_str()).join(&self.classes[label]);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("{i:05}.png"));
            image::tensor_to_rgb(img)
                .save(&path)
                .map_err(|e| Error::Decode {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let images = (0..n).map(|i| Tensor::full(&[3, 2, 2], i as f32 / n as f32)).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(crate::model::default_classes(), images, labels).unwrap()
    }

    #[test]
    fn epoch_is_a_permutation() {
        let order = batch_order(23, 5, 9, 2).unwrap();
        assert_eq!(order.len(), 5);
        assert_eq!(order.last().unwrap().len(), 3);
        let mut all: Vec<usize> = order.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn order_is_seeded() {
        assert_eq!(batch_order(50, 8, 1, 0).unwrap(), batch_order(50, 8, 1, 0).unwrap());
        assert_ne!(batch_order(50, 8, 1, 0).unwrap(), batch_order(50, 8, 1, 1).unwrap());
        assert_ne!(batch_order(50, 8, 1, 0).unwrap(), batch_order(50, 8, 2, 0).unwrap());
        assert!(batch_order(5, 0, 1, 0).is_err());
    }

    #[test]
    fn oversized_batch_holds_everything() {
        let d = tiny(7);
        let batches: Vec<Batch> = d.batches(100, 3, 0, None).unwrap().collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].images.shape(), &[7, 3, 2, 2]);
        let mut seen = batches[0].indices.clone();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        for (slot, &i) in batches[0].indices.iter().enumerate() {
            assert_eq!(batches[0].labels[slot], i % 3);
            assert_eq!(batches[0].images.data()[slot * 12], i as f32 / 7.0);
        }
    }

    #[test]
    fn augmented_batches_are_reproducible() {
        let d = tiny(9);
        let policy = AugmentPolicy::default();
        let a: Vec<Tensor<f32>> = d.batches(4, 5, 1, Some(&policy)).unwrap().map(|b| b.images).collect();
        let b: Vec<Tensor<f32>> = d.batches(4, 5, 1, Some(&policy)).unwrap().map(|b| b.images).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_images_rejected() {
        let images = vec![Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[3, 2, 3])];
        assert!(Dataset::new(vec!["a".into()], images, vec![0, 0]).is_err());
        assert!(Dataset::new(vec!["a".into()], vec![Tensor::zeros(&[3, 2, 2])], vec![1]).is_err());
    }
}
