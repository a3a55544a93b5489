use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Result};
use crate::tensor::Tensor;

/// Seeded mini-batches over a dataset. Epoch `e` is a fixed permutation of
/// all rows determined by `(seed, e)`; the last batch may be short.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(DataError::Invalid("batch size must be positive".into()));
        }
        Ok(Self {
            dataset,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Row indices of every batch in `epoch`.
    pub fn epoch_indices(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Materialized batches of the current epoch; advances the counter.
    pub fn next_epoch(&mut self) -> Vec<(Tensor, Vec<usize>)> {
        let batches = self
            .epoch_indices(self.epoch)
            .iter()
            .map(|idx| self.dataset.gather(idx))
            .collect();
        self.epoch += 1;
        batches
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize) -> Dataset {
        Dataset::new(
            Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap(),
            vec![0; n],
            1,
        )
        .unwrap()
    }

    #[test]
    fn batches_are_reproducible() {
        let d = dataset(23);
        let a = BatchIterator::new(&d, 5, 3).unwrap();
        let b = BatchIterator::new(&d, 5, 3).unwrap();
        assert_eq!(a.epoch_indices(2), b.epoch_indices(2));
        assert_ne!(a.epoch_indices(0), a.epoch_indices(1));
        let sizes: Vec<usize> = a.epoch_indices(0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 5, 3]);
    }

    #[test]
    fn next_epoch_follows_indices() {
        let d = dataset(7);
        let mut it = BatchIterator::new(&d, 3, 1).unwrap();
        let idx = it.epoch_indices(0);
        let batches = it.next_epoch();
        assert_eq!(it.epoch(), 1);
        let first: Vec<f64> = idx[0].iter().map(|&i| i as f64).collect();
        assert_eq!(batches[0].0.data(), first.as_slice());
    }

    proptest! {
        #[test]
        fn every_index_once_per_epoch(n in 1usize..200, bs in 1usize..64, seed in any::<u64>(), epoch in 0u64..5) {
            let d = dataset(n);
            let it = BatchIterator::new(&d, bs, seed).unwrap();
            let mut all: Vec<usize> = it.epoch_indices(epoch).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
