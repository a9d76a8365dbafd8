use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Tensor3;
use crate::scalar::Scalar;

/// Continuous position on the score grid, in cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Center<T = f64> {
    pub row: T,
    pub col: T,
}

impl<T: Scalar> Center<T> {
    pub fn new(row: T, col: T) -> Self {
        Center { row, col }
    }

    /// Euclidean distance from grid point `(i, j)`.
    #[inline]
    pub fn distance_to(&self, i: usize, j: usize) -> T {
        let dr = T::of(i as f64) - self.row;
        let dc = T::of(j as f64) - self.col;
        (dr * dr + dc * dc).sqrt()
    }
}

/// One feature map paired with the target center on its score grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T = f64> {
    pub features: Tensor3<T>,
    pub center: Center<T>,
    pub weight: T,
}

impl<T: Scalar> TrainingSample<T> {
    pub fn new(features: Tensor3<T>, center: Center<T>) -> Self {
        TrainingSample {
            features,
            center,
            weight: T::one(),
        }
    }

    pub fn with_weight(mut self, weight: T) -> Self {
        self.weight = weight;
        self
    }
}

/// Bounded FIFO of training samples: inserting into a full set evicts the
/// oldest entry.
#[derive(Clone, Debug)]
pub struct SampleSet<T = f64> {
    samples: VecDeque<TrainingSample<T>>,
    capacity: usize,
}

impl<T: Scalar> SampleSet<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "sample set capacity must be positive");
        SampleSet {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Collects `samples` into a set sized to hold exactly them.
    pub fn from_samples(samples: Vec<TrainingSample<T>>) -> Self {
        let capacity = samples.len().max(1);
        SampleSet {
            samples: samples.into(),
            capacity,
        }
    }

    /// Appends a sample, returning the evicted one when the set was full.
    pub fn push(&mut self, sample: TrainingSample<T>) -> Result<Option<TrainingSample<T>>> {
        if !(sample.weight >= T::zero()) || !sample.weight.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample weight must be finite and non-negative, got {}",
                sample.weight
            )));
        }
        let evicted = if self.samples.len() == self.capacity {
            self.samples.pop_front()
        } else {
            None
        };
        self.samples.push_back(sample);
        Ok(evicted)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrainingSample<T>> {
        self.samples.iter()
    }

    pub fn get(&self, idx: usize) -> Option<&TrainingSample<T>> {
        self.samples.get(idx)
    }

    pub fn total_weight(&self) -> T {
        self.samples.iter().fold(T::zero(), |acc, s| acc + s.weight)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(tag: f64) -> TrainingSample {
        TrainingSample::new(Tensor3::filled(1, 1, 1, tag), Center::new(0.0, 0.0))
    }

    #[test]
    fn evicts_oldest_first() {
        let mut set = SampleSet::with_capacity(3);
        for t in 0..3 {
            assert!(set.push(tagged(t as f64)).unwrap().is_none());
        }
        let out = set.push(tagged(3.0)).unwrap().unwrap();
        assert_eq!(out.features.get(0, 0, 0), 0.0);
        let tags: Vec<f64> = set.iter().map(|s| s.features.get(0, 0, 0)).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn rejects_negative_weight() {
        let mut set = SampleSet::with_capacity(2);
        assert!(set.push(tagged(0.0).with_weight(-1.0)).is_err());
        assert!(set.is_empty());
    }
}
