use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-capacity ring of fixed-width `f64` records; pushes past capacity
/// overwrite the oldest entry.
///
/// Records live in one contiguous array. Storing each transition as its own
/// set of small heap vectors fragmented the allocator badly over long runs
/// (tens of kilobytes of resident memory per stored transition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    width: usize,
    data: Vec<f64>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, width: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        assert!(width > 0, "record width must be positive");
        Self {
            capacity,
            width,
            data: Vec::new(),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn clear(&mut self) {
        self.data.clear();
        self.cursor = 0;
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn push(&mut self, record: &[f64]) -> Result<()> {
        if record.len() != self.width {
            return Err(Error::Shape(format!("record of {} values, buffer width {}", record.len(), self.width)));
        }
        if self.len() < self.capacity {
            self.data.extend_from_slice(record);
        } else {
            let w = self.width;
            self.data[self.cursor * w..(self.cursor + 1) * w].copy_from_slice(record);
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &[f64]> {
        let split = if self.len() < self.capacity { 0 } else { self.cursor };
        (split..self.len()).chain(0..split).map(|i| self.get(i))
    }

    /// Uniform batch without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&[f64]>> {
        if batch > self.len() {
            return Err(Error::WarmUp {
                available: self.len(),
                requested: batch,
            });
        }
        Ok(index::sample(rng, self.len(), batch).into_iter().map(|i| self.get(i)).collect())
    }
}
