//! Fixed-capacity FIFO memory bank of embedding rows.
//!
//! Rows are stored raw (unnormalized) and detached: a bank only ever holds
//! copies, so nothing downstream can backpropagate into it.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::error::{shape_mismatch, KdError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
struct Entry<T> {
    tag: u64,
    row: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<T> {
    capacity: usize,
    dim: usize,
    rows: VecDeque<Entry<T>>,
    next_tag: u64,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(KdError::InvalidParam(format!(
                "memory bank needs capacity and dim >= 1, got {capacity} x {dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            rows: VecDeque::with_capacity(capacity),
            next_tag: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.rows.len()
    }

    /// True only once the bank holds `capacity` rows.
    pub fn is_ready(&self) -> bool {
        self.rows.len() == self.capacity
    }

    /// Appends the batch, evicting the oldest rows beyond capacity. Rows are
    /// tagged with a running counter.
    pub fn enqueue_batch(&mut self, batch: ArrayView2<'_, T>) -> Result<()> {
        let tags: Vec<u64> = (self.next_tag..self.next_tag + batch.nrows() as u64).collect();
        self.enqueue_tagged(batch, &tags)
    }

    /// Appends the batch with caller-supplied per-row tags (e.g. sample ids).
    pub fn enqueue_tagged(&mut self, batch: ArrayView2<'_, T>, tags: &[u64]) -> Result<()> {
        if batch.ncols() != self.dim {
            return Err(shape_mismatch("enqueue_batch", self.dim, batch.ncols()));
        }
        if tags.len() != batch.nrows() {
            return Err(shape_mismatch("enqueue_batch tags", batch.nrows(), tags.len()));
        }
        if batch.nrows() > self.capacity {
            return Err(KdError::BatchTooLarge {
                batch: batch.nrows(),
                capacity: self.capacity,
            });
        }
        let overflow = (self.rows.len() + batch.nrows()).saturating_sub(self.capacity);
        self.rows.drain(..overflow);
        for (row, &tag) in batch.outer_iter().zip(tags) {
            self.rows.push_back(Entry {
                tag,
                row: row.to_vec(),
            });
        }
        self.next_tag = self.next_tag.max(tags.iter().max().map_or(0, |t| t + 1));
        Ok(())
    }

    /// Copy of the stored rows, oldest first.
    pub fn snapshot(&self) -> Result<Array2<T>> {
        if self.rows.is_empty() {
            return Err(KdError::BankEmpty);
        }
        let flat: Vec<T> = self.rows.iter().flat_map(|e| e.row.iter().copied()).collect();
        Ok(Array2::from_shape_vec((self.rows.len(), self.dim), flat).expect("rectangular bank"))
    }

    pub fn tags(&self) -> Vec<u64> {
        self.rows.iter().map(|e| e.tag).collect()
    }

    /// Rows oldest first, with their tags.
    pub fn entries(&self) -> impl Iterator<Item = (u64, &[T])> + '_ {
        self.rows.iter().map(|e| (e.tag, e.row.as_slice()))
    }

    /// Rebuilds a bank from `(tag, row)` pairs listed oldest first.
    pub fn from_entries(capacity: usize, dim: usize, entries: Vec<(u64, Vec<T>)>) -> Result<Self> {
        let mut bank = Self::new(capacity, dim)?;
        if entries.len() > capacity {
            return Err(KdError::BatchTooLarge {
                batch: entries.len(),
                capacity,
            });
        }
        for (tag, row) in entries {
            if row.len() != dim {
                return Err(shape_mismatch("MemoryBank::from_entries", dim, row.len()));
            }
            bank.next_tag = bank.next_tag.max(tag.wrapping_add(1));
            bank.rows.push_back(Entry { tag, row });
        }
        Ok(bank)
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }
}

/// Teacher and student banks updated in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct BankPair<T> {
    pub teacher: MemoryBank<T>,
    pub student: MemoryBank<T>,
}

impl<T: Scalar> BankPair<T> {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            teacher: MemoryBank::new(capacity, dim)?,
            student: MemoryBank::new(capacity, dim)?,
        })
    }

    pub fn enqueue(
        &mut self,
        teacher: ArrayView2<'_, T>,
        student: ArrayView2<'_, T>,
        sample_ids: &[u64],
    ) -> Result<()> {
        if teacher.dim() != student.dim() {
            return Err(shape_mismatch("BankPair::enqueue", teacher.dim(), student.dim()));
        }
        self.teacher.enqueue_tagged(teacher, sample_ids)?;
        self.student.enqueue_tagged(student, sample_ids)
    }

    pub fn is_ready(&self) -> bool {
        self.teacher.is_ready() && self.student.is_ready()
    }

    pub fn fill(&self) -> usize {
        self.teacher.fill()
    }

    pub fn capacity(&self) -> usize {
        self.teacher.capacity()
    }
}
