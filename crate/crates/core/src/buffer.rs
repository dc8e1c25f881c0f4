use alloc::collections::VecDeque;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// One observed transition `(x_n, u_n) -> x_{n+1}` over `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub dt: f64,
}

impl TransitionRecord {
    pub fn new(x: Vec<f64>, u: Vec<f64>, x_next: Vec<f64>, dt: f64) -> Result<Self> {
        check_len("TransitionRecord x_next", x.len(), x_next.len())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("transition dt", "must be positive"));
        }
        if x.iter().chain(&u).chain(&x_next).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transition"));
        }
        Ok(Self { x, u, x_next, dt })
    }

    /// Regression target `(x_next - x) / dt`.
    pub fn finite_diff_target(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.x_next)
            .map(|(a, b)| (b - a) / self.dt)
            .collect()
    }
}

/// Bounded FIFO of real transitions; the oldest record is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    records: VecDeque<TransitionRecord>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("buffer capacity", "must be positive"));
        }
        Ok(Self {
            records: VecDeque::new(),
            capacity,
        })
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn extend<I: IntoIterator<Item = TransitionRecord>>(&mut self, records: I) {
        for r in records {
            self.push(r);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&TransitionRecord> {
        self.records.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(v: f64) -> TransitionRecord {
        TransitionRecord::new(vec![v], vec![0.0], vec![v], 0.1).unwrap()
    }

    #[test]
    fn finite_difference_targets() {
        let r = TransitionRecord::new(vec![1.0, 2.0], vec![0.0], vec![1.0, 2.0], 0.02).unwrap();
        assert_eq!(r.finite_diff_target(), vec![0.0, 0.0]);
        let r = TransitionRecord::new(vec![0.0, 0.0], vec![0.0], vec![0.02, 0.04], 0.02).unwrap();
        let t = r.finite_diff_target();
        assert!((t[0] - 1.0).abs() < 1e-15 && (t[1] - 2.0).abs() < 1e-15);
        assert!(TransitionRecord::new(vec![0.0], vec![0.0], vec![0.0], 0.0).is_err());
        assert!(TransitionRecord::new(vec![f64::NAN], vec![0.0], vec![0.0], 0.1).is_err());
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(rec(i as f64));
        }
        assert_eq!(b.len(), 3);
        let xs: Vec<f64> = b.iter().map(|r| r.x[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        assert!(ReplayBuffer::new(0).is_err());
    }
}
