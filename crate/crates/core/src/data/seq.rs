use rand::seq::SliceRandom;

use crate::error::{Result, SldiError};
use crate::rng::rng_from_seed;

/// Irregularly timestamped observations of one system trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeq {
    pub id: String,
    pub timestamps: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Ordered `(key, value)` provenance pairs (generator, seed, parameters).
    pub meta: Vec<(String, String)>,
}

impl ObservationSeq {
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<f64>,
        values: Vec<Vec<f64>>,
        meta: Vec<(String, String)>,
    ) -> Result<Self> {
        let s = ObservationSeq {
            id: id.into(),
            timestamps,
            values,
            meta,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.values.len() {
            return Err(SldiError::InvalidInput(format!(
                "sequence {}: {} timestamps but {} values",
                self.id,
                self.timestamps.len(),
                self.values.len()
            )));
        }
        if let Some(k) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SldiError::InvalidInput(format!(
                "sequence {}: timestamps not strictly increasing at index {}",
                self.id,
                k + 1
            )));
        }
        let n = self.values.first().map_or(0, |v| v.len());
        for v in &self.values {
            if v.len() != n {
                return Err(SldiError::InvalidInput(format!(
                    "sequence {}: ragged observation vectors",
                    self.id
                )));
            }
            if v.iter().any(|x| !x.is_finite()) || self.timestamps.iter().any(|t| !t.is_finite()) {
                return Err(SldiError::InvalidInput(format!("sequence {}: non-finite entry", self.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Keeps the observations at `indices` (ascending).
    pub fn select(&self, indices: &[usize]) -> ObservationSeq {
        ObservationSeq {
            id: self.id.clone(),
            timestamps: indices.iter().map(|&i| self.timestamps[i]).collect(),
            values: indices.iter().map(|&i| self.values[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<ObservationSeq>,
    pub splits: Vec<Split>,
    /// Generator configuration, written to the header file.
    pub config: Vec<(String, String)>,
}

impl Dataset {
    pub fn new(sequences: Vec<ObservationSeq>, splits: Vec<Split>, config: Vec<(String, String)>) -> Result<Self> {
        if sequences.len() != splits.len() {
            return Err(SldiError::InvalidInput("one split label per sequence required".into()));
        }
        Ok(Dataset {
            sequences,
            splits,
            config,
        })
    }

    pub fn empty() -> Self {
        Dataset {
            sequences: Vec::new(),
            splits: Vec::new(),
            config: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<&ObservationSeq> {
        self.sequences
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(q, _)| q)
            .collect()
    }
}

/// Deterministic shuffled assignment of `n` items to train/val/test with
/// the given fractions (test takes the remainder).
pub fn assign_splits(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_val = (((n as f64) * val_frac).round() as usize).min(n - n_train.min(n));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ObservationSeq::new("a", vec![0.0, 1.0], vec![vec![1.0], vec![2.0]], vec![]).is_ok());
        assert!(ObservationSeq::new("a", vec![1.0, 0.5], vec![vec![1.0], vec![2.0]], vec![]).is_err());
        assert!(ObservationSeq::new("a", vec![0.0], vec![vec![f64::NAN]], vec![]).is_err());
    }

    #[test]
    fn splits_partition_and_repeat() {
        let s = assign_splits(100, 0.8, 0.1, 4);
        assert_eq!(s, assign_splits(100, 0.8, 0.1, 4));
        assert_eq!(s.iter().filter(|x| **x == Split::Train).count(), 80);
        assert_eq!(s.iter().filter(|x| **x == Split::Val).count(), 10);
        assert_eq!(s.iter().filter(|x| **x == Split::Test).count(), 10);
    }
}
