//! Named parameter tensors backed by one flat vector.
//!
//! Entries keep their insertion order; a network registers all of its
//! tensors consecutively so that each network owns a contiguous range of the
//! flat vector. Names are dotted paths, and the first segment acts as the
//! namespace (`encoder`, `drift`, `diffusion`, `decoder`, ...).

use std::ops::Range;

use super::tensor::Tensor;
use crate::error::{Result, SldiError};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn is_weight(&self) -> bool {
        self.shape.len() == 2 && self.name.ends_with(".weight")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-filled tensor and returns its offset in the flat view.
    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<usize> {
        if self.entry(name).is_some() {
            return Err(SldiError::InvalidInput(format!(
                "duplicate parameter name {name}"
            )));
        }
        let offset = self.data.len();
        let n: usize = shape.iter().product();
        self.data.resize(offset + n, 0.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            offset,
        });
        Ok(offset)
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<usize> {
        let offset = self.add_zeros(name, tensor.shape().to_vec())?;
        self.data[offset..offset + tensor.len()].copy_from_slice(tensor.data());
        Ok(offset)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        let e = self.entry(name)?;
        Tensor::new(e.shape.clone(), self.data[e.range()].to_vec()).ok()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        let e = self.entry(name)?;
        Some(&self.data[e.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.entry(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        crate::error::check_len("flat parameter vector", flat.len(), self.data.len())?;
        self.data.copy_from_slice(flat);
        Ok(())
    }

    /// Entries whose first dotted segment equals `namespace`.
    pub fn namespace_entries<'a>(
        &'a self,
        namespace: &'a str,
    ) -> impl Iterator<Item = &'a ParamEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.name.split('.').next() == Some(namespace))
    }

    /// Flat index mask selecting the given namespaces.
    pub fn namespace_mask(&self, namespaces: &[&str]) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for ns in namespaces {
            for e in self.namespace_entries(ns) {
                mask[e.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| {
                let t = Tensor::new(e.shape.clone(), self.data[e.range()].to_vec())
                    .expect("entry shape matches its range");
                (e.name.clone(), t)
            })
            .collect()
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, t) in tensors {
            store.add(&name, t)?;
        }
        Ok(store)
    }

    /// True when both stores hold the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn namespaces_are_disjoint_ranges() {
        let mut s = ParamStore::new();
        s.add_zeros("drift.l0.weight", vec![3, 2]).unwrap();
        s.add_zeros("drift.l0.bias", vec![3]).unwrap();
        s.add_zeros("decoder.l0.weight", vec![1, 3]).unwrap();
        let mask = s.namespace_mask(&["drift"]);
        assert_eq!(mask.iter().filter(|m| **m).count(), 9);
        assert!(!mask[9] && !mask[11]);
        assert!(s.add_zeros("drift.l0.bias", vec![1]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_identity(vals in proptest::collection::vec(-1e3f64..1e3, 10)) {
            let mut s = ParamStore::new();
            s.add_zeros("a.weight", vec![2, 3]).unwrap();
            s.add_zeros("b.bias", vec![4]).unwrap();
            s.set_flat(&vals).unwrap();
            let rebuilt = ParamStore::from_tensors(s.to_tensors()).unwrap();
            prop_assert_eq!(rebuilt.flat(), &vals[..]);
            prop_assert!(rebuilt.same_layout(&s));
        }
    }
}
