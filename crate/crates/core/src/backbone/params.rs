use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, immutable collection of parameter arrays.
///
/// Name order is lexicographic (BTreeMap), which fixes the array order in
/// checkpoints and digests. Updates produce a new set; shapes are frozen at
/// insertion.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F: Scalar> {
    arrays: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) {
        let name = name.into();
        assert!(
            !self.arrays.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.arrays.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<F>> {
        self.arrays.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.arrays.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.arrays.values().map(|t| t.len()).sum()
    }

    /// Replace the tensor under `name`, keeping its shape.
    pub fn with(&self, name: &str, tensor: Tensor<F>) -> ParamSet<F> {
        let old = self.get(name);
        assert_eq!(
            old.shape, tensor.shape,
            "shape of `{name}` is immutable after creation"
        );
        let mut next = self.clone();
        next.arrays.insert(name.to_string(), tensor);
        next
    }

    /// All-zero set with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (name, t) in &self.arrays {
            out.insert(name.clone(), Tensor::zeros(t.shape.clone()));
        }
        out
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_same_layout(&self, other: &ParamSet<F>, what: &str) -> Result<()> {
        if self.arrays.len() != other.arrays.len() {
            return Err(Error::Contract(format!(
                "{what}: parameter count mismatch ({} vs {})",
                self.arrays.len(),
                other.arrays.len()
            )));
        }
        for (name, t) in &self.arrays {
            let o = other.arrays.get(name).ok_or_else(|| {
                Error::Contract(format!("{what}: missing parameter `{name}`"))
            })?;
            if o.shape != t.shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: t.shape.clone(),
                    got: o.shape.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn check_all_finite(&self) -> Result<()> {
        for (name, t) in &self.arrays {
            if !t.all_finite() {
                return Err(Error::NonFinite { name: name.clone() });
            }
        }
        Ok(())
    }

    /// Merge with per-array name prefix, e.g. `"enc."`.
    pub fn merged_with_prefix(sets: &[(&str, &ParamSet<F>)]) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (prefix, set) in sets {
            for (name, t) in set.iter() {
                out.insert(format!("{prefix}{name}"), t.clone());
            }
        }
        out
    }

    /// Inverse of [`merged_with_prefix`]: extract arrays under `prefix`,
    /// stripping it.
    pub fn split_prefix(&self, prefix: &str) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (name, t) in &self.arrays {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.insert(rest.to_string(), t.clone());
            }
        }
        out
    }

    /// SHA-256 over names, shapes and raw little-endian bytes. Used to assert
    /// freeze contracts (a frozen network's digest must not change).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.arrays {
            hasher.update(name.as_bytes());
            for d in &t.shape {
                hasher.update((*d as u64).to_le_bytes());
            }
            let mut bytes = Vec::with_capacity(t.len() * F::BYTE_LEN);
            for v in &t.data {
                v.write_le(&mut bytes);
            }
            hasher.update(&bytes);
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (name, t) in &self.arrays {
            out.insert(name.clone(), t.cast());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_changes_with_values() {
        let mut a = ParamSet::<f32>::new();
        a.insert("w", Tensor::new(vec![1.0, 2.0], vec![2]));
        let d1 = a.digest();
        let b = a.with("w", Tensor::new(vec![1.0, 2.5], vec![2]));
        assert_ne!(d1, b.digest());
        assert_eq!(d1, a.digest());
    }

    #[test]
    #[should_panic]
    fn shape_is_immutable() {
        let mut a = ParamSet::<f32>::new();
        a.insert("w", Tensor::new(vec![1.0, 2.0], vec![2]));
        let _ = a.with("w", Tensor::new(vec![1.0], vec![1]));
    }

    #[test]
    fn merge_and_split_round_trip() {
        let mut enc = ParamSet::<f32>::new();
        enc.insert("w", Tensor::new(vec![1.0], vec![1]));
        let mut dec = ParamSet::<f32>::new();
        dec.insert("w", Tensor::new(vec![2.0], vec![1]));
        let merged = ParamSet::merged_with_prefix(&[("enc.", &enc), ("dec.", &dec)]);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.split_prefix("enc."), enc);
        assert_eq!(merged.split_prefix("dec."), dec);
    }
}
