use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{load_checkpoint, save_checkpoint, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// A batch of attack outcomes: original and adversarial images in parallel
/// arrays plus the metadata needed to reproduce and re-evaluate them.
///
/// Persisted in the manifest+blob checkpoint format (images in the blob,
/// metadata embedded as JSON), so round trips are bit-exact and corrupted
/// blobs are rejected by digest.
#[derive(Clone, Debug)]
pub struct AdversarialArchive<F: Scalar> {
    pub originals: Vec<F>,
    pub adversarials: Vec<F>,
    pub original_labels: Vec<u8>,
    pub target_labels: Vec<u8>,
    pub success: Vec<bool>,
    pub method: String,
    pub config_digest: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Serialize, Deserialize)]
struct ArchiveMeta {
    kind: String,
    method: String,
    config_digest: String,
    rows: usize,
    cols: usize,
    original_labels: Vec<u8>,
    target_labels: Vec<u8>,
    success: Vec<bool>,
}

/// Reproducible digest of any serializable attack configuration.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl<F: Scalar> AdversarialArchive<F> {
    pub fn new(method: impl Into<String>, config_digest: String, rows: usize, cols: usize) -> Self {
        AdversarialArchive {
            originals: Vec::new(),
            adversarials: Vec::new(),
            original_labels: Vec::new(),
            target_labels: Vec::new(),
            success: Vec::new(),
            method: method.into(),
            config_digest,
            rows,
            cols,
        }
    }

    pub fn count(&self) -> usize {
        self.original_labels.len()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn push(&mut self, original: &[F], adversarial: &[F], label: u8, target: u8, success: bool) {
        assert_eq!(original.len(), self.pixels());
        assert_eq!(adversarial.len(), self.pixels());
        self.originals.extend_from_slice(original);
        self.adversarials.extend_from_slice(adversarial);
        self.original_labels.push(label);
        self.target_labels.push(target);
        self.success.push(success);
    }

    pub fn original(&self, i: usize) -> &[F] {
        let p = self.pixels();
        &self.originals[i * p..(i + 1) * p]
    }

    pub fn adversarial(&self, i: usize) -> &[F] {
        let p = self.pixels();
        &self.adversarials[i * p..(i + 1) * p]
    }

    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }

    /// Indices of successful entries.
    pub fn successful_indices(&self) -> Vec<usize> {
        (0..self.count()).filter(|&i| self.success[i]).collect()
    }

    pub fn save(&self, prefix: &Path) -> Result<()> {
        let n = self.count();
        let mut params = ParamSet::new();
        params.insert(
            "originals",
            Tensor::new(self.originals.clone(), vec![n, self.pixels()]),
        );
        params.insert(
            "adversarials",
            Tensor::new(self.adversarials.clone(), vec![n, self.pixels()]),
        );
        let meta = ArchiveMeta {
            kind: "adversarial-archive-v1".to_string(),
            method: self.method.clone(),
            config_digest: self.config_digest.clone(),
            rows: self.rows,
            cols: self.cols,
            original_labels: self.original_labels.clone(),
            target_labels: self.target_labels.clone(),
            success: self.success.clone(),
        };
        save_checkpoint(prefix, &params, serde_json::to_value(&meta)?)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let ckpt = load_checkpoint::<F>(prefix)?;
        let meta: ArchiveMeta = serde_json::from_value(ckpt.meta.clone())?;
        if meta.kind != "adversarial-archive-v1" {
            return Err(Error::Corrupt {
                path: prefix.to_path_buf(),
                what: format!("not an adversarial archive: `{}`", meta.kind),
            });
        }
        let originals = ckpt.params.get("originals").data.clone();
        let adversarials = ckpt.params.get("adversarials").data.clone();
        let n = meta.original_labels.len();
        if meta.target_labels.len() != n
            || meta.success.len() != n
            || originals.len() != n * meta.rows * meta.cols
            || adversarials.len() != n * meta.rows * meta.cols
        {
            return Err(Error::Corrupt {
                path: prefix.to_path_buf(),
                what: "parallel arrays disagree on length".to_string(),
            });
        }
        Ok(AdversarialArchive {
            originals,
            adversarials,
            original_labels: meta.original_labels,
            target_labels: meta.target_labels,
            success: meta.success,
            method: meta.method,
            config_digest: meta.config_digest,
            rows: meta.rows,
            cols: meta.cols,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_archive() -> AdversarialArchive<f32> {
        let mut a = AdversarialArchive::new("fgsm", "deadbeef".into(), 2, 2);
        a.push(&[0.0, 0.1, 0.2, 0.3], &[0.3, 0.2, 0.1, 0.0], 4, 5, true);
        a.push(&[1.0, 0.9, 0.8, 0.7], &[0.7, 0.8, 0.9, 1.0], 7, 8, false);
        a
    }

    #[test]
    fn round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("arch");
        let a = sample_archive();
        a.save(&prefix).unwrap();
        let b = AdversarialArchive::<f32>::load(&prefix).unwrap();
        assert_eq!(a.originals, b.originals);
        assert_eq!(a.adversarials, b.adversarials);
        assert_eq!(a.success, b.success);
        assert_eq!(a.success_rate(), b.success_rate());
        assert_eq!(a.method, b.method);
        assert_eq!(a.config_digest, b.config_digest);
    }

    #[test]
    fn empty_archive_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("empty");
        let a = AdversarialArchive::<f32>::new("svae", "d".into(), 28, 28);
        a.save(&prefix).unwrap();
        let b = AdversarialArchive::<f32>::load(&prefix).unwrap();
        assert_eq!(b.count(), 0);
        assert_eq!(b.success_rate(), 0.0);
    }

    #[test]
    fn config_digest_is_reproducible() {
        #[derive(Serialize)]
        struct C {
            a: f64,
            b: usize,
        }
        let d1 = config_digest(&C { a: 0.1, b: 3 });
        let d2 = config_digest(&C { a: 0.1, b: 3 });
        let d3 = config_digest(&C { a: 0.2, b: 3 });
        assert_eq!(d1, d2);
        assert_ne!(d1, d3);
    }
}
