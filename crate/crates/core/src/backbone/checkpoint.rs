use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamSet;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Checkpoint on disk: `<prefix>.manifest.json` describing the arrays, next
/// to `<prefix>.blob` holding their little-endian values in manifest order.
/// Round-trips are bit-exact; the manifest records a SHA-256 of the blob so
/// corruption is caught at load.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub blob_file: String,
    pub blob_sha256: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Debug)]
pub struct Checkpoint<F: Scalar> {
    pub params: ParamSet<F>,
    pub meta: serde_json::Value,
}

const FORMAT: &str = "manifest-blob-v1";

fn manifest_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn blob_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".blob");
    PathBuf::from(p)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `params` (+ arbitrary JSON metadata) under `prefix`.
pub fn save_checkpoint<F: Scalar>(
    prefix: &Path,
    params: &ParamSet<F>,
    meta: serde_json::Value,
) -> Result<()> {
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut blob = Vec::with_capacity(params.value_count() * F::BYTE_LEN);
    let mut arrays = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let offset = blob.len() as u64;
        for v in &t.data {
            v.write_le(&mut blob);
        }
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            dtype: F::DTYPE.to_string(),
            byte_offset: offset,
            byte_len: (t.len() * F::BYTE_LEN) as u64,
        });
    }
    let blob_file = blob_path(prefix);
    let manifest = Manifest {
        format: FORMAT.to_string(),
        dtype: F::DTYPE.to_string(),
        blob_file: blob_file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: sha256_hex(&blob),
        meta,
        arrays,
    };
    fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    let mpath = manifest_path(prefix);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`] with the same dtype.
pub fn load_checkpoint<F: Scalar>(prefix: &Path) -> Result<Checkpoint<F>> {
    let mpath = manifest_path(prefix);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Corrupt {
            path: mpath,
            what: format!("unknown format `{}`", manifest.format),
        });
    }
    if manifest.dtype != F::DTYPE {
        return Err(Error::Corrupt {
            path: mpath,
            what: format!(
                "dtype mismatch: checkpoint is {}, expected {}",
                manifest.dtype,
                F::DTYPE
            ),
        });
    }
    let bpath = blob_path(prefix);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if sha256_hex(&blob) != manifest.blob_sha256 {
        return Err(Error::Corrupt {
            path: bpath,
            what: "blob digest mismatch".to_string(),
        });
    }
    let mut params = ParamSet::new();
    for entry in &manifest.arrays {
        let start = entry.byte_offset as usize;
        let end = start + entry.byte_len as usize;
        if end > blob.len() {
            return Err(Error::Corrupt {
                path: bpath,
                what: format!("array `{}` extends past blob end", entry.name),
            });
        }
        let count = entry.byte_len as usize / F::BYTE_LEN;
        if count != entry.shape.iter().product::<usize>() {
            return Err(Error::Corrupt {
                path: bpath,
                what: format!("array `{}` length does not match its shape", entry.name),
            });
        }
        let mut data = Vec::with_capacity(count);
        for chunk in blob[start..end].chunks(F::BYTE_LEN) {
            data.push(F::read_le(chunk));
        }
        params.insert(entry.name.clone(), Tensor::new(data, entry.shape.clone()));
    }
    Ok(Checkpoint {
        params,
        meta: manifest.meta,
    })
}
