//! Dataset ingestion, deterministic splits, and example-set persistence.

pub mod archive;
pub mod synthetic;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::backbone::{Scalar, Tensor};
use crate::error::{Error, Result};

pub use archive::AdversarialArchive;
pub use synthetic::{generate_corpus, SyntheticConfig};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASS_COUNT: usize = 10;

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;

/// Labeled grayscale images with pixels in [0,1].
#[derive(Clone, Debug)]
pub struct LabeledImageSet<F: Scalar> {
    /// `count × rows × cols`, flattened row-major.
    pub images: Vec<F>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub split: String,
}

impl<F: Scalar> LabeledImageSet<F> {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[F] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledImageSet<F> {
        let p = self.pixels();
        let mut images = Vec::with_capacity(indices.len() * p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        LabeledImageSet {
            images,
            labels,
            rows: self.rows,
            cols: self.cols,
            split: self.split.clone(),
        }
    }

    /// Deterministic partition into a `train_count` front split and the rest,
    /// shuffled by `seed`.
    pub fn split_at(
        &self,
        train_count: usize,
        seed: u64,
    ) -> (LabeledImageSet<F>, LabeledImageSet<F>) {
        assert!(train_count <= self.count());
        let mut rng = crate::backbone::Rng::derive(seed, "dataset-split", 0);
        let perm = rng.permutation(self.count());
        let mut a = self.subset(&perm[..train_count]);
        let mut b = self.subset(&perm[train_count..]);
        a.split = format!("{}-front", self.split);
        b.split = format!("{}-rest", self.split);
        (a, b)
    }

    /// One example as a `[1, rows*cols]` tensor.
    pub fn image_tensor(&self, i: usize) -> Tensor<F> {
        Tensor::new(self.image(i).to_vec(), vec![1, self.pixels()])
    }

    pub fn cast<G: Scalar>(&self) -> LabeledImageSet<G> {
        LabeledImageSet {
            images: self
                .images
                .iter()
                .map(|v| G::from_f64(v.to_f64()))
                .collect(),
            labels: self.labels.clone(),
            rows: self.rows,
            cols: self.cols,
            split: self.split.clone(),
        }
    }
}

/// One-hot encode labels into `[batch, classes]`.
pub fn one_hot<F: Scalar>(labels: &[u8], classes: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (r, &l) in labels.iter().enumerate() {
        assert!((l as usize) < classes, "label {l} out of range");
        t.data[r * classes + l as usize] = F::ONE;
    }
    t
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            what: "truncated header".to_string(),
            offset: offset as u64,
        })
}

/// Parse IDX image bytes (big-endian, magic 2051), scaling pixels to [0,1].
pub fn parse_idx_images<F: Scalar>(bytes: &[u8], path: &Path) -> Result<(Vec<F>, usize, usize)> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            what: format!("bad image magic {magic}, expected {IDX_IMAGE_MAGIC}"),
            offset: 0,
        });
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            what: format!(
                "truncated image data: need {need} bytes, have {}",
                bytes.len()
            ),
            offset: bytes.len() as u64,
        });
    }
    let scale = F::from_f64(1.0 / 255.0);
    let images = bytes[16..need]
        .iter()
        .map(|&b| F::from_f64(b as f64) * scale)
        .collect();
    Ok((images, rows, cols))
}

/// Parse IDX label bytes (big-endian, magic 2049).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            what: format!("bad label magic {magic}, expected {IDX_LABEL_MAGIC}"),
            offset: 0,
        });
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            what: format!(
                "truncated label data: need {need} bytes, have {}",
                bytes.len()
            ),
            offset: bytes.len() as u64,
        });
    }
    Ok(bytes[8..need].to_vec())
}

/// Load a labeled image set from an IDX image file and IDX label file pair.
pub fn load_mnist_idx<F: Scalar>(
    images_path: &Path,
    labels_path: &Path,
) -> Result<LabeledImageSet<F>> {
    let ibytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (images, rows, cols) = parse_idx_images(&ibytes, images_path)?;
    let labels = parse_idx_labels(&lbytes, labels_path)?;
    let count = images.len() / (rows * cols);
    if count != labels.len() {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            what: format!("{count} images but {} labels", labels.len()),
            offset: 0,
        });
    }
    Ok(LabeledImageSet {
        images,
        labels,
        rows,
        cols,
        split: images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".to_string()),
    })
}

/// Write a labeled image set as an IDX image/label file pair (pixels
/// quantized to u8).
pub fn save_idx<F: Scalar>(
    set: &LabeledImageSet<F>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let mut ibytes = Vec::with_capacity(16 + set.images.len());
    ibytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    ibytes.extend_from_slice(&(set.count() as u32).to_be_bytes());
    ibytes.extend_from_slice(&(set.rows as u32).to_be_bytes());
    ibytes.extend_from_slice(&(set.cols as u32).to_be_bytes());
    for v in &set.images {
        let q = (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        ibytes.push(q);
    }
    let mut lbytes = Vec::with_capacity(8 + set.count());
    lbytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbytes.extend_from_slice(&(set.count() as u32).to_be_bytes());
    lbytes.extend_from_slice(&set.labels);

    for (path, bytes) in [(images_path, &ibytes), (labels_path, &lbytes)] {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn fake_path() -> PathBuf {
        PathBuf::from("test.idx")
    }

    /// Hand-crafted two-image IDX file: checks endianness independent of host.
    fn two_image_idx() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&2051u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&[0, 255, 128, 64, 255, 0, 0, 32]);
        b
    }

    #[test]
    fn parses_hand_crafted_images_big_endian() {
        let bytes = two_image_idx();
        let (images, rows, cols) = parse_idx_images::<f64>(&bytes, &fake_path()).unwrap();
        assert_eq!((rows, cols), (2, 2));
        assert_eq!(images.len(), 8);
        assert_eq!(images[1], 1.0); // pixel value 255 → 1.0
        assert!((images[2] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn bad_magic_reports_offset() {
        let mut bytes = two_image_idx();
        bytes[3] = 7;
        let err = parse_idx_images::<f32>(&bytes, &fake_path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("magic"), "{msg}");
        assert!(msg.contains("offset 0"), "{msg}");
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = &two_image_idx()[..18];
        let err = parse_idx_images::<f32>(bytes, &fake_path()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn label_image_count_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ipath = dir.path().join("img.idx");
        let lpath = dir.path().join("lab.idx");
        std::fs::write(&ipath, two_image_idx()).unwrap();
        let mut lbytes = Vec::new();
        lbytes.extend_from_slice(&2049u32.to_be_bytes());
        lbytes.extend_from_slice(&3u32.to_be_bytes());
        lbytes.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&lpath, lbytes).unwrap();
        assert!(load_mnist_idx::<f32>(&ipath, &lpath).is_err());
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = LabeledImageSet::<f32> {
            images: vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0, 0.75, 0.125],
            labels: vec![3, 9],
            rows: 2,
            cols: 2,
            split: "t".into(),
        };
        let ipath = dir.path().join("img.idx");
        let lpath = dir.path().join("lab.idx");
        save_idx(&set, &ipath, &lpath).unwrap();
        let loaded = load_mnist_idx::<f32>(&ipath, &lpath).unwrap();
        assert_eq!(loaded.labels, set.labels);
        for (a, b) in loaded.images.iter().zip(&set.images) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn split_is_seed_deterministic() {
        let set = LabeledImageSet::<f32> {
            images: (0..40).map(|v| v as f32 / 40.0).collect(),
            labels: (0..10).collect(),
            rows: 2,
            cols: 2,
            split: "t".into(),
        };
        let (a1, b1) = set.split_at(6, 99);
        let (a2, b2) = set.split_at(6, 99);
        assert_eq!(a1.labels, a2.labels);
        assert_eq!(b1.labels, b2.labels);
        let (a3, _) = set.split_at(6, 100);
        assert_ne!(a1.labels, a3.labels);
    }

    #[test]
    fn vendored_prototypes_have_valid_labels_and_range() {
        let protos = synthetic::prototype_set::<f32>();
        assert_eq!(protos.count(), 1797);
        assert!(protos.labels.iter().all(|&l| l < 10));
        assert!(protos.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
