//! Type II defenses evaluated against Type I attacks: feature-squeezing
//! detection, vanilla adversarial training, and adversarial logit pairing.

pub mod strengthen;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backbone::Scalar;
use crate::models::{EmbeddingNet, ImageClassifier};

pub use strengthen::{adversarial_train, logit_pairing_train, LogitPairs};

/// Thresholds from the digit-task detection table, kept for report layouts.
pub const REFERENCE_ZETAS: [f64; 3] = [0.2510, 0.6089, 0.9353];

/// One input-squeezing transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Squeezer {
    /// Quantize pixels to `bits` of depth.
    BitDepth { bits: u32 },
    /// k×k sliding median with reflect padding.
    Median { kernel: usize },
}

/// Joint-squeezer detector configuration. The detector compares the
/// predictor's output on the raw input against each squeezed copy and takes
/// the maximum Euclidean distance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SqueezeConfig {
    pub squeezers: Vec<Squeezer>,
    /// Rejection threshold ζ: distances at or above it are adversarial.
    pub threshold: f64,
}

impl SqueezeConfig {
    /// The reference joint setting: 1-bit depth reduction + 2×2 median.
    pub fn joint(threshold: f64) -> Self {
        SqueezeConfig {
            squeezers: vec![Squeezer::BitDepth { bits: 1 }, Squeezer::Median { kernel: 2 }],
            threshold,
        }
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        for s in &self.squeezers {
            match s {
                Squeezer::BitDepth { bits } if *bits < 1 => {
                    return Err(crate::error::Error::Contract(
                        "bit depth must be ≥ 1".into(),
                    ))
                }
                Squeezer::Median { kernel } if *kernel < 1 => {
                    return Err(crate::error::Error::Contract(
                        "median kernel must be ≥ 1".into(),
                    ))
                }
                _ => {}
            }
        }
        if !(self.threshold > 0.0) {
            return Err(crate::error::Error::Contract(
                "squeeze threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Accept/reject decision with the measured prediction distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorVerdict {
    pub distance: f64,
    pub rejected: bool,
}

/// Quantize pixels in [0,1] to `bits` of depth: round(x·(2ᵇ−1))/(2ᵇ−1).
pub fn bit_depth_reduce<F: Scalar>(x: &[F], bits: u32) -> Vec<F> {
    assert!(bits >= 1, "bit depth must be ≥ 1");
    let levels = F::from_f64((2u64.pow(bits) - 1) as f64);
    x.iter().map(|&v| (v * levels).round() / levels).collect()
}

fn reflect(idx: isize, len: usize) -> usize {
    // scipy-style 'reflect' (c b a | a b c): -1 → 0, len → len−1
    let len = len as isize;
    let mut i = idx;
    if i < 0 {
        i = -i - 1;
    }
    if i >= len {
        i = 2 * len - 1 - i;
    }
    i.clamp(0, len - 1) as usize
}

/// k×k sliding median with reflect padding. The window for output pixel
/// (r, c) spans rows r−k/2 .. r−k/2+k−1 (ndimage origin convention); with an
/// even count the median is the mean of the two central order statistics.
pub fn median_smooth<F: Scalar>(x: &[F], rows: usize, cols: usize, kernel: usize) -> Vec<F> {
    assert!(kernel >= 1);
    assert_eq!(x.len(), rows * cols, "median_smooth input is not rows×cols");
    if kernel == 1 {
        return x.to_vec();
    }
    let offset = (kernel / 2) as isize;
    let mut out = Vec::with_capacity(x.len());
    let mut window: Vec<f64> = Vec::with_capacity(kernel * kernel);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            window.clear();
            for dr in 0..kernel as isize {
                let rr = reflect(r + dr - offset, rows);
                for dc in 0..kernel as isize {
                    let cc = reflect(c + dc - offset, cols);
                    window.push(x[rr * cols + cc].to_f64());
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = window.len();
            let med = if m % 2 == 1 {
                window[m / 2]
            } else {
                0.5 * (window[m / 2 - 1] + window[m / 2])
            };
            out.push(F::from_f64(med));
        }
    }
    out
}

pub fn apply_squeezer<F: Scalar>(x: &[F], rows: usize, cols: usize, s: Squeezer) -> Vec<F> {
    match s {
        Squeezer::BitDepth { bits } => bit_depth_reduce(x, bits),
        Squeezer::Median { kernel } => median_smooth(x, rows, cols, kernel),
    }
}

/// Anything that maps an image to a comparable prediction vector: softmax
/// probabilities for classifiers, unit embeddings for recognizers.
pub trait Predictor<F: Scalar>: Sync {
    fn prediction(&self, image: &[F]) -> Vec<f64>;
    fn image_rows(&self) -> usize;
    fn image_cols(&self) -> usize;
}

/// Softmax-probability view of a classifier.
pub struct SoftmaxPredictor<'a, F: Scalar, C: ImageClassifier<F>> {
    pub net: &'a C,
    _marker: std::marker::PhantomData<F>,
}

impl<'a, F: Scalar, C: ImageClassifier<F>> SoftmaxPredictor<'a, F, C> {
    pub fn new(net: &'a C) -> Self {
        SoftmaxPredictor {
            net,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<F: Scalar, C: ImageClassifier<F>> Predictor<F> for SoftmaxPredictor<'_, F, C> {
    fn prediction(&self, image: &[F]) -> Vec<f64> {
        crate::models::probabilities_batch(self.net, image, 1)
            .data
            .iter()
            .map(|v| v.to_f64())
            .collect()
    }

    fn image_rows(&self) -> usize {
        self.net.input_side()
    }

    fn image_cols(&self) -> usize {
        self.net.input_side()
    }
}

/// Embedding view of the recognizer.
pub struct EmbeddingPredictor<'a, F: Scalar> {
    pub net: &'a EmbeddingNet<F>,
}

impl<F: Scalar> Predictor<F> for EmbeddingPredictor<'_, F> {
    fn prediction(&self, image: &[F]) -> Vec<f64> {
        self.net
            .embed_one(image)
            .iter()
            .map(|v| v.to_f64())
            .collect()
    }

    fn image_rows(&self) -> usize {
        self.net.side
    }

    fn image_cols(&self) -> usize {
        self.net.side
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Maximum prediction distance over the configured squeezers.
pub fn squeeze_distance<F: Scalar>(
    x: &[F],
    predictor: &impl Predictor<F>,
    cfg: &SqueezeConfig,
) -> f64 {
    let raw = predictor.prediction(x);
    let (rows, cols) = (predictor.image_rows(), predictor.image_cols());
    cfg.squeezers
        .iter()
        .map(|&s| {
            let squeezed = apply_squeezer(x, rows, cols, s);
            euclidean(&raw, &predictor.prediction(&squeezed))
        })
        .fold(0.0, f64::max)
}

/// Joint-squeezer detector: reject iff the distance reaches ζ.
pub fn squeeze_detect<F: Scalar>(
    x: &[F],
    predictor: &impl Predictor<F>,
    cfg: &SqueezeConfig,
) -> DetectorVerdict {
    let distance = squeeze_distance(x, predictor, cfg);
    DetectorVerdict {
        distance,
        rejected: distance >= cfg.threshold,
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DetectionReport {
    pub rate: f64,
    pub count: usize,
    pub rejected: Vec<bool>,
}

/// Fraction of a set the detector rejects; empty sets report rate 0 with
/// count 0.
pub fn detection_rate<F: Scalar>(
    images: &[F],
    count: usize,
    predictor: &impl Predictor<F>,
    cfg: &SqueezeConfig,
) -> DetectionReport {
    if count == 0 {
        return DetectionReport::default();
    }
    let pixels = predictor.image_rows() * predictor.image_cols();
    assert_eq!(images.len(), count * pixels);
    let rejected: Vec<bool> = images
        .chunks(pixels)
        .map(|img| squeeze_detect(img, predictor, cfg).rejected)
        .collect();
    let hits = rejected.iter().filter(|&&r| r).count();
    DetectionReport {
        rate: hits as f64 / count as f64,
        count,
        rejected,
    }
}

/// Smallest ζ whose clean rejection rate is at most `max_clean_rejection`.
pub fn calibrate_threshold<F: Scalar>(
    clean_images: &[F],
    count: usize,
    predictor: &impl Predictor<F>,
    squeezers: &[Squeezer],
    max_clean_rejection: f64,
) -> f64 {
    assert!(count > 0, "calibration needs a non-empty clean set");
    let pixels = predictor.image_rows() * predictor.image_cols();
    let probe = SqueezeConfig {
        squeezers: squeezers.to_vec(),
        threshold: f64::INFINITY,
    };
    let mut distances: Vec<f64> = clean_images
        .chunks(pixels)
        .map(|img| squeeze_distance(img, predictor, &probe))
        .collect();
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let allowed = (max_clean_rejection * count as f64).floor() as usize;
    // rejection counts elements ≥ ζ, so ζ just above the (count−allowed)-th
    // order statistic admits at most `allowed` rejections
    let idx = count - allowed;
    if idx >= count {
        distances[count - 1] + 1e-9
    } else {
        distances[idx] + 1e-9
    }
}

/// Detection-table CSV: one row per example set, one column per threshold.
pub fn write_detection_table(
    out: &mut impl Write,
    zetas: &[f64],
    rows: &[(&str, Vec<f64>)],
) -> std::io::Result<()> {
    write!(out, "set")?;
    for z in zetas {
        write!(out, ",zeta_{z}")?;
    }
    writeln!(out)?;
    for (name, rates) in rows {
        write!(out, "{name}")?;
        for r in rates {
            write!(out, ",{r}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MlpClassifier;

    #[test]
    fn one_bit_rounding() {
        let out = bit_depth_reduce(&[0.6f64, 0.49, 0.5, 1.0, 0.0], 1);
        assert_eq!(out, vec![1.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn bit_depth_is_idempotent() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        for bits in [1, 2, 4] {
            let once = bit_depth_reduce(&x, bits);
            let twice = bit_depth_reduce(&once, bits);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn median_constant_image_unchanged() {
        let img = vec![0.37f64; 49];
        for k in [1, 2, 3, 5] {
            assert_eq!(median_smooth(&img, 7, 7, k), img);
        }
    }

    #[test]
    fn even_window_median_is_mean_of_central_pair() {
        // 2×2 window {0,0,0,1}: sorted [0,0,0,1], central pair (0,0) → 0
        let img = vec![0.0f64, 0.0, 0.0, 1.0];
        let out = median_smooth(&img, 2, 2, 2);
        // the pixel whose window is exactly the four corners sees {0,0,0,1}
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn impulse_shrinks_under_three_by_three() {
        let mut img = vec![0.0f64; 49];
        img[24] = 1.0; // single-pixel impulse in the center
        let out = median_smooth(&img, 7, 7, 3);
        assert_eq!(out[24], 0.0, "3×3 median removes an isolated impulse");
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn already_squeezed_input_is_accepted() {
        // constant-zero image is invariant under both squeezers ⇒ distance 0
        let net = MlpClassifier::<f64>::new(28, 16, 10, 1);
        let predictor = SoftmaxPredictor::new(&net);
        let cfg = SqueezeConfig::joint(0.1);
        let x = vec![0.0f64; 784];
        let v = squeeze_detect(&x, &predictor, &cfg);
        assert_eq!(v.distance, 0.0);
        assert!(!v.rejected);
    }

    #[test]
    fn rejection_rate_monotone_in_threshold() {
        let net = MlpClassifier::<f64>::new(28, 24, 10, 2);
        let predictor = SoftmaxPredictor::new(&net);
        let mut rng = crate::backbone::Rng::derive(5, "detect", 0);
        let images: Vec<f64> = (0..784 * 40).map(|_| rng.uniform_f64()).collect();
        let mut last = f64::INFINITY;
        for zeta in [0.01, 0.05, 0.2, 0.8] {
            let cfg = SqueezeConfig::joint(zeta);
            let report = detection_rate(&images, 40, &predictor, &cfg);
            assert!(report.rate <= last, "rate not monotone in ζ");
            last = report.rate;
        }
    }

    #[test]
    fn empty_set_reports_zero_with_zero_count() {
        let net = MlpClassifier::<f64>::new(28, 16, 10, 3);
        let predictor = SoftmaxPredictor::new(&net);
        let cfg = SqueezeConfig::joint(0.5);
        let report = detection_rate(&[], 0, &predictor, &cfg);
        assert_eq!(report.rate, 0.0);
        assert_eq!(report.count, 0);
    }

    #[test]
    fn calibrated_threshold_bounds_clean_rejection() {
        let net = MlpClassifier::<f64>::new(28, 24, 10, 4);
        let predictor = SoftmaxPredictor::new(&net);
        let mut rng = crate::backbone::Rng::derive(6, "calib", 0);
        let images: Vec<f64> = (0..784 * 60).map(|_| rng.uniform_f64()).collect();
        let squeezers = SqueezeConfig::joint(1.0).squeezers;
        let zeta = calibrate_threshold(&images, 60, &predictor, &squeezers, 0.15);
        let report = detection_rate(
            &images,
            60,
            &predictor,
            &SqueezeConfig {
                squeezers,
                threshold: zeta,
            },
        );
        assert!(report.rate <= 0.15, "clean rejection {}", report.rate);
    }
}
