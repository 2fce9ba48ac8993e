//! Deterministic 28×28 handwritten-digit corpus.
//!
//! The crate vendors the classic 8×8 optical-recognition digit prototypes
//! (1797 real handwritten samples) as IDX assets and expands them into a
//! 28×28 corpus by seeded affine + elastic augmentation. Prototype pools are
//! split per class *before* augmentation, so train and test images never share
//! a source prototype and held-out error measures real generalization.
//!
//! Drop-in for environments without the full MNIST files; anything that
//! consumes IDX works on either.

use rayon::prelude::*;

use super::LabeledImageSet;
use crate::backbone::{Rng, Scalar};

const PROTO_IMAGES: &[u8] = include_bytes!("../../assets/digits-images-idx3-ubyte");
const PROTO_LABELS: &[u8] = include_bytes!("../../assets/digits-labels-idx1-ubyte");
const PROTO_SIDE: usize = 8;
const OUT_SIDE: usize = 28;

/// The vendored 8×8 prototype set.
pub fn prototype_set<F: Scalar>() -> LabeledImageSet<F> {
    let path = std::path::Path::new("<embedded digits asset>");
    let (images, rows, cols) =
        super::parse_idx_images(PROTO_IMAGES, path).expect("vendored image asset is valid");
    let labels = super::parse_idx_labels(PROTO_LABELS, path).expect("vendored label asset is valid");
    LabeledImageSet {
        images,
        labels,
        rows,
        cols,
        split: "prototypes".into(),
    }
}

/// Augmentation ranges for the corpus generator.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub train_count: usize,
    pub test_count: usize,
    /// Fraction of each class's prototypes reserved for the train pool.
    pub train_pool_fraction: f64,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub max_shear: f64,
    pub max_translate_px: f64,
    pub elastic_amplitude_px: f64,
    pub elastic_grid: usize,
    pub gamma_log_sd: f64,
    pub max_noise_sd: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        // Augmentation ranges tuned so a 128-hidden-unit MLP lands in the
        // high-90s accuracy regime on the held-out prototypes while a small
        // conv encoder stays comfortably above it.
        SyntheticConfig {
            train_count: 60_000,
            test_count: 10_000,
            train_pool_fraction: 0.85,
            max_rotation_deg: 6.0,
            scale_range: (0.90, 1.07),
            max_shear: 0.12,
            max_translate_px: 1.1,
            elastic_amplitude_px: 0.9,
            elastic_grid: 4,
            gamma_log_sd: 0.25,
            max_noise_sd: 0.014,
        }
    }
}

struct Pools {
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
}

fn split_pools(protos: &LabeledImageSet<f64>, cfg: &SyntheticConfig, seed: u64) -> Pools {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in protos.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut train = Vec::with_capacity(10);
    let mut test = Vec::with_capacity(10);
    for (class, members) in by_class.into_iter().enumerate() {
        let mut rng = Rng::derive(seed, "corpus-pools", class as u64);
        let perm = rng.permutation(members.len());
        let cut = ((members.len() as f64) * cfg.train_pool_fraction).round() as usize;
        let cut = cut.clamp(1, members.len() - 1);
        train.push(perm[..cut].iter().map(|&p| members[p]).collect());
        test.push(perm[cut..].iter().map(|&p| members[p]).collect());
    }
    Pools { train, test }
}

/// Generate the `(train, test)` pair. Same `seed` ⇒ bit-identical corpus.
pub fn generate_corpus<F: Scalar>(
    seed: u64,
    cfg: &SyntheticConfig,
) -> (LabeledImageSet<F>, LabeledImageSet<F>) {
    let protos = prototype_set::<f64>();
    let pools = split_pools(&protos, cfg, seed);
    let train = render_split(&protos, &pools.train, cfg, seed, "corpus-train", cfg.train_count);
    let test = render_split(&protos, &pools.test, cfg, seed, "corpus-test", cfg.test_count);
    (tag(train, "train"), tag(test, "test"))
}

fn tag<F: Scalar>(mut set: LabeledImageSet<F>, name: &str) -> LabeledImageSet<F> {
    set.split = name.to_string();
    set
}

fn render_split<F: Scalar>(
    protos: &LabeledImageSet<f64>,
    pools: &[Vec<usize>],
    cfg: &SyntheticConfig,
    seed: u64,
    stream: &str,
    count: usize,
) -> LabeledImageSet<F> {
    let rendered: Vec<(Vec<F>, u8)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::derive(seed, stream, i as u64);
            let class = rng.below(10);
            let pool = &pools[class];
            let proto_idx = pool[rng.below(pool.len())];
            let img = render_one(protos.image(proto_idx), cfg, &mut rng);
            (img, class as u8)
        })
        .collect();

    let mut images = Vec::with_capacity(count * OUT_SIDE * OUT_SIDE);
    let mut labels = Vec::with_capacity(count);
    for (img, label) in rendered {
        images.extend(img);
        labels.push(label);
    }
    LabeledImageSet {
        images,
        labels,
        rows: OUT_SIDE,
        cols: OUT_SIDE,
        split: stream.to_string(),
    }
}

fn render_one<F: Scalar>(proto: &[f64], cfg: &SyntheticConfig, rng: &mut Rng) -> Vec<F> {
    let theta = cfg.max_rotation_deg.to_radians() * rng.uniform_range(-1.0, 1.0);
    let scale = rng.uniform_range(cfg.scale_range.0, cfg.scale_range.1);
    let shear = cfg.max_shear * rng.uniform_range(-1.0, 1.0);
    let tx = cfg.max_translate_px * rng.uniform_range(-1.0, 1.0);
    let ty = cfg.max_translate_px * rng.uniform_range(-1.0, 1.0);
    let gamma = (rng.normal_f64() * cfg.gamma_log_sd).exp().clamp(0.55, 1.8);
    let lo = rng.uniform_range(0.08, 0.20);
    let hi = rng.uniform_range(0.55, 0.75);
    let noise_sd = cfg.max_noise_sd * rng.uniform_f64();

    // Forward map proto→canvas: M = base · R(θ) · Shear(k), applied about the
    // two centers; rendering walks the canvas through the inverse.
    let (sin, cos) = theta.sin_cos();
    let base = scale * (OUT_SIDE as f64 - 8.0) / PROTO_SIDE as f64; // digit ≈ 20px tall at scale 1
    let m00 = base * cos;
    let m01 = base * (shear * cos - sin);
    let m10 = base * sin;
    let m11 = base * (shear * sin + cos);
    let det = m00 * m11 - m01 * m10;
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);

    let g = cfg.elastic_grid;
    let field: Vec<(f64, f64)> = (0..g * g)
        .map(|_| {
            (
                rng.normal_f64() * cfg.elastic_amplitude_px,
                rng.normal_f64() * cfg.elastic_amplitude_px,
            )
        })
        .collect();

    let c_out = (OUT_SIDE as f64 - 1.0) / 2.0;
    let c_proto = (PROTO_SIDE as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(OUT_SIDE * OUT_SIDE);
    for y in 0..OUT_SIDE {
        for x in 0..OUT_SIDE {
            let (dx, dy) = sample_field(&field, g, x as f64, y as f64);
            let qx = x as f64 + dx - c_out - tx;
            let qy = y as f64 + dy - c_out - ty;
            let px = i00 * qx + i01 * qy + c_proto;
            let py = i10 * qx + i11 * qy + c_proto;
            let mut v = bilinear(proto, PROTO_SIDE, px, py);
            v = v.powf(gamma);
            v = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            if noise_sd > 0.0 {
                v = (v + rng.normal_f64() * noise_sd).clamp(0.0, 1.0);
            }
            out.push(F::from_f64(v));
        }
    }
    out
}

fn sample_field(field: &[(f64, f64)], g: usize, x: f64, y: f64) -> (f64, f64) {
    let fx = x / (OUT_SIDE as f64 - 1.0) * (g as f64 - 1.0);
    let fy = y / (OUT_SIDE as f64 - 1.0) * (g as f64 - 1.0);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(g - 1), (y0 + 1).min(g - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let at = |xx: usize, yy: usize| field[yy * g + xx];
    let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
    let top = lerp(at(x0, y0), at(x1, y0), ax);
    let bot = lerp(at(x0, y1), at(x1, y1), ax);
    lerp(top, bot, ay)
}

fn bilinear(img: &[f64], side: usize, x: f64, y: f64) -> f64 {
    if x <= -1.0 || y <= -1.0 || x >= side as f64 || y >= side as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (ax, ay) = (x - x0, y - y0);
    let read = |xx: f64, yy: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= side as f64 || yy >= side as f64 {
            0.0
        } else {
            img[yy as usize * side + xx as usize]
        }
    };
    let v00 = read(x0, y0);
    let v10 = read(x0 + 1.0, y0);
    let v01 = read(x0, y0 + 1.0);
    let v11 = read(x0 + 1.0, y0 + 1.0);
    (v00 * (1.0 - ax) + v10 * ax) * (1.0 - ay) + (v01 * (1.0 - ax) + v11 * ax) * ay
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            train_count: 64,
            test_count: 32,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn corpus_is_seed_deterministic() {
        let (a, _) = generate_corpus::<f32>(42, &small_cfg());
        let (b, _) = generate_corpus::<f32>(42, &small_cfg());
        assert_eq!(a.labels, b.labels);
        assert!(a
            .images
            .iter()
            .zip(&b.images)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let (c, _) = generate_corpus::<f32>(43, &small_cfg());
        assert!(a.images != c.images);
    }

    #[test]
    fn corpus_pixels_in_unit_range() {
        let (train, test) = generate_corpus::<f32>(1, &small_cfg());
        assert_eq!(train.rows, 28);
        assert_eq!(test.cols, 28);
        for v in train.images.iter().chain(&test.images) {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn train_and_test_pools_are_prototype_disjoint() {
        let protos = prototype_set::<f64>();
        let cfg = small_cfg();
        let pools = split_pools(&protos, &cfg, 7);
        for class in 0..10 {
            for t in &pools.test[class] {
                assert!(!pools.train[class].contains(t));
            }
            assert!(!pools.train[class].is_empty());
            assert!(!pools.test[class].is_empty());
        }
    }

    #[test]
    fn images_are_not_blank() {
        let (train, _) = generate_corpus::<f32>(9, &small_cfg());
        for i in 0..train.count() {
            let s: f32 = train.image(i).iter().sum();
            assert!(s > 5.0, "image {i} nearly blank (sum {s})");
        }
    }
}
