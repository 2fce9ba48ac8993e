use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scalar::Scalar;

/// Seeded random stream.
///
/// Streams are derived from one master seed by hashing
/// `(master, consumer-name, index)`, so adding a new consumer never perturbs
/// the draws any existing consumer sees. Samples are always drawn in `f64`
/// and converted, which keeps the underlying stream identical between the
/// `f32` and `f64` compute modes.
pub struct Rng {
    inner: ChaCha8Rng,
    pub seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the consumer name, folded with master and index through
    // splitmix64 so nearby (master, index) pairs land far apart.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = master ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let a = splitmix64(&mut state);
    let b = splitmix64(&mut state);
    a ^ b.rotate_left(32)
}

impl Rng {
    /// Stream for `(master seed, consumer name, index)`.
    pub fn derive(master: u64, name: &str, index: u64) -> Rng {
        let seed = derive_seed(master, name, index);
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Rng {
            inner: ChaCha8Rng::from_seed(key),
            seed,
        }
    }

    pub fn from_seed(seed: u64) -> Rng {
        Rng::derive(seed, "root", 0)
    }

    pub fn normal_f64(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal<F: Scalar>(&mut self) -> F {
        F::from_f64(self.normal_f64())
    }

    pub fn normal_vec<F: Scalar>(&mut self, n: usize) -> Vec<F> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn flip(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    /// Fisher–Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.inner.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::derive(42, "train", 0);
        let mut b = Rng::derive(42, "train", 0);
        for _ in 0..100 {
            assert_eq!(a.normal_f64().to_bits(), b.normal_f64().to_bits());
        }
    }

    #[test]
    fn distinct_consumers_are_independent() {
        // Drawing from one stream must not change what another stream yields.
        let mut attack = Rng::derive(42, "attack", 0);
        let expected: Vec<u64> = (0..16).map(|_| attack.normal_f64().to_bits()).collect();

        let mut train = Rng::derive(42, "train", 0);
        let _burn: Vec<f64> = (0..1000).map(|_| train.normal_f64()).collect();
        let mut attack2 = Rng::derive(42, "attack", 0);
        let got: Vec<u64> = (0..16).map(|_| attack2.normal_f64().to_bits()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn distinct_names_and_indices_differ() {
        let a = Rng::derive(7, "a", 0).seed;
        let b = Rng::derive(7, "b", 0).seed;
        let c = Rng::derive(7, "a", 1).seed;
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = Rng::derive(3, "perm", 0);
        let mut p = rng.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
