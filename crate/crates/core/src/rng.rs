//! Counter-addressed random streams.
//!
//! A sample with index `i` always draws from the ChaCha8 keystream of
//! `(seed, stream_id)` starting at word `i * WORDS_PER_SAMPLE`, so a sample's
//! randomness depends only on `(seed, stream_id, i)` and never on which
//! worker produced it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// 32-bit keystream words reserved per sample.
pub const WORDS_PER_SAMPLE: u128 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derived stream for a sub-task; deterministic in `(self, tag)`.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x9e37_79b9))),
        }
    }

    /// Generator positioned at the start of sample `index`.
    pub fn at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(index as u128 * WORDS_PER_SAMPLE);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal variate by Box-Muller (always two uniforms).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform direction on the unit sphere of `out.len()` dimensions.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            *v = standard_normal(rng);
            norm2 += *v * *v;
        }
        if norm2 > 1e-300 {
            let inv = 1.0 / norm2.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn sample_depends_only_on_index() {
        let s = RandomStream::new(7, 3);
        let a: Vec<u64> = (0..10).map(|i| s.at(i).next_u64()).collect();
        let b: Vec<u64> = (0..10).rev().map(|i| s.at(i).next_u64()).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn distinct_streams_differ() {
        let a = RandomStream::new(1, 0).at(0).next_u64();
        let b = RandomStream::new(1, 1).at(0).next_u64();
        let c = RandomStream::new(1, 0).substream(5).at(0).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unit_vectors_are_normalised() {
        let s = RandomStream::new(11, 0);
        for n in 1..=4 {
            for i in 0..100 {
                let mut v = [0.0; 4];
                unit_vector(&mut s.at(i), &mut v[..n]);
                let norm: f64 = v[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-14);
            }
        }
    }
}
