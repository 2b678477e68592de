//! Counter-based Gaussian streams.
//!
//! Each `(seed, purpose, stream)` triple addresses an independent ChaCha8
//! keystream. Normals are drawn in fixed-size blocks at fixed word offsets,
//! so block `k` of sample `i` can be regenerated without producing anything
//! that precedes it. Solvers, Brownian paths and Monte-Carlo checks rely on
//! this to replay the same noise across resolutions.

use std::f64::consts::TAU;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent sub-seeds for the different consumers of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    InitialState,
    StepNoise,
    Brownian,
    DataSample,
    Perturbation,
    Bootstrap,
    Scan,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::InitialState => 0x1d8e_4e27_c47d_124f,
            Purpose::StepNoise => 0x9e37_79b9_7f4a_7c15,
            Purpose::Brownian => 0xbf58_476d_1ce4_e5b9,
            Purpose::DataSample => 0x94d0_49bb_1331_11eb,
            Purpose::Perturbation => 0x2545_f491_4f6c_dd1d,
            Purpose::Bootstrap => 0x6a09_e667_f3bc_c909,
            Purpose::Scan => 0x3c6e_f372_fe94_f82b,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard-normal generator addressed by `(block, position-in-block)`.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    block_len: usize,
    words_per_block: u128,
}

impl NormalStream {
    /// `block_len` is the number of normals per block (usually the state
    /// dimension); it fixes the stride between blocks.
    pub fn new(seed: u64, purpose: Purpose, stream: u64, block_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ purpose.tag()));
        rng.set_stream(stream);
        // Box–Muller: two u64 (four 32-bit words) per pair of normals.
        let pairs = block_len.div_ceil(2).max(1) as u128;
        Self { rng, block_len, words_per_block: 4 * pairs }
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Fills `out` (length `block_len`) with block `block`.
    pub fn fill_block(&mut self, block: u64, out: &mut [f64]) {
        assert_eq!(out.len(), self.block_len, "block length mismatch");
        let pos = block as u128 * self.words_per_block;
        if self.rng.get_word_pos() != pos {
            self.rng.set_word_pos(pos);
        }
        let mut chunks = out.chunks_mut(2);
        for pair in &mut chunks {
            let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
            pair[0] = z0;
            if pair.len() > 1 {
                pair[1] = z1;
            }
        }
    }

    pub fn block(&mut self, block: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.block_len];
        self.fill_block(block, &mut out);
        out
    }

    /// Uniform on `[0, 1)` at its own word offset; used for resampling and
    /// mixture-component draws, never interleaved with normal blocks.
    pub fn uniform_at(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(2 * index as u128);
        unit_closed_open(self.rng.next_u64())
    }
}

/// `(0, 1]` with 53 bits.
fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `[0, 1)` with 53 bits.
fn unit_closed_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let u1 = unit_open_closed(a);
    let u2 = unit_closed_open(b);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (TAU * u2).sin_cos();
    (r * c, r * s)
}
