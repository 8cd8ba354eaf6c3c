//! Counter-based random streams keyed by a hierarchical path.
//!
//! A stream is fully determined by `(seed, path)`. Children are derived from
//! the parent's key, never from its draw position, so sibling streams can be
//! created and consumed in any order (or on any thread) and still produce the
//! same values.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const PATH_SEP: char = '/';

/// Identity of a stream: a run seed plus a `/`-separated path such as
/// `train/iter=3/trial=5`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub path: String,
}

impl StreamId {
    pub fn root(seed: u64) -> Self {
        StreamId {
            seed,
            path: String::new(),
        }
    }

    pub fn child(&self, segment: impl fmt::Display) -> Self {
        let segment = segment.to_string();
        let path = if self.path.is_empty() {
            segment
        } else {
            format!("{}{}{}", self.path, PATH_SEP, segment)
        };
        StreamId {
            seed: self.seed,
            path,
        }
    }

    /// Shorthand for `child(format!("{name}={index}"))`.
    pub fn indexed(&self, name: &str, index: impl fmt::Display) -> Self {
        self.child(format_args!("{name}={index}"))
    }

    pub fn stream(&self) -> RandomStream {
        RandomStream::new(self.clone())
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.seed, self.path)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 256-bit ChaCha key from the seed and the path bytes. Four
/// independent lanes absorb the path so that two paths collide only if all
/// lanes collide.
fn derive_key(id: &StreamId) -> [u8; 32] {
    let mut lanes = [0u64; 4];
    let mut s = id.seed;
    for lane in lanes.iter_mut() {
        *lane = splitmix64(&mut s);
    }
    for (i, b) in id.path.bytes().enumerate() {
        for (k, lane) in lanes.iter_mut().enumerate() {
            let mut st = *lane ^ ((b as u64) << (8 * (k % 8))) ^ (i as u64).rotate_left(17 * k as u32);
            *lane = splitmix64(&mut st);
        }
    }
    // Length suffix separates "a" + "" from "" + "a" style ambiguities.
    let mut out = [0u8; 32];
    for (k, lane) in lanes.iter().enumerate() {
        let mut st = *lane ^ (id.path.len() as u64);
        let v = splitmix64(&mut st);
        out[8 * k..8 * k + 8].copy_from_slice(&v.to_le_bytes());
    }
    out
}

/// A deterministic random stream. Implements [`RngCore`], so every `rand` and
/// `rand_distr` API works on it.
#[derive(Clone, Debug)]
pub struct RandomStream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(id: StreamId) -> Self {
        let rng = ChaCha8Rng::from_seed(derive_key(&id));
        RandomStream { id, rng }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(StreamId::root(seed))
    }

    pub fn id(&self) -> &StreamId {
        &self.id
    }

    /// A fresh stream for a sub-path. Does not consume draws from `self`.
    pub fn child(&self, segment: impl fmt::Display) -> RandomStream {
        RandomStream::new(self.id.child(segment))
    }

    pub fn indexed(&self, name: &str, index: impl fmt::Display) -> RandomStream {
        RandomStream::new(self.id.indexed(name, index))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi]`; returns `lo` when the interval is empty.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.uniform();
        if hi <= lo {
            lo
        } else {
            (lo + u * (hi - lo)).min(hi)
        }
    }

    /// Bernoulli draw: `true` with probability `p`. Always consumes one draw.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// A seed for a downstream consumer (trainer init, external worker).
    pub fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
