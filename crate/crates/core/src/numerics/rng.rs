use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A reproducible random stream: identical `(seed, stream)` pairs produce
/// identical draws regardless of thread scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A distinct stream derived from this one, e.g. per layer or per worker.
    pub fn substream(&self, index: u64) -> RngStream {
        // splitmix64 finalizer over (stream, index)
        let mut z = self
            .stream
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        RngStream {
            seed: self.seed,
            stream: z ^ (z >> 31),
        }
    }
}

/// `count` iid N(0, 1) draws from `stream`.
pub fn standard_normal(stream: RngStream, count: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}
