//! Seeded random streams.
//!
//! Every run derives independent ChaCha8 streams from its master seed. Each
//! consumer owns one stream, so for example enabling exploration noise never
//! shifts the environment's demand trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream offsets under a master seed. The numeric values are part of the
/// reproducibility contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ParamInit = 1,
    Exploration = 2,
    Reparam = 3,
    EnvDemand = 4,
    Replay = 5,
    Evaluation = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Random source for latent sampling: seeded noise in training, the latent
/// mean in evaluation.
pub enum LatentNoise<'a> {
    Sample(&'a mut ChaCha8Rng),
    Mean,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: Vec<u64> = (0..4).map(|_| stream(17, Stream::Exploration).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream(17, Stream::Exploration).random();
        let y: u64 = stream(17, Stream::EnvDemand).random();
        let z: u64 = stream(18, Stream::Exploration).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
