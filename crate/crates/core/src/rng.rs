//! Named random substreams derived from one root seed.
//!
//! Every episode draws its prior sample, observation noise and exploration
//! noise from separate generators keyed by `(root, stream, epoch, index)`, so
//! results do not depend on how episodes are split across threads and one
//! source of randomness can be varied while the others stay fixed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Prior,
    Noise,
    Explore,
    Init,
    Shuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Prior => 1,
            Stream::Noise => 2,
            Stream::Explore => 3,
            Stream::Init => 4,
            Stream::Shuffle => 5,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(root: u64, stream: Stream, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut s = splitmix(root);
    for v in [stream.id(), epoch, index] {
        s = splitmix(s ^ v);
    }
    ChaCha8Rng::seed_from_u64(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = substream(7, Stream::Prior, 0, 3).gen();
        let b: u64 = substream(7, Stream::Prior, 0, 3).gen();
        let c: u64 = substream(7, Stream::Noise, 0, 3).gen();
        let d: u64 = substream(7, Stream::Prior, 1, 3).gen();
        let e: u64 = substream(8, Stream::Prior, 0, 3).gen();
        assert_eq!(a, b);
        assert!(a != c && a != d && a != e);
    }
}
