use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent deterministic stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const DATA: u64 = 1;
    pub const DROP: u64 = 2;
    pub const AE: u64 = 3;
    pub const NCDE: u64 = 4;
    pub const DIFFUSION: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const METRICS: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const NCDE_INIT: u64 = 9;
}
