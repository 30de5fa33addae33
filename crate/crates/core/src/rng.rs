use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream for `(seed, generation, slot)`.
pub fn stream(seed: u64, generation: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) ^ slot);
    rng
}

/// Slot reserved for per-generation bookkeeping draws (selection, shuffling).
pub const CONTROL_SLOT: u64 = 0xFFFF_FFFF;
