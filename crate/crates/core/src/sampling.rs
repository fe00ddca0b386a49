//! Deterministic random streams and chunked parallel scans.
//!
//! Every scan splits its sample budget into fixed-size chunks. Chunk `k` draws
//! from stream `k` of a ChaCha generator keyed by the master seed, and chunk
//! results are reduced in chunk order. Results therefore depend only on the
//! master seed and the chunk size, never on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type ScanRng = ChaCha8Rng;

/// Samples per chunk used by all scans.
pub const CHUNK_SIZE: usize = 256;

pub fn rng_for(seed: u64, stream: u64) -> ScanRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent sub-seed, e.g. for the i-th measure of a batch.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over (seed, index)
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `work(chunk_index, rng, count)` over `total` samples split into
/// chunks, in parallel, and returns the per-chunk results in chunk order.
pub fn chunked<T, F>(total: usize, seed: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ScanRng, usize) -> T + Sync,
{
    let chunks = total.div_ceil(CHUNK_SIZE);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = CHUNK_SIZE.min(total - k * CHUNK_SIZE);
            let mut rng = rng_for(seed, k as u64);
            work(k, &mut rng, count)
        })
        .collect()
}
