//! Seed plumbing: per-replicate random streams and id-keyed fold assignment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// The random stream for replicate `index` under `seed`.
///
/// Streams for distinct indices are independent ChaCha streams of the same
/// key, so replicate `r` sees the same numbers whichever thread runs it.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed for a named sub-computation.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Assigns each id to one of `folds` folds.
///
/// Ids are ordered by a seeded hash and dealt round-robin, which keeps fold
/// sizes within one of each other and makes the assignment independent of
/// record order.
pub fn fold_assignment<S: AsRef<str>>(ids: &[S], folds: usize, seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(u64, &str, usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let id = id.as_ref();
            (splitmix64(fnv1a(id.as_bytes()) ^ seed), id, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut out = vec![0; ids.len()];
    for (rank, (_, _, i)) in keyed.into_iter().enumerate() {
        out[i] = rank % folds;
    }
    out
}
