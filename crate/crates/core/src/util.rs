//! Small deterministic helpers: a stable non-cryptographic hash and a
//! seed mixer for deriving independent RNG streams from one root seed.

/// FNV-1a, 64-bit. Used wherever a hash must be stable across processes
/// and platforms (cell directory names, stage content digests); the std
/// `DefaultHasher` is randomly keyed per process so it cannot serve here.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// splitmix64 finalizer; a cheap bijective scrambler on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for one consumer domain ("init", "shuffle", ...)
/// from a root seed. Domains are folded in by name so adding a consumer
/// never shifts the streams of existing ones.
pub fn mix_seed(root: u64, domain: &str) -> u64 {
    splitmix64(root ^ fnv1a64(domain.as_bytes()))
}

/// Derive a sub-seed keyed by domain and an index (fold id, stage id, ...).
pub fn mix_seed_indexed(root: u64, domain: &str, index: u64) -> u64 {
    splitmix64(mix_seed(root, domain) ^ splitmix64(index))
}
