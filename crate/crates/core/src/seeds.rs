//! Deterministic seed derivation so every stage of a run draws from its own
//! stream while staying reproducible from the single user seed.

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent stream for (`seed`, `tag`, `counter`); same inputs, same output.
pub(crate) fn derive(seed: u64, tag: u64, counter: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag).wrapping_add(splitmix64(counter)))
}
