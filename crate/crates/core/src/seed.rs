//! Counter-based seed derivation.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a root seed and a path of counters.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Derives a seed from a root seed and a string label.
pub fn derive_seed_str(root: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    derive_seed(root, &[h])
}
