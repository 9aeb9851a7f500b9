//! Small shared helpers: deterministic seed derivation and stable statistics.

/// Derives a child seed from a base seed and a salt (splitmix64 finalizer).
///
/// Used wherever independent RNG streams must be reproducible regardless of
/// evaluation order: per-frame localization seeds, per-repeat fold shuffles,
/// per-point descriptor draws.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean and population standard deviation, summed in slice order so results
/// are bit-stable across runs.
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
