//! Deterministic seed derivation and counter-based Gaussian streams.
//!
//! All randomness in the toolkit flows from explicit seeds through these
//! helpers. Per-pixel noise uses a counter-based generator keyed on
//! `(seed, pixel index)` so any partitioning of pixels across workers
//! produces identical output.

/// Seed domains keep training and evaluation RNG streams disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedDomain {
    Generate = 0x11,
    Train = 0x22,
    Eval = 0x33,
    Calibrate = 0x44,
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an arbitrary chain of u64 components into one derived seed.
pub fn derive_seed(domain: SeedDomain, base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ (domain as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    for &p in parts {
        s = splitmix64(s ^ p.wrapping_mul(0xa24b_aed4_963e_e407));
    }
    s
}

/// Standard-normal draw for stream `seed` at counter position `index`.
///
/// Box-Muller on two splitmix outputs; stateless, so pixels can be
/// evaluated in any order or in parallel.
#[inline]
pub fn counter_normal(seed: u64, index: u64) -> f64 {
    let k = splitmix64(seed ^ splitmix64(index.wrapping_mul(0x9e6c_63d0_876a_68f5)));
    let a = splitmix64(k);
    let b = splitmix64(a);
    // map to (0,1]; u1 must avoid 0 for the log
    let u1 = ((a >> 11) as f64 + 1.0) / (9_007_199_254_740_992.0 + 1.0);
    let u2 = (b >> 11) as f64 / 9_007_199_254_740_992.0;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
