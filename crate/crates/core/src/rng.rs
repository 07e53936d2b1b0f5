//! Deterministic random streams.
//!
//! Every unit of Monte Carlo work (a shot, a bootstrap resample, a fit
//! restart) draws from its own ChaCha8 stream derived from the master seed,
//! a domain tag and an index. Results therefore do not depend on how the
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ShotRng = ChaCha8Rng;

/// Domain tags separating independent uses of one master seed.
pub mod domain {
    pub const SHOTS: u64 = 0x5348_4f54;
    pub const BOOTSTRAP_R: u64 = 0x4253_5452;
    pub const BOOTSTRAP_V: u64 = 0x4253_5456;
    pub const FIT: u64 = 0x4649_5421;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for work item `index` of `(seed, domain, group)`.
///
/// `group` typically identifies a sweep point; `index` the shot within it.
pub fn stream(seed: u64, domain: u64, group: u64, index: u64) -> ShotRng {
    let key = splitmix64(seed ^ splitmix64(domain ^ splitmix64(group)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Map `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the index.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
