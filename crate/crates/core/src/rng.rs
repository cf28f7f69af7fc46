//! Seeded random streams.
//!
//! Every experiment derives its randomness from a 64-bit master seed. Work
//! units (grid cells, ensemble sizes, questions) get independent substreams by
//! selecting a ChaCha stream id computed from a path of counters, so results do
//! not depend on the order or thread in which units execute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random stream used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Smallest gap from 0 and 1 for uniforms fed to `-ln(-ln u)`.
const UNIT_STEP: f64 = f64::EPSILON / 2.0;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Master stream for `seed`.
pub fn master(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent substream of `seed` addressed by `path`.
pub fn substream(seed: u64, path: &[u64]) -> SimRng {
    let stream = path.iter().fold(0x243F_6A88_85A3_08D3_u64, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    });
    let mut rng = master(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>().clamp(UNIT_STEP, 1.0 - UNIT_STEP)
}

/// Gumbel(0, 1) by inverse CDF.
#[inline]
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -libm::log(-libm::log(open_unit(rng)))
}
