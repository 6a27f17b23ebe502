//! Seeded randomness. Every stochastic step in the crate draws from a
//! [`Pcg64`] (PCG XSL-RR 128/64) created here, so results depend only on the
//! seed and not on the platform.

use rand::SeedableRng;
pub use rand_pcg::Pcg64;

pub fn seeded(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Independent stream for a named purpose (critic init, transition sampling, ...).
pub fn substream(seed: u64, purpose: &str) -> Pcg64 {
    // FNV-1a of the tag, mixed into the seed.
    let tag = purpose
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    Pcg64::seed_from_u64(seed ^ tag.rotate_left(17))
}
