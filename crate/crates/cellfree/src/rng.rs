//! Deterministic stream derivation.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream keyed by
//! `(master_seed, sample_index, stream_tag, counter)`. Distinct tuples give
//! independent streams, so samples, Monte-Carlo blocks, and training epochs
//! can be generated in any order (or in parallel) with identical results.

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose tag baked into the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    /// UE positions for one network realization.
    UeDrop = 1,
    /// Channel vectors for one coherence block.
    McChannel = 2,
    /// Pilot-phase receiver noise for one coherence block.
    McNoise = 3,
    /// Mini-batch shuffling, one stream per epoch.
    Shuffle = 4,
    /// Network weight initialization.
    WeightInit = 5,
    /// Dataset splitting.
    Split = 6,
}

/// ChaCha stream for `(master, sample, tag, counter)`. The four words fill
/// the 32-byte key directly, so distinct tuples can never collide.
pub fn stream_rng(master: u64, sample: u64, tag: StreamTag, counter: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&sample.to_le_bytes());
    seed[16..24].copy_from_slice(&(tag as u64).to_le_bytes());
    seed[24..32].copy_from_slice(&counter.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// One sample of a standard circularly-symmetric complex Gaussian,
/// i.e. real and imaginary parts are N(0, 1/2) so that E{|z|^2} = 1.
#[inline]
pub fn standard_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex<f64> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}
