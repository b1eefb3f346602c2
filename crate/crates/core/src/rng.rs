//! Counter-based Gaussian noise.
//!
//! Every draw is a pure function of `(seed, stream, path, step, index)`, computed with
//! the Philox4x32-10 block cipher. Draws can therefore be produced in any order and
//! on any number of workers without changing a single bit of the result.

use crate::error::{Error, Result};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Largest per-step index that fits in the counter layout.
pub const MAX_INDEX: usize = u16::MAX as usize;

/// Independent noise streams sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Stream {
    /// Brownian driver increments of the market model.
    Driver = 0,
    /// Auxiliary noise consumed by exact transition samplers.
    Exact = 1,
    /// Brownian-bridge fill-in noise for grid refinement.
    Refine = 2,
    /// Free for tests and examples.
    Aux = 3,
    /// Bridge fill-in for the exact-sampler noise.
    RefineExact = 4,
}

#[inline]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let p0 = u64::from(PHILOX_M0) * u64::from(ctr[0]);
    let p1 = u64::from(PHILOX_M1) * u64::from(ctr[2]);
    [
        ((p1 >> 32) as u32) ^ ctr[1] ^ key[0],
        p1 as u32,
        ((p0 >> 32) as u32) ^ ctr[3] ^ key[1],
        p0 as u32,
    ]
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// Keyed source of standard normal draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn block(&self, stream: Stream, path: u64, step: u32, index: u32) -> [u32; 4] {
        let ctr = [
            step,
            ((stream as u32) << 16) | index,
            path as u32,
            (path >> 32) as u32,
        ];
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        philox4x32_10(ctr, key)
    }

    /// Standard normal draw keyed by `(stream, path, step, index)`.
    ///
    /// `index` must not exceed [`MAX_INDEX`]; callers validate the layout once via
    /// [`NoiseSource::check_layout`].
    #[inline]
    pub fn normal(&self, stream: Stream, path: u64, step: u32, index: u32) -> f64 {
        debug_assert!(index as usize <= MAX_INDEX);
        let b = self.block(stream, path, step, index);
        let u1 = open_unit((u64::from(b[0]) << 32) | u64::from(b[1]));
        let u2 = open_unit((u64::from(b[2]) << 32) | u64::from(b[3]));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform draw in (0, 1) keyed the same way as [`NoiseSource::normal`].
    pub fn uniform(&self, stream: Stream, path: u64, step: u32, index: u32) -> f64 {
        let b = self.block(stream, path, step, index);
        open_unit((u64::from(b[0]) << 32) | u64::from(b[1]))
    }

    /// Rejects step/index counts that would overflow the counter layout.
    pub fn check_layout(n_steps: usize, n_index: usize) -> Result<()> {
        if n_steps > u32::MAX as usize {
            return Err(Error::Numerical(format!(
                "counter space exhausted: {n_steps} steps exceed 2^32"
            )));
        }
        if n_index > MAX_INDEX + 1 {
            return Err(Error::Numerical(format!(
                "counter space exhausted: {n_index} draws per step exceed 2^16"
            )));
        }
        Ok(())
    }
}

#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 library.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0; 4], [0; 2]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn draws_are_keyed_not_sequenced() {
        let src = NoiseSource::new(7);
        let a = src.normal(Stream::Driver, 3, 10, 0);
        let _ = src.normal(Stream::Driver, 0, 0, 0);
        assert_eq!(a, src.normal(Stream::Driver, 3, 10, 0));
        assert_ne!(a, src.normal(Stream::Exact, 3, 10, 0));
        assert_ne!(a, NoiseSource::new(8).normal(Stream::Driver, 3, 10, 0));
    }

    #[test]
    fn moments_of_normals() {
        let src = NoiseSource::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|p| src.normal(Stream::Aux, p, 0, 0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn layout_limits() {
        assert!(NoiseSource::check_layout(1 << 20, 3).is_ok());
        assert!(NoiseSource::check_layout(10, MAX_INDEX + 2).is_err());
    }
}
