//! Counter-based random streams.
//!
//! Every random number in the toolkit is a pure function of
//! `(base_seed, path, lane, index)`, so results never depend on scheduling
//! or thread count. The construction, bit for bit:
//!
//! * Block cipher: Philox4x32 with 10 rounds (Salmon et al., Random123).
//!   Multipliers `0xD2511F53`, `0xCD9E8D57`; Weyl key increments
//!   `0x9E3779B9`, `0xBB67AE85`.
//! * Key: `(k0, k1) = (base_seed as u32, (base_seed >> 32) as u32)`.
//! * Counter: `(c0, c1, c2, c3) = (block as u32, (block >> 32) as u32, path, lane)`.
//! * The four output words `x0..x3` form two 64-bit integers
//!   `u = x1 << 32 | x0` and `w = x3 << 32 | x2`.
//! * A 64-bit integer maps to an open-interval uniform by
//!   `((bits >> 11) as f64 + 0.5) * 2^-53`.
//! * Normal number `n` of a stream lives in block `n / 2`. With uniforms
//!   `(u1, u2)` from that block, Box–Muller gives
//!   `r = sqrt(-2 ln u1)`, `z_even = r cos(2π u2)`, `z_odd = r sin(2π u2)`.
//! * Uniform number `n` of a stream lives in block `n / 2`, taking `u` for
//!   even `n` and `w` for odd `n`.
//!
//! Lanes separate independent uses of the same path (main increments,
//! fine sub-steps, bridge uniforms, ...). See [`Lane`].

use std::f64::consts::TAU;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Philox4x32-10 block function.
#[inline]
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let p0 = (M0 as u64) * (c[0] as u64);
        let p1 = (M1 as u64) * (c[2] as u64);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
#[inline]
pub fn bits_to_open01(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Stream selector inside one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Lane {
    /// Brownian increments at the simulation step.
    Main = 0,
    /// Increments on a refined grid (continuous references).
    Fine = 1,
    /// Uniforms for Brownian-bridge crossing tests.
    Bridge = 2,
    /// Inner points of a Brownian bridge between grid values.
    Interp = 3,
    /// Inverse-CDF and other auxiliary uniforms.
    Aux = 4,
    /// Minibatch selection in the SGD experiment.
    Batch = 5,
    /// Random projection directions.
    Projection = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StreamId {
    pub base_seed: u64,
    pub path: u32,
    pub lane: u32,
}

/// Random-access stream for one `(seed, path, lane)` triple. Caches the
/// last block so sequential reads cost one cipher call per two numbers.
#[derive(Debug, Clone)]
pub struct Stream {
    key: [u32; 2],
    path: u32,
    lane: u32,
    cached_block: u64,
    cached: [u32; 4],
    normal_block: u64,
    normals: [f64; 2],
}

impl Stream {
    pub fn new(base_seed: u64, path: u32, lane: Lane) -> Self {
        Self::with_lane(base_seed, path, lane as u32)
    }

    pub fn with_lane(base_seed: u64, path: u32, lane: u32) -> Self {
        let key = [base_seed as u32, (base_seed >> 32) as u32];
        let mut s = Stream {
            key,
            path,
            lane,
            cached_block: 0,
            cached: [0; 4],
            normal_block: u64::MAX,
            normals: [0.0; 2],
        };
        s.cached = s.raw_block(0);
        s
    }

    pub fn id(&self) -> StreamId {
        StreamId {
            base_seed: (self.key[0] as u64) | ((self.key[1] as u64) << 32),
            path: self.path,
            lane: self.lane,
        }
    }

    #[inline]
    fn raw_block(&self, block: u64) -> [u32; 4] {
        philox4x32([block as u32, (block >> 32) as u32, self.path, self.lane], self.key)
    }

    #[inline]
    fn block(&mut self, block: u64) -> [u32; 4] {
        if block != self.cached_block {
            self.cached = self.raw_block(block);
            self.cached_block = block;
        }
        self.cached
    }

    /// Two 64-bit integers from block `block`.
    #[inline]
    pub fn u64_pair(&mut self, block: u64) -> (u64, u64) {
        let x = self.block(block);
        (
            (x[0] as u64) | ((x[1] as u64) << 32),
            (x[2] as u64) | ((x[3] as u64) << 32),
        )
    }

    /// Raw 64-bit integer number `n`.
    #[inline]
    pub fn u64_at(&mut self, n: u64) -> u64 {
        let (u, w) = self.u64_pair(n / 2);
        if n % 2 == 0 {
            u
        } else {
            w
        }
    }

    /// Uniform number `n` of this stream, in (0, 1).
    #[inline]
    pub fn uniform(&mut self, n: u64) -> f64 {
        bits_to_open01(self.u64_at(n))
    }

    /// Standard normal number `n` of this stream.
    #[inline]
    pub fn normal(&mut self, n: u64) -> f64 {
        let block = n / 2;
        if block != self.normal_block {
            let (u, w) = self.u64_pair(block);
            let u1 = bits_to_open01(u);
            let u2 = bits_to_open01(w);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (TAU * u2).sin_cos();
            self.normals = [r * c, r * s];
            self.normal_block = block;
        }
        self.normals[(n % 2) as usize]
    }

    /// Unbiased integer in `[0, bound)` drawn from the sequence starting at
    /// `*cursor` (Lemire's multiply-and-reject). Advances the cursor.
    pub fn below(&mut self, bound: u64, cursor: &mut u64) -> u64 {
        debug_assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.u64_at(*cursor);
            *cursor += 1;
            let m = (x as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with Random123.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn random_access_matches_sequential() {
        let mut a = Stream::new(7, 3, Lane::Main);
        let seq: Vec<f64> = (0..20).map(|n| a.normal(n)).collect();
        let mut b = Stream::new(7, 3, Lane::Main);
        for n in (0..20).rev() {
            assert_eq!(b.normal(n).to_bits(), seq[n as usize].to_bits());
        }
    }

    #[test]
    fn lanes_and_paths_differ() {
        let mut a = Stream::new(1, 0, Lane::Main);
        let mut b = Stream::new(1, 0, Lane::Fine);
        let mut c = Stream::new(1, 1, Lane::Main);
        assert_ne!(a.u64_at(0), b.u64_at(0));
        assert_ne!(a.u64_at(0), c.u64_at(0));
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::new(99, 0, Lane::Main);
        let n = 200_000u64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let z = s.normal(i);
            m1 += z;
            m2 += z * z;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 0.01, "mean {m1}");
        assert!((m2 - 1.0).abs() < 0.015, "var {m2}");
    }

    #[test]
    fn below_is_in_range() {
        let mut s = Stream::new(5, 0, Lane::Batch);
        let mut cursor = 0;
        let mut hist = [0usize; 7];
        for _ in 0..7000 {
            hist[s.below(7, &mut cursor) as usize] += 1;
        }
        assert!(hist.iter().all(|&h| h > 850 && h < 1150), "{hist:?}");
    }
}
