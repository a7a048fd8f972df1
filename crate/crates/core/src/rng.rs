//! Counter-based normal variates.
//!
//! A draw is a pure function of `(seed, stream, i, j)`: the words are folded
//! through the SplitMix64 finaliser, the resulting 128 bits become two
//! uniforms and Box-Muller turns those into two independent standard normals.
//! Nothing is carried between calls, so any thread may produce any draw.

/// Independent random streams used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    InitialState = 1,
    Brownian = 2,
    NPlayerInitial = 3,
    NPlayerBrownian = 4,
    Reference = 5,
    Probe = 6,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    // 52 random bits centred in their cell: never 0, never 1.
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Keyed generator; cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn key(&self, stream: Stream, i: u64, j: u64) -> u64 {
        let mut h = mix(self.seed);
        h = mix(h ^ (stream as u64));
        h = mix(h ^ i);
        mix(h ^ j.wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }

    /// Two uniforms on the open unit interval.
    #[inline]
    pub fn uniforms(&self, stream: Stream, i: u64, j: u64) -> (f64, f64) {
        let k = self.key(stream, i, j);
        (
            unit_open(mix(k ^ 0x5555_5555_5555_5555)),
            unit_open(mix(k ^ 0xAAAA_AAAA_AAAA_AAAA)),
        )
    }

    /// Two independent standard normals.
    #[inline]
    pub fn normals(&self, stream: Stream, i: u64, j: u64) -> (f64, f64) {
        let (u1, u2) = self.uniforms(stream, i, j);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Two independent standard normals keyed by three indices, used where
    /// draws are addressed by `(game, player, step)`.
    #[inline]
    pub fn normals3(&self, stream: Stream, i: u64, j: u64, k: u64) -> (f64, f64) {
        self.normals(stream, mix(i ^ 0x2545_F491_4F6C_DD1D).wrapping_add(j), k)
    }

    /// One standard normal.
    #[inline]
    pub fn normal(&self, stream: Stream, i: u64, j: u64) -> f64 {
        self.normals(stream, i, j).0
    }
}
