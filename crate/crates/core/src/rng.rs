//! Counter-based random numbers (Philox4x32-10).
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so per-pixel noise
//! can be generated in any order or on any number of threads with identical
//! results. Sequential consumers use [`Cursor`], which walks the counter.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    // 53 random bits, offset by half an ulp so the result is in (0, 1)
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Keyed counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    stream: u64,
    key: [u32; 2],
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let k = splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self {
            seed,
            stream,
            key: [k as u32, (k >> 32) as u32],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A generator with the same seed and a stream derived from this one and `id`.
    pub fn substream(&self, id: u64) -> Rng {
        Rng::new(self.seed, splitmix64(self.stream ^ splitmix64(id)))
    }

    /// Raw 128-bit block at counter `(a, b)`.
    pub fn block(&self, a: u64, b: u64) -> [u32; 4] {
        philox4x32_10([a as u32, (a >> 32) as u32, b as u32, (b >> 32) as u32], self.key)
    }

    /// Two independent uniforms in the open interval (0, 1).
    pub fn uniforms(&self, a: u64, b: u64) -> [f64; 2] {
        let r = self.block(a, b);
        let u0 = (r[0] as u64) << 32 | r[1] as u64;
        let u1 = (r[2] as u64) << 32 | r[3] as u64;
        [to_unit(u0), to_unit(u1)]
    }

    /// Two independent standard normals (Box-Muller).
    pub fn normals(&self, a: u64, b: u64) -> [f64; 2] {
        let [u0, u1] = self.uniforms(a, b);
        let r = (-2.0 * u0.ln()).sqrt();
        let phi = std::f64::consts::TAU * u1;
        [r * phi.cos(), r * phi.sin()]
    }

    pub fn normal(&self, a: u64, b: u64) -> f64 {
        self.normals(a, b)[0]
    }

    pub fn uniform(&self, a: u64, b: u64) -> f64 {
        self.uniforms(a, b)[0]
    }

    pub fn cursor(&self) -> Cursor {
        Cursor {
            rng: *self,
            counter: 0,
        }
    }
}

/// Sequential view over an [`Rng`] stream; each call consumes one counter value.
#[derive(Debug, Clone)]
pub struct Cursor {
    rng: Rng,
    counter: u64,
}

impl Cursor {
    fn next_block(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        c
    }

    pub fn next_u64(&mut self) -> u64 {
        let i = self.next_block();
        let r = self.rng.block(i, 0);
        (r[0] as u64) << 32 | r[1] as u64
    }

    /// Uniform in (0, 1).
    pub fn uniform(&mut self) -> f64 {
        let c = self.next_block();
        self.rng.uniform(c, 0)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let c = self.next_block();
        self.rng.normal(c, 0)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}
