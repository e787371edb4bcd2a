//! Two-dimensional Sobol sequence (Gray-code order, unscrambled).
//!
//! Dimension one is the base-2 van der Corput sequence; dimension two uses
//! the primitive polynomial `x + 1` with initial direction number `m1 = 1`.
//! The all-zero point is skipped, so the sequence starts at (0.5, 0.5).

const BITS: usize = 32;

#[derive(Debug, Clone)]
pub struct Sobol2 {
    directions: [[u32; BITS]; 2],
    state: [u32; 2],
    index: u64,
}

impl Default for Sobol2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Sobol2 {
    pub fn new() -> Self {
        let mut directions = [[0u32; BITS]; 2];
        let mut m = 1u32;
        for k in 0..BITS {
            directions[0][k] = 1 << (BITS - 1 - k);
            // m_k = 2 m_{k-1} xor m_{k-1} for the polynomial x + 1.
            if k > 0 {
                m = (m << 1) ^ m;
            }
            directions[1][k] = m << (BITS - 1 - k);
        }
        Self {
            directions,
            state: [0, 0],
            index: 0,
        }
    }

    /// Next point in `[0, 1)^2`.
    pub fn next_point(&mut self) -> [f64; 2] {
        let bit = self.index.trailing_ones() as usize;
        assert!(bit < BITS, "Sobol sequence exhausted");
        for d in 0..2 {
            self.state[d] ^= self.directions[d][bit];
        }
        self.index += 1;
        let scale = 1.0 / (1u64 << BITS) as f64;
        [self.state[0] as f64 * scale, self.state[1] as f64 * scale]
    }

    /// First `n` points.
    pub fn points(n: usize) -> Vec<[f64; 2]> {
        let mut s = Self::new();
        (0..n).map(|_| s.next_point()).collect()
    }
}
