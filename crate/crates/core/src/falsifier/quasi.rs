//! Randomly shifted Halton points.

use rand::Rng;

const PRIMES: [u32; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293,
    307, 311,
];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Halton sequence in `[0,1)^n` with a Cranley–Patterson rotation.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
    next: u64,
}

impl Halton {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        assert!(dim <= PRIMES.len(), "Halton supports at most {} dims", PRIMES.len());
        Halton {
            shift: (0..dim).map(|_| rng.gen::<f64>()).collect(),
            // Skipping the first points avoids the strongly correlated start.
            next: 20,
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Next point, affinely mapped into `[lower, upper]`.
    pub fn next_in(&mut self, lower: &[f64], upper: &[f64]) -> Vec<f64> {
        let i = self.next;
        self.next += 1;
        self.shift
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let u = (radical_inverse(i, PRIMES[j]) + s).fract();
                lower[j] + u * (upper[j] - lower[j])
            })
            .collect()
    }
}
