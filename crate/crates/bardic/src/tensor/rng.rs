use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Deterministic, seedable, splittable random generator.
///
/// Wraps ChaCha12, which produces the same stream on every platform for a
/// given seed. `split` derives an independent child stream from a tag, so
/// subsystems can draw without perturbing each other's sequences.
#[derive(Debug, Clone)]
pub struct DetRng(ChaCha12Rng);

impl DetRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        DetRng(ChaCha12Rng::seed_from_u64(seed))
    }

    /// Derive an independent child generator. Children with distinct tags
    /// are independent of each other and of the parent's later draws.
    pub fn split(&self, tag: u64) -> Self {
        let mut seed = [0u8; 32];
        let base = self.0.get_seed();
        seed.copy_from_slice(&base);
        // fold the tag into the seed with a splitmix-style mix
        let mut z = tag.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        for (i, b) in z.to_le_bytes().iter().enumerate() {
            seed[i] ^= b;
            seed[i + 8] ^= b.rotate_left(3);
        }
        DetRng(ChaCha12Rng::from_seed(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.gen()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }
}
