//! Compressor tree loop and carry-select final adder.
//!
//! Each cycle the tree folds the `J` lane products and the two carry-save
//! accumulator words down to two words with layers of 3:2 full-adder
//! compressors. All words live in an `acc_width`-bit two's-complement register;
//! an exact shadow of the running sum detects overflow and checks the
//! carry-save invariant.

use crate::error::{check_signed_width, Error, Result};

/// 3:2 layers needed to reduce `n` addends to two.
pub fn wallace_depth(mut n: usize) -> u32 {
    let mut depth = 0;
    while n > 2 {
        n = 2 * (n / 3) + n % 3;
        depth += 1;
    }
    depth
}

fn mask(width: u32) -> u64 {
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Interprets the low `width` bits of `word` as a signed value.
fn sign_extend(word: u64, width: u32) -> i64 {
    let shift = 64 - width;
    ((word << shift) as i64) >> shift
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressorTreeState {
    pub sum_word: i64,
    pub carry_word: i64,
    /// Depth of the last reduction.
    pub stage_count: u32,
    width: u32,
    shadow: i128,
}

impl CompressorTreeState {
    pub fn new(acc_width: u32) -> Self {
        assert!((2..=64).contains(&acc_width));
        Self {
            sum_word: 0,
            carry_word: 0,
            stage_count: 0,
            width: acc_width,
            shadow: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Exact running sum tracked alongside the carry-save pair.
    pub fn exact_sum(&self) -> i128 {
        self.shadow
    }

    /// `sum_word + carry_word`, read modulo the register width, equals the
    /// exact running sum.
    pub fn invariant_holds(&self) -> bool {
        let m = mask(self.width);
        let wrapped = sign_extend(
            (self.sum_word as u64).wrapping_add(self.carry_word as u64) & m,
            self.width,
        );
        wrapped as i128 == self.shadow
    }

    /// Folds `products` into the state through a 3:2 compressor tree.
    pub fn reduce(&mut self, products: &[i64]) -> Result<()> {
        let m = mask(self.width);
        let mut level: Vec<u64> = Vec::with_capacity(products.len() + 2);
        level.extend(products.iter().map(|&p| p as u64 & m));
        level.push(self.sum_word as u64 & m);
        level.push(self.carry_word as u64 & m);

        let exact: i128 = products.iter().map(|&p| p as i128).sum::<i128>() + self.shadow;
        check_signed_width(exact, self.width)?;

        let mut depth = 0;
        let mut next = Vec::with_capacity(level.len());
        while level.len() > 2 {
            next.clear();
            let mut chunks = level.chunks_exact(3);
            for c in &mut chunks {
                let (a, b, d) = (c[0], c[1], c[2]);
                next.push(a ^ b ^ d);
                next.push((((a & b) | (a & d) | (b & d)) << 1) & m);
            }
            next.extend_from_slice(chunks.remainder());
            std::mem::swap(&mut level, &mut next);
            depth += 1;
        }
        self.sum_word = sign_extend(level[0], self.width);
        self.carry_word = sign_extend(level.get(1).copied().unwrap_or(0), self.width);
        self.stage_count = depth;
        self.shadow = exact;
        debug_assert!(self.invariant_holds());
        Ok(())
    }

    /// Carry-select addition of the carry-save pair.
    pub fn final_add(&self) -> Result<i64> {
        let v = carry_select_add(self.sum_word as u64, self.carry_word as u64, self.width);
        if v as i128 != self.shadow {
            return Err(Error::AccumulatorOverflow {
                value: self.shadow,
                width: self.width,
            });
        }
        Ok(v)
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.width);
    }
}

/// Functional form of one compressor-loop step.
pub fn compressor_reduce(
    products: &[i64],
    mut state: CompressorTreeState,
) -> Result<CompressorTreeState> {
    state.reduce(products)?;
    Ok(state)
}

const SELECT_BLOCK: u32 = 8;

/// Adds two `width`-bit words with 8-bit carry-select blocks: each block
/// precomputes its sum for carry-in 0 and 1 and the incoming carry picks one.
pub fn carry_select_add(a: u64, b: u64, width: u32) -> i64 {
    let mut result = 0u64;
    let mut carry = 0u64;
    let mut lo = 0;
    while lo < width {
        let w = SELECT_BLOCK.min(width - lo);
        let bm = mask(w);
        let (ab, bb) = ((a >> lo) & bm, (b >> lo) & bm);
        let s0 = ab + bb;
        let s1 = ab + bb + 1;
        let s = if carry == 0 { s0 } else { s1 };
        result |= (s & bm) << lo;
        carry = s >> w;
        lo += w;
    }
    sign_extend(result, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_sequence() {
        // inverse of the Wallace sequence 2,3,4,6,9,13,19,28,42,63,94,141,211,316
        let wallace = [2, 3, 4, 6, 9, 13, 19, 28, 42, 63, 94, 141, 211, 316];
        for (d, &n) in wallace.iter().enumerate() {
            assert_eq!(wallace_depth(n), d as u32, "n = {n}");
        }
        assert_eq!(wallace_depth(258), 13);
    }

    #[test]
    fn zero_inputs() {
        let s = compressor_reduce(&[0, 0, 0], CompressorTreeState::new(32)).unwrap();
        assert_eq!((s.sum_word, s.carry_word), (0, 0));
        assert_eq!(s.final_add().unwrap(), 0);
    }

    #[test]
    fn three_ones() {
        let s = compressor_reduce(&[1, 1, 1], CompressorTreeState::new(32)).unwrap();
        assert_eq!(s.sum_word + s.carry_word, 3);
        assert_eq!(s.final_add().unwrap(), 3);
        assert_eq!(s.stage_count, wallace_depth(5));
    }

    #[test]
    fn accumulate_two_cycles() {
        let mut s = CompressorTreeState::new(32);
        s.reduce(&[5]).unwrap();
        s.reduce(&[10]).unwrap();
        assert_eq!(s.final_add().unwrap(), 15);
    }

    #[test]
    fn j256_stage_count() {
        let mut s = CompressorTreeState::new(32);
        s.reduce(&vec![1; 256]).unwrap();
        assert_eq!(s.stage_count, 13);
        assert_eq!(s.final_add().unwrap(), 256);
    }

    #[test]
    fn random_streams_match_plain_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let xs: Vec<i64> = (0..512).map(|_| rng.random_range(-1000..=1000)).collect();
            let mut s = CompressorTreeState::new(32);
            for chunk in xs.chunks(rng.random_range(1..=300)) {
                s.reduce(chunk).unwrap();
                assert!(s.invariant_holds());
            }
            assert_eq!(s.final_add().unwrap(), xs.iter().sum::<i64>());
        }
    }

    #[test]
    fn overflow_is_detected() {
        let mut s = CompressorTreeState::new(8);
        s.reduce(&[100]).unwrap();
        assert!(matches!(
            s.reduce(&[100]),
            Err(Error::AccumulatorOverflow {
                value: 200,
                width: 8
            })
        ));
    }

    #[test]
    fn carry_select_matches_wrapping_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for width in [8u32, 13, 32, 64] {
            for _ in 0..500 {
                let a: u64 = rng.random::<u64>() & mask(width);
                let b: u64 = rng.random::<u64>() & mask(width);
                let expect = sign_extend(a.wrapping_add(b) & mask(width), width);
                assert_eq!(carry_select_add(a, b, width), expect);
            }
        }
    }
}
