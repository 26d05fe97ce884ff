//! Packed bit strings.
//!
//! Bits live in 64-bit words, least significant bit first: logical bit `i`
//! is bit `i % 64` of word `i / 64`. Bits past `len` are always zero, so
//! word-wise XOR and popcount never need masking.

use std::fmt;

pub(crate) const WORD_BITS: usize = 64;

#[inline]
pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut bits = BitString {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        bits.clear_padding();
        bits
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut bits = BitString::default();
        for b in iter {
            bits.push(b);
        }
        bits
    }

    /// Builds a bit string from raw words; bits past `len` are cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.resize(words_for(len), 0);
        let mut bits = BitString { len, words };
        bits.clear_padding();
        bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    pub fn push(&mut self, value: bool) {
        if self.len.is_multiple_of(WORD_BITS) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, value);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming(&self, other: &BitString) -> usize {
        assert_eq!(self.len, other.len, "hamming distance needs equal lengths");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// First `len` bits as a new string.
    pub fn prefix(&self, len: usize) -> BitString {
        assert!(len <= self.len);
        BitString::from_words(len, self.words[..words_for(len)].to_vec())
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub(crate) fn clear_padding(&mut self) {
        let tail = self.len % WORD_BITS;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString[{}](", self.len)?;
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_stays_clear() {
        let ones = BitString::ones(70);
        assert_eq!(ones.count_ones(), 70);
        assert_eq!(ones.words()[1], (1 << 6) - 1);

        let raw = BitString::from_words(3, vec![u64::MAX]);
        assert_eq!(raw.words(), &[0b111]);
    }

    #[test]
    fn push_and_get() {
        let pattern: Vec<bool> = (0..130).map(|i| i % 3 == 0).collect();
        let bits = BitString::from_bools(pattern.iter().copied());
        assert_eq!(bits.len(), 130);
        assert_eq!(bits.iter().collect::<Vec<_>>(), pattern);
        assert_eq!(bits.prefix(65).iter().collect::<Vec<_>>(), pattern[..65]);
    }

    #[test]
    fn flip_and_hamming() {
        let mut a = BitString::zeros(100);
        let b = a.clone();
        a.flip(3);
        a.flip(99);
        assert_eq!(a.hamming(&b), 2);
        a.set(3, false);
        assert_eq!(a.hamming(&b), 1);
    }
}
