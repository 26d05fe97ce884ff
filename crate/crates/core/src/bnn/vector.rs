use crate::bits::BitString;
use crate::error::{Error, Result};

/// A packed `{-1, +1}` vector. Bit `1` encodes `+1`, bit `0` encodes `-1`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BipolarVec(BitString);

impl BipolarVec {
    /// All entries `-1`.
    pub fn negative(len: usize) -> Self {
        BipolarVec(BitString::zeros(len))
    }

    /// All entries `+1`.
    pub fn positive(len: usize) -> Self {
        BipolarVec(BitString::ones(len))
    }

    pub fn from_bits(bits: BitString) -> Self {
        BipolarVec(bits)
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        let mut bits = BitString::zeros(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => bits.set(i, true),
                -1 => {}
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "entry {i} is {other}, expected +1 or -1"
                    )))
                }
            }
        }
        Ok(BipolarVec(bits))
    }

    /// Maps each boolean to `+1` (true) or `-1` (false).
    pub fn from_bools<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BipolarVec(BitString::from_bools(iter))
    }

    pub fn to_signs(&self) -> Vec<i8> {
        self.0.iter().map(|b| if b { 1 } else { -1 }).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        if self.0.get(i) {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: i8) {
        self.0.set(i, value > 0);
    }

    /// Negates entry `i`.
    #[inline]
    pub fn negate(&mut self, i: usize) {
        self.0.flip(i);
    }

    pub fn bits(&self) -> &BitString {
        &self.0
    }

    pub fn into_bits(self) -> BitString {
        self.0
    }

    pub fn words(&self) -> &[u64] {
        self.0.words()
    }

    /// Appends one `+1` entry (used for odd fan-in padding).
    pub fn with_bias_entry(&self) -> BipolarVec {
        let mut bits = self.0.clone();
        bits.push(true);
        BipolarVec(bits)
    }
}

impl std::fmt::Debug for BipolarVec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BipolarVec[{}](", self.len())?;
        for b in self.0.iter() {
            f.write_str(if b { "+" } else { "-" })?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_bipolar_entries() {
        assert!(BipolarVec::from_signs(&[1, 0, -1]).is_err());
    }

    #[test]
    fn bias_entry_is_positive() {
        let v = BipolarVec::negative(63).with_bias_entry();
        assert_eq!(v.len(), 64);
        assert_eq!(v.get(63), 1);
        assert_eq!(v.get(0), -1);
    }

    proptest! {
        #[test]
        fn sign_round_trip(signs in proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], 1..200)) {
            let v = BipolarVec::from_signs(&signs).unwrap();
            prop_assert_eq!(v.to_signs(), signs.clone());
            let ones = signs.iter().filter(|&&s| s == 1).count();
            prop_assert_eq!(v.bits().count_ones(), ones);
        }
    }
}
