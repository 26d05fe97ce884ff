//! Keyed, self-inverse transforms on weights, thresholds, inputs and outputs.
//!
//! A [`LayerKey`] carries up to four bit strings: row inversion `D_R`, row
//! swapping `P_R`, column inversion `D_C` and column swapping `P_C`. With the
//! absent ones read as identity, a layer is protected as
//!
//! ```text
//! W* = P_R D_R W P_C D_C        (rows: invert then swap; columns: swap then invert)
//! B* = D_C (P_C B) + 2 R_C      (R_C = column-inversion bits, post-swap order)
//! x* = P_R D_R x                (applied at run time, before the layer)
//! y  = P_C D_C y*               (applied at run time, after the sign)
//! ```
//!
//! Row transforms cancel inside `(W*)ᵀ x*` because `PᵀP = I` and `D² = I`.
//! Column transforms survive the sign through the identity
//! `(-1)^r · sign((-1)^r · s - 2r) = sign(s)` for even `s`.
//!
//! Index convention: `P` maps index `i` to its partner `π(i)` and
//! `(P v)_i = v_{π(i)}`; for column transforms `(W P)_{:,k} = W_{:,π(k)}`.
//! Since `π` is an involution, `P = Pᵀ = P⁻¹` and the convention is the
//! same whichever side `P` multiplies from.

use crate::bits::BitString;
use crate::bnn::{BinWeightMatrix, BipolarVec, ThresholdVec};
use crate::error::{check_len, Error, Result};

/// Spreads the low 32 bits of `v` to the even bit positions.
fn spread_even(v: u64) -> u64 {
    let mut x = v & 0xffff_ffff;
    x = (x | x << 16) & 0x0000_ffff_0000_ffff;
    x = (x | x << 8) & 0x00ff_00ff_00ff_00ff;
    x = (x | x << 4) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x << 2) & 0x3333_3333_3333_3333;
    (x | x << 1) & 0x5555_5555_5555_5555
}

/// Swaps bits `2i` and `2i + 1` of `x` wherever bit `i` of `swap` is set.
fn swap_pairs(x: &BipolarVec, swap: &BitString) -> BipolarVec {
    let sw = swap.words();
    let words = x
        .words()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let half = sw.get(i / 2).map_or(0, |&s| s >> (32 * (i % 2)));
            let t = (w ^ (w >> 1)) & spread_even(half);
            w ^ (t | t << 1)
        })
        .collect();
    BipolarVec::from_bits(BitString::from_words(x.len(), words))
}

/// Negates the entries of `x` where `signs` is set (bit 1 encodes `+1`).
fn negate_where(x: &BipolarVec, signs: &BitString) -> BipolarVec {
    let words = x.words().iter().zip(signs.words()).map(|(a, b)| a ^ b).collect();
    BipolarVec::from_bits(BitString::from_words(x.len(), words))
}

/// Pairwise swap permutation: bit `i` set swaps indices `2i` and `2i + 1`.
/// For odd `dim` the last index has no partner and stays fixed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSpec {
    dim: usize,
    swap_bits: BitString,
}

impl PermutationSpec {
    pub fn new(dim: usize, swap_bits: BitString) -> Result<Self> {
        check_len("swap key length", dim / 2, swap_bits.len())?;
        Ok(PermutationSpec { dim, swap_bits })
    }

    pub fn identity(dim: usize) -> Self {
        PermutationSpec {
            dim,
            swap_bits: BitString::zeros(dim / 2),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn swap_bits(&self) -> &BitString {
        &self.swap_bits
    }

    /// `π(i)`.
    #[inline]
    pub fn partner(&self, i: usize) -> usize {
        let pair = i / 2;
        if pair < self.swap_bits.len() && self.swap_bits.get(pair) {
            i ^ 1
        } else {
            i
        }
    }

    fn swapped_pairs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.swap_bits.len()).filter(|&p| self.swap_bits.get(p))
    }

    pub fn apply_vec(&self, x: &BipolarVec) -> Result<BipolarVec> {
        check_len("permutation input", self.dim, x.len())?;
        Ok(swap_pairs(x, &self.swap_bits))
    }

    pub fn apply_ints(&self, v: &[i32]) -> Result<Vec<i32>> {
        check_len("permutation input", self.dim, v.len())?;
        let mut out = v.to_vec();
        for p in self.swapped_pairs() {
            out.swap(2 * p, 2 * p + 1);
        }
        Ok(out)
    }

    /// `P W`.
    pub fn apply_rows(&self, w: &mut BinWeightMatrix) -> Result<()> {
        check_len("row permutation vs weight rows", self.dim, w.rows())?;
        for p in self.swapped_pairs() {
            w.swap_rows(2 * p, 2 * p + 1);
        }
        Ok(())
    }

    /// `W P`.
    pub fn apply_cols(&self, w: &mut BinWeightMatrix) -> Result<()> {
        check_len("column permutation vs weight columns", self.dim, w.cols())?;
        for p in self.swapped_pairs() {
            w.swap_columns(2 * p, 2 * p + 1);
        }
        Ok(())
    }

    /// Dense 0/1 matrix with `P[i][π(i)] = 1`.
    pub fn to_matrix(&self) -> Vec<Vec<i8>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| (j == self.partner(i)) as i8).collect())
            .collect()
    }
}

/// Diagonal `±1` matrix: entry `i` is `(-1)^{bit_i}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagonalSpec {
    sign_bits: BitString,
}

impl DiagonalSpec {
    pub fn new(sign_bits: BitString) -> Self {
        DiagonalSpec { sign_bits }
    }

    pub fn identity(dim: usize) -> Self {
        DiagonalSpec {
            sign_bits: BitString::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.sign_bits.len()
    }

    pub fn sign_bits(&self) -> &BitString {
        &self.sign_bits
    }

    #[inline]
    pub fn sign(&self, i: usize) -> i8 {
        if self.sign_bits.get(i) {
            -1
        } else {
            1
        }
    }

    pub fn apply_vec(&self, x: &BipolarVec) -> Result<BipolarVec> {
        check_len("diagonal input", self.dim(), x.len())?;
        Ok(negate_where(x, &self.sign_bits))
    }

    /// `D W`.
    pub fn apply_rows(&self, w: &mut BinWeightMatrix) -> Result<()> {
        check_len("row inversion vs weight rows", self.dim(), w.rows())?;
        for j in (0..self.dim()).filter(|&j| self.sign_bits.get(j)) {
            w.negate_row(j);
        }
        Ok(())
    }

    /// `W D`.
    pub fn apply_cols(&self, w: &mut BinWeightMatrix) -> Result<()> {
        check_len("column inversion vs weight columns", self.dim(), w.cols())?;
        for k in (0..self.dim()).filter(|&k| self.sign_bits.get(k)) {
            w.negate_column(k);
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Vec<Vec<i8>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| if i == j { self.sign(i) } else { 0 }).collect())
            .collect()
    }
}

/// Column inversion for one column: `W* = (-1)^r W`, `B* = (1 - 2r) B + 2r`.
pub fn invert_column(column: &BipolarVec, threshold: i32, r: bool) -> Result<(BipolarVec, i32)> {
    if threshold % 2 != 0 {
        return Err(Error::OddThreshold {
            column: 0,
            value: threshold as i64,
        });
    }
    if !r {
        return Ok((column.clone(), threshold));
    }
    let flipped = DiagonalSpec::new(BitString::ones(column.len())).apply_vec(column)?;
    Ok((flipped, 2 - threshold))
}

/// `y = (-1)^r · y*` for one output bit.
pub fn recover_column_output(protected_bit: i8, r: bool) -> i8 {
    if r {
        -protected_bit
    } else {
        protected_bit
    }
}

/// Key material for one layer; absent parts are identity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerKey {
    pub row_inv: Option<BitString>,
    pub row_swap: Option<BitString>,
    pub col_inv: Option<BitString>,
    pub col_swap: Option<BitString>,
}

impl LayerKey {
    pub fn identity() -> Self {
        LayerKey::default()
    }

    pub fn is_identity(&self) -> bool {
        self.parts().iter().all(|p| p.is_none())
    }

    fn parts(&self) -> [&Option<BitString>; 4] {
        [&self.row_inv, &self.row_swap, &self.col_inv, &self.col_swap]
    }

    /// In-use key bits across all parts.
    pub fn bit_len(&self) -> usize {
        self.parts().iter().filter_map(|p| p.as_ref()).map(BitString::len).sum()
    }

    /// Flips in-use bit `i`, counting through row-inv, row-swap, col-inv,
    /// col-swap in that order.
    pub fn flip_bit(&mut self, mut i: usize) {
        for part in [
            &mut self.row_inv,
            &mut self.row_swap,
            &mut self.col_inv,
            &mut self.col_swap,
        ]
        .into_iter()
        .flatten()
        {
            if i < part.len() {
                part.flip(i);
                return;
            }
            i -= part.len();
        }
        panic!("key bit index out of range");
    }

    fn row_diag(&self, rows: usize) -> Result<Option<DiagonalSpec>> {
        self.row_inv
            .as_ref()
            .map(|b| {
                check_len("row inversion key", rows, b.len())?;
                Ok(DiagonalSpec::new(b.clone()))
            })
            .transpose()
    }

    fn row_perm(&self, rows: usize) -> Result<Option<PermutationSpec>> {
        self.row_swap
            .as_ref()
            .map(|b| PermutationSpec::new(rows, b.clone()))
            .transpose()
    }

    fn col_diag(&self, cols: usize) -> Result<Option<DiagonalSpec>> {
        self.col_inv
            .as_ref()
            .map(|b| {
                check_len("column inversion key", cols, b.len())?;
                Ok(DiagonalSpec::new(b.clone()))
            })
            .transpose()
    }

    fn col_perm(&self, cols: usize) -> Result<Option<PermutationSpec>> {
        self.col_swap
            .as_ref()
            .map(|b| PermutationSpec::new(cols, b.clone()))
            .transpose()
    }

    /// `(W, B) -> (W*, B*)`.
    pub fn protect(&self, w: &BinWeightMatrix, b: &ThresholdVec) -> Result<(BinWeightMatrix, ThresholdVec)> {
        check_len("thresholds vs weight columns", w.cols(), b.len())?;
        let (rows, cols) = (w.rows(), w.cols());
        let mut w = w.clone();
        if let Some(d) = self.row_diag(rows)? {
            d.apply_rows(&mut w)?;
        }
        if let Some(p) = self.row_perm(rows)? {
            p.apply_rows(&mut w)?;
        }
        let mut thresholds = b.values().to_vec();
        if let Some(p) = self.col_perm(cols)? {
            p.apply_cols(&mut w)?;
            thresholds = p.apply_ints(&thresholds)?;
        }
        if let Some(d) = self.col_diag(cols)? {
            d.apply_cols(&mut w)?;
            for (k, t) in thresholds.iter_mut().enumerate() {
                if d.sign_bits().get(k) {
                    *t = 2 - *t;
                }
            }
        }
        Ok((w, ThresholdVec::new(thresholds)?))
    }

    /// `β`: `x* = P_R D_R x`.
    pub fn transform_input(&self, x: &BipolarVec) -> Result<BipolarVec> {
        Self::apply(x, self.row_inv.as_ref(), self.row_swap.as_ref())
    }

    /// `ψ`: `y = P_C D_C y*`.
    pub fn recover_output(&self, y: &BipolarVec) -> Result<BipolarVec> {
        Self::apply(y, self.col_inv.as_ref(), self.col_swap.as_ref())
    }

    fn apply(v: &BipolarVec, inv: Option<&BitString>, swap: Option<&BitString>) -> Result<BipolarVec> {
        let mut v = match inv {
            Some(bits) => {
                check_len("inversion key vs vector", v.len(), bits.len())?;
                negate_where(v, bits)
            }
            None => v.clone(),
        };
        if let Some(bits) = swap {
            check_len("swap key vs vector", v.len() / 2, bits.len())?;
            v = swap_pairs(&v, bits);
        }
        Ok(v)
    }
}

/// Row swap and inversion: `W* = P_R D_R W`, `B* = B`.
pub fn protect_rows(
    w: &BinWeightMatrix,
    b: &ThresholdVec,
    row_swap: &BitString,
    row_inv: &BitString,
) -> Result<(BinWeightMatrix, ThresholdVec)> {
    LayerKey {
        row_inv: Some(row_inv.clone()),
        row_swap: Some(row_swap.clone()),
        ..LayerKey::default()
    }
    .protect(w, b)
}

/// `x* = P_R D_R x`.
pub fn transform_input_rows(x: &BipolarVec, row_swap: &BitString, row_inv: &BitString) -> Result<BipolarVec> {
    LayerKey {
        row_inv: Some(row_inv.clone()),
        row_swap: Some(row_swap.clone()),
        ..LayerKey::default()
    }
    .transform_input(x)
}

/// Column swap and inversion: `W* = W P_C D_C`, `B* = D_C (P_C B) + 2R`.
pub fn protect_cols(
    w: &BinWeightMatrix,
    b: &ThresholdVec,
    col_swap: &BitString,
    col_inv: &BitString,
) -> Result<(BinWeightMatrix, ThresholdVec)> {
    LayerKey {
        col_inv: Some(col_inv.clone()),
        col_swap: Some(col_swap.clone()),
        ..LayerKey::default()
    }
    .protect(w, b)
}

/// `y = P_C D_C y*`.
pub fn recover_output_cols(y: &BipolarVec, col_swap: &BitString, col_inv: &BitString) -> Result<BipolarVec> {
    LayerKey {
        col_inv: Some(col_inv.clone()),
        col_swap: Some(col_swap.clone()),
        ..LayerKey::default()
    }
    .recover_output(y)
}

/// Row inversion with column swap: `W* = D_R W P_C`, `B* = P_C B`.
pub fn protect_rowinv_colswap(
    w: &BinWeightMatrix,
    b: &ThresholdVec,
    row_inv: &BitString,
    col_swap: &BitString,
) -> Result<(BinWeightMatrix, ThresholdVec)> {
    LayerKey {
        row_inv: Some(row_inv.clone()),
        col_swap: Some(col_swap.clone()),
        ..LayerKey::default()
    }
    .protect(w, b)
}
