use crate::bits::{words_for, BitString, WORD_BITS};
use crate::bnn::BipolarVec;
use crate::error::{check_len, Error, Result};

/// A packed `{-1, +1}` matrix with `rows` (fan-in) by `cols` (outputs).
///
/// Storage is column-major: column `k` occupies `words_per_col` consecutive
/// words, so one column is one crossbar column and one popcount stream.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinWeightMatrix {
    rows: usize,
    cols: usize,
    words_per_col: usize,
    data: Vec<u64>,
}

impl BinWeightMatrix {
    /// Builds a matrix from a predicate; `true` at `(row, col)` means `+1`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut w = Self::negative(rows, cols)?;
        for k in 0..cols {
            for j in 0..rows {
                if f(j, k) {
                    w.set(j, k, 1);
                }
            }
        }
        Ok(w)
    }

    /// All `-1`.
    pub fn negative(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || !rows.is_multiple_of(2) {
            return Err(Error::OddFanIn(rows));
        }
        if cols == 0 {
            return Err(Error::InvalidArgument("weight matrix needs at least one column".into()));
        }
        let words_per_col = words_for(rows);
        Ok(BinWeightMatrix {
            rows,
            cols,
            words_per_col,
            data: vec![0; words_per_col * cols],
        })
    }

    /// Builds from row-major `±1` entries (`signs[row][col]`).
    pub fn from_row_signs(signs: &[Vec<i8>]) -> Result<Self> {
        let rows = signs.len();
        let cols = signs.first().map_or(0, Vec::len);
        for (j, row) in signs.iter().enumerate() {
            check_len("weight row width", cols, row.len())?;
            if let Some(bad) = row.iter().find(|&&s| s != 1 && s != -1) {
                return Err(Error::InvalidArgument(format!("row {j} holds {bad}, expected ±1")));
            }
        }
        Self::from_fn(rows, cols, |j, k| signs[j][k] == 1)
    }

    /// Builds from raw column words, `words_per_col` words per column.
    pub fn from_column_words(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self> {
        let mut w = Self::negative(rows, cols)?;
        check_len("column word data", w.data.len(), data.len())?;
        w.data = data;
        let tail = rows % WORD_BITS;
        if tail != 0 {
            let mask = (1u64 << tail) - 1;
            for k in 0..cols {
                let last = k * w.words_per_col + w.words_per_col - 1;
                if w.data[last] & !mask != 0 {
                    return Err(Error::Format(format!("column {k} has non-zero padding bits")));
                }
            }
        }
        Ok(w)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn words_per_col(&self) -> usize {
        self.words_per_col
    }

    /// All column words, column-major.
    pub fn column_data(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn column_words(&self, k: usize) -> &[u64] {
        let start = k * self.words_per_col;
        &self.data[start..start + self.words_per_col]
    }

    pub fn column(&self, k: usize) -> BipolarVec {
        BipolarVec::from_bits(BitString::from_words(self.rows, self.column_words(k).to_vec()))
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        assert!(row < self.rows && col < self.cols);
        let word = self.data[col * self.words_per_col + row / WORD_BITS];
        if (word >> (row % WORD_BITS)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: i8) {
        assert!(row < self.rows && col < self.cols);
        let word = &mut self.data[col * self.words_per_col + row / WORD_BITS];
        let mask = 1u64 << (row % WORD_BITS);
        if value > 0 {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    pub fn negate_column(&mut self, k: usize) {
        let tail = self.rows % WORD_BITS;
        let start = k * self.words_per_col;
        let col = &mut self.data[start..start + self.words_per_col];
        for w in col.iter_mut() {
            *w = !*w;
        }
        if tail != 0 {
            col[self.words_per_col - 1] &= (1u64 << tail) - 1;
        }
    }

    pub fn negate_row(&mut self, j: usize) {
        assert!(j < self.rows);
        let mask = 1u64 << (j % WORD_BITS);
        for k in 0..self.cols {
            self.data[k * self.words_per_col + j / WORD_BITS] ^= mask;
        }
    }

    pub fn swap_columns(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let wpc = self.words_per_col;
        for i in 0..wpc {
            self.data.swap(a * wpc + i, b * wpc + i);
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for k in 0..self.cols {
            let (va, vb) = (self.get(a, k), self.get(b, k));
            self.set(a, k, vb);
            self.set(b, k, va);
        }
    }

    /// Row-major `±1` entries.
    pub fn to_row_signs(&self) -> Vec<Vec<i8>> {
        (0..self.rows)
            .map(|j| (0..self.cols).map(|k| self.get(j, k)).collect())
            .collect()
    }
}

impl std::fmt::Debug for BinWeightMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinWeightMatrix {}x{}", self.rows, self.cols)
    }
}

/// `y_k = Σ_j W[j,k]·x_j`, computed as `m - 2·popcount(col_k XOR x)`.
///
/// Both operands keep zero padding, so the XOR of padding words is zero and
/// needs no mask.
pub fn xnor_popcount_matvec(w: &BinWeightMatrix, x: &BipolarVec) -> Result<Vec<i32>> {
    if x.len() != w.rows() {
        return Err(Error::dims("matvec input length vs weight rows", w.rows(), x.len()));
    }
    let xw = x.words();
    let m = w.rows() as i32;
    Ok((0..w.cols())
        .map(|k| {
            let mismatches: u32 = w
                .column_words(k)
                .iter()
                .zip(xw)
                .map(|(c, v)| (c ^ v).count_ones())
                .sum();
            m - 2 * mismatches as i32
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_empty_rows() {
        assert!(matches!(BinWeightMatrix::negative(3, 2), Err(Error::OddFanIn(3))));
        assert!(matches!(BinWeightMatrix::negative(0, 2), Err(Error::OddFanIn(0))));
        assert!(BinWeightMatrix::negative(2, 0).is_err());
    }

    #[test]
    fn all_match_column() {
        let w = BinWeightMatrix::from_row_signs(&[vec![1], vec![1]]).unwrap();
        let x = BipolarVec::from_signs(&[1, 1]).unwrap();
        assert_eq!(xnor_popcount_matvec(&w, &x).unwrap(), vec![2]);
    }

    #[test]
    fn balanced_cancellation() {
        let w = BinWeightMatrix::from_fn(4, 2, |_, _| true).unwrap();
        let x = BipolarVec::from_signs(&[1, -1, 1, -1]).unwrap();
        assert_eq!(xnor_popcount_matvec(&w, &x).unwrap(), vec![0, 0]);
    }

    #[test]
    fn dimension_error_names_both_lengths() {
        let w = BinWeightMatrix::negative(4, 1).unwrap();
        let err = xnor_popcount_matvec(&w, &BipolarVec::negative(6)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('6'), "{msg}");
    }

    #[test]
    fn row_and_column_edits() {
        let mut w = BinWeightMatrix::from_fn(130, 3, |j, k| (j + k) % 2 == 0).unwrap();
        let orig = w.clone();
        w.negate_column(1);
        assert!((0..130).all(|j| w.get(j, 1) == -orig.get(j, 1)));
        assert_eq!(w.column_words(1)[2] >> 2, 0, "padding must stay clear");
        w.negate_column(1);
        assert_eq!(w, orig);

        w.negate_row(129);
        assert!((0..3).all(|k| w.get(129, k) == -orig.get(129, k)));
        w.negate_row(129);

        w.swap_rows(0, 129);
        w.swap_columns(0, 2);
        assert_eq!(w.get(129, 2), orig.get(0, 0));
        assert_eq!(w.get(0, 0), orig.get(129, 2));
    }

    #[test]
    fn column_words_reject_dirty_padding() {
        assert!(BinWeightMatrix::from_column_words(2, 1, vec![0b100]).is_err());
        assert!(BinWeightMatrix::from_column_words(2, 1, vec![0b11]).is_ok());
    }
}
