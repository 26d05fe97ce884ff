//! Schemes, per-layer key derivation and key-length accounting.

use std::fmt;
use std::str::FromStr;

use crate::bits::BitString;
use crate::error::{check_len, Error, Result};
use crate::protection::puf::{expand_key, Response};
use crate::protection::transform::LayerKey;

/// Which of the four transforms a layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    None,
    /// Row swap + row inversion: `W* = P_R D_R W`.
    RowSwapInv,
    /// Column swap + column inversion: `W* = W P_C D_C`.
    ColSwapInv,
    /// Row inversion + column swap: `W* = D_R W P_C`.
    RowInvColSwap,
    RowInvOnly,
    ColInvOnly,
    RowSwapOnly,
    ColSwapOnly,
}

impl SchemeId {
    pub const ALL: [SchemeId; 8] = [
        SchemeId::None,
        SchemeId::RowSwapInv,
        SchemeId::ColSwapInv,
        SchemeId::RowInvColSwap,
        SchemeId::RowInvOnly,
        SchemeId::ColInvOnly,
        SchemeId::RowSwapOnly,
        SchemeId::ColSwapOnly,
    ];

    /// The three combined schemes reported in the tables.
    pub const TABLE_SCHEMES: [SchemeId; 3] = [SchemeId::RowSwapInv, SchemeId::ColSwapInv, SchemeId::RowInvColSwap];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        SchemeId::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown scheme code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::None => "none",
            SchemeId::RowSwapInv => "rows",
            SchemeId::ColSwapInv => "cols",
            SchemeId::RowInvColSwap => "rowinv-colswap",
            SchemeId::RowInvOnly => "rowinv",
            SchemeId::ColInvOnly => "colinv",
            SchemeId::RowSwapOnly => "rowswap",
            SchemeId::ColSwapOnly => "colswap",
        }
    }

    pub fn row_inv(self) -> bool {
        matches!(
            self,
            SchemeId::RowSwapInv | SchemeId::RowInvColSwap | SchemeId::RowInvOnly
        )
    }

    pub fn row_swap(self) -> bool {
        matches!(self, SchemeId::RowSwapInv | SchemeId::RowSwapOnly)
    }

    pub fn col_inv(self) -> bool {
        matches!(self, SchemeId::ColSwapInv | SchemeId::ColInvOnly)
    }

    pub fn col_swap(self) -> bool {
        matches!(
            self,
            SchemeId::ColSwapInv | SchemeId::RowInvColSwap | SchemeId::ColSwapOnly
        )
    }

    /// Key-length terms for an `m × n` layer, in the order the tables print
    /// them: swap before inversion on one side, rows before columns across.
    pub fn key_terms(self, m: usize, n: usize) -> Vec<usize> {
        match self {
            SchemeId::None => vec![],
            SchemeId::RowSwapInv => vec![m / 2, m],
            SchemeId::ColSwapInv => vec![n / 2, n],
            SchemeId::RowInvColSwap => vec![m, n / 2],
            SchemeId::RowInvOnly => vec![m],
            SchemeId::ColInvOnly => vec![n],
            SchemeId::RowSwapOnly => vec![m / 2],
            SchemeId::ColSwapOnly => vec![n / 2],
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?}")))
    }
}

/// How role keys are drawn from the response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KeyMode {
    /// One independent stream per (layer, role).
    #[default]
    Independent,
    /// One stream per (layer, side); inversion uses all of it and swapping
    /// reuses its first half.
    Reuse,
}

impl KeyMode {
    pub fn code(self) -> u8 {
        match self {
            KeyMode::Independent => 0,
            KeyMode::Reuse => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(KeyMode::Independent),
            1 => Ok(KeyMode::Reuse),
            _ => Err(Error::Format(format!("unknown key mode {code}"))),
        }
    }
}

/// Per-layer keys for a whole model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySchedule {
    mode: KeyMode,
    schemes: Vec<SchemeId>,
    shapes: Vec<(usize, usize)>,
    keys: Vec<LayerKey>,
}

fn derive(response: &Response, label: String, len: usize) -> Result<BitString> {
    if len == 0 {
        Ok(BitString::zeros(0))
    } else {
        expand_key(response, label.as_bytes(), len)
    }
}

/// Derives the keys for layers of shape `(m, n)` under the given schemes.
pub fn build_key_schedule(
    response: &Response,
    shapes: &[(usize, usize)],
    schemes: &[SchemeId],
    mode: KeyMode,
) -> Result<KeySchedule> {
    check_len("schemes vs layers", shapes.len(), schemes.len())?;
    let mut keys = Vec::with_capacity(shapes.len());
    for (i, (&(m, n), &scheme)) in shapes.iter().zip(schemes).enumerate() {
        if m % 2 != 0 {
            return Err(Error::OddFanIn(m));
        }
        let mut key = LayerKey::identity();
        match mode {
            KeyMode::Independent => {
                if scheme.row_inv() {
                    key.row_inv = Some(derive(response, format!("L{i}.rowinv"), m)?);
                }
                if scheme.row_swap() {
                    key.row_swap = Some(derive(response, format!("L{i}.rowswap"), m / 2)?);
                }
                if scheme.col_inv() {
                    key.col_inv = Some(derive(response, format!("L{i}.colinv"), n)?);
                }
                if scheme.col_swap() {
                    key.col_swap = Some(derive(response, format!("L{i}.colswap"), n / 2)?);
                }
            }
            KeyMode::Reuse => {
                if scheme.row_inv() || scheme.row_swap() {
                    let len = if scheme.row_inv() { m } else { m / 2 };
                    let row = derive(response, format!("L{i}.row"), len)?;
                    key.row_swap = scheme.row_swap().then(|| row.prefix(m / 2));
                    key.row_inv = scheme.row_inv().then_some(row);
                }
                if scheme.col_inv() || scheme.col_swap() {
                    let len = if scheme.col_inv() { n } else { n / 2 };
                    let col = derive(response, format!("L{i}.col"), len)?;
                    key.col_swap = scheme.col_swap().then(|| col.prefix(n / 2));
                    key.col_inv = scheme.col_inv().then_some(col);
                }
            }
        }
        keys.push(key);
    }
    Ok(KeySchedule {
        mode,
        schemes: schemes.to_vec(),
        shapes: shapes.to_vec(),
        keys,
    })
}

impl KeySchedule {
    /// A schedule from explicit keys; lengths are checked against the shapes.
    pub fn from_keys(shapes: &[(usize, usize)], schemes: &[SchemeId], keys: Vec<LayerKey>) -> Result<Self> {
        check_len("schemes vs layers", shapes.len(), schemes.len())?;
        check_len("keys vs layers", shapes.len(), keys.len())?;
        for ((&(m, n), &s), k) in shapes.iter().zip(schemes).zip(&keys) {
            let expect = [
                (s.row_inv(), m),
                (s.row_swap(), m / 2),
                (s.col_inv(), n),
                (s.col_swap(), n / 2),
            ];
            let parts = [&k.row_inv, &k.row_swap, &k.col_inv, &k.col_swap];
            for ((used, len), part) in expect.into_iter().zip(parts) {
                match (used, part) {
                    (true, Some(b)) => check_len("layer key part", len, b.len())?,
                    (false, None) => {}
                    _ => return Err(Error::InvalidArgument(format!("key parts do not match scheme {s}"))),
                }
            }
        }
        Ok(KeySchedule {
            mode: KeyMode::Independent,
            schemes: schemes.to_vec(),
            shapes: shapes.to_vec(),
            keys,
        })
    }

    pub fn mode(&self) -> KeyMode {
        self.mode
    }

    pub fn schemes(&self) -> &[SchemeId] {
        &self.schemes
    }

    pub fn keys(&self) -> &[LayerKey] {
        &self.keys
    }

    pub fn layer(&self, i: usize) -> &LayerKey {
        &self.keys[i]
    }

    /// Number of key bits the transforms consume.
    pub fn in_use_bits(&self) -> usize {
        self.keys.iter().map(LayerKey::bit_len).sum()
    }

    /// Flips in-use bit `i`, counting layer by layer.
    pub fn flip_bit(&mut self, mut i: usize) -> Result<()> {
        for key in &mut self.keys {
            if i < key.bit_len() {
                key.flip_bit(i);
                return Ok(());
            }
            i -= key.bit_len();
        }
        Err(Error::InvalidArgument(format!(
            "key bit {i} beyond the {} in-use bits",
            self.in_use_bits()
        )))
    }

    /// Key-length terms per layer, per the table formulas.
    pub fn key_terms(&self) -> Vec<Vec<usize>> {
        self.shapes
            .iter()
            .zip(&self.schemes)
            .map(|(&(m, n), s)| s.key_terms(m, n))
            .collect()
    }
}

/// Total key length.
pub fn key_length_bits(terms: &[Vec<usize>]) -> usize {
    terms.iter().flatten().sum()
}

fn times(count: usize, body: String) -> String {
    if count == 1 {
        body
    } else {
        format!("{count}×{body}")
    }
}

/// Renders per-layer terms like the tables do: `392+784` for one layer,
/// `3×(256+512)` when every layer has the same terms, and otherwise each
/// term position run-length grouped across layers, e.g. `392+2×256+784+2×512`.
/// Unprotected layers (no terms) are skipped; nothing protected is `0`.
pub fn key_length_formula(terms: &[Vec<usize>]) -> String {
    let layers: Vec<&Vec<usize>> = terms.iter().filter(|t| !t.is_empty()).collect();
    let Some(first) = layers.first() else {
        return "0".into();
    };
    let join = |t: &[usize]| t.iter().map(usize::to_string).collect::<Vec<_>>().join("+");
    if layers.iter().all(|t| t == first) {
        let body = if first.len() > 1 && layers.len() > 1 {
            format!("({})", join(first))
        } else {
            join(first)
        };
        return times(layers.len(), body);
    }
    let width = layers.iter().map(|t| t.len()).max().unwrap_or(0);
    let mut parts = Vec::new();
    for p in 0..width {
        let column: Vec<usize> = layers.iter().filter_map(|t| t.get(p).copied()).collect();
        let mut i = 0;
        while i < column.len() {
            let run = column[i..].iter().take_while(|&&v| v == column[i]).count();
            parts.push(times(run, column[i].to_string()));
            i += run;
        }
    }
    parts.join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MNIST: [(usize, usize); 3] = [(784, 512), (512, 512), (512, 512)];

    fn formula(scheme: SchemeId, layers: &[usize]) -> (String, usize) {
        let terms: Vec<Vec<usize>> = MNIST
            .iter()
            .enumerate()
            .map(|(i, &(m, n))| {
                if layers.contains(&i) {
                    scheme.key_terms(m, n)
                } else {
                    vec![]
                }
            })
            .collect();
        (key_length_formula(&terms), key_length_bits(&terms))
    }

    #[test]
    fn table_formulas() {
        use SchemeId::*;
        assert_eq!(formula(RowSwapInv, &[0]), ("392+784".into(), 1176));
        assert_eq!(formula(RowSwapInv, &[1]).0, "256+512");
        assert_eq!(formula(RowSwapInv, &[2]).0, "256+512");
        assert_eq!(formula(RowSwapInv, &[0, 1, 2]), ("392+2×256+784+2×512".into(), 2712));
        assert_eq!(formula(ColSwapInv, &[0]).0, "256+512");
        assert_eq!(formula(ColSwapInv, &[0, 1, 2]), ("3×(256+512)".into(), 2304));
        assert_eq!(formula(RowInvColSwap, &[0]).0, "784+256");
        assert_eq!(formula(RowInvColSwap, &[2]).0, "512+256");
        assert_eq!(formula(RowInvColSwap, &[0, 1, 2]), ("784+2×512+3×256".into(), 2576));
        assert_eq!(formula(RowSwapInv, &[]), ("0".into(), 0));
    }

    #[test]
    fn single_term_formulas() {
        assert_eq!(key_length_formula(&[vec![8], vec![8]]), "2×8");
        assert_eq!(key_length_formula(&[vec![8]]), "8");
        assert_eq!(key_length_formula(&[vec![4, 8], vec![], vec![2, 4]]), "4+2+8+4");
    }

    #[test]
    fn scheme_codes_and_names_round_trip() {
        for s in SchemeId::ALL {
            assert_eq!(SchemeId::from_code(s.code()).unwrap(), s);
            assert_eq!(s.name().parse::<SchemeId>().unwrap(), s);
        }
        assert!(SchemeId::from_code(8).is_err());
        assert!("diagonal".parse::<SchemeId>().is_err());
    }

    #[test]
    fn schedule_lengths_match_terms() {
        let r = Response::from_bytes([9; 32]);
        for mode in [KeyMode::Independent, KeyMode::Reuse] {
            for s in SchemeId::ALL {
                let ks = build_key_schedule(&r, &MNIST, &[s; 3], mode).unwrap();
                let terms = ks.key_terms();
                let bits: usize = terms.iter().flatten().sum();
                assert_eq!(ks.in_use_bits(), bits, "{s} {mode:?}");
            }
        }
    }

    #[test]
    fn reuse_mode_shares_prefix() {
        let r = Response::from_bytes([4; 32]);
        let ks = build_key_schedule(&r, &[(8, 6)], &[SchemeId::RowSwapInv], KeyMode::Reuse).unwrap();
        let k = ks.layer(0);
        assert_eq!(k.row_inv.as_ref().unwrap().prefix(4), *k.row_swap.as_ref().unwrap());
        let ind = build_key_schedule(&r, &[(8, 6)], &[SchemeId::RowSwapInv], KeyMode::Independent).unwrap();
        assert_ne!(ind.layer(0).row_inv, k.row_inv);
    }

    #[test]
    fn layers_get_distinct_keys() {
        let r = Response::from_bytes([1; 32]);
        let ks = build_key_schedule(
            &r,
            &[(64, 64), (64, 64)],
            &[SchemeId::ColSwapInv; 2],
            KeyMode::Independent,
        )
        .unwrap();
        assert_ne!(ks.layer(0), ks.layer(1));
    }

    #[test]
    fn none_scheme_has_identity_keys() {
        let r = Response::from_bytes([1; 32]);
        let ks = build_key_schedule(&r, &MNIST, &[SchemeId::None; 3], KeyMode::Independent).unwrap();
        assert!(ks.keys().iter().all(LayerKey::is_identity));
        assert_eq!(ks.in_use_bits(), 0);
    }

    #[test]
    fn flip_bit_bounds() {
        let r = Response::from_bytes([2; 32]);
        let mut ks =
            build_key_schedule(&r, &[(4, 2), (2, 2)], &[SchemeId::RowSwapInv; 2], KeyMode::Independent).unwrap();
        assert_eq!(ks.in_use_bits(), 6 + 3);
        let before = ks.clone();
        ks.flip_bit(7).unwrap();
        assert_eq!(before.layer(0), ks.layer(0));
        assert_ne!(before.layer(1), ks.layer(1));
        assert!(ks.flip_bit(9).is_err());
    }

    #[test]
    fn from_keys_validates() {
        let good = LayerKey {
            row_inv: Some(BitString::zeros(4)),
            ..LayerKey::default()
        };
        assert!(KeySchedule::from_keys(&[(4, 2)], &[SchemeId::RowInvOnly], vec![good.clone()]).is_ok());
        assert!(KeySchedule::from_keys(&[(6, 2)], &[SchemeId::RowInvOnly], vec![good.clone()]).is_err());
        assert!(KeySchedule::from_keys(&[(4, 2)], &[SchemeId::RowSwapInv], vec![good]).is_err());
    }
}
