//! Binary containers for plain (`BNNM`) and protected (`BNNP`) models.
//!
//! All integers are little-endian.
//!
//! ```text
//! BNNM  magic "BNNM" | version u32 = 1 | layer count u32
//!       per layer: kind u8 | m u32 | n u32 | n·ceil(m/64) column words u64 | n values i32
//!       kind: bit 0 = output head (values are biases, else thresholds),
//!             bit 1 = last row is a constant +1 bias input
//! BNNP  magic "BNNP" | version u32 = 1 | payload length u32 | BNNM payload (W*, B*, head)
//!       | key mode u8 | hidden count u32 | scheme u8 per hidden layer
//!       | challenge length u32 | challenge bytes
//!       | per hidden layer: term count u32, terms u32...   (declared key lengths)
//! ```

use std::path::Path;

use crate::bnn::{BinWeightMatrix, BnnModel, HiddenLayer, OutputHead, ThresholdVec};
use crate::error::{Error, Result};
use crate::protection::{Challenge, KeyMode, ProtectedModel, SchemeId};

pub const MODEL_MAGIC: &[u8; 4] = b"BNNM";
pub const PROTECTED_MAGIC: &[u8; 4] = b"BNNP";
pub const VERSION: u32 = 1;

const KIND_HEAD: u8 = 1;
const KIND_PADDED: u8 = 2;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, at: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                what: self.what,
                expected: (self.at as u64).saturating_add(n as u64),
                actual: self.bytes.len() as u64,
            })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::BadMagic {
                what: self.what,
                expected: u32::from_be_bytes(*magic),
                found: u32::from_be_bytes(found.try_into().unwrap()),
            });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("{}: unsupported version {version}", self.what)));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_layer(out: &mut Vec<u8>, kind: u8, w: &BinWeightMatrix, values: &[i32]) {
    out.push(kind);
    put_u32(out, w.rows());
    put_u32(out, w.cols());
    for k in 0..w.cols() {
        for word in w.column_words(k) {
            out.extend_from_slice(&word.to_le_bytes());
        }
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &BnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, model.hidden().len() + 1);
    for l in model.hidden() {
        let kind = if l.is_padded() { KIND_PADDED } else { 0 };
        put_layer(&mut out, kind, l.weights(), l.thresholds().values());
    }
    let head = model.head();
    let kind = KIND_HEAD | if head.is_padded() { KIND_PADDED } else { 0 };
    put_layer(&mut out, kind, head.weights(), head.bias());
    out
}

fn read_model(r: &mut Reader<'_>) -> Result<BnnModel> {
    r.magic(MODEL_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Format("model has no layers".into()));
    }
    let mut hidden = Vec::new();
    for i in 0..count {
        let kind = r.u8()?;
        if kind > (KIND_HEAD | KIND_PADDED) {
            return Err(Error::Format(format!("layer {i}: unknown kind byte {kind}")));
        }
        let is_head = kind & KIND_HEAD != 0;
        if is_head != (i + 1 == count) {
            return Err(Error::Format(format!(
                "layer {i}: the head must be the last layer, and only it"
            )));
        }
        let (m, n) = (r.u32()? as usize, r.u32()? as usize);
        if m == 0 || n == 0 {
            return Err(Error::Format(format!("layer {i}: empty {m}x{n} matrix")));
        }
        let per_col = m.div_ceil(64);
        let total = per_col
            .checked_mul(n)
            .filter(|&t| t.saturating_mul(8) <= r.bytes.len())
            .ok_or(Error::Truncated {
                what: r.what,
                expected: (per_col as u64).saturating_mul(n as u64 * 8),
                actual: r.bytes.len() as u64,
            })?;
        let words = (0..total).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let w = BinWeightMatrix::from_column_words(m, n, words)?;
        let values = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let padded = kind & KIND_PADDED != 0;
        if is_head {
            let head = OutputHead::build(w, values, padded)?;
            r.finish()?;
            return BnnModel::new(hidden, head);
        }
        hidden.push(HiddenLayer::build(w, ThresholdVec::new(values)?, padded)?);
    }
    unreachable!("the loop returns at the head")
}

pub fn decode_model(bytes: &[u8]) -> Result<BnnModel> {
    read_model(&mut Reader::new(bytes, "BNNM model"))
}

pub fn encode_protected(pm: &ProtectedModel) -> Vec<u8> {
    let payload = encode_model(pm.stored_model());
    let mut out = Vec::new();
    out.extend_from_slice(PROTECTED_MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, payload.len());
    out.extend_from_slice(&payload);
    out.push(pm.key_mode().code());
    put_u32(&mut out, pm.schemes().len());
    out.extend(pm.schemes().iter().map(|s| s.code()));
    put_u32(&mut out, pm.challenge().as_bytes().len());
    out.extend_from_slice(pm.challenge().as_bytes());
    for terms in pm.key_terms() {
        put_u32(&mut out, terms.len());
        for t in terms {
            put_u32(&mut out, t);
        }
    }
    out
}

pub fn decode_protected(bytes: &[u8]) -> Result<ProtectedModel> {
    let mut r = Reader::new(bytes, "BNNP protected model");
    r.magic(PROTECTED_MAGIC)?;
    let len = r.u32()? as usize;
    let stored = read_model(&mut Reader::new(r.take(len)?, "BNNM payload"))?;
    let mode = KeyMode::from_code(r.u8()?)?;
    let count = r.u32()? as usize;
    let schemes = r
        .take(count)?
        .iter()
        .map(|&c| SchemeId::from_code(c))
        .collect::<Result<Vec<_>>>()?;
    let challenge_len = r.u32()? as usize;
    let challenge = Challenge::new(r.take(challenge_len)?.to_vec())?;
    let pm = ProtectedModel::from_parts(stored, schemes, mode, challenge)?;
    for (i, expected) in pm.key_terms().into_iter().enumerate() {
        let n = r.u32()? as usize;
        let declared = (0..n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if declared != expected {
            return Err(Error::Format(format!(
                "layer {i}: declared key lengths {declared:?} do not match the scheme ({expected:?})"
            )));
        }
    }
    r.finish()?;
    Ok(pm)
}

pub fn save_model(path: &Path, model: &BnnModel) -> Result<()> {
    Ok(std::fs::write(path, encode_model(model))?)
}

pub fn load_model(path: &Path) -> Result<BnnModel> {
    decode_model(&std::fs::read(path)?)
}

pub fn save_protected(path: &Path, pm: &ProtectedModel) -> Result<()> {
    Ok(std::fs::write(path, encode_protected(pm))?)
}

pub fn load_protected(path: &Path) -> Result<ProtectedModel> {
    decode_protected(&std::fs::read(path)?)
}

/// A model file of either kind, told apart by its magic.
#[derive(Clone, Debug)]
pub enum ModelFile {
    Plain(BnnModel),
    Protected(ProtectedModel),
}

pub fn load_any(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..4) {
        Some(m) if m == PROTECTED_MAGIC => decode_protected(&bytes).map(ModelFile::Protected),
        _ => decode_model(&bytes).map(ModelFile::Plain),
    }
}
