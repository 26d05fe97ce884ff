//! Simulated PUF and key expansion.
//!
//! The device secret stands in for the physical entropy of a PUF; the
//! response to a challenge is `HMAC-SHA256(secret, challenge)`. Only the
//! challenge is ever stored next to a model.

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::bits::BitString;
use crate::error::{Error, Result};

pub const DEVICE_SECRET_BYTES: usize = 32;
pub const RESPONSE_BITS: usize = 256;

#[derive(Clone, PartialEq, Eq)]
pub struct PufDevice {
    secret: [u8; DEVICE_SECRET_BYTES],
}

impl PufDevice {
    pub fn from_secret(secret: [u8; DEVICE_SECRET_BYTES]) -> Self {
        PufDevice { secret }
    }

    /// Reads a raw 32-byte device file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let secret: [u8; DEVICE_SECRET_BYTES] = bytes.try_into().map_err(|_| {
            Error::Format(format!(
                "device file must hold exactly {DEVICE_SECRET_BYTES} bytes, found {}",
                bytes.len()
            ))
        })?;
        Ok(PufDevice { secret })
    }

    pub fn to_bytes(&self) -> [u8; DEVICE_SECRET_BYTES] {
        self.secret
    }

    pub fn generate<R: rand::RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut secret = [0u8; DEVICE_SECRET_BYTES];
        rng.fill_bytes(&mut secret);
        PufDevice { secret }
    }

    pub fn response(&self, challenge: &Challenge) -> Response {
        puf_response(self, challenge)
    }
}

impl std::fmt::Debug for PufDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PufDevice(<secret>)")
    }
}

/// Public challenge bytes; stored with the protected model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Challenge(Vec<u8>);

impl Challenge {
    pub fn new(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::InvalidArgument("challenge must not be empty".into()));
        }
        Ok(Challenge(bytes))
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        let hex = hex.trim();
        if !hex.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument("challenge hex has odd length".into()));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| {
                u8::from_str_radix(&hex[i..i + 2], 16)
                    .map_err(|_| Error::InvalidArgument(format!("bad hex digit pair {:?}", &hex[i..i + 2])))
            })
            .collect::<Result<Vec<_>>>()?;
        Challenge::new(bytes)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// A 256-bit PUF response. Never printed or serialized.
#[derive(Clone, PartialEq, Eq)]
pub struct Response([u8; 32]);

impl Response {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Response(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Bit `i` is bit `i % 8` of byte `i / 8`.
    pub fn bits(&self) -> BitString {
        let words = self
            .0
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        BitString::from_words(RESPONSE_BITS, words)
    }
}

impl std::fmt::Debug for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Response(<hidden>)")
    }
}

pub fn puf_response(device: &PufDevice, challenge: &Challenge) -> Response {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&device.secret).expect("HMAC accepts any key length");
    mac.update(challenge.as_bytes());
    Response(mac.finalize().into_bytes().into())
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SPLITMIX_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[inline]
fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Expands a response into `len` key bits for the role named by `label`.
///
/// `seed = le_u64(response[0..8]) ^ fnv1a64(label)`; word `i` (from 0) is the
/// SplitMix64 finalizer applied to `seed + (i + 1)·0x9e3779b97f4a7c15`.
/// Words are laid out little-endian and the stream is cut to `len` bits.
pub fn expand_key(response: &Response, label: &[u8], len: usize) -> Result<BitString> {
    if len == 0 {
        return Err(Error::InvalidArgument("key length must be at least one bit".into()));
    }
    let seed = u64::from_le_bytes(response.0[..8].try_into().unwrap()) ^ fnv1a64(label);
    let words = (1..=len.div_ceil(64) as u64)
        .map(|i| splitmix_finalize(seed.wrapping_add(i.wrapping_mul(SPLITMIX_GAMMA))))
        .collect();
    Ok(BitString::from_words(len, words))
}
