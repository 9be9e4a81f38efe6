use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::DeidError;

pub const KEY_ENV: &str = "SCREENFORGE_DEID_KEY";

/// 32-byte secret for every keyed derivation. `Debug` never prints it.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        SecretKey(bytes)
    }

    pub fn from_hex(text: &str) -> Result<Self, DeidError> {
        let bytes = hex::decode(text.trim()).map_err(|_| DeidError::InvalidKey)?;
        let bytes: [u8; 32] = bytes.try_into().map_err(|_| DeidError::InvalidKey)?;
        Ok(SecretKey(bytes))
    }

    /// Reads the key from `SCREENFORGE_DEID_KEY`. There is no fallback key.
    pub fn from_env() -> Result<Self, DeidError> {
        match std::env::var(KEY_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::from_hex(&v),
            _ => Err(DeidError::MissingKey),
        }
    }

    /// HMAC-SHA256 of `message`.
    pub fn mac(&self, message: &[u8]) -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.0).expect("HMAC accepts any key size");
        mac.update(message);
        mac.finalize().into_bytes().into()
    }

    /// Short public identifier of the key, used to mark de-identified output.
    pub fn fingerprint(&self) -> String {
        hex::encode(&self.mac(b"screenforge:fingerprint")[..4])
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({})", self.fingerprint())
    }
}

/// Decimal digits of a big-endian unsigned integer.
pub(crate) fn decimal_digits(bytes: &[u8]) -> String {
    let mut n = bytes.to_vec();
    let mut digits = Vec::new();
    while n.iter().any(|&b| b != 0) {
        let mut rem = 0u32;
        for b in n.iter_mut() {
            let cur = (rem << 8) | *b as u32;
            *b = (cur / 10) as u8;
            rem = cur % 10;
        }
        digits.push(b'0' + rem as u8);
    }
    if digits.is_empty() {
        digits.push(b'0');
    }
    digits.reverse();
    String::from_utf8(digits).unwrap()
}

/// Big-endian unsigned integer modulo `m`.
pub(crate) fn modulo(bytes: &[u8], m: u32) -> u32 {
    bytes
        .iter()
        .fold(0u64, |r, &b| (r * 256 + b as u64) % m as u64) as u32
}
