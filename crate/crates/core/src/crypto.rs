//! Accounts, addresses and signatures.
//!
//! Signatures are Ed25519 (RFC 8032), which is deterministic: the same key
//! and payload always yield the same 64 signature bytes, so blocks re-encode
//! identically on every node. An address is the last 20 bytes of
//! SHA-256(public key).

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};

pub const ADDRESS_LEN: usize = 20;
pub const HASH_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid public key length {0}, expected {PUBLIC_KEY_LEN}")]
    InvalidKeyLength(usize),
    #[error("bytes are not a valid ed25519 public key")]
    InvalidKey,
    #[error("invalid hex: {0}")]
    InvalidHex(String),
    #[error("expected {expected} bytes, got {got}")]
    InvalidLength { expected: usize, got: usize },
    #[error("address text must start with 0x")]
    MissingPrefix,
}

pub fn sha256(data: &[u8]) -> Hash {
    Hash(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn sha256_concat(parts: &[&[u8]]) -> Hash {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Hash(hasher.finalize().into())
}

fn decode_hex_array<const N: usize>(text: &str) -> Result<[u8; N], CryptoError> {
    let raw = hex::decode(text).map_err(|e| CryptoError::InvalidHex(e.to_string()))?;
    <[u8; N]>::try_from(raw.as_slice()).map_err(|_| CryptoError::InvalidLength {
        expected: N,
        got: raw.len(),
    })
}

macro_rules! hex_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let text = String::deserialize(deserializer)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// 20-byte account identifier. Text form is `0x` followed by 40 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub const ZERO: Address = Address([0; ADDRESS_LEN]);

    pub fn as_bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        <[u8; ADDRESS_LEN]>::try_from(bytes)
            .map(Address)
            .map_err(|_| CryptoError::InvalidLength {
                expected: ADDRESS_LEN,
                got: bytes.len(),
            })
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .ok_or(CryptoError::MissingPrefix)?;
        decode_hex_array(body).map(Address)
    }
}

hex_serde!(Address);

impl Encode for Address {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
}

impl Decode for Address {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.array().map(Address)
    }
}

/// 32-byte SHA-256 digest; text form is 64 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash(pub [u8; HASH_LEN]);

impl Hash {
    pub const ZERO: Hash = Hash([0; HASH_LEN]);

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        <[u8; HASH_LEN]>::try_from(bytes)
            .map(Hash)
            .map_err(|_| CryptoError::InvalidLength {
                expected: HASH_LEN,
                got: bytes.len(),
            })
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", &hex::encode(self.0)[..16])
    }
}

impl FromStr for Hash {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_array(s.strip_prefix("0x").unwrap_or(s)).map(Hash)
    }
}

hex_serde!(Hash);

impl Encode for Hash {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
}

impl Decode for Hash {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.array().map(Hash)
    }
}

/// Ed25519 public key, validated as a curve point on construction.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw = <[u8; PUBLIC_KEY_LEN]>::try_from(bytes)
            .map_err(|_| CryptoError::InvalidKeyLength(bytes.len()))?;
        VerifyingKey::from_bytes(&raw).map_err(|_| CryptoError::InvalidKey)?;
        Ok(PublicKey(raw))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn address(&self) -> Address {
        derive_address(&self.0).expect("validated key has the right length")
    }

    /// Strict Ed25519 verification; rejects small-order keys and malleable signatures.
    pub fn verify(&self, payload: &[u8], signature: &Signature) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify_strict(payload, &sig).is_ok()
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

impl FromStr for PublicKey {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s.strip_prefix("0x").unwrap_or(s))
            .map_err(|e| CryptoError::InvalidHex(e.to_string()))?;
        PublicKey::from_bytes(&raw)
    }
}

hex_serde!(PublicKey);

impl Encode for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
}

impl Decode for PublicKey {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let raw: [u8; PUBLIC_KEY_LEN] = dec.array()?;
        PublicKey::from_bytes(&raw).map_err(|_| DecodeError::InvalidValue("public key"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    /// Placeholder used only by the genesis header, which is never verified.
    pub const EMPTY: Signature = Signature([0; SIGNATURE_LEN]);

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        <[u8; SIGNATURE_LEN]>::try_from(bytes)
            .map(Signature)
            .map_err(|_| CryptoError::InvalidLength {
                expected: SIGNATURE_LEN,
                got: bytes.len(),
            })
    }
}

impl Default for Signature {
    fn default() -> Self {
        Signature::EMPTY
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(self.0)[..16])
    }
}

impl FromStr for Signature {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_array(s.strip_prefix("0x").unwrap_or(s)).map(Signature)
    }
}

hex_serde!(Signature);

impl Encode for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
}

impl Decode for Signature {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.array().map(Signature)
    }
}

/// Last 20 bytes of SHA-256 over the raw public key bytes.
pub fn derive_address(public_key: &[u8]) -> Result<Address, CryptoError> {
    if public_key.len() != PUBLIC_KEY_LEN {
        return Err(CryptoError::InvalidKeyLength(public_key.len()));
    }
    let digest = sha256(public_key);
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&digest.0[HASH_LEN - ADDRESS_LEN..]);
    Ok(Address(out))
}

/// A signing identity.
#[derive(Clone)]
pub struct Account {
    signing_key: SigningKey,
    public_key: PublicKey,
    address: Address,
}

impl Account {
    pub fn generate() -> Self {
        Self::from_signing_key(SigningKey::generate(&mut OsRng))
    }

    pub fn from_secret(secret: &[u8; 32]) -> Self {
        Self::from_signing_key(SigningKey::from_bytes(secret))
    }

    /// Parses the hex secret stored in key files (surrounding whitespace ignored).
    pub fn from_secret_hex(text: &str) -> Result<Self, CryptoError> {
        decode_hex_array::<32>(text.trim()).map(|secret| Self::from_secret(&secret))
    }

    fn from_signing_key(signing_key: SigningKey) -> Self {
        let public_key = PublicKey(signing_key.verifying_key().to_bytes());
        let address = public_key.address();
        Self {
            signing_key,
            public_key,
            address,
        }
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.signing_key.to_bytes())
    }

    pub fn public_key(&self) -> PublicKey {
        self.public_key
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn sign(&self, payload: &[u8]) -> Signature {
        Signature(self.signing_key.sign(payload).to_bytes())
    }
}

impl fmt::Debug for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Account")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}
