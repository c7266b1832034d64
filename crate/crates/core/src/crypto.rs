//! Hashing, commitment chains, EIP-712 message digests and recoverable
//! secp256k1 signatures.
//!
//! Everything in here is a pure function over value types. Byte layouts follow
//! the Ethereum conventions the verifying contract relies on: keccak-256,
//! 32-byte big-endian ABI words, `0x1901` typed-data prefix, `v` in {27, 28}.

use std::fmt;
use std::str::FromStr;

use k256::ecdsa::{RecoveryId, Signature, SigningKey as K256SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Keccak256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("secret must be 32 bytes, got {0}")]
    InvalidSecretLength(usize),
    #[error("invalid secp256k1 signing key")]
    InvalidKey,
    #[error("signature s-value is in the upper half of the curve order")]
    MalleableSignature,
    #[error("signature does not recover to a valid public key")]
    InvalidSignature,
    #[error("malformed hex input")]
    InvalidHex,
}

macro_rules! fixed_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;
            pub const ZERO: Self = Self([0u8; $len]);

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }

            pub fn to_hex(&self) -> String {
                format!("0x{}", hex::encode(self.0))
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::ZERO
            }
        }

        impl From<[u8; $len]> for $name {
            fn from(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let raw = s.strip_prefix("0x").unwrap_or(s);
                let bytes = hex::decode(raw).map_err(|_| CryptoError::InvalidHex)?;
                Self::from_slice(&bytes).ok_or(CryptoError::InvalidHex)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

fixed_bytes!(
    /// A keccak-256 output. Ordering is the unsigned 256-bit big-endian order.
    Digest32,
    32
);
fixed_bytes!(
    /// Low 20 bytes of the keccak-256 of an uncompressed public key.
    Address,
    20
);
fixed_bytes!(
    /// An operator's per-attempt secret `s`.
    Secret,
    32
);

/// Upper bound (inclusive) on an accepted signature `s` value: floor(n / 2).
pub const SECP256K1_HALF_ORDER: [u8; 32] = [
    0x7F, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x5D, 0x57, 0x6E,
    0x73, 0x57, 0xA4, 0x50, 0x1D, 0xDF, 0xE9, 0x2F, 0x46, 0x68, 0x1B, 0x20, 0xA0,
];

/// secp256k1 group order n.
pub const SECP256K1_ORDER: [u8; 32] = [
    0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFE, 0xBA, 0xAE, 0xDC,
    0xE6, 0xAF, 0x48, 0xA0, 0x3B, 0xBF, 0xD2, 0x5E, 0x8C, 0xD0, 0x36, 0x41, 0x41,
];

pub fn keccak(data: &[u8]) -> Digest32 {
    Digest32(Keccak256::digest(data).into())
}

/// keccak-256 over the concatenation of `parts`, without materialising it.
pub fn keccak_concat<I, T>(parts: I) -> Digest32
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    let mut hasher = Keccak256::new();
    for part in parts {
        hasher.update(part.as_ref());
    }
    Digest32(hasher.finalize().into())
}

/// The two-layer commitment for one operator in one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentChain {
    pub secret: Secret,
    /// `c_o = keccak(secret)`
    pub inner: Digest32,
    /// `c_v = keccak(c_o)`
    pub outer: Digest32,
}

impl CommitmentChain {
    pub fn from_secret(secret: Secret) -> Self {
        let inner = keccak(&secret.0);
        let outer = keccak(&inner.0);
        Self { secret, inner, outer }
    }
}

pub fn derive_chain(secret: &[u8]) -> Result<CommitmentChain, CryptoError> {
    let secret = Secret::from_slice(secret).ok_or(CryptoError::InvalidSecretLength(secret.len()))?;
    Ok(CommitmentChain::from_secret(secret))
}

/// Encodes `value` as a 32-byte big-endian ABI word.
pub fn abi_word(value: u64) -> [u8; 32] {
    let mut word = [0u8; 32];
    word[24..].copy_from_slice(&value.to_be_bytes());
    word
}

fn abi_address(address: &Address) -> [u8; 32] {
    let mut word = [0u8; 32];
    word[12..].copy_from_slice(&address.0);
    word
}

pub const DOMAIN_TYPE: &str = "EIP712Domain(string name,string version,uint256 chainId,address verifyingContract)";
pub const MESSAGE_TYPE: &str = "Message(uint256 round,uint256 trialNum,bytes32 cv)";

/// Name/version half of the EIP-712 domain; chain id and contract live on
/// the message so that every signed tuple carries its full context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eip712Domain {
    pub name: String,
    pub version: String,
}

impl Default for Eip712Domain {
    fn default() -> Self {
        Self {
            name: "Commit Reveal2".to_owned(),
            version: "1".to_owned(),
        }
    }
}

/// The tuple an operator signs for its outer commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypedMessage {
    pub chain_id: u64,
    pub ver_contract: Address,
    pub round: u64,
    /// Encoded under the type-string field name `trialNum`.
    pub attempt_id: u64,
    pub cv: Digest32,
}

pub fn domain_separator(domain: &Eip712Domain, chain_id: u64, ver_contract: &Address) -> Digest32 {
    keccak_concat([
        keccak(DOMAIN_TYPE.as_bytes()).0,
        keccak(domain.name.as_bytes()).0,
        keccak(domain.version.as_bytes()).0,
        abi_word(chain_id),
        abi_address(ver_contract),
    ])
}

pub fn struct_hash(msg: &TypedMessage) -> Digest32 {
    keccak_concat([
        keccak(MESSAGE_TYPE.as_bytes()).0,
        abi_word(msg.round),
        abi_word(msg.attempt_id),
        msg.cv.0,
    ])
}

/// `keccak(0x1901 ‖ domainSeparator ‖ structHash)`
pub fn typed_digest(msg: &TypedMessage, domain: &Eip712Domain) -> Digest32 {
    let separator = domain_separator(domain, msg.chain_id, &msg.ver_contract);
    let structured = struct_hash(msg);
    keccak_concat([&[0x19u8, 0x01][..], &separator.0, &structured.0])
}

/// Ethereum-style `(v, r, s)` with `v` in {27, 28}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecoverableSignature {
    pub v: u8,
    pub r: Digest32,
    pub s: Digest32,
}

impl RecoverableSignature {
    pub fn is_low_s(&self) -> bool {
        self.s.0 <= SECP256K1_HALF_ORDER
    }
}

/// A secp256k1 signing key paired with its derived address.
#[derive(Clone)]
pub struct SigningKey {
    inner: K256SigningKey,
    address: Address,
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        let inner = K256SigningKey::from_slice(bytes).map_err(|_| CryptoError::InvalidKey)?;
        let address = address_of(inner.verifying_key());
        Ok(Self { inner, address })
    }

    pub fn address(&self) -> Address {
        self.address
    }
}

/// Address of an uncompressed public key without its `0x04` prefix byte.
pub fn address_from_public_key(uncompressed_xy: &[u8; 64]) -> Address {
    let hash = keccak(uncompressed_xy);
    let mut out = [0u8; 20];
    out.copy_from_slice(&hash.0[12..]);
    Address(out)
}

fn address_of(key: &VerifyingKey) -> Address {
    let point = key.to_encoded_point(false);
    let mut xy = [0u8; 64];
    xy.copy_from_slice(&point.as_bytes()[1..]);
    address_from_public_key(&xy)
}

/// Signs a prehashed digest, returning a low-s signature.
pub fn sign(digest: &Digest32, key: &SigningKey) -> RecoverableSignature {
    let (signature, recovery_id) = key
        .inner
        .sign_prehash_recoverable(&digest.0)
        .expect("signing a 32-byte prehash with a valid key cannot fail");
    let (signature, recovery_id) = match signature.normalize_s() {
        Some(low) => (
            low,
            RecoveryId::new(!recovery_id.is_y_odd(), recovery_id.is_x_reduced()),
        ),
        None => (signature, recovery_id),
    };
    let (r, s) = signature.split_bytes();
    RecoverableSignature {
        v: 27 + recovery_id.to_byte(),
        r: Digest32(r.into()),
        s: Digest32(s.into()),
    }
}

/// `ecrecover` with the low-s rule enforced.
pub fn recover(digest: &Digest32, sig: &RecoverableSignature) -> Result<Address, CryptoError> {
    if !sig.is_low_s() {
        return Err(CryptoError::MalleableSignature);
    }
    let recovery_id = match sig.v {
        27 | 28 => RecoveryId::from_byte(sig.v - 27).ok_or(CryptoError::InvalidSignature)?,
        _ => return Err(CryptoError::InvalidSignature),
    };
    let signature = Signature::from_scalars(sig.r.0, sig.s.0).map_err(|_| CryptoError::InvalidSignature)?;
    let key = VerifyingKey::recover_from_prehash(&digest.0, &signature, recovery_id)
        .map_err(|_| CryptoError::InvalidSignature)?;
    Ok(address_of(&key))
}

/// Returns the malleated twin `(v', r, n - s)` of a signature. Test and
/// adversary tooling only; `recover` rejects the result.
pub fn malleate(sig: &RecoverableSignature) -> RecoverableSignature {
    let mut out = [0u8; 32];
    let mut borrow = 0i16;
    for i in (0..32).rev() {
        let mut diff = SECP256K1_ORDER[i] as i16 - sig.s.0[i] as i16 - borrow;
        borrow = if diff < 0 {
            diff += 256;
            1
        } else {
            0
        };
        out[i] = diff as u8;
    }
    RecoverableSignature {
        v: if sig.v == 27 { 28 } else { 27 },
        r: sig.r,
        s: Digest32(out),
    }
}
