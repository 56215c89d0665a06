use std::fmt;
use std::str::FromStr;

use blake2::digest::consts::U32;
use blake2::Blake2b;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sha3::Sha3_256;

use super::ChainError;

/// 32-byte digest produced by every supported hash function.
pub type Hash256 = [u8; 32];

/// Hash functions a chain's script language may offer for hash-locks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HashFnId {
    #[serde(rename = "SHA256")]
    Sha256,
    #[serde(rename = "SHA3_256")]
    Sha3_256,
    #[serde(rename = "BLAKE2B_256")]
    Blake2b256,
}

impl HashFnId {
    pub const ALL: [HashFnId; 3] = [HashFnId::Sha256, HashFnId::Sha3_256, HashFnId::Blake2b256];

    pub fn code(self) -> u8 {
        match self {
            HashFnId::Sha256 => 0,
            HashFnId::Sha3_256 => 1,
            HashFnId::Blake2b256 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ChainError> {
        match code {
            0 => Ok(HashFnId::Sha256),
            1 => Ok(HashFnId::Sha3_256),
            2 => Ok(HashFnId::Blake2b256),
            other => Err(ChainError::UnknownHashFunction(format!("code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HashFnId::Sha256 => "SHA256",
            HashFnId::Sha3_256 => "SHA3_256",
            HashFnId::Blake2b256 => "BLAKE2B_256",
        }
    }

    pub fn digest(self, data: &[u8]) -> Hash256 {
        hash_digest(self, data)
    }
}

impl fmt::Display for HashFnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HashFnId {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HashFnId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ChainError::UnknownHashFunction(s.to_string()))
    }
}

pub fn hash_digest(fn_id: HashFnId, data: &[u8]) -> Hash256 {
    match fn_id {
        HashFnId::Sha256 => Sha256::digest(data).into(),
        HashFnId::Sha3_256 => Sha3_256::digest(data).into(),
        HashFnId::Blake2b256 => Blake2b::<U32>::digest(data).into(),
    }
}

pub(crate) fn sha256(data: &[u8]) -> Hash256 {
    hash_digest(HashFnId::Sha256, data)
}
