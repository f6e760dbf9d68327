//! Share secrets, ShareIDs and PeerIDs.
//!
//! A secret is 33 raw bytes: one access-level byte followed by a 32-byte
//! payload. Humans see it as 53 characters of unpadded RFC 4648 Base32. The
//! read-only secret of a share is derived one-way from its master secret, and
//! both map to the same ShareID so read/write and read-only holders meet on
//! the same discovery key.

use std::fmt;
use std::str::FromStr;

use data_encoding::BASE32_NOPAD;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digest::Hash20;

pub const SECRET_LEN: usize = 33;
pub const SECRET_TEXT_LEN: usize = 53;
const READONLY_DOMAIN: u8 = 0x52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessLevel {
    Master,
    ReadOnly,
    Encrypted,
}

impl AccessLevel {
    pub fn byte(self) -> u8 {
        match self {
            AccessLevel::Master => b'A',
            AccessLevel::ReadOnly => b'B',
            AccessLevel::Encrypted => b'D',
        }
    }

    pub fn from_byte(b: u8) -> Option<AccessLevel> {
        match b {
            b'A' => Some(AccessLevel::Master),
            b'B' => Some(AccessLevel::ReadOnly),
            b'D' => Some(AccessLevel::Encrypted),
            _ => None,
        }
    }
}

impl fmt::Display for AccessLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessLevel::Master => "master",
            AccessLevel::ReadOnly => "read-only",
            AccessLevel::Encrypted => "encrypted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("secrets can only be generated at master level, not {0}")]
    InvalidLevel(AccessLevel),
    #[error("{0} secrets are not supported here")]
    UnsupportedLevel(AccessLevel),
    #[error("secret text must be {SECRET_TEXT_LEN} characters, got {0}")]
    BadLength(usize),
    #[error("character {ch:?} at position {position} is not valid unpadded Base32")]
    BadAlphabet { position: usize, ch: char },
    #[error("unknown access byte 0x{0:02X}")]
    UnknownAccessByte(u8),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Secret {
    level: AccessLevel,
    payload: [u8; 32],
}

impl Secret {
    pub fn new(level: AccessLevel, payload: [u8; 32]) -> Secret {
        Secret { level, payload }
    }

    pub fn level(&self) -> AccessLevel {
        self.level
    }

    pub fn payload(&self) -> &[u8; 32] {
        &self.payload
    }

    pub fn to_bytes(&self) -> [u8; SECRET_LEN] {
        let mut out = [0u8; SECRET_LEN];
        out[0] = self.level.byte();
        out[1..].copy_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Secret, IdentityError> {
        if bytes.len() != SECRET_LEN {
            return Err(IdentityError::BadLength(bytes.len()));
        }
        let level =
            AccessLevel::from_byte(bytes[0]).ok_or(IdentityError::UnknownAccessByte(bytes[0]))?;
        let mut payload = [0u8; 32];
        payload.copy_from_slice(&bytes[1..]);
        Ok(Secret { level, payload })
    }

    /// Derives the read-only secret of a master secret.
    pub fn derive_readonly(&self) -> Result<Secret, IdentityError> {
        if self.level != AccessLevel::Master {
            return Err(IdentityError::InvalidLevel(self.level));
        }
        let mut h = Sha256::new();
        h.update([READONLY_DOMAIN]);
        h.update(self.payload);
        Ok(Secret {
            level: AccessLevel::ReadOnly,
            payload: h.finalize().into(),
        })
    }

    /// ShareID = SHA1 of the 33 raw bytes of the share's read-only secret.
    pub fn share_id(&self) -> Result<ShareId, IdentityError> {
        let readonly = match self.level {
            AccessLevel::Master => self.derive_readonly()?,
            AccessLevel::ReadOnly => self.clone(),
            AccessLevel::Encrypted => return Err(IdentityError::UnsupportedLevel(self.level)),
        };
        Ok(ShareId(Hash20::of(&readonly.to_bytes()).0))
    }

    pub fn to_text(&self) -> String {
        BASE32_NOPAD.encode(&self.to_bytes())
    }

    pub fn from_text(text: &str) -> Result<Secret, IdentityError> {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() != SECRET_TEXT_LEN {
            return Err(IdentityError::BadLength(chars.len()));
        }
        if let Some((position, &ch)) = chars
            .iter()
            .enumerate()
            .find(|(_, c)| !is_base32_char(**c))
        {
            return Err(IdentityError::BadAlphabet { position, ch });
        }
        // 53 chars carry 265 bits; the final bit must be zero.
        let raw = BASE32_NOPAD
            .decode(text.as_bytes())
            .map_err(|e| IdentityError::BadAlphabet {
                position: e.position,
                ch: chars[e.position.min(chars.len() - 1)],
            })?;
        Secret::from_bytes(&raw)
    }
}

pub fn is_base32_char(c: char) -> bool {
    c.is_ascii_uppercase() || ('2'..='7').contains(&c)
}

pub fn is_base32_byte(b: u8) -> bool {
    b.is_ascii_uppercase() || (b'2'..=b'7').contains(&b)
}

/// Draws a master secret from `entropy`.
pub fn generate_secret(
    level: AccessLevel,
    entropy: &mut impl RngCore,
) -> Result<Secret, IdentityError> {
    if level != AccessLevel::Master {
        return Err(IdentityError::InvalidLevel(level));
    }
    let mut payload = [0u8; 32];
    entropy.fill_bytes(&mut payload);
    Ok(Secret::new(AccessLevel::Master, payload))
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret({})", self.to_text())
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for Secret {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Secret::from_text(s)
    }
}

impl Serialize for Secret {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for Secret {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! id20 {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; 20]);

        impl $name {
            pub fn from_slice(bytes: &[u8]) -> Option<$name> {
                <[u8; 20]>::try_from(bytes).ok().map($name)
            }

            pub fn as_bytes(&self) -> &[u8; 20] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode_upper(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = crate::digest::BadHex;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.parse::<Hash20>().map(|h| $name(h.0))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

id20!(ShareId);
id20!(PeerId);

impl PeerId {
    /// Twenty bytes straight from `entropy`.
    pub fn generate(entropy: &mut impl RngCore) -> PeerId {
        let mut id = [0u8; 20];
        entropy.fill_bytes(&mut id);
        PeerId(id)
    }
}

pub fn generate_peer_id(entropy: &mut impl RngCore) -> PeerId {
    PeerId::generate(entropy)
}
