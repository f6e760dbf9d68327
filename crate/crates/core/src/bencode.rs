//! Canonical bencode encoder and decoder.
//!
//! Every artifact file and every wire message in this crate is a bencoded
//! value. Encoding is always canonical: dictionary keys are emitted in
//! ascending unsigned byte order, integers carry no leading zeros and zero is
//! never negative. Decoding is strict by default; [`Mode::Lenient`] relaxes
//! the canonical-form checks for input received from untrusted peers.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Nesting limit for decoding. Hostile input must not exhaust the stack.
const MAX_DEPTH: usize = 64;

/// A decoded bencode value.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BValue {
    Bytes(Vec<u8>),
    Int(i64),
    List(Vec<BValue>),
    Dict(BTreeMap<Vec<u8>, BValue>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input truncated at byte {offset}")]
    TruncatedInput { offset: usize },
    #[error("{count} trailing byte(s) after value ending at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("malformed token at byte {offset}: {reason}")]
    MalformedToken { offset: usize, reason: &'static str },
    #[error("non-canonical encoding at byte {offset}: {reason}")]
    NonCanonical { offset: usize, reason: &'static str },
}

impl DecodeError {
    /// Byte offset in the input where decoding failed.
    pub fn offset(&self) -> usize {
        match *self {
            DecodeError::TruncatedInput { offset }
            | DecodeError::TrailingBytes { offset, .. }
            | DecodeError::MalformedToken { offset, .. }
            | DecodeError::NonCanonical { offset, .. } => offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Reject anything that would not re-encode to the same bytes.
    #[default]
    Strict,
    /// Accept unsorted dictionary keys, leading zeros and negative zero.
    Lenient,
}

impl BValue {
    pub fn bytes(b: impl Into<Vec<u8>>) -> BValue {
        BValue::Bytes(b.into())
    }

    pub fn str(s: &str) -> BValue {
        BValue::Bytes(s.as_bytes().to_vec())
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            BValue::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        self.as_bytes().and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            BValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[BValue]> {
        match self {
            BValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_dict(&self) -> Option<&BTreeMap<Vec<u8>, BValue>> {
        match self {
            BValue::Dict(d) => Some(d),
            _ => None,
        }
    }

    /// Looks up `key` when `self` is a dictionary.
    pub fn get(&self, key: &str) -> Option<&BValue> {
        self.as_dict().and_then(|d| d.get(key.as_bytes()))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            BValue::Bytes(_) => "byte string",
            BValue::Int(_) => "integer",
            BValue::List(_) => "list",
            BValue::Dict(_) => "dictionary",
        }
    }

    /// Canonical encoding of this value.
    pub fn encode(&self) -> Vec<u8> {
        encode(self)
    }
}

impl From<i64> for BValue {
    fn from(i: i64) -> Self {
        BValue::Int(i)
    }
}

impl From<&str> for BValue {
    fn from(s: &str) -> Self {
        BValue::str(s)
    }
}

impl From<Vec<u8>> for BValue {
    fn from(b: Vec<u8>) -> Self {
        BValue::Bytes(b)
    }
}

impl From<Vec<BValue>> for BValue {
    fn from(l: Vec<BValue>) -> Self {
        BValue::List(l)
    }
}

impl From<BTreeMap<Vec<u8>, BValue>> for BValue {
    fn from(d: BTreeMap<Vec<u8>, BValue>) -> Self {
        BValue::Dict(d)
    }
}

impl fmt::Debug for BValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BValue::Bytes(b) => match std::str::from_utf8(b) {
                Ok(s) if !s.chars().any(char::is_control) => write!(f, "{s:?}"),
                _ => write!(f, "0x{}", hex::encode_upper(b)),
            },
            BValue::Int(i) => write!(f, "{i}"),
            BValue::List(l) => f.debug_list().entries(l).finish(),
            BValue::Dict(d) => f
                .debug_map()
                .entries(d.iter().map(|(k, v)| (BValue::Bytes(k.clone()), v)))
                .finish(),
        }
    }
}

/// Builder for dictionaries with `&str` keys.
#[derive(Debug, Default, Clone)]
pub struct DictBuilder(BTreeMap<Vec<u8>, BValue>);

impl DictBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(mut self, key: &str, value: impl Into<BValue>) -> Self {
        self.0.insert(key.as_bytes().to_vec(), value.into());
        self
    }

    pub fn insert_opt(self, key: &str, value: Option<impl Into<BValue>>) -> Self {
        match value {
            Some(v) => self.insert(key, v),
            None => self,
        }
    }

    pub fn build(self) -> BValue {
        BValue::Dict(self.0)
    }
}

pub fn encode(value: &BValue) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(value, &mut out);
    out
}

pub fn encode_into(value: &BValue, out: &mut Vec<u8>) {
    match value {
        BValue::Bytes(b) => {
            out.extend_from_slice(b.len().to_string().as_bytes());
            out.push(b':');
            out.extend_from_slice(b);
        }
        BValue::Int(i) => {
            out.push(b'i');
            out.extend_from_slice(i.to_string().as_bytes());
            out.push(b'e');
        }
        BValue::List(items) => {
            out.push(b'l');
            for item in items {
                encode_into(item, out);
            }
            out.push(b'e');
        }
        BValue::Dict(entries) => {
            out.push(b'd');
            // BTreeMap<Vec<u8>, _> iterates in unsigned lexicographic order.
            for (k, v) in entries {
                out.extend_from_slice(k.len().to_string().as_bytes());
                out.push(b':');
                out.extend_from_slice(k);
                encode_into(v, out);
            }
            out.push(b'e');
        }
    }
}

/// Strict decode of a complete input.
pub fn decode(input: &[u8]) -> Result<BValue, DecodeError> {
    decode_with(input, Mode::Strict)
}

pub fn decode_with(input: &[u8], mode: Mode) -> Result<BValue, DecodeError> {
    let mut parser = Parser { input, pos: 0, mode };
    let value = parser.value(0)?;
    if parser.pos != input.len() {
        return Err(DecodeError::TrailingBytes {
            offset: parser.pos,
            count: input.len() - parser.pos,
        });
    }
    Ok(value)
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    mode: Mode,
}

impl Parser<'_> {
    fn peek(&self) -> Result<u8, DecodeError> {
        self.input
            .get(self.pos)
            .copied()
            .ok_or(DecodeError::TruncatedInput { offset: self.pos })
    }

    fn strict(&self) -> bool {
        self.mode == Mode::Strict
    }

    fn value(&mut self, depth: usize) -> Result<BValue, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(DecodeError::MalformedToken {
                offset: self.pos,
                reason: "nesting too deep",
            });
        }
        match self.peek()? {
            b'i' => self.int().map(BValue::Int),
            b'l' => {
                self.pos += 1;
                let mut items = Vec::new();
                while self.peek()? != b'e' {
                    items.push(self.value(depth + 1)?);
                }
                self.pos += 1;
                Ok(BValue::List(items))
            }
            b'd' => self.dict(depth),
            b'0'..=b'9' => self.byte_string().map(BValue::Bytes),
            _ => Err(DecodeError::MalformedToken {
                offset: self.pos,
                reason: "unexpected byte at start of value",
            }),
        }
    }

    fn dict(&mut self, depth: usize) -> Result<BValue, DecodeError> {
        self.pos += 1;
        let mut entries = BTreeMap::new();
        let mut prev: Option<Vec<u8>> = None;
        while self.peek()? != b'e' {
            let key_offset = self.pos;
            if !self.peek()?.is_ascii_digit() {
                return Err(DecodeError::MalformedToken {
                    offset: key_offset,
                    reason: "dictionary key is not a byte string",
                });
            }
            let key = self.byte_string()?;
            if self.strict() && prev.as_ref().is_some_and(|p| key < *p) {
                return Err(DecodeError::NonCanonical {
                    offset: key_offset,
                    reason: "dictionary keys out of order",
                });
            }
            if entries.contains_key(&key) {
                return Err(DecodeError::MalformedToken {
                    offset: key_offset,
                    reason: "duplicate dictionary key",
                });
            }
            let value = self.value(depth + 1)?;
            prev = Some(key.clone());
            entries.insert(key, value);
        }
        self.pos += 1;
        Ok(BValue::Dict(entries))
    }

    fn int(&mut self) -> Result<i64, DecodeError> {
        let start = self.pos;
        self.pos += 1;
        let digits_start = self.pos;
        let end = self.input[digits_start..]
            .iter()
            .position(|&b| b == b'e')
            .map(|i| digits_start + i)
            .ok_or(DecodeError::TruncatedInput {
                offset: self.input.len(),
            })?;
        let text = &self.input[digits_start..end];
        let (negative, digits) = match text.first() {
            Some(b'-') => (true, &text[1..]),
            _ => (false, text),
        };
        if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
            return Err(DecodeError::MalformedToken {
                offset: start,
                reason: "integer is not a decimal number",
            });
        }
        if self.strict() {
            if digits.len() > 1 && digits[0] == b'0' {
                return Err(DecodeError::NonCanonical {
                    offset: start,
                    reason: "integer has leading zero",
                });
            }
            if negative && digits == b"0" {
                return Err(DecodeError::NonCanonical {
                    offset: start,
                    reason: "negative zero",
                });
            }
        }
        // Digits are ASCII so the slice is valid UTF-8.
        let parsed = std::str::from_utf8(text)
            .ok()
            .and_then(|s| s.parse::<i64>().ok())
            .ok_or(DecodeError::MalformedToken {
                offset: start,
                reason: "integer outside signed 64-bit range",
            })?;
        self.pos = end + 1;
        Ok(parsed)
    }

    fn byte_string(&mut self) -> Result<Vec<u8>, DecodeError> {
        let start = self.pos;
        let colon = self.input[start..]
            .iter()
            .position(|&b| b == b':')
            .map(|i| start + i)
            .ok_or(DecodeError::TruncatedInput {
                offset: self.input.len(),
            })?;
        let digits = &self.input[start..colon];
        if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
            return Err(DecodeError::MalformedToken {
                offset: start,
                reason: "bad byte-string length prefix",
            });
        }
        if self.strict() && digits.len() > 1 && digits[0] == b'0' {
            return Err(DecodeError::NonCanonical {
                offset: start,
                reason: "length prefix has leading zero",
            });
        }
        let len: usize = std::str::from_utf8(digits)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(DecodeError::MalformedToken {
                offset: start,
                reason: "byte-string length too large",
            })?;
        let body = colon + 1;
        let end = body.checked_add(len).ok_or(DecodeError::MalformedToken {
            offset: start,
            reason: "byte-string length too large",
        })?;
        if end > self.input.len() {
            return Err(DecodeError::TruncatedInput {
                offset: self.input.len(),
            });
        }
        self.pos = end;
        Ok(self.input[body..end].to_vec())
    }
}
