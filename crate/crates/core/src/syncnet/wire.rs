use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bencode::{decode_with, BValue, Mode};
use crate::identity::{PeerId, ShareId};

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    MulticastPing,
    TrackerAnnounce,
    TrackerResponse,
    DhtAnnounce,
    DhtGetPeers,
    DhtPeers,
    Hello,
    Challenge,
    Auth,
    ManifestRequest,
    ManifestResponse,
    PieceRequest,
    PieceResponse,
    Error,
}

impl MessageKind {
    pub const ALL: [MessageKind; 14] = [
        MessageKind::MulticastPing,
        MessageKind::TrackerAnnounce,
        MessageKind::TrackerResponse,
        MessageKind::DhtAnnounce,
        MessageKind::DhtGetPeers,
        MessageKind::DhtPeers,
        MessageKind::Hello,
        MessageKind::Challenge,
        MessageKind::Auth,
        MessageKind::ManifestRequest,
        MessageKind::ManifestResponse,
        MessageKind::PieceRequest,
        MessageKind::PieceResponse,
        MessageKind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::MulticastPing => "MULTICAST_PING",
            MessageKind::TrackerAnnounce => "TRACKER_ANNOUNCE",
            MessageKind::TrackerResponse => "TRACKER_RESPONSE",
            MessageKind::DhtAnnounce => "DHT_ANNOUNCE",
            MessageKind::DhtGetPeers => "DHT_GET_PEERS",
            MessageKind::DhtPeers => "DHT_PEERS",
            MessageKind::Hello => "HELLO",
            MessageKind::Challenge => "CHALLENGE",
            MessageKind::Auth => "AUTH",
            MessageKind::ManifestRequest => "MANIFEST_REQUEST",
            MessageKind::ManifestResponse => "MANIFEST_RESPONSE",
            MessageKind::PieceRequest => "PIECE_REQUEST",
            MessageKind::PieceResponse => "PIECE_RESPONSE",
            MessageKind::Error => "ERROR",
        }
    }
}

impl FromStr for MessageKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        MessageKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A protocol message: a bencoded dictionary whose `m` key names the kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub body: BTreeMap<Vec<u8>, BValue>,
}

impl WireMessage {
    pub fn new(kind: MessageKind, share: Option<&ShareId>) -> WireMessage {
        let msg = WireMessage {
            kind,
            body: BTreeMap::new(),
        };
        match share {
            Some(s) => msg.with("share", s.as_bytes().to_vec()),
            None => msg,
        }
    }

    pub fn error(share: Option<&ShareId>, code: &str, detail: impl Into<String>) -> WireMessage {
        WireMessage::new(MessageKind::Error, share)
            .with("code", code)
            .with("detail", detail.into().as_str())
    }

    pub fn with(mut self, key: &str, value: impl Into<BValue>) -> WireMessage {
        self.body.insert(key.as_bytes().to_vec(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&BValue> {
        self.body.get(key.as_bytes())
    }

    pub fn bytes(&self, key: &str) -> Option<&[u8]> {
        self.get(key).and_then(BValue::as_bytes)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(BValue::as_str)
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        self.get(key).and_then(BValue::as_int)
    }

    pub fn share(&self) -> Option<ShareId> {
        self.bytes("share").and_then(ShareId::from_slice)
    }

    pub fn peer_id(&self) -> Option<PeerId> {
        self.bytes("peer_id").and_then(PeerId::from_slice)
    }

    pub fn require_bytes(&self, key: &str) -> Result<&[u8], NetError> {
        self.bytes(key)
            .ok_or_else(|| NetError::Protocol(format!("{}: missing byte string `{key}`", self.kind)))
    }

    pub fn require_int(&self, key: &str) -> Result<i64, NetError> {
        self.int(key)
            .ok_or_else(|| NetError::Protocol(format!("{}: missing integer `{key}`", self.kind)))
    }

    pub fn to_bvalue(&self) -> BValue {
        let mut d = self.body.clone();
        d.insert(b"m".to_vec(), BValue::str(self.kind.as_str()));
        BValue::Dict(d)
    }

    /// Canonical encoding.
    pub fn encode(&self) -> Vec<u8> {
        self.to_bvalue().encode()
    }

    /// Parses a datagram. Unsorted keys are tolerated; anything structurally
    /// wrong is a protocol error rather than a panic.
    pub fn decode(bytes: &[u8]) -> Result<WireMessage, NetError> {
        let v = decode_with(bytes, Mode::Lenient)?;
        let BValue::Dict(mut body) = v else {
            return Err(NetError::Protocol("message is not a dictionary".into()));
        };
        let kind = body
            .remove(b"m".as_slice())
            .and_then(|m| m.as_str().and_then(|s| s.parse().ok()))
            .ok_or_else(|| NetError::Protocol("missing or unknown `m`".into()))?;
        let msg = WireMessage { kind, body };
        if kind != MessageKind::Hello && msg.share().is_none() {
            return Err(NetError::Protocol(format!("{kind}: missing 20-byte `share`")));
        }
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_with_m_key_canonically() {
        let share = ShareId([1; 20]);
        let msg = WireMessage::new(MessageKind::PieceRequest, Some(&share))
            .with("path", "a.txt")
            .with("index", 3);
        let bytes = msg.encode();
        assert!(bytes.starts_with(b"d5:indexi3e1:m13:PIECE_REQUEST4:path5:a.txt5:share20:"));
        assert_eq!(WireMessage::decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn non_hello_requires_share() {
        let bytes = WireMessage::new(MessageKind::Auth, None).encode();
        assert!(matches!(WireMessage::decode(&bytes), Err(NetError::Protocol(_))));
        let hello = WireMessage::new(MessageKind::Hello, None).encode();
        assert!(WireMessage::decode(&hello).is_ok());
    }

    #[test]
    fn lenient_about_key_order() {
        let raw = b"d5:share20:aaaaaaaaaaaaaaaaaaaa1:m5:ERRORe";
        let msg = WireMessage::decode(raw).unwrap();
        assert_eq!(msg.kind, MessageKind::Error);
    }

    #[test]
    fn garbage_is_an_error_not_a_panic() {
        for raw in [&b""[..], b"i1e", b"d1:m3:FOOe", b"d1:mi1ee", b"l"] {
            assert!(WireMessage::decode(raw).is_err());
        }
    }
}
