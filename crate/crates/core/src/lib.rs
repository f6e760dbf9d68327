//! Simulator and forensic acquisition engine for a BitTorrent-Sync-style
//! decentralized file synchronization network.
//!
//! The crate is split by concern:
//!
//! * [`bencode`]: canonical encoding used by every artifact and wire message.
//! * [`identity`]: secrets, ShareIDs and PeerIDs.
//! * [`artifacts`]: the on-disk files a client leaves behind.
//! * [`integrity`]: piece hashing and verification.
//! * [`syncnet`]: a deterministic discrete-event simulation of the network.
//! * [`acquisition`]: discovery, investigation, enumeration, recovery and
//!   verification of remote evidence.

pub mod bencode;
pub mod digest;
pub mod identity;
pub mod artifacts;
pub mod integrity;
pub mod syncnet;
pub mod acquisition;
