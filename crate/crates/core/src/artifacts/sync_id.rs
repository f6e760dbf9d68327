use crate::identity::ShareId;

use super::{ArtifactError, Result};

/// `.SyncID` holds the 20 raw bytes of the folder's ShareID.
pub fn parse_sync_id(bytes: &[u8]) -> Result<ShareId> {
    ShareId::from_slice(bytes).ok_or(ArtifactError::BadLength {
        expected: 20,
        actual: bytes.len(),
    })
}

pub fn write_sync_id(id: &ShareId) -> Vec<u8> {
    id.0.to_vec()
}
