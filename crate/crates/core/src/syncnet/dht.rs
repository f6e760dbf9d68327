use crate::identity::{PeerId, ShareId};

/// Storage replication factor.
pub const DHT_K: usize = 2;

pub fn xor_distance(a: &[u8; 20], b: &[u8; 20]) -> [u8; 20] {
    let mut out = [0u8; 20];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        *o = x ^ y;
    }
    out
}

/// The `k` candidates whose PeerIDs are XOR-closest to `share`, nearest
/// first. Ties (equal PeerIDs) keep input order.
pub fn dht_closest<T: Clone>(share: &ShareId, candidates: &[(PeerId, T)], k: usize) -> Vec<T> {
    let mut ranked: Vec<(usize, [u8; 20])> = candidates
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (i, xor_distance(id.as_bytes(), share.as_bytes())))
        .collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(i, _)| candidates[i].1.clone()).collect()
}
