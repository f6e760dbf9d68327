use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha1::{Digest, Sha1};

use syncprobe_core::artifacts::parse_manifest;
use syncprobe_core::bencode::{decode, decode_with, encode, BValue, DecodeError, Mode};
use syncprobe_core::digest::Hash20;
use syncprobe_core::identity::{generate_secret, AccessLevel, Secret};
use syncprobe_core::integrity::{index_file, index_file_sequential, verify_content, VerificationStatus};

fn bvalue() -> impl Strategy<Value = BValue> {
    let leaf = prop_oneof![
        any::<i64>().prop_map(BValue::Int),
        prop::collection::vec(any::<u8>(), 0..24).prop_map(BValue::Bytes),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(BValue::List),
            prop::collection::btree_map(prop::collection::vec(any::<u8>(), 0..8), inner, 0..6).prop_map(BValue::Dict),
        ]
    })
}

fn sha1(data: &[u8]) -> [u8; 20] {
    Sha1::digest(data).into()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn bencode_round_trip(v in bvalue()) {
        let bytes = encode(&v);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(encode(&back), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn lenient_decode_reaches_canonical_fixpoint(
        entries in prop::collection::btree_map(prop::collection::vec(b'a'..=b'z', 1..6), any::<i64>(), 1..8)
            .prop_map(|m| m.into_iter().collect::<Vec<_>>())
            .prop_shuffle()
    ) {
        // distinct keys in arbitrary order
        let mut raw = b"d".to_vec();
        for (k, v) in &entries {
            raw.extend(format!("{}:", k.len()).as_bytes());
            raw.extend(k);
            raw.extend(format!("i{v}e").as_bytes());
        }
        raw.push(b'e');
        let v = decode_with(&raw, Mode::Lenient).unwrap();
        let canon = encode(&v);
        prop_assert_eq!(decode(&canon).unwrap(), v.clone());
        prop_assert_eq!(encode(&decode(&canon).unwrap()), canon.clone());
        let canonical_input = entries.windows(2).all(|w| w[0].0 < w[1].0);
        prop_assert_eq!(canonical_input, canon == raw);
    }

    #[test]
    fn strict_rejects_unsorted_keys(
        keys in prop::collection::btree_set(prop::collection::vec(any::<u8>(), 0..6), 2..6),
        swap in any::<prop::sample::Index>(),
    ) {
        let mut keys: Vec<_> = keys.into_iter().collect();
        let i = swap.index(keys.len() - 1);
        keys.swap(i, i + 1);
        let mut raw = b"d".to_vec();
        for k in &keys {
            raw.extend(format!("{}:", k.len()).as_bytes());
            raw.extend(k);
            raw.extend(b"i0e");
        }
        raw.push(b'e');
        let err = decode(&raw).unwrap_err();
        prop_assert!(matches!(err, DecodeError::NonCanonical { .. }), "{:?}", err);
        prop_assert!(decode_with(&raw, Mode::Lenient).is_ok());
    }

    #[test]
    fn strict_rejects_trailing_bytes(v in bvalue(), tail in prop::collection::vec(any::<u8>(), 1..8)) {
        let mut raw = encode(&v);
        let len = raw.len();
        raw.extend(&tail);
        match decode(&raw) {
            Err(DecodeError::TrailingBytes { offset, count }) => {
                prop_assert_eq!(offset, len);
                prop_assert_eq!(count, tail.len());
            }
            other => prop_assert!(false, "expected trailing-bytes error, got {:?}", other),
        }
    }

    #[test]
    fn secret_text_round_trip(payload in any::<[u8; 32]>(), level in prop::sample::select(vec![AccessLevel::Master, AccessLevel::ReadOnly, AccessLevel::Encrypted])) {
        let s = Secret::new(level, payload);
        let text = s.to_text();
        prop_assert_eq!(text.len(), 53);
        prop_assert_eq!(Secret::from_text(&text).unwrap(), s);
    }

    #[test]
    fn index_matches_oracle(content in prop::collection::vec(any::<u8>(), 0..4096), piece_len in 1u64..700) {
        let idx = index_file(&content, piece_len).unwrap();
        let mut concat = Vec::new();
        for chunk in content.chunks(piece_len as usize) {
            concat.extend(sha1(chunk));
        }
        prop_assert_eq!(idx.aggregate_hash.0, sha1(&concat));
        prop_assert_eq!(idx.whole_file_hash.0, sha1(&content));
        prop_assert_eq!(&idx, &index_file_sequential(&content, piece_len).unwrap());
        let meta = idx.to_meta("f");
        prop_assert_eq!(verify_content(&content, &meta).status, VerificationStatus::FullMatch);
    }
}

#[test]
fn share_id_invariant_over_seeded_secrets() {
    for seed in 0..1000u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let master = generate_secret(AccessLevel::Master, &mut rng).unwrap();
        let ro = master.derive_readonly().unwrap();
        assert_eq!(master.share_id().unwrap(), ro.share_id().unwrap());
        // independent oracle: SHA1 of the raw read-only secret bytes
        let mut raw = vec![b'B'];
        raw.extend(ro.payload());
        assert_eq!(ro.to_bytes().to_vec(), raw);
        assert_eq!(master.share_id().unwrap().0, sha1(&raw));
        assert_eq!(Secret::from_text(&master.to_text()).unwrap(), master);
        assert_eq!(Secret::from_text(&ro.to_text()).unwrap(), ro);
    }
}

#[test]
fn aggregate_oracle_at_boundary_sizes() {
    for size in [0usize, 1, 32767, 32768, 32769, 163857] {
        let content: Vec<u8> = (0..size).map(|i| (i * 31 % 251) as u8).collect();
        let idx = index_file(&content, 32768).unwrap();
        // zero pieces for empty content, so the concatenation is empty
        let concat: Vec<u8> = content.chunks(32768).flat_map(sha1).collect();
        assert_eq!(idx.aggregate_hash.0, sha1(&concat), "size {size}");
        if (1..=32768).contains(&size) {
            assert_eq!(idx.aggregate_hash.0, sha1(&sha1(&content)), "size {size}");
        }
    }
}

#[test]
fn poc_manifest_fixture() {
    let m = parse_manifest(include_bytes!("fixtures/poc_manifest.db")).unwrap();
    let got: Vec<(&str, u64, String)> = m.files.iter().map(|f| (f.path.as_str(), f.size, f.hash20.to_hex())).collect();
    assert_eq!(
        got,
        vec![
            ("badfileone.txt", 19, "58B47FB1467AEB0BEFE6FE1BD6255A5C24B552A0".to_string()),
            ("badfiletwo.txt", 124, "B47C7586BC82B27A8441A8E4C07F77874CC67557".to_string()),
            ("badfilethree.txt", 152, "3598492B4D1CE5FAFD9EF76E8FA54C8F55E0716A".to_string()),
        ]
    );
    assert!(m.aggregate_mismatches().is_empty());
    for f in &m.files {
        assert_eq!(m.meta(&f.path).unwrap().piece_hashes, vec![f.hash20]);
    }
    assert_eq!(Hash20::of(b"").to_hex(), "DA39A3EE5E6B4B0D3255BFEF95601890AFD80709");
}
