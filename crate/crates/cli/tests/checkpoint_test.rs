//! Checkpoint container: bit-exact round trips, corruption detection, and
//! the config consistency gate.

use dhvt_cli::checkpoint::{
    decode, decode_raw, encode, load_checkpoint, save_checkpoint, LoadedStore,
};
use dhvt_cli::error::CliError;
use dhvt_core::model::{build_model, ModelConfig};
use dhvt_core::params::ParamStore;
use dhvt_core::tensor::Tensor;

fn micro() -> ModelConfig {
    ModelConfig::new((8, 8), 4, 16, 1, 2, 3)
}

#[test]
fn roundtrip_is_bitwise_and_order_preserving() {
    let cfg = micro();
    let store = build_model::<f32>(&cfg, 42).unwrap();
    let bytes = encode(&store, &cfg).unwrap();
    let (cfg2, loaded) = decode(&bytes).unwrap();
    assert_eq!(cfg, cfg2);
    let LoadedStore::F32(loaded) = loaded else {
        panic!("expected f32 store");
    };
    let names_a: Vec<_> = store.iter().map(|(n, _)| n.to_string()).collect();
    let names_b: Vec<_> = loaded.iter().map(|(n, _)| n.to_string()).collect();
    assert_eq!(names_a, names_b, "name order must survive the round trip");
    for (name, entry) in store.iter() {
        let other = loaded.get(name).unwrap();
        assert_eq!(entry.tensor.shape(), other.shape());
        assert!(entry
            .tensor
            .data()
            .iter()
            .zip(other.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn save_load_save_produces_identical_bytes() {
    let cfg = micro();
    let store = build_model::<f64>(&cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.dhvt");
    let p2 = dir.path().join("b.dhvt");
    save_checkpoint(&store, &cfg, &p1).unwrap();
    let (cfg2, loaded) = load_checkpoint(&p1).unwrap();
    let LoadedStore::F64(loaded) = loaded else {
        panic!("expected f64 store");
    };
    save_checkpoint(&loaded, &cfg2, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn every_flipped_payload_byte_is_detected() {
    let cfg = micro();
    let store = build_model::<f32>(&cfg, 3).unwrap();
    let bytes = encode(&store, &cfg).unwrap();
    // Flip a handful of spread-out payload bytes (never the magic).
    for at in [4usize, 17, bytes.len() / 2, bytes.len() - 5] {
        let mut corrupted = bytes.clone();
        corrupted[at] ^= 0x40;
        let err = decode(&corrupted).unwrap_err();
        assert!(
            matches!(err, CliError::Format(_)),
            "byte {at}: expected format error, got {err}"
        );
    }
}

#[test]
fn empty_store_is_a_valid_container() {
    let cfg = micro();
    let store = ParamStore::<f32>::new();
    let bytes = encode(&store, &cfg).unwrap();
    let (_, loaded) = decode_raw(&bytes).unwrap();
    match loaded {
        LoadedStore::F32(s) => assert!(s.is_empty()),
        LoadedStore::F64(_) => panic!("empty container defaults to f32"),
    }
    // The validated path rejects it: the config implies tensors.
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, CliError::Consistency(_)), "{err}");
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let cfg = micro();
    let store = build_model::<f32>(&cfg, 3).unwrap();
    let bytes = encode(&store, &cfg).unwrap();
    assert!(matches!(
        decode(&bytes[..bytes.len() - 9]).unwrap_err(),
        CliError::Format(_)
    ));
    assert!(matches!(
        decode(b"PNG\x89 not us").unwrap_err(),
        CliError::Format(_)
    ));
}

#[test]
fn version_mismatch_is_rejected() {
    let cfg = micro();
    let store = build_model::<f32>(&cfg, 3).unwrap();
    let mut bytes = encode(&store, &cfg).unwrap();
    // Bump the version field and fix up the CRC so only the version differs.
    bytes[4] = 99;
    let crc = crc32fast::hash(&bytes[4..bytes.len() - 4]);
    let at = bytes.len() - 4;
    bytes[at..].copy_from_slice(&crc.to_le_bytes());
    let err = decode(&bytes).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn tensor_count_mismatch_is_a_consistency_error() {
    let cfg = micro();
    let mut store = build_model::<f32>(&cfg, 3).unwrap();
    store
        .insert("stray_tensor", Tensor::<f32>::zeros(vec![3]), true)
        .unwrap();
    let bytes = encode(&store, &cfg).unwrap();
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, CliError::Consistency(_)), "{err}");
}

#[test]
fn f64_checkpoints_round_trip_through_disk() {
    let cfg = micro();
    let store = build_model::<f64>(&cfg, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dhvt");
    save_checkpoint(&store, &cfg, &path).unwrap();
    let (_, loaded) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.dtype(), dhvt_core::Dtype::F64);
}
