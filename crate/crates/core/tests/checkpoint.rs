mod common;

use common::{arb_store, fixture};
use perturbkit::store::{read_checkpoint, read_checkpoint_bytes, write_checkpoint, write_checkpoint_bytes, StoreError, TensorKind, ZoneTag};
use proptest::prelude::*;

#[test]
fn golden_fixture_round_trips_byte_identically() {
    let bytes = std::fs::read(fixture("golden3.pkpt")).unwrap();
    assert_eq!(bytes.len(), 230);
    let store = read_checkpoint(fixture("golden3.pkpt")).unwrap();
    assert_eq!(write_checkpoint_bytes(&store), bytes);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.pkpt");
    write_checkpoint(&store, &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), bytes);
}

#[test]
fn golden_fixture_contents() {
    let store = read_checkpoint(fixture("golden3.pkpt")).unwrap();
    assert_eq!(store.names().collect::<Vec<_>>(), ["emb.weight", "enc.0.w.weight", "enc.0.w.bias"]);
    let emb = store.get("emb.weight").unwrap();
    assert_eq!(emb.shape, vec![4, 3]);
    assert_eq!(emb.kind, TensorKind::Embedding);
    assert_eq!(emb.zone, ZoneTag::new(perturbkit::store::ZoneComponent::Encoder));
    let want: Vec<f32> = (0..12).map(|i| (0.02 * (i as f64 - 6.0)) as f32).collect();
    assert_eq!(emb.data, want);
    let w = store.get("enc.0.w.weight").unwrap();
    assert_eq!(w.zone, ZoneTag::encoder(0));
    assert_eq!(w.data, vec![1.0, -0.5, 0.25, 0.0, 2.0, -1.5, 0.125, 3.0, -0.75]);
    let b = store.get("enc.0.w.bias").unwrap();
    assert_eq!((b.kind, b.data.clone()), (TensorKind::Bias, vec![0.1, -0.2, 0.3]));
}

#[test]
fn corrupted_magic_rejected() {
    match read_checkpoint(fixture("badmagic.pkpt")) {
        Err(StoreError::BadMagic(m)) => assert_eq!(&m, b"XXXX"),
        other => panic!("expected BadMagic, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn any_store_round_trips(store in arb_store()) {
        let bytes = write_checkpoint_bytes(&store);
        let back = read_checkpoint_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(write_checkpoint_bytes(&back), bytes);
    }
}
