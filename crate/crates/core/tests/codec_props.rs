//! Round-trip and canonicity over seeded random messages, one test per layer.

mod common;

use common::{codec_suite, SUITE_CASES};

fn layer(name: &str) {
    if let Err(e) = codec_suite(name, SUITE_CASES) {
        panic!("{name}: {e}");
    }
}

#[test]
fn mac() {
    layer("mac");
}

#[test]
fn rlc() {
    layer("rlc");
}

#[test]
fn pdcp() {
    layer("pdcp");
}

#[test]
fn rrc() {
    layer("rrc");
}

#[test]
fn nas() {
    layer("nas");
}

#[test]
fn suci() {
    layer("suci");
}

#[test]
fn full_stack() {
    layer("stack");
}

mod raw_bytes {
    use proptest::prelude::*;
    use ulshadow_core::codecs::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

        // Arbitrary input never panics, and whatever is accepted re-encodes
        // to the same bytes.
        #[test]
        fn decoders_are_canonical(b in prop::collection::vec(any::<u8>(), 0..48)) {
            if let Ok(v) = decode_mac_pdu(&b) { prop_assert_eq!(encode_mac_pdu(&v).unwrap(), b.clone()); }
            if let Ok(v) = decode_rlc(&b) { prop_assert_eq!(encode_rlc(&v).unwrap(), b.clone()); }
            if let Ok(v) = decode_pdcp(&b) { prop_assert_eq!(encode_pdcp(&v).unwrap(), b.clone()); }
            if let Ok(v) = decode_rrc(&b) { prop_assert_eq!(encode_rrc(&v).unwrap(), b.clone()); }
            if let Ok(v) = decode_nas(&b) { prop_assert_eq!(encode_nas(&v).unwrap(), b.clone()); }
            let _ = decode_uplink(&b);
        }
    }
}
