//! Byte-exact vectors for the layouts the attack depends on. The expected
//! hex lives in `golden/vectors.txt`; the structural assertions next to each
//! vector say why the bytes are what they are.

mod common;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulshadow_core::codecs::*;

fn vectors() -> BTreeMap<String, String> {
    common::golden_vectors()
}

fn expect(name: &str, bytes: &[u8]) {
    let v = vectors();
    let want = v.get(name).unwrap_or_else(|| panic!("no vector {name}"));
    assert_eq!(&hex::encode(bytes), want, "{name}");
}

fn fixed_suci() -> Suci {
    Suci { scheme_id: 1, home_network_key_id: 1, ephemeral: [0x11; 8], ciphertext: vec![0x22; 11] }
}

fn registration_request() -> NasMessage {
    NasMessage::RegistrationRequest {
        identity: MobileIdentity::Suci(fixed_suci()),
        capabilities: SecurityCapabilities::poisoned(),
    }
}

#[test]
fn empty_mac_pdu_in_seven_bytes() {
    let b = encode_mac_pdu(&MacPdu::empty(7)).unwrap();
    assert_eq!(b[0] & 0x3F, 63);
    assert!(b[1..].iter().all(|&x| x == 0));
    assert!(decode_mac_pdu(&b).unwrap().is_padding_only());
    expect("mac_padding_only_7", &b);
}

#[test]
fn rlc_full_segment_sn0() {
    let b = encode_rlc(&RlcSegment::full(0, vec![0xAA, 0xBB, 0xCC])).unwrap();
    assert_eq!(b.len(), 5);
    expect("rlc_full_sn0", &b);
}

#[test]
fn pdcp_with_zero_mac_i() {
    let b = encode_pdcp(&PdcpPdu::unprotected(0, vec![0xAA, 0xBB])).unwrap();
    assert_eq!(b.len(), 8);
    assert_eq!(&b[4..], &[0, 0, 0, 0]);
    expect("pdcp_sn0_zero_mac_i", &b);
}

#[test]
fn setup_request_random_value() {
    let m = RrcMessage::SetupRequest {
        ue_identity: InitialUeIdentity::RandomValue(0x1A2B3C4D5),
        cause: EstablishmentCause::MO_SIGNALLING,
    };
    let b = encode_rrc(&m).unwrap();
    assert_eq!(b.len(), 6);
    expect("rrc_setup_request_random", &b);
}

#[test]
fn crnti_ce_is_three_bytes() {
    let b = encode_mac_pdu(&MacPdu::padded(vec![MacSubPdu::CrntiCe(0x4601)], 3).unwrap()).unwrap();
    assert_eq!(b[0], 58);
    expect("mac_crnti_ce_4601", &b);
}

#[test]
fn middle_segment_has_offset() {
    let seg = RlcSegment { sn: 5, si: SegmentInfo::Middle { so: 100 }, data: vec![9] };
    let b = encode_rlc(&seg).unwrap();
    assert_eq!(&b[2..4], &100u16.to_be_bytes());
    expect("rlc_middle_sn5_so100", &b);
}

#[test]
fn pdcp_max_sn() {
    let b = encode_pdcp(&PdcpPdu::unprotected(4095, vec![0xAA])).unwrap();
    assert_eq!(decode_pdcp(&b).unwrap().sn, 4095);
    expect("pdcp_sn4095", &b);
}

#[test]
fn stmsi_and_random_differ_in_type_bit() {
    let s = encode_rrc(&RrcMessage::SetupRequest {
        ue_identity: InitialUeIdentity::from_tmsi(0x00a1_b2c3_0001),
        cause: EstablishmentCause::MO_SIGNALLING,
    })
    .unwrap();
    let r = hex::decode(&vectors()["rrc_setup_request_random"]).unwrap();
    assert_eq!(s[0] & 0x10, 0);
    assert_eq!(r[0] & 0x10, 0x10);
    expect("rrc_setup_request_stmsi", &s);
}

#[test]
fn contention_resolution_echoes_msg3() {
    let setup = hex::decode(&vectors()["rrc_setup_request_random"]).unwrap();
    let cri: [u8; 6] = setup[..6].try_into().unwrap();
    let b = encode_rrc(&RrcMessage::ContentionResolutionId { cri }).unwrap();
    assert_eq!(&b[1..], &setup[..]);
    expect("rrc_contention_resolution", &b);
}

#[test]
fn empty_nas_container_is_one_full_segment() {
    let rrc = RrcWrap::SetupComplete(SetupCompleteTemplate::default()).wrap(vec![]);
    let b = encode_srb_sdu(&rrc, 0, 0).unwrap();
    let d = decode_srb_sdu(&b).unwrap();
    assert_eq!(d.rlc.si, SegmentInfo::Full);
    assert!(d.nas.is_none());
    expect("srb_setup_complete_empty_nas", &b);
}

#[test]
fn registration_request_poisoned_capabilities() {
    let b = encode_nas(&registration_request()).unwrap();
    assert_eq!(b[3], 0b1000_0011);
    assert_eq!(b[4], 0b1000_0010);
    expect("nas_registration_request_poisoned", &b);
}

#[test]
fn registration_reject_cause_15() {
    let b = encode_nas(&NasMessage::RegistrationReject { cause: 15 }).unwrap();
    assert_eq!(*b.last().unwrap(), 0x0F);
    expect("nas_registration_reject_15", &b);
}

#[test]
fn two_concealments_of_one_supi() {
    let key = HomeNetworkKey::new(1, *b"\x00\x01\x02\x03\x04\x05\x06\x07\x08\x09\x0a\x0b\x0c\x0d\x0e\x0f");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let supi = Supi(1010000001000);
    let c1 = conceal_supi(supi, &key, &mut rng);
    let c2 = conceal_supi(supi, &key, &mut rng);
    assert_ne!(c1, c2);
    assert_eq!(deconceal_suci(&c1, &key).unwrap(), supi);
    assert_eq!(deconceal_suci(&c2, &key).unwrap(), supi);
    expect("suci_concealment_1", &c1.to_bytes());
    expect("suci_concealment_2", &c2.to_bytes());
}

#[test]
fn registration_request_fills_a_40_byte_grant() {
    let wrap = RrcWrap::SetupComplete(SetupCompleteTemplate { transaction_id: 0, selected_plmn_index: 1 });
    let pdu = layer_stack_encode(&registration_request(), wrap, 40).unwrap();
    assert!(pdu.short_bsr().is_none());
    let b = encode_mac_pdu(&pdu).unwrap();
    assert_eq!(b.len(), 40);
    expect("stack_registration_request_40", &b);
}

#[test]
fn registration_request_in_5_bytes_is_a_bsr() {
    let wrap = RrcWrap::SetupComplete(SetupCompleteTemplate { transaction_id: 0, selected_plmn_index: 1 });
    let pdu = layer_stack_encode(&registration_request(), wrap, 5).unwrap();
    assert_eq!(pdu.short_bsr(), Some(31));
    let b = encode_mac_pdu(&pdu).unwrap();
    expect("stack_bsr_5", &b);
}

#[test]
fn shared_check_agrees() {
    common::golden_check().unwrap();
}

#[test]
fn every_vector_is_used() {
    let names = [
        "mac_padding_only_7",
        "mac_crnti_ce_4601",
        "rlc_middle_sn5_so100",
        "pdcp_sn4095",
        "rrc_setup_request_stmsi",
        "rrc_contention_resolution",
        "srb_setup_complete_empty_nas",
        "rlc_full_sn0",
        "pdcp_sn0_zero_mac_i",
        "rrc_setup_request_random",
        "nas_registration_request_poisoned",
        "nas_registration_reject_15",
        "suci_concealment_1",
        "suci_concealment_2",
        "stack_registration_request_40",
        "stack_bsr_5",
    ];
    let v = vectors();
    assert_eq!(v.len(), names.len());
    for n in names {
        assert!(v.contains_key(n), "{n}");
    }
}
