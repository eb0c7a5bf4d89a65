//! Shared generators and property checks for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use ulshadow_core::airtime::{
    arrival_offset_us, required_timing_advance, resolve_reception, AllocationId, CaptureConfig, ReceptionOutcome,
    Transmission,
};
use ulshadow_core::codecs::*;
use ulshadow_core::{EntityId, Scenario};

pub const SUITE_CASES: u32 = 10_000;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(name: &str) -> Scenario {
    let path = repo_root().join("scenarios").join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Scenario::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn scenario_with(name: &str, overrides: &[&str]) -> Scenario {
    let path = repo_root().join("scenarios").join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap();
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::from_toml_with_overrides(&text, &o).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]))
}

// ---- generators ---------------------------------------------------------

pub fn arb_bytes(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 0..=max)
}

pub fn arb_sub_pdu() -> impl Strategy<Value = MacSubPdu> {
    prop_oneof![
        any::<[u8; 6]>().prop_map(MacSubPdu::CcchSdu),
        prop_oneof![arb_bytes(40), prop::collection::vec(any::<u8>(), 250..300)].prop_map(MacSubPdu::DcchSdu),
        any::<u16>().prop_map(MacSubPdu::CrntiCe),
        (0u8..8, 0u8..32).prop_map(|(lcg, buffer_size_index)| MacSubPdu::ShortBsr { lcg, buffer_size_index }),
    ]
}

pub fn arb_mac_pdu() -> impl Strategy<Value = MacPdu> {
    (prop::collection::vec(arb_sub_pdu(), 0..4), prop::option::of(0usize..24)).prop_filter_map(
        "needs content",
        |(mut subs, pad)| {
            if let Some(n) = pad {
                subs.push(MacSubPdu::Padding(n));
            }
            let total: usize = subs.iter().map(MacSubPdu::encoded_len).sum();
            (total > 0).then_some(MacPdu { subpdus: subs, total_bytes: total })
        },
    )
}

pub fn arb_rlc() -> impl Strategy<Value = RlcSegment> {
    let si = prop_oneof![
        Just(SegmentInfo::Full),
        Just(SegmentInfo::First),
        any::<u16>().prop_map(|so| SegmentInfo::Middle { so }),
        any::<u16>().prop_map(|so| SegmentInfo::Last { so }),
    ];
    (0u16..=0x0FFF, si, arb_bytes(64)).prop_map(|(sn, si, data)| RlcSegment { sn, si, data })
}

pub fn arb_pdcp() -> impl Strategy<Value = PdcpPdu> {
    (0u16..=0x0FFF, arb_bytes(64), any::<[u8; 4]>()).prop_map(|(sn, sdu, mac_i)| PdcpPdu { sn, sdu, mac_i })
}

pub fn arb_rrc() -> impl Strategy<Value = RrcMessage> {
    let identity = prop_oneof![
        (0u64..1 << 39).prop_map(InitialUeIdentity::STmsi),
        (0u64..1 << 39).prop_map(InitialUeIdentity::RandomValue),
    ];
    prop_oneof![
        (identity, 0u8..16).prop_map(|(ue_identity, c)| RrcMessage::SetupRequest {
            ue_identity,
            cause: EstablishmentCause(c)
        }),
        (0u8..4).prop_map(|transaction_id| RrcMessage::Setup { transaction_id }),
        (0u8..4, 1u8..=12, arb_bytes(48)).prop_map(|(transaction_id, selected_plmn_index, nas_container)| {
            RrcMessage::SetupComplete { transaction_id, selected_plmn_index, nas_container }
        }),
        (0u8..4).prop_map(|transaction_id| RrcMessage::SecurityModeCommand { transaction_id }),
        any::<[u8; 6]>().prop_map(|cri| RrcMessage::ContentionResolutionId { cri }),
        arb_bytes(48).prop_map(|nas_container| RrcMessage::UlInformationTransfer { nas_container }),
        arb_bytes(48).prop_map(|nas_container| RrcMessage::DlInformationTransfer { nas_container }),
    ]
}

pub fn arb_suci() -> impl Strategy<Value = Suci> {
    (any::<u8>(), any::<u8>(), any::<[u8; 8]>(), prop::collection::vec(any::<u8>(), 1..24)).prop_map(
        |(scheme_id, home_network_key_id, ephemeral, ciphertext)| Suci {
            scheme_id,
            home_network_key_id,
            ephemeral,
            ciphertext,
        },
    )
}

pub fn arb_caps() -> impl Strategy<Value = SecurityCapabilities> {
    (any::<u8>(), any::<u8>()).prop_map(|(ea, ia)| SecurityCapabilities { ea, ia })
}

pub fn arb_nas() -> impl Strategy<Value = NasMessage> {
    let tmsi = 0u64..1 << 48;
    let identity = prop_oneof![arb_suci().prop_map(MobileIdentity::Suci), tmsi.clone().prop_map(MobileIdentity::FiveGTmsi)];
    prop_oneof![
        (identity, arb_caps()).prop_map(|(identity, capabilities)| NasMessage::RegistrationRequest { identity, capabilities }),
        tmsi.clone().prop_map(|new_tmsi| NasMessage::RegistrationAccept { new_tmsi }),
        any::<u8>().prop_map(|cause| NasMessage::RegistrationReject { cause }),
        tmsi.prop_map(|s_tmsi| NasMessage::ServiceRequest { s_tmsi }),
        Just(NasMessage::ServiceAccept),
        any::<u8>().prop_map(|cause| NasMessage::ServiceReject { cause }),
        Just(NasMessage::IdentityRequest),
        arb_suci().prop_map(|suci| NasMessage::IdentityResponse { suci }),
        (any::<[u8; 16]>(), any::<[u8; 16]>()).prop_map(|(rand, autn)| NasMessage::AuthenticationRequest { rand, autn }),
        any::<[u8; 16]>().prop_map(|res| NasMessage::AuthenticationResponse { res }),
        any::<u8>().prop_map(|cause| NasMessage::AuthenticationFailure { cause }),
        Just(NasMessage::AuthenticationReject),
        arb_caps().prop_map(|replayed_capabilities| NasMessage::SecurityModeCommand { replayed_capabilities }),
        Just(NasMessage::SecurityModeComplete),
        any::<u8>().prop_map(|cause| NasMessage::SecurityModeReject { cause }),
    ]
}

/// A valid encoding, possibly damaged: one bit flipped, cut short or
/// extended by a byte.
#[derive(Debug, Clone)]
pub enum Damage {
    None,
    Flip(usize, u8),
    Truncate(usize),
    Append(u8),
}

pub fn arb_damage() -> impl Strategy<Value = Damage> {
    prop_oneof![
        Just(Damage::None),
        (any::<usize>(), 0u8..8).prop_map(|(i, b)| Damage::Flip(i, b)),
        any::<usize>().prop_map(Damage::Truncate),
        any::<u8>().prop_map(Damage::Append),
    ]
}

pub fn damage(mut b: Vec<u8>, d: &Damage) -> Vec<u8> {
    match *d {
        Damage::None => {}
        Damage::Flip(i, bit) if !b.is_empty() => {
            let n = b.len();
            b[i % n] ^= 1 << bit;
        }
        Damage::Flip(..) => {}
        Damage::Truncate(i) => {
            let n = b.len();
            b.truncate(i % (n + 1));
        }
        Damage::Append(x) => b.push(x),
    }
    b
}

// ---- codec suite ---------------------------------------------------------

pub const LAYERS: [&str; 7] = ["mac", "rlc", "pdcp", "rrc", "nas", "suci", "stack"];

fn check<T, E, D>(value: &T, damage_with: &Damage, enc: E, dec: D) -> Result<(), TestCaseError>
where
    T: PartialEq + std::fmt::Debug,
    E: Fn(&T) -> Result<Vec<u8>, CodecError>,
    D: Fn(&[u8]) -> Result<T, CodecError>,
{
    let bytes = enc(value).map_err(|e| TestCaseError::fail(format!("encode {value:?}: {e}")))?;
    let back = dec(&bytes).map_err(|e| TestCaseError::fail(format!("decode {value:?}: {e}")))?;
    prop_assert_eq!(&back, value);
    // Canonicity: whatever decodes must re-encode to the same bytes.
    let damaged = damage(bytes, damage_with);
    if let Ok(v) = dec(&damaged) {
        let again = enc(&v).map_err(|e| TestCaseError::fail(format!("re-encode {v:?}: {e}")))?;
        prop_assert_eq!(again, damaged);
    }
    Ok(())
}

/// Round trip plus canonicity for one layer, `cases` seeded cases.
pub fn codec_suite(layer: &str, cases: u32) -> Result<(), String> {
    let mut r = runner(cases, 0x5A);
    let txt = |e: &dyn std::fmt::Display| e.to_string();
    match layer {
        "mac" => r.run(&(arb_mac_pdu(), arb_damage()), |(v, d)| check(&v, &d, encode_mac_pdu, decode_mac_pdu)).map_err(|e| txt(&e)),
        "rlc" => r.run(&(arb_rlc(), arb_damage()), |(v, d)| check(&v, &d, encode_rlc, decode_rlc)).map_err(|e| txt(&e)),
        "pdcp" => r.run(&(arb_pdcp(), arb_damage()), |(v, d)| check(&v, &d, encode_pdcp, decode_pdcp)).map_err(|e| txt(&e)),
        "rrc" => r.run(&(arb_rrc(), arb_damage()), |(v, d)| check(&v, &d, encode_rrc, decode_rrc)).map_err(|e| txt(&e)),
        "nas" => r.run(&(arb_nas(), arb_damage()), |(v, d)| check(&v, &d, encode_nas, decode_nas)).map_err(|e| txt(&e)),
        "suci" => r.run(&(arb_suci(), arb_damage()), |(v, d)| {
            check(&v, &d, |s: &Suci| Ok(s.to_bytes()), Suci::from_bytes)
        })
        .map_err(|e| txt(&e)),
        "stack" => {
            let wrap = prop_oneof![
                (0u8..4, 1u8..=12).prop_map(|(transaction_id, selected_plmn_index)| {
                    RrcWrap::SetupComplete(SetupCompleteTemplate { transaction_id, selected_plmn_index })
                }),
                Just(RrcWrap::UlInformationTransfer),
            ];
            r.run(&(arb_nas(), wrap, 2usize..160), |(nas, wrap, tbs)| {
                let pdu = layer_stack_encode(&nas, wrap, tbs).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let bytes = encode_mac_pdu(&pdu).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(bytes.len(), tbs);
                let up = decode_uplink(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
                match up.srb.as_slice() {
                    [] => prop_assert!(pdu.short_bsr().is_some(), "neither payload nor bsr"),
                    [one] => {
                        prop_assert_eq!(one.nas.as_ref(), Some(&nas));
                        prop_assert_eq!(one.rlc.si, SegmentInfo::Full);
                        prop_assert_eq!(one.rlc.sn, 0);
                        prop_assert_eq!(one.pdcp.as_ref().map(|p| p.mac_i), Some([0u8; 4]));
                    }
                    more => prop_assert!(false, "{} sdus", more.len()),
                }
                Ok(())
            })
            .map_err(|e| txt(&e))
        }
        other => Err(format!("no layer {other}")),
    }
}

// ---- airtime suite ----------------------------------------------------------

pub const AIRTIME_PROPERTIES: [&str; 3] = ["offset_invariance", "margin_monotonicity", "arrival_offset"];

#[derive(Debug, Clone)]
pub struct Sender {
    pub millidbm: i64,
    pub distance_us: f64,
    pub ta_error_us: f64,
}

pub fn arb_senders() -> impl Strategy<Value = Vec<Sender>> {
    let s = (-10_000i64..40_000, 0.0f64..20.0, prop_oneof![Just(0.0), -6.0f64..6.0])
        .prop_map(|(millidbm, distance_us, ta_error_us)| Sender { millidbm, distance_us, ta_error_us });
    prop::collection::vec(s, 1..6)
}

pub fn transmissions(senders: &[Sender], shift_millidb: i64) -> Vec<Transmission> {
    senders
        .iter()
        .enumerate()
        .map(|(i, s)| Transmission {
            allocation_id: AllocationId(1),
            sender: EntityId::Ue(i as u32),
            payload: vec![i as u8],
            tx_power_dbm: (s.millidbm + shift_millidb) as f64 / 1000.0,
            timing_advance_us: required_timing_advance(s.distance_us) + s.ta_error_us,
            sender_distance_us: s.distance_us,
        })
        .collect()
}

fn winner(o: &ReceptionOutcome) -> Option<EntityId> {
    o.decoded().map(|t| t.sender)
}

pub fn airtime_suite(property: &str, cases: u32) -> Result<(), String> {
    let mut r = runner(cases, 0xA1);
    let txt = |e: &dyn std::fmt::Display| e.to_string();
    match property {
        // Moving every sender by the same power offset never changes who is decoded.
        "offset_invariance" => r.run(&(arb_senders(), -20_000i64..20_000), |(s, shift)| {
            let cfg = CaptureConfig::default();
            let a = resolve_reception(&transmissions(&s, 0), &cfg).unwrap();
            let b = resolve_reception(&transmissions(&s, shift), &cfg).unwrap();
            prop_assert_eq!(winner(&a), winner(&b));
            Ok(())
        })
        .map_err(|e| txt(&e)),
        // A larger capture margin can only turn decodes into collisions.
        "margin_monotonicity" => r.run(&(arb_senders(), 0u32..10_000, 0u32..10_000), |(s, m1, m2)| {
            let (lo, hi) = (m1.min(m2), m1.max(m2));
            let cfg = |m: u32| CaptureConfig { capture_margin_db: f64::from(m) / 1000.0, ..CaptureConfig::default() };
            let txs = transmissions(&s, 0);
            let at_hi = resolve_reception(&txs, &cfg(hi)).unwrap();
            let at_lo = resolve_reception(&txs, &cfg(lo)).unwrap();
            if let Some(w) = winner(&at_hi) {
                prop_assert_eq!(winner(&at_lo), Some(w));
            }
            Ok(())
        })
        .map_err(|e| txt(&e)),
        // A lone sender is decoded exactly when 2d - TA is within tolerance.
        "arrival_offset" => r.run(&(0.0f64..50.0, -10.0f64..10.0), |(d, err)| {
            let ta = required_timing_advance(d) + err;
            let offset = arrival_offset_us(d, ta);
            prop_assert!((offset + err).abs() < 1e-9, "offset {} err {}", offset, err);
            let cfg = CaptureConfig::default();
            let s = [Sender { millidbm: 20_000, distance_us: d, ta_error_us: err }];
            let out = resolve_reception(&transmissions(&s, 0), &cfg).unwrap();
            prop_assert_eq!(out.decoded().is_some(), offset.abs() <= cfg.ta_tolerance_us);
            Ok(())
        })
        .map_err(|e| txt(&e)),
        other => Err(format!("no property {other}")),
    }
}

// ---- golden vectors -----------------------------------------------------

pub fn golden_vectors() -> std::collections::BTreeMap<String, String> {
    include_str!("../golden/vectors.txt")
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l.split_once(char::is_whitespace).expect("name and hex");
            (k.to_string(), v.trim().to_string())
        })
        .collect()
}

/// Re-encodes every vector and compares it with the stored hex.
pub fn golden_check() -> Result<(), String> {
    use rand::SeedableRng;
    let suci = Suci { scheme_id: 1, home_network_key_id: 1, ephemeral: [0x11; 8], ciphertext: vec![0x22; 11] };
    let req = NasMessage::RegistrationRequest {
        identity: MobileIdentity::Suci(suci),
        capabilities: SecurityCapabilities::poisoned(),
    };
    let wrap = || RrcWrap::SetupComplete(SetupCompleteTemplate { transaction_id: 0, selected_plmn_index: 1 });
    let key = HomeNetworkKey::new(1, core::array::from_fn(|i| i as u8));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let c1 = conceal_supi(Supi(1010000001000), &key, &mut rng);
    let c2 = conceal_supi(Supi(1010000001000), &key, &mut rng);
    let setup = RrcMessage::SetupRequest {
        ue_identity: InitialUeIdentity::RandomValue(0x1A2B3C4D5),
        cause: EstablishmentCause::MO_SIGNALLING,
    };
    let stmsi = RrcMessage::SetupRequest {
        ue_identity: InitialUeIdentity::from_tmsi(0x00a1_b2c3_0001),
        cause: EstablishmentCause::MO_SIGNALLING,
    };
    let e = |r: Result<Vec<u8>, CodecError>| r.map_err(|e| e.to_string());
    let setup_bytes = e(encode_rrc(&setup))?;
    let cri: [u8; 6] = setup_bytes[..6].try_into().map_err(|_| "short SetupRequest")?;
    let middle = RlcSegment { sn: 5, si: SegmentInfo::Middle { so: 100 }, data: vec![0x09] };
    let empty = RrcWrap::SetupComplete(SetupCompleteTemplate::default()).wrap(vec![]);
    let built: Vec<(&str, Vec<u8>)> = vec![
        ("mac_padding_only_7", e(encode_mac_pdu(&MacPdu::empty(7)))?),
        ("rlc_full_sn0", e(encode_rlc(&RlcSegment::full(0, vec![0xAA, 0xBB, 0xCC])))?),
        ("pdcp_sn0_zero_mac_i", e(encode_pdcp(&PdcpPdu::unprotected(0, vec![0xAA, 0xBB])))?),
        ("rrc_setup_request_random", setup_bytes.clone()),
        ("rrc_setup_request_stmsi", e(encode_rrc(&stmsi))?),
        ("rrc_contention_resolution", e(encode_rrc(&RrcMessage::ContentionResolutionId { cri }))?),
        ("mac_crnti_ce_4601", e(encode_mac_pdu(&MacPdu::padded(vec![MacSubPdu::CrntiCe(0x4601)], 3).map_err(|e| e.to_string())?))?),
        ("rlc_middle_sn5_so100", e(encode_rlc(&middle))?),
        ("pdcp_sn4095", e(encode_pdcp(&PdcpPdu::unprotected(4095, vec![0xAA])))?),
        ("srb_setup_complete_empty_nas", e(encode_srb_sdu(&empty, 0, 0))?),
        ("nas_registration_request_poisoned", e(encode_nas(&req))?),
        ("nas_registration_reject_15", e(encode_nas(&NasMessage::RegistrationReject { cause: 15 }))?),
        ("suci_concealment_1", c1.to_bytes()),
        ("suci_concealment_2", c2.to_bytes()),
        ("stack_registration_request_40", e(encode_mac_pdu(&layer_stack_encode(&req, wrap(), 40).map_err(|e| e.to_string())?))?),
        ("stack_bsr_5", e(encode_mac_pdu(&layer_stack_encode(&req, wrap(), 5).map_err(|e| e.to_string())?))?),
    ];
    let stored = golden_vectors();
    if stored.len() != built.len() {
        return Err(format!("{} stored vectors, {} built", stored.len(), built.len()));
    }
    for (name, bytes) in built {
        let want = stored.get(name).ok_or_else(|| format!("no vector {name}"))?;
        if &hex::encode(&bytes) != want {
            return Err(format!("{name}: got {}, stored {want}", hex::encode(&bytes)));
        }
    }
    Ok(())
}
