//! RRC messages on CCCH and DCCH.
//!
//! The top three bits of byte 0 carry the message tag. The Setup Request is
//! exactly 48 bits: `tag(3)=000 type(1) identity(39) cause(4) spare(1)`, so
//! the contention-resolution identity the gNB echoes is the whole message.

use serde::{Deserialize, Serialize};

use super::{take, CodecError};

const LAYER: &str = "rrc";
pub const SETUP_REQUEST_LEN: usize = 6;
pub const IDENTITY_MASK: u64 = (1 << 39) - 1;
pub const TMSI_MASK: u64 = (1 << 48) - 1;

const TAG_SETUP_REQUEST: u8 = 0;
const TAG_SETUP: u8 = 1;
const TAG_SETUP_COMPLETE: u8 = 2;
const TAG_SECURITY_MODE_COMMAND: u8 = 3;
const TAG_CONTENTION_RESOLUTION: u8 = 4;
const TAG_UL_INFORMATION_TRANSFER: u8 = 5;
const TAG_DL_INFORMATION_TRANSFER: u8 = 6;

/// The 39-bit UE identity of a Setup Request.
///
/// `STmsi` holds the low 39 bits of the 48-bit 5G-S-TMSI, which is all a
/// 48-bit Setup Request can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InitialUeIdentity {
    STmsi(u64),
    RandomValue(u64),
}

impl InitialUeIdentity {
    pub fn from_tmsi(tmsi: u64) -> Self {
        InitialUeIdentity::STmsi(tmsi & IDENTITY_MASK)
    }

    pub fn value(&self) -> u64 {
        match self {
            InitialUeIdentity::STmsi(v) | InitialUeIdentity::RandomValue(v) => *v,
        }
    }

    pub fn matches_tmsi(&self, tmsi: u64) -> bool {
        matches!(self, InitialUeIdentity::STmsi(v) if *v == tmsi & IDENTITY_MASK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstablishmentCause(pub u8);

impl EstablishmentCause {
    pub const MT_ACCESS: Self = Self(1);
    pub const MO_SIGNALLING: Self = Self(3);
    pub const MO_DATA: Self = Self(4);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RrcMessage {
    SetupRequest { ue_identity: InitialUeIdentity, cause: EstablishmentCause },
    Setup { transaction_id: u8 },
    SetupComplete { transaction_id: u8, selected_plmn_index: u8, nas_container: Vec<u8> },
    SecurityModeCommand { transaction_id: u8 },
    ContentionResolutionId { cri: [u8; 6] },
    UlInformationTransfer { nas_container: Vec<u8> },
    DlInformationTransfer { nas_container: Vec<u8> },
}

impl RrcMessage {
    pub fn nas_container(&self) -> Option<&[u8]> {
        match self {
            RrcMessage::SetupComplete { nas_container, .. }
            | RrcMessage::UlInformationTransfer { nas_container }
            | RrcMessage::DlInformationTransfer { nas_container } => Some(nas_container),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RrcMessage::SetupRequest { .. } => "RRCSetupRequest",
            RrcMessage::Setup { .. } => "RRCSetup",
            RrcMessage::SetupComplete { .. } => "RRCSetupComplete",
            RrcMessage::SecurityModeCommand { .. } => "RRCSecurityModeCommand",
            RrcMessage::ContentionResolutionId { .. } => "ContentionResolutionId",
            RrcMessage::UlInformationTransfer { .. } => "ULInformationTransfer",
            RrcMessage::DlInformationTransfer { .. } => "DLInformationTransfer",
        }
    }
}

fn tid_byte(tag: u8, transaction_id: u8) -> Result<u8, CodecError> {
    if transaction_id > 3 {
        return Err(CodecError::OutOfRange { layer: LAYER, field: "transaction_id" });
    }
    Ok((tag << 5) | transaction_id)
}

pub fn encode_rrc(m: &RrcMessage) -> Result<Vec<u8>, CodecError> {
    let out = match m {
        RrcMessage::SetupRequest { ue_identity, cause } => {
            let (kind, value) = match ue_identity {
                InitialUeIdentity::STmsi(v) => (0u64, *v),
                InitialUeIdentity::RandomValue(v) => (1u64, *v),
            };
            if value > IDENTITY_MASK {
                return Err(CodecError::OutOfRange { layer: LAYER, field: "ue_identity" });
            }
            if cause.0 > 0x0F {
                return Err(CodecError::OutOfRange { layer: LAYER, field: "cause" });
            }
            let word = (kind << 44) | (value << 5) | (u64::from(cause.0) << 1);
            word.to_be_bytes()[2..].to_vec()
        }
        RrcMessage::Setup { transaction_id } => vec![tid_byte(TAG_SETUP, *transaction_id)?],
        RrcMessage::SecurityModeCommand { transaction_id } => {
            vec![tid_byte(TAG_SECURITY_MODE_COMMAND, *transaction_id)?]
        }
        RrcMessage::SetupComplete { transaction_id, selected_plmn_index, nas_container } => {
            if !(1..=12).contains(selected_plmn_index) {
                return Err(CodecError::OutOfRange { layer: LAYER, field: "selected_plmn_index" });
            }
            let mut out = vec![tid_byte(TAG_SETUP_COMPLETE, *transaction_id)?, *selected_plmn_index];
            out.extend_from_slice(nas_container);
            out
        }
        RrcMessage::ContentionResolutionId { cri } => {
            let mut out = vec![TAG_CONTENTION_RESOLUTION << 5];
            out.extend_from_slice(cri);
            out
        }
        RrcMessage::UlInformationTransfer { nas_container } => {
            let mut out = vec![TAG_UL_INFORMATION_TRANSFER << 5];
            out.extend_from_slice(nas_container);
            out
        }
        RrcMessage::DlInformationTransfer { nas_container } => {
            let mut out = vec![TAG_DL_INFORMATION_TRANSFER << 5];
            out.extend_from_slice(nas_container);
            out
        }
    };
    Ok(out)
}

fn expect_len(bytes: &[u8], len: usize) -> Result<(), CodecError> {
    match bytes.len().cmp(&len) {
        std::cmp::Ordering::Less => {
            Err(CodecError::Truncated { layer: LAYER, needed: len, available: bytes.len() })
        }
        std::cmp::Ordering::Greater => {
            Err(CodecError::TrailingBytes { layer: LAYER, count: bytes.len() - len })
        }
        std::cmp::Ordering::Equal => Ok(()),
    }
}

fn spare_clear(b: u8) -> Result<u8, CodecError> {
    if b & 0x1C != 0 {
        return Err(CodecError::Reserved { layer: LAYER, what: "spare bits" });
    }
    Ok(b & 0x03)
}

pub fn decode_rrc(bytes: &[u8]) -> Result<RrcMessage, CodecError> {
    let first = *bytes.first().ok_or(CodecError::Empty { layer: LAYER })?;
    let tag = first >> 5;
    match tag {
        TAG_SETUP_REQUEST => {
            expect_len(bytes, SETUP_REQUEST_LEN)?;
            let mut word = [0u8; 8];
            word[2..].copy_from_slice(bytes);
            let word = u64::from_be_bytes(word);
            if word & 1 != 0 {
                return Err(CodecError::Reserved { layer: LAYER, what: "spare bit" });
            }
            let value = (word >> 5) & IDENTITY_MASK;
            let ue_identity = if (word >> 44) & 1 == 0 {
                InitialUeIdentity::STmsi(value)
            } else {
                InitialUeIdentity::RandomValue(value)
            };
            Ok(RrcMessage::SetupRequest { ue_identity, cause: EstablishmentCause(((word >> 1) & 0x0F) as u8) })
        }
        TAG_SETUP => {
            expect_len(bytes, 1)?;
            Ok(RrcMessage::Setup { transaction_id: spare_clear(first)? })
        }
        TAG_SECURITY_MODE_COMMAND => {
            expect_len(bytes, 1)?;
            Ok(RrcMessage::SecurityModeCommand { transaction_id: spare_clear(first)? })
        }
        TAG_SETUP_COMPLETE => {
            let transaction_id = spare_clear(first)?;
            let mut pos = 1;
            let plmn = take(LAYER, bytes, &mut pos, 1)?[0];
            if !(1..=12).contains(&plmn) {
                return Err(CodecError::OutOfRange { layer: LAYER, field: "selected_plmn_index" });
            }
            Ok(RrcMessage::SetupComplete {
                transaction_id,
                selected_plmn_index: plmn,
                nas_container: bytes[pos..].to_vec(),
            })
        }
        TAG_CONTENTION_RESOLUTION | TAG_UL_INFORMATION_TRANSFER | TAG_DL_INFORMATION_TRANSFER => {
            if first & 0x1F != 0 {
                return Err(CodecError::Reserved { layer: LAYER, what: "spare bits" });
            }
            let rest = bytes[1..].to_vec();
            Ok(match tag {
                TAG_CONTENTION_RESOLUTION => {
                    expect_len(bytes, 7)?;
                    RrcMessage::ContentionResolutionId { cri: rest.try_into().expect("six bytes") }
                }
                TAG_UL_INFORMATION_TRANSFER => RrcMessage::UlInformationTransfer { nas_container: rest },
                _ => RrcMessage::DlInformationTransfer { nas_container: rest },
            })
        }
        other => Err(CodecError::UnknownTag { layer: LAYER, tag: other }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_value_setup_request_is_six_bytes() {
        let m = RrcMessage::SetupRequest {
            ue_identity: InitialUeIdentity::RandomValue(0x1A2B3C4D5),
            cause: EstablishmentCause::MO_SIGNALLING,
        };
        let bytes = encode_rrc(&m).unwrap();
        assert_eq!(bytes.len(), 6);
        assert_eq!(decode_rrc(&bytes).unwrap(), m);
    }

    #[test]
    fn identity_type_bit_distinguishes_tmsi_from_random() {
        let cause = EstablishmentCause::MO_SIGNALLING;
        let a = encode_rrc(&RrcMessage::SetupRequest { ue_identity: InitialUeIdentity::STmsi(7), cause }).unwrap();
        let b = encode_rrc(&RrcMessage::SetupRequest { ue_identity: InitialUeIdentity::RandomValue(7), cause })
            .unwrap();
        assert_eq!(a[0] & 0x10, 0);
        assert_eq!(b[0] & 0x10, 0x10);
        assert_eq!(a[1..], b[1..]);
    }

    #[test]
    fn tmsi_identity_uses_low_39_bits() {
        let tmsi = 0xFFFF_1234_5678u64;
        let id = InitialUeIdentity::from_tmsi(tmsi);
        assert_eq!(id.value(), tmsi & IDENTITY_MASK);
        assert!(id.matches_tmsi(tmsi));
        assert!(!InitialUeIdentity::RandomValue(id.value()).matches_tmsi(tmsi));
    }

    #[test]
    fn setup_complete_round_trip() {
        let m = RrcMessage::SetupComplete { transaction_id: 2, selected_plmn_index: 1, nas_container: vec![0x7E, 0] };
        let bytes = encode_rrc(&m).unwrap();
        assert_eq!(bytes, [0x42, 0x01, 0x7E, 0x00]);
        assert_eq!(decode_rrc(&bytes).unwrap(), m);
    }

    #[test]
    fn errors() {
        assert!(matches!(decode_rrc(&[0xE0]), Err(CodecError::UnknownTag { tag: 7, .. })));
        assert!(matches!(decode_rrc(&[]), Err(CodecError::Empty { .. })));
        assert!(matches!(decode_rrc(&[0x00, 0, 0]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_rrc(&[0x20, 0]), Err(CodecError::TrailingBytes { .. })));
        assert!(encode_rrc(&RrcMessage::Setup { transaction_id: 4 }).is_err());
        let too_big = RrcMessage::SetupRequest {
            ue_identity: InitialUeIdentity::RandomValue(1 << 39),
            cause: EstablishmentCause::MO_DATA,
        };
        assert!(encode_rrc(&too_big).is_err());
    }
}
