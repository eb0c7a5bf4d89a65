//! Byte layouts of every message the simulator puts on the air.
//!
//! The layouts borrow field semantics from TS 38.321/38.322/38.323/38.331 and
//! TS 24.501 (LCIDs, 12-bit sequence numbers, MAC-I, cause codes, NAS message
//! type values) but are not ASN.1 PER. `docs/wire-format.md` at the
//! repository root is the normative table.
//!
//! Every decoder is strict: it accepts exactly the byte strings its encoder
//! can produce, so `encode(decode(b)) == b` for every accepted `b`.

pub mod auth;
pub mod mac;
pub mod nas;
pub mod pdcp;
pub mod rlc;
pub mod rrc;
pub mod stack;
pub mod suci;

use thiserror::Error;

pub use auth::{AuthVector, SubscriberKey};
pub use mac::{decode_mac_pdu, encode_mac_pdu, MacPdu, MacSubPdu};
pub use nas::{decode_nas, encode_nas, Algorithm, MobileIdentity, NasMessage, SecurityCapabilities};
pub use pdcp::{decode_pdcp, encode_pdcp, PdcpPdu};
pub use rlc::{decode_rlc, encode_rlc, RlcSegment, SegmentInfo};
pub use rrc::{decode_rrc, encode_rrc, EstablishmentCause, InitialUeIdentity, RrcMessage};
pub use stack::{
    bsr_pdu, decode_pdcp_payload, decode_srb_sdu, decode_uplink, encode_srb_sdu, layer_stack_encode,
    DecodedUplink, RrcWrap, SetupCompleteTemplate, SrbSdu,
};
pub use suci::{conceal_supi, deconceal_suci, HomeNetworkKey, Suci, Supi};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("{layer}: empty input")]
    Empty { layer: &'static str },
    #[error("{layer}: truncated, needed {needed} bytes but {available} remain")]
    Truncated { layer: &'static str, needed: usize, available: usize },
    #[error("mac: unknown lcid {0}")]
    UnknownLcid(u8),
    #[error("{layer}: reserved bits set or reserved value used ({what})")]
    Reserved { layer: &'static str, what: &'static str },
    #[error("{layer}: non-canonical encoding ({what})")]
    NonCanonical { layer: &'static str, what: &'static str },
    #[error("{layer}: unknown message tag {tag:#04x}")]
    UnknownTag { layer: &'static str, tag: u8 },
    #[error("{layer}: field {field} out of range")]
    OutOfRange { layer: &'static str, field: &'static str },
    #[error("{layer}: {count} trailing bytes")]
    TrailingBytes { layer: &'static str, count: usize },
    #[error("mac: pdu content is {content} bytes but the grant holds {total}")]
    SizeMismatch { content: usize, total: usize },
    #[error("mac: padding must be the single last sub-pdu")]
    MisplacedPadding,
    #[error("suci: home network key id {expected} does not match {found}")]
    WrongKeyId { expected: u8, found: u8 },
    #[error("suci: integrity tag mismatch")]
    TagMismatch,
}

pub(crate) fn take<'a>(
    layer: &'static str,
    bytes: &'a [u8],
    pos: &mut usize,
    n: usize,
) -> Result<&'a [u8], CodecError> {
    let available = bytes.len().saturating_sub(*pos);
    if available < n {
        return Err(CodecError::Truncated { layer, needed: n, available });
    }
    let out = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(out)
}
