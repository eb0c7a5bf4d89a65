//! MAC PDU layout.
//!
//! Each sub-PDU starts with one header byte `R F LCID(6)`. `R` is always 0.
//! `F` is only meaningful for DCCH SDUs, where it selects a one-byte (`F=0`,
//! length ≤ 255) or two-byte (`F=1`, length ≥ 256) length field. CCCH SDUs
//! are fixed 48-bit, like the CCCH1 channel of 38.321, so a seven-byte grant
//! carries header plus a full RRC Setup Request.

use serde::{Deserialize, Serialize};

use super::{take, CodecError};

pub const LCID_CCCH: u8 = 0;
pub const LCID_DCCH: u8 = 1;
pub const LCID_CRNTI: u8 = 58;
pub const LCID_SHORT_BSR: u8 = 61;
pub const LCID_PADDING: u8 = 63;

pub const CCCH_SDU_LEN: usize = 6;
/// Buffer-size index used by the BSR fallback to signal "a lot of data".
pub const LARGE_BUFFER_INDEX: u8 = 31;

const LAYER: &str = "mac";
const F_BIT: u8 = 0x40;
const R_BIT: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MacSubPdu {
    CcchSdu([u8; CCCH_SDU_LEN]),
    DcchSdu(Vec<u8>),
    CrntiCe(u16),
    ShortBsr { lcg: u8, buffer_size_index: u8 },
    /// Padding with this many zero bytes after the header.
    Padding(usize),
}

impl MacSubPdu {
    pub fn lcid(&self) -> u8 {
        match self {
            MacSubPdu::CcchSdu(_) => LCID_CCCH,
            MacSubPdu::DcchSdu(_) => LCID_DCCH,
            MacSubPdu::CrntiCe(_) => LCID_CRNTI,
            MacSubPdu::ShortBsr { .. } => LCID_SHORT_BSR,
            MacSubPdu::Padding(_) => LCID_PADDING,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            MacSubPdu::CcchSdu(_) => 1 + CCCH_SDU_LEN,
            MacSubPdu::DcchSdu(d) if d.len() <= 0xFF => 2 + d.len(),
            MacSubPdu::DcchSdu(d) => 3 + d.len(),
            MacSubPdu::CrntiCe(_) => 3,
            MacSubPdu::ShortBsr { .. } => 2,
            MacSubPdu::Padding(n) => 1 + n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacPdu {
    pub subpdus: Vec<MacSubPdu>,
    pub total_bytes: usize,
}

impl MacPdu {
    /// Builds a PDU of exactly `tbs` bytes, appending a padding sub-PDU when
    /// the content leaves room for one.
    pub fn padded(mut subpdus: Vec<MacSubPdu>, tbs: usize) -> Result<Self, CodecError> {
        let content: usize = subpdus.iter().map(MacSubPdu::encoded_len).sum();
        if content > tbs {
            return Err(CodecError::SizeMismatch { content, total: tbs });
        }
        if content < tbs {
            subpdus.push(MacSubPdu::Padding(tbs - content - 1));
        }
        Ok(Self { subpdus, total_bytes: tbs })
    }

    /// A PDU of nothing but padding.
    pub fn empty(tbs: usize) -> Self {
        Self { subpdus: vec![MacSubPdu::Padding(tbs.saturating_sub(1))], total_bytes: tbs.max(1) }
    }

    pub fn is_padding_only(&self) -> bool {
        matches!(self.subpdus.as_slice(), [MacSubPdu::Padding(_)])
    }

    pub fn dcch_sdus(&self) -> impl Iterator<Item = &[u8]> {
        self.subpdus.iter().filter_map(|s| match s {
            MacSubPdu::DcchSdu(d) => Some(d.as_slice()),
            _ => None,
        })
    }

    pub fn ccch_sdu(&self) -> Option<&[u8; CCCH_SDU_LEN]> {
        self.subpdus.iter().find_map(|s| match s {
            MacSubPdu::CcchSdu(d) => Some(d),
            _ => None,
        })
    }

    pub fn short_bsr(&self) -> Option<u8> {
        self.subpdus.iter().find_map(|s| match s {
            MacSubPdu::ShortBsr { buffer_size_index, .. } => Some(*buffer_size_index),
            _ => None,
        })
    }

    pub fn crnti(&self) -> Option<u16> {
        self.subpdus.iter().find_map(|s| match s {
            MacSubPdu::CrntiCe(r) => Some(*r),
            _ => None,
        })
    }
}

pub fn encode_mac_pdu(pdu: &MacPdu) -> Result<Vec<u8>, CodecError> {
    let content: usize = pdu.subpdus.iter().map(MacSubPdu::encoded_len).sum();
    if content != pdu.total_bytes || content == 0 {
        return Err(CodecError::SizeMismatch { content, total: pdu.total_bytes });
    }
    if let Some(pos) = pdu.subpdus.iter().position(|s| matches!(s, MacSubPdu::Padding(_))) {
        if pos + 1 != pdu.subpdus.len() {
            return Err(CodecError::MisplacedPadding);
        }
    }

    let mut out = Vec::with_capacity(content);
    for sub in &pdu.subpdus {
        match sub {
            MacSubPdu::CcchSdu(sdu) => {
                out.push(LCID_CCCH);
                out.extend_from_slice(sdu);
            }
            MacSubPdu::DcchSdu(sdu) => {
                if sdu.len() <= 0xFF {
                    out.push(LCID_DCCH);
                    out.push(sdu.len() as u8);
                } else {
                    let len = u16::try_from(sdu.len())
                        .map_err(|_| CodecError::OutOfRange { layer: LAYER, field: "L" })?;
                    out.push(F_BIT | LCID_DCCH);
                    out.extend_from_slice(&len.to_be_bytes());
                }
                out.extend_from_slice(sdu);
            }
            MacSubPdu::CrntiCe(rnti) => {
                out.push(LCID_CRNTI);
                out.extend_from_slice(&rnti.to_be_bytes());
            }
            MacSubPdu::ShortBsr { lcg, buffer_size_index } => {
                if *lcg > 7 || *buffer_size_index > 31 {
                    return Err(CodecError::OutOfRange { layer: LAYER, field: "short bsr" });
                }
                out.push(LCID_SHORT_BSR);
                out.push((lcg << 5) | buffer_size_index);
            }
            MacSubPdu::Padding(n) => {
                out.push(LCID_PADDING);
                out.resize(out.len() + n, 0);
            }
        }
    }
    Ok(out)
}

pub fn decode_mac_pdu(bytes: &[u8]) -> Result<MacPdu, CodecError> {
    if bytes.is_empty() {
        return Err(CodecError::Empty { layer: LAYER });
    }
    let mut pos = 0;
    let mut subpdus = Vec::new();
    while pos < bytes.len() {
        let header = bytes[pos];
        pos += 1;
        if header & R_BIT != 0 {
            return Err(CodecError::Reserved { layer: LAYER, what: "R bit" });
        }
        let f = header & F_BIT != 0;
        let lcid = header & 0x3F;
        if f && lcid != LCID_DCCH {
            return Err(CodecError::Reserved { layer: LAYER, what: "F bit on fixed-size sub-pdu" });
        }
        let sub = match lcid {
            LCID_CCCH => {
                let sdu = take(LAYER, bytes, &mut pos, CCCH_SDU_LEN)?;
                MacSubPdu::CcchSdu(sdu.try_into().expect("length checked"))
            }
            LCID_DCCH => {
                let len = if f {
                    let l = take(LAYER, bytes, &mut pos, 2)?;
                    let len = usize::from(u16::from_be_bytes([l[0], l[1]]));
                    if len <= 0xFF {
                        return Err(CodecError::NonCanonical { layer: LAYER, what: "16-bit L for short sdu" });
                    }
                    len
                } else {
                    usize::from(take(LAYER, bytes, &mut pos, 1)?[0])
                };
                MacSubPdu::DcchSdu(take(LAYER, bytes, &mut pos, len)?.to_vec())
            }
            LCID_CRNTI => {
                let b = take(LAYER, bytes, &mut pos, 2)?;
                MacSubPdu::CrntiCe(u16::from_be_bytes([b[0], b[1]]))
            }
            LCID_SHORT_BSR => {
                let b = take(LAYER, bytes, &mut pos, 1)?[0];
                MacSubPdu::ShortBsr { lcg: b >> 5, buffer_size_index: b & 0x1F }
            }
            LCID_PADDING => {
                let rest = &bytes[pos..];
                if rest.iter().any(|&b| b != 0) {
                    return Err(CodecError::NonCanonical { layer: LAYER, what: "non-zero padding" });
                }
                pos = bytes.len();
                MacSubPdu::Padding(rest.len())
            }
            other => return Err(CodecError::UnknownLcid(other)),
        };
        subpdus.push(sub);
    }
    Ok(MacPdu { subpdus, total_bytes: bytes.len() })
}
