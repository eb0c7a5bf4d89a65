//! RLC AMD PDU with a 12-bit sequence number.
//!
//! Byte 0 is `D/C(1) SI(3) SN[11:8]`, byte 1 is `SN[7:0]`, followed by a
//! 16-bit segment offset for middle and last segments, then data. `D/C` must
//! be 1 (control PDUs are not modelled) and SI values 4..7 are reserved.

use serde::{Deserialize, Serialize};

use super::{take, CodecError};

const LAYER: &str = "rlc";
pub const MAX_SN: u16 = 0x0FFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentInfo {
    Full,
    First,
    Middle { so: u16 },
    Last { so: u16 },
}

impl SegmentInfo {
    fn code(self) -> u8 {
        match self {
            SegmentInfo::Full => 0,
            SegmentInfo::First => 1,
            SegmentInfo::Last { .. } => 2,
            SegmentInfo::Middle { .. } => 3,
        }
    }

    pub fn segment_offset(self) -> Option<u16> {
        match self {
            SegmentInfo::Middle { so } | SegmentInfo::Last { so } => Some(so),
            SegmentInfo::Full | SegmentInfo::First => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlcSegment {
    pub sn: u16,
    pub si: SegmentInfo,
    pub data: Vec<u8>,
}

impl RlcSegment {
    pub fn full(sn: u16, data: Vec<u8>) -> Self {
        Self { sn, si: SegmentInfo::Full, data }
    }

    pub fn header_len(&self) -> usize {
        if self.si.segment_offset().is_some() {
            4
        } else {
            2
        }
    }
}

pub fn encode_rlc(seg: &RlcSegment) -> Result<Vec<u8>, CodecError> {
    if seg.sn > MAX_SN {
        return Err(CodecError::OutOfRange { layer: LAYER, field: "sn" });
    }
    let mut out = Vec::with_capacity(seg.header_len() + seg.data.len());
    out.push(0x80 | (seg.si.code() << 4) | (seg.sn >> 8) as u8);
    out.push(seg.sn as u8);
    if let Some(so) = seg.si.segment_offset() {
        out.extend_from_slice(&so.to_be_bytes());
    }
    out.extend_from_slice(&seg.data);
    Ok(out)
}

pub fn decode_rlc(bytes: &[u8]) -> Result<RlcSegment, CodecError> {
    let mut pos = 0;
    let hdr = take(LAYER, bytes, &mut pos, 2)?;
    if hdr[0] & 0x80 == 0 {
        return Err(CodecError::Reserved { layer: LAYER, what: "control pdu" });
    }
    let sn = (u16::from(hdr[0] & 0x0F) << 8) | u16::from(hdr[1]);
    let si = match (hdr[0] >> 4) & 0x07 {
        0 => SegmentInfo::Full,
        1 => SegmentInfo::First,
        code @ (2 | 3) => {
            let so = take(LAYER, bytes, &mut pos, 2)?;
            let so = u16::from_be_bytes([so[0], so[1]]);
            if code == 2 {
                SegmentInfo::Last { so }
            } else {
                SegmentInfo::Middle { so }
            }
        }
        _ => return Err(CodecError::Reserved { layer: LAYER, what: "si" }),
    };
    Ok(RlcSegment { sn, si, data: bytes[pos..].to_vec() })
}

/// Receive-side reassembly of one SDU from its segments.
#[derive(Debug, Default, Clone)]
pub struct Reassembly {
    parts: Vec<(u16, Vec<u8>, bool)>,
}

impl Reassembly {
    /// Adds a segment; returns the SDU once the pieces form a contiguous
    /// byte range from offset 0 through a last segment.
    pub fn push(&mut self, seg: &RlcSegment) -> Option<Vec<u8>> {
        match seg.si {
            SegmentInfo::Full => return Some(seg.data.clone()),
            SegmentInfo::First => self.parts.push((0, seg.data.clone(), false)),
            SegmentInfo::Middle { so } => self.parts.push((so, seg.data.clone(), false)),
            SegmentInfo::Last { so } => self.parts.push((so, seg.data.clone(), true)),
        }
        self.parts.sort_by_key(|(so, _, _)| *so);
        let mut out = Vec::new();
        for (so, data, last) in &self.parts {
            if usize::from(*so) != out.len() {
                return None;
            }
            out.extend_from_slice(data);
            if *last {
                self.parts.clear();
                return Some(out);
            }
        }
        None
    }
}
