//! Passive uplink decoding: SRB1 reassembly and identity capture.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::airtime::SymbolTime;
use crate::codecs::rlc::Reassembly;
use crate::codecs::{decode_mac_pdu, decode_pdcp_payload, decode_rlc, NasMessage, Suci};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityKind {
    /// Low 39 bits of the 5G-S-TMSI from the SetupRequest.
    STmsi,
    /// The 39-bit random value of a UE without a TMSI.
    Random,
}

/// A SUCI tied to the identity its connection started with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedIdentity {
    pub tmsi: u64,
    pub identity_kind: IdentityKind,
    pub suci: Suci,
    pub captured_at: SymbolTime,
}

impl fmt::Display for CapturedIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.identity_kind {
            IdentityKind::STmsi => "s-tmsi",
            IdentityKind::Random => "random",
        };
        write!(f, "{:012x} {} {} {}", self.tmsi, hex::encode(self.suci.to_bytes()), self.captured_at, kind)
    }
}

/// One line per capture: `tmsi-hex suci-hex frame.slot.symbol kind`.
pub fn export_captures(list: &[CapturedIdentity]) -> String {
    let mut out = String::from("# tmsi suci time kind\n");
    for c in list {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_captures(text: &str) -> Result<Vec<CapturedIdentity>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |what: &str| format!("line {}: {what}", n + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        let [tmsi, suci, time, kind] = f.as_slice() else { return Err(err("expected four fields")) };
        let tmsi = u64::from_str_radix(tmsi, 16).map_err(|_| err("bad tmsi"))?;
        let suci = hex::decode(suci).ok().and_then(|b| Suci::from_bytes(&b).ok()).ok_or_else(|| err("bad suci"))?;
        let t: Vec<&str> = time.split('.').collect();
        let captured_at = match t.as_slice() {
            [fr, sl, sy] => {
                let p = |s: &str| s.parse::<u32>().map_err(|_| err("bad time"));
                SymbolTime::new(p(fr)?, p(sl)? as u8, p(sy)? as u8).map_err(|_| err("bad time"))?
            }
            _ => return Err(err("bad time")),
        };
        let identity_kind = match *kind {
            "s-tmsi" => IdentityKind::STmsi,
            "random" => IdentityKind::Random,
            _ => return Err(err("bad kind")),
        };
        out.push(CapturedIdentity { tmsi, identity_kind, suci, captured_at });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SniffOutcome {
    Messages(Vec<NasMessage>),
    Skipped(String),
}

/// Per-connection reassembly of sniffed SRB1 traffic.
#[derive(Debug, Default, Clone)]
pub struct UplinkSniffer {
    buffers: BTreeMap<(u16, u16), Reassembly>,
}

impl UplinkSniffer {
    /// Looks only at DCCH sub-PDUs; everything else is ignored.
    pub fn sniff(&mut self, cell_id: u16, rnti: u16, bytes: &[u8]) -> SniffOutcome {
        let pdu = match decode_mac_pdu(bytes) {
            Ok(p) => p,
            Err(e) => return SniffOutcome::Skipped(format!("mac: {e}")),
        };
        let mut msgs = Vec::new();
        for sdu in pdu.dcch_sdus() {
            let seg = match decode_rlc(sdu) {
                Ok(s) => s,
                Err(e) => return SniffOutcome::Skipped(format!("rlc: {e}")),
            };
            let buf = self.buffers.entry((cell_id, rnti)).or_default();
            let Some(whole) = buf.push(&seg) else { continue };
            match decode_pdcp_payload(&whole) {
                Ok((_, _, Some(nas))) => msgs.push(nas),
                Ok(_) => {}
                Err(e) => return SniffOutcome::Skipped(format!("srb1: {e}")),
            }
        }
        SniffOutcome::Messages(msgs)
    }

    pub fn forget(&mut self, cell_id: u16, rnti: u16) {
        self.buffers.remove(&(cell_id, rnti));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::rlc::{encode_rlc, RlcSegment};
    use crate::codecs::{
        encode_mac_pdu, encode_nas, encode_pdcp, encode_rrc, MacPdu, MacSubPdu, PdcpPdu, RrcWrap, SegmentInfo,
    };

    fn suci() -> Suci {
        Suci { scheme_id: 1, home_network_key_id: 1, ephemeral: [5; 8], ciphertext: vec![9; 11] }
    }

    fn identity_response_sdu() -> Vec<u8> {
        let rrc = RrcWrap::UlInformationTransfer.wrap(encode_nas(&NasMessage::IdentityResponse { suci: suci() }).unwrap());
        encode_pdcp(&PdcpPdu::unprotected(1, encode_rrc(&rrc).unwrap())).unwrap()
    }

    #[test]
    fn single_segment_identity_response() {
        let sdu = encode_rlc(&RlcSegment::full(1, identity_response_sdu())).unwrap();
        let bytes = encode_mac_pdu(&MacPdu::padded(vec![MacSubPdu::DcchSdu(sdu)], 128).unwrap()).unwrap();
        let mut s = UplinkSniffer::default();
        assert_eq!(s.sniff(1, 7, &bytes), SniffOutcome::Messages(vec![NasMessage::IdentityResponse { suci: suci() }]));
    }

    #[test]
    fn non_dcch_is_ignored() {
        let bytes = encode_mac_pdu(&MacPdu::padded(vec![MacSubPdu::CcchSdu([1; 6])], 16).unwrap()).unwrap();
        assert_eq!(UplinkSniffer::default().sniff(1, 7, &bytes), SniffOutcome::Messages(vec![]));
    }

    #[test]
    fn two_segments_are_reassembled() {
        let whole = identity_response_sdu();
        let cut = 10;
        let first = RlcSegment { sn: 2, si: SegmentInfo::First, data: whole[..cut].to_vec() };
        let last = RlcSegment { sn: 2, si: SegmentInfo::Last { so: cut as u16 }, data: whole[cut..].to_vec() };
        let mut s = UplinkSniffer::default();
        let pdu = |seg: &RlcSegment| {
            encode_mac_pdu(&MacPdu::padded(vec![MacSubPdu::DcchSdu(encode_rlc(seg).unwrap())], 64).unwrap()).unwrap()
        };
        assert_eq!(s.sniff(1, 7, &pdu(&first)), SniffOutcome::Messages(vec![]));
        assert_eq!(
            s.sniff(1, 7, &pdu(&last)),
            SniffOutcome::Messages(vec![NasMessage::IdentityResponse { suci: suci() }])
        );
    }

    #[test]
    fn garbage_is_skipped() {
        assert!(matches!(UplinkSniffer::default().sniff(1, 7, &[0xFF]), SniffOutcome::Skipped(_)));
    }

    #[test]
    fn export_round_trip() {
        let list = vec![
            CapturedIdentity {
                tmsi: 0x12_3456_789A,
                identity_kind: IdentityKind::STmsi,
                suci: suci(),
                captured_at: SymbolTime::new(12, 3, 1).unwrap(),
            },
            CapturedIdentity {
                tmsi: 0x7F,
                identity_kind: IdentityKind::Random,
                suci: suci(),
                captured_at: SymbolTime::ZERO,
            },
        ];
        let text = export_captures(&list);
        assert!(text.lines().nth(1).unwrap().starts_with("00123456789a 0101"));
        assert_eq!(parse_captures(&text).unwrap(), list);
        assert!(parse_captures("zz 00 0.0.0 random").is_err());
    }
}
