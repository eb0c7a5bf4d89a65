//! Building and parsing the full MAC/RLC/PDCP/RRC/NAS stack on SRB1.

use serde::{Deserialize, Serialize};

use super::mac::{decode_mac_pdu, MacPdu, MacSubPdu, LARGE_BUFFER_INDEX};
use super::nas::{decode_nas, encode_nas, NasMessage};
use super::pdcp::{decode_pdcp, encode_pdcp, PdcpPdu};
use super::rlc::{decode_rlc, encode_rlc, RlcSegment};
use super::rrc::{decode_rrc, encode_rrc, RrcMessage};
use super::CodecError;

/// How a NAS message is carried in RRC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RrcWrap {
    SetupComplete(SetupCompleteTemplate),
    UlInformationTransfer,
    DlInformationTransfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupCompleteTemplate {
    pub transaction_id: u8,
    pub selected_plmn_index: u8,
}

impl Default for SetupCompleteTemplate {
    fn default() -> Self {
        Self { transaction_id: 0, selected_plmn_index: 1 }
    }
}

impl RrcWrap {
    pub fn wrap(&self, nas: Vec<u8>) -> RrcMessage {
        match *self {
            RrcWrap::SetupComplete(t) => RrcMessage::SetupComplete {
                transaction_id: t.transaction_id,
                selected_plmn_index: t.selected_plmn_index,
                nas_container: nas,
            },
            RrcWrap::UlInformationTransfer => RrcMessage::UlInformationTransfer { nas_container: nas },
            RrcWrap::DlInformationTransfer => RrcMessage::DlInformationTransfer { nas_container: nas },
        }
    }
}

/// RLC(Full) containing PDCP (MAC-I zero) containing `rrc`: the bytes of one
/// DCCH SDU.
pub fn encode_srb_sdu(rrc: &RrcMessage, rlc_sn: u16, pdcp_sn: u16) -> Result<Vec<u8>, CodecError> {
    let pdcp = encode_pdcp(&PdcpPdu::unprotected(pdcp_sn, encode_rrc(rrc)?))?;
    encode_rlc(&RlcSegment::full(rlc_sn, pdcp))
}

/// Encodes `nas` through every layer with both sequence numbers 0 and fits it
/// into a `tbs`-byte grant. When it does not fit, the PDU is a Short BSR
/// announcing a large buffer, so the gNB hands out a bigger grant.
pub fn layer_stack_encode(nas: &NasMessage, wrap: RrcWrap, tbs: usize) -> Result<MacPdu, CodecError> {
    let sdu = encode_srb_sdu(&wrap.wrap(encode_nas(nas)?), 0, 0)?;
    let sub = MacSubPdu::DcchSdu(sdu);
    if sub.encoded_len() <= tbs {
        return MacPdu::padded(vec![sub], tbs);
    }
    bsr_pdu(tbs)
}

/// A Short BSR with the largest buffer index, padded to `tbs`. Grants too
/// small even for the BSR yield padding only.
pub fn bsr_pdu(tbs: usize) -> Result<MacPdu, CodecError> {
    let bsr = MacSubPdu::ShortBsr { lcg: 0, buffer_size_index: LARGE_BUFFER_INDEX };
    if bsr.encoded_len() > tbs {
        return Ok(MacPdu::empty(tbs));
    }
    MacPdu::padded(vec![bsr], tbs)
}

/// One DCCH SDU taken apart as far as it goes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrbSdu {
    pub rlc: RlcSegment,
    /// Present only for `Full` segments whose inner layers decode.
    pub pdcp: Option<PdcpPdu>,
    pub rrc: Option<RrcMessage>,
    pub nas: Option<NasMessage>,
}

/// Decodes the RLC header and, for unsegmented SDUs, everything inside.
pub fn decode_srb_sdu(bytes: &[u8]) -> Result<SrbSdu, CodecError> {
    let rlc = decode_rlc(bytes)?;
    let mut out = SrbSdu { rlc, pdcp: None, rrc: None, nas: None };
    if out.rlc.si == super::SegmentInfo::Full {
        let (pdcp, rrc, nas) = decode_pdcp_payload(&out.rlc.data)?;
        out.pdcp = Some(pdcp);
        out.rrc = Some(rrc);
        out.nas = nas;
    }
    Ok(out)
}

/// Decodes a reassembled RLC SDU: PDCP, then RRC, then the NAS container.
pub fn decode_pdcp_payload(bytes: &[u8]) -> Result<(PdcpPdu, RrcMessage, Option<NasMessage>), CodecError> {
    let pdcp = decode_pdcp(bytes)?;
    let rrc = decode_rrc(&pdcp.sdu)?;
    let nas = match rrc.nas_container() {
        Some(c) if !c.is_empty() => Some(decode_nas(c)?),
        _ => None,
    };
    Ok((pdcp, rrc, nas))
}

/// Full decode of an uplink MAC PDU for traces and the gNB receive path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedUplink {
    pub mac: MacPdu,
    pub ccch: Option<RrcMessage>,
    pub srb: Vec<SrbSdu>,
}

pub fn decode_uplink(bytes: &[u8]) -> Result<DecodedUplink, CodecError> {
    let mac = decode_mac_pdu(bytes)?;
    let ccch = mac.ccch_sdu().map(|b| decode_rrc(b)).transpose()?;
    let srb = mac.dcch_sdus().map(decode_srb_sdu).collect::<Result<Vec<_>, _>>()?;
    Ok(DecodedUplink { mac, ccch, srb })
}
