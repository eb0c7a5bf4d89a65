//! PDCP data PDU for SRBs: `R R R R SN[11:8]`, `SN[7:0]`, SDU, 4-byte MAC-I.

use serde::{Deserialize, Serialize};

use super::CodecError;

const LAYER: &str = "pdcp";
pub const MIN_PDU_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdcpPdu {
    pub sn: u16,
    pub sdu: Vec<u8>,
    pub mac_i: [u8; 4],
}

impl PdcpPdu {
    /// PDU sent before integrity protection is active: MAC-I is all zero.
    pub fn unprotected(sn: u16, sdu: Vec<u8>) -> Self {
        Self { sn, sdu, mac_i: [0; 4] }
    }
}

pub fn encode_pdcp(pdu: &PdcpPdu) -> Result<Vec<u8>, CodecError> {
    if pdu.sn > 0x0FFF {
        return Err(CodecError::OutOfRange { layer: LAYER, field: "sn" });
    }
    let mut out = Vec::with_capacity(MIN_PDU_LEN + pdu.sdu.len());
    out.extend_from_slice(&pdu.sn.to_be_bytes());
    out.extend_from_slice(&pdu.sdu);
    out.extend_from_slice(&pdu.mac_i);
    Ok(out)
}

pub fn decode_pdcp(bytes: &[u8]) -> Result<PdcpPdu, CodecError> {
    if bytes.len() < MIN_PDU_LEN {
        return Err(CodecError::Truncated { layer: LAYER, needed: MIN_PDU_LEN, available: bytes.len() });
    }
    if bytes[0] & 0xF0 != 0 {
        return Err(CodecError::Reserved { layer: LAYER, what: "R bits" });
    }
    let sn = u16::from_be_bytes([bytes[0], bytes[1]]);
    let split = bytes.len() - 4;
    Ok(PdcpPdu {
        sn,
        sdu: bytes[2..split].to_vec(),
        mac_i: bytes[split..].try_into().expect("four bytes"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unprotected_pdu_layout() {
        let bytes = encode_pdcp(&PdcpPdu::unprotected(0, vec![0xAA, 0xBB])).unwrap();
        assert_eq!(bytes, [0, 0, 0xAA, 0xBB, 0, 0, 0, 0]);
        assert_eq!(bytes.len(), 8);
    }

    #[test]
    fn max_sn_round_trips() {
        let pdu = PdcpPdu { sn: 4095, sdu: vec![1], mac_i: [1, 2, 3, 4] };
        let bytes = encode_pdcp(&pdu).unwrap();
        assert_eq!(&bytes[..2], &[0x0F, 0xFF]);
        assert_eq!(decode_pdcp(&bytes).unwrap(), pdu);
    }

    #[test]
    fn errors() {
        assert!(matches!(decode_pdcp(&[0; 5]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_pdcp(&[0x10, 0, 0, 0, 0, 0]), Err(CodecError::Reserved { .. })));
        assert!(encode_pdcp(&PdcpPdu::unprotected(4096, vec![])).is_err());
    }
}
