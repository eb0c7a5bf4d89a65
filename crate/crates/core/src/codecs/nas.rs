//! 5GMM messages.
//!
//! Every message starts `0x7E 0x00 <type>` (plain 5GMM, no security header)
//! and the body is fixed-width except for the trailing identity of
//! Registration Request and Identity Response, which runs to the end.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::suci::Suci;
use super::{take, CodecError};

const LAYER: &str = "nas";
pub const EPD_5GMM: u8 = 0x7E;
pub const PLAIN_HEADER: u8 = 0x00;
pub const TMSI_LEN: usize = 6;

pub const MT_REGISTRATION_REQUEST: u8 = 0x41;
pub const MT_REGISTRATION_ACCEPT: u8 = 0x42;
pub const MT_REGISTRATION_REJECT: u8 = 0x44;
pub const MT_SERVICE_REQUEST: u8 = 0x4C;
pub const MT_SERVICE_REJECT: u8 = 0x4D;
pub const MT_SERVICE_ACCEPT: u8 = 0x4E;
pub const MT_AUTHENTICATION_REQUEST: u8 = 0x56;
pub const MT_AUTHENTICATION_RESPONSE: u8 = 0x57;
pub const MT_AUTHENTICATION_REJECT: u8 = 0x58;
pub const MT_AUTHENTICATION_FAILURE: u8 = 0x59;
pub const MT_IDENTITY_REQUEST: u8 = 0x5B;
pub const MT_IDENTITY_RESPONSE: u8 = 0x5C;
pub const MT_SECURITY_MODE_COMMAND: u8 = 0x5D;
pub const MT_SECURITY_MODE_COMPLETE: u8 = 0x5E;
pub const MT_SECURITY_MODE_REJECT: u8 = 0x5F;

pub const ID_TYPE_SUCI: u8 = 0x01;
pub const ID_TYPE_5G_S_TMSI: u8 = 0x04;

pub const CAUSE_ILLEGAL_UE: u8 = 3;
pub const CAUSE_UE_IDENTITY_UNKNOWN: u8 = 9;
pub const CAUSE_NO_SUITABLE_CELLS_IN_TA: u8 = 15;
pub const CAUSE_MAC_FAILURE: u8 = 20;
pub const CAUSE_UE_SECURITY_CAPABILITIES_MISMATCH: u8 = 23;
pub const CAUSE_N1_MODE_NOT_ALLOWED: u8 = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Ea(u8),
    Ia(u8),
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Ea(i) => write!(f, "EA{i}"),
            Algorithm::Ia(i) => write!(f, "IA{i}"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let (kind, idx) = upper.split_at(upper.len().min(2));
        let i: u8 = idx.parse().map_err(|_| format!("bad algorithm {s:?}"))?;
        if i > 7 {
            return Err(format!("algorithm index out of range in {s:?}"));
        }
        match kind {
            "EA" => Ok(Algorithm::Ea(i)),
            "IA" => Ok(Algorithm::Ia(i)),
            _ => Err(format!("bad algorithm {s:?}")),
        }
    }
}

/// UE security capabilities as two bitmasks; bit `i` set means EAi / IAi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SecurityCapabilities {
    pub ea: u8,
    pub ia: u8,
}

impl SecurityCapabilities {
    pub fn from_algorithms<I: IntoIterator<Item = Algorithm>>(algs: I) -> Self {
        let mut caps = Self::default();
        for a in algs {
            match a {
                Algorithm::Ea(i) => caps.ea |= 1 << (i & 7),
                Algorithm::Ia(i) => caps.ia |= 1 << (i & 7),
            }
        }
        caps
    }

    /// The set injected by the SUCI-extraction payload.
    pub fn poisoned() -> Self {
        use Algorithm::*;
        Self::from_algorithms([Ea(0), Ea(1), Ia(1), Ia(7), Ea(7)])
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        let ea = (0..8).filter(|i| self.ea & (1 << i) != 0).map(Algorithm::Ea);
        let ia = (0..8).filter(|i| self.ia & (1 << i) != 0).map(Algorithm::Ia);
        ea.chain(ia).collect()
    }

    pub fn contains(&self, a: Algorithm) -> bool {
        match a {
            Algorithm::Ea(i) => i < 8 && self.ea & (1 << i) != 0,
            Algorithm::Ia(i) => i < 8 && self.ia & (1 << i) != 0,
        }
    }
}

impl fmt::Display for SecurityCapabilities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.algorithms().iter().map(Algorithm::to_string).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

impl TryFrom<Vec<String>> for SecurityCapabilities {
    type Error = String;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        let algs = v.iter().map(|s| s.parse()).collect::<Result<Vec<Algorithm>, _>>()?;
        Ok(Self::from_algorithms(algs))
    }
}

impl From<SecurityCapabilities> for Vec<String> {
    fn from(c: SecurityCapabilities) -> Self {
        c.algorithms().iter().map(Algorithm::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MobileIdentity {
    Suci(Suci),
    /// 48-bit 5G-TMSI.
    FiveGTmsi(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NasMessage {
    RegistrationRequest { identity: MobileIdentity, capabilities: SecurityCapabilities },
    RegistrationAccept { new_tmsi: u64 },
    RegistrationReject { cause: u8 },
    ServiceRequest { s_tmsi: u64 },
    ServiceAccept,
    ServiceReject { cause: u8 },
    /// Always asks for the SUCI.
    IdentityRequest,
    IdentityResponse { suci: Suci },
    AuthenticationRequest { rand: [u8; 16], autn: [u8; 16] },
    AuthenticationResponse { res: [u8; 16] },
    AuthenticationFailure { cause: u8 },
    AuthenticationReject,
    SecurityModeCommand { replayed_capabilities: SecurityCapabilities },
    SecurityModeComplete,
    SecurityModeReject { cause: u8 },
}

impl NasMessage {
    pub fn message_type(&self) -> u8 {
        match self {
            NasMessage::RegistrationRequest { .. } => MT_REGISTRATION_REQUEST,
            NasMessage::RegistrationAccept { .. } => MT_REGISTRATION_ACCEPT,
            NasMessage::RegistrationReject { .. } => MT_REGISTRATION_REJECT,
            NasMessage::ServiceRequest { .. } => MT_SERVICE_REQUEST,
            NasMessage::ServiceAccept => MT_SERVICE_ACCEPT,
            NasMessage::ServiceReject { .. } => MT_SERVICE_REJECT,
            NasMessage::IdentityRequest => MT_IDENTITY_REQUEST,
            NasMessage::IdentityResponse { .. } => MT_IDENTITY_RESPONSE,
            NasMessage::AuthenticationRequest { .. } => MT_AUTHENTICATION_REQUEST,
            NasMessage::AuthenticationResponse { .. } => MT_AUTHENTICATION_RESPONSE,
            NasMessage::AuthenticationFailure { .. } => MT_AUTHENTICATION_FAILURE,
            NasMessage::AuthenticationReject => MT_AUTHENTICATION_REJECT,
            NasMessage::SecurityModeCommand { .. } => MT_SECURITY_MODE_COMMAND,
            NasMessage::SecurityModeComplete => MT_SECURITY_MODE_COMPLETE,
            NasMessage::SecurityModeReject { .. } => MT_SECURITY_MODE_REJECT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NasMessage::RegistrationRequest { .. } => "RegistrationRequest",
            NasMessage::RegistrationAccept { .. } => "RegistrationAccept",
            NasMessage::RegistrationReject { .. } => "RegistrationReject",
            NasMessage::ServiceRequest { .. } => "ServiceRequest",
            NasMessage::ServiceAccept => "ServiceAccept",
            NasMessage::ServiceReject { .. } => "ServiceReject",
            NasMessage::IdentityRequest => "IdentityRequest",
            NasMessage::IdentityResponse { .. } => "IdentityResponse",
            NasMessage::AuthenticationRequest { .. } => "AuthenticationRequest",
            NasMessage::AuthenticationResponse { .. } => "AuthenticationResponse",
            NasMessage::AuthenticationFailure { .. } => "AuthenticationFailure",
            NasMessage::AuthenticationReject => "AuthenticationReject",
            NasMessage::SecurityModeCommand { .. } => "SecurityModeCommand",
            NasMessage::SecurityModeComplete => "SecurityModeComplete",
            NasMessage::SecurityModeReject { .. } => "SecurityModeReject",
        }
    }

    /// Downlink messages after which the network releases the connection.
    pub fn ends_connection(&self) -> bool {
        matches!(
            self,
            NasMessage::RegistrationAccept { .. }
                | NasMessage::RegistrationReject { .. }
                | NasMessage::ServiceAccept
                | NasMessage::ServiceReject { .. }
                | NasMessage::AuthenticationReject
        )
    }
}

fn tmsi_bytes(tmsi: u64) -> Result<[u8; TMSI_LEN], CodecError> {
    if tmsi >> 48 != 0 {
        return Err(CodecError::OutOfRange { layer: LAYER, field: "tmsi" });
    }
    Ok(tmsi.to_be_bytes()[2..].try_into().expect("six bytes"))
}

fn read_tmsi(bytes: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let b = take(LAYER, bytes, pos, TMSI_LEN)?;
    let mut w = [0u8; 8];
    w[2..].copy_from_slice(b);
    Ok(u64::from_be_bytes(w))
}

pub fn encode_nas(m: &NasMessage) -> Result<Vec<u8>, CodecError> {
    let mut out = vec![EPD_5GMM, PLAIN_HEADER, m.message_type()];
    match m {
        NasMessage::RegistrationRequest { identity, capabilities } => {
            out.extend_from_slice(&[capabilities.ea, capabilities.ia]);
            match identity {
                MobileIdentity::Suci(s) => {
                    out.push(ID_TYPE_SUCI);
                    out.extend_from_slice(&suci_bytes(s)?);
                }
                MobileIdentity::FiveGTmsi(t) => {
                    out.push(ID_TYPE_5G_S_TMSI);
                    out.extend_from_slice(&tmsi_bytes(*t)?);
                }
            }
        }
        NasMessage::RegistrationAccept { new_tmsi } => out.extend_from_slice(&tmsi_bytes(*new_tmsi)?),
        NasMessage::ServiceRequest { s_tmsi } => out.extend_from_slice(&tmsi_bytes(*s_tmsi)?),
        NasMessage::RegistrationReject { cause }
        | NasMessage::ServiceReject { cause }
        | NasMessage::AuthenticationFailure { cause }
        | NasMessage::SecurityModeReject { cause } => out.push(*cause),
        NasMessage::IdentityRequest => out.push(ID_TYPE_SUCI),
        NasMessage::IdentityResponse { suci } => {
            out.push(ID_TYPE_SUCI);
            out.extend_from_slice(&suci_bytes(suci)?);
        }
        NasMessage::AuthenticationRequest { rand, autn } => {
            out.extend_from_slice(rand);
            out.extend_from_slice(autn);
        }
        NasMessage::AuthenticationResponse { res } => out.extend_from_slice(res),
        NasMessage::SecurityModeCommand { replayed_capabilities: c } => out.extend_from_slice(&[c.ea, c.ia]),
        NasMessage::ServiceAccept | NasMessage::AuthenticationReject | NasMessage::SecurityModeComplete => {}
    }
    Ok(out)
}

fn suci_bytes(s: &Suci) -> Result<Vec<u8>, CodecError> {
    if s.ciphertext.is_empty() {
        return Err(CodecError::OutOfRange { layer: LAYER, field: "suci ciphertext" });
    }
    Ok(s.to_bytes())
}

fn finish(bytes: &[u8], pos: usize) -> Result<(), CodecError> {
    if pos < bytes.len() {
        return Err(CodecError::TrailingBytes { layer: LAYER, count: bytes.len() - pos });
    }
    Ok(())
}

fn read_array<const N: usize>(bytes: &[u8], pos: &mut usize) -> Result<[u8; N], CodecError> {
    Ok(take(LAYER, bytes, pos, N)?.try_into().expect("length checked"))
}

pub fn decode_nas(bytes: &[u8]) -> Result<NasMessage, CodecError> {
    if bytes.is_empty() {
        return Err(CodecError::Empty { layer: LAYER });
    }
    let mut pos = 0;
    let hdr = take(LAYER, bytes, &mut pos, 3)?;
    if hdr[0] != EPD_5GMM {
        return Err(CodecError::Reserved { layer: LAYER, what: "protocol discriminator" });
    }
    if hdr[1] != PLAIN_HEADER {
        return Err(CodecError::Reserved { layer: LAYER, what: "security header" });
    }
    let msg = match hdr[2] {
        MT_REGISTRATION_REQUEST => {
            let [ea, ia] = read_array::<2>(bytes, &mut pos)?;
            let capabilities = SecurityCapabilities { ea, ia };
            let id_type = take(LAYER, bytes, &mut pos, 1)?[0];
            let identity = match id_type {
                ID_TYPE_SUCI => {
                    let s = Suci::from_bytes(&bytes[pos..])?;
                    pos = bytes.len();
                    MobileIdentity::Suci(s)
                }
                ID_TYPE_5G_S_TMSI => MobileIdentity::FiveGTmsi(read_tmsi(bytes, &mut pos)?),
                _ => return Err(CodecError::OutOfRange { layer: LAYER, field: "identity type" }),
            };
            NasMessage::RegistrationRequest { identity, capabilities }
        }
        MT_REGISTRATION_ACCEPT => NasMessage::RegistrationAccept { new_tmsi: read_tmsi(bytes, &mut pos)? },
        MT_SERVICE_REQUEST => NasMessage::ServiceRequest { s_tmsi: read_tmsi(bytes, &mut pos)? },
        MT_REGISTRATION_REJECT => NasMessage::RegistrationReject { cause: read_array::<1>(bytes, &mut pos)?[0] },
        MT_SERVICE_REJECT => NasMessage::ServiceReject { cause: read_array::<1>(bytes, &mut pos)?[0] },
        MT_AUTHENTICATION_FAILURE => {
            NasMessage::AuthenticationFailure { cause: read_array::<1>(bytes, &mut pos)?[0] }
        }
        MT_SECURITY_MODE_REJECT => NasMessage::SecurityModeReject { cause: read_array::<1>(bytes, &mut pos)?[0] },
        MT_IDENTITY_REQUEST => {
            if read_array::<1>(bytes, &mut pos)?[0] != ID_TYPE_SUCI {
                return Err(CodecError::OutOfRange { layer: LAYER, field: "requested identity" });
            }
            NasMessage::IdentityRequest
        }
        MT_IDENTITY_RESPONSE => {
            if read_array::<1>(bytes, &mut pos)?[0] != ID_TYPE_SUCI {
                return Err(CodecError::OutOfRange { layer: LAYER, field: "identity type" });
            }
            let suci = Suci::from_bytes(&bytes[pos..])?;
            pos = bytes.len();
            NasMessage::IdentityResponse { suci }
        }
        MT_AUTHENTICATION_REQUEST => {
            let rand = read_array::<16>(bytes, &mut pos)?;
            let autn = read_array::<16>(bytes, &mut pos)?;
            NasMessage::AuthenticationRequest { rand, autn }
        }
        MT_AUTHENTICATION_RESPONSE => NasMessage::AuthenticationResponse { res: read_array::<16>(bytes, &mut pos)? },
        MT_SECURITY_MODE_COMMAND => {
            let [ea, ia] = read_array::<2>(bytes, &mut pos)?;
            NasMessage::SecurityModeCommand { replayed_capabilities: SecurityCapabilities { ea, ia } }
        }
        MT_SERVICE_ACCEPT => NasMessage::ServiceAccept,
        MT_AUTHENTICATION_REJECT => NasMessage::AuthenticationReject,
        MT_SECURITY_MODE_COMPLETE => NasMessage::SecurityModeComplete,
        tag => return Err(CodecError::UnknownTag { layer: LAYER, tag }),
    };
    finish(bytes, pos)?;
    Ok(msg)
}
