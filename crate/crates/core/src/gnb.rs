//! gNB MAC/RRC for one cell: RAR generation, TC-RNTI allocation, Msg3
//! classification, BSR-driven grant sizing and transparent NAS relay.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airtime::{AllocationId, SymbolTime, UplinkGrant, SLOT_NS};
use crate::codecs::rlc::Reassembly;
use crate::codecs::{
    decode_mac_pdu, decode_pdcp_payload, decode_rlc, encode_nas, encode_rrc, encode_srb_sdu, NasMessage,
    RrcMessage, RrcWrap, SegmentInfo,
};
use crate::ue::RarEntry;

pub const MIN_RNTI: u16 = 0x0001;
/// 0xFFF0..=0xFFFF are reserved.
pub const MAX_RNTI: u16 = 0xFFEF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Msg3EmptyPolicy {
    /// Drop the attempt and send nothing.
    Abort,
    /// Answer with a contention resolution that matches nobody.
    InvalidCri,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnbConfig {
    pub msg3_tbs: usize,
    pub large_grant_tbs: usize,
    pub max_tbs: usize,
    /// Re-grants after an undecodable uplink before the gNB gives up.
    pub max_ul_retx: u32,
    pub msg3_empty_policy: Msg3EmptyPolicy,
    pub rnti_quarantine_ms: f64,
    pub inactivity_ms: f64,
}

impl Default for GnbConfig {
    fn default() -> Self {
        GnbConfig {
            msg3_tbs: 7,
            large_grant_tbs: 128,
            max_tbs: 1024,
            max_ul_retx: 4,
            msg3_empty_policy: Msg3EmptyPolicy::Abort,
            rnti_quarantine_ms: 100.0,
            inactivity_ms: 2000.0,
        }
    }
}

impl GnbConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.msg3_tbs < 7 {
            return Err("msg3_tbs must hold a 7-byte Msg3".into());
        }
        if self.large_grant_tbs < self.msg3_tbs || self.max_tbs < self.large_grant_tbs {
            return Err("grant sizes must satisfy msg3_tbs <= large_grant_tbs <= max_tbs".into());
        }
        for (name, v) in [("rnti_quarantine_ms", self.rnti_quarantine_ms), ("inactivity_ms", self.inactivity_ms)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GnbError {
    #[error("tc-rnti space exhausted")]
    RntiExhausted,
    #[error("rnti {0:#06x} is not active")]
    InactiveRnti(u16),
    #[error("no rrc connection for rnti {0:#06x}")]
    NotConnected(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RrcConnState {
    AwaitingMsg3,
    AwaitingSetupComplete,
    Connected,
}

#[derive(Debug, Clone)]
pub struct ConnectionRecord {
    pub conn_id: u64,
    pub rnti: u16,
    pub msg3_bytes: Option<[u8; 6]>,
    pub rrc_state: RrcConnState,
    pub pending_bsr: bool,
    pub retx: u32,
    pub transaction_id: u8,
    pub last_activity_ns: i64,
    delivered_sns: BTreeSet<u16>,
    reassembly: Reassembly,
}

/// A Random Access Response carrying one grant per detected preamble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rar {
    pub cell_id: u16,
    pub slot: SymbolTime,
    pub entries: Vec<RarEntry>,
}

/// A preamble as detected in one PRACH occasion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedPreamble {
    pub preamble_index: u8,
    pub timing_advance_us: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Msg3Outcome {
    /// Nothing decodable; the UE's contention timer will expire.
    Collision,
    /// Padding-only PDU or parse error: the attempt is dropped silently.
    Aborted { reason: &'static str },
    ContentionResolved { cri: [u8; 6], transaction_id: u8, conn_id: u64 },
    /// Empty Msg3 under `InvalidCri`: a resolution nobody will match.
    InvalidCri { cri: [u8; 6] },
    /// Msg3 named an existing C-RNTI; the TC-RNTI holder sees a mismatch.
    CrntiContention { crnti: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayedNas {
    pub conn_id: u64,
    pub rnti: u16,
    pub cell_id: u16,
    pub tracking_area: u16,
    pub nas: NasMessage,
    pub rrc: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UplinkOutcome {
    pub relayed: Vec<RelayedNas>,
    /// Requested size of the next grant, when one is due now.
    pub regrant: Option<Regrant>,
    pub duplicates_dropped: usize,
    pub setup_complete: bool,
    pub released: bool,
    pub anomalies: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regrant {
    pub requested_bytes: usize,
    pub retransmission: bool,
}

/// Downlink NAS wrapped for a UE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownlinkNas {
    pub rnti: u16,
    pub rrc: RrcMessage,
    pub sdu: Vec<u8>,
    pub release: bool,
}

#[derive(Debug, Clone)]
pub struct GnbContext {
    pub cell_id: u16,
    pub tracking_area: u16,
    pub k2: u8,
    pub tx_power_dbm: f64,
    pub cfg: GnbConfig,
    active: BTreeMap<u16, ConnectionRecord>,
    quarantine: BTreeMap<u16, i64>,
    next_allocation: u64,
    next_conn: u64,
    dl_rlc_sn: u16,
}

impl GnbContext {
    pub fn new(cell_id: u16, tracking_area: u16, k2: u8, tx_power_dbm: f64, cfg: GnbConfig) -> Self {
        GnbContext {
            cell_id,
            tracking_area,
            k2,
            tx_power_dbm,
            cfg,
            active: BTreeMap::new(),
            quarantine: BTreeMap::new(),
            next_allocation: 0,
            next_conn: 0,
            dl_rlc_sn: 0,
        }
    }

    pub fn connection(&self, rnti: u16) -> Option<&ConnectionRecord> {
        self.active.get(&rnti)
    }

    pub fn active_rntis(&self) -> impl Iterator<Item = u16> + '_ {
        self.active.keys().copied()
    }

    pub fn is_quarantined(&self, rnti: u16, now_ns: i64) -> bool {
        self.quarantine.get(&rnti).is_some_and(|&until| until > now_ns)
    }

    /// Globally unique allocation ids: the cell id in the top 16 bits.
    fn allocation(&mut self) -> AllocationId {
        self.next_allocation += 1;
        AllocationId((u64::from(self.cell_id) << 48) | self.next_allocation)
    }

    fn conn_id(&mut self) -> u64 {
        self.next_conn += 1;
        (u64::from(self.cell_id) << 48) | self.next_conn
    }

    fn allocate_rnti<R: Rng + ?Sized>(&mut self, now_ns: i64, rng: &mut R) -> Result<u16, GnbError> {
        let span = u32::from(MAX_RNTI - MIN_RNTI) + 1;
        let start = rng.random_range(0..span);
        for i in 0..span {
            let r = (MIN_RNTI as u32 + (start + i) % span) as u16;
            if !self.active.contains_key(&r) && !self.is_quarantined(r, now_ns) {
                return Ok(r);
            }
        }
        Err(GnbError::RntiExhausted)
    }

    /// Answers the preambles detected in one PRACH occasion with a single
    /// RAR sent in `rar_slot`. Duplicate preamble indices get one grant.
    pub fn on_preambles<R: Rng + ?Sized>(
        &mut self,
        detected: &[DetectedPreamble],
        rar_slot: SymbolTime,
        rng: &mut R,
    ) -> (Option<Rar>, Vec<String>) {
        let now_ns = rar_slot.absolute_ns();
        self.quarantine.retain(|_, until| *until > now_ns);
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        let mut anomalies = Vec::new();
        for d in detected {
            if !seen.insert(d.preamble_index) {
                continue;
            }
            let tc_rnti = match self.allocate_rnti(now_ns, rng) {
                Ok(r) => r,
                Err(e) => {
                    anomalies.push(format!("preamble {} ignored: {e}", d.preamble_index));
                    continue;
                }
            };
            let allocation_id = self.allocation();
            let grant = UplinkGrant::new(tc_rnti, rar_slot, self.k2, self.cfg.msg3_tbs, allocation_id)
                .expect("k2 and tbs validated");
            let conn_id = self.conn_id();
            self.active.insert(
                tc_rnti,
                ConnectionRecord {
                    conn_id,
                    rnti: tc_rnti,
                    msg3_bytes: None,
                    rrc_state: RrcConnState::AwaitingMsg3,
                    pending_bsr: false,
                    retx: 0,
                    transaction_id: 0,
                    last_activity_ns: now_ns,
                    delivered_sns: BTreeSet::new(),
                    reassembly: Reassembly::default(),
                },
            );
            entries.push(RarEntry {
                preamble_index: d.preamble_index,
                tc_rnti,
                grant,
                timing_advance_us: d.timing_advance_us,
            });
        }
        let rar = (!entries.is_empty()).then_some(Rar { cell_id: self.cell_id, slot: rar_slot, entries });
        (rar, anomalies)
    }

    /// Releases `rnti`; it stays unusable for the quarantine period.
    pub fn release(&mut self, rnti: u16, now_ns: i64) -> Option<ConnectionRecord> {
        let rec = self.active.remove(&rnti)?;
        let q = (self.cfg.rnti_quarantine_ms * 1e6).round() as i64;
        if q > 0 {
            self.quarantine.insert(rnti, now_ns + q);
        }
        Some(rec)
    }

    /// Classifies what was decoded on a Msg3 allocation.
    pub fn on_msg3<R: Rng + ?Sized>(
        &mut self,
        rnti: u16,
        decoded: Option<&[u8]>,
        now_ns: i64,
        rng: &mut R,
    ) -> Result<Msg3Outcome, GnbError> {
        let rec = self.active.get(&rnti).ok_or(GnbError::InactiveRnti(rnti))?;
        if rec.rrc_state != RrcConnState::AwaitingMsg3 {
            return Err(GnbError::InactiveRnti(rnti));
        }
        let Some(bytes) = decoded else {
            self.release(rnti, now_ns);
            return Ok(Msg3Outcome::Collision);
        };
        let pdu = match decode_mac_pdu(bytes) {
            Ok(p) => p,
            Err(_) => {
                self.release(rnti, now_ns);
                return Ok(Msg3Outcome::Aborted { reason: "parse error" });
            }
        };
        if pdu.is_padding_only() {
            self.release(rnti, now_ns);
            return Ok(match self.cfg.msg3_empty_policy {
                Msg3EmptyPolicy::Abort => Msg3Outcome::Aborted { reason: "empty mac pdu" },
                Msg3EmptyPolicy::InvalidCri => Msg3Outcome::InvalidCri { cri: [0; 6] },
            });
        }
        if let Some(crnti) = pdu.crnti() {
            self.release(rnti, now_ns);
            return Ok(Msg3Outcome::CrntiContention { crnti });
        }
        let Some(ccch) = pdu.ccch_sdu().copied() else {
            self.release(rnti, now_ns);
            return Ok(Msg3Outcome::Aborted { reason: "no ccch sdu" });
        };
        let transaction_id = rng.random_range(0..4u8);
        let rec = self.active.get_mut(&rnti).expect("checked above");
        rec.msg3_bytes = Some(ccch);
        rec.rrc_state = RrcConnState::AwaitingSetupComplete;
        rec.transaction_id = transaction_id;
        rec.last_activity_ns = now_ns;
        Ok(Msg3Outcome::ContentionResolved { cri: ccch, transaction_id, conn_id: rec.conn_id })
    }

    /// Issues an uplink grant to `rnti` in `grant_slot`.
    pub fn schedule_ul(
        &mut self,
        rnti: u16,
        requested_bytes: usize,
        grant_slot: SymbolTime,
    ) -> Result<UplinkGrant, GnbError> {
        let (msg3_tbs, large, max) = (self.cfg.msg3_tbs, self.cfg.large_grant_tbs, self.cfg.max_tbs);
        let rec = self.active.get_mut(&rnti).ok_or(GnbError::InactiveRnti(rnti))?;
        let tbs = if std::mem::take(&mut rec.pending_bsr) {
            large.max(requested_bytes.min(max))
        } else {
            requested_bytes.min(max).max(msg3_tbs)
        };
        let k2 = self.k2;
        let allocation_id = self.allocation();
        Ok(UplinkGrant::new(rnti, grant_slot, k2, tbs, allocation_id).expect("k2 and tbs validated"))
    }

    /// Processes what was decoded on a data grant of a connected UE.
    pub fn on_uplink(&mut self, rnti: u16, decoded: Option<&[u8]>, now_ns: i64) -> Result<UplinkOutcome, GnbError> {
        let (cell_id, tracking_area, max_retx) = (self.cell_id, self.tracking_area, self.cfg.max_ul_retx);
        let rec = self.active.get_mut(&rnti).ok_or(GnbError::InactiveRnti(rnti))?;
        if rec.rrc_state == RrcConnState::AwaitingMsg3 {
            return Err(GnbError::NotConnected(rnti));
        }
        let mut out = UplinkOutcome::default();
        let Some(bytes) = decoded else {
            rec.retx += 1;
            if rec.retx > max_retx {
                out.released = true;
                out.anomalies.push(format!("rnti {rnti:#06x}: {max_retx} uplink retransmissions failed"));
                self.release(rnti, now_ns);
            } else {
                out.regrant = Some(Regrant { requested_bytes: 0, retransmission: true });
            }
            return Ok(out);
        };
        rec.retx = 0;
        rec.last_activity_ns = now_ns;
        let pdu = match decode_mac_pdu(bytes) {
            Ok(p) => p,
            Err(e) => {
                out.anomalies.push(format!("undecodable uplink: {e}"));
                return Ok(out);
            }
        };
        if pdu.short_bsr().is_some() {
            rec.pending_bsr = true;
            out.regrant = Some(Regrant { requested_bytes: 0, retransmission: false });
        }
        for sdu in pdu.dcch_sdus() {
            let seg = match decode_rlc(sdu) {
                Ok(s) => s,
                Err(e) => {
                    out.anomalies.push(format!("rlc: {e}"));
                    continue;
                }
            };
            if seg.si == SegmentInfo::Full && !rec.delivered_sns.insert(seg.sn) {
                out.duplicates_dropped += 1;
                continue;
            }
            let Some(whole) = rec.reassembly.push(&seg) else { continue };
            let (_, rrc, nas) = match decode_pdcp_payload(&whole) {
                Ok(v) => v,
                Err(e) => {
                    out.anomalies.push(format!("srb1: {e}"));
                    continue;
                }
            };
            match (&rrc, rec.rrc_state) {
                (RrcMessage::SetupComplete { .. }, RrcConnState::AwaitingSetupComplete) => {
                    rec.rrc_state = RrcConnState::Connected;
                    out.setup_complete = true;
                }
                (RrcMessage::UlInformationTransfer { .. }, RrcConnState::Connected) => {}
                _ => {
                    out.anomalies.push(format!("unexpected {} in {:?}", rrc.name(), rec.rrc_state));
                    continue;
                }
            }
            if let Some(nas) = nas {
                out.relayed.push(RelayedNas {
                    conn_id: rec.conn_id,
                    rnti,
                    cell_id,
                    tracking_area,
                    nas,
                    rrc: rrc.name(),
                });
            }
        }
        Ok(out)
    }

    /// Wraps a NAS message from the core for the UE holding `rnti`.
    /// Messages that end the connection release the RNTI.
    pub fn relay_downlink(&mut self, rnti: u16, conn_id: u64, nas: &NasMessage, now_ns: i64) -> Result<DownlinkNas, GnbError> {
        match self.active.get_mut(&rnti) {
            Some(rec) if rec.conn_id == conn_id && rec.rrc_state == RrcConnState::Connected => {
                rec.last_activity_ns = now_ns;
            }
            _ => return Err(GnbError::NotConnected(rnti)),
        }
        let rrc = RrcWrap::DlInformationTransfer.wrap(encode_nas(nas).expect("valid nas"));
        let sdu = encode_srb_sdu(&rrc, self.dl_rlc_sn, 0).expect("valid sdu");
        self.dl_rlc_sn = (self.dl_rlc_sn + 1) & crate::codecs::rlc::MAX_SN;
        let release = nas.ends_connection();
        if release {
            self.release(rnti, now_ns);
        }
        Ok(DownlinkNas { rnti, rrc, sdu, release })
    }

    /// Releases connections idle for longer than the inactivity timer.
    pub fn expire_inactive(&mut self, now_ns: i64) -> Vec<u16> {
        let limit = (self.cfg.inactivity_ms * 1e6).round() as i64;
        let stale: Vec<u16> = self
            .active
            .values()
            .filter(|r| now_ns - r.last_activity_ns >= limit.max(SLOT_NS))
            .map(|r| r.rnti)
            .collect();
        for r in &stale {
            self.release(*r, now_ns);
        }
        stale
    }
}

/// The bytes of a contention resolution followed by RRC Setup, for traces.
pub fn msg4_bytes(cri: [u8; 6], transaction_id: u8) -> Vec<u8> {
    let mut out = encode_rrc(&RrcMessage::ContentionResolutionId { cri }).expect("valid cri");
    out.extend(encode_rrc(&RrcMessage::Setup { transaction_id }).expect("valid setup"));
    out
}
