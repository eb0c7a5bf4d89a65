//! The uplink-overshadowing adversary.
//!
//! The attacker follows the downlink of one cell, decides per grant whether
//! it can have a payload on air in time, and if so transmits on the victim's
//! allocation with more power. Four strategies are supported: a cell-wide
//! Msg3 DoS and three NAS-layer attacks that replace the first NAS message
//! of a connection.

pub mod latency;
pub mod sniffer;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airtime::{required_timing_advance, AllocationId, SymbolTime, Transmission, UplinkGrant};
use crate::codecs::rrc::TMSI_MASK;
use crate::codecs::{
    decode_rrc, encode_mac_pdu, layer_stack_encode, InitialUeIdentity, MacPdu, MobileIdentity, NasMessage,
    RrcMessage, RrcWrap, SecurityCapabilities, SetupCompleteTemplate, Suci,
};
use crate::gnb::Rar;
use crate::EntityId;

pub use latency::{check_deadline, compute_latency, sample_costs, CostModel, CostPreset, DeadlineCheck, Pipeline};
pub use sniffer::{export_captures, parse_captures, CapturedIdentity, IdentityKind, SniffOutcome, UplinkSniffer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    CellWideDos,
    RegistrationRejectDowngrade,
    SuciExtraction,
    SuciReplay { target_suci: Suci, whitelist_mode: bool },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::CellWideDos => "cell_wide_dos",
            Strategy::RegistrationRejectDowngrade => "registration_reject_downgrade",
            Strategy::SuciExtraction => "suci_extraction",
            Strategy::SuciReplay { .. } => "suci_replay",
        }
    }

    pub fn is_nas_attack(&self) -> bool {
        !matches!(self, Strategy::CellWideDos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaMode {
    /// From the attacker's own distance to the gNB.
    Computed,
    /// Reuse the TA the gNB gave the victim.
    CopyVictim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub strategy: Strategy,
    pub target_cell: u16,
    pub power_offset_db: f64,
    /// Power of an honest UE at the gNB; the attacker adds its offset.
    pub victim_reference_dbm: f64,
    pub distance_us: f64,
    pub ta_mode: TaMode,
    pub cost_table: CostModel,
    /// Per-operation standard deviations; `None` runs at the means.
    pub cost_jitter: Option<CostModel>,
    /// 48-bit TMSIs; the attack only touches connections announcing one of
    /// these in their SetupRequest.
    pub target_filter: Option<Vec<u64>>,
    pub max_repeats: u32,
    pub once_per_identity: bool,
    /// SUCI of a subscriber without 5G service, for the downgrade.
    pub downgrade_suci: Option<Suci>,
    pub replay_capabilities: SecurityCapabilities,
    pub rx_margin_db: f64,
    pub verdict_timeout_ms: f64,
    pub start_ns: i64,
}

impl AttackPlan {
    pub fn new(strategy: Strategy, target_cell: u16) -> Self {
        use crate::codecs::Algorithm::*;
        AttackPlan {
            strategy,
            target_cell,
            power_offset_db: 6.0,
            victim_reference_dbm: 20.0,
            distance_us: 0.5,
            ta_mode: TaMode::Computed,
            cost_table: CostModel::default(),
            cost_jitter: None,
            target_filter: None,
            max_repeats: 2,
            once_per_identity: true,
            downgrade_suci: None,
            replay_capabilities: SecurityCapabilities::from_algorithms([Ea(0), Ea(1), Ea(2), Ia(1), Ia(2)]),
            rx_margin_db: 0.0,
            verdict_timeout_ms: 200.0,
            start_ns: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.power_offset_db.is_finite() || !self.victim_reference_dbm.is_finite() {
            return Err("attack.power_offset_db must be finite".into());
        }
        if !self.distance_us.is_finite() || self.distance_us < 0.0 {
            return Err("attack.distance_us must be finite and non-negative".into());
        }
        self.cost_table.validate().map_err(|e| format!("attack.cost: {e}"))?;
        if let Some(j) = &self.cost_jitter {
            j.validate().map_err(|e| format!("attack.jitter: {e}"))?;
        }
        if self.max_repeats == 0 {
            return Err("attack.max_repeats must be at least 1".into());
        }
        if matches!(self.strategy, Strategy::RegistrationRejectDowngrade) && self.downgrade_suci.is_none() {
            return Err("attack.downgrade_supi is required for the downgrade".into());
        }
        if let Some(f) = &self.target_filter {
            if f.iter().any(|&t| t > TMSI_MASK) {
                return Err("attack.target_filter entries must be 48-bit".into());
            }
        }
        if !self.verdict_timeout_ms.is_finite() || self.verdict_timeout_ms <= 0.0 {
            return Err("attack.verdict_timeout_ms must be positive".into());
        }
        Ok(())
    }

    pub fn tx_power_dbm(&self) -> f64 {
        self.victim_reference_dbm + self.power_offset_db
    }
}

/// What the attacker expects the victim's first NAS message to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anticipated {
    RegistrationRequest,
    ServiceRequest,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayVerdict {
    SuciMatchesUe,
    SuciMismatch,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub cell_id: u16,
    pub rnti: u16,
    pub identity: Option<u64>,
    pub verdict: ReplayVerdict,
    pub at: SymbolTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Armed,
    BsrSent,
    PayloadSent { count: u32 },
    /// Payload delivered or budget used; now only watching.
    Done,
    Exempt,
}

#[derive(Debug, Clone)]
struct Tracked {
    identity: Option<InitialUeIdentity>,
    anticipated: Anticipated,
    phase: Phase,
    payload: Option<NasMessage>,
    verdict_pending: bool,
}

/// One go/no-go decision against a deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDecision {
    pub cell_id: u16,
    pub rnti: Option<u16>,
    pub stage: &'static str,
    pub n_grants: u32,
    pub observed_ns: i64,
    pub deadline_ns: i64,
    pub latency_us: f64,
    pub ready_ns: i64,
    pub margin_us: f64,
    pub met: bool,
    pub payload: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledTx {
    pub grant: UplinkGrant,
    pub tx: Transmission,
    pub pdu: MacPdu,
    pub nas: Option<NasMessage>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackerOutput {
    pub decisions: Vec<AttackDecision>,
    pub transmissions: Vec<ScheduledTx>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStats {
    pub rars_seen: u64,
    pub rar_grants_seen: u64,
    pub rar_grants_attacked: u64,
    pub deadline_misses: u64,
    pub bsr_sent: u64,
    pub payloads_sent: u64,
    pub connections_armed: u64,
    pub connections_exempt: u64,
}

#[derive(Debug, Clone)]
pub struct Attacker {
    pub plan: AttackPlan,
    pub stats: AttackStats,
    pub captured: Vec<CapturedIdentity>,
    pub verdicts: Vec<ReplayRecord>,
    tracked: BTreeMap<u16, Tracked>,
    victim_ta: BTreeMap<u16, f64>,
    attacked_identities: BTreeSet<(bool, u64)>,
    sniffer: UplinkSniffer,
}

impl Attacker {
    pub fn new(plan: AttackPlan) -> Self {
        Attacker {
            plan,
            stats: AttackStats::default(),
            captured: Vec::new(),
            verdicts: Vec::new(),
            tracked: BTreeMap::new(),
            victim_ta: BTreeMap::new(),
            attacked_identities: BTreeSet::new(),
            sniffer: UplinkSniffer::default(),
        }
    }

    fn active(&self, cell_id: u16, now_ns: i64) -> bool {
        cell_id == self.plan.target_cell && now_ns >= self.plan.start_ns
    }

    fn costs<R: Rng + ?Sized>(&self, rng: &mut R) -> CostModel {
        match &self.plan.cost_jitter {
            Some(sd) => sample_costs(&self.plan.cost_table, sd, rng),
            None => self.plan.cost_table,
        }
    }

    fn transmission(&self, grant: &UplinkGrant, pdu: &MacPdu) -> Transmission {
        let ta = match self.plan.ta_mode {
            TaMode::Computed => required_timing_advance(self.plan.distance_us),
            TaMode::CopyVictim => {
                self.victim_ta.get(&grant.rnti).copied().unwrap_or(required_timing_advance(self.plan.distance_us))
            }
        };
        Transmission {
            allocation_id: grant.allocation_id,
            sender: EntityId::Attacker,
            payload: encode_mac_pdu(pdu).expect("attacker pdus are valid"),
            tx_power_dbm: self.plan.tx_power_dbm(),
            timing_advance_us: ta,
            sender_distance_us: self.plan.distance_us,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn decide<R: Rng + ?Sized>(
        &mut self,
        cell_id: u16,
        rnti: Option<u16>,
        stage: &'static str,
        pipeline: Pipeline,
        observed_ns: i64,
        deadline_ns: i64,
        payload: Option<&'static str>,
        rng: &mut R,
    ) -> AttackDecision {
        let cost = self.costs(rng);
        let c = check_deadline(&cost, &pipeline, observed_ns, deadline_ns);
        if !c.met {
            self.stats.deadline_misses += 1;
        }
        AttackDecision {
            cell_id,
            rnti,
            stage,
            n_grants: pipeline.n_grants,
            observed_ns,
            deadline_ns,
            latency_us: c.latency_us,
            ready_ns: c.first_symbol_on_air_ns,
            margin_us: c.margin_us,
            met: c.met,
            payload,
        }
    }

    /// A RAR on the target cell. The victim TAs are remembered for
    /// `CopyVictim`; under the cell-wide DoS every grant gets a padding-only
    /// Msg3, all from one decision.
    pub fn observe_rar<R: Rng + ?Sized>(&mut self, rar: &Rar, observed_ns: i64, rng: &mut R) -> AttackerOutput {
        let mut out = AttackerOutput::default();
        if rar.cell_id != self.plan.target_cell {
            return out;
        }
        for e in &rar.entries {
            self.victim_ta.insert(e.tc_rnti, e.timing_advance_us);
        }
        if !self.active(rar.cell_id, observed_ns) || self.plan.strategy != Strategy::CellWideDos {
            return out;
        }
        self.stats.rars_seen += 1;
        self.stats.rar_grants_seen += rar.entries.len() as u64;
        let deadline_ns = rar.entries.iter().map(|e| e.grant.transmission_slot().absolute_ns()).min().unwrap_or(0);
        let n = rar.entries.len() as u32;
        let d = self.decide(rar.cell_id, None, "rar", Pipeline::rar(n), observed_ns, deadline_ns, Some("EmptyMacPdu"), rng);
        let met = d.met;
        out.decisions.push(d);
        if met {
            for e in &rar.entries {
                let pdu = MacPdu::empty(e.grant.tbs_bytes);
                let tx = self.transmission(&e.grant, &pdu);
                out.transmissions.push(ScheduledTx { grant: e.grant, tx, pdu, nas: None });
                self.stats.rar_grants_attacked += 1;
            }
        }
        out
    }

    fn identity_key(id: &InitialUeIdentity) -> (bool, u64) {
        (matches!(id, InitialUeIdentity::STmsi(_)), id.value())
    }

    /// Contention resolution on the target cell: classify the connection
    /// from the echoed SetupRequest and arm or exempt it.
    pub fn observe_contention_resolution(&mut self, cell_id: u16, rnti: u16, cri: &[u8; 6], now_ns: i64) -> Option<(Anticipated, Phase)> {
        if !self.active(cell_id, now_ns) || !self.plan.strategy.is_nas_attack() {
            return None;
        }
        let identity = match decode_rrc(cri) {
            Ok(RrcMessage::SetupRequest { ue_identity, .. }) => Some(ue_identity),
            _ => None,
        };
        let anticipated = match identity {
            Some(InitialUeIdentity::RandomValue(_)) => Anticipated::RegistrationRequest,
            Some(InitialUeIdentity::STmsi(_)) => Anticipated::ServiceRequest,
            None => Anticipated::Unknown,
        };
        let ignore_filter = matches!(self.plan.strategy, Strategy::SuciReplay { whitelist_mode: true, .. });
        let filtered_out = match (&self.plan.target_filter, identity) {
            (Some(_), _) if ignore_filter => false,
            (Some(list), Some(id @ InitialUeIdentity::STmsi(_))) => !list.iter().any(|&t| id.matches_tmsi(t)),
            (Some(_), _) => true,
            (None, _) => false,
        };
        let needs_anticipation = matches!(self.plan.strategy, Strategy::RegistrationRejectDowngrade);
        let already = self.plan.once_per_identity
            && identity.is_some_and(|id| self.attacked_identities.contains(&Self::identity_key(&id)));
        let phase = if filtered_out || already || (needs_anticipation && anticipated == Anticipated::Unknown) {
            self.stats.connections_exempt += 1;
            Phase::Exempt
        } else {
            self.stats.connections_armed += 1;
            Phase::Armed
        };
        self.tracked.insert(rnti, Tracked { identity, anticipated, phase, payload: None, verdict_pending: false });
        Some((anticipated, phase))
    }

    /// A random 48-bit TMSI the network does not know.
    pub fn invalid_tmsi<R: Rng + ?Sized>(rng: &mut R, known: &dyn Fn(u64) -> bool) -> u64 {
        loop {
            let t = rng.random_range(1..=TMSI_MASK);
            if !known(t) {
                return t;
            }
        }
    }

    /// The NAS message that replaces the victim's.
    pub fn craft_payload<R: Rng + ?Sized>(&self, anticipated: Anticipated, rng: &mut R, known: &dyn Fn(u64) -> bool) -> Option<NasMessage> {
        match &self.plan.strategy {
            Strategy::CellWideDos => None,
            Strategy::RegistrationRejectDowngrade => match anticipated {
                Anticipated::ServiceRequest => Some(NasMessage::ServiceRequest { s_tmsi: Self::invalid_tmsi(rng, known) }),
                Anticipated::RegistrationRequest => Some(NasMessage::RegistrationRequest {
                    identity: MobileIdentity::Suci(self.plan.downgrade_suci.clone()?),
                    capabilities: self.plan.replay_capabilities,
                }),
                Anticipated::Unknown => None,
            },
            Strategy::SuciExtraction => Some(NasMessage::RegistrationRequest {
                identity: MobileIdentity::FiveGTmsi(Self::invalid_tmsi(rng, known)),
                capabilities: SecurityCapabilities::poisoned(),
            }),
            Strategy::SuciReplay { target_suci, .. } => Some(NasMessage::RegistrationRequest {
                identity: MobileIdentity::Suci(target_suci.clone()),
                capabilities: self.plan.replay_capabilities,
            }),
        }
    }

    /// A UE-specific uplink grant on the target cell.
    pub fn observe_grant<R: Rng + ?Sized>(
        &mut self,
        cell_id: u16,
        grant: &UplinkGrant,
        observed_ns: i64,
        rng: &mut R,
        known_tmsi: &dyn Fn(u64) -> bool,
    ) -> AttackerOutput {
        let mut out = AttackerOutput::default();
        if !self.active(cell_id, observed_ns) {
            return out;
        }
        let Some(t) = self.tracked.get(&grant.rnti) else { return out };
        let (phase, anticipated) = (t.phase, t.anticipated);
        if matches!(phase, Phase::Done | Phase::Exempt) {
            return out;
        }
        let payload = match &t.payload {
            Some(p) => p.clone(),
            None => match self.craft_payload(anticipated, rng, known_tmsi) {
                Some(p) => p,
                None => {
                    self.tracked.get_mut(&grant.rnti).expect("tracked").phase = Phase::Exempt;
                    return out;
                }
            },
        };
        let wrap = RrcWrap::SetupComplete(SetupCompleteTemplate::default());
        let pdu = layer_stack_encode(&payload, wrap, grant.tbs_bytes).expect("payload encodes");
        let is_payload = pdu.dcch_sdus().next().is_some();
        let stage = if is_payload { "payload" } else { "bsr" };
        let name = if is_payload { Some(payload.name()) } else { Some("ShortBsr") };
        let deadline_ns = grant.transmission_slot().absolute_ns();
        let d = self.decide(cell_id, Some(grant.rnti), stage, Pipeline::ue_grant(), observed_ns, deadline_ns, name, rng);
        let met = d.met;
        out.decisions.push(d);
        let t = self.tracked.get_mut(&grant.rnti).expect("tracked");
        t.payload = Some(payload.clone());
        if !met {
            return out;
        }
        if is_payload {
            let count = match phase {
                Phase::PayloadSent { count } => count + 1,
                _ => 1,
            };
            t.phase = if count >= self.plan.max_repeats { Phase::Done } else { Phase::PayloadSent { count } };
            t.verdict_pending = matches!(self.plan.strategy, Strategy::SuciReplay { .. });
            if let Some(id) = t.identity {
                self.attacked_identities.insert(Self::identity_key(&id));
            }
            self.stats.payloads_sent += 1;
        } else {
            t.phase = Phase::BsrSent;
            self.stats.bsr_sent += 1;
        }
        let tx = self.transmission(grant, &pdu);
        out.transmissions.push(ScheduledTx { grant: *grant, tx, pdu, nas: is_payload.then_some(payload) });
        out
    }

    /// Downlink NAS toward a tracked connection. Returns a replay verdict
    /// once one is reached.
    pub fn observe_dl_nas(&mut self, cell_id: u16, rnti: u16, nas: &NasMessage, at: SymbolTime) -> Option<ReplayRecord> {
        if cell_id != self.plan.target_cell {
            return None;
        }
        let t = self.tracked.get_mut(&rnti)?;
        if matches!(t.phase, Phase::PayloadSent { .. } | Phase::BsrSent | Phase::Armed) {
            // The network answered whatever reached it first; the window for
            // replacing the initial message is closed.
            t.phase = Phase::Done;
        }
        if !t.verdict_pending {
            return None;
        }
        let verdict = match nas {
            NasMessage::SecurityModeCommand { .. } => ReplayVerdict::SuciMatchesUe,
            NasMessage::AuthenticationReject => ReplayVerdict::SuciMismatch,
            _ => return None,
        };
        t.verdict_pending = false;
        let identity = t.identity;
        let rec = ReplayRecord { cell_id, rnti, identity: identity.map(|i| self.full_identity(i)), verdict, at };
        self.verdicts.push(rec.clone());
        Some(rec)
    }

    /// No verdict within the window after the payload.
    pub fn verdict_timeout(&mut self, cell_id: u16, rnti: u16, at: SymbolTime) -> Option<ReplayRecord> {
        let t = self.tracked.get_mut(&rnti)?;
        if cell_id != self.plan.target_cell || !t.verdict_pending {
            return None;
        }
        t.verdict_pending = false;
        let identity = t.identity.map(|i| self.full_identity(i));
        let rec = ReplayRecord { cell_id, rnti, identity, verdict: ReplayVerdict::Inconclusive, at };
        self.verdicts.push(rec.clone());
        Some(rec)
    }

    /// Whether the attacker follows this connection's uplink.
    pub fn tracks(&self, cell_id: u16, rnti: u16) -> bool {
        cell_id == self.plan.target_cell && self.tracked.contains_key(&rnti)
    }

    /// Uplink of a victim decoded at the attacker. Under SUCI extraction an
    /// IdentityResponse on an attacked connection is captured.
    pub fn sniff_uplink(&mut self, cell_id: u16, rnti: u16, bytes: &[u8], at: SymbolTime) -> (SniffOutcome, Option<CapturedIdentity>) {
        if cell_id != self.plan.target_cell || self.plan.strategy != Strategy::SuciExtraction {
            return (SniffOutcome::Messages(vec![]), None);
        }
        let Some(t) = self.tracked.get(&rnti) else { return (SniffOutcome::Messages(vec![]), None) };
        let attacked = matches!(t.phase, Phase::Done | Phase::PayloadSent { .. });
        let identity = t.identity;
        let outcome = self.sniffer.sniff(cell_id, rnti, bytes);
        if !attacked {
            return (outcome, None);
        }
        let SniffOutcome::Messages(msgs) = &outcome else { return (outcome, None) };
        let mut captured = None;
        for m in msgs {
            if let NasMessage::IdentityResponse { suci } = m {
                let (tmsi, identity_kind) = match identity {
                    Some(id @ InitialUeIdentity::STmsi(_)) => (self.full_identity(id), IdentityKind::STmsi),
                    Some(InitialUeIdentity::RandomValue(v)) => (v, IdentityKind::Random),
                    None => (0, IdentityKind::Random),
                };
                let c = CapturedIdentity { tmsi, identity_kind, suci: suci.clone(), captured_at: at };
                if !self.captured.iter().any(|x| x.tmsi == c.tmsi && x.suci == c.suci) {
                    self.captured.push(c.clone());
                    captured = Some(c);
                }
            }
        }
        (outcome, captured)
    }

    /// The RRC identity holds only the low bits of a TMSI; a matching
    /// target list entry has all of it.
    fn full_identity(&self, id: InitialUeIdentity) -> u64 {
        self.plan.target_filter.iter().flatten().copied().find(|&t| id.matches_tmsi(t)).unwrap_or(id.value())
    }

    /// The gNB let go of `rnti` on the target cell.
    pub fn forget(&mut self, cell_id: u16, rnti: u16) {
        if cell_id == self.plan.target_cell {
            self.tracked.remove(&rnti);
            self.victim_ta.remove(&rnti);
            self.sniffer.forget(cell_id, rnti);
        }
    }

    /// Allocation ids this output transmits on.
    pub fn allocations(out: &AttackerOutput) -> Vec<AllocationId> {
        out.transmissions.iter().map(|t| t.grant.allocation_id).collect()
    }
}
