//! UE state machine: random access with backoff, contention resolution, RRC
//! setup, the NAS registration and service flows, and the reactions to
//! rejects that depend on the phone model.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airtime::UplinkGrant;
use crate::codecs::nas::{
    CAUSE_MAC_FAILURE, CAUSE_N1_MODE_NOT_ALLOWED, CAUSE_NO_SUITABLE_CELLS_IN_TA,
    CAUSE_UE_SECURITY_CAPABILITIES_MISMATCH,
};
use crate::codecs::rrc::{IDENTITY_MASK, SETUP_REQUEST_LEN};
use crate::codecs::{
    bsr_pdu, conceal_supi, encode_nas, encode_rrc, encode_srb_sdu, EstablishmentCause, HomeNetworkKey,
    InitialUeIdentity, MacPdu, MacSubPdu, MobileIdentity, NasMessage, RrcMessage, RrcWrap,
    SecurityCapabilities, SetupCompleteTemplate, SubscriberKey, Supi,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaFailureAction {
    ReselectWeakerCell,
    DisableCellularUntilToggle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthRejectAction {
    #[serde(rename = "downgrade_to_4g")]
    DowngradeTo4G,
    #[serde(rename = "persistent_dos")]
    PersistentDoS,
    #[serde(rename = "retry_5g")]
    Retry5G,
}

/// Observed per-model behaviour, declared rather than derived.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeProfile {
    pub name: String,
    pub on_ra_failure: RaFailureAction,
    pub on_auth_reject: AuthRejectAction,
}

impl UeProfile {
    pub fn new(name: &str, on_ra_failure: RaFailureAction, on_auth_reject: AuthRejectAction) -> Self {
        Self { name: name.to_string(), on_ra_failure, on_auth_reject }
    }

    /// The phones of the lab and field tests plus a plain simulated UE.
    pub fn builtin() -> Vec<UeProfile> {
        use AuthRejectAction::*;
        use RaFailureAction::*;
        vec![
            Self::new("samsung-s23", ReselectWeakerCell, DowngradeTo4G),
            Self::new("oneplus-pro-10", ReselectWeakerCell, PersistentDoS),
            Self::new("nothing-phone-3", ReselectWeakerCell, DowngradeTo4G),
            Self::new("iphone-16-pro", ReselectWeakerCell, DowngradeTo4G),
            Self::new("iphone-17-pro", ReselectWeakerCell, DowngradeTo4G),
            Self::new("xiaomi-15t-pro", ReselectWeakerCell, DowngradeTo4G),
            Self::new("pixel-10-pro", DisableCellularUntilToggle, Retry5G),
            Self::new("amarisoft-sim", ReselectWeakerCell, DowngradeTo4G),
        ]
    }

    /// The seven phone models, without the simulated UE.
    pub fn phones() -> Vec<UeProfile> {
        Self::builtin().into_iter().filter(|p| p.name != "amarisoft-sim").collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rat {
    Nr,
    Lte,
}

/// What a UE knows about a cell it can see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub cell_id: u16,
    pub tracking_area: u16,
    pub rat: Rat,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UeState {
    Idle,
    RaPreambleSent,
    /// Msg3 sent, waiting for contention resolution.
    Msg3Sent,
    RrcConnected,
    NasRegistering,
    NasAuthenticating,
    NasSecurityMode,
    Registered,
    Barred { tracking_area: u16 },
    DowngradedTo4G,
    CellularDisabled,
}

impl UeState {
    pub fn name(&self) -> String {
        match self {
            UeState::Barred { tracking_area } => format!("Barred(ta {tracking_area})"),
            other => format!("{other:?}"),
        }
    }

    /// The UE has left 5G for good, until a flight-mode toggle.
    pub fn is_terminal(&self) -> bool {
        matches!(self, UeState::DowngradedTo4G | UeState::CellularDisabled)
    }

    pub fn in_connection(&self) -> bool {
        !matches!(self, UeState::Idle | UeState::Registered) && !self.is_terminal()
    }
}

impl fmt::Display for UeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UeTimers {
    pub preamble_trans_max: u32,
    pub preamble_pool: u8,
    pub max_backoff_ms: f64,
    pub contention_timer_ms: f64,
    pub rar_window_slots: u32,
    /// Gives up on a connection that makes no progress for this long.
    pub connection_guard_ms: f64,
    /// Nominal modem delay before a downgrade shows up, recorded only.
    pub downgrade_delay_ms: f64,
}

impl Default for UeTimers {
    fn default() -> Self {
        UeTimers {
            preamble_trans_max: 200,
            preamble_pool: 64,
            max_backoff_ms: 1920.0,
            contention_timer_ms: 64.0,
            rar_window_slots: 10,
            connection_guard_ms: 2000.0,
            downgrade_delay_ms: 0.0,
        }
    }
}

impl UeTimers {
    pub fn validate(&self) -> Result<(), String> {
        if self.preamble_trans_max == 0 {
            return Err("preamble_trans_max must be at least 1".into());
        }
        if self.preamble_pool == 0 || self.preamble_pool > 64 {
            return Err("preamble_pool must be in 1..=64".into());
        }
        for (name, v) in [
            ("max_backoff_ms", self.max_backoff_ms),
            ("contention_timer_ms", self.contention_timer_ms),
            ("connection_guard_ms", self.connection_guard_ms),
            ("downgrade_delay_ms", self.downgrade_delay_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        if self.contention_timer_ms <= 0.0 || self.connection_guard_ms <= 0.0 {
            return Err("timers must be positive".into());
        }
        if self.rar_window_slots == 0 {
            return Err("rar_window_slots must be at least 1".into());
        }
        Ok(())
    }

    pub fn contention_timer_ns(&self) -> i64 {
        (self.contention_timer_ms * 1e6).round() as i64
    }

    pub fn connection_guard_ns(&self) -> i64 {
        (self.connection_guard_ms * 1e6).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreambleDecision {
    Send { preamble_index: u8 },
    /// `preamble_trans_max` reached; the RA procedure has failed.
    Exhausted,
}

/// One entry of a Random Access Response as seen by a UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RarEntry {
    pub preamble_index: u8,
    pub tc_rnti: u16,
    pub grant: UplinkGrant,
    pub timing_advance_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriOutcome {
    Match,
    Mismatch,
    /// Not waiting for contention resolution.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaFailureOutcome {
    Reselected { cell_id: u16 },
    FellBackTo4G { cell_id: Option<u16> },
    Disabled,
}

/// What the UE does after a downlink NAS message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NasDirective {
    /// Keep the connection; reply (if any) goes on the next grant.
    Continue,
    /// The network ends the connection; UE returns to idle.
    ConnectionDone,
    /// Send the pending reply, then start over at once.
    RestartAfterReply,
    /// Start over at once.
    RestartNow,
    Downgraded,
    Disabled,
    /// Message made no sense in this state.
    Unexpected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NasReaction {
    pub reply: Option<NasMessage>,
    pub directive: NasDirective,
    pub transitions: Vec<(UeState, UeState)>,
}

/// What the UE sends on a grant.
#[derive(Debug, Clone, PartialEq)]
pub struct UeUplink {
    pub pdu: MacPdu,
    pub rrc: Option<RrcMessage>,
    pub nas: Option<NasMessage>,
    pub restart_after: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingSdu {
    sdu: Vec<u8>,
    rrc: RrcMessage,
    nas: NasMessage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UeFsm {
    pub id: u32,
    pub profile: UeProfile,
    pub supi: Supi,
    pub key: SubscriberKey,
    pub home_key: HomeNetworkKey,
    pub capabilities: SecurityCapabilities,
    pub timers: UeTimers,
    pub tx_power_dbm: f64,
    pub distance_us: f64,
    pub state: UeState,
    pub stored_tmsi: Option<u64>,
    pub registered: bool,
    pub serving_cell: Option<u16>,
    pub barred_tracking_areas: BTreeSet<u16>,
    pub avoided_cells: BTreeSet<u16>,
    pub n1_disabled: bool,
    pub preamble_attempts: u32,
    pub total_preambles: u64,
    pub preamble_index: Option<u8>,
    pub rnti: Option<u16>,
    pub timing_advance_us: f64,
    pub msg3: Option<[u8; SETUP_REQUEST_LEN]>,
    /// Bumped on every new connection; stale timers carry the old value.
    pub epoch: u64,
    pub rlc_sn: u16,
    #[serde(skip)]
    pending: Option<PendingSdu>,
    #[serde(skip)]
    last_sent: Option<PendingSdu>,
    #[serde(skip)]
    restart_after_reply: bool,
    pub connections_started: u64,
    pub service_accepts: u64,
    pub registrations: u64,
}

impl UeFsm {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        profile: UeProfile,
        supi: Supi,
        key: SubscriberKey,
        home_key: HomeNetworkKey,
        capabilities: SecurityCapabilities,
        timers: UeTimers,
        tx_power_dbm: f64,
        distance_us: f64,
    ) -> Self {
        UeFsm {
            id,
            profile,
            supi,
            key,
            home_key,
            capabilities,
            timers,
            tx_power_dbm,
            distance_us,
            state: UeState::Idle,
            stored_tmsi: None,
            registered: false,
            serving_cell: None,
            barred_tracking_areas: BTreeSet::new(),
            avoided_cells: BTreeSet::new(),
            n1_disabled: false,
            preamble_attempts: 0,
            total_preambles: 0,
            preamble_index: None,
            rnti: None,
            timing_advance_us: 0.0,
            msg3: None,
            epoch: 0,
            rlc_sn: 0,
            pending: None,
            last_sent: None,
            restart_after_reply: false,
            connections_started: 0,
            service_accepts: 0,
            registrations: 0,
        }
    }

    /// Starts out registered with `tmsi`, as a phone already attached.
    pub fn with_registration(mut self, tmsi: Option<u64>, registered: bool) -> Self {
        self.stored_tmsi = tmsi;
        self.registered = registered && tmsi.is_some();
        if self.registered {
            self.state = UeState::Registered;
        }
        self
    }

    fn set_state(&mut self, s: UeState, log: &mut Vec<(UeState, UeState)>) {
        if self.state != s {
            log.push((self.state, s));
            self.state = s;
        }
    }

    fn idle_state(&self) -> UeState {
        if self.registered {
            UeState::Registered
        } else {
            UeState::Idle
        }
    }

    fn cell_allowed(&self, c: &CellInfo) -> bool {
        c.rat == Rat::Nr
            && !self.n1_disabled
            && !self.barred_tracking_areas.contains(&c.tracking_area)
            && !self.avoided_cells.contains(&c.cell_id)
    }

    /// Strongest 5G cell the UE may use.
    pub fn best_cell(&self, cells: &[CellInfo]) -> Option<CellInfo> {
        cells
            .iter()
            .filter(|c| self.cell_allowed(c))
            .max_by(|a, b| a.tx_power_dbm.total_cmp(&b.tx_power_dbm).then(b.cell_id.cmp(&a.cell_id)))
            .copied()
    }

    pub fn is_barred(&self, cell: &CellInfo) -> bool {
        !self.cell_allowed(cell)
    }

    fn clear_connection(&mut self) {
        self.preamble_index = None;
        self.rnti = None;
        self.msg3 = None;
        self.pending = None;
        self.last_sent = None;
        self.restart_after_reply = false;
        self.rlc_sn = 0;
    }

    /// Begins a fresh RA procedure on `cell`. Returns false, changing
    /// nothing, when the cell is barred for this UE or the UE is off 5G.
    pub fn begin_connection(&mut self, cell: &CellInfo) -> bool {
        if self.state.is_terminal() || self.is_barred(cell) {
            return false;
        }
        self.serving_cell = Some(cell.cell_id);
        self.preamble_attempts = 0;
        self.epoch += 1;
        self.connections_started += 1;
        self.clear_connection();
        true
    }

    /// Next preamble of the running RA procedure.
    pub fn send_preamble<R: Rng + ?Sized>(&mut self, rng: &mut R, log: &mut Vec<(UeState, UeState)>) -> PreambleDecision {
        if self.preamble_attempts >= self.timers.preamble_trans_max {
            return PreambleDecision::Exhausted;
        }
        self.preamble_attempts += 1;
        self.total_preambles += 1;
        let idx = rng.random_range(0..self.timers.preamble_pool);
        self.preamble_index = Some(idx);
        self.rnti = None;
        self.msg3 = None;
        self.set_state(UeState::RaPreambleSent, log);
        PreambleDecision::Send { preamble_index: idx }
    }

    /// Backoff before the next preamble, uniform up to the configured maximum.
    pub fn draw_backoff_ns<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let max_ns = (self.timers.max_backoff_ms * 1e6).round() as i64;
        if max_ns == 0 {
            0
        } else {
            rng.random_range(0..=max_ns)
        }
    }

    /// Looks for our preamble in a RAR and, if present, builds Msg3.
    pub fn on_rar<R: Rng + ?Sized>(
        &mut self,
        entries: &[RarEntry],
        rng: &mut R,
        log: &mut Vec<(UeState, UeState)>,
    ) -> Option<(RarEntry, MacPdu, RrcMessage)> {
        if self.state != UeState::RaPreambleSent {
            return None;
        }
        let own = self.preamble_index?;
        let entry = *entries.iter().find(|e| e.preamble_index == own)?;
        let ue_identity = match self.stored_tmsi {
            Some(t) => InitialUeIdentity::from_tmsi(t),
            None => InitialUeIdentity::RandomValue(rng.random_range(0..=IDENTITY_MASK)),
        };
        let cause = if self.registered { EstablishmentCause::MO_DATA } else { EstablishmentCause::MO_SIGNALLING };
        let rrc = RrcMessage::SetupRequest { ue_identity, cause };
        let bytes: [u8; SETUP_REQUEST_LEN] =
            encode_rrc(&rrc).expect("valid setup request").try_into().expect("48 bits");
        let pdu = MacPdu::padded(vec![MacSubPdu::CcchSdu(bytes)], entry.grant.tbs_bytes).ok()?;
        self.msg3 = Some(bytes);
        self.rnti = Some(entry.tc_rnti);
        self.timing_advance_us = entry.timing_advance_us;
        self.set_state(UeState::Msg3Sent, log);
        Some((entry, pdu, rrc))
    }

    pub fn on_contention_resolution(&mut self, cri: &[u8; 6], log: &mut Vec<(UeState, UeState)>) -> CriOutcome {
        if self.state != UeState::Msg3Sent {
            return CriOutcome::Ignored;
        }
        if self.msg3.as_ref() == Some(cri) {
            self.set_state(UeState::RrcConnected, log);
            CriOutcome::Match
        } else {
            CriOutcome::Mismatch
        }
    }

    /// The first NAS message of a connection.
    fn initial_nas<R: Rng + ?Sized>(&self, rng: &mut R) -> NasMessage {
        match (self.stored_tmsi, self.registered) {
            (Some(t), true) => NasMessage::ServiceRequest { s_tmsi: t },
            (Some(t), false) => NasMessage::RegistrationRequest {
                identity: MobileIdentity::FiveGTmsi(t),
                capabilities: self.capabilities,
            },
            (None, _) => NasMessage::RegistrationRequest {
                identity: MobileIdentity::Suci(conceal_supi(self.supi, &self.home_key, rng)),
                capabilities: self.capabilities,
            },
        }
    }

    fn queue(&mut self, wrap: RrcWrap, nas: NasMessage) {
        let rrc = wrap.wrap(encode_nas(&nas).expect("valid nas"));
        let sdu = encode_srb_sdu(&rrc, self.rlc_sn, 0).expect("valid sdu");
        self.rlc_sn = (self.rlc_sn + 1) & crate::codecs::rlc::MAX_SN;
        self.pending = Some(PendingSdu { sdu, rrc, nas });
    }

    pub fn on_rrc_setup<R: Rng + ?Sized>(
        &mut self,
        transaction_id: u8,
        rng: &mut R,
        log: &mut Vec<(UeState, UeState)>,
    ) -> Option<NasMessage> {
        if self.state != UeState::RrcConnected {
            return None;
        }
        let nas = self.initial_nas(rng);
        let wrap = RrcWrap::SetupComplete(SetupCompleteTemplate { transaction_id, selected_plmn_index: 1 });
        self.queue(wrap, nas.clone());
        self.set_state(UeState::NasRegistering, log);
        Some(nas)
    }

    /// Fills a grant addressed to our RNTI. `retransmission` asks for the
    /// previous SDU again.
    pub fn on_grant(&mut self, grant: &UplinkGrant, retransmission: bool) -> Option<UeUplink> {
        if self.rnti != Some(grant.rnti) || !self.state.in_connection() {
            return None;
        }
        if retransmission && self.pending.is_none() {
            self.pending = self.last_sent.take();
        }
        let Some(p) = self.pending.take() else {
            return Some(UeUplink { pdu: MacPdu::empty(grant.tbs_bytes), rrc: None, nas: None, restart_after: false });
        };
        let sub = MacSubPdu::DcchSdu(p.sdu.clone());
        if sub.encoded_len() > grant.tbs_bytes {
            let pdu = bsr_pdu(grant.tbs_bytes).expect("bsr fits or pads");
            self.pending = Some(p);
            return Some(UeUplink { pdu, rrc: None, nas: None, restart_after: false });
        }
        let pdu = MacPdu::padded(vec![sub], grant.tbs_bytes).expect("checked size");
        let restart_after = std::mem::take(&mut self.restart_after_reply);
        let out = UeUplink { pdu, rrc: Some(p.rrc.clone()), nas: Some(p.nas.clone()), restart_after };
        self.last_sent = Some(p);
        Some(out)
    }

    /// Contention lost or timed out; the RA procedure continues.
    pub fn on_contention_failure(&mut self, log: &mut Vec<(UeState, UeState)>) {
        self.msg3 = None;
        self.rnti = None;
        self.set_state(UeState::RaPreambleSent, log);
    }

    /// The running connection ends without a NAS verdict.
    pub fn abort_connection(&mut self, log: &mut Vec<(UeState, UeState)>) {
        self.clear_connection();
        let s = self.idle_state();
        self.set_state(s, log);
    }

    /// `preamble_trans_max` reached on the serving cell.
    pub fn on_ra_failure(&mut self, cells: &[CellInfo], log: &mut Vec<(UeState, UeState)>) -> RaFailureOutcome {
        self.clear_connection();
        match self.profile.on_ra_failure {
            RaFailureAction::DisableCellularUntilToggle => {
                self.serving_cell = None;
                self.set_state(UeState::CellularDisabled, log);
                RaFailureOutcome::Disabled
            }
            RaFailureAction::ReselectWeakerCell => {
                if let Some(c) = self.serving_cell {
                    self.avoided_cells.insert(c);
                }
                if let Some(next) = self.best_cell(cells) {
                    self.serving_cell = Some(next.cell_id);
                    let s = self.idle_state();
                    self.set_state(s, log);
                    RaFailureOutcome::Reselected { cell_id: next.cell_id }
                } else {
                    self.fall_back_to_4g(cells, log)
                }
            }
        }
    }

    fn fall_back_to_4g(&mut self, cells: &[CellInfo], log: &mut Vec<(UeState, UeState)>) -> RaFailureOutcome {
        let lte = cells
            .iter()
            .filter(|c| c.rat == Rat::Lte)
            .max_by(|a, b| a.tx_power_dbm.total_cmp(&b.tx_power_dbm).then(b.cell_id.cmp(&a.cell_id)));
        match lte {
            Some(c) => {
                self.serving_cell = Some(c.cell_id);
                self.set_state(UeState::DowngradedTo4G, log);
                RaFailureOutcome::FellBackTo4G { cell_id: Some(c.cell_id) }
            }
            None => {
                self.serving_cell = None;
                self.set_state(UeState::CellularDisabled, log);
                RaFailureOutcome::Disabled
            }
        }
    }

    fn forget_registration(&mut self) {
        self.stored_tmsi = None;
        self.registered = false;
    }

    /// Reaction to a downlink NAS message.
    pub fn on_nas<R: Rng + ?Sized>(&mut self, msg: &NasMessage, cells: &[CellInfo], rng: &mut R) -> NasReaction {
        let mut log = Vec::new();
        if !self.state.in_connection() || matches!(self.state, UeState::RaPreambleSent | UeState::Msg3Sent) {
            return NasReaction { reply: None, directive: NasDirective::Unexpected, transitions: log };
        }
        let uplink = |ue: &mut Self, nas: NasMessage| {
            ue.queue(RrcWrap::UlInformationTransfer, nas.clone());
            Some(nas)
        };
        let (reply, directive) = match msg {
            NasMessage::IdentityRequest => {
                let suci = conceal_supi(self.supi, &self.home_key, rng);
                (uplink(self, NasMessage::IdentityResponse { suci }), NasDirective::Continue)
            }
            NasMessage::AuthenticationRequest { rand, autn } => match self.key.answer_challenge(rand, autn) {
                Some(res) => {
                    self.set_state(UeState::NasAuthenticating, &mut log);
                    (uplink(self, NasMessage::AuthenticationResponse { res }), NasDirective::Continue)
                }
                None => (
                    uplink(self, NasMessage::AuthenticationFailure { cause: CAUSE_MAC_FAILURE }),
                    NasDirective::Continue,
                ),
            },
            NasMessage::SecurityModeCommand { replayed_capabilities } => {
                self.set_state(UeState::NasSecurityMode, &mut log);
                if *replayed_capabilities == self.capabilities {
                    (uplink(self, NasMessage::SecurityModeComplete), NasDirective::Continue)
                } else {
                    // Bidding-down protection: reject, drop the connection and
                    // try again with the same identity.
                    self.restart_after_reply = true;
                    let r = NasMessage::SecurityModeReject { cause: CAUSE_UE_SECURITY_CAPABILITIES_MISMATCH };
                    (uplink(self, r), NasDirective::RestartAfterReply)
                }
            }
            NasMessage::RegistrationAccept { new_tmsi } => {
                self.stored_tmsi = Some(*new_tmsi);
                self.registered = true;
                self.registrations += 1;
                self.clear_connection();
                self.set_state(UeState::Registered, &mut log);
                (None, NasDirective::ConnectionDone)
            }
            NasMessage::ServiceAccept => {
                self.service_accepts += 1;
                self.clear_connection();
                self.set_state(UeState::Registered, &mut log);
                (None, NasDirective::ConnectionDone)
            }
            NasMessage::ServiceReject { .. } => {
                self.forget_registration();
                self.clear_connection();
                self.set_state(UeState::Idle, &mut log);
                (None, NasDirective::RestartNow)
            }
            NasMessage::RegistrationReject { cause } => {
                self.forget_registration();
                self.clear_connection();
                match *cause {
                    CAUSE_NO_SUITABLE_CELLS_IN_TA => {
                        let ta = self
                            .serving_cell
                            .and_then(|id| cells.iter().find(|c| c.cell_id == id))
                            .map(|c| c.tracking_area);
                        if let Some(ta) = ta {
                            self.barred_tracking_areas.insert(ta);
                            self.set_state(UeState::Barred { tracking_area: ta }, &mut log);
                        }
                        self.downgrade(cells, &mut log)
                    }
                    CAUSE_N1_MODE_NOT_ALLOWED => {
                        self.n1_disabled = true;
                        self.downgrade(cells, &mut log)
                    }
                    _ => {
                        self.set_state(UeState::Idle, &mut log);
                        (None, NasDirective::ConnectionDone)
                    }
                }
            }
            NasMessage::AuthenticationReject => {
                self.clear_connection();
                match self.profile.on_auth_reject {
                    AuthRejectAction::DowngradeTo4G => {
                        self.forget_registration();
                        self.downgrade(cells, &mut log)
                    }
                    AuthRejectAction::PersistentDoS => {
                        self.forget_registration();
                        self.serving_cell = None;
                        self.set_state(UeState::CellularDisabled, &mut log);
                        (None, NasDirective::Disabled)
                    }
                    AuthRejectAction::Retry5G => {
                        self.forget_registration();
                        self.set_state(UeState::Idle, &mut log);
                        (None, NasDirective::RestartNow)
                    }
                }
            }
            _ => (None, NasDirective::Unexpected),
        };
        NasReaction { reply, directive, transitions: log }
    }

    fn downgrade(&mut self, cells: &[CellInfo], log: &mut Vec<(UeState, UeState)>) -> (Option<NasMessage>, NasDirective) {
        match self.fall_back_to_4g(cells, log) {
            RaFailureOutcome::Disabled => (None, NasDirective::Disabled),
            _ => (None, NasDirective::Downgraded),
        }
    }

    /// Flight mode off and on: forget blocks and registration state but
    /// keep the stored TMSI, then camp on the best 5G cell again.
    pub fn toggle_flight_mode(&mut self, cells: &[CellInfo], log: &mut Vec<(UeState, UeState)>) {
        self.barred_tracking_areas.clear();
        self.avoided_cells.clear();
        self.n1_disabled = false;
        self.registered = false;
        self.epoch += 1;
        self.clear_connection();
        self.serving_cell = self.best_cell(cells).map(|c| c.cell_id);
        self.set_state(UeState::Idle, log);
    }
}
