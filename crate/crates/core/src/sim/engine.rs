//! The event loop.
//!
//! Events are ordered by (time, priority, insertion sequence). Within one
//! instant, uplink resolutions run first, then core-network deliveries,
//! timers, downlink actions, uplink air time, UE decisions and finally KPI
//! ticks.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::airtime::{
    required_timing_advance, resolve_reception, symbol_offset_ns, AllocationId, ReceptionOutcome, SymbolTime,
    Transmission, UplinkGrant, SLOT_NS,
};
use crate::amf::{Amf, NasContext};
use crate::attacker::{Attacker, AttackerOutput, SniffOutcome, Strategy};
use crate::codecs::{encode_mac_pdu, encode_nas, encode_rrc, MacPdu, NasMessage, RrcMessage};
use crate::gnb::{DetectedPreamble, GnbContext, Msg3Outcome};
use crate::sim::report::{CellStats, KpiCounters, RunReport, UeSummary};
use crate::sim::scenario::Resolved;
use crate::sim::trace::{TraceEvent, TraceKind, TRACE_SCHEMA_VERSION};
use crate::ue::{CellInfo, CriOutcome, NasDirective, PreambleDecision, RaFailureOutcome, Rat, UeFsm, UeState};
use crate::EntityId;

const ANOMALY_SAMPLES: usize = 20;

mod prio {
    pub const UL_RESOLVE: u8 = 0;
    pub const CORE: u8 = 1;
    pub const TIMER: u8 = 2;
    pub const DOWNLINK: u8 = 3;
    pub const UL_AIR: u8 = 4;
    pub const UE: u8 = 5;
    pub const KPI: u8 = 6;
}

#[derive(Debug, Clone)]
enum Ev {
    UeCadence(u32),
    UeToggle(u32),
    UeStart(u32),
    UePreamble { ue: u32, token: u64 },
    Prach { cell: u16, slot: u64 },
    RarWindow { ue: u32, token: u64 },
    ContentionTimer { ue: u32, token: u64 },
    ConnectionGuard { ue: u32, token: u64 },
    UlAir(AllocationId),
    UlResolve(AllocationId),
    AmfRx { ctx: NasContext, rnti: u16, nas: NasMessage },
    GnbDl { cell: u16, rnti: u16, conn_id: u64, nas: NasMessage },
    GnbGrant { cell: u16, rnti: u16, conn_id: u64, requested: usize, retx: bool },
    VerdictTimeout { cell: u16, rnti: u16 },
    KpiTick,
}

struct Queued {
    t: i64,
    prio: u8,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Queued {
    // Reversed: BinaryHeap pops the largest.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.t, o.prio, o.seq).cmp(&(self.t, self.prio, self.seq))
    }
}

#[derive(Debug, Default, Clone)]
struct UeAux {
    /// Bumped whenever the UE's RA or connection moves on; timers carry
    /// the value they were armed with.
    token: u64,
    initial_tmsi: Option<u64>,
    toggles: u64,
}

#[derive(Debug)]
struct Alloc {
    cell: u16,
    rnti: u16,
    conn_id: Option<u64>,
    msg3: bool,
    grant: UplinkGrant,
    txs: Vec<Transmission>,
    labels: Vec<&'static str>,
    restart: Vec<u32>,
    attacker_nas: Option<NasMessage>,
}

fn align_up(t: i64) -> i64 {
    (t + SLOT_NS - 1).div_euclid(SLOT_NS) * SLOT_NS
}

fn uplink_label(pdu: &MacPdu, nas: Option<&NasMessage>) -> &'static str {
    match nas {
        Some(n) => n.name(),
        None if pdu.short_bsr().is_some() => "ShortBsr",
        None => "Padding",
    }
}

pub struct Engine<'s> {
    r: Resolved,
    now: i64,
    queue: BinaryHeap<Queued>,
    seq: u64,
    trace_seq: u64,
    sink: &'s mut dyn FnMut(&TraceEvent),
    cells: Vec<CellInfo>,
    gnbs: BTreeMap<u16, GnbContext>,
    gnb_rng: BTreeMap<u16, ChaCha8Rng>,
    ues: Vec<UeFsm>,
    aux: Vec<UeAux>,
    ue_rng: Vec<ChaCha8Rng>,
    amf: Amf,
    amf_rng: ChaCha8Rng,
    attacker: Option<Attacker>,
    atk_rng: ChaCha8Rng,
    prach: BTreeMap<(u16, u64), Vec<(u32, u8)>>,
    holders: BTreeMap<(u16, u16), Vec<u32>>,
    allocs: BTreeMap<AllocationId, Alloc>,
    attacked_conns: BTreeSet<(u16, u64)>,
    kpi: BTreeMap<u16, KpiCounters>,
    report: RunReport,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl<'s> Engine<'s> {
    pub fn new(r: Resolved, name: &str, sink: &'s mut dyn FnMut(&TraceEvent)) -> Self {
        let cells = r.cells.clone();
        let mut gnbs = BTreeMap::new();
        let mut gnb_rng = BTreeMap::new();
        let mut cell_stats = BTreeMap::new();
        for c in &cells {
            cell_stats.insert(c.cell_id, CellStats::default());
            if c.rat == Rat::Nr {
                let k2 = r.k2[&c.cell_id];
                gnbs.insert(c.cell_id, GnbContext::new(c.cell_id, c.tracking_area, k2, c.tx_power_dbm, r.gnb));
                gnb_rng.insert(c.cell_id, stream(r.seed, 0x100 + u64::from(c.cell_id)));
            }
        }
        let mut ues = Vec::new();
        let mut aux = Vec::new();
        let mut ue_rng = Vec::new();
        for u in &r.ues {
            let fsm = UeFsm::new(
                u.id,
                u.profile.clone(),
                u.supi,
                u.key,
                r.home_key,
                u.capabilities,
                r.timers,
                u.tx_power_dbm,
                u.distance_us,
            )
            .with_registration(u.tmsi, u.registered);
            ues.push(fsm);
            aux.push(UeAux { token: 0, initial_tmsi: u.tmsi, toggles: 0 });
            ue_rng.push(stream(r.seed, 0x1_0000 + u64::from(u.id)));
        }
        let amf = Amf::new(r.home_key, r.policy, r.subscribers.clone()).expect("subscribers validated");
        let attacker = r.attack.clone().map(Attacker::new);
        let report = RunReport {
            name: name.to_string(),
            seed: r.seed,
            duration_s: r.duration_ns as f64 / 1e9,
            strategy: r.attack.as_ref().map(|a| a.strategy.name().to_string()),
            target_cell: r.attack.as_ref().map(|a| a.target_cell),
            cells: cell_stats,
            ..Default::default()
        };
        Engine {
            now: 0,
            queue: BinaryHeap::new(),
            seq: 0,
            trace_seq: 0,
            sink,
            cells,
            gnbs,
            gnb_rng,
            ues,
            aux,
            ue_rng,
            amf,
            amf_rng: stream(r.seed, 2),
            attacker,
            atk_rng: stream(r.seed, 3),
            prach: BTreeMap::new(),
            holders: BTreeMap::new(),
            allocs: BTreeMap::new(),
            attacked_conns: BTreeSet::new(),
            kpi: BTreeMap::new(),
            report,
            r,
        }
    }

    fn push(&mut self, t: i64, prio: u8, ev: Ev) {
        self.seq += 1;
        self.queue.push(Queued { t, prio, seq: self.seq, ev });
    }

    fn emit(&mut self, t_ns: i64, entity: EntityId, kind: TraceKind, detail: Value) {
        if entity == EntityId::Amf {
            self.report.amf_events += 1;
            if let Some(c) = detail["cell"].as_u64() {
                self.stats(c as u16).amf_events += 1;
            }
        }
        if entity == EntityId::Attacker && kind == TraceKind::TxDL {
            self.report.attacker_downlink_transmissions += 1;
        }
        if kind == TraceKind::Anomaly {
            self.report.anomalies += 1;
            if self.report.anomaly_samples.len() < ANOMALY_SAMPLES {
                let time = SymbolTime::from_ns(t_ns);
                self.report.anomaly_samples.push(format!("{time} {entity}: {}", detail["what"].as_str().unwrap_or("")));
            }
        }
        let ev = TraceEvent {
            v: TRACE_SCHEMA_VERSION,
            seq: self.trace_seq,
            time: SymbolTime::from_ns(t_ns),
            t_ns,
            entity,
            kind,
            detail,
        };
        self.trace_seq += 1;
        (self.sink)(&ev);
    }

    fn anomaly(&mut self, entity: EntityId, what: String) {
        self.emit(self.now, entity, TraceKind::Anomaly, json!({ "what": what }));
    }

    fn kpi(&mut self, cell: Option<u16>) -> &mut KpiCounters {
        self.kpi.entry(cell.unwrap_or(u16::MAX)).or_default()
    }

    fn stats(&mut self, cell: u16) -> &mut CellStats {
        self.report.cells.entry(cell).or_default()
    }

    fn transitions(&mut self, ue: u32, log: Vec<(UeState, UeState)>, cause: &str) {
        for (from, to) in log {
            let mut d = json!({ "from": from.name(), "to": to.name(), "cause": cause });
            if to == UeState::DowngradedTo4G {
                d["nominal_delay_ms"] = json!(self.r.timers.downgrade_delay_ms);
            }
            self.emit(self.now, EntityId::Ue(ue), TraceKind::StateChange, d);
        }
    }

    fn bump(&mut self, ue: u32) -> u64 {
        let a = &mut self.aux[ue as usize];
        a.token += 1;
        a.token
    }

    fn cell(&self, id: u16) -> Option<CellInfo> {
        self.cells.iter().find(|c| c.cell_id == id).copied()
    }

    /// Runs to the end of the scenario and returns the report.
    pub fn run(mut self) -> RunReport {
        for i in 0..self.ues.len() {
            let u = self.r.ues[i].clone();
            if u.cadence_ns.is_some() {
                self.push(align_up(u.cadence_offset_ns), prio::UE, Ev::UeCadence(u.id));
            }
            if u.toggle_ns.is_some() && u.toggle_offset_ns <= u.toggle_until_ns {
                self.push(align_up(u.toggle_offset_ns), prio::UE, Ev::UeToggle(u.id));
            }
        }
        if self.r.kpi_interval_ns > 0 {
            self.push(align_up(self.r.kpi_interval_ns), prio::KPI, Ev::KpiTick);
        }
        while let Some(q) = self.queue.pop() {
            if q.t > self.r.duration_ns {
                break;
            }
            debug_assert!(q.t >= self.now, "time went backwards");
            self.now = q.t;
            self.report.events += 1;
            self.dispatch(q.ev);
        }
        self.finish()
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::UeCadence(u) => {
                let period = self.r.ues[u as usize].cadence_ns.expect("cadence set");
                self.push(self.now + period.max(SLOT_NS), prio::UE, Ev::UeCadence(u));
                self.ue_start(u);
            }
            Ev::UeToggle(u) => self.ue_toggle(u),
            Ev::UeStart(u) => self.ue_start(u),
            Ev::UePreamble { ue, token } => {
                if self.aux[ue as usize].token == token {
                    self.ue_preamble(ue);
                }
            }
            Ev::Prach { cell, slot } => self.prach(cell, slot),
            Ev::RarWindow { ue, token } => {
                if self.aux[ue as usize].token == token && self.ues[ue as usize].state == UeState::RaPreambleSent {
                    let t = self.bump(ue);
                    self.retry_after_backoff(ue, t);
                }
            }
            Ev::ContentionTimer { ue, token } => {
                if self.aux[ue as usize].token == token && self.ues[ue as usize].state == UeState::Msg3Sent {
                    self.contention_failure(ue, "contention timer expired");
                }
            }
            Ev::ConnectionGuard { ue, token } => {
                let st = self.ues[ue as usize].state;
                if self.aux[ue as usize].token == token
                    && matches!(
                        st,
                        UeState::RrcConnected | UeState::NasRegistering | UeState::NasAuthenticating | UeState::NasSecurityMode
                    )
                {
                    self.anomaly(EntityId::Ue(ue), format!("connection stuck in {st}, aborted"));
                    self.abort_ue(ue, "connection guard");
                }
            }
            Ev::UlAir(id) => self.ul_air(id),
            Ev::UlResolve(id) => self.ul_resolve(id),
            Ev::AmfRx { ctx, rnti, nas } => self.amf_rx(ctx, rnti, nas),
            Ev::GnbDl { cell, rnti, conn_id, nas } => self.gnb_dl(cell, rnti, conn_id, nas),
            Ev::GnbGrant { cell, rnti, conn_id, requested, retx } => self.gnb_grant(cell, rnti, conn_id, requested, retx),
            Ev::VerdictTimeout { cell, rnti } => {
                let at = SymbolTime::from_ns(self.now);
                if let Some(rec) = self.attacker.as_mut().and_then(|a| a.verdict_timeout(cell, rnti, at)) {
                    let d = json!({ "stage": "verdict", "cell": cell, "rnti": rnti, "verdict": format!("{:?}", rec.verdict) });
                    self.emit(self.now, EntityId::Attacker, TraceKind::AttackDecision, d);
                }
            }
            Ev::KpiTick => self.kpi_tick(),
        }
    }

    // ---- UE side -------------------------------------------------------

    fn ue_toggle(&mut self, u: u32) {
        let i = u as usize;
        if self.aux[i].toggles > 0 && self.ues[i].state == UeState::DowngradedTo4G {
            self.report.cycles_downgraded += 1;
        }
        self.aux[i].toggles += 1;
        self.report.toggle_cycles += 1;
        let mut log = Vec::new();
        let cells = self.cells.clone();
        self.ues[i].toggle_flight_mode(&cells, &mut log);
        self.bump(u);
        self.transitions(u, log, "flight mode toggled");
        let setup = &self.r.ues[i];
        let next = self.now + setup.toggle_ns.expect("toggle set").max(SLOT_NS);
        if next <= setup.toggle_until_ns {
            self.push(next, prio::UE, Ev::UeToggle(u));
        }
        self.push(self.now, prio::UE, Ev::UeStart(u));
    }

    fn ue_start(&mut self, u: u32) {
        let i = u as usize;
        let ue = &self.ues[i];
        if ue.state.in_connection() || ue.state.is_terminal() {
            return;
        }
        let cell = ue
            .serving_cell
            .and_then(|id| self.cell(id))
            .filter(|c| !ue.is_barred(c))
            .or_else(|| ue.best_cell(&self.cells));
        let Some(cell) = cell else {
            self.anomaly(EntityId::Ue(u), "no usable 5g cell".into());
            return;
        };
        if !self.ues[i].begin_connection(&cell) {
            return;
        }
        let t = self.bump(u);
        self.push(align_up(self.now), prio::UE, Ev::UePreamble { ue: u, token: t });
    }

    fn ue_preamble(&mut self, u: u32) {
        let i = u as usize;
        let mut log = Vec::new();
        let decision = self.ues[i].send_preamble(&mut self.ue_rng[i], &mut log);
        self.transitions(u, log, "random access");
        let cell = self.ues[i].serving_cell.expect("connection has a cell");
        match decision {
            PreambleDecision::Send { preamble_index } => {
                let t = self.bump(u);
                let slot = SymbolTime::from_ns(self.now).slot_index();
                let occasion = self.prach.entry((cell, slot)).or_default();
                let first = occasion.is_empty();
                occasion.push((u, preamble_index));
                if first {
                    self.push(((slot + 1) as i64) * SLOT_NS, prio::DOWNLINK, Ev::Prach { cell, slot });
                }
                self.stats(cell).preambles += 1;
                let window = i64::from(self.r.timers.rar_window_slots as i32).max(1);
                self.push(((slot + 1) as i64 + window) * SLOT_NS, prio::TIMER, Ev::RarWindow { ue: u, token: t });
                let d = json!({ "layer": "prach", "cell": cell, "preamble": preamble_index, "attempt": self.ues[i].preamble_attempts });
                self.emit(self.now, EntityId::Ue(u), TraceKind::TxUL, d);
            }
            PreambleDecision::Exhausted => self.ra_failure(u, cell),
        }
    }

    fn retry_after_backoff(&mut self, u: u32, token: u64) {
        let i = u as usize;
        let backoff = self.ues[i].draw_backoff_ns(&mut self.ue_rng[i]);
        self.push(align_up(self.now + backoff), prio::UE, Ev::UePreamble { ue: u, token });
    }

    fn ra_failure(&mut self, u: u32, cell: u16) {
        let i = u as usize;
        self.kpi(Some(cell)).failed_connection_attempts += 1;
        let mut log = Vec::new();
        let cells = self.cells.clone();
        let outcome = self.ues[i].on_ra_failure(&cells, &mut log);
        self.bump(u);
        self.transitions(u, log, "random access failed");
        if let RaFailureOutcome::Reselected { .. } = outcome {
            self.push(self.now, prio::UE, Ev::UeStart(u));
        }
    }

    fn contention_failure(&mut self, u: u32, cause: &str) {
        let i = u as usize;
        let cell = self.ues[i].serving_cell;
        self.kpi(cell).contention_failures += 1;
        let mut log = Vec::new();
        self.ues[i].on_contention_failure(&mut log);
        let t = self.bump(u);
        self.transitions(u, log, cause);
        self.retry_after_backoff(u, t);
    }

    /// Ends the UE's connection without a verdict and counts the failure.
    fn abort_ue(&mut self, u: u32, cause: &str) {
        let i = u as usize;
        let cell = self.ues[i].serving_cell;
        self.kpi(cell).failed_connection_attempts += 1;
        let mut log = Vec::new();
        self.ues[i].abort_connection(&mut log);
        self.bump(u);
        self.transitions(u, log, cause);
    }

    fn holder(&self, cell: u16, rnti: u16) -> Option<u32> {
        self.holders.get(&(cell, rnti))?.iter().copied().find(|&u| {
            let ue = &self.ues[u as usize];
            ue.rnti == Some(rnti) && ue.serving_cell == Some(cell) && ue.state.in_connection()
        })
    }

    // ---- air interface -------------------------------------------------

    fn open_alloc(&mut self, cell: u16, grant: UplinkGrant, msg3: bool, conn_id: Option<u64>) {
        let tx_ns = grant.transmission_slot().absolute_ns();
        self.allocs.insert(
            grant.allocation_id,
            Alloc {
                cell,
                rnti: grant.rnti,
                conn_id,
                msg3,
                grant,
                txs: Vec::new(),
                labels: Vec::new(),
                restart: Vec::new(),
                attacker_nas: None,
            },
        );
        self.push(tx_ns, prio::UL_AIR, Ev::UlAir(grant.allocation_id));
        self.push(tx_ns + SLOT_NS, prio::UL_RESOLVE, Ev::UlResolve(grant.allocation_id));
    }

    fn ue_transmission(&self, u: u32, grant: &UplinkGrant, pdu: &MacPdu) -> Transmission {
        let ue = &self.ues[u as usize];
        Transmission {
            allocation_id: grant.allocation_id,
            sender: EntityId::Ue(u),
            payload: encode_mac_pdu(pdu).expect("ue pdus are valid"),
            tx_power_dbm: ue.tx_power_dbm,
            timing_advance_us: ue.timing_advance_us,
            sender_distance_us: ue.distance_us,
        }
    }

    fn apply_attacker(&mut self, out: AttackerOutput) {
        for d in out.decisions {
            let v = serde_json::to_value(&d).expect("decision serializes");
            self.report.attack_decisions += 1;
            self.emit(self.now, EntityId::Attacker, TraceKind::AttackDecision, v);
        }
        let replay = matches!(self.attacker.as_ref().map(|a| &a.plan.strategy), Some(Strategy::SuciReplay { .. }));
        let timeout_ns = self.attacker.as_ref().map_or(0, |a| (a.plan.verdict_timeout_ms * 1e6).round() as i64);
        for s in out.transmissions {
            let Some(alloc) = self.allocs.get_mut(&s.grant.allocation_id) else { continue };
            alloc.labels.push(uplink_label(&s.pdu, s.nas.as_ref()));
            alloc.txs.push(s.tx);
            let (cell, rnti) = (alloc.cell, alloc.rnti);
            if s.nas.is_some() {
                alloc.attacker_nas = s.nas;
                if replay {
                    let t = s.grant.transmission_slot().absolute_ns() + timeout_ns;
                    self.push(t, prio::TIMER, Ev::VerdictTimeout { cell, rnti });
                }
            }
            self.report.attacker_transmissions += 1;
        }
    }

    fn ul_air(&mut self, id: AllocationId) {
        let Some(alloc) = self.allocs.get(&id) else { return };
        let (cell, rnti) = (alloc.cell, alloc.rnti);
        let mut events = Vec::new();
        for (tx, label) in alloc.txs.iter().zip(&alloc.labels) {
            let d = json!({
                "layer": "mac",
                "cell": cell,
                "rnti": rnti,
                "alloc": id.0,
                "msg": label,
                "tbs": alloc.grant.tbs_bytes,
                "power_dbm": tx.tx_power_dbm,
                "arrival_offset_us": tx.arrival_offset_us(),
                "hex": hex::encode(&tx.payload),
            });
            events.push((tx.sender, d));
        }
        let attacker_on_air = alloc.txs.iter().any(|t| t.sender == EntityId::Attacker);
        let victim_payloads: Vec<Vec<u8>> =
            alloc.txs.iter().filter(|t| t.sender != EntityId::Attacker).map(|t| t.payload.clone()).collect();
        let restart = alloc.restart.clone();
        for (sender, d) in events {
            self.emit(self.now, sender, TraceKind::TxUL, d);
        }
        // The attacker listens on allocations it does not transmit on.
        if !attacker_on_air && self.attacker.as_ref().is_some_and(|a| a.tracks(cell, rnti)) {
            let at = SymbolTime::from_ns(self.now);
            for p in victim_payloads {
                let (outcome, captured) = self.attacker.as_mut().expect("checked").sniff_uplink(cell, rnti, &p, at);
                if let SniffOutcome::Skipped(why) = outcome {
                    let d = json!({ "stage": "sniff", "cell": cell, "rnti": rnti, "skipped": why });
                    self.emit(self.now, EntityId::Attacker, TraceKind::AttackDecision, d);
                }
                if let Some(c) = captured {
                    let d = json!({
                        "stage": "capture",
                        "cell": cell,
                        "rnti": rnti,
                        "tmsi": format!("{:012x}", c.tmsi),
                        "kind": c.identity_kind,
                        "suci": hex::encode(c.suci.to_bytes()),
                    });
                    self.emit(self.now, EntityId::Attacker, TraceKind::AttackDecision, d);
                }
            }
        }
        for u in restart {
            self.abort_ue(u, "security mode rejected, reconnecting");
            self.push(self.now, prio::UE, Ev::UeStart(u));
        }
    }

    fn ul_resolve(&mut self, id: AllocationId) {
        let Some(alloc) = self.allocs.remove(&id) else { return };
        let (result, decoded, aligned, misaligned) = if alloc.txs.is_empty() {
            ("unused", None, 0, 0)
        } else {
            match resolve_reception(&alloc.txs, &self.r.capture) {
                Ok(ReceptionOutcome::Decoded(tx)) => ("decoded", Some(tx), 0, 0),
                Ok(ReceptionOutcome::Collision { aligned, misaligned }) => ("collision", None, aligned, misaligned),
                Err(e) => {
                    self.anomaly(EntityId::Gnb(alloc.cell), format!("reception: {e}"));
                    ("collision", None, 0, 0)
                }
            }
        };
        let mut d = json!({
            "cell": alloc.cell,
            "rnti": alloc.rnti,
            "alloc": id.0,
            "result": result,
            "transmissions": alloc.txs.len(),
        });
        if let Some(tx) = &decoded {
            d["sender"] = json!(tx.sender.to_string());
        }
        if result == "collision" {
            d["aligned"] = json!(aligned);
            d["misaligned"] = json!(misaligned);
        }
        self.emit(self.now, EntityId::Gnb(alloc.cell), TraceKind::RxUL, d);
        if alloc.msg3 {
            self.msg3_resolved(alloc, decoded);
        } else {
            self.data_resolved(alloc, decoded);
        }
    }

    // ---- gNB side ------------------------------------------------------

    fn prach(&mut self, cell: u16, slot: u64) {
        let occasion = self.prach.remove(&(cell, slot)).unwrap_or_default();
        let detected: Vec<DetectedPreamble> = occasion
            .iter()
            .map(|&(u, idx)| DetectedPreamble {
                preamble_index: idx,
                timing_advance_us: required_timing_advance(self.ues[u as usize].distance_us),
            })
            .collect();
        let rar_slot = SymbolTime::from_slot_index(slot + 1);
        let Some(gnb) = self.gnbs.get_mut(&cell) else {
            self.anomaly(EntityId::Gnb(cell), "preambles on a cell without gNB".into());
            return;
        };
        let (rar, anomalies) = gnb.on_preambles(&detected, rar_slot, self.gnb_rng.get_mut(&cell).expect("rng per gnb"));
        for a in anomalies {
            self.anomaly(EntityId::Gnb(cell), a);
        }
        let Some(rar) = rar else { return };
        let conn_ids: Vec<Option<u64>> =
            rar.entries.iter().map(|e| self.gnbs[&cell].connection(e.tc_rnti).map(|c| c.conn_id)).collect();
        let st = self.stats(cell);
        st.rar_messages += 1;
        st.rar_grants += rar.entries.len() as u64;
        let entries: Vec<Value> = rar
            .entries
            .iter()
            .map(|e| {
                json!({
                    "preamble": e.preamble_index,
                    "tc_rnti": e.tc_rnti,
                    "alloc": e.grant.allocation_id.0,
                    "tbs": e.grant.tbs_bytes,
                    "k2": e.grant.k2,
                    "ta_us": e.timing_advance_us,
                })
            })
            .collect();
        self.emit(self.now, EntityId::Gnb(cell), TraceKind::TxDL, json!({ "layer": "rar", "cell": cell, "entries": entries }));
        for (e, conn) in rar.entries.iter().zip(conn_ids) {
            self.open_alloc(cell, e.grant, true, conn);
        }
        if let Some(a) = self.attacker.as_mut() {
            let out = a.observe_rar(&rar, self.now + symbol_offset_ns(1), &mut self.atk_rng);
            self.apply_attacker(out);
        }
        let mut holders: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
        for &(u, _) in &occasion {
            let i = u as usize;
            let mut log = Vec::new();
            let Some((entry, pdu, rrc)) = self.ues[i].on_rar(&rar.entries, &mut self.ue_rng[i], &mut log) else {
                continue;
            };
            let tx = self.ue_transmission(u, &entry.grant, &pdu);
            if let Some(alloc) = self.allocs.get_mut(&entry.grant.allocation_id) {
                alloc.labels.push(rrc.name());
                alloc.txs.push(tx);
            }
            let t = self.bump(u);
            self.transitions(u, log, "random access response");
            let expiry = entry.grant.transmission_slot().absolute_ns() + self.r.timers.contention_timer_ns();
            self.push(expiry, prio::TIMER, Ev::ContentionTimer { ue: u, token: t });
            holders.entry(entry.tc_rnti).or_default().push(u);
        }
        for e in &rar.entries {
            let list = holders.remove(&e.tc_rnti).unwrap_or_default();
            self.holders.insert((cell, e.tc_rnti), list);
        }
    }

    fn msg3_resolved(&mut self, alloc: Alloc, decoded: Option<Transmission>) {
        let (cell, rnti) = (alloc.cell, alloc.rnti);
        self.stats(cell).msg3_resolved += 1;
        if decoded.as_ref().is_some_and(|t| t.sender == EntityId::Attacker) {
            self.stats(cell).rar_overshadowed += 1;
        }
        let gnb = self.gnbs.get_mut(&cell).expect("msg3 on a gnb cell");
        let rng = self.gnb_rng.get_mut(&cell).expect("rng per gnb");
        let outcome = gnb.on_msg3(rnti, decoded.as_ref().map(|t| t.payload.as_slice()), self.now, rng);
        match outcome {
            Err(e) => self.anomaly(EntityId::Gnb(cell), format!("msg3: {e}")),
            Ok(Msg3Outcome::ContentionResolved { cri, transaction_id, conn_id }) => {
                self.send_msg4(cell, rnti, cri, Some((transaction_id, conn_id)));
            }
            Ok(Msg3Outcome::InvalidCri { cri }) => self.send_msg4(cell, rnti, cri, None),
            Ok(other) => {
                let what = match other {
                    Msg3Outcome::Collision => "collision".to_string(),
                    Msg3Outcome::Aborted { reason } => format!("aborted: {reason}"),
                    Msg3Outcome::CrntiContention { crnti } => format!("c-rnti {crnti:#06x} contention"),
                    _ => unreachable!("handled above"),
                };
                let d = json!({ "stage": "msg3", "cell": cell, "rnti": rnti, "outcome": what });
                self.emit(self.now, EntityId::Gnb(cell), TraceKind::RxUL, d);
                self.holders.remove(&(cell, rnti));
                if let Some(a) = self.attacker.as_mut() {
                    a.forget(cell, rnti);
                }
            }
        }
    }

    fn send_msg4(&mut self, cell: u16, rnti: u16, cri: [u8; 6], setup: Option<(u8, u64)>) {
        let mut pdus = vec![hex::encode(encode_rrc(&RrcMessage::ContentionResolutionId { cri }).expect("valid cri"))];
        if let Some((tid, _)) = setup {
            pdus.push(hex::encode(encode_rrc(&RrcMessage::Setup { transaction_id: tid }).expect("valid setup")));
        }
        let msg = if setup.is_some() { "ContentionResolution+Setup" } else { "ContentionResolution" };
        let d = json!({ "layer": "rrc", "cell": cell, "rnti": rnti, "msg": msg, "pdus": pdus });
        self.emit(self.now, EntityId::Gnb(cell), TraceKind::TxDL, d);
        if setup.is_some() {
            if let Some(a) = self.attacker.as_mut() {
                if let Some((anticipated, phase)) = a.observe_contention_resolution(cell, rnti, &cri, self.now) {
                    let d = json!({
                        "stage": "classify",
                        "cell": cell,
                        "rnti": rnti,
                        "anticipated": format!("{anticipated:?}"),
                        "phase": format!("{phase:?}"),
                    });
                    self.emit(self.now, EntityId::Attacker, TraceKind::AttackDecision, d);
                }
            }
        }
        let list = self.holders.remove(&(cell, rnti)).unwrap_or_default();
        let mut winners = Vec::new();
        for u in list {
            let i = u as usize;
            if self.ues[i].rnti != Some(rnti) || self.ues[i].serving_cell != Some(cell) {
                continue;
            }
            let mut log = Vec::new();
            match self.ues[i].on_contention_resolution(&cri, &mut log) {
                CriOutcome::Match => {
                    let Some((tid, _)) = setup else {
                        self.transitions(u, log, "contention resolution");
                        self.contention_failure(u, "contention resolution without setup");
                        continue;
                    };
                    self.ues[i].on_rrc_setup(tid, &mut self.ue_rng[i], &mut log);
                    let t = self.bump(u);
                    self.transitions(u, log, "rrc setup");
                    let guard = self.now + self.r.timers.connection_guard_ns();
                    self.push(guard, prio::TIMER, Ev::ConnectionGuard { ue: u, token: t });
                    winners.push(u);
                }
                CriOutcome::Mismatch => self.contention_failure(u, "contention resolution mismatch"),
                CriOutcome::Ignored => {}
            }
        }
        if let Some((_, conn_id)) = setup {
            self.holders.insert((cell, rnti), winners);
            let requested = self.r.gnb.msg3_tbs;
            self.push(self.now + SLOT_NS, prio::DOWNLINK, Ev::GnbGrant { cell, rnti, conn_id, requested, retx: false });
        }
    }

    fn gnb_grant(&mut self, cell: u16, rnti: u16, conn_id: u64, requested: usize, retx: bool) {
        let Some(gnb) = self.gnbs.get_mut(&cell) else { return };
        if gnb.connection(rnti).is_none_or(|c| c.conn_id != conn_id) {
            return;
        }
        let grant = match gnb.schedule_ul(rnti, requested, SymbolTime::from_ns(self.now)) {
            Ok(g) => g,
            Err(e) => {
                self.anomaly(EntityId::Gnb(cell), format!("grant: {e}"));
                return;
            }
        };
        let d = json!({
            "layer": "grant",
            "cell": cell,
            "rnti": rnti,
            "alloc": grant.allocation_id.0,
            "tbs": grant.tbs_bytes,
            "k2": grant.k2,
            "retransmission": retx,
        });
        self.emit(self.now, EntityId::Gnb(cell), TraceKind::TxDL, d);
        self.open_alloc(cell, grant, false, Some(conn_id));
        if let Some(a) = self.attacker.as_mut() {
            let amf = &self.amf;
            let out = a.observe_grant(cell, &grant, self.now + symbol_offset_ns(1), &mut self.atk_rng, &|t| amf.knows_tmsi(t));
            self.apply_attacker(out);
        }
        if let Some(u) = self.holder(cell, rnti) {
            if let Some(up) = self.ues[u as usize].on_grant(&grant, retx) {
                let tx = self.ue_transmission(u, &grant, &up.pdu);
                let alloc = self.allocs.get_mut(&grant.allocation_id).expect("just opened");
                alloc.labels.push(uplink_label(&up.pdu, up.nas.as_ref()));
                alloc.txs.push(tx);
                if up.restart_after {
                    alloc.restart.push(u);
                }
            }
        }
    }

    fn data_resolved(&mut self, alloc: Alloc, decoded: Option<Transmission>) {
        let (cell, rnti) = (alloc.cell, alloc.rnti);
        let Some(conn_id) = alloc.conn_id else { return };
        let Some(gnb) = self.gnbs.get_mut(&cell) else { return };
        if gnb.connection(rnti).is_none_or(|c| c.conn_id != conn_id) {
            if decoded.is_some() {
                self.anomaly(EntityId::Gnb(cell), format!("uplink for released rnti {rnti:#06x}"));
            }
            return;
        }
        let tracking_area = gnb.tracking_area;
        let out = match gnb.on_uplink(rnti, decoded.as_ref().map(|t| t.payload.as_slice()), self.now) {
            Ok(o) => o,
            Err(e) => {
                self.anomaly(EntityId::Gnb(cell), format!("uplink: {e}"));
                return;
            }
        };
        if decoded.as_ref().is_some_and(|t| t.sender == EntityId::Attacker) && !out.relayed.is_empty() {
            self.attacked_conns.insert((cell, conn_id));
            match alloc.attacker_nas {
                Some(NasMessage::RegistrationRequest { .. }) => self.report.attacked_registrations += 1,
                Some(NasMessage::ServiceRequest { .. }) => self.report.attacked_service_requests += 1,
                _ => {}
            }
        }
        if out.setup_complete {
            self.stats(cell).rrc_connections += 1;
        }
        for a in out.anomalies {
            self.anomaly(EntityId::Gnb(cell), a);
        }
        let delay = i64::from(self.r.core_delay_slots) * SLOT_NS;
        for rel in out.relayed {
            let ctx = NasContext { connection: rel.conn_id, cell_id: cell, tracking_area };
            self.push(self.now + delay, prio::CORE, Ev::AmfRx { ctx, rnti, nas: rel.nas });
        }
        if let Some(rg) = out.regrant {
            let requested = if rg.retransmission { alloc.grant.tbs_bytes } else { self.r.gnb.large_grant_tbs };
            let ev = Ev::GnbGrant { cell, rnti, conn_id, requested, retx: rg.retransmission };
            self.push(self.now + SLOT_NS, prio::DOWNLINK, ev);
        }
        if out.released {
            self.connection_lost(cell, rnti, conn_id, "uplink retransmissions exhausted");
        }
    }

    /// The gNB dropped a connection on its own.
    fn connection_lost(&mut self, cell: u16, rnti: u16, conn_id: u64, cause: &str) {
        self.amf.close(conn_id);
        if let Some(a) = self.attacker.as_mut() {
            a.forget(cell, rnti);
        }
        if let Some(u) = self.holder(cell, rnti) {
            self.abort_ue(u, cause);
        }
        self.holders.remove(&(cell, rnti));
    }

    fn gnb_dl(&mut self, cell: u16, rnti: u16, conn_id: u64, nas: NasMessage) {
        let Some(gnb) = self.gnbs.get_mut(&cell) else { return };
        let dl = match gnb.relay_downlink(rnti, conn_id, &nas, self.now) {
            Ok(dl) => dl,
            Err(e) => {
                self.amf.close(conn_id);
                self.anomaly(EntityId::Gnb(cell), format!("{} dropped: {e}", nas.name()));
                return;
            }
        };
        let d = json!({
            "layer": "srb",
            "cell": cell,
            "rnti": rnti,
            "msg": nas.name(),
            "release": dl.release,
            "hex": hex::encode(&dl.sdu),
        });
        self.emit(self.now, EntityId::Gnb(cell), TraceKind::TxDL, d);
        let k = self.kpi(Some(cell));
        match nas {
            NasMessage::RegistrationReject { .. } => k.registration_rejects += 1,
            NasMessage::ServiceReject { .. } => k.service_rejects += 1,
            NasMessage::IdentityRequest => k.identity_requests += 1,
            NasMessage::AuthenticationReject => k.auth_rejects += 1,
            _ => {}
        }
        if matches!(nas, NasMessage::RegistrationReject { .. }) && self.attacked_conns.contains(&(cell, conn_id)) {
            self.report.attacked_registrations_rejected += 1;
        }
        let at = SymbolTime::from_ns(self.now);
        if let Some(rec) = self.attacker.as_mut().and_then(|a| a.observe_dl_nas(cell, rnti, &nas, at)) {
            let d = json!({ "stage": "verdict", "cell": cell, "rnti": rnti, "verdict": format!("{:?}", rec.verdict) });
            self.emit(self.now, EntityId::Attacker, TraceKind::AttackDecision, d);
        }
        if let Some(u) = self.holder(cell, rnti) {
            let i = u as usize;
            let cells = self.cells.clone();
            let reaction = self.ues[i].on_nas(&nas, &cells, &mut self.ue_rng[i]);
            self.transitions(u, reaction.transitions, nas.name());
            match reaction.directive {
                NasDirective::Continue | NasDirective::RestartAfterReply => {
                    if !dl.release {
                        let requested = self.r.gnb.large_grant_tbs;
                        let ev = Ev::GnbGrant { cell, rnti, conn_id, requested, retx: false };
                        self.push(self.now + SLOT_NS, prio::DOWNLINK, ev);
                    }
                }
                NasDirective::ConnectionDone => {
                    if matches!(nas, NasMessage::RegistrationAccept { .. } | NasMessage::ServiceAccept) {
                        self.stats(cell).successful_connections += 1;
                    } else {
                        self.kpi(Some(cell)).failed_connection_attempts += 1;
                    }
                    self.bump(u);
                }
                NasDirective::RestartNow => {
                    self.kpi(Some(cell)).failed_connection_attempts += 1;
                    self.bump(u);
                    self.push(self.now, prio::UE, Ev::UeStart(u));
                }
                NasDirective::Downgraded | NasDirective::Disabled => {
                    self.kpi(Some(cell)).failed_connection_attempts += 1;
                    self.bump(u);
                }
                NasDirective::Unexpected => {
                    self.anomaly(EntityId::Ue(u), format!("unexpected {} in {}", nas.name(), self.ues[i].state));
                }
            }
        }
        if dl.release {
            self.amf.close(conn_id);
            if let Some(a) = self.attacker.as_mut() {
                a.forget(cell, rnti);
            }
            if let Some(u) = self.holder(cell, rnti) {
                self.abort_ue(u, "released by network");
            }
            self.holders.remove(&(cell, rnti));
        }
    }

    // ---- core ----------------------------------------------------------

    fn amf_rx(&mut self, ctx: NasContext, rnti: u16, nas: NasMessage) {
        let resp = self.amf.on_uplink(&ctx, &nas, &mut self.amf_rng);
        let d = json!({
            "dir": "uplink",
            "cell": ctx.cell_id,
            "rnti": rnti,
            "conn": ctx.connection,
            "msg": nas.name(),
            "note": resp.note,
            "layer": "nas",
            "hex": hex::encode(encode_nas(&nas).expect("valid nas")),
        });
        self.emit(self.now, EntityId::Amf, TraceKind::Ngap, d);
        if let Some(reply) = resp.reply {
            let d = json!({
                "dir": "downlink",
                "cell": ctx.cell_id,
                "rnti": rnti,
                "conn": ctx.connection,
                "msg": reply.name(),
                "session": resp.session_state.map(|s| format!("{s:?}")),
                "layer": "nas",
                "hex": hex::encode(encode_nas(&reply).expect("valid nas")),
            });
            self.emit(self.now, EntityId::Amf, TraceKind::Ngap, d);
            let delay = i64::from(self.r.core_delay_slots) * SLOT_NS;
            let ev = Ev::GnbDl { cell: ctx.cell_id, rnti, conn_id: ctx.connection, nas: reply };
            self.push(self.now + delay, prio::DOWNLINK, ev);
        }
    }

    fn kpi_tick(&mut self) {
        let cells: Vec<u16> = self.gnbs.keys().copied().collect();
        for cell in cells {
            let gnb = self.gnbs.get_mut(&cell).expect("listed");
            let conns: BTreeMap<u16, u64> =
                gnb.active_rntis().map(|r| (r, gnb.connection(r).expect("active").conn_id)).collect();
            let expired = gnb.expire_inactive(self.now);
            let active = conns.len() - expired.len();
            for rnti in expired {
                self.connection_lost(cell, rnti, conns[&rnti], "gnb inactivity timer");
            }
            let k = *self.kpi(Some(cell));
            let mut d = serde_json::to_value(k).expect("kpi serializes");
            d["cell"] = json!(cell);
            d["active_rntis"] = json!(active);
            self.emit(self.now, EntityId::Gnb(cell), TraceKind::KpiTick, d);
        }
        self.push(self.now + self.r.kpi_interval_ns, prio::KPI, Ev::KpiTick);
    }

    fn finish(mut self) -> RunReport {
        for (i, ue) in self.ues.iter().enumerate() {
            if self.aux[i].toggles > 0 && ue.state == UeState::DowngradedTo4G {
                self.report.cycles_downgraded += 1;
            }
            let summary = UeSummary {
                id: ue.id,
                profile: ue.profile.name.clone(),
                supi: ue.supi.0,
                final_state: ue.state.name(),
                serving_cell: ue.serving_cell,
                stored_tmsi: ue.stored_tmsi,
                initial_tmsi: self.aux[i].initial_tmsi,
                preambles: ue.total_preambles,
                connections_started: ue.connections_started,
                registrations: ue.registrations,
                service_accepts: ue.service_accepts,
            };
            *self.report.final_states.entry(summary.final_state.clone()).or_default() += 1;
            self.report.ues.push(summary);
        }
        let mut total = KpiCounters::default();
        for k in self.kpi.values() {
            total.failed_connection_attempts += k.failed_connection_attempts;
            total.registration_rejects += k.registration_rejects;
            total.service_rejects += k.service_rejects;
            total.identity_requests += k.identity_requests;
            total.auth_rejects += k.auth_rejects;
            total.contention_failures += k.contention_failures;
        }
        self.report.kpi = total;
        if let Some(a) = self.attacker.take() {
            self.report.deadline_misses = a.stats.deadline_misses;
            self.report.captures = a.captured;
            self.report.verdicts = a.verdicts;
        }
        self.report
    }
}
