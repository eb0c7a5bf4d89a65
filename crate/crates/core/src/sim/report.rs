//! Run summary: attack counters, KPI counters, per-UE outcome.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attacker::{export_captures, CapturedIdentity, ReplayRecord, ReplayVerdict};
use crate::sim::scenario::ExpectSpec;

/// Counters an operator could watch for signs of the attacks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KpiCounters {
    pub failed_connection_attempts: u64,
    pub registration_rejects: u64,
    pub service_rejects: u64,
    pub identity_requests: u64,
    pub auth_rejects: u64,
    pub contention_failures: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub preambles: u64,
    pub rar_messages: u64,
    pub rar_grants: u64,
    /// Msg3 allocations that reached the gNB's decoder before the run ended.
    pub msg3_resolved: u64,
    /// Msg3 allocations where the gNB decoded the attacker.
    pub rar_overshadowed: u64,
    pub rrc_connections: u64,
    /// Connections that ended in a RegistrationAccept or ServiceAccept.
    pub successful_connections: u64,
    /// NAS messages the AMF handled for connections on this cell.
    pub amf_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeSummary {
    pub id: u32,
    pub profile: String,
    pub supi: u64,
    pub final_state: String,
    pub serving_cell: Option<u16>,
    pub stored_tmsi: Option<u64>,
    pub initial_tmsi: Option<u64>,
    pub preambles: u64,
    pub connections_started: u64,
    pub registrations: u64,
    pub service_accepts: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub events: u64,
    pub strategy: Option<String>,
    pub target_cell: Option<u16>,
    pub cells: BTreeMap<u16, CellStats>,
    pub kpi: KpiCounters,
    pub attack_decisions: u64,
    pub deadline_misses: u64,
    pub attacker_transmissions: u64,
    pub attacker_downlink_transmissions: u64,
    pub amf_events: u64,
    /// Connections whose first NAS message, as decoded by the gNB, was the
    /// attacker's RegistrationRequest.
    pub attacked_registrations: u64,
    pub attacked_registrations_rejected: u64,
    pub attacked_service_requests: u64,
    pub toggle_cycles: u64,
    pub cycles_downgraded: u64,
    pub captures: Vec<CapturedIdentity>,
    pub verdicts: Vec<ReplayRecord>,
    pub anomalies: u64,
    pub anomaly_samples: Vec<String>,
    pub ues: Vec<UeSummary>,
    pub final_states: BTreeMap<String, u64>,
    pub breaches: Vec<String>,
}

impl RunReport {
    pub fn target(&self) -> Option<&CellStats> {
        self.target_cell.and_then(|c| self.cells.get(&c))
    }

    pub fn rar_overshadow_rate(&self) -> f64 {
        match self.target() {
            // Grants still in flight when the run stops are not counted.
            Some(c) if c.msg3_resolved > 0 => c.rar_overshadowed as f64 / c.msg3_resolved as f64,
            _ => 0.0,
        }
    }

    pub fn successful_connections(&self) -> u64 {
        self.cells.values().map(|c| c.successful_connections).sum()
    }

    fn verdict_count(&self, v: ReplayVerdict) -> u64 {
        self.verdicts.iter().filter(|r| r.verdict == v).count() as u64
    }

    /// Flat name to number map; the names are what `[expect]` refers to.
    pub fn totals(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            m.insert(k.to_string(), v);
        };
        put("events", self.events as f64);
        put("ues", self.ues.len() as f64);
        let t = self.target().cloned().unwrap_or_default();
        put("rar_messages", t.rar_messages as f64);
        put("rar_grants", t.rar_grants as f64);
        put("rar_overshadowed", t.rar_overshadowed as f64);
        put("msg3_resolved", t.msg3_resolved as f64);
        put("rar_overshadow_rate", self.rar_overshadow_rate());
        put("target_rrc_connections", t.rrc_connections as f64);
        put("target_successful_connections", t.successful_connections as f64);
        put("target_amf_events", t.amf_events as f64);
        put("successful_connections", self.successful_connections() as f64);
        put("preambles", self.cells.values().map(|c| c.preambles).sum::<u64>() as f64);
        put("attack_decisions", self.attack_decisions as f64);
        put("deadline_misses", self.deadline_misses as f64);
        put("attacker_transmissions", self.attacker_transmissions as f64);
        put("attacker_downlink_transmissions", self.attacker_downlink_transmissions as f64);
        put("amf_events", self.amf_events as f64);
        put("attacked_registrations", self.attacked_registrations as f64);
        put("attacked_registrations_rejected", self.attacked_registrations_rejected as f64);
        put("attacked_service_requests", self.attacked_service_requests as f64);
        put("toggle_cycles", self.toggle_cycles as f64);
        put("cycles_downgraded", self.cycles_downgraded as f64);
        put("captures", self.captures.len() as f64);
        put("verdicts_match", self.verdict_count(ReplayVerdict::SuciMatchesUe) as f64);
        put("verdicts_mismatch", self.verdict_count(ReplayVerdict::SuciMismatch) as f64);
        put("verdicts_inconclusive", self.verdict_count(ReplayVerdict::Inconclusive) as f64);
        put("anomalies", self.anomalies as f64);
        let k = self.kpi;
        put("failed_connection_attempts", k.failed_connection_attempts as f64);
        put("registration_rejects", k.registration_rejects as f64);
        put("service_rejects", k.service_rejects as f64);
        put("identity_requests", k.identity_requests as f64);
        put("auth_rejects", k.auth_rejects as f64);
        put("contention_failures", k.contention_failures as f64);
        for (state, n) in &self.final_states {
            put(&format!("final.{state}"), *n as f64);
        }
        m
    }

    /// Fills `breaches` from the scenario's expectations.
    pub fn check(&mut self, expect: &ExpectSpec) {
        let totals = self.totals();
        let mut out = Vec::new();
        let get = |k: &str| totals.get(k).copied().or_else(|| k.starts_with("final.").then_some(0.0));
        for (k, want) in &expect.equal {
            match get(k) {
                Some(v) if (v - want).abs() <= 1e-9 => {}
                Some(v) => out.push(format!("{k} = {v}, expected {want}")),
                None => out.push(format!("{k}: no such total")),
            }
        }
        for (k, want) in &expect.min {
            match get(k) {
                Some(v) if v >= *want => {}
                Some(v) => out.push(format!("{k} = {v}, expected at least {want}")),
                None => out.push(format!("{k}: no such total")),
            }
        }
        for (k, want) in &expect.max {
            match get(k) {
                Some(v) if v <= *want => {}
                Some(v) => out.push(format!("{k} = {v}, expected at most {want}")),
                None => out.push(format!("{k}: no such total")),
            }
        }
        if let Some(allowed) = &expect.final_states {
            for u in &self.ues {
                if !allowed.contains(&u.final_state) {
                    out.push(format!("ue {} ({}) ended {}", u.id, u.profile, u.final_state));
                }
            }
        }
        self.breaches = out;
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let name = if self.name.is_empty() { "(unnamed)" } else { &self.name };
        let _ = writeln!(s, "scenario {name}  seed {}  {:.3} s simulated  {} events", self.seed, self.duration_s, self.events);
        match (&self.strategy, self.target_cell) {
            (Some(st), Some(c)) => {
                let _ = writeln!(s, "attack {st} on cell {c}");
            }
            _ => {
                let _ = writeln!(s, "no attack");
            }
        }
        let _ = writeln!(s, "\ncells");
        for (id, c) in &self.cells {
            let _ = writeln!(
                s,
                "  cell {id}: {} preambles, {} RARs with {} grants, {} overshadowed, {} rrc connections, {} successful, {} amf events",
                c.preambles,
                c.rar_messages,
                c.rar_grants,
                c.rar_overshadowed,
                c.rrc_connections,
                c.successful_connections,
                c.amf_events
            );
        }
        if self.strategy.is_some() {
            let _ = writeln!(s, "\nattack");
            let _ = writeln!(s, "  rar overshadow rate   {:.4}", self.rar_overshadow_rate());
            let _ = writeln!(s, "  decisions             {} ({} deadline misses)", self.attack_decisions, self.deadline_misses);
            let _ = writeln!(s, "  transmissions         {}", self.attacker_transmissions);
            let _ = writeln!(
                s,
                "  attacked registrations {} ({} rejected), attacked service requests {}",
                self.attacked_registrations, self.attacked_registrations_rejected, self.attacked_service_requests
            );
        }
        if self.toggle_cycles > 0 {
            let _ = writeln!(s, "  toggle cycles         {} ({} ended downgraded)", self.toggle_cycles, self.cycles_downgraded);
        }
        let k = self.kpi;
        let _ = writeln!(s, "\nkpi");
        let _ = writeln!(s, "  failed connection attempts {}", k.failed_connection_attempts);
        let _ = writeln!(s, "  registration rejects       {}", k.registration_rejects);
        let _ = writeln!(s, "  service rejects            {}", k.service_rejects);
        let _ = writeln!(s, "  identity requests          {}", k.identity_requests);
        let _ = writeln!(s, "  authentication rejects     {}", k.auth_rejects);
        let _ = writeln!(s, "  contention failures        {}", k.contention_failures);
        if !self.captures.is_empty() {
            let _ = writeln!(s, "\ncaptured identities");
            s.push_str(&export_captures(&self.captures));
        }
        if !self.verdicts.is_empty() {
            let _ = writeln!(s, "\nreplay verdicts");
            for v in &self.verdicts {
                let id = v.identity.map_or("-".to_string(), |i| format!("{i:012x}"));
                let _ = writeln!(s, "  {} cell {} rnti {:#06x} identity {id}: {:?}", v.at, v.cell_id, v.rnti, v.verdict);
            }
        }
        let _ = writeln!(s, "\nues");
        if self.ues.len() > 20 {
            for (state, n) in &self.final_states {
                let _ = writeln!(s, "  {n:>5} {state}");
            }
        } else {
            for u in &self.ues {
                let _ = writeln!(
                    s,
                    "  ue {:>3} {:<16} {:<18} cell {:<5} tmsi {:<12} {} preambles, {} connections, {} registrations, {} service accepts",
                    u.id,
                    u.profile,
                    u.final_state,
                    u.serving_cell.map_or("-".into(), |c| c.to_string()),
                    u.stored_tmsi.map_or("-".into(), |t| format!("{t:012x}")),
                    u.preambles,
                    u.connections_started,
                    u.registrations,
                    u.service_accepts
                );
            }
        }
        if self.anomalies > 0 {
            let _ = writeln!(s, "\nanomalies: {}", self.anomalies);
            for a in &self.anomaly_samples {
                let _ = writeln!(s, "  {a}");
            }
        }
        if !self.breaches.is_empty() {
            let _ = writeln!(s, "\nexpectation breaches");
            for b in &self.breaches {
                let _ = writeln!(s, "  {b}");
            }
        }
        let _ = writeln!(s, "\n[totals]");
        for (k, v) in self.totals() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Reads the `[totals]` section back from a rendered report.
pub fn parse_totals(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .skip_while(|l| l.trim() != "[totals]")
        .skip(1)
        .filter_map(|l| {
            let (k, v) = l.split_once(" = ")?;
            Some((k.trim().to_string(), v.trim().parse().ok()?))
        })
        .collect()
}
