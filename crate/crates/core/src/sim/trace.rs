//! Trace records and their NDJSON form.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::airtime::SymbolTime;
use crate::codecs::{decode_mac_pdu, decode_nas, decode_rrc, decode_srb_sdu, decode_uplink};
use crate::EntityId;

/// Bumped whenever a field changes meaning.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    /// Something put on an uplink allocation.
    TxUL,
    /// Downlink from a gNB: RAR, contention resolution, grants, NAS.
    TxDL,
    /// What the gNB made of one uplink allocation.
    RxUL,
    /// NAS between gNB and AMF.
    Ngap,
    StateChange,
    AttackDecision,
    Anomaly,
    KpiTick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub v: u32,
    pub seq: u64,
    pub time: SymbolTime,
    pub t_ns: i64,
    pub entity: EntityId,
    pub kind: TraceKind,
    pub detail: Value,
}

impl TraceEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let ev: TraceEvent = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if ev.v != TRACE_SCHEMA_VERSION {
            return Err(format!("trace schema {} is not {}", ev.v, TRACE_SCHEMA_VERSION));
        }
        Ok(ev)
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.detail.get(key).and_then(Value::as_str)
    }
}

pub fn write_trace<W: Write>(mut w: W, events: &[TraceEvent]) -> io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TraceEvent::from_line(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Runs every hex field of an event back through the codecs. `layer` says
/// what the bytes are: `mac` (uplink MAC PDU), `srb` (one DCCH SDU), `nas`
/// or `rrc` (a list of RRC messages).
pub fn decode_detail(ev: &TraceEvent) -> Result<Option<Value>, String> {
    let layer = ev.detail_str("layer");
    match layer {
        Some("mac") => {
            let hex = ev.detail_str("hex").ok_or("mac event without hex")?;
            let bytes = hex::decode(hex).map_err(|e| e.to_string())?;
            match decode_uplink(&bytes) {
                Ok(up) => Ok(Some(serde_json::to_value(up).expect("serializes"))),
                // Attacker padding and BSR PDUs decode at MAC level at least.
                Err(e) => match decode_mac_pdu(&bytes) {
                    Ok(mac) => Ok(Some(json!({ "mac": mac, "inner_error": e.to_string() }))),
                    Err(_) => Err(format!("mac: {e}")),
                },
            }
        }
        Some("srb") => {
            let hex = ev.detail_str("hex").ok_or("srb event without hex")?;
            let bytes = hex::decode(hex).map_err(|e| e.to_string())?;
            let sdu = decode_srb_sdu(&bytes).map_err(|e| e.to_string())?;
            Ok(Some(serde_json::to_value(sdu).expect("serializes")))
        }
        Some("rrc") => {
            let list = ev.detail.get("pdus").and_then(Value::as_array).ok_or("rrc event without pdus")?;
            let mut out = Vec::new();
            for h in list {
                let bytes = hex::decode(h.as_str().ok_or("pdu is not a string")?).map_err(|e| e.to_string())?;
                out.push(serde_json::to_value(decode_rrc(&bytes).map_err(|e| e.to_string())?).expect("serializes"));
            }
            Ok(Some(Value::Array(out)))
        }
        Some("nas") => {
            let hex = ev.detail_str("hex").ok_or("nas event without hex")?;
            let bytes = hex::decode(hex).map_err(|e| e.to_string())?;
            let nas = decode_nas(&bytes).map_err(|e| e.to_string())?;
            Ok(Some(serde_json::to_value(nas).expect("serializes")))
        }
        _ => Ok(None),
    }
}

/// Human-readable form of one event, with decoded payloads.
pub fn pretty(ev: &TraceEvent) -> String {
    let mut s = format!("{:>8} {:>14} {:<10} {:<14}", ev.seq, ev.time.to_string(), ev.entity.to_string(), format!("{:?}", ev.kind));
    let mut d = ev.detail.clone();
    if let Value::Object(m) = &mut d {
        m.remove("hex");
        m.remove("pdus");
    }
    s.push(' ');
    s.push_str(&d.to_string());
    match decode_detail(ev) {
        Ok(Some(v)) => {
            s.push_str("\n         decoded: ");
            s.push_str(&v.to_string());
        }
        Ok(None) => {}
        Err(e) => {
            s.push_str("\n         decode error: ");
            s.push_str(&e);
        }
    }
    s
}
