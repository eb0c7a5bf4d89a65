//! Discrete-event simulator of 5G-SA connection establishment under an
//! uplink-overshadowing adversary.
//!
//! The crate is organised bottom-up:
//!
//! - [`airtime`]: numerology clock, grants, timing advance and power capture.
//! - [`codecs`]: byte layouts for MAC, RLC, PDCP, RRC and NAS messages plus the
//!   abstract SUCI concealment and authentication primitives.
//! - [`ue`], [`gnb`], [`amf`]: protocol state machines of the honest entities.
//! - [`attacker`]: the overshadowing adversary and its latency budget.
//! - [`sim`]: the event loop, scenario files, traces and reports.

pub mod airtime;
pub mod amf;
pub mod attacker;
pub mod codecs;
pub mod gnb;
pub mod sim;
pub mod ue;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use airtime::{
    advance_slots, grant_deadline, required_timing_advance, resolve_reception, AllocationId,
    CaptureConfig, ReceptionOutcome, SymbolTime, Transmission, UplinkGrant,
};
pub use attacker::{AttackPlan, CapturedIdentity, CostModel, ReplayVerdict, Strategy};
pub use codecs::{NasMessage, RrcMessage, Suci, Supi};
pub use sim::{run, RunReport, Scenario, TraceEvent};

/// Participant in a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityId {
    Ue(u32),
    Gnb(u16),
    Amf,
    Attacker,
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Ue(i) => write!(f, "ue:{i}"),
            EntityId::Gnb(c) => write!(f, "gnb:{c}"),
            EntityId::Amf => f.write_str("amf"),
            EntityId::Attacker => f.write_str("attacker"),
        }
    }
}
