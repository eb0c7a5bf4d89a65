//! Air-interface model: the µ=1 numerology clock, uplink grants, timing
//! advance and power-capture resolution of co-scheduled uplink transmissions.
//!
//! Frequency-domain detail is collapsed into opaque [`AllocationId`]s: two
//! transmissions interfere iff they share an allocation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::EntityId;

/// Slots per 10 ms frame at 30 kHz subcarrier spacing.
pub const SLOTS_PER_FRAME: u32 = 20;
pub const SYMBOLS_PER_SLOT: u8 = 14;
pub const SLOT_NS: i64 = 500_000;
pub const FRAME_NS: i64 = SLOT_NS * SLOTS_PER_FRAME as i64;
pub const SLOT_US: f64 = 500.0;
pub const SYMBOL_US: f64 = SLOT_US / SYMBOLS_PER_SLOT as f64;

/// Offset of symbol `k` from the start of its slot, in nanoseconds.
///
/// 500 µs / 14 is not integral in ns; the offset is truncated, which keeps
/// the mapping strictly monotone.
pub const fn symbol_offset_ns(k: u8) -> i64 {
    (k as i64 * SLOT_NS) / SYMBOLS_PER_SLOT as i64
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AirtimeError {
    #[error("resolve_reception called with no transmissions")]
    NoTransmissions,
    #[error("transmissions reference different allocations ({0} and {1})")]
    MixedAllocations(AllocationId, AllocationId),
    #[error("invalid symbol time: slot {slot}, symbol {symbol}")]
    InvalidSymbolTime { slot: u32, symbol: u8 },
    #[error("k2 must be at least 1")]
    ZeroK2,
    #[error("transport block size must be at least one byte")]
    EmptyGrant,
    #[error("capture configuration must be finite and non-negative")]
    InvalidCaptureConfig,
}

/// A symbol position on the cell clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolTime {
    pub frame: u32,
    pub slot_in_frame: u8,
    pub symbol_in_slot: u8,
}

impl SymbolTime {
    pub const ZERO: SymbolTime = SymbolTime { frame: 0, slot_in_frame: 0, symbol_in_slot: 0 };

    pub fn new(frame: u32, slot: u8, symbol: u8) -> Result<Self, AirtimeError> {
        if u32::from(slot) >= SLOTS_PER_FRAME || symbol >= SYMBOLS_PER_SLOT {
            return Err(AirtimeError::InvalidSymbolTime { slot: slot.into(), symbol });
        }
        Ok(Self { frame, slot_in_frame: slot, symbol_in_slot: symbol })
    }

    /// First symbol of the given absolute slot index.
    pub fn from_slot_index(slot_index: u64) -> Self {
        Self {
            frame: (slot_index / SLOTS_PER_FRAME as u64) as u32,
            slot_in_frame: (slot_index % SLOTS_PER_FRAME as u64) as u8,
            symbol_in_slot: 0,
        }
    }

    /// Latest symbol boundary at or before `ns`.
    pub fn from_ns(ns: i64) -> Self {
        let ns = ns.max(0);
        let slot_index = (ns / SLOT_NS) as u64;
        let within = ns % SLOT_NS;
        let mut symbol = 0u8;
        while symbol + 1 < SYMBOLS_PER_SLOT && symbol_offset_ns(symbol + 1) <= within {
            symbol += 1;
        }
        Self { symbol_in_slot: symbol, ..Self::from_slot_index(slot_index) }
    }

    pub fn slot_index(&self) -> u64 {
        u64::from(self.frame) * SLOTS_PER_FRAME as u64 + u64::from(self.slot_in_frame)
    }

    pub fn absolute_ns(&self) -> i64 {
        self.slot_index() as i64 * SLOT_NS + symbol_offset_ns(self.symbol_in_slot)
    }

    pub fn absolute_us(&self) -> f64 {
        self.slot_index() as f64 * SLOT_US + f64::from(self.symbol_in_slot) * SYMBOL_US
    }

    pub fn with_symbol(self, symbol: u8) -> Self {
        Self { symbol_in_slot: symbol.min(SYMBOLS_PER_SLOT - 1), ..self }
    }
}

impl fmt::Display for SymbolTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}.{:02}", self.frame, self.slot_in_frame, self.symbol_in_slot)
    }
}

/// Moves `t` forward by `n` slots, keeping the symbol index.
pub fn advance_slots(t: SymbolTime, n: u64) -> SymbolTime {
    SymbolTime::from_slot_index(t.slot_index() + n).with_symbol(t.symbol_in_slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AllocationId(pub u64);

impl fmt::Display for AllocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alloc#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UplinkGrant {
    pub rnti: u16,
    /// Slot of the downlink message carrying the grant.
    pub grant_slot: SymbolTime,
    pub k2: u8,
    pub tbs_bytes: usize,
    pub allocation_id: AllocationId,
}

impl UplinkGrant {
    pub fn new(
        rnti: u16,
        grant_slot: SymbolTime,
        k2: u8,
        tbs_bytes: usize,
        allocation_id: AllocationId,
    ) -> Result<Self, AirtimeError> {
        if k2 == 0 {
            return Err(AirtimeError::ZeroK2);
        }
        if tbs_bytes == 0 {
            return Err(AirtimeError::EmptyGrant);
        }
        Ok(Self { rnti, grant_slot, k2, tbs_bytes, allocation_id })
    }

    pub fn transmission_slot(&self) -> SymbolTime {
        grant_deadline(self)
    }
}

/// The instant an uplink payload for `g` must be on air: the first symbol of
/// slot `grant_slot + k2`.
pub fn grant_deadline(g: &UplinkGrant) -> SymbolTime {
    advance_slots(g.grant_slot.with_symbol(0), u64::from(g.k2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub allocation_id: AllocationId,
    pub sender: EntityId,
    pub payload: Vec<u8>,
    /// Power as seen at the gNB antenna.
    pub tx_power_dbm: f64,
    pub timing_advance_us: f64,
    /// One-way propagation delay to the gNB.
    pub sender_distance_us: f64,
}

impl Transmission {
    pub fn arrival_offset_us(&self) -> f64 {
        arrival_offset_us(self.sender_distance_us, self.timing_advance_us)
    }
}

pub fn arrival_offset_us(distance_us: f64, timing_advance_us: f64) -> f64 {
    2.0 * distance_us - timing_advance_us
}

/// Round-trip compensation so a sender at `distance_us` arrives aligned.
pub fn required_timing_advance(distance_us: f64) -> f64 {
    2.0 * distance_us
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub capture_margin_db: f64,
    pub ta_tolerance_us: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self { capture_margin_db: 3.0, ta_tolerance_us: 2.3 }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<(), AirtimeError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.capture_margin_db) && ok(self.ta_tolerance_us) {
            Ok(())
        } else {
            Err(AirtimeError::InvalidCaptureConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceptionOutcome {
    Decoded(Transmission),
    /// Nothing decodable on the allocation: either no aligned survivor or no
    /// survivor stronger than the rest by more than the capture margin.
    Collision { aligned: usize, misaligned: usize },
}

impl ReceptionOutcome {
    pub fn decoded(&self) -> Option<&Transmission> {
        match self {
            ReceptionOutcome::Decoded(tx) => Some(tx),
            ReceptionOutcome::Collision { .. } => None,
        }
    }
}

// Powers are compared in integer milli-dB so that shifting every power by the
// same grid-aligned offset cannot flip a decision through float rounding.
fn millidb(v: f64) -> i64 {
    (v * 1000.0).round() as i64
}

/// Resolves what the gNB decodes on a single allocation.
///
/// Misaligned transmissions are discarded first. The strongest survivor is
/// decoded only if it beats every other survivor by strictly more than the
/// capture margin.
pub fn resolve_reception(
    txs: &[Transmission],
    cfg: &CaptureConfig,
) -> Result<ReceptionOutcome, AirtimeError> {
    let first = txs.first().ok_or(AirtimeError::NoTransmissions)?;
    if let Some(other) = txs.iter().find(|t| t.allocation_id != first.allocation_id) {
        return Err(AirtimeError::MixedAllocations(first.allocation_id, other.allocation_id));
    }

    let (aligned, misaligned): (Vec<&Transmission>, Vec<&Transmission>) = txs
        .iter()
        .partition(|t| t.arrival_offset_us().abs() <= cfg.ta_tolerance_us);

    let collision = ReceptionOutcome::Collision { aligned: aligned.len(), misaligned: misaligned.len() };
    // First maximum wins ties in position; ties in power are collisions anyway.
    let Some((best_idx, best)) = aligned
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            millidb(a.tx_power_dbm).cmp(&millidb(b.tx_power_dbm)).then(ib.cmp(ia))
        })
    else {
        return Ok(collision);
    };

    let margin = millidb(cfg.capture_margin_db);
    let best_power = millidb(best.tx_power_dbm);
    let captures = aligned
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best_idx)
        .all(|(_, t)| best_power - millidb(t.tx_power_dbm) > margin);

    if captures {
        Ok(ReceptionOutcome::Decoded((*best).clone()))
    } else {
        Ok(collision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(alloc: u64, sender: EntityId, power: f64, distance: f64, ta: f64) -> Transmission {
        Transmission {
            allocation_id: AllocationId(alloc),
            sender,
            payload: vec![],
            tx_power_dbm: power,
            timing_advance_us: ta,
            sender_distance_us: distance,
        }
    }

    fn aligned(sender: EntityId, power: f64) -> Transmission {
        tx(1, sender, power, 1.0, required_timing_advance(1.0))
    }

    fn st(f: u32, s: u8, y: u8) -> SymbolTime {
        SymbolTime::new(f, s, y).unwrap()
    }

    fn step_one_slot(t: SymbolTime) -> SymbolTime {
        if u32::from(t.slot_in_frame) + 1 == SLOTS_PER_FRAME {
            SymbolTime { frame: t.frame + 1, slot_in_frame: 0, ..t }
        } else {
            SymbolTime { slot_in_frame: t.slot_in_frame + 1, ..t }
        }
    }

    #[test]
    fn advance_single_slot() {
        let t = advance_slots(st(0, 0, 0), 1);
        assert_eq!(t, st(0, 1, 0));
        assert_eq!(t.absolute_ns() - st(0, 0, 0).absolute_ns(), 500_000);
    }

    #[test]
    fn advance_rolls_over_frame() {
        assert_eq!(advance_slots(st(0, 19, 3), 1), st(1, 0, 3));
    }

    #[test]
    fn advance_matches_repeated_stepping() {
        let start = st(2, 5, 0);
        let stepped = (0..40).fold(start, |t, _| step_one_slot(t));
        assert_eq!(stepped, st(4, 5, 0));
        assert_eq!(advance_slots(start, 40), stepped);
    }

    #[test]
    fn symbol_time_rejects_out_of_range() {
        assert!(SymbolTime::new(0, 20, 0).is_err());
        assert!(SymbolTime::new(0, 0, 14).is_err());
    }

    #[test]
    fn absolute_time_is_strictly_monotone() {
        let mut prev = -1i64;
        for slot in 0..40u64 {
            for sym in 0..SYMBOLS_PER_SLOT {
                let t = SymbolTime::from_slot_index(slot).with_symbol(sym);
                assert!(t.absolute_ns() > prev);
                prev = t.absolute_ns();
                assert_eq!(SymbolTime::from_ns(t.absolute_ns()), t);
            }
        }
        assert!((st(0, 0, 1).absolute_us() - 35.714).abs() < 1e-3);
    }

    fn grant(at: SymbolTime, k2: u8) -> UplinkGrant {
        UplinkGrant::new(0x4601, at, k2, 7, AllocationId(1)).unwrap()
    }

    #[test]
    fn deadline_k2_1_is_next_slot() {
        let g = grant(st(0, 4, 0), 1);
        assert_eq!(grant_deadline(&g), st(0, 5, 0));
        assert_eq!(grant_deadline(&g).absolute_us() - g.grant_slot.absolute_us(), 500.0);
    }

    #[test]
    fn deadline_k2_3() {
        assert_eq!(grant_deadline(&grant(st(0, 4, 0), 3)), st(0, 7, 0));
    }

    #[test]
    fn deadline_across_frame() {
        let g = grant(st(0, 19, 0), 4);
        assert_eq!(grant_deadline(&g), advance_slots(advance_slots(st(0, 19, 0), 2), 2));
        assert_eq!(grant_deadline(&g), st(1, 3, 0));
    }

    #[test]
    fn grant_validation() {
        assert_eq!(UplinkGrant::new(1, SymbolTime::ZERO, 0, 7, AllocationId(0)), Err(AirtimeError::ZeroK2));
        assert_eq!(UplinkGrant::new(1, SymbolTime::ZERO, 1, 0, AllocationId(0)), Err(AirtimeError::EmptyGrant));
    }

    #[test]
    fn stronger_attacker_is_decoded() {
        let victim = aligned(EntityId::Ue(0), 20.0);
        let attacker = aligned(EntityId::Attacker, 26.0);
        let out = resolve_reception(&[victim, attacker.clone()], &CaptureConfig::default()).unwrap();
        assert_eq!(out, ReceptionOutcome::Decoded(attacker));
    }

    #[test]
    fn single_transmission_is_decoded() {
        let only = aligned(EntityId::Ue(0), 20.0);
        let out = resolve_reception(std::slice::from_ref(&only), &CaptureConfig::default()).unwrap();
        assert_eq!(out, ReceptionOutcome::Decoded(only));
    }

    #[test]
    fn weak_advantage_collides() {
        let out = resolve_reception(
            &[aligned(EntityId::Ue(0), 20.0), aligned(EntityId::Attacker, 22.0)],
            &CaptureConfig::default(),
        )
        .unwrap();
        assert!(matches!(out, ReceptionOutcome::Collision { aligned: 2, misaligned: 0 }));
    }

    #[test]
    fn capture_grid_matches_pairwise_oracle() {
        for margin in [0.0, 3.0, 6.0] {
            let cfg = CaptureConfig { capture_margin_db: margin, ..Default::default() };
            for pv in 0..=40 {
                for pa in 0..=40 {
                    let (pv, pa) = (f64::from(pv), f64::from(pa));
                    let expected = if pa - pv > margin {
                        Some(EntityId::Attacker)
                    } else if pv - pa > margin {
                        Some(EntityId::Ue(0))
                    } else {
                        None
                    };
                    let out = resolve_reception(
                        &[aligned(EntityId::Ue(0), pv), aligned(EntityId::Attacker, pa)],
                        &cfg,
                    )
                    .unwrap();
                    assert_eq!(out.decoded().map(|t| t.sender), expected, "pv={pv} pa={pa} m={margin}");
                }
            }
        }
    }

    #[test]
    fn margin_boundary_is_collision() {
        let out = resolve_reception(
            &[aligned(EntityId::Ue(0), 20.0), aligned(EntityId::Attacker, 23.0)],
            &CaptureConfig::default(),
        )
        .unwrap();
        assert!(out.decoded().is_none());
    }

    #[test]
    fn empty_and_mixed_inputs_are_rejected() {
        let cfg = CaptureConfig::default();
        assert_eq!(resolve_reception(&[], &cfg), Err(AirtimeError::NoTransmissions));
        let a = aligned(EntityId::Ue(0), 20.0);
        let mut b = aligned(EntityId::Ue(1), 20.0);
        b.allocation_id = AllocationId(2);
        assert!(matches!(resolve_reception(&[a, b], &cfg), Err(AirtimeError::MixedAllocations(..))));
    }

    #[test]
    fn misaligned_sender_is_discarded() {
        let victim = aligned(EntityId::Ue(0), 20.0);
        // Attacker 3 µs farther but reusing the victim's timing advance.
        let attacker = tx(1, EntityId::Attacker, 30.0, 4.0, victim.timing_advance_us);
        assert_eq!(attacker.arrival_offset_us(), 6.0);
        let out = resolve_reception(&[victim.clone(), attacker], &CaptureConfig::default()).unwrap();
        assert_eq!(out, ReceptionOutcome::Decoded(victim));
    }

    #[test]
    fn timing_advance_doubles_distance() {
        assert_eq!(required_timing_advance(0.0), 0.0);
        assert_eq!(required_timing_advance(5.0), 10.0);
    }

    #[test]
    fn copied_timing_advance_offsets_by_distance_difference() {
        for (d_vic, d_att) in [(1.0, 4.0), (10.0, 2.5), (0.0, 0.0), (7.25, 7.5)] {
            let ta = required_timing_advance(d_vic);
            assert_eq!(arrival_offset_us(d_att, ta), 2.0 * (d_att - d_vic));
        }
    }

    #[test]
    fn capture_config_validation() {
        assert!(CaptureConfig::default().validate().is_ok());
        assert!(CaptureConfig { capture_margin_db: -1.0, ..Default::default() }.validate().is_err());
        assert!(CaptureConfig { ta_tolerance_us: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
