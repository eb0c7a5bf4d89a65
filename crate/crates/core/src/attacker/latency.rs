//! Processing-cost model of the attacker's receive/transmit chain and the
//! deadline check against an uplink grant.
//!
//! Samples are handed to the radio symbol by symbol, so the payload need not
//! be complete when the slot begins: symbol `k` only has to reach the radio
//! `radio_rtt_us` before it goes on air, `k` symbol durations after the slot
//! start.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::airtime::{symbol_offset_ns, SYMBOLS_PER_SLOT};

/// Per-operation costs in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub sync_demod_per_symbol: f64,
    pub pdcch_common: f64,
    pub pdcch_ue: f64,
    pub pdsch_decode: f64,
    pub pusch_encode_per_grant: f64,
    pub ofdm_per_symbol: f64,
    pub radio_rtt_us: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostPreset::low_latency().mean
    }
}

impl CostModel {
    pub const ZERO: CostModel = CostModel {
        sync_demod_per_symbol: 0.0,
        pdcch_common: 0.0,
        pdcch_ue: 0.0,
        pdsch_decode: 0.0,
        pusch_encode_per_grant: 0.0,
        ofdm_per_symbol: 0.0,
        radio_rtt_us: 0.0,
    };

    fn fields(&self) -> [f64; 7] {
        [
            self.sync_demod_per_symbol,
            self.pdcch_common,
            self.pdcch_ue,
            self.pdsch_decode,
            self.pusch_encode_per_grant,
            self.ofdm_per_symbol,
            self.radio_rtt_us,
        ]
    }

    fn from_fields(f: [f64; 7]) -> Self {
        CostModel {
            sync_demod_per_symbol: f[0],
            pdcch_common: f[1],
            pdcch_ue: f[2],
            pdsch_decode: f[3],
            pusch_encode_per_grant: f[4],
            ofdm_per_symbol: f[5],
            radio_rtt_us: f[6],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.fields().iter().position(|v| !v.is_finite() || *v < 0.0) {
            None => Ok(()),
            Some(i) => Err(format!("cost field #{i} must be finite and non-negative")),
        }
    }

    /// Multiplies every processing cost by `factor`; the radio delay is a
    /// property of the hardware and stays put.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut f = self.fields();
        for v in &mut f[..6] {
            *v *= factor;
        }
        Self::from_fields(f)
    }
}

/// Mean and standard deviation of every operation, as measured for one
/// attack configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPreset {
    pub name: &'static str,
    pub mean: CostModel,
    pub std_dev: CostModel,
}

impl CostPreset {
    /// Cell-wide RAR DoS against 64 UEs, k2 = 3. The radio delay was not
    /// reported for this run; the 200 µs of the other runs is assumed.
    pub fn rar_dos() -> Self {
        CostPreset {
            name: "rar_dos_profile",
            mean: CostModel {
                sync_demod_per_symbol: 5.98,
                pdcch_common: 7.97,
                pdcch_ue: 0.0,
                pdsch_decode: 34.83,
                pusch_encode_per_grant: 6.90,
                ofdm_per_symbol: 11.97,
                radio_rtt_us: 200.0,
            },
            std_dev: CostModel {
                sync_demod_per_symbol: 1.34,
                pdcch_common: 1.10,
                pdcch_ue: 0.0,
                pdsch_decode: 4.45,
                pusch_encode_per_grant: 0.99,
                ofdm_per_symbol: 1.44,
                radio_rtt_us: 0.0,
            },
        }
    }

    /// NAS registration-reject attack against 64 UEs, k2 = 4.
    pub fn nas_attack() -> Self {
        CostPreset {
            name: "nas_attack_profile",
            mean: CostModel {
                sync_demod_per_symbol: 5.32,
                pdcch_common: 8.54,
                pdcch_ue: 78.72,
                pdsch_decode: 36.32,
                pusch_encode_per_grant: 21.78,
                ofdm_per_symbol: 11.04,
                radio_rtt_us: 200.0,
            },
            std_dev: CostModel {
                sync_demod_per_symbol: 1.26,
                pdcch_common: 2.60,
                pdcch_ue: 11.41,
                pdsch_decode: 16.70,
                pusch_encode_per_grant: 2.56,
                ofdm_per_symbol: 1.22,
                radio_rtt_us: 0.0,
            },
        }
    }

    /// Single-UE registration-reject attack at k2 = 1 with a 200 µs radio
    /// delay. This is the default.
    pub fn low_latency() -> Self {
        CostPreset {
            name: "low_latency_profile",
            mean: CostModel {
                sync_demod_per_symbol: 5.13,
                pdcch_common: 8.27,
                pdcch_ue: 77.65,
                pdsch_decode: 52.64,
                pusch_encode_per_grant: 25.42,
                ofdm_per_symbol: 11.66,
                radio_rtt_us: 200.0,
            },
            std_dev: CostModel {
                sync_demod_per_symbol: 1.18,
                pdcch_common: 2.29,
                pdcch_ue: 10.14,
                pdsch_decode: 22.29,
                pusch_encode_per_grant: 4.36,
                ofdm_per_symbol: 1.54,
                radio_rtt_us: 0.0,
            },
        }
    }

    pub fn all() -> [CostPreset; 3] {
        [Self::rar_dos(), Self::nas_attack(), Self::low_latency()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|p| p.name == name)
    }

    /// One draw of every operation cost: gaussian around the mean, clamped
    /// at zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CostModel {
        sample_costs(&self.mean, &self.std_dev, rng)
    }
}

pub fn sample_costs<R: Rng + ?Sized>(mean: &CostModel, std_dev: &CostModel, rng: &mut R) -> CostModel {
    let m = mean.fields();
    let s = std_dev.fields();
    let mut out = [0.0; 7];
    for i in 0..7 {
        out[i] = if s[i] > 0.0 {
            Normal::new(m[i], s[i]).expect("finite sd").sample(rng).max(0.0)
        } else {
            m[i]
        };
    }
    CostModel::from_fields(out)
}

/// Which steps of the chain a decision needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pipeline {
    pub n_symbols_synced: u32,
    pub used_ue_searchspace: bool,
    pub n_pdsch: u32,
    pub n_grants: u32,
    pub n_ofdm_symbols: u32,
}

impl Pipeline {
    /// Reacting to a RAR: common search space, one PDSCH carrying every
    /// grant, one PUSCH encode per grant and a full slot of symbols.
    /// Symbol sync runs continuously ahead of the decision and is pipelined.
    pub fn rar(n_grants: u32) -> Self {
        Pipeline {
            n_symbols_synced: 0,
            used_ue_searchspace: false,
            n_pdsch: 1,
            n_grants,
            n_ofdm_symbols: u32::from(SYMBOLS_PER_SLOT),
        }
    }

    /// Reacting to a UE-specific grant.
    pub fn ue_grant() -> Self {
        Pipeline {
            n_symbols_synced: 0,
            used_ue_searchspace: true,
            n_pdsch: 1,
            n_grants: 1,
            n_ofdm_symbols: u32::from(SYMBOLS_PER_SLOT),
        }
    }
}

/// Closed-form processing time of `p` in microseconds, excluding the radio
/// delay.
pub fn compute_latency(cost: &CostModel, p: &Pipeline) -> f64 {
    f64::from(p.n_symbols_synced) * cost.sync_demod_per_symbol
        + cost.pdcch_common
        + if p.used_ue_searchspace { cost.pdcch_ue } else { 0.0 }
        + f64::from(p.n_pdsch) * cost.pdsch_decode
        + f64::from(p.n_grants) * cost.pusch_encode_per_grant
        + f64::from(p.n_ofdm_symbols) * cost.ofdm_per_symbol
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlineCheck {
    pub latency_us: f64,
    /// When the first symbol reaches the radio, plus the radio delay.
    pub first_symbol_on_air_ns: i64,
    /// When the last symbol reaches the radio, plus the radio delay.
    pub last_symbol_on_air_ns: i64,
    /// Smallest slack over all symbols; negative means a miss.
    pub margin_us: f64,
    pub met: bool,
}

fn us_to_ns(us: f64) -> i64 {
    (us * 1000.0).ceil() as i64
}

/// Checks whether processing that starts at `now_ns` can stream every
/// symbol out in time for a transmission starting at `deadline_ns`.
pub fn check_deadline(cost: &CostModel, p: &Pipeline, now_ns: i64, deadline_ns: i64) -> DeadlineCheck {
    let latency_us = compute_latency(cost, p);
    let head_us = latency_us - f64::from(p.n_ofdm_symbols) * cost.ofdm_per_symbol;
    let mut margin_ns = i64::MAX;
    let mut first = now_ns + us_to_ns(head_us + cost.radio_rtt_us);
    let mut last = first;
    for k in 0..p.n_ofdm_symbols {
        let ready = now_ns + us_to_ns(head_us + f64::from(k + 1) * cost.ofdm_per_symbol + cost.radio_rtt_us);
        let on_air = deadline_ns + symbol_offset_ns((k % u32::from(SYMBOLS_PER_SLOT)) as u8)
            + i64::from(k / u32::from(SYMBOLS_PER_SLOT)) * crate::airtime::SLOT_NS;
        margin_ns = margin_ns.min(on_air - ready);
        if k == 0 {
            first = ready;
        }
        last = ready;
    }
    if p.n_ofdm_symbols == 0 {
        margin_ns = deadline_ns - first;
    }
    DeadlineCheck {
        latency_us,
        first_symbol_on_air_ns: first,
        last_symbol_on_air_ns: last,
        margin_us: margin_ns as f64 / 1000.0,
        met: margin_ns >= 0,
    }
}
