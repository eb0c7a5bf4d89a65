//! Scenario files: TOML documents describing cells, subscribers, UEs, the
//! attack and the expected outcome.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::airtime::CaptureConfig;
use crate::amf::{RejectPolicy, SubscriberRecord};
use crate::attacker::{AttackPlan, CostModel, CostPreset, Strategy, TaMode};
use crate::codecs::rrc::TMSI_MASK;
use crate::codecs::{conceal_supi, Algorithm, HomeNetworkKey, SecurityCapabilities, Suci, SubscriberKey, Supi};
use crate::gnb::GnbConfig;
use crate::ue::{CellInfo, Rat, UeProfile, UeTimers};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub cell_id: u16,
    pub tracking_area: u16,
    pub rat: Rat,
    pub tx_power_dbm: f64,
    #[serde(default = "default_k2")]
    pub k2: u8,
}

fn default_k2() -> u8 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomeNetworkSpec {
    pub key_id: u8,
    /// 16 bytes, hex.
    pub secret: String,
}

impl Default for HomeNetworkSpec {
    fn default() -> Self {
        HomeNetworkSpec { key_id: 1, secret: "000102030405060708090a0b0c0d0e0f".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmfSpec {
    /// One-way gNB to AMF delay in slots.
    pub core_delay_slots: u32,
    pub policy: RejectPolicy,
}

impl Default for AmfSpec {
    fn default() -> Self {
        AmfSpec { core_delay_slots: 4, policy: RejectPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriberSpec {
    pub supi: u64,
    /// 16 bytes, hex. Derived from the SUPI when absent.
    pub key: Option<String>,
    #[serde(default = "yes")]
    pub allowed_5g: bool,
    /// 48-bit TMSI, hex.
    pub tmsi: Option<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    /// Number of UEs this entry expands to. SUPIs and TMSIs count up.
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default = "default_profile")]
    pub profile: String,
    pub supi: u64,
    pub key: Option<String>,
    pub tmsi: Option<String>,
    #[serde(default)]
    pub registered: bool,
    #[serde(default = "default_distance")]
    pub distance_us: f64,
    #[serde(default = "default_ue_power")]
    pub tx_power_dbm: f64,
    pub connect_cadence_s: Option<f64>,
    #[serde(default)]
    pub cadence_offset_s: f64,
    pub toggle_period_s: Option<f64>,
    #[serde(default)]
    pub toggle_offset_s: f64,
    /// Last toggle no later than this; the run's end when absent.
    pub toggle_until_s: Option<f64>,
    #[serde(default = "default_caps")]
    pub capabilities: Vec<String>,
    /// Adds a matching subscriber record unless one exists.
    #[serde(default = "yes")]
    pub subscribe: bool,
    #[serde(default = "yes")]
    pub allowed_5g: bool,
}

fn one() -> u32 {
    1
}

fn default_profile() -> String {
    "amarisoft-sim".into()
}

fn default_distance() -> f64 {
    1.0
}

fn default_ue_power() -> f64 {
    20.0
}

fn default_caps() -> Vec<String> {
    ["EA0", "EA1", "EA2", "IA1", "IA2"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    CellWideDos,
    RegistrationRejectDowngrade,
    SuciExtraction,
    SuciReplay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub strategy: StrategyName,
    pub target_cell: u16,
    #[serde(default = "default_preset")]
    pub cost_preset: String,
    /// Replaces individual means of the preset.
    #[serde(default)]
    pub cost: BTreeMap<String, f64>,
    /// Multiplies every processing cost of the table.
    #[serde(default = "unit")]
    pub cost_scale: f64,
    /// Draw every operation cost around its mean with the preset's spread.
    #[serde(default)]
    pub jitter: bool,
    #[serde(default = "default_offset")]
    pub power_offset_db: f64,
    #[serde(default = "default_ue_power")]
    pub victim_reference_dbm: f64,
    #[serde(default = "default_attacker_distance")]
    pub distance_us: f64,
    #[serde(default = "default_ta_mode")]
    pub ta_mode: TaMode,
    /// 48-bit TMSIs, hex.
    pub target_filter: Option<Vec<String>>,
    #[serde(default = "two")]
    pub max_repeats: u32,
    #[serde(default = "yes")]
    pub once_per_identity: bool,
    /// Subscriber without 5G service whose SUCI the downgrade sends.
    pub downgrade_supi: Option<u64>,
    /// Replay target as a SUPI, concealed once at setup.
    pub replay_supi: Option<u64>,
    /// Replay target as a captured SUCI, hex.
    pub replay_suci: Option<String>,
    #[serde(default)]
    pub whitelist_mode: bool,
    #[serde(default = "default_caps")]
    pub replay_capabilities: Vec<String>,
    #[serde(default)]
    pub rx_margin_db: f64,
    #[serde(default = "default_verdict_timeout")]
    pub verdict_timeout_ms: f64,
    #[serde(default)]
    pub start_s: f64,
}

fn default_preset() -> String {
    "low_latency_profile".into()
}

fn unit() -> f64 {
    1.0
}

fn default_offset() -> f64 {
    6.0
}

fn default_attacker_distance() -> f64 {
    0.5
}

fn default_ta_mode() -> TaMode {
    TaMode::Computed
}

fn two() -> u32 {
    2
}

fn default_verdict_timeout() -> f64 {
    200.0
}

/// Checked after the run; a breach makes the CLI exit with status 3.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpectSpec {
    pub equal: BTreeMap<String, f64>,
    pub min: BTreeMap<String, f64>,
    pub max: BTreeMap<String, f64>,
    /// Every UE must end in one of these states.
    pub final_states: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_kpi")]
    pub kpi_interval_s: f64,
    #[serde(default)]
    pub capture: CaptureConfig,
    #[serde(default)]
    pub gnb: GnbConfig,
    #[serde(default)]
    pub ue_timers: UeTimers,
    #[serde(default)]
    pub home_network: HomeNetworkSpec,
    #[serde(default)]
    pub amf: AmfSpec,
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub profiles: Vec<UeProfile>,
    #[serde(default)]
    pub subscribers: Vec<SubscriberSpec>,
    #[serde(default)]
    pub ues: Vec<UeSpec>,
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub expect: ExpectSpec,
}

fn default_kpi() -> f64 {
    1.0
}

/// One concrete UE after expanding `count`.
#[derive(Debug, Clone, PartialEq)]
pub struct UeSetup {
    pub id: u32,
    pub profile: UeProfile,
    pub supi: Supi,
    pub key: SubscriberKey,
    pub tmsi: Option<u64>,
    pub registered: bool,
    pub capabilities: SecurityCapabilities,
    pub distance_us: f64,
    pub tx_power_dbm: f64,
    pub cadence_ns: Option<i64>,
    pub cadence_offset_ns: i64,
    pub toggle_ns: Option<i64>,
    pub toggle_offset_ns: i64,
    pub toggle_until_ns: i64,
}

/// Everything the engine needs, checked and expanded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub duration_ns: i64,
    pub kpi_interval_ns: i64,
    pub capture: CaptureConfig,
    pub gnb: GnbConfig,
    pub timers: UeTimers,
    pub home_key: HomeNetworkKey,
    pub core_delay_slots: u32,
    pub policy: RejectPolicy,
    pub cells: Vec<CellInfo>,
    pub k2: BTreeMap<u16, u8>,
    pub subscribers: Vec<SubscriberRecord>,
    pub ues: Vec<UeSetup>,
    pub attack: Option<AttackPlan>,
}

pub fn seconds_to_ns(s: f64) -> i64 {
    (s * 1e9).round() as i64
}

/// Key of a subscriber listed without one.
pub fn derived_key(supi: u64) -> SubscriberKey {
    let d = Sha256::new().chain_update(b"ulshadow subscriber key").chain_update(supi.to_be_bytes()).finalize();
    SubscriberKey(d[..16].try_into().expect("sixteen bytes"))
}

fn parse_key(s: &str) -> Result<[u8; 16], String> {
    let b = hex::decode(s.trim()).map_err(|e| format!("{s:?}: {e}"))?;
    b.try_into().map_err(|_| format!("{s:?}: expected 16 bytes"))
}

fn parse_tmsi(s: &str) -> Result<u64, String> {
    let t = u64::from_str_radix(s.trim().trim_start_matches("0x"), 16).map_err(|e| format!("tmsi {s:?}: {e}"))?;
    if t == 0 || t > TMSI_MASK {
        return Err(format!("tmsi {s:?} must be a nonzero 48-bit value"));
    }
    Ok(t)
}

fn parse_caps(v: &[String]) -> Result<SecurityCapabilities, String> {
    let algs = v.iter().map(|s| s.parse::<Algorithm>()).collect::<Result<Vec<_>, _>>()?;
    Ok(SecurityCapabilities::from_algorithms(algs))
}

fn cost_field<'a>(m: &'a mut CostModel, name: &str) -> Option<&'a mut f64> {
    Some(match name {
        "sync_demod_per_symbol" => &mut m.sync_demod_per_symbol,
        "pdcch_common" => &mut m.pdcch_common,
        "pdcch_ue" => &mut m.pdcch_ue,
        "pdsch_decode" => &mut m.pdsch_decode,
        "pusch_encode_per_grant" => &mut m.pusch_encode_per_grant,
        "ofdm_per_symbol" => &mut m.ofdm_per_symbol,
        "radio_rtt_us" => &mut m.radio_rtt_us,
        _ => return None,
    })
}

/// Sets `path` (dot-separated, array indices as numbers) in `doc` to
/// `value`, parsed as a TOML value or taken as a plain string.
pub fn apply_override(doc: &mut toml::Table, path: &str, value: &str) -> Result<(), String> {
    let parsed = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts = split_path(path).ok_or_else(|| format!("bad override path {path:?}"))?;
    let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
    let mut root = toml::Value::Table(std::mem::take(doc));
    let r = set_path(&mut root, &parts, parsed).map_err(|e| format!("override {path}: {e}"));
    if let toml::Value::Table(t) = root {
        *doc = t;
    }
    r
}

/// Splits on dots outside double quotes: `expect.equal."final.Idle"`.
fn split_path(path: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut was_quoted = false;
    for c in path.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                was_quoted = true;
            }
            '.' if !quoted => {
                if cur.is_empty() && !was_quoted {
                    return None;
                }
                out.push(std::mem::take(&mut cur));
                was_quoted = false;
            }
            c => cur.push(c),
        }
    }
    if quoted || (cur.is_empty() && !was_quoted) {
        return None;
    }
    out.push(cur);
    Some(out)
}

fn set_path(v: &mut toml::Value, parts: &[&str], new: toml::Value) -> Result<(), String> {
    let key = parts[0];
    if parts.len() == 1 {
        return match v {
            toml::Value::Table(t) => {
                t.insert(key.to_string(), new);
                Ok(())
            }
            toml::Value::Array(a) => {
                let slot = key.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or(format!("no element {key}"))?;
                *slot = new;
                Ok(())
            }
            _ => Err(format!("cannot set {key} on a scalar")),
        };
    }
    let child = match v {
        toml::Value::Table(t) => t.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())),
        toml::Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or(format!("no element {key}"))?,
        _ => return Err(format!("{key} is not inside a table")),
    };
    set_path(child, &parts[1..], new)
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ScenarioError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ScenarioError::Parse(format!("override {o:?} lacks '='")))?;
            apply_override(&mut doc, k.trim(), v.trim()).map_err(ScenarioError::Parse)?;
        }
        doc.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// All profiles by name: the built-in ones, replaced or extended by the
    /// scenario's own.
    pub fn profile_table(&self) -> BTreeMap<String, UeProfile> {
        let mut m: BTreeMap<String, UeProfile> = UeProfile::builtin().into_iter().map(|p| (p.name.clone(), p)).collect();
        for p in &self.profiles {
            m.insert(p.name.clone(), p.clone());
        }
        m
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.resolve().map(|_| ())
    }

    /// Checks every field and expands the scenario. All problems are
    /// reported together.
    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let mut errs: Vec<String> = Vec::new();
        let mut err = |e: String| errs.push(e);

        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            err("duration_s must be positive".into());
        }
        if !self.kpi_interval_s.is_finite() || self.kpi_interval_s < 0.0005 {
            err("kpi_interval_s must be at least one slot".into());
        }
        if self.capture.validate().is_err() {
            err("capture: margin and tolerance must be finite and non-negative".into());
        }
        if let Err(e) = self.gnb.validate() {
            err(format!("gnb: {e}"));
        }
        if let Err(e) = self.ue_timers.validate() {
            err(format!("ue_timers: {e}"));
        }
        let home_key = match parse_key(&self.home_network.secret) {
            Ok(s) => HomeNetworkKey::new(self.home_network.key_id, s),
            Err(e) => {
                err(format!("home_network.secret: {e}"));
                HomeNetworkKey::new(self.home_network.key_id, [0; 16])
            }
        };
        if self.amf.core_delay_slots == 0 {
            err("amf.core_delay_slots must be at least 1".into());
        }

        let mut cells = Vec::new();
        let mut k2 = BTreeMap::new();
        if self.cells.is_empty() {
            err("at least one cell is required".into());
        }
        for (i, c) in self.cells.iter().enumerate() {
            if k2.insert(c.cell_id, c.k2).is_some() {
                err(format!("cells[{i}]: cell_id {} listed twice", c.cell_id));
            }
            if c.k2 == 0 || c.k2 > 32 {
                err(format!("cells[{i}]: k2 must be in 1..=32"));
            }
            if !c.tx_power_dbm.is_finite() {
                err(format!("cells[{i}]: tx_power_dbm must be finite"));
            }
            if c.cell_id >= 0x8000 {
                err(format!("cells[{i}]: cell_id must be below 32768"));
            }
            cells.push(CellInfo { cell_id: c.cell_id, tracking_area: c.tracking_area, rat: c.rat, tx_power_dbm: c.tx_power_dbm });
        }

        let profiles = self.profile_table();
        for p in &self.profiles {
            if p.name.trim().is_empty() {
                err("profiles: name must not be empty".into());
            }
        }

        let mut subscribers: BTreeMap<u64, SubscriberRecord> = BTreeMap::new();
        for (i, s) in self.subscribers.iter().enumerate() {
            if s.supi > Supi::MAX {
                err(format!("subscribers[{i}]: supi has more than 15 digits"));
            }
            let key = match &s.key {
                Some(k) => parse_key(k).map(SubscriberKey).unwrap_or_else(|e| {
                    err(format!("subscribers[{i}].key: {e}"));
                    derived_key(s.supi)
                }),
                None => derived_key(s.supi),
            };
            let home_tmsi = s.tmsi.as_deref().map(parse_tmsi).transpose().unwrap_or_else(|e| {
                err(format!("subscribers[{i}]: {e}"));
                None
            });
            let rec = SubscriberRecord { supi: Supi(s.supi), key, allowed_5g: s.allowed_5g, home_tmsi };
            if subscribers.insert(s.supi, rec).is_some() {
                err(format!("subscribers[{i}]: supi {} listed twice", s.supi));
            }
        }

        let duration_ns = seconds_to_ns(self.duration_s.max(0.0));
        let mut ues = Vec::new();
        let mut next_id = 0u32;
        for (i, u) in self.ues.iter().enumerate() {
            let profile = match profiles.get(&u.profile) {
                Some(p) => p.clone(),
                None => {
                    err(format!("ues[{i}]: unknown profile {:?}", u.profile));
                    continue;
                }
            };
            if u.count == 0 {
                err(format!("ues[{i}]: count must be at least 1"));
            }
            let caps = parse_caps(&u.capabilities).unwrap_or_else(|e| {
                err(format!("ues[{i}].capabilities: {e}"));
                SecurityCapabilities::default()
            });
            let tmsi = u.tmsi.as_deref().map(parse_tmsi).transpose().unwrap_or_else(|e| {
                err(format!("ues[{i}]: {e}"));
                None
            });
            let base_key = u.key.as_deref().map(parse_key).transpose().unwrap_or_else(|e| {
                err(format!("ues[{i}].key: {e}"));
                None
            });
            if u.key.is_some() && u.count > 1 {
                err(format!("ues[{i}]: an explicit key needs count = 1"));
            }
            if u.registered && tmsi.is_none() {
                err(format!("ues[{i}]: registered UEs need a tmsi"));
            }
            for (name, v) in [("distance_us", u.distance_us), ("cadence_offset_s", u.cadence_offset_s), ("toggle_offset_s", u.toggle_offset_s)] {
                if !v.is_finite() || v < 0.0 {
                    err(format!("ues[{i}].{name} must be finite and non-negative"));
                }
            }
            if !u.tx_power_dbm.is_finite() {
                err(format!("ues[{i}].tx_power_dbm must be finite"));
            }
            for (name, v) in [("connect_cadence_s", u.connect_cadence_s), ("toggle_period_s", u.toggle_period_s)] {
                if let Some(v) = v {
                    if !v.is_finite() || v < 0.0005 {
                        err(format!("ues[{i}].{name} must be at least one slot"));
                    }
                }
            }
            for n in 0..u.count {
                let supi = u.supi + u64::from(n);
                if supi > Supi::MAX {
                    err(format!("ues[{i}]: supi {supi} has more than 15 digits"));
                    break;
                }
                let t = tmsi.map(|t| t + u64::from(n));
                if t.is_some_and(|t| t > TMSI_MASK) {
                    err(format!("ues[{i}]: tmsi range leaves 48 bits"));
                    break;
                }
                let key = match base_key {
                    Some(k) => SubscriberKey(k),
                    None => subscribers.get(&supi).map(|r| r.key).unwrap_or_else(|| derived_key(supi)),
                };
                if u.subscribe {
                    subscribers.entry(supi).or_insert(SubscriberRecord {
                        supi: Supi(supi),
                        key,
                        allowed_5g: u.allowed_5g,
                        home_tmsi: t,
                    });
                }
                ues.push(UeSetup {
                    id: next_id,
                    profile: profile.clone(),
                    supi: Supi(supi),
                    key,
                    tmsi: t,
                    registered: u.registered,
                    capabilities: caps,
                    distance_us: u.distance_us,
                    tx_power_dbm: u.tx_power_dbm,
                    cadence_ns: u.connect_cadence_s.map(seconds_to_ns),
                    cadence_offset_ns: seconds_to_ns(u.cadence_offset_s),
                    toggle_ns: u.toggle_period_s.map(seconds_to_ns),
                    toggle_offset_ns: seconds_to_ns(u.toggle_offset_s),
                    toggle_until_ns: u.toggle_until_s.map(seconds_to_ns).unwrap_or(duration_ns),
                });
                next_id += 1;
            }
        }
        if ues.len() > 100_000 {
            err("more than 100000 UEs".into());
        }

        let subscribers: Vec<SubscriberRecord> = subscribers.into_values().collect();
        if let Err(e) = crate::amf::Amf::new(home_key, self.amf.policy, subscribers.clone()) {
            err(format!("subscribers: {e}"));
        }

        let attack = self.attack.as_ref().and_then(|a| {
            let mut local = Vec::new();
            let plan = build_plan(a, &home_key, self.seed, &k2, &mut local);
            errs.extend(local);
            plan
        });

        if !errs.is_empty() {
            return Err(ScenarioError::Invalid(errs));
        }
        Ok(Resolved {
            seed: self.seed,
            duration_ns,
            kpi_interval_ns: seconds_to_ns(self.kpi_interval_s),
            capture: self.capture,
            gnb: self.gnb,
            timers: self.ue_timers,
            home_key,
            core_delay_slots: self.amf.core_delay_slots,
            policy: self.amf.policy,
            cells,
            k2,
            subscribers,
            ues,
            attack,
        })
    }
}

/// A SUCI for `supi` drawn from a setup-only stream, so the same scenario
/// always yields the same bytes.
pub fn setup_suci(supi: u64, home_key: &HomeNetworkKey, seed: u64, salt: u64) -> Suci {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ec0_0000_0000_0000);
    rng.set_stream(salt);
    conceal_supi(Supi(supi), home_key, &mut rng)
}

fn build_plan(
    a: &AttackSpec,
    home_key: &HomeNetworkKey,
    seed: u64,
    cells: &BTreeMap<u16, u8>,
    errs: &mut Vec<String>,
) -> Option<AttackPlan> {
    if !cells.contains_key(&a.target_cell) {
        errs.push(format!("attack.target_cell {} is not a listed cell", a.target_cell));
    }
    let Some(preset) = CostPreset::by_name(&a.cost_preset) else {
        let names: Vec<&str> = CostPreset::all().iter().map(|p| p.name).collect();
        errs.push(format!("attack.cost_preset {:?} is not one of {}", a.cost_preset, names.join(", ")));
        return None;
    };
    let mut cost = preset.mean;
    for (k, v) in &a.cost {
        match cost_field(&mut cost, k) {
            Some(f) => *f = *v,
            None => errs.push(format!("attack.cost: unknown operation {k:?}")),
        }
    }
    if !a.cost_scale.is_finite() || a.cost_scale < 0.0 {
        errs.push("attack.cost_scale must be finite and non-negative".into());
    }
    let cost = cost.scaled(a.cost_scale);
    let target_filter = a.target_filter.as_ref().map(|list| {
        list.iter()
            .filter_map(|s| parse_tmsi(s).map_err(|e| errs.push(format!("attack.target_filter: {e}"))).ok())
            .collect::<Vec<u64>>()
    });
    let replay_capabilities = parse_caps(&a.replay_capabilities).unwrap_or_else(|e| {
        errs.push(format!("attack.replay_capabilities: {e}"));
        SecurityCapabilities::default()
    });
    let strategy = match a.strategy {
        StrategyName::CellWideDos => Strategy::CellWideDos,
        StrategyName::RegistrationRejectDowngrade => Strategy::RegistrationRejectDowngrade,
        StrategyName::SuciExtraction => Strategy::SuciExtraction,
        StrategyName::SuciReplay => {
            let target_suci = match (&a.replay_supi, &a.replay_suci) {
                (Some(s), None) => setup_suci(*s, home_key, seed, 1),
                (None, Some(h)) => match hex::decode(h.trim()).ok().and_then(|b| Suci::from_bytes(&b).ok()) {
                    Some(s) => s,
                    None => {
                        errs.push("attack.replay_suci is not a valid SUCI".into());
                        return None;
                    }
                },
                _ => {
                    errs.push("suci_replay needs exactly one of attack.replay_supi and attack.replay_suci".into());
                    return None;
                }
            };
            Strategy::SuciReplay { target_suci, whitelist_mode: a.whitelist_mode }
        }
    };
    if a.whitelist_mode && a.strategy != StrategyName::SuciReplay {
        errs.push("attack.whitelist_mode applies to suci_replay only".into());
    }
    let downgrade_suci = a.downgrade_supi.map(|s| setup_suci(s, home_key, seed, 2));
    if a.downgrade_supi.is_some_and(|s| s > Supi::MAX) {
        errs.push("attack.downgrade_supi has more than 15 digits".into());
    }
    if !a.start_s.is_finite() || a.start_s < 0.0 {
        errs.push("attack.start_s must be finite and non-negative".into());
    }
    let plan = AttackPlan {
        strategy,
        target_cell: a.target_cell,
        power_offset_db: a.power_offset_db,
        victim_reference_dbm: a.victim_reference_dbm,
        distance_us: a.distance_us,
        ta_mode: a.ta_mode,
        cost_table: cost,
        cost_jitter: a.jitter.then_some(preset.std_dev),
        target_filter,
        max_repeats: a.max_repeats,
        once_per_identity: a.once_per_identity,
        downgrade_suci,
        replay_capabilities,
        rx_margin_db: a.rx_margin_db,
        verdict_timeout_ms: a.verdict_timeout_ms,
        start_ns: seconds_to_ns(a.start_s.max(0.0)),
    };
    if let Err(e) = plan.validate() {
        errs.push(e);
    }
    Some(plan)
}
