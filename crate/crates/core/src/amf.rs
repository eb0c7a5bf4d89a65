//! Core-network NAS endpoint: subscriber database, TMSI lookup, identity
//! procedure, authentication, security-mode capability echo and the reject
//! policy.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codecs::nas::CAUSE_UE_IDENTITY_UNKNOWN;
use crate::codecs::rrc::TMSI_MASK;
use crate::codecs::{
    deconceal_suci, HomeNetworkKey, MobileIdentity, NasMessage, SecurityCapabilities, Suci, SubscriberKey, Supi,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberRecord {
    pub supi: Supi,
    pub key: SubscriberKey,
    pub allowed_5g: bool,
    pub home_tmsi: Option<u64>,
}

/// Which cause the AMF uses for each kind of rejected registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectPolicy {
    pub not_allowed_5g: u8,
    pub unknown_subscriber: u8,
}

impl Default for RejectPolicy {
    fn default() -> Self {
        RejectPolicy { not_allowed_5g: 27, unknown_subscriber: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    AwaitingIdentity,
    AwaitingAuth,
    AwaitingSecurityMode,
    Established,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmfSession {
    pub tmsi: Option<u64>,
    pub supi: Option<Supi>,
    pub state: SessionState,
    pub received_capabilities: SecurityCapabilities,
    pub auth_sqn: u64,
    xres: Option<[u8; 16]>,
}

/// Where an uplink NAS message came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NasContext {
    pub connection: u64,
    pub cell_id: u16,
    pub tracking_area: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmfResponse {
    pub reply: Option<NasMessage>,
    /// Short description for traces.
    pub note: &'static str,
    pub session_state: Option<SessionState>,
}

impl AmfResponse {
    fn reply(msg: NasMessage, note: &'static str, state: Option<SessionState>) -> Self {
        AmfResponse { reply: Some(msg), note, session_state: state }
    }

    fn silent(note: &'static str) -> Self {
        AmfResponse { reply: None, note, session_state: None }
    }
}

#[derive(Debug, Clone)]
pub struct Amf {
    pub home_key: HomeNetworkKey,
    pub policy: RejectPolicy,
    subscribers: BTreeMap<Supi, SubscriberRecord>,
    tmsi_index: BTreeMap<u64, Supi>,
    sessions: BTreeMap<u64, AmfSession>,
    sqn: BTreeMap<Supi, u64>,
}

impl Amf {
    pub fn new(home_key: HomeNetworkKey, policy: RejectPolicy, subscribers: Vec<SubscriberRecord>) -> Result<Self, String> {
        let mut amf = Amf {
            home_key,
            policy,
            subscribers: BTreeMap::new(),
            tmsi_index: BTreeMap::new(),
            sessions: BTreeMap::new(),
            sqn: BTreeMap::new(),
        };
        for s in subscribers {
            if let Some(t) = s.home_tmsi {
                if t == 0 || t > TMSI_MASK {
                    return Err(format!("{}: tmsi must be a nonzero 48-bit value", s.supi));
                }
                if amf.tmsi_index.insert(t, s.supi).is_some() {
                    return Err(format!("tmsi {t:012x} assigned twice"));
                }
            }
            if amf.subscribers.insert(s.supi, s.clone()).is_some() {
                return Err(format!("subscriber {} listed twice", s.supi));
            }
        }
        Ok(amf)
    }

    pub fn subscriber(&self, supi: Supi) -> Option<&SubscriberRecord> {
        self.subscribers.get(&supi)
    }

    pub fn knows_tmsi(&self, tmsi: u64) -> bool {
        self.tmsi_index.contains_key(&tmsi)
    }

    pub fn session(&self, connection: u64) -> Option<&AmfSession> {
        self.sessions.get(&connection)
    }

    fn next_vector(&mut self, supi: Supi) -> Option<(crate::codecs::AuthVector, u64)> {
        let key = self.subscribers.get(&supi)?.key;
        let sqn = self.sqn.entry(supi).or_insert(0);
        *sqn += 1;
        Some((key.vector(*sqn), *sqn))
    }

    fn challenge(&mut self, ctx: &NasContext, supi: Supi, tmsi: Option<u64>, caps: SecurityCapabilities) -> AmfResponse {
        let (v, sqn) = self.next_vector(supi).expect("known subscriber");
        self.sessions.insert(
            ctx.connection,
            AmfSession {
                tmsi,
                supi: Some(supi),
                state: SessionState::AwaitingAuth,
                received_capabilities: caps,
                auth_sqn: sqn,
                xres: Some(v.xres),
            },
        );
        AmfResponse::reply(
            NasMessage::AuthenticationRequest { rand: v.rand, autn: v.autn },
            "authenticate",
            Some(SessionState::AwaitingAuth),
        )
    }

    fn reject(&mut self, ctx: &NasContext, cause: u8, note: &'static str) -> AmfResponse {
        self.sessions.remove(&ctx.connection);
        AmfResponse::reply(NasMessage::RegistrationReject { cause }, note, None)
    }

    fn register_suci(&mut self, ctx: &NasContext, suci: &Suci, caps: SecurityCapabilities) -> AmfResponse {
        let supi = match deconceal_suci(suci, &self.home_key) {
            Ok(s) => s,
            Err(_) => return self.reject(ctx, self.policy.unknown_subscriber, "suci deconcealment failed"),
        };
        match self.subscribers.get(&supi) {
            None => self.reject(ctx, self.policy.unknown_subscriber, "unknown subscriber"),
            Some(rec) if !rec.allowed_5g => self.reject(ctx, self.policy.not_allowed_5g, "subscriber not allowed 5g"),
            Some(rec) => {
                let tmsi = rec.home_tmsi;
                self.challenge(ctx, supi, tmsi, caps)
            }
        }
    }

    /// Handles one uplink NAS message relayed by a gNB.
    pub fn on_uplink<R: Rng + ?Sized>(&mut self, ctx: &NasContext, msg: &NasMessage, rng: &mut R) -> AmfResponse {
        match msg {
            NasMessage::RegistrationRequest { identity, capabilities } => match identity {
                MobileIdentity::FiveGTmsi(t) => match self.tmsi_index.get(t).copied() {
                    Some(supi) => self.challenge(ctx, supi, Some(*t), *capabilities),
                    None => {
                        self.sessions.insert(
                            ctx.connection,
                            AmfSession {
                                tmsi: None,
                                supi: None,
                                state: SessionState::AwaitingIdentity,
                                received_capabilities: *capabilities,
                                auth_sqn: 0,
                                xres: None,
                            },
                        );
                        AmfResponse::reply(
                            NasMessage::IdentityRequest,
                            "unknown tmsi, asking for suci",
                            Some(SessionState::AwaitingIdentity),
                        )
                    }
                },
                MobileIdentity::Suci(s) => self.register_suci(ctx, s, *capabilities),
            },
            NasMessage::ServiceRequest { s_tmsi } => {
                if self.tmsi_index.contains_key(s_tmsi) {
                    let supi = self.tmsi_index[s_tmsi];
                    self.sessions.insert(
                        ctx.connection,
                        AmfSession {
                            tmsi: Some(*s_tmsi),
                            supi: Some(supi),
                            state: SessionState::Established,
                            received_capabilities: SecurityCapabilities::default(),
                            auth_sqn: 0,
                            xres: None,
                        },
                    );
                    AmfResponse::reply(NasMessage::ServiceAccept, "service resumed", Some(SessionState::Established))
                } else {
                    AmfResponse::reply(
                        NasMessage::ServiceReject { cause: CAUSE_UE_IDENTITY_UNKNOWN },
                        "unknown s-tmsi",
                        None,
                    )
                }
            }
            NasMessage::IdentityResponse { suci } => match self.sessions.get(&ctx.connection) {
                Some(s) if s.state == SessionState::AwaitingIdentity => {
                    let caps = s.received_capabilities;
                    self.register_suci(ctx, suci, caps)
                }
                _ => AmfResponse::silent("identity response without request"),
            },
            NasMessage::AuthenticationResponse { res } => match self.sessions.get_mut(&ctx.connection) {
                Some(s) if s.state == SessionState::AwaitingAuth => {
                    if s.xres == Some(*res) {
                        s.state = SessionState::AwaitingSecurityMode;
                        let caps = s.received_capabilities;
                        AmfResponse::reply(
                            NasMessage::SecurityModeCommand { replayed_capabilities: caps },
                            "authenticated",
                            Some(SessionState::AwaitingSecurityMode),
                        )
                    } else {
                        self.sessions.remove(&ctx.connection);
                        AmfResponse::reply(NasMessage::AuthenticationReject, "res mismatch", None)
                    }
                }
                _ => AmfResponse::silent("authentication response without request"),
            },
            NasMessage::AuthenticationFailure { .. } => match self.sessions.get(&ctx.connection) {
                Some(s) if s.state == SessionState::AwaitingAuth => {
                    self.sessions.remove(&ctx.connection);
                    AmfResponse::reply(NasMessage::AuthenticationReject, "authentication failed", None)
                }
                _ => AmfResponse::silent("authentication failure without request"),
            },
            NasMessage::SecurityModeComplete => match self.sessions.get(&ctx.connection).cloned() {
                Some(s) if s.state == SessionState::AwaitingSecurityMode => {
                    let supi = s.supi.expect("authenticated session");
                    let new_tmsi = self.fresh_tmsi(rng);
                    if let Some(old) = self.subscribers.get(&supi).and_then(|r| r.home_tmsi) {
                        self.tmsi_index.remove(&old);
                    }
                    self.tmsi_index.insert(new_tmsi, supi);
                    if let Some(r) = self.subscribers.get_mut(&supi) {
                        r.home_tmsi = Some(new_tmsi);
                    }
                    let sess = self.sessions.get_mut(&ctx.connection).expect("present");
                    sess.state = SessionState::Established;
                    sess.tmsi = Some(new_tmsi);
                    AmfResponse::reply(
                        NasMessage::RegistrationAccept { new_tmsi },
                        "registered",
                        Some(SessionState::Established),
                    )
                }
                _ => AmfResponse::silent("security mode complete without command"),
            },
            NasMessage::SecurityModeReject { .. } => {
                // The old TMSI stays valid.
                self.sessions.remove(&ctx.connection);
                AmfResponse::silent("security mode rejected, session closed")
            }
            other => AmfResponse::silent(if other.ends_connection() {
                "downlink-only message on uplink"
            } else {
                "unexpected message"
            }),
        }
    }

    /// A new nonzero 48-bit TMSI not currently assigned.
    pub fn fresh_tmsi<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        loop {
            let t = rng.random_range(1..=TMSI_MASK);
            if !self.tmsi_index.contains_key(&t) {
                return t;
            }
        }
    }

    /// Drops the session of a connection that ended.
    pub fn close(&mut self, connection: u64) {
        self.sessions.remove(&connection);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::{conceal_supi, Algorithm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const HOME: HomeNetworkKey = HomeNetworkKey { id: 1, secret: [7; 16] };

    fn db() -> Amf {
        let subs = vec![
            SubscriberRecord { supi: Supi(1), key: SubscriberKey([1; 16]), allowed_5g: true, home_tmsi: Some(0xAAAA) },
            SubscriberRecord { supi: Supi(2), key: SubscriberKey([2; 16]), allowed_5g: false, home_tmsi: None },
        ];
        Amf::new(HOME, RejectPolicy::default(), subs).unwrap()
    }

    fn ctx(c: u64) -> NasContext {
        NasContext { connection: c, cell_id: 1, tracking_area: 1 }
    }

    fn caps() -> SecurityCapabilities {
        SecurityCapabilities::from_algorithms([Algorithm::Ea(2), Algorithm::Ia(2)])
    }

    fn reg(identity: MobileIdentity, capabilities: SecurityCapabilities) -> NasMessage {
        NasMessage::RegistrationRequest { identity, capabilities }
    }

    #[test]
    fn unknown_tmsi_asks_for_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = db();
        let r = a.on_uplink(&ctx(1), &reg(MobileIdentity::FiveGTmsi(0x1234), caps()), &mut rng);
        assert_eq!(r.reply, Some(NasMessage::IdentityRequest));
    }

    #[test]
    fn known_tmsi_authenticates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = db();
        let r = a.on_uplink(&ctx(1), &reg(MobileIdentity::FiveGTmsi(0xAAAA), caps()), &mut rng);
        assert!(matches!(r.reply, Some(NasMessage::AuthenticationRequest { .. })));
    }

    #[test]
    fn suci_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = db();
        let ok = conceal_supi(Supi(1), &HOME, &mut rng);
        let no5g = conceal_supi(Supi(2), &HOME, &mut rng);
        let unknown = conceal_supi(Supi(3), &HOME, &mut rng);
        let wrong_key = conceal_supi(Supi(1), &HomeNetworkKey::new(1, [8; 16]), &mut rng);
        let r = a.on_uplink(&ctx(1), &reg(MobileIdentity::Suci(ok), caps()), &mut rng);
        assert!(matches!(r.reply, Some(NasMessage::AuthenticationRequest { .. })));
        for (s, cause) in [(no5g, 27), (unknown, 15), (wrong_key, 15)] {
            let r = a.on_uplink(&ctx(2), &reg(MobileIdentity::Suci(s), caps()), &mut rng);
            assert_eq!(r.reply, Some(NasMessage::RegistrationReject { cause }));
        }
    }

    #[test]
    fn reject_policy_is_configurable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = db();
        a.policy = RejectPolicy { not_allowed_5g: 15, unknown_subscriber: 3 };
        let no5g = conceal_supi(Supi(2), &HOME, &mut rng);
        let r = a.on_uplink(&ctx(1), &reg(MobileIdentity::Suci(no5g), caps()), &mut rng);
        assert_eq!(r.reply, Some(NasMessage::RegistrationReject { cause: 15 }));
    }

    #[test]
    fn service_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = db();
        assert_eq!(
            a.on_uplink(&ctx(1), &NasMessage::ServiceRequest { s_tmsi: 0xAAAA }, &mut rng).reply,
            Some(NasMessage::ServiceAccept)
        );
        assert_eq!(
            a.on_uplink(&ctx(2), &NasMessage::ServiceRequest { s_tmsi: 0xBBBB }, &mut rng).reply,
            Some(NasMessage::ServiceReject { cause: 9 })
        );
    }

    #[test]
    fn full_registration_rotates_tmsi_and_echoes_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = db();
        let key = SubscriberKey([1; 16]);
        let c = ctx(9);
        let poisoned = SecurityCapabilities::poisoned();
        let r = a.on_uplink(&c, &reg(MobileIdentity::FiveGTmsi(0x5555), poisoned), &mut rng);
        assert_eq!(r.reply, Some(NasMessage::IdentityRequest));
        let suci = conceal_supi(Supi(1), &HOME, &mut rng);
        let r = a.on_uplink(&c, &NasMessage::IdentityResponse { suci }, &mut rng);
        let Some(NasMessage::AuthenticationRequest { rand, autn }) = r.reply else { panic!() };
        let res = key.answer_challenge(&rand, &autn).unwrap();
        let r = a.on_uplink(&c, &NasMessage::AuthenticationResponse { res }, &mut rng);
        assert_eq!(r.reply, Some(NasMessage::SecurityModeCommand { replayed_capabilities: poisoned }));
        let r = a.on_uplink(&c, &NasMessage::SecurityModeComplete, &mut rng);
        let Some(NasMessage::RegistrationAccept { new_tmsi }) = r.reply else { panic!() };
        assert_ne!(new_tmsi, 0xAAAA);
        assert!(a.knows_tmsi(new_tmsi));
        assert!(!a.knows_tmsi(0xAAAA));
        assert_eq!(a.subscriber(Supi(1)).unwrap().home_tmsi, Some(new_tmsi));
    }

    #[test]
    fn security_mode_reject_keeps_tmsi() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = db();
        let key = SubscriberKey([1; 16]);
        let c = ctx(3);
        a.on_uplink(&c, &reg(MobileIdentity::FiveGTmsi(0x5555), SecurityCapabilities::poisoned()), &mut rng);
        let suci = conceal_supi(Supi(1), &HOME, &mut rng);
        let Some(NasMessage::AuthenticationRequest { rand, autn }) =
            a.on_uplink(&c, &NasMessage::IdentityResponse { suci }, &mut rng).reply
        else {
            panic!()
        };
        let res = key.answer_challenge(&rand, &autn).unwrap();
        a.on_uplink(&c, &NasMessage::AuthenticationResponse { res }, &mut rng);
        let r = a.on_uplink(&c, &NasMessage::SecurityModeReject { cause: 23 }, &mut rng);
        assert_eq!(r.reply, None);
        assert_eq!(a.subscriber(Supi(1)).unwrap().home_tmsi, Some(0xAAAA));
        assert_eq!(
            a.on_uplink(&ctx(4), &NasMessage::ServiceRequest { s_tmsi: 0xAAAA }, &mut rng).reply,
            Some(NasMessage::ServiceAccept)
        );
    }

    #[test]
    fn wrong_res_and_failure_reject() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = db();
        a.on_uplink(&ctx(1), &reg(MobileIdentity::FiveGTmsi(0xAAAA), caps()), &mut rng);
        let r = a.on_uplink(&ctx(1), &NasMessage::AuthenticationResponse { res: [0; 16] }, &mut rng);
        assert_eq!(r.reply, Some(NasMessage::AuthenticationReject));
        a.on_uplink(&ctx(2), &reg(MobileIdentity::FiveGTmsi(0xAAAA), caps()), &mut rng);
        let r = a.on_uplink(&ctx(2), &NasMessage::AuthenticationFailure { cause: 20 }, &mut rng);
        assert_eq!(r.reply, Some(NasMessage::AuthenticationReject));
    }

    #[test]
    fn vectors_are_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = db();
        let mut rands = std::collections::BTreeSet::new();
        for c in 0..50 {
            let Some(NasMessage::AuthenticationRequest { rand, .. }) =
                a.on_uplink(&ctx(c), &reg(MobileIdentity::FiveGTmsi(0xAAAA), caps()), &mut rng).reply
            else {
                panic!()
            };
            assert!(rands.insert(rand));
        }
    }

    #[test]
    fn replayed_suci_is_accepted_any_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut a = db();
        let suci = conceal_supi(Supi(1), &HOME, &mut rng);
        for c in 0..20 {
            let r = a.on_uplink(&ctx(c), &reg(MobileIdentity::Suci(suci.clone()), caps()), &mut rng);
            assert!(matches!(r.reply, Some(NasMessage::AuthenticationRequest { .. })));
        }
    }

    #[test]
    fn duplicate_tmsi_rejected_at_load() {
        let s = |supi, t| SubscriberRecord { supi: Supi(supi), key: SubscriberKey([0; 16]), allowed_5g: true, home_tmsi: Some(t) };
        assert!(Amf::new(HOME, RejectPolicy::default(), vec![s(1, 5), s(2, 5)]).is_err());
        assert!(Amf::new(HOME, RejectPolicy::default(), vec![s(1, 5), s(1, 6)]).is_err());
    }
}
