//! Keyed-PRF authentication vectors.
//!
//! Only accept/reject semantics matter here: RAND and AUTN come from a PRF
//! over (subscriber key, sequence counter), RES = PRF(key, RAND), and the UE
//! accepts a challenge iff it recomputes the same AUTN with its own key.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubscriberKey(pub [u8; 16]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthVector {
    pub rand: [u8; 16],
    pub autn: [u8; 16],
    pub xres: [u8; 16],
}

fn prf(key: &SubscriberKey, label: &[u8], data: &[u8]) -> [u8; 16] {
    let digest = Sha256::new().chain_update(label).chain_update(key.0).chain_update(data).finalize();
    digest[..16].try_into().expect("sixteen bytes")
}

impl SubscriberKey {
    pub fn vector(&self, sqn: u64) -> AuthVector {
        let rand = prf(self, b"rand", &sqn.to_be_bytes());
        AuthVector { rand, autn: self.autn(&rand), xres: self.res(&rand) }
    }

    pub fn autn(&self, rand: &[u8; 16]) -> [u8; 16] {
        prf(self, b"autn", rand)
    }

    pub fn res(&self, rand: &[u8; 16]) -> [u8; 16] {
        prf(self, b"res", rand)
    }

    /// UE side: returns RES when the network proved knowledge of this key.
    pub fn answer_challenge(&self, rand: &[u8; 16], autn: &[u8; 16]) -> Option<[u8; 16]> {
        (self.autn(rand) == *autn).then(|| self.res(rand))
    }
}
