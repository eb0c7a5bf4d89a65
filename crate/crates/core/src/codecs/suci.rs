//! Abstract SUCI concealment.
//!
//! A keyed stream cipher plus a truncated tag stand in for the ECIES profiles:
//! concealment is randomized by an 8-byte ephemeral value, deconcealment needs
//! the home-network key, and nothing binds a SUCI to a time or session, so a
//! replayed SUCI deconceals as well as a fresh one.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CodecError;

pub const SUPI_LEN: usize = 7;
pub const TAG_LEN: usize = 4;
pub const SCHEME_ID: u8 = 0x01;
const LAYER: &str = "suci";

/// Subscription permanent identifier: an IMSI of up to 15 digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Supi(pub u64);

impl Supi {
    pub const MAX: u64 = 999_999_999_999_999;

    pub fn to_bytes(self) -> [u8; SUPI_LEN] {
        self.0.to_be_bytes()[1..].try_into().expect("seven bytes")
    }

    pub fn from_bytes(b: [u8; SUPI_LEN]) -> Self {
        let mut w = [0u8; 8];
        w[1..].copy_from_slice(&b);
        Supi(u64::from_be_bytes(w))
    }
}

impl fmt::Display for Supi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "imsi-{:015}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeNetworkKey {
    pub id: u8,
    pub secret: [u8; 16],
}

impl HomeNetworkKey {
    pub fn new(id: u8, secret: [u8; 16]) -> Self {
        Self { id, secret }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Suci {
    pub scheme_id: u8,
    pub home_network_key_id: u8,
    pub ephemeral: [u8; 8],
    pub ciphertext: Vec<u8>,
}

impl Suci {
    pub const HEADER_LEN: usize = 10;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN + self.ciphertext.len());
        out.push(self.scheme_id);
        out.push(self.home_network_key_id);
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    /// Parses a SUCI occupying the whole of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() <= Self::HEADER_LEN {
            return Err(CodecError::Truncated {
                layer: LAYER,
                needed: Self::HEADER_LEN + 1,
                available: bytes.len(),
            });
        }
        Ok(Self {
            scheme_id: bytes[0],
            home_network_key_id: bytes[1],
            ephemeral: bytes[2..10].try_into().expect("eight bytes"),
            ciphertext: bytes[10..].to_vec(),
        })
    }
}

impl fmt::Display for Suci {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.to_bytes()))
    }
}

fn keystream(key: &HomeNetworkKey, ephemeral: &[u8; 8]) -> [u8; SUPI_LEN] {
    let digest = Sha256::new()
        .chain_update(b"suci-stream")
        .chain_update(key.secret)
        .chain_update(ephemeral)
        .finalize();
    digest[..SUPI_LEN].try_into().expect("seven bytes")
}

fn tag(key: &HomeNetworkKey, ephemeral: &[u8; 8], masked: &[u8]) -> [u8; TAG_LEN] {
    let digest = Sha256::new()
        .chain_update(b"suci-tag")
        .chain_update(key.secret)
        .chain_update(ephemeral)
        .chain_update(masked)
        .finalize();
    digest[..TAG_LEN].try_into().expect("four bytes")
}

pub fn conceal_supi<R: RngCore + ?Sized>(supi: Supi, home_key: &HomeNetworkKey, rng: &mut R) -> Suci {
    let mut ephemeral = [0u8; 8];
    rng.fill_bytes(&mut ephemeral);
    let ks = keystream(home_key, &ephemeral);
    let mut ciphertext: Vec<u8> = supi.to_bytes().iter().zip(ks).map(|(a, b)| a ^ b).collect();
    let t = tag(home_key, &ephemeral, &ciphertext);
    ciphertext.extend_from_slice(&t);
    Suci { scheme_id: SCHEME_ID, home_network_key_id: home_key.id, ephemeral, ciphertext }
}

pub fn deconceal_suci(suci: &Suci, home_key: &HomeNetworkKey) -> Result<Supi, CodecError> {
    if suci.home_network_key_id != home_key.id {
        return Err(CodecError::WrongKeyId { expected: home_key.id, found: suci.home_network_key_id });
    }
    if suci.ciphertext.len() != SUPI_LEN + TAG_LEN {
        return Err(CodecError::TagMismatch);
    }
    let (masked, t) = suci.ciphertext.split_at(SUPI_LEN);
    if tag(home_key, &suci.ephemeral, masked) != t {
        return Err(CodecError::TagMismatch);
    }
    let ks = keystream(home_key, &suci.ephemeral);
    let plain: [u8; SUPI_LEN] =
        std::array::from_fn(|i| masked[i] ^ ks[i]);
    Ok(Supi::from_bytes(plain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(id: u8, fill: u8) -> HomeNetworkKey {
        HomeNetworkKey::new(id, [fill; 16])
    }

    #[test]
    fn concealment_is_randomized_but_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = key(1, 0x11);
        let supi = Supi(1_010_000_000_001);
        let c1 = conceal_supi(supi, &k, &mut rng);
        let c2 = conceal_supi(supi, &k, &mut rng);
        assert_ne!(c1, c2);
        assert_eq!(deconceal_suci(&c1, &k).unwrap(), supi);
        assert_eq!(deconceal_suci(&c2, &k).unwrap(), supi);
        // No freshness: deconcealing an old value again still works.
        assert_eq!(deconceal_suci(&c1, &k).unwrap(), supi);
    }

    #[test]
    fn wrong_key_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = conceal_supi(Supi(42), &key(1, 0x11), &mut rng);
        assert_eq!(deconceal_suci(&c, &key(1, 0x22)), Err(CodecError::TagMismatch));
        assert!(matches!(deconceal_suci(&c, &key(2, 0x11)), Err(CodecError::WrongKeyId { .. })));
    }

    #[test]
    fn thousand_random_supis_round_trip() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = key(7, 0x5A);
        for _ in 0..1000 {
            let supi = Supi(rng.random_range(0..=Supi::MAX));
            let c = conceal_supi(supi, &k, &mut rng);
            assert_eq!(Suci::from_bytes(&c.to_bytes()).unwrap(), c);
            assert_eq!(deconceal_suci(&c, &k).unwrap(), supi);
        }
    }

    #[test]
    fn corrupted_ciphertext_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = key(1, 0x11);
        let mut c = conceal_supi(Supi(99), &k, &mut rng);
        c.ciphertext[0] ^= 1;
        assert_eq!(deconceal_suci(&c, &k), Err(CodecError::TagMismatch));
    }
}
