//! Telecom-addressed public-key encryption.
//!
//! Hybrid X25519 + ChaCha20-Poly1305. A ciphertext carries no recipient
//! identity; only the addressee derives a key whose hint matches, so every
//! other telecom learns `NotAddressee` and the addressee can tell a damaged
//! payload (`CorruptCiphertext`) from one meant for someone else.

use std::fmt;

use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, KeyInit, Nonce};
use rand::Rng;
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use super::CryptoError;
use crate::codec::{DecodeError, Reader};

const HINT_LEN: usize = 8;
const SEALED_LEN: usize = 8 + 16;

/// Index of a telecom in the deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TelecomId(pub u8);

impl fmt::Display for TelecomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "telecom-{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TelecomPublicKey([u8; 32]);

impl fmt::Debug for TelecomPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TelecomPublicKey({})", hex::encode(&self.0[..8]))
    }
}

impl TelecomPublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        TelecomPublicKey(bytes)
    }

    pub fn to_bytes(self) -> [u8; 32] {
        self.0
    }

    /// Seals `id` to the holder of this key.
    pub fn encrypt<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> TelecomCiphertext {
        let mut eph = [0u8; 32];
        rng.fill_bytes(&mut eph);
        let eph = StaticSecret::from(eph);
        let eph_pub = PublicKey::from(&eph).to_bytes();
        let shared = eph.diffie_hellman(&PublicKey::from(self.0));
        let (key, hint) = derive(shared.as_bytes(), &eph_pub, &self.0);
        let sealed = ChaCha20Poly1305::new(&key)
            .encrypt(&Nonce::default(), Payload { msg: &id.to_be_bytes(), aad: &eph_pub })
            .expect("fixed-size plaintext");
        TelecomCiphertext { ephemeral: eph_pub, hint, sealed: sealed.try_into().expect("8 + 16 bytes") }
    }
}

pub struct TelecomKeyPair {
    secret: StaticSecret,
    public: TelecomPublicKey,
}

impl fmt::Debug for TelecomKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TelecomKeyPair").field("public", &self.public).finish()
    }
}

impl TelecomKeyPair {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self::from_secret_bytes(bytes)
    }

    pub fn from_secret_bytes(bytes: [u8; 32]) -> Self {
        let secret = StaticSecret::from(bytes);
        let public = TelecomPublicKey(PublicKey::from(&secret).to_bytes());
        TelecomKeyPair { secret, public }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }

    pub fn public(&self) -> TelecomPublicKey {
        self.public
    }

    pub fn try_decrypt(&self, ct: &TelecomCiphertext) -> Result<u64, CryptoError> {
        let shared = self.secret.diffie_hellman(&PublicKey::from(ct.ephemeral));
        if !shared.was_contributory() {
            return Err(CryptoError::NotAddressee);
        }
        let (key, hint) = derive(shared.as_bytes(), &ct.ephemeral, &self.public.0);
        if hint != ct.hint {
            return Err(CryptoError::NotAddressee);
        }
        let plain = ChaCha20Poly1305::new(&key)
            .decrypt(&Nonce::default(), Payload { msg: &ct.sealed, aad: &ct.ephemeral })
            .map_err(|_| CryptoError::CorruptCiphertext)?;
        let id: [u8; 8] = plain.try_into().map_err(|_| CryptoError::CorruptCiphertext)?;
        Ok(u64::from_be_bytes(id))
    }
}

fn derive(shared: &[u8; 32], eph_pub: &[u8; 32], recipient: &[u8; 32]) -> (Key, [u8; HINT_LEN]) {
    let mut h = Sha256::new();
    h.update(b"lawful/telecom-ct/v1");
    h.update(shared);
    h.update(eph_pub);
    h.update(recipient);
    let okm: [u8; 32] = h.finalize().into();
    let hint_full: [u8; 32] = Sha256::new().chain_update(b"lawful/telecom-hint/v1").chain_update(okm).finalize().into();
    let mut hint = [0u8; HINT_LEN];
    hint.copy_from_slice(&hint_full[..HINT_LEN]);
    (Key::from(okm), hint)
}

/// A sealed identifier. The wire form is fixed at [`TelecomCiphertext::WIRE_LEN`] bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TelecomCiphertext {
    pub ephemeral: [u8; 32],
    pub hint: [u8; HINT_LEN],
    pub sealed: [u8; SEALED_LEN],
}

impl fmt::Debug for TelecomCiphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TelecomCiphertext({})", hex::encode(&self.ephemeral[..6]))
    }
}

impl TelecomCiphertext {
    pub const WIRE_LEN: usize = 32 + HINT_LEN + SEALED_LEN;

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.hint);
        out.extend_from_slice(&self.sealed);
    }

    pub fn to_bytes(&self) -> [u8; Self::WIRE_LEN] {
        let mut out = Vec::with_capacity(Self::WIRE_LEN);
        self.write(&mut out);
        out.try_into().expect("fixed width")
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(TelecomCiphertext { ephemeral: r.array()?, hint: r.array()?, sealed: r.array()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(n: usize) -> Vec<TelecomKeyPair> {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        (0..n).map(|_| TelecomKeyPair::generate(&mut rng)).collect()
    }

    #[test]
    fn addressee_decrypts_others_do_not() {
        let ks = keys(4);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ct = ks[2].public().encrypt(5551234, &mut rng);
        assert_eq!(ks[2].try_decrypt(&ct).unwrap(), 5551234);
        for (i, k) in ks.iter().enumerate().filter(|(i, _)| *i != 2) {
            assert_eq!(k.try_decrypt(&ct), Err(CryptoError::NotAddressee), "telecom {i}");
        }
    }

    #[test]
    fn tampered_payload_is_corrupt() {
        let ks = keys(2);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut ct = ks[1].public().encrypt(5551234, &mut rng);
        ct.sealed[3] ^= 0x40;
        assert_eq!(ks[1].try_decrypt(&ct), Err(CryptoError::CorruptCiphertext));
        assert_eq!(ks[0].try_decrypt(&ct), Err(CryptoError::NotAddressee));
    }

    #[test]
    fn encryption_is_randomized_and_fixed_width() {
        let ks = keys(1);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = ks[0].public().encrypt(7, &mut rng);
        let b = ks[0].public().encrypt(7, &mut rng);
        assert_ne!(a, b);
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 64);
        let mut r = Reader::new(&bytes);
        assert_eq!(TelecomCiphertext::read(&mut r).unwrap(), a);
    }
}
