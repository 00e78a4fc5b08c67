//! Ed25519 signatures and the every-agency verification rule.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::Rng;

use super::CryptoError;
use crate::party::PartyId;

pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(VerifyingKey);

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerificationKey({})", hex::encode(&self.0.to_bytes()[..6]))
    }
}

impl VerificationKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        VerifyingKey::from_bytes(bytes)
            .map(VerificationKey)
            .map_err(|e| CryptoError::InvalidKey(format!("verification key: {e}")))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        self.0.verify(msg, &sig).is_ok()
    }
}

pub struct SignatureKeyPair {
    key: SigningKey,
}

impl fmt::Debug for SignatureKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignatureKeyPair").field("public", &self.public()).finish()
    }
}

impl SignatureKeyPair {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        SignatureKeyPair { key: SigningKey::from_bytes(&seed) }
    }

    pub fn seed(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn public(&self) -> VerificationKey {
        VerificationKey(self.key.verifying_key())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.key.sign(msg).to_bytes())
    }
}

/// True iff every member of `roster` has a valid signature over exactly `msg`
/// among `sigs`. Extra signatures from non-members are ignored.
pub fn verify_envelope(msg: &[u8], sigs: &[(PartyId, Signature)], roster: &[(PartyId, VerificationKey)]) -> bool {
    !roster.is_empty()
        && roster.iter().all(|(member, vk)| {
            sigs.iter().any(|(signer, sig)| signer == member && vk.verify(msg, sig))
        })
}
