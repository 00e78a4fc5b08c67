//! Pohlig-Hellman exponentiation layers.
//!
//! Applying key `z` raises both ciphertext components to `z`. This commutes
//! with ElGamal share removal since `(beta / alpha^sk)^z = beta^z / (alpha^z)^sk`,
//! and once every ElGamal share is gone the remaining `beta` is a deterministic
//! function of the plaintext.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rug::Integer;

use super::elgamal::{AgencyCiphertext, AgencyId, LayerSet};
use super::group::{EncodedPlaintext, GroupElement, GroupParams};
use super::CryptoError;

struct PhSecret {
    z: Integer,
    z_inv: Integer,
}

/// A per-warrant Pohlig-Hellman key. Destroying it is permanent.
pub struct PhKey {
    params: Arc<GroupParams>,
    owner: AgencyId,
    secret: Option<PhSecret>,
}

impl fmt::Debug for PhKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhKey")
            .field("owner", &self.owner)
            .field("destroyed", &self.secret.is_none())
            .finish()
    }
}

impl PhKey {
    pub fn generate<R: Rng + ?Sized>(params: Arc<GroupParams>, owner: AgencyId, rng: &mut R) -> Self {
        // q is prime, so every exponent in [1, q-1] is invertible.
        let z = params.random_exponent(rng);
        Self::from_exponent(params, owner, z).expect("sampled exponent is in range")
    }

    pub fn from_exponent(params: Arc<GroupParams>, owner: AgencyId, z: Integer) -> Result<Self, CryptoError> {
        if z < 1 || z >= *params.q() {
            return Err(CryptoError::InvalidKey("PH exponent outside [1, q-1]".into()));
        }
        let z_inv = Integer::from(z.invert_ref(params.q()).ok_or_else(|| {
            CryptoError::InvalidKey("PH exponent not invertible mod q".into())
        })?);
        Ok(PhKey { params, owner, secret: Some(PhSecret { z, z_inv }) })
    }

    pub fn owner(&self) -> AgencyId {
        self.owner
    }

    pub fn is_destroyed(&self) -> bool {
        self.secret.is_none()
    }

    /// Irreversibly erases the key material. Calling it again is a no-op.
    pub fn destroy(&mut self) {
        self.secret = None;
    }

    fn secret(&self) -> Result<&PhSecret, CryptoError> {
        self.secret.as_ref().ok_or(CryptoError::PhKeyDestroyed(self.owner))
    }

    /// `(alpha, beta) <- (alpha^z, beta^z)`.
    pub fn apply(&self, ct: &AgencyCiphertext) -> Result<AgencyCiphertext, CryptoError> {
        if ct.ph.contains(self.owner) {
            return Err(CryptoError::PhLayerAlreadyApplied(self.owner));
        }
        let s = self.secret()?;
        Ok(AgencyCiphertext {
            alpha: self.params.pow(&ct.alpha, &s.z),
            beta: self.params.pow(&ct.beta, &s.z),
            removed: ct.removed,
            ph: ct.ph.with(self.owner),
        })
    }

    /// Inverse of [`Self::apply`]: both components raised to `z^-1 mod q`.
    pub fn strip(&self, ct: &AgencyCiphertext) -> Result<AgencyCiphertext, CryptoError> {
        if !ct.ph.contains(self.owner) {
            return Err(CryptoError::PhLayerAbsent(self.owner));
        }
        let s = self.secret()?;
        Ok(AgencyCiphertext {
            alpha: self.params.pow(&ct.alpha, &s.z_inv),
            beta: self.params.pow(&ct.beta, &s.z_inv),
            removed: ct.removed,
            ph: ct.ph.without(self.owner),
        })
    }

    pub fn strip_tag(&self, tag: &DeterministicTag) -> Result<DeterministicTag, CryptoError> {
        if !tag.layers.contains(self.owner) {
            return Err(CryptoError::PhLayerAbsent(self.owner));
        }
        let s = self.secret()?;
        Ok(DeterministicTag {
            value: self.params.pow(&tag.value, &s.z_inv),
            layers: tag.layers.without(self.owner),
        })
    }
}

/// `encode(m)^(z_1 * ... * z_n)`: what remains of a fully converted ciphertext.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeterministicTag {
    pub value: GroupElement,
    pub layers: LayerSet,
}

impl DeterministicTag {
    /// Takes the tag out of a ciphertext whose ElGamal layers are all gone.
    pub fn from_converted(ct: &AgencyCiphertext, roster_len: usize) -> Result<Self, CryptoError> {
        if ct.removed != LayerSet::full(roster_len) {
            return Err(CryptoError::ConversionIncomplete);
        }
        Ok(DeterministicTag { value: ct.beta.clone(), layers: ct.ph })
    }

    /// Decodes a tag whose PH layers have all been stripped.
    pub fn decode(&self, params: &GroupParams) -> Result<u64, CryptoError> {
        if !self.layers.is_empty() {
            return Err(CryptoError::PhLayerPresent);
        }
        params.decode_id(&EncodedPlaintext { element: self.value.clone() })
    }
}
