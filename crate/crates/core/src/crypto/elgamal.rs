//! ElGamal under the product of every agency's public key.
//!
//! A single ElGamal layer under `Y = y_1 * ... * y_n` needs every `sk_i` to
//! open; each agency strips its share with `beta / alpha^sk_i`, in any order.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rug::Integer;

use super::group::{EncodedPlaintext, GroupElement, GroupParams};
use super::CryptoError;
use crate::codec::{DecodeError, Reader};

/// Position of an agency in the roster. Rosters hold at most eight agencies
/// so that layer sets fit one byte on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgencyId(pub u8);

pub const MAX_AGENCIES: usize = 8;

impl fmt::Display for AgencyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agency-{}", self.0)
    }
}

/// Bitmap of agencies, indexed by roster position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerSet(u8);

impl LayerSet {
    pub const EMPTY: LayerSet = LayerSet(0);

    pub fn full(roster_len: usize) -> LayerSet {
        debug_assert!(roster_len <= MAX_AGENCIES);
        LayerSet(((1u16 << roster_len) - 1) as u8)
    }

    pub fn from_bits(bits: u8) -> LayerSet {
        LayerSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, id: AgencyId) -> bool {
        self.0 & (1 << id.0) != 0
    }

    #[must_use]
    pub fn with(self, id: AgencyId) -> LayerSet {
        LayerSet(self.0 | (1 << id.0))
    }

    #[must_use]
    pub fn without(self, id: AgencyId) -> LayerSet {
        LayerSet(self.0 & !(1 << id.0))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: LayerSet) -> bool {
        self.0 & !other.0 == 0
    }
}

pub struct ElGamalKeyPair {
    params: Arc<GroupParams>,
    owner: AgencyId,
    sk: Integer,
    pk: GroupElement,
}

impl fmt::Debug for ElGamalKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElGamalKeyPair").field("owner", &self.owner).field("pk", &self.pk).finish()
    }
}

impl ElGamalKeyPair {
    pub fn generate<R: Rng + ?Sized>(params: Arc<GroupParams>, owner: AgencyId, rng: &mut R) -> Self {
        let sk = params.random_exponent(rng);
        Self::from_secret(params, owner, sk).expect("sampled exponent is in range")
    }

    pub fn from_secret(params: Arc<GroupParams>, owner: AgencyId, sk: Integer) -> Result<Self, CryptoError> {
        if sk < 1 || sk >= *params.q() {
            return Err(CryptoError::InvalidKey("ElGamal secret outside [1, q-1]".into()));
        }
        let pk = params.pow(params.generator(), &sk);
        Ok(ElGamalKeyPair { params, owner, sk, pk })
    }

    pub fn owner(&self) -> AgencyId {
        self.owner
    }

    pub fn public(&self) -> &GroupElement {
        &self.pk
    }

    pub fn secret(&self) -> &Integer {
        &self.sk
    }

    pub fn params(&self) -> &Arc<GroupParams> {
        &self.params
    }

    /// Partial decryption: `beta <- beta / alpha^sk`.
    pub fn strip_layer(&self, ct: &AgencyCiphertext) -> Result<AgencyCiphertext, CryptoError> {
        if ct.removed.contains(self.owner) {
            return Err(CryptoError::LayerAlreadyRemoved(self.owner));
        }
        let shared = self.params.pow(&ct.alpha, &self.sk);
        let beta = self.params.mul(&ct.beta, &self.params.inv(&shared));
        Ok(AgencyCiphertext {
            alpha: ct.alpha.clone(),
            beta,
            removed: ct.removed.with(self.owner),
            ph: ct.ph,
        })
    }
}

/// Product of the roster's public keys.
#[derive(Clone, Debug)]
pub struct CombinedAgencyKey {
    params: Arc<GroupParams>,
    members: Vec<GroupElement>,
    product: GroupElement,
}

impl CombinedAgencyKey {
    /// `members[i]` is the public key of `AgencyId(i)`.
    pub fn new(params: Arc<GroupParams>, members: Vec<GroupElement>) -> Result<Self, CryptoError> {
        if members.is_empty() || members.len() > MAX_AGENCIES {
            return Err(CryptoError::InvalidKey(format!(
                "roster must hold 1..={MAX_AGENCIES} agencies, got {}",
                members.len()
            )));
        }
        let product = members.iter().fold(params.identity(), |acc, y| params.mul(&acc, y));
        Ok(CombinedAgencyKey { params, members, product })
    }

    pub fn from_keypairs(keys: &[ElGamalKeyPair]) -> Result<Self, CryptoError> {
        let params = keys.first().ok_or_else(|| CryptoError::InvalidKey("empty roster".into()))?.params.clone();
        Self::new(params, keys.iter().map(|k| k.pk.clone()).collect())
    }

    pub fn product(&self) -> &GroupElement {
        &self.product
    }

    pub fn members(&self) -> &[GroupElement] {
        &self.members
    }

    pub fn roster_len(&self) -> usize {
        self.members.len()
    }

    pub fn params(&self) -> &Arc<GroupParams> {
        &self.params
    }

    pub fn encrypt<R: Rng + ?Sized>(&self, m: &EncodedPlaintext, rng: &mut R) -> AgencyCiphertext {
        let r = self.params.random_exponent(rng);
        self.encrypt_with(m, &r)
    }

    /// Encryption with caller-chosen randomness `r`: `(g^r, m * Y^r)`.
    pub fn encrypt_with(&self, m: &EncodedPlaintext, r: &Integer) -> AgencyCiphertext {
        let alpha = self.params.pow(self.params.generator(), r);
        let beta = self.params.mul(&m.element, &self.params.pow(&self.product, r));
        AgencyCiphertext { alpha, beta, removed: LayerSet::EMPTY, ph: LayerSet::EMPTY }
    }

    pub fn encrypt_id<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> Result<AgencyCiphertext, CryptoError> {
        Ok(self.encrypt(&self.params.encode_id(id)?, rng))
    }
}

/// An identifier under the combined agency key, possibly partially converted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AgencyCiphertext {
    pub alpha: GroupElement,
    pub beta: GroupElement,
    /// Agencies whose ElGamal share has been stripped.
    pub removed: LayerSet,
    /// Agencies whose Pohlig-Hellman layer has been applied.
    pub ph: LayerSet,
}

impl AgencyCiphertext {
    /// Wire length for a parameter set: `alpha || beta || removed || ph`.
    pub fn wire_len(params: &GroupParams) -> usize {
        2 * params.element_len() + 2
    }

    pub fn write(&self, params: &GroupParams, out: &mut Vec<u8>) {
        params.write_element(&self.alpha, out);
        params.write_element(&self.beta, out);
        out.push(self.removed.bits());
        out.push(self.ph.bits());
    }

    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::wire_len(params));
        self.write(params, &mut out);
        out
    }

    pub fn read(params: &GroupParams, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = params.element_len();
        let alpha = params.element_from_bytes(r.fixed(n)?)?;
        let beta = params.element_from_bytes(r.fixed(n)?)?;
        let removed = LayerSet::from_bits(r.u8()?);
        let ph = LayerSet::from_bits(r.u8()?);
        Ok(AgencyCiphertext { alpha, beta, removed, ph })
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let ct = Self::read(params, &mut r)?;
        r.finish()?;
        Ok(ct)
    }

    /// True once every roster member has stripped and applied its layers.
    pub fn is_fully_converted(&self, roster_len: usize) -> bool {
        let full = LayerSet::full(roster_len);
        self.removed == full && self.ph == full
    }
}

/// Strips every ElGamal layer and decodes. Requires no PH layers.
pub fn joint_decrypt(ct: &AgencyCiphertext, keys: &[ElGamalKeyPair]) -> Result<u64, CryptoError> {
    let first = keys.first().ok_or_else(|| CryptoError::InvalidKey("no keys supplied".into()))?;
    if !ct.ph.is_empty() {
        return Err(CryptoError::PhLayerPresent);
    }
    let mut ct = ct.clone();
    for k in keys {
        ct = k.strip_layer(&ct)?;
    }
    if ct.removed != LayerSet::full(keys.len()) {
        return Err(CryptoError::InvalidKey("key set does not cover the roster".into()));
    }
    first.params.decode_id(&EncodedPlaintext { element: ct.beta })
}
