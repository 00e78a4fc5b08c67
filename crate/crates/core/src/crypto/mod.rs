//! Cryptographic building blocks for both protocols.

pub mod elgamal;
pub mod group;
pub mod pohlig_hellman;
pub mod rng;
pub mod signing;
pub mod telecom;

use thiserror::Error;

pub use elgamal::{joint_decrypt, AgencyCiphertext, AgencyId, CombinedAgencyKey, ElGamalKeyPair, LayerSet, MAX_AGENCIES};
pub use group::{EncodedPlaintext, GroupElement, GroupParams, ParamSet};
pub use pohlig_hellman::{DeterministicTag, PhKey};
pub use signing::{verify_envelope, Signature, SIGNATURE_LEN, SignatureKeyPair, VerificationKey};
pub use telecom::{TelecomCiphertext, TelecomId, TelecomKeyPair, TelecomPublicKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("identifier {id} outside the encodable range [1, {max}]")]
    IdentifierOutOfRange { id: u64, max: u64 },
    #[error("decoded element is not an identifier")]
    NotAnIdentifier,
    #[error("unknown parameter set {0:?}")]
    UnknownParamSet(String),
    #[error("invalid group parameters: {0}")]
    InvalidParams(String),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("value is not in the order-q subgroup")]
    NotInSubgroup,
    #[error("{0} already removed its ElGamal layer")]
    LayerAlreadyRemoved(AgencyId),
    #[error("{0} already applied its Pohlig-Hellman layer")]
    PhLayerAlreadyApplied(AgencyId),
    #[error("no Pohlig-Hellman layer from {0} to strip")]
    PhLayerAbsent(AgencyId),
    #[error("Pohlig-Hellman layers still present")]
    PhLayerPresent,
    #[error("Pohlig-Hellman key of {0} has been destroyed")]
    PhKeyDestroyed(AgencyId),
    #[error("ciphertext still carries ElGamal layers")]
    ConversionIncomplete,
    #[error("ciphertext is not addressed to this telecom")]
    NotAddressee,
    #[error("ciphertext failed integrity check")]
    CorruptCiphertext,
}
