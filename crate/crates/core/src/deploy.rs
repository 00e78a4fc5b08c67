//! Party roster and key material for one deployment.
//!
//! A deployment is generated deterministically from a seed and can be saved
//! as a TOML keystore holding every party's name, optional address, public
//! keys, and secrets as hex.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use rug::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::rng::{derive_rng, seed_from_u64};
use crate::crypto::{
    AgencyCiphertext, AgencyId, CombinedAgencyKey, CryptoError, ElGamalKeyPair, EncodedPlaintext, GroupParams, ParamSet,
    PhKey, SignatureKeyPair, TelecomKeyPair, TelecomPublicKey, VerificationKey, MAX_AGENCIES,
};
use crate::intersection::AgencyKeys;
use crate::party::PartyId;

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("keystore: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("keystore: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error("keystore: {0}")]
    Invalid(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

pub struct AgencyIdentity {
    pub name: String,
    pub addr: Option<SocketAddr>,
    pub eg: ElGamalKeyPair,
    pub sig: SignatureKeyPair,
}

pub struct TelecomIdentity {
    pub name: String,
    pub addr: Option<SocketAddr>,
    pub keys: TelecomKeyPair,
}

pub struct Deployment {
    pub param_set: ParamSet,
    pub params: Arc<GroupParams>,
    pub agencies: Vec<AgencyIdentity>,
    pub telecoms: Vec<TelecomIdentity>,
    pub hub_addr: Option<SocketAddr>,
}

impl Deployment {
    pub fn generate(param_set: ParamSet, n_agencies: usize, n_telecoms: usize, seed: u64) -> Result<Self, DeployError> {
        if !(1..=MAX_AGENCIES).contains(&n_agencies) {
            return Err(DeployError::Invalid(format!("agency count must be 1..={MAX_AGENCIES}")));
        }
        if !(1..=u8::MAX as usize).contains(&n_telecoms) {
            return Err(DeployError::Invalid("telecom count must be 1..=255".into()));
        }
        let params = param_set.params();
        let root = seed_from_u64(seed);
        let agencies = (0..n_agencies)
            .map(|i| {
                let mut rng = derive_rng(&root, "deploy/agency", &[i as u64]);
                AgencyIdentity {
                    name: format!("agency-{i}"),
                    addr: None,
                    eg: ElGamalKeyPair::generate(params.clone(), AgencyId(i as u8), &mut rng),
                    sig: SignatureKeyPair::generate(&mut rng),
                }
            })
            .collect();
        let telecoms = (0..n_telecoms)
            .map(|i| {
                let mut rng = derive_rng(&root, "deploy/telecom", &[i as u64]);
                TelecomIdentity { name: format!("telecom-{i}"), addr: None, keys: TelecomKeyPair::generate(&mut rng) }
            })
            .collect();
        Ok(Deployment { param_set, params, agencies, telecoms, hub_addr: None })
    }

    pub fn combined_key(&self) -> CombinedAgencyKey {
        CombinedAgencyKey::new(self.params.clone(), self.agencies.iter().map(|a| a.eg.public().clone()).collect())
            .expect("roster size checked at construction")
    }

    pub fn agency_roster(&self) -> Vec<(PartyId, VerificationKey)> {
        self.agencies.iter().enumerate().map(|(i, a)| (PartyId::Agency(i as u8), a.sig.public())).collect()
    }

    pub fn agency_names(&self) -> Vec<String> {
        self.agencies.iter().map(|a| a.name.clone()).collect()
    }

    pub fn telecom_names(&self) -> Vec<String> {
        self.telecoms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn telecom_keys(&self) -> Vec<TelecomPublicKey> {
        self.telecoms.iter().map(|t| t.keys.public()).collect()
    }

    pub fn elgamal_keys(&self) -> Vec<&ElGamalKeyPair> {
        self.agencies.iter().map(|a| &a.eg).collect()
    }

    /// Strips every agency's ElGamal layer and decodes the identifier.
    pub fn joint_decrypt(&self, ct: &AgencyCiphertext) -> Result<u64, CryptoError> {
        let ct = self.agencies.iter().try_fold(ct.clone(), |ct, a| a.eg.strip_layer(&ct))?;
        self.params.decode_id(&EncodedPlaintext { element: ct.beta })
    }

    /// Copies of the ElGamal keys paired with fresh per-warrant
    /// exponentiation keys drawn from `seed`.
    pub fn intersection_keys(&self, seed: u64) -> Vec<AgencyKeys> {
        let root = seed_from_u64(seed);
        self.agencies
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let id = AgencyId(i as u8);
                let eg = ElGamalKeyPair::from_secret(self.params.clone(), id, a.eg.secret().clone())
                    .expect("secret validated at construction");
                AgencyKeys { eg, ph: PhKey::generate(self.params.clone(), id, &mut derive_rng(&root, "ph", &[i as u64])) }
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String, DeployError> {
        let file = KeystoreFile {
            params: self.param_set.name().to_owned(),
            hub_addr: self.hub_addr,
            agency: self
                .agencies
                .iter()
                .map(|a| AgencyEntry {
                    name: a.name.clone(),
                    addr: a.addr,
                    elgamal_public: hex::encode(self.params.element_to_bytes(a.eg.public())),
                    verification_key: hex::encode(a.sig.public().to_bytes()),
                    elgamal_secret: a.eg.secret().to_string_radix(16),
                    signing_seed: hex::encode(a.sig.seed()),
                })
                .collect(),
            telecom: self
                .telecoms
                .iter()
                .map(|t| TelecomEntry {
                    name: t.name.clone(),
                    addr: t.addr,
                    public_key: hex::encode(t.keys.public().to_bytes()),
                    secret_key: hex::encode(t.keys.secret_bytes()),
                })
                .collect(),
        };
        Ok(toml::to_string_pretty(&file)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DeployError> {
        let file: KeystoreFile = toml::from_str(text)?;
        let param_set: ParamSet =
            file.params.parse().map_err(|_| DeployError::Invalid(format!("unknown parameter set {:?}", file.params)))?;
        let params = param_set.params();
        if file.agency.is_empty() || file.agency.len() > MAX_AGENCIES || file.telecom.is_empty() {
            return Err(DeployError::Invalid("need 1..=8 agencies and at least one telecom".into()));
        }
        let agencies = file
            .agency
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                let sk = Integer::from_str_radix(&e.elgamal_secret, 16)
                    .map_err(|_| DeployError::Invalid(format!("{}: bad ElGamal secret", e.name)))?;
                let eg = ElGamalKeyPair::from_secret(params.clone(), AgencyId(i as u8), sk)?;
                if hex::encode(params.element_to_bytes(eg.public())) != e.elgamal_public {
                    return Err(DeployError::Invalid(format!("{}: ElGamal public key does not match secret", e.name)));
                }
                let sig = SignatureKeyPair::from_seed(hex32(&e.signing_seed, &e.name)?);
                if hex::encode(sig.public().to_bytes()) != e.verification_key {
                    return Err(DeployError::Invalid(format!("{}: verification key does not match seed", e.name)));
                }
                Ok(AgencyIdentity { name: e.name, addr: e.addr, eg, sig })
            })
            .collect::<Result<Vec<_>, DeployError>>()?;
        let telecoms = file
            .telecom
            .into_iter()
            .map(|e| {
                let keys = TelecomKeyPair::from_secret_bytes(hex32(&e.secret_key, &e.name)?);
                if hex::encode(keys.public().to_bytes()) != e.public_key {
                    return Err(DeployError::Invalid(format!("{}: public key does not match secret", e.name)));
                }
                Ok(TelecomIdentity { name: e.name, addr: e.addr, keys })
            })
            .collect::<Result<Vec<_>, DeployError>>()?;
        Ok(Deployment { param_set, params, agencies, telecoms, hub_addr: file.hub_addr })
    }

    pub fn save(&self, path: &Path) -> Result<(), DeployError> {
        Ok(std::fs::write(path, self.to_toml()?)?)
    }

    pub fn load(path: &Path) -> Result<Self, DeployError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

fn hex32(s: &str, who: &str) -> Result<[u8; 32], DeployError> {
    hex::decode(s)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| DeployError::Invalid(format!("{who}: expected 32 hex-encoded bytes")))
}

#[derive(Serialize, Deserialize)]
struct KeystoreFile {
    params: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hub_addr: Option<SocketAddr>,
    agency: Vec<AgencyEntry>,
    telecom: Vec<TelecomEntry>,
}

#[derive(Serialize, Deserialize)]
struct AgencyEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addr: Option<SocketAddr>,
    elgamal_public: String,
    verification_key: String,
    elgamal_secret: String,
    signing_seed: String,
}

#[derive(Serialize, Deserialize)]
struct TelecomEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addr: Option<SocketAddr>,
    public_key: String,
    secret_key: String,
}
