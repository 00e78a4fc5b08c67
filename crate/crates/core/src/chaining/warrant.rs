use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ChainError;
use crate::codec::Writer;
use crate::crypto::{verify_envelope, ParamSet, Signature, TelecomId, VerificationKey};
use crate::deploy::Deployment;
use crate::graph::GraphPartition;
use crate::party::PartyId;

/// Authorization for one chaining search: target `x`, at most `k` hops,
/// no chaining through vertices of degree above `d` other than `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warrant {
    pub x: u64,
    pub k: u8,
    pub d: u32,
    pub target_telecom: TelecomId,
    pub params: ParamSet,
    pub roster: Vec<String>,
    pub telecoms: Vec<String>,
}

impl Warrant {
    /// Target telecom comes from the serving map; an unserved `x` is
    /// assigned to the first telecom, which answers it as an isolated vertex.
    pub fn for_deployment(dep: &Deployment, partitions: &[GraphPartition], x: u64, k: u8, d: u32) -> Self {
        let target_telecom =
            partitions.first().and_then(|p| p.serving().owner_of(x)).unwrap_or(TelecomId(0));
        Warrant {
            x,
            k,
            d,
            target_telecom,
            params: dep.param_set,
            roster: dep.agency_names(),
            telecoms: dep.telecom_names(),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.fixed(b"lawful/warrant/v1").u64(self.x).u8(self.k).u32(self.d).u8(self.target_telecom.0);
        w.short_str(self.params.name()).u8(self.roster.len() as u8);
        for n in &self.roster {
            w.short_str(n);
        }
        w.u8(self.telecoms.len() as u8);
        for n in &self.telecoms {
            w.short_str(n);
        }
        w.into_bytes()
    }

    pub fn id(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    pub fn check_deployment(&self, dep: &Deployment, partitions: &[GraphPartition]) -> Result<(), ChainError> {
        let bad = |m: String| Err(ChainError::InvalidWarrant(m));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.params != dep.param_set {
            return bad(format!("warrant names {} but deployment uses {}", self.params.name(), dep.param_set.name()));
        }
        if self.roster != dep.agency_names() || self.telecoms != dep.telecom_names() {
            return bad("party names differ from the deployment".into());
        }
        if partitions.len() != self.telecoms.len() {
            return bad(format!("{} partitions for {} telecoms", partitions.len(), self.telecoms.len()));
        }
        if self.target_telecom.0 as usize >= self.telecoms.len() {
            return bad(format!("target telecom {} out of range", self.target_telecom));
        }
        if let Some(owner) = partitions[0].serving().owner_of(self.x) {
            if owner != self.target_telecom {
                return bad(format!("x is served by {owner}, not {}", self.target_telecom));
            }
        }
        dep.params.encode_id(self.x)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum WarrantFileError {
    #[error("warrant file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("warrant file: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error("warrant file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedWarrant {
    pub warrant: Warrant,
    pub signatures: Vec<(PartyId, Signature)>,
}

impl SignedWarrant {
    pub fn sign_all(warrant: Warrant, dep: &Deployment) -> Self {
        let msg = warrant.canonical_bytes();
        let signatures =
            dep.agencies.iter().enumerate().map(|(i, a)| (PartyId::Agency(i as u8), a.sig.sign(&msg))).collect();
        SignedWarrant { warrant, signatures }
    }

    pub fn verify(&self, roster: &[(PartyId, VerificationKey)]) -> bool {
        verify_envelope(&self.warrant.canonical_bytes(), &self.signatures, roster)
    }

    pub fn to_toml(&self) -> Result<String, WarrantFileError> {
        let w = &self.warrant;
        let file = WarrantToml {
            x: w.x,
            k: w.k,
            d: w.d,
            target_telecom: w.telecoms.get(w.target_telecom.0 as usize).cloned().unwrap_or_default(),
            params: w.params.name().to_owned(),
            roster: w.roster.clone(),
            telecoms: w.telecoms.clone(),
            signature: self
                .signatures
                .iter()
                .map(|(p, s)| SignatureToml {
                    agency: match p {
                        PartyId::Agency(i) => w.roster.get(*i as usize).cloned().unwrap_or_default(),
                        other => other.to_string(),
                    },
                    sig: hex::encode(s.0),
                })
                .collect(),
        };
        Ok(toml::to_string_pretty(&file)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, WarrantFileError> {
        let f: WarrantToml = toml::from_str(text)?;
        let bad = |m: String| WarrantFileError::Invalid(m);
        let params = f.params.parse().map_err(|_| bad(format!("unknown parameter set {:?}", f.params)))?;
        let target = f
            .telecoms
            .iter()
            .position(|t| *t == f.target_telecom)
            .ok_or_else(|| bad(format!("target telecom {:?} not in telecom list", f.target_telecom)))?;
        let signatures = f
            .signature
            .iter()
            .map(|s| {
                let i = f.roster.iter().position(|a| *a == s.agency).ok_or_else(|| bad(format!("unknown signer {:?}", s.agency)))?;
                let sig: [u8; 64] = hex::decode(&s.sig)
                    .ok()
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| bad(format!("bad signature from {:?}", s.agency)))?;
                Ok((PartyId::Agency(i as u8), Signature(sig)))
            })
            .collect::<Result<Vec<_>, WarrantFileError>>()?;
        let warrant = Warrant {
            x: f.x,
            k: f.k,
            d: f.d,
            target_telecom: TelecomId(target as u8),
            params,
            roster: f.roster,
            telecoms: f.telecoms,
        };
        Ok(SignedWarrant { warrant, signatures })
    }
}

#[derive(Serialize, Deserialize)]
struct WarrantToml {
    x: u64,
    k: u8,
    d: u32,
    target_telecom: String,
    params: String,
    roster: Vec<String>,
    telecoms: Vec<String>,
    #[serde(default)]
    signature: Vec<SignatureToml>,
}

#[derive(Serialize, Deserialize)]
struct SignatureToml {
    agency: String,
    sig: String,
}
