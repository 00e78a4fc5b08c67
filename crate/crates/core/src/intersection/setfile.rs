//! On-disk encrypted sets.
//!
//! Layout: magic, version, parameter-set name, agency roster, label, flags,
//! record count, then fixed-width records. A record is one agency ciphertext
//! optionally followed by a BFS distance byte and an owning-telecom byte,
//! depending on the flags. Chaining output uses the same format.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::EncryptedSet;
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{AgencyCiphertext, ParamSet, TelecomId};

const MAGIC: &[u8; 5] = b"LWSET";
const VERSION: u8 = 1;
const FLAG_DISTANCE: u8 = 1;
const FLAG_OWNER: u8 = 2;

#[derive(Debug, Error)]
pub enum SetFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("annotation count {got} differs from record count {want}")]
    LengthMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetFile {
    pub param_set: ParamSet,
    pub roster: Vec<String>,
    pub set: EncryptedSet,
    pub distances: Option<Vec<u8>>,
    pub owners: Option<Vec<TelecomId>>,
}

impl SetFile {
    pub fn new(param_set: ParamSet, roster: Vec<String>, set: EncryptedSet) -> Self {
        SetFile { param_set, roster, set, distances: None, owners: None }
    }

    fn check(&self) -> Result<(), SetFileError> {
        let want = self.set.ciphertexts.len();
        for got in [self.distances.as_ref().map(Vec::len), self.owners.as_ref().map(Vec::len)].into_iter().flatten() {
            if got != want {
                return Err(SetFileError::LengthMismatch { got, want });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SetFileError> {
        self.check()?;
        let params = self.param_set.params();
        let mut w = Writer::new();
        w.fixed(MAGIC).u8(VERSION).short_str(self.param_set.name()).u8(self.roster.len() as u8);
        for name in &self.roster {
            w.short_str(name);
        }
        let flags = if self.distances.is_some() { FLAG_DISTANCE } else { 0 }
            | if self.owners.is_some() { FLAG_OWNER } else { 0 };
        w.bytes(self.set.label.as_bytes()).u8(flags).u64(self.set.ciphertexts.len() as u64);
        let mut body = Vec::with_capacity(AgencyCiphertext::wire_len(&params) + 2);
        for (i, ct) in self.set.ciphertexts.iter().enumerate() {
            body.clear();
            ct.write(&params, &mut body);
            if let Some(d) = &self.distances {
                body.push(d[i]);
            }
            if let Some(o) = &self.owners {
                body.push(o[i].0);
            }
            w.fixed(&body);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SetFileError> {
        let mut r = Reader::new(bytes);
        if r.fixed(MAGIC.len())? != MAGIC {
            return Err(DecodeError::invalid("set file", "bad magic").into());
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(DecodeError::invalid("set file", format!("unsupported version {version}")).into());
        }
        let name = r.short_str()?;
        let param_set: ParamSet = name.parse().map_err(|_| DecodeError::invalid("parameter set", name))?;
        let params = param_set.params();
        let roster = (0..r.u8()?).map(|_| r.short_str()).collect::<Result<Vec<_>, _>>()?;
        let label =
            String::from_utf8(r.bytes()?.to_vec()).map_err(|e| DecodeError::invalid("set label", e.to_string()))?;
        let flags = r.u8()?;
        if flags & !(FLAG_DISTANCE | FLAG_OWNER) != 0 {
            return Err(DecodeError::invalid("set file flags", format!("{flags:#04x}")).into());
        }
        let n = r.u64()? as usize;
        let record = AgencyCiphertext::wire_len(&params)
            + usize::from(flags & FLAG_DISTANCE != 0)
            + usize::from(flags & FLAG_OWNER != 0);
        if r.remaining() != n.saturating_mul(record) {
            return Err(DecodeError::invalid("set file", "record count does not match file length").into());
        }
        let mut ciphertexts = Vec::with_capacity(n);
        let mut distances = (flags & FLAG_DISTANCE != 0).then(|| Vec::with_capacity(n));
        let mut owners = (flags & FLAG_OWNER != 0).then(|| Vec::with_capacity(n));
        for _ in 0..n {
            ciphertexts.push(AgencyCiphertext::read(&params, &mut r)?);
            if let Some(d) = &mut distances {
                d.push(r.u8()?);
            }
            if let Some(o) = &mut owners {
                o.push(TelecomId(r.u8()?));
            }
        }
        r.finish()?;
        Ok(SetFile { param_set, roster, set: EncryptedSet { label, ciphertexts }, distances, owners })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), SetFileError> {
        Ok(fs::write(path, self.to_bytes()?)?)
    }

    pub fn read_from(path: &Path) -> Result<Self, SetFileError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
