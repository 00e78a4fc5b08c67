//! Party identities shared by every protocol message.

use std::fmt;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{AgencyId, TelecomId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartyId {
    Agency(u8),
    Telecom(u8),
    /// The simulated anonymous-broadcast service.
    AnonHub,
}

impl PartyId {
    pub const LEAD: PartyId = PartyId::Agency(0);

    pub fn agency(id: AgencyId) -> Self {
        PartyId::Agency(id.0)
    }

    pub fn telecom(id: TelecomId) -> Self {
        PartyId::Telecom(id.0)
    }

    pub fn is_agency(self) -> bool {
        matches!(self, PartyId::Agency(_))
    }

    pub fn is_telecom(self) -> bool {
        matches!(self, PartyId::Telecom(_))
    }

    pub fn write(self, w: &mut Writer) {
        let (role, idx) = match self {
            PartyId::Agency(i) => (1, i),
            PartyId::Telecom(i) => (2, i),
            PartyId::AnonHub => (3, 0),
        };
        w.u8(role).u8(idx);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let role = r.u8()?;
        let idx = r.u8()?;
        match role {
            1 => Ok(PartyId::Agency(idx)),
            2 => Ok(PartyId::Telecom(idx)),
            3 => Ok(PartyId::AnonHub),
            other => Err(DecodeError::invalid("party role", other.to_string())),
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Agency(i) => write!(f, "agency-{i}"),
            PartyId::Telecom(i) => write!(f, "telecom-{i}"),
            PartyId::AnonHub => f.write_str("anon-hub"),
        }
    }
}
