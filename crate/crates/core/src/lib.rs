//! Accountable, privacy-preserving lawful surveillance primitives.
//!
//! Two protocols share one cryptographic core:
//!
//! * [`intersection`]: agencies convert ElGamal ciphertexts into deterministic
//!   Pohlig-Hellman tags one agency at a time, compare tags, and reveal only
//!   the identifiers present in every input set.
//! * [`chaining`]: agencies run a breadth-first search over a communication
//!   graph split across telecoms, collecting agency ciphertexts for everyone
//!   within `k` hops of a target while never chaining through vertices of
//!   degree above `d`.
//!
//! Parties exchange signed [`transport::Envelope`]s over an in-process or TCP
//! transport; [`anonymity`] provides the sender-hiding broadcast used by the
//! ownership-hiding chaining variant.

pub mod codec;
pub mod crypto;
pub mod party;
pub mod graph;
pub mod intersection;
pub mod transport;
pub mod anonymity;
pub mod metrics;
pub mod deploy;
pub mod chaining;
pub mod bench;
