//! The quadratic-residue subgroup of a safe-prime field.
//!
//! Every agency-side primitive (ElGamal, Pohlig-Hellman, identifier encoding)
//! works in the order-`q` subgroup of `Z_p^*` where `p = 2q + 1`.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rug::integer::{IsPrime, Order};
use rug::Integer;

use super::CryptoError;
use crate::codec::DecodeError;

/// RFC 3526 group 14.
const PROD_2048_P: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3BE39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// A 512-bit safe prime with `p = 7 mod 8`, so 2 is a residue.
const TEST_512_P: &str = "E7BCF49693B728AD5FE0EF2B05743738305666885C88E802B01DA80136F356FF8F7F56B16905FB11EEB7B59DF01A9DCFBD3B96B389206E1E511894D0FE1C41DF";

/// Secret exponents for the 2048-bit group are drawn from `[1, 2^256)`.
const PROD_EXPONENT_BITS: u32 = 256;

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamSet {
    /// p = 23; small enough to enumerate every key and plaintext.
    Toy23,
    Test512,
    Prod2048,
}

impl ParamSet {
    pub const ALL: [ParamSet; 3] = [ParamSet::Toy23, ParamSet::Test512, ParamSet::Prod2048];

    pub fn name(self) -> &'static str {
        match self {
            ParamSet::Toy23 => "toy-23",
            ParamSet::Test512 => "test-512",
            ParamSet::Prod2048 => "prod-2048",
        }
    }

    /// Shared, validated parameters for this set.
    pub fn params(self) -> Arc<GroupParams> {
        static CACHE: [OnceLock<Arc<GroupParams>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        let slot = &CACHE[self as usize];
        slot.get_or_init(|| Arc::new(GroupParams::build(self))).clone()
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamSet {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParamSet::ALL
            .into_iter()
            .find(|set| set.name() == s)
            .ok_or_else(|| CryptoError::UnknownParamSet(s.to_owned()))
    }
}

/// An element of the order-`q` subgroup, reduced into `[1, p)`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupElement(Integer);

impl GroupElement {
    pub fn as_integer(&self) -> &Integer {
        &self.0
    }

    pub fn into_integer(self) -> Integer {
        self.0
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", self.0)
    }
}

/// An identifier mapped into the subgroup by [`GroupParams::encode_id`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedPlaintext {
    pub element: GroupElement,
}

pub struct GroupParams {
    set: ParamSet,
    p: Integer,
    q: Integer,
    g: GroupElement,
    byte_len: usize,
    exponent_bits: Option<u32>,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("set", &self.set)
            .field("bits", &self.p.significant_bits())
            .field("exponent_bits", &self.exponent_bits)
            .finish()
    }
}

impl GroupParams {
    fn build(set: ParamSet) -> Self {
        let (p, g, exponent_bits) = match set {
            ParamSet::Toy23 => (Integer::from(23), 2u32, None),
            ParamSet::Test512 => (Integer::from_str_radix(TEST_512_P, 16).unwrap(), 2, None),
            ParamSet::Prod2048 => {
                (Integer::from_str_radix(PROD_2048_P, 16).unwrap(), 2, Some(PROD_EXPONENT_BITS))
            }
        };
        let params = Self::from_parts(set, p, Integer::from(g), exponent_bits);
        params.validate().expect("built-in parameter set failed validation");
        params
    }

    fn from_parts(set: ParamSet, p: Integer, g: Integer, exponent_bits: Option<u32>) -> Self {
        let q = Integer::from(&p - 1u32) >> 1;
        let byte_len = (p.significant_bits() as usize).div_ceil(8);
        GroupParams { set, p, q, g: GroupElement(g), byte_len, exponent_bits }
    }

    /// Checks that `p` and `q` are prime, `p = 2q + 1`, and `g` has order `q`.
    pub fn validate(&self) -> Result<(), CryptoError> {
        let bad = |why: &str| Err(CryptoError::InvalidParams(format!("{}: {why}", self.set)));
        if self.p.is_probably_prime(40) == IsPrime::No || self.q.is_probably_prime(40) == IsPrime::No {
            return bad("p or q is composite");
        }
        if Integer::from(&self.q * 2u32) + 1u32 != self.p {
            return bad("p != 2q + 1");
        }
        let g = self.g.as_integer();
        if *g <= 1 || *g >= self.p || self.pow_int(g, &self.q) != 1 {
            return bad("g does not generate the order-q subgroup");
        }
        if let Some(bits) = self.exponent_bits {
            if bits >= self.q.significant_bits() {
                return bad("short exponent width not below q");
            }
        }
        Ok(())
    }

    pub fn set(&self) -> ParamSet {
        self.set
    }

    pub fn p(&self) -> &Integer {
        &self.p
    }

    pub fn q(&self) -> &Integer {
        &self.q
    }

    pub fn generator(&self) -> &GroupElement {
        &self.g
    }

    /// Width in bytes of a serialized group element.
    pub fn element_len(&self) -> usize {
        self.byte_len
    }

    /// Largest encodable identifier, `q - 1`, saturated to `u64`.
    pub fn max_identifier(&self) -> u64 {
        Integer::from(&self.q - 1u32).to_u64().unwrap_or(u64::MAX)
    }

    fn pow_int(&self, base: &Integer, exp: &Integer) -> Integer {
        Integer::from(base.pow_mod_ref(exp, &self.p).expect("modulus is nonzero"))
    }

    pub fn pow(&self, base: &GroupElement, exp: &Integer) -> GroupElement {
        GroupElement(self.pow_int(&base.0, exp))
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement(Integer::from(&a.0 * &b.0) % &self.p)
    }

    pub fn inv(&self, a: &GroupElement) -> GroupElement {
        GroupElement(Integer::from(a.0.invert_ref(&self.p).expect("subgroup elements are units")))
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(Integer::from(1))
    }

    /// Quadratic-residue membership via the Legendre symbol; for a safe prime
    /// the residues are exactly the order-`q` subgroup.
    pub fn contains(&self, x: &Integer) -> bool {
        *x >= 1 && *x < self.p && x.legendre(&self.p) == 1
    }

    pub fn element(&self, x: Integer) -> Result<GroupElement, CryptoError> {
        if self.contains(&x) {
            Ok(GroupElement(x))
        } else {
            Err(CryptoError::NotInSubgroup)
        }
    }

    /// Slow reference check `x^q == 1`, kept separate from [`Self::contains`].
    pub fn has_order_q(&self, x: &GroupElement) -> bool {
        self.pow_int(&x.0, &self.q) == 1
    }

    /// Uniform exponent in `[1, q-1]`, or in `[1, 2^b)` for short-exponent sets.
    pub fn random_exponent<R: Rng + ?Sized>(&self, rng: &mut R) -> Integer {
        let bits = self.exponent_bits.unwrap_or(self.q.significant_bits());
        let nbytes = (bits as usize).div_ceil(8);
        let mut buf = vec![0u8; nbytes];
        loop {
            rng.fill_bytes(&mut buf);
            let extra = nbytes as u32 * 8 - bits;
            buf[0] &= 0xffu8 >> extra;
            let e = Integer::from_digits(&buf, Order::Msf);
            if e != 0 && e < self.q {
                return e;
            }
        }
    }

    /// Maps an identifier `m` in `[1, q-1]` to `m` when it is a residue and to
    /// `p - m` otherwise. Since `p = 3 mod 4`, `-1` is a non-residue, so
    /// exactly one of the two lies in the subgroup.
    pub fn encode_id(&self, m: u64) -> Result<EncodedPlaintext, CryptoError> {
        if m == 0 || m > self.max_identifier() {
            return Err(CryptoError::IdentifierOutOfRange { id: m, max: self.max_identifier() });
        }
        let m = Integer::from(m);
        let element = if m.legendre(&self.p) == 1 { m } else { Integer::from(&self.p - &m) };
        Ok(EncodedPlaintext { element: GroupElement(element) })
    }

    pub fn decode_id(&self, e: &EncodedPlaintext) -> Result<u64, CryptoError> {
        let x = e.element.as_integer();
        let m = if *x < self.q { x.clone() } else { Integer::from(&self.p - x) };
        m.to_u64().filter(|&v| v != 0).ok_or(CryptoError::NotAnIdentifier)
    }

    /// Fixed-width big-endian encoding.
    pub fn element_to_bytes(&self, e: &GroupElement) -> Vec<u8> {
        let mut out = vec![0u8; self.byte_len];
        let digits = e.0.to_digits::<u8>(Order::Msf);
        out[self.byte_len - digits.len()..].copy_from_slice(&digits);
        out
    }

    pub fn write_element(&self, e: &GroupElement, out: &mut Vec<u8>) {
        let digits = e.0.to_digits::<u8>(Order::Msf);
        out.resize(out.len() + self.byte_len - digits.len(), 0);
        out.extend_from_slice(&digits);
    }

    pub fn element_from_bytes(&self, bytes: &[u8]) -> Result<GroupElement, DecodeError> {
        if bytes.len() != self.byte_len {
            return Err(DecodeError::invalid(
                "group element",
                format!("expected {} bytes, got {}", self.byte_len, bytes.len()),
            ));
        }
        let x = Integer::from_digits(bytes, Order::Msf);
        self.element(x).map_err(|_| DecodeError::invalid("group element", "not in the order-q subgroup"))
    }
}
