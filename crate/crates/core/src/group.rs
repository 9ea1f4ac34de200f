//! Prime-order groups used by the identification scheme.
//!
//! Two backends share the [`PrimeGroup`] trait:
//!
//! * [`P256Group`]: the NIST P-256 curve (prime order, cofactor 1).
//! * [`ToyGroup`]: the order-11 subgroup of the integers mod 23, generated
//!   by 2. Small enough that every transcript can be checked by hand.
//!
//! Group elements are written additively throughout (`add`, `mul`); for the
//! toy backend the group law is multiplication mod 23, so `mul(k, P)` is
//! `P^k mod 23`.

use std::collections::HashMap;
use std::fmt;

use p256::elliptic_curve::ops::Reduce;
use p256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p256::elliptic_curve::PrimeField;
use p256::{AffinePoint, EncodedPoint, FieldBytes, ProjectivePoint, U256};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("inversion of zero scalar")]
    ZeroInversion,
    #[error("invalid element encoding: {0}")]
    InvalidElement(String),
    #[error("invalid scalar encoding: {0}")]
    InvalidScalar(String),
}

/// Descriptive parameters of a backend, for logging and config echo.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    pub name: &'static str,
    /// Group order, big-endian hex.
    pub order: String,
    /// Canonical encoding of the generator, hex.
    pub generator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarOp {
    Add,
    Sub,
    Mul,
    Inv,
}

pub trait PrimeGroup: Clone + Send + Sync + fmt::Debug + 'static {
    type Scalar: Copy + Eq + fmt::Debug + Send + Sync + 'static;
    type Element: Copy + Eq + fmt::Debug + Send + Sync + 'static;

    fn name(&self) -> &'static str;
    /// Big-endian bytes of the group order q.
    fn order_be_bytes(&self) -> Vec<u8>;

    fn generator(&self) -> Self::Element;
    fn identity(&self) -> Self::Element;
    fn add(&self, a: &Self::Element, b: &Self::Element) -> Self::Element;
    fn neg(&self, a: &Self::Element) -> Self::Element;
    /// `[k]P`. `k = 0` yields the identity.
    fn mul(&self, k: &Self::Scalar, p: &Self::Element) -> Self::Element;

    fn scalar_zero(&self) -> Self::Scalar;
    fn scalar_one(&self) -> Self::Scalar;
    fn scalar_from_u64(&self, v: u64) -> Self::Scalar;
    fn scalar_add(&self, a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_sub(&self, a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_mul(&self, a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_inv(&self, a: &Self::Scalar) -> Result<Self::Scalar, GroupError>;

    /// Uniform over `[0, q)`.
    fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Self::Scalar;

    /// SHA-256 over the domain tag and data, read as a big-endian integer
    /// and reduced mod q.
    fn hash_to_scalar(&self, tag: &[u8], data: &[u8]) -> Self::Scalar;

    fn encode_element(&self, p: &Self::Element) -> Vec<u8>;
    fn decode_element(&self, bytes: &[u8]) -> Result<Self::Element, GroupError>;
    fn encode_scalar(&self, s: &Self::Scalar) -> Vec<u8>;
    /// Rejects non-canonical encodings (values >= q).
    fn decode_scalar(&self, bytes: &[u8]) -> Result<Self::Scalar, GroupError>;

    /// Uniform over `[1, q)`.
    fn random_nonzero_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Self::Scalar {
        loop {
            let s = self.random_scalar(rng);
            if s != self.scalar_zero() {
                return s;
            }
        }
    }

    fn mul_generator(&self, k: &Self::Scalar) -> Self::Element {
        self.mul(k, &self.generator())
    }

    fn params(&self) -> GroupParams {
        GroupParams {
            name: self.name(),
            order: hex::encode(self.order_be_bytes()),
            generator: hex::encode(self.encode_element(&self.generator())),
        }
    }
}

/// Field arithmetic dispatched on an operator; `Inv` ignores `a` and inverts `b`.
pub fn scalar_arith<G: PrimeGroup>(
    group: &G,
    op: ScalarOp,
    a: &G::Scalar,
    b: &G::Scalar,
) -> Result<G::Scalar, GroupError> {
    Ok(match op {
        ScalarOp::Add => group.scalar_add(a, b),
        ScalarOp::Sub => group.scalar_sub(a, b),
        ScalarOp::Mul => group.scalar_mul(a, b),
        ScalarOp::Inv => group.scalar_inv(b)?,
    })
}

fn tagged_digest(tag: &[u8], data: &[u8]) -> [u8; 32] {
    // The tag is length-prefixed so that (tag, data) splits are unambiguous.
    let mut h = Sha256::new();
    h.update((tag.len() as u32).to_be_bytes());
    h.update(tag);
    h.update(data);
    h.finalize().into()
}

// ---------------------------------------------------------------------------
// P-256
// ---------------------------------------------------------------------------

fn field_bytes(bytes: &[u8]) -> FieldBytes {
    let mut out = FieldBytes::default();
    out.copy_from_slice(bytes);
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct P256Group;

impl PrimeGroup for P256Group {
    type Scalar = p256::Scalar;
    type Element = ProjectivePoint;

    fn name(&self) -> &'static str {
        "p256"
    }

    fn order_be_bytes(&self) -> Vec<u8> {
        use p256::elliptic_curve::bigint::Encoding;
        use p256::elliptic_curve::Curve;
        p256::NistP256::ORDER.to_be_bytes().to_vec()
    }

    fn generator(&self) -> ProjectivePoint {
        ProjectivePoint::GENERATOR
    }

    fn identity(&self) -> ProjectivePoint {
        ProjectivePoint::IDENTITY
    }

    fn add(&self, a: &ProjectivePoint, b: &ProjectivePoint) -> ProjectivePoint {
        a + b
    }

    fn neg(&self, a: &ProjectivePoint) -> ProjectivePoint {
        -a
    }

    fn mul(&self, k: &p256::Scalar, p: &ProjectivePoint) -> ProjectivePoint {
        p * k
    }

    fn scalar_zero(&self) -> p256::Scalar {
        p256::Scalar::ZERO
    }

    fn scalar_one(&self) -> p256::Scalar {
        p256::Scalar::ONE
    }

    fn scalar_from_u64(&self, v: u64) -> p256::Scalar {
        p256::Scalar::from(v)
    }

    fn scalar_add(&self, a: &p256::Scalar, b: &p256::Scalar) -> p256::Scalar {
        a + b
    }

    fn scalar_sub(&self, a: &p256::Scalar, b: &p256::Scalar) -> p256::Scalar {
        a - b
    }

    fn scalar_mul(&self, a: &p256::Scalar, b: &p256::Scalar) -> p256::Scalar {
        a * b
    }

    fn scalar_inv(&self, a: &p256::Scalar) -> Result<p256::Scalar, GroupError> {
        Option::from(a.invert()).ok_or(GroupError::ZeroInversion)
    }

    fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> p256::Scalar {
        // Rejection sampling keeps the distribution exactly uniform.
        let mut bytes = FieldBytes::default();
        loop {
            rng.fill_bytes(&mut bytes);
            if let Some(s) = Option::from(p256::Scalar::from_repr(bytes)) {
                return s;
            }
        }
    }

    fn hash_to_scalar(&self, tag: &[u8], data: &[u8]) -> p256::Scalar {
        let digest = tagged_digest(tag, data);
        <p256::Scalar as Reduce<U256>>::reduce_bytes(&field_bytes(&digest))
    }

    fn encode_element(&self, p: &ProjectivePoint) -> Vec<u8> {
        p.to_affine().to_encoded_point(true).as_bytes().to_vec()
    }

    fn decode_element(&self, bytes: &[u8]) -> Result<ProjectivePoint, GroupError> {
        let encoded = EncodedPoint::from_bytes(bytes)
            .map_err(|e| GroupError::InvalidElement(format!("sec1: {e}")))?;
        let affine: Option<AffinePoint> = AffinePoint::from_encoded_point(&encoded).into();
        let affine = affine.ok_or_else(|| GroupError::InvalidElement("not on curve".into()))?;
        let point = ProjectivePoint::from(affine);
        // Only canonical compressed encodings (or the identity tag) round-trip.
        if self.encode_element(&point) != bytes {
            return Err(GroupError::InvalidElement("non-canonical encoding".into()));
        }
        Ok(point)
    }

    fn encode_scalar(&self, s: &p256::Scalar) -> Vec<u8> {
        s.to_repr().to_vec()
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<p256::Scalar, GroupError> {
        if bytes.len() != 32 {
            return Err(GroupError::InvalidScalar(format!("expected 32 bytes, got {}", bytes.len())));
        }
        Option::from(p256::Scalar::from_repr(field_bytes(bytes)))
            .ok_or_else(|| GroupError::InvalidScalar("value not below group order".into()))
    }
}

// ---------------------------------------------------------------------------
// Toy group: order-11 subgroup of (Z/23Z)*, generator 2
// ---------------------------------------------------------------------------

const TOY_P: u64 = 23;
const TOY_Q: u64 = 11;
const TOY_G: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToyScalar(u8);

impl ToyScalar {
    pub fn value(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToyElement(u8);

impl ToyElement {
    pub fn value(self) -> u8 {
        self.0
    }
}

/// Tiny deterministic group for hand-checkable test vectors.
///
/// `hash_to_scalar` can be overridden per (tag, data) pair with a fixture
/// table, which lets tests pin the identity hash to a chosen value.
#[derive(Debug, Clone, Default)]
pub struct ToyGroup {
    hash_fixtures: HashMap<(Vec<u8>, Vec<u8>), u8>,
}

impl ToyGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_hash_fixture(mut self, tag: &str, data: &str, value: u64) -> Self {
        self.hash_fixtures
            .insert((tag.as_bytes().to_vec(), data.as_bytes().to_vec()), (value % TOY_Q) as u8);
        self
    }

    pub fn scalar(&self, v: u64) -> ToyScalar {
        ToyScalar((v % TOY_Q) as u8)
    }

    /// Builds an element from its residue mod 23, checking subgroup membership.
    pub fn element(&self, v: u64) -> Result<ToyElement, GroupError> {
        self.decode_element(&[(v % 256) as u8]).and_then(|e| {
            if v < TOY_P {
                Ok(e)
            } else {
                Err(GroupError::InvalidElement(format!("{v} is not reduced mod {TOY_P}")))
            }
        })
    }

    fn is_member(v: u64) -> bool {
        v != 0 && v < TOY_P && pow_mod(v, TOY_Q, TOY_P) == 1
    }
}

fn pow_mod(mut base: u64, mut exp: u64, modulus: u64) -> u64 {
    let mut acc = 1 % modulus;
    base %= modulus;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % modulus;
        }
        base = base * base % modulus;
        exp >>= 1;
    }
    acc
}

impl PrimeGroup for ToyGroup {
    type Scalar = ToyScalar;
    type Element = ToyElement;

    fn name(&self) -> &'static str {
        "toy23"
    }

    fn order_be_bytes(&self) -> Vec<u8> {
        vec![TOY_Q as u8]
    }

    fn generator(&self) -> ToyElement {
        ToyElement(TOY_G as u8)
    }

    fn identity(&self) -> ToyElement {
        ToyElement(1)
    }

    fn add(&self, a: &ToyElement, b: &ToyElement) -> ToyElement {
        ToyElement((a.0 as u64 * b.0 as u64 % TOY_P) as u8)
    }

    fn neg(&self, a: &ToyElement) -> ToyElement {
        // a^(q-1) is the inverse inside the order-q subgroup.
        ToyElement(pow_mod(a.0 as u64, TOY_Q - 1, TOY_P) as u8)
    }

    fn mul(&self, k: &ToyScalar, p: &ToyElement) -> ToyElement {
        ToyElement(pow_mod(p.0 as u64, k.0 as u64, TOY_P) as u8)
    }

    fn scalar_zero(&self) -> ToyScalar {
        ToyScalar(0)
    }

    fn scalar_one(&self) -> ToyScalar {
        ToyScalar(1)
    }

    fn scalar_from_u64(&self, v: u64) -> ToyScalar {
        self.scalar(v)
    }

    fn scalar_add(&self, a: &ToyScalar, b: &ToyScalar) -> ToyScalar {
        ToyScalar(((a.0 as u64 + b.0 as u64) % TOY_Q) as u8)
    }

    fn scalar_sub(&self, a: &ToyScalar, b: &ToyScalar) -> ToyScalar {
        ToyScalar(((a.0 as u64 + TOY_Q - b.0 as u64) % TOY_Q) as u8)
    }

    fn scalar_mul(&self, a: &ToyScalar, b: &ToyScalar) -> ToyScalar {
        ToyScalar((a.0 as u64 * b.0 as u64 % TOY_Q) as u8)
    }

    fn scalar_inv(&self, a: &ToyScalar) -> Result<ToyScalar, GroupError> {
        if a.0 == 0 {
            return Err(GroupError::ZeroInversion);
        }
        // Fermat: a^(q-2) mod q.
        Ok(ToyScalar(pow_mod(a.0 as u64, TOY_Q - 2, TOY_Q) as u8))
    }

    fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> ToyScalar {
        // 256 mod 11 != 0, so reject the biased tail of a byte.
        let limit = (256 / TOY_Q * TOY_Q) as u32;
        loop {
            let b = rng.next_u32() & 0xff;
            if b < limit {
                return ToyScalar((b as u64 % TOY_Q) as u8);
            }
        }
    }

    fn hash_to_scalar(&self, tag: &[u8], data: &[u8]) -> ToyScalar {
        if let Some(v) = self.hash_fixtures.get(&(tag.to_vec(), data.to_vec())) {
            return ToyScalar(*v);
        }
        let digest = tagged_digest(tag, data);
        let reduced = digest.iter().fold(0u64, |acc, b| (acc * 256 + *b as u64) % TOY_Q);
        ToyScalar(reduced as u8)
    }

    fn encode_element(&self, p: &ToyElement) -> Vec<u8> {
        vec![p.0]
    }

    fn decode_element(&self, bytes: &[u8]) -> Result<ToyElement, GroupError> {
        match bytes {
            [v] if Self::is_member(*v as u64) => Ok(ToyElement(*v)),
            [v] => Err(GroupError::InvalidElement(format!("{v} is not in the order-11 subgroup"))),
            _ => Err(GroupError::InvalidElement(format!("expected 1 byte, got {}", bytes.len()))),
        }
    }

    fn encode_scalar(&self, s: &ToyScalar) -> Vec<u8> {
        vec![s.0]
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<ToyScalar, GroupError> {
        match bytes {
            [v] if (*v as u64) < TOY_Q => Ok(ToyScalar(*v)),
            [v] => Err(GroupError::InvalidScalar(format!("{v} not below {TOY_Q}"))),
            _ => Err(GroupError::InvalidScalar(format!("expected 1 byte, got {}", bytes.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Independent integer oracles for the toy group.
    fn oracle_pow(b: u64, e: u64) -> u64 {
        (0..e).fold(1, |acc, _| acc * b % 23)
    }

    fn oracle_inv_mod11(a: u64) -> u64 {
        (1..11).find(|x| a * x % 11 == 1).unwrap()
    }

    #[test]
    fn toy_scalar_examples() {
        let g = ToyGroup::new();
        let two_times_one = g.scalar_mul(&g.scalar(2), &g.scalar(1));
        assert_eq!(g.scalar_add(&g.scalar(7), &two_times_one), g.scalar((7 + 2) % 11));
        assert_eq!(g.scalar_add(&g.scalar(7), &two_times_one), g.scalar(9));
        assert_eq!(g.scalar_inv(&g.scalar(3)).unwrap(), g.scalar(oracle_inv_mod11(3)));
        assert_eq!(g.scalar_inv(&g.scalar(3)).unwrap(), g.scalar(4));
        for a in 0..11 {
            assert_eq!(g.scalar_mul(&g.scalar(a), &g.scalar_one()), g.scalar(a));
        }
    }

    #[test]
    fn inverse_of_zero_is_an_error() {
        let g = ToyGroup::new();
        assert_eq!(g.scalar_inv(&g.scalar_zero()), Err(GroupError::ZeroInversion));
        assert_eq!(
            scalar_arith(&P256Group, ScalarOp::Inv, &p256::Scalar::ONE, &p256::Scalar::ZERO),
            Err(GroupError::ZeroInversion)
        );
    }

    #[test]
    fn scalar_arith_dispatch() {
        let g = ToyGroup::new();
        let (a, b) = (g.scalar(7), g.scalar(5));
        assert_eq!(scalar_arith(&g, ScalarOp::Add, &a, &b).unwrap(), g.scalar(1));
        assert_eq!(scalar_arith(&g, ScalarOp::Sub, &a, &b).unwrap(), g.scalar(2));
        assert_eq!(scalar_arith(&g, ScalarOp::Sub, &b, &a).unwrap(), g.scalar(9));
        assert_eq!(scalar_arith(&g, ScalarOp::Mul, &a, &b).unwrap(), g.scalar(2));
        assert_eq!(scalar_arith(&g, ScalarOp::Inv, &a, &b).unwrap(), g.scalar(9));
    }

    #[test]
    fn toy_point_examples() {
        let g = ToyGroup::new();
        let gen = g.generator();
        assert_eq!(g.mul(&g.scalar(3), &gen).value() as u64, oracle_pow(2, 3));
        assert_eq!(g.mul(&g.scalar(3), &gen).value(), 8);
        assert_eq!(g.mul(&g.scalar_zero(), &gen), g.identity());
        assert_eq!(g.mul(&g.scalar(11), &gen), g.identity());
        let p8 = g.element(8).unwrap();
        let p16 = g.element(16).unwrap();
        assert_eq!(g.add(&p8, &p16).value(), (8 * 16 % 23) as u8);
        // 2^3 * 2^4 = 2^7 = 13 (mod 23).
        assert_eq!(g.add(&p8, &p16).value(), 13);
        assert_eq!(g.add(&p8, &g.identity()), p8);
        assert_eq!(g.add(&p8, &g.mul(&g.scalar(10), &p8)), g.identity());
        assert_eq!(g.add(&p8, &g.neg(&p8)), g.identity());
    }

    #[test]
    fn toy_subgroup_enumeration() {
        let g = ToyGroup::new();
        let mut image: Vec<u8> =
            (1..=11).map(|k| g.mul(&g.scalar(k), &g.generator()).value()).collect();
        let mut expected: Vec<u8> = (1..=11).map(|k| oracle_pow(2, k) as u8).collect();
        assert_eq!(expected, vec![2, 4, 8, 16, 9, 18, 13, 3, 6, 12, 1]);
        image.sort_unstable();
        expected.sort_unstable();
        assert_eq!(image, expected);
        // Decoding accepts exactly those residues.
        let members: Vec<u8> = (0..=255u8).filter(|v| g.decode_element(&[*v]).is_ok()).collect();
        assert_eq!(members, expected);
    }

    #[test]
    fn p256_identity_and_order() {
        let g = P256Group;
        assert_eq!(g.mul(&g.scalar_zero(), &g.generator()), g.identity());
        // q reduces to zero in the scalar field.
        let q = <p256::Scalar as Reduce<U256>>::reduce_bytes(&field_bytes(&g.order_be_bytes()));
        assert_eq!(q, p256::Scalar::ZERO);
        let q_minus_one = g.scalar_sub(&g.scalar_zero(), &g.scalar_one());
        let p = g.mul(&g.scalar_from_u64(12345), &g.generator());
        assert_eq!(g.add(&p, &g.mul(&q_minus_one, &p)), g.identity());
    }

    #[test]
    fn p256_base_point_encoding() {
        let g = P256Group;
        // Published SEC1 compressed encoding of the P-256 base point.
        let expected =
            hex::decode("036b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296").unwrap();
        assert_eq!(g.encode_element(&g.generator()), expected);
        assert_eq!(g.decode_element(&expected).unwrap(), g.generator());
    }

    #[test]
    fn decode_rejects_garbage() {
        let g = P256Group;
        assert!(g.decode_element(&[0u8; 33]).is_err());
        assert!(g.decode_element(&[]).is_err());
        let mut bad = g.encode_element(&g.generator());
        bad[5] ^= 0x40;
        // Either off-curve or a different valid point; never the generator.
        if let Ok(p) = g.decode_element(&bad) {
            assert_ne!(p, g.generator());
        }
        assert!(g.decode_scalar(&[0xff; 32]).is_err());
        assert!(g.decode_scalar(&[1; 31]).is_err());

        let t = ToyGroup::new();
        assert!(t.decode_element(&[0]).is_err());
        assert!(t.decode_element(&[5]).is_err());
        assert!(t.decode_element(&[2, 2]).is_err());
        assert!(t.decode_scalar(&[11]).is_err());
    }

    #[test]
    fn hash_to_scalar_determinism_and_domain_separation() {
        let g = P256Group;
        assert_eq!(g.hash_to_scalar(b"tag", b"data"), g.hash_to_scalar(b"tag", b"data"));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut data = [0u8; 16];
            rng.fill_bytes(&mut data);
            assert_ne!(g.hash_to_scalar(b"ibi-id", &data), g.hash_to_scalar(b"other", &data));
        }
        let t = ToyGroup::new().with_hash_fixture("ibi-id", "client-7", 5);
        assert_eq!(t.hash_to_scalar(b"ibi-id", b"client-7"), t.scalar(5));
        assert_eq!(t.hash_to_scalar(b"ibi-id", b"client-8"), t.hash_to_scalar(b"ibi-id", b"client-8"));
    }

    #[test]
    fn random_scalars_cover_toy_field() {
        let g = ToyGroup::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 11];
        for _ in 0..500 {
            seen[g.random_scalar(&mut rng).value() as usize] = true;
            assert_ne!(g.random_nonzero_scalar(&mut rng), g.scalar_zero());
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn params_describe_backends() {
        assert_eq!(ToyGroup::new().params().order, "0b");
        assert_eq!(ToyGroup::new().params().generator, "02");
        let p = P256Group.params();
        assert_eq!(p.name, "p256");
        assert!(p.order.starts_with("ffffffff00000000ffffffffffffffffbce6faada7179e84"));
    }
}
