//! Identity-based identification: SETUP, EXTRACT, PROVE and VERIFY.
//!
//! The master public key holds two distinct points `y1 = [x1]G` and
//! `y2 = [x2]G`. A user key for identity `id` is `s = x1 + α·x2` with
//! `α = H("ibi-id", id)`, so `[s]G = y1 + [α]y2` can be recomputed by anyone
//! holding the master public key. Identification is a three-move
//! proof of knowledge of `s`:
//!
//! ```text
//! prover                          verifier
//!   t <- [1,q), CMT = [t]G   --id, CMT-->
//!                            <--  CHA  --   CHA <- [0,q)
//!   RSP = t + CHA·s          --  RSP  -->
//!                                          accept iff [RSP]G = CMT + [CHA]·P(id)
//! ```

use rand::RngCore;
use thiserror::Error;

use crate::group::{GroupError, PrimeGroup};

/// Domain tag used when hashing identities into the scalar field.
pub const ID_HASH_TAG: &[u8] = b"ibi-id";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IbiError {
    #[error("identity must not be empty")]
    EmptyIdentity,
    #[error("master secret must be non-zero and x1 != x2")]
    InvalidMasterSecret,
    #[error("nonce must be non-zero")]
    ZeroNonce,
    #[error("prover state already consumed; nonces are single-use")]
    NonceConsumed,
    #[error("user key was issued for {issued:?}, not {claimed:?}")]
    IdentityMismatch { issued: String, claimed: String },
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// The verification equation does not hold.
    BadProof,
    /// The commitment or response could not be decoded.
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// α = H("ibi-id", id), the scalar an identity is bound to.
pub fn identity_scalar<G: PrimeGroup>(group: &G, id: &str) -> G::Scalar {
    group.hash_to_scalar(ID_HASH_TAG, id.as_bytes())
}

#[derive(Debug, Clone)]
pub struct MasterPublicKey<G: PrimeGroup> {
    pub group: G,
    pub y1: G::Element,
    pub y2: G::Element,
}

#[derive(Clone)]
struct MasterSecretKey<G: PrimeGroup> {
    x1: G::Scalar,
    x2: G::Scalar,
}

/// SETUP output. The secret half never leaves this struct except through
/// [`MasterKeys::extract`].
#[derive(Clone)]
pub struct MasterKeys<G: PrimeGroup> {
    mpk: MasterPublicKey<G>,
    msk: MasterSecretKey<G>,
}

impl<G: PrimeGroup> std::fmt::Debug for MasterKeys<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MasterKeys").field("mpk", &self.mpk).finish_non_exhaustive()
    }
}

impl<G: PrimeGroup> MasterKeys<G> {
    /// Samples x1, x2 uniformly from `[1, q)`, re-sampling until they differ.
    pub fn setup<R: RngCore + ?Sized>(group: G, rng: &mut R) -> Self {
        loop {
            let x1 = group.random_nonzero_scalar(rng);
            let x2 = group.random_nonzero_scalar(rng);
            if let Ok(keys) = Self::from_secrets(group.clone(), x1, x2) {
                return keys;
            }
        }
    }

    /// Deterministic setup from chosen master secrets.
    pub fn from_secrets(group: G, x1: G::Scalar, x2: G::Scalar) -> Result<Self, IbiError> {
        let zero = group.scalar_zero();
        if x1 == zero || x2 == zero || x1 == x2 {
            return Err(IbiError::InvalidMasterSecret);
        }
        let y1 = group.mul_generator(&x1);
        let y2 = group.mul_generator(&x2);
        Ok(Self { mpk: MasterPublicKey { group, y1, y2 }, msk: MasterSecretKey { x1, x2 } })
    }

    pub fn public(&self) -> &MasterPublicKey<G> {
        &self.mpk
    }

    pub fn group(&self) -> &G {
        &self.mpk.group
    }

    /// EXTRACT: `s = x1 + α·x2 mod q`.
    pub fn extract(&self, id: &str) -> Result<UserSecretKey<G>, IbiError> {
        if id.is_empty() {
            return Err(IbiError::EmptyIdentity);
        }
        let g = &self.mpk.group;
        let alpha = identity_scalar(g, id);
        let s = g.scalar_add(&self.msk.x1, &g.scalar_mul(&alpha, &self.msk.x2));
        Ok(UserSecretKey { id: id.to_owned(), s })
    }
}

impl<G: PrimeGroup> MasterPublicKey<G> {
    /// `P(id) = y1 + [α]y2`; needs no secret material.
    pub fn user_public_key(&self, id: &str) -> G::Element {
        let g = &self.group;
        let alpha = identity_scalar(g, id);
        g.add(&self.y1, &g.mul(&alpha, &self.y2))
    }

    /// Checks a delivered user key against the public parameters.
    pub fn check_user_key(&self, usk: &UserSecretKey<G>) -> bool {
        self.group.mul_generator(&usk.s) == self.user_public_key(&usk.id)
    }

    /// VERIFY: accept iff `[rsp]G = cmt + [cha]·P(id)`.
    pub fn verify(&self, id: &str, cmt: &G::Element, cha: &G::Scalar, rsp: &G::Scalar) -> Verdict {
        let g = &self.group;
        let lhs = g.mul_generator(rsp);
        let rhs = g.add(cmt, &g.mul(cha, &self.user_public_key(id)));
        if lhs == rhs {
            Verdict::Accept
        } else {
            Verdict::Reject(RejectReason::BadProof)
        }
    }

    /// VERIFY on wire encodings; undecodable input is `Malformed`, not `BadProof`.
    pub fn verify_encoded(&self, id: &str, cmt: &[u8], cha: &G::Scalar, rsp: &[u8]) -> Verdict {
        let g = &self.group;
        match (g.decode_element(cmt), g.decode_scalar(rsp)) {
            (Ok(cmt), Ok(rsp)) => self.verify(id, &cmt, cha, &rsp),
            _ => Verdict::Reject(RejectReason::Malformed),
        }
    }
}

#[derive(Clone)]
pub struct UserSecretKey<G: PrimeGroup> {
    id: String,
    s: G::Scalar,
}

impl<G: PrimeGroup> std::fmt::Debug for UserSecretKey<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserSecretKey").field("id", &self.id).finish_non_exhaustive()
    }
}

impl<G: PrimeGroup> UserSecretKey<G> {
    /// Rebuilds a key received over the issuance channel.
    pub fn from_parts(id: impl Into<String>, s: G::Scalar) -> Self {
        Self { id: id.into(), s }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn secret(&self) -> &G::Scalar {
        &self.s
    }
}

/// One-shot prover state holding the ephemeral nonce `t`.
pub struct ProverState<G: PrimeGroup> {
    group: G,
    nonce: Option<G::Scalar>,
    cmt: G::Element,
}

impl<G: PrimeGroup> ProverState<G> {
    /// PROVE, first move: `t <- [1,q)`, `CMT = [t]G`.
    pub fn commit<R: RngCore + ?Sized>(group: G, rng: &mut R) -> Self {
        let t = group.random_nonzero_scalar(rng);
        Self::commit_with_nonce(group, t).expect("sampled nonce is non-zero")
    }

    pub fn commit_with_nonce(group: G, t: G::Scalar) -> Result<Self, IbiError> {
        if t == group.scalar_zero() {
            return Err(IbiError::ZeroNonce);
        }
        let cmt = group.mul_generator(&t);
        Ok(Self { group, nonce: Some(t), cmt })
    }

    pub fn commitment(&self) -> &G::Element {
        &self.cmt
    }

    pub fn is_consumed(&self) -> bool {
        self.nonce.is_none()
    }

    /// PROVE, third move: `RSP = t + cha·s`. The nonce is wiped on first use.
    pub fn respond(&mut self, usk: &UserSecretKey<G>, cha: &G::Scalar) -> Result<G::Scalar, IbiError> {
        let t = self.nonce.take().ok_or(IbiError::NonceConsumed)?;
        let g = &self.group;
        Ok(g.scalar_add(&t, &g.scalar_mul(cha, &usk.s)))
    }
}

/// Verifier's second move: a uniform challenge over the whole scalar field.
pub fn verifier_challenge<G: PrimeGroup, R: RngCore + ?Sized>(group: &G, rng: &mut R) -> G::Scalar {
    group.random_scalar(rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthTranscript<G: PrimeGroup> {
    pub id: String,
    pub cmt: G::Element,
    pub cha: G::Scalar,
    pub rsp: G::Scalar,
    pub verdict: Verdict,
}

/// Verifier side of a single session: opened on (id, CMT), then challenged,
/// then closed with the response. Each step consumes the previous state.
pub struct VerifierSession<'a, G: PrimeGroup> {
    mpk: &'a MasterPublicKey<G>,
    id: String,
    cmt: G::Element,
}

pub struct ChallengedSession<'a, G: PrimeGroup> {
    inner: VerifierSession<'a, G>,
    cha: G::Scalar,
}

impl<'a, G: PrimeGroup> VerifierSession<'a, G> {
    pub fn open(mpk: &'a MasterPublicKey<G>, id: &str, cmt: &[u8]) -> Result<Self, RejectReason> {
        if id.is_empty() {
            return Err(RejectReason::Malformed);
        }
        let cmt = mpk.group.decode_element(cmt).map_err(|_| RejectReason::Malformed)?;
        Ok(Self { mpk, id: id.to_owned(), cmt })
    }

    pub fn challenge<R: RngCore + ?Sized>(self, rng: &mut R) -> ChallengedSession<'a, G> {
        let cha = verifier_challenge(&self.mpk.group, rng);
        ChallengedSession { inner: self, cha }
    }

    pub fn challenge_with(self, cha: G::Scalar) -> ChallengedSession<'a, G> {
        ChallengedSession { inner: self, cha }
    }
}

impl<'a, G: PrimeGroup> ChallengedSession<'a, G> {
    pub fn challenge_value(&self) -> &G::Scalar {
        &self.cha
    }

    pub fn finish(self, rsp: G::Scalar) -> AuthTranscript<G> {
        let s = self.inner;
        let verdict = s.mpk.verify(&s.id, &s.cmt, &self.cha, &rsp);
        AuthTranscript { id: s.id, cmt: s.cmt, cha: self.cha, rsp, verdict }
    }
}

/// Honest-verifier simulator: picks (cha, rsp) first and solves for the
/// commitment, `cmt = [rsp]G - [cha]P(id)`.
pub fn simulate_commitment<G: PrimeGroup>(
    mpk: &MasterPublicKey<G>,
    id: &str,
    cha: &G::Scalar,
    rsp: &G::Scalar,
) -> G::Element {
    let g = &mpk.group;
    let shift = g.mul(cha, &mpk.user_public_key(id));
    g.add(&g.mul_generator(rsp), &g.neg(&shift))
}

/// Special-soundness extractor: two accepting responses to distinct
/// challenges under the same commitment reveal `s = (z1 - z2)/(c1 - c2)`.
pub fn extract_witness<G: PrimeGroup>(
    group: &G,
    (c1, z1): (&G::Scalar, &G::Scalar),
    (c2, z2): (&G::Scalar, &G::Scalar),
) -> Result<G::Scalar, IbiError> {
    let dc = group.scalar_sub(c1, c2);
    let dz = group.scalar_sub(z1, z2);
    Ok(group.scalar_mul(&dz, &group.scalar_inv(&dc)?))
}
