//! Poisoned-update crafting and the reconnecting-attacker state machine.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("ALIE needs at least one cohort update")]
    EmptyCohort,
    #[error("cohort updates have different lengths")]
    RaggedCohort,
    #[error("invalid attack parameter: {0}")]
    InvalidParams(String),
    #[error("no transitions out of Banned (event {0:?})")]
    Terminal(RmcEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianMode {
    /// Noise is added to the honestly trained update.
    Additive,
    /// Noise replaces the update outright.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlieSign {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
    pub mode: GaussianMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlieParams {
    pub z: f64,
    pub sign: AlieSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub gaussian: GaussianParams,
    pub alie: AlieParams,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            gaussian: GaussianParams { mu: 2.0, sigma: 2.0, mode: GaussianMode::Additive },
            alie: AlieParams { z: 0.9, sign: AlieSign::Minus },
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<(), AttackError> {
        let g = &self.gaussian;
        if !(g.sigma >= 0.0 && g.sigma.is_finite() && g.mu.is_finite()) {
            return Err(AttackError::InvalidParams(format!("gaussian mu={} sigma={}", g.mu, g.sigma)));
        }
        if !(self.alie.z >= 0.0 && self.alie.z.is_finite()) {
            return Err(AttackError::InvalidParams(format!("alie z={}", self.alie.z)));
        }
        Ok(())
    }
}

/// Per-coordinate `N(mu, sigma²)` noise, independent across coordinates.
pub fn gaussian_attack<R: RngCore + ?Sized>(
    honest: &ParamVector,
    params: &GaussianParams,
    rng: &mut R,
) -> Result<ParamVector, AttackError> {
    let noise = Normal::new(params.mu, params.sigma)
        .map_err(|e| AttackError::InvalidParams(e.to_string()))?;
    Ok(ParamVector(
        honest
            .0
            .iter()
            .map(|h| {
                let n = noise.sample(rng);
                match params.mode {
                    GaussianMode::Additive => h + n,
                    GaussianMode::Replace => n,
                }
            })
            .collect(),
    ))
}

/// A Little Is Enough: every colluding client submits `μ ∓ z·σ`, where `μ`
/// and `σ` are the coordinate-wise mean and population standard deviation
/// of the cohort's honestly trained updates.
pub fn alie_attack(cohort: &[&ParamVector], params: &AlieParams) -> Result<ParamVector, AttackError> {
    let first = cohort.first().ok_or(AttackError::EmptyCohort)?;
    if cohort.iter().any(|v| v.len() != first.len()) {
        return Err(AttackError::RaggedCohort);
    }
    let n = cohort.len() as f64;
    let sign = match params.sign {
        AlieSign::Minus => -1.0,
        AlieSign::Plus => 1.0,
    };
    Ok(ParamVector(
        (0..first.len())
            .map(|j| {
                let mean = cohort.iter().map(|v| v.0[j]).sum::<f64>() / n;
                let var = cohort.iter().map(|v| (v.0[j] - mean).powi(2)).sum::<f64>() / n;
                mean + sign * params.z * var.sqrt()
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RmcPhase {
    GaussianPhase,
    AliePhase,
    Banned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RmcEvent {
    Connected,
    Flagged,
    ForceDisconnected,
    ReconnectDenied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RmcState {
    pub phase: RmcPhase,
    pub disconnect_count: u32,
}

impl Default for RmcState {
    fn default() -> Self {
        Self { phase: RmcPhase::GaussianPhase, disconnect_count: 0 }
    }
}

impl RmcState {
    /// After a forced disconnect the attacker switches to ALIE and tries to
    /// reconnect straight away; a denied reconnect retires the identity.
    pub fn transition(self, event: RmcEvent) -> Result<RmcState, AttackError> {
        use RmcEvent::*;
        use RmcPhase::*;
        match (self.phase, event) {
            (Banned, e) => Err(AttackError::Terminal(e)),
            (_, Connected | Flagged) => Ok(self),
            (GaussianPhase | AliePhase, ForceDisconnected) => {
                Ok(RmcState { phase: AliePhase, disconnect_count: self.disconnect_count + 1 })
            }
            (_, ReconnectDenied) => Ok(RmcState { phase: Banned, ..self }),
        }
    }

    /// Whether the attacker wants to reconnect after this state was entered
    /// through a forced disconnect.
    pub fn wants_reconnect(&self) -> bool {
        self.phase == RmcPhase::AliePhase
    }
}

pub fn rmc_transition(state: RmcState, event: RmcEvent) -> Result<RmcState, AttackError> {
    state.transition(event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_is_identity() {
        let h = ParamVector(vec![0.5, -1.0, 3.0]);
        let p = GaussianParams { mu: 0.0, sigma: 0.0, mode: GaussianMode::Additive };
        assert_eq!(gaussian_attack(&h, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(), h);
    }

    #[test]
    fn gaussian_is_seeded() {
        let h = ParamVector(vec![0.0; 16]);
        let p = AttackParams::default().gaussian;
        let a = gaussian_attack(&h, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gaussian_attack(&h, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let r = GaussianParams { mode: GaussianMode::Replace, ..p };
        let c = gaussian_attack(&ParamVector(vec![100.0; 16]), &r, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn alie_closed_form() {
        let (a, b, c) = (ParamVector(vec![1.0]), ParamVector(vec![2.0]), ParamVector(vec![3.0]));
        let v = alie_attack(&[&a, &b, &c], &AttackParams::default().alie).unwrap();
        let sigma = (2.0f64 / 3.0).sqrt();
        assert_eq!(v.0[0], 2.0 - 0.9 * sigma);
        assert!((v.0[0] - 1.26515).abs() < 1e-5);
    }

    #[test]
    fn alie_degenerate_cases() {
        let u = ParamVector(vec![0.25, -4.0]);
        let p = AttackParams::default().alie;
        assert_eq!(alie_attack(&[&u, &u, &u], &p).unwrap(), u);
        let w = ParamVector(vec![1.25, 0.0]);
        let z0 = AlieParams { z: 0.0, ..p };
        assert_eq!(alie_attack(&[&u, &w], &z0).unwrap().0, vec![0.75, -2.0]);
        assert_eq!(alie_attack(&[], &p), Err(AttackError::EmptyCohort));
        let plus = AlieParams { sign: AlieSign::Plus, ..p };
        assert_eq!(alie_attack(&[&u, &w], &plus).unwrap().0, vec![0.75 + 0.9 * 0.5, -2.0 + 0.9 * 2.0]);
    }

    #[test]
    fn rmc_transitions() {
        let s = RmcState::default();
        assert_eq!(
            s.transition(RmcEvent::ForceDisconnected).unwrap(),
            RmcState { phase: RmcPhase::AliePhase, disconnect_count: 1 }
        );
        assert_eq!(s.transition(RmcEvent::Connected).unwrap(), s);
        assert_eq!(s.transition(RmcEvent::Flagged).unwrap(), s);
        let alie = RmcState { phase: RmcPhase::AliePhase, disconnect_count: 1 };
        assert_eq!(
            alie.transition(RmcEvent::ForceDisconnected).unwrap(),
            RmcState { phase: RmcPhase::AliePhase, disconnect_count: 2 }
        );
        let banned = rmc_transition(alie, RmcEvent::ReconnectDenied).unwrap();
        assert_eq!(banned.phase, RmcPhase::Banned);
        assert_eq!(banned.disconnect_count, 1);
        assert_eq!(
            banned.transition(RmcEvent::Connected),
            Err(AttackError::Terminal(RmcEvent::Connected))
        );
    }
}
