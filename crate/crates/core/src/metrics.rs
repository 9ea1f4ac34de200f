//! Per-round measurements and the experiment-level log.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    Banned,
    BadProof,
    Malformed,
    Timeout,
    Duplicate,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::Banned => "banned",
            DenyReason::BadProof => "bad_proof",
            DenyReason::Malformed => "malformed",
            DenyReason::Timeout => "timeout",
            DenyReason::Duplicate => "duplicate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// `reconnect` is set when the id had been force-disconnected before.
    Admitted { id: String, reconnect: bool },
    Denied { id: String, reason: DenyReason, reconnect: bool },
    Flagged { id: String, strikes: u32 },
    ForceDisconnected { id: String },
    Denylisted { id: String },
    TransportFailure { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Gaussian,
    Alie,
}

/// Ground truth from the adversary side: what a malicious client submitted
/// and when.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub round: usize,
    pub id: String,
    pub attack: AttackKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    /// Clients active when the round's updates were requested.
    pub active: usize,
    pub flagged: Vec<String>,
    pub disconnected: Vec<String>,
    pub reconnect_attempts: usize,
    pub auth_denials: usize,
    /// Krum only.
    pub selected_client: Option<String>,
    /// Ids whose updates entered this round's aggregation.
    pub aggregated: Vec<String>,
    pub events: Vec<Event>,
}

impl RoundMetrics {
    pub fn initial(accuracy: f64) -> Self {
        Self {
            round: 0,
            accuracy,
            active: 0,
            flagged: Vec::new(),
            disconnected: Vec::new(),
            reconnect_attempts: 0,
            auth_denials: 0,
            selected_client: None,
            aggregated: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn transport_failures(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::TransportFailure { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg_accuracy: f64,
    pub final_accuracy: f64,
    pub total_disconnections: usize,
    pub total_auth_denials: usize,
    /// Honest clients that were force-disconnected.
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub label: String,
    /// The experiment config as JSON.
    pub config: String,
    /// Entry 0 is the untrained model; entry r is round r.
    pub rounds: Vec<RoundMetrics>,
    pub malicious_ids: Vec<String>,
    pub attacks: Vec<AttackRecord>,
    /// Set when the experiment stopped early.
    pub error: Option<String>,
}

impl MetricsLog {
    /// Average over the training rounds (entry 0 only counts when no round ran).
    pub fn summary(&self) -> Summary {
        let trained: Vec<f64> = self.rounds.iter().filter(|r| r.round > 0).map(|r| r.accuracy).collect();
        let avg_accuracy = if trained.is_empty() {
            self.rounds.first().map_or(0.0, |r| r.accuracy)
        } else {
            trained.iter().sum::<f64>() / trained.len() as f64
        };
        let malicious: HashSet<&str> = self.malicious_ids.iter().map(String::as_str).collect();
        let disconnected = self.rounds.iter().flat_map(|r| &r.disconnected);
        Summary {
            avg_accuracy,
            final_accuracy: self.rounds.last().map_or(0.0, |r| r.accuracy),
            total_disconnections: self.rounds.iter().map(|r| r.disconnected.len()).sum(),
            total_auth_denials: self.rounds.iter().map(|r| r.auth_denials).sum(),
            false_positives: disconnected.filter(|id| !malicious.contains(id.as_str())).count(),
        }
    }

    pub fn final_accuracy(&self) -> f64 {
        self.summary().final_accuracy
    }

    pub fn events(&self) -> impl Iterator<Item = (usize, &Event)> {
        self.rounds.iter().flat_map(|r| r.events.iter().map(move |e| (r.round, e)))
    }

    pub fn attack_in(&self, round: usize, id: &str) -> Option<AttackKind> {
        self.attacks.iter().find(|a| a.round == round && a.id == id).map(|a| a.attack)
    }
}
