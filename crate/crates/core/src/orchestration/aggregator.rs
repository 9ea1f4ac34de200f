//! The aggregator: key issuer, verifier, round coordinator and detector.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::transport::{Connection, Listener, TransportError};
use super::wire::Message;
use crate::aggregation::{
    aggregate_mean, krum_select, trimmed_mean, AggregationError, FlagReport, KrumConfig, TrimConfig, UpdateSet,
};
use crate::config::{AggregationRule, ExperimentConfig, PolicyConfig};
use crate::data::Dataset;
use crate::group::PrimeGroup;
use crate::ibi::{MasterKeys, MasterPublicKey, VerifierSession};
use crate::metrics::{DenyReason, Event, RoundMetrics};
use crate::nn::{evaluate, NnError, ParamVector};

#[derive(Debug, Error)]
pub enum RoundError {
    #[error("no active clients left")]
    NoActiveClients,
    #[error("aggregation failed: {0}")]
    Aggregation(#[from] AggregationError),
    #[error("evaluation failed: {0}")]
    Evaluation(#[from] NnError),
    #[error("transport failed: {0}")]
    Transport(#[from] TransportError),
}

/// Identities refused at the door. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Denylist {
    banned: BTreeSet<String>,
}

impl Denylist {
    pub fn insert(&mut self, id: &str) -> bool {
        self.banned.insert(id.to_owned())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.banned.contains(id)
    }

    pub fn len(&self) -> usize {
        self.banned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banned.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.banned.iter().map(String::as_str)
    }
}

/// Master keys plus the set of identities whose key was already delivered.
pub struct Kgc<G: PrimeGroup> {
    keys: MasterKeys<G>,
    issued: HashSet<String>,
}

impl<G: PrimeGroup> Kgc<G> {
    pub fn new(keys: MasterKeys<G>) -> Self {
        Self { keys, issued: HashSet::new() }
    }

    pub fn public(&self) -> &MasterPublicKey<G> {
        self.keys.public()
    }

    pub fn has_issued(&self, id: &str) -> bool {
        self.issued.contains(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthOutcome {
    Admitted { id: String },
    Denied { id: String, reason: DenyReason },
}

impl AuthOutcome {
    pub fn id(&self) -> &str {
        match self {
            AuthOutcome::Admitted { id } | AuthOutcome::Denied { id, .. } => id,
        }
    }
}

fn deny_reason(e: &TransportError) -> DenyReason {
    match e {
        TransportError::Timeout => DenyReason::Timeout,
        _ => DenyReason::Malformed,
    }
}

/// Runs the gate for one incoming session.
///
/// With a KGC (identification on) a denylisted id is refused right after its
/// hello; a first-time id is sent its key; then the challenge-response
/// exchange decides. Without one every hello is admitted.
pub fn authenticate_client<G: PrimeGroup, R: RngCore + ?Sized>(
    conn: &mut dyn Connection,
    kgc: Option<&mut Kgc<G>>,
    denylist: &Denylist,
    rng: &mut R,
) -> AuthOutcome {
    let (id, cmt) = match conn.recv() {
        Ok(Message::AuthHello { id, cmt }) => (id, cmt),
        Ok(_) => return deny(conn, String::new(), DenyReason::Malformed),
        Err(e) => return deny(conn, String::new(), deny_reason(&e)),
    };
    let Some(kgc) = kgc else {
        return admit(conn, id);
    };
    if denylist.contains(&id) {
        return deny(conn, id, DenyReason::Banned);
    }
    if !kgc.issued.contains(&id) {
        let usk = match kgc.keys.extract(&id) {
            Ok(k) => k,
            Err(_) => return deny(conn, id, DenyReason::Malformed),
        };
        let usk = kgc.keys.group().encode_scalar(usk.secret());
        if let Err(e) = conn.send(&Message::AuthRegister { usk }) {
            return deny(conn, id, deny_reason(&e));
        }
        kgc.issued.insert(id.clone());
        log::info!("KGC: issued user key for {id}");
    }
    let group = kgc.keys.group().clone();
    let session = match VerifierSession::open(kgc.keys.public(), &id, &cmt) {
        Ok(s) => s.challenge(rng),
        Err(_) => return deny(conn, id, DenyReason::Malformed),
    };
    let cha = group.encode_scalar(session.challenge_value());
    if let Err(e) = conn.send(&Message::AuthChallenge { cha }) {
        return deny(conn, id, deny_reason(&e));
    }
    let rsp = match conn.recv() {
        Ok(Message::AuthResponse { rsp }) => rsp,
        Ok(_) => return deny(conn, id, DenyReason::Malformed),
        Err(e) => return deny(conn, id, deny_reason(&e)),
    };
    let Ok(rsp) = group.decode_scalar(&rsp) else {
        return deny(conn, id, DenyReason::Malformed);
    };
    if session.finish(rsp).verdict.is_accept() {
        admit(conn, id)
    } else {
        deny(conn, id, DenyReason::BadProof)
    }
}

fn admit(conn: &mut dyn Connection, id: String) -> AuthOutcome {
    match conn.send(&Message::AuthResult { accepted: true, reason: None }) {
        Ok(()) => AuthOutcome::Admitted { id },
        Err(e) => AuthOutcome::Denied { id, reason: deny_reason(&e) },
    }
}

fn deny(conn: &mut dyn Connection, id: String, reason: DenyReason) -> AuthOutcome {
    // Best effort: the peer may already be gone.
    let _ = conn.send(&Message::AuthResult { accepted: false, reason: Some(reason.to_string()) });
    AuthOutcome::Denied { id, reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordStatus {
    PendingAuth,
    Active,
    Disconnected,
    Banned,
}

/// Aggregator-side view of one identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRecord {
    pub id: String,
    pub status: RecordStatus,
    /// Consecutive flagged rounds.
    pub strikes: u32,
    pub force_disconnects: u32,
}

impl ClientRecord {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_owned(), status: RecordStatus::PendingAuth, strikes: 0, force_disconnects: 0 }
    }
}

/// Which updates in a round look anomalous.
///
/// Trimmed mean: more than `trim_flag_fraction` of the coordinates trimmed.
/// Krum: score above `krum_flag_ratio` times the median score.
pub fn flag_clients(report: &FlagReport, policy: &PolicyConfig) -> Vec<bool> {
    match report {
        FlagReport::None => Vec::new(),
        FlagReport::TrimmedMean { trimmed_fraction } => {
            trimmed_fraction.iter().map(|f| *f > policy.trim_flag_fraction).collect()
        }
        FlagReport::Krum { scores, .. } => {
            let threshold = policy.krum_flag_ratio * median(scores);
            scores.iter().map(|s| *s > threshold).collect()
        }
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyDecision {
    /// Flagged ids with their strike count after this round.
    pub flagged: Vec<(String, u32)>,
    pub disconnect: Vec<String>,
}

/// Updates strike counters (flagged → +1, clean → reset) and returns the ids
/// that reached the threshold. `ids` is in the same order as the report.
pub fn apply_disconnection_policy(
    records: &mut BTreeMap<String, ClientRecord>,
    ids: &[String],
    report: &FlagReport,
    policy: &PolicyConfig,
) -> PolicyDecision {
    let flags = flag_clients(report, policy);
    let mut decision = PolicyDecision::default();
    for (i, id) in ids.iter().enumerate() {
        let record = records.entry(id.clone()).or_insert_with(|| ClientRecord::new(id));
        if flags.get(i).copied().unwrap_or(false) {
            record.strikes += 1;
            decision.flagged.push((id.clone(), record.strikes));
            if record.strikes >= policy.strike_threshold {
                decision.disconnect.push(id.clone());
            }
        } else {
            record.strikes = 0;
        }
    }
    decision
}

pub struct Aggregator<G: PrimeGroup> {
    config: ExperimentConfig,
    kgc: Option<Kgc<G>>,
    denylist: Denylist,
    records: BTreeMap<String, ClientRecord>,
    sessions: BTreeMap<String, Box<dyn Connection>>,
    global: ParamVector,
    data: Arc<Dataset>,
    test_rows: Vec<usize>,
    rng: ChaCha8Rng,
    round: usize,
}

impl<G: PrimeGroup> Aggregator<G> {
    /// `config.model.input_dim` must already match the data. Identification
    /// is on exactly when `kgc` is given.
    pub fn new(
        config: ExperimentConfig,
        kgc: Option<Kgc<G>>,
        global: ParamVector,
        data: Arc<Dataset>,
        test_rows: Vec<usize>,
        seed: u64,
    ) -> Self {
        Self {
            config,
            kgc,
            denylist: Denylist::default(),
            records: BTreeMap::new(),
            sessions: BTreeMap::new(),
            global,
            data,
            test_rows,
            rng: ChaCha8Rng::seed_from_u64(seed),
            round: 0,
        }
    }

    pub fn denylist(&self) -> &Denylist {
        &self.denylist
    }

    pub fn records(&self) -> &BTreeMap<String, ClientRecord> {
        &self.records
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn active_ids(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }

    fn accuracy(&self) -> Result<f64, NnError> {
        evaluate(&self.config.model, &self.global, &self.data, &self.test_rows)
    }

    /// Round 0: the untrained model.
    pub fn initial_metrics(&self) -> Result<RoundMetrics, RoundError> {
        Ok(RoundMetrics::initial(self.accuracy()?))
    }

    /// Admits whoever is waiting to connect, then runs one training round.
    pub fn run_round(&mut self, listener: &mut dyn Listener) -> Result<RoundMetrics, RoundError> {
        self.round += 1;
        let round = self.round;
        let mut m = RoundMetrics { round, ..RoundMetrics::initial(0.0) };

        self.admit_pending(listener, &mut m)?;
        if self.sessions.is_empty() {
            return Err(RoundError::NoActiveClients);
        }
        m.active = self.sessions.len();

        let updates = self.collect_updates(round, &mut m);
        if updates.is_empty() {
            return Err(RoundError::NoActiveClients);
        }
        let updates = UpdateSet::new(updates)?;
        let ids: Vec<String> = updates.ids().map(str::to_owned).collect();
        let (aggregate, report) = match self.config.rule {
            AggregationRule::Mean => (aggregate_mean(&updates), FlagReport::None),
            AggregationRule::TrimmedMean => trimmed_mean(&updates, TrimConfig { beta: self.config.trim_beta })?,
            AggregationRule::Krum => {
                // Krum needs n − f − 2 ≥ 1 neighbours; shrink f when clients drop out.
                let f = self.config.krum_f().min(updates.len().saturating_sub(3));
                let (id, params, report) = krum_select(&updates, KrumConfig { f })?;
                m.selected_client = Some(id);
                (params, report)
            }
        };
        m.aggregated = ids.clone();

        let decision = apply_disconnection_policy(&mut self.records, &ids, &report, &self.config.policy);
        for (id, strikes) in &decision.flagged {
            log::info!("round {round}: {id} flagged ({strikes}/{})", self.config.policy.strike_threshold);
            m.flagged.push(id.clone());
            m.events.push(Event::Flagged { id: id.clone(), strikes: *strikes });
        }
        for id in decision.disconnect {
            self.force_disconnect(&id, &mut m);
        }

        self.global = aggregate;
        m.accuracy = self.accuracy()?;
        log::info!(
            "round {round}: accuracy {:.4}, {} active, {} flagged, {} disconnected",
            m.accuracy,
            m.active,
            m.flagged.len(),
            m.disconnected.len()
        );
        Ok(m)
    }

    fn admit_pending(&mut self, listener: &mut dyn Listener, m: &mut RoundMetrics) -> Result<(), RoundError> {
        let expected = self.config.n_clients.saturating_sub(self.records.len());
        for mut conn in listener.accept_pending(expected)? {
            let outcome = authenticate_client(conn.as_mut(), self.kgc.as_mut(), &self.denylist, &mut self.rng);
            let id = outcome.id().to_owned();
            let reconnect = self.records.get(&id).is_some_and(|r| r.force_disconnects > 0);
            if reconnect {
                m.reconnect_attempts += 1;
            }
            match outcome {
                AuthOutcome::Admitted { id } => {
                    log::info!("round {}: {id} authenticated{}", m.round, if reconnect { " (reconnect)" } else { "" });
                    let record = self.records.entry(id.clone()).or_insert_with(|| ClientRecord::new(&id));
                    record.status = RecordStatus::Active;
                    record.strikes = 0;
                    m.events.push(Event::Admitted { id: id.clone(), reconnect });
                    // A second session under a live id replaces the first.
                    self.sessions.insert(id, conn);
                }
                AuthOutcome::Denied { id, reason } => {
                    log::info!("round {}: {id} denied ({reason})", m.round);
                    m.auth_denials += 1;
                    m.events.push(Event::Denied { id, reason, reconnect });
                }
            }
        }
        Ok(())
    }

    /// Broadcasts the model and waits for every active client. Clients whose
    /// session fails are dropped from the round and treated as having left.
    fn collect_updates(&mut self, round: usize, m: &mut RoundMetrics) -> Vec<(String, ParamVector)> {
        let broadcast = Message::ModelBroadcast { round, params: self.global.clone() };
        let mut failed = Vec::new();
        for (id, conn) in self.sessions.iter_mut() {
            if let Err(e) = conn.send(&broadcast) {
                log::warn!("round {round}: broadcast to {id} failed: {e}");
                failed.push(id.clone());
            }
        }
        let dim = self.global.len();
        let mut updates = Vec::with_capacity(self.sessions.len());
        for (id, conn) in self.sessions.iter_mut() {
            if failed.contains(id) {
                continue;
            }
            match conn.recv() {
                Ok(Message::UpdateSubmit { round: r, params }) if r == round && params.len() == dim && params.is_finite() => {
                    updates.push((id.clone(), params));
                }
                Ok(other) => {
                    log::warn!("round {round}: {id} sent an unusable {}", other.kind());
                    failed.push(id.clone());
                }
                Err(e) => {
                    log::warn!("round {round}: no update from {id}: {e}");
                    failed.push(id.clone());
                }
            }
        }
        for id in failed {
            self.sessions.remove(&id);
            if let Some(r) = self.records.get_mut(&id) {
                r.status = RecordStatus::Disconnected;
            }
            m.events.push(Event::TransportFailure { id });
        }
        updates
    }

    fn force_disconnect(&mut self, id: &str, m: &mut RoundMetrics) {
        let strikes = self.config.policy.strike_threshold;
        if let Some(mut conn) = self.sessions.remove(id) {
            let reason = format!("flagged in {strikes} consecutive rounds");
            if let Err(e) = conn.send(&Message::ForceDisconnect { reason }) {
                log::warn!("round {}: could not notify {id}: {e}", m.round);
            }
        }
        let record = self.records.entry(id.to_owned()).or_insert_with(|| ClientRecord::new(id));
        record.force_disconnects += 1;
        record.strikes = 0;
        record.status = RecordStatus::Disconnected;
        log::info!("round {}: {id} forcibly disconnected", m.round);
        m.disconnected.push(id.to_owned());
        m.events.push(Event::ForceDisconnected { id: id.to_owned() });
        if self.kgc.is_some() {
            self.denylist.insert(id);
            record.status = RecordStatus::Banned;
            log::info!("round {}: {id} added to denylist", m.round);
            m.events.push(Event::Denylisted { id: id.to_owned() });
        }
    }

    /// Says goodbye to every session, including ones still waiting to be admitted.
    pub fn finish(&mut self, listener: &mut dyn Listener) {
        for (_, mut conn) in std::mem::take(&mut self.sessions) {
            let _ = conn.send(&Message::Bye);
        }
        if let Ok(pending) = listener.accept_pending(0) {
            for mut conn in pending {
                let _ = conn.send(&Message::Bye);
            }
        }
    }
}
