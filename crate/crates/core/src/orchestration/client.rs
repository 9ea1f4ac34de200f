//! Client runtimes: honest trainers and reconnecting attackers.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::transport::Peer;
use super::wire::Message;
use crate::attacks::{alie_attack, gaussian_attack, AttackError, AttackParams, RmcEvent, RmcPhase, RmcState};
use crate::config::derive_seed;
use crate::data::Dataset;
use crate::group::PrimeGroup;
use crate::ibi::{IbiError, MasterPublicKey, ProverState, UserSecretKey};
use crate::metrics::{AttackKind, AttackRecord};
use crate::nn::{train_local, ModelConfig, NnError, ParamVector};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("training failed: {0}")]
    Training(#[from] NnError),
    #[error("attack failed: {0}")]
    Attack(#[from] AttackError),
    #[error("identification failed: {0}")]
    Ibi(#[from] IbiError),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

fn protocol(msg: impl Into<String>) -> ClientError {
    ClientError::Protocol(msg.into())
}

/// Everything needed to produce a client's honest update for a round.
/// Seeds depend only on (experiment seed, id, round), so anyone holding a
/// trainer gets the same update the client itself would compute.
#[derive(Debug, Clone)]
pub struct LocalTrainer {
    pub id: String,
    pub data: Arc<Dataset>,
    pub shard: Arc<[usize]>,
    pub model: ModelConfig,
    pub seed: u64,
}

impl LocalTrainer {
    pub fn update(&self, global: &ParamVector, round: usize) -> Result<ParamVector, NnError> {
        let seed = derive_seed(self.seed, &["train", &self.id, &round.to_string()]);
        train_local(&self.model, global, &self.data, &self.shard, seed)
    }
}

/// The attackers' shared side channel. ALIE clients pool their honest
/// updates here every round, and every poisoned submission is recorded as
/// ground truth for later checks.
#[derive(Debug)]
pub struct Adversary {
    params: AttackParams,
    members: BTreeMap<String, LocalTrainer>,
    cohort: BTreeSet<String>,
    cached: Option<(usize, ParamVector)>,
    trace: Vec<AttackRecord>,
}

impl Adversary {
    pub fn new(params: AttackParams) -> Self {
        Self { params, members: BTreeMap::new(), cohort: BTreeSet::new(), cached: None, trace: Vec::new() }
    }

    pub fn shared(params: AttackParams) -> Arc<Mutex<Self>> {
        Arc::new(Mutex::new(Self::new(params)))
    }

    pub fn enlist(&mut self, trainer: LocalTrainer) {
        self.members.insert(trainer.id.clone(), trainer);
    }

    fn join_cohort(&mut self, id: &str) {
        self.cohort.insert(id.to_owned());
    }

    fn leave_cohort(&mut self, id: &str) {
        self.cohort.remove(id);
    }

    pub fn cohort(&self) -> impl Iterator<Item = &str> {
        self.cohort.iter().map(String::as_str)
    }

    /// The round's ALIE vector, computed once from the connected ALIE
    /// members' honest updates and then shared by all of them.
    fn alie_update(&mut self, round: usize, global: &ParamVector) -> Result<ParamVector, ClientError> {
        if let Some((r, v)) = &self.cached {
            if *r == round {
                return Ok(v.clone());
            }
        }
        let honest = self
            .cohort
            .iter()
            .map(|id| self.members[id].update(global, round))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&ParamVector> = honest.iter().collect();
        let v = alie_attack(&refs, &self.params.alie)?;
        self.cached = Some((round, v.clone()));
        Ok(v)
    }

    fn record(&mut self, round: usize, id: &str, attack: AttackKind) {
        self.trace.push(AttackRecord { round, id: id.to_owned(), attack });
    }

    pub fn trace(&self) -> &[AttackRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<AttackRecord> {
        let mut t = std::mem::take(&mut self.trace);
        t.sort_by(|a, b| (a.round, &a.id).cmp(&(b.round, &b.id)));
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientStatus {
    /// Not connected and wants to be.
    Idle,
    Authenticating,
    Active,
    /// Finished: denied, told goodbye, lost its connection or gave up.
    Gone,
}

enum Role {
    Honest,
    Malicious { adversary: Arc<Mutex<Adversary>>, rmc: Option<RmcState> },
}

pub struct ClientRuntime<G: PrimeGroup> {
    id: String,
    group: G,
    mpk: Option<MasterPublicKey<G>>,
    trainer: LocalTrainer,
    attack: AttackParams,
    role: Role,
    usk: Option<UserSecretKey<G>>,
    prover: Option<ProverState<G>>,
    nonce_rng: ChaCha8Rng,
    status: ClientStatus,
    submitted: usize,
}

impl<G: PrimeGroup> ClientRuntime<G> {
    /// `mpk` lets the client check a delivered key; it is public information.
    pub fn honest(group: G, mpk: Option<MasterPublicKey<G>>, trainer: LocalTrainer) -> Self {
        Self::build(group, mpk, trainer, AttackParams::default(), Role::Honest)
    }

    /// A Gaussian attacker. With `reconnect` it follows the reconnecting
    /// state machine and switches to ALIE after its first forced disconnect.
    pub fn malicious(
        group: G,
        mpk: Option<MasterPublicKey<G>>,
        trainer: LocalTrainer,
        attack: AttackParams,
        adversary: Arc<Mutex<Adversary>>,
        reconnect: bool,
    ) -> Self {
        lock(&adversary).enlist(trainer.clone());
        let rmc = reconnect.then(RmcState::default);
        Self::build(group, mpk, trainer, attack, Role::Malicious { adversary, rmc })
    }

    fn build(group: G, mpk: Option<MasterPublicKey<G>>, trainer: LocalTrainer, attack: AttackParams, role: Role) -> Self {
        let nonce_rng = ChaCha8Rng::seed_from_u64(derive_seed(trainer.seed, &["nonce", &trainer.id]));
        Self {
            id: trainer.id.clone(),
            group,
            mpk,
            trainer,
            attack,
            role,
            usk: None,
            prover: None,
            nonce_rng,
            status: ClientStatus::Idle,
            submitted: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> ClientStatus {
        self.status
    }

    pub fn is_malicious(&self) -> bool {
        matches!(self.role, Role::Malicious { .. })
    }

    pub fn rmc_state(&self) -> Option<RmcState> {
        match &self.role {
            Role::Malicious { rmc, .. } => *rmc,
            Role::Honest => None,
        }
    }

    pub fn has_key(&self) -> bool {
        self.usk.is_some()
    }

    /// Updates submitted over the client's lifetime.
    pub fn submitted(&self) -> usize {
        self.submitted
    }

    fn rmc_event(&mut self, event: RmcEvent) -> Result<(), ClientError> {
        if let Role::Malicious { rmc: Some(state), .. } = &mut self.role {
            *state = state.transition(event)?;
        }
        Ok(())
    }

    fn phase(&self) -> Option<RmcPhase> {
        self.rmc_state().map(|s| s.phase)
    }

    fn leave_cohort(&self) {
        if let Role::Malicious { adversary, .. } = &self.role {
            lock(adversary).leave_cohort(&self.id);
        }
    }

    fn local_update(&mut self, round: usize, global: &ParamVector) -> Result<ParamVector, ClientError> {
        let phase = self.phase();
        let Role::Malicious { adversary, .. } = &self.role else {
            return Ok(self.trainer.update(global, round)?);
        };
        let mut adv = lock(adversary);
        if phase == Some(RmcPhase::AliePhase) {
            let v = adv.alie_update(round, global)?;
            adv.record(round, &self.id, AttackKind::Alie);
            return Ok(v);
        }
        drop(adv);
        let honest = self.trainer.update(global, round)?;
        let seed = derive_seed(self.trainer.seed, &["gaussian", &self.id, &round.to_string()]);
        let v = gaussian_attack(&honest, &self.attack.gaussian, &mut ChaCha8Rng::seed_from_u64(seed))?;
        lock(adversary).record(round, &self.id, AttackKind::Gaussian);
        Ok(v)
    }
}

fn lock(adv: &Arc<Mutex<Adversary>>) -> std::sync::MutexGuard<'_, Adversary> {
    adv.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl<G: PrimeGroup> Peer for ClientRuntime<G> {
    fn wants_connect(&self) -> bool {
        self.status == ClientStatus::Idle
    }

    fn hello(&mut self) -> Result<Message, ClientError> {
        let prover = ProverState::commit(self.group.clone(), &mut self.nonce_rng);
        let cmt = self.group.encode_element(prover.commitment());
        self.prover = Some(prover);
        self.status = ClientStatus::Authenticating;
        Ok(Message::AuthHello { id: self.id.clone(), cmt })
    }

    fn handle(&mut self, msg: Message) -> Result<Vec<Message>, ClientError> {
        match msg {
            Message::AuthRegister { usk } => {
                let s = self.group.decode_scalar(&usk).map_err(IbiError::from)?;
                let key = UserSecretKey::from_parts(self.id.clone(), s);
                if let Some(mpk) = &self.mpk {
                    if !mpk.check_user_key(&key) {
                        return Err(protocol("delivered key does not match the identity"));
                    }
                }
                self.usk = Some(key);
                Ok(vec![])
            }
            Message::AuthChallenge { cha } => {
                let cha = self.group.decode_scalar(&cha).map_err(IbiError::from)?;
                let usk = self.usk.as_ref().ok_or_else(|| protocol("challenged before a key was issued"))?;
                let prover = self.prover.as_mut().ok_or_else(|| protocol("challenged without a commitment"))?;
                let rsp = prover.respond(usk, &cha)?;
                Ok(vec![Message::AuthResponse { rsp: self.group.encode_scalar(&rsp) }])
            }
            Message::AuthResult { accepted: true, .. } => {
                self.status = ClientStatus::Active;
                self.rmc_event(RmcEvent::Connected)?;
                if self.phase() == Some(RmcPhase::AliePhase) {
                    if let Role::Malicious { adversary, .. } = &self.role {
                        lock(adversary).join_cohort(&self.id);
                    }
                }
                Ok(vec![])
            }
            Message::AuthResult { accepted: false, reason } => {
                log::debug!("{} denied: {}", self.id, reason.as_deref().unwrap_or("unspecified"));
                self.status = ClientStatus::Gone;
                self.rmc_event(RmcEvent::ReconnectDenied)?;
                Ok(vec![])
            }
            Message::ModelBroadcast { round, params } => {
                if self.status != ClientStatus::Active {
                    return Err(protocol("model broadcast before admission"));
                }
                let update = self.local_update(round, &params)?;
                self.submitted += 1;
                Ok(vec![Message::UpdateSubmit { round, params: update }])
            }
            Message::ForceDisconnect { reason } => {
                log::debug!("{} force-disconnected: {reason}", self.id);
                self.leave_cohort();
                self.rmc_event(RmcEvent::ForceDisconnected)?;
                self.status = match self.rmc_state() {
                    Some(s) if s.wants_reconnect() => ClientStatus::Idle,
                    _ => ClientStatus::Gone,
                };
                Ok(vec![])
            }
            Message::Bye => {
                self.leave_cohort();
                self.status = ClientStatus::Gone;
                Ok(vec![])
            }
            other @ (Message::AuthHello { .. } | Message::AuthResponse { .. } | Message::UpdateSubmit { .. }) => {
                Err(protocol(format!("unexpected {} from aggregator", other.kind())))
            }
        }
    }

    fn is_connected(&self) -> bool {
        matches!(self.status, ClientStatus::Authenticating | ClientStatus::Active)
    }

    fn connection_lost(&mut self) {
        self.leave_cohort();
        self.status = ClientStatus::Gone;
    }
}
