//! Wiring an experiment together: data, keys, clients, transport, rounds.

pub mod aggregator;
pub mod client;
pub mod transport;
pub mod wire;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, GroupBackend, TransportKind};
use crate::data::{self, DataError, Dataset, MinMaxScaler, Partition};
use crate::group::{P256Group, PrimeGroup, ToyGroup};
use crate::ibi::MasterKeys;
use crate::metrics::MetricsLog;
use crate::nn::{init_model, NnError};

pub use aggregator::{
    apply_disconnection_policy, authenticate_client, flag_clients, Aggregator, AuthOutcome, ClientRecord, Denylist,
    Kgc, PolicyDecision, RecordStatus, RoundError,
};
pub use client::{Adversary, ClientError, ClientRuntime, ClientStatus, LocalTrainer};
pub use transport::{
    run_tcp_client, Connection, InMemoryListener, Listener, Peer, SharedPeer, TcpAcceptor, TcpTimeouts,
    TransportError,
};
pub use wire::{Message, WireError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] NnError),
    #[error(transparent)]
    Round(#[from] RoundError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

/// Loaded, split and scaled data. The scaler is fitted on training rows only.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub data: Arc<Dataset>,
    pub partition: Partition,
    /// True when the synthetic surrogate was used.
    pub synthetic: bool,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData, ExperimentError> {
    let d = &config.data;
    let (raw, synthetic) = match &d.path {
        Some(path) => (data::load_csv(path)?, false),
        None => {
            let seed = config.derive_seed(&["data"]);
            (data::synth::generate(d.synthetic_rows, d.synthetic_separation, seed)?, true)
        }
    };
    let partition = data::partition(
        raw.n_rows(),
        config.n_clients,
        d.test_fraction,
        config.derive_seed(&["partition"]),
    )?;
    let scaled = MinMaxScaler::fit(&raw, &partition.train_indices()).transform(&raw);
    Ok(PreparedData { data: Arc::new(scaled), partition, synthetic })
}

/// Seeded choice of which client ids are adversarial, sorted.
pub fn choose_malicious(config: &ExperimentConfig) -> BTreeSet<String> {
    let mut ids = config.client_ids();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(config.derive_seed(&["malicious"])));
    ids.truncate(config.n_malicious);
    ids.into_iter().collect()
}

/// Runs a full experiment. A failure inside a round ends the run early; the
/// partial log is returned with [`MetricsLog::error`] set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsLog, ExperimentError> {
    config.validate()?;
    match config.group {
        GroupBackend::P256 => run_with_group(config, P256Group),
        GroupBackend::Toy => run_with_group(config, ToyGroup::new()),
    }
}

pub fn run_with_group<G: PrimeGroup>(config: &ExperimentConfig, group: G) -> Result<MetricsLog, ExperimentError> {
    let prepared = prepare_data(config)?;
    run_prepared(config, group, &prepared)
}

/// Like [`run_with_group`] but on data the caller already prepared, so that
/// several runs can share one load.
pub fn run_prepared<G: PrimeGroup>(
    config: &ExperimentConfig,
    group: G,
    prepared: &PreparedData,
) -> Result<MetricsLog, ExperimentError> {
    config.validate()?;
    let mut config = config.clone();
    config.model.input_dim = prepared.data.n_cols();
    config.model.validate()?;
    let data = Arc::clone(&prepared.data);
    let malicious = choose_malicious(&config);

    let kgc = config.ibi_enabled.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.derive_seed(&["kgc"]));
        let keys = MasterKeys::setup(group.clone(), &mut rng);
        log::info!("KGC: master keys generated on {}", group.name());
        Kgc::new(keys)
    });
    let mpk = kgc.as_ref().map(|k| k.public().clone());
    let adversary = Adversary::shared(config.attack);

    let clients: Vec<ClientRuntime<G>> = config
        .client_ids()
        .into_iter()
        .zip(&prepared.partition.shards)
        .map(|(id, shard)| {
            let trainer = LocalTrainer {
                id: id.clone(),
                data: Arc::clone(&data),
                shard: shard.as_slice().into(),
                model: config.model.clone(),
                seed: config.seed,
            };
            if malicious.contains(&id) {
                ClientRuntime::malicious(
                    group.clone(),
                    mpk.clone(),
                    trainer,
                    config.attack,
                    Arc::clone(&adversary),
                    config.rmc_enabled,
                )
            } else {
                ClientRuntime::honest(group.clone(), mpk.clone(), trainer)
            }
        })
        .collect();

    let global = init_model(&config.model, config.derive_seed(&["init"]));
    let mut aggregator = Aggregator::new(
        config.clone(),
        kgc,
        global,
        data,
        prepared.partition.test_indices.clone(),
        config.derive_seed(&["challenges"]),
    );

    let mut log = MetricsLog {
        label: config.display_label(),
        config: config.to_json(),
        rounds: vec![aggregator.initial_metrics()?],
        malicious_ids: malicious.into_iter().collect(),
        attacks: Vec::new(),
        error: None,
    };

    match config.transport {
        TransportKind::InMemory => {
            let peers: Vec<SharedPeer> = clients
                .into_iter()
                .map(|c| Arc::new(Mutex::new(c)) as SharedPeer)
                .collect();
            let mut listener = InMemoryListener::new(peers);
            run_rounds(&mut aggregator, &mut listener, config.rounds, &mut log);
        }
        TransportKind::Tcp => {
            let mut listener = TcpAcceptor::bind("127.0.0.1:0", TcpTimeouts::default())?;
            let addr = listener.local_addr();
            let handles: Vec<_> = clients.into_iter().map(|c| run_tcp_client(c, addr)).collect();
            run_rounds(&mut aggregator, &mut listener, config.rounds, &mut log);
            drop(listener);
            for h in handles {
                match h.join() {
                    Ok(Ok(_)) => {}
                    Ok(Err(e)) => log::warn!("client ended with error: {e}"),
                    Err(_) => log::warn!("client thread panicked"),
                }
            }
        }
    }
    log.attacks = adversary.lock().unwrap_or_else(|p| p.into_inner()).take_trace();
    Ok(log)
}

fn run_rounds<G: PrimeGroup>(
    aggregator: &mut Aggregator<G>,
    listener: &mut dyn Listener,
    rounds: usize,
    log: &mut MetricsLog,
) {
    for r in 1..=rounds {
        match aggregator.run_round(listener) {
            Ok(m) => log.rounds.push(m),
            Err(e) => {
                log::error!("round {r}: {e}");
                log.error = Some(format!("round {r}: {e}"));
                break;
            }
        }
    }
    aggregator.finish(listener);
}
