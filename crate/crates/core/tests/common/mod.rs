//! Reference implementations shared by the integration tests. None of these
//! call into the code they are compared against.

#![allow(dead_code)]

use std::path::PathBuf;

use fedshield::attacks::{gaussian_attack, GaussianMode, GaussianParams};
use fedshield::config::ExperimentConfig;
use fedshield::nn::{init_model, loss_and_backward, Mode, ModelConfig, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `b^e mod m` by repeated multiplication.
pub fn pow_mod_naive(b: u64, e: u64, m: u64) -> u64 {
    (0..e).fold(1 % m, |acc, _| acc * (b % m) % m)
}

/// Coordinate-wise trimmed mean by peeling off the current minimum and
/// maximum `trim` times, then averaging what is left in ascending order.
pub fn trimmed_mean_oracle(vectors: &[Vec<f64>], beta: f64) -> Vec<f64> {
    let m = vectors.len();
    let trim = (beta * m as f64).floor() as usize;
    (0..vectors[0].len())
        .map(|k| {
            let mut column: Vec<f64> = vectors.iter().map(|v| v[k]).collect();
            for _ in 0..trim {
                let lo = argmin(&column);
                column.remove(lo);
                let hi = argmax(&column);
                column.remove(hi);
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / column.len() as f64
        })
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Every `k`-subset of `items`, in lexicographic order.
pub fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut with_first: Vec<Vec<usize>> = subsets(&items[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0]);
            s
        })
        .collect();
    with_first.extend(subsets(&items[1..], k));
    with_first
}

/// Krum by enumeration: each score is the minimum over all neighbour sets of
/// size `n - f - 2` of the summed squared distances. Returns the scores and
/// the first index reaching the minimum.
pub fn krum_oracle(vectors: &[Vec<f64>], f: usize) -> (Vec<f64>, usize) {
    let n = vectors.len();
    let k = n - f - 2;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            subsets(&others, k)
                .iter()
                .map(|s| s.iter().map(|&j| dist(&vectors[i], &vectors[j])).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let best = (0..n).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
    (scores, best)
}

/// A scaled-down experiment that finishes in well under a second.
pub fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig { n_clients: 6, n_malicious: 2, rounds: 4, ..ExperimentConfig::default() };
    c.data.synthetic_rows = 1_200;
    c.model.local_epochs = 1;
    c
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Result of auditing an identification-enabled run against its denylist.
#[derive(Debug, Default)]
pub struct DenylistAudit {
    /// Connection attempts by ids already on the denylist.
    pub attempts: usize,
    /// Of those, how many were refused.
    pub denied: usize,
    /// Updates from denylisted ids that reached aggregation, as (round, id).
    pub aggregated_after_ban: Vec<(usize, String)>,
    /// Attack submissions by denylisted ids, as (round, id).
    pub submitted_after_ban: Vec<(usize, String)>,
}

impl DenylistAudit {
    pub fn is_clean(&self) -> bool {
        self.attempts == self.denied && self.aggregated_after_ban.is_empty() && self.submitted_after_ban.is_empty()
    }
}

/// Replays the log in round order, adding ids to the ban set as they are
/// denylisted and checking everything that happens after.
pub fn audit_denylist(log: &fedshield::metrics::MetricsLog) -> DenylistAudit {
    use fedshield::metrics::Event;
    let mut banned = std::collections::BTreeSet::new();
    let mut audit = DenylistAudit::default();
    for r in &log.rounds {
        for e in &r.events {
            match e {
                Event::Admitted { id, .. } if banned.contains(id) => audit.attempts += 1,
                Event::Denied { id, .. } if banned.contains(id) => {
                    audit.attempts += 1;
                    audit.denied += 1;
                }
                _ => {}
            }
        }
        for id in r.aggregated.iter().filter(|id| banned.contains(*id)) {
            audit.aggregated_after_ban.push((r.round, id.clone()));
        }
        for a in log.attacks.iter().filter(|a| a.round == r.round && banned.contains(&a.id)) {
            audit.submitted_after_ban.push((r.round, a.id.clone()));
        }
        for e in &r.events {
            if let Event::Denylisted { id } = e {
                banned.insert(id.clone());
            }
        }
    }
    audit
}

/// Ids that were force-disconnected and whose next admission was a
/// reconnect during which they submitted an ALIE update. Returned as
/// (disconnect round, reconnect round, id).
pub fn alie_reconnects(log: &fedshield::metrics::MetricsLog) -> Vec<(usize, usize, String)> {
    use fedshield::metrics::{AttackKind, Event};
    let mut found = Vec::new();
    for (round, e) in log.events() {
        let Event::ForceDisconnected { id } = e else { continue };
        let next = log.events().find(|(r, e)| *r > round && matches!(e, Event::Admitted { id: a, .. } if a == id));
        if let Some((back, Event::Admitted { reconnect: true, .. })) = next {
            if log.attack_in(back, id) == Some(AttackKind::Alie) {
                found.push((round, back, id.clone()));
            }
        }
    }
    found
}

/// Relative error of the analytic gradient against central differences,
/// `‖a − n‖ / (‖a‖ + ‖n‖)`, on a random batch and random parameters.
pub fn gradient_check_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig { input_dim: 5, ..ModelConfig::default() };
    let mut params = init_model(&config, seed);
    for p in params.0.iter_mut() {
        *p += rng.random_range(-0.5..0.5);
    }
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();

    let (_, grad) = loss_and_backward(&config, &params, &rows, &labels, Mode::Eval).unwrap();
    let h = 1e-5;
    let numeric: Vec<f64> = (0..params.len())
        .map(|k| {
            let mut plus = params.clone();
            plus.0[k] += h;
            let mut minus = params.clone();
            minus.0[k] -= h;
            let lp = loss_and_backward(&config, &plus, &rows, &labels, Mode::Eval).unwrap().0;
            let lm = loss_and_backward(&config, &minus, &rows, &labels, Mode::Eval).unwrap().0;
            (lp - lm) / (2.0 * h)
        })
        .collect();
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut grad.0.iter().zip(&numeric).map(|(a, n)| a - n));
    diff / (norm(&mut grad.0.iter().copied()) + norm(&mut numeric.iter().copied()))
}

/// Sample mean and standard deviation of the injected noise.
pub fn gaussian_noise_stats(samples: usize, seed: u64) -> (f64, f64) {
    let base = ParamVector((0..samples).map(|i| (i % 7) as f64 - 3.0).collect());
    let params = GaussianParams { mu: 2.0, sigma: 2.0, mode: GaussianMode::Additive };
    let out = gaussian_attack(&base, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let noise: Vec<f64> = out.0.iter().zip(&base.0).map(|(o, b)| o - b).collect();
    let mean = noise.iter().sum::<f64>() / samples as f64;
    let var = noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    (mean, var.sqrt())
}
