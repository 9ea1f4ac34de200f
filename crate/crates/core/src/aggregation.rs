//! Aggregation rules: coordinate-wise mean, coordinate-wise trimmed mean
//! and Krum. The robust rules also return per-client evidence used by the
//! disconnection policy.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no updates to aggregate")]
    Empty,
    #[error("update from {id:?} has {got} values, expected {expected}")]
    LengthMismatch { id: String, expected: usize, got: usize },
    #[error("duplicate client id {0:?}")]
    DuplicateId(String),
    #[error("beta {0} outside [0, 0.5)")]
    InvalidBeta(f64),
    #[error("trimming {trim} per side from {m} updates leaves nothing")]
    OverTrim { m: usize, trim: usize },
    #[error("Krum needs n - f - 2 >= 1 (n = {n}, f = {f})")]
    KrumTooFew { n: usize, f: usize },
}

/// The updates of one round, in submission order.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSet {
    entries: Vec<(String, ParamVector)>,
}

impl UpdateSet {
    pub fn new(entries: Vec<(String, ParamVector)>) -> Result<Self, AggregationError> {
        let first = entries.first().ok_or(AggregationError::Empty)?;
        let len = first.1.len();
        let mut seen = HashSet::new();
        for (id, p) in &entries {
            if p.len() != len {
                return Err(AggregationError::LengthMismatch { id: id.clone(), expected: len, got: p.len() });
            }
            if !seen.insert(id.as_str()) {
                return Err(AggregationError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn vectors(&self) -> impl Iterator<Item = &ParamVector> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn entries(&self) -> &[(String, ParamVector)] {
        &self.entries
    }

    fn value(&self, client: usize, coord: usize) -> f64 {
        self.entries[client].1 .0[coord]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    pub beta: f64,
}

impl TrimConfig {
    /// `⌊β·m⌋`, the number of values dropped from each side.
    pub fn per_side(&self, m: usize) -> usize {
        (self.beta * m as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KrumConfig {
    pub f: usize,
}

/// Per-client evidence produced alongside an aggregate.
#[derive(Debug, Clone, PartialEq)]
pub enum FlagReport {
    /// Plain mean: nothing to report.
    None,
    /// Fraction of coordinates on which each client's value was trimmed.
    TrimmedMean { trimmed_fraction: Vec<f64> },
    /// Krum scores and the index of the selected update.
    Krum { scores: Vec<f64>, selected: usize },
}

/// Coordinate-wise arithmetic mean.
pub fn aggregate_mean(updates: &UpdateSet) -> ParamVector {
    let m = updates.len() as f64;
    ParamVector(
        (0..updates.dim())
            .map(|k| updates.vectors().map(|v| v.0[k]).sum::<f64>() / m)
            .collect(),
    )
}

/// Coordinate-wise trimmed mean.
///
/// Per coordinate the `m` values are sorted, `⌊β·m⌋` are dropped from each
/// end and the survivors are averaged in sorted order. When several
/// clients tie at a cut point, the trimmed share at that value is split
/// evenly between them in the evidence; the aggregate itself does not
/// depend on how ties are broken.
pub fn trimmed_mean(
    updates: &UpdateSet,
    config: TrimConfig,
) -> Result<(ParamVector, FlagReport), AggregationError> {
    if !(0.0..0.5).contains(&config.beta) {
        return Err(AggregationError::InvalidBeta(config.beta));
    }
    let m = updates.len();
    let trim = config.per_side(m);
    if m <= 2 * trim {
        return Err(AggregationError::OverTrim { m, trim });
    }
    let dim = updates.dim();
    let mut trimmed = vec![0.0; m];
    let mut out = Vec::with_capacity(dim);
    let mut column: Vec<f64> = Vec::with_capacity(m);
    for k in 0..dim {
        column.clear();
        column.extend((0..m).map(|i| updates.value(i, k)));
        let mut sorted = column.clone();
        sorted.sort_by(f64::total_cmp);
        let survivors = &sorted[trim..m - trim];
        out.push(survivors.iter().sum::<f64>() / survivors.len() as f64);

        if trim > 0 {
            credit_cut(&column, &sorted, trim, Ordering::Less, &mut trimmed);
            credit_cut(&column, &sorted, trim, Ordering::Greater, &mut trimmed);
        }
    }
    let trimmed_fraction = trimmed.into_iter().map(|t| t / dim as f64).collect();
    Ok((ParamVector(out), FlagReport::TrimmedMean { trimmed_fraction }))
}

/// Adds one coordinate's trim credit for one side. `side` is `Less` for the
/// low end and `Greater` for the high end.
fn credit_cut(column: &[f64], sorted: &[f64], trim: usize, side: Ordering, credit: &mut [f64]) {
    let cut = match side {
        Ordering::Less => sorted[trim - 1],
        _ => sorted[sorted.len() - trim],
    };
    let beyond = column.iter().filter(|v| v.total_cmp(&cut) == side).count();
    let at_cut = column.iter().filter(|v| v.total_cmp(&cut) == Ordering::Equal).count();
    let share = (trim - beyond) as f64 / at_cut as f64;
    for (c, v) in credit.iter_mut().zip(column) {
        match v.total_cmp(&cut) {
            o if o == side => *c += 1.0,
            Ordering::Equal => *c += share,
            _ => {}
        }
    }
}

/// Krum scores: for each update, the sum of squared distances to its
/// `n - f - 2` nearest other updates.
pub fn krum_scores(updates: &UpdateSet, config: KrumConfig) -> Result<Vec<f64>, AggregationError> {
    let n = updates.len();
    if n < config.f + 3 {
        return Err(AggregationError::KrumTooFew { n, f: config.f });
    }
    let neighbours = n - config.f - 2;
    let v: Vec<&ParamVector> = updates.vectors().collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = v[i].squared_distance(v[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
            row.sort_by(f64::total_cmp);
            row[..neighbours].iter().sum()
        })
        .collect())
}

/// Krum: picks the update with the lowest score (lowest index on ties) and
/// returns it verbatim as the aggregate.
pub fn krum_select(
    updates: &UpdateSet,
    config: KrumConfig,
) -> Result<(String, ParamVector, FlagReport), AggregationError> {
    let scores = krum_scores(updates, config)?;
    let selected = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if s.total_cmp(&scores[best]) == Ordering::Less { i } else { best });
    let (id, params) = updates.entries[selected].clone();
    Ok((id, params, FlagReport::Krum { scores, selected }))
}
