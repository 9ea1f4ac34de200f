//! Synthetic stand-in for the BRFSS 2015 balanced diabetes file.
//!
//! Same header, value ranges and 50/50 label balance as the public
//! `diabetes_binary_5050split_health_indicators_BRFSS2015.csv`. Features are
//! drawn independently given the label from class-conditional marginals
//! close to the published per-class means, with the class gap shrunk by
//! [`DEFAULT_SEPARATION`] so that a linear model tops out near 75% accuracy,
//! about what the real file supports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset};

/// Row count of the cleaned balanced BRFSS file.
pub const BRFSS_ROWS: usize = 70_692;

/// Fraction of the per-class gap kept for every feature.
pub const DEFAULT_SEPARATION: f64 = 0.72;

/// Feature columns, in file order.
pub const FEATURE_NAMES: [&str; 21] = [
    "HighBP",
    "HighChol",
    "CholCheck",
    "BMI",
    "Smoker",
    "Stroke",
    "HeartDiseaseorAttack",
    "PhysActivity",
    "Fruits",
    "Veggies",
    "HvyAlcoholConsump",
    "AnyHealthcare",
    "NoDocbcCost",
    "GenHlth",
    "MentHlth",
    "PhysHlth",
    "DiffWalk",
    "Sex",
    "Age",
    "Education",
    "Income",
];

enum Marginal {
    /// P(x = 1) for label 0 and label 1.
    Binary(f64, f64),
    /// Rounded normal: means per label, shared sd, clip range.
    Ordinal { mean: (f64, f64), sd: f64, lo: f64, hi: f64 },
    /// Zero with probability p (per label), else a rounded log-normal day count in 1..=30.
    Days(f64, f64),
}

fn marginal(name: &str) -> Marginal {
    use Marginal::*;
    match name {
        "HighBP" => Binary(0.376, 0.753),
        "HighChol" => Binary(0.382, 0.670),
        "CholCheck" => Binary(0.957, 0.993),
        "BMI" => Ordinal { mean: (27.77, 31.94), sd: 6.6, lo: 12.0, hi: 98.0 },
        "Smoker" => Binary(0.433, 0.518),
        "Stroke" => Binary(0.032, 0.092),
        "HeartDiseaseorAttack" => Binary(0.073, 0.223),
        "PhysActivity" => Binary(0.776, 0.631),
        "Fruits" => Binary(0.638, 0.585),
        "Veggies" => Binary(0.821, 0.756),
        "HvyAlcoholConsump" => Binary(0.062, 0.024),
        "AnyHealthcare" => Binary(0.949, 0.961),
        "NoDocbcCost" => Binary(0.086, 0.106),
        "GenHlth" => Ordinal { mean: (2.38, 3.29), sd: 1.0, lo: 1.0, hi: 5.0 },
        "MentHlth" => Days(0.70, 0.62),
        "PhysHlth" => Days(0.63, 0.45),
        "DiffWalk" => Binary(0.135, 0.371),
        "Sex" => Binary(0.446, 0.479),
        "Age" => Ordinal { mean: (7.79, 9.38), sd: 2.9, lo: 1.0, hi: 13.0 },
        "Education" => Ordinal { mean: (5.08, 4.75), sd: 1.0, lo: 1.0, hi: 6.0 },
        "Income" => Ordinal { mean: (6.16, 5.21), sd: 2.1, lo: 1.0, hi: 8.0 },
        other => unreachable!("no marginal for {other}"),
    }
}

/// Shrinks the gap between the two class values towards their midpoint.
fn shrink(pair: (f64, f64), label: f64, separation: f64) -> f64 {
    let mid = (pair.0 + pair.1) / 2.0;
    let target = if label == 1.0 { pair.1 } else { pair.0 };
    mid + separation * (target - mid)
}

/// Generates `rows` samples (even split of labels, shuffled).
pub fn generate(rows: usize, separation: f64, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<f64> = (0..rows).map(|i| (i % 2) as f64).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    let std_normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let day_count = Normal::<f64>::new(1.8, 1.0).expect("log-normal location");
    let mut features = Vec::with_capacity(rows * FEATURE_NAMES.len());
    for &y in &labels {
        for name in FEATURE_NAMES {
            let v = match marginal(name) {
                Marginal::Binary(p0, p1) => {
                    let p = shrink((p0, p1), y, separation);
                    if rng.random::<f64>() < p { 1.0 } else { 0.0 }
                }
                Marginal::Ordinal { mean, sd, lo, hi } => {
                    let m = shrink(mean, y, separation);
                    (m + sd * std_normal.sample(&mut rng)).round().clamp(lo, hi)
                }
                Marginal::Days(z0, z1) => {
                    let p_zero = shrink((z0, z1), y, separation);
                    let days = day_count.sample(&mut rng).exp().round().clamp(1.0, 30.0);
                    if rng.random::<f64>() < p_zero { 0.0 } else { days }
                }
            };
            features.push(v);
        }
    }
    Dataset::new(features, labels, FEATURE_NAMES.iter().map(|s| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_balance() {
        let d = generate(1000, DEFAULT_SEPARATION, 3).unwrap();
        assert_eq!(d.n_rows(), 1000);
        assert_eq!(d.n_cols(), 21);
        assert_eq!(d.labels().iter().sum::<f64>(), 500.0);
        for j in 0..d.n_cols() {
            assert!(d.column(j).all(|v| v.fract() == 0.0 && (0.0..=98.0).contains(&v)));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(50, 0.7, 9).unwrap(), generate(50, 0.7, 9).unwrap());
        assert_ne!(generate(50, 0.7, 9).unwrap(), generate(50, 0.7, 10).unwrap());
    }

    #[test]
    fn class_signal_points_the_right_way() {
        let d = generate(20_000, DEFAULT_SEPARATION, 1).unwrap();
        let bp = d.feature_names().iter().position(|n| n == "HighBP").unwrap();
        let mean = |label: f64| {
            let rows: Vec<usize> = (0..d.n_rows()).filter(|i| d.label(*i) == label).collect();
            rows.iter().map(|i| d.row(*i)[bp]).sum::<f64>() / rows.len() as f64
        };
        assert!(mean(1.0) - mean(0.0) > 0.2);
    }
}
