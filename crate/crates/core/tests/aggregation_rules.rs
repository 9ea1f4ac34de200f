mod common;

use fedshield::aggregation::{aggregate_mean, krum_select, trimmed_mean, FlagReport, KrumConfig, TrimConfig, UpdateSet};
use fedshield::nn::ParamVector;
use proptest::prelude::*;

fn set(vectors: &[Vec<f64>]) -> UpdateSet {
    UpdateSet::new(
        vectors.iter().enumerate().map(|(i, v)| (format!("c{i}"), ParamVector(v.clone()))).collect(),
    )
    .unwrap()
}

/// Multiples of 1/8 keep every sum exact, so oracle and implementation can
/// be compared with `==`.
fn eighths(m: std::ops::RangeInclusive<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    m.prop_flat_map(move |m| prop::collection::vec(prop::collection::vec((-400i32..400).prop_map(|v| v as f64 / 8.0), dim), m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn trimmed_mean_matches_oracle(vs in eighths(3..=25, 4), beta in 0.0f64..0.49) {
        prop_assume!(vs.len() > 2 * (beta * vs.len() as f64).floor() as usize);
        let (agg, report) = trimmed_mean(&set(&vs), TrimConfig { beta }).unwrap();
        prop_assert_eq!(agg.0, common::trimmed_mean_oracle(&vs, beta));
        let FlagReport::TrimmedMean { trimmed_fraction } = report else { panic!("wrong report") };
        // Each coordinate trims exactly 2·⌊βm⌋ values in total.
        let total: f64 = trimmed_fraction.iter().sum();
        prop_assert!((total - 2.0 * (beta * vs.len() as f64).floor()).abs() < 1e-9);
    }

    #[test]
    fn krum_matches_enumeration(vs in eighths(3..=8, 3), f_seed in 0usize..6) {
        let f = f_seed % (vs.len() - 2);
        let (id, params, report) = krum_select(&set(&vs), KrumConfig { f }).unwrap();
        let (scores, best) = common::krum_oracle(&vs, f);
        let FlagReport::Krum { scores: got, selected } = report else { panic!("wrong report") };
        prop_assert_eq!(got, scores);
        prop_assert_eq!(selected, best);
        prop_assert_eq!(id, format!("c{best}"));
        prop_assert_eq!(params.0, vs[best].clone());
    }

    #[test]
    fn trimmed_mean_ignores_client_order(vs in eighths(5..=12, 3), rot in 0usize..12) {
        let beta = 0.2;
        let mut rotated = vs.clone();
        rotated.rotate_left(rot % vs.len());
        let a = trimmed_mean(&set(&vs), TrimConfig { beta }).unwrap().0;
        let b = trimmed_mean(&set(&rotated), TrimConfig { beta }).unwrap().0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn krum_choice_follows_the_vector(vs in eighths(5..=8, 3), rot in 0usize..8) {
        // Distinct vectors only, so there are no ties for the permutation to break.
        let mut uniq = vs.clone();
        uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        uniq.dedup();
        prop_assume!(uniq.len() == vs.len());
        let (_, a, _) = krum_select(&set(&vs), KrumConfig { f: 1 }).unwrap();
        let mut rotated = vs.clone();
        rotated.rotate_left(rot % vs.len());
        let (scores, _) = common::krum_oracle(&vs, 1);
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(scores.iter().filter(|s| **s == min).count() == 1);
        let (_, b, _) = krum_select(&set(&rotated), KrumConfig { f: 1 }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mean_of_copies_is_the_copy(v in prop::collection::vec(-10.0f64..10.0, 1..6), m in 1usize..6) {
        let vs = vec![v.clone(); m];
        let agg = aggregate_mean(&set(&vs));
        for (a, b) in agg.0.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn krum_resists_a_far_outlier() {
    let mut vs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, 1.0]).collect();
    vs.push(vec![100.0, -100.0]);
    let (id, _, _) = krum_select(&set(&vs), KrumConfig { f: 1 }).unwrap();
    assert_ne!(id, "c5");
}

#[test]
fn trimmed_mean_drops_extremes_per_coordinate() {
    let vs = vec![vec![1.0, 50.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![-40.0, 4.0]];
    let (agg, report) = trimmed_mean(&set(&vs), TrimConfig { beta: 0.25 }).unwrap();
    assert_eq!(agg.0, vec![1.5, 3.5]);
    let FlagReport::TrimmedMean { trimmed_fraction } = report else { panic!() };
    assert_eq!(trimmed_fraction, vec![0.5, 0.5, 0.5, 0.5]);
}
