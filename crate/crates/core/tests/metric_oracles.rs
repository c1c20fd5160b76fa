mod common;

use gait_core::eval::{eer, rank_k, ScoreMatrix};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metrics_match_brute_force(seed in any::<u64>()) {
        prop_assert_eq!(common::metric_case(seed), Ok(()));
    }
}

#[test]
fn rank_k_reaches_100_at_gallery_size() {
    let mut r = common::rng(5);
    for _ in 0..50 {
        let m = common::random_matrix(&mut r);
        assert_eq!(rank_k(&m, m.cols()), 100.0);
    }
}

#[test]
fn perfect_separation_has_zero_eer() {
    let names: Vec<String> = (0..4).map(|i| i.to_string()).collect();
    let scores: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 0.9 } else { 0.1 }).collect();
    let m = ScoreMatrix::new(55, 55, names.clone(), names, scores).unwrap();
    let (g, i) = m.split_scores();
    assert_eq!(eer(&g, &i).unwrap(), 0.0);
    assert_eq!(rank_k(&m, 1), 100.0);
}
