mod common;

use common::rng;
use pairloc::data::{Bag, Proposal, Selection};
use pairloc::error::Error;
use pairloc::losses::{
    combined_loss, cross_bag_pairs, pairwise_loss, sigmoid, sigmoid_ce, sigmoid_ce_grad, total_loss, unary_loss,
    LossWeights, PairScore,
};
use proptest::prelude::*;
use rand::Rng;

/// Textbook form, only safe for moderate logits.
fn naive_ce(x: f64, y: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[test]
fn lemma_on_ten_thousand_samples() {
    let mut r = rng(0);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = r.random_range(-30.0..=30.0);
        let y = r.random_range(0.0..=1.0);
        let gap = (sigmoid_ce(x, y).unwrap() - sigmoid_ce(x, 0.0).unwrap() + y * x).abs();
        worst = worst.max(gap);
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn ce_matches_textbook_form() {
    for &x in &[-8.0, -1.5, -0.1, 0.0, 0.3, 2.0, 7.5] {
        for &y in &[0.0, 0.25, 1.0] {
            assert!((sigmoid_ce(x, y).unwrap() - naive_ce(x, y)).abs() < 1e-12);
        }
    }
    assert!((sigmoid_ce(0.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn ce_is_stable_at_extremes() {
    assert!(sigmoid_ce(1000.0, 1.0).unwrap() < 1e-300);
    assert_eq!(sigmoid_ce(-1000.0, 1.0).unwrap(), 1000.0);
    assert_eq!(sigmoid_ce(1000.0, 0.0).unwrap(), 1000.0);
    assert_eq!(sigmoid(-1000.0), 0.0);
    assert_eq!(sigmoid(1000.0), 1.0);
    assert!(sigmoid_ce(f64::MAX, 0.5).unwrap().is_finite());
}

#[test]
fn ce_rejects_labels_outside_unit_interval() {
    assert!(matches!(sigmoid_ce(0.0, 1.5), Err(Error::InvalidArgument(_))));
    assert!(sigmoid_ce(0.0, -0.1).is_err());
    assert!(sigmoid_ce(0.0, f64::NAN).is_err());
}

#[test]
fn ce_gradient_at_zero() {
    assert_eq!(sigmoid_ce_grad(0.0, 1.0), -0.5);
    assert_eq!(sigmoid_ce_grad(0.0, 0.0), 0.5);
}

fn bags() -> Vec<Bag> {
    vec![
        Bag::new("p", &["c"], (0..3).map(|i| Proposal::new(vec![i as f64])).collect()),
        Bag::new("q", &["c"], (0..2).map(|i| Proposal::new(vec![i as f64])).collect()),
    ]
}

#[test]
fn unary_loss_by_hand() {
    let owned = bags();
    let b: Vec<&Bag> = owned.iter().collect();
    let scores = vec![vec![0.5, -1.0, 2.0], vec![0.0, 3.0]];
    let sel = Selection::new("c").with("p", 2).with("q", 0);
    let want = naive_ce(0.5, 0.0) + naive_ce(-1.0, 0.0) + naive_ce(2.0, 1.0) + naive_ce(0.0, 1.0) + naive_ce(3.0, 0.0);
    assert!((unary_loss(&b, &scores, &sel).unwrap() - want).abs() < 1e-12);
    assert!(unary_loss(&b, &scores[..1], &sel).is_err());
    assert!(unary_loss(&b, &[vec![0.0; 3], vec![0.0; 3]], &sel).is_err());
}

#[test]
fn pairwise_loss_counts_ordered_pairs() {
    let owned = bags();
    let b: Vec<&Bag> = owned.iter().collect();
    let pairs = cross_bag_pairs(&b, |x, y| 0.2 * (x.0 * 10 + x.1) as f64 - 0.05 * (y.0 * 10 + y.1) as f64);
    assert_eq!(pairs.len(), 2 * 3 * 2);
    assert!(pairs.iter().all(|p| p.first.0 != p.second.0));
    let sel = Selection::new("c").with("p", 1).with("q", 1);
    let mut want = 0.0;
    for p in &pairs {
        let y = if p.first.1 == 1 && p.second.1 == 1 { 1.0 } else { 0.0 };
        want += naive_ce(p.score, y);
    }
    assert!((pairwise_loss(&b, &pairs, &sel).unwrap() - want).abs() < 1e-12);

    let same = [PairScore { first: (0, 0), second: (0, 1), score: 0.0 }];
    assert!(matches!(pairwise_loss(&b, &same, &sel), Err(Error::SameBagPair(_))));
}

#[test]
fn combination_and_total() {
    assert_eq!(combined_loss(2.0, 3.0, LossWeights::new(0.5).unwrap()), 3.5);
    assert_eq!(total_loss([1.0, 2.5, -0.5]), 3.0);
    assert!(LossWeights::new(-1.0).is_err());
    assert_eq!(LossWeights::default().alpha, 1.0);
}

proptest! {
    #[test]
    fn lemma_holds(x in -30.0f64..30.0, y in 0.0f64..=1.0) {
        let lhs = sigmoid_ce(x, y).unwrap();
        prop_assert!((lhs - sigmoid_ce(x, 0.0).unwrap() + y * x).abs() < 1e-9);
    }

    #[test]
    fn ce_non_negative_and_affine_in_label(x in -50.0f64..50.0, y in 0.0f64..=1.0) {
        let l = sigmoid_ce(x, y).unwrap();
        prop_assert!(l >= -1e-12);
        let mid = sigmoid_ce(x, 0.5).unwrap();
        prop_assert!((mid - 0.5 * (sigmoid_ce(x, 0.0).unwrap() + sigmoid_ce(x, 1.0).unwrap())).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_symmetry(x in -700.0f64..700.0) {
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
    }
}
