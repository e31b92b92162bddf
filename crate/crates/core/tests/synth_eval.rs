mod common;

use std::collections::BTreeMap;

use common::rng;
use pairloc::data::{BBox, Selection};
use pairloc::eval::{convergence_check, corloc, iou, selection_accuracy};
use pairloc::synth::{generate, SynthConfig, Synthetic};
use proptest::prelude::*;
use rand::Rng;

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    v.enumerate().fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b }).0
}

fn pick(syn: &Synthetic, mut score: impl FnMut(&str, &[f64]) -> f64) -> BTreeMap<String, Selection> {
    syn.truth
        .keys()
        .map(|class| {
            let mut sel = Selection::new(class);
            for bag in syn.target.positive_bags(class).unwrap() {
                sel.chosen.insert(bag.id.clone(), argmax(bag.proposals.iter().map(|p| score(class, &p.features))));
            }
            (class.clone(), sel)
        })
        .collect()
}

#[test]
fn planted_objects_sit_on_their_class_mean() {
    let cfg = SynthConfig { noise_sigma: 0.0, cluster_separation: 10.0, distractor_overlap: 1.0, seed: 1, ..Default::default() };
    let syn = generate(&cfg).unwrap();
    let means: BTreeMap<&String, Vec<f64>> = syn
        .truth
        .iter()
        .map(|(class, sel)| {
            let mut m = vec![0.0; cfg.feature_dim];
            for (bag, &i) in &sel.chosen {
                let f = &syn.target.bag(bag).unwrap().proposals[i].features;
                m.iter_mut().zip(f).for_each(|(a, b)| *a += b / sel.len() as f64);
            }
            (class, m)
        })
        .collect();
    let sels = pick(&syn, |class, f| {
        -means[&class.to_string()].iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    });
    assert_eq!(selection_accuracy(&sels, &syn.truth).unwrap(), 1.0);
    assert_eq!(corloc(&sels, &syn.target, 0.5).unwrap().mean, 100.0);
}

#[test]
fn objectness_is_misled_under_full_overlap() {
    let cfg = SynthConfig { distractor_overlap: 1.0, noise_sigma: 0.1, seed: 2, ..Default::default() };
    let syn = generate(&cfg).unwrap();
    assert_eq!(syn.distractors.len(), cfg.num_classes);
    let sels = pick(&syn, |_, f| f[0]);
    let acc = selection_accuracy(&sels, &syn.truth).unwrap();
    assert!(acc <= 1.0 / cfg.proposals_per_bag as f64, "{acc}");
    assert_eq!(selection_accuracy(&sels, &syn.distractors).unwrap(), 1.0);
    assert_eq!(corloc(&sels, &syn.target, 0.5).unwrap().mean, 0.0);
}

#[test]
fn objectness_finds_objects_without_distractors() {
    let syn = generate(&SynthConfig { distractor_overlap: 0.0, seed: 3, ..Default::default() }).unwrap();
    assert!(syn.distractors.is_empty());
    let sels = pick(&syn, |_, f| f[0]);
    assert_eq!(selection_accuracy(&sels, &syn.truth).unwrap(), 1.0);
}

#[test]
fn random_selection_is_near_chance() {
    let cfg = SynthConfig { num_classes: 5, bags_per_class: 10, num_source_classes: 2, source_bags_per_class: 1, ..Default::default() };
    let mut total = 0.0;
    for seed in 0..100 {
        let syn = generate(&SynthConfig { seed, ..cfg.clone() }).unwrap();
        let mut r = rng(seed);
        let sels = pick(&syn, |_, _| r.random::<f64>());
        total += selection_accuracy(&sels, &syn.truth).unwrap();
    }
    let mean = total / 100.0;
    assert!((mean - 0.1).abs() <= 0.03, "{mean}");
}

#[test]
fn generation_is_reproducible_and_seed_sensitive() {
    let cfg = SynthConfig { num_classes: 3, bags_per_class: 5, seed: 11, ..Default::default() };
    let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
    assert_eq!(a.target, b.target);
    assert_eq!(a.truth, b.truth);
    let c = generate(&SynthConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.target, c.target);
}

#[test]
fn every_bag_has_one_whole_image_proposal() {
    let syn = generate(&SynthConfig { num_classes: 4, bags_per_class: 6, seed: 5, ..Default::default() }).unwrap();
    for bag in syn.target.bags().iter().chain(syn.source.bags()) {
        assert_eq!(bag.proposals.iter().filter(|p| p.is_full_image).count(), 1);
        assert!(bag.full_image_index().is_some());
    }
    for (class, sel) in &syn.truth {
        sel.ensure_feasible(&syn.target).unwrap();
        assert_eq!(sel.len(), syn.target.positive_bags(class).unwrap().len());
    }
}

#[test]
fn corloc_thresholds_are_nested() {
    let syn = generate(&SynthConfig { num_classes: 4, bags_per_class: 20, seed: 6, ..Default::default() }).unwrap();
    let mut r = rng(6);
    let sels = pick(&syn, |_, _| r.random::<f64>());
    let (lo, hi) = (corloc(&sels, &syn.target, 0.5).unwrap(), corloc(&sels, &syn.target, 0.7).unwrap());
    assert!(hi.mean <= lo.mean);
    for (c, v) in &hi.per_class {
        assert!(*v <= lo.per_class[c]);
    }
    assert_eq!(corloc(&syn.truth, &syn.target, 0.7).unwrap().mean, 100.0);
}

#[test]
fn convergence_check_counts_changed_bags() {
    let a: BTreeMap<String, Selection> = [("c".to_string(), Selection::new("c").with("x", 0).with("y", 1))].into();
    assert_eq!(convergence_check(&a, &a), 0.0);
    let b: BTreeMap<String, Selection> = [("c".to_string(), Selection::new("c").with("x", 2).with("y", 1))].into();
    assert_eq!(convergence_check(&a, &b), 0.5);
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..50.0, 0.0f64..50.0, 0.5f64..40.0, 0.5f64..40.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_decreases_as_box_slides_away(a in bbox(), step in 0.1f64..5.0) {
        let mut last = 1.0;
        for k in 0..20 {
            let dx = step * k as f64;
            let moved = BBox::new(a.x1 + dx, a.y1, a.x2 + dx, a.y2).unwrap();
            let v = iou(&a, &moved).unwrap();
            prop_assert!(v <= last + 1e-12);
            last = v;
        }
    }
}
