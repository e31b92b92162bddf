use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Selection};
use crate::error::{Error, Result};
use crate::losses::LossWeights;

use super::grad::{gradients, Branch, Minibatch, PairTerm, UnaryTerm};
use super::model::ScoringModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    /// Foreground draws per bag (with replacement).
    pub fg_per_bag: usize,
    /// Background draws per bag.
    pub bg_per_bag: usize,
    /// Bags per SGD step; half are drawn from the positives of one class.
    pub bags_per_step: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            iterations: 300,
            fg_per_bag: 3,
            bg_per_bag: 7,
            bags_per_step: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        if self.fg_per_bag == 0 || self.bg_per_bag == 0 || self.bags_per_step < 2 {
            return Err(Error::InvalidArgument(
                "fg_per_bag and bg_per_bag must be positive and bags_per_step >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Momentum buffer, flat in [`ScoringModel::blocks`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity(pub Vec<f64>);

impl Velocity {
    pub fn zeros(model: &ScoringModel) -> Self {
        Self(vec![0.0; model.num_params()])
    }
}

/// `v ← μ·v − η·g`, then `θ ← θ + v`.
pub fn sgd_step(
    model: &mut ScoringModel,
    grad: &ScoringModel,
    config: &TrainConfig,
    velocity: &mut Velocity,
) -> Result<()> {
    let n = model.num_params();
    if velocity.0.len() != n || grad.num_params() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: velocity.0.len(),
        });
    }
    let mut offset = 0;
    for (theta, g) in model.blocks_mut().into_iter().zip(grad.blocks()) {
        let v = &mut velocity.0[offset..offset + theta.len()];
        for ((t, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = config.momentum * *vi - config.learning_rate * gi;
            *t += *vi;
        }
        offset += theta.len();
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Per-step minibatch loss (unary mean + α · pairwise mean).
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_window_mean(&self, window: usize) -> Option<f64> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let w = window.min(n);
        Some(self.losses[n - w..].iter().sum::<f64>() / w as f64)
    }
}

/// Draw `fg_per_bag` indices from `fg` with replacement and `bg_per_bag`
/// from `bg`, without replacement unless `bg` is too small.
fn sample_proposals(
    fg: &[usize],
    bg: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(config.fg_per_bag + config.bg_per_bag);
    if !fg.is_empty() {
        for _ in 0..config.fg_per_bag {
            out.push(*fg.choose(rng).expect("non-empty"));
        }
    }
    if bg.len() >= config.bg_per_bag {
        out.extend(bg.choose_multiple(rng, config.bg_per_bag).copied());
    } else if !bg.is_empty() {
        for _ in 0..config.bg_per_bag {
            out.push(*bg.choose(rng).expect("non-empty"));
        }
    }
    out
}

/// Picks a minibatch of bag indices: up to half from `anchor_pool`, the rest
/// uniformly from all bags.
fn sample_bags(
    anchor_pool: &[usize],
    num_bags: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let want = config.bags_per_step.min(num_bags);
    let mut picked: Vec<usize> = anchor_pool
        .choose_multiple(rng, (want / 2).max(1).min(anchor_pool.len()))
        .copied()
        .collect();
    let mut rest: Vec<usize> = (0..num_bags).filter(|i| !picked.contains(i)).collect();
    rest.shuffle(rng);
    picked.extend(rest.into_iter().take(want - picked.len()));
    picked
}

/// Per-proposal labels over all heads of one bag.
struct BagLabels {
    fg: Vec<usize>,
    bg: Vec<usize>,
    labels: Vec<Vec<f64>>,
}

fn build_batch<'a>(
    branch: Branch,
    bags: &[usize],
    features: impl Fn(usize, usize) -> &'a [f64],
    labels: &[BagLabels],
    pair_label: impl Fn(&[f64], &[f64], (usize, usize), (usize, usize)) -> Vec<f64>,
    weights: LossWeights,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Minibatch<'a> {
    let mut batch = Minibatch::new(branch);
    let mut origin: Vec<(usize, usize)> = Vec::new();
    for &b in bags {
        let bl = &labels[b];
        for j in sample_proposals(&bl.fg, &bl.bg, config, rng) {
            let k = batch.features.len();
            batch.features.push(features(b, j));
            origin.push((b, j));
            batch.unary.push(UnaryTerm {
                proposal: k,
                labels: bl.labels[j].clone(),
            });
        }
    }
    if weights.alpha > 0.0 {
        for (i, &oi) in origin.iter().enumerate() {
            for (j, &oj) in origin.iter().enumerate() {
                if oi.0 == oj.0 {
                    continue;
                }
                let y = pair_label(&labels[oi.0].labels[oi.1], &labels[oj.0].labels[oj.1], oi, oj);
                batch.pairs.push(PairTerm {
                    first: i,
                    second: j,
                    labels: y,
                });
            }
        }
    }
    batch.unary_weight = 1.0 / batch.unary.len().max(1) as f64;
    batch.pair_weight = weights.alpha / batch.pairs.len().max(1) as f64;
    batch
}

/// Re-training: fits the class-specific unary and pairwise functions of all
/// classes to fixed pseudo labels. Generic parameters are left unchanged.
pub fn retrain(
    model: &mut ScoringModel,
    dataset: &Dataset,
    selections: &BTreeMap<String, Selection>,
    weights: LossWeights,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if model.dim != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: dataset.dim(),
        });
    }
    for class in dataset.classes() {
        if model.class_index(class).is_none() {
            return Err(Error::UnknownClass(class.clone()));
        }
        let sel = selections.get(class).ok_or_else(|| Error::Infeasible {
            class: class.clone(),
            reason: "no selection".into(),
        })?;
        sel.ensure_feasible(dataset)?;
    }
    log::debug!(
        "retrain: {} steps, losses averaged over terms per step (unary mean + alpha * pairwise mean)",
        config.iterations
    );

    let classes = model.classes.clone();
    let labels: Vec<BagLabels> = dataset
        .bags()
        .iter()
        .map(|bag| pseudo_labels(bag, &classes, selections))
        .collect();
    let anchors: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| {
            dataset
                .bags()
                .iter()
                .enumerate()
                .filter(|(_, b)| b.has_label(c))
                .map(|(i, _)| i)
                .collect()
        })
        .filter(|v: &Vec<usize>| !v.is_empty())
        .collect();
    if anchors.is_empty() {
        return Ok(TrainReport::default());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = Velocity::zeros(model);
    let mut report = TrainReport::default();
    let bags = dataset.bags();
    for _ in 0..config.iterations {
        let pool = &anchors[rng.random_range(0..anchors.len())];
        let picked = sample_bags(pool, bags.len(), config, &mut rng);
        let batch = build_batch(
            Branch::Specific,
            &picked,
            |b, j| &bags[b].proposals[j].features,
            &labels,
            |ya, yb, _, _| ya.iter().zip(yb).map(|(a, b)| a * b).collect(),
            weights,
            config,
            &mut rng,
        );
        if batch.is_empty() {
            continue;
        }
        let (loss, grad) = gradients(model, &batch)?;
        sgd_step(model, &grad, config, &mut velocity)?;
        report.losses.push(loss);
    }
    Ok(report)
}

fn pseudo_labels(bag: &Bag, classes: &[String], selections: &BTreeMap<String, Selection>) -> BagLabels {
    let mut labels = vec![vec![0.0; classes.len()]; bag.len()];
    for (k, c) in classes.iter().enumerate() {
        if let Some(j) = selections.get(c).and_then(|s| s.get(&bag.id)) {
            labels[j][k] = 1.0;
        }
    }
    let (fg, bg) = (0..bag.len()).partition(|&j| labels[j].iter().any(|&y| y > 0.0));
    BagLabels { fg, bg, labels }
}

/// Trains the class-generic unary (objectness) and pairwise (same-class)
/// functions on a fully labeled source set.
pub fn train_source(
    model: &mut ScoringModel,
    source: &Dataset,
    weights: LossWeights,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if !source.fully_labeled() {
        return Err(Error::Missing("source proposals need ground-truth labels".into()));
    }
    if model.generic_dim != source.generic_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.generic_dim,
            got: source.generic_dim(),
        });
    }

    let bags = source.bags();
    let labels: Vec<BagLabels> = bags
        .iter()
        .map(|bag| {
            let objectness: Vec<Vec<f64>> = bag
                .proposals
                .iter()
                .map(|p| vec![p.gt.as_ref().expect("checked").objectness()])
                .collect();
            let (fg, bg) = (0..bag.len()).partition(|&j| objectness[j][0] > 0.0);
            BagLabels {
                fg,
                bg,
                labels: objectness,
            }
        })
        .collect();

    // group bags by the object classes they contain, so each step sees
    // same-class pairs from different bags
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, bag) in bags.iter().enumerate() {
        let mut seen: Vec<&str> = bag
            .proposals
            .iter()
            .filter_map(|p| p.gt.as_ref().and_then(|g| g.class()))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        for c in seen {
            by_class.entry(c).or_default().push(i);
        }
    }
    let anchors: Vec<Vec<usize>> = if by_class.is_empty() {
        vec![(0..bags.len()).collect()]
    } else {
        by_class.into_values().collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = Velocity::zeros(model);
    let mut report = TrainReport::default();
    for _ in 0..config.iterations {
        let pool = &anchors[rng.random_range(0..anchors.len())];
        let picked = sample_bags(pool, bags.len(), config, &mut rng);
        let batch = build_batch(
            Branch::Generic,
            &picked,
            |b, j| bags[b].proposals[j].generic_features(),
            &labels,
            |_, _, (ba, ja), (bb, jb)| {
                let ga = bags[ba].proposals[ja].gt.as_ref().expect("checked");
                let gb = bags[bb].proposals[jb].gt.as_ref().expect("checked");
                vec![ga.related(gb)]
            },
            weights,
            config,
            &mut rng,
        );
        if batch.is_empty() {
            continue;
        }
        let (loss, grad) = gradients(model, &batch)?;
        sgd_step(model, &grad, config, &mut velocity)?;
        report.losses.push(loss);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Proposal;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut model = ScoringModel::new(&["a"], 1, 1, 0);
        let mut grad = model.zeros_like();
        grad.generic_unary.bias = 2.0;
        let before = model.generic_unary.bias;
        let config = TrainConfig { learning_rate: 0.1, momentum: 0.0, ..Default::default() };
        let mut v = Velocity::zeros(&model);
        sgd_step(&mut model, &grad, &config, &mut v).unwrap();
        assert!((model.generic_unary.bias - (before - 0.2)).abs() < 1e-15);
        sgd_step(&mut model, &grad, &config, &mut v).unwrap();
        assert!((model.generic_unary.bias - (before - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        // scalar recurrence: v1 = -η g1, θ1 = θ0 + v1; v2 = μ v1 - η g2, θ2 = θ1 + v2
        let (eta, mu, g1, g2) = (0.1, 0.9, 1.0, -3.0);
        let v1 = -eta * g1;
        let v2 = mu * v1 - eta * g2;
        let mut model = ScoringModel::new(&["a"], 1, 1, 0);
        model.generic_unary.bias = 0.5;
        let config = TrainConfig { learning_rate: eta, momentum: mu, ..Default::default() };
        let mut v = Velocity::zeros(&model);
        let mut grad = model.zeros_like();
        grad.generic_unary.bias = g1;
        sgd_step(&mut model, &grad, &config, &mut v).unwrap();
        grad.generic_unary.bias = g2;
        sgd_step(&mut model, &grad, &config, &mut v).unwrap();
        assert!((model.generic_unary.bias - (0.5 + v1 + v2)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_only_decays_velocity() {
        let mut model = ScoringModel::new(&["a"], 1, 1, 0);
        let config = TrainConfig { learning_rate: 0.1, momentum: 0.5, ..Default::default() };
        let mut v = Velocity(vec![1.0; model.num_params()]);
        let before = model.to_flat();
        let zero = model.zeros_like();
        sgd_step(&mut model, &zero, &config, &mut v).unwrap();
        assert!(v.0.iter().all(|&x| x == 0.5));
        for (a, b) in model.to_flat().iter().zip(before) {
            assert!((a - b - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sampler_counts() {
        let config = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_proposals(&[4], &[0, 1, 2, 3, 5, 6, 7, 8, 9], &config, &mut rng);
        assert_eq!(s.len(), 10);
        assert_eq!(s.iter().filter(|&&j| j == 4).count(), 3);
        let s = sample_proposals(&[0], &[1, 2], &config, &mut rng);
        assert_eq!(s.len(), 10);
        let s = sample_proposals(&[], &[1, 2, 3, 4, 5, 6, 7, 8], &config, &mut rng);
        assert_eq!(s.len(), 7);
        let mut uniq = s.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 7);
    }

    #[test]
    fn source_training_requires_labels() {
        let ds = Dataset::new(vec![Bag::new("x", &["a"], vec![Proposal::new(vec![1.0])])]).unwrap();
        let mut model = ScoringModel::new(&["t"], 1, 1, 0);
        let err = train_source(&mut model, &ds, LossWeights::default(), &TrainConfig::default());
        assert!(matches!(err, Err(Error::Missing(_))));
    }
}
