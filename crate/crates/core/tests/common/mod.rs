#![allow(dead_code)]

use pairloc::graph::GraphProblem;
use pairloc::scoring::{batch_loss, gradients, Branch, Minibatch, PairTerm, ScoringModel, UnaryTerm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Model with every parameter, biases included, drawn from U(-0.8, 0.8).
pub fn random_model(rng: &mut ChaCha8Rng, classes: &[&str], dim: usize, generic_dim: usize) -> ScoringModel {
    let mut model = ScoringModel::new(classes, dim, generic_dim, rng.random());
    let flat: Vec<f64> = (0..model.num_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
    model.set_flat(&flat).unwrap();
    model
}

/// Owned contents of a random minibatch.
pub struct BatchSpec {
    pub branch: Branch,
    pub features: Vec<Vec<f64>>,
    pub unary: Vec<UnaryTerm>,
    pub pairs: Vec<PairTerm>,
    pub unary_weight: f64,
    pub pair_weight: f64,
}

impl BatchSpec {
    pub fn random(rng: &mut ChaCha8Rng, model: &ScoringModel, branch: Branch) -> Self {
        let (dim, outputs) = match branch {
            Branch::Generic => (model.generic_dim, 1),
            Branch::Specific => (model.dim, model.classes.len()),
        };
        let n = rng.random_range(2..6);
        let features: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| 1.5 * normal(rng)).collect()).collect();
        let labels = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..outputs)
                .map(|_| match rng.random_range(0..3) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random(),
                })
                .collect()
        };
        let unary = (0..rng.random_range(1..5))
            .map(|_| UnaryTerm {
                proposal: rng.random_range(0..n),
                labels: labels(rng),
            })
            .collect();
        let pairs = (0..rng.random_range(1..6))
            .map(|_| {
                let first = rng.random_range(0..n);
                let second = (first + rng.random_range(1..n)) % n;
                PairTerm {
                    first,
                    second,
                    labels: labels(rng),
                }
            })
            .collect();
        Self {
            branch,
            features,
            unary,
            pairs,
            unary_weight: rng.random_range(0.2..1.5),
            pair_weight: rng.random_range(0.2..1.5),
        }
    }

    pub fn batch(&self) -> Minibatch<'_> {
        let mut b = Minibatch::new(self.branch);
        b.features = self.features.iter().map(Vec::as_slice).collect();
        b.unary = self.unary.clone();
        b.pairs = self.pairs.clone();
        b.unary_weight = self.unary_weight;
        b.pair_weight = self.pair_weight;
        b
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GradCheck {
    pub params: usize,
    pub violations: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
}

/// Analytic gradient against central differences of the batch loss, over
/// every parameter of the model.
pub fn check_gradient(model: &ScoringModel, spec: &BatchSpec) -> GradCheck {
    let batch = spec.batch();
    let (_, grad) = gradients(model, &batch).unwrap();
    let analytic = grad.to_flat();
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut out = GradCheck::default();
    for i in 0..base.len() {
        let mut theta = base.clone();
        theta[i] = base[i] + FD_STEP;
        probe.set_flat(&theta).unwrap();
        let up = batch_loss(&probe, &batch).unwrap();
        theta[i] = base[i] - FD_STEP;
        probe.set_flat(&theta).unwrap();
        let down = batch_loss(&probe, &batch).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(f64::MIN_POSITIVE);
        out.params += 1;
        if abs > FD_ABS_TOL {
            out.worst_rel = out.worst_rel.max(rel);
            if rel > FD_REL_TOL {
                out.violations += 1;
            }
        }
        out.worst_abs = out.worst_abs.max(abs);
    }
    out
}

/// Dense random problem with N(0, 1) unary and edge potentials.
pub fn random_problem(rng: &mut ChaCha8Rng, m: usize, b: usize) -> GraphProblem {
    let unary = (0..m).map(|_| (0..b).map(|_| normal(rng)).collect()).collect();
    let edges = (0..m * (m - 1) / 2).map(|_| (0..b * b).map(|_| normal(rng)).collect()).collect();
    GraphProblem::from_potentials(unary, edges).unwrap()
}

/// Every labeling of `counts`, lexicographically.
pub fn all_labelings(counts: &[usize]) -> Vec<Vec<usize>> {
    counts.iter().fold(vec![Vec::new()], |acc, &n| {
        acc.into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |l| {
                    let mut v = prefix.clone();
                    v.push(l);
                    v
                })
            })
            .collect()
    })
}
