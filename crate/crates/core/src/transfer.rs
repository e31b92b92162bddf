//! Blending of class-generic (transferred) and class-specific scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Proposal};
use crate::error::{Error, Result};
use crate::graph::ScoreOracle;
use crate::inference::{relocalize, ClassRelocalization, InitKind, RelocConfig};
use crate::scoring::{Embedding, Linear, Projection, Scope, ScoringModel};

/// `lambda1` weighs the generic pairwise function, `lambda2` the generic
/// unary function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for BlendWeights {
    fn default() -> Self {
        Self { lambda1: 0.5, lambda2: 0.5 }
    }
}

impl BlendWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    /// Generic functions only.
    pub fn warmup() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// `(1 − λ)·specific + λ·generic`, skipping whichever branch has zero weight
/// so that unused parameters are never read.
fn blend(lambda: f64, specific: impl FnOnce() -> Result<f64>, generic: impl FnOnce() -> Result<f64>) -> Result<f64> {
    if lambda >= 1.0 {
        generic()
    } else if lambda <= 0.0 {
        specific()
    } else {
        Ok((1.0 - lambda) * specific()? + lambda * generic()?)
    }
}

pub fn blended_unary(model: &ScoringModel, class: &str, proposal: &Proposal, weights: BlendWeights) -> Result<f64> {
    blend(
        weights.lambda2,
        || model.unary_forward(Scope::Class(class), &proposal.features),
        || model.unary_forward(Scope::Generic, proposal.generic_features()),
    )
}

pub fn blended_pairwise(
    model: &ScoringModel,
    class: &str,
    e: &Proposal,
    e2: &Proposal,
    weights: BlendWeights,
) -> Result<f64> {
    blend(
        weights.lambda1,
        || model.pairwise_forward(Scope::Class(class), &e.features, &e2.features),
        || model.pairwise_forward(Scope::Generic, e.generic_features(), e2.generic_features()),
    )
}

struct Branch {
    embedding: Embedding,
    head: Linear,
    /// `proj[node][label]`
    proj: Vec<Vec<Projection>>,
}

impl Branch {
    fn new(embedding: &Embedding, head: &Linear, bags: &[&Bag], features: impl Fn(&Proposal) -> &[f64]) -> Result<Self> {
        let proj = bags
            .iter()
            .map(|b| b.proposals.iter().map(|p| embedding.project(features(p))).collect())
            .collect::<Result<_>>()?;
        Ok(Self {
            embedding: embedding.clone(),
            head: head.clone(),
            proj,
        })
    }

    fn score(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        self.embedding
            .score_projected(&self.head, &self.proj[a.0][a.1], &self.proj[b.0][b.1])
    }
}

/// Blended scores of one class over a fixed bag list, with per-proposal
/// projections cached so every pairwise query costs O(d).
pub struct BlendedOracle {
    unary: Vec<Vec<f64>>,
    lambda1: f64,
    specific: Option<Branch>,
    generic: Option<Branch>,
}

impl BlendedOracle {
    /// `with_pairwise = false` skips all pairwise preparation (α = 0).
    pub fn new(model: &ScoringModel, class: &str, bags: &[&Bag], weights: BlendWeights, with_pairwise: bool) -> Result<Self> {
        weights.validate()?;
        let unary = bags
            .iter()
            .map(|b| {
                b.proposals
                    .iter()
                    .map(|p| blended_unary(model, class, p, weights))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut specific, mut generic) = (None, None);
        if with_pairwise {
            if weights.lambda1 < 1.0 {
                let head = model.heads.get(class).ok_or_else(|| Error::UnknownClass(class.to_string()))?;
                specific = Some(Branch::new(&model.shared_embedding, head, bags, |p| &p.features)?);
            }
            if weights.lambda1 > 0.0 {
                let g = &model.generic_pairwise;
                generic = Some(Branch::new(&g.embedding, &g.head, bags, Proposal::generic_features)?);
            }
        }
        Ok(Self {
            unary,
            lambda1: weights.lambda1,
            specific,
            generic,
        })
    }
}

impl ScoreOracle for BlendedOracle {
    fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node][label]
    }

    fn pairwise(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        match (&self.specific, &self.generic) {
            (Some(s), Some(g)) => (1.0 - self.lambda1) * s.score(a, b) + self.lambda1 * g.score(a, b),
            (Some(s), None) => s.score(a, b),
            (None, Some(g)) => g.score(a, b),
            (None, None) => 0.0,
        }
    }
}

/// Re-localization with the transferred functions only (`λ1 = λ2 = 1`).
pub fn warmup_relocalize(
    dataset: &Dataset,
    model: &ScoringModel,
    config: &RelocConfig,
) -> Result<BTreeMap<String, ClassRelocalization>> {
    let config = RelocConfig {
        weights: BlendWeights::warmup(),
        ..config.clone()
    };
    relocalize(dataset, model, &config)
}

/// The unary warm-up baseline: per-bag argmax of the transferred unary score.
pub fn warmup_unary(
    dataset: &Dataset,
    model: &ScoringModel,
    config: &RelocConfig,
) -> Result<BTreeMap<String, ClassRelocalization>> {
    let config = RelocConfig {
        alpha: 0.0,
        weights: BlendWeights::warmup(),
        init: InitKind::Objectness,
        ..config.clone()
    };
    relocalize(dataset, model, &config)
}
