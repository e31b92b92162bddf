use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sigmoid;

/// Affine scalar function `wᵀx + b`. Serves both as unary scorer and as the
/// head of a relation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Vec<f64>,
    pub bias: f64,
}

pub type LinearUnary = Linear;

impl Linear {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: vec![0.0; dim],
            bias: 0.0,
        }
    }

    fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let r = 1.0 / (dim as f64).sqrt();
        Self {
            weight: (0..dim).map(|_| rng.random_range(-r..r)).collect(),
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        dot(&self.weight, x) + self.bias
    }
}

/// Gated joint embedding of an ordered proposal pair:
/// `E(e, e') = tanh(W1·[e, e'] + b1) ⊙ σ(W2·[e, e'] + b2) + (e + e') / 2`.
///
/// `w1` and `w2` are `dim × 2·dim`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// The four half-products `W·e` of one proposal, so a pair costs O(d)
/// instead of O(d²).
#[derive(Clone, Debug)]
pub struct Projection {
    pub left1: Vec<f64>,
    pub right1: Vec<f64>,
    pub left2: Vec<f64>,
    pub right2: Vec<f64>,
    pub half: Vec<f64>,
}

/// Forward intermediates of one pair, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct EmbedCache {
    pub tanh: Vec<f64>,
    pub gate: Vec<f64>,
    pub out: Vec<f64>,
}

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            w1: vec![0.0; 2 * dim * dim],
            b1: vec![0.0; dim],
            w2: vec![0.0; 2 * dim * dim],
            b2: vec![0.0; dim],
        }
    }

    fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let r = 1.0 / ((2 * dim) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-r..r)).collect() };
        Self {
            dim,
            w1: draw(2 * dim * dim),
            b1: vec![0.0; dim],
            w2: draw(2 * dim * dim),
            b2: vec![0.0; dim],
        }
    }

    pub fn project(&self, e: &[f64]) -> Result<Projection> {
        check_dim(self.dim, e.len())?;
        Ok(self.project_unchecked(e))
    }

    pub(crate) fn project_unchecked(&self, e: &[f64]) -> Projection {
        let d = self.dim;
        let mut p = Projection {
            left1: vec![0.0; d],
            right1: vec![0.0; d],
            left2: vec![0.0; d],
            right2: vec![0.0; d],
            half: e.iter().map(|v| 0.5 * v).collect(),
        };
        for k in 0..d {
            let row1 = &self.w1[k * 2 * d..(k + 1) * 2 * d];
            let row2 = &self.w2[k * 2 * d..(k + 1) * 2 * d];
            p.left1[k] = dot(&row1[..d], e);
            p.right1[k] = dot(&row1[d..], e);
            p.left2[k] = dot(&row2[..d], e);
            p.right2[k] = dot(&row2[d..], e);
        }
        p
    }

    pub(crate) fn combine(&self, a: &Projection, b: &Projection) -> EmbedCache {
        let d = self.dim;
        let mut cache = EmbedCache {
            tanh: vec![0.0; d],
            gate: vec![0.0; d],
            out: vec![0.0; d],
        };
        for k in 0..d {
            let t = (a.left1[k] + b.right1[k] + self.b1[k]).tanh();
            let s = sigmoid(a.left2[k] + b.right2[k] + self.b2[k]);
            cache.tanh[k] = t;
            cache.gate[k] = s;
            cache.out[k] = t * s + a.half[k] + b.half[k];
        }
        cache
    }

    /// Scalar `wᵀE + b` straight from two projections, without allocating.
    #[inline]
    pub(crate) fn score_projected(&self, head: &Linear, a: &Projection, b: &Projection) -> f64 {
        let mut acc = head.bias;
        for k in 0..self.dim {
            let t = (a.left1[k] + b.right1[k] + self.b1[k]).tanh();
            let s = sigmoid(a.left2[k] + b.right2[k] + self.b2[k]);
            acc += head.weight[k] * (t * s + a.half[k] + b.half[k]);
        }
        acc
    }

    pub fn forward(&self, e: &[f64], e2: &[f64]) -> Result<Vec<f64>> {
        let a = self.project(e)?;
        let b = self.project(e2)?;
        Ok(self.combine(&a, &b).out)
    }
}

/// Relation network: embedding followed by a linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPairwise {
    pub embedding: Embedding,
    pub head: Linear,
}

impl RelationPairwise {
    pub fn forward(&self, e: &[f64], e2: &[f64]) -> Result<f64> {
        let emb = self.embedding.forward(e, e2)?;
        Ok(self.head.forward_unchecked(&emb))
    }
}

/// Which scoring function to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope<'a> {
    /// Class-generic (transferred) function.
    Generic,
    /// Class-specific function of the named target class.
    Class(&'a str),
}

/// All unary and pairwise scoring functions. Class-specific pairwise
/// functions share one embedding and differ only in their linear heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub dim: usize,
    pub generic_dim: usize,
    pub classes: Vec<String>,
    pub unary: BTreeMap<String, Linear>,
    pub shared_embedding: Embedding,
    pub heads: BTreeMap<String, Linear>,
    pub generic_unary: Linear,
    pub generic_pairwise: RelationPairwise,
}

impl ScoringModel {
    /// Randomly initialized model: weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<S: AsRef<str>>(classes: &[S], dim: usize, generic_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes: Vec<String> = classes.iter().map(|c| c.as_ref().to_string()).collect();
        classes.sort();
        classes.dedup();
        let generic_unary = Linear::random(generic_dim, &mut rng);
        let generic_pairwise = RelationPairwise {
            embedding: Embedding::random(generic_dim, &mut rng),
            head: Linear::random(generic_dim, &mut rng),
        };
        let shared_embedding = Embedding::random(dim, &mut rng);
        let mut unary = BTreeMap::new();
        let mut heads = BTreeMap::new();
        for c in &classes {
            unary.insert(c.clone(), Linear::random(dim, &mut rng));
            heads.insert(c.clone(), Linear::random(dim, &mut rng));
        }
        Self {
            dim,
            generic_dim,
            classes,
            unary,
            shared_embedding,
            heads,
            generic_unary,
            generic_pairwise,
        }
    }

    /// Same shapes, all parameters zero. Used as the gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    fn class_unary(&self, class: &str) -> Result<&Linear> {
        self.unary
            .get(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub(crate) fn class_head(&self, class: &str) -> Result<&Linear> {
        self.heads
            .get(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn unary_forward(&self, scope: Scope<'_>, e: &[f64]) -> Result<f64> {
        match scope {
            Scope::Generic => self.generic_unary.forward(e),
            Scope::Class(c) => self.class_unary(c)?.forward(e),
        }
    }

    pub fn embedding(&self, scope: Scope<'_>) -> &Embedding {
        match scope {
            Scope::Generic => &self.generic_pairwise.embedding,
            Scope::Class(_) => &self.shared_embedding,
        }
    }

    pub fn embed(&self, scope: Scope<'_>, e: &[f64], e2: &[f64]) -> Result<Vec<f64>> {
        self.embedding(scope).forward(e, e2)
    }

    pub fn pairwise_forward(&self, scope: Scope<'_>, e: &[f64], e2: &[f64]) -> Result<f64> {
        let head = match scope {
            Scope::Generic => &self.generic_pairwise.head,
            Scope::Class(c) => self.class_head(c)?,
        };
        let emb = self.embed(scope, e, e2)?;
        Ok(head.forward_unchecked(&emb))
    }

    /// Parameter blocks in a fixed order: generic functions, shared
    /// embedding, then per-class unary and head in class order. Both class
    /// maps share the key set of `classes`, so their iteration orders agree.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        push_linear(&mut out, &self.generic_unary);
        push_embedding(&mut out, &self.generic_pairwise.embedding);
        push_linear(&mut out, &self.generic_pairwise.head);
        push_embedding(&mut out, &self.shared_embedding);
        for (u, h) in self.unary.values().zip(self.heads.values()) {
            push_linear(&mut out, u);
            push_linear(&mut out, h);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        push_linear_mut(&mut out, &mut self.generic_unary);
        let RelationPairwise { embedding, head } = &mut self.generic_pairwise;
        push_embedding_mut(&mut out, embedding);
        push_linear_mut(&mut out, head);
        push_embedding_mut(&mut out, &mut self.shared_embedding);
        for (u, h) in self.unary.values_mut().zip(self.heads.values_mut()) {
            push_linear_mut(&mut out, u);
            push_linear_mut(&mut out, h);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        check_dim(n, flat.len())?;
        let mut offset = 0;
        for block in self.blocks_mut() {
            let len = block.len();
            block.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn push_linear<'a>(out: &mut Vec<&'a [f64]>, l: &'a Linear) {
    out.push(&l.weight);
    out.push(std::slice::from_ref(&l.bias));
}

fn push_embedding<'a>(out: &mut Vec<&'a [f64]>, e: &'a Embedding) {
    out.extend([&e.w1[..], &e.b1[..], &e.w2[..], &e.b2[..]]);
}

fn push_linear_mut<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut Linear) {
    out.push(&mut l.weight);
    out.push(std::slice::from_mut(&mut l.bias));
}

fn push_embedding_mut<'a>(out: &mut Vec<&'a mut [f64]>, e: &'a mut Embedding) {
    let Embedding { w1, b1, w2, b2, .. } = e;
    out.extend([&mut w1[..], &mut b1[..], &mut w2[..], &mut b2[..]]);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
