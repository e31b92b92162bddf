//! Sigmoid cross-entropy and the empirical unary / pairwise losses.
//!
//! All losses are plain sums over terms. `ℓ(x, y) = ℓ(x, 0) − y·x` holds for
//! every `y ∈ [0, 1]`, which makes every loss here affine in the labels.

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Selection};
use crate::error::{Error, Result};

/// Weight of the pairwise loss relative to the unary loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
}

impl LossWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// Logistic function, split on the sign of `x` so neither branch overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// `log(1 + exp(-|x|))`, the shared tail of the stable cross-entropy form.
#[inline]
fn log1p_exp_neg_abs(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p()
}

/// Sigmoid cross-entropy without label validation; hot loops use this.
#[inline]
pub fn sigmoid_ce_unchecked(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + log1p_exp_neg_abs(x)
}

/// Sigmoid cross-entropy `−(1−y)·log(1−σ(x)) − y·log σ(x)` for a soft label `y ∈ [0, 1]`.
pub fn sigmoid_ce(x: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidArgument(format!("label {y} outside [0, 1]")));
    }
    Ok(sigmoid_ce_unchecked(x, y))
}

/// Derivative of the cross-entropy with respect to the logit.
#[inline]
pub fn sigmoid_ce_grad(x: f64, y: f64) -> f64 {
    sigmoid(x) - y
}

/// Summed unary loss over `bags`; `scores[i][j]` is the logit of proposal `j` in bag `i`.
pub fn unary_loss(bags: &[&Bag], scores: &[Vec<f64>], selection: &Selection) -> Result<f64> {
    if scores.len() != bags.len() {
        return Err(Error::Missing(format!(
            "unary scores cover {} bags, expected {}",
            scores.len(),
            bags.len()
        )));
    }
    let mut total = 0.0;
    for (bag, row) in bags.iter().zip(scores) {
        if row.len() != bag.len() {
            return Err(Error::Missing(format!(
                "bag `{}`: {} scores for {} proposals",
                bag.id,
                row.len(),
                bag.len()
            )));
        }
        let chosen = selection.get(&bag.id);
        for (j, &x) in row.iter().enumerate() {
            let y = if chosen == Some(j) { 1.0 } else { 0.0 };
            total += sigmoid_ce_unchecked(x, y);
        }
    }
    Ok(total)
}

/// Ordered proposal pair `(bag, index) -> (bag, index)` with its pairwise logit.
/// Bag positions index into the slice passed to [`pairwise_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub first: (usize, usize),
    pub second: (usize, usize),
    pub score: f64,
}

/// Enumerates every ordered cross-bag pair, scoring each with `score`.
pub fn cross_bag_pairs<F>(bags: &[&Bag], mut score: F) -> Vec<PairScore>
where
    F: FnMut((usize, usize), (usize, usize)) -> f64,
{
    let mut out = Vec::new();
    for (a, bag_a) in bags.iter().enumerate() {
        for (b, bag_b) in bags.iter().enumerate() {
            if a == b {
                continue;
            }
            for i in 0..bag_a.len() {
                for j in 0..bag_b.len() {
                    let (first, second) = ((a, i), (b, j));
                    out.push(PairScore {
                        first,
                        second,
                        score: score(first, second),
                    });
                }
            }
        }
    }
    out
}

/// Summed pairwise loss; each ordered pair contributes once.
pub fn pairwise_loss(bags: &[&Bag], pairs: &[PairScore], selection: &Selection) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let (ba, ia) = pair.first;
        let (bb, ib) = pair.second;
        let (bag_a, bag_b) = match (bags.get(ba), bags.get(bb)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Missing("pair references an unknown bag".into())),
        };
        if ba == bb || bag_a.id == bag_b.id {
            return Err(Error::SameBagPair(bag_a.id.clone()));
        }
        if ia >= bag_a.len() || ib >= bag_b.len() {
            return Err(Error::Missing("pair references an unknown proposal".into()));
        }
        let y = f64::from(selection.induced_pairwise((&bag_a.id, ia), (&bag_b.id, ib))?);
        total += sigmoid_ce_unchecked(pair.score, y);
    }
    Ok(total)
}

pub fn combined_loss(unary: f64, pairwise: f64, weights: LossWeights) -> f64 {
    weights.alpha * pairwise + unary
}

/// Sum of the per-class combined losses.
pub fn total_loss<I: IntoIterator<Item = f64>>(per_class: I) -> f64 {
    per_class.into_iter().sum()
}
