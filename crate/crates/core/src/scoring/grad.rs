//! Summed cross-entropy over a minibatch of labeled terms and its exact
//! gradient with respect to every parameter block.

use crate::error::{Error, Result};
use crate::losses::{sigmoid, sigmoid_ce_unchecked};

use super::model::{check_dim, Embedding, Linear, Projection, ScoringModel};

/// Which family of functions a minibatch trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// One generic unary and one generic relation network; one label per term.
    Generic,
    /// Per-class unary and pairwise heads; one label per model class.
    Specific,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnaryTerm {
    pub proposal: usize,
    pub labels: Vec<f64>,
}

/// Ordered pair `(first, second)`; the embedding sees `[first, second]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTerm {
    pub first: usize,
    pub second: usize,
    pub labels: Vec<f64>,
}

/// Labeled terms over a table of feature vectors. The loss is
/// `unary_weight · Σ ℓ(unary) + pair_weight · Σ ℓ(pairwise)`.
#[derive(Clone, Debug)]
pub struct Minibatch<'a> {
    pub branch: Branch,
    pub features: Vec<&'a [f64]>,
    pub unary: Vec<UnaryTerm>,
    pub pairs: Vec<PairTerm>,
    pub unary_weight: f64,
    pub pair_weight: f64,
}

impl<'a> Minibatch<'a> {
    pub fn new(branch: Branch) -> Self {
        Self {
            branch,
            features: Vec::new(),
            unary: Vec::new(),
            pairs: Vec::new(),
            unary_weight: 1.0,
            pair_weight: 1.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty() && self.pairs.is_empty()
    }
}

struct Functions<'m> {
    unary: Vec<&'m Linear>,
    heads: Vec<&'m Linear>,
    embedding: &'m Embedding,
    dim: usize,
}

fn functions<'m>(model: &'m ScoringModel, branch: Branch) -> Functions<'m> {
    match branch {
        Branch::Generic => Functions {
            unary: vec![&model.generic_unary],
            heads: vec![&model.generic_pairwise.head],
            embedding: &model.generic_pairwise.embedding,
            dim: model.generic_dim,
        },
        Branch::Specific => Functions {
            unary: model.unary.values().collect(),
            heads: model.heads.values().collect(),
            embedding: &model.shared_embedding,
            dim: model.dim,
        },
    }
}

fn validate(batch: &Minibatch<'_>, outputs: usize, dim: usize) -> Result<()> {
    for f in &batch.features {
        check_dim(dim, f.len())?;
    }
    let n = batch.features.len();
    let check_labels = |labels: &[f64]| -> Result<()> {
        if labels.len() != outputs {
            return Err(Error::DimensionMismatch {
                expected: outputs,
                got: labels.len(),
            });
        }
        if let Some(y) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, 1]")));
        }
        Ok(())
    };
    for t in &batch.unary {
        if t.proposal >= n {
            return Err(Error::InvalidArgument("unary term references unknown proposal".into()));
        }
        check_labels(&t.labels)?;
    }
    for t in &batch.pairs {
        if t.first >= n || t.second >= n {
            return Err(Error::InvalidArgument("pair term references unknown proposal".into()));
        }
        check_labels(&t.labels)?;
    }
    Ok(())
}

/// Weighted loss of the minibatch.
pub fn batch_loss(model: &ScoringModel, batch: &Minibatch<'_>) -> Result<f64> {
    let fns = functions(model, batch.branch);
    validate(batch, fns.unary.len(), fns.dim)?;
    let mut unary = 0.0;
    for t in &batch.unary {
        let x = batch.features[t.proposal];
        for (f, &y) in fns.unary.iter().zip(&t.labels) {
            unary += sigmoid_ce_unchecked(f.forward_unchecked(x), y);
        }
    }
    let mut pairwise = 0.0;
    if batch.pair_weight != 0.0 && !batch.pairs.is_empty() {
        let proj: Vec<Projection> = batch
            .features
            .iter()
            .map(|f| fns.embedding.project_unchecked(f))
            .collect();
        for t in &batch.pairs {
            let e = fns.embedding.combine(&proj[t.first], &proj[t.second]);
            for (h, &y) in fns.heads.iter().zip(&t.labels) {
                pairwise += sigmoid_ce_unchecked(h.forward_unchecked(&e.out), y);
            }
        }
    }
    Ok(batch.unary_weight * unary + batch.pair_weight * pairwise)
}

/// Loss and gradient of the minibatch. The gradient has the shape of the
/// model; blocks the batch does not touch are zero. Embedding gradients from
/// every class head and from both pair arguments accumulate into the single
/// embedding of the branch.
pub fn gradients(model: &ScoringModel, batch: &Minibatch<'_>) -> Result<(f64, ScoringModel)> {
    let fns = functions(model, batch.branch);
    let outputs = fns.unary.len();
    let d = fns.dim;
    validate(batch, outputs, d)?;

    let mut unary_grads: Vec<Linear> = vec![Linear::zeros(d); outputs];
    let mut head_grads: Vec<Linear> = vec![Linear::zeros(d); outputs];
    let mut emb_grad = Embedding::zeros(d);
    let mut loss = 0.0;

    let uw = batch.unary_weight;
    for t in &batch.unary {
        let x = batch.features[t.proposal];
        for ((f, g), &y) in fns.unary.iter().zip(unary_grads.iter_mut()).zip(&t.labels) {
            let logit = f.forward_unchecked(x);
            loss += uw * sigmoid_ce_unchecked(logit, y);
            let dl = uw * (sigmoid(logit) - y);
            axpy(dl, x, &mut g.weight);
            g.bias += dl;
        }
    }

    let pw = batch.pair_weight;
    if pw != 0.0 && !batch.pairs.is_empty() {
        let n = batch.features.len();
        let proj: Vec<Projection> = batch
            .features
            .iter()
            .map(|f| fns.embedding.project_unchecked(f))
            .collect();
        // per-proposal sums of dL/dz, split by the half of W they multiply
        let mut g1_left = vec![0.0; n * d];
        let mut g1_right = vec![0.0; n * d];
        let mut g2_left = vec![0.0; n * d];
        let mut g2_right = vec![0.0; n * d];
        let mut d_emb = vec![0.0; d];

        let heads = fns.heads.len();
        let hw: Vec<f64> = fns.heads.iter().flat_map(|h| h.weight.iter().copied()).collect();
        let hb: Vec<f64> = fns.heads.iter().map(|h| h.bias).collect();
        let mut hgw = vec![0.0; heads * d];
        let mut hgb = vec![0.0; heads];
        let (mut th, mut gate, mut out) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let emb = fns.embedding;

        for t in &batch.pairs {
            let (pa, pb) = (&proj[t.first], &proj[t.second]);
            for k in 0..d {
                th[k] = fast_tanh(pa.left1[k] + pb.right1[k] + emb.b1[k]);
                gate[k] = sigmoid(pa.left2[k] + pb.right2[k] + emb.b2[k]);
                out[k] = th[k] * gate[k] + pa.half[k] + pb.half[k];
            }
            d_emb.fill(0.0);
            for (h, &y) in t.labels.iter().enumerate() {
                let w = &hw[h * d..(h + 1) * d];
                let logit = hb[h] + dot(w, &out);
                let (ce, sig) = ce_and_sigmoid(logit, y);
                loss += pw * ce;
                let dl = pw * (sig - y);
                axpy(dl, &out, &mut hgw[h * d..(h + 1) * d]);
                hgb[h] += dl;
                axpy(dl, w, &mut d_emb);
            }
            let (a, b) = (t.first * d, t.second * d);
            for k in 0..d {
                let (th, s) = (th[k], gate[k]);
                let dz1 = d_emb[k] * s * (1.0 - th * th);
                let dz2 = d_emb[k] * th * s * (1.0 - s);
                emb_grad.b1[k] += dz1;
                emb_grad.b2[k] += dz2;
                g1_left[a + k] += dz1;
                g1_right[b + k] += dz1;
                g2_left[a + k] += dz2;
                g2_right[b + k] += dz2;
            }
        }
        for (h, g) in head_grads.iter_mut().enumerate() {
            for (gi, v) in g.weight.iter_mut().zip(&hgw[h * d..(h + 1) * d]) {
                *gi += v;
            }
            g.bias += hgb[h];
        }

        for (p, f) in batch.features.iter().enumerate() {
            for k in 0..d {
                let row = k * 2 * d;
                axpy(g1_left[p * d + k], f, &mut emb_grad.w1[row..row + d]);
                axpy(g1_right[p * d + k], f, &mut emb_grad.w1[row + d..row + 2 * d]);
                axpy(g2_left[p * d + k], f, &mut emb_grad.w2[row..row + d]);
                axpy(g2_right[p * d + k], f, &mut emb_grad.w2[row + d..row + 2 * d]);
            }
        }
    }

    let mut grad = model.zeros_like();
    match batch.branch {
        Branch::Generic => {
            grad.generic_unary = unary_grads.pop().expect("one output");
            grad.generic_pairwise.head = head_grads.pop().expect("one output");
            grad.generic_pairwise.embedding = emb_grad;
        }
        Branch::Specific => {
            for ((slot, u), (head, h)) in grad
                .unary
                .values_mut()
                .zip(unary_grads)
                .zip(grad.heads.values_mut().zip(head_grads))
            {
                *slot = u;
                *head = h;
            }
            grad.shared_embedding = emb_grad;
        }
    }
    Ok((loss, grad))
}

/// `tanh` through a single exponential.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    1.0 - 2.0 / (1.0 + (2.0 * x).exp())
}

/// Cross-entropy and sigmoid of one logit, sharing the exponential.
#[inline]
fn ce_and_sigmoid(x: f64, y: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let ce = x.max(0.0) - x * y + e.ln_1p();
    let sig = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (ce, sig)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::model::Scope;

    #[test]
    fn logit_gradient_at_zero_is_minus_half() {
        let mut model = ScoringModel::new(&["a"], 2, 2, 0);
        model.generic_unary = Linear::zeros(2);
        let f = [1.0, 2.0];
        let mut batch = Minibatch::new(Branch::Generic);
        batch.features.push(&f);
        batch.unary.push(UnaryTerm { proposal: 0, labels: vec![1.0] });
        let (loss, g) = gradients(&model, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g.generic_unary.bias, -0.5);
        assert_eq!(g.generic_unary.weight, vec![-0.5, -1.0]);
    }

    #[test]
    fn saturated_terms_have_tiny_gradient() {
        let mut model = ScoringModel::new(&["a"], 2, 2, 0);
        model.generic_unary = Linear { weight: vec![0.0, 0.0], bias: 40.0 };
        let f = [1.0, 2.0];
        let mut batch = Minibatch::new(Branch::Generic);
        batch.features.push(&f);
        batch.unary.push(UnaryTerm { proposal: 0, labels: vec![1.0] });
        let (loss, g) = gradients(&model, &batch).unwrap();
        assert!(loss < 1e-15);
        assert!(g.generic_unary.bias.abs() < 1e-15);
    }

    #[test]
    fn zero_pair_weight_leaves_pairwise_untouched() {
        let model = ScoringModel::new(&["a", "b"], 3, 3, 5);
        let f = [[0.3, -0.2, 1.0], [1.0, 0.5, -0.4]];
        let mut batch = Minibatch::new(Branch::Specific);
        batch.features.extend(f.iter().map(|v| &v[..]));
        batch.unary.push(UnaryTerm { proposal: 0, labels: vec![1.0, 0.0] });
        batch.pairs.push(PairTerm { first: 0, second: 1, labels: vec![1.0, 0.0] });
        batch.pair_weight = 0.0;
        let (_, g) = gradients(&model, &batch).unwrap();
        assert!(g.shared_embedding.w1.iter().all(|&v| v == 0.0));
        assert!(g.heads.values().all(|h| h.bias == 0.0));
    }

    #[test]
    fn loss_agrees_with_forward_functions() {
        let model = ScoringModel::new(&["a", "b"], 3, 3, 9);
        let f = [[0.3, -0.2, 1.0], [1.0, 0.5, -0.4]];
        let mut batch = Minibatch::new(Branch::Specific);
        batch.features.extend(f.iter().map(|v| &v[..]));
        batch.pairs.push(PairTerm { first: 1, second: 0, labels: vec![0.0, 1.0] });
        let expected = sigmoid_ce_unchecked(model.pairwise_forward(Scope::Class("a"), &f[1], &f[0]).unwrap(), 0.0)
            + sigmoid_ce_unchecked(model.pairwise_forward(Scope::Class("b"), &f[1], &f[0]).unwrap(), 1.0);
        assert!((batch_loss(&model, &batch).unwrap() - expected).abs() < 1e-12);
        let (l, _) = gradients(&model, &batch).unwrap();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        let model = ScoringModel::new(&["a"], 2, 2, 0);
        let f = [1.0, 2.0];
        let mut batch = Minibatch::new(Branch::Specific);
        batch.features.push(&f);
        batch.unary.push(UnaryTerm { proposal: 0, labels: vec![2.0] });
        assert!(gradients(&model, &batch).is_err());
        batch.unary[0].labels = vec![1.0, 0.0];
        assert!(gradients(&model, &batch).is_err());
    }
}
