//! The re-localization objective of one class as a fully connected graph
//! labeling problem.
//!
//! Nodes are the positive bags of the class and the labels of a node are the
//! proposals of its bag. With blended scores `ψ̃`, the potentials are
//!
//! * unary: `θ_i(a) = −ψ̃U(e_ia)`
//! * edge:  `θ_ij(a, b) = −α · (ψ̃P(e_ia, e_jb) + ψ̃P(e_jb, e_ia))`
//!
//! so the energy of a labeling equals `−α·r̂ᵀψP − ŷᵀψU` restricted to the
//! positive bags, with each ordered pair folded into its unordered edge.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::data::Selection;
use crate::error::{Error, Result};

/// Scores of one class on the proposals of a fixed list of bags, addressed
/// by `(node, label)`.
pub trait ScoreOracle: Send + Sync {
    fn unary(&self, node: usize, label: usize) -> f64;
    /// Ordered pairwise score of `(node, label)` followed by `(node, label)`.
    fn pairwise(&self, first: (usize, usize), second: (usize, usize)) -> f64;
}

/// Number of scoring-function evaluations performed for a problem.
#[derive(Debug, Default)]
pub struct EvalCounter {
    pairwise: AtomicU64,
    unary: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub pairwise_evals: u64,
    pub unary_evals: u64,
}

impl EvalCounter {
    pub fn counts(&self) -> EvalCounts {
        EvalCounts {
            pairwise_evals: self.pairwise.load(Ordering::Relaxed),
            unary_evals: self.unary.load(Ordering::Relaxed),
        }
    }

    fn add_pairwise(&self, n: u64) {
        self.pairwise.fetch_add(n, Ordering::Relaxed);
    }

    fn add_unary(&self, n: u64) {
        self.unary.fetch_add(n, Ordering::Relaxed);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildMode {
    /// Pairwise scores evaluated on demand and memoized.
    Lazy,
    /// All edge tables materialized up front.
    Eager,
}

type MemoKey = (u32, u32, u32, u32);

enum Edges {
    /// No pairwise term (`α = 0` or a single node).
    Empty,
    /// One row-major `n_i × n_j` table per unordered pair `i < j`.
    Eager(Vec<Vec<f64>>),
    Lazy {
        oracle: Arc<dyn ScoreOracle>,
        memo: Mutex<HashMap<MemoKey, f64>>,
    },
}

pub struct GraphProblem {
    bag_ids: Vec<String>,
    num_labels: Vec<usize>,
    unary: Vec<Vec<f64>>,
    alpha: f64,
    edges: Edges,
    full_image: Vec<Option<usize>>,
    counter: Arc<EvalCounter>,
}

impl std::fmt::Debug for GraphProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphProblem")
            .field("nodes", &self.bag_ids.len())
            .field("num_labels", &self.num_labels)
            .field("alpha", &self.alpha)
            .finish()
    }
}

/// Index of the unordered pair `i < j` among `n` nodes.
#[inline]
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Exhaustive search refuses instances with more labelings than this.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

impl GraphProblem {
    /// Builds the problem for the bags `bag_ids` (with `num_labels[i]`
    /// proposals each) from blended scores.
    pub fn build(
        bag_ids: Vec<String>,
        num_labels: Vec<usize>,
        oracle: Arc<dyn ScoreOracle>,
        alpha: f64,
        mode: BuildMode,
    ) -> Result<Self> {
        if bag_ids.is_empty() {
            return Err(Error::InvalidArgument("graph needs at least one positive bag".into()));
        }
        if bag_ids.len() != num_labels.len() || num_labels.contains(&0) {
            return Err(Error::InvalidArgument("every node needs at least one label".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        let counter = Arc::new(EvalCounter::default());
        let unary: Vec<Vec<f64>> = num_labels
            .iter()
            .enumerate()
            .map(|(i, &n)| (0..n).map(|a| -oracle.unary(i, a)).collect())
            .collect();
        counter.add_unary(num_labels.iter().sum::<usize>() as u64);
        if unary.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite unary potential".into()));
        }

        let m = bag_ids.len();
        let edges = if alpha == 0.0 || m == 1 {
            Edges::Empty
        } else {
            match mode {
                BuildMode::Lazy => Edges::Lazy {
                    oracle,
                    memo: Mutex::new(HashMap::new()),
                },
                BuildMode::Eager => {
                    let mut tables = Vec::with_capacity(m * (m - 1) / 2);
                    for i in 0..m {
                        for j in i + 1..m {
                            let mut t = Vec::with_capacity(num_labels[i] * num_labels[j]);
                            for a in 0..num_labels[i] {
                                for b in 0..num_labels[j] {
                                    let s = oracle.pairwise((i, a), (j, b)) + oracle.pairwise((j, b), (i, a));
                                    t.push(-alpha * s);
                                }
                            }
                            counter.add_pairwise(2 * t.len() as u64);
                            tables.push(t);
                        }
                    }
                    if tables.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidArgument("non-finite edge potential".into()));
                    }
                    Edges::Eager(tables)
                }
            }
        };
        Ok(Self {
            bag_ids,
            full_image: vec![None; m],
            num_labels,
            unary,
            alpha,
            edges,
            counter,
        })
    }

    /// Problem with explicit potentials. `edges` lists the `n_i × n_j`
    /// row-major tables of all pairs `i < j` in lexicographic pair order.
    pub fn from_potentials(unary: Vec<Vec<f64>>, edges: Vec<Vec<f64>>) -> Result<Self> {
        let m = unary.len();
        if m == 0 || unary.iter().any(|u| u.is_empty()) {
            return Err(Error::InvalidArgument("every node needs at least one label".into()));
        }
        let num_labels: Vec<usize> = unary.iter().map(Vec::len).collect();
        if edges.len() != m * (m - 1) / 2 {
            return Err(Error::InvalidArgument(format!(
                "expected {} edge tables, got {}",
                m * (m - 1) / 2,
                edges.len()
            )));
        }
        for i in 0..m {
            for j in i + 1..m {
                if edges[pair_index(m, i, j)].len() != num_labels[i] * num_labels[j] {
                    return Err(Error::InvalidArgument(format!("edge ({i}, {j}) has the wrong size")));
                }
            }
        }
        if unary.iter().chain(&edges).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite potential".into()));
        }
        Ok(Self {
            bag_ids: (0..m).map(|i| i.to_string()).collect(),
            full_image: vec![None; m],
            num_labels,
            unary,
            alpha: 1.0,
            edges: if m == 1 { Edges::Empty } else { Edges::Eager(edges) },
            counter: Arc::new(EvalCounter::default()),
        })
    }

    pub fn with_bag_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.num_nodes() {
            return Err(Error::InvalidArgument("bag id count differs from node count".into()));
        }
        self.bag_ids = ids;
        Ok(self)
    }

    /// Designates the whole-image proposal of every node.
    pub fn with_full_image(mut self, full_image: Vec<Option<usize>>) -> Result<Self> {
        if full_image.len() != self.num_nodes() {
            return Err(Error::InvalidArgument("full-image list differs from node count".into()));
        }
        self.full_image = full_image;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.bag_ids.len()
    }

    pub fn num_labels(&self, node: usize) -> usize {
        self.num_labels[node]
    }

    pub fn label_counts(&self) -> &[usize] {
        &self.num_labels
    }

    pub fn bag_ids(&self) -> &[String] {
        &self.bag_ids
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn full_image(&self, node: usize) -> Option<usize> {
        self.full_image[node]
    }

    pub fn has_edges(&self) -> bool {
        !matches!(self.edges, Edges::Empty)
    }

    pub fn is_lazy(&self) -> bool {
        matches!(self.edges, Edges::Lazy { .. })
    }

    pub fn counts(&self) -> EvalCounts {
        self.counter.counts()
    }

    pub fn unary_potential(&self, node: usize, label: usize) -> f64 {
        self.unary[node][label]
    }

    pub fn unary_row(&self, node: usize) -> &[f64] {
        &self.unary[node]
    }

    fn ordered_score(&self, oracle: &dyn ScoreOracle, memo: &Mutex<HashMap<MemoKey, f64>>, a: (usize, usize), b: (usize, usize)) -> f64 {
        let key = (a.0 as u32, a.1 as u32, b.0 as u32, b.1 as u32);
        if let Some(&v) = memo.lock().expect("memo poisoned").get(&key) {
            return v;
        }
        let v = oracle.pairwise(a, b);
        self.counter.add_pairwise(1);
        memo.lock().expect("memo poisoned").insert(key, v);
        v
    }

    /// `θ_ij(a, b)`; symmetric under swapping `(i, a)` with `(j, b)`.
    pub fn edge_potential(&self, i: usize, a: usize, j: usize, b: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (i, a, j, b) = if i < j { (i, a, j, b) } else { (j, b, i, a) };
        match &self.edges {
            Edges::Empty => 0.0,
            Edges::Eager(tables) => tables[pair_index(self.num_nodes(), i, j)][a * self.num_labels[j] + b],
            Edges::Lazy { oracle, memo } => {
                let s = self.ordered_score(oracle.as_ref(), memo, (i, a), (j, b))
                    + self.ordered_score(oracle.as_ref(), memo, (j, b), (i, a));
                -self.alpha * s
            }
        }
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "labeling has {} entries for {} nodes",
                labels.len(),
                self.num_nodes()
            )));
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= self.num_labels[node] {
                return Err(Error::LabelOutOfRange {
                    node,
                    label,
                    num_labels: self.num_labels[node],
                });
            }
        }
        Ok(())
    }

    /// Energy of a full labeling (one label index per node).
    pub fn energy(&self, labels: &[usize]) -> Result<f64> {
        self.check_labels(labels)?;
        let m = self.num_nodes();
        let mut e: f64 = labels.iter().enumerate().map(|(i, &a)| self.unary[i][a]).sum();
        if self.has_edges() {
            for i in 0..m {
                for j in i + 1..m {
                    e += self.edge_potential(i, labels[i], j, labels[j]);
                }
            }
        }
        Ok(e)
    }

    pub fn labels_from_selection(&self, selection: &Selection) -> Result<Vec<usize>> {
        let infeasible = |reason: String| Error::Infeasible {
            class: selection.class.clone(),
            reason,
        };
        if selection.len() != self.num_nodes() {
            return Err(infeasible(format!(
                "{} entries for {} positive bags",
                selection.len(),
                self.num_nodes()
            )));
        }
        let labels = self
            .bag_ids
            .iter()
            .map(|id| selection.get(id).ok_or_else(|| infeasible(format!("bag `{id}` has no entry"))))
            .collect::<Result<Vec<_>>>()?;
        self.check_labels(&labels)
            .map_err(|e| infeasible(e.to_string()))?;
        Ok(labels)
    }

    pub fn selection_from_labels(&self, class: &str, labels: &[usize]) -> Result<Selection> {
        self.check_labels(labels)?;
        Ok(Selection {
            class: class.to_string(),
            chosen: self
                .bag_ids
                .iter()
                .cloned()
                .zip(labels.iter().copied())
                .collect(),
        })
    }

    pub fn selection_energy(&self, selection: &Selection) -> Result<f64> {
        let labels = self.labels_from_selection(selection)?;
        self.energy(&labels)
    }

    /// Energy of every label of `node` with all other nodes fixed.
    /// Costs `2·(M−1)·n_node` ordered pairwise evaluations before memoization.
    pub fn conditional_costs(&self, labels: &[usize], node: usize) -> Vec<f64> {
        let mut costs = self.unary[node].clone();
        if self.has_edges() {
            for (j, &b) in labels.iter().enumerate() {
                if j == node {
                    continue;
                }
                for (a, c) in costs.iter_mut().enumerate() {
                    *c += self.edge_potential(node, a, j, b);
                }
            }
        }
        costs
    }

    /// Energy change from relabeling `node` to `new_label`, touching only the
    /// edges incident to `node`.
    pub fn delta_energy(&self, labels: &[usize], node: usize, new_label: usize) -> Result<f64> {
        self.check_labels(labels)?;
        if node >= self.num_nodes() {
            return Err(Error::InvalidArgument(format!("node {node} out of range")));
        }
        if new_label >= self.num_labels[node] {
            return Err(Error::LabelOutOfRange {
                node,
                label: new_label,
                num_labels: self.num_labels[node],
            });
        }
        let old = labels[node];
        if old == new_label {
            return Ok(0.0);
        }
        let mut delta = self.unary[node][new_label] - self.unary[node][old];
        if self.has_edges() {
            for (j, &b) in labels.iter().enumerate() {
                if j != node {
                    delta += self.edge_potential(node, new_label, j, b) - self.edge_potential(node, old, j, b);
                }
            }
        }
        Ok(delta)
    }

    /// Exact minimum by enumeration; ties go to the lexicographically
    /// smallest labeling.
    pub fn brute_force(&self) -> Result<(Vec<usize>, f64)> {
        let total = self
            .num_labels
            .iter()
            .try_fold(1u128, |acc, &n| acc.checked_mul(n as u128))
            .unwrap_or(u128::MAX);
        if total > BRUTE_FORCE_LIMIT {
            return Err(Error::TooLarge(total));
        }
        let m = self.num_nodes();
        let mut labels = vec![0usize; m];
        let mut best = (labels.clone(), self.energy(&labels)?);
        loop {
            // odometer with the last node fastest, i.e. lexicographic order
            let mut k = m;
            loop {
                if k == 0 {
                    return Ok(best);
                }
                k -= 1;
                labels[k] += 1;
                if labels[k] < self.num_labels[k] {
                    break;
                }
                labels[k] = 0;
            }
            let e = self.energy(&labels)?;
            if e < best.1 {
                best = (labels.clone(), e);
            }
        }
    }

    /// Eager problem over a subset of nodes, with potentials pulled through
    /// this problem (and its counter and memo).
    pub fn subproblem(&self, nodes: &[usize]) -> Result<GraphProblem> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("empty subproblem".into()));
        }
        if let Some(&bad) = nodes.iter().find(|&&n| n >= self.num_nodes()) {
            return Err(Error::InvalidArgument(format!("node {bad} out of range")));
        }
        let k = nodes.len();
        let mut tables = Vec::with_capacity(k * (k - 1) / 2);
        if self.has_edges() {
            for x in 0..k {
                for y in x + 1..k {
                    let (i, j) = (nodes[x], nodes[y]);
                    let mut t = Vec::with_capacity(self.num_labels[i] * self.num_labels[j]);
                    for a in 0..self.num_labels[i] {
                        for b in 0..self.num_labels[j] {
                            t.push(self.edge_potential(i, a, j, b));
                        }
                    }
                    tables.push(t);
                }
            }
        }
        Ok(GraphProblem {
            bag_ids: nodes.iter().map(|&i| self.bag_ids[i].clone()).collect(),
            num_labels: nodes.iter().map(|&i| self.num_labels[i]).collect(),
            unary: nodes.iter().map(|&i| self.unary[i].clone()).collect(),
            alpha: self.alpha,
            edges: if self.has_edges() && k > 1 { Edges::Eager(tables) } else { Edges::Empty },
            full_image: nodes.iter().map(|&i| self.full_image[i]).collect(),
            counter: Arc::clone(&self.counter),
        })
    }

    /// Materialized potentials for debugging and cross-implementation tests.
    pub fn dump(&self) -> ProblemDump {
        let m = self.num_nodes();
        let mut edges = Vec::new();
        if self.has_edges() {
            for i in 0..m {
                for j in i + 1..m {
                    let table = (0..self.num_labels[i])
                        .map(|a| (0..self.num_labels[j]).map(|b| self.edge_potential(i, a, j, b)).collect())
                        .collect();
                    edges.push(EdgeDump { i, j, table });
                }
            }
        }
        ProblemDump {
            nodes: self.bag_ids.clone(),
            num_labels: self.num_labels.clone(),
            alpha: self.alpha,
            unary: self.unary.clone(),
            edges,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDump {
    pub i: usize,
    pub j: usize,
    pub table: Vec<Vec<f64>>,
}

/// JSON form of a problem: node ids, per-node label counts, unary table and
/// one table per edge `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDump {
    pub nodes: Vec<String>,
    pub num_labels: Vec<usize>,
    pub alpha: f64,
    pub unary: Vec<Vec<f64>>,
    pub edges: Vec<EdgeDump>,
}

impl ProblemDump {
    pub fn into_problem(self) -> Result<GraphProblem> {
        let m = self.nodes.len();
        let mut tables = vec![Vec::new(); m * m.saturating_sub(1) / 2];
        for e in self.edges {
            if e.i >= e.j || e.j >= m {
                return Err(Error::InvalidArgument(format!("bad edge ({}, {})", e.i, e.j)));
            }
            tables[pair_index(m, e.i, e.j)] = e.table.into_iter().flatten().collect();
        }
        for i in 0..m {
            for j in i + 1..m {
                let t = &mut tables[pair_index(m, i, j)];
                if t.is_empty() {
                    *t = vec![0.0; self.num_labels[i] * self.num_labels[j]];
                }
            }
        }
        let mut p = GraphProblem::from_potentials(self.unary, tables)?.with_bag_ids(self.nodes)?;
        p.alpha = self.alpha;
        Ok(p)
    }
}

/// Oracle over explicit score tables; used for tests and synthetic studies.
#[derive(Clone, Debug)]
pub struct TableOracle {
    /// `unary[node][label]`
    pub unary: Vec<Vec<f64>>,
    /// `pairwise[node_a][label_a][node_b][label_b]`, ordered.
    pub pairwise: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ScoreOracle for TableOracle {
    fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node][label]
    }

    fn pairwise(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        self.pairwise[a.0][a.1][b.0][b.1]
    }
}
