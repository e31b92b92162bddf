//! Sequential tree-reweighted message passing on a complete graph.
//!
//! Nodes are processed in index order. The edges are covered by monotonic
//! chains so that node `i` lies in `max(i, M−1−i)` chains; the lower bound
//! is the sum of chain minima after splitting each reparameterized unary
//! equally among its chains.

use serde::{Deserialize, Serialize};

use super::icm::argmin_keep;
use crate::error::{Error, Result};
use crate::graph::GraphProblem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrwsConfig {
    pub max_iters: usize,
    pub lb_tolerance: f64,
    pub lb_patience: usize,
}

impl Default for TrwsConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            lb_tolerance: 1e-6,
            lb_patience: 10,
        }
    }
}

impl TrwsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.lb_patience == 0 || !(self.lb_tolerance > 0.0) {
            return Err(Error::InvalidArgument("TRW-S settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrwsResult {
    pub labels: Vec<usize>,
    pub energy: f64,
    /// Lower bound after every iteration.
    pub lower_bounds: Vec<f64>,
}

impl TrwsResult {
    pub fn lower_bound(&self) -> f64 {
        self.lower_bounds.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

struct Tables {
    n: Vec<usize>,
    unary: Vec<Vec<f64>>,
    /// `pair[i][j]` for `i < j`, row-major `n_i × n_j`.
    pair: Vec<Vec<Vec<f64>>>,
}

impl Tables {
    fn new(p: &GraphProblem) -> Self {
        let m = p.num_nodes();
        let n = p.label_counts().to_vec();
        let pair = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        if j <= i {
                            return Vec::new();
                        }
                        let mut t = Vec::with_capacity(n[i] * n[j]);
                        for a in 0..n[i] {
                            for b in 0..n[j] {
                                t.push(p.edge_potential(i, a, j, b));
                            }
                        }
                        t
                    })
                    .collect()
            })
            .collect();
        Self {
            unary: (0..m).map(|i| p.unary_row(i).to_vec()).collect(),
            n,
            pair,
        }
    }

    #[inline]
    fn edge(&self, i: usize, a: usize, j: usize, b: usize) -> f64 {
        if i < j {
            self.pair[i][j][a * self.n[j] + b]
        } else {
            self.pair[j][i][b * self.n[i] + a]
        }
    }
}

struct Solver {
    t: Tables,
    /// `msg[i][j]` is the message from `i` to `j`, indexed by the label of `j`.
    msg: Vec<Vec<Vec<f64>>>,
    chains: Vec<Vec<usize>>,
    chain_count: Vec<usize>,
}

impl Solver {
    fn new(p: &GraphProblem) -> Self {
        let t = Tables::new(p);
        let m = t.n.len();
        let msg = (0..m).map(|_| (0..m).map(|j| vec![0.0; t.n[j]]).collect()).collect();
        let (chains, chain_count) = monotonic_chains(m);
        Self { t, msg, chains, chain_count }
    }

    fn reparameterized(&self, i: usize) -> Vec<f64> {
        let mut th = self.t.unary[i].clone();
        for (k, row) in self.msg.iter().enumerate() {
            if k != i {
                for (v, m) in th.iter_mut().zip(&row[i]) {
                    *v += m;
                }
            }
        }
        th
    }

    fn send(&mut self, i: usize, j: usize, scaled: &[f64]) {
        let h: Vec<f64> = scaled.iter().zip(&self.msg[j][i]).map(|(s, m)| s - m).collect();
        let out: Vec<f64> = (0..self.t.n[j])
            .map(|b| {
                h.iter()
                    .enumerate()
                    .map(|(a, &v)| v + self.t.edge(i, a, j, b))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
        self.msg[i][j] = out.into_iter().map(|v| v - lo).collect();
    }

    fn pass(&mut self, forward: bool) {
        let m = self.t.n.len();
        let order: Vec<usize> = if forward { (0..m).collect() } else { (0..m).rev().collect() };
        for i in order {
            let gamma = 1.0 / self.chain_count[i] as f64;
            let scaled: Vec<f64> = self.reparameterized(i).into_iter().map(|v| gamma * v).collect();
            let targets: Vec<usize> = if forward { (i + 1..m).collect() } else { (0..i).collect() };
            for j in targets {
                self.send(i, j, &scaled);
            }
        }
    }

    fn lower_bound(&self) -> f64 {
        let theta: Vec<Vec<f64>> = (0..self.t.n.len())
            .map(|i| {
                let w = 1.0 / self.chain_count[i] as f64;
                self.reparameterized(i).into_iter().map(|v| w * v).collect()
            })
            .collect();
        self.chains
            .iter()
            .map(|chain| {
                let mut cost = theta[chain[0]].clone();
                for w in chain.windows(2) {
                    let (i, j) = (w[0], w[1]);
                    cost = (0..self.t.n[j])
                        .map(|b| {
                            let best = cost
                                .iter()
                                .enumerate()
                                .map(|(a, &c)| c + self.t.edge(i, a, j, b) - self.msg[i][j][b] - self.msg[j][i][a])
                                .fold(f64::INFINITY, f64::min);
                            best + theta[j][b]
                        })
                        .collect();
                }
                cost.into_iter().fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    fn extract(&self) -> Vec<usize> {
        let m = self.t.n.len();
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let costs: Vec<f64> = (0..self.t.n[i])
                .map(|a| {
                    let fixed: f64 = labels.iter().enumerate().map(|(j, &b)| self.t.edge(j, b, i, a)).sum();
                    let pending: f64 = (i + 1..m).map(|j| self.msg[j][i][a]).sum();
                    self.t.unary[i][a] + fixed + pending
                })
                .collect();
            labels.push(argmin_keep(&costs, None));
        }
        labels
    }

    fn energy(&self, labels: &[usize]) -> f64 {
        let m = labels.len();
        let mut e: f64 = labels.iter().enumerate().map(|(i, &a)| self.t.unary[i][a]).sum();
        for i in 0..m {
            for j in i + 1..m {
                e += self.t.edge(i, labels[i], j, labels[j]);
            }
        }
        e
    }
}

/// Covers the edges of the complete graph on `m` ordered nodes with
/// increasing chains. Returns the chains and the number of chains through
/// every node.
fn monotonic_chains(m: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut ending: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut count = vec![0; m];
    for i in 0..m {
        let mut open = std::mem::take(&mut ending[i]);
        count[i] = open.len().max(m - 1 - i).max(1);
        if m == 1 {
            chains.push(vec![i]);
        }
        for j in i + 1..m {
            let c = match open.pop() {
                Some(c) => c,
                None => {
                    chains.push(vec![i]);
                    chains.len() - 1
                }
            };
            chains[c].push(j);
            ending[j].push(c);
        }
    }
    (chains, count)
}

pub fn trws_solve(problem: &GraphProblem, config: &TrwsConfig) -> Result<TrwsResult> {
    config.validate()?;
    let mut s = Solver::new(problem);
    let mut best_labels = s.extract();
    let mut best_energy = s.energy(&best_labels);
    let mut lower_bounds = Vec::new();
    let mut stale = 0;
    for _ in 0..config.max_iters {
        s.pass(true);
        s.pass(false);
        let labels = s.extract();
        let e = s.energy(&labels);
        if e < best_energy {
            best_energy = e;
            best_labels = labels;
        }
        let lb = s.lower_bound();
        if let Some(&prev) = lower_bounds.last() {
            if lb - prev < config.lb_tolerance {
                stale += 1;
            } else {
                stale = 0;
            }
        }
        lower_bounds.push(lb);
        if stale >= config.lb_patience || (best_energy - lb).abs() < 1e-12 {
            break;
        }
    }
    Ok(TrwsResult {
        labels: best_labels,
        energy: best_energy,
        lower_bounds,
    })
}
