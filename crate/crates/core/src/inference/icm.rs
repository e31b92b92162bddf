use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EvalCounts, GraphProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOrder {
    Fixed,
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcmConfig {
    pub epochs: usize,
    pub order: NodeOrder,
}

impl Default for IcmConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            order: NodeOrder::Fixed,
        }
    }
}

/// Index of the smallest cost. Ties keep `current`, otherwise go to the
/// smallest index.
pub(crate) fn argmin_keep(costs: &[f64], current: Option<usize>) -> usize {
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate().skip(1) {
        if c < costs[best] {
            best = i;
        }
    }
    match current {
        Some(cur) if costs[cur] <= costs[best] => cur,
        _ => best,
    }
}

/// Moves `node` to its conditionally optimal label and returns the energy
/// change, which is never positive.
pub fn icm_node_update(problem: &GraphProblem, labels: &mut [usize], node: usize) -> Result<f64> {
    if labels.len() != problem.num_nodes() || node >= labels.len() {
        return Err(Error::InvalidArgument(format!("node {node} outside a labeling of {} nodes", labels.len())));
    }
    let current = labels[node];
    if current >= problem.num_labels(node) {
        return Err(Error::LabelOutOfRange {
            node,
            label: current,
            num_labels: problem.num_labels(node),
        });
    }
    let costs = problem.conditional_costs(labels, node);
    let best = argmin_keep(&costs, Some(current));
    labels[node] = best;
    Ok(costs[best] - costs[current])
}

#[derive(Clone, Debug, Serialize)]
pub struct IcmResult {
    pub labels: Vec<usize>,
    /// Energy before the first update, then after every update.
    pub trace: Vec<f64>,
    /// Number of label changes in each completed epoch.
    pub changes_per_epoch: Vec<usize>,
    /// Pairwise evaluations charged during each epoch.
    pub evals_per_epoch: Vec<u64>,
    pub counts: EvalCounts,
}

impl IcmResult {
    pub fn energy(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial energy")
    }
}

pub fn icm_run(problem: &GraphProblem, labels: &[usize], config: &IcmConfig) -> Result<IcmResult> {
    let mut labels = labels.to_vec();
    let mut energy = problem.energy(&labels)?;
    let mut trace = vec![energy];
    let mut changes_per_epoch = Vec::new();
    let mut evals_per_epoch = Vec::new();
    let mut order: Vec<usize> = (0..problem.num_nodes()).collect();
    let mut rng = match config.order {
        NodeOrder::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        NodeOrder::Fixed => None,
    };
    for _ in 0..config.epochs {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        let before = problem.counts().pairwise_evals;
        let mut changes = 0;
        for &node in &order {
            let old = labels[node];
            let delta = icm_node_update(problem, &mut labels, node)?;
            if labels[node] != old {
                changes += 1;
                energy += delta;
            }
            trace.push(energy);
        }
        changes_per_epoch.push(changes);
        evals_per_epoch.push(problem.counts().pairwise_evals - before);
        if changes == 0 {
            break;
        }
    }
    Ok(IcmResult {
        labels,
        trace,
        changes_per_epoch,
        evals_per_epoch,
        counts: problem.counts(),
    })
}
