use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::icm::argmin_keep;
use super::trws::{trws_solve, TrwsConfig};
use crate::error::{Error, Result};
use crate::graph::GraphProblem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    Random { seed: u64 },
    Objectness,
    FullImage,
    MiniProblems { k: usize, trws: TrwsConfig, seed: u64 },
}

impl InitScheme {
    pub fn mini_problems(k: usize, seed: u64) -> Self {
        Self::MiniProblems {
            k,
            trws: TrwsConfig::default(),
            seed,
        }
    }
}

/// Random disjoint groups of `0..n`: `T = max(1, round(n / k))` groups, the
/// first `T − 1` of size `k` and the last one taking the rest.
pub fn partition_mini_problems(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("mini-problem size must be >= 2, got {k}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let t = ((n as f64 / k as f64).round() as usize).max(1);
    let mut groups: Vec<Vec<usize>> = perm.chunks(k).take(t - 1).map(<[usize]>::to_vec).collect();
    groups.push(perm[(t - 1) * k..].to_vec());
    Ok(groups)
}

#[derive(Clone, Debug, Serialize)]
pub struct InitResult {
    pub labels: Vec<usize>,
    /// Sum of the final mini-problem lower bounds (mini-problem scheme only).
    pub lower_bound: Option<f64>,
}

pub fn initialize(problem: &GraphProblem, scheme: &InitScheme) -> Result<InitResult> {
    let m = problem.num_nodes();
    let labels = match scheme {
        InitScheme::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..m).map(|i| rng.random_range(0..problem.num_labels(i))).collect()
        }
        InitScheme::Objectness => (0..m).map(|i| argmin_keep(problem.unary_row(i), None)).collect(),
        InitScheme::FullImage => (0..m)
            .map(|i| {
                problem.full_image(i).ok_or_else(|| {
                    Error::Missing(format!("bag `{}` has no whole-image proposal", problem.bag_ids()[i]))
                })
            })
            .collect::<Result<_>>()?,
        InitScheme::MiniProblems { k, trws, seed } => {
            let groups = partition_mini_problems(m, *k, *seed)?;
            let mut labels = vec![0; m];
            let mut bound = 0.0;
            for group in groups {
                let sub = problem.subproblem(&group)?;
                let r = trws_solve(&sub, trws)?;
                bound += r.lower_bound();
                for (node, label) in group.into_iter().zip(r.labels) {
                    labels[node] = label;
                }
            }
            return Ok(InitResult {
                labels,
                lower_bound: Some(bound),
            });
        }
    };
    Ok(InitResult {
        labels,
        lower_bound: None,
    })
}
