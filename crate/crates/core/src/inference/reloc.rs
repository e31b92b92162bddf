use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::icm::{icm_run, IcmConfig};
use super::init::{initialize, InitScheme};
use super::trws::TrwsConfig;
use crate::data::{Dataset, Selection};
use crate::error::{Error, Result};
use crate::graph::{BuildMode, EvalCounts, GraphProblem};
use crate::scoring::ScoringModel;
use crate::transfer::{BlendWeights, BlendedOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    MiniProblems,
    Objectness,
    Random,
    FullImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelocConfig {
    pub alpha: f64,
    pub weights: BlendWeights,
    pub k: usize,
    pub init: InitKind,
    pub icm: IcmConfig,
    pub trws: TrwsConfig,
    pub seed: u64,
    /// Solve classes on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for RelocConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            weights: BlendWeights::default(),
            k: 8,
            init: InitKind::MiniProblems,
            icm: IcmConfig::default(),
            trws: TrwsConfig::default(),
            seed: 0,
            parallel: true,
        }
    }
}

impl RelocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("K must be >= 2, got {}", self.k)));
        }
        self.weights.validate()?;
        self.trws.validate()
    }

    fn scheme(&self, seed: u64) -> InitScheme {
        match self.init {
            InitKind::MiniProblems => InitScheme::MiniProblems {
                k: self.k,
                trws: self.trws,
                seed,
            },
            InitKind::Objectness => InitScheme::Objectness,
            InitKind::Random => InitScheme::Random { seed },
            InitKind::FullImage => InitScheme::FullImage,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Init,
    Icm,
}

/// One row of the per-class energy trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub class: String,
    /// Seconds since the class solve started.
    pub elapsed_s: f64,
    pub step: StepKind,
    pub epoch: usize,
    pub energy: f64,
    pub lower_bound: Option<f64>,
    pub pairwise_evals: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassRelocalization {
    pub selection: Selection,
    pub init_energy: f64,
    pub energy: f64,
    pub counts: EvalCounts,
    pub changes_per_epoch: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

/// Per-class seed so that classes draw independent partitions.
fn class_seed(seed: u64, class: &str) -> u64 {
    class
        .bytes()
        .fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Lazy graph problem of `class` over its positive bags, or `None` for a
/// class without positive bags.
pub fn class_problem(
    dataset: &Dataset,
    model: &ScoringModel,
    class: &str,
    weights: BlendWeights,
    alpha: f64,
    mode: BuildMode,
) -> Result<Option<GraphProblem>> {
    let bags = dataset.positive_bags(class)?;
    if bags.is_empty() {
        return Ok(None);
    }
    let oracle = BlendedOracle::new(model, class, &bags, weights, alpha > 0.0)?;
    let problem = GraphProblem::build(
        bags.iter().map(|b| b.id.clone()).collect(),
        bags.iter().map(|b| b.len()).collect(),
        Arc::new(oracle),
        alpha,
        mode,
    )?
    .with_full_image(bags.iter().map(|b| b.full_image_index()).collect())?;
    Ok(Some(problem))
}

pub fn relocalize_class(
    dataset: &Dataset,
    model: &ScoringModel,
    class: &str,
    config: &RelocConfig,
) -> Result<Option<ClassRelocalization>> {
    let start = Instant::now();
    let Some(problem) = class_problem(dataset, model, class, config.weights, config.alpha, BuildMode::Lazy)? else {
        return Ok(None);
    };
    let init = initialize(&problem, &config.scheme(class_seed(config.seed, class)))?;
    let init_energy = problem.energy(&init.labels)?;
    let mut trace = vec![TraceRow {
        class: class.to_string(),
        elapsed_s: start.elapsed().as_secs_f64(),
        step: StepKind::Init,
        epoch: 0,
        energy: init_energy,
        lower_bound: init.lower_bound,
        pairwise_evals: problem.counts().pairwise_evals,
    }];
    let icm = icm_run(&problem, &init.labels, &config.icm)?;
    let m = problem.num_nodes();
    let mut evals = trace[0].pairwise_evals;
    for (epoch, &n) in icm.evals_per_epoch.iter().enumerate() {
        evals += n;
        trace.push(TraceRow {
            class: class.to_string(),
            elapsed_s: start.elapsed().as_secs_f64(),
            step: StepKind::Icm,
            epoch: epoch + 1,
            energy: icm.trace[(epoch + 1) * m],
            lower_bound: None,
            pairwise_evals: evals,
        });
    }
    Ok(Some(ClassRelocalization {
        selection: problem.selection_from_labels(class, &icm.labels)?,
        init_energy,
        energy: problem.energy(&icm.labels)?,
        counts: problem.counts(),
        changes_per_epoch: icm.changes_per_epoch,
        trace,
    }))
}

/// Re-localizes every class of `dataset` with at least one positive bag.
pub fn relocalize(
    dataset: &Dataset,
    model: &ScoringModel,
    config: &RelocConfig,
) -> Result<BTreeMap<String, ClassRelocalization>> {
    config.validate()?;
    let classes: Vec<&String> = dataset.classes().iter().collect();
    let solve = |c: &&String| relocalize_class(dataset, model, c, config).map(|r| r.map(|r| ((*c).clone(), r)));
    let results: Vec<Result<Option<(String, ClassRelocalization)>>> = if config.parallel {
        classes.par_iter().map(solve).collect()
    } else {
        classes.iter().map(solve).collect()
    };
    let mut out = BTreeMap::new();
    for r in results {
        if let Some((c, r)) = r? {
            out.insert(c, r);
        }
    }
    Ok(out)
}

pub fn selections(relocs: &BTreeMap<String, ClassRelocalization>) -> BTreeMap<String, Selection> {
    relocs.iter().map(|(c, r)| (c.clone(), r.selection.clone())).collect()
}
