//! Alternating optimization: source training, warm-up, then rounds of
//! re-training and multi-fold re-localization.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Selection};
use crate::error::{Error, Result};
use crate::eval::{corloc, selection_accuracy};
use crate::inference::{relocalize, selections, ClassRelocalization, IcmConfig, InitKind, RelocConfig, TrwsConfig};
use crate::losses::LossWeights;
use crate::scoring::{retrain, train_source, ScoringModel, TrainConfig};
use crate::transfer::{warmup_relocalize, warmup_unary, BlendWeights};

pub use crate::eval::convergence_check;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    UnaryOnly,
    WarmupOnly,
    WarmupUnaryOnly,
}

impl Mode {
    fn unary(self) -> bool {
        matches!(self, Mode::UnaryOnly | Mode::WarmupUnaryOnly)
    }

    fn warmup_only(self) -> bool {
        matches!(self, Mode::WarmupOnly | Mode::WarmupUnaryOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub outer_iterations: usize,
    pub folds: usize,
    pub alpha: f64,
    pub weights: BlendWeights,
    pub k: usize,
    pub epochs: usize,
    pub trws: TrwsConfig,
    pub source_train: TrainConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Stop once fewer than this fraction of selections change.
    pub early_stop: f64,
    /// Retrain fold models concurrently.
    pub parallel_folds: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            outer_iterations: 5,
            folds: 10,
            alpha: 1.0,
            weights: BlendWeights::default(),
            k: 8,
            epochs: 2,
            trws: TrwsConfig::default(),
            source_train: TrainConfig {
                iterations: 3000,
                learning_rate: 0.3,
                ..TrainConfig::default()
            },
            train: TrainConfig {
                iterations: 100,
                learning_rate: 0.1,
                ..TrainConfig::default()
            },
            seed: 0,
            early_stop: 0.005,
            parallel_folds: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::InvalidArgument("folds must be >= 1".into()));
        }
        self.reloc_config(0).validate()?;
        self.source_train.validate()?;
        self.train.validate()
    }

    fn effective_alpha(&self) -> f64 {
        if self.mode.unary() {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn reloc_config(&self, seed: u64) -> RelocConfig {
        RelocConfig {
            alpha: self.effective_alpha(),
            weights: self.weights,
            k: self.k,
            init: if self.mode.unary() { InitKind::Objectness } else { InitKind::MiniProblems },
            icm: IcmConfig {
                epochs: self.epochs,
                ..IcmConfig::default()
            },
            trws: self.trws,
            seed,
            parallel: true,
        }
    }
}

/// splitmix64 of `seed` combined with a stream tag. Round `r` re-localizes
/// with `mix(seed, 2r + 1)`.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// 0 for the warm-up, then 1, 2, ...
    pub iteration: usize,
    /// Mean loss over the last re-training steps of the global model.
    pub train_loss: Option<f64>,
    /// Sum of per-class re-localization energies (fold-local when folded).
    pub energy: f64,
    pub fraction_changed: Option<f64>,
    pub selection_accuracy: Option<f64>,
    pub corloc50: Option<f64>,
    pub corloc70: Option<f64>,
    pub pairwise_evals: u64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub model: ScoringModel,
    pub selections: BTreeMap<String, Selection>,
    pub metrics: Vec<IterationMetrics>,
    pub source_loss: Option<f64>,
}

/// Class-stratified fold assignment of every bag id.
pub fn fold_assignment(dataset: &Dataset, folds: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds.max(1)];
    let mut assigned: BTreeSet<&str> = BTreeSet::new();
    let mut next = 0usize;
    let mut deal = |ids: Vec<&str>, out: &mut Vec<Vec<String>>, rng: &mut ChaCha8Rng| {
        let mut ids = ids;
        ids.shuffle(rng);
        let n = out.len();
        for id in ids {
            out[next % n].push(id.to_string());
            next += 1;
        }
    };
    for class in dataset.classes() {
        let ids: Vec<&str> = dataset
            .bags()
            .iter()
            .filter(|b| b.has_label(class) && !assigned.contains(b.id.as_str()))
            .map(|b| b.id.as_str())
            .collect();
        assigned.extend(ids.iter().copied());
        deal(ids, &mut out, &mut rng);
    }
    let rest: Vec<&str> = dataset
        .bags()
        .iter()
        .map(|b| b.id.as_str())
        .filter(|id| !assigned.contains(id))
        .collect();
    deal(rest, &mut out, &mut rng);
    out
}

fn restrict(selections: &BTreeMap<String, Selection>, dataset: &Dataset) -> BTreeMap<String, Selection> {
    dataset
        .classes()
        .iter()
        .map(|c| {
            let mut s = Selection::new(c);
            if let Some(sel) = selections.get(c) {
                s.chosen = sel
                    .chosen
                    .iter()
                    .filter(|(id, _)| dataset.bag(id).is_some())
                    .map(|(id, &i)| (id.clone(), i))
                    .collect();
            }
            (c.clone(), s)
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct FoldResult {
    pub selections: BTreeMap<String, Selection>,
    pub energy: f64,
    pub pairwise_evals: u64,
}

fn summarize(relocs: &BTreeMap<String, ClassRelocalization>) -> (f64, u64) {
    (
        relocs.values().map(|r| r.energy).sum(),
        relocs.values().map(|r| r.counts.pairwise_evals).sum(),
    )
}

/// Each fold is re-localized by a copy of `model` retrained on the pseudo
/// labels of the other folds. One fold is plain re-localization.
pub fn multifold_relocalize(
    dataset: &Dataset,
    model: &ScoringModel,
    current: &BTreeMap<String, Selection>,
    config: &PipelineConfig,
    round: u64,
) -> Result<FoldResult> {
    let reloc = config.reloc_config(mix(config.seed, 2 * round + 1));
    let weights = LossWeights::new(config.effective_alpha())?;
    if config.folds == 1 {
        let relocs = relocalize(dataset, model, &reloc)?;
        let (energy, pairwise_evals) = summarize(&relocs);
        return Ok(FoldResult {
            selections: selections(&relocs),
            energy,
            pairwise_evals,
        });
    }
    let folds = fold_assignment(dataset, config.folds, mix(config.seed, round));
    let solve_fold = |f: usize| -> Result<BTreeMap<String, ClassRelocalization>> {
        let held: Vec<&str> = folds[f].iter().map(String::as_str).collect();
        if held.is_empty() {
            return Ok(BTreeMap::new());
        }
        let others: Vec<&str> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, ids)| ids.iter().map(String::as_str))
            .collect();
        let train_set = dataset.subset(&others)?;
        let mut fold_model = model.clone();
        let train = TrainConfig {
            seed: mix(config.seed, 1000 * round + f as u64 + 7),
            ..config.train.clone()
        };
        retrain(&mut fold_model, &train_set, &restrict(current, &train_set), weights, &train)?;
        let held_set = dataset.subset(&held)?;
        for class in dataset.classes() {
            if held_set.positive_bags(class)?.is_empty() {
                log::warn!("fold {f}: no positive bags of `{class}`, skipped");
            }
        }
        relocalize(&held_set, &fold_model, &reloc)
    };
    let per_fold: Vec<Result<BTreeMap<String, ClassRelocalization>>> = if config.parallel_folds {
        (0..config.folds).into_par_iter().map(solve_fold).collect()
    } else {
        (0..config.folds).map(solve_fold).collect()
    };
    let mut out = FoldResult::default();
    for relocs in per_fold {
        let relocs = relocs?;
        let (e, n) = summarize(&relocs);
        out.energy += e;
        out.pairwise_evals += n;
        for (class, r) in relocs {
            out.selections
                .entry(class.clone())
                .or_insert_with(|| Selection::new(&class))
                .chosen
                .extend(r.selection.chosen);
        }
    }
    Ok(out)
}

/// Callback invoked after the warm-up and after every round.
pub type Observer<'a> = dyn FnMut(&IterationMetrics, &ScoringModel, &BTreeMap<String, Selection>) -> Result<()> + 'a;

pub fn run(
    config: &PipelineConfig,
    source: &Dataset,
    target: &Dataset,
    truth: Option<&BTreeMap<String, Selection>>,
) -> Result<PipelineOutput> {
    run_observed(config, source, target, truth, &mut |_, _, _| Ok(()))
}

pub fn run_observed(
    config: &PipelineConfig,
    source: &Dataset,
    target: &Dataset,
    truth: Option<&BTreeMap<String, Selection>>,
    observer: &mut Observer<'_>,
) -> Result<PipelineOutput> {
    config.validate()?;
    let classes: Vec<&String> = target.classes().iter().collect();
    let mut model = ScoringModel::new(&classes, target.dim(), target.generic_dim(), mix(config.seed, 11));
    let weights = LossWeights::new(config.effective_alpha())?;
    let source_cfg = TrainConfig {
        seed: mix(config.seed, 12),
        ..config.source_train.clone()
    };
    let source_report = train_source(&mut model, source, weights, &source_cfg)?;
    log::info!("source training loss {:?}", source_report.final_window_mean(50));

    let metrics_for = |iteration: usize,
                       train_loss: Option<f64>,
                       energy: f64,
                       pairwise_evals: u64,
                       sel: &BTreeMap<String, Selection>,
                       prev: Option<&BTreeMap<String, Selection>>|
     -> Result<IterationMetrics> {
        Ok(IterationMetrics {
            iteration,
            train_loss,
            energy,
            fraction_changed: prev.map(|p| convergence_check(p, sel)),
            selection_accuracy: truth.map(|t| selection_accuracy(sel, t)).transpose()?,
            corloc50: corloc(sel, target, 0.5).ok().map(|c| c.mean),
            corloc70: corloc(sel, target, 0.7).ok().map(|c| c.mean),
            pairwise_evals,
        })
    };

    let warm_cfg = config.reloc_config(mix(config.seed, 13));
    let warm = if config.mode.unary() {
        warmup_unary(target, &model, &warm_cfg)?
    } else {
        warmup_relocalize(target, &model, &warm_cfg)?
    };
    let (energy, evals) = summarize(&warm);
    let mut current = selections(&warm);
    let mut metrics = vec![metrics_for(0, None, energy, evals, &current, None)?];
    observer(&metrics[0], &model, &current)?;

    if !config.mode.warmup_only() {
        for round in 1..=config.outer_iterations {
            let train = TrainConfig {
                seed: mix(config.seed, 100 + round as u64),
                ..config.train.clone()
            };
            let report = retrain(&mut model, target, &restrict(&current, target), weights, &train)?;
            let folded = multifold_relocalize(target, &model, &current, config, round as u64)?;
            let m = metrics_for(
                round,
                report.final_window_mean(50),
                folded.energy,
                folded.pairwise_evals,
                &folded.selections,
                Some(&current),
            )?;
            let changed = m.fraction_changed.unwrap_or(1.0);
            current = folded.selections;
            observer(&m, &model, &current)?;
            log::info!("round {round}: changed {changed:.4}, accuracy {:?}", m.selection_accuracy);
            metrics.push(m);
            if changed < config.early_stop {
                break;
            }
        }
    }
    Ok(PipelineOutput {
        model,
        selections: current,
        metrics,
        source_loss: source_report.final_window_mean(50),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn tiny() -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            bags_per_class: 8,
            num_source_classes: 4,
            source_bags_per_class: 6,
            ..Default::default()
        }
    }

    #[test]
    fn folds_cover_every_bag_once() {
        let syn = generate(&tiny()).unwrap();
        let folds = fold_assignment(&syn.target, 4, 3);
        let mut all: Vec<&String> = folds.iter().flatten().collect();
        all.sort();
        let mut want: Vec<&String> = syn.target.bags().iter().map(|b| &b.id).collect();
        want.sort();
        assert_eq!(all, want);
        assert_eq!(folds, fold_assignment(&syn.target, 4, 3));
        // stratified: each class spreads 8 bags as 2 per fold
        for f in &folds {
            for c in syn.target.classes() {
                assert_eq!(f.iter().filter(|id| id.starts_with(c.as_str())).count(), 2);
            }
        }
    }

    #[test]
    fn zero_rounds_return_the_warmup() {
        let syn = generate(&tiny()).unwrap();
        let cfg = PipelineConfig {
            outer_iterations: 0,
            source_train: TrainConfig { iterations: 20, ..TrainConfig::default() },
            ..PipelineConfig::default()
        };
        let out = run(&cfg, &syn.source, &syn.target, Some(&syn.truth)).unwrap();
        assert_eq!(out.metrics.len(), 1);
        for sel in out.selections.values() {
            assert!(sel.is_feasible(&syn.target).unwrap());
        }
    }

    #[test]
    fn convergence_fractions() {
        let a: BTreeMap<_, _> = [("c".to_string(), Selection::new("c").with("x", 0))].into();
        assert_eq!(convergence_check(&a, &a), 0.0);
    }
}
