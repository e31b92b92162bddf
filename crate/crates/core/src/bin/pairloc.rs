use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use pairloc::data::{Dataset, Selection};
use pairloc::eval::{corloc, selection_accuracy};
use pairloc::graph::{BuildMode, GraphProblem, TableOracle};
use pairloc::inference::{
    icm_run, initialize, relocalize, selections, ClassRelocalization, IcmConfig, InitKind, InitScheme, RelocConfig,
    TraceRow,
};
use pairloc::io::{load_dataset, load_model, load_selections, read_json, save_dataset, save_model, save_selections, write_json, write_trace_csv};
use pairloc::losses::LossWeights;
use pairloc::pipeline::{run_observed, IterationMetrics, Mode, PipelineConfig};
use pairloc::scoring::{train_source, ScoringModel, TrainConfig};
use pairloc::synth::{generate, SynthConfig};
use pairloc::transfer::{warmup_relocalize, warmup_unary, BlendWeights};

#[derive(Parser)]
#[command(name = "pairloc", version, about = "Weakly supervised localization with learned pairwise similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planted source and target datasets.
    Synth(SynthArgs),
    /// Train the class-generic functions on a fully labeled source set.
    TrainSource(TrainSourceArgs),
    /// Re-localize with the transferred functions only.
    Warmup(WarmupArgs),
    /// Full alternating optimization.
    Run(RunArgs),
    /// One re-localization step with a chosen initializer.
    Relocalize(RelocArgs),
    /// CorLoc and selection accuracy of saved selections.
    Eval(EvalArgs),
    /// Evaluation counts and wall time of initialization and ICM on random problems.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// JSON file with a full generator config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    bags_per_class: Option<usize>,
    #[arg(long)]
    proposals_per_bag: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    cluster_separation: Option<f64>,
    #[arg(long)]
    distractor_overlap: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    num_source_classes: Option<usize>,
    #[arg(long)]
    source_bags_per_class: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    bags_per_step: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        set(&mut c.iterations, self.iterations);
        set(&mut c.learning_rate, self.learning_rate);
        set(&mut c.momentum, self.momentum);
        set(&mut c.bags_per_step, self.bags_per_step);
        c
    }
}

#[derive(Args)]
struct TrainSourceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    source: PathBuf,
    /// Target set; supplies the class list and feature dimensions.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SolveFlags {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// ICM epochs.
    #[arg(long, default_value_t = 2)]
    epochs: usize,
}

#[derive(Args)]
struct WarmupArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Unary-only warm-up (per-bag argmax).
    #[arg(long)]
    unary: bool,
    #[command(flatten)]
    solve: SolveFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Full,
    UnaryOnly,
    WarmupOnly,
    WarmupUnaryOnly,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Full => Mode::Full,
            CliMode::UnaryOnly => Mode::UnaryOnly,
            CliMode::WarmupOnly => Mode::WarmupOnly,
            CliMode::WarmupUnaryOnly => Mode::WarmupUnaryOnly,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// JSON file with a full pipeline config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    #[arg(long)]
    outer_iterations: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    early_stop: Option<f64>,
    #[arg(long)]
    parallel_folds: bool,
    #[arg(long)]
    source_iterations: Option<usize>,
    #[arg(long)]
    source_learning_rate: Option<f64>,
    /// Re-training SGD steps per round.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliInit {
    MiniProblems,
    Objectness,
    Random,
    FullImage,
}

impl From<CliInit> for InitKind {
    fn from(i: CliInit) -> Self {
        match i {
            CliInit::MiniProblems => InitKind::MiniProblems,
            CliInit::Objectness => InitKind::Objectness,
            CliInit::Random => InitKind::Random,
            CliInit::FullImage => InitKind::FullImage,
        }
    }
}

#[derive(Args)]
struct RelocArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mini-problems")]
    init: CliInit,
    #[arg(long, default_value_t = 0.5)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda2: f64,
    #[command(flatten)]
    solve: SolveFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    selections: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32])]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 8])]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
    b: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn load_truth(path: Option<&PathBuf>) -> Result<Option<BTreeMap<String, Selection>>> {
    path.map(|p| load_selections(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

fn write_trace(path: &Path, relocs: &BTreeMap<String, ClassRelocalization>) -> Result<()> {
    let rows: Vec<TraceRow> = relocs.values().flat_map(|r| r.trace.iter().cloned()).collect();
    write_trace_csv(&rows, BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn scores(sel: &BTreeMap<String, Selection>, target: &Dataset, truth: Option<&BTreeMap<String, Selection>>) -> Result<Value> {
    Ok(json!({
        "selection_accuracy": truth.map(|t| selection_accuracy(sel, t)).transpose()?,
        "corloc50": corloc(sel, target, 0.5).ok(),
        "corloc70": corloc(sel, target, 0.7).ok(),
    }))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.common.seed;
    set(&mut cfg.num_classes, a.num_classes);
    set(&mut cfg.bags_per_class, a.bags_per_class);
    set(&mut cfg.proposals_per_bag, a.proposals_per_bag);
    set(&mut cfg.feature_dim, a.feature_dim);
    set(&mut cfg.cluster_separation, a.cluster_separation);
    set(&mut cfg.distractor_overlap, a.distractor_overlap);
    set(&mut cfg.noise_sigma, a.noise_sigma);
    set(&mut cfg.num_source_classes, a.num_source_classes);
    set(&mut cfg.source_bags_per_class, a.source_bags_per_class);
    let syn = generate(&cfg)?;
    let out = &a.common.out;
    prepare(out)?;
    save_dataset(&syn.source, out.join("source.jsonl"))?;
    save_dataset(&syn.target, out.join("target.jsonl"))?;
    save_selections(&syn.truth, out.join("truth.json"))?;
    save_selections(&syn.distractors, out.join("distractors.json"))?;
    write_json(
        &json!({
            "command": "synth",
            "config": cfg,
            "seed": cfg.seed,
            "source_bags": syn.source.bags().len(),
            "target_bags": syn.target.bags().len(),
        }),
        out.join("manifest.json"),
    )?;
    Ok(())
}

fn new_model(target: &Dataset, seed: u64) -> ScoringModel {
    let classes: Vec<&String> = target.classes().iter().collect();
    ScoringModel::new(&classes, target.dim(), target.generic_dim(), seed)
}

fn train_source_cmd(a: TrainSourceArgs) -> Result<()> {
    let source = load(&a.source)?;
    let target = load(&a.target)?;
    let defaults = PipelineConfig::default().source_train;
    let cfg = TrainConfig {
        seed: a.common.seed,
        ..a.train.apply(defaults)
    };
    let mut model = new_model(&target, a.common.seed);
    let report = train_source(&mut model, &source, LossWeights::new(a.alpha)?, &cfg)?;
    let out = &a.common.out;
    prepare(out)?;
    save_model(&model, out.join("model.json"))?;
    let mut w = csv::Writer::from_path(out.join("loss.csv"))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in report.losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    write_json(
        &json!({
            "command": "train-source",
            "config": cfg,
            "alpha": a.alpha,
            "seed": a.common.seed,
            "final_loss": report.final_window_mean(50),
        }),
        out.join("manifest.json"),
    )?;
    Ok(())
}

fn finish_reloc(
    command: &str,
    out: &Path,
    cfg: &RelocConfig,
    relocs: &BTreeMap<String, ClassRelocalization>,
    target: &Dataset,
    truth: Option<&BTreeMap<String, Selection>>,
) -> Result<()> {
    prepare(out)?;
    let sel = selections(relocs);
    save_selections(&sel, out.join("selections.json"))?;
    write_trace(&out.join("trace.csv"), relocs)?;
    let per_class: BTreeMap<&String, Value> = relocs
        .iter()
        .map(|(c, r)| {
            (c, json!({
                "init_energy": r.init_energy,
                "energy": r.energy,
                "pairwise_evals": r.counts.pairwise_evals,
                "changes_per_epoch": r.changes_per_epoch,
            }))
        })
        .collect();
    write_json(
        &json!({
            "command": command,
            "config": cfg,
            "seed": cfg.seed,
            "energy": relocs.values().map(|r| r.energy).sum::<f64>(),
            "metrics": scores(&sel, target, truth)?,
            "classes": per_class,
        }),
        out.join("manifest.json"),
    )?;
    Ok(())
}

fn warmup(a: WarmupArgs) -> Result<()> {
    let target = load(&a.target)?;
    let model = load_model(&a.model)?;
    let truth = load_truth(a.truth.as_ref())?;
    let cfg = RelocConfig {
        alpha: a.solve.alpha,
        k: a.solve.k,
        icm: IcmConfig { epochs: a.solve.epochs, ..IcmConfig::default() },
        seed: a.common.seed,
        ..RelocConfig::default()
    };
    let relocs = if a.unary {
        warmup_unary(&target, &model, &cfg)?
    } else {
        warmup_relocalize(&target, &model, &cfg)?
    };
    finish_reloc("warmup", &a.common.out, &cfg, &relocs, &target, truth.as_ref())
}

fn reloc(a: RelocArgs) -> Result<()> {
    let target = load(&a.target)?;
    let model = load_model(&a.model)?;
    let truth = load_truth(a.truth.as_ref())?;
    let cfg = RelocConfig {
        alpha: a.solve.alpha,
        weights: BlendWeights::new(a.lambda1, a.lambda2)?,
        k: a.solve.k,
        init: a.init.into(),
        icm: IcmConfig { epochs: a.solve.epochs, ..IcmConfig::default() },
        seed: a.common.seed,
        ..RelocConfig::default()
    };
    let relocs = relocalize(&target, &model, &cfg)?;
    finish_reloc("relocalize", &a.common.out, &cfg, &relocs, &target, truth.as_ref())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    config: &'a PipelineConfig,
    seed: u64,
    source: &'a Path,
    target: &'a Path,
    source_loss: Option<f64>,
    metrics: &'a [IterationMetrics],
    checkpoints: Vec<String>,
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let source = load(&a.source)?;
    let target = load(&a.target)?;
    let truth = load_truth(a.truth.as_ref())?;
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.seed = a.common.seed;
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    set(&mut cfg.outer_iterations, a.outer_iterations);
    set(&mut cfg.folds, a.folds);
    set(&mut cfg.alpha, a.alpha);
    set(&mut cfg.weights.lambda1, a.lambda1);
    set(&mut cfg.weights.lambda2, a.lambda2);
    set(&mut cfg.k, a.k);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.early_stop, a.early_stop);
    cfg.parallel_folds |= a.parallel_folds;
    set(&mut cfg.source_train.iterations, a.source_iterations);
    set(&mut cfg.source_train.learning_rate, a.source_learning_rate);
    set(&mut cfg.train.iterations, a.iterations);
    set(&mut cfg.train.learning_rate, a.learning_rate);

    let out = &a.common.out;
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let mut names = Vec::new();
    let mut observe = |m: &IterationMetrics, model: &ScoringModel, sel: &BTreeMap<String, Selection>| {
        let name = format!("iter_{:03}", m.iteration);
        save_model(model, ckpt.join(format!("{name}_model.json")))?;
        save_selections(sel, ckpt.join(format!("{name}_selections.json")))?;
        names.push(name);
        Ok(())
    };
    let result = run_observed(&cfg, &source, &target, truth.as_ref(), &mut observe)?;
    save_selections(&result.selections, out.join("selections.json"))?;
    save_model(&result.model, out.join("model.json"))?;
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    for m in &result.metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    write_json(
        &RunManifest {
            command: "run",
            config: &cfg,
            seed: cfg.seed,
            source: &a.source,
            target: &a.target,
            source_loss: result.source_loss,
            metrics: &result.metrics,
            checkpoints: names,
        },
        out.join("manifest.json"),
    )?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let target = load(&a.target)?;
    let sel = load_selections(&a.selections)?;
    let truth = load_truth(a.truth.as_ref())?;
    for s in sel.values() {
        s.ensure_feasible(&target)?;
    }
    prepare(&a.out)?;
    write_json(&scores(&sel, &target, truth.as_ref())?, a.out.join("metrics.json"))?;
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    m: usize,
    k: usize,
    b: usize,
    init_evals: u64,
    init_seconds: f64,
    icm_epoch: usize,
    icm_evals: u64,
    icm_changes: usize,
    total_seconds: f64,
}

fn random_oracle(rng: &mut ChaCha8Rng, m: usize, b: usize) -> TableOracle {
    TableOracle {
        unary: (0..m).map(|_| (0..b).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        pairwise: (0..m)
            .map(|_| (0..b).map(|_| (0..m).map(|_| (0..b).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).collect())
            .collect(),
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.m.is_empty() || a.k.is_empty() || a.b.is_empty() {
        bail!("empty grid");
    }
    let out = &a.common.out;
    prepare(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let mut w = csv::Writer::from_path(out.join("bench.csv"))?;
    for &m in &a.m {
        for &k in &a.k {
            for &b in &a.b {
                let oracle = Arc::new(random_oracle(&mut rng, m, b));
                let ids = (0..m).map(|i| format!("n{i}")).collect();
                let p = GraphProblem::build(ids, vec![b; m], oracle, 1.0, BuildMode::Lazy)?;
                let start = Instant::now();
                let init = initialize(&p, &InitScheme::mini_problems(k, rng.random()))?;
                let init_seconds = start.elapsed().as_secs_f64();
                let init_evals = p.counts().pairwise_evals;
                let icm = icm_run(&p, &init.labels, &IcmConfig { epochs: a.epochs, ..IcmConfig::default() })?;
                let total_seconds = start.elapsed().as_secs_f64();
                for (e, (&evals, &changes)) in icm.evals_per_epoch.iter().zip(&icm.changes_per_epoch).enumerate() {
                    w.serialize(BenchRow {
                        m,
                        k,
                        b,
                        init_evals,
                        init_seconds,
                        icm_epoch: e + 1,
                        icm_evals: evals,
                        icm_changes: changes,
                        total_seconds,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    write_json(&json!({"command": "bench", "seed": a.common.seed, "m": a.m, "k": a.k, "b": a.b}), out.join("manifest.json"))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::TrainSource(a) => train_source_cmd(a),
        Command::Warmup(a) => warmup(a),
        Command::Run(a) => run_cmd(a),
        Command::Relocalize(a) => reloc(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench(a),
    }
}
