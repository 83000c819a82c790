//! Command-line front end.
//!
//! Settings are layered: built-in defaults, then a `key = value` file given
//! with `--config`, then flags. Keys use the flag spelling without the
//! leading dashes (`replay-interval = 100`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::{AdaptOptimizer, NeighborDump};
use crate::data::{published_orderings, prepare, synth_generate, Manifest, Prepared, SynthConfig, TokenizeOptions};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_table, evaluate, forgetting_curve, per_dataset_table, results_table, MetricKind, MetricRecord,
    RunSummary, Snapshot,
};
use crate::experiment::{
    ablation_sweep, fit_model, inference_adapt, method_stream, ordering_for, AblationKind, ExperimentConfig,
};
use crate::memory::{EpisodicMemory, KeyNetwork};
use crate::model::{Mixing, ParamVector, TaskMode};
use crate::trainer::{write_log, Checkpoint, Trainer};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn version() -> String {
    format!("lll {} ({})", env!("CARGO_PKG_VERSION"), env!("LLL_GIT_DESCRIBE"))
}

#[derive(Parser, Debug)]
#[command(name = "lll", version, about = "Lifelong language learning with an episodic memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic datasets and a manifest.
    Synth(SynthArgs),
    /// Train on a stream and write checkpoints, memory and a log.
    Train(TrainArgs),
    /// Evaluate a training run directory.
    Eval(EvalArgs),
    /// Sweep one factor and tabulate the metric.
    Ablate(AblateArgs),
    /// Print the predefined dataset orderings.
    Orderings(OrderingsArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "classification", value_parser = parse_task)]
    pub task: TaskMode,
    #[arg(long)]
    pub datasets: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that override experiment settings.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// `i`..`iv`, `manifest`, or a comma-separated list of dataset names.
    #[arg(long)]
    pub ordering: Option<String>,
    #[arg(long)]
    pub replay_interval: Option<String>,
    #[arg(long)]
    pub replay_size: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub write_prob: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long = "neighbors")]
    pub neighbors: Option<String>,
    #[arg(long)]
    pub adapt_steps: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub adapt_lr: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Comma-separated seeds; one run per seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Extra `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(String, String)> {
        let flags = [
            ("manifest", &self.manifest),
            ("method", &self.method),
            ("ordering", &self.ordering),
            ("replay-interval", &self.replay_interval),
            ("replay-size", &self.replay_size),
            ("batch-size", &self.batch_size),
            ("write-prob", &self.write_prob),
            ("lr", &self.lr),
            ("neighbors", &self.neighbors),
            ("adapt-steps", &self.adapt_steps),
            ("lambda", &self.lambda),
            ("adapt-lr", &self.adapt_lr),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("out", &self.out),
        ];
        let mut out: Vec<(String, String)> =
            flags.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
        for s in &self.set {
            if let Some((k, v)) = s.split_once('=') {
                out.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        out
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Continue the run in `--out` from its latest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many base updates; the run can be resumed later.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Write a checkpoint every N base updates.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Training run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// `auto` follows the method; `off` predicts with the trained
    /// parameters only; `on` adapts with KNN neighbours.
    #[arg(long, default_value = "auto")]
    pub adapt: String,
    #[arg(long = "neighbors")]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub adapt_steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub adapt_lr: Option<f64>,
    #[arg(long)]
    pub adapt_optimizer: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Write retrieved neighbours of every test example as JSON lines.
    #[arg(long)]
    pub neighbors_dump: Option<PathBuf>,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_parser = parse_ablation)]
    pub kind: AblationKind,
    /// Comma-separated grid; defaults to the published grid for the kind.
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Args, Debug)]
pub struct OrderingsArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskMode>,
}

fn parse_task(s: &str) -> std::result::Result<TaskMode, String> {
    match s {
        "classification" | "class" => Ok(TaskMode::Classification),
        "qa" | "span" => Ok(TaskMode::Span),
        _ => Err(format!("unknown task {s:?}; use classification or qa")),
    }
}

fn parse_ablation(s: &str) -> std::result::Result<AblationKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Applies one setting. Underscores and dashes are interchangeable.
pub fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let key = key.trim().replace('_', "-");
    let k = key.as_str();
    let v = value.trim();
    match k {
        "manifest" => cfg.manifest = PathBuf::from(v),
        "ordering" => cfg.ordering = v.to_string(),
        "out" => cfg.out = PathBuf::from(v),
        "seed" => cfg.seeds = vec![parse(k, v)?],
        "seeds" => cfg.seeds = v.split(',').map(|s| parse(k, s.trim())).collect::<Result<_>>()?,
        "max-vocab" => cfg.max_vocab = parse(k, v)?,
        "max-tokens" => cfg.max_tokens = optional(k, v)?,
        "parallel" | "workers" => cfg.workers = parse(k, v)?,
        "method" => cfg.train.method = v.parse()?,
        "replay-interval" => cfg.train.replay_interval = parse(k, v)?,
        "replay-size" => cfg.train.replay_size = parse(k, v)?,
        "replay-updates" => cfg.train.replay_updates = parse(k, v)?,
        "batch-size" => cfg.train.batch_size = parse(k, v)?,
        "write-prob" => cfg.train.write_prob = parse(k, v)?,
        "memory-capacity" => cfg.train.memory_capacity = optional(k, v)?,
        "lr" | "learning-rate" => cfg.train.learning_rate = parse(k, v)?,
        "max-steps" => cfg.train.max_steps = optional(k, v)?,
        "mbpa-rand-replay" => cfg.train.mbpa_rand_replay = parse_bool(k, v)?,
        "neighbors" => cfg.adapt.neighbors = parse(k, v)?,
        "adapt-steps" => cfg.adapt.steps = parse(k, v)?,
        "lambda" => cfg.adapt.lambda = parse(k, v)?,
        "adapt-lr" => cfg.adapt.learning_rate = parse(k, v)?,
        "adapt-optimizer" => cfg.adapt.optimizer = parse_optimizer(v)?,
        "adapt-dropout" => cfg.adapt.dropout = parse_bool(k, v)?,
        "embed-dim" => cfg.model.embed_dim = parse(k, v)?,
        "hidden-dim" => cfg.model.hidden_dim = parse(k, v)?,
        "dim" => {
            cfg.model.embed_dim = parse(k, v)?;
            cfg.model.hidden_dim = cfg.model.embed_dim;
        }
        "depth" => cfg.model.depth = parse(k, v)?,
        "dropout" => cfg.model.dropout = parse(k, v)?,
        "init-scale" => cfg.model.init_scale = parse(k, v)?,
        "mixing" => {
            cfg.model.mixing = match v {
                "mean-pool" | "mean" => Mixing::MeanPool,
                "attention" => Mixing::Attention,
                _ => return Err(Error::Config(format!("unknown mixing {v:?}"))),
            }
        }
        _ => return Err(Error::Config(format!("unknown setting {k:?}"))),
    }
    Ok(())
}

fn parse_optimizer(v: &str) -> Result<AdaptOptimizer> {
    match v {
        "sgd" => Ok(AdaptOptimizer::Sgd),
        "proximal" => Ok(AdaptOptimizer::Proximal),
        "adam" => Ok(AdaptOptimizer::Adam),
        _ => Err(Error::Config(format!("unknown adaptation optimizer {v:?}"))),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn apply_file(cfg: &mut ExperimentConfig, text: &str) -> Result<()> {
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
        apply(cfg, k, v)?;
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn resolve(o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &o.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        apply_file(&mut cfg, &text)?;
    }
    for (k, v) in o.pairs() {
        apply(&mut cfg, &k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn prepare_for(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    prepare(&cfg.manifest, seed, cfg.max_vocab, &TokenizeOptions { max_tokens: cfg.max_tokens })
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn write_provenance(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    std::fs::write(cfg.out.join("seeds.txt"), seeds.join("\n") + "\n")?;
    std::fs::write(cfg.out.join("version.txt"), version() + "\n")?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Manifest> {
    let base = match a.task {
        TaskMode::Classification => SynthConfig::default(),
        TaskMode::Span => SynthConfig::qa(),
    };
    let cfg = SynthConfig {
        seed: a.seed,
        datasets: a.datasets.unwrap_or(base.datasets),
        classes_per_dataset: a.classes.unwrap_or(base.classes_per_dataset),
        train_per_class: a.train_per_class.unwrap_or(base.train_per_class),
        test_per_class: a.test_per_class.unwrap_or(base.test_per_class),
        train_size: a.train_size.or(base.train_size),
        test_size: a.test_size.or(base.test_size),
        ..base
    };
    let m = synth_generate(&cfg, &a.out)?;
    println!("wrote {} datasets to {}", m.datasets.len(), a.out.display());
    Ok(m)
}

/// Trains one seed into `<out>/seed-<seed>/`.
fn train_seed(cfg: &ExperimentConfig, seed: u64, resume: bool, stop_after: Option<u64>, every: Option<u64>) -> Result<()> {
    let dir = seed_dir(&cfg.out, seed);
    std::fs::create_dir_all(&dir)?;
    let data = prepare_for(cfg, seed)?;
    data.vocab.save(&dir.join("vocab.json"))?;
    let ordering = ordering_for(&data, &cfg.ordering)?;
    let model = fit_model(&cfg.model, &data);
    let train = crate::trainer::TrainConfig { seed, ..cfg.train.clone() };
    let (stream, boundaries) = method_stream(&data, &ordering, train.method, seed)?;
    write_json(&dir.join("boundaries.json"), &boundaries)?;

    let ckpt_path = dir.join("checkpoint.bin");
    let mem_path = dir.join("memory.bin");
    let log_path = dir.join("train.jsonl");
    let mut trainer = if resume && ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if Checkpoint::config_digest(&ckpt.model, &ckpt.train)? != Checkpoint::config_digest(&model, &train)? {
            return Err(Error::Config(format!("{} was written with a different config", ckpt_path.display())));
        }
        let memory = if train.method.uses_memory() { Some(EpisodicMemory::load(&mem_path, train.memory_capacity)?) } else { None };
        log::info!("resuming seed {seed} at {} examples", ckpt.cursor.examples_seen);
        Trainer::resume(ckpt, memory)?
    } else {
        if log_path.exists() {
            std::fs::remove_file(&log_path)?;
        }
        Trainer::new(model, train.clone())?
    };

    let save = |t: &mut Trainer| -> Result<()> {
        t.checkpoint().save(&ckpt_path)?;
        if let Some(m) = t.memory() {
            m.save(&mem_path)?;
        }
        write_log(&log_path, &t.take_log(), true)
    };
    let limit = stop_after.map(|n| n.saturating_mul(train.batch_size as u64) as usize).unwrap_or(usize::MAX);
    let mut targets: Vec<(usize, Option<usize>)> = boundaries.iter().enumerate().map(|(i, &b)| (b, Some(i))).collect();
    targets.push((stream.len(), None));
    let result = (|| -> Result<()> {
        for (target, boundary) in targets {
            let target = target.min(limit);
            while (trainer.cursor().examples_seen as usize) < target {
                let next = match every {
                    Some(n) => (trainer.cursor().examples_seen as usize + n as usize * train.batch_size).min(target),
                    None => target,
                };
                trainer.run_until(&stream, next)?;
                if every.is_some() {
                    save(&mut trainer)?;
                }
                if trainer.config().max_steps.is_some_and(|m| trainer.cursor().batches >= m) {
                    break;
                }
            }
            if let Some(i) = boundary {
                if trainer.cursor().examples_seen as usize >= boundaries[i] {
                    let path = dir.join(format!("boundary-{i}.bin"));
                    if !path.exists() {
                        trainer.checkpoint().save(&path)?;
                        let len = trainer.memory().map_or(0, EpisodicMemory::len);
                        std::fs::write(dir.join(format!("boundary-{i}.memory-len")), format!("{len}\n"))?;
                    }
                }
            }
            if target == limit {
                break;
            }
        }
        Ok(())
    })();
    if let Err(Error::NonFiniteLoss { step, batch_digest }) = &result {
        write_json(&dir.join("failure.json"), &serde_json::json!({ "step": step, "batch_digest": batch_digest }))?;
    }
    result?;
    save(&mut trainer)?;
    if !trainer.config().method.uses_memory() && mem_path.exists() {
        std::fs::remove_file(&mem_path)?;
    }
    let c = trainer.cursor();
    println!(
        "seed {seed}: {} examples, {} updates, {} replay events, memory {}",
        c.examples_seen,
        trainer.checkpoint().adam.step,
        c.replay_events,
        trainer.memory().map_or(0, EpisodicMemory::len)
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<ExperimentConfig> {
    let cfg = if a.resume {
        let out = a.overrides.out.as_ref().ok_or_else(|| Error::Config("--resume needs --out".into()))?;
        let text = std::fs::read(Path::new(out).join("config.json"))?;
        serde_json::from_slice::<ExperimentConfig>(&text)?
    } else {
        let cfg = resolve(&a.overrides)?;
        write_provenance(&cfg)?;
        cfg
    };
    for &seed in &cfg.seeds {
        train_seed(&cfg, seed, a.resume, a.stop_after, a.checkpoint_every)?;
    }
    Ok(cfg)
}

/// Loads a seed directory: final checkpoint, memory if any, and the frozen
/// key network rebuilt from the seed.
pub fn load_run(dir: &Path) -> Result<(Checkpoint, Option<EpisodicMemory>, Option<KeyNetwork>)> {
    let ckpt = Checkpoint::load(&dir.join("checkpoint.bin"))?;
    let mem_path = dir.join("memory.bin");
    let memory = if mem_path.exists() { Some(EpisodicMemory::load(&mem_path, ckpt.train.memory_capacity)?) } else { None };
    let keys = memory.as_ref().map(|_| KeyNetwork::new(ckpt.model.clone(), ParamVector::init(&ckpt.model, ckpt.train.seed)));
    Ok((ckpt, memory, keys))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read(a.run.join("config.json"))
        .map_err(|e| Error::Config(format!("{} is not a run directory: {e}", a.run.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_slice(&text)?;
    if let Some(k) = a.neighbors {
        cfg.adapt.neighbors = k;
    }
    if let Some(l) = a.adapt_steps {
        cfg.adapt.steps = l;
    }
    if let Some(l) = a.lambda {
        cfg.adapt.lambda = l;
    }
    if let Some(l) = a.adapt_lr {
        cfg.adapt.learning_rate = l;
    }
    if let Some(o) = &a.adapt_optimizer {
        cfg.adapt.optimizer = parse_optimizer(o)?;
    }
    cfg.adapt.validate()?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval"));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("version.txt"), version() + "\n")?;
    write_json(&out.join("adapt.json"), &cfg.adapt)?;

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut curve_rows = Vec::new();
    let mut dump = a.neighbors_dump.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    for &seed in &cfg.seeds {
        let dir = seed_dir(&a.run, seed);
        let (ckpt, memory, keys) = load_run(&dir)?;
        let method = ckpt.train.method;
        let data = prepare_for(&cfg, seed)?;
        let ordering = ordering_for(&data, &cfg.ordering)?;
        let adapt = match a.adapt.as_str() {
            "auto" => inference_adapt(method, &cfg.adapt),
            "off" => None,
            "on" => Some(cfg.adapt.clone()),
            other => return Err(Error::Config(format!("--adapt must be auto, on or off, not {other:?}"))),
        }
        .map(|ac| crate::adapt::AdaptConfig { seed, ..ac });
        let retrieval = memory.as_ref().zip(keys.as_ref());
        let inf = crate::eval::Inference { model: &ckpt.model, params: &ckpt.params, retrieval, adapt: adapt.as_ref() };
        let kind = MetricKind::for_task(ckpt.model.task);
        let seen = ckpt.cursor.examples_seen;
        let mut per = Vec::new();
        for name in &ordering.datasets {
            let d = data.datasets.iter().find(|d| &d.name == name).unwrap();
            let e = evaluate(&inf, &d.test, a.parallel)?;
            if let (Some(w), Some(m)) = (dump.as_mut(), memory.as_ref()) {
                for (x, p) in d.test.iter().zip(&e.predictions) {
                    serde_json::to_writer(&mut *w, &NeighborDump::new(x, m, &p.neighbors))?;
                    w.write_all(b"\n")?;
                }
            }
            per.push((name.clone(), e.value));
            records.push(MetricRecord {
                examples_seen: seen,
                dataset: name.clone(),
                kind,
                value: e.value,
                method: method.name().into(),
                ordering: ordering.id.clone(),
                seed,
            });
        }
        let average = crate::eval::macro_accuracy(&per.iter().map(|p| p.1).collect::<Vec<_>>())?;
        println!("seed {seed} {method}: average {:.4}", average);
        summaries.push(RunSummary { method: method.name().into(), ordering: ordering.id.clone(), seed, datasets: per, average });

        let boundaries: Vec<usize> = serde_json::from_slice(&std::fs::read(dir.join("boundaries.json"))?)?;
        let mut snaps = Vec::new();
        for (i, &b) in boundaries.iter().enumerate() {
            let snap = Checkpoint::load(&dir.join(format!("boundary-{i}.bin"))).ok().and_then(|c| {
                let len = std::fs::read_to_string(dir.join(format!("boundary-{i}.memory-len"))).ok()?;
                Some(Snapshot { examples_seen: c.cursor.examples_seen, params: c.params, memory_len: len.trim().parse().ok()? })
            });
            snaps.push((b as u64, snap));
        }
        let marks: Vec<(u64, Option<&Snapshot>)> = snaps.iter().map(|(b, s)| (*b, s.as_ref())).collect();
        let first = data.datasets.iter().find(|d| d.name == ordering.datasets[0]).unwrap();
        for p in forgetting_curve(&ckpt.model, &marks, retrieval, adapt.as_ref(), &first.test, a.parallel)? {
            curve_rows.push((method.name().to_string(), seed, p.examples_seen, p.value));
        }
    }
    if let Some(mut w) = dump {
        w.flush()?;
    }
    write_jsonl(&out.join("metrics.jsonl"), &records)?;
    let table = results_table("summary", &summaries);
    std::fs::write(out.join("results.csv"), table.to_csv()?)?;
    let mut text = table.to_text();
    for t in per_dataset_table(&summaries) {
        text.push('\n');
        text.push_str(&t.to_text());
    }
    std::fs::write(out.join("results.txt"), &text)?;
    print!("{text}");
    let mut w = csv::Writer::from_path(out.join("curve.csv"))?;
    w.write_record(["method", "seed", "examples_seen", "value"])?;
    for (m, s, seen, v) in curve_rows {
        w.write_record([m, s.to_string(), seen.to_string(), v.map(|v| format!("{v:.6}")).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(records)
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<Vec<crate::experiment::AblationPoint>> {
    let mut cfg = resolve(&a.overrides)?;
    cfg.workers = a.parallel;
    let grid: Vec<f64> = match &a.grid {
        Some(g) => g.split(',').map(|s| parse("grid", s.trim())).collect::<Result<_>>()?,
        None => a.kind.default_grid(),
    };
    write_provenance(&cfg)?;
    // Data and ordering are shared by all seeds of the sweep.
    let data = prepare_for(&cfg, cfg.seeds[0])?;
    let ordering = ordering_for(&data, &cfg.ordering)?;
    let points = ablation_sweep(&data, &ordering, a.kind, &grid, &cfg)?;
    let rows: Vec<(String, Option<f64>)> = points.iter().map(|p| (format!("{}", p.factor), p.mean)).collect();
    let table = ablation_table(a.kind.name(), &rows);
    std::fs::write(cfg.out.join("ablation.csv"), table.to_csv()?)?;
    std::fs::write(cfg.out.join("ablation.txt"), table.to_text())?;
    write_jsonl(&cfg.out.join("ablation.jsonl"), &points)?;
    print!("{}", table.to_text());
    Ok(points)
}

pub fn cmd_orderings(a: &OrderingsArgs) -> String {
    let tasks = match a.task {
        Some(t) => vec![t],
        None => vec![TaskMode::Classification, TaskMode::Span],
    };
    let mut out = String::new();
    for t in tasks {
        let name = if t == TaskMode::Classification { "classification" } else { "qa" };
        out.push_str(&format!("{name}\n"));
        for o in published_orderings(t) {
            out.push_str(&format!("  {:<4} {}\n", o.id, o.datasets.join(" -> ")));
        }
    }
    out
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ()),
        Command::Orderings(a) => {
            print!("{}", cmd_orderings(a));
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
