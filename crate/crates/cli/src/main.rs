use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hypertyping_core::checkpoint::{write_atomic, Checkpoint};
use hypertyping_core::config::{Preset, RunConfig};
use hypertyping_core::data::{EmbeddingSpace, LabelInventory};
use hypertyping_core::gradcheck::{self, GradcheckOptions};
use hypertyping_core::synthetic::{self, BenchSettings, SyntheticSpec};
use hypertyping_core::workflow::{self, DataPaths};
use hypertyping_core::{Error, SpaceTag};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "hypertyping", version, about = "Hyperbolic entity typing: train, evaluate, inspect, check gradients, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed and keep the best checkpoint of each.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// List the labels whose classifier points are closest to a label.
    Inspect(InspectArgs),
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Hyperbolic vs Euclidean on a synthetic label hierarchy.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// base, large or xlarge; overrides the file's sizes.
    #[arg(long)]
    preset: Option<Preset>,
    /// Space of every component.
    #[arg(long)]
    space: Option<SpaceTag>,
    /// `component=space` for encoder, attention, concat or mlr.
    #[arg(long = "component-space", value_name = "COMPONENT=SPACE")]
    component_space: Vec<String>,
    /// Extra `key=value` config entries, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.apply_preset(p);
        }
        if let Some(s) = self.space {
            cfg.set("space", &s.to_string())?;
        }
        for cs in &self.component_space {
            cfg.spaces.set(cs).map_err(|e| Error::Config(vec![e.to_string()]))?;
        }
        let mut problems = Vec::new();
        for kv in &self.set {
            match kv.split_once('=') {
                Some((k, v)) => {
                    if let Err(Error::Config(p)) = cfg.set(k, v) {
                        problems.extend(p);
                    }
                }
                None => problems.push(format!("--set expects KEY=VALUE, got `{kv}`")),
            }
        }
        if let Err(Error::Config(p)) = cfg.validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Label inventory: `label<TAB>granularity` per line.
    #[arg(long)]
    labels: PathBuf,
    /// Word vectors: `token v1 ... vn` per line.
    #[arg(long)]
    embeddings: PathBuf,
    /// poincare or euclidean.
    #[arg(long = "embedding-space")]
    embedding_space: Option<EmbeddingSpace>,
    /// Main training split, one JSON record per line.
    #[arg(long)]
    train: PathBuf,
    /// Crowdsourced split, cycled after each main epoch.
    #[arg(long)]
    crowd: Option<PathBuf>,
    /// Validation split used to pick the best epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Comma list (`0,1,2`) or range (`0..3`).
    #[arg(long, default_value = "0", value_parser = parse_seeds)]
    seeds: Seeds,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Inventory the dataset was labelled with; must match the checkpoint.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    label: String,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "0..10", value_parser = parse_seeds)]
    seeds: Seeds,
    /// Coordinates sampled per tensor and seed.
    #[arg(long, default_value_t = 24)]
    coords: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Corrupt one component's gradient (fault-injection check).
    #[arg(long, hide = true)]
    fault: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long = "train-size", default_value_t = 2000)]
    train_size: usize,
    #[arg(long = "test-size", default_value_t = 500)]
    test_size: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Spaces of the non-Euclidean contender (default: all hyperbolic).
    #[arg(long = "component-space", value_name = "COMPONENT=SPACE")]
    component_space: Vec<String>,
    #[arg(long, default_value = "0,1,2", value_parser = parse_seeds)]
    seeds: Seeds,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("expected `0,1,2` or `0..3`, got `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok(Seeds((a..b).collect()));
    }
    let seeds = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Seeds(seeds))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numeric() => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = args.config.resolve()?;
    if let Some(s) = args.embedding_space {
        cfg.embedding_space = s;
    }
    let paths = DataPaths {
        labels: args.labels,
        embeddings: args.embeddings,
        train: args.train,
        crowd: args.crowd,
        dev: args.dev,
    };
    let summary = workflow::train(&cfg, &paths, &args.seeds.0, &args.out, &mut |line| eprintln!("{line}"))?;
    for r in &summary.runs {
        println!("seed {}: best epoch {}, total macro-F1 {:.4}", r.seed, r.best_epoch, r.scores.total.macro_avg.f1);
    }
    println!("mean over {} seed(s)", summary.runs.len());
    println!("{}", summary.mean);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let labels = args.labels.as_deref().map(LabelInventory::load).transpose()?;
    let scores = workflow::evaluate_file(&ckpt, &args.data, labels.as_ref())?;
    let json = to_json(&scores)?;
    if let Some(out) = &args.out {
        write_atomic(out, json.as_bytes())?;
    }
    if args.json {
        println!("{json}");
    } else {
        println!("{scores}");
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = workflow::model_of(&ckpt)?;
    for (label, d) in workflow::nearest_labels(&model, &ckpt.inventory, &args.label, args.k)? {
        println!("{label} {d:.2}");
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<bool, Error> {
    let cfg = args.config.resolve()?;
    if let Some(f) = &args.fault {
        if !gradcheck::COMPONENTS.contains(&f.as_str()) {
            return Err(Error::Config(vec![format!("unknown component `{f}`")]));
        }
    }
    let opts = GradcheckOptions {
        seeds: args.seeds.0,
        coords_per_tensor: args.coords,
        tolerance: args.tolerance,
        fault: args.fault,
        ..GradcheckOptions::default()
    };
    let report = gradcheck::run(&cfg, &opts)?;
    println!("{report}");
    Ok(report.passed())
}

fn bench(args: BenchArgs) -> Result<(), Error> {
    let spec = SyntheticSpec {
        depth: args.depth,
        branching: args.branching,
        dim: args.dim,
        train: args.train_size,
        test: args.test_size,
        ..SyntheticSpec::default()
    };
    let settings = BenchSettings {
        epochs: args.epochs,
        ..BenchSettings::default()
    };
    let mut contender = hypertyping_core::model::ComponentSpaceConfig::uniform(SpaceTag::Hyperbolic);
    for cs in &args.component_space {
        contender.set(cs).map_err(|e| Error::Config(vec![e.to_string()]))?;
    }
    let spaces = synthetic::default_spaces(contender);
    let rows = synthetic::run(&spec, &settings, &spaces, &args.seeds.0)?;
    let mut csv = Vec::new();
    synthetic::write_csv(&mut csv, &rows)?;
    match &args.out {
        Some(path) => write_atomic(path, &csv)?,
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    let leaf = |name: &str| rows.iter().find(|r| r.level == spec.depth && r.space == name).map(|r| r.macro_f1);
    if let (Some(h), Some(e)) = (leaf("hyperbolic"), leaf("euclidean")) {
        eprintln!("deepest level macro-F1: hyperbolic {h:.4}, euclidean {e:.4}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_NUMERIC),
            Err(e) => Err(e),
        },
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
