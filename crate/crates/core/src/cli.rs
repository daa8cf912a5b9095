//! Command-line front end: `zoo`, `train`, `encode`, `eval` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{keys_help, RunConfig};
use crate::error::{validation, Error, Result};
use crate::eval::{cross_eval, EvalMode, EvalReport, TrainedPredictor};
use crate::train::{load_artifact, save_artifact, Trainer};
use crate::zoo::arch::ArchId;
use crate::zoo::dataset::Generator;
use crate::zoo::{train_zoo, SplitTag, Zoo, ZooSpec};

#[derive(Debug, Parser)]
#[command(name = "sne", version, about = "Set-based neural network encoder: model zoos, accuracy predictors, evaluation")]
pub struct Cli {
    /// Worker threads; 1 gives bit-identical reruns.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a population of small CNNs into a zoo directory.
    Zoo(ZooArgs),
    /// Train an accuracy predictor on a zoo's train/val splits.
    #[command(after_help = keys_help())]
    Train(TrainArgs),
    /// Export encodings of every zoo member as CSV.
    Encode(EncodeArgs),
    /// Evaluate trained predictors on the test splits of target zoos.
    Eval(EvalArgs),
    /// Render an evaluation report as a text matrix.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ZooArgs {
    /// Output zoo directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON zoo spec; the flags below are ignored when given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "zoo")]
    pub name: String,
    #[arg(long, default_value = "arch1")]
    pub arch: String,
    /// gratings, blobs, rings or strokes.
    #[arg(long, default_value = "blobs")]
    pub generator: String,
    /// Input channels; defaults to 1 for arch1 and 3 for arch2.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Image side length.
    #[arg(long, default_value_t = 28)]
    pub size: usize,
    #[arg(long, default_value_t = 200)]
    pub population: usize,
    /// Images per split of the synthetic dataset.
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Zoo directory to train on.
    #[arg(long)]
    pub zoo: PathBuf,
    /// Output artifact; the history CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable: --set lr=0.001
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for --set encoder=...
    #[arg(long)]
    pub encoder: Option<String>,
    /// Continue a saved run up to its configured (or --epochs) epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this epoch; the learning-rate schedule still follows the configured count.
    #[arg(long)]
    pub until: Option<usize>,
    /// Print one line per epoch.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub zoo: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained artifacts; predictors sharing a source zoo are seeds of one row.
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Target zoo directories.
    #[arg(long, num_args = 1.., required = true)]
    pub zoos: Vec<PathBuf>,
    /// cross-dataset or cross-architecture.
    #[arg(long, default_value = "cross-dataset")]
    pub mode: String,
    /// Directory for report.csv and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.json written by `eval`.
    #[arg(long)]
    pub input: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => return Err(validation("--threads must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| validation(e.to_string()))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Zoo(a) => cmd_zoo(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn zoo_spec(a: &ZooArgs) -> Result<ZooSpec> {
    if let Some(path) = &a.spec {
        return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
    }
    let arch: ArchId = a.arch.parse()?;
    let generator: Generator = a.generator.parse()?;
    let channels = a.channels.unwrap_or(match arch {
        ArchId::Arch1 => 1,
        ArchId::Arch2 => 3,
    });
    let mut spec = ZooSpec::new(a.name.clone(), arch, generator, channels);
    spec.dataset.size = a.size;
    spec.dataset.train = a.images;
    spec.dataset.test = a.images;
    spec.dataset.noise = a.noise;
    spec.population = a.population;
    spec.master_seed = a.seed;
    Ok(spec)
}

fn cmd_zoo(a: &ZooArgs) -> Result<()> {
    let spec = zoo_spec(a)?;
    let s = train_zoo(&spec, &a.out)?;
    println!(
        "zoo '{}': {} trained, {} resumed, {} failed -> {}",
        spec.name,
        s.trained,
        s.resumed,
        s.failed,
        a.out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let zoo = Zoo::load(&a.zoo)?;
    let (train, val) = (zoo.members(SplitTag::Train), zoo.members(SplitTag::Val));
    let (mut trainer, until) = match &a.resume {
        Some(path) => {
            if a.config.is_some() || !a.set.is_empty() || a.encoder.is_some() {
                return Err(validation("a resumed run keeps its config; only --epochs may change"));
            }
            let mut t = load_artifact(path)?;
            if let Some(e) = a.epochs {
                t.predictor.config.epochs = e;
            }
            let until = t.predictor.config.epochs;
            (t, until)
        }
        None => {
            let mut cfg = match &a.config {
                Some(p) => RunConfig::parse_text(&fs::read_to_string(p)?)?,
                None => RunConfig::default(),
            };
            if let Some(e) = &a.encoder {
                cfg.set("encoder", e)?;
            }
            cfg.apply(a.set.iter().map(String::as_str))?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let until = cfg.epochs;
            (Trainer::new(&cfg, zoo.name(), &train, &val)?, until)
        }
    };
    let until = match a.until {
        Some(u) if u == 0 || u > until => return Err(validation(format!("--until must lie in 1..={until}"))),
        Some(u) => u,
        None => until,
    };
    let verbose = a.verbose;
    let result = trainer.run_with(&train, &val, until, |h| {
        if verbose {
            let tau = h.val_tau.map_or("-".to_string(), |t| format!("{t:.4}"));
            eprintln!("epoch {:>4}  lr {:.2e}  train {:.5}  val {:.5}  tau {tau}", h.epoch, h.lr, h.train_loss, h.val_loss);
        }
    });
    // the artifact is written even after a divergence: it holds the last finite state
    save_artifact(&trainer, &a.out)?;
    fs::write(history_path(&a.out), trainer.history_csv())?;
    result?;
    match &trainer.best {
        Some(b) => println!(
            "trained {} epochs; best val tau {:.4} at epoch {} -> {}",
            trainer.epoch,
            b.val_tau,
            b.epoch,
            a.out.display()
        ),
        None => println!("trained {} epochs; val tau undefined -> {}", trainer.epoch, a.out.display()),
    }
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let p = TrainedPredictor::load(&a.model)?;
    let zoo = Zoo::load(&a.zoo)?;
    let mut rows = Vec::new();
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        for m in zoo.members(tag) {
            rows.push((m.id, tag, m.accuracy, m.model));
        }
    }
    rows.sort_by_key(|r| r.0);
    let models: Vec<_> = rows.iter().map(|r| r.3).collect();
    let encodings = {
        use rayon::prelude::*;
        models
            .par_iter()
            .map(|m| p.predictor.encode(m))
            .collect::<Result<Vec<_>>>()?
    };
    let width = encodings.first().map_or(0, Vec::len);
    let mut s = String::from("zoo,id,split,accuracy");
    for j in 0..width {
        s.push_str(&format!(",e{j}"));
    }
    s.push('\n');
    for (r, e) in rows.iter().zip(&encodings) {
        let split = match r.1 {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        };
        s.push_str(&format!("{},{},{split},{}", zoo.name(), r.0, r.2));
        for v in e {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    fs::write(&a.out, s)?;
    println!("{} encodings of width {width} -> {}", rows.len(), a.out.display());
    Ok(())
}

/// Groups predictors by source zoo, keeping first-appearance order.
pub fn group_by_source(predictors: Vec<TrainedPredictor>) -> Vec<Vec<TrainedPredictor>> {
    let mut groups: Vec<Vec<TrainedPredictor>> = Vec::new();
    for p in predictors {
        match groups.iter_mut().find(|g| g[0].trained_on.zoo == p.trained_on.zoo) {
            Some(g) => g.push(p),
            None => groups.push(vec![p]),
        }
    }
    groups
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mode: EvalMode = a.mode.parse()?;
    let predictors = a
        .models
        .iter()
        .map(TrainedPredictor::load)
        .collect::<Result<Vec<_>>>()?;
    let zoos = a.zoos.iter().map(Zoo::load).collect::<Result<Vec<_>>>()?;
    let targets: Vec<&Zoo> = zoos.iter().collect();
    let report = cross_eval(&group_by_source(predictors), &targets, mode)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.csv"), report.to_csv())?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    print!("{}", render_report(&report));
    Ok(())
}

/// Source-by-target matrix of `mean ± std`, then the average.
pub fn render_report(r: &EvalReport) -> String {
    let mut sources: Vec<&str> = Vec::new();
    let mut targets: Vec<&str> = Vec::new();
    for c in &r.cells {
        if !sources.contains(&c.source.as_str()) {
            sources.push(&c.source);
        }
        if !targets.contains(&c.target.as_str()) {
            targets.push(&c.target);
        }
    }
    let mut s = format!("{} ({}), Kendall tau on target test splits\n", r.method, r.mode);
    s.push_str(&format!("{:<16}", "source \\ target"));
    for t in &targets {
        s.push_str(&format!("{t:>18}"));
    }
    s.push('\n');
    for src in &sources {
        s.push_str(&format!("{src:<16}"));
        for t in &targets {
            let cell = r
                .cell(src, t)
                .map_or("-".to_string(), |c| format!("{:.3} ± {:.3}", c.mean, c.std));
            s.push_str(&format!("{cell:>18}"));
        }
        s.push('\n');
    }
    s.push_str(&format!("average {:.3} ± {:.3} over {} cells\n", r.average.mean, r.average.std, r.average.n));
    s
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(&a.input)?)
        .map_err(|e| Error::Validation(format!("{} is not an eval report: {e}", a.input.display())))?;
    let text = render_report(&report);
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
