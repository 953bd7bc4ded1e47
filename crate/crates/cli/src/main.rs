mod manifest;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrhash::checkpoint::Checkpoint;
use attrhash::data::{load_dataset, make_split, save_dataset, save_split, SyntheticSpec};
use attrhash::eval::{
    curves, mean_average_precision, separability, zero_shot_protocol, CodeDatabase, Cutoff, GalleryMode,
    DEFAULT_N_GRID,
};
use attrhash::trainer::{encode, LossTrace, Trainer};
use attrhash::{AttributedDataset, Error, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "attrhash", version, about = "Attribute-guided zero-shot hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the seen classes of a dataset.
    Train(TrainArgs),
    /// Write binary codes for a subset of a dataset.
    Encode(EncodeArgs),
    /// Zero-shot retrieval metrics on the unseen classes.
    Eval(EvalArgs),
    /// Write a seen/unseen class split.
    Split(SplitArgs),
    /// Generate a synthetic attributed dataset.
    Synth(SynthArgs),
    /// Summarize a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Components to disable: any of pointwise, pairwise, classwise, or none.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bits: Option<usize>,
    /// Replaces the dataset's split.txt.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    All,
    Seen,
    Unseen,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    subset: Subset,
    /// Comma-separated class ids; restricts the subset further. Empty selects nothing.
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gallery {
    Unseen,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated mAP cutoffs; `all` ranks the whole gallery.
    #[arg(long, default_value = "5000,all")]
    cutoffs: String,
    #[arg(long, value_enum, default_value = "unseen")]
    gallery: Gallery,
    /// Fraction of each unseen class used as queries.
    #[arg(long, default_value_t = 0.2)]
    query_fraction: f64,
    /// Seed of the query selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated N values for the P@N and R@N curves.
    #[arg(long)]
    n_grid: Option<String>,
    /// Expected code length; a different checkpoint length is an error.
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    attributes: usize,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    height: usize,
    #[arg(long, default_value_t = 2)]
    width: usize,
    /// Also mark this fraction of classes unseen.
    #[arg(long)]
    unseen_ratio: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by train or eval.
    #[arg(long)]
    run: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::UnknownKey { .. } | Error::ConfigValue { .. } | Error::InvalidArgument(_) => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Train(a) => with_manifest(&a.out.clone(), "train", &argv, |m| train(a, m)),
        Command::Encode(a) => with_manifest(&a.out.clone(), "encode", &argv, |m| encode_cmd(a, m)),
        Command::Eval(a) => with_manifest(&a.out.clone(), "eval", &argv, |m| eval(a, m)),
        Command::Split(a) => with_manifest(&a.out.clone(), "split", &argv, |m| split(a, m)),
        Command::Synth(a) => with_manifest(&a.out.clone(), "synth", &argv, |m| synth(a, m)),
        Command::Report(a) => report(&a.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Creates `out`, writes a `running` manifest, runs `body` and records the outcome.
fn with_manifest(
    out: &Path,
    command: &str,
    argv: &[String],
    body: impl FnOnce(&mut Manifest) -> attrhash::Result<()>,
) -> attrhash::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut manifest = Manifest::start(command, argv, out);
    manifest.write()?;
    let result = body(&mut manifest);
    manifest.finish(result.as_ref().err().map(ToString::to_string));
    manifest.write()?;
    result
}

fn load_data(data: &Path, split: Option<&Path>) -> attrhash::Result<AttributedDataset> {
    let ds = load_dataset(data)?;
    match split {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let spec = attrhash::SplitSpec::parse(&text, ds.num_classes(), path)?;
            ds.with_split(spec)
        }
        None => Ok(ds),
    }
}

fn resolve_config(a: &TrainArgs) -> attrhash::Result<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::ConfigValue {
            key: kv.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        config.set(k.trim(), v)?;
    }
    if let Some(v) = &a.ablate {
        config.set("ablate", v)?;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.bits {
        config.bits = v;
    }
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs, m: &mut Manifest) -> attrhash::Result<()> {
    let ds = load_data(&a.data, a.split.as_deref())?;
    m.set("dataset", a.data.display());
    let mut trainer = match &a.resume {
        Some(path) => {
            m.set("resume", path.display());
            Trainer::resume(&ds, Checkpoint::load(path)?)?
        }
        None => Trainer::new(&ds, &resolve_config(&a)?)?,
    };
    m.set("seed", trainer.config().seed);
    m.attach_config(trainer.config());
    let config_path = a.out.join("config.txt");
    std::fs::write(&config_path, trainer.config().to_text()).map_err(|e| io_err(&config_path, e))?;
    let ckpt = a.out.join("model.ckpt");
    let losses = a.out.join("losses.csv");
    while trainer.epoch() < trainer.config().epochs {
        let outcome = trainer.run_epoch(&mut ());
        trainer.trace().write_csv(&losses)?;
        outcome?;
        trainer.checkpoint().save(&ckpt)?;
    }
    let report = trainer.into_report()?;
    m.set("epochs", report.trace.rows.len());
    m.set("final_total", report.final_losses.total);
    Ok(())
}

fn parse_classes(list: &str) -> attrhash::Result<BTreeSet<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("class id `{s}` is not a non-negative integer")))
        })
        .collect()
}

fn encode_cmd(a: EncodeArgs, m: &mut Manifest) -> attrhash::Result<()> {
    let ds = load_data(&a.data, a.split.as_deref())?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    m.set("dataset", a.data.display());
    m.set("checkpoint", a.checkpoint.display());
    m.set("seed", ck.config.seed);
    let mut classes: BTreeSet<usize> = match a.subset {
        Subset::All => (0..ds.num_classes()).collect(),
        Subset::Seen => ds.split().seen().clone(),
        Subset::Unseen => ds.split().unseen().clone(),
    };
    if let Some(list) = &a.classes {
        let wanted = parse_classes(list)?;
        classes.retain(|c| wanted.contains(c));
    }
    let indices = ds.indices_of_classes(&classes);
    let db = encode(&ck.model, &ds, &indices)?;
    db.save(&a.out, "codes")?;
    m.set("codes", db.len());
    m.set("bits", db.bits());
    Ok(())
}

fn parse_list<T>(text: &str, what: &str, parse: impl Fn(&str) -> attrhash::Result<T>) -> attrhash::Result<Vec<T>> {
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<attrhash::Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("empty {what} list")));
    }
    Ok(items)
}

fn eval(a: EvalArgs, m: &mut Manifest) -> attrhash::Result<()> {
    let ds = load_data(&a.data, a.split.as_deref())?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    m.set("dataset", a.data.display());
    m.set("checkpoint", a.checkpoint.display());
    m.set("seed", a.seed);
    if let Some(bits) = a.bits {
        if bits != ck.model.bits() {
            return Err(Error::Shape(format!(
                "expected {bits}-bit codes, checkpoint produces {}",
                ck.model.bits()
            )));
        }
    }
    let cutoffs = parse_list(&a.cutoffs, "cutoff", Cutoff::parse)?;
    let grid = match &a.n_grid {
        Some(text) => parse_list(text, "N", |s| {
            s.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::InvalidArgument(format!("N `{s}` must be a positive integer")))
        })?,
        None => DEFAULT_N_GRID.to_vec(),
    };
    let mode = match a.gallery {
        Gallery::Unseen => GalleryMode::Unseen,
        Gallery::All => GalleryMode::All,
    };
    let protocol = zero_shot_protocol(&ds, a.query_fraction, mode, a.seed)?;
    let queries = encode(&ck.model, &ds, &protocol.queries)?;
    let gallery = encode(&ck.model, &ds, &protocol.gallery)?;

    let mut metrics = String::new();
    let _ = writeln!(metrics, "queries={}", queries.len());
    let _ = writeln!(metrics, "gallery={}", gallery.len());
    let _ = writeln!(metrics, "bits={}", queries.bits());
    let mut zero_relevant = 0;
    for cutoff in &cutoffs {
        let map = mean_average_precision(&queries, &gallery, *cutoff)?;
        zero_relevant = map.zero_relevant;
        let _ = writeln!(metrics, "map@{cutoff}={}", map.value);
    }
    if !cutoffs.contains(&Cutoff::All) {
        let map = mean_average_precision(&queries, &gallery, Cutoff::All)?;
        let _ = writeln!(metrics, "map@all={}", map.value);
    }
    let c = curves(&queries, &gallery, &grid)?;
    let _ = writeln!(metrics, "auc={}", c.auc);
    let _ = writeln!(metrics, "zero_relevant_queries={zero_relevant}");
    let _ = writeln!(metrics, "degenerate_curves={}", c.degenerate);
    c.write_csv(&a.out)?;

    let mut test = queries.clone();
    for i in 0..gallery.len() {
        if ds.split().is_seen(gallery.labels()[i]) {
            continue;
        }
        test.push(&gallery.code(i), gallery.labels()[i])?;
    }
    let sep = separability(&test, Some(ds.class_attributes()))?;
    sep.write_csv(a.out.join("separability.csv"))?;
    metrics.push_str(&sep.summary());
    let path = a.out.join("metrics.txt");
    std::fs::write(&path, metrics).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn split(a: SplitArgs, m: &mut Manifest) -> attrhash::Result<()> {
    let ds = load_dataset(&a.data)?;
    m.set("dataset", a.data.display());
    m.set("seed", a.seed);
    let spec = make_split(&ds, a.ratio, a.seed)?;
    save_split(&spec, a.out.join("split.txt"))
}

fn synth(a: SynthArgs, m: &mut Manifest) -> attrhash::Result<()> {
    m.set("seed", a.seed);
    let ds = attrhash::data::make_synthetic_with(SyntheticSpec {
        num_classes: a.classes,
        num_attributes: a.attributes,
        per_class: a.per_class,
        noise: a.noise,
        seed: a.seed,
        height: a.height,
        width: a.width,
    })?;
    let ds = match a.unseen_ratio {
        Some(r) => {
            let spec = make_split(&ds, r, a.seed)?;
            ds.with_split(spec)?
        }
        None => ds,
    };
    save_dataset(&ds, &a.out)?;
    m.set("samples", ds.len());
    Ok(())
}

fn report(run: &Path) -> attrhash::Result<()> {
    let read = |name: &str| std::fs::read_to_string(run.join(name)).ok();
    let manifest = read("manifest.txt").ok_or_else(|| Error::InvalidArgument(format!("{} has no manifest.txt", run.display())))?;
    let mut out = String::new();
    for line in manifest.lines().take_while(|l| !l.starts_with('[')) {
        let _ = writeln!(out, "{line}");
    }
    if let Some(text) = read("losses.csv") {
        let trace = LossTrace::parse_csv(&text, &run.join("losses.csv"))?;
        if let (Some((e0, first)), Some((e1, last))) = (trace.rows.first(), trace.rows.last()) {
            let _ = writeln!(out, "loss epoch {e0}: total={} pointwise={} pairwise={} classwise={} hash={}",
                first.total, first.pointwise, first.pairwise, first.classwise, first.hash);
            let _ = writeln!(out, "loss epoch {e1}: total={} pointwise={} pairwise={} classwise={} hash={}",
                last.total, last.pointwise, last.pairwise, last.classwise, last.hash);
        }
    }
    if let Some(text) = read("metrics.txt") {
        out.push_str(&text);
    }
    if let Ok(db) = CodeDatabase::load(run, "codes") {
        let _ = writeln!(out, "codes={} bits={}", db.len(), db.bits());
    }
    print!("{out}");
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
