use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use onoff::corpus::{load_manifest, Task};
use onoff::harness::{
    build_report, render_report, run_gender_experiment, ExperimentConfig, ExperimentResult, F1Variant,
    FeatureSet, FeatureStore, GenderMode, GroupingStrategy, ModelKind, ReportFormat, RunOptions,
};
use onoff::synth::{generate_corpus, SynthConfig};

#[derive(Parser)]
#[command(name = "onoff", version, about = "Medication-state classification from speech features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run nested cross-validation for one model, feature set, strategy and task.
    Evaluate(EvaluateArgs),
    /// Collect results files into per-task and per-gender tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic cohort: manifest plus feature files.
    Synth {
        /// TOML file with generator settings; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Base directory for relative feature paths; defaults to the manifest's directory.
    #[arg(long)]
    features_root: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long, value_enum)]
    feature_set: Features,
    #[arg(long, value_enum)]
    strategy: Strategy,
    /// Target task, e.g. PROS-SENT.
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, value_enum, default_value = "independent")]
    gender_mode: Gender,
    #[arg(long, value_enum, default_value = "macro")]
    f1: F1,
    /// TOML file with further experiment settings (grids, fold counts, A-DNN training).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-phase sample access log.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Svm,
    Adnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Egemaps,
    W2v2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Specific,
    Grouping,
    Independent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gender {
    Independent,
    Dependent,
}

#[derive(Clone, Copy, ValueEnum)]
enum F1 {
    Macro,
    PositiveOn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
    Md,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.to_ascii_uppercase().parse().map_err(|e| format!("{e}"))
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn result_name(cfg: &ExperimentConfig) -> String {
    let model = match cfg.model {
        ModelKind::Svm => "svm",
        ModelKind::Adnn => "adnn",
    };
    let features = match cfg.feature_set {
        FeatureSet::Egemaps => "egemaps",
        FeatureSet::W2v2 => "w2v2",
    };
    let strategy = match cfg.strategy {
        GroupingStrategy::TaskSpecific => "specific",
        GroupingStrategy::TaskGrouping => "grouping",
        GroupingStrategy::TaskIndependent => "independent",
    };
    let gender = match cfg.gender_mode {
        GenderMode::Independent => "",
        GenderMode::Dependent => "_gender-dependent",
    };
    format!("{model}_{features}_{strategy}_{}{gender}", cfg.target_task)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = read_toml(args.config.as_deref())?;
    cfg.model = match args.model {
        Model::Svm => ModelKind::Svm,
        Model::Adnn => ModelKind::Adnn,
    };
    cfg.feature_set = match args.feature_set {
        Features::Egemaps => FeatureSet::Egemaps,
        Features::W2v2 => FeatureSet::W2v2,
    };
    cfg.strategy = match args.strategy {
        Strategy::Specific => GroupingStrategy::TaskSpecific,
        Strategy::Grouping => GroupingStrategy::TaskGrouping,
        Strategy::Independent => GroupingStrategy::TaskIndependent,
    };
    cfg.gender_mode = match args.gender_mode {
        Gender::Independent => GenderMode::Independent,
        Gender::Dependent => GenderMode::Dependent,
    };
    cfg.f1_variant = match args.f1 {
        F1::Macro => F1Variant::Macro,
        F1::PositiveOn => F1Variant::PositiveOn,
    };
    cfg.target_task = args.task;
    cfg.n_seeds = args.seeds;

    let records = load_manifest(&args.manifest)?;
    let root = match args.features_root {
        Some(r) => r,
        None => args.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let store = FeatureStore::load(&records, &root)?;
    log::info!("loaded {} recordings", records.len());

    let opts = RunOptions {
        jobs: None,
        trace: args.trace,
    };
    let result = run_gender_experiment(&cfg, &records, &store, &opts)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let name = result_name(&cfg);
    let path = args.out.join(format!("{name}.json"));
    fs::write(&path, result.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    // Wall-clock lives beside the results so reruns produce identical results files.
    let timing = serde_json::json!({ "elapsed_seconds": result.elapsed.as_secs_f64() });
    fs::write(
        args.out.join(format!("{name}.timing.json")),
        serde_json::to_string_pretty(&timing)? + "\n",
    )?;
    if args.trace {
        fs::write(
            args.out.join(format!("{name}.access.json")),
            serde_json::to_string(&result.access_log)? + "\n",
        )?;
    }
    println!(
        "{} {} {} {}: F1 {}",
        cfg.model.label(),
        cfg.feature_set.label(),
        cfg.strategy.label(),
        cfg.target_task,
        result.summary.percent()
    );
    if let (Some(m), Some(f)) = (result.male, result.female) {
        println!("  male {}  female {}", m.percent(), f.percent());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn report(input: &Path, format: Format, out: Option<&Path>) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".timing.json") && !name.ends_with(".access.json")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no results files in {}", input.display());
    }
    let results = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            ExperimentResult::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let format = match format {
        Format::Tsv => ReportFormat::Tsv,
        Format::Json => ReportFormat::Json,
        Format::Md => ReportFormat::Md,
    };
    let text = render_report(&build_report(&results), format)?;
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg: SynthConfig = read_toml(config)?;
    let corpus = generate_corpus(&cfg, seed)?;
    corpus.write_to(out)?;
    println!(
        "wrote {} recordings from {} speakers to {}",
        corpus.records.len(),
        cfg.n_speakers,
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Evaluate(args) => evaluate(args),
        Command::Report { input, format, out } => report(&input, format, out.as_deref()),
        Command::Synth { config, seed, out } => synth(config.as_deref(), seed, &out),
    }
}
