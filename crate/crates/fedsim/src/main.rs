//! `fedsim` — dataset tooling and experiment runner in one binary.
//!
//! Subcommands mirror the library surface: `generate-synth`, `stats`,
//! `filter`, `split`, `subsample` and `mix-iid` manipulate dataset files;
//! `run` executes an experiment config or preset; `metrics` and `export`
//! post-process experiment records. Exit codes: 0 success, 1 config or
//! argument error, 2 data/format error, 3 runtime error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use fedsim::dataset::{self, Subsample};
use fedsim::metrics::{self, Weighting};
use fedsim::runner::{self, ExportKind};
use fedsim::synthgen::{self, SynthConfig};
use fedsim::{Error, Result};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated-learning benchmark simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic federated classification dataset.
    GenerateSynth(GenerateSynthArgs),
    /// Print per-device sample statistics for a dataset file.
    Stats(StatsArgs),
    /// Drop devices with fewer than a minimum number of samples.
    Filter(FilterArgs),
    /// Split each device's samples into train/val/test files.
    Split(SplitArgs),
    /// Keep a random subset of devices.
    Subsample(SubsampleArgs),
    /// Pool all samples into one shuffled pseudo-device.
    MixIid(MixIidArgs),
    /// Run an experiment from a config file or built-in preset.
    Run(RunArgs),
    /// Summarize final accuracies (and optionally a systems budget)
    /// from an experiment record.
    Metrics(MetricsArgs),
    /// Flatten an experiment record into a CSV table.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenerateSynthArgs {
    /// Number of devices (tasks) to generate.
    #[arg(long, default_value_t = 1000)]
    num_tasks: usize,
    /// Number of equally probable latent clusters.
    #[arg(long, default_value_t = 1)]
    num_clusters: usize,
    /// Latent dimension of the cluster model.
    #[arg(long, default_value_t = 5)]
    latent_dim: usize,
    /// Feature dimension of each sample.
    #[arg(long, default_value_t = 60)]
    feature_dim: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 5)]
    num_classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Dataset file to inspect.
    dataset: PathBuf,
    /// Emit machine-readable JSON instead of text.
    #[arg(long, action = ArgAction::SetTrue)]
    json: bool,
}

#[derive(Args)]
struct FilterArgs {
    dataset: PathBuf,
    /// Keep devices with at least this many samples.
    #[arg(long)]
    min_samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    dataset: PathBuf,
    /// Comma-separated train,val,test fractions (must sum to 1).
    #[arg(long, default_value = "0.6,0.2,0.2")]
    fractions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes <prefix>.train.json, <prefix>.val.json, <prefix>.test.json.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct SubsampleArgs {
    dataset: PathBuf,
    /// Keep exactly this many devices.
    #[arg(long, conflicts_with = "fraction")]
    count: Option<usize>,
    /// Keep this fraction of devices (rounded to a count).
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MixIidArgs {
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see --preset list).
    #[arg(long)]
    preset: Option<String>,
    /// Override the master seed from the config/preset.
    #[arg(long)]
    seed: Option<u64>,
    /// Output record file (line-delimited JSON).
    #[arg(long, required_unless_present = "list")]
    out: Option<PathBuf>,
    /// Worker threads (default: FEDSIM_WORKERS, then the config, then
    /// one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// List available presets and exit.
    #[arg(long, action = ArgAction::SetTrue)]
    list: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Experiment record file.
    #[arg(long)]
    record: PathBuf,
    /// Accuracy weighting: per_sample or per_device.
    #[arg(long, default_value = "per_sample")]
    weighting: String,
    /// Also summarize within device groups.
    #[arg(long, action = ArgAction::SetTrue)]
    stratify: bool,
    /// Report the systems budget spent to first reach this accuracy.
    #[arg(long)]
    budget_threshold: Option<f64>,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    record: PathBuf,
    /// Table to produce: rounds, devices or summary.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_weighting(s: &str) -> Result<Weighting> {
    match s {
        "per_sample" => Ok(Weighting::PerSample),
        "per_device" => Ok(Weighting::PerDevice),
        other => Err(Error::Argument(format!(
            "unknown weighting {other:?} (expected per_sample or per_device)"
        ))),
    }
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Argument(format!(
            "expected three comma-separated fractions, got {s:?}"
        )));
    }
    let mut f = [0.0; 3];
    for (slot, part) in f.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| Error::Argument(format!("bad fraction {part:?}: {e}")))?;
    }
    Ok((f[0], f[1], f[2]))
}

fn cmd_generate_synth(args: GenerateSynthArgs) -> Result<()> {
    if args.num_clusters == 0 {
        return Err(Error::Argument("--num-clusters must be >= 1".into()));
    }
    let probs = vec![1.0 / args.num_clusters as f64; args.num_clusters];
    let cfg = SynthConfig::new(
        args.num_tasks,
        probs,
        args.latent_dim,
        args.feature_dim,
        args.num_classes,
        args.seed,
    );
    let ds = synthgen::generate_synthetic(&cfg)?;
    dataset::save_dataset(&ds, &args.out)?;
    eprintln!(
        "wrote {} devices / {} samples to {}",
        ds.num_devices(),
        ds.total_samples(),
        args.out.display()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let ds = dataset::load_dataset(&args.dataset)?;
    let stats = dataset::dataset_stats(&ds)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        println!("devices:             {}", stats.num_devices);
        println!("total samples:       {}", stats.total_samples);
        println!("samples/device mean: {:.3}", stats.mean_samples_per_device);
        println!("samples/device std:  {:.3}", stats.stdev_samples_per_device);
        println!("feature dim:         {}", ds.feature_dim);
        println!("classes:             {}", ds.num_classes);
    }
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let ds = dataset::load_dataset(&args.dataset)?;
    let kept = dataset::filter_min_samples(&ds, args.min_samples);
    dataset::save_dataset(&kept, &args.out)?;
    eprintln!(
        "kept {} of {} devices (min_samples = {})",
        kept.num_devices(),
        ds.num_devices(),
        args.min_samples
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let ds = dataset::load_dataset(&args.dataset)?;
    let fractions = parse_fractions(&args.fractions)?;
    let split = dataset::split_train_val_test(&ds, fractions, args.seed)?;
    for (part, name) in [
        (&split.train, "train"),
        (&split.val, "val"),
        (&split.test, "test"),
    ] {
        let path = PathBuf::from(format!("{}.{name}.json", args.out_prefix));
        dataset::save_dataset(part, &path)?;
        eprintln!(
            "wrote {} ({} devices / {} samples)",
            path.display(),
            part.num_devices(),
            part.total_samples()
        );
    }
    Ok(())
}

fn cmd_subsample(args: SubsampleArgs) -> Result<()> {
    let ds = dataset::load_dataset(&args.dataset)?;
    let how = match (args.count, args.fraction) {
        (Some(n), None) => Subsample::Count(n),
        (None, Some(f)) => Subsample::Fraction(f),
        _ => {
            return Err(Error::Argument(
                "exactly one of --count or --fraction is required".into(),
            ))
        }
    };
    let kept = dataset::subsample_devices(&ds, how, args.seed)?;
    dataset::save_dataset(&kept, &args.out)?;
    eprintln!("kept {} of {} devices", kept.num_devices(), ds.num_devices());
    Ok(())
}

fn cmd_mix_iid(args: MixIidArgs) -> Result<()> {
    let ds = dataset::load_dataset(&args.dataset)?;
    let mixed = dataset::mix_iid(&ds, args.seed)?;
    dataset::save_dataset(&mixed, &args.out)?;
    eprintln!(
        "pooled {} samples into one device",
        mixed.total_samples()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    if args.list {
        for name in runner::preset_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => runner::load_config(path)?,
        (None, Some(name)) => runner::preset(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset {name:?}; run `fedsim run --list` for the catalogue"
            ))
        })?,
        _ => {
            return Err(Error::Config(
                "exactly one of --config or --preset is required".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.expect("clap enforces --out");
    runner::run_experiment(&cfg, &out, args.workers)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn write_summary_csv(
    out: &mut dyn std::io::Write,
    rows: &[(String, metrics::AccuracySummary)],
) -> Result<()> {
    writeln!(out, "group,weighting,n_devices,mean,p10,p25,p50,p75,p90")?;
    for (group, s) in rows {
        writeln!(
            out,
            "{group},{},{},{},{},{},{},{},{}",
            s.weighting, s.n_devices, s.mean, s.p10, s.p25, s.p50, s.p75, s.p90
        )?;
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let weighting = parse_weighting(&args.weighting)?;
    let record = runner::parse_record(&args.record)?;
    let accuracies = record.device_accuracies();

    let mut rows = vec![(
        "all".to_string(),
        metrics::summarize_accuracy(&accuracies, weighting)?,
    )];
    if args.stratify {
        let hierarchy: BTreeMap<String, String> = record.hierarchy();
        for (group, summary) in
            metrics::stratified_accuracy(&accuracies, &hierarchy, weighting)?
        {
            rows.push((group, summary));
        }
    }
    match &args.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            write_summary_csv(&mut f, &rows)?;
        }
        None => write_summary_csv(&mut std::io::stdout().lock(), &rows)?,
    }

    if let Some(threshold) = args.budget_threshold {
        let logs = record.round_logs();
        let budget = metrics::systems_budget(&logs, threshold, weighting)?;
        match budget.round_reached {
            Some(round) => println!(
                "budget: accuracy {} first reached at round {round}: {} flops, {} bytes up, {} bytes down",
                threshold, budget.total_flops, budget.total_bytes_up, budget.total_bytes_down
            ),
            None => println!(
                "budget: accuracy {} never reached in {} logged rounds ({} flops, {} bytes up, {} bytes down spent)",
                threshold,
                logs.len(),
                budget.total_flops,
                budget.total_bytes_up,
                budget.total_bytes_down
            ),
        }
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let kind: ExportKind = args.kind.parse()?;
    runner::export_csv(&args.record, kind, &args.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateSynth(a) => cmd_generate_synth(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Split(a) => cmd_split(a),
        Command::Subsample(a) => cmd_subsample(a),
        Command::MixIid(a) => cmd_mix_iid(a),
        Command::Run(a) => cmd_run(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
