use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use slotprov::experiment::{
    analyze_checkpoint, analyze_generator, checks_passed, checks_to_text, read_plot_points, run_grid,
    validate_config_generators, write_plot_data, AnalyzeOptions, ExperimentConfig, ExperimentError, Preset, RunSpec,
    RunStatus, SPEC_FILE,
};
use slotprov::synth::{GeneratorSpec, LatentKind};

const VALIDATION_REPORT: &str = "generator_validation.txt";

#[derive(Parser, Debug)]
#[command(name = "slotprov", version, about = "Compositional contrast and slot identifiability experiments")]
struct Cli {
    /// Experiment config (TOML), layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent runs. Defaults to the available cores.
    #[arg(long, global = true, env = "SLOTPROV_WORKERS")]
    workers: Option<usize>,
    /// Built-in defaults under the config: paper or desk.
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Added to every grid seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and probe the generator of every grid seed. Exit 0 if all probes pass.
    ValidateGenerator,
    /// Train the full grid, skipping finished runs, and write the combined CSVs.
    Run,
    /// Extract scatter tuples from a combined results CSV.
    Plotdata {
        results: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Report contrast variants, index-set overlap, mechanism ranks and SIS of a trained model.
    Analyze {
        /// Checkpoint of a trained run. Omit with --oracle.
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        generator: PathBuf,
        #[arg(long, default_value_t = 3000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Analyze the generator itself as decoder with an identity encoder.
        #[arg(long)]
        oracle: bool,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: ExperimentError| e.to_string())
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, UsageError> {
    let config = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(UsageError(format!("config file {} does not exist", path.display())));
            }
            ExperimentConfig::load(path, cli.preset).map_err(|e| UsageError(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::from_toml_str("", cli.preset).map_err(|e| UsageError(e.to_string()))?,
    };
    Ok(config.with_seed_offset(cli.seed_offset))
}

fn output_dir(cli: &Cli, config: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| config.output.dir.clone())
}

fn workers(cli: &Cli) -> usize {
    cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
}

fn validate(cli: &Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(cli)?;
    let checks = match validate_config_generators(&config) {
        Ok(c) => c,
        Err(ExperimentError::Config(msg)) => return Err(UsageError(msg).into()),
        Err(e) => return Err(e.into()),
    };
    let text = checks_to_text(&checks);
    let out = output_dir(cli, &config);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let report = out.join(VALIDATION_REPORT);
    fs::write(&report, &text).with_context(|| format!("writing {}", report.display()))?;
    let passed = checks_passed(&checks);
    for c in &checks {
        println!(
            "K={} seed={} generator_seed={} probes={} violations={}",
            c.slots,
            c.seed,
            c.generator_seed,
            c.validation.probes,
            c.validation.violations.len()
        );
    }
    println!("{} ({})", if passed { "all probes passed" } else { "probe failures" }, report.display());
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(cli)?;
    let out = output_dir(cli, &config);
    let outcome = run_grid(&config, &out, workers(cli))?;
    let count = |s| outcome.records.iter().filter(|r| r.status == s).count();
    println!(
        "{} runs: {} completed, {} diverged, {} failed, {} already finished",
        outcome.records.len(),
        count(RunStatus::Completed),
        count(RunStatus::Diverged),
        count(RunStatus::Failed),
        outcome.skipped
    );
    for r in outcome.records.iter().filter(|r| r.status != RunStatus::Completed) {
        println!("  {} {}: {}", r.run_id, r.status.name(), r.message.as_deref().unwrap_or(""));
    }
    println!("results: {}", outcome.results.display());
    println!("summary: {}", outcome.summary.display());
    Ok(ExitCode::SUCCESS)
}

fn plotdata(results: &Path, output: Option<&Path>) -> anyhow::Result<ExitCode> {
    let file = fs::File::open(results).with_context(|| format!("opening {}", results.display()))?;
    let points = read_plot_points(file).with_context(|| format!("reading {}", results.display()))?;
    if points.is_empty() {
        log::warn!("{} has no evaluation rows", results.display());
        eprintln!("warning: {} has no evaluation rows", results.display());
    }
    match output {
        Some(path) => {
            let n = write_plot_data(points, fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
            eprintln!("{n} points written to {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            write_plot_data(points, stdout.lock())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze(cli: &Cli, checkpoint: Option<&Path>, generator: &Path, samples: usize, seed: Option<u64>, oracle: bool) -> anyhow::Result<ExitCode> {
    let mut options = AnalyzeOptions { samples, ..AnalyzeOptions::default() };
    if let Some(seed) = seed {
        options.seed = seed;
    }
    let report = if oracle {
        if checkpoint.is_some() {
            return Err(UsageError("--oracle takes no checkpoint".into()).into());
        }
        analyze_generator(&GeneratorSpec::load(generator)?, &options)?
    } else {
        let checkpoint = checkpoint.ok_or_else(|| UsageError("a checkpoint path is required without --oracle".into()))?;
        // A run directory records how its latents were drawn.
        let spec_path = checkpoint.with_file_name(SPEC_FILE);
        if spec_path.exists() {
            let spec: RunSpec = toml::from_str(&fs::read_to_string(&spec_path)?)
                .with_context(|| format!("reading {}", spec_path.display()))?;
            options.latents = spec.latents;
            options.covariance_seed = spec.seed;
        } else {
            options.latents = LatentKind::Independent;
        }
        analyze_checkpoint(checkpoint, generator, &options)?
    };
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        let path = out.join("analysis.txt");
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::ValidateGenerator => validate(cli),
        Command::Run => run(cli),
        Command::Plotdata { results, output } => plotdata(results, output.as_deref()),
        Command::Analyze { checkpoint, generator, samples, seed, oracle } => {
            analyze(cli, checkpoint.as_deref(), generator, *samples, *seed, *oracle)
        }
        Command::ShowConfig => {
            let config = load_config(cli)?;
            std::io::stdout().write_all(config.to_toml_string()?.as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
