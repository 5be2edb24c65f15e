mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use risda_core::pipeline::{self, DataSource, ExperimentConfig, MeanStd, DEFAULT_GRID};
use risda_core::verify::{self, Mutation, VerifyOptions};

/// Long-tailed classification with reasoning-based implicit semantic data
/// augmentation.
#[derive(Parser)]
#[command(name = "risda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved experiment config as JSON.
    Config(ConfigArgs),
    /// Write the synthetic train/test split as CSV.
    Synth(RunArgs),
    /// Two-stage training, one run directory per seed.
    Train(RunArgs),
    /// RISDA, w/o reasoning and w/o reweighting for every seed.
    Ablate(RunArgs),
    /// Grid over the augmentation strengths alpha0 and beta0.
    Sweep(SweepArgs),
    /// Run the oracle checks; exits nonzero if any fails.
    Verify(VerifyArgs),
    /// Render loss curves and sweep heatmaps as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; defaults to the built-in reference setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set beta0=1.0` or `--set sgd.base_lr=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    None,
    FlipSigmaSign,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fewer instances and draws.
    #[arg(long)]
    quick: bool,
    /// Run only these checks (repeatable).
    #[arg(long = "check")]
    checks: Vec<String>,
    /// Corrupt one quantity to confirm the checks catch it.
    #[arg(long, value_enum, default_value = "none")]
    mutation: MutationArg,
    /// Also write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// A run directory, or a directory holding run directories and a sweep
    /// `summary.csv`.
    dir: PathBuf,
    /// Overwrite existing plots.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Config(args) => {
            println!("{}", load_config(&args)?.to_json()?);
        }
        Command::Synth(args) => synth(&args)?,
        Command::Train(args) => {
            let (config, seeds) = resolve(&args)?;
            let dirs = pipeline::train_command(&config, &seeds, &args.out, args.force)?;
            print_dirs(&dirs);
            print_summary(&args.out)?;
        }
        Command::Ablate(args) => {
            let (config, seeds) = resolve(&args)?;
            let dirs = pipeline::ablate_command(&config, &seeds, &args.out, args.force)?;
            print_dirs(&dirs);
            print_summary(&args.out)?;
        }
        Command::Sweep(args) => sweep(&args)?,
        Command::Verify(args) => return verify(&args),
        Command::Plot(args) => {
            for path in plot::plot_dir(&args.dir, args.force)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let base = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    let config = base.with_overrides(&args.overrides)?;
    config.validate()?;
    Ok(config)
}

fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, Vec<u64>)> {
    let config = load_config(&args.config)?;
    let seeds = match (args.seed, args.seeds.is_empty()) {
        (Some(s), _) => vec![s],
        (None, false) => args.seeds.clone(),
        (None, true) => config.seeds.clone(),
    };
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok((config, seeds))
}

fn synth(args: &RunArgs) -> Result<()> {
    let (config, seeds) = resolve(args)?;
    let DataSource::Synthetic(spec) = &config.data else {
        bail!("synth needs a synthetic data source (data.kind = \"synthetic\")");
    };
    let mut spec = spec.clone();
    if args.seed.is_some() || !args.seeds.is_empty() {
        spec.seed = seeds[0];
    }
    let (train, test) = risda_core::dataset::synthesize(&spec)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (name, data) in [("train.csv", &train), ("test.csv", &test)] {
        let path = args.out.join(name);
        if path.exists() && !args.force {
            bail!("{} exists; pass --force to overwrite", path.display());
        }
        data.write_csv(&path)?;
        println!("{} ({} samples, counts {:?})", path.display(), data.len(), data.class_counts());
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let (config, seeds) = resolve(&args.run)?;
    let alphas = if args.alphas.is_empty() { DEFAULT_GRID.to_vec() } else { args.alphas.clone() };
    let betas = if args.betas.is_empty() { DEFAULT_GRID.to_vec() } else { args.betas.clone() };
    let result = pipeline::sweep_command(&config, &alphas, &betas, &seeds, &args.run.out, args.run.force)?;
    let errors = result.mean_errors();
    println!("mean test error (%), rows alpha0, columns beta0");
    print!("{:>8}", "");
    for b in &betas {
        print!("{b:>14}");
    }
    println!();
    for (a, row) in errors.iter().enumerate() {
        print!("{:>8}", alphas[a]);
        for MeanStd { mean, std } in row {
            print!("{:>14}", format!("{mean:.2}±{std:.2}"));
        }
        println!();
    }
    let (ba, bb) = result.best_cell();
    println!("best cell: alpha0={} beta0={}", alphas[ba], betas[bb]);
    let (a0, b0) = (config.augment.alpha0, config.augment.beta0);
    match result.within_one_std_of_best(a0, b0) {
        Some(true) => println!("configured cell alpha0={a0} beta0={b0} is within one std of the best"),
        Some(false) => println!("FLAG: configured cell alpha0={a0} beta0={b0} is not within one std of the best"),
        None => println!("configured cell alpha0={a0} beta0={b0} is not on the grid"),
    }
    println!("{}", args.run.out.join("summary.csv").display());
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<ExitCode> {
    let mut opts = if args.quick { VerifyOptions::quick(args.seed) } else { VerifyOptions { seed: args.seed, ..VerifyOptions::default() } };
    opts.mutation = match args.mutation {
        MutationArg::None => Mutation::None,
        MutationArg::FlipSigmaSign => Mutation::FlipSigmaSign,
    };
    let report = if args.checks.is_empty() {
        verify::run_all(&opts)?
    } else {
        let checks = args
            .checks
            .iter()
            .map(|name| verify::run_check(name, &opts))
            .collect::<risda_core::Result<Vec<_>>>()?;
        verify::VerifyReport {
            options: opts.clone(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    };
    for check in &report.checks {
        println!("{}", check.line());
    }
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn print_dirs(dirs: &[PathBuf]) {
    for d in dirs {
        println!("{}", d.display());
    }
}

fn print_summary(out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(out.join("summary.csv"))?;
    print!("{text}");
    Ok(())
}
