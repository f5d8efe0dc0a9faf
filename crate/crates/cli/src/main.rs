//! Binary entry point: argument parsing, thread-pool setup, and exit codes.
//! All real work lives in the library so tests can drive it directly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use fedcate_cli::{
    emit_report, load_report, parse_config, render_summary, run_alpha_sweep, run_experiment,
    synthetic_datasets, write_run_meta, write_sweep_csv, CliError, ExperimentConfig, Mode, RunMeta,
};
use fedcate_core::datagen::{export_clients_csv, FeatureSchema};

#[derive(Parser)]
#[command(
    name = "fedcate",
    version,
    about = "Cross-silo federated estimation of heterogeneous treatment effects"
)]
struct Cli {
    /// Experiment TOML (required by generate/train/sweep).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Cap on worker threads (default: all cores). Never changes results,
    /// only speed.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export synthetic client CSVs plus a manifest, one directory per seed.
    Generate,
    /// Run federated and local-only training over every seed; write
    /// report.json, trace.csv, and metrics.csv.
    Train,
    /// Re-run the experiment across the alpha grid; write sweep.csv.
    Sweep,
    /// Print the summary of a previously written report.json.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| {
        CliError::Config(format!("--config <PATH> is required for `{}`", cli.command.name()))
    })?;
    let mut config = parse_config(path)?;
    if let Some(out) = &cli.out {
        // Override before running so the report's config echo shows where
        // the files actually went.
        config.out_dir = out.display().to_string();
    }
    Ok(config)
}

fn run(cli: &Cli, start: Instant) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }

    match &cli.command {
        Command::Report => {
            let dir = match &cli.out {
                Some(dir) => dir.clone(),
                None => PathBuf::from(load_config(cli)?.out_dir),
            };
            let report = load_report(&dir)?;
            print!("{}", render_summary(&report));
        }
        Command::Generate => {
            let config = load_config(cli)?;
            if config.mode != Mode::Synthetic {
                return Err(CliError::Config(
                    "generate requires mode = \"synthetic\"".into(),
                ));
            }
            config.validate().map_err(CliError::Config)?;
            let out_dir = Path::new(&config.out_dir);
            for &seed in &config.seeds {
                let datasets = synthetic_datasets(&config, seed)?;
                let schema =
                    FeatureSchema::synthetic(config.data.shared_dim, config.private_dims())
                        .map_err(|e| CliError::Config(format!("data: {e}")))?;
                let synth = config.synth_config(seed);
                let dir = out_dir.join(format!("seed_{seed}"));
                export_clients_csv(&datasets, &synth, &schema, &dir)
                    .map_err(|e| CliError::Runtime(anyhow::Error::new(e)))?;
                println!("wrote {} client files to {}", datasets.len(), dir.display());
            }
        }
        Command::Train => {
            let config = load_config(cli)?;
            let out = run_experiment(&config)?;
            let dir = PathBuf::from(&config.out_dir);
            emit_report(&out, &dir)?;
            let meta = RunMeta {
                subcommand: "train".into(),
                jobs: cli.jobs,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            write_run_meta(&meta, &dir)?;
            print!("{}", render_summary(&out.report));
            println!("wrote report.json, trace.csv, metrics.csv to {}", dir.display());
        }
        Command::Sweep => {
            let config = load_config(cli)?;
            let sweep = run_alpha_sweep(&config)?;
            let dir = PathBuf::from(&config.out_dir);
            write_sweep_csv(&sweep.rows, &dir)?;
            let meta = RunMeta {
                subcommand: "sweep".into(),
                jobs: cli.jobs,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            write_run_meta(&meta, &dir)?;
            for row in &sweep.rows {
                println!(
                    "alpha {:>5} {:<10} PEHE {:.6} +/- {:.6}",
                    row.alpha, row.method, row.pehe_mean, row.pehe_std
                );
            }
            println!("wrote sweep.csv ({} rows) to {}", sweep.rows.len(), dir.display());
        }
    }
    Ok(())
}

fn main() {
    let start = Instant::now();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout and exit 0; usage errors are
            // config errors (exit 1).
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli, start) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
