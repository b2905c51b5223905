use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wallqa::config::RunConfig;
use wallqa::pipeline;
use wallqa::sim::Experiment;
use wallqa::Result;

/// Vessel-wall segmentation quality assessment on synthetic carotid phantoms.
#[derive(Debug, Parser)]
#[command(name = "wallqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides every seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Use only the eight neighbours of the center in the centers ensemble.
    #[arg(long, global = true)]
    exclude_original: bool,
    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the phantom cohort and print its manifest.
    GenPhantoms,
    /// Train the network on the training participants.
    Train,
    /// Segment the test participants with every configured method.
    Segment,
    /// Run the noise sweep.
    SweepNoise,
    /// Run the center-offset sweep.
    SweepOffset,
    /// Correlate Dice and uncertainty of the `segment` records.
    Correlate,
    /// Merge the sweep tables and draw one chart per sweep.
    Report,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| wallqa::Error::InvalidConfig("no config file given; pass --config FILE".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if cli.exclude_original {
        cfg.ensemble.exclude_original = true;
    }
    if cli.quiet {
        cfg.verbosity = 0;
    }
    cfg.verbosity = (cfg.verbosity + cli.verbose).min(2);
    Ok(cfg)
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Error,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).format_target(false).init();
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    // A closed pipe (e.g. `| head`) is not an error of ours.
    match serde_json::to_writer_pretty(&mut stdout, value) {
        Err(e) if !e.is_io() => Err(e.into()),
        _ => {
            let _ = writeln!(stdout);
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    init_logging(cfg.verbosity);
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| wallqa::Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
    }
    let out = cfg.output_dir.display();
    match cli.command {
        Command::GenPhantoms => print_json(&pipeline::gen_phantoms(&cfg)?)?,
        Command::Train => {
            let (_, summary) = pipeline::train_model(&cfg)?;
            log::info!("weights written to {}", cfg.output_dir.join(pipeline::WEIGHTS_FILE).display());
            print_json(&summary)?;
        }
        Command::Segment => {
            let n = pipeline::segment(&cfg)?;
            log::info!("{n} records written to {out}/{}", pipeline::SEGMENT_RECORDS_FILE);
        }
        Command::SweepNoise | Command::SweepOffset => {
            let exp = if matches!(cli.command, Command::SweepNoise) { Experiment::Noise } else { Experiment::Offset };
            pipeline::sweep(&cfg, exp)?;
            log::info!("{exp} sweep written to {}", pipeline::sweep_dir(&cfg.output_dir, exp).display());
        }
        Command::Correlate => {
            let rows = pipeline::correlate(&cfg)?;
            for r in rows {
                println!("{:<12} {:<6} {:<14} R2 {:.3} (n={})", r.level, r.structure, r.method, r.r_squared, r.n);
            }
        }
        Command::Report => {
            let rows = pipeline::report(&cfg)?;
            log::info!("{} table rows written to {out}/{}", rows.len(), pipeline::REPORT_TABLE_FILE);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
