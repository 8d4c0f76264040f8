use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use locnet_harness::commands::{self, Context};
use locnet_harness::config::Profile;
use locnet_harness::eval::Method;
use locnet_harness::{HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "locnet", version, about = "Smartphone-anchored IoT device localization pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Channel profile: wifi20 or uwb.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Restricts `localize` to one method: rss, toa, fc, near, losest, ad-losest.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectories and CSI snapshots for every split.
    Simulate,
    /// Extract multipath parameters from the snapshots.
    Extract,
    /// Train LoSEstNet and the single-snapshot FC baseline.
    TrainLos,
    /// Train the reconstruction network on the LoSEstNet features.
    TrainAd,
    /// Choose the anomaly threshold on the calibration split.
    Calibrate,
    /// Bearing-intersection localization on the localization split.
    Localize,
    /// Per-scenario AoA error table.
    Eval,
    /// CDF and histogram series for plotting.
    EmitPlots,
}

fn context(cli: &Cli) -> Result<Context, HarnessError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(p) = &cli.profile {
        config.profile = Profile::parse(p)?;
    }
    config.validate()?;
    Ok(Context::new(config))
}

fn run(cli: &Cli) -> Result<String, HarnessError> {
    let ctx = context(cli)?;
    let mode = cli.mode.as_deref().map(Method::parse).transpose()?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Extract => commands::extract(&ctx),
        Command::TrainLos => commands::train_los(&ctx),
        Command::TrainAd => commands::train_ad(&ctx),
        Command::Calibrate => commands::calibrate(&ctx),
        Command::Localize => commands::localize(&ctx, mode),
        Command::Eval => commands::eval(&ctx),
        Command::EmitPlots => commands::emit_plots(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
