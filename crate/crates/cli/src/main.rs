use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distill_cli::commands;
use distill_cli::config::{Config, GridPreset, PhaseMatchingChoice};
use distill_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "distill", version, about = "Schmidt-number distillation sweeps and synthetic camera runs")]
struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    grid: Option<GridPreset>,
    #[arg(long = "phase-matching", global = true, value_enum)]
    phase_matching: Option<PhaseMatchingChoice>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blank-filter Schmidt number three ways.
    K0,
    Sweep,
    Heatmap,
    #[command(name = "mc-band")]
    McBand,
    /// Synthetic EMCCD frames as 16-bit PGM.
    Frames,
    /// Fit recorded frames and report K.
    Fit {
        #[arg(long, num_args = 1.., required = true)]
        near: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        far: Vec<PathBuf>,
    },
    #[command(name = "end-to-end")]
    EndToEnd,
}

fn load(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(g) = cli.grid {
        cfg.model.grid = g;
    }
    if let Some(pm) = cli.phase_matching {
        cfg.model.phase_matching = pm;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    let failed = match &cli.command {
        Command::K0 => commands::k0(&cfg, out)?,
        Command::Sweep => commands::sweep(&cfg, out)?,
        Command::Heatmap => commands::heatmap_cmd(&cfg, out)?,
        Command::McBand => commands::mc_band_cmd(&cfg, out)?,
        Command::Frames => commands::frames(&cfg, out)?,
        Command::Fit { near, far } => commands::fit(&cfg, out, near, far)?,
        Command::EndToEnd => commands::end_to_end_cmd(&cfg, out)?,
    };
    if failed > 0 {
        return Err(CliError::Rows(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("distill: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
