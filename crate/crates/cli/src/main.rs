use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lwr_cli::{execute, exit_code, load_config, parse_config, Subcommand};

#[derive(Parser)]
#[command(name = "lwr", version, about = "Lamb wave resonator spin-mechanics simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config, or a manifest.json from an earlier run. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Seed for synthetic noise
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Fundamental compression mode parameters
    Modes,
    /// Phononic band structure of the shield unit cell
    Bands,
    /// Gradient-force drive amplitude and beam sweeps
    Drive,
    /// Sideband-resolved PLE spectrum
    Ple,
    /// Red-sideband fluorescence versus modulation frequency
    SweepMech,
    /// Sideband interference fringes and fringe-amplitude sweep
    Interfere,
    /// Fit a spectrum CSV
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Cooperativity for the configured design scenarios
    Qed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match &cli.config {
        Some(p) => load_config(p),
        None => parse_config(""),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let sub = match cli.command {
        Command::Modes => Subcommand::Modes,
        Command::Bands => Subcommand::Bands,
        Command::Drive => Subcommand::Drive,
        Command::Ple => Subcommand::Ple,
        Command::SweepMech => Subcommand::SweepMech,
        Command::Interfere => Subcommand::Interfere,
        Command::Fit { input } => Subcommand::Fit { input },
        Command::Qed => Subcommand::Qed,
    };
    println!("lwr {}: writing to {}", sub.name(), cli.output_dir.display());
    match execute(&sub, &cfg, &cli.output_dir, cli.seed) {
        Ok(files) => {
            for f in files {
                println!("  {f}");
            }
            println!("  manifest.json");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
