use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use quadlearn::harness::{render_summary_csv, render_text, run_campaign, write_reports, EpisodeConfig};

#[derive(Parser)]
#[command(name = "quadlearn", about = "Seeded throw-and-recover Monte-Carlo campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign and write reports to the output directory.
    Run {
        /// TOML configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        episodes: usize,
        /// Seed of the first episode; episode i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Control on the true attitude instead of the estimate.
        #[arg(long)]
        oracle_attitude: bool,
        /// Format printed to stdout.
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        report: ReportFormat,
        /// Skip the per-tick CSV logs.
        #[arg(long)]
        no_tick_log: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            episodes,
            seed,
            out,
            oracle_attitude,
            report,
            no_tick_log,
        } => {
            let cfg = match config {
                Some(path) => EpisodeConfig::load(&path),
                None => Ok(EpisodeConfig {
                    tick_log: true,
                    ..EpisodeConfig::default()
                }),
            };
            let mut cfg = match cfg {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            cfg.oracle_attitude |= oracle_attitude;
            if no_tick_log {
                cfg.tick_log = false;
            }
            let ticks = out.join("ticks");
            let summary = match run_campaign(&cfg, episodes, seed, Some(&ticks)) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Err(e) = write_reports(&summary, &out) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            match report {
                ReportFormat::Text => print!("{}", render_text(&summary)),
                ReportFormat::Csv => print!("{}", render_summary_csv(&summary)),
            }
            if summary.all_succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
