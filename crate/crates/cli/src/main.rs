//! `vibrotact` command-line tool.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 solver did not
//! converge, 3 file system error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vibrotact::{Error, Window};

use crate::commands::SynthArgs;
use crate::config::ConfigFlags;

#[derive(Debug, Parser)]
#[command(name = "vibrotact", version, about = "Decode touched materials from accelerometer vibrations")]
struct Cli {
    #[command(flatten)]
    flags: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus of recordings.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        participants: usize,
        #[arg(long, default_value_t = 0)]
        pen_sessions: usize,
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 200.0)]
        sample_rate: f64,
        /// Material bank with overlapping spectra.
        #[arg(long)]
        hard: bool,
    },
    /// Write per-bin feature vectors of one window to CSV.
    Featurize {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Window as START,END seconds; defaults to the training window.
        #[arg(long, value_parser = config::parse_window)]
        window: Option<Window>,
    },
    /// Train one decoder ensemble per participant and save the model file.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a saved model; writes a JSON report and a text sibling.
    Eval {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Two-way ANOVA on a factor_a,factor_b,value CSV.
    Anova {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the text table of a JSON report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Convergence { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> vibrotact::Result<String> {
    let mut cfg = cli.flags.resolve()?;
    match cli.command {
        Command::Synth {
            out,
            participants,
            pen_sessions,
            duration_s,
            sample_rate,
            hard,
        } => {
            cfg.corpus_dir = out.or(cfg.corpus_dir);
            commands::synth(
                &cfg,
                &SynthArgs {
                    participants,
                    pen_sessions,
                    duration_s,
                    sample_rate,
                    hard,
                },
            )
        }
        Command::Featurize { corpus, out, window } => {
            cfg.corpus_dir = corpus.or(cfg.corpus_dir);
            commands::featurize(&cfg, &out, window)
        }
        Command::Train { corpus, model } => {
            cfg.corpus_dir = corpus.or(cfg.corpus_dir);
            cfg.model_file = model.or(cfg.model_file);
            commands::train(&cfg)
        }
        Command::Eval { corpus, model, report } => {
            cfg.corpus_dir = corpus.or(cfg.corpus_dir);
            cfg.model_file = model.or(cfg.model_file);
            cfg.report_file = report.or(cfg.report_file);
            commands::eval(&cfg)
        }
        Command::Anova { input, json } => commands::anova(&input, json),
        Command::Report { input } => commands::report(&input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
