use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use nof1::error::ErrorClass;
use nof1::pipeline::{self, PipelineConfig, SynthJob};
use nof1::Error;

#[derive(Parser)]
#[command(name = "nof1", version, about = "Label-free analysis of image-outcome N-of-1 trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic trial (images, metadata.csv, reference.csv).
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the p-value table of an existing report directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn execute(command: Command) -> nof1::Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut config = PipelineConfig::from_file(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(out) = out {
                config.output_dir = out;
            }
            let report = pipeline::run(&config)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            info!("report written to {}", config.output_dir.display());
            print_pvalues(&report);
        }
        Command::Synth { spec, out, seed } => {
            let mut job = SynthJob::from_file(&spec)?;
            if let Some(seed) = seed {
                job.seed = seed;
            }
            let data = job.write(&out)?;
            println!("wrote {} images to {}", data.samples.len(), out.display());
        }
        Command::Report { dir } => {
            let report = pipeline::load_report(&dir)?;
            print_pvalues(&report);
        }
    }
    Ok(())
}

fn print_pvalues(report: &pipeline::Report) {
    let menu = &report.config.tests.menu;
    let mut header = format!("{:<12}", "participant");
    for k in menu {
        header.push_str(&format!(" {:>10}", k.key()));
    }
    println!("{header}");
    for p in &report.participants {
        let mut line = format!("{:<12}", p.id);
        for &k in menu {
            match p.p_value(k) {
                Some(v) => line.push_str(&format!(" {v:>10.4}")),
                None => line.push_str(&format!(" {:>10}", "-")),
            }
        }
        println!("{line}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
