//! `cuffbp`: command-line front end for the estimation pipeline.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 numerical failure during training (divergence, non-finite activations).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use cuffbp_core::config::{parse_config, PipelineConfig};
use cuffbp_core::fsutil::read_to_string;
use cuffbp_core::pipeline::{write_synthetic_record, Pipeline, Stage};
use cuffbp_core::synth::SynthParams;
use cuffbp_core::Error;

#[derive(Parser)]
#[command(
    name = "cuffbp",
    version,
    about = "Cuffless SBP/DBP estimation from ECG and PPG"
)]
struct Cli {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides CUFFBP_OUTPUT_DIR and `output.dir`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read records and keep the ECG lead, PPG and ABP channels.
    Ingest,
    /// Windowing and adaptive TQWT filtering.
    Preprocess,
    /// Beat detection, two-cycle features and the chronological split.
    Segment,
    /// Fit the ANN-LSTM.
    Train,
    /// Score the test partition.
    Eval,
    /// Per-patient tracking CSV and SVG.
    Track,
    /// Summary report.
    Report,
    /// Every stage in order.
    All,
    /// Print the resolved configuration.
    Config,
    /// Write a synthetic ECG/PPG/ABP record as CSV.
    Synth {
        /// Destination CSV file.
        out: PathBuf,
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 125.0)]
        fs: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Diverged { .. } | Error::NonFiniteActivation { .. } => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig, Error> {
    match path {
        Some(p) => parse_config(&read_to_string(p)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", p.display())),
            other => other,
        }),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Synth {
        out,
        duration,
        seed,
        fs,
    } = &cli.command
    {
        let params = SynthParams {
            fs: *fs,
            duration_s: *duration,
            seed: *seed,
            ..SynthParams::default()
        };
        write_synthetic_record(out, &params)?;
        info!("wrote {}", out.display());
        return Ok(());
    }

    let config = load_config(cli.config.as_ref())?;
    let pipeline = match cli.output_dir {
        Some(dir) => Pipeline::with_output_dir(config, dir),
        None => Pipeline::new(config),
    };
    info!(
        "configuration (hash {}):\n{}",
        pipeline.config().hash(),
        pipeline.config().to_text()
    );

    let stage = match cli.command {
        Command::Config => {
            print!("{}", pipeline.config().to_text());
            return Ok(());
        }
        Command::All => return pipeline.run_all(),
        Command::Ingest => Stage::Ingest,
        Command::Preprocess => Stage::Preprocess,
        Command::Segment => Stage::Segment,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Track => Stage::Track,
        Command::Report => Stage::Report,
        Command::Synth { .. } => unreachable!("handled above"),
    };
    pipeline.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
