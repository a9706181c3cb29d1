use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ivmod_core::campaign::{run_to_dir, CampaignConfig, CampaignMode, IngestPaths};
use ivmod_core::{BitPolicy, Error, FaultMode, FaultTarget};

/// Fault-injection campaigns and image-wise vulnerability scoring for
/// object detectors.
#[derive(Parser, Debug)]
#[command(name = "ivmod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-inference faults on the built-in detector.
    Transient(Common),
    /// Stuck-at faults tracked over a synthetic frame sequence.
    Permanent(Common),
    /// Score fault-free against faulty detection records.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Fault-free records (newline-delimited JSON).
        #[arg(long)]
        orig: Option<PathBuf>,
        /// Faulty records for the same images.
        #[arg(long)]
        corr: Option<PathBuf>,
    },
    /// Synthetic precision/recall experiment.
    SimulatePr(Common),
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug)]
struct Common {
    /// JSON campaign configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Report directory.
    #[arg(long, default_value = "ivmod-report")]
    out: PathBuf,
    #[arg(long)]
    n_injections: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    #[arg(long, value_enum)]
    bit_policy: Option<BitPolicyArg>,
    #[arg(long, value_enum)]
    fault_mode: Option<FaultModeArg>,
    #[arg(long)]
    n_frames: Option<usize>,
    /// Write persistent masks as PGM images (permanent mode).
    #[arg(long)]
    write_masks: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TargetArg {
    Neuron,
    Weight,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BitPolicyArg {
    #[value(name = "all_32")]
    All32,
    #[value(name = "exponent_only")]
    ExponentOnly,
    #[value(name = "mantissa_only")]
    MantissaOnly,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FaultModeArg {
    #[value(name = "transient_flip")]
    TransientFlip,
    #[value(name = "stuck_at_0")]
    StuckAt0,
    #[value(name = "stuck_at_1")]
    StuckAt1,
}

fn build_config(mode: CampaignMode, c: &Common) -> Result<CampaignConfig, Error> {
    let mut cfg = match &c.config {
        Some(path) => CampaignConfig::load(path)?,
        None => CampaignConfig::for_mode(mode),
    };
    cfg.mode = mode;
    cfg.seed = Some(c.seed);
    if let Some(n) = c.n_injections {
        cfg.n_injections = n;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(t) = c.target {
        cfg.target = match t {
            TargetArg::Neuron => FaultTarget::Neuron,
            TargetArg::Weight => FaultTarget::Weight,
        };
    }
    if let Some(p) = c.bit_policy {
        cfg.bit_policy = match p {
            BitPolicyArg::All32 => BitPolicy::All32,
            BitPolicyArg::ExponentOnly => BitPolicy::ExponentOnly,
            BitPolicyArg::MantissaOnly => BitPolicy::MantissaOnly,
        };
    }
    if let Some(m) = c.fault_mode {
        cfg.fault_mode = Some(match m {
            FaultModeArg::TransientFlip => FaultMode::TransientFlip,
            FaultModeArg::StuckAt0 => FaultMode::StuckAt0,
            FaultModeArg::StuckAt1 => FaultMode::StuckAt1,
        });
    }
    if let Some(n) = c.n_frames {
        cfg.n_frames = n;
    }
    cfg.write_masks |= c.write_masks;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let (cfg, out) = match &cli.command {
        Command::Transient(c) => (build_config(CampaignMode::Transient, c)?, &c.out),
        Command::Permanent(c) => (build_config(CampaignMode::Permanent, c)?, &c.out),
        Command::SimulatePr(c) => (build_config(CampaignMode::SimulatePr, c)?, &c.out),
        Command::Ingest { common, orig, corr } => {
            let mut cfg = build_config(CampaignMode::Ingest, common)?;
            match (orig, corr, cfg.ingest.take()) {
                (Some(o), Some(c), _) => {
                    cfg.ingest = Some(IngestPaths {
                        orig: o.clone(),
                        corr: c.clone(),
                    })
                }
                (None, None, from_file) => cfg.ingest = from_file,
                (o, c, from_file) => {
                    // One path on the command line, the other from the config.
                    let base = from_file.ok_or_else(|| {
                        Error::Config("ingest needs both --orig and --corr".into())
                    })?;
                    cfg.ingest = Some(IngestPaths {
                        orig: o.clone().unwrap_or(base.orig),
                        corr: c.clone().unwrap_or(base.corr),
                    });
                }
            }
            (cfg, &common.out)
        }
    };
    let files = run_to_dir(&cfg, out)?;
    println!("{} report files written to {}", files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
