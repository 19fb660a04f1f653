//! `nrsfm`: command-line front end for the reconstruction library.
//!
//! Exit codes: 0 on success, 1 on bad input or any other error, 2 when an
//! iterative stage hit its iteration cap (outputs are still written).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::InitMode;

#[derive(Debug, Parser)]
#[command(name = "nrsfm", version, about = "Non-rigid structure from motion")]
struct Cli {
    /// Worker threads for the data-parallel parts.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sequence.
    Synth(SynthArgs),
    /// Reconstruct shapes from 2D tracks.
    Reconstruct(Box<ReconstructArgs>),
    /// Align a shape sequence with TPA or GPA.
    Align(AlignArgs),
    /// Split points into nearly-rigid and deforming sets.
    Segment(SegmentArgs),
    /// Fill hidden track entries by low-rank completion.
    Complete(CompleteArgs),
    /// Reconstruction error against ground truth.
    Eval(EvalArgs),
    /// Low-rank and smoothness diagnostics of a shape sequence.
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub basis: Option<usize>,
    /// fixed, one-circle or multi-circle.
    #[arg(long)]
    pub camera_type: Option<String>,
    #[arg(long)]
    pub coeff_band: Option<usize>,
    #[arg(long)]
    pub deform_scale: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub occlusion_rate: Option<f64>,
    /// uniform-random or per-frame-block.
    #[arg(long)]
    pub occlusion_pattern: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// JSON run config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Measurement matrix (2F x P).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Visibility mask (F x P of 0/1).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Camera initialisation.
    #[arg(long, value_enum)]
    pub init: Option<InitMode>,
    /// World-to-camera rotations (3F x 3), used with `--init file`.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Reconstructed camera-frame shapes (3F x P).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Correction rotations (3F x 3).
    #[arg(long)]
    pub rotations: Option<PathBuf>,
    /// Canonical shapes.
    #[arg(long)]
    pub canonical: Option<PathBuf>,
    /// Per-iteration diagnostics CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub mu3: Option<f64>,
    #[arg(long)]
    pub alpha_r: Option<f64>,
    #[arg(long)]
    pub delta_r: Option<f64>,
    #[arg(long)]
    pub k_s: Option<usize>,
    #[arg(long)]
    pub beta_d: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters_phase1: Option<usize>,
    #[arg(long)]
    pub max_iters_phase2: Option<usize>,
    /// Keep the correction rotations at the identity.
    #[arg(long)]
    pub freeze_q: bool,
    /// Skip matrix completion for masked input.
    #[arg(long)]
    pub no_complete: bool,
    #[arg(long)]
    pub completion_rank: Option<usize>,
    /// Basis count assumed by the factorisation init.
    #[arg(long)]
    pub init_basis: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AlignMethod {
    Tpa,
    Gpa,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Shape sequence (3F x P).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "tpa")]
    pub method: AlignMethod,
    /// Aligned shapes.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame alignment rotations.
    #[arg(long)]
    pub rotations: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_r: f64,
    #[arg(long, default_value_t = 2)]
    pub m_f: usize,
    /// Rank raw DFT bins without folding them onto `[0, 1/2]`.
    #[arg(long)]
    pub no_fold: bool,
    /// JSON output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub rank: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated shapes.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth shapes in the same frame as the estimate.
    #[arg(long)]
    pub gt: PathBuf,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub input: PathBuf,
}

/// Whether every iterative stage stopped on its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    HitCap,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    let threads = cli.threads.max(1);
    let seed = cli.seed;
    let result = tpa_nrsfm::par::with_threads(threads, move || match cli.command {
        Command::Synth(a) => commands::synth(&a, seed),
        Command::Reconstruct(a) => commands::reconstruct(&a, seed, threads),
        Command::Align(a) => commands::align(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Complete(a) => commands::complete(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Diag(a) => commands::diag(&a),
    });
    match result {
        Ok(Status::Converged) => ExitCode::SUCCESS,
        Ok(Status::HitCap) => {
            eprintln!("warning: stopped at the iteration cap; outputs were written anyway");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
