//! `ski`: command-line front end for the workbench.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ski", version, about = "Skeleton-induced vision-language workbench")]
struct Cli {
    /// Output root for commands without an explicit `--out`.
    #[arg(long, global = true, env = "SKI_OUT")]
    out_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Flat key-value configuration: a file plus `key=value` overrides.
/// Keys are namespaced `data.*`, `train.*` and (for `train-lvlm`) `lvlm.*`.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs_scd=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Seed for both data generation and training.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Run directory (default `<out-root>/<command>/seed-<seed>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset container plus its split file.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Container path; the split is written next to it with a `.split` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classifier pretraining of the skeleton encoder.
    PretrainSkeleton(TrainArgs),
    /// Skeleton pretraining followed by SkeletonCLIP alignment.
    AlignSkeletonclip(TrainArgs),
    /// One VideoCLIP fine-tuning phase.
    FinetuneVideoclip(TrainArgs),
    /// SkeletonCLIP distillation into VideoCLIP.
    TrainScd {
        #[command(flatten)]
        train: TrainArgs,
        /// online, offline, feature or feature-proj.
        #[arg(long)]
        kd_mode: Option<String>,
        /// mse, kl or contrastive.
        #[arg(long)]
        distill: Option<String>,
        /// Distillation weight.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Tri-modal or cross-projection alignment baseline.
    TrainBaseline {
        #[command(flatten)]
        train: TrainArgs,
        /// trimodal or crossproj.
        #[arg(long)]
        kind: String,
    },
    /// Zero-shot evaluation of a checkpoint on one side of a dataset's split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset container written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// seen or unseen.
        #[arg(long, default_value = "unseen")]
        split: String,
        /// Report path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write input-gradient saliency maps for this many samples.
        #[arg(long, default_value_t = 0)]
        saliency: usize,
    },
    /// Projector training for the toy LVLM.
    TrainLvlm {
        #[command(flatten)]
        train: TrainArgs,
        /// Train with skeleton tokens in the prompt.
        #[arg(long, action = clap::ArgAction::Set)]
        use_skeleton: bool,
        /// Greedy captions written for this many held-out samples.
        #[arg(long, default_value_t = 8)]
        captions: usize,
    },
    /// Greedy caption for one sample from a `train-lvlm` checkpoint.
    Caption {
        #[arg(long)]
        ckpt: PathBuf,
        /// Sample id.
        #[arg(long)]
        video: u64,
        #[arg(long, default_value = "describe the action")]
        query: String,
        /// Dataset container; regenerated from the checkpoint config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
    },
    /// Print names, shapes and norms of a checkpoint.
    InspectCkpt { file: PathBuf },
    /// Run an experiment plan file or a built-in plan.
    RunPlan {
        /// Plan file.
        plan: Option<PathBuf>,
        /// Built-in plan: table1, kd-variants, loss-variants, text-freeze, pretraining.
        #[arg(long, conflicts_with = "plan")]
        builtin: Option<String>,
        /// Seeds for a built-in plan.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Override values applied to every cell, e.g. `train.epochs_scd=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy-vs-alpha sweep of SCD over a base configuration.
    SweepAlpha {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1,1,10")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary table and chart over existing run directories.
    Summary {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", commands::render_error(&err));
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
