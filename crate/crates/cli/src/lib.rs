//! Command-line driver: pretraining, probing, reconstructions, encoding
//! similarity matrices and scatter aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::RunConfig;

/// Environment variable naming the default CIFAR-10 directory.
pub const DATA_ENV: &str = "ISOBENCH_DATA";

/// A mistake in how the tool was invoked; exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Process exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<isobench_core::Error>() {
        Some(isobench_core::Error::Config(_) | isobench_core::Error::Usage(_)) => 2,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "isobench",
    version,
    about = "Masked-pixel pretraining and probing of isotropic networks"
)]
pub struct Cli {
    /// Flat key=value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write timing columns as 0 so repeated runs give identical bytes.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Use the procedural dataset instead of CIFAR-10.
    #[arg(long, global = true)]
    pub synthetic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CIFAR-10 binary directory (default: $ISOBENCH_DATA).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain a network on the masked-pixel objective.
    Pretrain(PretrainArgs),
    /// Train a linear probe on every layer of a checkpoint.
    Probe(ProbeArgs),
    /// Write original | masked | reconstructed PPM strips.
    Reconstruct(ReconstructArgs),
    /// Write the 256×256 cosine-similarity matrix of a pixel encoding.
    EncodeSim(EncodeSimArgs),
    /// Collect run manifests into one scatter CSV.
    Aggregate(AggregateArgs),
}

macro_rules! push_pairs {
    ($out:ident, $src:expr, $($field:ident),* $(,)?) => {
        $( if let Some(v) = &$src.$field { $out.push((stringify!($field), v.to_string())); } )*
    };
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub block_type: Option<String>,
    #[arg(long)]
    pub encoding: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub expansion: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub positional_embedding: Option<bool>,
    #[arg(long)]
    pub rff_k: Option<usize>,
    #[arg(long)]
    pub rff_sigma: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bias: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub attention_output_projection: Option<bool>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub decay_epochs: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Trailing training records held out for validation.
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Use at most this many training records.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use at most this many test records.
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long)]
    pub synthetic_count: Option<usize>,
    #[arg(long)]
    pub synthetic_test_count: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ProbeFlags {
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub probe_patience: Option<usize>,
    #[arg(long)]
    pub probe_batch_size: Option<usize>,
    #[arg(long)]
    pub probe_lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Checkpoint to probe (default: OUT/checkpoint.isob).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub probe: ProbeFlags,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of test images to reconstruct.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "reference"])))]
pub struct EncodeSimArgs {
    /// Trained checkpoint whose input encoder is analysed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Untrained reference encoding: onehot, continuous or fourier.
    #[arg(long)]
    pub reference: Option<String>,
    /// Colour channel (0, 1, 2) of a learned encoder.
    #[arg(long)]
    pub channel: Option<usize>,
    #[arg(long)]
    pub rff_k: Option<usize>,
    #[arg(long)]
    pub rff_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Run directories, each holding a manifest.json.
    pub dirs: Vec<PathBuf>,
}

impl Cli {
    /// Flag values that feed the run configuration.
    pub fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        push_pairs!(v, self, seed, threads);
        for (key, path) in [("out", &self.out), ("data", &self.data)] {
            if let Some(p) = path {
                v.push((key, p.to_string_lossy().into_owned()));
            }
        }
        if self.deterministic {
            v.push(("deterministic", "true".into()));
        }
        if self.synthetic {
            v.push(("synthetic", "true".into()));
        }
        match &self.command {
            Command::Pretrain(a) => {
                push_model(&mut v, &a.model);
                let t = &a.train;
                push_pairs!(
                    v,
                    t,
                    mask_rate,
                    batch_size,
                    warmup_epochs,
                    decay_epochs,
                    peak_lr,
                    adam_beta1,
                    adam_beta2,
                    adam_eps
                );
                push_data(&mut v, &a.data);
            }
            Command::Probe(a) => {
                push_data(&mut v, &a.data);
                let p = &a.probe;
                push_pairs!(
                    v,
                    p,
                    probe_epochs,
                    probe_patience,
                    probe_batch_size,
                    probe_lr
                );
            }
            Command::Reconstruct(a) => {
                push_pairs!(v, a, mask_rate);
                push_data(&mut v, &a.data);
            }
            Command::EncodeSim(a) => {
                push_pairs!(v, a, rff_k, rff_sigma);
            }
            Command::Aggregate(_) => {}
        }
        v
    }
}

fn push_model(v: &mut Vec<(&'static str, String)>, m: &ModelArgs) {
    push_pairs!(
        v,
        m,
        block_type,
        encoding,
        depth,
        latent_dim,
        heads,
        kernel,
        expansion,
        positional_embedding,
        rff_k,
        rff_sigma,
        bias,
        attention_output_projection
    );
}

fn push_data(v: &mut Vec<(&'static str, String)>, d: &DataArgs) {
    push_pairs!(
        v,
        d,
        val_count,
        train_limit,
        test_limit,
        synthetic_count,
        synthetic_test_count
    );
}

/// Merges the config file, the flags and `$ISOBENCH_DATA` (flags win, then
/// the file, then the environment) and validates the result.
pub fn build_config(cli: &Cli) -> Result<RunConfig, UsageError> {
    let mut pairs: BTreeMap<String, String> = match &cli.config {
        Some(path) => config::read_config_file(path)?,
        None => BTreeMap::new(),
    };
    for (k, v) in cli.flag_pairs() {
        pairs.insert(k.to_string(), v);
    }
    if !pairs.contains_key("data") {
        if let Some(dir) = std::env::var_os(DATA_ENV) {
            pairs.insert("data".into(), dir.to_string_lossy().into_owned());
        }
    }
    RunConfig::from_pairs(pairs)
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = build_config(cli)?;
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, e.g. a second run in one process.
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::debug!("thread pool already initialised; keeping it");
        }
    }
    match &cli.command {
        Command::Pretrain(a) => commands::pretrain(&cfg, a.resume),
        Command::Probe(a) => commands::probe(&cfg, a.checkpoint.as_deref()),
        Command::Reconstruct(a) => commands::reconstruct(&cfg, a.checkpoint.as_deref(), a.count),
        Command::EncodeSim(a) => commands::encode_sim(&cfg, a),
        Command::Aggregate(a) => commands::aggregate(&cfg, &a.dirs),
    }
}
