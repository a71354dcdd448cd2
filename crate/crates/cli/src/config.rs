//! Run configuration: flat `key=value` files overridden by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use isobench_core::blocks::ModelConfig;
use isobench_core::probing::ProbeConfig;
use isobench_core::training::TrainConfig;

use crate::UsageError;

/// Every key accepted in a config file. Each mirrors a long flag with `_`
/// in place of `-`.
pub const KEYS: &[&str] = &[
    "block_type",
    "encoding",
    "depth",
    "latent_dim",
    "heads",
    "kernel",
    "expansion",
    "positional_embedding",
    "rff_k",
    "rff_sigma",
    "bias",
    "attention_output_projection",
    "mask_rate",
    "batch_size",
    "warmup_epochs",
    "decay_epochs",
    "peak_lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "seed",
    "val_count",
    "train_limit",
    "test_limit",
    "synthetic",
    "synthetic_count",
    "synthetic_test_count",
    "data",
    "out",
    "threads",
    "deterministic",
    "probe_epochs",
    "probe_patience",
    "probe_batch_size",
    "probe_lr",
];

/// Keys that never reach a checkpoint: they locate files or size the thread
/// pool and do not change any computed value.
const LOCATION_KEYS: &[&str] = &["data", "out", "threads"];

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_count: usize,
    pub synthetic_test_count: usize,
    /// Validation records held out from the end of the training set; by
    /// default 5000 for CIFAR-10 and a fifth of a synthetic set.
    pub val_count: Option<usize>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            synthetic: false,
            synthetic_count: 256,
            synthetic_test_count: 64,
            val_count: None,
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub data: DataConfig,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub deterministic: bool,
    /// The merged key/value pairs this config was built from.
    pub pairs: BTreeMap<String, String>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| UsageError(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, UsageError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(UsageError(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

/// Parses `key=value` lines; blank lines and lines starting with `#` are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            UsageError(format!(
                "config line {}: expected key=value, got {line:?}",
                no + 1
            ))
        })?;
        let key = normalize_key(k);
        if !KEYS.contains(&key.as_str()) {
            return Err(UsageError(format!(
                "config line {}: unknown key {key:?}",
                no + 1
            )));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(UsageError(format!(
                "config line {}: duplicate key {key:?}",
                no + 1
            )));
        }
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_text(&text)
}

impl RunConfig {
    /// Builds and validates a config from merged pairs.
    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self, UsageError> {
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut probe = ProbeConfig::default();
        let mut data = DataConfig::default();
        let mut out = PathBuf::from("isobench-out");
        let mut threads = None;
        let mut deterministic = false;
        let mut batch_size = None;
        for (k, v) in &pairs {
            let k = k.as_str();
            match k {
                "block_type" => model.block_type = parse(k, v)?,
                "encoding" => model.encoding = parse(k, v)?,
                "depth" => model.depth = parse(k, v)?,
                "latent_dim" => model.latent_dim = parse(k, v)?,
                "heads" => model.heads = parse(k, v)?,
                "kernel" => model.kernel = parse(k, v)?,
                "expansion" => model.expansion = parse(k, v)?,
                "positional_embedding" => model.positional_embedding = parse_bool(k, v)?,
                "rff_k" => model.rff_k = parse(k, v)?,
                "rff_sigma" => model.rff_sigma = parse(k, v)?,
                "bias" => model.bias = parse_bool(k, v)?,
                "attention_output_projection" => {
                    model.attention_output_projection = parse_bool(k, v)?
                }
                "mask_rate" => train.mask_rate = parse(k, v)?,
                "batch_size" => batch_size = Some(parse(k, v)?),
                "warmup_epochs" => train.warmup_epochs = parse(k, v)?,
                "decay_epochs" => train.decay_epochs = parse(k, v)?,
                "peak_lr" => train.peak_lr = parse(k, v)?,
                "adam_beta1" => train.adam.beta1 = parse(k, v)?,
                "adam_beta2" => train.adam.beta2 = parse(k, v)?,
                "adam_eps" => train.adam.eps = parse(k, v)?,
                "seed" => {
                    train.seed = parse(k, v)?;
                    probe.seed = train.seed;
                }
                "val_count" => data.val_count = Some(parse(k, v)?),
                "train_limit" => data.train_limit = Some(parse(k, v)?),
                "test_limit" => data.test_limit = Some(parse(k, v)?),
                "synthetic" => data.synthetic = parse_bool(k, v)?,
                "synthetic_count" => data.synthetic_count = parse(k, v)?,
                "synthetic_test_count" => data.synthetic_test_count = parse(k, v)?,
                "data" => data.dir = Some(PathBuf::from(v)),
                "out" => out = PathBuf::from(v),
                "threads" => threads = Some(parse(k, v)?),
                "deterministic" => deterministic = parse_bool(k, v)?,
                "probe_epochs" => probe.epochs = parse(k, v)?,
                "probe_patience" => probe.patience = parse(k, v)?,
                "probe_batch_size" => probe.batch_size = parse(k, v)?,
                "probe_lr" => probe.peak_lr = parse(k, v)?,
                _ => return Err(UsageError(format!("unknown configuration key {k:?}"))),
            }
        }
        train.batch_size = batch_size.unwrap_or_else(|| TrainConfig::default_batch_size(&model));
        let cfg = RunConfig {
            model,
            train,
            probe,
            data,
            out,
            threads,
            deterministic,
            pairs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let wrap = |e: isobench_core::Error| UsageError(e.to_string());
        self.model.validate().map_err(wrap)?;
        if self.model.image_size != isobench_core::data::SIDE {
            return Err(UsageError(format!(
                "image_size: datasets hold 32×32 images, got {}",
                self.model.image_size
            )));
        }
        self.train.validate().map_err(wrap)?;
        if self.threads == Some(0) {
            return Err(UsageError("threads: must be at least 1".into()));
        }
        if self.probe.batch_size == 0 {
            return Err(UsageError("probe_batch_size: must be at least 1".into()));
        }
        if self.data.synthetic && self.data.synthetic_count == 0 {
            return Err(UsageError("synthetic_count: must be positive".into()));
        }
        Ok(())
    }

    /// Config echo for checkpoints: everything except file locations and threads.
    pub fn checkpoint_echo(&self) -> BTreeMap<String, String> {
        self.pairs
            .iter()
            .filter(|(k, _)| !LOCATION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// `key=value` text that reproduces this config.
    pub fn to_text(&self) -> String {
        self.pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
