use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use isobench_core::blocks::IsotropicNetwork;
use isobench_core::checkpoint::Checkpoint;
use isobench_core::data::{
    expected_files, load_cifar, split_and_shuffle, synthetic, Cifar10Set, Split,
};
use isobench_core::encodings::{
    similarity_matrix, EncodingKind, EncodingSpec, ReferenceEncoding, CHANNELS, LEVELS,
};
use isobench_core::imageio::RasterImage;
use isobench_core::probing::probe_all_layers;
use isobench_core::rng::{RngStreams, Stream};
use isobench_core::training::{metrics_csv, sample_mask, Trainer};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{
    unix_now, write_atomic, CommandRecord, FinalMetrics, Manifest, ProbeSummary,
};
use crate::{EncodeSimArgs, UsageError, DATA_ENV};

pub const CHECKPOINT: &str = "checkpoint.isob";
pub const METRICS: &str = "metrics.csv";
pub const PROBE_REPORT: &str = "probe.csv";
pub const SCATTER: &str = "scatter.csv";
pub const RECONSTRUCTIONS: &str = "reconstructions";
/// Middle-panel colour of masked pixels.
pub const MASK_GRAY: u8 = 128;

pub struct Datasets {
    pub train: Cifar10Set,
    pub val: Cifar10Set,
    pub test: Cifar10Set,
    /// `"synthetic"` or `"cifar10"`.
    pub source: &'static str,
}

/// Loads CIFAR-10 (or the procedural set), holds out validation records and
/// applies the size limits.
pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let streams = RngStreams::new(cfg.train.seed);
    let d = &cfg.data;
    let (full_train, full_test, source, default_val) = if d.synthetic {
        let train = synthetic(
            d.synthetic_count,
            &mut streams.indexed(Stream::Synthetic, 0),
            Split::Train,
        );
        let test = synthetic(
            d.synthetic_test_count,
            &mut streams.indexed(Stream::Synthetic, 1),
            Split::Test,
        );
        (train, test, "synthetic", d.synthetic_count / 5)
    } else {
        let dir = d.dir.as_ref().ok_or_else(|| {
            UsageError(format!(
                "no dataset given: pass --data DIR, set {DATA_ENV}, or use --synthetic"
            ))
        })?;
        if !dir.is_dir() {
            return Err(UsageError(format!(
                "dataset directory {} does not exist",
                dir.display()
            ))
            .into());
        }
        if let Some(missing) = expected_files(dir).into_iter().find(|f| !f.is_file()) {
            return Err(
                UsageError(format!("dataset file {} is missing", missing.display())).into(),
            );
        }
        let (train, test) = load_cifar(dir)?;
        (train, test, "cifar10", 5000)
    };
    let val_count = d.val_count.unwrap_or(default_val);
    let (mut train, val) =
        split_and_shuffle(&full_train, &mut streams.stream(Stream::Split), val_count)
            .map_err(|e| UsageError(format!("val_count: {e}")))?;
    if let Some(limit) = d.train_limit {
        train = train.take(limit);
    }
    let test = match d.test_limit {
        Some(limit) => full_test.take(limit),
        None => full_test,
    };
    Ok(Datasets {
        train,
        val,
        test,
        source,
    })
}

fn record(cfg: &RunConfig, command: &str, started: f64) -> CommandRecord {
    CommandRecord {
        command: command.into(),
        config: cfg.pairs.clone(),
        started_unix: started,
        finished_unix: unix_now(),
        threads: rayon::current_num_threads(),
        deterministic: cfg.deterministic,
    }
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))
}

fn load_network(path: &Path) -> Result<(Checkpoint, IsotropicNetwork<f32>)> {
    let ck = Checkpoint::load(path)?;
    let net = IsotropicNetwork::from_checkpoint(&ck)?;
    Ok((ck, net))
}

fn checkpoint_path(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| cfg.out.join(CHECKPOINT), Path::to_path_buf)
}

pub fn pretrain(cfg: &RunConfig, resume: bool) -> Result<()> {
    let started = unix_now();
    let data = load_datasets(cfg)?;
    create_out(cfg)?;
    let ck_path = cfg.out.join(CHECKPOINT);
    let mut trainer = if resume && ck_path.exists() {
        let t = Trainer::from_checkpoint(&Checkpoint::load(&ck_path)?)?;
        if t.net.config != cfg.model || t.config != cfg.train {
            return Err(UsageError(format!(
                "{} was trained with a different configuration",
                ck_path.display()
            ))
            .into());
        }
        t
    } else {
        Trainer::new(&cfg.model, cfg.train.clone())?
    };
    let extra = json!({ "config": cfg.checkpoint_echo(), "data": data.source });
    log::info!(
        "pretraining {} / {} depth {} on {} {} images ({} validation), {} epochs",
        cfg.model.block_type,
        cfg.model.encoding,
        cfg.model.depth,
        data.train.len(),
        data.source,
        data.val.len(),
        cfg.train.epochs()
    );
    while !trainer.is_finished() {
        let m = trainer.run_epoch(&data.train, &data.val)?;
        if cfg.deterministic {
            // wall-clock times are the only run-to-run difference in a checkpoint
            if let Some(last) = trainer.state.history.last_mut() {
                last.train_seconds = 0.0;
                last.val_seconds = 0.0;
            }
        }
        trainer.save(&ck_path, extra.clone())?;
        write_atomic(
            &cfg.out.join(METRICS),
            &metrics_csv(&trainer.state.history, cfg.deterministic)?,
        )?;
        log::info!(
            "epoch {}: train loss {:.4}, val loss {:?}, lr {:.3e}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.lr
        );
    }
    let last = trainer.state.history.last();
    let final_metrics = FinalMetrics {
        epochs: trainer.state.epochs_done,
        steps: trainer.state.steps,
        initial_loss: trainer.state.initial_loss,
        train_loss: last.map_or(0.0, |m| m.train_loss),
        val_loss: last.and_then(|m| m.val_loss),
    };
    Manifest::update(&cfg.out, |m| {
        m.model = Some(cfg.model.clone());
        m.final_metrics = Some(final_metrics);
        m.commands.push(record(cfg, "pretrain", started));
    })?;
    Ok(())
}

/// Final validation loss stored in a training checkpoint.
pub fn checkpoint_val_loss(ck: &Checkpoint) -> Option<f64> {
    ck.meta
        .pointer("/state/history")?
        .as_array()?
        .last()?
        .get("val_loss")?
        .as_f64()
}

pub fn probe(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let started = unix_now();
    let (ck, net) = load_network(&checkpoint_path(cfg, checkpoint))?;
    let data = load_datasets(cfg)?;
    let val_loss = checkpoint_val_loss(&ck);
    let report = probe_all_layers(
        &net,
        &data.train,
        &data.val,
        &data.test,
        &cfg.probe,
        val_loss,
    )?;
    create_out(cfg)?;
    write_atomic(&cfg.out.join(PROBE_REPORT), &report.to_csv()?)?;
    for l in &report.layers {
        log::info!(
            "layer {}: val {:.4}, test {:.4}",
            l.layer,
            l.val_accuracy,
            l.test_accuracy
        );
    }
    Manifest::update(&cfg.out, |m| {
        m.model.get_or_insert_with(|| net.config.clone());
        m.probe = Some(ProbeSummary {
            report: PROBE_REPORT.into(),
            best_layer: report.best_layer,
            best_accuracy: report.best_accuracy,
            val_loss,
            layers: report.layers.clone(),
        });
        m.commands.push(record(cfg, "probe", started));
    })?;
    Ok(())
}

fn argmax(xs: &[f32]) -> usize {
    xs.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > xs[best] { i } else { best })
}

/// Three side-by-side panels: the original, the image with masked pixels
/// painted mid-gray, and the image with masked pixels replaced by the
/// per-channel argmax prediction.
pub fn reconstruction_strip(
    net: &IsotropicNetwork<f32>,
    image: &[u8],
    mask: &[usize],
) -> Result<RasterImage> {
    let side = net.config.image_size;
    let n = side * side;
    let mut recon = image.to_vec();
    if !mask.is_empty() {
        let out = net.network_forward(image, mask)?;
        let logits = out.logits.data();
        for &i in mask {
            for c in 0..CHANNELS {
                let start = (i * CHANNELS + c) * LEVELS;
                recon[c * n + i] = argmax(&logits[start..start + LEVELS]) as u8;
            }
        }
    }
    let mut masked = image.to_vec();
    for &i in mask {
        for c in 0..CHANNELS {
            masked[c * n + i] = MASK_GRAY;
        }
    }
    let width = 3 * side;
    let mut pixels = vec![0u8; width * side * CHANNELS];
    for (panel, src) in [image, &masked, &recon].into_iter().enumerate() {
        for y in 0..side {
            for x in 0..side {
                let at = ((y * width) + panel * side + x) * CHANNELS;
                for c in 0..CHANNELS {
                    pixels[at + c] = src[c * n + y * side + x];
                }
            }
        }
    }
    Ok(RasterImage::new(width, side, CHANNELS, pixels)?)
}

pub fn reconstruct(cfg: &RunConfig, checkpoint: Option<&Path>, count: usize) -> Result<()> {
    let started = unix_now();
    let (_, net) = load_network(&checkpoint_path(cfg, checkpoint))?;
    let data = load_datasets(cfg)?;
    let dir = cfg.out.join(RECONSTRUCTIONS);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let streams = RngStreams::new(cfg.train.seed);
    for i in 0..count.min(data.test.len()) {
        let mask = sample_mask(
            &mut streams.indexed(Stream::Reconstruct, i as u64),
            net.config.tokens(),
            cfg.train.mask_rate,
        )?;
        let strip = reconstruction_strip(&net, data.test.image(i), &mask.indices)?;
        strip.save(&dir.join(format!("recon_{i:03}.ppm")))?;
    }
    Manifest::update(&cfg.out, |m| {
        m.model.get_or_insert_with(|| net.config.clone());
        m.commands.push(record(cfg, "reconstruct", started));
    })?;
    Ok(())
}

pub fn encode_sim(cfg: &RunConfig, args: &EncodeSimArgs) -> Result<()> {
    let started = unix_now();
    let (label, vectors) = match (&args.checkpoint, &args.reference) {
        (Some(path), _) => {
            let ch = args.channel.unwrap_or(0);
            if ch >= CHANNELS {
                return Err(UsageError(format!("channel: must be 0, 1 or 2, got {ch}")).into());
            }
            let (_, net) = load_network(path)?;
            (
                format!("checkpoint_ch{ch}"),
                net.encoder.similarity_vectors(&net.store, ch)?,
            )
        }
        (None, Some(name)) => {
            let reference = match name.as_str() {
                "onehot" | "one-hot" => ReferenceEncoding::OneHot,
                "continuous" => ReferenceEncoding::Continuous,
                "fourier" | "rff" => {
                    let spec = EncodingSpec {
                        kind: EncodingKind::Rff,
                        ..cfg.model.encoding_spec()
                    };
                    spec.validate().map_err(|e| UsageError(e.to_string()))?;
                    ReferenceEncoding::Fourier {
                        k: cfg.model.rff_k,
                        sigma: cfg.model.rff_sigma,
                        seed: cfg.train.seed,
                    }
                }
                other => {
                    return Err(UsageError(format!(
                        "reference: expected onehot, continuous or fourier, got {other:?}"
                    ))
                    .into())
                }
            };
            if args.channel.is_some() {
                log::warn!(
                    "--channel only applies to learned encoders; ignored for the {name} reference"
                );
            }
            let label = match reference {
                ReferenceEncoding::OneHot => "onehot",
                ReferenceEncoding::Continuous => "continuous",
                ReferenceEncoding::Fourier { .. } => "fourier",
            };
            (label.to_string(), reference.vectors()?)
        }
        (None, None) => return Err(UsageError("pass --checkpoint or --reference".into()).into()),
    };
    create_out(cfg)?;
    let matrix = similarity_matrix(&vectors);
    if !matrix.zero_norm.is_empty() {
        log::warn!(
            "{} byte values have zero-norm encodings; their similarities are written as 0",
            matrix.zero_norm.len()
        );
    }
    matrix.save(
        &cfg.out.join(format!("similarity_{label}.csv")),
        &cfg.out.join(format!("similarity_{label}.pgm")),
    )?;
    Manifest::update(&cfg.out, |m| {
        m.commands.push(record(cfg, "encode-sim", started))
    })?;
    Ok(())
}

pub const SCATTER_HEADER: [&str; 8] = [
    "run_id",
    "block_type",
    "encoding",
    "depth",
    "heads",
    "val_loss",
    "best_probe_layer",
    "best_probe_accuracy",
];

/// One scatter row per run directory with a complete manifest.
pub fn scatter_rows(dirs: &[PathBuf]) -> Vec<[String; 8]> {
    let mut rows = Vec::new();
    for dir in dirs {
        let manifest = match Manifest::load(dir) {
            Ok(Some(m)) => m,
            Ok(None) => {
                log::warn!("{}: no manifest, skipped", dir.display());
                continue;
            }
            Err(e) => {
                log::warn!("{}: {e:#}, skipped", dir.display());
                continue;
            }
        };
        let (Some(model), Some(probe)) = (&manifest.model, &manifest.probe) else {
            log::warn!(
                "{}: manifest lacks model or probe summary, skipped",
                dir.display()
            );
            continue;
        };
        let val_loss = manifest
            .final_metrics
            .as_ref()
            .and_then(|f| f.val_loss)
            .or(probe.val_loss);
        let run_id = dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        rows.push([
            run_id,
            model.block_type.to_string(),
            model.encoding.to_string(),
            model.depth.to_string(),
            model.heads.to_string(),
            val_loss.map_or_else(String::new, |v| v.to_string()),
            probe.best_layer.to_string(),
            probe.best_accuracy.to_string(),
        ]);
    }
    rows
}

pub fn aggregate(cfg: &RunConfig, dirs: &[PathBuf]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCATTER_HEADER)?;
    for row in scatter_rows(dirs) {
        w.write_record(&row)?;
    }
    create_out(cfg)?;
    let path = cfg.out.join(SCATTER);
    write_atomic(&path, &w.into_inner()?)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
