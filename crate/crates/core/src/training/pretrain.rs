use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::blocks::{IsotropicNetwork, ModelConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{to_batches, Cifar10Set};
use crate::error::{Error, Result};
use crate::rng::{RngStreams, Stream};
use crate::tensor::Tensor;

use super::loss::image_loss;
use super::mask::{sample_mask, MaskSample};
use super::optim::{Adam, AdamConfig, LrSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub decay_epochs: usize,
    pub peak_lr: f64,
    pub seed: u64,
    /// Trailing training records held out for validation.
    pub val_count: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_rate: 0.15,
            batch_size: 128,
            warmup_epochs: 1,
            decay_epochs: 50,
            peak_lr: 0.01,
            seed: 0,
            val_count: 5000,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 128, or 32 for four-head transformers.
    pub fn default_batch_size(model: &ModelConfig) -> usize {
        if model.block_type == crate::blocks::BlockType::Transformer && model.heads == 4 {
            32
        } else {
            128
        }
    }

    pub fn epochs(&self) -> usize {
        self.warmup_epochs + self.decay_epochs
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!(
                "mask_rate must lie in [0, 1], got {}",
                self.mask_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!(
                "peak_lr must be a finite non-negative number, got {}",
                self.peak_lr
            )));
        }
        if self.epochs() == 0 {
            return Err(Error::Config(
                "warmup_epochs + decay_epochs must be at least 1".into(),
            ));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || a.eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(Error::Config(format!("adam settings out of range: {a:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    pub train_seconds: f64,
    pub val_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub steps: u64,
    /// Loss of the very first batch.
    pub initial_loss: Option<f64>,
    pub history: Vec<EpochMetrics>,
    /// Batches skipped because no pixel was masked.
    pub degenerate_batches: u64,
}

/// Masked-pixel pretraining of one network.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: IsotropicNetwork<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    pub state: TrainState,
}

/// Images evaluated in parallel at once; bounds peak gradient memory.
const WAVE: usize = 32;

impl Trainer {
    pub fn new(model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = IsotropicNetwork::new(model, &RngStreams::new(config.seed))?;
        let adam = Adam::for_store(config.adam, &net.store);
        Ok(Trainer {
            net,
            adam,
            config,
            state: TrainState::default(),
        })
    }

    fn streams(&self) -> RngStreams {
        RngStreams::new(self.config.seed)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epochs_done >= self.config.epochs()
    }

    pub fn schedule(&self, train_len: usize) -> LrSchedule {
        let spe = train_len.div_ceil(self.config.batch_size);
        LrSchedule::from_epochs(
            self.config.peak_lr,
            self.config.warmup_epochs,
            self.config.decay_epochs,
            spe,
        )
    }

    /// Summed `scale`d losses and gradients over a list of images.
    fn batch_pass(
        &self,
        images: &[&[u8]],
        masks: &[MaskSample],
        scale: f64,
        want_grads: bool,
    ) -> Result<(f64, Vec<Tensor<f32>>)> {
        let mut grads: Vec<Tensor<f32>> = if want_grads {
            self.net
                .store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        } else {
            Vec::new()
        };
        let mut total = 0.0;
        let idx: Vec<usize> = (0..images.len()).collect();
        for wave in idx.chunks(WAVE) {
            let parts: Vec<_> = wave
                .par_iter()
                .map(|&i| image_loss(&self.net, images[i], &masks[i].indices, scale, want_grads))
                .collect::<Result<_>>()?;
            // Reduce in image order so results do not depend on scheduling.
            for (loss, pg) in parts {
                total += loss;
                for (id, g) in pg {
                    grads[id.index()].add_assign(&g);
                }
            }
        }
        Ok((total, grads))
    }

    /// Mean masked-pixel loss over `set` with masks from the fixed validation stream.
    pub fn evaluate(&self, set: &Cifar10Set) -> Result<Option<f64>> {
        let n = self.net.config.tokens();
        let masks: Vec<MaskSample> = (0..set.len())
            .map(|i| {
                sample_mask(
                    &mut self.streams().indexed(Stream::ValidationMask, i as u64),
                    n,
                    self.config.mask_rate,
                )
            })
            .collect::<Result<_>>()?;
        let masked: usize = masks.iter().map(MaskSample::len).sum();
        if masked == 0 {
            return Ok(None);
        }
        let images: Vec<&[u8]> = (0..set.len()).map(|i| set.image(i)).collect();
        let (sum, _) = self.batch_pass(&images, &masks, 1.0, false)?;
        Ok(Some(sum / masked as f64))
    }

    /// Runs the next epoch: shuffled batches, one Adam update per batch, then validation.
    pub fn run_epoch(&mut self, train: &Cifar10Set, val: &Cifar10Set) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let epoch = self.state.epochs_done as u64;
        let schedule = self.schedule(train.len());
        let streams = self.streams();
        let batches = to_batches(
            train.len(),
            self.config.batch_size,
            &mut streams.indexed(Stream::Shuffle, epoch),
        )?;
        let mut mask_rng = streams.indexed(Stream::Mask, epoch);
        let n = self.net.config.tokens();
        let started = Instant::now();
        let (mut epoch_sum, mut epoch_masked) = (0.0, 0usize);
        let mut lr = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let masks: Vec<MaskSample> = batch
                .iter()
                .map(|_| sample_mask(&mut mask_rng, n, self.config.mask_rate))
                .collect::<Result<_>>()?;
            let masked: usize = masks.iter().map(MaskSample::len).sum();
            lr = schedule.lr_at(self.state.steps + 1);
            if masked == 0 {
                self.state.degenerate_batches += 1;
                self.state.steps += 1;
                continue;
            }
            let images: Vec<&[u8]> = batch.iter().map(|&i| train.image(i)).collect();
            // Scaled per image, so the summed contributions are already the batch mean.
            let (loss, grads) = self.batch_pass(&images, &masks, 1.0 / masked as f64, true)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {}, batch {b} (step {}, lr {lr:e})",
                    epoch + 1,
                    self.state.steps + 1
                )));
            }
            self.state.initial_loss.get_or_insert(loss);
            epoch_sum += loss * masked as f64;
            epoch_masked += masked;
            let mut values: Vec<&mut Tensor<f32>> = self
                .net
                .store
                .params_mut()
                .iter_mut()
                .map(|p| &mut p.value)
                .collect();
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            self.adam.step(&mut values, &grad_refs, lr)?;
            self.state.steps += 1;
            log::debug!("epoch {} batch {b}: loss {loss:.4}, lr {lr:.2e}", epoch + 1);
        }
        let train_seconds = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let val_loss = if val.is_empty() {
            None
        } else {
            self.evaluate(val)?
        };
        let metrics = EpochMetrics {
            epoch: epoch as usize + 1,
            train_loss: if epoch_masked > 0 {
                epoch_sum / epoch_masked as f64
            } else {
                0.0
            },
            val_loss,
            lr,
            train_seconds,
            val_seconds: started.elapsed().as_secs_f64(),
        };
        self.state.epochs_done += 1;
        self.state.history.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs the remaining epochs; `after_epoch` sees the trainer after each one
    /// (for checkpointing and logging).
    pub fn train<F>(
        &mut self,
        train: &Cifar10Set,
        val: &Cifar10Set,
        mut after_epoch: F,
    ) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while !self.is_finished() {
            self.run_epoch(train, val)?;
            after_epoch(self)?;
        }
        Ok(())
    }

    /// Parameters, optimizer moments and run state.
    pub fn checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut tensors = self.net.export_tensors();
        for (i, (_, p)) in self.net.store.iter().enumerate() {
            tensors.push((format!("adam.m.{}", p.name), self.adam.m[i].clone()));
            tensors.push((format!("adam.v.{}", p.name), self.adam.v[i].clone()));
        }
        Checkpoint {
            tensors,
            meta: json!({
                "model": self.net.config,
                "train": self.config,
                "state": self.state,
                "adam_t": self.adam.t,
                "extra": extra,
            }),
        }
    }

    /// Restores a run, including optimizer moments, so training can continue exactly.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = IsotropicNetwork::from_checkpoint(ck)?;
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Version(format!("checkpoint lacks {k:?}")))
        };
        let bad = |e: serde_json::Error| Error::Version(e.to_string());
        let config: TrainConfig = serde_json::from_value(field("train")?).map_err(bad)?;
        let state: TrainState = serde_json::from_value(field("state")?).map_err(bad)?;
        let t: u64 = serde_json::from_value(field("adam_t")?).map_err(bad)?;
        let mut adam = Adam::for_store(config.adam, &net.store);
        adam.t = t;
        for (i, (_, p)) in net.store.iter().enumerate() {
            for (slot, kind) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let name = format!("adam.{kind}.{}", p.name);
                let t = ck
                    .get(&name)
                    .ok_or_else(|| Error::Version(format!("checkpoint lacks {name}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Version(format!("{name} has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(Trainer {
            net,
            adam,
            config,
            state,
        })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.checkpoint(extra).save(path)
    }
}

/// Metrics CSV: `epoch,phase,loss,lr,seconds`. With `zero_times` the seconds
/// column is written as 0 so repeated runs give identical bytes.
pub fn metrics_csv(history: &[EpochMetrics], zero_times: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["epoch", "phase", "loss", "lr", "seconds"])
        .map_err(csv_err)?;
    let secs = |s: f64| {
        if zero_times {
            "0".to_string()
        } else {
            format!("{s:.3}")
        }
    };
    for m in history {
        w.write_record([
            m.epoch.to_string(),
            "train".into(),
            m.train_loss.to_string(),
            m.lr.to_string(),
            secs(m.train_seconds),
        ])
        .map_err(csv_err)?;
        if let Some(v) = m.val_loss {
            w.write_record([
                m.epoch.to_string(),
                "val".into(),
                v.to_string(),
                m.lr.to_string(),
                secs(m.val_seconds),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ModelConfig, Cifar10Set, Cifar10Set) {
        let model = ModelConfig {
            latent_dim: 8,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (
            model,
            synthetic(12, &mut rng, Split::Train),
            synthetic(4, &mut rng, Split::Validation),
        )
    }

    #[test]
    fn warmup_only_runs_one_epoch_of_steps() {
        let (model, train, val) = tiny();
        let cfg = TrainConfig {
            batch_size: 5,
            decay_epochs: 0,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&model, cfg).unwrap();
        t.train(&train, &val, |_| Ok(())).unwrap();
        assert_eq!(t.state.steps, 3);
        assert_eq!(t.adam.t, 3);
        assert_eq!(t.state.history.len(), 1);
        assert!(t.state.history[0].val_loss.is_some());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (model, train, val) = tiny();
        let cfg = TrainConfig {
            batch_size: 4,
            decay_epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut full = Trainer::new(&model, cfg.clone()).unwrap();
        full.train(&train, &val, |_| Ok(())).unwrap();

        let mut first = Trainer::new(&model, cfg).unwrap();
        first.run_epoch(&train, &val).unwrap();
        let bytes = first.checkpoint(serde_json::Value::Null).encode().unwrap();
        let mut resumed = Trainer::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        resumed.run_epoch(&train, &val).unwrap();
        assert_eq!(
            resumed.state.history[1].train_loss,
            full.state.history[1].train_loss
        );
        assert_eq!(
            resumed.state.history[1].val_loss,
            full.state.history[1].val_loss
        );
        assert_eq!(resumed.net.export_tensors(), full.net.export_tensors());
    }

    #[test]
    fn metrics_csv_layout() {
        let h = vec![EpochMetrics {
            epoch: 1,
            train_loss: 2.5,
            val_loss: Some(3.0),
            lr: 0.01,
            train_seconds: 1.234,
            val_seconds: 0.5,
        }];
        let s = String::from_utf8(metrics_csv(&h, true).unwrap()).unwrap();
        assert_eq!(
            s,
            "epoch,phase,loss,lr,seconds\n1,train,2.5,0.01,0\n1,val,3,0.01,0\n"
        );
    }

    #[test]
    fn rejects_bad_config() {
        let model = ModelConfig::default();
        for cfg in [
            TrainConfig {
                mask_rate: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                warmup_epochs: 0,
                decay_epochs: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(Trainer::new(&model, cfg), Err(Error::Config(_))));
        }
    }
}
