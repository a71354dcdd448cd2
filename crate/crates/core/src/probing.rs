//! Linear probes on frozen, token-averaged activations.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::IsotropicNetwork;
use crate::data::{Cifar10Set, CLASSES};
use crate::error::{Error, Result};
use crate::rng::{RngStreams, Stream};
use crate::tensor::{matmul, Scalar, Tensor};
use crate::training::{Adam, AdamConfig, LrSchedule};

/// Column means of an `n × d` activation.
pub fn mean_pool<T: Scalar>(act: &Tensor<T>) -> Result<Vec<f64>> {
    let (n, d) = act.dims2()?;
    let mut out = vec![0.0; d];
    for row in act.data().chunks(d) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v.f64();
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// Pooled features for every layer: `L + 1` tensors of shape `images × d`.
/// Images go through the unmasked forward pass.
pub fn extract_all_layers<T: Scalar>(
    net: &IsotropicNetwork<T>,
    set: &Cifar10Set,
) -> Result<Vec<Tensor<f64>>> {
    let layers = net.depth() + 1;
    let d = net.config.latent_dim;
    if set.is_empty() {
        return Err(Error::Input("no images to extract features from".into()));
    }
    let pooled: Vec<Vec<Vec<f64>>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut g = crate::graph::Graph::new();
            let acts = net.forward_activations(&mut g, set.image(i), &[])?;
            acts.iter().map(|&a| mean_pool(g.value(a))).collect()
        })
        .collect::<Result<_>>()?;
    (0..layers)
        .map(|l| {
            let data = pooled.iter().flat_map(|p| p[l].iter().copied()).collect();
            Tensor::new(vec![set.len(), d], data)
        })
        .collect()
}

pub fn extract_features<T: Scalar>(
    net: &IsotropicNetwork<T>,
    layer: usize,
    set: &Cifar10Set,
) -> Result<Tensor<f64>> {
    if layer > net.depth() {
        return Err(Error::Range(format!(
            "layer {layer} exceeds network depth {}",
            net.depth()
        )));
    }
    Ok(extract_all_layers(net, set)?.swap_remove(layer))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    /// Epochs without a validation-accuracy gain before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 100,
            peak_lr: 0.01,
            batch_size: 128,
            patience: 10,
            seed: 0,
        }
    }
}

/// One affine map on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `d × 10`.
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LinearProbe {
    fn standardize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (_, d) = x.dims2()?;
        if d != self.mean.len() {
            return Err(Error::dim(
                "probe",
                x.shape(),
                &[x.shape()[0], self.mean.len()],
            ));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }

    /// `rows × 10` class scores.
    pub fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut z = matmul(&self.standardize(x)?, &self.weight)?;
        for row in z.data_mut().chunks_mut(CLASSES) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(z)
    }

    pub fn predict(&self, x: &Tensor<f64>) -> Result<Vec<u8>> {
        let z = self.logits(x)?;
        Ok(z.data()
            .chunks(CLASSES)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > r[best] { i } else { best })
                    as u8
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor<f64>, labels: &[u8]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let hits = self
            .predict(x)?
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_accuracy: f64,
    /// Training labels held a single class.
    pub single_class: bool,
}

fn rows(x: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    let d = x.shape()[1];
    let data = idx
        .iter()
        .flat_map(|&i| x.data()[i * d..(i + 1) * d].iter().copied())
        .collect();
    Tensor::new(vec![idx.len(), d], data).expect("row selection")
}

/// Softmax regression with Adam and a cosine-decayed learning rate, stopped
/// early on validation accuracy (training accuracy when `val` is empty).
/// The weights from the best epoch are returned.
pub fn train_probe(
    train: (&Tensor<f64>, &[u8]),
    val: (&Tensor<f64>, &[u8]),
    config: &ProbeConfig,
) -> Result<ProbeFit> {
    let (x, y) = train;
    let (n, d) = x.dims2()?;
    if n != y.len() || n == 0 {
        return Err(Error::Input(format!(
            "{n} feature rows but {} labels",
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().chain(val.1).find(|&&l| l as usize >= CLASSES) {
        return Err(Error::Range(format!("label {bad} outside 0..{CLASSES}")));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("probe batch_size must be at least 1".into()));
    }
    let single_class = y.iter().all(|&l| l == y[0]);
    if single_class {
        log::warn!(
            "probe training labels contain a single class ({}); accuracy is uninformative",
            y[0]
        );
    }

    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for row in x.data().chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    for row in x.data().chunks(d) {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let inv_std = var
        .iter()
        .map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    let mut probe = LinearProbe {
        weight: Tensor::zeros(&[d, CLASSES]),
        bias: Tensor::zeros(&[CLASSES]),
        mean,
        inv_std,
    };
    let xs = probe.standardize(x)?;
    let use_val = !val.1.is_empty();
    let (vx, vy) = if use_val { val } else { (x, y) };

    let steps_per_epoch = n.div_ceil(config.batch_size);
    let schedule = LrSchedule::from_epochs(config.peak_lr, 0, config.epochs, steps_per_epoch);
    let mut adam = Adam::<f64>::new(AdamConfig::default(), &[&[d, CLASSES], &[CLASSES]]);
    let mut rng = RngStreams::new(config.seed).stream(Stream::Probe);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (probe.accuracy(vx, vy)?, 0, probe.clone());
    let mut step = 0u64;
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let bx = rows(&xs, batch);
            let mut z = matmul(&bx, &probe.weight)?;
            // softmax − onehot, averaged over the batch
            for (row, &i) in z.data_mut().chunks_mut(CLASSES).zip(batch) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (v, b) in row.iter_mut().zip(probe.bias.data()) {
                    *v = (*v + b - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s * batch.len() as f64;
                }
                row[y[i] as usize] -= 1.0 / batch.len() as f64;
            }
            let gw = matmul(&crate::tensor::transpose(&bx)?, &z)?;
            let mut gb = Tensor::zeros(&[CLASSES]);
            for row in z.data().chunks(CLASSES) {
                for (g, &v) in gb.data_mut().iter_mut().zip(row) {
                    *g += v;
                }
            }
            step += 1;
            let lr = schedule.lr_at(step);
            adam.step(&mut [&mut probe.weight, &mut probe.bias], &[&gw, &gb], lr)?;
        }
        epochs_run = epoch;
        let acc = probe.accuracy(vx, vy)?;
        if acc > best.0 {
            best = (acc, epoch, probe.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(ProbeFit {
        probe: best.2,
        best_epoch: best.1,
        epochs_run,
        val_accuracy: best.0,
        single_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub layers: Vec<LayerProbe>,
    /// Layer with the highest test accuracy; ties go to the lower layer.
    pub best_layer: usize,
    pub best_accuracy: f64,
    /// Unsupervised validation loss of the probed checkpoint, if known.
    pub val_loss: Option<f64>,
}

impl ProbeReport {
    pub fn from_layers(layers: Vec<LayerProbe>, val_loss: Option<f64>) -> Self {
        let mut best = 0;
        for (i, l) in layers.iter().enumerate() {
            if l.test_accuracy > layers[best].test_accuracy {
                best = i;
            }
        }
        ProbeReport {
            best_layer: layers.get(best).map_or(0, |l| l.layer),
            best_accuracy: layers.get(best).map_or(0.0, |l| l.test_accuracy),
            layers,
            val_loss,
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["layer", "val_accuracy", "test_accuracy"])
            .map_err(err)?;
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.val_accuracy.to_string(),
                l.test_accuracy.to_string(),
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Trains one probe per layer on `train`, stops on `val`, scores on `test`.
/// Each layer's probe draws from its own seed, so layers are independent.
pub fn probe_all_layers<T: Scalar>(
    net: &IsotropicNetwork<T>,
    train: &Cifar10Set,
    val: &Cifar10Set,
    test: &Cifar10Set,
    config: &ProbeConfig,
    val_loss: Option<f64>,
) -> Result<ProbeReport> {
    let ftrain = extract_all_layers(net, train)?;
    let fval = if val.is_empty() {
        None
    } else {
        Some(extract_all_layers(net, val)?)
    };
    let ftest = extract_all_layers(net, test)?;
    let layers = (0..ftrain.len())
        .into_par_iter()
        .map(|l| {
            let cfg = ProbeConfig {
                seed: config.seed ^ ((l as u64) << 32),
                ..config.clone()
            };
            let empty = Tensor::zeros(&[1, net.config.latent_dim]);
            let v = match &fval {
                Some(f) => (&f[l], val.labels.as_slice()),
                None => (&empty, &[][..]),
            };
            let fit = train_probe((&ftrain[l], &train.labels), v, &cfg)?;
            Ok(LayerProbe {
                layer: l,
                val_accuracy: fit.val_accuracy,
                test_accuracy: fit.probe.accuracy(&ftest[l], &test.labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport::from_layers(layers, val_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pooling_constant_rows() {
        let t = Tensor::new(vec![3, 2], vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap();
        assert_eq!(mean_pool(&t).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200;
        let x = Tensor::<f64>::randn(&[n, 4], 0.3, &mut rng);
        let mut x = x;
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        for (row, &l) in x.data_mut().chunks_mut(4).zip(&y) {
            row[0] += if l == 1 { 3.0 } else { -3.0 };
        }
        let fit = train_probe((&x, &y), (&x, &y), &ProbeConfig::default()).unwrap();
        assert_eq!(fit.probe.accuracy(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn constant_features_give_majority_rate() {
        let x = Tensor::<f64>::full(&[100, 3], 0.7);
        let y: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let fit = train_probe((&x, &y), (&x, &y), &ProbeConfig::default()).unwrap();
        assert!((fit.probe.accuracy(&x, &y).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_flagged() {
        let x = Tensor::<f64>::full(&[5, 2], 1.0);
        let y = [3u8; 5];
        let fit = train_probe((&x, &y), (&x, &[][..]), &ProbeConfig::default()).unwrap();
        assert!(fit.single_class);
    }

    #[test]
    fn report_best_is_lowest_argmax() {
        let l = |layer, t| LayerProbe {
            layer,
            val_accuracy: 0.0,
            test_accuracy: t,
        };
        let r = ProbeReport::from_layers(vec![l(0, 0.2), l(1, 0.4), l(2, 0.4)], None);
        assert_eq!((r.best_layer, r.best_accuracy), (1, 0.4));
        let csv = String::from_utf8(r.to_csv().unwrap()).unwrap();
        assert!(csv.starts_with("layer,val_accuracy,test_accuracy\n0,0,0.2\n"));
    }
}
