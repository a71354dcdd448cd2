use crate::blocks::IsotropicNetwork;
use crate::encodings::{CHANNELS, LEVELS};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::param::ParamId;
use crate::tensor::{self, Scalar, Tensor};

use super::mask::MaskSample;

/// Images paired with their masks.
#[derive(Clone, Debug)]
pub struct BertBatch<'d> {
    pub images: Vec<&'d [u8]>,
    pub masks: Vec<MaskSample>,
}

impl BertBatch<'_> {
    pub fn masked_pixels(&self) -> usize {
        self.masks.iter().map(MaskSample::len).sum()
    }
}

/// The true channel bytes of the masked pixels of a channel-planar image,
/// pixel-major with the channel innermost.
pub fn mask_targets(image: &[u8], mask: &[usize]) -> Vec<usize> {
    let n = image.len() / CHANNELS;
    mask.iter()
        .flat_map(|&i| (0..CHANNELS).map(move |c| image[c * n + i] as usize))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    /// Mean over masked pixels of the per-pixel three-channel NLL.
    pub loss: f64,
    pub masked: usize,
    /// No pixel was masked; `loss` is 0 and carries no gradient.
    pub degenerate: bool,
}

/// Masked-pixel loss from full logits (`n × 3 × 256` per image).
pub fn bert_loss<T: Scalar>(logits: &[Tensor<T>], batch: &BertBatch<'_>) -> Result<LossValue> {
    if logits.len() != batch.images.len() || batch.masks.len() != batch.images.len() {
        return Err(Error::Input(format!(
            "{} logit tensors, {} images, {} masks",
            logits.len(),
            batch.images.len(),
            batch.masks.len()
        )));
    }
    let masked = batch.masked_pixels();
    if masked == 0 {
        return Ok(LossValue {
            loss: 0.0,
            masked,
            degenerate: true,
        });
    }
    let mut total = 0.0;
    for ((l, image), mask) in logits.iter().zip(&batch.images).zip(&batch.masks) {
        let n = image.len() / CHANNELS;
        if l.numel() != n * CHANNELS * LEVELS {
            return Err(Error::dim("bert_loss", l.shape(), &[n, CHANNELS, LEVELS]));
        }
        let targets = mask_targets(image, &mask.indices);
        for (k, &i) in mask.indices.iter().enumerate() {
            for c in 0..CHANNELS {
                let start = (i * CHANNELS + c) * LEVELS;
                let group = &l.data()[start..start + LEVELS];
                total += (tensor::log_sum_exp(group) - group[targets[k * CHANNELS + c]]).f64();
            }
        }
    }
    Ok(LossValue {
        loss: total / masked as f64,
        masked,
        degenerate: false,
    })
}

/// Loss contribution of one image, `scale · Σ_masked NLL`, and optionally the
/// parameter gradients of that contribution. Only masked rows reach the head.
pub fn image_loss<T: Scalar>(
    net: &IsotropicNetwork<T>,
    image: &[u8],
    mask: &[usize],
    scale: f64,
    want_grads: bool,
) -> Result<(f64, Vec<(ParamId, Tensor<T>)>)> {
    if mask.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let mut g = Graph::new();
    let acts = net.forward_activations(&mut g, image, mask)?;
    let last = *acts.last().expect("at least the encoded input");
    let logits = net.head_logits(&mut g, last, Some(mask))?;
    let loss = g.cross_entropy(logits, &mask_targets(image, mask), LEVELS, T::of(scale))?;
    let value = g.value(loss).data()[0].f64();
    if !want_grads {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    Ok((value, g.take_param_grads(grads)))
}
