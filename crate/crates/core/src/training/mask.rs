use rand::Rng;

use crate::error::{Error, Result};

/// Masked pixel positions, ascending and unique. A masked pixel hides all
/// three of its channels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskSample {
    pub indices: Vec<usize>,
}

impl MaskSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Independent Bernoulli(`rate`) draw for each of `n` pixels.
pub fn sample_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Result<MaskSample> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "mask_rate must lie in [0, 1], got {rate}"
        )));
    }
    let indices = (0..n).filter(|_| rng.gen::<f64>() < rate).collect();
    Ok(MaskSample { indices })
}
