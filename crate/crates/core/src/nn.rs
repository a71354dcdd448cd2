//! Parameterized layers shared by the encoders, blocks and head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x · W + b` applied to the rows of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_init(
            format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::FanIn(fan_in),
            rng,
        )?;
        let bias = if bias {
            Some(store.add_init(format!("{name}.bias"), &[fan_out], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row_bias(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim]))?,
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[dim]))?,
            dim,
        })
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let shift = g.param(store, self.shift);
        g.layer_norm(x, gain, shift, LAYER_NORM_EPS)
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }
}

/// Bidirectional scaled dot-product attention over already projected
/// `q, k, v: n×d`. Heads split the columns evenly; the result is the
/// column concatenation of the per-head outputs.
pub fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<Var> {
    let (_, d) = g.value(q).dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "latent width {d} is not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.narrow_cols(q, h * dh, dh)?,
                g.narrow_cols(k, h * dh, dh)?,
                g.narrow_cols(v, h * dh, dh)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax(scores);
        outs.push(g.matmul(weights, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Option<Linear>,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        bias: bool,
        out_projection: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "latent width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, bias, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, bias, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, bias, rng)?,
            output: if out_projection {
                Some(Linear::new(
                    store,
                    &format!("{name}.output"),
                    dim,
                    dim,
                    bias,
                    rng,
                )?)
            } else {
                None
            },
            heads,
        })
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let y = attend(g, q, k, v, self.heads)?;
        match &self.output {
            Some(o) => o.forward(g, store, y),
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.query.num_params()
            + self.key.num_params()
            + self.value.num_params()
            + self.output.as_ref().map_or(0, Linear::num_params)
    }
}

/// Bias-free multi-head attention on plain tensors:
/// `concat_h softmax(Q_h K_hᵀ / sqrt(d/heads)) V_h · Wo`.
pub fn multi_head_attention<T: Scalar>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    wo: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = [x, wq, wk, wv, wo]
        .into_iter()
        .map(|t| g.input_ref(t))
        .collect();
    let q = g.matmul(vars[0], vars[1])?;
    let k = g.matmul(vars[0], vars[2])?;
    let v = g.matmul(vars[0], vars[3])?;
    let y = attend(&mut g, q, k, v, heads)?;
    let out = g.matmul(y, vars[4])?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_attention_is_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[1, 4], 1.0, &mut rng);
        let w: Vec<_> = (0..4)
            .map(|_| Tensor::<f64>::randn(&[4, 4], 0.5, &mut rng))
            .collect();
        let y = multi_head_attention(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        let expect = matmul(&matmul(&x, &w[2]).unwrap(), &w[3]).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn zero_value_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::<f64>::randn(&[5, 4], 1.0, &mut rng);
        let wq = Tensor::<f64>::randn(&[4, 4], 1.0, &mut rng);
        let wk = Tensor::<f64>::randn(&[4, 4], 1.0, &mut rng);
        let wo = Tensor::<f64>::randn(&[4, 4], 1.0, &mut rng);
        let y = multi_head_attention(&x, &wq, &wk, &Tensor::zeros(&[4, 4]), &wo, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_must_divide_width() {
        let t = Tensor::<f32>::zeros(&[2, 6]);
        let w = Tensor::<f32>::zeros(&[6, 6]);
        assert!(matches!(
            multi_head_attention(&t, &w, &w, &w, &w, 4),
            Err(Error::Config(_))
        ));
    }
}
