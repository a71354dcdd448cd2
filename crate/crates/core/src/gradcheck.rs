//! Central finite-difference checks of the analytic gradients.
//!
//! The error per coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`
//! and the checks return the maximum over the sampled coordinates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Which coordinates of each tensor to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most this many coordinates per tensor, drawn without replacement.
    Sample {
        per_tensor: usize,
        seed: u64,
    },
}

fn pick(numel: usize, coords: Coords, salt: u64) -> Vec<usize> {
    match coords {
        Coords::All => (0..numel).collect(),
        Coords::Sample { per_tensor, .. } if per_tensor >= numel => (0..numel).collect(),
        Coords::Sample { per_tensor, seed } => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut idx = sample(&mut rng, numel, per_tensor).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks `d f / d inputs` where `f` builds a scalar from leaf inputs.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], step: f64, coords: Coords) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (t, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt_or_zero(&g, v);
        for i in pick(inputs[t].numel(), coords, t as u64) {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Checks `d f / d params` for every parameter of a store.
pub fn finite_diff_check_params<F>(
    f: F,
    store: &ParamStore<f64>,
    step: f64,
    coords: Coords,
) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).data()[0])
    };

    let mut acc: Vec<Tensor<f64>> = store
        .iter()
        .map(|(_, p)| Tensor::zeros(p.value.shape()))
        .collect();
    {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        let grads = g.backward(loss)?;
        g.accumulate_param_grads(&grads, &mut acc);
    }

    let mut worst = 0.0f64;
    let mut work = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for i in pick(store.value(id).numel(), coords, id.index() as u64) {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_error(acc[id.index()].data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 8.0]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let s = g.scale(v[0], 3.25);
                Ok(g.sum(s))
            },
            &[x],
            1e-3,
            Coords::All,
        )
        .unwrap();
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn product_rule_for_both_inputs() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::new(vec![2], vec![3.0, -4.0]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let p = g.mul(v[0], v[1])?;
                Ok(g.sum(p))
            },
            &[x, c],
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(err < 1e-8);
    }
}
