//! Library results checked against independent, deliberately naive code.

use isobench_core::encodings::{
    cosine_similarity, rff_gamma, similarity_matrix, similarity_to_byte, FourierBasis,
    ReferenceEncoding,
};
use isobench_core::gradcheck::{finite_diff_check, Coords};
use isobench_core::nn::multi_head_attention;
use isobench_core::probing::mean_pool;
use isobench_core::tensor::{conv2d, gelu_scalar, layer_norm, matmul, softmax};
use isobench_core::training::{bert_loss, BertBatch, MaskSample};
use isobench_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn matmul_equals_triple_loop_exactly() {
    let mut r = rng(1);
    let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[4, 2], 1.0, &mut r);
    let got = matmul(&a, &b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            }
            assert_eq!(got.data()[i * 2 + j], s);
        }
    }
}

#[test]
fn matmul_agrees_with_nalgebra() {
    let mut r = rng(2);
    for _ in 0..10 {
        let (m, k, n) = (r.gen_range(1..20), r.gen_range(1..20), r.gen_range(1..20));
        let a = Tensor::<f64>::randn(&[m, k], 1.0, &mut r);
        let b = Tensor::<f64>::randn(&[k, n], 1.0, &mut r);
        let na = nalgebra::DMatrix::from_row_slice(m, k, a.data());
        let nb = nalgebra::DMatrix::from_row_slice(k, n, b.data());
        let prod = na * nb;
        let expect: Vec<f64> = (0..m * n).map(|i| prod[(i / n, i % n)]).collect();
        assert!(max_diff(matmul(&a, &b).unwrap().data(), &expect) < 1e-12);
    }
}

#[test]
fn conv2d_equals_nested_loops() {
    let mut r = rng(3);
    let x = Tensor::<f64>::randn(&[2, 5, 5], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[3], 1.0, &mut r);
    let got = conv2d(&x, &w, Some(&b)).unwrap();
    assert_eq!(got.shape(), &[3, 5, 5]);
    let mut worst = 0.0f64;
    for o in 0..3 {
        for y in 0..5i32 {
            for xx in 0..5i32 {
                let mut s = b.data()[o];
                for c in 0..2 {
                    for ky in 0..3i32 {
                        for kx in 0..3i32 {
                            let (sy, sx) = (y + ky - 1, xx + kx - 1);
                            if (0..5).contains(&sy) && (0..5).contains(&sx) {
                                s += w.data()[((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize]
                                    * x.data()[(c * 5 + sy as usize) * 5 + sx as usize];
                            }
                        }
                    }
                }
                worst = worst.max((got.data()[(o * 5 + y as usize) * 5 + xx as usize] - s).abs());
            }
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn layer_norm_equals_direct_formula() {
    let mut r = rng(4);
    let x = Tensor::<f64>::randn(&[1, 4], 3.0, &mut r);
    let ones = Tensor::ones(&[4]);
    let zeros = Tensor::zeros(&[4]);
    let got = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
    let v = x.data();
    let mean = v.iter().sum::<f64>() / 4.0;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
    let expect: Vec<f64> = v.iter().map(|a| (a - mean) / (var + 1e-5).sqrt()).collect();
    assert!(max_diff(got.data(), &expect) < 1e-12);
}

/// Maclaurin series; converges quickly for |x| ≤ 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn gelu_matches_series_erf() {
    for x in [-2.5, -1.0, -0.3, 0.0, 0.7, 1.0, 2.0] {
        let expect = 0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((gelu_scalar(x) - expect).abs() < 1e-14, "x={x}");
    }
    assert!((gelu_scalar(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
}

#[test]
fn softmax_equals_exp_over_sum() {
    let mut r = rng(5);
    let x = Tensor::<f64>::randn(&[1, 5], 2.0, &mut r);
    let total: f64 = x.data().iter().map(|v| v.exp()).sum();
    let expect: Vec<f64> = x.data().iter().map(|v| v.exp() / total).collect();
    assert!(max_diff(softmax(&x).data(), &expect) < 1e-12);
}

#[test]
fn attention_equals_per_head_loops() {
    let (n, d, heads) = (4, 8, 2);
    let dh = d / heads;
    let mut r = rng(6);
    let x = Tensor::<f64>::randn(&[n, d], 1.0, &mut r);
    let w: Vec<Tensor<f64>> = (0..4)
        .map(|_| Tensor::randn(&[d, d], 0.5, &mut r))
        .collect();
    let got = multi_head_attention(&x, &w[0], &w[1], &w[2], &w[3], heads).unwrap();

    let proj = |m: &Tensor<f64>| {
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                for k in 0..d {
                    out[i * d + j] += x.data()[i * d + k] * m.data()[k * d + j];
                }
            }
        }
        out
    };
    let (q, k, v) = (proj(&w[0]), proj(&w[1]), proj(&w[2]));
    let mut y = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            let mut s = vec![0.0; n];
            for (j, sj) in s.iter_mut().enumerate() {
                for c in 0..dh {
                    *sj += q[i * d + h * dh + c] * k[j * d + h * dh + c];
                }
                *sj /= (dh as f64).sqrt();
            }
            let z: f64 = s.iter().map(|a| a.exp()).sum();
            for c in 0..dh {
                y[i * d + h * dh + c] =
                    (0..n).map(|j| s[j].exp() / z * v[j * d + h * dh + c]).sum();
            }
        }
    }
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            for c in 0..d {
                out[i * d + j] += y[i * d + c] * w[3].data()[c * d + j];
            }
        }
    }
    assert!(max_diff(got.data(), &out) < 1e-10);
}

#[test]
fn value_used_twice_sums_both_paths() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[3.0, -4.0, 0.5]);
}

#[test]
fn composite_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let inputs = vec![
            Tensor::<f64>::randn(&[2, 4, 4], 1.0, &mut r), // image
            Tensor::randn(&[3, 2, 3, 3], 0.5, &mut r),     // kernel
            Tensor::randn(&[3], 0.5, &mut r),              // conv bias
            Tensor::randn(&[3], 0.5, &mut r),              // LN gain
            Tensor::randn(&[3], 0.5, &mut r),              // LN shift
            Tensor::randn(&[3, 5], 0.5, &mut r),           // projection
        ];
        let targets: Vec<usize> = (0..16).map(|_| r.gen_range(0..5)).collect();
        let err = finite_diff_check(
            |g, v| {
                let c = g.conv2d(v[0], v[1], Some(v[2]))?;
                let flat = g.reshape(c, &[3, 16])?;
                let tokens = g.transpose(flat)?;
                let n = g.layer_norm(tokens, v[3], v[4], 1e-5)?;
                let a = g.gelu(n);
                let logits = g.matmul(a, v[5])?;
                g.cross_entropy(logits, &targets, 5, 1.0 / 16.0)
            },
            &inputs,
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn two_class_single_pixel_cross_entropy() {
    let logits = [0.3f64, -1.2];
    let mut g = Graph::<f64>::new();
    let l = g.input(Tensor::new(vec![1, 2], logits.to_vec()).unwrap());
    let loss = g.cross_entropy(l, &[1], 2, 1.0).unwrap();
    let expect = -(logits[1].exp() / (logits[0].exp() + logits[1].exp())).ln();
    assert!((g.value(loss).data()[0] - expect).abs() < 1e-12);
}

#[test]
fn bert_loss_is_mean_negative_log_likelihood_over_masked_pixels() {
    let mut r = rng(7);
    let n = 6;
    let image: Vec<u8> = (0..3 * n).map(|_| r.gen()).collect();
    let logits = Tensor::<f64>::randn(&[n, 3, 256], 1.0, &mut r);
    let mask = MaskSample {
        indices: vec![1, 4],
    };
    let mut expect = 0.0;
    for &i in &mask.indices {
        for c in 0..3 {
            let row = &logits.data()[(i * 3 + c) * 256..(i * 3 + c + 1) * 256];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect -= (row[image[c * n + i] as usize].exp() / z).ln();
        }
    }
    expect /= mask.indices.len() as f64;
    let batch = BertBatch {
        images: vec![&image],
        masks: vec![mask],
    };
    let got = bert_loss(&[logits], &batch).unwrap();
    assert!((got.loss - expect).abs() < 1e-12);
    assert_eq!(got.masked, 2);
}

#[test]
fn mean_pool_equals_sum_over_tokens() {
    let mut r = rng(8);
    let act = Tensor::<f64>::randn(&[1024, 16], 1.0, &mut r);
    let pooled = mean_pool(&act).unwrap();
    for j in 0..16 {
        let s: f64 = (0..1024).map(|i| act.data()[i * 16 + j]).sum();
        assert!((pooled[j] - s / 1024.0).abs() < 1e-6);
    }
}

#[test]
fn fourier_features_have_squared_norm_k() {
    let basis = FourierBasis::<f64>::sample(64, 1.0, [0.0, 1.0], &mut rng(9)).unwrap();
    for p in [0.0, 0.123, 0.5, 0.999] {
        let g = rff_gamma(p, basis.betas(1));
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        assert!((norm2 - 64.0).abs() < 1e-9);
    }
}

/// Mean |S[a][b]| over pairs further apart than `gap`.
fn far_band(s: &isobench_core::encodings::SimilarityMatrix, gap: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for a in 0..256usize {
        for b in 0..256usize {
            if a.abs_diff(b) > gap {
                total += s.get(a, b).abs();
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn fourier_bandwidth_follows_sigma() {
    let kernel = |sigma: f64, delta: f64| {
        (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * delta * delta).exp()
    };
    let wide = similarity_matrix(
        &ReferenceEncoding::Fourier {
            k: 4096,
            sigma: 10.0,
            seed: 1,
        }
        .vectors()
        .unwrap(),
    );
    assert!(kernel(10.0, 26.0 / 255.0) < 0.01);
    assert!(far_band(&wide, 25) < 0.2);
    let narrow = similarity_matrix(
        &ReferenceEncoding::Fourier {
            k: 4096,
            sigma: 0.1,
            seed: 1,
        }
        .vectors()
        .unwrap(),
    );
    assert!(kernel(0.1, 1.0) > 0.8);
    assert!(narrow.get(0, 255) > 0.5);
}

#[test]
fn fourier_similarity_decays_with_distance() {
    let s = similarity_matrix(
        &ReferenceEncoding::Fourier {
            k: 4096,
            sigma: 1.0,
            seed: 2,
        }
        .vectors()
        .unwrap(),
    );
    // average each diagonal, then check it tracks the Gaussian kernel
    let mut prev = f64::INFINITY;
    for gap in (0..256).step_by(16) {
        let mean = (0..256 - gap).map(|a| s.get(a, a + gap)).sum::<f64>() / (256 - gap) as f64;
        let expect = (-2.0 * std::f64::consts::PI.powi(2) * (gap as f64 / 255.0).powi(2)).exp();
        assert!(
            (mean - expect).abs() < 0.05,
            "gap {gap}: {mean} vs {expect}"
        );
        assert!(mean <= prev + 0.05);
        prev = mean;
    }
}

#[test]
fn cosine_similarity_of_orthogonal_and_opposite_vectors() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    assert_eq!(cosine_similarity(&[1.0, -2.0], &[-1.0, 2.0]), -1.0);
    assert_eq!(similarity_to_byte(1.0), 255);
    assert_eq!(similarity_to_byte(-1.0), 0);
}
