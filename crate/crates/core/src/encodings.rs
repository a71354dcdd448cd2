//! Pixel encodings: learned per-channel lookup tables (pix2vec), random
//! Fourier features, and raw continuous values; plus the mask embedding and
//! the cosine-similarity analysis of an encoding.
//!
//! An image token is the sum of three per-channel embeddings plus the input
//! bias: `token = e_R(r) + e_G(g) + e_B(b) + bias`. For pix2vec `e_c` is a
//! table row; for the other two it is the channel's slice of a learned linear
//! projection applied to that channel's raw features.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::imageio::RasterImage;
use crate::nn::Linear;
use crate::param::{Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const CHANNELS: usize = 3;
pub const LEVELS: usize = 256;
pub const EMBEDDING_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Pix2vec,
    Rff,
    Continuous,
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingKind::Pix2vec => "pix2vec",
            EncodingKind::Rff => "rff",
            EncodingKind::Continuous => "continuous",
        })
    }
}

impl FromStr for EncodingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pix2vec" => Ok(EncodingKind::Pix2vec),
            "rff" | "fourier" => Ok(EncodingKind::Rff),
            "continuous" => Ok(EncodingKind::Continuous),
            _ => Err(Error::Config(format!(
                "unknown encoding {s:?} (pix2vec, rff, continuous)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub kind: EncodingKind,
    pub latent_dim: usize,
    pub rff_k: usize,
    pub rff_sigma: f64,
    /// Interval that pixel values 0..=255 are mapped onto before `γ`.
    pub rff_range: [f64; 2],
}

impl Default for EncodingSpec {
    fn default() -> Self {
        EncodingSpec {
            kind: EncodingKind::Pix2vec,
            latent_dim: 128,
            rff_k: 64,
            rff_sigma: 1.0,
            rff_range: [0.0, 1.0],
        }
    }
}

impl EncodingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.kind == EncodingKind::Rff {
            if self.rff_k == 0 {
                return Err(Error::Config("rff_k must be positive".into()));
            }
            if !(self.rff_sigma > 0.0 && self.rff_sigma.is_finite()) {
                return Err(Error::Config(format!(
                    "rff_sigma must be positive, got {}",
                    self.rff_sigma
                )));
            }
            if !(self.rff_range[1] > self.rff_range[0]) {
                return Err(Error::Config(format!(
                    "rff_range must be increasing, got {:?}",
                    self.rff_range
                )));
            }
        }
        Ok(())
    }

    /// Raw per-pixel feature width before the input projection.
    pub fn feature_width(&self) -> usize {
        match self.kind {
            EncodingKind::Pix2vec => LEVELS,
            EncodingKind::Rff => 2 * self.rff_k,
            EncodingKind::Continuous => 1,
        }
    }
}

/// `(v - 127.5) / 127.5`, mapping bytes onto `[-1, 1]`.
pub fn continuous_value(v: u8) -> f64 {
    (v as f64 - 127.5) / 127.5
}

/// `γ(p) = (sin 2πβ₀p, cos 2πβ₀p, …, sin 2πβ_{k-1}p, cos 2πβ_{k-1}p)`.
pub fn rff_gamma(p: f64, betas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * betas.len());
    for &b in betas {
        let (s, c) = (2.0 * std::f64::consts::PI * b * p).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// Frozen Gaussian frequencies `β ~ N(0, σ²)`, one set of `k` per channel.
#[derive(Clone, Debug)]
pub struct FourierBasis<T> {
    betas: Vec<f64>,
    k: usize,
    range: [f64; 2],
    /// `γ(p(v))` for every channel and byte value: `3 × 256 × 2k`.
    table: Vec<T>,
}

impl<T: Scalar> FourierBasis<T> {
    pub fn sample<R: Rng + ?Sized>(
        k: usize,
        sigma: f64,
        range: [f64; 2],
        rng: &mut R,
    ) -> Result<Self> {
        let normal =
            Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("rff_sigma: {e}")))?;
        // rounded through f32 so a checkpoint reproduces the basis exactly
        let betas = (0..CHANNELS * k)
            .map(|_| normal.sample(rng) as f32 as f64)
            .collect();
        Self::from_betas(betas, k, range)
    }

    pub fn from_betas(betas: Vec<f64>, k: usize, range: [f64; 2]) -> Result<Self> {
        if k == 0 || betas.len() != CHANNELS * k {
            return Err(Error::dim("fourier basis", &[CHANNELS, k], &[betas.len()]));
        }
        let mut table = Vec::with_capacity(CHANNELS * LEVELS * 2 * k);
        for c in 0..CHANNELS {
            let channel = &betas[c * k..(c + 1) * k];
            for v in 0..LEVELS {
                let p = normalize(v as u8, range);
                table.extend(rff_gamma(p, channel).into_iter().map(T::of));
            }
        }
        Ok(FourierBasis {
            betas,
            k,
            range,
            table,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn range(&self) -> [f64; 2] {
        self.range
    }

    pub fn betas(&self, channel: usize) -> &[f64] {
        &self.betas[channel * self.k..(channel + 1) * self.k]
    }

    pub fn all_betas(&self) -> &[f64] {
        &self.betas
    }

    /// Precomputed `γ` for a byte value of one channel.
    pub fn gamma(&self, v: u8, channel: usize) -> &[T] {
        let w = 2 * self.k;
        let row = channel * LEVELS + v as usize;
        &self.table[row * w..(row + 1) * w]
    }
}

fn normalize(v: u8, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * v as f64 / 255.0
}

#[derive(Clone, Debug)]
pub enum EncoderParams<T> {
    Pix2vec {
        tables: [ParamId; CHANNELS],
    },
    Continuous {
        projection: Linear,
    },
    Rff {
        basis: FourierBasis<T>,
        projection: Linear,
    },
}

/// Input layer mapping an image to `n × d` tokens.
#[derive(Clone, Debug)]
pub struct InputEncoder<T> {
    pub spec: EncodingSpec,
    pub params: EncoderParams<T>,
    pub mask_embedding: ParamId,
}

impl<T: Scalar> InputEncoder<T> {
    /// Registers the encoder parameters under `encoder.*`. The Fourier basis
    /// is drawn from `basis_rng` only.
    pub fn new<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        spec: &EncodingSpec,
        bias: bool,
        init_rng: &mut R1,
        basis_rng: &mut R2,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.latent_dim;
        let params = match spec.kind {
            EncodingKind::Pix2vec => {
                let mut tables = Vec::with_capacity(CHANNELS);
                for name in ["red", "green", "blue"] {
                    tables.push(store.add_init(
                        format!("encoder.pix2vec.{name}"),
                        &[LEVELS, d],
                        Init::Normal { std: EMBEDDING_STD },
                        init_rng,
                    )?);
                }
                EncoderParams::Pix2vec {
                    tables: [tables[0], tables[1], tables[2]],
                }
            }
            EncodingKind::Continuous => EncoderParams::Continuous {
                projection: Linear::new(store, "encoder.projection", CHANNELS, d, bias, init_rng)?,
            },
            EncodingKind::Rff => {
                let basis =
                    FourierBasis::sample(spec.rff_k, spec.rff_sigma, spec.rff_range, basis_rng)?;
                EncoderParams::Rff {
                    projection: Linear::new(
                        store,
                        "encoder.projection",
                        CHANNELS * 2 * spec.rff_k,
                        d,
                        bias,
                        init_rng,
                    )?,
                    basis,
                }
            }
        };
        let mask_embedding = store.add_init(
            "encoder.mask",
            &[d],
            Init::Normal { std: EMBEDDING_STD },
            init_rng,
        )?;
        Ok(InputEncoder {
            spec: spec.clone(),
            params,
            mask_embedding,
        })
    }

    pub fn basis(&self) -> Option<&FourierBasis<T>> {
        match &self.params {
            EncoderParams::Rff { basis, .. } => Some(basis),
            _ => None,
        }
    }

    /// Raw features of one channel value before any learned map: the
    /// continuous scalar, `γ(p)`, or a one-hot vector for pix2vec.
    pub fn pixel_features(&self, v: u8, channel: usize) -> Result<Vec<T>> {
        check_channel(channel)?;
        Ok(match &self.params {
            EncoderParams::Pix2vec { .. } => {
                let mut onehot = vec![T::zero(); LEVELS];
                onehot[v as usize] = T::one();
                onehot
            }
            EncoderParams::Continuous { .. } => vec![T::of(continuous_value(v))],
            EncoderParams::Rff { basis, .. } => basis.gamma(v, channel).to_vec(),
        })
    }

    /// Pre-combination embedding `e_c(v)` of one channel value.
    pub fn encode_pixel_value(
        &self,
        store: &ParamStore<T>,
        v: usize,
        channel: usize,
    ) -> Result<Vec<T>> {
        check_channel(channel)?;
        let v = u8::try_from(v)
            .map_err(|_| Error::Input(format!("pixel value {v} outside 0..=255")))?;
        let d = self.spec.latent_dim;
        match &self.params {
            EncoderParams::Pix2vec { tables } => {
                Ok(store.value(tables[channel]).row(v as usize).to_vec())
            }
            EncoderParams::Continuous { projection } | EncoderParams::Rff { projection, .. } => {
                let feats = self.pixel_features(v, channel)?;
                let w = store.value(projection.weight).data();
                let first_row = channel * feats.len();
                let mut out = vec![T::zero(); d];
                for (i, &f) in feats.iter().enumerate() {
                    let row = &w[(first_row + i) * d..(first_row + i + 1) * d];
                    for (o, &wv) in out.iter_mut().zip(row) {
                        *o += f * wv;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Vectors compared by the similarity analysis for one channel: the
    /// pix2vec rows, or `e_c(v) + bias` for the projected encodings.
    pub fn similarity_vectors(
        &self,
        store: &ParamStore<T>,
        channel: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let bias = match &self.params {
            EncoderParams::Continuous { projection } | EncoderParams::Rff { projection, .. } => {
                projection.bias
            }
            EncoderParams::Pix2vec { .. } => None,
        };
        (0..LEVELS)
            .map(|v| {
                let mut e = self.encode_pixel_value(store, v, channel)?;
                if let Some(b) = bias {
                    for (o, &bv) in e.iter_mut().zip(store.value(b).data()) {
                        *o += bv;
                    }
                }
                Ok(e.into_iter().map(Scalar::f64).collect())
            })
            .collect()
    }

    /// Encodes a channel-planar `3 × n` image into `n × d` tokens, replacing
    /// the tokens listed in `mask` with the mask embedding.
    pub fn encode_image<'a>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        image: &[u8],
        mask: &[usize],
    ) -> Result<Var> {
        if image.is_empty() || image.len() % CHANNELS != 0 {
            return Err(Error::Input(format!(
                "image byte length {} is not 3·n",
                image.len()
            )));
        }
        let n = image.len() / CHANNELS;
        if let Some(&bad) = mask.iter().find(|&&i| i >= n) {
            return Err(Error::Input(format!("mask index {bad} outside 0..{n}")));
        }
        let tokens = match &self.params {
            EncoderParams::Pix2vec { tables } => {
                let mut acc = None;
                for (c, &table) in tables.iter().enumerate() {
                    let idx: Vec<usize> = image[c * n..(c + 1) * n]
                        .iter()
                        .map(|&v| v as usize)
                        .collect();
                    let t = g.param(store, table);
                    let rows = g.gather_rows(t, &idx)?;
                    acc = Some(match acc {
                        None => rows,
                        Some(prev) => g.add(prev, rows)?,
                    });
                }
                acc.expect("three channels")
            }
            EncoderParams::Continuous { projection } => {
                let feats = Tensor::from_fn(&[n, CHANNELS], |i| {
                    T::of(continuous_value(image[(i % CHANNELS) * n + i / CHANNELS]))
                });
                let x = g.constant(feats);
                projection.forward(g, store, x)?
            }
            EncoderParams::Rff { basis, projection } => {
                let w = 2 * basis.k();
                let mut feats = Vec::with_capacity(n * CHANNELS * w);
                for i in 0..n {
                    for c in 0..CHANNELS {
                        feats.extend_from_slice(basis.gamma(image[c * n + i], c));
                    }
                }
                let x = g.constant(Tensor::new(vec![n, CHANNELS * w], feats)?);
                projection.forward(g, store, x)?
            }
        };
        if mask.is_empty() {
            return Ok(tokens);
        }
        let m = g.param(store, self.mask_embedding);
        g.replace_rows(tokens, m, mask)
    }

    pub fn num_params(&self) -> usize {
        let d = self.spec.latent_dim;
        let body = match &self.params {
            EncoderParams::Pix2vec { .. } => CHANNELS * LEVELS * d,
            EncoderParams::Continuous { projection } | EncoderParams::Rff { projection, .. } => {
                projection.num_params()
            }
        };
        body + d
    }
}

fn check_channel(channel: usize) -> Result<()> {
    if channel >= CHANNELS {
        return Err(Error::Input(format!("channel {channel} outside 0..3")));
    }
    Ok(())
}

/// Untrained encodings compared in the distance-preservation analysis.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceEncoding {
    OneHot,
    /// The raw scalar `(v - 127.5) / 127.5`.
    Continuous,
    Fourier {
        k: usize,
        sigma: f64,
        seed: u64,
    },
}

impl ReferenceEncoding {
    pub fn vectors(&self) -> Result<Vec<Vec<f64>>> {
        Ok(match self {
            ReferenceEncoding::OneHot => (0..LEVELS)
                .map(|v| {
                    let mut e = vec![0.0; LEVELS];
                    e[v] = 1.0;
                    e
                })
                .collect(),
            ReferenceEncoding::Continuous => (0..LEVELS)
                .map(|v| vec![continuous_value(v as u8)])
                .collect(),
            ReferenceEncoding::Fourier { k, sigma, seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let basis = FourierBasis::<f64>::sample(*k, *sigma, [0.0, 1.0], &mut rng)?;
                (0..LEVELS)
                    .map(|v| basis.gamma(v as u8, 0).to_vec())
                    .collect()
            }
        })
    }
}

/// `a·b / sqrt(|a|²|b|²)`, or 0 when either vector is zero. Identical
/// vectors give exactly 1.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

/// `256 × 256` cosine similarities between the encodings of byte values.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    values: Vec<f64>,
    /// Values whose encoding had zero norm; their rows and columns are 0.
    pub zero_norm: Vec<usize>,
}

pub fn similarity_matrix(vectors: &[Vec<f64>]) -> SimilarityMatrix {
    let size = vectors.len();
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let zero_norm: Vec<usize> = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut values = vec![0.0; size * size];
    for a in 0..size {
        for b in a..size {
            let s = if norms[a] == 0.0 || norms[b] == 0.0 {
                0.0
            } else if a == b {
                1.0
            } else {
                cosine_similarity(&vectors[a], &vectors[b])
            };
            values[a * size + b] = s;
            values[b * size + a] = s;
        }
    }
    SimilarityMatrix {
        size,
        values,
        zero_norm,
    }
}

/// Grayscale level for a similarity in `[-1, 1]`.
pub fn similarity_to_byte(s: f64) -> u8 {
    ((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        for row in self.values.chunks(self.size) {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(bytes);
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in r.deserialize::<Vec<f64>>() {
            values.extend(rec.map_err(|e| Error::Format(e.to_string()))?);
            rows += 1;
        }
        if rows == 0 || values.len() != rows * rows {
            return Err(Error::Format(format!(
                "similarity CSV is not square ({rows} rows, {} values)",
                values.len()
            )));
        }
        Ok(SimilarityMatrix {
            size: rows,
            values,
            zero_norm: Vec::new(),
        })
    }

    pub fn to_pgm(&self) -> RasterImage {
        let pixels = self.values.iter().map(|&s| similarity_to_byte(s)).collect();
        RasterImage::new(self.size, self.size, 1, pixels).expect("square raster")
    }

    pub fn save(&self, csv_path: &Path, pgm_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()?).map_err(|e| Error::io(csv_path, e))?;
        self.to_pgm().save(pgm_path)
    }
}

/// Numerical rank by Gaussian elimination with full pivoting; pivots below
/// `rel_tol · max|a_ij|` count as zero.
pub fn matrix_rank(rows: &[Vec<f64>], rel_tol: f64) -> usize {
    let m = rows.len();
    if m == 0 {
        return 0;
    }
    let n = rows[0].len();
    let mut a: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let tol = rel_tol * scale;
    let mut rank = 0;
    let mut cols: Vec<usize> = (0..n).collect();
    for r in 0..m.min(n) {
        let (mut best, mut bi, mut bj) = (0.0, r, r);
        for i in r..m {
            for (j, &c) in cols.iter().enumerate().skip(r) {
                let v = a[i * n + c].abs();
                if v > best {
                    (best, bi, bj) = (v, i, j);
                }
            }
        }
        if best <= tol {
            break;
        }
        for j in 0..n {
            a.swap(r * n + j, bi * n + j);
        }
        cols.swap(r, bj);
        let pc = cols[r];
        let pivot = a[r * n + pc];
        for i in r + 1..m {
            let f = a[i * n + pc] / pivot;
            if f != 0.0 {
                for j in 0..n {
                    a[i * n + j] -= f * a[r * n + j];
                }
            }
        }
        rank += 1;
    }
    rank
}
