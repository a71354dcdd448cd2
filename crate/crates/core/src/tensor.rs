//! Dense row-major tensors and the raw numeric kernels behind the graph ops.
//!
//! Kernels here are plain functions over slices. Shape validation happens in
//! the public wrappers, which return [`Error::Dimension`] naming both shapes.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Floating point element type. Training runs in `f32`; oracle and gradient
/// tests run in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + MulAssign
    + 'static
{
    fn erf(self) -> Self;

    /// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n` (all
    /// row-major). A `*_t` flag means the operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        beta: Self,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // logical operand is rows×cols
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        a_t: bool,
        b: &[f32],
        b_t: bool,
        c: &mut [f32],
        beta: f32,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(m, k, a_t);
        let (rsb, csb) = strides(k, n, b_t);
        // SAFETY: lengths checked above, strides describe in-bounds layouts.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        a_t: bool,
        b: &[f64],
        b_t: bool,
        c: &mut [f64],
        beta: f64,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(m, k, a_t);
        let (rsb, csb) = strides(k, n, b_t);
        // SAFETY: lengths checked above, strides describe in-bounds layouts.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Input(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(z * std)
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Input(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_inplace(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> &[T] {
        let cols = *self.shape.last().unwrap();
        &self.data[r * cols..(r + 1) * cols]
    }
}

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(
        m,
        k,
        n,
        a.data(),
        false,
        b.data(),
        false,
        out.data_mut(),
        T::zero(),
    );
    Ok(out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = a.dims2()?;
    let mut out = vec![T::zero(); r * c];
    transpose_into(a.data(), r, c, &mut out);
    Tensor::new(vec![c, r], out)
}

pub(crate) fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const TILE: usize = 32;
    for i0 in (0..rows).step_by(TILE) {
        for j0 in (0..cols).step_by(TILE) {
            for i in i0..(i0 + TILE).min(rows) {
                for j in j0..(j0 + TILE).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

/// Geometry of a stride-1, "same"-padded 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize]) -> Result<Self> {
        let [c_in, height, width] = x_shape[..] else {
            return Err(Error::Input(format!(
                "conv2d input must be c×h×w, got {x_shape:?}"
            )));
        };
        let [c_out, wc_in, kh, kw] = w_shape[..] else {
            return Err(Error::Input(format!(
                "conv2d kernel must be o×i×kh×kw, got {w_shape:?}"
            )));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel extents must be odd, got {kh}×{kw}"
            )));
        }
        if wc_in != c_in {
            return Err(Error::dim("conv2d", x_shape, w_shape));
        }
        Ok(ConvGeometry {
            c_in,
            c_out,
            height,
            width,
            kh,
            kw,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds `x: c×h×w` into `cols: (c·kh·kw)×(h·w)` with zero padding.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let hw = g.positions();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..g.kh as isize {
            for kj in 0..g.kw as isize {
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ki - ph;
                    let line = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (xo, out) in line.iter_mut().enumerate() {
                        let sx = xo as isize + kj - pw;
                        *out = if sx < 0 || sx >= w {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `dx` (accumulating).
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let hw = g.positions();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ki in 0..g.kh as isize {
            for kj in 0..g.kw as isize {
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ki - ph;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo + kj - pw;
                        if sx >= 0 && sx < w {
                            plane[(sy * w + sx) as usize] += src[(y * w + xo) as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Stride-1 "same" cross-correlation plus per-output-channel bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape())?;
    if let Some(b) = b {
        if b.shape() != [g.c_out] {
            return Err(Error::dim("conv2d bias", w.shape(), b.shape()));
        }
    }
    let (out, _) = conv2d_forward(x.data(), w.data(), b.map(|b| b.data()), &g);
    Tensor::new(vec![g.c_out, g.height, g.width], out)
}

/// Returns the output plus the unfolded patches needed for backward.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    g: &ConvGeometry,
) -> (Vec<T>, Vec<T>) {
    let hw = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * hw];
    im2col(x, g, &mut cols);
    let mut out = vec![T::zero(); g.c_out * hw];
    if let Some(b) = b {
        for (o, plane) in out.chunks_mut(hw).enumerate() {
            plane.fill(b[o]);
        }
    }
    T::gemm(
        g.c_out,
        g.patch_len(),
        hw,
        w,
        false,
        &cols,
        false,
        &mut out,
        T::one(),
    );
    (out, cols)
}

/// Normalization statistics for each row of a `rows×d` buffer.
pub(crate) struct RowStats<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &[T],
    d: usize,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> (Vec<T>, RowStats<T>) {
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().copied().sum::<T>() * inv_d;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xs[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + shift[j];
        }
    }
    (out, RowStats { xhat, rstd })
}

/// Layer normalization over the last axis.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap();
    if gain.shape() != [d] || shift.shape() != [d] {
        return Err(Error::dim("layer_norm", x.shape(), gain.shape()));
    }
    let (out, _) = layer_norm_forward(x.data(), d, gain.data(), shift.data(), T::of(eps));
    Tensor::new(x.shape().to_vec(), out)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)` with `Φ` from `erf`.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * T::of(0.5) * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf());
    let pdf = T::of(FRAC_1_SQRT_2PI) * (-(x * x) * T::of(0.5)).exp();
    cdf + x * pdf
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        let inv = T::one() / total;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    out
}

/// Softmax over the last axis, stabilized by max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().unwrap();
    Tensor {
        shape: x.shape().to_vec(),
        data: softmax_rows(x.data(), n),
    }
}

/// `log Σ exp(x)` of one row.
pub(crate) fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}
