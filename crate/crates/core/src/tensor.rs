//! Dense row-major `f64` arrays and the small set of kernels the rest of the
//! crate is built on: matrix product, row softmax, layer normalization, a real
//! 2-D FFT and a central finite-difference gradient.
//!
//! All reductions run in a fixed left-to-right order so results are
//! reproducible bit for bit.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};

/// Dense array of `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "Tensor::new",
                index,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(dim("dims2", format!("expected 2-D tensor, got {other:?}"))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim(
                "reshape",
                format!("cannot view {} values as {shape:?}", self.data.len()),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[self.shape.len() - 1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_finite(self, op: &'static str) -> Result<Self> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { op, index }),
            None => Ok(self),
        }
    }
}

/// Textbook matrix product; the inner sum runs left to right over `k`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(dim("matmul", format!("{m}x{k} times {k2}x{n}")));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = 0.0;
            for (p, &av) in arow.iter().enumerate() {
                acc += av * b.data[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
    .check_finite("matmul")
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul(&a.transpose()?, b)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul(a, &b.transpose()?)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2()?;
    if let Some(index) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "softmax_rows",
            index,
        });
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &m.data[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[i * c..(i + 1) * c];
        let mut total = 0.0;
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in dst.iter_mut() {
            *o /= total;
        }
    }
    Ok(Tensor {
        shape: vec![r, c],
        data: out,
    })
}

/// Normalizes every vector along the last axis to zero mean and unit
/// (population) variance.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape.last().unwrap_or(&0);
    if d < 2 {
        return Err(dim("layer_norm", format!("feature width {d} < 2")));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut out = x.data.clone();
    for token in out.chunks_mut(d) {
        let (mean, var) = mean_var(token);
        let inv = 1.0 / (var + eps).sqrt();
        for v in token.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
    .check_finite("layer_norm")
}

/// Two-pass mean and population variance.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

/// Derivative of [`silu`].
#[inline]
pub fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

/// Non-redundant half plane of a real 2-D DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    pub rows: usize,
    pub cols: usize,
    /// `rows × (cols/2 + 1)` bins, row-major.
    pub bins: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn half_cols(&self) -> usize {
        self.cols / 2 + 1
    }

    pub fn bin(&self, ky: usize, kx: usize) -> Complex64 {
        self.bins[ky * self.half_cols() + kx]
    }

    /// How many times a half-plane column appears in the full spectrum.
    pub fn column_multiplicity(&self, kx: usize) -> f64 {
        let nyquist = self.cols % 2 == 0 && kx == self.cols / 2;
        if kx == 0 || nyquist {
            1.0
        } else {
            2.0
        }
    }

    /// Sum of `|X|²` over the full (conjugate-symmetric) plane.
    pub fn full_plane_power(&self) -> f64 {
        let hc = self.half_cols();
        let mut total = 0.0;
        for ky in 0..self.rows {
            for kx in 0..hc {
                total += self.column_multiplicity(kx) * self.bins[ky * hc + kx].norm_sqr();
            }
        }
        total
    }
}

/// Real 2-D FFT over a `rows × cols` field.
pub fn rfft2(field: &Tensor) -> Result<Spectrum2D> {
    let (r, c) = field.dims2()?;
    if r == 0 || c == 0 {
        return Err(dim("rfft2", "empty field"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(c);
    let col_fft = planner.plan_fft_forward(r);
    let hc = c / 2 + 1;
    let mut half = vec![Complex64::new(0.0, 0.0); r * hc];
    let mut line = vec![Complex64::new(0.0, 0.0); c];
    for i in 0..r {
        for (dst, &v) in line.iter_mut().zip(field.row(i)) {
            *dst = Complex64::new(v, 0.0);
        }
        row_fft.process(&mut line);
        half[i * hc..(i + 1) * hc].copy_from_slice(&line[..hc]);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); r];
    for kx in 0..hc {
        for ky in 0..r {
            col[ky] = half[ky * hc + kx];
        }
        col_fft.process(&mut col);
        for ky in 0..r {
            half[ky * hc + kx] = col[ky];
        }
    }
    Ok(Spectrum2D {
        rows: r,
        cols: c,
        bins: half,
    })
}

/// Central-difference gradient `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h` for every
/// coordinate of `theta`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, theta: &Tensor, h: f64) -> Result<Tensor> {
    let indices: Vec<usize> = (0..theta.len()).collect();
    let partials = finite_diff_partials(f, theta, h, &indices)?;
    Ok(Tensor {
        shape: theta.shape.clone(),
        data: partials,
    })
}

/// Central differences restricted to the listed coordinates.
pub fn finite_diff_partials(
    f: impl Fn(&Tensor) -> f64,
    theta: &Tensor,
    h: f64,
    indices: &[usize],
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite difference step must be > 0, got {h}")));
    }
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= theta.len() {
            return Err(Error::Index {
                what: "finite_diff_partials",
                index: i,
                len: theta.len(),
            });
        }
        let x0 = theta.data[i];
        probe.data[i] = x0 + h;
        let fp = f(&probe);
        probe.data[i] = x0 - h;
        let fm = f(&probe);
        probe.data[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_grad",
                index: i,
            });
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let m = random(&[3, 3], 1);
        assert_eq!(matmul(&Tensor::identity(3), &m).unwrap(), m);
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[5, 7], 2);
        let b = random(&[7, 3], 3);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.at2(i, k) * b.at2(k, j);
                }
                assert!((c.at2(i, j) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn matmul_is_associative() {
        let a = random(&[4, 6], 4);
        let b = random(&[6, 5], 5);
        let c = random(&[5, 3], 6);
        let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = l.max_abs();
        for (x, y) in l.data().iter().zip(r.data()) {
            assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let s = softmax_rows(&Tensor::from_rows(&[&[3.0, 3.0, 3.0, 3.0]])).unwrap();
        assert!(s.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let s = softmax_rows(&Tensor::from_rows(&[&[0.0, 1000.0]])).unwrap();
        assert!(s.data()[0] < 1e-300 && (s.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_match_direct_formula() {
        let m = random(&[3, 4], 7);
        let s = softmax_rows(&m).unwrap();
        for i in 0..3 {
            let row = m.row(i);
            // Direct evaluation without max subtraction; values are small.
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let total: f64 = s.row(i).iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            for (j, &v) in row.iter().enumerate() {
                assert!((s.at2(i, j) - v.exp() / z).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let m = random(&[3, 5], 8);
        let shifted = m.map(|v| v + 17.25);
        let a = softmax_rows(&m).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut m = Tensor::zeros(&[1, 2]);
        m.data_mut()[1] = f64::NAN;
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let c = layer_norm(&Tensor::from_rows(&[&[2.5, 2.5, 2.5]]), 1e-5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let eps = 1e-5;
        let u = layer_norm(&Tensor::from_rows(&[&[1.0, -1.0]]), eps).unwrap();
        let k = 1.0 / (1.0 + eps).sqrt();
        assert!((u.data()[0] - k).abs() < 1e-15 && (u.data()[1] + k).abs() < 1e-15);
        assert!(layer_norm(&Tensor::from_rows(&[&[1.0]]), eps).is_err());
    }

    #[test]
    fn layer_norm_moments_and_idempotence() {
        let x = random(&[4, 16], 9).map(|v| 3.0 * v + 0.7);
        let y = layer_norm(&x, 1e-9).unwrap();
        for i in 0..4 {
            let (m, v) = mean_var(y.row(i));
            assert!(m.abs() <= 1e-10);
            assert!((v - 1.0).abs() <= 1e-6);
        }
        let yy = layer_norm(&y, 1e-9).unwrap();
        for (a, b) in y.data().iter().zip(yy.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    fn naive_dft2(field: &Tensor) -> Vec<Complex64> {
        let (r, c) = field.dims2().unwrap();
        let mut out = vec![Complex64::new(0.0, 0.0); r * c];
        for ky in 0..r {
            for kx in 0..c {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..r {
                    for x in 0..c {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * ((ky * y) as f64 / r as f64 + (kx * x) as f64 / c as f64);
                        acc += field.at2(y, x) * Complex64::from_polar(1.0, phase);
                    }
                }
                out[ky * c + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn rfft2_matches_naive_dft() {
        for (r, c, seed) in [(8, 8, 10), (6, 5, 11), (4, 12, 12), (1, 7, 13)] {
            let f = random(&[r, c], seed);
            let s = rfft2(&f).unwrap();
            let full = naive_dft2(&f);
            let scale = full.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert_eq!(s.bins.len(), r * (c / 2 + 1));
            for ky in 0..r {
                for kx in 0..c / 2 + 1 {
                    let d = (s.bin(ky, kx) - full[ky * c + kx]).norm();
                    assert!(d <= 1e-9 * scale, "({r},{c}) bin ({ky},{kx}) off by {d}");
                }
            }
        }
    }

    #[test]
    fn rfft2_flat_field_and_pure_tone() {
        let f = Tensor::new(vec![4, 8], vec![0.75; 32]).unwrap();
        let s = rfft2(&f).unwrap();
        assert!((s.bin(0, 0).re - 0.75 * 32.0).abs() < 1e-12);
        for (i, z) in s.bins.iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {i}");
        }
        let mut tone = Tensor::zeros(&[8, 8]);
        for y in 0..8 {
            for x in 0..8 {
                tone.set2(y, x, (2.0 * std::f64::consts::PI * 2.0 * x as f64 / 8.0).cos());
            }
        }
        let s = rfft2(&tone).unwrap();
        for ky in 0..8 {
            for kx in 0..5 {
                let expect = if ky == 0 && kx == 2 { 32.0 } else { 0.0 };
                assert!((s.bin(ky, kx).norm() - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rfft2_parseval() {
        for (r, c, seed) in [(8, 8, 20), (5, 6, 21), (16, 3, 22)] {
            let f = random(&[r, c], seed);
            let spatial: f64 = f.data().iter().map(|v| v * v).sum();
            let spectral = rfft2(&f).unwrap().full_plane_power() / (r * c) as f64;
            assert!((spatial - spectral).abs() <= 1e-9 * spatial);
        }
    }

    #[test]
    fn finite_diff_cases() {
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &Tensor::from_vec(vec![1.0, 2.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 3.0, &Tensor::from_vec(vec![1.0, 2.0, 3.0]), 1e-3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        let g = finite_diff_grad(|t| t.data()[0].sin(), &Tensor::from_vec(vec![0.3]), 1e-5).unwrap();
        assert!((g.data()[0] - 0.3_f64.cos()).abs() <= 1e-8);
    }

    #[test]
    fn finite_diff_reports_offending_index() {
        let err = finite_diff_grad(
            |t| if t.data()[1] > 1.0 { f64::NAN } else { 0.0 },
            &Tensor::from_vec(vec![0.0, 1.0]),
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }
}
