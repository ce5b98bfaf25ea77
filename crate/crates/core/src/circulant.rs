//! Circulant and block-circulant matrix types with FFT-based
//! matrix-vector products.
//!
//! A circulant matrix is fully determined by its first column `c`: entry
//! `(i, j)` equals `c[(i - j) mod n]`, and `circ(c) * x` is computed in
//! O(n log n) as `IFFT(FFT(c) . FFT(x))`. A block-circulant matrix is an
//! equally partitioned grid of such blocks; multiplication accumulates the
//! blockwise products in the frequency domain before a single inverse
//! transform per output block. With block size `p = 1` the representation
//! degenerates to a general dense matrix, with `p = n` to a single circulant.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{Complex, FftPlan};

/// Work-size threshold below which loops stay sequential.
const PAR_THRESHOLD: usize = 1 << 15;

/// Dense row-major matrix of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::size(format!(
                "dense matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::size(format!(
                "cannot add {}x{} and {}x{} matrices",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::size(format!(
                "cannot subtract {}x{} and {}x{} matrices",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::size(format!(
                "matvec: matrix has {} columns, vector has length {}",
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        if self.rows * self.cols >= PAR_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(i, o)| *o = dot(self.row(i), x));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(self.row(i), x);
            }
        }
        Ok(out)
    }

    /// `A^T * g` without materializing the transpose.
    pub fn matvec_transposed(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.rows {
            return Err(Error::size(format!(
                "transposed matvec: matrix has {} rows, vector has length {}",
                self.rows,
                g.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += gi * w;
            }
        }
        Ok(out)
    }

    /// Matrix product against a batch of column vectors. Each row of the
    /// matrix is streamed once across the whole batch.
    pub fn matvec_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            if x.len() != self.cols {
                return Err(Error::size(format!(
                    "matvec batch: matrix has {} columns, vector has length {}",
                    self.cols,
                    x.len()
                )));
            }
        }
        let b = xs.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        let mut row_major = vec![0.0; self.rows * b];
        let work = self.rows * self.cols * b;
        let fill = |(i, chunk): (usize, &mut [f64])| {
            let row = self.row(i);
            for (k, x) in xs.iter().enumerate() {
                chunk[k] = dot(row, x);
            }
        };
        if work >= PAR_THRESHOLD {
            row_major.par_chunks_mut(b).enumerate().with_min_len(32).for_each(fill);
        } else {
            row_major.chunks_mut(b).enumerate().for_each(fill);
        }
        let mut out = vec![vec![0.0; self.rows]; b];
        for i in 0..self.rows {
            for (k, y) in out.iter_mut().enumerate() {
                y[i] = row_major[i * b + k];
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let (a8, a_rest) = a.split_at(a.len() - a.len() % 8);
    let (b8, b_rest) = b.split_at(b.len() - b.len() % 8);
    for (ca, cb) in a8.chunks_exact(8).zip(b8.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in a_rest.iter().zip(b_rest) {
        s += x * y;
    }
    s
}

/// Materializes `circ(c)`: entry `(i, j) = c[(i - j) mod n]`.
pub fn circ_materialize(c: &[f64]) -> DenseMatrix {
    let n = c.len();
    DenseMatrix::from_fn(n, n, |i, j| c[(n + i - j) % n])
}

/// `circ(c) * x` via the convolution theorem; the imaginary residue of the
/// inverse transform is discarded.
pub fn circ_matvec(c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if c.len() != x.len() {
        return Err(Error::size(format!(
            "circ_matvec: coefficient length {} vs input length {}",
            c.len(),
            x.len()
        )));
    }
    let plan = FftPlan::new(c.len())?;
    let cf = plan.forward_real(c)?;
    let mut xf = plan.forward_real(x)?;
    for (xv, cv) in xf.iter_mut().zip(&cf) {
        *xv = *xv * *cv;
    }
    plan.inverse_inplace(&mut xf)?;
    Ok(take_real(&xf))
}

/// Drops the imaginary parts after an inverse transform, asserting in debug
/// builds that they are numerically negligible.
pub(crate) fn take_real(buf: &[Complex]) -> Vec<f64> {
    debug_assert!(
        {
            let max_im = buf.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
            let max_re = buf.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
            max_im < 1e-8 * (1.0 + max_re)
        },
        "imaginary residue after inverse transform exceeds tolerance"
    );
    buf.iter().map(|v| v.re).collect()
}

/// Equally partitioned block matrix whose every `p x p` block is circulant,
/// stored as the defining coefficient vector of each block.
///
/// Coefficients live in one flat buffer, block-row-major and contiguous per
/// block: block `(i, j)` occupies `[(i*q_in + j)*p .. (i*q_in + j + 1)*p]`.
pub struct BlockCirculantMatrix {
    rows_out: usize,
    cols_in: usize,
    block_size: usize,
    coeffs: Vec<f64>,
    plan: Arc<FftPlan>,
}

impl Clone for BlockCirculantMatrix {
    fn clone(&self) -> Self {
        Self {
            rows_out: self.rows_out,
            cols_in: self.cols_in,
            block_size: self.block_size,
            coeffs: self.coeffs.clone(),
            plan: Arc::clone(&self.plan),
        }
    }
}

impl fmt::Debug for BlockCirculantMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockCirculantMatrix")
            .field("rows_out", &self.rows_out)
            .field("cols_in", &self.cols_in)
            .field("block_size", &self.block_size)
            .finish()
    }
}

impl PartialEq for BlockCirculantMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows_out == other.rows_out
            && self.cols_in == other.cols_in
            && self.block_size == other.block_size
            && self.coeffs == other.coeffs
    }
}

impl BlockCirculantMatrix {
    /// Zero-initialized matrix. `block_size` must divide both dimensions.
    pub fn zeros(rows_out: usize, cols_in: usize, block_size: usize) -> Result<Self> {
        Self::validate_shape(rows_out, cols_in, block_size)?;
        let q_out = rows_out / block_size;
        let q_in = cols_in / block_size;
        Ok(Self {
            rows_out,
            cols_in,
            block_size,
            coeffs: vec![0.0; q_out * q_in * block_size],
            plan: Arc::new(FftPlan::new(block_size)?),
        })
    }

    /// Builds from a flat block-row-major coefficient buffer.
    pub fn from_coeffs(
        rows_out: usize,
        cols_in: usize,
        block_size: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        Self::validate_shape(rows_out, cols_in, block_size)?;
        let expected = rows_out / block_size * (cols_in / block_size) * block_size;
        if coeffs.len() != expected {
            return Err(Error::size(format!(
                "coefficient buffer has length {}, expected {expected}",
                coeffs.len()
            )));
        }
        Ok(Self {
            rows_out,
            cols_in,
            block_size,
            coeffs,
            plan: Arc::new(FftPlan::new(block_size)?),
        })
    }

    /// Reads block first columns out of a dense matrix. Exact for any matrix
    /// when `block_size == 1`; for larger blocks the input is assumed to be
    /// block-circulant.
    pub fn from_dense(dense: &DenseMatrix, block_size: usize) -> Result<Self> {
        let mut m = Self::zeros(dense.rows(), dense.cols(), block_size)?;
        let p = block_size;
        for i in 0..m.blocks_out() {
            for j in 0..m.blocks_in() {
                let block = m.block_index(i, j);
                for k in 0..p {
                    m.coeffs[block * p + k] = dense.get(i * p + k, j * p);
                }
            }
        }
        Ok(m)
    }

    fn validate_shape(rows_out: usize, cols_in: usize, block_size: usize) -> Result<()> {
        if rows_out == 0 || cols_in == 0 || block_size == 0 {
            return Err(Error::config(
                "block-circulant dimensions and block size must be positive",
            ));
        }
        if !rows_out.is_multiple_of(block_size) || !cols_in.is_multiple_of(block_size) {
            return Err(Error::config(format!(
                "block size {block_size} must divide both dimensions {rows_out}x{cols_in}"
            )));
        }
        Ok(())
    }

    pub fn rows_out(&self) -> usize {
        self.rows_out
    }

    pub fn cols_in(&self) -> usize {
        self.cols_in
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Number of block rows, `d_out / p`.
    pub fn blocks_out(&self) -> usize {
        self.rows_out / self.block_size
    }

    /// Number of block columns, `d_in / p`.
    pub fn blocks_in(&self) -> usize {
        self.cols_in / self.block_size
    }

    /// Trainable parameter count, `d_out * d_in / p`.
    pub fn param_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    #[inline]
    fn block_index(&self, i: usize, j: usize) -> usize {
        i * self.blocks_in() + j
    }

    /// Coefficient vector of block `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> &[f64] {
        let p = self.block_size;
        let b = self.block_index(i, j);
        &self.coeffs[b * p..(b + 1) * p]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let p = self.block_size;
        let b = self.block_index(i, j);
        &mut self.coeffs[b * p..(b + 1) * p]
    }

    pub(crate) fn plan(&self) -> &Arc<FftPlan> {
        &self.plan
    }

    /// Forward spectra of all coefficient vectors, block-row-major.
    pub(crate) fn coeff_spectra(&self) -> Result<Vec<Vec<Complex>>> {
        let p = self.block_size;
        let blocks = self.blocks_out() * self.blocks_in();
        let compute = |b: usize| self.plan.forward_real(&self.coeffs[b * p..(b + 1) * p]);
        if blocks * p >= PAR_THRESHOLD {
            (0..blocks).into_par_iter().with_min_len(8).map(compute).collect()
        } else {
            (0..blocks).map(compute).collect()
        }
    }

    /// `B * x`: the blockwise products are accumulated in the frequency
    /// domain and each output block takes a single inverse transform.
    /// Coefficient spectra are recomputed on every call; see
    /// [`BlockCirculantMatrix::freeze_spectra`] for the cached variant.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols_in {
            return Err(Error::size(format!(
                "block matvec: matrix takes input of length {}, got {}",
                self.cols_in,
                x.len()
            )));
        }
        let p = self.block_size;
        let q_in = self.blocks_in();
        let x_spectra: Vec<Vec<Complex>> = (0..q_in)
            .map(|j| self.plan.forward_real(&x[j * p..(j + 1) * p]))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.rows_out];
        for i in 0..self.blocks_out() {
            let mut acc = vec![Complex::ZERO; p];
            for (j, xf) in x_spectra.iter().enumerate() {
                let cf = self.plan.forward_real(self.block(i, j))?;
                for ((a, c), x) in acc.iter_mut().zip(&cf).zip(xf) {
                    *a += *c * *x;
                }
            }
            self.plan.inverse_inplace(&mut acc)?;
            out[i * p..(i + 1) * p].copy_from_slice(&take_real(&acc));
        }
        Ok(out)
    }

    /// Batched product. Coefficient spectra are computed once per call and
    /// shared across the whole batch; each column equals the single-vector
    /// path. An empty batch yields an empty batch.
    pub fn matvec_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            if x.len() != self.cols_in {
                return Err(Error::size(format!(
                    "block matvec batch: expected vectors of length {}, got {}",
                    self.cols_in,
                    x.len()
                )));
            }
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let spectra = self.coeff_spectra()?;
        let p = self.block_size;
        let q_in = self.blocks_in();
        let q_out = self.blocks_out();
        let apply = |x: &Vec<f64>| -> Result<Vec<f64>> {
            let x_spectra: Vec<Vec<Complex>> = (0..q_in)
                .map(|j| self.plan.forward_real(&x[j * p..(j + 1) * p]))
                .collect::<Result<_>>()?;
            let mut out = vec![0.0; self.rows_out];
            for i in 0..q_out {
                let mut acc = vec![Complex::ZERO; p];
                for (j, xf) in x_spectra.iter().enumerate() {
                    let cf = &spectra[self.block_index(i, j)];
                    for ((a, c), x) in acc.iter_mut().zip(cf).zip(xf) {
                        *a += *c * *x;
                    }
                }
                self.plan.inverse_inplace(&mut acc)?;
                out[i * p..(i + 1) * p].copy_from_slice(&take_real(&acc));
            }
            Ok(out)
        };
        let work = xs.len() * q_out * q_in * p;
        if work >= PAR_THRESHOLD {
            xs.par_iter().map(apply).collect()
        } else {
            xs.iter().map(apply).collect()
        }
    }

    /// Assembles the full dense matrix from the circulant blocks.
    pub fn materialize(&self) -> DenseMatrix {
        let p = self.block_size;
        DenseMatrix::from_fn(self.rows_out, self.cols_in, |r, c| {
            let (i, bi) = (r / p, r % p);
            let (j, bj) = (c / p, c % p);
            self.block(i, j)[(p + bi - bj) % p]
        })
    }

    /// Transpose as a block-circulant matrix: block `(i, j)` of the result
    /// holds the index-reversed coefficients of block `(j, i)`.
    pub fn transpose(&self) -> BlockCirculantMatrix {
        let p = self.block_size;
        let mut t = BlockCirculantMatrix {
            rows_out: self.cols_in,
            cols_in: self.rows_out,
            block_size: p,
            coeffs: vec![0.0; self.coeffs.len()],
            plan: Arc::clone(&self.plan),
        };
        for i in 0..self.blocks_out() {
            for j in 0..self.blocks_in() {
                let src = self.block(i, j).to_vec();
                let dst = t.block_mut(j, i);
                dst[0] = src[0];
                for k in 1..p {
                    dst[k] = src[p - k];
                }
            }
        }
        t
    }

    /// Caches the coefficient spectra for repeated inference-time products.
    pub fn freeze_spectra(&self) -> Result<FrozenSpectra> {
        Ok(FrozenSpectra {
            rows_out: self.rows_out,
            cols_in: self.cols_in,
            block_size: self.block_size,
            spectra: self.coeff_spectra()?,
            plan: Arc::clone(&self.plan),
        })
    }
}

/// Least-squares projection of a dense matrix onto the block-circulant
/// space with block size `p`: within each block, every circulant diagonal
/// collapses to its mean. The returned matrix is the closest block-circulant
/// matrix in Frobenius norm, which makes it the oracle for best-achievable
/// approximation error.
pub fn project_block_circulant(dense: &DenseMatrix, block_size: usize) -> Result<BlockCirculantMatrix> {
    let mut m = BlockCirculantMatrix::zeros(dense.rows(), dense.cols(), block_size)?;
    let p = block_size;
    for i in 0..m.blocks_out() {
        for j in 0..m.blocks_in() {
            let mut sums = vec![0.0; p];
            for bi in 0..p {
                for bj in 0..p {
                    sums[(p + bi - bj) % p] += dense.get(i * p + bi, j * p + bj);
                }
            }
            let block = m.block_mut(i, j);
            for (b, s) in block.iter_mut().zip(&sums) {
                *b = s / p as f64;
            }
        }
    }
    Ok(m)
}

/// Inference-mode view of a block-circulant matrix with precomputed
/// coefficient spectra.
pub struct FrozenSpectra {
    rows_out: usize,
    cols_in: usize,
    block_size: usize,
    spectra: Vec<Vec<Complex>>,
    plan: Arc<FftPlan>,
}

impl FrozenSpectra {
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols_in {
            return Err(Error::size(format!(
                "frozen matvec: expected input of length {}, got {}",
                self.cols_in,
                x.len()
            )));
        }
        let p = self.block_size;
        let q_in = self.cols_in / p;
        let q_out = self.rows_out / p;
        let x_spectra: Vec<Vec<Complex>> = (0..q_in)
            .map(|j| self.plan.forward_real(&x[j * p..(j + 1) * p]))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.rows_out];
        for i in 0..q_out {
            let mut acc = vec![Complex::ZERO; p];
            for (j, xf) in x_spectra.iter().enumerate() {
                let cf = &self.spectra[i * q_in + j];
                for ((a, c), x) in acc.iter_mut().zip(cf).zip(xf) {
                    *a += *c * *x;
                }
            }
            self.plan.inverse_inplace(&mut acc)?;
            out[i * p..(i + 1) * p].copy_from_slice(&take_real(&acc));
        }
        Ok(out)
    }
}
