//! Exact reverse-mode gradients for circulant and block-circulant products.
//!
//! For `h = circ(c) * x` and a scalar loss with upstream gradient `g`:
//!
//! * `dL/dc[k] = sum_j g[j] * x[(j - k) mod n]`, a circular correlation,
//!   computed spectrally as `IFFT(conj(FFT(x)) . FFT(g))`;
//! * `dL/dx = circ(c)^T * g`, the same correlation with `c` in place of `x`.
//!
//! Each coefficient gradient is therefore the sum of the `p` dense-gradient
//! entries along the corresponding circulant diagonal, which is why the
//! coefficient gradients grow with the block size. `diagonal_sum_identity_check`
//! verifies that identity directly, and `finite_difference_oracle` provides
//! the numerical cross-check used throughout the test suites.

use rayon::prelude::*;

use crate::circulant::{take_real, BlockCirculantMatrix, DenseMatrix};
use crate::error::{Error, Result};
use crate::fft::{Complex, FftPlan};

const PAR_THRESHOLD: usize = 1 << 15;

/// Gradients of a block-circulant product with respect to the coefficient
/// grid and the input vector. Shapes mirror the forward operands: the
/// coefficient gradient reuses the block-circulant container for its layout.
#[derive(Clone, Debug)]
pub struct MatvecGradients {
    pub grad_coeffs: BlockCirculantMatrix,
    pub grad_input: Vec<f64>,
}

/// `IFFT(conj(FFT(u)) . g_spectrum)`, the circular correlation backing both
/// gradient formulas.
fn spectral_correlation(plan: &FftPlan, u: &[f64], g_spectrum: &[Complex]) -> Result<Vec<f64>> {
    let mut uf = plan.forward_real(u)?;
    for (uv, gv) in uf.iter_mut().zip(g_spectrum) {
        *uv = uv.conj() * *gv;
    }
    plan.inverse_inplace(&mut uf)?;
    Ok(take_real(&uf))
}

/// Backward pass of `h = circ(c) * x`: returns `(dL/dc, dL/dx)` for the
/// upstream gradient `grad_h`.
pub fn circ_matvec_backward(
    c: &[f64],
    x: &[f64],
    grad_h: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = c.len();
    if x.len() != n || grad_h.len() != n {
        return Err(Error::size(format!(
            "circ backward: lengths c={}, x={}, grad_h={} must agree",
            n,
            x.len(),
            grad_h.len()
        )));
    }
    let plan = FftPlan::new(n)?;
    let gf = plan.forward_real(grad_h)?;
    let grad_c = spectral_correlation(&plan, x, &gf)?;
    let grad_x = spectral_correlation(&plan, c, &gf)?;
    Ok((grad_c, grad_x))
}

/// Backward pass of a block-circulant product. The coefficient gradient of
/// block `(i, j)` correlates the upstream block `g_i` with the input block
/// `x_j`; the input gradient accumulates the transposed blocks in the
/// frequency domain before one inverse transform per input block.
pub fn block_circ_matvec_backward(
    m: &BlockCirculantMatrix,
    x: &[f64],
    grad_h: &[f64],
) -> Result<MatvecGradients> {
    if x.len() != m.cols_in() {
        return Err(Error::size(format!(
            "block backward: input has length {}, matrix takes {}",
            x.len(),
            m.cols_in()
        )));
    }
    if grad_h.len() != m.rows_out() {
        return Err(Error::size(format!(
            "block backward: upstream gradient has length {}, matrix produces {}",
            grad_h.len(),
            m.rows_out()
        )));
    }
    let p = m.block_size();
    let q_in = m.blocks_in();
    let q_out = m.blocks_out();
    let plan = m.plan();

    let x_spectra: Vec<Vec<Complex>> = (0..q_in)
        .map(|j| plan.forward_real(&x[j * p..(j + 1) * p]))
        .collect::<Result<_>>()?;
    let g_spectra: Vec<Vec<Complex>> = (0..q_out)
        .map(|i| plan.forward_real(&grad_h[i * p..(i + 1) * p]))
        .collect::<Result<_>>()?;

    let mut grad_coeffs = BlockCirculantMatrix::zeros(m.rows_out(), m.cols_in(), p)?;
    for (i, gf) in g_spectra.iter().enumerate() {
        for (j, xf) in x_spectra.iter().enumerate() {
            let mut acc: Vec<Complex> = xf
                .iter()
                .zip(gf)
                .map(|(xv, gv)| xv.conj() * *gv)
                .collect();
            plan.inverse_inplace(&mut acc)?;
            grad_coeffs.block_mut(i, j).copy_from_slice(&take_real(&acc));
        }
    }

    let mut grad_input = vec![0.0; m.cols_in()];
    for j in 0..q_in {
        let mut acc = vec![Complex::ZERO; p];
        for (i, gf) in g_spectra.iter().enumerate() {
            let cf = plan.forward_real(m.block(i, j))?;
            for ((a, c), g) in acc.iter_mut().zip(&cf).zip(gf) {
                *a += c.conj() * *g;
            }
        }
        plan.inverse_inplace(&mut acc)?;
        grad_input[j * p..(j + 1) * p].copy_from_slice(&take_real(&acc));
    }

    Ok(MatvecGradients {
        grad_coeffs,
        grad_input,
    })
}

/// Coefficient gradients summed over a batch, in the flat block-row-major
/// layout of [`BlockCirculantMatrix::coeffs`]. Per-sample spectra are
/// computed once; the per-block accumulation runs in a fixed order so
/// results are reproducible.
pub fn block_circ_coeff_grad_batch(
    m: &BlockCirculantMatrix,
    xs: &[Vec<f64>],
    grad_hs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if xs.len() != grad_hs.len() {
        return Err(Error::size(format!(
            "coeff grad batch: {} inputs vs {} upstream gradients",
            xs.len(),
            grad_hs.len()
        )));
    }
    let p = m.block_size();
    let q_in = m.blocks_in();
    let q_out = m.blocks_out();
    let plan = m.plan();

    // sample -> block -> spectrum
    let spectra_of = |vecs: &[Vec<f64>], q: usize, want: usize| -> Result<Vec<Vec<Vec<Complex>>>> {
        let per_sample = |v: &Vec<f64>| -> Result<Vec<Vec<Complex>>> {
            if v.len() != want {
                return Err(Error::size(format!(
                    "coeff grad batch: vector of length {}, expected {want}",
                    v.len()
                )));
            }
            (0..q).map(|b| plan.forward_real(&v[b * p..(b + 1) * p])).collect()
        };
        if vecs.len() * q * p >= PAR_THRESHOLD {
            vecs.par_iter().map(per_sample).collect()
        } else {
            vecs.iter().map(per_sample).collect()
        }
    };

    let x_spectra = spectra_of(xs, q_in, m.cols_in())?;
    let g_spectra = spectra_of(grad_hs, q_out, m.rows_out())?;

    let blocks = q_out * q_in;
    let mut flat = vec![0.0; blocks * p];
    let fill = |(b, out): (usize, &mut [f64])| -> Result<()> {
        let (i, j) = (b / q_in, b % q_in);
        let mut acc = vec![Complex::ZERO; p];
        for s in 0..xs.len() {
            let xf = &x_spectra[s][j];
            let gf = &g_spectra[s][i];
            for ((a, xv), gv) in acc.iter_mut().zip(xf).zip(gf) {
                *a += xv.conj() * *gv;
            }
        }
        plan.inverse_inplace(&mut acc)?;
        out.copy_from_slice(&take_real(&acc));
        Ok(())
    };
    if blocks * p * xs.len() >= PAR_THRESHOLD {
        flat.par_chunks_mut(p)
            .enumerate()
            .with_min_len(4)
            .map(fill)
            .collect::<Result<Vec<()>>>()?;
    } else {
        for item in flat.chunks_mut(p).enumerate() {
            fill(item)?;
        }
    }
    Ok(flat)
}

/// Outer-product gradient of a dense product, `dL/dA = g * x^T`.
pub fn dense_grad(grad_h: &[f64], x: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(grad_h.len(), x.len(), |i, j| grad_h[i] * x[j])
}

/// Dense gradient summed over a batch.
pub fn dense_grad_batch(grad_hs: &[Vec<f64>], xs: &[Vec<f64>]) -> Result<DenseMatrix> {
    if xs.is_empty() || grad_hs.is_empty() {
        return Err(Error::size("dense grad batch: empty batch"));
    }
    let rows = grad_hs[0].len();
    let cols = xs[0].len();
    let mut out = vec![0.0; rows * cols];
    dense_grad_batch_into(grad_hs, xs, &mut out)?;
    DenseMatrix::from_vec(rows, cols, out)
}

/// Dense batch gradient accumulated into a caller-provided row-major buffer
/// (overwritten, not added to). Lets training loops reuse the allocation.
pub fn dense_grad_batch_into(
    grad_hs: &[Vec<f64>],
    xs: &[Vec<f64>],
    out: &mut [f64],
) -> Result<()> {
    if xs.len() != grad_hs.len() {
        return Err(Error::size(format!(
            "dense grad batch: {} inputs vs {} upstream gradients",
            xs.len(),
            grad_hs.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::size("dense grad batch: empty batch"));
    }
    let rows = grad_hs[0].len();
    let cols = xs[0].len();
    for (g, x) in grad_hs.iter().zip(xs) {
        if g.len() != rows || x.len() != cols {
            return Err(Error::size("dense grad batch: ragged batch"));
        }
    }
    if out.len() != rows * cols {
        return Err(Error::size(format!(
            "dense grad batch: output buffer has length {}, expected {}",
            out.len(),
            rows * cols
        )));
    }
    let fill = |(i, row): (usize, &mut [f64])| {
        row.fill(0.0);
        for (g, x) in grad_hs.iter().zip(xs) {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            for (o, &xv) in row.iter_mut().zip(x) {
                *o += gi * xv;
            }
        }
    };
    if rows * cols * xs.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(cols).enumerate().with_min_len(32).for_each(fill);
    } else {
        out.chunks_mut(cols).enumerate().for_each(fill);
    }
    Ok(())
}

/// Verifies, for every block `(i, j)` and offset `k`, that the spectral
/// coefficient gradient equals the sum of dense-gradient entries along the
/// corresponding circulant diagonal:
/// `grad_c[k] = sum_m g_i[m] * x_j[(m - k) mod p]`.
/// Returns the maximum absolute discrepancy.
pub fn diagonal_sum_identity_check(
    m: &BlockCirculantMatrix,
    x: &[f64],
    grad_h: &[f64],
) -> Result<f64> {
    let grads = block_circ_matvec_backward(m, x, grad_h)?;
    let p = m.block_size();
    let mut worst = 0.0f64;
    for i in 0..m.blocks_out() {
        let g_i = &grad_h[i * p..(i + 1) * p];
        for j in 0..m.blocks_in() {
            let x_j = &x[j * p..(j + 1) * p];
            let spectral = grads.grad_coeffs.block(i, j);
            for k in 0..p {
                let mut direct = 0.0;
                for (mm, &gv) in g_i.iter().enumerate() {
                    direct += gv * x_j[(mm + p - k) % p];
                }
                worst = worst.max((spectral[k] - direct).abs());
            }
        }
    }
    Ok(worst)
}

/// Central-difference gradient `(L(t + s e_k) - L(t - s e_k)) / (2 s)` per
/// coordinate. The universal numerical oracle for the analytic backward
/// passes; `loss` must be pure and deterministic.
pub fn finite_difference_oracle<F>(loss: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::config(format!(
            "finite difference step must be positive, got {step}"
        )));
    }
    let mut point = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = point[k];
        point[k] = orig + step;
        let plus = loss(&point);
        point[k] = orig - step;
        let minus = loss(&point);
        point[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric(format!(
                "loss returned a non-finite value near coordinate {k}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Relative error with an absolute floor, the standard gradient-check metric.
pub fn grad_check_error(analytic: f64, numerical: f64) -> f64 {
    (analytic - numerical).abs() / (analytic.abs().max(numerical.abs()).max(1e-8))
}

/// Standard gradient-check acceptance: the deviation passes if it is below
/// `atol + rtol * max(|analytic|, |numerical|)`. Central differences of a
/// loss with magnitude L carry ~`eps * L / step` of cancellation noise, so
/// the absolute floor matters for small-gradient coordinates.
pub fn grad_within_tolerance(analytic: f64, numerical: f64, rtol: f64, atol: f64) -> bool {
    (analytic - numerical).abs() <= atol + rtol * analytic.abs().max(numerical.abs())
}
