//! One-dimensional fast Fourier transforms over complex vectors.
//!
//! Convention: the forward transform is unnormalized,
//! `X[k] = sum_j x[j] * exp(-2*pi*i*j*k/n)`, and the inverse carries the
//! `1/n` factor so that `ifft(fft(x)) = x`. Power-of-two lengths run on an
//! iterative radix-2 kernel; every other length goes through a Bluestein
//! chirp-z plan built on top of radix-2.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};

/// Complex number in 64-bit floating point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };
    pub const ONE: Complex = Complex { re: 1.0, im: 0.0 };

    #[inline]
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    #[inline]
    pub fn from_polar(r: f64, theta: f64) -> Self {
        Self::new(r * theta.cos(), r * theta.sin())
    }

    #[inline]
    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        Self::new(self.re * s, self.im * s)
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    #[inline]
    pub fn abs(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl std::ops::Add for Complex {
    type Output = Complex;
    #[inline]
    fn add(self, rhs: Complex) -> Complex {
        Complex::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl std::ops::AddAssign for Complex {
    #[inline]
    fn add_assign(&mut self, rhs: Complex) {
        self.re += rhs.re;
        self.im += rhs.im;
    }
}

impl std::ops::Sub for Complex {
    type Output = Complex;
    #[inline]
    fn sub(self, rhs: Complex) -> Complex {
        Complex::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl std::ops::Mul for Complex {
    type Output = Complex;
    #[inline]
    fn mul(self, rhs: Complex) -> Complex {
        Complex::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

impl std::ops::Neg for Complex {
    type Output = Complex;
    #[inline]
    fn neg(self) -> Complex {
        Complex::new(-self.re, -self.im)
    }
}

impl fmt::Display for Complex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:+}i", self.re, self.im)
    }
}

enum PlanKind {
    /// Iterative Cooley-Tukey. `twiddles[k] = exp(-2*pi*i*k/n)` for `k < n/2`.
    Radix2 { twiddles: Vec<Complex> },
    /// Bluestein chirp-z over an inner power-of-two transform of length `m`.
    Bluestein {
        m: usize,
        inner: Box<FftPlan>,
        /// `chirp[j] = exp(-pi*i*j^2/n)`.
        chirp: Vec<Complex>,
        /// Forward transform of the circular chirp kernel, length `m`.
        kernel_spectrum: Vec<Complex>,
    },
}

/// Precomputed transform plan for one length.
///
/// Immutable after construction and safe to share across threads; each
/// invocation works on caller-provided buffers.
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
}

impl fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            PlanKind::Radix2 { .. } => "radix2",
            PlanKind::Bluestein { .. } => "bluestein",
        };
        write!(f, "FftPlan {{ len: {}, kind: {} }}", self.len, kind)
    }
}

impl FftPlan {
    /// Builds a plan for transforms of length `n` (any `n >= 1`).
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::size("fft length must be at least 1"));
        }
        if n.is_power_of_two() {
            let twiddles = (0..n / 2)
                .map(|k| Complex::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
                .collect();
            return Ok(Self {
                len: n,
                kind: PlanKind::Radix2 { twiddles },
            });
        }

        // Bluestein: X[k] = chirp[k] * (a (*) b)[k] with a[j] = x[j]*chirp[j]
        // and b the circular kernel conj(chirp[|j|]), convolved at length m.
        let m = (2 * n - 1).next_power_of_two();
        let inner = Box::new(FftPlan::new(m)?);
        let chirp: Vec<Complex> = (0..n)
            .map(|j| {
                // j^2 mod 2n keeps the phase argument small and accurate
                let sq = (j as u64 * j as u64) % (2 * n as u64);
                Complex::from_polar(1.0, -PI * sq as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex::ZERO; m];
        kernel[0] = chirp[0].conj();
        for j in 1..n {
            kernel[j] = chirp[j].conj();
            kernel[m - j] = chirp[j].conj();
        }
        inner.forward_inplace(&mut kernel)?;
        Ok(Self {
            len: n,
            kind: PlanKind::Bluestein {
                m,
                inner,
                chirp,
                kernel_spectrum: kernel,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Unnormalized forward transform, in place.
    pub fn forward_inplace(&self, buf: &mut [Complex]) -> Result<()> {
        self.check_len(buf)?;
        match &self.kind {
            PlanKind::Radix2 { twiddles } => {
                radix2_inplace(buf, twiddles, false);
                Ok(())
            }
            PlanKind::Bluestein {
                m,
                inner,
                chirp,
                kernel_spectrum,
            } => {
                let n = self.len;
                let mut a = vec![Complex::ZERO; *m];
                for j in 0..n {
                    a[j] = buf[j] * chirp[j];
                }
                inner.forward_inplace(&mut a)?;
                for (av, kv) in a.iter_mut().zip(kernel_spectrum.iter()) {
                    *av = *av * *kv;
                }
                inner.inverse_inplace(&mut a)?;
                for k in 0..n {
                    buf[k] = chirp[k] * a[k];
                }
                Ok(())
            }
        }
    }

    /// Inverse transform with `1/n` normalization, in place.
    pub fn inverse_inplace(&self, buf: &mut [Complex]) -> Result<()> {
        self.check_len(buf)?;
        match &self.kind {
            PlanKind::Radix2 { twiddles } => {
                radix2_inplace(buf, twiddles, true);
                let scale = 1.0 / self.len as f64;
                for v in buf.iter_mut() {
                    *v = v.scale(scale);
                }
                Ok(())
            }
            PlanKind::Bluestein { .. } => {
                // conj(fft(conj(X)))/n
                for v in buf.iter_mut() {
                    *v = v.conj();
                }
                self.forward_inplace(buf)?;
                let scale = 1.0 / self.len as f64;
                for v in buf.iter_mut() {
                    *v = v.conj().scale(scale);
                }
                Ok(())
            }
        }
    }

    /// Forward transform into a fresh vector.
    pub fn forward(&self, x: &[Complex]) -> Result<Vec<Complex>> {
        let mut buf = x.to_vec();
        self.forward_inplace(&mut buf)?;
        Ok(buf)
    }

    /// Inverse transform into a fresh vector.
    pub fn inverse(&self, x: &[Complex]) -> Result<Vec<Complex>> {
        let mut buf = x.to_vec();
        self.inverse_inplace(&mut buf)?;
        Ok(buf)
    }

    /// Forward transform of a real signal, embedding zero imaginary parts.
    pub fn forward_real(&self, x: &[f64]) -> Result<Vec<Complex>> {
        if x.len() != self.len {
            return Err(Error::size(format!(
                "expected length {}, got {}",
                self.len,
                x.len()
            )));
        }
        let mut buf: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward_inplace(&mut buf)?;
        Ok(buf)
    }

    fn check_len(&self, buf: &[Complex]) -> Result<()> {
        if buf.len() != self.len {
            return Err(Error::size(format!(
                "plan length {} does not match buffer length {}",
                self.len,
                buf.len()
            )));
        }
        Ok(())
    }
}

fn radix2_inplace(buf: &mut [Complex], twiddles: &[Complex], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let rev = i.reverse_bits() >> (usize::BITS - bits);
        if i < rev {
            buf.swap(i, rev);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        let mut start = 0;
        while start < n {
            for j in 0..half {
                let w = if inverse {
                    twiddles[j * stride].conj()
                } else {
                    twiddles[j * stride]
                };
                let a = buf[start + j];
                let t = w * buf[start + j + half];
                buf[start + j] = a + t;
                buf[start + j + half] = a - t;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Thread-safe cache of plans keyed by transform length.
#[derive(Default)]
pub struct PlanCache {
    plans: RwLock<HashMap<usize, Arc<FftPlan>>>,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plan(&self, n: usize) -> Result<Arc<FftPlan>> {
        if let Some(p) = self.plans.read().unwrap().get(&n) {
            return Ok(Arc::clone(p));
        }
        let plan = Arc::new(FftPlan::new(n)?);
        let mut guard = self.plans.write().unwrap();
        Ok(Arc::clone(guard.entry(n).or_insert(plan)))
    }
}

fn require_power_of_two(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::size(format!(
            "fft length must be a power of two, got {n}"
        )));
    }
    Ok(())
}

fn require_finite(x: &[Complex]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("fft input contains NaN or infinity"));
    }
    Ok(())
}

/// Unnormalized forward DFT of a power-of-two-length complex vector.
pub fn fft(x: &[Complex]) -> Result<Vec<Complex>> {
    require_power_of_two(x.len())?;
    require_finite(x)?;
    FftPlan::new(x.len())?.forward(x)
}

/// Inverse DFT with `1/n` normalization; power-of-two lengths only.
pub fn ifft(x: &[Complex]) -> Result<Vec<Complex>> {
    require_power_of_two(x.len())?;
    require_finite(x)?;
    FftPlan::new(x.len())?.inverse(x)
}

/// Forward DFT of a real vector. The output has conjugate symmetry
/// `X[k] = conj(X[n-k])`.
pub fn fft_real(x: &[f64]) -> Result<Vec<Complex>> {
    require_power_of_two(x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("fft input contains NaN or infinity"));
    }
    FftPlan::new(x.len())?.forward_real(x)
}
