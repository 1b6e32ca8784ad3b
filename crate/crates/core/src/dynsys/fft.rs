//! Iterative radix-2 Cooley–Tukey FFT and its 2-D row/column extension.
//!
//! Forward transform `X_k = Σ_n x_n e^{-2πi kn/N}`; the inverse carries the
//! `1/N` factor, so `ifft(fft(x)) = x` and `Σ|x|² = (1/N) Σ|X|²`.

use num_complex::Complex;

use crate::error::{PaintError, Result};
use crate::scalar::Scalar;

/// Precomputed twiddles and bit-reversal table for one length.
#[derive(Clone, Debug)]
pub struct FftPlan<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(PaintError::invalid(format!("FFT length {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let two_pi = T::PI() + T::PI();
        let twiddles = (0..n / 2)
            .map(|k| {
                let ang = -two_pi * T::from_usize_lossy(k) / T::from_usize_lossy(n);
                Complex::new(ang.cos(), ang.sin())
            })
            .collect();
        Ok(FftPlan { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn transform(&self, data: &mut [Complex<T>], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(data.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
        if inverse {
            let inv = T::one() / T::from_usize_lossy(n);
            for x in data.iter_mut() {
                *x = *x * inv;
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.transform(data, false);
    }

    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.transform(data, true);
    }
}

/// 2-D transform over a row-major `h × w` grid.
#[derive(Clone, Debug)]
pub struct Fft2Plan<T> {
    rows: FftPlan<T>,
    cols: FftPlan<T>,
}

impl<T: Scalar> Fft2Plan<T> {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        Ok(Fft2Plan {
            rows: FftPlan::new(w)?,
            cols: FftPlan::new(h)?,
        })
    }

    pub fn height(&self) -> usize {
        self.cols.len()
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, data: &mut [Complex<T>], inverse: bool) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if data.len() != h * w {
            return Err(PaintError::shape(
                "fft2",
                format!("plan is {h}x{w}, data has {} values", data.len()),
            ));
        }
        for row in data.chunks_mut(w) {
            self.rows.transform(row, inverse);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for j in 0..w {
            for i in 0..h {
                col[i] = data[i * w + j];
            }
            self.cols.transform(&mut col, inverse);
            for i in 0..h {
                data[i * w + j] = col[i];
            }
        }
        Ok(())
    }

    pub fn forward(&self, data: &mut [Complex<T>]) -> Result<()> {
        self.apply(data, false)
    }

    pub fn inverse(&self, data: &mut [Complex<T>]) -> Result<()> {
        self.apply(data, true)
    }

    /// Forward transform of a real grid.
    pub fn forward_real(&self, data: &[T]) -> Result<Vec<Complex<T>>> {
        let mut buf: Vec<Complex<T>> = data.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.forward(&mut buf)?;
        Ok(buf)
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, spec: &[Complex<T>]) -> Result<Vec<T>> {
        let mut buf = spec.to_vec();
        self.inverse(&mut buf)?;
        Ok(buf.into_iter().map(|z| z.re).collect())
    }
}

/// One-shot 2-D forward FFT of a row-major `h × w` grid.
pub fn fft2<T: Scalar>(data: &[Complex<T>], h: usize, w: usize) -> Result<Vec<Complex<T>>> {
    let mut out = data.to_vec();
    Fft2Plan::new(h, w)?.forward(&mut out)?;
    Ok(out)
}

/// One-shot 2-D inverse FFT of a row-major `h × w` grid.
pub fn ifft2<T: Scalar>(data: &[Complex<T>], h: usize, w: usize) -> Result<Vec<Complex<T>>> {
    let mut out = data.to_vec();
    Fft2Plan::new(h, w)?.inverse(&mut out)?;
    Ok(out)
}

/// Signed integer wavenumber of DFT bin `j` on a length-`n` axis.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::<f64>::new(12).is_err());
        assert!(fft2::<f64>(&[Complex::new(0.0, 0.0); 6], 2, 3).is_err());
    }

    #[test]
    fn constant_field_has_single_dc_coefficient() {
        let data = vec![Complex::new(2.5_f64, 0.0); 16];
        let spec = fft2(&data, 4, 4).unwrap();
        assert!((spec[0].re - 40.0).abs() < 1e-12);
        for z in &spec[1..] {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn length_one_and_two() {
        let p = FftPlan::<f64>::new(1).unwrap();
        let mut d = vec![Complex::new(3.0, 1.0)];
        p.forward(&mut d);
        assert_eq!(d[0], Complex::new(3.0, 1.0));
        let p = FftPlan::<f64>::new(2).unwrap();
        let mut d = vec![Complex::new(1.0, 0.0), Complex::new(2.0, 0.0)];
        p.forward(&mut d);
        assert_eq!(d, vec![Complex::new(3.0, 0.0), Complex::new(-1.0, 0.0)]);
    }

    #[test]
    fn wavenumbers_wrap() {
        let ks: Vec<i64> = (0..8).map(|j| wavenumber(j, 8)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, 4, -3, -2, -1]);
    }
}
