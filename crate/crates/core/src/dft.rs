//! Discrete Fourier transforms.
//!
//! Forward transform carries no normalization, the inverse carries `1/M`:
//!
//! ```text
//! X[k] = Σ_m x[m] e^{-j2πmk/M}        x[m] = (1/M) Σ_k X[k] e^{+j2πmk/M}
//! ```
//!
//! Power-of-two lengths use an iterative radix-2 FFT; other lengths fall back
//! to a direct O(M²) evaluation.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed transform of a fixed length.
#[derive(Debug, Clone)]
pub struct DftPlan {
    len: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2 {
        /// `e^{-j2πk/M}` for `k < M/2`.
        twiddles: Vec<Complex64>,
        bitrev: Vec<usize>,
    },
    /// `e^{-j2πk/M}` for `k < M`, indexed by `(m·k) mod M`.
    Direct { roots: Vec<Complex64> },
}

impl DftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptySequence);
        }
        let kind = if len.is_power_of_two() {
            let bits = len.trailing_zeros();
            let bitrev = (0..len)
                .map(|i| {
                    if bits == 0 {
                        0
                    } else {
                        i.reverse_bits() >> (usize::BITS - bits)
                    }
                })
                .collect();
            let twiddles = (0..len / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                .collect();
            PlanKind::Radix2 { twiddles, bitrev }
        } else {
            let roots = (0..len)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                .collect();
            PlanKind::Direct { roots }
        };
        Ok(Self { len, kind })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_fast(&self) -> bool {
        matches!(self.kind, PlanKind::Radix2 { .. })
    }

    /// In-place forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// In-place inverse transform including the `1/M` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let s = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Radix2 { twiddles, bitrev } => {
                for (i, &j) in bitrev.iter().enumerate() {
                    if i < j {
                        buf.swap(i, j);
                    }
                }
                let n = self.len;
                let mut half = 1;
                while half < n {
                    let stride = n / (2 * half);
                    for start in (0..n).step_by(2 * half) {
                        for j in 0..half {
                            let mut w = twiddles[j * stride];
                            if inverse {
                                w = w.conj();
                            }
                            let a = buf[start + j];
                            let b = buf[start + j + half] * w;
                            buf[start + j] = a + b;
                            buf[start + j + half] = a - b;
                        }
                    }
                    half *= 2;
                }
            }
            PlanKind::Direct { roots } => {
                let n = self.len;
                let out: Vec<Complex64> = (0..n)
                    .map(|k| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (m, &x) in buf.iter().enumerate() {
                            let w = roots[(m * k) % n];
                            acc += x * if inverse { w.conj() } else { w };
                        }
                        acc
                    })
                    .collect();
                buf.copy_from_slice(&out);
            }
        }
    }
}

pub fn dft_forward(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = DftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.forward(&mut buf);
    Ok(buf)
}

pub fn dft_inverse(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = DftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.inverse(&mut buf);
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn naive(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(m, &v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (m * k) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    fn assert_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn impulse_and_constant() {
        let imp = dft_forward(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert_close(&imp, &[c(1.0); 4], 1e-15);
        let dc = dft_forward(&[c(1.0); 4]).unwrap();
        assert_close(&dc, &[c(4.0), c(0.0), c(0.0), c(0.0)], 1e-15);
        let inv = dft_inverse(&[c(4.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert_close(&inv, &[c(1.0); 4], 1e-15);
        let inv = dft_inverse(&[c(1.0); 4]).unwrap();
        assert_close(&inv, &[c(1.0), c(0.0), c(0.0), c(0.0)], 1e-15);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(dft_forward(&[]), Err(Error::EmptySequence)));
        assert!(matches!(dft_inverse(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn length_one() {
        assert_close(&dft_forward(&[c(3.0)]).unwrap(), &[c(3.0)], 0.0);
    }

    proptest! {
        #[test]
        fn matches_naive(re in prop::collection::vec(-1.0..1.0f64, 8), im in prop::collection::vec(-1.0..1.0f64, 8)) {
            let x: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
            assert_close(&dft_forward(&x).unwrap(), &naive(&x), 1e-12);
        }

        #[test]
        fn non_power_of_two_matches_naive(n in 1usize..20, seed in any::<u64>()) {
            let x: Vec<Complex64> = (0..n).map(|i| {
                let v = ((seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407))) >> 11) as f64 / (1u64 << 53) as f64;
                Complex64::new(v - 0.5, 0.25 - v * v)
            }).collect();
            assert_close(&dft_forward(&x).unwrap(), &naive(&x), 1e-12);
        }

        #[test]
        fn roundtrip(re in prop::collection::vec(-1.0..1.0f64, 16), im in prop::collection::vec(-1.0..1.0f64, 16)) {
            let x: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
            let back = dft_inverse(&dft_forward(&x).unwrap()).unwrap();
            assert_close(&back, &x, 1e-12);
        }

        #[test]
        fn parseval(exp in prop::sample::select(vec![1u32, 2, 3, 4, 6]), seed in prop::collection::vec(-3.0..3.0f64, 128)) {
            let m = 1usize << exp;
            let x: Vec<Complex64> = (0..m).map(|i| Complex64::new(seed[2 * i], seed[2 * i + 1])).collect();
            let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let freq: f64 = dft_forward(&x).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64;
            prop_assert!((time - freq).abs() <= 1e-10 * time.max(1e-300));
        }
    }
}
