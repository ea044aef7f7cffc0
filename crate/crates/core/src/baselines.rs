//! Linear-in-parameters references: basis-function fits of memoryless maps
//! and the per-plant memory polynomial.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// `Φ_p(x) = x^p`, `p = 1..P`.
    Power,
    /// `Φ_p(x) = sin(2π p x / T_x)`.
    OddFourier { period: f64 },
}

impl Basis {
    pub fn eval(&self, p: usize, x: f64) -> f64 {
        match *self {
            Basis::Power => x.powi(p as i32),
            Basis::OddFourier { period } => (2.0 * std::f64::consts::PI * p as f64 * x / period).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFit {
    pub basis: Basis,
    pub order: usize,
    /// `a_1 .. a_P`.
    pub coeffs: Vec<f64>,
}

impl BasisFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| a * self.basis.eval(i + 1, x))
            .sum()
    }

    /// `Σ (f_i − f̂(x_i))²`.
    pub fn residual(&self, xs: &[f64], fs: &[f64]) -> f64 {
        xs.iter().zip(fs).map(|(&x, &f)| (f - self.eval(x)).powi(2)).sum()
    }
}

pub const BASIS_RIDGE: f64 = 1e-10;

/// Discrete least squares for `a_p`, solved by QR of the design matrix
/// stacked on `√ridge · I`.
pub fn fit_basis_ls(xs: &[f64], fs: &[f64], basis: Basis, order: usize) -> Result<BasisFit> {
    if xs.len() != fs.len() {
        return Err(Error::Shape("basis fit needs one value per sample".into()));
    }
    if order == 0 {
        return Err(Error::Config("basis order must be at least 1".into()));
    }
    if let Basis::OddFourier { period } = basis {
        if period <= 0.0 {
            return Err(Error::Config(format!("Fourier period must be positive, got {period}")));
        }
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < order {
        return Err(Error::Conditioning(format!(
            "{} distinct samples cannot determine {order} coefficients",
            distinct.len()
        )));
    }
    let n = xs.len();
    let mut a = DMatrix::<f64>::zeros(n + order, order);
    let mut b = DVector::<f64>::zeros(n + order);
    for (i, (&x, &f)) in xs.iter().zip(fs).enumerate() {
        for p in 0..order {
            a[(i, p)] = basis.eval(p + 1, x);
        }
        b[i] = f;
    }
    for p in 0..order {
        a[(n + p, p)] = BASIS_RIDGE.sqrt();
    }
    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..order).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|&d| d <= 1e-13 * max) {
        return Err(Error::Conditioning("basis design is rank deficient".into()));
    }
    let qtb = qr.q().transpose() * b;
    let coeffs = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;
    Ok(BasisFit {
        basis,
        order,
        coeffs: coeffs.iter().copied().collect(),
    })
}

/// Coefficients of one plant. `c[(p−1)·L + l]` multiplies the `p`-th basis
/// term delayed by `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpPlant {
    /// Input gain applied before the basis terms, `1 / max|x|`.
    pub scale: f64,
    pub c_re: Vec<f64>,
    /// Imaginary parts for the complex model.
    pub c_im: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPolynomial {
    pub order: usize,
    pub len: usize,
    pub complex: bool,
    pub plants: Vec<MpPlant>,
    /// Relative ridge used in the normal equations.
    pub ridge: f64,
}

pub const MP_RIDGE: f64 = 1e-8;
const MP_REFINE_STEPS: usize = 2;

fn check_mp(order: usize, len: usize, n: usize) -> Result<()> {
    if order == 0 || len == 0 {
        return Err(Error::Config("memory polynomial needs P ≥ 1 and L ≥ 1".into()));
    }
    if n < order * len {
        return Err(Error::Conditioning(format!(
            "{n} samples cannot determine {} coefficients",
            order * len
        )));
    }
    Ok(())
}

fn peak_scale(x: impl Iterator<Item = f64>) -> Result<f64> {
    let peak = x.fold(0.0, f64::max);
    if peak <= 0.0 || !peak.is_finite() {
        return Err(Error::UndefinedNormalization);
    }
    Ok(1.0 / peak)
}

/// Real design matrix with columns `(s x[n−l])^p`.
fn real_design(x: &[f64], scale: f64, order: usize, len: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut phi = DMatrix::<f64>::zeros(n, order * len);
    for p in 1..=order {
        let u: Vec<f64> = x.iter().map(|v| (scale * v).powi(p as i32)).collect();
        for l in 0..len {
            let mut col = phi.column_mut((p - 1) * len + l);
            for i in l..n {
                col[i] = u[i - l];
            }
        }
    }
    phi
}

/// Complex design matrix with columns `|s x|^{p−1} s x` delayed by `l`.
fn complex_design(re: &[f64], im: &[f64], scale: f64, order: usize, len: usize) -> DMatrix<Complex64> {
    let n = re.len();
    let mut phi = DMatrix::<Complex64>::zeros(n, order * len);
    for p in 1..=order {
        let u: Vec<Complex64> = re
            .iter()
            .zip(im)
            .map(|(&a, &b)| {
                let z = Complex64::new(scale * a, scale * b);
                z * z.norm().powi(p as i32 - 1)
            })
            .collect();
        for l in 0..len {
            let mut col = phi.column_mut((p - 1) * len + l);
            for i in l..n {
                col[i] = u[i - l];
            }
        }
    }
    phi
}

fn ridge_solve<T: nalgebra::ComplexField<RealField = f64>>(
    phi: &DMatrix<T>,
    y: &DVector<T>,
) -> Result<DVector<T>> {
    let mut g = phi.ad_mul(phi);
    let k = g.nrows();
    let trace: f64 = (0..k).map(|i| g[(i, i)].clone().real()).sum();
    let lambda = MP_RIDGE * trace / k as f64;
    for i in 0..k {
        g[(i, i)] += T::from_real(lambda);
    }
    let rhs = phi.ad_mul(y);
    let chol = Cholesky::new(g.clone())
        .ok_or_else(|| Error::Conditioning("normal equations are not positive definite".into()))?;
    let mut c = chol.solve(&rhs);
    // iterated Tikhonov: removes the ridge bias along well-conditioned
    // directions while keeping the damped ones damped
    for i in 0..k {
        g[(i, i)] -= T::from_real(lambda);
    }
    for _ in 0..MP_REFINE_STEPS {
        let r = &rhs - &g * &c;
        c += chol.solve(&r);
    }
    if c.iter().any(|v| !v.clone().real().is_finite() || !v.clone().imaginary().is_finite()) {
        return Err(Error::Conditioning("memory polynomial solve produced non-finite coefficients".into()));
    }
    Ok(c)
}

/// Independent least-squares fit per plant of
/// `ŷ[n] = Σ_p Σ_l c[p, l] (s x[n−l])^p`.
pub fn fit_memory_polynomial(x: &[Vec<f64>], y: &[Vec<f64>], order: usize, len: usize) -> Result<MemoryPolynomial> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape("memory polynomial needs matching plant sequences".into()));
    }
    let mut plants = Vec::with_capacity(x.len());
    for (xk, yk) in x.iter().zip(y) {
        if xk.len() != yk.len() {
            return Err(Error::Shape("input and output lengths differ".into()));
        }
        check_mp(order, len, xk.len())?;
        let scale = peak_scale(xk.iter().map(|v| v.abs()))?;
        let phi = real_design(xk, scale, order, len);
        let c = ridge_solve(&phi, &DVector::from_column_slice(yk))?;
        plants.push(MpPlant {
            scale,
            c_re: c.iter().copied().collect(),
            c_im: None,
        });
    }
    Ok(MemoryPolynomial {
        order,
        len,
        complex: false,
        plants,
        ridge: MP_RIDGE,
    })
}

/// Complex baseband variant with basis terms `|x|^{p−1} x`.
pub fn fit_memory_polynomial_complex(
    x: (&[Vec<f64>], &[Vec<f64>]),
    y: (&[Vec<f64>], &[Vec<f64>]),
    order: usize,
    len: usize,
) -> Result<MemoryPolynomial> {
    let k_n = x.0.len();
    if x.1.len() != k_n || y.0.len() != k_n || y.1.len() != k_n || k_n == 0 {
        return Err(Error::Shape("memory polynomial needs matching plant sequences".into()));
    }
    let mut plants = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let n = x.0[k].len();
        if x.1[k].len() != n || y.0[k].len() != n || y.1[k].len() != n {
            return Err(Error::Shape("input and output lengths differ".into()));
        }
        check_mp(order, len, n)?;
        let scale = peak_scale(x.0[k].iter().zip(&x.1[k]).map(|(a, b)| a.hypot(*b)))?;
        let phi = complex_design(&x.0[k], &x.1[k], scale, order, len);
        let yv = DVector::from_iterator(n, y.0[k].iter().zip(&y.1[k]).map(|(&a, &b)| Complex64::new(a, b)));
        let c = ridge_solve(&phi, &yv)?;
        plants.push(MpPlant {
            scale,
            c_re: c.iter().map(|v| v.re).collect(),
            c_im: Some(c.iter().map(|v| v.im).collect()),
        });
    }
    Ok(MemoryPolynomial {
        order,
        len,
        complex: true,
        plants,
        ridge: MP_RIDGE,
    })
}

impl MemoryPolynomial {
    /// A real model with all coefficients zero and unit input scale.
    pub fn zeros(order: usize, len: usize, plants: usize) -> Self {
        Self {
            order,
            len,
            complex: false,
            plants: vec![
                MpPlant {
                    scale: 1.0,
                    c_re: vec![0.0; order * len],
                    c_im: None,
                };
                plants
            ],
            ridge: MP_RIDGE,
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if self.complex {
            return Err(Error::Shape("complex memory polynomial needs complex input".into()));
        }
        if x.len() != self.plants.len() {
            return Err(Error::Shape(format!(
                "model has {} plants, input has {}",
                self.plants.len(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(&self.plants)
            .map(|(xk, pl)| {
                let n = xk.len();
                let mut out = vec![0.0; n];
                for p in 1..=self.order {
                    let u: Vec<f64> = xk.iter().map(|v| (pl.scale * v).powi(p as i32)).collect();
                    for l in 0..self.len {
                        let c = pl.c_re[(p - 1) * self.len + l];
                        if c == 0.0 {
                            continue;
                        }
                        for i in l..n {
                            out[i] += c * u[i - l];
                        }
                    }
                }
                out
            })
            .collect())
    }

    pub fn predict_complex(&self, x: (&[Vec<f64>], &[Vec<f64>])) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if !self.complex {
            return Err(Error::Shape("real memory polynomial cannot take complex input".into()));
        }
        if x.0.len() != self.plants.len() || x.1.len() != self.plants.len() {
            return Err(Error::Shape("plant count mismatch".into()));
        }
        let mut out_re = Vec::new();
        let mut out_im = Vec::new();
        for (k, pl) in self.plants.iter().enumerate() {
            let phi = complex_design(&x.0[k], &x.1[k], pl.scale, self.order, self.len);
            let c_im = pl.c_im.as_deref().unwrap_or(&[]);
            let c = DVector::from_iterator(
                pl.c_re.len(),
                pl.c_re.iter().enumerate().map(|(i, &r)| Complex64::new(r, c_im.get(i).copied().unwrap_or(0.0))),
            );
            let yhat = phi * c;
            out_re.push(yhat.iter().map(|v| v.re).collect());
            out_im.push(yhat.iter().map(|v| v.im).collect());
        }
        Ok((out_re, out_im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::apply_lti;
    use crate::rng::Rng;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| -1.0 + (i as f64 + 0.5) * 2.0 / n as f64).collect()
    }

    #[test]
    fn cubic_is_recovered_exactly() {
        let xs = grid(200);
        let fs: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        for order in [3, 5] {
            let fit = fit_basis_ls(&xs, &fs, Basis::Power, order).unwrap();
            for (i, a) in fit.coeffs.iter().enumerate() {
                let expect = if i == 2 { 1.0 } else { 0.0 };
                assert!((a - expect).abs() < 1e-9, "order {order}: a{} = {a}", i + 1);
            }
        }
    }

    #[test]
    fn sine_is_first_fourier_term() {
        let xs = grid(400);
        let fs: Vec<f64> = xs.iter().map(|x| (2.0 * std::f64::consts::PI * x / 2.0).sin()).collect();
        let fit = fit_basis_ls(&xs, &fs, Basis::OddFourier { period: 2.0 }, 4).unwrap();
        assert!((fit.coeffs[0] - 1.0).abs() < 1e-9);
        assert!(fit.coeffs[1..].iter().all(|a| a.abs() < 1e-9));
    }

    #[test]
    fn arctan_fit_matches_continuous_least_squares() {
        // continuous normal equations on (−1, 1): ∫ x^{p+q} dx and ∫ x^p atan(x) dx
        let order = 6;
        let quad = grid(200_000);
        let w = 2.0 / quad.len() as f64;
        let mut g = DMatrix::<f64>::zeros(order, order);
        let mut b = DVector::<f64>::zeros(order);
        for p in 1..=order {
            for q in 1..=order {
                let e = (p + q) as i32;
                g[(p - 1, q - 1)] = if e % 2 == 0 { 2.0 / (e as f64 + 1.0) } else { 0.0 };
            }
            b[p - 1] = quad.iter().map(|x| x.powi(p as i32) * x.atan()).sum::<f64>() * w;
        }
        let a = g.lu().solve(&b).unwrap();
        let oracle_resid = quad
            .iter()
            .map(|&x| {
                let fh: f64 = (1..=order).map(|p| a[p - 1] * x.powi(p as i32)).sum();
                (x.atan() - fh).powi(2)
            })
            .sum::<f64>()
            * w;

        let xs = grid(20_000);
        let fs: Vec<f64> = xs.iter().map(|x| x.atan()).collect();
        let fit = fit_basis_ls(&xs, &fs, Basis::Power, order).unwrap();
        let resid = fit.residual(&xs, &fs) * 2.0 / xs.len() as f64;
        assert!((resid - oracle_resid).abs() < 1e-8, "{resid} vs {oracle_resid}");
    }

    #[test]
    fn higher_order_never_fits_worse() {
        let mut rng = Rng::new(1);
        let xs: Vec<f64> = (0..300).map(|_| rng.uniform(-0.9, 0.9)).collect();
        let fs: Vec<f64> = xs.iter().map(|x| (3.0 * x).atan()).collect();
        let mut prev = f64::INFINITY;
        for order in 1..=8 {
            let r = fit_basis_ls(&xs, &fs, Basis::Power, order).unwrap().residual(&xs, &fs);
            assert!(r <= prev * (1.0 + 1e-9));
            prev = r;
        }
    }

    #[test]
    fn too_few_distinct_samples() {
        let xs = vec![0.5; 10];
        assert!(matches!(
            fit_basis_ls(&xs, &xs, Basis::Power, 2),
            Err(Error::Conditioning(_))
        ));
    }

    fn nmse(y: &[f64], yh: &[f64]) -> f64 {
        let e: f64 = y.iter().zip(yh).map(|(a, b)| (a - b).powi(2)).sum();
        10.0 * (e / y.iter().map(|v| v * v).sum::<f64>()).log10()
    }

    #[test]
    fn memory_polynomial_absorbs_lti_plants() {
        let mut rng = Rng::new(2);
        let x: Vec<Vec<f64>> = (0..2).map(|_| rng.normals(3000)).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|xk| apply_lti(xk, &rng.normals(16))).collect();
        let mp = fit_memory_polynomial(&x, &y, 3, 16).unwrap();
        let yh = mp.predict(&x).unwrap();
        for k in 0..2 {
            assert!(nmse(&y[k], &yh[k]) <= -120.0, "{}", nmse(&y[k], &yh[k]));
        }
    }

    #[test]
    fn memoryless_cubic_is_recovered() {
        let x = vec![Rng::new(3).normals(2000)];
        let y = vec![x[0].iter().map(|v| v * v * v).collect::<Vec<f64>>()];
        let mp = fit_memory_polynomial(&x, &y, 4, 1).unwrap();
        // coefficients act on the scaled input s·x
        let s = mp.plants[0].scale;
        let c3 = mp.plants[0].c_re[2] * s.powi(3);
        assert!((c3 - 1.0).abs() < 1e-8, "{c3}");
    }

    #[test]
    fn residual_is_orthogonal_to_regressors() {
        let mut rng = Rng::new(4);
        let x = vec![rng.normals(1000)];
        let y = vec![x[0].iter().map(|v| (2.0 * v).atan() + 0.1 * v * v).collect::<Vec<f64>>()];
        let mp = fit_memory_polynomial(&x, &y, 4, 3).unwrap();
        let yh = mp.predict(&x).unwrap();
        let r: Vec<f64> = y[0].iter().zip(&yh[0]).map(|(a, b)| a - b).collect();
        let phi = real_design(&x[0], mp.plants[0].scale, 4, 3);
        let proj = phi.transpose() * DVector::from_column_slice(&r);
        let scale = (phi.transpose() * DVector::from_column_slice(&y[0])).norm();
        assert!(proj.norm() < 1e-8 * scale, "{}", proj.norm() / scale);
    }

    #[test]
    fn prediction_examples() {
        let x = vec![Rng::new(5).normals(50)];
        let zero = MemoryPolynomial::zeros(3, 4, 1);
        assert!(zero.predict(&x).unwrap()[0].iter().all(|&v| v == 0.0));
        let mut id = zero.clone();
        id.plants[0].c_re[0] = 1.0;
        assert_eq!(id.predict(&x).unwrap()[0], x[0]);
    }

    #[test]
    fn prediction_matches_triple_loop() {
        let mut rng = Rng::new(6);
        let x = vec![rng.normals(40)];
        let mut mp = MemoryPolynomial::zeros(3, 4, 1);
        mp.plants[0].scale = 0.7;
        mp.plants[0].c_re = rng.normals(12);
        let yh = mp.predict(&x).unwrap();
        for n in 0..40 {
            let mut acc = 0.0;
            for p in 1..=3 {
                for l in 0..4 {
                    if n >= l {
                        acc += mp.plants[0].c_re[(p - 1) * 4 + l] * (0.7 * x[0][n - l]).powi(p as i32);
                    }
                }
            }
            assert!((acc - yh[0][n]).abs() < 1e-12);
        }
    }

    #[test]
    fn per_plant_solutions_follow_plant_order() {
        let mut rng = Rng::new(7);
        let x: Vec<Vec<f64>> = (0..3).map(|_| rng.normals(500)).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|a| a.atan()).collect()).collect();
        let a = fit_memory_polynomial(&x, &y, 3, 2).unwrap();
        let xr: Vec<Vec<f64>> = x.iter().rev().cloned().collect();
        let yr: Vec<Vec<f64>> = y.iter().rev().cloned().collect();
        let b = fit_memory_polynomial(&xr, &yr, 3, 2).unwrap();
        for k in 0..3 {
            assert_eq!(a.plants[k], b.plants[2 - k]);
        }
    }

    #[test]
    fn complex_memory_polynomial_fits_baseband_cubic() {
        let mut rng = Rng::new(8);
        let (re, im) = (rng.normals(2000), rng.normals(2000));
        // y = x + 0.1 |x|² x, representable with p = 1 and p = 3
        let (yr, yi): (Vec<f64>, Vec<f64>) = re
            .iter()
            .zip(&im)
            .map(|(&a, &b)| {
                let g = 1.0 + 0.1 * (a * a + b * b);
                (g * a, g * b)
            })
            .unzip();
        let mp = fit_memory_polynomial_complex((&[re.clone()], &[im.clone()]), (&[yr.clone()], &[yi.clone()]), 3, 2).unwrap();
        let (pr, pi) = mp.predict_complex((&[re], &[im])).unwrap();
        let e: f64 = pr[0].iter().zip(&yr).chain(pi[0].iter().zip(&yi)).map(|(a, b)| (a - b).powi(2)).sum();
        let s: f64 = yr.iter().chain(&yi).map(|v| v * v).sum();
        assert!(10.0 * (e / s).log10() < -100.0);
    }
}
