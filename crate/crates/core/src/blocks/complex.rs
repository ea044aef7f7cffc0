//! Complex-baseband variants of the FIR and NL blocks.
//!
//! The FIR block works in Cartesian form with two real kernels,
//! `(a + jb) ⊛ (c + jd) = (a⊛c − b⊛d) + j(a⊛d + b⊛c)`. The NL block runs the
//! real MLP on the magnitude and restores the input phase:
//! `f(z) = f_mag(|z|) · e^{j∠z}`.

use super::fir_time::{conv_valid, conv_valid_adjoint, FirShape, KernelMode};
use super::nl::{NlBlock, NlCache, NlDims};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{CTensor, Tensor4};

/// Magnitudes below this produce an exactly zero output.
pub const MAGNITUDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFirBlock {
    shape: FirShape,
    mode: KernelMode,
    /// Real taps `(L, K_w, I, P)` followed by imaginary taps.
    params: Vec<f64>,
}

impl ComplexFirBlock {
    /// Both parts drawn `N(0, 1/(2·L·I))` so the complex taps have variance `1/(L·I)`.
    pub fn new(
        len: usize,
        plants: usize,
        inputs: usize,
        outputs: usize,
        mode: KernelMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        let shape = FirShape::new(len, plants, inputs, outputs, mode);
        if len == 0 || inputs == 0 || outputs == 0 || shape.kernels == 0 {
            return Err(Error::Spec(format!("invalid FIR geometry {shape:?}")));
        }
        let std = (0.5 / (len * inputs) as f64).sqrt();
        let params = (0..2 * shape.numel()).map(|_| std * rng.normal()).collect();
        Ok(Self { shape, mode, params })
    }

    pub fn from_taps(
        len: usize,
        plants: usize,
        inputs: usize,
        outputs: usize,
        mode: KernelMode,
        re: &[f64],
        im: &[f64],
    ) -> Result<Self> {
        let shape = FirShape::new(len, plants, inputs, outputs, mode);
        if len == 0 || re.len() != shape.numel() || im.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "complex FIR geometry {shape:?} needs {} taps per part",
                shape.numel()
            )));
        }
        let params = re.iter().chain(im).copied().collect();
        Ok(Self { shape, mode, params })
    }

    pub fn shape(&self) -> &FirShape {
        &self.shape
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn parts(&self) -> (&[f64], &[f64]) {
        self.params.split_at(self.shape.numel())
    }

    pub fn forward(&self, x: &CTensor) -> Result<CTensor> {
        let (c, d) = self.parts();
        let a = x.real_part();
        let b = x.imag_part();
        let ac = conv_valid(&self.shape, c, &a)?;
        let bd = conv_valid(&self.shape, d, &b)?;
        let ad = conv_valid(&self.shape, d, &a)?;
        let bc = conv_valid(&self.shape, c, &b)?;
        let re: Vec<f64> = ac.data().iter().zip(bd.data()).map(|(u, v)| u - v).collect();
        let im: Vec<f64> = ad.data().iter().zip(bc.data()).map(|(u, v)| u + v).collect();
        Ok(CTensor::from_raw(ac.shape(), re, im))
    }

    pub fn backward(&self, x: &CTensor, g: &CTensor) -> Result<(CTensor, Vec<f64>)> {
        let n = self.shape.numel();
        let (c, d) = self.parts();
        let a = x.real_part();
        let b = x.imag_part();
        let g_re = g.real_part();
        let g_im = g.imag_part();
        let mut ga = Tensor4::zeros(a.shape());
        let mut gb = Tensor4::zeros(b.shape());
        let mut gp = vec![0.0; 2 * n];
        let (gc, gd) = gp.split_at_mut(n);
        // re = a⊛c − b⊛d
        conv_valid_adjoint(&self.shape, c, &a, &g_re, 1.0, &mut ga, gc)?;
        conv_valid_adjoint(&self.shape, d, &b, &g_re, -1.0, &mut gb, gd)?;
        // im = a⊛d + b⊛c
        conv_valid_adjoint(&self.shape, d, &a, &g_im, 1.0, &mut ga, gd)?;
        conv_valid_adjoint(&self.shape, c, &b, &g_im, 1.0, &mut gb, gc)?;
        Ok((CTensor::from_real_imag(ga, gb)?, gp))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexNlBlock {
    nl: NlBlock,
}

/// Magnitudes, NL outputs and hidden activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ComplexNlCache {
    r: Tensor4,
    g: Tensor4,
    nl: NlCache,
}

impl ComplexNlBlock {
    pub fn new(nl: NlBlock) -> Result<Self> {
        if nl.dims().input != 1 {
            return Err(Error::Spec(format!(
                "complex NL block maps one magnitude channel, got {} inputs",
                nl.dims().input
            )));
        }
        Ok(Self { nl })
    }

    pub fn with_dims(dims: NlDims, rng: &mut Rng) -> Result<Self> {
        Self::new(NlBlock::new(dims, rng)?)
    }

    pub fn nl(&self) -> &NlBlock {
        &self.nl
    }

    pub fn nl_mut(&mut self) -> &mut NlBlock {
        &mut self.nl
    }

    fn magnitude(z: &CTensor) -> Tensor4 {
        let r = z.re().iter().zip(z.im()).map(|(a, b)| a.hypot(*b)).collect();
        Tensor4::from_raw(z.shape(), r)
    }

    pub fn forward(&self, z: &CTensor) -> Result<CTensor> {
        Ok(self.forward_cached(z)?.0)
    }

    pub fn forward_cached(&self, z: &CTensor) -> Result<(CTensor, ComplexNlCache)> {
        let [t_n, k_n, c, m] = z.shape();
        if c != 1 {
            return Err(Error::Shape(format!(
                "complex NL block expects 1 input channel, got {c}"
            )));
        }
        let r = Self::magnitude(z);
        let (g, nl) = self.nl.forward_cached(&r)?;
        let p_n = g.channels();
        let mut out = CTensor::zeros([t_n, k_n, p_n, m]);
        for t in 0..t_n {
            for k in 0..k_n {
                let src = z.index(t, k, 0, 0);
                for p in 0..p_n {
                    let dst = out.index(t, k, p, 0);
                    let gs = g.series(t, k, p);
                    for n in 0..m {
                        let rv = r.data()[src + n];
                        if rv < MAGNITUDE_EPS {
                            continue;
                        }
                        let s = gs[n] / rv;
                        out.re_mut()[dst + n] = s * z.re()[src + n];
                        out.im_mut()[dst + n] = s * z.im()[src + n];
                    }
                }
            }
        }
        Ok((out, ComplexNlCache { r, g, nl }))
    }

    /// Magnitudes are clamped to [`MAGNITUDE_EPS`] when forming the phase Jacobian.
    pub fn backward(&self, z: &CTensor, up: &CTensor) -> Result<(CTensor, Vec<f64>)> {
        let (_, cache) = self.forward_cached(z)?;
        self.backward_cached(z, &cache, up)
    }

    pub fn backward_cached(&self, z: &CTensor, cache: &ComplexNlCache, up: &CTensor) -> Result<(CTensor, Vec<f64>)> {
        let [t_n, k_n, c, m] = z.shape();
        if c != 1 {
            return Err(Error::Shape(format!(
                "complex NL block expects 1 input channel, got {c}"
            )));
        }
        let p_n = self.nl.dims().output;
        if up.shape() != [t_n, k_n, p_n, m] {
            return Err(Error::Shape(format!(
                "complex NL upstream gradient {:?} does not match output {:?}",
                up.shape(),
                [t_n, k_n, p_n, m]
            )));
        }
        let (r, g) = (&cache.r, &cache.g);
        if r.shape() != z.shape() || g.shape() != up.shape() {
            return Err(Error::Shape("complex NL cache does not belong to this input".into()));
        }
        let mut g_mag = Tensor4::zeros(g.shape());
        // Σ_p G_p · g_p, the gradient w.r.t. the unit phasor
        let mut gu_re = vec![0.0; z.re().len()];
        let mut gu_im = vec![0.0; z.re().len()];
        for t in 0..t_n {
            for k in 0..k_n {
                let src = z.index(t, k, 0, 0);
                for p in 0..p_n {
                    let dst = up.index(t, k, p, 0);
                    for n in 0..m {
                        let rc = r.data()[src + n].max(MAGNITUDE_EPS);
                        let ur = z.re()[src + n] / rc;
                        let ui = z.im()[src + n] / rc;
                        let (gr, gi) = (up.re()[dst + n], up.im()[dst + n]);
                        g_mag.data_mut()[dst + n] = gr * ur + gi * ui;
                        let gv = g.data()[dst + n];
                        gu_re[src + n] += gr * gv;
                        gu_im[src + n] += gi * gv;
                    }
                }
            }
        }
        let (g_r, gp) = self.nl.backward_cached(r, &cache.nl, &g_mag)?;
        let mut gz_re = vec![0.0; z.re().len()];
        let mut gz_im = vec![0.0; z.re().len()];
        for j in 0..gz_re.len() {
            let rc = r.data()[j].max(MAGNITUDE_EPS);
            let ur = z.re()[j] / rc;
            let ui = z.im()[j] / rc;
            let dot = ur * gu_re[j] + ui * gu_im[j];
            gz_re[j] = g_r.data()[j] * ur + (gu_re[j] - dot * ur) / rc;
            gz_im[j] = g_r.data()[j] * ui + (gu_im[j] - dot * ui) / rc;
        }
        Ok((CTensor::from_raw(z.shape(), gz_re, gz_im), gp))
    }
}
