//! Frequency-domain multikernel FIR block using overlap-save.
//!
//! The trainable spectrum `W[k, κ, i, p]` (length `M` per kernel) is first
//! projected onto kernels whose time support is the first `L` taps:
//!
//! ```text
//! W̃ = DFT( mask_L ⊙ IDFT(W) )
//! D[t, k, κ, p] = Σ_i X[t, k, κ, i] · W̃[k, κ, i, p]      X = DFT of the input frame
//! d[t, m, κ, p] = Re IDFT(D)[m]                           m = M-R..M-1,  R = M-L+1
//! ```
//!
//! Only the real part of the inverse transform is returned, so the effective
//! time-domain kernel is `Re(mask_L ⊙ IDFT(W))`. The forward pass multiplies
//! by the spectrum of that real kernel, which gives the same output.

use num_complex::Complex64;

use super::fir_time::{FirShape, KernelMode};
use crate::dft::DftPlan;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct FirFreqBlock {
    /// Geometry of the equivalent time-domain kernel.
    shape: FirShape,
    frame_len: usize,
    mode: KernelMode,
    /// Real parts `(M, K_w, I, P)` followed by imaginary parts.
    params: Vec<f64>,
    plan: DftPlan,
}

impl PartialEq for FirFreqBlock {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.frame_len == other.frame_len
            && self.mode == other.mode
            && self.params == other.params
    }
}

impl FirFreqBlock {
    fn validate(shape: &FirShape, frame_len: usize, allow_slow_dft: bool) -> Result<DftPlan> {
        if shape.len == 0 || shape.inputs == 0 || shape.outputs == 0 || shape.kernels == 0 {
            return Err(Error::Spec(format!("invalid FIR geometry {shape:?}")));
        }
        if frame_len < shape.len {
            return Err(Error::InsufficientFrame {
                frame_len,
                kernel_len: shape.len,
            });
        }
        let plan = DftPlan::new(frame_len)?;
        if !plan.is_fast() && !allow_slow_dft {
            return Err(Error::Config(format!(
                "frequency-domain FIR needs a power-of-two frame length, got {frame_len}"
            )));
        }
        Ok(plan)
    }

    /// Spectrum initialized as the DFT of `N(0, 1/(L·I))` taps.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        len: usize,
        frame_len: usize,
        plants: usize,
        inputs: usize,
        outputs: usize,
        mode: KernelMode,
        allow_slow_dft: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let shape = FirShape::new(len, plants, inputs, outputs, mode);
        Self::validate(&shape, frame_len, allow_slow_dft)?;
        let taps = shape.init_taps(rng);
        Self::from_time_taps(len, frame_len, plants, inputs, outputs, mode, allow_slow_dft, &taps)
    }

    /// Block whose spectrum is the DFT of the given `(L, K_w, I, P)` taps.
    #[allow(clippy::too_many_arguments)]
    pub fn from_time_taps(
        len: usize,
        frame_len: usize,
        plants: usize,
        inputs: usize,
        outputs: usize,
        mode: KernelMode,
        allow_slow_dft: bool,
        taps: &[f64],
    ) -> Result<Self> {
        let shape = FirShape::new(len, plants, inputs, outputs, mode);
        let plan = Self::validate(&shape, frame_len, allow_slow_dft)?;
        if taps.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "FIR geometry {shape:?} needs {} taps, got {}",
                shape.numel(),
                taps.len()
            )));
        }
        let mut block = Self {
            shape,
            frame_len,
            mode,
            params: vec![0.0; 2 * frame_len * shape.kernels * shape.inputs * shape.outputs],
            plan,
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
        for kw in 0..shape.kernels {
            for i in 0..shape.inputs {
                for p in 0..shape.outputs {
                    buf.fill(Complex64::new(0.0, 0.0));
                    for l in 0..len {
                        buf[l].re = taps[shape.index(l, kw, i, p)];
                    }
                    block.plan.forward(&mut buf);
                    block.store_spectrum(kw, i, p, &buf);
                }
            }
        }
        Ok(block)
    }

    /// Block with an explicit (unconstrained) spectrum, real parts then imaginary.
    #[allow(clippy::too_many_arguments)]
    pub fn from_spectrum(
        len: usize,
        frame_len: usize,
        plants: usize,
        inputs: usize,
        outputs: usize,
        mode: KernelMode,
        allow_slow_dft: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        let shape = FirShape::new(len, plants, inputs, outputs, mode);
        let plan = Self::validate(&shape, frame_len, allow_slow_dft)?;
        let n = 2 * frame_len * shape.kernels * shape.inputs * shape.outputs;
        if params.len() != n {
            return Err(Error::Shape(format!(
                "frequency kernel needs {n} values, got {}",
                params.len()
            )));
        }
        Ok(Self {
            shape,
            frame_len,
            mode,
            params,
            plan,
        })
    }

    pub fn shape(&self) -> &FirShape {
        &self.shape
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// Valid output samples per frame, `R = M - L + 1`.
    pub fn shift(&self) -> usize {
        self.frame_len - self.shape.len + 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn half(&self) -> usize {
        self.params.len() / 2
    }

    #[inline]
    fn spec_index(&self, bin: usize, kw: usize, i: usize, p: usize) -> usize {
        ((bin * self.shape.kernels + kw) * self.shape.inputs + i) * self.shape.outputs + p
    }

    fn load_spectrum(&self, kw: usize, i: usize, p: usize, buf: &mut [Complex64]) {
        let h = self.half();
        for (bin, v) in buf.iter_mut().enumerate() {
            let j = self.spec_index(bin, kw, i, p);
            *v = Complex64::new(self.params[j], self.params[h + j]);
        }
    }

    fn store_spectrum(&mut self, kw: usize, i: usize, p: usize, buf: &[Complex64]) {
        let h = self.half();
        for (bin, v) in buf.iter().enumerate() {
            let j = self.spec_index(bin, kw, i, p);
            self.params[j] = v.re;
            self.params[h + j] = v.im;
        }
    }

    fn project(&self, buf: &mut [Complex64]) {
        self.plan.inverse(buf);
        buf[self.shape.len..].fill(Complex64::new(0.0, 0.0));
        self.plan.forward(buf);
    }

    /// Projected spectra, contiguous per `(κ_w, i, p)` kernel.
    fn constrained_spectra(&self) -> Vec<Complex64> {
        let m = self.frame_len;
        let s = &self.shape;
        let mut out = vec![Complex64::new(0.0, 0.0); s.kernels * s.inputs * s.outputs * m];
        for kw in 0..s.kernels {
            for i in 0..s.inputs {
                for p in 0..s.outputs {
                    let off = ((kw * s.inputs + i) * s.outputs + p) * m;
                    let buf = &mut out[off..off + m];
                    self.load_spectrum(kw, i, p, buf);
                    self.project(buf);
                }
            }
        }
        out
    }

    /// Copy with the kernel projected onto its first `L` time taps.
    pub fn constrained(&self) -> FirFreqBlock {
        let spectra = self.constrained_spectra();
        let mut out = self.clone();
        let m = self.frame_len;
        let s = self.shape;
        for kw in 0..s.kernels {
            for i in 0..s.inputs {
                for p in 0..s.outputs {
                    let off = ((kw * s.inputs + i) * s.outputs + p) * m;
                    out.store_spectrum(kw, i, p, &spectra[off..off + m]);
                }
            }
        }
        out
    }

    /// Complex time-domain kernel `IDFT(W)` of one slice, all `M` taps.
    pub fn time_response(&self, kw: usize, i: usize, p: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.frame_len];
        self.load_spectrum(kw, i, p, &mut buf);
        self.plan.inverse(&mut buf);
        buf
    }

    /// Effective real taps `(L, K_w, I, P)` of the constrained kernel.
    pub fn effective_taps(&self) -> Vec<f64> {
        let s = self.shape;
        let mut taps = vec![0.0; s.numel()];
        for kw in 0..s.kernels {
            for i in 0..s.inputs {
                for p in 0..s.outputs {
                    let h = self.time_response(kw, i, p);
                    for l in 0..s.len {
                        taps[s.index(l, kw, i, p)] = h[l].re;
                    }
                }
            }
        }
        taps
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        self.shape.check_input(x)?;
        if x.time_len() != self.frame_len {
            return Err(Error::Shape(format!(
                "frequency-domain FIR built for frames of {} samples, got {}",
                self.frame_len,
                x.time_len()
            )));
        }
        Ok(())
    }

    fn input_spectra(&self, x: &Tensor4, t: usize, k: usize) -> Vec<Complex64> {
        let m = self.frame_len;
        let mut xs = vec![Complex64::new(0.0, 0.0); self.shape.inputs * m];
        for i in 0..self.shape.inputs {
            let buf = &mut xs[i * m..(i + 1) * m];
            for (b, &v) in buf.iter_mut().zip(x.series(t, k, i)) {
                *b = Complex64::new(v, 0.0);
            }
            self.plan.forward(buf);
        }
        xs
    }

    /// Spectra of the effective real taps, contiguous per `(κ_w, i, p)`.
    fn effective_spectra(&self) -> Vec<Complex64> {
        let m = self.frame_len;
        let len = self.shape.len;
        let mut out = self.raw_time_responses();
        for buf in out.chunks_mut(m) {
            for (l, v) in buf.iter_mut().enumerate() {
                *v = if l < len { Complex64::new(v.re, 0.0) } else { Complex64::new(0.0, 0.0) };
            }
            self.plan.forward(buf);
        }
        out
    }

    fn raw_time_responses(&self) -> Vec<Complex64> {
        let m = self.frame_len;
        let s = &self.shape;
        let mut out = vec![Complex64::new(0.0, 0.0); s.kernels * s.inputs * s.outputs * m];
        for kw in 0..s.kernels {
            for i in 0..s.inputs {
                for p in 0..s.outputs {
                    let off = ((kw * s.inputs + i) * s.outputs + p) * m;
                    let buf = &mut out[off..off + m];
                    self.load_spectrum(kw, i, p, buf);
                    self.plan.inverse(buf);
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let [t_n, k_n, _, m] = x.shape();
        let s = self.shape;
        let r = self.shift();
        let w = self.effective_spectra();
        let mut out = Tensor4::zeros([t_n, k_n, s.outputs, r]);
        let mut acc = vec![Complex64::new(0.0, 0.0); m];
        for t in 0..t_n {
            for k in 0..k_n {
                let kw = s.slice_for(k);
                let xs = self.input_spectra(x, t, k);
                for p in 0..s.outputs {
                    acc.fill(Complex64::new(0.0, 0.0));
                    for i in 0..s.inputs {
                        let off = ((kw * s.inputs + i) * s.outputs + p) * m;
                        for ((a, xv), wv) in acc.iter_mut().zip(&xs[i * m..(i + 1) * m]).zip(&w[off..off + m]) {
                            *a += xv * wv;
                        }
                    }
                    self.plan.inverse(&mut acc);
                    for (o, a) in out.series_mut(t, k, p).iter_mut().zip(&acc[m - r..]) {
                        *o = a.re;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reverse-mode gradients, including the path through the projection.
    pub fn backward(&self, x: &Tensor4, g: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        self.check_input(x)?;
        let [t_n, k_n, _, m] = x.shape();
        let s = self.shape;
        let r = self.shift();
        if g.shape() != [t_n, k_n, s.outputs, r] {
            return Err(Error::Shape(format!(
                "FIR upstream gradient {:?} does not match output {:?}",
                g.shape(),
                [t_n, k_n, s.outputs, r]
            )));
        }
        let mf = m as f64;
        let w = self.effective_spectra();
        // gradient w.r.t. the effective spectra, same layout as `w`
        let mut gw = vec![Complex64::new(0.0, 0.0); w.len()];
        let mut gx = Tensor4::zeros(x.shape());
        let mut gd = vec![Complex64::new(0.0, 0.0); m];
        for t in 0..t_n {
            for k in 0..k_n {
                let kw = s.slice_for(k);
                let xs = self.input_spectra(x, t, k);
                let mut gxs = vec![Complex64::new(0.0, 0.0); s.inputs * m];
                for p in 0..s.outputs {
                    // adjoint of Re(IDFT(·)) restricted to the last R samples
                    gd.fill(Complex64::new(0.0, 0.0));
                    for (d, &v) in gd[m - r..].iter_mut().zip(g.series(t, k, p)) {
                        d.re = v;
                    }
                    self.plan.forward(&mut gd);
                    gd.iter_mut().for_each(|v| *v /= mf);
                    for i in 0..s.inputs {
                        let off = ((kw * s.inputs + i) * s.outputs + p) * m;
                        let xi = &xs[i * m..(i + 1) * m];
                        for b in 0..m {
                            gw[off + b] += xi[b].conj() * gd[b];
                            gxs[i * m + b] += w[off + b].conj() * gd[b];
                        }
                    }
                }
                for i in 0..s.inputs {
                    let buf = &mut gxs[i * m..(i + 1) * m];
                    // adjoint of the forward DFT is M · IDFT
                    self.plan.inverse(buf);
                    for (o, v) in gx.series_mut(t, k, i).iter_mut().zip(buf.iter()) {
                        *o = v.re * mf;
                    }
                }
            }
        }
        // back through W̃ = DFT(Re(mask ⊙ IDFT(W)))
        let h = self.half();
        let mut gp = vec![0.0; self.params.len()];
        for kw in 0..s.kernels {
            for i in 0..s.inputs {
                for p in 0..s.outputs {
                    let off = ((kw * s.inputs + i) * s.outputs + p) * m;
                    let buf = &mut gw[off..off + m];
                    self.plan.inverse(buf);
                    for (l, v) in buf.iter_mut().enumerate() {
                        *v = if l < s.len { Complex64::new(v.re * mf, 0.0) } else { Complex64::new(0.0, 0.0) };
                    }
                    self.plan.forward(buf);
                    for (bin, v) in buf.iter().enumerate() {
                        let j = self.spec_index(bin, kw, i, p);
                        gp[j] = v.re / mf;
                        gp[h + j] = v.im / mf;
                    }
                }
            }
        }
        Ok((gx, gp))
    }
}
