//! Time-domain multikernel FIR block with "valid" convolution.
//!
//! ```text
//! d[t, κ, p, n] = Σ_i Σ_l x[t, κ, i, n + L - 1 - l] · w[l, κ, i, p]     n = 0..M-L
//! ```
//!
//! Output sample `n` lines up with input sample `n + L - 1`. In single-kernel
//! mode the kernel has one plant slice that is broadcast to every `κ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{dot, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    Multikernel,
    SingleKernel,
}

/// Kernel geometry `(L, K_w, I, P)`; `K_w` is 1 in single-kernel mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirShape {
    pub len: usize,
    pub kernels: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl FirShape {
    pub fn new(len: usize, plants: usize, inputs: usize, outputs: usize, mode: KernelMode) -> Self {
        let kernels = match mode {
            KernelMode::Multikernel => plants,
            KernelMode::SingleKernel => 1,
        };
        Self {
            len,
            kernels,
            inputs,
            outputs,
        }
    }

    pub fn numel(&self) -> usize {
        self.len * self.kernels * self.inputs * self.outputs
    }

    #[inline]
    pub fn index(&self, l: usize, kw: usize, i: usize, p: usize) -> usize {
        ((l * self.kernels + kw) * self.inputs + i) * self.outputs + p
    }

    /// Kernel slice used for plant `k`.
    #[inline]
    pub fn slice_for(&self, k: usize) -> usize {
        if self.kernels == 1 {
            0
        } else {
            k
        }
    }

    pub(crate) fn check_input(&self, x: &Tensor4) -> Result<()> {
        if self.len == 0 {
            return Err(Error::Spec("FIR kernel length must be at least 1".into()));
        }
        if x.channels() != self.inputs {
            return Err(Error::Shape(format!(
                "FIR block expects {} input channels, got {}",
                self.inputs,
                x.channels()
            )));
        }
        if self.kernels != 1 && self.kernels != x.plants() {
            return Err(Error::Shape(format!(
                "multikernel FIR has {} plant kernels but input has {} plants",
                self.kernels,
                x.plants()
            )));
        }
        if x.time_len() < self.len {
            return Err(Error::InsufficientFrame {
                frame_len: x.time_len(),
                kernel_len: self.len,
            });
        }
        Ok(())
    }

    /// Draws taps i.i.d. `N(0, 1/(L·I))`.
    pub fn init_taps(&self, rng: &mut Rng) -> Vec<f64> {
        let std = (1.0 / (self.len * self.inputs) as f64).sqrt();
        (0..self.numel()).map(|_| std * rng.normal()).collect()
    }
}

/// Valid convolution of `x` with taps `w` laid out per `shape`.
pub(crate) fn conv_valid(shape: &FirShape, w: &[f64], x: &Tensor4) -> Result<Tensor4> {
    shape.check_input(x)?;
    let [t_n, k_n, _, m] = x.shape();
    let l_n = shape.len;
    let mo = m - l_n + 1;
    let mut out = Tensor4::zeros([t_n, k_n, shape.outputs, mo]);
    for t in 0..t_n {
        for k in 0..k_n {
            let kw = shape.slice_for(k);
            for p in 0..shape.outputs {
                let row = out.series_mut(t, k, p);
                for i in 0..shape.inputs {
                    let xr = x.series(t, k, i);
                    for l in 0..l_n {
                        let wv = w[shape.index(l, kw, i, p)];
                        let off = l_n - 1 - l;
                        for (o, v) in row.iter_mut().zip(&xr[off..off + mo]) {
                            *o += wv * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv_valid`]: accumulates `scale ·` input and tap gradients.
pub(crate) fn conv_valid_adjoint(
    shape: &FirShape,
    w: &[f64],
    x: &Tensor4,
    g: &Tensor4,
    scale: f64,
    gx: &mut Tensor4,
    gw: &mut [f64],
) -> Result<()> {
    shape.check_input(x)?;
    let [t_n, k_n, _, m] = x.shape();
    let l_n = shape.len;
    let mo = m - l_n + 1;
    if g.shape() != [t_n, k_n, shape.outputs, mo] {
        return Err(Error::Shape(format!(
            "FIR upstream gradient {:?} does not match output {:?}",
            g.shape(),
            [t_n, k_n, shape.outputs, mo]
        )));
    }
    for t in 0..t_n {
        for k in 0..k_n {
            let kw = shape.slice_for(k);
            for i in 0..shape.inputs {
                let xr = x.series(t, k, i);
                let mut gxr = vec![0.0; m];
                for p in 0..shape.outputs {
                    let gr = g.series(t, k, p);
                    for l in 0..l_n {
                        let wi = shape.index(l, kw, i, p);
                        let off = l_n - 1 - l;
                        let seg = &xr[off..off + mo];
                        gw[wi] += scale * dot(gr, seg);
                        let wv = scale * w[wi];
                        for (o, v) in gxr[off..off + mo].iter_mut().zip(gr) {
                            *o += wv * v;
                        }
                    }
                }
                for (o, v) in gx.series_mut(t, k, i).iter_mut().zip(&gxr) {
                    *o += v;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirTimeBlock {
    shape: FirShape,
    mode: KernelMode,
    taps: Vec<f64>,
}

impl FirTimeBlock {
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
        Ok(Self {
            taps: shape.init_taps(rng),
            shape,
            mode,
        })
    }

    /// Block with explicit taps laid out `(L, K_w, I, P)`.
    pub fn from_taps(
        len: usize,
        plants: usize,
        inputs: usize,
        outputs: usize,
        mode: KernelMode,
        taps: Vec<f64>,
    ) -> Result<Self> {
        let shape = FirShape::new(len, plants, inputs, outputs, mode);
        if len == 0 || taps.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "FIR geometry {shape:?} needs {} taps, got {}",
                shape.numel(),
                taps.len()
            )));
        }
        Ok(Self { shape, mode, taps })
    }

    pub fn shape(&self) -> &FirShape {
        &self.shape
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv_valid(&self.shape, &self.taps, x)
    }

    pub fn backward(&self, x: &Tensor4, g: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        let mut gx = Tensor4::zeros(x.shape());
        let mut gw = vec![0.0; self.taps.len()];
        conv_valid_adjoint(&self.shape, &self.taps, x, g, 1.0, &mut gx, &mut gw)?;
        Ok((gx, gw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Block;
    use crate::gradcheck::{grad_check, DEFAULT_STEP};
    use crate::tensor::Signal;
    use crate::rng::Rng;
    use proptest::prelude::{any, prop_assert, proptest};

    fn frame(values: &[f64], plants: usize) -> Tensor4 {
        let data: Vec<f64> = (0..plants).flat_map(|_| values.iter().copied()).collect();
        Tensor4::from_vec([1, plants, 1, values.len()], data).unwrap()
    }

    #[test]
    fn first_difference() {
        let b = FirTimeBlock::from_taps(2, 1, 1, 1, KernelMode::Multikernel, vec![1.0, -1.0]).unwrap();
        let y = b.forward(&frame(&[1.0, 2.0, 3.0, 4.0], 1)).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn identity_and_delay_per_plant() {
        // taps (l, κ): κ=0 → δ[l], κ=1 → δ[l-1]
        let b = FirTimeBlock::from_taps(2, 2, 1, 1, KernelMode::Multikernel, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = b.forward(&frame(&[1.0, 2.0, 3.0, 4.0], 2)).unwrap();
        assert_eq!(y.series(0, 0, 0), &[2.0, 3.0, 4.0]);
        assert_eq!(y.series(0, 1, 0), &[1.0, 2.0, 3.0]);
    }

    /// Naive nest straight from the convolution sum.
    fn loop_nest(x: &Tensor4, b: &FirTimeBlock) -> Tensor4 {
        let s = b.shape();
        let [t_n, k_n, i_n, m] = x.shape();
        let mo = m - s.len + 1;
        let mut out = Tensor4::zeros([t_n, k_n, s.outputs, mo]);
        for t in 0..t_n {
            for k in 0..k_n {
                for p in 0..s.outputs {
                    for n in 0..mo {
                        let mut acc = 0.0;
                        for i in 0..i_n {
                            for l in 0..s.len {
                                let kw = if s.kernels == 1 { 0 } else { k };
                                acc += x.get(t, k, i, n + s.len - 1 - l) * b.taps()[s.index(l, kw, i, p)];
                            }
                        }
                        out.set(t, k, p, n, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_loop_nest() {
        let mut rng = Rng::new(9);
        for mode in [KernelMode::Multikernel, KernelMode::SingleKernel] {
            let b = FirTimeBlock::new(5, 3, 2, 2, mode, &mut rng).unwrap();
            let x = Tensor4::from_vec([2, 3, 2, 32], rng.normals(384)).unwrap();
            let y = b.forward(&x).unwrap();
            let r = loop_nest(&x, &b);
            assert_eq!(y.shape(), [2, 3, 2, 28]);
            for (a, c) in y.data().iter().zip(r.data()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let mut rng = Rng::new(0);
        let b = FirTimeBlock::new(5, 2, 1, 1, KernelMode::Multikernel, &mut rng).unwrap();
        assert!(matches!(
            b.forward(&Tensor4::zeros([1, 2, 1, 4])),
            Err(Error::InsufficientFrame { frame_len: 4, kernel_len: 5 })
        ));
        assert!(matches!(b.forward(&Tensor4::zeros([1, 3, 1, 8])), Err(Error::Shape(_))));
        assert!(FirTimeBlock::new(0, 2, 1, 1, KernelMode::Multikernel, &mut rng).is_err());
    }

    #[test]
    fn zero_kernel_has_zero_input_gradient() {
        let b = FirTimeBlock::from_taps(3, 1, 1, 1, KernelMode::Multikernel, vec![0.0; 3]).unwrap();
        let mut rng = Rng::new(1);
        let x = Tensor4::from_vec([1, 1, 1, 10], rng.normals(10)).unwrap();
        let g = Tensor4::from_vec([1, 1, 1, 8], rng.normals(8)).unwrap();
        let (gx, _) = b.backward(&x, &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = Rng::new(2);
        let b = FirTimeBlock::new(4, 2, 2, 3, KernelMode::Multikernel, &mut rng).unwrap();
        let x = Tensor4::from_vec([2, 2, 2, 9], rng.normals(72)).unwrap();
        let (gx, gw) = b.backward(&x, &Tensor4::zeros([2, 2, 3, 6])).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tap_gradient_is_lagged_correlation() {
        let mut rng = Rng::new(4);
        let b = FirTimeBlock::new(3, 1, 1, 1, KernelMode::Multikernel, &mut rng).unwrap();
        let x = Tensor4::from_vec([1, 1, 1, 12], rng.normals(12)).unwrap();
        let g = Tensor4::from_vec([1, 1, 1, 10], rng.normals(10)).unwrap();
        let (_, gw) = b.backward(&x, &g).unwrap();
        for l in 0..3 {
            let corr: f64 = (0..10).map(|n| g.data()[n] * x.data()[n + 2 - l]).sum();
            assert!((gw[l] - corr).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(8);
        for (len, k, i, p, mode) in [
            (3, 2, 1, 2, KernelMode::Multikernel),
            (5, 3, 2, 1, KernelMode::SingleKernel),
            (1, 2, 3, 3, KernelMode::Multikernel),
        ] {
            let mut block = Block::FirTime(FirTimeBlock::new(len, k, i, p, mode, &mut rng).unwrap());
            let n = 2 * k * i * 10;
            let x = Signal::Real(Tensor4::from_vec([2, k, i, 10], rng.normals(n)).unwrap());
            let r = grad_check(&mut block, &x, DEFAULT_STEP).unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    #[test]
    fn plant_isolation() {
        let mut rng = Rng::new(12);
        let b = FirTimeBlock::new(4, 3, 1, 2, KernelMode::Multikernel, &mut rng).unwrap();
        let x = Tensor4::from_vec([2, 3, 1, 16], rng.normals(96)).unwrap();
        let y0 = b.forward(&x).unwrap();
        let mut b1 = b.clone();
        let s = *b1.shape();
        for l in 0..4 {
            for p in 0..2 {
                b1.taps_mut()[s.index(l, 1, 0, p)] += 0.5;
            }
        }
        let y1 = b1.forward(&x).unwrap();
        for t in 0..2 {
            for k in 0..3 {
                for p in 0..2 {
                    let same = y0.series(t, k, p) == y1.series(t, k, p);
                    assert_eq!(same, k != 1);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn linearity(seed in any::<u64>(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
            let mut rng = Rng::new(seed);
            let b = FirTimeBlock::new(4, 2, 1, 2, KernelMode::Multikernel, &mut rng).unwrap();
            let x1 = Tensor4::from_vec([1, 2, 1, 12], rng.normals(24)).unwrap();
            let x2 = Tensor4::from_vec([1, 2, 1, 12], rng.normals(24)).unwrap();
            let mix: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(a, c)| alpha * a + beta * c).collect();
            let ym = b.forward(&Tensor4::from_vec([1, 2, 1, 12], mix).unwrap()).unwrap();
            let y1 = b.forward(&x1).unwrap();
            let y2 = b.forward(&x2).unwrap();
            for ((m, a), c) in ym.data().iter().zip(y1.data()).zip(y2.data()) {
                prop_assert!((m - (alpha * a + beta * c)).abs() < 1e-10);
            }
        }
    }
}
