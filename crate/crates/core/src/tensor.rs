//! Dense 4-axis tensors carrying all block inputs and outputs.
//!
//! Axis order is `(frames T, plants K, channels C, time M)`, row-major, so a
//! single channel of a single frame is a contiguous run of `M` samples.

use crate::error::{Error, Result};

/// Tensor shape `(T, K, C, M)`.
pub type Shape = [usize; 4];

fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// Real-valued `(T, K, C, M)` tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; numel(&shape)],
        }
    }

    /// Builds a tensor from external data, rejecting length mismatches and
    /// non-finite values.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for data produced by our own arithmetic.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn frames(&self) -> usize {
        self.shape[0]
    }

    pub fn plants(&self) -> usize {
        self.shape[1]
    }

    pub fn channels(&self) -> usize {
        self.shape[2]
    }

    pub fn time_len(&self) -> usize {
        self.shape[3]
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

    #[inline]
    pub fn index(&self, t: usize, k: usize, c: usize, m: usize) -> usize {
        ((t * self.shape[1] + k) * self.shape[2] + c) * self.shape[3] + m
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize, c: usize, m: usize) -> f64 {
        self.data[self.index(t, k, c, m)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, k: usize, c: usize, m: usize, v: f64) {
        let i = self.index(t, k, c, m);
        self.data[i] = v;
    }

    /// Contiguous time series of one `(frame, plant, channel)` triple.
    pub fn series(&self, t: usize, k: usize, c: usize) -> &[f64] {
        let start = self.index(t, k, c, 0);
        &self.data[start..start + self.shape[3]]
    }

    pub fn series_mut(&mut self, t: usize, k: usize, c: usize) -> &mut [f64] {
        let start = self.index(t, k, c, 0);
        let m = self.shape[3];
        &mut self.data[start..start + m]
    }

    /// Keeps the last `r` samples along the time axis.
    pub fn tail(&self, r: usize) -> Result<Tensor4> {
        let [t, k, c, m] = self.shape;
        if r > m {
            return Err(Error::Shape(format!(
                "cannot keep last {r} of {m} time samples"
            )));
        }
        let mut data = Vec::with_capacity(t * k * c * r);
        for chunk in self.data.chunks_exact(m.max(1)) {
            data.extend_from_slice(&chunk[m - r..]);
        }
        Ok(Tensor4::from_raw([t, k, c, r], data))
    }

    /// Inverse of [`Tensor4::tail`]: embeds `self` as the last samples of a
    /// zero tensor with time length `m`.
    pub fn pad_front(&self, m: usize) -> Tensor4 {
        let [t, k, c, r] = self.shape;
        assert!(r <= m);
        let mut out = Tensor4::zeros([t, k, c, m]);
        for (dst, src) in out
            .data
            .chunks_exact_mut(m.max(1))
            .zip(self.data.chunks_exact(r.max(1)))
        {
            dst[m - r..].copy_from_slice(src);
        }
        out
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    /// Frames `t0..t1` as a new tensor.
    pub fn frame_range(&self, t0: usize, t1: usize) -> Tensor4 {
        let [t, k, c, m] = self.shape;
        assert!(t0 <= t1 && t1 <= t);
        let stride = k * c * m;
        Tensor4::from_raw([t1 - t0, k, c, m], self.data[t0 * stride..t1 * stride].to_vec())
    }

    /// Sum of squares per plant, over frames, channels and time.
    pub fn plant_energies(&self) -> Vec<f64> {
        let [_, k, c, m] = self.shape;
        let mut out = vec![0.0; k];
        for (j, chunk) in self.data.chunks_exact((c * m).max(1)).enumerate() {
            out[j % k] += chunk.iter().map(|v| v * v).sum::<f64>();
        }
        out
    }
}

/// Complex-valued `(T, K, C, M)` tensor stored as split real/imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CTensor {
    shape: Shape,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl CTensor {
    pub fn zeros(shape: Shape) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_parts(shape: Shape, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = numel(&shape);
        if re.len() != n || im.len() != n {
            return Err(Error::Shape(format!(
                "re/im lengths {}/{} do not match shape {:?}",
                re.len(),
                im.len(),
                shape
            )));
        }
        if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("complex tensor data".into()));
        }
        Ok(Self { shape, re, im })
    }

    pub(crate) fn from_raw(shape: Shape, re: Vec<f64>, im: Vec<f64>) -> Self {
        debug_assert_eq!(re.len(), numel(&shape));
        debug_assert_eq!(im.len(), numel(&shape));
        Self { shape, re, im }
    }

    /// Complex tensor with the given real part and zero imaginary part.
    pub fn from_real(x: &Tensor4) -> Self {
        Self {
            shape: x.shape,
            re: x.data.clone(),
            im: vec![0.0; x.data.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn real_part(&self) -> Tensor4 {
        Tensor4::from_raw(self.shape, self.re.clone())
    }

    pub fn imag_part(&self) -> Tensor4 {
        Tensor4::from_raw(self.shape, self.im.clone())
    }

    pub fn from_real_imag(re: Tensor4, im: Tensor4) -> Result<Self> {
        if re.shape != im.shape {
            return Err(Error::Shape(format!(
                "real part {:?} and imaginary part {:?} differ",
                re.shape, im.shape
            )));
        }
        Ok(Self {
            shape: re.shape,
            re: re.data,
            im: im.data,
        })
    }

    #[inline]
    pub fn index(&self, t: usize, k: usize, c: usize, m: usize) -> usize {
        ((t * self.shape[1] + k) * self.shape[2] + c) * self.shape[3] + m
    }

    pub fn tail(&self, r: usize) -> Result<CTensor> {
        let re = self.real_part().tail(r)?;
        let im = self.imag_part().tail(r)?;
        CTensor::from_real_imag(re, im)
    }

    pub fn sum_sq(&self) -> f64 {
        self.re
            .iter()
            .chain(self.im.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// A block input or output: real or complex baseband.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Real(Tensor4),
    Complex(CTensor),
}

impl Signal {
    pub fn shape(&self) -> Shape {
        match self {
            Signal::Real(t) => t.shape(),
            Signal::Complex(c) => c.shape(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Signal::Complex(_))
    }

    pub fn zeros_like(&self) -> Signal {
        match self {
            Signal::Real(t) => Signal::Real(Tensor4::zeros(t.shape())),
            Signal::Complex(c) => Signal::Complex(CTensor::zeros(c.shape())),
        }
    }

    /// All real scalars of the signal; complex signals list real parts first.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            Signal::Real(t) => t.data().to_vec(),
            Signal::Complex(c) => c.re().iter().chain(c.im()).copied().collect(),
        }
    }

    /// Rebuilds a signal of the same kind and shape from [`Signal::to_flat`] data.
    pub fn with_flat(&self, flat: &[f64]) -> Signal {
        match self {
            Signal::Real(t) => Signal::Real(Tensor4::from_raw(t.shape(), flat.to_vec())),
            Signal::Complex(c) => {
                let n = c.re().len();
                Signal::Complex(CTensor::from_raw(
                    c.shape(),
                    flat[..n].to_vec(),
                    flat[n..].to_vec(),
                ))
            }
        }
    }

    pub fn sum_sq(&self) -> f64 {
        match self {
            Signal::Real(t) => t.sum_sq(),
            Signal::Complex(c) => c.sum_sq(),
        }
    }

    pub fn tail(&self, r: usize) -> Result<Signal> {
        Ok(match self {
            Signal::Real(t) => Signal::Real(t.tail(r)?),
            Signal::Complex(c) => Signal::Complex(c.tail(r)?),
        })
    }

    pub fn pad_front(&self, m: usize) -> Signal {
        match self {
            Signal::Real(t) => Signal::Real(t.pad_front(m)),
            Signal::Complex(c) => Signal::Complex(CTensor::from_raw(
                [c.shape[0], c.shape[1], c.shape[2], m],
                c.real_part().pad_front(m).into_data(),
                c.imag_part().pad_front(m).into_data(),
            )),
        }
    }

    pub fn frames(&self) -> usize {
        self.shape()[0]
    }

    pub fn frame_range(&self, t0: usize, t1: usize) -> Signal {
        match self {
            Signal::Real(t) => Signal::Real(t.frame_range(t0, t1)),
            Signal::Complex(c) => Signal::Complex(CTensor::from_raw(
                [t1 - t0, c.shape[1], c.shape[2], c.shape[3]],
                c.real_part().frame_range(t0, t1).into_data(),
                c.imag_part().frame_range(t0, t1).into_data(),
            )),
        }
    }

    /// `Σ |v|²` per plant.
    pub fn plant_energies(&self) -> Vec<f64> {
        match self {
            Signal::Real(t) => t.plant_energies(),
            Signal::Complex(c) => c
                .real_part()
                .plant_energies()
                .iter()
                .zip(c.imag_part().plant_energies())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn as_real(&self) -> Result<&Tensor4> {
        match self {
            Signal::Real(t) => Ok(t),
            Signal::Complex(_) => Err(Error::Shape("expected a real signal".into())),
        }
    }

    pub fn as_complex(&self) -> Result<&CTensor> {
        match self {
            Signal::Complex(c) => Ok(c),
            Signal::Real(_) => Err(Error::Shape("expected a complex signal".into())),
        }
    }
}

impl From<Tensor4> for Signal {
    fn from(t: Tensor4) -> Self {
        Signal::Real(t)
    }
}

impl From<CTensor> for Signal {
    fn from(c: CTensor) -> Self {
        Signal::Complex(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(Tensor4::from_vec([1, 1, 1, 3], vec![0.0; 2]).is_err());
        assert!(Tensor4::from_vec([1, 1, 1, 2], vec![0.0, f64::NAN]).is_err());
        assert!(Tensor4::from_vec([1, 1, 1, 2], vec![0.0, f64::INFINITY]).is_err());
        assert!(CTensor::from_parts([1, 1, 1, 2], vec![0.0; 2], vec![0.0; 1]).is_err());
    }

    #[test]
    fn row_major_layout() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let t = Tensor4::from_vec([2, 3, 2, 2], data).unwrap();
        assert_eq!(t.get(1, 2, 1, 0), 22.0);
        assert_eq!(t.series(0, 1, 0), &[4.0, 5.0]);
    }

    #[test]
    fn tail_then_pad_front() {
        let data: Vec<f64> = (0..8).map(f64::from).collect();
        let t = Tensor4::from_vec([1, 2, 1, 4], data).unwrap();
        let tail = t.tail(2).unwrap();
        assert_eq!(tail.data(), &[2.0, 3.0, 6.0, 7.0]);
        let padded = tail.pad_front(4);
        assert_eq!(padded.data(), &[0.0, 0.0, 2.0, 3.0, 0.0, 0.0, 6.0, 7.0]);
        assert!(t.tail(5).is_err());
    }

    #[test]
    fn flat_roundtrip_complex() {
        let c = CTensor::from_parts([1, 1, 1, 2], vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        let s = Signal::Complex(c);
        let flat = s.to_flat();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.with_flat(&flat), s);
    }
}

/// Dot product with four partial sums so the compiler can vectorize it.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
