//! Differentiable model building blocks.

pub mod complex;
pub mod fir_freq;
pub mod fir_time;
pub mod nl;

pub use complex::{ComplexFirBlock, ComplexNlBlock, ComplexNlCache, MAGNITUDE_EPS};
pub use fir_freq::FirFreqBlock;
pub use fir_time::{FirShape, FirTimeBlock, KernelMode};
pub use nl::{NlBlock, NlCache, NlDims};

use crate::error::{Error, Result};
use crate::gradcheck::Differentiable;
use crate::tensor::Signal;

/// Intermediate values a block keeps from its forward pass for backward.
#[derive(Debug, Clone)]
pub enum BlockCache {
    None,
    Nl(NlCache),
    ComplexNl(ComplexNlCache),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Nl(NlBlock),
    FirTime(FirTimeBlock),
    FirFreq(FirFreqBlock),
    ComplexFir(ComplexFirBlock),
    ComplexNl(ComplexNlBlock),
}

impl Block {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::Nl(_) => "nl",
            Block::FirTime(_) => "fir_time",
            Block::FirFreq(_) => "fir_freq",
            Block::ComplexFir(_) => "complex_fir",
            Block::ComplexNl(_) => "complex_nl",
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(self, Block::Nl(_) | Block::ComplexNl(_))
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Block::Nl(b) => b.params(),
            Block::FirTime(b) => b.taps(),
            Block::FirFreq(b) => b.params(),
            Block::ComplexFir(b) => b.params(),
            Block::ComplexNl(b) => b.nl().params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Block::Nl(b) => b.params_mut(),
            Block::FirTime(b) => b.taps_mut(),
            Block::FirFreq(b) => b.params_mut(),
            Block::ComplexFir(b) => b.params_mut(),
            Block::ComplexNl(b) => b.nl_mut().params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn forward(&self, x: &Signal) -> Result<Signal> {
        Ok(match (self, x) {
            (Block::Nl(b), Signal::Real(x)) => Signal::Real(b.forward(x)?),
            (Block::FirTime(b), Signal::Real(x)) => Signal::Real(b.forward(x)?),
            (Block::FirFreq(b), Signal::Real(x)) => Signal::Real(b.forward(x)?),
            (Block::ComplexFir(b), Signal::Complex(x)) => Signal::Complex(b.forward(x)?),
            (Block::ComplexNl(b), Signal::Complex(x)) => Signal::Complex(b.forward(x)?),
            _ => return Err(self.domain_error(x)),
        })
    }

    pub fn forward_cached(&self, x: &Signal) -> Result<(Signal, BlockCache)> {
        Ok(match (self, x) {
            (Block::Nl(b), Signal::Real(x)) => {
                let (y, c) = b.forward_cached(x)?;
                (Signal::Real(y), BlockCache::Nl(c))
            }
            (Block::ComplexNl(b), Signal::Complex(x)) => {
                let (y, c) = b.forward_cached(x)?;
                (Signal::Complex(y), BlockCache::ComplexNl(c))
            }
            _ => (self.forward(x)?, BlockCache::None),
        })
    }

    /// [`Block::backward`] reusing `cache` from [`Block::forward_cached`] on `x`.
    pub fn backward_cached(&self, x: &Signal, cache: &BlockCache, g: &Signal) -> Result<(Signal, Vec<f64>)> {
        Ok(match (self, x, g, cache) {
            (Block::Nl(b), Signal::Real(x), Signal::Real(g), BlockCache::Nl(c)) => {
                let (gx, gp) = b.backward_cached(x, c, g)?;
                (Signal::Real(gx), gp)
            }
            (Block::ComplexNl(b), Signal::Complex(x), Signal::Complex(g), BlockCache::ComplexNl(c)) => {
                let (gx, gp) = b.backward_cached(x, c, g)?;
                (Signal::Complex(gx), gp)
            }
            _ => self.backward(x, g)?,
        })
    }

    pub fn backward(&self, x: &Signal, g: &Signal) -> Result<(Signal, Vec<f64>)> {
        Ok(match (self, x, g) {
            (Block::Nl(b), Signal::Real(x), Signal::Real(g)) => {
                let (gx, gp) = b.backward(x, g)?;
                (Signal::Real(gx), gp)
            }
            (Block::FirTime(b), Signal::Real(x), Signal::Real(g)) => {
                let (gx, gp) = b.backward(x, g)?;
                (Signal::Real(gx), gp)
            }
            (Block::FirFreq(b), Signal::Real(x), Signal::Real(g)) => {
                let (gx, gp) = b.backward(x, g)?;
                (Signal::Real(gx), gp)
            }
            (Block::ComplexFir(b), Signal::Complex(x), Signal::Complex(g)) => {
                let (gx, gp) = b.backward(x, g)?;
                (Signal::Complex(gx), gp)
            }
            (Block::ComplexNl(b), Signal::Complex(x), Signal::Complex(g)) => {
                let (gx, gp) = b.backward(x, g)?;
                (Signal::Complex(gx), gp)
            }
            _ => return Err(self.domain_error(x)),
        })
    }

    fn domain_error(&self, x: &Signal) -> Error {
        Error::Shape(format!(
            "{} block cannot take a {} signal",
            self.kind(),
            if x.is_complex() { "complex" } else { "real" }
        ))
    }
}

impl Differentiable for Block {
    fn name(&self) -> String {
        self.kind().to_string()
    }

    fn params(&self) -> Vec<f64> {
        Block::params(self).to_vec()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.params_mut().copy_from_slice(params);
    }

    fn eval(&self, input: &Signal) -> Result<Signal> {
        self.forward(input)
    }

    fn grad(&self, input: &Signal, upstream: &Signal) -> Result<(Signal, Vec<f64>)> {
        self.backward(input, upstream)
    }
}
