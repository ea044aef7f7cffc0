//! Memoryless tanh MLP applied independently at every time step.
//!
//! ```text
//! f_{ℓ+1}[n] = tanh(B_ℓ f_ℓ[n])      ℓ = 0..D-1,  f_0 = x
//! y[n]       = A f_D[n]
//! ```
//!
//! Weights are shared by all frames and plants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{dot, Tensor4};

/// Channel widths of an NL block: `I → P_1 → … → P_D → P`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    /// Adds a bias vector to every hidden layer. Off for all standard models.
    #[serde(default)]
    pub bias: bool,
}

impl NlDims {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            bias: false,
        }
    }

    /// `depth` hidden layers of equal `width`.
    pub fn uniform(input: usize, depth: usize, width: usize, output: usize) -> Self {
        Self::new(input, vec![width; depth], output)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 {
            return Err(Error::Spec("NL block needs at least one input and output".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Spec(
                "NL block needs at least one hidden layer of non-zero width".into(),
            ));
        }
        Ok(())
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden[l - 1]
        }
    }

    pub fn param_count(&self) -> usize {
        let hidden: usize = (0..self.hidden.len())
            .map(|l| self.hidden[l] * self.layer_in(l) + if self.bias { self.hidden[l] } else { 0 })
            .sum();
        hidden + self.output * self.hidden[self.hidden.len() - 1]
    }
}

/// `tanh` through one `exp`, about twice as fast as the libm routine and
/// within a few ulps of it.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    let t = if a < 0.02 {
        let a2 = a * a;
        a * (1.0 + a2 * (-1.0 / 3.0 + a2 * (2.0 / 15.0 + a2 * (-17.0 / 315.0))))
    } else {
        let e = (-2.0 * a).exp();
        (1.0 - e) / (1.0 + e)
    };
    t.copysign(x)
}

/// Hidden activations saved by [`NlBlock::forward_cached`], one entry per
/// `(frame, plant)` slice.
#[derive(Debug, Clone, Default)]
pub struct NlCache {
    acts: Vec<Vec<Vec<f64>>>,
}

/// Offsets of one hidden layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layer {
    weights: usize,
    bias: Option<usize>,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlBlock {
    dims: NlDims,
    params: Vec<f64>,
}

impl NlBlock {
    /// Glorot-uniform initialization of every weight matrix; biases start at zero.
    pub fn new(dims: NlDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let mut block = Self {
            params: vec![0.0; dims.param_count()],
            dims,
        };
        let (layers, out) = block.layout();
        for layer in layers {
            let a = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut block.params[layer.weights..layer.weights + layer.rows * layer.cols] {
                *w = rng.uniform(-a, a);
            }
        }
        let (rows, cols) = (block.dims.output, *block.dims.hidden.last().unwrap());
        let a = (6.0 / (rows + cols) as f64).sqrt();
        for w in &mut block.params[out..] {
            *w = rng.uniform(-a, a);
        }
        Ok(block)
    }

    pub fn from_params(dims: NlDims, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.param_count() {
            return Err(Error::Shape(format!(
                "NL block expects {} parameters, got {}",
                dims.param_count(),
                params.len()
            )));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> &NlDims {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> (Vec<Layer>, usize) {
        let mut off = 0;
        let mut layers = Vec::with_capacity(self.dims.hidden.len());
        for (l, &rows) in self.dims.hidden.iter().enumerate() {
            let cols = self.dims.layer_in(l);
            let weights = off;
            off += rows * cols;
            let bias = if self.dims.bias {
                off += rows;
                Some(off - rows)
            } else {
                None
            };
            layers.push(Layer {
                weights,
                bias,
                rows,
                cols,
            });
        }
        (layers, off)
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.dims.input {
            return Err(Error::Shape(format!(
                "NL block expects {} input channels, got {}",
                self.dims.input,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Hidden activations of one `(frame, plant)` slice; entry `ℓ` holds
    /// `f_ℓ` as `rows × m` with `f_0` the input.
    fn hidden_activations(&self, layers: &[Layer], input: &[f64], m: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(input.to_vec());
        for layer in layers {
            let prev = acts.last().unwrap();
            let mut next = vec![0.0; layer.rows * m];
            for r in 0..layer.rows {
                let row = &mut next[r * m..(r + 1) * m];
                if let Some(b) = layer.bias {
                    row.fill(self.params[b + r]);
                }
                for c in 0..layer.cols {
                    let w = self.params[layer.weights + r * layer.cols + c];
                    for (o, v) in row.iter_mut().zip(&prev[c * m..(c + 1) * m]) {
                        *o += w * v;
                    }
                }
                row.iter_mut().for_each(|v| *v = tanh(*v));
            }
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that also returns the hidden activations for
    /// [`NlBlock::backward_cached`].
    pub fn forward_cached(&self, x: &Tensor4) -> Result<(Tensor4, NlCache)> {
        self.check_input(x)?;
        let [t_n, k_n, i_n, m] = x.shape();
        let p_n = self.dims.output;
        let (layers, out_off) = self.layout();
        let last = *self.dims.hidden.last().unwrap();
        let mut out = Tensor4::zeros([t_n, k_n, p_n, m]);
        let mut cache = NlCache {
            acts: Vec::with_capacity(t_n * k_n),
        };
        for t in 0..t_n {
            for k in 0..k_n {
                let start = x.index(t, k, 0, 0);
                let acts = self.hidden_activations(&layers, &x.data()[start..start + i_n * m], m);
                let h = acts.last().unwrap();
                for p in 0..p_n {
                    let row = out.series_mut(t, k, p);
                    for q in 0..last {
                        let a = self.params[out_off + p * last + q];
                        for (o, v) in row.iter_mut().zip(&h[q * m..(q + 1) * m]) {
                            *o += a * v;
                        }
                    }
                }
                cache.acts.push(acts);
            }
        }
        Ok((out, cache))
    }

    /// Input gradient and flat parameter gradient for upstream `g`.
    pub fn backward(&self, x: &Tensor4, g: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward_cached(x, &cache, g)
    }

    /// [`NlBlock::backward`] reusing activations from the forward pass on `x`.
    pub fn backward_cached(&self, x: &Tensor4, cache: &NlCache, g: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        self.check_input(x)?;
        let [t_n, k_n, i_n, m] = x.shape();
        let p_n = self.dims.output;
        if g.shape() != [t_n, k_n, p_n, m] {
            return Err(Error::Shape(format!(
                "NL upstream gradient {:?} does not match output {:?}",
                g.shape(),
                [t_n, k_n, p_n, m]
            )));
        }
        if cache.acts.len() != t_n * k_n {
            return Err(Error::Shape("NL cache does not belong to this input".into()));
        }
        let (layers, out_off) = self.layout();
        let last = *self.dims.hidden.last().unwrap();
        let mut gp = vec![0.0; self.params.len()];
        let mut gx = Tensor4::zeros(x.shape());
        for t in 0..t_n {
            for k in 0..k_n {
                let start = x.index(t, k, 0, 0);
                let acts = &cache.acts[t * k_n + k];
                let h = acts.last().unwrap();
                let mut gh = vec![0.0; last * m];
                for p in 0..p_n {
                    let gr = g.series(t, k, p);
                    for q in 0..last {
                        let hq = &h[q * m..(q + 1) * m];
                        gp[out_off + p * last + q] += dot(gr, hq);
                        let a = self.params[out_off + p * last + q];
                        for (o, v) in gh[q * m..(q + 1) * m].iter_mut().zip(gr) {
                            *o += a * v;
                        }
                    }
                }
                for (l, layer) in layers.iter().enumerate().rev() {
                    let hl = &acts[l + 1];
                    let prev = &acts[l];
                    // through tanh
                    for (gv, hv) in gh.iter_mut().zip(hl) {
                        *gv *= 1.0 - hv * hv;
                    }
                    let mut gprev = vec![0.0; layer.cols * m];
                    for r in 0..layer.rows {
                        let gz = &gh[r * m..(r + 1) * m];
                        if let Some(b) = layer.bias {
                            gp[b + r] += gz.iter().sum::<f64>();
                        }
                        for c in 0..layer.cols {
                            let pc = &prev[c * m..(c + 1) * m];
                            let wi = layer.weights + r * layer.cols + c;
                            gp[wi] += dot(gz, pc);
                            let w = self.params[wi];
                            for (o, v) in gprev[c * m..(c + 1) * m].iter_mut().zip(gz) {
                                *o += w * v;
                            }
                        }
                    }
                    gh = gprev;
                }
                gx.data_mut()[start..start + i_n * m].copy_from_slice(&gh);
            }
        }
        Ok((gx, gp))
    }
}
