//! Architecture notation, frame segmentation and end-to-end models.
//!
//! Architectures are written as chains such as `FIR6-NL6-FIR`, `NL1FIR` or
//! `FIR₁NL`: the subscript after a block is the number of channels it hands
//! to the next block. The first block always takes one channel and the last
//! block always emits one (SISO identification).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::blocks::{
    Block, BlockCache, ComplexFirBlock, ComplexNlBlock, FirFreqBlock, FirTimeBlock, KernelMode, NlBlock,
    NlDims,
};
use crate::error::{Error, Result};
use crate::gradcheck::Differentiable;
use crate::rng::Rng;
use crate::tensor::{CTensor, Signal, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FirDomain {
    #[default]
    Time,
    Freq,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    Fir {
        out_channels: usize,
        kernel_len: usize,
        #[serde(default)]
        domain: FirDomain,
    },
    Nl {
        out_channels: usize,
        hidden: Vec<usize>,
        #[serde(default)]
        bias: bool,
    },
}

impl StageSpec {
    pub fn out_channels(&self) -> usize {
        match self {
            StageSpec::Fir { out_channels, .. } | StageSpec::Nl { out_channels, .. } => *out_channels,
        }
    }

    /// Memory added by the stage, `L - 1` for FIR and 0 for NL.
    pub fn memory(&self) -> usize {
        match self {
            StageSpec::Fir { kernel_len, .. } => kernel_len.saturating_sub(1),
            StageSpec::Nl { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub kernel_mode: KernelMode,
    pub plants: usize,
    #[serde(default)]
    pub complex: bool,
    /// Permit frequency-domain FIR stages on non-power-of-two frames.
    #[serde(default)]
    pub allow_slow_dft: bool,
}

/// Block type and output width parsed from architecture notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotationToken {
    Fir(usize),
    Nl(usize),
}

/// Parses `FIR6-NL6-FIR`-style notation. Subscripts may be ASCII or Unicode
/// subscript digits; `-`, `_` and whitespace separators are ignored. A missing
/// subscript means one channel.
pub fn parse_notation(s: &str) -> Result<Vec<NotationToken>> {
    let chars: Vec<char> = s.chars().collect();
    let mut pos = 0;
    let mut out = Vec::new();
    let err = |position: usize, message: String| Error::Parse { position, message };
    while pos < chars.len() {
        let c = chars[pos];
        if c == '-' || c == '_' || c.is_whitespace() {
            pos += 1;
            continue;
        }
        let rest: String = chars[pos..].iter().collect::<String>().to_ascii_uppercase();
        let (is_fir, adv) = if rest.starts_with("FIR") {
            (true, 3)
        } else if rest.starts_with("NL") {
            (false, 2)
        } else {
            return Err(err(pos, format!("expected FIR or NL, found '{c}'")));
        };
        pos += adv;
        let start = pos;
        let mut digits = String::new();
        while pos < chars.len() {
            let d = chars[pos];
            if d.is_ascii_digit() {
                digits.push(d);
            } else if ('₀'..='₉').contains(&d) {
                digits.push(char::from(b'0' + (d as u32 - '₀' as u32) as u8));
            } else {
                break;
            }
            pos += 1;
        }
        let width = if digits.is_empty() {
            1
        } else {
            digits
                .parse::<usize>()
                .map_err(|_| err(start, format!("bad channel count '{digits}'")))?
        };
        if width == 0 {
            return Err(err(start, "channel count must be positive".into()));
        }
        out.push(if is_fir {
            NotationToken::Fir(width)
        } else {
            NotationToken::Nl(width)
        });
    }
    if out.is_empty() {
        return Err(err(0, "empty architecture".into()));
    }
    if let Some(NotationToken::Fir(p) | NotationToken::Nl(p)) = out.last() {
        if *p != 1 {
            return Err(err(chars.len(), format!("last block must have one output channel, got {p}")));
        }
    }
    Ok(out)
}

/// Hyperparameters that turn architecture notation into a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    /// One kernel length per FIR block, in order.
    pub kernel_lens: Vec<usize>,
    pub nl_depth: usize,
    pub nl_width: usize,
    #[serde(default)]
    pub fir_domain: FirDomain,
    #[serde(default)]
    pub kernel_mode: KernelMode,
    pub plants: usize,
    #[serde(default)]
    pub complex: bool,
}

impl ModelSpec {
    pub fn from_notation(notation: &str, arch: &ArchParams) -> Result<Self> {
        let tokens = parse_notation(notation)?;
        let fir_count = tokens.iter().filter(|t| matches!(t, NotationToken::Fir(_))).count();
        if arch.kernel_lens.len() != fir_count {
            return Err(Error::Spec(format!(
                "'{notation}' has {fir_count} FIR blocks but {} kernel lengths were given",
                arch.kernel_lens.len()
            )));
        }
        let mut lens = arch.kernel_lens.iter();
        let stages = tokens
            .iter()
            .map(|t| match *t {
                NotationToken::Fir(p) => StageSpec::Fir {
                    out_channels: p,
                    kernel_len: *lens.next().unwrap(),
                    domain: arch.fir_domain,
                },
                NotationToken::Nl(p) => StageSpec::Nl {
                    out_channels: p,
                    hidden: vec![arch.nl_width; arch.nl_depth],
                    bias: false,
                },
            })
            .collect();
        let spec = ModelSpec {
            stages,
            kernel_mode: arch.kernel_mode,
            plants: arch.plants,
            complex: arch.complex,
            allow_slow_dft: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Spec("model has no stages".into()));
        }
        if self.plants == 0 {
            return Err(Error::Spec("model needs at least one plant".into()));
        }
        if self.stages.last().unwrap().out_channels() != 1 {
            return Err(Error::Spec("last stage must emit one channel".into()));
        }
        let mut channels = 1;
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                StageSpec::Fir { kernel_len, out_channels, domain } => {
                    if *kernel_len == 0 || *out_channels == 0 {
                        return Err(Error::Spec(format!("stage {i}: FIR needs L ≥ 1 and P ≥ 1")));
                    }
                    if self.complex && *domain == FirDomain::Freq {
                        return Err(Error::Spec(format!(
                            "stage {i}: complex models support time-domain FIR only"
                        )));
                    }
                }
                StageSpec::Nl { hidden, out_channels, .. } => {
                    if hidden.is_empty() || hidden.contains(&0) || *out_channels == 0 {
                        return Err(Error::Spec(format!("stage {i}: NL needs hidden layers")));
                    }
                    if self.complex && channels != 1 {
                        return Err(Error::Spec(format!(
                            "stage {i}: complex NL acts on one magnitude channel, got {channels}"
                        )));
                    }
                }
            }
            channels = s.out_channels();
        }
        Ok(())
    }

    /// Total memory `Σ(L_i − 1) + 1` over FIR stages.
    pub fn total_memory(&self) -> usize {
        self.stages.iter().map(StageSpec::memory).sum::<usize>() + 1
    }

    pub fn kernel_lens(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                StageSpec::Fir { kernel_len, .. } => Some(*kernel_len),
                StageSpec::Nl { .. } => None,
            })
            .collect()
    }

    /// Compact notation, e.g. `FIR6-NL6-FIR`.
    pub fn notation(&self) -> String {
        let n = self.stages.len();
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let name = match s {
                    StageSpec::Fir { .. } => "FIR",
                    StageSpec::Nl { .. } => "NL",
                };
                if i + 1 == n {
                    name.to_string()
                } else {
                    format!("{name}{}", s.out_channels())
                }
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Frame length `M` and shift `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub shift: usize,
}

/// How to derive frame length and shift from a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FrameRule {
    /// `M = 2 ΣL_i`, `R = ⌊(M − ΣL_i + 1)/2⌋`.
    Paper,
    /// Given `M`, the largest seamless shift `R = M − L_tot + 1`.
    MinOverlap { frame_len: usize },
    Explicit { frame_len: usize, shift: usize },
}

impl FrameSpec {
    pub fn from_rule(rule: FrameRule, spec: &ModelSpec) -> Result<Self> {
        let frame = match rule {
            FrameRule::Paper => {
                let sum: usize = spec.kernel_lens().iter().sum();
                let m = 2 * sum;
                FrameSpec {
                    frame_len: m,
                    shift: (m - sum + 1) / 2,
                }
            }
            FrameRule::MinOverlap { frame_len } => FrameSpec {
                frame_len,
                shift: (frame_len + 1).saturating_sub(spec.total_memory()),
            },
            FrameRule::Explicit { frame_len, shift } => FrameSpec { frame_len, shift },
        };
        frame.validate(spec)?;
        Ok(frame)
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let l_tot = spec.total_memory();
        if self.shift == 0 {
            return Err(Error::Config("frame shift must be at least 1".into()));
        }
        if self.frame_len < l_tot {
            return Err(Error::InsufficientFrame {
                frame_len: self.frame_len,
                kernel_len: l_tot,
            });
        }
        if self.frame_len - l_tot + 1 < self.shift {
            return Err(Error::Config(format!(
                "frame of {} samples yields {} valid outputs, fewer than shift {}",
                self.frame_len,
                self.frame_len - l_tot + 1,
                self.shift
            )));
        }
        Ok(())
    }

    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.frame_len {
            0
        } else {
            (n - self.frame_len) / self.shift + 1
        }
    }
}

fn check_sequences<T: AsRef<[f64]>>(x: &[T], frame: &FrameSpec) -> Result<usize> {
    if frame.shift == 0 {
        return Err(Error::Config("frame shift must be at least 1".into()));
    }
    let n = x.first().map(|s| s.as_ref().len()).ok_or(Error::EmptySequence)?;
    if x.iter().any(|s| s.as_ref().len() != n) {
        return Err(Error::Shape("plant sequences differ in length".into()));
    }
    if n < frame.frame_len {
        return Err(Error::TooShort {
            len: n,
            frame_len: frame.frame_len,
        });
    }
    Ok(n)
}

/// Cuts one sequence per plant into overlapping frames `x[tR + m]`, shape
/// `(T, K, 1, M)`. Trailing samples that do not fill a frame are dropped.
pub fn segment_frames<T: AsRef<[f64]>>(x: &[T], frame: &FrameSpec) -> Result<Tensor4> {
    let n = check_sequences(x, frame)?;
    let (m, r) = (frame.frame_len, frame.shift);
    let t_n = frame.frame_count(n);
    let k_n = x.len();
    let mut data = Vec::with_capacity(t_n * k_n * m);
    for t in 0..t_n {
        for seq in x {
            data.extend_from_slice(&seq.as_ref()[t * r..t * r + m]);
        }
    }
    Ok(Tensor4::from_raw([t_n, k_n, 1, m], data))
}

/// Prediction targets aligned with the model output: the last `R` samples of
/// every frame, `y[tR + M − R .. tR + M − 1]`, shape `(T, K, 1, R)`.
pub fn segment_targets<T: AsRef<[f64]>>(y: &[T], frame: &FrameSpec) -> Result<Tensor4> {
    segment_frames(y, frame)?.tail(frame.shift)
}

pub fn segment_frames_complex<T: AsRef<[f64]>>(re: &[T], im: &[T], frame: &FrameSpec) -> Result<CTensor> {
    CTensor::from_real_imag(segment_frames(re, frame)?, segment_frames(im, frame)?)
}

pub fn segment_targets_complex<T: AsRef<[f64]>>(re: &[T], im: &[T], frame: &FrameSpec) -> Result<CTensor> {
    CTensor::from_real_imag(segment_targets(re, frame)?, segment_targets(im, frame)?)
}

/// Reassembles per-frame predictions `(T, K, 1, R)` into one sequence per
/// plant, covering samples `M − R .. M − R + T·R` of the original signal.
pub fn concat_frames(pred: &Tensor4) -> Vec<Vec<f64>> {
    let [t_n, k_n, c, _] = pred.shape();
    assert_eq!(c, 1);
    (0..k_n)
        .map(|k| (0..t_n).flat_map(|t| pred.series(t, k, 0).iter().copied()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    frame: FrameSpec,
    stages: Vec<Block>,
}

impl Model {
    /// Instantiates every stage with freshly initialized parameters. Stage `i`
    /// draws from substream `stage/i` so the result depends only on the seed.
    pub fn build(spec: &ModelSpec, frame: &FrameSpec, rng: &Rng) -> Result<Self> {
        spec.validate()?;
        frame.validate(spec)?;
        let k = spec.plants;
        let mode = spec.kernel_mode;
        let mut channels = 1;
        let mut time_len = frame.frame_len;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (i, s) in spec.stages.iter().enumerate() {
            let mut r = rng.substream(&format!("stage/{i}"));
            let block = match s {
                StageSpec::Fir { out_channels, kernel_len, domain } => {
                    let (p, l) = (*out_channels, *kernel_len);
                    let b = match (spec.complex, domain) {
                        (true, _) => Block::ComplexFir(ComplexFirBlock::new(l, k, channels, p, mode, &mut r)?),
                        (false, FirDomain::Time) => {
                            Block::FirTime(FirTimeBlock::new(l, k, channels, p, mode, &mut r)?)
                        }
                        (false, FirDomain::Freq) => Block::FirFreq(FirFreqBlock::new(
                            l,
                            time_len,
                            k,
                            channels,
                            p,
                            mode,
                            spec.allow_slow_dft,
                            &mut r,
                        )?),
                    };
                    time_len -= l - 1;
                    b
                }
                StageSpec::Nl { out_channels, hidden, bias } => {
                    let mut dims = NlDims::new(channels, hidden.clone(), *out_channels);
                    dims.bias = *bias;
                    let nl = NlBlock::new(dims, &mut r)?;
                    if spec.complex {
                        Block::ComplexNl(ComplexNlBlock::new(nl)?)
                    } else {
                        Block::Nl(nl)
                    }
                }
            };
            channels = s.out_channels();
            stages.push(block);
        }
        Ok(Self {
            spec: spec.clone(),
            frame: *frame,
            stages,
        })
    }

    /// Rebuilds a model from stored per-stage parameters.
    pub fn from_parts(spec: &ModelSpec, frame: &FrameSpec, params: &[Vec<f64>]) -> Result<Self> {
        let mut model = Self::build(spec, frame, &Rng::new(0))?;
        if params.len() != model.stages.len() {
            return Err(Error::Format(format!(
                "expected {} stages, found {}",
                model.stages.len(),
                params.len()
            )));
        }
        for (i, (b, p)) in model.stages.iter_mut().zip(params).enumerate() {
            if b.param_count() != p.len() {
                return Err(Error::Format(format!(
                    "stage {i} expects {} parameters, found {}",
                    b.param_count(),
                    p.len()
                )));
            }
            b.params_mut().copy_from_slice(p);
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn frame(&self) -> &FrameSpec {
        &self.frame
    }

    pub fn stages(&self) -> &[Block] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Block] {
        &mut self.stages
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Block::param_count).sum()
    }

    pub fn stage_params(&self) -> Vec<Vec<f64>> {
        self.stages.iter().map(|b| b.params().to_vec()).collect()
    }

    fn stage_error(i: usize, b: &Block, e: Error) -> Error {
        match e {
            Error::Shape(msg) => Error::Shape(format!("stage {i} ({}): {msg}", b.kind())),
            other => other,
        }
    }

    fn check_input(&self, x: &Signal) -> Result<()> {
        let [_, k, c, m] = x.shape();
        if x.is_complex() != self.spec.complex {
            return Err(Error::Shape(format!(
                "model expects {} input",
                if self.spec.complex { "complex" } else { "real" }
            )));
        }
        if c != 1 {
            return Err(Error::Shape(format!("model input must have 1 channel, got {c}")));
        }
        if m != self.frame.frame_len {
            return Err(Error::Shape(format!(
                "model built for frames of {} samples, got {m}",
                self.frame.frame_len
            )));
        }
        if k != self.spec.plants && self.spec.kernel_mode == KernelMode::Multikernel {
            return Err(Error::Shape(format!(
                "model has {} plants, input has {k}",
                self.spec.plants
            )));
        }
        Ok(())
    }

    /// Runs all stages, returning every stage input followed by the final
    /// (untrimmed) output.
    fn run(&self, x: &Signal) -> Result<Vec<Signal>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        acts.push(x.clone());
        for (i, b) in self.stages.iter().enumerate() {
            let y = b
                .forward(acts.last().unwrap())
                .map_err(|e| Self::stage_error(i, b, e))?;
            acts.push(y);
        }
        Ok(acts)
    }

    /// [`Model::run`] keeping what each stage needs for its backward pass.
    fn run_cached(&self, x: &Signal) -> Result<(Vec<Signal>, Vec<BlockCache>)> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        let mut caches = Vec::with_capacity(self.stages.len());
        acts.push(x.clone());
        for (i, b) in self.stages.iter().enumerate() {
            let (y, c) = b
                .forward_cached(acts.last().unwrap())
                .map_err(|e| Self::stage_error(i, b, e))?;
            acts.push(y);
            caches.push(c);
        }
        Ok((acts, caches))
    }

    /// Prediction `(T, K, 1, R)`: the last `R` samples of the final stage.
    pub fn forward(&self, x: &Signal) -> Result<Signal> {
        let mut acts = self.run(x)?;
        acts.pop().unwrap().tail(self.frame.shift)
    }

    /// Backpropagates `upstream = d loss / d prediction` through every stage.
    pub fn backward_from(&self, x: &Signal, upstream: &Signal) -> Result<(Signal, Vec<Vec<f64>>)> {
        let (acts, caches) = self.run_cached(x)?;
        self.backprop(&acts, &caches, upstream)
    }

    /// One forward pass followed by backpropagation of the upstream gradient
    /// that `loss_grad` derives from the prediction.
    pub fn forward_backward<F>(&self, x: &Signal, loss_grad: F) -> Result<(Signal, Vec<Vec<f64>>)>
    where
        F: FnOnce(&Signal) -> Result<Signal>,
    {
        let (acts, caches) = self.run_cached(x)?;
        let pred = acts.last().unwrap().tail(self.frame.shift)?;
        let upstream = loss_grad(&pred)?;
        let (_, grads) = self.backprop(&acts, &caches, &upstream)?;
        Ok((pred, grads))
    }

    fn backprop(&self, acts: &[Signal], caches: &[BlockCache], upstream: &Signal) -> Result<(Signal, Vec<Vec<f64>>)> {
        let out_len = acts.last().unwrap().shape()[3];
        let expected = {
            let mut s = acts.last().unwrap().shape();
            s[3] = self.frame.shift;
            s
        };
        if upstream.shape() != expected || upstream.is_complex() != self.spec.complex {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match prediction {:?}",
                upstream.shape(),
                expected
            )));
        }
        let mut g = upstream.pad_front(out_len);
        let mut grads = vec![Vec::new(); self.stages.len()];
        for (i, b) in self.stages.iter().enumerate().rev() {
            let (gx, gp) = b
                .backward_cached(&acts[i], &caches[i], &g)
                .map_err(|e| Self::stage_error(i, b, e))?;
            grads[i] = gp;
            g = gx;
        }
        Ok((g, grads))
    }

    /// Loss `½ Σ (target − prediction)²` and its gradient for every stage.
    pub fn backward(&self, x: &Signal, target: &Signal) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut loss = 0.0;
        let (_, grads) = self.forward_backward(x, |pred| {
            if pred.shape() != target.shape() || pred.is_complex() != target.is_complex() {
                return Err(Error::Shape(format!(
                    "target {:?} does not match prediction {:?}",
                    target.shape(),
                    pred.shape()
                )));
            }
            let diff: Vec<f64> = pred.to_flat().iter().zip(target.to_flat()).map(|(a, b)| a - b).collect();
            loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
            Ok(pred.with_flat(&diff))
        })?;
        Ok((loss, grads))
    }

    /// Copies parameters of every NL stage from `source`, which must have the
    /// same NL stage layout.
    pub fn load_nl_from(&mut self, source: &Model) -> Result<()> {
        let ours: Vec<usize> = (0..self.stages.len()).filter(|&i| self.stages[i].is_nonlinear()).collect();
        let theirs: Vec<usize> = (0..source.stages.len())
            .filter(|&i| source.stages[i].is_nonlinear())
            .collect();
        if ours != theirs {
            return Err(Error::Incompatible(format!(
                "NL stages at {theirs:?} in checkpoint, {ours:?} in model"
            )));
        }
        for &i in &ours {
            let dims = |b: &Block| match b {
                Block::Nl(n) => Some(n.dims().clone()),
                Block::ComplexNl(n) => Some(n.nl().dims().clone()),
                _ => None,
            };
            if dims(&self.stages[i]) != dims(&source.stages[i]) || self.stages[i].kind() != source.stages[i].kind() {
                return Err(Error::Incompatible(format!(
                    "stage {i}: NL dimensions {:?} in checkpoint, {:?} in model",
                    dims(&source.stages[i]),
                    dims(&self.stages[i])
                )));
            }
            self.stages[i]
                .params_mut()
                .copy_from_slice(source.stages[i].params());
        }
        Ok(())
    }

    pub fn nl_stage_indices(&self) -> Vec<usize> {
        (0..self.stages.len()).filter(|&i| self.stages[i].is_nonlinear()).collect()
    }
}

impl Differentiable for Model {
    fn name(&self) -> String {
        self.spec.notation()
    }

    fn params(&self) -> Vec<f64> {
        self.stages.iter().flat_map(|b| b.params().iter().copied()).collect()
    }

    fn set_params(&mut self, params: &[f64]) {
        let mut off = 0;
        for b in &mut self.stages {
            let n = b.param_count();
            b.params_mut().copy_from_slice(&params[off..off + n]);
            off += n;
        }
    }

    fn eval(&self, input: &Signal) -> Result<Signal> {
        self.forward(input)
    }

    fn grad(&self, input: &Signal, upstream: &Signal) -> Result<(Signal, Vec<f64>)> {
        let (g, grads) = self.backward_from(input, upstream)?;
        Ok((g, grads.concat()))
    }
}

const MAGIC: &[u8; 4] = b"BIDM";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    frame: FrameSpec,
}

impl Model {
    /// Binary checkpoint: `"BIDM"`, version `u32`, JSON header length `u64`,
    /// JSON header, stage count `u32`, then per stage a `u64` count followed
    /// by that many `f64`. All integers and floats little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&CheckpointHeader {
            spec: self.spec.clone(),
            frame: self.frame,
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.stages.len() as u32).to_le_bytes())?;
        for b in &self.stages {
            w.write_all(&(b.param_count() as u64).to_le_bytes())?;
            for v in b.params() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("missing BIDM magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        r.read_exact(&mut b4)?;
        let n_stages = u32::from_le_bytes(b4) as usize;
        let mut params = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            r.read_exact(&mut b8)?;
            let n = u64::from_le_bytes(b8) as usize;
            let mut p = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b8)?;
                p.push(f64::from_le_bytes(b8));
            }
            params.push(p);
        }
        Self::from_parts(&header.spec, &header.frame, &params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(f)
    }
}
