//! Finite-difference check of every block type and composed architecture.

use mkid::blocks::{
    Block, ComplexFirBlock, ComplexNlBlock, FirFreqBlock, FirTimeBlock, KernelMode, NlBlock, NlDims,
};
use mkid::gradcheck::{grad_check, Differentiable, DEFAULT_STEP};
use mkid::models::{segment_frames, segment_frames_complex, ArchParams, FirDomain, FrameRule, FrameSpec, Model, ModelSpec};
use mkid::{CTensor, Result, Rng, Signal, Tensor4};
use serde::{Deserialize, Serialize};

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub name: String,
    pub kind: String,
    pub params: usize,
    pub max_rel_err: f64,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub tolerance: f64,
    pub step: f64,
    pub entries: Vec<GradEntry>,
}

impl GradSuiteReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let verdict = if e.passed { "PASS" } else { "FAIL" };
            match &e.error {
                Some(err) => s.push_str(&format!("{verdict} {:<12} {:<22} error: {err}\n", e.kind, e.name)),
                None => s.push_str(&format!(
                    "{verdict} {:<12} {:<22} params {:>4}  max rel err {:.2e}\n",
                    e.kind, e.name, e.params, e.max_rel_err
                )),
            }
        }
        s
    }
}

/// Checks one differentiable map and records the outcome.
pub fn check_one(name: &str, kind: &str, f: &mut dyn Differentiable, input: &Signal) -> GradEntry {
    let params = f.params().len();
    match grad_check(f, input, DEFAULT_STEP) {
        Ok(r) => GradEntry {
            name: name.into(),
            kind: kind.into(),
            params,
            max_rel_err: r.max(),
            passed: r.passes(GRAD_TOLERANCE),
            error: None,
        },
        Err(e) => GradEntry {
            name: name.into(),
            kind: kind.into(),
            params,
            max_rel_err: f64::INFINITY,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

/// Wraps a map and negates its parameter gradient.
pub struct SignFlipped<D>(pub D);

impl<D: Differentiable> Differentiable for SignFlipped<D> {
    fn name(&self) -> String {
        format!("sign-flipped {}", self.0.name())
    }

    fn params(&self) -> Vec<f64> {
        self.0.params()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.0.set_params(params)
    }

    fn eval(&self, input: &Signal) -> Result<Signal> {
        self.0.eval(input)
    }

    fn grad(&self, input: &Signal, upstream: &Signal) -> Result<(Signal, Vec<f64>)> {
        let (gx, gp) = self.0.grad(input, upstream)?;
        Ok((gx, gp.into_iter().map(|v| -v).collect()))
    }
}

fn real_input(rng: &mut Rng, shape: [usize; 4]) -> Signal {
    let n = shape.iter().product();
    Signal::Real(Tensor4::from_vec(shape, rng.normals(n)).expect("finite input"))
}

fn complex_input(rng: &mut Rng, shape: [usize; 4]) -> Signal {
    let n = shape.iter().product();
    Signal::Complex(CTensor::from_parts(shape, rng.normals(n), rng.normals(n)).expect("finite input"))
}

/// One small instance of every block type, each listed once.
pub fn block_fixtures(seed: u64) -> Result<Vec<(Block, Signal)>> {
    let mut rng = Rng::new(seed);
    Ok(vec![
        (
            Block::Nl(NlBlock::new(NlDims::uniform(2, 3, 4, 3), &mut rng)?),
            real_input(&mut rng, [2, 2, 2, 6]),
        ),
        (
            Block::FirTime(FirTimeBlock::new(3, 2, 2, 2, KernelMode::Multikernel, &mut rng)?),
            real_input(&mut rng, [2, 2, 2, 7]),
        ),
        (
            Block::FirFreq(FirFreqBlock::new(3, 8, 2, 2, 2, KernelMode::Multikernel, false, &mut rng)?),
            real_input(&mut rng, [2, 2, 2, 8]),
        ),
        (
            Block::ComplexFir(ComplexFirBlock::new(3, 2, 1, 2, KernelMode::Multikernel, &mut rng)?),
            complex_input(&mut rng, [2, 2, 1, 7]),
        ),
        (
            Block::ComplexNl(ComplexNlBlock::with_dims(NlDims::uniform(1, 2, 4, 2), &mut rng)?),
            complex_input(&mut rng, [2, 2, 1, 6]),
        ),
    ])
}

/// Every architecture of the verification table, small enough to probe
/// exhaustively, plus the complex three-block model.
pub fn architecture_fixtures(seed: u64) -> Result<Vec<(String, Model, Signal)>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let cases: [(&str, &[usize], FirDomain, KernelMode, bool); 12] = [
        ("FIR", &[3], FirDomain::Time, KernelMode::Multikernel, false),
        ("NL1-FIR", &[3], FirDomain::Time, KernelMode::Multikernel, false),
        ("NL6-FIR", &[3], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR1-NL", &[3], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR6-NL", &[3], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR1-NL1-FIR", &[3, 2], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR1-NL6-FIR", &[2, 3], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR6-NL1-FIR", &[3, 1], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR6-NL6-FIR", &[2, 2], FirDomain::Time, KernelMode::Multikernel, false),
        ("FIR6-NL6-FIR", &[2, 2], FirDomain::Freq, KernelMode::SingleKernel, false),
        ("FIR1-NL1-FIR", &[3, 1], FirDomain::Time, KernelMode::Multikernel, true),
        ("FIR", &[3], FirDomain::Time, KernelMode::SingleKernel, true),
    ];
    for (notation, lens, domain, mode, complex) in cases {
        let mut spec = ModelSpec::from_notation(
            notation,
            &ArchParams {
                kernel_lens: lens.to_vec(),
                nl_depth: 2,
                nl_width: 3,
                fir_domain: domain,
                kernel_mode: mode,
                plants: 2,
                complex,
            },
        )?;
        // later stages see frames shortened by the earlier memory
        spec.allow_slow_dft = domain == FirDomain::Freq;
        let frame = FrameSpec::from_rule(FrameRule::MinOverlap { frame_len: 8 }, &spec)?;
        let model = Model::build(&spec, &frame, &rng.substream(notation))?;
        let seqs = [rng.normals(14), rng.normals(14)];
        let input = if complex {
            let im = [rng.normals(14), rng.normals(14)];
            Signal::Complex(segment_frames_complex(&seqs, &im, &frame)?)
        } else {
            Signal::Real(segment_frames(&seqs, &frame)?)
        };
        let mut name = notation.to_string();
        if domain == FirDomain::Freq {
            name.push_str(" freq");
        }
        if mode == KernelMode::SingleKernel {
            name.push_str(" single");
        }
        if complex {
            name.push_str(" complex");
        }
        out.push((name, model, input));
    }
    Ok(out)
}

pub fn run_suite(seed: u64) -> Result<GradSuiteReport> {
    let mut entries = Vec::new();
    for (mut block, input) in block_fixtures(seed)? {
        let name = block.kind().to_string();
        entries.push(check_one(&name, "block", &mut block, &input));
    }
    for (name, mut model, input) in architecture_fixtures(seed)? {
        entries.push(check_one(&name, "architecture", &mut model, &input));
    }
    Ok(GradSuiteReport {
        tolerance: GRAD_TOLERANCE,
        step: DEFAULT_STEP,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_is_caught() {
        let (block, input) = block_fixtures(0).unwrap().remove(1);
        let e = check_one("fir_time", "block", &mut SignFlipped(block), &input);
        assert!(!e.passed && e.max_rel_err > 1.0);
    }
}
