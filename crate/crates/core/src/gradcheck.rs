//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Signal;

/// A differentiable map with a flat parameter vector.
pub trait Differentiable {
    fn name(&self) -> String;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]);

    fn eval(&self, input: &Signal) -> Result<Signal>;

    /// Returns `(d loss / d input, d loss / d params)` given `d loss / d output`.
    fn grad(&self, input: &Signal, upstream: &Signal) -> Result<(Signal, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err_params: f64,
    pub max_rel_err_input: f64,
}

impl GradReport {
    pub fn max(&self) -> f64 {
        self.max_rel_err_params.max(self.max_rel_err_input)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() < tol
    }
}

pub const DEFAULT_STEP: f64 = 1e-6;

fn eval_finite<D: Differentiable + ?Sized>(f: &D, input: &Signal) -> Result<Vec<f64>> {
    let out = f.eval(input)?.to_flat();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("forward output of {}", f.name())));
    }
    Ok(out)
}

/// `(½‖y⁺‖² − ½‖y⁻‖²) / 2h`, evaluated as `Σ (y⁺ − y⁻)(y⁺ + y⁻) / 4h` so that
/// outputs unaffected by the probe cancel exactly.
fn central_difference(plus: &[f64], minus: &[f64], step: f64) -> f64 {
    plus.iter()
        .zip(minus)
        .map(|(p, m)| (p - m) * (p + m))
        .sum::<f64>()
        / (4.0 * step)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss = ½‖f(input)‖²` against central
/// differences for every parameter and every input element.
///
/// Relative errors use the denominator `max(|analytic|, |numeric|, 1e-8)`; use
/// [`GradReport::passes`] to apply a tolerance.
pub fn grad_check<D: Differentiable + ?Sized>(
    f: &mut D,
    input: &Signal,
    step: f64,
) -> Result<GradReport> {
    if step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {step} must be positive")));
    }
    let out = f.eval(input)?;
    eval_finite(f, input)?;
    // d(½‖y‖²)/dy = y
    let (g_in, g_params) = f.grad(input, &out)?;

    let base = f.params();
    let mut max_p = 0.0f64;
    let mut probe = base.clone();
    for (i, &ga) in g_params.iter().enumerate() {
        probe[i] = base[i] + step;
        f.set_params(&probe);
        let yp = eval_finite(f, input)?;
        probe[i] = base[i] - step;
        f.set_params(&probe);
        let ym = eval_finite(f, input)?;
        probe[i] = base[i];
        max_p = max_p.max(rel_err(ga, central_difference(&yp, &ym, step)));
    }
    f.set_params(&base);

    let flat = input.to_flat();
    let g_in = g_in.to_flat();
    let mut max_x = 0.0f64;
    let mut probe = flat.clone();
    for (i, &ga) in g_in.iter().enumerate() {
        probe[i] = flat[i] + step;
        let yp = eval_finite(f, &input.with_flat(&probe))?;
        probe[i] = flat[i] - step;
        let ym = eval_finite(f, &input.with_flat(&probe))?;
        probe[i] = flat[i];
        max_x = max_x.max(rel_err(ga, central_difference(&yp, &ym, step)));
    }

    Ok(GradReport {
        max_rel_err_params: max_p,
        max_rel_err_input: max_x,
    })
}
