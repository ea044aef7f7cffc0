//! Synthetic multiplant data: excitation, impulse responses, memoryless
//! nonlinearities calibrated to a signal-to-distortion ratio, and Wiener or
//! Hammerstein plant simulation in real or complex baseband.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// SDR reported when the nonlinear residual vanishes.
pub const SDR_CAP_DB: f64 = 160.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Excitation {
    White,
    /// `x[n] = ρ x[n−1] + √(1−ρ²) w[n]`, unit variance.
    ArColored { rho: f64 },
}

impl Excitation {
    pub fn ar_colored() -> Self {
        Excitation::ArColored { rho: 0.9 }
    }
}

/// One excitation sequence per plant, each from its own substream.
pub fn gen_excitation(kind: Excitation, n: usize, plants: usize, rng: &Rng) -> Vec<Vec<f64>> {
    (0..plants)
        .map(|k| {
            let mut r = rng.substream(&format!("excitation/{k}"));
            let w = r.normals(n);
            match kind {
                Excitation::White => w,
                Excitation::ArColored { rho } => {
                    let g = (1.0 - rho * rho).sqrt();
                    let mut out = Vec::with_capacity(n);
                    let mut prev = 0.0;
                    for (i, v) in w.into_iter().enumerate() {
                        // the first sample is drawn from the stationary law
                        prev = if i == 0 { v } else { rho * prev + g * v };
                        out.push(prev);
                    }
                    out
                }
            }
        })
        .collect()
}

/// Circular complex Gaussian excitation with `E|x|² = 1`, as `(re, im)`.
pub fn gen_complex_excitation(n: usize, plants: usize, rng: &Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = 0.5f64.sqrt();
    (0..plants)
        .map(|k| {
            let mut r = rng.substream(&format!("excitation/{k}"));
            let re = r.normals(n).into_iter().map(|v| v * s).collect();
            let im = r.normals(n).into_iter().map(|v| v * s).collect();
            (re, im)
        })
        .unzip()
}

/// Exponentially decaying Gaussian taps `g[l] e^{−l/τ}`, unit energy.
pub fn gen_impulse_response(len: usize, decay_tau: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if len == 0 || decay_tau <= 0.0 {
        return Err(Error::Config(format!(
            "impulse response needs L_h ≥ 1 and τ > 0, got {len} and {decay_tau}"
        )));
    }
    let mut h: Vec<f64> = (0..len)
        .map(|l| rng.normal() * (-(l as f64) / decay_tau).exp())
        .collect();
    let e = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= e);
    Ok(h)
}

/// Complex taps with independent real and imaginary draws, `Σ|h|² = 1`.
pub fn gen_complex_impulse_response(len: usize, decay_tau: f64, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut re = gen_impulse_response(len, decay_tau, rng)?;
    let mut im = gen_impulse_response(len, decay_tau, rng)?;
    let s = 0.5f64.sqrt();
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
    Ok((re, im))
}

/// Causal convolution `d[n] = Σ_l h[l] x[n−l]` with `x[n<0] = 0`.
pub fn apply_lti(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; x.len()];
    for (n, out) in d.iter_mut().enumerate() {
        let lmax = h.len().min(n + 1);
        let mut acc = 0.0;
        for l in 0..lmax {
            acc += h[l] * x[n - l];
        }
        *out = acc;
    }
    d
}

pub fn apply_lti_complex(x: (&[f64], &[f64]), h: (&[f64], &[f64])) -> (Vec<f64>, Vec<f64>) {
    let rr = apply_lti(x.0, h.0);
    let ii = apply_lti(x.1, h.1);
    let ri = apply_lti(x.0, h.1);
    let ir = apply_lti(x.1, h.0);
    (
        rr.iter().zip(&ii).map(|(a, b)| a - b).collect(),
        ri.iter().zip(&ir).map(|(a, b)| a + b).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `γ arctan(δ x)`.
    Sigmoid { gamma: f64, delta: f64 },
    /// `x` for `|x| ≤ x_max`, `sign(x) x_max` otherwise.
    Clip { x_max: f64 },
    Identity,
    /// `γ arctan(δ |z|) e^{j∠z}`.
    ComplexSat { gamma: f64, delta: f64 },
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Nonlinearity::Sigmoid { gamma, delta } | Nonlinearity::ComplexSat { gamma, delta } => gamma > 0.0 && delta > 0.0,
            Nonlinearity::Clip { x_max } => x_max > 0.0,
            Nonlinearity::Identity => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid nonlinearity parameters {self:?}")))
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Nonlinearity::ComplexSat { .. })
    }

    /// Scalar map on a real value, or on the magnitude for `complex_sat`.
    pub fn eval_scalar(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Sigmoid { gamma, delta } | Nonlinearity::ComplexSat { gamma, delta } => gamma * (delta * x).atan(),
            Nonlinearity::Clip { x_max } => x.clamp(-x_max, x_max),
            Nonlinearity::Identity => x,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.is_complex() {
            return Err(Error::Config("complex_sat needs a complex input".into()));
        }
        Ok(x.iter().map(|&v| self.eval_scalar(v)).collect())
    }

    pub fn apply_complex(&self, re: &[f64], im: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Nonlinearity::ComplexSat { .. } => {}
            Nonlinearity::Identity => return Ok((re.to_vec(), im.to_vec())),
            _ => return Err(Error::Config("real nonlinearity cannot take a complex input".into())),
        }
        let mut out_re = Vec::with_capacity(re.len());
        let mut out_im = Vec::with_capacity(re.len());
        for (&a, &b) in re.iter().zip(im) {
            let r = a.hypot(b);
            if r == 0.0 {
                out_re.push(0.0);
                out_im.push(0.0);
            } else {
                let s = self.eval_scalar(r) / r;
                out_re.push(a * s);
                out_im.push(b * s);
            }
        }
        Ok((out_re, out_im))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityDesc {
    #[serde(flatten)]
    pub f: Nonlinearity,
    /// SDR on the calibration reference, if calibrated.
    pub achieved_sdr_db: Option<f64>,
}

/// `10 log10(E{(αx)²} / E{(f(x) − αx)²})` with `α = E{x f(x)} / E{x²}`.
pub fn compute_sdr(x: &[f64], fx: &[f64]) -> Result<f64> {
    if x.len() != fx.len() {
        return Err(Error::Shape("SDR inputs differ in length".into()));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= 0.0 {
        return Err(Error::UndefinedNormalization);
    }
    let alpha = x.iter().zip(fx).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let resid: f64 = x.iter().zip(fx).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    Ok(sdr_from(alpha * alpha * sxx, resid, x.len()))
}

fn sdr_from(signal: f64, resid: f64, n: usize) -> f64 {
    if resid / (n as f64) < 1e-30 {
        return SDR_CAP_DB;
    }
    (10.0 * (signal / resid).log10()).min(SDR_CAP_DB)
}

/// Complex SDR with `α = E{x* f(x)} / E{|x|²}`.
pub fn compute_sdr_complex(x: (&[f64], &[f64]), fx: (&[f64], &[f64])) -> Result<f64> {
    let n = x.0.len();
    if x.1.len() != n || fx.0.len() != n || fx.1.len() != n {
        return Err(Error::Shape("SDR inputs differ in length".into()));
    }
    let sxx: f64 = (0..n).map(|i| x.0[i] * x.0[i] + x.1[i] * x.1[i]).sum();
    if sxx <= 0.0 {
        return Err(Error::UndefinedNormalization);
    }
    // x* f = (a − jb)(c + jd)
    let (mut cr, mut ci) = (0.0, 0.0);
    for i in 0..n {
        cr += x.0[i] * fx.0[i] + x.1[i] * fx.1[i];
        ci += x.0[i] * fx.1[i] - x.1[i] * fx.0[i];
    }
    let (ar, ai) = (cr / sxx, ci / sxx);
    let mut resid = 0.0;
    for i in 0..n {
        let er = fx.0[i] - (ar * x.0[i] - ai * x.1[i]);
        let ei = fx.1[i] - (ar * x.1[i] + ai * x.0[i]);
        resid += er * er + ei * ei;
    }
    Ok(sdr_from((ar * ar + ai * ai) * sxx, resid, n))
}

/// Deterministic quantile sample of the distribution a nonlinearity sees.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    values: Vec<f64>,
}

pub const REFERENCE_LEN: usize = 1 << 17;

impl ReferenceSample {
    /// `Φ⁻¹((i + ½)/n)` for the standard normal.
    pub fn gaussian(n: usize) -> Self {
        let normal = Normal::standard();
        Self {
            values: (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect(),
        }
    }

    /// Magnitudes of a circular complex Gaussian with `E|z|² = 1`
    /// (Rayleigh quantiles `√(−ln(1−u))`).
    pub fn rayleigh(n: usize) -> Self {
        Self {
            values: (0..n)
                .map(|i| (-(1.0 - (i as f64 + 0.5) / n as f64).ln()).sqrt())
                .collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sdr(&self, f: &Nonlinearity) -> f64 {
        let fx: Vec<f64> = self.values.iter().map(|&v| f.eval_scalar(v)).collect();
        compute_sdr(&self.values, &fx).unwrap_or(SDR_CAP_DB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlFamily {
    Sigmoid,
    Clip,
    Identity,
    ComplexSat,
}

impl NlFamily {
    fn member(self, p: f64) -> Nonlinearity {
        match self {
            // γ = 1/δ keeps the small-signal gain at one
            NlFamily::Sigmoid => Nonlinearity::Sigmoid { gamma: 1.0 / p, delta: p },
            NlFamily::ComplexSat => Nonlinearity::ComplexSat { gamma: 1.0 / p, delta: p },
            NlFamily::Clip => Nonlinearity::Clip { x_max: p },
            NlFamily::Identity => Nonlinearity::Identity,
        }
    }

    pub fn is_complex(self) -> bool {
        self == NlFamily::ComplexSat
    }

    pub fn reference(self) -> ReferenceSample {
        if self.is_complex() {
            ReferenceSample::rayleigh(REFERENCE_LEN)
        } else {
            ReferenceSample::gaussian(REFERENCE_LEN)
        }
    }
}

/// Bisection in `log δ` (sigmoid, complex_sat) or `log x_max` (clip) until the
/// SDR on `reference` matches `target_db`.
pub fn calibrate_sdr(family: NlFamily, target_db: f64, reference: &ReferenceSample) -> Result<NonlinearityDesc> {
    if family == NlFamily::Identity {
        return Ok(NonlinearityDesc {
            f: Nonlinearity::Identity,
            achieved_sdr_db: Some(SDR_CAP_DB),
        });
    }
    // SDR falls with δ and rises with x_max
    let increasing = family == NlFamily::Clip;
    let (mut lo, mut hi) = if increasing { (1e-3f64.ln(), 20f64.ln()) } else { (1e-3f64.ln(), 1e4f64.ln()) };
    let sdr = |p: f64| reference.sdr(&family.member(p.exp()));
    let (s_lo, s_hi) = (sdr(lo), sdr(hi));
    let (min_s, max_s) = (s_lo.min(s_hi), s_lo.max(s_hi));
    if !(min_s..=max_s).contains(&target_db) {
        return Err(Error::Calibration(format!(
            "{family:?} cannot reach {target_db} dB, attainable range {min_s:.2}..{max_s:.2} dB"
        )));
    }
    let mut best = (f64::INFINITY, lo);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let s = sdr(mid);
        if (s - target_db).abs() < best.0 {
            best = ((s - target_db).abs(), mid);
        }
        if best.0 < 1e-6 {
            break;
        }
        if (s < target_db) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > 0.25 {
        return Err(Error::Calibration(format!(
            "{family:?} missed {target_db} dB by {:.3} dB",
            best.0
        )));
    }
    let f = family.member(best.1.exp());
    Ok(NonlinearityDesc {
        f,
        achieved_sdr_db: Some(reference.sdr(&f)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// `y = f(h ⊛ x)`.
    Wiener,
    /// `y = h ⊛ f(x)`.
    Hammerstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variability {
    Inv,
    Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub structure: Structure,
    pub plants: usize,
    pub h_flag: Variability,
    pub f_flag: Variability,
    pub excitation: Excitation,
    pub n: usize,
    pub l_h: usize,
    /// Defaults to `L_h / 8`.
    #[serde(default)]
    pub decay_tau: Option<f64>,
    pub family: NlFamily,
    /// Endpoints of the per-plant SDR targets in dB.
    pub sdr_range_db: (f64, f64),
    /// SDR target of a shared nonlinearity; defaults to the midpoint of the
    /// range.
    #[serde(default)]
    pub inv_sdr_db: Option<f64>,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn desk(structure: Structure, h_flag: Variability, f_flag: Variability, family: NlFamily) -> Self {
        Self {
            structure,
            plants: 4,
            h_flag,
            f_flag,
            excitation: Excitation::White,
            n: 8000,
            l_h: 64,
            decay_tau: None,
            family,
            sdr_range_db: (4.0, 32.0),
            inv_sdr_db: None,
            seed: 0,
        }
    }

    pub fn is_complex(&self) -> bool {
        self.family.is_complex()
    }

    /// Per-plant SDR targets: log-spaced over the range for `var`, one shared
    /// value for `inv`.
    pub fn sdr_targets(&self) -> Vec<f64> {
        let (lo, hi) = self.sdr_range_db;
        match self.f_flag {
            Variability::Inv => vec![self.inv_sdr_db.unwrap_or(0.5 * (lo + hi)); self.plants],
            Variability::Var if self.plants == 1 => vec![0.5 * (lo + hi)],
            Variability::Var => (0..self.plants)
                .map(|j| lo * (hi / lo).powf(j as f64 / (self.plants - 1) as f64))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.plants == 0 || self.n == 0 || self.l_h == 0 {
            return Err(Error::Config("dataset needs K, N and L_h ≥ 1".into()));
        }
        let (lo, hi) = self.sdr_range_db;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid SDR range {lo}..{hi} dB")));
        }
        Ok(())
    }
}

/// A real sequence or a complex one stored as split parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub re: Vec<f64>,
    pub im: Option<Vec<f64>>,
}

impl Series {
    pub fn real(re: Vec<f64>) -> Self {
        Self { re, im: None }
    }

    pub fn complex(re: Vec<f64>, im: Vec<f64>) -> Self {
        Self { re, im: Some(im) }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().chain(self.im.iter().flatten()).map(|v| v * v).sum()
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for v in self.re.iter().chain(self.im.iter().flatten()) {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub h: Series,
    pub nl: NonlinearityDesc,
    pub x: Series,
    pub y: Series,
    /// SDR of the nonlinearity on the signal it actually receives.
    pub data_sdr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSet {
    pub config: DatasetConfig,
    pub plants: Vec<Plant>,
}

fn simulate(structure: Structure, h: &Series, f: &Nonlinearity, x: &Series) -> Result<(Series, f64)> {
    match (&x.im, &h.im) {
        (None, None) => {
            let (u, fu) = match structure {
                Structure::Wiener => {
                    let u = apply_lti(&x.re, &h.re);
                    let fu = f.apply(&u)?;
                    (u, fu)
                }
                Structure::Hammerstein => (x.re.clone(), f.apply(&x.re)?),
            };
            let sdr = compute_sdr(&u, &fu)?;
            let y = match structure {
                Structure::Wiener => fu,
                Structure::Hammerstein => apply_lti(&fu, &h.re),
            };
            Ok((Series::real(y), sdr))
        }
        (Some(xi), Some(hi)) => {
            let (u, fu) = match structure {
                Structure::Wiener => {
                    let u = apply_lti_complex((&x.re, xi), (&h.re, hi));
                    let fu = f.apply_complex(&u.0, &u.1)?;
                    (u, fu)
                }
                Structure::Hammerstein => ((x.re.clone(), xi.clone()), f.apply_complex(&x.re, xi)?),
            };
            let sdr = compute_sdr_complex((&u.0, &u.1), (&fu.0, &fu.1))?;
            let y = match structure {
                Structure::Wiener => fu,
                Structure::Hammerstein => apply_lti_complex((&fu.0, &fu.1), (&h.re, hi)),
            };
            Ok((Series::complex(y.0, y.1), sdr))
        }
        _ => Err(Error::Config("input and impulse response must both be real or both complex".into())),
    }
}

impl Plant {
    /// Recomputes `y` from the stored `(h, f, x)`.
    pub fn regenerate(&self, structure: Structure) -> Result<Series> {
        Ok(simulate(structure, &self.h, &self.nl.f, &self.x)?.0)
    }
}

/// Generates a multiplant dataset. Excitation, impulse responses and
/// nonlinearities come from substreams of `rng`, so each component depends
/// only on the seed and the plant index.
pub fn make_dataset(cfg: &DatasetConfig, rng: &Rng) -> Result<PlantSet> {
    cfg.validate()?;
    let k_n = cfg.plants;
    let complex = cfg.is_complex();
    let tau = cfg.decay_tau.unwrap_or(cfg.l_h as f64 / 8.0);
    let xs: Vec<Series> = if complex {
        let (re, im) = gen_complex_excitation(cfg.n, k_n, rng);
        re.into_iter().zip(im).map(|(a, b)| Series::complex(a, b)).collect()
    } else {
        gen_excitation(cfg.excitation, cfg.n, k_n, rng).into_iter().map(Series::real).collect()
    };
    let draw_h = |k: usize| -> Result<Series> {
        let mut r = rng.substream(&format!("h/{k}"));
        Ok(if complex {
            let (a, b) = gen_complex_impulse_response(cfg.l_h, tau, &mut r)?;
            Series::complex(a, b)
        } else {
            Series::real(gen_impulse_response(cfg.l_h, tau, &mut r)?)
        })
    };
    let hs: Vec<Series> = match cfg.h_flag {
        Variability::Inv => {
            let h = draw_h(0)?;
            vec![h; k_n]
        }
        Variability::Var => (0..k_n).map(draw_h).collect::<Result<_>>()?,
    };
    let reference = cfg.family.reference();
    let targets = cfg.sdr_targets();
    let mut nls: Vec<NonlinearityDesc> = Vec::with_capacity(k_n);
    for (k, &t) in targets.iter().enumerate() {
        if k > 0 && targets[k - 1] == t {
            nls.push(nls[k - 1]);
        } else {
            nls.push(calibrate_sdr(cfg.family, t, &reference)?);
        }
    }
    let plants = xs
        .into_iter()
        .zip(hs)
        .zip(nls)
        .map(|((x, h), nl)| {
            let (y, data_sdr_db) = simulate(cfg.structure, &h, &nl.f, &x)?;
            Ok(Plant { h, nl, x, y, data_sdr_db })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlantSet {
        config: cfg.clone(),
        plants,
    })
}

impl PlantSet {
    pub fn is_complex(&self) -> bool {
        self.plants.first().is_some_and(|p| p.x.im.is_some())
    }

    pub fn x_re(&self) -> Vec<Vec<f64>> {
        self.plants.iter().map(|p| p.x.re.clone()).collect()
    }

    pub fn y_re(&self) -> Vec<Vec<f64>> {
        self.plants.iter().map(|p| p.y.re.clone()).collect()
    }

    pub fn x_im(&self) -> Vec<Vec<f64>> {
        self.plants.iter().map(|p| p.x.im.clone().unwrap_or_default()).collect()
    }

    pub fn y_im(&self) -> Vec<Vec<f64>> {
        self.plants.iter().map(|p| p.y.im.clone().unwrap_or_default()).collect()
    }

    /// SHA-256 over the configuration and every stored signal.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).unwrap_or_default());
        for p in &self.plants {
            for s in [&p.h, &p.x, &p.y] {
                h.update(s.sha256().as_bytes());
            }
            h.update(serde_json::to_vec(&p.nl).unwrap_or_default());
        }
        hex(&h.finalize())
    }

    pub fn mean_sdr_db(&self) -> f64 {
        let v: Vec<f64> = self.plants.iter().filter_map(|p| p.nl.achieved_sdr_db).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlantMeta {
    nl: NonlinearityDesc,
    data_sdr_db: f64,
    len: usize,
    h_len: usize,
    complex: bool,
    h_sha256: String,
    f_sha256: String,
    x_sha256: String,
    y_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    format: String,
    config: DatasetConfig,
    content_hash: String,
    plants: Vec<PlantMeta>,
}

fn write_f64(path: &Path, v: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * v.len());
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64(path: &Path, len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * len {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            8 * len
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn series_files(dir: &Path, k: usize, name: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join(format!("plant{k}_{name}.f64")),
        dir.join(format!("plant{k}_{name}_im.f64")),
    )
}

fn f_hash(nl: &NonlinearityDesc) -> String {
    hex(&Sha256::digest(serde_json::to_vec(&nl.f).unwrap_or_default()))
}

/// Writes `metadata.json` and raw little-endian `f64` files per plant.
pub fn save_dataset(set: &PlantSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut plants = Vec::new();
    for (k, p) in set.plants.iter().enumerate() {
        for (name, s) in [("x", &p.x), ("y", &p.y), ("h", &p.h)] {
            let (re, im) = series_files(dir, k, name);
            write_f64(&re, &s.re)?;
            if let Some(v) = &s.im {
                write_f64(&im, v)?;
            }
        }
        plants.push(PlantMeta {
            nl: p.nl,
            data_sdr_db: p.data_sdr_db,
            len: p.x.len(),
            h_len: p.h.len(),
            complex: p.x.im.is_some(),
            h_sha256: p.h.sha256(),
            f_sha256: f_hash(&p.nl),
            x_sha256: p.x.sha256(),
            y_sha256: p.y.sha256(),
        });
    }
    let meta = DatasetMeta {
        format: "mkid-dataset-1".into(),
        config: set.config.clone(),
        content_hash: set.content_hash(),
        plants,
    };
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<PlantSet> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json"))?)?;
    let mut plants = Vec::new();
    for (k, pm) in meta.plants.iter().enumerate() {
        let load = |name: &str, len: usize| -> Result<Series> {
            let (re, im) = series_files(dir, k, name);
            let re = read_f64(&re, len)?;
            Ok(if pm.complex {
                Series::complex(re, read_f64(&im, len)?)
            } else {
                Series::real(re)
            })
        };
        plants.push(Plant {
            h: load("h", pm.h_len)?,
            nl: pm.nl,
            x: load("x", pm.len)?,
            y: load("y", pm.len)?,
            data_sdr_db: pm.data_sdr_db,
        });
    }
    let set = PlantSet {
        config: meta.config,
        plants,
    };
    if set.content_hash() != meta.content_hash {
        return Err(Error::Format(format!(
            "dataset in {} does not match its recorded hash",
            dir.display()
        )));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_excitation_statistics() {
        let x = gen_excitation(Excitation::White, 32000, 1, &Rng::new(1));
        let var = x[0].iter().map(|v| v * v).sum::<f64>() / 32000.0;
        assert!(var < 1.05 && var > 1.0 / 1.05, "{var}");
        assert_eq!(x, gen_excitation(Excitation::White, 32000, 1, &Rng::new(1)));
    }

    #[test]
    fn ar_excitation_lag_one_correlation() {
        let x = &gen_excitation(Excitation::ar_colored(), 32000, 1, &Rng::new(2))[0];
        let r0: f64 = x.iter().map(|v| v * v).sum();
        let r1: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
        assert!((r1 / r0 - 0.9).abs() < 0.02, "{}", r1 / r0);
    }

    #[test]
    fn plants_get_distinct_excitation() {
        let x = gen_excitation(Excitation::White, 100, 2, &Rng::new(3));
        assert_ne!(x[0], x[1]);
    }

    #[test]
    fn impulse_response_energy_and_decay() {
        let mut envelope_tail = 0.0;
        let mut head = 0.0;
        let base = Rng::new(4);
        for i in 0..100 {
            let h = gen_impulse_response(64, 8.0, &mut base.substream(&format!("{i}"))).unwrap();
            assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            envelope_tail += h[63].abs();
            head += h[0].abs();
        }
        assert!(envelope_tail < head * (-8.0f64).exp() * 10.0);
        let a = gen_impulse_response(16, 2.0, &mut base.substream("a")).unwrap();
        let b = gen_impulse_response(16, 2.0, &mut base.substream("b")).unwrap();
        assert_ne!(a, b);
        assert!(gen_impulse_response(0, 1.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn lti_examples() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(apply_lti(&x, &[1.0]), x);
        assert_eq!(apply_lti(&x, &[0.0, 1.0]), vec![0.0, 1.0, 2.0, 3.0]);
        let mut rng = Rng::new(5);
        let x = rng.normals(50);
        let h = rng.normals(16);
        let d = apply_lti(&x, &h);
        for n in 0..50 {
            let mut acc = 0.0;
            for l in 0..16 {
                if n >= l {
                    acc += h[l] * x[n - l];
                }
            }
            assert!((d[n] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_lti_matches_complex_arithmetic() {
        use num_complex::Complex64;
        let mut rng = Rng::new(6);
        let (xr, xi, hr, hi) = (rng.normals(20), rng.normals(20), rng.normals(5), rng.normals(5));
        let (dr, di) = apply_lti_complex((&xr, &xi), (&hr, &hi));
        for n in 0..20 {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..5.min(n + 1) {
                acc += Complex64::new(hr[l], hi[l]) * Complex64::new(xr[n - l], xi[n - l]);
            }
            assert!((acc.re - dr[n]).abs() < 1e-12 && (acc.im - di[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlinearity_examples() {
        let x = vec![-2.0, -0.5, 0.3, 1.7];
        assert_eq!(Nonlinearity::Clip { x_max: 3.7 }.apply(&x).unwrap(), x);
        assert_eq!(Nonlinearity::Clip { x_max: 1.0 }.apply(&x).unwrap(), vec![-1.0, -0.5, 0.3, 1.0]);
        let y = Nonlinearity::Sigmoid { gamma: 1.0, delta: 1e-6 }.apply(&[1.0]).unwrap()[0];
        assert!((y - 1e-6f64.atan()).abs() < 1e-12);
        assert!((y - 1e-6).abs() < 1e-12);
        let cs = Nonlinearity::ComplexSat { gamma: 0.5, delta: 2.0 };
        assert!(cs.apply(&x).is_err());
        assert!(Nonlinearity::Clip { x_max: 1.0 }.apply_complex(&x, &x).is_err());
    }

    #[test]
    fn complex_sat_keeps_phase() {
        let cs = Nonlinearity::ComplexSat { gamma: 0.5, delta: 2.0 };
        let mut rng = Rng::new(7);
        let (re, im) = (rng.normals(100), rng.normals(100));
        let (or, oi) = cs.apply_complex(&re, &im).unwrap();
        for i in 0..100 {
            assert!((oi[i].atan2(or[i]) - im[i].atan2(re[i])).abs() < 1e-12);
            let r = re[i].hypot(im[i]);
            assert!((or[i].hypot(oi[i]) - 0.5 * (2.0 * r).atan()).abs() < 1e-12);
        }
    }

    #[test]
    fn sdr_of_linear_maps_is_capped() {
        let x = Rng::new(8).normals(1000);
        assert_eq!(compute_sdr(&x, &x).unwrap(), SDR_CAP_DB);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(compute_sdr(&x, &x2).unwrap(), SDR_CAP_DB);
        assert!(matches!(compute_sdr(&[0.0; 4], &[1.0; 4]), Err(Error::UndefinedNormalization)));
    }

    /// SDR from Gaussian moments by midpoint quadrature on [−12, 12].
    fn quadrature_sdr(f: impl Fn(f64) -> f64) -> f64 {
        let n = 400_000;
        let dx = 24.0 / n as f64;
        let (mut exf, mut eff, mut exx) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = -12.0 + (i as f64 + 0.5) * dx;
            let w = (-0.5 * x * x).exp() * dx / (2.0 * std::f64::consts::PI).sqrt();
            let fx = f(x);
            exf += w * x * fx;
            eff += w * fx * fx;
            exx += w * x * x;
        }
        let alpha = exf / exx;
        10.0 * (alpha * alpha * exx / (eff - alpha * alpha * exx)).log10()
    }

    #[test]
    fn sample_sdr_matches_quadrature() {
        let f = Nonlinearity::Sigmoid { gamma: 1.0, delta: 2.0 };
        let oracle = quadrature_sdr(|x| f.eval_scalar(x));
        for seed in 0..3 {
            let x = Rng::new(seed).normals(1_000_000);
            let s = compute_sdr(&x, &f.apply(&x).unwrap()).unwrap();
            assert!((s - oracle).abs() < 0.1, "{s} vs {oracle}");
        }
    }

    #[test]
    fn calibration_hits_targets() {
        let g = ReferenceSample::gaussian(REFERENCE_LEN);
        for (family, target) in [(NlFamily::Clip, 30.0), (NlFamily::Sigmoid, 4.0)] {
            let d = calibrate_sdr(family, target, &g).unwrap();
            assert!((d.achieved_sdr_db.unwrap() - target).abs() <= 0.25);
            let oracle = quadrature_sdr(|x| d.f.eval_scalar(x));
            assert!((oracle - target).abs() < 0.1, "{family:?}: {oracle}");
        }
        assert!(matches!(calibrate_sdr(NlFamily::Sigmoid, 1.0, &g), Err(Error::Calibration(_))));
    }

    #[test]
    fn clip_sdr_grows_with_threshold() {
        let g = ReferenceSample::gaussian(4096);
        let mut prev = -1.0;
        for x_max in [0.2, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let s = g.sdr(&Nonlinearity::Clip { x_max });
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn complex_calibration_matches_complex_sdr() {
        let d = calibrate_sdr(NlFamily::ComplexSat, 10.0, &ReferenceSample::rayleigh(REFERENCE_LEN)).unwrap();
        let (re, im) = gen_complex_excitation(400_000, 1, &Rng::new(9));
        let (fr, fi) = d.f.apply_complex(&re[0], &im[0]).unwrap();
        let s = compute_sdr_complex((&re[0], &im[0]), (&fr, &fi)).unwrap();
        assert!((s - 10.0).abs() < 0.1, "{s}");
    }

    // A hard limiter on circular Gaussian input keeps correlation π/4, the
    // floor of every magnitude saturation.
    #[test]
    fn complex_saturation_has_a_limiter_floor() {
        let r = std::f64::consts::FRAC_PI_4;
        let floor = 10.0 * (r / (1.0 - r)).log10();
        let rayleigh = ReferenceSample::rayleigh(REFERENCE_LEN);
        let d = calibrate_sdr(NlFamily::ComplexSat, floor + 0.3, &rayleigh).unwrap();
        assert!((d.achieved_sdr_db.unwrap() - floor - 0.3).abs() <= 0.25);
        assert!(matches!(
            calibrate_sdr(NlFamily::ComplexSat, floor - 0.3, &rayleigh),
            Err(Error::Calibration(_))
        ));
    }

    fn small(structure: Structure, h: Variability, f: Variability, family: NlFamily) -> DatasetConfig {
        DatasetConfig {
            n: 500,
            l_h: 16,
            ..DatasetConfig::desk(structure, h, f, family)
        }
    }

    #[test]
    fn identity_hammerstein_is_lti() {
        let cfg = small(Structure::Hammerstein, Variability::Var, Variability::Var, NlFamily::Identity);
        let set = make_dataset(&cfg, &Rng::new(1)).unwrap();
        for p in &set.plants {
            assert_eq!(p.y.re, apply_lti(&p.x.re, &p.h.re));
        }
    }

    #[test]
    fn inv_flags_share_components() {
        let cfg = small(Structure::Wiener, Variability::Inv, Variability::Inv, NlFamily::Clip);
        let set = make_dataset(&cfg, &Rng::new(2)).unwrap();
        assert!(set.plants.windows(2).all(|w| w[0].h == w[1].h && w[0].nl == w[1].nl));
        assert_ne!(set.plants[0].x, set.plants[1].x);
        let cfg = small(Structure::Wiener, Variability::Var, Variability::Var, NlFamily::Clip);
        let set = make_dataset(&cfg, &Rng::new(2)).unwrap();
        assert_ne!(set.plants[0].h, set.plants[1].h);
        assert_ne!(set.plants[0].nl, set.plants[1].nl);
    }

    #[test]
    fn var_sdr_targets_are_log_spaced() {
        let cfg = small(Structure::Hammerstein, Variability::Inv, Variability::Var, NlFamily::Sigmoid);
        for (a, b) in cfg.sdr_targets().iter().zip([4.0, 8.0, 16.0, 32.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let set = make_dataset(&cfg, &Rng::new(3)).unwrap();
        for (p, t) in set.plants.iter().zip(cfg.sdr_targets()) {
            assert!((p.nl.achieved_sdr_db.unwrap() - t).abs() <= 0.25);
        }
        assert!((set.mean_sdr_db() - 15.0).abs() < 1.0);
    }

    #[test]
    fn regeneration_and_structure() {
        let cfg = small(Structure::Wiener, Variability::Var, Variability::Var, NlFamily::Clip);
        let set = make_dataset(&cfg, &Rng::new(4)).unwrap();
        for p in &set.plants {
            let y = p.regenerate(Structure::Wiener).unwrap();
            assert!(y.re.iter().zip(&p.y.re).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let swapped = set.plants[0].regenerate(Structure::Hammerstein).unwrap();
        assert_ne!(swapped, set.plants[0].y);
    }

    #[test]
    fn complex_dataset_roundtrips_through_directory() {
        let cfg = DatasetConfig {
            l_h: 20,
            sdr_range_db: (6.0, 15.0),
            ..small(Structure::Wiener, Variability::Var, Variability::Inv, NlFamily::ComplexSat)
        };
        let set = make_dataset(&cfg, &Rng::new(5)).unwrap();
        assert!(set.is_complex());
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&set, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, set);
        let again = make_dataset(&cfg, &Rng::new(5)).unwrap();
        assert_eq!(again.content_hash(), set.content_hash());
        std::fs::write(dir.path().join("plant0_y.f64"), [0u8; 16]).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
