//! ERLE curves and Welch power spectral density estimates.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft::DftPlan;
use crate::error::{Error, Result};

pub const ERLE_CAP_DB: f64 = 160.0;
pub const ERLE_ALPHA: f64 = 0.999;
const POWER_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErleCurve {
    pub values_db: Vec<f64>,
    pub alpha: f64,
}

impl ErleCurve {
    /// Mean of the dB values from `start` on.
    pub fn mean_from(&self, start: usize) -> f64 {
        let tail = &self.values_db[start.min(self.values_db.len())..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,value_db\n");
        for (i, v) in self.values_db.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

fn smoothed_power(v: impl Iterator<Item = f64>, alpha: f64, acc: &mut [f64]) {
    let mut p = 0.0;
    for (a, x) in acc.iter_mut().zip(v) {
        p = alpha * p + (1.0 - alpha) * x * x;
        *a += p;
    }
}

fn erle_db(pd: f64, pe: f64) -> f64 {
    if pd == 0.0 && pe == 0.0 {
        return 0.0;
    }
    if pe == 0.0 {
        return ERLE_CAP_DB;
    }
    (10.0 * (pd / pe.max(POWER_FLOOR)).log10()).clamp(-ERLE_CAP_DB, ERLE_CAP_DB)
}

/// `ERLE[n] = 10 log10(P_d[n] / P_e[n])` with exponentially smoothed powers.
pub fn erle_curve(d: &[f64], d_hat: &[f64], alpha: f64) -> Result<ErleCurve> {
    erle_curve_multi(&[d.to_vec()], &[d_hat.to_vec()], alpha)
}

/// Several signals of equal length; powers are averaged before the log.
pub fn erle_curve_multi(d: &[Vec<f64>], d_hat: &[Vec<f64>], alpha: f64) -> Result<ErleCurve> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("smoothing constant must lie in (0, 1), got {alpha}")));
    }
    if d.is_empty() || d.len() != d_hat.len() {
        return Err(Error::Shape("ERLE needs matching signal lists".into()));
    }
    let n = d[0].len();
    if d.iter().chain(d_hat).any(|s| s.len() != n) {
        return Err(Error::Shape("ERLE signals differ in length".into()));
    }
    let mut pd = vec![0.0; n];
    let mut pe = vec![0.0; n];
    for (dk, hk) in d.iter().zip(d_hat) {
        smoothed_power(dk.iter().copied(), alpha, &mut pd);
        smoothed_power(dk.iter().zip(hk).map(|(a, b)| a - b), alpha, &mut pe);
    }
    Ok(ErleCurve {
        values_db: pd.iter().zip(&pe).map(|(&a, &b)| erle_db(a, b)).collect(),
        alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    /// Normalized frequency per bin in `[-0.5, 0.5)`, natural DFT order.
    pub freqs: Vec<f64>,
    /// Power density per bin. White noise of variance `σ²` gives `σ²`.
    pub power: Vec<f64>,
    pub seg_len: usize,
    pub overlap: f64,
    pub window: String,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn power_db(&self) -> Vec<f64> {
        self.power.iter().map(|p| 10.0 * p.max(1e-300).log10()).collect()
    }

    /// `Σ P[k] / seg_len`, the time-domain mean power.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() / self.seg_len as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,freq,value_db\n");
        for (i, (f, p)) in self.freqs.iter().zip(self.power_db()).enumerate() {
            s.push_str(&format!("{i},{f},{p}\n"));
        }
        s
    }
}

pub const PSD_SEG_LEN: usize = 256;
pub const PSD_OVERLAP: f64 = 0.5;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed Welch estimate of a real (`im = None`) or complex sequence.
pub fn psd_welch(re: &[f64], im: Option<&[f64]>, seg_len: usize, overlap: f64) -> Result<PsdEstimate> {
    if !seg_len.is_power_of_two() || seg_len < 2 {
        return Err(Error::Config(format!("segment length must be a power of two, got {seg_len}")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    if let Some(im) = im {
        if im.len() != re.len() {
            return Err(Error::Shape("real and imaginary parts differ in length".into()));
        }
    }
    if re.len() < seg_len {
        return Err(Error::TooShort {
            len: re.len(),
            frame_len: seg_len,
        });
    }
    let hop = ((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let win = hann(seg_len);
    let wpow: f64 = win.iter().map(|w| w * w).sum();
    let plan = DftPlan::new(seg_len)?;
    let mut acc = vec![0.0; seg_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    let mut segments = 0;
    let mut start = 0;
    while start + seg_len <= re.len() {
        for i in 0..seg_len {
            let v = Complex64::new(re[start + i], im.map_or(0.0, |s| s[start + i]));
            buf[i] = v * win[i];
        }
        plan.forward(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let norm = 1.0 / (segments as f64 * wpow);
    let power: Vec<f64> = acc.iter().map(|a| a * norm).collect();
    if power.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("PSD estimate".into()));
    }
    let freqs = (0..seg_len)
        .map(|k| {
            let f = k as f64 / seg_len as f64;
            if f >= 0.5 {
                f - 1.0
            } else {
                f
            }
        })
        .collect();
    Ok(PsdEstimate {
        freqs,
        power,
        seg_len,
        overlap,
        window: "hann".into(),
        segments,
    })
}
