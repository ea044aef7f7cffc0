//! The acceptance experiments, one function per criterion.
//!
//! Every function is deterministic in its seed and returns a [`Verdict`]
//! instead of panicking, so a runner can report all criteria even when some
//! of them fail.

use mkid::blocks::{FirFreqBlock, FirTimeBlock, KernelMode};
use mkid::models::{ArchParams, FirDomain, FrameRule, FrameSpec, Model, ModelSpec};
use mkid::optim::{nmse_db, train, TrainConfig, TrainData};
use mkid::plants::{
    calibrate_sdr, DatasetConfig, Excitation, NlFamily, Nonlinearity, Structure, Variability,
};
use mkid::{Result, Rng, Tensor4};
use serde::{Deserialize, Serialize};

use crate::config::{CheckConfig, ExperimentConfig, ModelConfig, NetworkConfig};
use crate::matrix::{self, MatrixResult};
use crate::patterns::{self, PatternCheck};
use crate::run::{run_adapt, run_train};
use crate::gradcheck;

pub const EPOCHS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(id: usize, name: &str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name: name.into(),
            passed,
            detail,
        }
    }

    /// A criterion whose experiment could not run at all.
    fn error(id: usize, name: &str, e: impl std::fmt::Display) -> Self {
        Self::new(id, name, false, format!("error: {e}"))
    }

    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn from_patterns(id: usize, name: &str, checks: &[PatternCheck]) -> Verdict {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let detail = if failed.is_empty() {
        format!("{} pattern checks hold", checks.len())
    } else {
        failed.join("; ")
    };
    Verdict::new(id, name, failed.is_empty(), detail)
}

fn experiment(dataset: DatasetConfig, model: ModelConfig, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            epochs,
            seed: dataset.seed,
            ..TrainConfig::default()
        },
        dataset,
        model,
        test: None,
        check: CheckConfig::default(),
        out: None,
    }
}

fn fir(lens: usize, domain: FirDomain, mode: KernelMode) -> ModelConfig {
    let mut n = NetworkConfig::new("FIR", &[lens]);
    n.fir_domain = domain;
    n.kernel_mode = mode;
    ModelConfig::Network(n)
}

fn min_nmse(cfg: &ExperimentConfig) -> Result<f64> {
    Ok(run_train(cfg)?.summary.min_nmse_db)
}

pub fn gradient_suite(seed: u64) -> Verdict {
    let name = "gradient suite";
    match gradcheck::run_suite(seed) {
        Ok(r) => {
            let worst = r.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
            let failed: Vec<&str> = r.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
            Verdict::new(
                1,
                name,
                r.all_passed(),
                format!("{} checks, worst rel err {worst:.2e}, failed {failed:?}", r.entries.len()),
            )
        }
        Err(e) => Verdict::error(1, name, e),
    }
}

pub const OVERLAP_SAVE_CASES: usize = 50;
pub const OVERLAP_SAVE_TOL: f64 = 1e-10;

fn below(rng: &mut Rng, n: usize) -> usize {
    (rng.uniform(0.0, n as f64) as usize).min(n - 1)
}

fn overlap_save_error(rng: &mut Rng) -> Result<(f64, [usize; 3])> {
    let m = 1usize << (2 + below(rng, 8));
    let len = 1 + below(rng, m);
    let r = m - len + 1;
    let plants = 1 + below(rng, 3);
    let mode = if below(rng, 2) == 0 {
        KernelMode::Multikernel
    } else {
        KernelMode::SingleKernel
    };
    let kernels = if mode == KernelMode::Multikernel { plants } else { 1 };
    let (inputs, outputs) = (1 + below(rng, 2), 1 + below(rng, 2));
    let taps = rng.normals(len * kernels * inputs * outputs);
    let time = FirTimeBlock::from_taps(len, plants, inputs, outputs, mode, taps.clone())?;
    let freq = FirFreqBlock::from_time_taps(len, m, plants, inputs, outputs, mode, false, &taps)?;
    let frames = 1 + below(rng, 3);
    let x = Tensor4::from_vec([frames, plants, inputs, m], rng.normals(frames * plants * inputs * m))?;
    let yf = freq.forward(&x)?;
    let yt = time.forward(&x)?.tail(r)?;
    let err = yf.data().iter().zip(yt.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((err, [m, len, r]))
}

pub fn overlap_save(seed: u64) -> Verdict {
    let name = "overlap-save equals time-domain convolution";
    let mut rng = Rng::new(seed).substream("overlap-save");
    let mut worst = (0.0, [0; 3]);
    for _ in 0..OVERLAP_SAVE_CASES {
        match overlap_save_error(&mut rng) {
            Ok((e, g)) if e >= worst.0 => worst = (e, g),
            Ok(_) => {}
            Err(e) => return Verdict::error(2, name, e),
        }
    }
    let [m, l, r] = worst.1;
    Verdict::new(
        2,
        name,
        worst.0 < OVERLAP_SAVE_TOL,
        format!("{OVERLAP_SAVE_CASES} geometries, worst {:.1e} at M={m} L={l} R={r}", worst.0),
    )
}

/// Linear multiplant plants: identity nonlinearity, plant-specific
/// impulse responses.
pub fn linear_dataset(excitation: Excitation, seed: u64) -> DatasetConfig {
    let mut d = DatasetConfig::desk(Structure::Hammerstein, Variability::Var, Variability::Inv, NlFamily::Identity);
    d.excitation = excitation;
    d.seed = seed;
    d
}

pub const LINEAR_MULTIKERNEL_DB: f64 = -60.0;
pub const LINEAR_SINGLE_FLOOR_DB: f64 = -3.0;

/// Minimum NMSE of the multikernel and the single-kernel FIR on white-noise
/// linear plants.
pub fn linear_white_values(seed: u64) -> Result<[f64; 2]> {
    let d = linear_dataset(Excitation::White, seed);
    let l = d.l_h;
    Ok([
        min_nmse(&experiment(d.clone(), fir(l, FirDomain::Time, KernelMode::Multikernel), EPOCHS))?,
        min_nmse(&experiment(d, fir(l, FirDomain::Time, KernelMode::SingleKernel), EPOCHS))?,
    ])
}

pub fn linear_white(seed: u64) -> (Verdict, Option<[f64; 2]>) {
    let name = "linear multiplant, white noise";
    match linear_white_values(seed) {
        Ok([multi, single]) => (
            Verdict::new(
                3,
                name,
                multi <= LINEAR_MULTIKERNEL_DB && single >= LINEAR_SINGLE_FLOOR_DB,
                format!("multikernel {multi:.1} dB (need <= {LINEAR_MULTIKERNEL_DB}), single kernel {single:.1} dB (need >= {LINEAR_SINGLE_FLOOR_DB})"),
            ),
            Some([multi, single]),
        ),
        Err(e) => (Verdict::error(3, name, e), None),
    }
}

pub const COLORED_FREQ_DB: f64 = -55.0;
pub const COLORED_GAP_DB: f64 = 15.0;

/// Minimum NMSE and the first epoch at or below [`COLORED_FREQ_DB`].
fn colored_run(cfg: &ExperimentConfig) -> Result<(f64, Option<usize>)> {
    let out = run_train(cfg)?;
    let first = out.curve.iter().find(|r| r.nmse_db <= COLORED_FREQ_DB).map(|r| r.epoch);
    Ok((out.summary.min_nmse_db, first))
}

pub fn colored_noise(seed: u64) -> Verdict {
    let name = "colored noise, frequency vs time domain";
    let d = linear_dataset(Excitation::ar_colored(), seed);
    let l = d.l_h;
    let run = || -> Result<[(f64, Option<usize>); 2]> {
        Ok([
            colored_run(&experiment(d.clone(), fir(l, FirDomain::Freq, KernelMode::Multikernel), EPOCHS))?,
            colored_run(&experiment(d.clone(), fir(l, FirDomain::Time, KernelMode::Multikernel), EPOCHS))?,
        ])
    };
    let when = |e: Option<usize>| e.map_or("never".to_string(), |e| format!("epoch {e}"));
    match run() {
        Ok([(freq, fe), (time, te)]) => Verdict::new(
            4,
            name,
            freq <= COLORED_FREQ_DB && time - freq >= COLORED_GAP_DB,
            format!(
                "frequency {freq:.1} dB (need <= {COLORED_FREQ_DB}), time {time:.1} dB, gap {:.1} dB (need >= {COLORED_GAP_DB}); {COLORED_FREQ_DB} dB reached at {} (frequency) and {} (time)",
                time - freq,
                when(fe),
                when(te)
            ),
        ),
        Err(e) => Verdict::error(4, name, e),
    }
}

/// Runs table 1, then table 2 taking the multikernel column from table 1's
/// identical FIR6-NL6-FIR cells.
pub fn real_tables(seed: u64, jobs: usize, on_cell: impl Fn(&matrix::Cell) + Sync) -> (MatrixResult, MatrixResult) {
    let t1 = matrix::table1(seed, EPOCHS);
    let r1 = t1.run(jobs, &on_cell);
    let done = r1.by_config(&t1);
    let t2 = matrix::table2(seed, EPOCHS);
    let r2 = t2.run_with(
        jobs,
        |cfg| done.iter().find(|(c, _)| *c == cfg).map(|(_, cell)| (*cell).clone()),
        &on_cell,
    );
    (r1, r2)
}

pub fn table1_verdict(r: &MatrixResult) -> Verdict {
    from_patterns(5, "table 1 pattern", &patterns::table1_checks(r))
}

pub fn table2_verdict(r: &MatrixResult) -> Verdict {
    from_patterns(6, "table 2 pattern", &patterns::table2_checks(r))
}

pub fn complex_table(seed: u64, jobs: usize, on_cell: impl Fn(&matrix::Cell) + Sync) -> MatrixResult {
    matrix::table3(seed, EPOCHS).run(jobs, on_cell)
}

pub fn table3_verdict(r: &MatrixResult) -> Verdict {
    from_patterns(7, "table 3 pattern", &patterns::table3_checks(r))
}

pub const ADAPT_DB: f64 = -35.0;
pub const ADAPT_GAIN_DB: f64 = 10.0;
/// SDR range of the unseen test plants.
pub const ADAPT_TEST_SDR_DB: (f64, f64) = (8.0, 10.0);

/// Training and test configuration of the freeze-adapt protocol.
pub fn adapt_experiment(seed: u64) -> ExperimentConfig {
    let mut train = DatasetConfig::desk(Structure::Hammerstein, Variability::Var, Variability::Var, NlFamily::Sigmoid);
    train.seed = seed;
    let mut test = train.clone();
    test.plants = 2;
    test.sdr_range_db = ADAPT_TEST_SDR_DB;
    test.seed = seed.wrapping_add(1000);
    let mut cfg = experiment(train, ModelConfig::Network(NetworkConfig::new("NL6-FIR", &[64])), EPOCHS);
    cfg.test = Some(test);
    cfg
}

pub fn freeze_adapt(seed: u64) -> Verdict {
    let name = "freeze-adapt on unseen plants";
    let run = || -> Result<Verdict> {
        let cfg = adapt_experiment(seed);
        let test = cfg.test.clone().expect("adapt experiment has test data");
        let trained = run_train(&cfg)?;
        let model = trained.model.expect("network training returns a model");
        let adapted = run_adapt(&model, &cfg, &test)?;
        let linear = experiment(test.clone(), fir(test.l_h, FirDomain::Time, KernelMode::Multikernel), EPOCHS);
        let lin = min_nmse(&linear)?;
        let a = adapted.summary.final_nmse_db;
        let max_sdr = adapted.summary.test_sdr_db.iter().copied().fold(f64::MIN, f64::max);
        Ok(Verdict::new(
            8,
            name,
            a <= ADAPT_DB && lin - a >= ADAPT_GAIN_DB && max_sdr <= ADAPT_TEST_SDR_DB.1 + 0.5,
            format!(
                "trained {:.1} dB, adapted {a:.1} dB (need <= {ADAPT_DB}), linear FIR {lin:.1} dB, gain {:.1} dB (need >= {ADAPT_GAIN_DB}), test SDR {:?}",
                trained.summary.min_nmse_db,
                lin - a,
                adapted.summary.test_sdr_db.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
            ),
        ))
    };
    run().unwrap_or_else(|e| Verdict::error(8, name, e))
}

pub const SDR_TARGETS_DB: [f64; 4] = [4.0, 8.0, 16.0, 32.0];
pub const SDR_CALIBRATION_TOL_DB: f64 = 0.25;
pub const SDR_ORACLE_TOL_DB: f64 = 0.1;
pub const SDR_ORACLE_SAMPLES: usize = 1_000_000;

/// Monte-Carlo SDR on fresh Gaussian samples, written out independently of
/// the library's estimator.
pub fn monte_carlo_sdr(f: &Nonlinearity, rng: &mut Rng) -> f64 {
    let (mut xx, mut xf, mut ff) = (0.0, 0.0, 0.0);
    for _ in 0..SDR_ORACLE_SAMPLES {
        let x = rng.normal();
        let y = f.eval_scalar(x);
        xx += x * x;
        xf += x * y;
        ff += y * y;
    }
    let alpha = xf / xx;
    // E{(f - αx)²} = E{f²} - 2αE{xf} + α²E{x²}
    let resid = ff - 2.0 * alpha * xf + alpha * alpha * xx;
    10.0 * (alpha * alpha * xx / resid).log10()
}

pub fn sdr_calibration(seed: u64) -> Verdict {
    let name = "SDR calibration";
    let mut rng = Rng::new(seed).substream("sdr-oracle");
    let mut worst_cal: f64 = 0.0;
    let mut worst_mc: f64 = 0.0;
    for family in [NlFamily::Sigmoid, NlFamily::Clip] {
        let reference = family.reference();
        for t in SDR_TARGETS_DB {
            let d = match calibrate_sdr(family, t, &reference) {
                Ok(d) => d,
                Err(e) => return Verdict::error(9, name, e),
            };
            let achieved = d.achieved_sdr_db.unwrap_or(f64::NAN);
            worst_cal = worst_cal.max((achieved - t).abs());
            worst_mc = worst_mc.max((monte_carlo_sdr(&d.f, &mut rng) - achieved).abs());
        }
    }
    Verdict::new(
        9,
        name,
        worst_cal <= SDR_CALIBRATION_TOL_DB && worst_mc <= SDR_ORACLE_TOL_DB,
        format!(
            "worst target miss {worst_cal:.3} dB (need <= {SDR_CALIBRATION_TOL_DB}), worst Monte-Carlo gap {worst_mc:.3} dB (need <= {SDR_ORACLE_TOL_DB})"
        ),
    )
}

pub const NL_FIT_SDR_DB: f64 = 8.0;
pub const NL_FIT_RANGE: f64 = 3.0;
pub const NL_FIT_TRAIN_POINTS: usize = 4096;
pub const NL_FIT_EVAL_POINTS: usize = 10_240;
pub const NL_FIT_SIGMOID_DB: f64 = -40.0;
pub const NL_FIT_CLIP_DB: f64 = -25.0;

fn grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -NL_FIT_RANGE + 2.0 * NL_FIT_RANGE * i as f64 / (n - 1) as f64)
        .collect()
}

/// Fits a standalone NL block (one input, one output, depth 5, width 6) to
/// `family` at [`NL_FIT_SDR_DB`] on a uniform grid and returns the NMSE on a
/// denser grid.
pub fn nl_fit_nmse(family: NlFamily, seed: u64) -> Result<f64> {
    let d = calibrate_sdr(family, NL_FIT_SDR_DB, &family.reference())?;
    let spec = ModelSpec::from_notation(
        "NL1",
        &ArchParams {
            kernel_lens: vec![],
            nl_depth: 5,
            nl_width: 6,
            fir_domain: FirDomain::Time,
            kernel_mode: KernelMode::Multikernel,
            plants: 1,
            complex: false,
        },
    )?;
    let frame = FrameSpec::from_rule(FrameRule::Explicit { frame_len: 1024, shift: 1024 }, &spec)?;
    let sampled = |n: usize| -> Result<TrainData> {
        let x = grid(n);
        let y = d.f.apply(&x)?;
        TrainData::from_sequences(&[x], &[y], &frame)
    };
    let mut model = Model::build(&spec, &frame, &Rng::new(seed).substream("nl-fit"))?;
    let cfg = TrainConfig {
        epochs: EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let result = train(&mut model, &sampled(NL_FIT_TRAIN_POINTS)?, &cfg)?;
    let eval = sampled(NL_FIT_EVAL_POINTS)?;
    nmse_db(&result.best.forward(&eval.x)?, &eval.y)
}

pub fn nl_fit(seed: u64) -> Verdict {
    let name = "NL block function approximation";
    match (nl_fit_nmse(NlFamily::Sigmoid, seed), nl_fit_nmse(NlFamily::Clip, seed)) {
        (Ok(s), Ok(c)) => Verdict::new(
            10,
            name,
            s <= NL_FIT_SIGMOID_DB && c <= NL_FIT_CLIP_DB && s <= c,
            format!("arctan {s:.1} dB (need <= {NL_FIT_SIGMOID_DB}), clip {c:.1} dB (need <= {NL_FIT_CLIP_DB})"),
        ),
        (Err(e), _) | (_, Err(e)) => Verdict::error(10, name, e),
    }
}

fn min_values(r: &MatrixResult) -> Vec<Option<u64>> {
    r.cells.iter().flatten().map(|c| c.min_nmse_db.map(f64::to_bits)).collect()
}

/// Compares reruns of criteria 3 and 7 bit for bit.
pub fn determinism(first3: Option<[f64; 2]>, again3: Option<[f64; 2]>, first7: &MatrixResult, again7: &MatrixResult) -> Verdict {
    let name = "determinism";
    let same3 = match (first3, again3) {
        (Some(a), Some(b)) => a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
        _ => false,
    };
    let (a, b) = (min_values(first7), min_values(again7));
    let same7 = a == b && a.iter().all(Option::is_some);
    Verdict::new(
        11,
        name,
        same3 && same7,
        format!(
            "criterion 3 rerun {}, criterion 7 rerun {} ({} cells)",
            if same3 { "identical" } else { "differs" },
            if same7 { "identical" } else { "differs" },
            a.len()
        ),
    )
}

/// Reruns the complex table for [`determinism`].
pub fn complex_table_again(seed: u64, jobs: usize) -> MatrixResult {
    complex_table(seed, jobs, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_lines_start_with_the_outcome() {
        let v = Verdict::new(7, "x", false, "why".into());
        assert_eq!(v.line(), "FAIL criterion  7 x: why");
        assert!(Verdict::new(10, "y", true, String::new()).line().starts_with("PASS criterion 10"));
    }

    // E{x·clip(x)} and E{clip²} have closed forms in Φ and φ.
    #[test]
    fn monte_carlo_sdr_matches_closed_form_clip() {
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let n = Normal::standard();
        let c: f64 = 1.0;
        let tail = 1.0 - n.cdf(c);
        let xf = 1.0 - 2.0 * tail;
        let ff = xf - 2.0 * c * n.pdf(c) + 2.0 * c * c * tail;
        let exact = 10.0 * (xf * xf / (ff - xf * xf)).log10();
        let mc = monte_carlo_sdr(&Nonlinearity::Clip { x_max: c }, &mut Rng::new(3));
        assert!((mc - exact).abs() < 0.1, "{mc} vs {exact}");
    }
}
