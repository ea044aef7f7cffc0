//! Losses, Adam and the full-batch training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{segment_frames, segment_frames_complex, segment_targets, segment_targets_complex};
use crate::models::{FrameSpec, Model};
use crate::rng::Rng;
use crate::tensor::Signal;

/// Lower bound reported for any NMSE or ratio in dB.
pub const DB_FLOOR: f64 = -160.0;

fn check_pair(pred: &Signal, target: &Signal) -> Result<()> {
    if pred.shape() != target.shape() || pred.is_complex() != target.is_complex() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Sum of squared differences and its gradient `2 (pred − target)`.
pub fn mse_loss(pred: &Signal, target: &Signal) -> Result<(f64, Signal)> {
    check_pair(pred, target)?;
    let diff: Vec<f64> = pred
        .to_flat()
        .iter()
        .zip(target.to_flat())
        .map(|(p, t)| p - t)
        .collect();
    let loss = diff.iter().map(|d| d * d).sum();
    let grad: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
    Ok((loss, pred.with_flat(&grad)))
}

/// `10 log10(error / reference)`, floored at [`DB_FLOOR`].
pub fn ratio_db(error: f64, reference: f64) -> Result<f64> {
    if reference <= 0.0 || !reference.is_finite() {
        return Err(Error::UndefinedNormalization);
    }
    let r = error / reference;
    if !r.is_finite() {
        return Err(Error::NonFinite("error energy".into()));
    }
    Ok((10.0 * r.log10()).max(DB_FLOOR))
}

pub fn nmse_db(pred: &Signal, target: &Signal) -> Result<f64> {
    let (loss, _) = mse_loss(pred, target)?;
    ratio_db(loss, target.sum_sq())
}

/// NMSE of each plant separately.
pub fn nmse_db_per_plant(pred: &Signal, target: &Signal) -> Result<Vec<f64>> {
    check_pair(pred, target)?;
    let flat: Vec<f64> = pred.to_flat().iter().zip(target.to_flat()).map(|(p, t)| p - t).collect();
    let err = pred.with_flat(&flat).plant_energies();
    err.iter()
        .zip(target.plant_energies())
        .map(|(&e, r)| ratio_db(e, r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments and step counter for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Bias-corrected update `θ ← θ − lr · m̂ / (√v̂ + ε)`.
    pub fn update(&mut self, cfg: &AdamConfig, lr: f64, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state for {} parameters got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.step as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= lr * mh / (vh.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Halve the rate whenever the best NMSE has not improved for `patience`
    /// epochs, down to `lr · min_factor`.
    HalveOnStall { patience: usize, min_factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stage indices excluded from updates.
    #[serde(default)]
    pub freeze: Vec<usize>,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Frames per gradient chunk; `None` processes all frames at once.
    #[serde(default)]
    pub chunk_frames: Option<usize>,
    /// Stop once the NMSE falls below this level.
    #[serde(default)]
    pub target_nmse_db: Option<f64>,
    /// Stop once the best NMSE has stalled.
    #[serde(default)]
    pub plateau: Option<Plateau>,
}

/// Stall criterion: no new best by at least `min_delta_db` within `patience`
/// epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub patience: usize,
    pub min_delta_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            seed: 0,
            freeze: Vec::new(),
            schedule: LrSchedule::Constant,
            adam: AdamConfig::default(),
            chunk_frames: None,
            target_nmse_db: None,
            plateau: None,
        }
    }
}

/// Framed inputs and aligned targets for every plant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub x: Signal,
    pub y: Signal,
    target_energy: f64,
}

impl TrainData {
    pub fn new(x: Signal, y: Signal) -> Result<Self> {
        let target_energy = y.sum_sq();
        if x.frames() != y.frames() || x.shape()[1] != y.shape()[1] {
            return Err(Error::Shape(format!(
                "inputs {:?} and targets {:?} disagree in frames or plants",
                x.shape(),
                y.shape()
            )));
        }
        if target_energy <= 0.0 {
            return Err(Error::UndefinedNormalization);
        }
        Ok(Self { x, y, target_energy })
    }

    /// Frames real per-plant sequences `x → y`.
    pub fn from_sequences(x: &[Vec<f64>], y: &[Vec<f64>], frame: &FrameSpec) -> Result<Self> {
        Self::new(
            Signal::Real(segment_frames(x, frame)?),
            Signal::Real(segment_targets(y, frame)?),
        )
    }

    pub fn from_complex_sequences(
        x: (&[Vec<f64>], &[Vec<f64>]),
        y: (&[Vec<f64>], &[Vec<f64>]),
        frame: &FrameSpec,
    ) -> Result<Self> {
        Self::new(
            Signal::Complex(segment_frames_complex(x.0, x.1, frame)?),
            Signal::Complex(segment_targets_complex(y.0, y.1, frame)?),
        )
    }

    pub fn plants(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn target_energy(&self) -> f64 {
        self.target_energy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nmse_db: f64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// One record per evaluated parameter set; epoch `e` is the state after
    /// `e` updates.
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_nmse_db: f64,
    pub best: Model,
}

impl TrainResult {
    /// Running minimum of the NMSE curve.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.curve
            .iter()
            .map(|r| {
                best = best.min(r.nmse_db);
                best
            })
            .collect()
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,nmse_db,loss,lr\n");
        for r in &self.curve {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.nmse_db, r.loss, r.lr));
        }
        s
    }
}

/// Loss and per-stage gradients of the whole dataset, accumulated over frame
/// chunks in a fixed order.
fn full_batch(model: &Model, data: &TrainData, chunk: Option<usize>) -> Result<(f64, Vec<Vec<f64>>)> {
    let t_n = data.x.frames();
    let step = chunk.unwrap_or(t_n).max(1);
    let mut total = 0.0;
    let mut grads: Option<Vec<Vec<f64>>> = None;
    let mut t0 = 0;
    while t0 < t_n {
        let t1 = (t0 + step).min(t_n);
        let (x, y) = if t0 == 0 && t1 == t_n {
            (data.x.clone(), data.y.clone())
        } else {
            (data.x.frame_range(t0, t1), data.y.frame_range(t0, t1))
        };
        let mut loss = 0.0;
        let (_, g) = model.forward_backward(&x, |pred| {
            let (l, g) = mse_loss(pred, &y)?;
            loss = l;
            Ok(g)
        })?;
        total += loss;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
                }
            }
        }
        t0 = t1;
    }
    Ok((total, grads.unwrap_or_default()))
}

/// Full-batch Adam training. Every epoch evaluates the loss of the current
/// parameters, records it, and applies one update to the non-frozen stages.
/// The parameters with the lowest NMSE are returned as the best checkpoint.
pub fn train(model: &mut Model, data: &TrainData, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback invoked after every recorded epoch.
pub fn train_with<F: FnMut(&EpochRecord)>(
    model: &mut Model,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainResult> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let n_stages = model.stages().len();
    if let Some(&bad) = cfg.freeze.iter().find(|&&i| i >= n_stages) {
        return Err(Error::Config(format!(
            "cannot freeze stage {bad}, model has {n_stages} stages"
        )));
    }
    if data.plants() != model.spec().plants {
        return Err(Error::Shape(format!(
            "model has {} plants, data has {}",
            model.spec().plants,
            data.plants()
        )));
    }
    let mut states: Vec<AdamState> = model.stages().iter().map(|b| AdamState::new(b.param_count())).collect();
    let mut lr = cfg.adam.lr;
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut best_nmse = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best = model.clone();
    let mut last_good: Option<usize> = None;
    let mut stall = 0;
    // last epoch that improved the best by at least the plateau margin
    let (mut plateau_best, mut plateau_epoch) = (f64::INFINITY, 0);

    for epoch in 0..=cfg.epochs {
        let evaluate_only = epoch == cfg.epochs;
        let (loss, grads) = if evaluate_only {
            let pred = model.forward(&data.x)?;
            (mse_loss(&pred, &data.y)?.0, Vec::new())
        } else {
            full_batch(model, data, cfg.chunk_frames)?
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, last_good });
        }
        let nmse = ratio_db(loss, data.target_energy)?;
        let rec = EpochRecord {
            epoch,
            nmse_db: nmse,
            loss,
            lr,
        };
        curve.push(rec);
        on_epoch(&rec);
        last_good = Some(epoch);
        if nmse < best_nmse {
            best_nmse = nmse;
            best_epoch = epoch;
            best = model.clone();
            stall = 0;
        } else {
            stall += 1;
        }
        if let Some(p) = cfg.plateau {
            if nmse < plateau_best - p.min_delta_db {
                plateau_best = nmse;
                plateau_epoch = epoch;
            }
        }
        let stalled = cfg.plateau.is_some_and(|p| epoch - plateau_epoch >= p.patience);
        if evaluate_only || stalled || cfg.target_nmse_db.is_some_and(|t| nmse <= t) {
            break;
        }
        if let LrSchedule::HalveOnStall { patience, min_factor } = cfg.schedule {
            if stall >= patience && lr > cfg.adam.lr * min_factor {
                lr = (lr * 0.5).max(cfg.adam.lr * min_factor);
                stall = 0;
            }
        }
        for (i, (g, st)) in grads.iter().zip(&mut states).enumerate() {
            if cfg.freeze.contains(&i) {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    stage: i,
                    name: model.stages()[i].kind().to_string(),
                    epoch,
                });
            }
            st.update(&cfg.adam, lr, model.stages_mut()[i].params_mut(), g)?;
        }
    }
    Ok(TrainResult {
        curve,
        best_epoch,
        best_nmse_db: best_nmse,
        best,
    })
}

#[derive(Debug, Clone)]
pub struct AdaptResult {
    pub train: TrainResult,
    /// NMSE of the best adapted model for each test plant.
    pub per_plant_nmse_db: Vec<f64>,
}

/// Test-time adaptation: NL stages are copied from `trained` and frozen, FIR
/// stages are re-initialized for the test plant count and retrained.
pub fn adapt_test(trained: &Model, test: &TrainData, cfg: &TrainConfig, rng: &Rng) -> Result<AdaptResult> {
    let mut spec = trained.spec().clone();
    spec.plants = test.plants();
    let mut model = Model::build(&spec, trained.frame(), rng)?;
    model.load_nl_from(trained)?;
    let mut cfg = cfg.clone();
    for i in model.nl_stage_indices() {
        if !cfg.freeze.contains(&i) {
            cfg.freeze.push(i);
        }
    }
    let result = train(&mut model, test, &cfg)?;
    let pred = result.best.forward(&test.x)?;
    let per_plant_nmse_db = nmse_db_per_plant(&pred, &test.y)?;
    Ok(AdaptResult {
        train: result,
        per_plant_nmse_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::KernelMode;
    use crate::models::{ArchParams, FirDomain, FrameRule, ModelSpec};
    use crate::tensor::Tensor4;

    fn real(v: Vec<f64>) -> Signal {
        let n = v.len();
        Signal::Real(Tensor4::from_vec([1, 1, 1, n], v).unwrap())
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&real(vec![1.0, 2.0]), &real(vec![1.0, 2.0])).unwrap().0, 0.0);
        let (l, g) = mse_loss(&real(vec![0.0, 0.0]), &real(vec![1.0, 2.0])).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g.to_flat(), vec![-2.0, -4.0]);
        assert!(mse_loss(&real(vec![0.0]), &real(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn mse_matches_loop() {
        let mut rng = Rng::new(3);
        let a = rng.normals(100);
        let b = rng.normals(100);
        let mut expect = 0.0;
        for i in 0..100 {
            expect += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let (l, _) = mse_loss(&real(a), &real(b)).unwrap();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn nmse_examples() {
        let y = real(vec![1.0, -2.0, 3.0]);
        assert_eq!(nmse_db(&y.zeros_like(), &y).unwrap(), 0.0);
        assert_eq!(nmse_db(&y, &y).unwrap(), DB_FLOOR);
        assert!((ratio_db(1e-7, 1.0).unwrap() + 70.0).abs() < 1e-9);
        assert!(matches!(nmse_db(&y, &y.zeros_like()), Err(Error::UndefinedNormalization)));
    }

    #[test]
    fn adam_first_step() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(1);
        let mut p = [0.0];
        st.update(&cfg, cfg.lr, &mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(3);
        let mut p = [0.5, -1.0, 2.0];
        for _ in 0..10 {
            st.update(&cfg, cfg.lr, &mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(1);
        let mut p = [0.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 3.0);
            st.update(&cfg, cfg.lr, &mut p, &[g]).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "{}", p[0]);
        assert!(st.v.iter().all(|&v| v >= 0.0));
    }

    fn lin_data(plants: usize, n: usize, frame: &FrameSpec, seed: u64) -> TrainData {
        let mut rng = Rng::new(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..plants {
            let x = rng.normals(n);
            let h = rng.normals(4);
            let y: Vec<f64> = (0..n)
                .map(|i| (0..4).filter(|&l| l <= i).map(|l| h[l] * x[i - l]).sum())
                .collect();
            xs.push(x);
            ys.push(y);
        }
        TrainData::from_sequences(&xs, &ys, frame).unwrap()
    }

    fn fir_model(plants: usize, mode: KernelMode) -> Model {
        let arch = ArchParams {
            kernel_lens: vec![4],
            nl_depth: 1,
            nl_width: 2,
            fir_domain: FirDomain::Time,
            kernel_mode: mode,
            plants,
            complex: false,
        };
        let spec = ModelSpec::from_notation("FIR", &arch).unwrap();
        let f = FrameSpec::from_rule(FrameRule::MinOverlap { frame_len: 32 }, &spec).unwrap();
        Model::build(&spec, &f, &Rng::new(1)).unwrap()
    }

    #[test]
    fn training_fits_linear_plants_and_is_deterministic() {
        let mut model = fir_model(2, KernelMode::Multikernel);
        let data = lin_data(2, 400, model.frame(), 7);
        let cfg = TrainConfig { epochs: 600, ..Default::default() };
        let mut m2 = model.clone();
        let r = train(&mut model, &data, &cfg).unwrap();
        assert!(r.best_nmse_db < -40.0, "{}", r.best_nmse_db);
        let best = r.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        let r2 = train(&mut m2, &data, &cfg).unwrap();
        assert_eq!(r.best_nmse_db.to_bits(), r2.best_nmse_db.to_bits());
        assert_eq!(r.curve.len(), 601);
    }

    #[test]
    fn chunked_gradients_match_full_batch() {
        let model = fir_model(2, KernelMode::Multikernel);
        let data = lin_data(2, 400, model.frame(), 9);
        let (l1, g1) = full_batch(&model, &data, None).unwrap();
        let (l2, g2) = full_batch(&model, &data, Some(3)).unwrap();
        assert!((l1 - l2).abs() < 1e-9 * l1);
        for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn plateau_stops_a_stalled_run() {
        let mut model = fir_model(1, KernelMode::Multikernel);
        let data = lin_data(1, 200, model.frame(), 3);
        let cfg = TrainConfig {
            epochs: 5000,
            plateau: Some(Plateau { patience: 50, min_delta_db: 1.0 }),
            ..Default::default()
        };
        let r = train(&mut model, &data, &cfg).unwrap();
        assert!(r.curve.len() < 5001, "{}", r.curve.len());
        assert!(r.best_nmse_db < -40.0, "{}", r.best_nmse_db);
    }

    #[test]
    fn frozen_stage_is_untouched() {
        let mut model = fir_model(2, KernelMode::Multikernel);
        let data = lin_data(2, 200, model.frame(), 1);
        let before = model.stage_params();
        let cfg = TrainConfig { epochs: 20, freeze: vec![0], ..Default::default() };
        let r = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.stage_params(), before);
        assert_eq!(r.best.stage_params(), before);
        let bad = TrainConfig { freeze: vec![3], ..cfg };
        assert!(matches!(train(&mut model, &data, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn zero_targets_are_rejected() {
        let model = fir_model(1, KernelMode::Multikernel);
        let x = vec![Rng::new(1).normals(100)];
        let y = vec![vec![0.0; 100]];
        assert!(matches!(
            TrainData::from_sequences(&x, &y, model.frame()),
            Err(Error::UndefinedNormalization)
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let model = fir_model(2, KernelMode::Multikernel);
        let data = lin_data(2, 80, model.frame(), 2);
        let (_, g) = full_batch(&model, &data, None).unwrap();
        let base = model.stage_params();
        for j in 0..base[0].len() {
            let mut mp = model.clone();
            mp.stages_mut()[0].params_mut()[j] += 1e-6;
            let mut mm = model.clone();
            mm.stages_mut()[0].params_mut()[j] -= 1e-6;
            let lp = full_batch(&mp, &data, None).unwrap().0;
            let lm = full_batch(&mm, &data, None).unwrap().0;
            let n = (lp - lm) / 2e-6;
            assert!((n - g[0][j]).abs() / n.abs().max(g[0][j].abs()).max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn adapt_on_training_set_matches_training() {
        let arch = ArchParams {
            kernel_lens: vec![4],
            nl_depth: 2,
            nl_width: 4,
            fir_domain: FirDomain::Time,
            kernel_mode: KernelMode::Multikernel,
            plants: 2,
            complex: false,
        };
        let spec = ModelSpec::from_notation("NL2FIR", &arch).unwrap();
        let f = FrameSpec::from_rule(FrameRule::MinOverlap { frame_len: 32 }, &spec).unwrap();
        let mut model = Model::build(&spec, &f, &Rng::new(4)).unwrap();
        let mut rng = Rng::new(5);
        let xs: Vec<Vec<f64>> = (0..2).map(|_| rng.normals(300)).collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let g: Vec<f64> = x.iter().map(|v| v.atan()).collect();
                (0..x.len()).map(|n| g[n] + if n > 0 { 0.5 * (k as f64 + 1.0) * g[n - 1] } else { 0.0 }).collect()
            })
            .collect();
        let data = TrainData::from_sequences(&xs, &ys, &f).unwrap();
        let cfg = TrainConfig { epochs: 400, ..Default::default() };
        let trained = train(&mut model, &data, &cfg).unwrap();
        let nl_before = trained.best.stages()[0].params().to_vec();
        let adapted = adapt_test(&trained.best, &data, &cfg, &Rng::new(11)).unwrap();
        assert_eq!(adapted.train.best.stages()[0].params(), nl_before.as_slice());
        assert!(
            (adapted.train.best_nmse_db - trained.best_nmse_db).abs() <= 3.0,
            "{} vs {}",
            adapted.train.best_nmse_db,
            trained.best_nmse_db
        );
        assert_eq!(adapted.per_plant_nmse_db.len(), 2);
    }
}
