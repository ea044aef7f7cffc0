//! Single experiments: one dataset, one model, one training run.

use std::time::Instant;

use mkid::baselines::{fit_memory_polynomial, fit_memory_polynomial_complex, MemoryPolynomial};
use mkid::models::Model;
use mkid::optim::{adapt_test, nmse_db_per_plant, ratio_db, train, EpochRecord, TrainData};
use mkid::plants::{make_dataset, DatasetConfig, PlantSet};
use mkid::{Result, Rng};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelConfig, NetworkConfig};

pub fn generate(cfg: &DatasetConfig) -> Result<PlantSet> {
    make_dataset(cfg, &Rng::new(cfg.seed))
}

pub fn train_data(set: &PlantSet, net: &NetworkConfig) -> Result<(mkid::models::ModelSpec, mkid::models::FrameSpec, TrainData)> {
    let spec = net.spec(set.plants.len(), set.is_complex())?;
    let frame = net.frame(&spec)?;
    let data = if set.is_complex() {
        TrainData::from_complex_sequences((&set.x_re(), &set.x_im()), (&set.y_re(), &set.y_im()), &frame)?
    } else {
        TrainData::from_sequences(&set.x_re(), &set.y_re(), &frame)?
    };
    Ok((spec, frame, data))
}

/// Everything `train` reports besides the checkpoint itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub min_nmse_db: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub params: usize,
    pub per_plant_nmse_db: Vec<f64>,
    pub wall_time_s: f64,
    pub dataset_hash: String,
    pub data_sdr_db: Vec<f64>,
}

pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub curve: Vec<EpochRecord>,
    pub model: Option<Model>,
    pub baseline: Option<MemoryPolynomial>,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,nmse_db,loss,lr\n");
        for r in &self.curve {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.nmse_db, r.loss, r.lr));
        }
        s
    }
}

fn network_seed(cfg: &ExperimentConfig) -> Rng {
    Rng::new(cfg.train.seed).substream("model")
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let set = generate(&cfg.dataset)?;
    run_train_on(cfg, &set)
}

pub fn run_train_on(cfg: &ExperimentConfig, set: &PlantSet) -> Result<TrainOutcome> {
    let start = Instant::now();
    let data_sdr_db = set.plants.iter().map(|p| p.data_sdr_db).collect();
    match &cfg.model {
        ModelConfig::Network(net) => {
            let (spec, frame, data) = train_data(set, net)?;
            let mut model = Model::build(&spec, &frame, &network_seed(cfg))?;
            let result = train(&mut model, &data, &cfg.train)?;
            let pred = result.best.forward(&data.x)?;
            Ok(TrainOutcome {
                summary: TrainSummary {
                    model: cfg.label(),
                    min_nmse_db: result.best_nmse_db,
                    best_epoch: result.best_epoch,
                    epochs_run: result.curve.len().saturating_sub(1),
                    params: result.best.param_count(),
                    per_plant_nmse_db: nmse_db_per_plant(&pred, &data.y)?,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    dataset_hash: set.content_hash(),
                    data_sdr_db,
                },
                curve: result.curve,
                model: Some(result.best),
                baseline: None,
            })
        }
        ModelConfig::MemoryPolynomial { order, len } => {
            let (mp, err, energy) = if set.is_complex() {
                let (xr, xi, yr, yi) = (set.x_re(), set.x_im(), set.y_re(), set.y_im());
                let mp = fit_memory_polynomial_complex((&xr, &xi), (&yr, &yi), *order, *len)?;
                let (pr, pi) = mp.predict_complex((&xr, &xi))?;
                let err: Vec<f64> = (0..xr.len())
                    .map(|k| sq_dist(&pr[k], &yr[k]) + sq_dist(&pi[k], &yi[k]))
                    .collect();
                let energy: Vec<f64> = (0..xr.len()).map(|k| sq(&yr[k]) + sq(&yi[k])).collect();
                (mp, err, energy)
            } else {
                let (x, y) = (set.x_re(), set.y_re());
                let mp = fit_memory_polynomial(&x, &y, *order, *len)?;
                let p = mp.predict(&x)?;
                let err = (0..x.len()).map(|k| sq_dist(&p[k], &y[k])).collect();
                let energy = y.iter().map(|v| sq(v)).collect();
                (mp, err, energy)
            };
            let per_plant = err.iter().zip(&energy).map(|(e, s)| ratio_db(*e, *s)).collect::<Result<Vec<_>>>()?;
            let total = ratio_db(err.iter().sum(), energy.iter().sum())?;
            Ok(TrainOutcome {
                summary: TrainSummary {
                    model: cfg.label(),
                    min_nmse_db: total,
                    best_epoch: 0,
                    epochs_run: 0,
                    params: order * len * set.plants.len() * if set.is_complex() { 2 } else { 1 },
                    per_plant_nmse_db: per_plant,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    dataset_hash: set.content_hash(),
                    data_sdr_db,
                },
                curve: Vec::new(),
                model: None,
                baseline: Some(mp),
            })
        }
    }
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub final_nmse_db: f64,
    pub best_epoch: usize,
    pub per_plant_nmse_db: Vec<f64>,
    pub test_dataset_hash: String,
    pub test_sdr_db: Vec<f64>,
    pub wall_time_s: f64,
}

pub struct AdaptOutcome {
    pub summary: AdaptSummary,
    pub curve: Vec<EpochRecord>,
    pub model: Model,
}

/// Freezes the NL stages of `trained` and refits the FIR stages on `test`.
pub fn run_adapt(trained: &Model, cfg: &ExperimentConfig, test: &DatasetConfig) -> Result<AdaptOutcome> {
    let start = Instant::now();
    let set = generate(test)?;
    let ModelConfig::Network(net) = &cfg.model else {
        return Err(mkid::Error::Config("adapt needs a network model".into()));
    };
    let mut net = net.clone();
    net.frame = Some(mkid::models::FrameRule::Explicit {
        frame_len: trained.frame().frame_len,
        shift: trained.frame().shift,
    });
    let (_, _, data) = train_data(&set, &net)?;
    let res = adapt_test(trained, &data, &cfg.train, &Rng::new(cfg.train.seed).substream("adapt"))?;
    Ok(AdaptOutcome {
        summary: AdaptSummary {
            final_nmse_db: res.train.best_nmse_db,
            best_epoch: res.train.best_epoch,
            per_plant_nmse_db: res.per_plant_nmse_db,
            test_dataset_hash: set.content_hash(),
            test_sdr_db: set.plants.iter().map(|p| p.data_sdr_db).collect(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        curve: res.train.curve,
        model: res.train.best,
    })
}
