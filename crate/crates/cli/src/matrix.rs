//! Model × dataset matrices laid out like the verification tables.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mkid::blocks::KernelMode;
use mkid::optim::{LrSchedule, Plateau, TrainConfig};
use mkid::plants::{DatasetConfig, NlFamily, Structure, Variability};
use serde::{Deserialize, Serialize};

use crate::config::{CheckConfig, ExperimentConfig, ModelConfig, NetworkConfig};
use crate::run::run_train;

/// Cells at or below this NMSE count as a success.
pub const BOLD_THRESHOLD_DB: f64 = -35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub name: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major, `rows × columns`.
    pub cells: Vec<ExperimentConfig>,
    #[serde(default = "default_threshold")]
    pub threshold_db: f64,
}

fn default_threshold() -> f64 {
    BOLD_THRESHOLD_DB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: String,
    pub column: String,
    pub min_nmse_db: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub params: Option<usize>,
    pub bold: bool,
    pub wall_time_s: f64,
    pub dataset_hash: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub name: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub threshold_db: f64,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<Cell>>,
}

impl MatrixResult {
    /// Result cell of every configuration in `spec`, which must be the spec
    /// this result came from.
    pub fn by_config<'a>(&'a self, spec: &'a MatrixSpec) -> Vec<(&'a ExperimentConfig, &'a Cell)> {
        spec.cells.iter().zip(self.cells.iter().flatten()).collect()
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<&Cell> {
        let r = self.rows.iter().position(|v| v == row)?;
        let c = self.columns.iter().position(|v| v == column)?;
        Some(&self.cells[r][c])
    }

    /// Plain-text table, bold cells marked with `*`.
    pub fn render(&self) -> String {
        let w0 = self.rows.iter().map(|r| r.len()).max().unwrap_or(0).max(4);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(8)).collect();
        let mut s = format!("{}\n{:w0$}", self.name, "");
        for (c, w) in self.columns.iter().zip(&widths) {
            s.push_str(&format!(" | {c:>w$}"));
        }
        s.push('\n');
        for (r, row) in self.rows.iter().zip(&self.cells) {
            s.push_str(&format!("{r:w0$}"));
            for (cell, w) in row.iter().zip(&widths) {
                let v = match (cell.min_nmse_db, &cell.error) {
                    (Some(v), _) => format!("{}{v:.1}", if cell.bold { "*" } else { "" }),
                    (None, _) => "error".to_string(),
                };
                s.push_str(&format!(" | {v:>w$}"));
            }
            s.push('\n');
        }
        s
    }
}

impl MatrixSpec {
    pub fn validate(&self) -> mkid::Result<()> {
        if self.cells.len() != self.rows.len() * self.columns.len() {
            return Err(mkid::Error::Config(format!(
                "matrix '{}' has {} cells for {}×{} layout",
                self.name,
                self.cells.len(),
                self.rows.len(),
                self.columns.len()
            )));
        }
        self.cells.iter().try_for_each(|c| c.validate())
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> mkid::Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| mkid::Error::Config(format!("matrix '{}' has no column '{n}'", self.name)))
            })
            .collect::<mkid::Result<_>>()?;
        let nc = self.columns.len();
        let mut cells = Vec::new();
        for r in 0..self.rows.len() {
            for &c in &idx {
                cells.push(self.cells[r * nc + c].clone());
            }
        }
        Ok(Self {
            name: self.name.clone(),
            rows: self.rows.clone(),
            columns: idx.iter().map(|&c| self.columns[c].clone()).collect(),
            cells,
            threshold_db: self.threshold_db,
        })
    }

    pub fn map_cells(mut self, f: impl Fn(&mut ExperimentConfig)) -> Self {
        self.cells.iter_mut().for_each(f);
        self
    }

    /// Runs every cell on up to `jobs` threads. Failed cells are recorded,
    /// not propagated.
    pub fn run(&self, jobs: usize, on_cell: impl Fn(&Cell) + Sync) -> MatrixResult {
        self.run_with(jobs, |_| None, on_cell)
    }

    /// Like [`MatrixSpec::run`], but takes the result of any cell for which
    /// `reuse` returns one instead of training it again.
    pub fn run_with(
        &self,
        jobs: usize,
        reuse: impl Fn(&ExperimentConfig) -> Option<Cell> + Sync,
        on_cell: impl Fn(&Cell) + Sync,
    ) -> MatrixResult {
        let nc = self.columns.len();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Cell>>> = Mutex::new(vec![None; self.cells.len()]);
        std::thread::scope(|s| {
            for _ in 0..jobs.max(1).min(self.cells.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= self.cells.len() {
                        break;
                    }
                    let cfg = &self.cells[i];
                    let (row, column) = (self.rows[i / nc].clone(), self.columns[i % nc].clone());
                    if let Some(mut cell) = reuse(cfg) {
                        cell.row = row;
                        cell.column = column;
                        cell.bold = cell.min_nmse_db.is_some_and(|v| v <= self.threshold_db);
                        on_cell(&cell);
                        results.lock().unwrap()[i] = Some(cell);
                        continue;
                    }
                    let cell = match run_train(cfg) {
                        Ok(out) => Cell {
                            row,
                            column,
                            min_nmse_db: Some(out.summary.min_nmse_db),
                            best_epoch: Some(out.summary.best_epoch),
                            epochs: out.summary.epochs_run,
                            params: Some(out.summary.params),
                            bold: out.summary.min_nmse_db <= self.threshold_db,
                            wall_time_s: out.summary.wall_time_s,
                            dataset_hash: Some(out.summary.dataset_hash),
                            error: None,
                        },
                        Err(e) => Cell {
                            row,
                            column,
                            min_nmse_db: None,
                            best_epoch: None,
                            epochs: 0,
                            params: None,
                            bold: false,
                            wall_time_s: 0.0,
                            dataset_hash: None,
                            error: Some(e.to_string()),
                        },
                    };
                    on_cell(&cell);
                    results.lock().unwrap()[i] = Some(cell);
                });
            }
        });
        let flat: Vec<Cell> = results.into_inner().unwrap().into_iter().map(|c| c.unwrap()).collect();
        MatrixResult {
            name: self.name.clone(),
            rows: self.rows.clone(),
            columns: self.columns.clone(),
            threshold_db: self.threshold_db,
            cells: flat.chunks(nc).map(|c| c.to_vec()).collect(),
        }
    }
}

/// Desk-scale SDR range of the complex baseband data. Log-spaced targets
/// average 10 dB; a magnitude saturation cannot go below about 5.6 dB.
pub const COMPLEX_SDR_RANGE_DB: (f64, f64) = (6.0, 15.0);
/// Shared complex nonlinearity, at the average SDR of the baseband data.
pub const COMPLEX_INV_SDR_DB: f64 = 10.0;
pub const DESK_EPOCHS: usize = 2000;

fn flag(v: Variability) -> &'static str {
    match v {
        Variability::Inv => "inv",
        Variability::Var => "var",
    }
}

const FLAGS: [(Variability, Variability); 4] = [
    (Variability::Inv, Variability::Inv),
    (Variability::Var, Variability::Inv),
    (Variability::Inv, Variability::Var),
    (Variability::Var, Variability::Var),
];

/// Wiener rows are labelled `h f`, Hammerstein rows `f h`, as in the tables.
fn real_rows(seed: u64) -> Vec<(String, DatasetConfig)> {
    let mut rows = Vec::new();
    for (a, b) in FLAGS {
        let mut d = DatasetConfig::desk(Structure::Wiener, a, b, NlFamily::Clip);
        d.seed = seed;
        rows.push((format!("wiener h={} f={}", flag(a), flag(b)), d));
    }
    for (f, h) in FLAGS {
        let mut d = DatasetConfig::desk(Structure::Hammerstein, h, f, NlFamily::Sigmoid);
        d.seed = seed;
        rows.push((format!("hammerstein f={} h={}", flag(f), flag(h)), d));
    }
    rows
}

/// Runs stop early once they are far below the bold threshold or have
/// stopped improving; neither changes which cells end up bold.
pub const REAL_TARGET_DB: f64 = -50.0;
pub const COMPLEX_TARGET_DB: f64 = -65.0;

fn train_cfg(epochs: usize, seed: u64, target_db: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        schedule: LrSchedule::HalveOnStall {
            patience: 100,
            min_factor: 1.0 / 64.0,
        },
        target_nmse_db: Some(target_db),
        plateau: Some(Plateau {
            patience: 800,
            min_delta_db: 0.5,
        }),
        ..TrainConfig::default()
    }
}

fn cell(dataset: &DatasetConfig, model: ModelConfig, epochs: usize) -> ExperimentConfig {
    let target = if dataset.family == NlFamily::ComplexSat {
        COMPLEX_TARGET_DB
    } else {
        REAL_TARGET_DB
    };
    ExperimentConfig {
        dataset: dataset.clone(),
        model,
        train: train_cfg(epochs, dataset.seed, target),
        test: None,
        check: CheckConfig::default(),
        out: None,
    }
}

fn net(notation: &str, lens: &[usize]) -> ModelConfig {
    ModelConfig::Network(NetworkConfig::new(notation, lens))
}

fn three_block_lens(d: &DatasetConfig) -> [usize; 2] {
    match d.structure {
        Structure::Wiener => [d.l_h, 1],
        Structure::Hammerstein => [1, d.l_h],
    }
}

pub const TABLE1_COLUMNS: [&str; 9] = [
    "FIR",
    "NL1-FIR",
    "NL6-FIR",
    "FIR1-NL",
    "FIR6-NL",
    "FIR1-NL1-FIR",
    "FIR1-NL6-FIR",
    "FIR6-NL1-FIR",
    "FIR6-NL6-FIR",
];

/// Architectures against Wiener (clip) and Hammerstein (sigmoid) data.
pub fn table1(seed: u64, epochs: usize) -> MatrixSpec {
    let rows = real_rows(seed);
    let mut cells = Vec::new();
    for (_, d) in &rows {
        for col in TABLE1_COLUMNS {
            let fir_count = col.matches("FIR").count();
            let lens: Vec<usize> = if fir_count == 2 {
                three_block_lens(d).to_vec()
            } else {
                vec![d.l_h]
            };
            cells.push(cell(d, net(col, &lens), epochs));
        }
    }
    MatrixSpec {
        name: "table1".into(),
        rows: rows.into_iter().map(|r| r.0).collect(),
        columns: TABLE1_COLUMNS.iter().map(|c| c.to_string()).collect(),
        cells,
        threshold_db: BOLD_THRESHOLD_DB,
    }
}

pub const MP_ORDER: usize = 6;

/// Multikernel FIR6-NL6-FIR against the memory polynomial and the
/// single-kernel network.
pub fn table2(seed: u64, epochs: usize) -> MatrixSpec {
    let rows = real_rows(seed);
    let mut cells = Vec::new();
    for (_, d) in &rows {
        let lens = three_block_lens(d);
        cells.push(cell(d, net("FIR6-NL6-FIR", &lens), epochs));
        cells.push(cell(
            d,
            ModelConfig::MemoryPolynomial {
                order: MP_ORDER,
                len: d.l_h,
            },
            epochs,
        ));
        let mut single = NetworkConfig::new("FIR6-NL6-FIR", &lens);
        single.kernel_mode = KernelMode::SingleKernel;
        cells.push(cell(d, ModelConfig::Network(single), epochs));
    }
    MatrixSpec {
        name: "table2".into(),
        rows: rows.into_iter().map(|r| r.0).collect(),
        columns: vec!["multikernel".into(), "memory polynomial".into(), "single kernel".into()],
        cells,
        threshold_db: BOLD_THRESHOLD_DB,
    }
}

pub const COMPLEX_LEN: usize = 20;
pub const COMPLEX_NL_DEPTH: usize = 3;
pub const COMPLEX_NL_WIDTH: usize = 15;
pub const COMPLEX_MP_ORDER: usize = 15;

pub fn complex_dataset(h: Variability, f: Variability, seed: u64) -> DatasetConfig {
    let mut d = DatasetConfig::desk(Structure::Wiener, h, f, NlFamily::ComplexSat);
    d.l_h = COMPLEX_LEN;
    d.sdr_range_db = COMPLEX_SDR_RANGE_DB;
    d.inv_sdr_db = Some(COMPLEX_INV_SDR_DB);
    d.seed = seed;
    d
}

pub fn complex_network(kernel_mode: KernelMode) -> NetworkConfig {
    let mut n = NetworkConfig::new("FIR1-NL1-FIR", &[COMPLEX_LEN, 1]);
    n.nl_depth = COMPLEX_NL_DEPTH;
    n.nl_width = COMPLEX_NL_WIDTH;
    n.kernel_mode = kernel_mode;
    n
}

/// Complex baseband Wiener data against complex models.
pub fn table3(seed: u64, epochs: usize) -> MatrixSpec {
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (h, f) in FLAGS {
        let d = complex_dataset(h, f, seed);
        rows.push(format!("h={} f={}", flag(h), flag(f)));
        cells.push(cell(&d, ModelConfig::Network(complex_network(KernelMode::Multikernel)), epochs));
        cells.push(cell(&d, ModelConfig::Network(complex_network(KernelMode::SingleKernel)), epochs));
        cells.push(cell(
            &d,
            ModelConfig::MemoryPolynomial {
                order: COMPLEX_MP_ORDER,
                len: COMPLEX_LEN,
            },
            epochs,
        ));
        cells.push(cell(&d, net("FIR", &[COMPLEX_LEN]), epochs));
    }
    MatrixSpec {
        name: "table3".into(),
        rows,
        columns: vec![
            "multikernel".into(),
            "single kernel".into(),
            "memory polynomial".into(),
            "linear FIR".into(),
        ],
        cells,
        threshold_db: BOLD_THRESHOLD_DB,
    }
}

pub fn preset(name: &str, seed: u64, epochs: usize) -> Option<MatrixSpec> {
    match name {
        "table1" => Some(table1(seed, epochs)),
        "table2" => Some(table2(seed, epochs)),
        "table3" => Some(table3(seed, epochs)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_ordered() {
        for name in ["table1", "table2", "table3"] {
            let m = preset(name, 0, 10).unwrap();
            m.validate().unwrap();
        }
        let t1 = table1(0, 10);
        assert_eq!(t1.rows.len(), 8);
        assert_eq!(t1.columns.len(), 9);
        assert_eq!(t1.rows[0], "wiener h=inv f=inv");
        assert_eq!(t1.rows[5], "hammerstein f=var h=inv");
        assert!(preset("table4", 0, 10).is_none());
    }

    #[test]
    fn column_selection_keeps_rows() {
        let t = table1(0, 10).select_columns(&["FIR6-NL6-FIR", "FIR"]).unwrap();
        assert_eq!(t.columns, vec!["FIR6-NL6-FIR", "FIR"]);
        assert_eq!(t.cells.len(), 16);
        assert!(matches!(&t.cells[1].model, ModelConfig::Network(n) if n.notation == "FIR"));
        assert!(table1(0, 10).select_columns(&["FIR9"]).is_err());
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut m = table2(0, 1).select_columns(&["memory polynomial"]).unwrap();
        m.rows.truncate(1);
        m.cells.truncate(1);
        m.cells[0].model = ModelConfig::MemoryPolynomial { order: 400, len: 64 };
        let r = m.run(1, |_| {});
        let c = &r.cells[0][0];
        assert!(c.error.is_some() && c.min_nmse_db.is_none() && !c.bold);
        assert!(r.render().contains("error"));
    }

    #[test]
    fn reused_cells_take_the_new_labels() {
        let mut m = table2(0, 1).select_columns(&["memory polynomial"]).unwrap();
        m.rows.truncate(2);
        m.cells.truncate(2);
        let first = m.run(1, |_| {});
        let done = first.by_config(&m);
        let trained = std::sync::atomic::AtomicUsize::new(0);
        let mut renamed = m.clone();
        renamed.rows = vec!["a".into(), "b".into()];
        renamed.threshold_db = 100.0;
        let again = renamed.run_with(
            1,
            |cfg| {
                let hit = done.iter().find(|(c, _)| *c == cfg).map(|(_, cell)| (*cell).clone());
                if hit.is_none() {
                    trained.fetch_add(1, Ordering::SeqCst);
                }
                hit
            },
            |_| {},
        );
        assert_eq!(trained.load(Ordering::SeqCst), 0);
        assert_eq!(again.cells[1][0].row, "b");
        assert_eq!(again.cells[1][0].min_nmse_db, first.cells[1][0].min_nmse_db);
        assert!(again.cells.iter().flatten().all(|c| c.bold));
    }
}
