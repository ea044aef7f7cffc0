use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mkid::models::Model;
use mkid::plants::{save_dataset, DatasetConfig};
use mkid_cli::config::ExperimentConfig;
use mkid_cli::matrix::{preset, MatrixSpec, DESK_EPOCHS};
use mkid_cli::{exit_code, gradcheck, patterns, run, CliError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mkid", version, about = "Multiplant nonlinear system identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent matrix cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Exit with status 4 when a result misses its threshold.
    #[arg(long, global = true)]
    check: bool,
    /// Overrides `train.epochs`.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a multiplant dataset and write it to a directory.
    Generate,
    /// Train one model and write results.json, curve.csv and checkpoint.bidm.
    Train,
    /// Freeze the NL stages of a checkpoint and refit its FIR stages on the test plants.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a table of models against datasets.
    Matrix {
        /// table1, table2 or table3; ignored when --config is given.
        #[arg(long)]
        preset: Option<String>,
        /// Comma-separated subset of columns.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
    /// Finite-difference check of every block type and architecture.
    Gradcheck,
}

fn load_experiment(c: &Common) -> Result<ExperimentConfig, CliError> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(out) = &c.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg_out: Option<&Path>, fallback: &str) -> Result<PathBuf, CliError> {
    let dir = c
        .out
        .clone()
        .or_else(|| cfg_out.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    write(path, &serde_json::to_string_pretty(v).expect("json value serializes"))
}

fn generate(c: &Common) -> Result<ExitCode, CliError> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    // either a full experiment or a bare dataset section
    let mut ds: DatasetConfig = match ExperimentConfig::from_json(&text) {
        Ok(cfg) => cfg.dataset,
        Err(_) => serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid dataset config: {e}")))?,
    };
    if let Some(seed) = c.seed {
        ds.seed = seed;
    }
    ds.validate()?;
    let set = run::generate(&ds)?;
    let dir = out_dir(c, None, "dataset")?;
    save_dataset(&set, &dir)?;
    println!("wrote {} plants to {} (hash {})", set.plants.len(), dir.display(), set.content_hash());
    for (k, p) in set.plants.iter().enumerate() {
        println!("plant {k}: SDR {:.2} dB", p.data_sdr_db);
    }
    Ok(ExitCode::SUCCESS)
}

fn train(c: &Common) -> Result<ExitCode, CliError> {
    let cfg = load_experiment(c)?;
    let out = run::run_train(&cfg)?;
    let dir = out_dir(c, cfg.out.as_deref(), "out")?;
    let s = &out.summary;
    let passed = cfg.check.passes(s.min_nmse_db);
    write_json(
        &dir.join("results.json"),
        &json!({ "command": "train", "config": cfg, "summary": s, "check_passed": passed }),
    )?;
    write(&dir.join("curve.csv"), &out.curve_csv())?;
    if let Some(m) = &out.model {
        m.save(&dir.join("checkpoint.bidm"))?;
    }
    if let Some(mp) = &out.baseline {
        write(
            &dir.join("baseline.json"),
            &serde_json::to_string_pretty(mp).expect("baseline serializes"),
        )?;
    }
    println!(
        "{}: min NMSE {:.2} dB at epoch {} ({} params, {:.1} s)",
        s.model, s.min_nmse_db, s.best_epoch, s.params, s.wall_time_s
    );
    Ok(verdict(c.check, passed))
}

fn adapt(c: &Common, checkpoint: &Path) -> Result<ExitCode, CliError> {
    let cfg = load_experiment(c)?;
    let test = cfg
        .test
        .clone()
        .ok_or_else(|| CliError::Config("adapt needs a `test` dataset section".into()))?;
    let trained = Model::load(checkpoint)?;
    let out = run::run_adapt(&trained, &cfg, &test)?;
    let dir = out_dir(c, cfg.out.as_deref(), "out")?;
    let s = &out.summary;
    let passed = cfg.check.passes(s.final_nmse_db);
    write_json(
        &dir.join("results.json"),
        &json!({ "command": "adapt", "config": cfg, "checkpoint": checkpoint, "summary": s, "check_passed": passed }),
    )?;
    let mut csv = String::from("epoch,nmse_db,loss,lr\n");
    for r in &out.curve {
        csv.push_str(&format!("{},{},{},{}\n", r.epoch, r.nmse_db, r.loss, r.lr));
    }
    write(&dir.join("curve.csv"), &csv)?;
    out.model.save(&dir.join("checkpoint.bidm"))?;
    println!("adapted NMSE {:.2} dB, per plant {:?}", s.final_nmse_db, s.per_plant_nmse_db);
    Ok(verdict(c.check, passed))
}

fn matrix(c: &Common, preset_name: Option<&str>, columns: &[String]) -> Result<ExitCode, CliError> {
    let seed = c.seed.unwrap_or(0);
    let epochs = c.epochs.unwrap_or(DESK_EPOCHS);
    let mut spec: MatrixSpec = match (&c.config, preset_name) {
        (Some(path), _) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut m: MatrixSpec =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid matrix: {e}")))?;
            if let Some(s) = c.seed {
                m = m.map_cells(|cell| *cell = cell.clone().with_seed(s));
            }
            if let Some(e) = c.epochs {
                m = m.map_cells(|cell| cell.train.epochs = e);
            }
            m
        }
        (None, Some(name)) => {
            preset(name, seed, epochs).ok_or_else(|| CliError::Config(format!("unknown preset '{name}'")))?
        }
        (None, None) => return Err(CliError::Config("matrix needs --preset or --config".into())),
    };
    if !columns.is_empty() {
        let names: Vec<&str> = columns.iter().map(String::as_str).collect();
        spec = spec.select_columns(&names)?;
    }
    spec.validate()?;
    let result = spec.run(c.jobs, |cell| match (cell.min_nmse_db, &cell.error) {
        (Some(v), _) => eprintln!("{} / {}: {v:.2} dB ({:.0} s)", cell.row, cell.column, cell.wall_time_s),
        (None, e) => eprintln!("{} / {}: failed: {}", cell.row, cell.column, e.as_deref().unwrap_or("")),
    });
    let checks = patterns::checks_for(&result);
    let passed = checks.as_ref().is_none_or(|v| v.iter().all(|p| p.passed));
    let dir = out_dir(c, None, "out")?;
    write_json(
        &dir.join("results.json"),
        &json!({ "command": "matrix", "spec": spec, "result": result, "pattern": checks, "check_passed": passed }),
    )?;
    let table = result.render();
    write(&dir.join("table.txt"), &table)?;
    print!("{table}");
    for p in checks.iter().flatten() {
        println!("{} {}: {}", if p.passed { "PASS" } else { "FAIL" }, p.name, p.detail);
    }
    Ok(verdict(c.check, passed))
}

fn grad(c: &Common) -> Result<ExitCode, CliError> {
    let report = gradcheck::run_suite(c.seed.unwrap_or(0))?;
    print!("{}", report.render());
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        write_json(&out.join("results.json"), &json!({ "command": "gradcheck", "report": report }))?;
    }
    Ok(verdict(c.check, report.all_passed()))
}

fn verdict(check: bool, passed: bool) -> ExitCode {
    if check && !passed {
        ExitCode::from(mkid_cli::EXIT_CHECK_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match &cli.command {
        Command::Generate => generate(c),
        Command::Train => train(c),
        Command::Adapt { checkpoint } => adapt(c, checkpoint),
        Command::Matrix { preset, columns } => matrix(c, preset.as_deref(), columns),
        Command::Gradcheck => grad(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
