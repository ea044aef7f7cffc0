//! Runs every acceptance experiment at seed 0 and prints one PASS/FAIL line
//! per criterion. Takes hours on a single core.
//!
//! `ACCEPT_ONLY=3,9` restricts the run to the listed criteria.

use std::process::ExitCode;

use mkid_cli::criteria::{self, Verdict};
use mkid_cli::matrix::Cell;

const SEED: u64 = 0;

fn progress(c: &Cell) {
    match c.min_nmse_db {
        Some(v) => eprintln!("  {} / {}: {v:.2} dB ({:.0} s)", c.row, c.column, c.wall_time_s),
        None => eprintln!("  {} / {}: {}", c.row, c.column, c.error.as_deref().unwrap_or("failed")),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<usize>> = std::env::var("ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let mut verdicts = Vec::new();
    let mut report = |v: Verdict| {
        println!("{}", v.line());
        verdicts.push(v);
    };

    if wanted(1) {
        report(criteria::gradient_suite(SEED));
    }
    if wanted(2) {
        report(criteria::overlap_save(SEED));
    }
    let mut linear = None;
    if wanted(3) || wanted(11) {
        let (v, values) = criteria::linear_white(SEED);
        linear = values;
        if wanted(3) {
            report(v);
        }
    }
    if wanted(4) {
        report(criteria::colored_noise(SEED));
    }
    if wanted(5) || wanted(6) {
        let (t1, t2) = criteria::real_tables(SEED, jobs, progress);
        if wanted(5) {
            report(criteria::table1_verdict(&t1));
        }
        if wanted(6) {
            report(criteria::table2_verdict(&t2));
        }
    }
    let mut complex = None;
    if wanted(7) || wanted(11) {
        let t3 = criteria::complex_table(SEED, jobs, progress);
        if wanted(7) {
            report(criteria::table3_verdict(&t3));
        }
        complex = Some(t3);
    }
    if wanted(8) {
        report(criteria::freeze_adapt(SEED));
    }
    if wanted(9) {
        report(criteria::sdr_calibration(SEED));
    }
    if wanted(10) {
        report(criteria::nl_fit(SEED));
    }
    if wanted(11) {
        let again = criteria::linear_white(SEED).1;
        let t3 = complex.expect("complex table ran");
        report(criteria::determinism(linear, again, &t3, &criteria::complex_table_again(SEED, jobs)));
    }

    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
