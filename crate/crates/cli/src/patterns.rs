//! Expected success patterns of the three verification tables.

use serde::{Deserialize, Serialize};

use crate::matrix::MatrixResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Checks `pred(row, nmse)` on every listed row of `column`.
fn rows_satisfy(
    m: &MatrixResult,
    name: &str,
    column: &str,
    rows: &[&str],
    pred: impl Fn(f64) -> bool,
) -> PatternCheck {
    let mut bad = Vec::new();
    for row in rows {
        match m.cell(row, column) {
            Some(c) => match c.min_nmse_db {
                Some(v) if pred(v) => {}
                Some(v) => bad.push(format!("{row}: {v:.1} dB")),
                None => bad.push(format!("{row}: {}", c.error.as_deref().unwrap_or("no result"))),
            },
            None => bad.push(format!("{row}: not run")),
        }
    }
    PatternCheck {
        name: name.into(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{column} ok on {} rows", rows.len())
        } else {
            format!("{column} off pattern at {}", bad.join(", "))
        },
    }
}

const WIENER: [&str; 4] = [
    "wiener h=inv f=inv",
    "wiener h=var f=inv",
    "wiener h=inv f=var",
    "wiener h=var f=var",
];
const HAMMERSTEIN: [&str; 4] = [
    "hammerstein f=inv h=inv",
    "hammerstein f=var h=inv",
    "hammerstein f=inv h=var",
    "hammerstein f=var h=var",
];

fn all_rows() -> Vec<&'static str> {
    WIENER.iter().chain(&HAMMERSTEIN).copied().collect()
}

pub fn table1_checks(m: &MatrixResult) -> Vec<PatternCheck> {
    let t = m.threshold_db;
    let bold = move |v: f64| v <= t;
    let plain = move |v: f64| v > t;
    vec![
        rows_satisfy(m, "FIR never bold", "FIR", &all_rows(), plain),
        rows_satisfy(m, "NL6-FIR bold on Hammerstein", "NL6-FIR", &HAMMERSTEIN, bold),
        rows_satisfy(m, "NL6-FIR not bold on Wiener var-f", "NL6-FIR", &WIENER[2..], plain),
        rows_satisfy(m, "FIR1-NL bold on Wiener inv-f", "FIR1-NL", &WIENER[..2], bold),
        rows_satisfy(
            m,
            "FIR1-NL not bold elsewhere",
            "FIR1-NL",
            &[&WIENER[2..], &HAMMERSTEIN[..]].concat(),
            plain,
        ),
        rows_satisfy(m, "FIR6-NL6-FIR bold everywhere", "FIR6-NL6-FIR", &all_rows(), bold),
    ]
}

pub fn table2_checks(m: &MatrixResult) -> Vec<PatternCheck> {
    let t = m.threshold_db;
    let bold = move |v: f64| v <= t;
    let plain = move |v: f64| v > t;
    let mp = "memory polynomial";
    let inv_f = [HAMMERSTEIN[0], HAMMERSTEIN[2]];
    let mut other_mp: Vec<&str> = WIENER.to_vec();
    other_mp.extend([HAMMERSTEIN[1], HAMMERSTEIN[3]]);
    let inv_inv = [WIENER[0], HAMMERSTEIN[0]];
    let other_single: Vec<&str> = all_rows().into_iter().filter(|r| !inv_inv.contains(r)).collect();
    vec![
        rows_satisfy(m, "memory polynomial bold on Hammerstein inv-f", mp, &inv_f, bold),
        rows_satisfy(m, "memory polynomial not bold elsewhere", mp, &other_mp, plain),
        rows_satisfy(m, "single kernel bold on inv/inv", "single kernel", &inv_inv, bold),
        rows_satisfy(m, "single kernel not bold elsewhere", "single kernel", &other_single, plain),
        rows_satisfy(m, "multikernel bold everywhere", "multikernel", &all_rows(), bold),
    ]
}

pub const COMPLEX_MULTIKERNEL_DB: f64 = -55.0;
pub const COMPLEX_SINGLE_FLOOR_DB: f64 = -15.0;
pub const COMPLEX_LINEAR_FLOOR_DB: f64 = -20.0;

pub fn table3_checks(m: &MatrixResult) -> Vec<PatternCheck> {
    let rows = ["h=inv f=inv", "h=var f=inv", "h=inv f=var", "h=var f=var"];
    vec![
        rows_satisfy(m, "multikernel at or below -55 dB", "multikernel", &rows, |v| {
            v <= COMPLEX_MULTIKERNEL_DB
        }),
        rows_satisfy(m, "single kernel fails on var rows", "single kernel", &rows[1..], |v| {
            v >= COMPLEX_SINGLE_FLOOR_DB
        }),
        rows_satisfy(m, "memory polynomial fails", "memory polynomial", &rows, |v| {
            v >= COMPLEX_LINEAR_FLOOR_DB
        }),
        rows_satisfy(m, "linear FIR fails", "linear FIR", &rows, |v| v >= COMPLEX_LINEAR_FLOOR_DB),
    ]
}

pub fn checks_for(m: &MatrixResult) -> Option<Vec<PatternCheck>> {
    match m.name.as_str() {
        "table1" => Some(table1_checks(m)),
        "table2" => Some(table2_checks(m)),
        "table3" => Some(table3_checks(m)),
        _ => None,
    }
}
