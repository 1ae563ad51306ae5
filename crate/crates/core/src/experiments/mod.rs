//! Configuration, sweeps, bound-verification suites and CSV reporting.

mod config;
mod suites;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{
    load_json, parse_json, resolve_defectors, run_sweep, AuditConfig, AuditKind, DefectionConfig, DefectorRule,
    LearnerKind, ModeName, RunConfig, RunOutcome, SweepSpec,
};
pub use suites::{verify_suite, Suite, SuiteParams, THM6_LEADER_FLOOR};

use crate::error::{Error, Result};

/// Bound formula behind a check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    Prop1Lower,
    Thm1Upper,
    Thm3TwoSided,
    Thm4Upper,
    Prop5Lower,
    Thm5Lower,
    Lemma1,
    Lemma2,
    Prop2Lower,
    Thm6Welfare,
}

impl BoundId {
    pub const ALL: [BoundId; 10] = [
        BoundId::Prop1Lower,
        BoundId::Thm1Upper,
        BoundId::Thm3TwoSided,
        BoundId::Thm4Upper,
        BoundId::Prop5Lower,
        BoundId::Thm5Lower,
        BoundId::Lemma1,
        BoundId::Lemma2,
        BoundId::Prop2Lower,
        BoundId::Thm6Welfare,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundId::Prop1Lower => "prop1_lower",
            BoundId::Thm1Upper => "thm1_upper",
            BoundId::Thm3TwoSided => "thm3_two_sided",
            BoundId::Thm4Upper => "thm4_upper",
            BoundId::Prop5Lower => "prop5_lower",
            BoundId::Thm5Lower => "thm5_lower",
            BoundId::Lemma1 => "lemma1",
            BoundId::Lemma2 => "lemma2",
            BoundId::Prop2Lower => "prop2_lower",
            BoundId::Thm6Welfare => "thm6_welfare",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BoundId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown bound id `{s}`")))
    }
}

/// Which side of the bound the measurement must fall on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "side", rename_all = "snake_case")]
pub enum Side {
    AtLeast { bound: f64 },
    AtMost { bound: f64 },
    Between { lower: f64, upper: f64 },
}

/// One measured value checked against a bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub bound_id: BoundId,
    pub measured: f64,
    /// Formula value; for two-sided checks the lower end.
    pub bound_value: f64,
    pub side: Side,
    /// Allowance already folded into `side`.
    pub tolerance: f64,
    /// Distance to the nearest violated edge; negative on failure.
    pub slack: f64,
    pub pass: bool,
    pub row: ResultRow,
    /// Largest `|sum of utilities - price|` over the measured run.
    #[serde(default)]
    pub welfare_residual: Option<f64>,
}

impl BoundCheck {
    /// `side` holds the raw formula; `tolerance` widens it.
    pub fn new(
        name: impl Into<String>,
        bound_id: BoundId,
        measured: f64,
        side: Side,
        tolerance: f64,
        mut row: ResultRow,
    ) -> Self {
        let (bound_value, slack) = match side {
            Side::AtLeast { bound } => (bound, measured - (bound - tolerance)),
            Side::AtMost { bound } => (bound, bound + tolerance - measured),
            Side::Between { lower, upper } => (
                lower,
                (measured - (lower - tolerance)).min(upper + tolerance - measured),
            ),
        };
        let pass = slack >= 0.0;
        row.bound_id = Some(bound_id);
        row.bound_value = Some(bound_value);
        row.pass = Some(pass);
        Self {
            name: name.into(),
            bound_id,
            measured,
            bound_value,
            side,
            tolerance,
            slack,
            pass,
            row,
            welfare_residual: None,
        }
    }

    pub fn with_welfare(mut self, residual: f64) -> Self {
        self.welfare_residual = Some(residual);
        self
    }

    pub fn summary(&self) -> String {
        let target = match self.side {
            Side::AtLeast { bound } => format!(">= {bound:.4} - {:.4}", self.tolerance),
            Side::AtMost { bound } => format!("<= {bound:.4} + {:.4}", self.tolerance),
            Side::Between { lower, upper } => {
                format!(
                    "in [{lower:.4} - {tol:.4}, {upper:.4} + {tol:.4}]",
                    tol = self.tolerance
                )
            }
        };
        format!(
            "{} {} [{}]: measured {:.4} {target} (slack {:+.4})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.bound_id,
            self.measured,
            self.slack
        )
    }
}

/// One CSV row; column order is the schema.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ResultRow {
    pub experiment_id: String,
    pub construction: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "M")]
    pub m: usize,
    /// Defector seats joined by `;`.
    pub defectors: String,
    pub learner: String,
    pub mode: String,
    pub sampling_mode: Option<String>,
    pub replicates: usize,
    pub seed: Option<u64>,
    pub market_price: f64,
    pub stderr: f64,
    pub baseline_price: Option<f64>,
    pub defector_utility_mean: Option<f64>,
    pub regret_measured_max: Option<f64>,
    pub regret_bound: Option<f64>,
    pub bound_id: Option<BoundId>,
    pub bound_value: Option<f64>,
    pub pass: Option<bool>,
}

pub const CSV_COLUMNS: [&str; 21] = [
    "experiment_id",
    "construction",
    "N",
    "K",
    "T",
    "M",
    "defectors",
    "learner",
    "mode",
    "sampling_mode",
    "replicates",
    "seed",
    "market_price",
    "stderr",
    "baseline_price",
    "defector_utility_mean",
    "regret_measured_max",
    "regret_bound",
    "bound_id",
    "bound_value",
    "pass",
];

pub fn join_players(players: &[usize]) -> String {
    players.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes `rows` with one header row, even when `rows` is empty.
pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(file, rows).map_err(|e| match e {
        Error::Csv(c) if c.is_io_error() => match c.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        other => other,
    })
}

pub fn write_rows<W: std::io::Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}
