//! Replicate tables, log-log rate fitting and the cell runner shared by the
//! Monte-Carlo experiments.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, ols, std_error};

/// Fraction of failed cells above which a run cannot pass.
pub const FAILURE_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Bool(bool),
    Float(f64),
}

impl Value {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Value::Int(v) => v as f64,
            Value::Float(v) => v,
            Value::Bool(b) => f64::from(u8::from(b)),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
        }
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

/// Column-named rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::domain(format!("no column named {name}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k].as_f64()).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    /// `ln n`.
    LnN,
    /// `ln(n / ln n)`.
    LnNOverLnN,
}

impl Regressor {
    pub fn apply(self, n: f64) -> f64 {
        match self {
            Regressor::LnN => n.ln(),
            Regressor::LnNOverLnN => (n / n.ln()).ln(),
        }
    }
}

/// One point of the log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub regressor: f64,
    pub ln_mean: f64,
    /// Delta-method standard error of `ln mean`.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub statistic: String,
    pub regressor: Regressor,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: Option<String>,
    pub points: Vec<RatePoint>,
}

/// Least-squares slope of `ln mean(statistic)` against the regressor, grouped by `n`.
pub fn fit_rate(
    table: &Table,
    statistic: &str,
    regressor: Regressor,
    target: f64,
    tolerance: f64,
) -> Result<RateFit> {
    let ns = table.column("n")?;
    let vals = table.column(statistic)?;
    let mut groups: Vec<(usize, Vec<f64>)> = Vec::new();
    for (n, v) in ns.iter().zip(&vals) {
        let n = *n as usize;
        match groups.iter_mut().find(|g| g.0 == n) {
            Some(g) => g.1.push(*v),
            None => groups.push((n, vec![*v])),
        }
    }
    groups.sort_by_key(|g| g.0);
    let mut points = Vec::with_capacity(groups.len());
    for (n, v) in &groups {
        let m = mean(v);
        if !(m > 0.0) {
            return Err(Error::domain(format!("mean {statistic} at n = {n} is not positive ({m})")));
        }
        points.push(RatePoint {
            n: *n,
            regressor: regressor.apply(*n as f64),
            ln_mean: m.ln(),
            stderr: std_error(v) / m,
        });
    }
    if points.len() < 4 {
        return Ok(RateFit {
            statistic: statistic.to_string(),
            regressor,
            slope: f64::NAN,
            intercept: f64::NAN,
            stderr: f64::NAN,
            target,
            tolerance,
            pass: false,
            note: Some("insufficient points".into()),
            points,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.regressor).collect();
    let y: Vec<f64> = points.iter().map(|p| p.ln_mean).collect();
    let line = ols(&x, &y);
    Ok(RateFit {
        statistic: statistic.to_string(),
        regressor,
        slope: line.slope,
        intercept: line.intercept,
        stderr: line.slope_se,
        target,
        tolerance,
        pass: (line.slope - target).abs() <= tolerance,
        note: None,
        points,
    })
}

/// A named scalar check with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub kind: String,
    pub table: Table,
    pub fits: Vec<RateFit>,
    pub checks: Vec<Check>,
    pub failed_cells: usize,
    pub total_cells: usize,
    pub failures: Vec<String>,
    pub pass: bool,
    pub reason: Option<String>,
}

impl ExperimentResult {
    pub fn new(kind: &str, table: Table) -> Self {
        ExperimentResult {
            kind: kind.into(),
            table,
            fits: Vec::new(),
            checks: Vec::new(),
            failed_cells: 0,
            total_cells: 0,
            failures: Vec::new(),
            pass: false,
            reason: None,
        }
    }

    /// Sets `pass` from fits, checks and the failure budget.
    pub fn finalize(&mut self) {
        let mut reasons = Vec::new();
        if self.table.is_empty() {
            reasons.push("no statistics were produced".to_string());
        }
        if self.total_cells > 0 && self.failed_cells as f64 > FAILURE_BUDGET * self.total_cells as f64 {
            reasons.push(format!(
                "{} of {} cells failed (budget 1%)",
                self.failed_cells, self.total_cells
            ));
        }
        for f in &self.fits {
            if !f.pass {
                reasons.push(match &f.note {
                    Some(n) => format!("{}: {n}", f.statistic),
                    None => format!(
                        "{} slope {:.4} outside {:.4} ± {}",
                        f.statistic, f.slope, f.target, f.tolerance
                    ),
                });
            }
        }
        for c in &self.checks {
            if !c.pass {
                reasons.push(format!("{} = {} violates threshold {}", c.name, c.value, c.threshold));
            }
        }
        self.pass = reasons.is_empty();
        self.reason = (!reasons.is_empty()).then(|| reasons.join("; "));
    }
}

/// An `(n, replicate)` Monte-Carlo cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub n: usize,
    pub replicate: usize,
}

pub fn grid_cells(n_grid: &[usize], replicates: usize) -> Vec<Cell> {
    let mut cells: Vec<Cell> = n_grid
        .iter()
        .flat_map(|&n| (0..replicates).map(move |replicate| Cell { n, replicate }))
        .collect();
    cells.sort();
    cells
}

/// Runs cells on `workers` threads; results come back in cell order.
pub fn run_cells<T, F>(cells: &[Cell], workers: usize, f: F) -> Vec<(Cell, Result<T>)>
where
    T: Send,
    F: Fn(Cell) -> Result<T> + Sync,
{
    let work = || -> Vec<(Cell, Result<T>)> { cells.par_iter().map(|&c| (c, f(c))).collect() };
    if workers <= 1 {
        return cells.iter().map(|&c| (c, f(c))).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

/// Collects cell rows into a table, counting failures.
pub fn collect_rows(
    kind: &str,
    columns: &[&str],
    outcomes: Vec<(Cell, Result<Vec<Vec<Value>>>)>,
) -> ExperimentResult {
    let mut table = Table::new(columns);
    let mut result_failures = Vec::new();
    let total = outcomes.len();
    for (cell, out) in outcomes {
        match out {
            Ok(rows) => rows.into_iter().for_each(|r| table.push(r)),
            Err(e) => {
                log::warn!("cell n={} replicate={} failed: {e}", cell.n, cell.replicate);
                result_failures.push(format!("n={} replicate={}: {e}", cell.n, cell.replicate));
            }
        }
    }
    let mut result = ExperimentResult::new(kind, table);
    result.failed_cells = result_failures.len();
    result.total_cells = total;
    result.failures = result_failures;
    result
}
