//! Pass/fail records for numeric checks, with CSV and text output.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// How `empirical` is compared with `analytic`; the slack is
/// `tolerance · max(1, |analytic|)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Equal,
    /// `empirical ≤ analytic + slack`.
    AtMost,
    /// `empirical ≥ analytic − slack`.
    AtLeast,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Equal => "==",
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub quantity: String,
    pub relation: Relation,
    pub analytic: f64,
    pub empirical: f64,
    /// Monte Carlo samples or optimizer iterations behind `empirical`.
    pub samples: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl BoundReport {
    pub fn new(
        quantity: impl Into<String>,
        relation: Relation,
        analytic: f64,
        empirical: f64,
        samples: usize,
        tolerance: f64,
    ) -> Self {
        let slack = tolerance * analytic.abs().max(1.0);
        let pass = match relation {
            Relation::Equal => (analytic - empirical).abs() <= slack,
            Relation::AtMost => empirical <= analytic + slack,
            Relation::AtLeast => empirical >= analytic - slack,
        };
        BoundReport {
            quantity: quantity.into(),
            relation,
            analytic,
            empirical,
            samples,
            tolerance,
            pass,
        }
    }

    pub fn equal(q: impl Into<String>, analytic: f64, empirical: f64, samples: usize, tol: f64) -> Self {
        Self::new(q, Relation::Equal, analytic, empirical, samples, tol)
    }

    pub fn at_most(q: impl Into<String>, bound: f64, value: f64, samples: usize, tol: f64) -> Self {
        Self::new(q, Relation::AtMost, bound, value, samples, tol)
    }

    pub fn at_least(q: impl Into<String>, bound: f64, value: f64, samples: usize, tol: f64) -> Self {
        Self::new(q, Relation::AtLeast, bound, value, samples, tol)
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: empirical {:.6} {} analytic {:.6} (tol {:.1e}, n = {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.quantity,
            self.empirical,
            self.relation.symbol(),
            self.analytic,
            self.tolerance,
            self.samples
        )
    }
}

pub const CSV_HEADER: [&str; 7] = ["quantity", "relation", "analytic", "empirical", "samples", "tolerance", "pass"];

pub fn reports_to_csv(reports: &[BoundReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.quantity.clone(),
            r.relation.symbol().to_string(),
            format!("{:e}", r.analytic),
            format!("{:e}", r.empirical),
            r.samples.to_string(),
            format!("{:e}", r.tolerance),
            r.pass.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_reports_csv(reports: &[BoundReport], path: &Path) -> Result<()> {
    std::fs::write(path, reports_to_csv(reports)?).map_err(|e| Error::io(path, e))
}

/// One line per report and a closing count.
pub fn summary(reports: &[BoundReport]) -> String {
    let mut s: String = reports.iter().map(|r| format!("{r}\n")).collect();
    let passed = reports.iter().filter(|r| r.pass).count();
    s.push_str(&format!("{passed}/{} checks passed\n", reports.len()));
    s
}
