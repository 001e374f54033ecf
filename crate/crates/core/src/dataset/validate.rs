use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CountryDataset, Measure, RateSeries};
use crate::expenditure::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Informational; the dataset can still run.
    Info,
    /// Coverage gap that blocks a run.
    Gap,
    /// Invariant violation.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticKind {
    MissingSeries { disease: String, measure: Measure },
    MissingCell { disease: String, measure: Measure, age: usize, year: i32 },
    RemissionToBeSolved { disease: String },
    NegativeValue { disease: String, measure: Measure, age: usize, year: i32 },
    ProportionAboveOne { disease: String, measure: Measure, age: usize, year: i32 },
    CfrZeroed { disease: String, age: usize, year: i32 },
    PopulationGap { age: usize },
    NegativePopulation { age: usize },
    CostMissing { disease: String },
    CostFilled { disease: String, phase: Phase, age: usize },
    Ignored { what: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    pub fn new(kind: DiagnosticKind) -> Self {
        use DiagnosticKind::*;
        let severity = match &kind {
            MissingSeries { .. } | MissingCell { .. } | PopulationGap { .. } | CostMissing { .. } => {
                Severity::Gap
            }
            NegativeValue { .. } | ProportionAboveOne { .. } | NegativePopulation { .. } => {
                Severity::Error
            }
            RemissionToBeSolved { .. } | CfrZeroed { .. } | CostFilled { .. } | Ignored { .. } => {
                Severity::Info
            }
        };
        Self { severity, kind }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use DiagnosticKind::*;
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Gap => "gap",
            Severity::Error => "error",
        };
        write!(f, "[{sev}] ")?;
        match &self.kind {
            MissingSeries { disease, measure } => write!(f, "{disease}: no {measure} series"),
            MissingCell {
                disease,
                measure,
                age,
                year,
            } => write!(f, "{disease} {measure}: missing age {age}, year {year}"),
            RemissionToBeSolved { disease } => write!(f, "{disease} remission: to be solved"),
            NegativeValue {
                disease,
                measure,
                age,
                year,
            } => write!(f, "{disease} {measure}: negative at age {age}, year {year}"),
            ProportionAboveOne {
                disease,
                measure,
                age,
                year,
            } => write!(f, "{disease} {measure}: above 1 at age {age}, year {year}"),
            CfrZeroed { disease, age, year } => write!(
                f,
                "{disease}: prevalence below threshold at age {age}, year {year}; case fatality set to 0"
            ),
            PopulationGap { age } => write!(f, "population: no count for age {age}"),
            NegativePopulation { age } => write!(f, "population: negative count at age {age}"),
            CostMissing { disease } => write!(f, "{disease}: no phase costs (treated as 0)"),
            CostFilled {
                disease,
                phase,
                age,
            } => write!(f, "{disease} {phase} cost at age {age} filled from nearest band"),
            Ignored { what } => write!(f, "ignored {what}"),
        }
    }
}

/// Everything [`validate_dataset`] found, in a stable order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when nothing blocks a run (informational entries are allowed).
    pub fn is_run_ready(&self) -> bool {
        self.entries.iter().all(|d| d.severity == Severity::Info)
    }

    pub fn count(&self, pred: impl Fn(&DiagnosticKind) -> bool) -> usize {
        self.entries.iter().filter(|d| pred(&d.kind)).count()
    }

    pub fn blocking(&self) -> impl Iterator<Item = &Diagnostic> {
        self.entries.iter().filter(|d| d.severity != Severity::Info)
    }
}

fn check_series(series: &RateSeries, out: &mut Vec<Diagnostic>) {
    if series.is_absent() {
        out.push(Diagnostic::new(DiagnosticKind::MissingSeries {
            disease: series.disease.clone(),
            measure: series.measure,
        }));
        return;
    }
    for (age, year, v) in series.values.cells() {
        let (disease, measure) = (series.disease.clone(), series.measure);
        if v.is_nan() {
            out.push(Diagnostic::new(DiagnosticKind::MissingCell {
                disease,
                measure,
                age,
                year,
            }));
        } else if v < 0.0 {
            out.push(Diagnostic::new(DiagnosticKind::NegativeValue {
                disease,
                measure,
                age,
                year,
            }));
        } else if measure.is_proportion() && v > 1.0 {
            out.push(Diagnostic::new(DiagnosticKind::ProportionAboveOne {
                disease,
                measure,
                age,
                year,
            }));
        }
    }
}

/// Lists invariant violations and coverage gaps. Never fails.
pub fn validate_dataset(ds: &CountryDataset) -> ValidationReport {
    let mut out = Vec::new();
    for d in &ds.diseases {
        check_series(&d.incidence, &mut out);
        check_series(&d.prevalence, &mut out);
        check_series(&d.cause_mortality, &mut out);
        match &d.remission {
            Some(r) => check_series(r, &mut out),
            None => out.push(Diagnostic::new(DiagnosticKind::RemissionToBeSolved {
                disease: d.disease.code.clone(),
            })),
        }
        if let Some(y) = &d.yld_rate {
            check_series(y, &mut out);
        }
    }
    check_series(&ds.all_cause, &mut out);
    for (age, &n) in ds.baseline_population.iter().enumerate() {
        if n.is_nan() {
            out.push(Diagnostic::new(DiagnosticKind::PopulationGap { age }));
        } else if n < 0.0 {
            out.push(Diagnostic::new(DiagnosticKind::NegativePopulation { age }));
        }
    }
    out.extend(ds.load_notes.iter().cloned());
    ValidationReport { entries: out }
}
