//! Canonical input data model: disease registry, observed rate surfaces,
//! baseline population and expenditure inputs for one country × sex stratum.

mod io;
mod validate;

pub use io::{
    load_country_dataset, load_registry, write_canonical, write_canonical_many, InputPaths,
    InputTables, ALL_CAUSE_CODE,
};
pub use validate::{validate_dataset, Diagnostic, DiagnosticKind, Severity, ValidationReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expenditure::PhaseCostTable;
use crate::grid::{AgeYearGrid, MAX_AGE, N_AGES};

/// Prevalence below which case fatality is not derived (set to 0, flagged).
pub const MIN_PREVALENCE_FOR_CFR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: String,
        row: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("validation failed for {disease} {measure} at age {age}, year {year}: {message}")]
    Cell {
        disease: String,
        measure: Measure,
        age: usize,
        year: i32,
        message: String,
    },
    #[error("validation failed: {0}")]
    Invalid(String),
    #[error("no {what} rows for {country}/{sex}")]
    EmptyStratum {
        what: &'static str,
        country: String,
        sex: Sex,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];

    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Incidence,
    Prevalence,
    CauseMortality,
    CaseFatality,
    Remission,
    AllCauseMortality,
    YldRate,
}

impl Measure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::Incidence => "incidence",
            Measure::Prevalence => "prevalence",
            Measure::CauseMortality => "cause_mortality",
            Measure::CaseFatality => "case_fatality",
            Measure::Remission => "remission",
            Measure::AllCauseMortality => "all_cause_mortality",
            Measure::YldRate => "yld_rate",
        }
    }

    /// Measures that are proportions rather than rates.
    pub fn is_proportion(&self) -> bool {
        matches!(self, Measure::Prevalence | Measure::YldRate)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "incidence" => Measure::Incidence,
            "prevalence" => Measure::Prevalence,
            "cause_mortality" => Measure::CauseMortality,
            "case_fatality" => Measure::CaseFatality,
            "remission" => Measure::Remission,
            "all_cause_mortality" => Measure::AllCauseMortality,
            "yld_rate" => Measure::YldRate,
            other => return Err(format!("unknown measure `{other}`")),
        })
    }
}

/// A modelled disease as listed in the registry file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseId {
    pub code: String,
    pub label: String,
    pub ncd4_member: bool,
    pub disability_weight: Option<f64>,
}

/// Ordered set of modelled diseases with unique codes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Registry {
    diseases: Vec<DiseaseId>,
}

impl Registry {
    pub fn new(diseases: Vec<DiseaseId>) -> Result<Self, DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for d in &diseases {
            if d.code.is_empty() {
                return Err(DatasetError::Invalid("empty disease code".into()));
            }
            if !seen.insert(d.code.as_str()) {
                return Err(DatasetError::Invalid(format!(
                    "duplicate disease code `{}`",
                    d.code
                )));
            }
            if let Some(w) = d.disability_weight {
                if !(0.0..=1.0).contains(&w) {
                    return Err(DatasetError::Invalid(format!(
                        "disability weight for `{}` outside [0, 1]",
                        d.code
                    )));
                }
            }
        }
        Ok(Self { diseases })
    }

    pub fn diseases(&self) -> &[DiseaseId] {
        &self.diseases
    }

    pub fn get(&self, code: &str) -> Option<&DiseaseId> {
        self.diseases.iter().find(|d| d.code == code)
    }

    pub fn position(&self, code: &str) -> Option<usize> {
        self.diseases.iter().position(|d| d.code == code)
    }

    pub fn len(&self) -> usize {
        self.diseases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diseases.is_empty()
    }
}

/// Inclusive single-year age band as supplied in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgeGroup {
    pub lo: usize,
    pub hi: usize,
}

impl AgeGroup {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn ages(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn width(&self) -> usize {
        self.hi - self.lo + 1
    }
}

/// One observed measure on the single-year grid, plus the input age bands it
/// was expanded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub disease: String,
    pub measure: Measure,
    pub values: AgeYearGrid,
    pub age_groups: Vec<AgeGroup>,
}

impl RateSeries {
    pub fn missing(disease: &str, measure: Measure, first_year: i32, last_year: i32) -> Self {
        Self {
            disease: disease.to_string(),
            measure,
            values: AgeYearGrid::missing(first_year, last_year),
            age_groups: Vec::new(),
        }
    }

    pub fn is_absent(&self) -> bool {
        self.age_groups.is_empty()
    }

    /// Age bands partitioning 0..=110 for trend fitting: input bands in order,
    /// uncovered ages as single-year bands, and the top band stretched to 110.
    pub fn fit_groups(&self) -> Vec<AgeGroup> {
        fit_groups_from(&self.age_groups)
    }
}

pub(crate) fn fit_groups_from(input: &[AgeGroup]) -> Vec<AgeGroup> {
    let mut groups: Vec<AgeGroup> = input.to_vec();
    groups.sort();
    let mut out = Vec::new();
    let mut next = 0usize;
    for g in groups {
        while next < g.lo {
            out.push(AgeGroup::new(next, next));
            next += 1;
        }
        out.push(g);
        next = g.hi + 1;
    }
    if let Some(last) = out.last_mut() {
        if next <= MAX_AGE {
            last.hi = MAX_AGE;
        }
    } else {
        out.extend((0..N_AGES).map(|a| AgeGroup::new(a, a)));
    }
    out
}

/// All observed series for one disease. Case fatality is derived at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseRates {
    pub disease: DiseaseId,
    pub incidence: RateSeries,
    pub prevalence: RateSeries,
    pub cause_mortality: RateSeries,
    pub case_fatality: RateSeries,
    pub remission: Option<RateSeries>,
    pub yld_rate: Option<RateSeries>,
}

/// Total expenditure on the registered diseases in one calendar year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub year: i32,
    pub total: f64,
}

/// Everything needed to run one country × sex stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryDataset {
    pub country: String,
    pub sex: Sex,
    pub first_year: i32,
    pub last_year: i32,
    /// Counts by single-year age in the last data year.
    pub baseline_population: Vec<f64>,
    pub diseases: Vec<DiseaseRates>,
    pub all_cause: RateSeries,
    pub expenditure_envelope: Option<Envelope>,
    pub phase_costs: PhaseCostTable,
    /// Non-fatal notes raised while loading (derived-CFR zeroing, fills).
    pub load_notes: Vec<Diagnostic>,
}

impl CountryDataset {
    pub fn disease(&self, code: &str) -> Option<&DiseaseRates> {
        self.diseases.iter().find(|d| d.disease.code == code)
    }

    pub fn registry(&self) -> Registry {
        Registry {
            diseases: self.diseases.iter().map(|d| d.disease.clone()).collect(),
        }
    }

    pub fn total_population(&self) -> f64 {
        self.baseline_population.iter().sum()
    }
}

/// Case fatality as cause mortality over prevalence. Cells with prevalence
/// under [`MIN_PREVALENCE_FOR_CFR`] get 0; their coordinates are returned.
pub fn derive_case_fatality(
    prevalence: &RateSeries,
    cause_mortality: &RateSeries,
) -> (RateSeries, Vec<(usize, i32)>) {
    let mut values = AgeYearGrid::missing(
        prevalence.values.first_year(),
        prevalence.values.last_year(),
    );
    let mut zeroed = Vec::new();
    for (age, year, p) in prevalence.values.cells() {
        if !cause_mortality.values.contains_year(year) {
            continue;
        }
        let m = cause_mortality.values.get(age, year);
        if p.is_nan() || m.is_nan() {
            continue;
        }
        if p < MIN_PREVALENCE_FOR_CFR {
            if m > 0.0 {
                zeroed.push((age, year));
            }
            values.set(age, year, 0.0);
        } else {
            values.set(age, year, m / p);
        }
    }
    let mut groups = prevalence.age_groups.clone();
    groups.extend(cause_mortality.age_groups.iter().copied());
    groups.sort();
    groups.dedup();
    let groups = if groups_partition(&groups) {
        groups
    } else {
        // Mismatched banding between prevalence and mortality: fit per single age.
        (0..N_AGES).map(|a| AgeGroup::new(a, a)).collect()
    };
    (
        RateSeries {
            disease: prevalence.disease.clone(),
            measure: Measure::CaseFatality,
            values,
            age_groups: groups,
        },
        zeroed,
    )
}

fn groups_partition(groups: &[AgeGroup]) -> bool {
    groups.windows(2).all(|w| w[0].hi < w[1].lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_groups_fill_and_stretch() {
        let g = fit_groups_from(&[AgeGroup::new(2, 4), AgeGroup::new(5, 9)]);
        assert_eq!(
            g,
            vec![
                AgeGroup::new(0, 0),
                AgeGroup::new(1, 1),
                AgeGroup::new(2, 4),
                AgeGroup::new(5, 110)
            ]
        );
        assert_eq!(fit_groups_from(&[]).len(), N_AGES);
    }

    #[test]
    fn registry_rejects_duplicates() {
        let d = DiseaseId {
            code: "ihd".into(),
            label: "IHD".into(),
            ncd4_member: true,
            disability_weight: None,
        };
        assert!(Registry::new(vec![d.clone(), d]).is_err());
    }

    #[test]
    fn cfr_is_mortality_over_prevalence() {
        let mut p = RateSeries::missing("x", Measure::Prevalence, 2020, 2021);
        let mut m = RateSeries::missing("x", Measure::CauseMortality, 2020, 2021);
        p.values.set(50, 2020, 0.04);
        m.values.set(50, 2020, 0.002);
        p.values.set(51, 2020, 1e-12);
        m.values.set(51, 2020, 1e-6);
        let (cfr, zeroed) = derive_case_fatality(&p, &m);
        assert!((cfr.values.get(50, 2020) - 0.05).abs() < 1e-15);
        assert_eq!(cfr.values.get(51, 2020), 0.0);
        assert_eq!(zeroed, vec![(51, 2020)]);
        assert!(cfr.values.is_missing(52, 2021));
    }
}
