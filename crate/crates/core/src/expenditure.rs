//! Phase-disaggregated health expenditure, envelope scaling, savings against
//! BAU and the per-person-year rate panels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::grid::{AgeYearGrid, Period, MAX_AGE, N_AGES};
use crate::pmslt::{self, morbidity_profile, ProjectionError, ProjectionResult};

/// Lower bound of the working-age denominators.
pub const DENOMINATOR_MIN_AGE: usize = 25;
pub const DENOMINATOR_MAX_AGE: usize = 64;
/// Reference age for the equivalent-morbidity denominator.
pub const REFERENCE_AGE: usize = 65;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpenditureError {
    #[error("cost table lists {costs} diseases but the projection has {projection}")]
    RegistryMismatch { costs: usize, projection: usize },
    #[error("cost table entry {index} is `{found}`, projection has `{expected}`")]
    DiseaseOrder {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("expenditure envelope must be positive, got {0}")]
    NonPositiveEnvelope(f64),
    #[error("modelled expenditure in {0} is zero; cannot scale to envelope")]
    ZeroModelled(i32),
    #[error("zero person-years in the {panel} denominator for {scenario}, {period}")]
    ZeroPersonYears {
        panel: Panel,
        scenario: String,
        period: Period,
    },
    #[error("strata disagree on scenario count")]
    StrataMismatch,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    FirstYear,
    Prevalent,
    LastYear,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::FirstYear, Phase::Prevalent, Phase::LastYear];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::FirstYear => "first_year",
            Phase::Prevalent => "prevalent",
            Phase::LastYear => "last_year",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "first_year" => Ok(Phase::FirstYear),
            "prevalent" => Ok(Phase::Prevalent),
            "last_year" => Ok(Phase::LastYear),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// Cost per case-year by single-year age, indexed by [`Phase::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseCosts {
    pub disease: String,
    pub by_age: Vec<[f64; 3]>,
}

impl DiseaseCosts {
    pub fn uniform(disease: &str, first_year: f64, prevalent: f64, last_year: f64) -> Self {
        Self {
            disease: disease.to_string(),
            by_age: vec![[first_year, prevalent, last_year]; N_AGES],
        }
    }

    pub fn cost(&self, age: usize, phase: Phase) -> f64 {
        self.by_age[age.min(MAX_AGE)][phase.index()]
    }
}

/// Per-case costs for every registered disease, in registry order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCostTable {
    pub diseases: Vec<DiseaseCosts>,
}

impl PhaseCostTable {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            diseases: self
                .diseases
                .iter()
                .map(|d| DiseaseCosts {
                    disease: d.disease.clone(),
                    by_age: d.by_age.iter().map(|c| c.map(|v| v * k)).collect(),
                })
                .collect(),
        }
    }

    fn check(&self, result: &ProjectionResult) -> Result<(), ExpenditureError> {
        if self.diseases.len() != result.diseases.len() {
            return Err(ExpenditureError::RegistryMismatch {
                costs: self.diseases.len(),
                projection: result.diseases.len(),
            });
        }
        for (index, (c, d)) in self.diseases.iter().zip(&result.diseases).enumerate() {
            if c.disease != d.disease.code {
                return Err(ExpenditureError::DiseaseOrder {
                    index,
                    expected: d.disease.code.clone(),
                    found: c.disease.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Cost of one (disease, age, year) cell. Incident cases and disease deaths
/// leave the prevalent pool first; a negative remainder is floored at zero
/// and reported through the second value.
pub fn cell_expenditure(incident: f64, deaths: f64, prevalent: f64, costs: &[f64; 3]) -> (f64, bool) {
    let residual = prevalent - incident - deaths;
    let floored = residual < 0.0;
    let prevalent_only = residual.max(0.0);
    (
        incident * costs[Phase::FirstYear.index()]
            + deaths * costs[Phase::LastYear.index()]
            + prevalent_only * costs[Phase::Prevalent.index()],
        floored,
    )
}

/// Which ages and years count, and how later years are discounted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpenditureScope {
    pub min_age: usize,
    pub discount_rate: f64,
    /// Year whose expenditure is undiscounted.
    pub base_year: i32,
}

impl ExpenditureScope {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            min_age: config.expenditure_min_age,
            discount_rate: config.discount_rate,
            base_year: config.data_last_year,
        }
    }

    /// All ages, no discounting.
    pub fn all_ages(base_year: i32) -> Self {
        Self {
            min_age: 0,
            discount_rate: 0.0,
            base_year,
        }
    }

    pub fn discount(&self, year: i32) -> f64 {
        if self.discount_rate == 0.0 {
            1.0
        } else {
            (1.0 + self.discount_rate).powi(-(year - self.base_year))
        }
    }
}

/// Annual expenditure by disease, age and year.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpenditureGrid {
    pub by_disease: Vec<AgeYearGrid>,
    /// Cells where the prevalent-phase count was floored at zero.
    pub floored_cells: usize,
}

impl ExpenditureGrid {
    /// Σ over diseases (in registry order), ages ≥ `scope.min_age` and
    /// `period`, discounted.
    pub fn total(&self, period: Period, scope: &ExpenditureScope) -> f64 {
        self.by_disease
            .iter()
            .map(|g| disease_total(g, period, scope))
            .sum()
    }

    pub fn disease_totals(&self, period: Period, scope: &ExpenditureScope) -> Vec<f64> {
        self.by_disease
            .iter()
            .map(|g| disease_total(g, period, scope))
            .collect()
    }
}

fn disease_total(g: &AgeYearGrid, period: Period, scope: &ExpenditureScope) -> f64 {
    period
        .years()
        .map(|y| scope.discount(y) * (scope.min_age..N_AGES).map(|a| g.get(a, y)).sum::<f64>())
        .sum()
}

pub fn expenditure_grid(
    result: &ProjectionResult,
    costs: &PhaseCostTable,
) -> Result<ExpenditureGrid, ExpenditureError> {
    costs.check(result)?;
    let mut floored_cells = 0;
    let by_disease = result
        .diseases
        .iter()
        .zip(&costs.diseases)
        .map(|(d, c)| {
            let mut g = AgeYearGrid::new(result.first_year(), result.last_year(), 0.0);
            for (age, year, prevalent) in d.prevalent_cases.cells() {
                let (v, floored) = cell_expenditure(
                    d.incident.get(age, year),
                    d.deaths.get(age, year),
                    prevalent,
                    &c.by_age[age],
                );
                floored_cells += floored as usize;
                g.set(age, year, v);
            }
            g
        })
        .collect();
    Ok(ExpenditureGrid {
        by_disease,
        floored_cells,
    })
}

fn check_period(result: &ProjectionResult, period: Period) -> Result<(), ExpenditureError> {
    if result.population.contains_year(period.first) && result.population.contains_year(period.last) {
        Ok(())
    } else {
        Err(ProjectionError::PeriodOutside(period).into())
    }
}

/// Total expenditure over `period` within `scope`.
pub fn project_expenditure(
    result: &ProjectionResult,
    costs: &PhaseCostTable,
    period: Period,
    scope: &ExpenditureScope,
) -> Result<f64, ExpenditureError> {
    check_period(result, period)?;
    Ok(expenditure_grid(result, costs)?.total(period, scope))
}

/// `k = envelope / Σ modelled all-age BAU expenditure` in `year`, summed over
/// the given strata.
pub fn envelope_factor(
    strata: &[(&ProjectionResult, &PhaseCostTable)],
    envelope: f64,
    year: i32,
) -> Result<f64, ExpenditureError> {
    if !(envelope > 0.0) {
        return Err(ExpenditureError::NonPositiveEnvelope(envelope));
    }
    let mut modelled = 0.0;
    for (result, costs) in strata {
        let period = Period::new(year, year);
        modelled += project_expenditure(result, costs, period, &ExpenditureScope::all_ages(year))?;
    }
    if !(modelled > 0.0) {
        return Err(ExpenditureError::ZeroModelled(year));
    }
    Ok(envelope / modelled)
}

pub fn scale_to_envelope(
    costs: &PhaseCostTable,
    baseline: &ProjectionResult,
    envelope: f64,
    year: i32,
) -> Result<PhaseCostTable, ExpenditureError> {
    let k = envelope_factor(&[(baseline, costs)], envelope, year)?;
    Ok(costs.scaled(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    /// Raw totals.
    A,
    /// Per all-age person-year.
    B,
    /// Per person-year aged 25–64.
    C,
    /// Per person-year from 25 to the equivalent-morbidity age.
    D,
}

impl Panel {
    pub const ALL: [Panel; 4] = [Panel::A, Panel::B, Panel::C, Panel::D];

    pub fn as_str(&self) -> &'static str {
        match self {
            Panel::A => "a",
            Panel::B => "b",
            Panel::C => "c",
            Panel::D => "d",
        }
    }
}

impl fmt::Display for Panel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalentAgeFlag {
    /// Scenario morbidity is locally flat at the crossing.
    Plateau,
    /// The profile moves against the scan direction before the crossing.
    NonMonotone,
    /// No crossing inside [25, 110]; the bound was returned.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalentAge {
    pub age: f64,
    pub flag: Option<EquivalentAgeFlag>,
}

/// Exact age at which `scenario` reaches the morbidity `bau` has at 65.
/// Scans up from 65 when the scenario is lower there, down otherwise, and
/// interpolates linearly inside the crossing interval.
pub fn equivalent_age(bau: &[f64], scenario: &[f64]) -> EquivalentAge {
    let target = bau[REFERENCE_AGE];
    let s = scenario;
    let r = REFERENCE_AGE;
    if s[r] == target {
        let flat = s.get(r + 1).is_some_and(|&v| v == s[r]) || s[r - 1] == s[r];
        return EquivalentAge {
            age: r as f64,
            flag: flat.then_some(EquivalentAgeFlag::Plateau),
        };
    }
    let mut non_monotone = false;
    let flag = |non_monotone: bool| non_monotone.then_some(EquivalentAgeFlag::NonMonotone);
    if s[r] < target {
        for a in r..MAX_AGE {
            if s[a + 1] < s[a] {
                non_monotone = true;
            }
            if s[a + 1] == target {
                return EquivalentAge {
                    age: (a + 1) as f64,
                    flag: flag(non_monotone),
                };
            }
            if s[a + 1] > target {
                let age = a as f64 + (target - s[a]) / (s[a + 1] - s[a]);
                return EquivalentAge {
                    age,
                    flag: flag(non_monotone),
                };
            }
        }
        EquivalentAge {
            age: MAX_AGE as f64,
            flag: Some(EquivalentAgeFlag::Clamped),
        }
    } else {
        for a in (DENOMINATOR_MIN_AGE + 1..=r).rev() {
            if s[a - 1] > s[a] {
                non_monotone = true;
            }
            if s[a - 1] == target {
                return EquivalentAge {
                    age: (a - 1) as f64,
                    flag: flag(non_monotone),
                };
            }
            if s[a - 1] < target {
                let age = (a - 1) as f64 + (target - s[a - 1]) / (s[a] - s[a - 1]);
                return EquivalentAge {
                    age,
                    flag: flag(non_monotone),
                };
            }
        }
        EquivalentAge {
            age: DENOMINATOR_MIN_AGE as f64,
            flag: Some(EquivalentAgeFlag::Clamped),
        }
    }
}

pub fn equivalent_age_65(bau: &ProjectionResult, scenario: &ProjectionResult, year: i32) -> EquivalentAge {
    equivalent_age(&morbidity_profile(bau, year), &morbidity_profile(scenario, year))
}

/// Person-year denominator of one panel over a period. Panel A has none.
pub fn panel_denominator(
    result: &ProjectionResult,
    panel: Panel,
    period: Period,
    a_star: &dyn Fn(i32) -> f64,
) -> Result<Option<f64>, ExpenditureError> {
    Ok(match panel {
        Panel::A => None,
        Panel::B => Some(pmslt::person_years(result, 0, MAX_AGE, period)?),
        Panel::C => Some(pmslt::person_years(
            result,
            DENOMINATOR_MIN_AGE,
            DENOMINATOR_MAX_AGE,
            period,
        )?),
        Panel::D => {
            let mut total = 0.0;
            for y in period.years() {
                total += pmslt::person_years_to_exact_age(result, DENOMINATOR_MIN_AGE, a_star(y), y)?;
            }
            Some(total)
        }
    })
}

/// One projection stratum (e.g. one sex) entering a report.
pub struct ReportStratum<'a> {
    pub costs: &'a PhaseCostTable,
    pub bau: &'a ProjectionResult,
    /// Scenario projections; labels and order must match across strata.
    pub scenarios: Vec<&'a ProjectionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTotal {
    pub scenario: String,
    pub period: Period,
    pub total: f64,
    /// BAU − scenario; negative when the scenario costs more.
    pub savings: f64,
    /// `savings / BAU total`.
    pub savings_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelValue {
    pub scenario: String,
    pub period: Period,
    pub panel: Panel,
    /// Total (panel A) or total per person-year.
    pub value: f64,
    /// Percentage saving in this metric relative to BAU.
    pub savings_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalentAgeRow {
    pub scenario: String,
    pub year: i32,
    pub a_star: f64,
    pub flag: Option<EquivalentAgeFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpenditureReport {
    /// `(scenario, year, total)` for every projection year.
    pub annual: Vec<(String, i32, f64)>,
    pub periods: Vec<PeriodTotal>,
    pub panels: Vec<PanelValue>,
    pub equivalent_age: Vec<EquivalentAgeRow>,
    pub floored_cells: usize,
}

impl ExpenditureReport {
    pub fn period_total(&self, scenario: &str, period: Period) -> Option<&PeriodTotal> {
        self.periods
            .iter()
            .find(|p| p.scenario == scenario && p.period == period)
    }

    pub fn panel(&self, scenario: &str, period: Period, panel: Panel) -> Option<&PanelValue> {
        self.panels
            .iter()
            .find(|p| p.scenario == scenario && p.period == period && p.panel == panel)
    }
}

fn pct(bau: f64, scenario: f64) -> f64 {
    if bau == 0.0 {
        0.0
    } else {
        (bau - scenario) / bau
    }
}

/// BAU first, then the scenarios.
fn runs<'a>(s: &ReportStratum<'a>) -> Vec<&'a ProjectionResult> {
    std::iter::once(s.bau).chain(s.scenarios.iter().copied()).collect()
}

/// Savings of every scenario against BAU over the reporting periods, with
/// the four panels. Strata are summed; person-years and morbidity come from
/// their combination. BAU appears as the first scenario with zero savings.
pub fn savings_report(
    strata: &[ReportStratum<'_>],
    config: &RunConfig,
) -> Result<ExpenditureReport, ExpenditureError> {
    let first = strata.first().ok_or(ExpenditureError::StrataMismatch)?;
    let n_s = first.scenarios.len();
    if strata.iter().any(|s| s.scenarios.len() != n_s) {
        return Err(ExpenditureError::StrataMismatch);
    }
    let scope = ExpenditureScope::from_config(config);
    for p in &config.reporting_periods {
        check_period(first.bau, *p)?;
    }

    let labels: Vec<String> = runs(first).iter().map(|r| r.label.clone()).collect();
    let mut grids: Vec<Vec<ExpenditureGrid>> = vec![Vec::new(); n_s + 1];
    let mut floored_cells = 0;
    for s in strata {
        for (i, r) in runs(s).into_iter().enumerate() {
            let g = expenditure_grid(r, s.costs)?;
            floored_cells += g.floored_cells;
            grids[i].push(g);
        }
    }
    let total = |i: usize, period: Period| grids[i].iter().map(|g| g.total(period, &scope)).sum::<f64>();

    let combined: Vec<ProjectionResult>;
    let merged: Vec<&ProjectionResult> = if strata.len() == 1 {
        runs(first)
    } else {
        combined = (0..=n_s)
            .map(|i| {
                let parts: Vec<&ProjectionResult> = strata.iter().map(|s| runs(s)[i]).collect();
                ProjectionResult::combine(&parts, &labels[i])
            })
            .collect::<Result<_, _>>()?;
        combined.iter().collect()
    };

    let years: Vec<i32> = (first.bau.first_year()..=first.bau.last_year()).collect();
    let mut annual = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        for &y in &years {
            annual.push((label.clone(), y, total(i, Period::new(y, y))));
        }
    }

    let mut equivalent_age = Vec::new();
    let mut a_star: Vec<Vec<f64>> = Vec::with_capacity(n_s + 1);
    for (i, run) in merged.iter().enumerate() {
        let mut row = Vec::with_capacity(years.len());
        for &y in &years {
            let eq = if i == 0 {
                EquivalentAge {
                    age: REFERENCE_AGE as f64,
                    flag: None,
                }
            } else {
                equivalent_age_65(merged[0], run, y)
            };
            row.push(eq.age);
            equivalent_age.push(EquivalentAgeRow {
                scenario: labels[i].clone(),
                year: y,
                a_star: eq.age,
                flag: eq.flag,
            });
        }
        a_star.push(row);
    }

    let mut periods = Vec::new();
    let mut panels = Vec::new();
    for &period in &config.reporting_periods {
        let bau_total = total(0, period);
        let mut bau_rates = [0.0; 4];
        for (i, run) in merged.iter().enumerate() {
            let t = total(i, period);
            periods.push(PeriodTotal {
                scenario: labels[i].clone(),
                period,
                total: t,
                savings: bau_total - t,
                savings_pct: pct(bau_total, t),
            });
            let first_year = years[0];
            let stars = &a_star[i];
            let lookup = |y: i32| stars[(y - first_year) as usize];
            for panel in Panel::ALL {
                let value = match panel_denominator(run, panel, period, &lookup)? {
                    None => t,
                    Some(d) if d > 0.0 => t / d,
                    Some(_) => {
                        return Err(ExpenditureError::ZeroPersonYears {
                            panel,
                            scenario: labels[i].clone(),
                            period,
                        })
                    }
                };
                let k = panel as usize;
                if i == 0 {
                    bau_rates[k] = value;
                }
                panels.push(PanelValue {
                    scenario: labels[i].clone(),
                    period,
                    panel,
                    value,
                    savings_pct: pct(bau_rates[k], value),
                });
            }
        }
    }

    Ok(ExpenditureReport {
        annual,
        periods,
        panels,
        equivalent_age,
        floored_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_round_trip() {
        for p in Phase::ALL {
            assert_eq!(p.as_str().parse::<Phase>().unwrap(), p);
        }
        assert!("final".parse::<Phase>().is_err());
    }

    #[test]
    fn cell_cost_hand_example() {
        // 100 incident, 20 dying, 500 prevalent; costs first 10, prevalent 2, last 50.
        let (v, floored) = cell_expenditure(100.0, 20.0, 500.0, &[10.0, 2.0, 50.0]);
        assert_eq!(v, 2760.0);
        assert!(!floored);
    }

    #[test]
    fn cell_cost_floors_negative_residual() {
        let (v, floored) = cell_expenditure(10.0, 5.0, 12.0, &[1.0, 100.0, 2.0]);
        assert_eq!(v, 20.0);
        assert!(floored);
    }

    #[test]
    fn zero_costs_cost_nothing() {
        assert_eq!(cell_expenditure(3.0, 4.0, 50.0, &[0.0; 3]).0, 0.0);
    }

    #[test]
    fn scaled_table_is_homogeneous() {
        let t = PhaseCostTable {
            diseases: vec![DiseaseCosts::uniform("x", 1.0, 2.0, 3.0)],
        };
        let s = t.scaled(2.0);
        assert_eq!(s.diseases[0].cost(40, Phase::LastYear), 6.0);
        assert_eq!(s.diseases[0].cost(200, Phase::FirstYear), 2.0);
    }

    fn rising(n: usize) -> Vec<f64> {
        (0..n).map(|a| 0.001 * a as f64 + 0.00002 * (a * a) as f64).collect()
    }

    #[test]
    fn equivalent_age_identity_and_shift() {
        let bau = rising(N_AGES);
        assert_eq!(equivalent_age(&bau, &bau).age, 65.0);
        let shifted: Vec<f64> = (0..N_AGES).map(|a| bau[a.saturating_sub(1)]).collect();
        let eq = equivalent_age(&bau, &shifted);
        assert_eq!(eq.age, 66.0);
        assert_eq!(eq.flag, None);
    }

    #[test]
    fn equivalent_age_scans_down_when_scenario_is_higher() {
        let bau = rising(N_AGES);
        let worse: Vec<f64> = (0..N_AGES).map(|a| bau[(a + 2).min(MAX_AGE)]).collect();
        assert_eq!(equivalent_age(&bau, &worse).age, 63.0);
    }

    #[test]
    fn equivalent_age_interpolates() {
        let bau: Vec<f64> = (0..N_AGES).map(|a| a as f64).collect();
        let scen: Vec<f64> = (0..N_AGES).map(|a| a as f64 - 0.25).collect();
        assert!((equivalent_age(&bau, &scen).age - 65.25).abs() < 1e-12);
    }

    #[test]
    fn flat_profile_is_flagged() {
        let flat = vec![0.2; N_AGES];
        let eq = equivalent_age(&flat, &flat);
        assert_eq!(eq.age, 65.0);
        assert_eq!(eq.flag, Some(EquivalentAgeFlag::Plateau));
    }

    #[test]
    fn no_crossing_clamps() {
        let bau = vec![1.0; N_AGES];
        let low = vec![0.5; N_AGES];
        let eq = equivalent_age(&bau, &low);
        assert_eq!(eq.age, 110.0);
        assert_eq!(eq.flag, Some(EquivalentAgeFlag::Clamped));
        let high = vec![2.0; N_AGES];
        assert_eq!(equivalent_age(&bau, &high).age, 25.0);
    }

    #[test]
    fn dip_before_crossing_is_flagged() {
        let bau: Vec<f64> = (0..N_AGES).map(|a| a as f64).collect();
        let mut scen: Vec<f64> = (0..N_AGES).map(|a| a as f64 - 3.0).collect();
        scen[66] = 60.0;
        let eq = equivalent_age(&bau, &scen);
        assert_eq!(eq.age, 68.0);
        assert_eq!(eq.flag, Some(EquivalentAgeFlag::NonMonotone));
    }

    #[test]
    fn discount_plumbing() {
        let s = ExpenditureScope {
            min_age: 0,
            discount_rate: 0.03,
            base_year: 2021,
        };
        assert_eq!(s.discount(2021), 1.0);
        assert!((s.discount(2023) - 1.0 / 1.0609).abs() < 1e-15);
        assert_eq!(ExpenditureScope::all_ages(2021).discount(2040), 1.0);
    }
}
