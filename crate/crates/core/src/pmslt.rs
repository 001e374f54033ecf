//! Proportional multistate lifetable projection of the closed baseline cohort.
//!
//! Each single-year baseline cohort is followed annually from the last data
//! year to the horizon. Every disease runs its own three-state sub-model; a
//! scenario feeds back into the main lifetable only through the difference
//! between its disease death shares and those of BAU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{MorbiditySource, RunConfig};
use crate::dataset::{CountryDataset, DiseaseId, MIN_PREVALENCE_FOR_CFR};
use crate::disease_model::{rate_to_prob, DiseaseShares, TransitionProbs};
use crate::grid::{AgeYearGrid, Period, MAX_AGE, N_AGES};
use crate::trend::RateSurfaces;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("rate surfaces list {surfaces} diseases but the dataset has {dataset}")]
    DiseaseMismatch { surfaces: usize, dataset: usize },
    #[error("rate surfaces for `{disease}` do not cover {first}..={last}")]
    Coverage {
        disease: String,
        first: i32,
        last: i32,
    },
    #[error("baseline population missing at age {age}")]
    MissingPopulation { age: usize },
    #[error("age band {lo}..={hi} is empty or outside 0..={MAX_AGE}")]
    EmptyBand { lo: usize, hi: usize },
    #[error("period {0} is outside the projection")]
    PeriodOutside(Period),
    #[error("projections do not share a calendar or registry")]
    Incompatible,
}

/// State of one baseline cohort at the start of a projection year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortState {
    /// Single-year age in the last data year.
    pub birth_cohort: usize,
    pub year: i32,
    pub alive: f64,
    pub disease_occupancy: Vec<DiseaseShares>,
    pub cumulative_deaths: f64,
}

/// Per-disease outputs on the projection grid. Counts are per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseProjection {
    pub disease: DiseaseId,
    /// Start-of-year diseased share of the living.
    pub prevalence: AgeYearGrid,
    /// Start-of-year diseased head count.
    pub diseased: AgeYearGrid,
    /// People with the disease at any point in the year: start-of-year cases
    /// plus incident cases.
    pub prevalent_cases: AgeYearGrid,
    pub incident: AgeYearGrid,
    pub deaths: AgeYearGrid,
    pub remitted: AgeYearGrid,
    /// Cause-specific mortality rate: prevalence × case-fatality rate.
    pub mortality_rate: AgeYearGrid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    /// Cells where the adjusted all-cause death probability left [0, 1].
    pub clamped_death_probs: usize,
    /// Cells where remission had to be capped at `1 − case fatality`.
    pub remission_caps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub label: String,
    /// Start-of-year population.
    pub population: AgeYearGrid,
    pub person_years: AgeYearGrid,
    pub deaths_all: AgeYearGrid,
    /// Prevalence-weighted disability, Σ_d prevalence_d × weight_d.
    pub morbidity: AgeYearGrid,
    pub diseases: Vec<DiseaseProjection>,
    pub diagnostics: ProjectionDiagnostics,
    /// Per cohort, the state at the start of every year plus the end state.
    pub cohorts: Option<Vec<Vec<CohortState>>>,
}

impl ProjectionResult {
    pub fn first_year(&self) -> i32 {
        self.population.first_year()
    }

    pub fn last_year(&self) -> i32 {
        self.population.last_year()
    }

    pub fn disease(&self, code: &str) -> Option<&DiseaseProjection> {
        self.diseases.iter().find(|d| d.disease.code == code)
    }

    /// Sums counts across strata (e.g. sexes) and population-weights shares
    /// and rates.
    pub fn combine(parts: &[&ProjectionResult], label: &str) -> Result<Self, ProjectionError> {
        let first = *parts.first().ok_or(ProjectionError::Incompatible)?;
        for p in parts {
            if p.population.years() != first.population.years()
                || p.diseases.len() != first.diseases.len()
                || p.diseases
                    .iter()
                    .zip(&first.diseases)
                    .any(|(a, b)| a.disease.code != b.disease.code)
            {
                return Err(ProjectionError::Incompatible);
            }
        }
        let sum = |f: &dyn Fn(&ProjectionResult) -> &AgeYearGrid| {
            parts[1..]
                .iter()
                .fold(f(first).clone(), |acc, p| acc.plus(f(p)))
        };
        let population = sum(&|p| &p.population);
        let weighted = |f: &dyn Fn(&ProjectionResult) -> &AgeYearGrid| {
            let mut out = AgeYearGrid::new(first.first_year(), first.last_year(), 0.0);
            for (age, year, total) in population.cells() {
                let v = if total > 0.0 {
                    parts
                        .iter()
                        .map(|p| p.population.get(age, year) * f(p).get(age, year))
                        .sum::<f64>()
                        / total
                } else {
                    parts.iter().map(|p| f(p).get(age, year)).sum::<f64>() / parts.len() as f64
                };
                out.set(age, year, v);
            }
            out
        };
        let diseases = (0..first.diseases.len())
            .map(|d| DiseaseProjection {
                disease: first.diseases[d].disease.clone(),
                prevalence: weighted(&|p| &p.diseases[d].prevalence),
                diseased: sum(&|p| &p.diseases[d].diseased),
                prevalent_cases: sum(&|p| &p.diseases[d].prevalent_cases),
                incident: sum(&|p| &p.diseases[d].incident),
                deaths: sum(&|p| &p.diseases[d].deaths),
                remitted: sum(&|p| &p.diseases[d].remitted),
                mortality_rate: weighted(&|p| &p.diseases[d].mortality_rate),
            })
            .collect();
        let diagnostics = parts.iter().fold(ProjectionDiagnostics::default(), |a, p| {
            ProjectionDiagnostics {
                clamped_death_probs: a.clamped_death_probs + p.diagnostics.clamped_death_probs,
                remission_caps: a.remission_caps + p.diagnostics.remission_caps,
            }
        });
        Ok(Self {
            label: label.to_string(),
            person_years: sum(&|p| &p.person_years),
            deaths_all: sum(&|p| &p.deaths_all),
            morbidity: weighted(&|p| &p.morbidity),
            population,
            diseases,
            diagnostics,
            cohorts: None,
        })
    }
}

/// Per-age disability weights for the morbidity scalar.
pub fn morbidity_weights(ds: &CountryDataset, source: MorbiditySource) -> Vec<Vec<f64>> {
    ds.diseases
        .iter()
        .map(|d| {
            let registry_weight = d.disease.disability_weight.unwrap_or(0.0);
            match (source, &d.yld_rate) {
                (MorbiditySource::YldRate, Some(yld)) => (0..N_AGES)
                    .map(|age| {
                        let p = d.prevalence.values.get(age, ds.last_year);
                        let y = yld.values.get(age, ds.last_year);
                        if p > MIN_PREVALENCE_FOR_CFR && y.is_finite() {
                            (y / p).min(1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                _ => vec![registry_weight; N_AGES],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectionOptions {
    /// Keep every cohort's yearly state in the result.
    pub trace_cohorts: bool,
}

/// Projects scenarios against a fixed BAU. Holds the BAU disease death
/// shares per cohort-year so each scenario run simulates only its own
/// sub-models.
pub struct Projector<'a> {
    ds: &'a CountryDataset,
    bau: &'a RateSurfaces,
    first_year: i32,
    last_year: i32,
    weights: Vec<Vec<f64>>,
    /// Σ_d C_d·f_d under BAU, indexed `[cohort][year offset]`.
    bau_death_share: Vec<Vec<f64>>,
    options: ProjectionOptions,
}

fn cohort_age(baseline_age: usize, offset: usize) -> usize {
    (baseline_age + offset).min(MAX_AGE)
}

fn check_surfaces(
    ds: &CountryDataset,
    s: &RateSurfaces,
    first: i32,
    last: i32,
) -> Result<(), ProjectionError> {
    if s.diseases.len() != ds.diseases.len() {
        return Err(ProjectionError::DiseaseMismatch {
            surfaces: s.diseases.len(),
            dataset: ds.diseases.len(),
        });
    }
    let covers = |g: &AgeYearGrid| g.contains_year(first) && g.contains_year(last);
    for (d, dd) in s.diseases.iter().zip(&ds.diseases) {
        if d.disease.code != dd.disease.code
            || !covers(&d.incidence.values)
            || !covers(&d.case_fatality.values)
            || !covers(&d.remission.values)
        {
            return Err(ProjectionError::Coverage {
                disease: d.disease.code.clone(),
                first,
                last,
            });
        }
    }
    if !covers(&s.all_cause.values) {
        return Err(ProjectionError::Coverage {
            disease: s.all_cause.disease.clone(),
            first,
            last,
        });
    }
    Ok(())
}

#[inline]
fn probs_at(s: &RateSurfaces, d: usize, age: usize, year: i32) -> (TransitionProbs, bool) {
    let ds = &s.diseases[d];
    TransitionProbs::from_rates(
        ds.incidence.get(age, year),
        ds.case_fatality.get(age, year),
        ds.remission.get(age, year),
    )
}

impl<'a> Projector<'a> {
    pub fn new(
        ds: &'a CountryDataset,
        bau: &'a RateSurfaces,
        config: &RunConfig,
    ) -> Result<Self, ProjectionError> {
        Self::with_options(ds, bau, config, ProjectionOptions::default())
    }

    pub fn with_options(
        ds: &'a CountryDataset,
        bau: &'a RateSurfaces,
        config: &RunConfig,
        options: ProjectionOptions,
    ) -> Result<Self, ProjectionError> {
        let first_year = config.data_last_year;
        let last_year = config.horizon_year;
        check_surfaces(ds, bau, first_year, last_year)?;
        if let Some(age) = ds.baseline_population.iter().position(|n| n.is_nan()) {
            return Err(ProjectionError::MissingPopulation { age });
        }
        let n_years = (last_year - first_year + 1) as usize;
        let n_d = ds.diseases.len();
        let bau_death_share = (0..N_AGES)
            .map(|a0| {
                let mut shares: Vec<DiseaseShares> = ds
                    .diseases
                    .iter()
                    .map(|d| DiseaseShares::from_prevalence(d.prevalence.values.get(a0, first_year)))
                    .collect();
                (0..n_years)
                    .map(|k| {
                        let age = cohort_age(a0, k);
                        let year = first_year + k as i32;
                        let mut total = 0.0;
                        for (d, sh) in shares.iter_mut().enumerate().take(n_d) {
                            let (probs, _) = probs_at(bau, d, age, year);
                            total += sh.death_share(&probs);
                            *sh = sh.step(&probs);
                        }
                        total
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            ds,
            bau,
            first_year,
            last_year,
            weights: morbidity_weights(ds, config.morbidity_source),
            bau_death_share,
            options,
        })
    }

    /// Runs one scenario. Passing the BAU surfaces reproduces the BAU run.
    pub fn run(&self, scenario: &RateSurfaces, label: &str) -> Result<ProjectionResult, ProjectionError> {
        let (y0, y1) = (self.first_year, self.last_year);
        check_surfaces(self.ds, scenario, y0, y1)?;
        let n_years = (y1 - y0 + 1) as usize;
        let n_d = self.ds.diseases.len();
        let grid = || AgeYearGrid::new(y0, y1, 0.0);

        let mut population = grid();
        let mut person_years = grid();
        let mut deaths_all = grid();
        let mut cohort_count = grid();
        let mut share_sum: Vec<AgeYearGrid> = (0..n_d).map(|_| grid()).collect();
        let mut diseased: Vec<AgeYearGrid> = (0..n_d).map(|_| grid()).collect();
        let mut prevalent: Vec<AgeYearGrid> = (0..n_d).map(|_| grid()).collect();
        let mut incident: Vec<AgeYearGrid> = (0..n_d).map(|_| grid()).collect();
        let mut deaths: Vec<AgeYearGrid> = (0..n_d).map(|_| grid()).collect();
        let mut remitted: Vec<AgeYearGrid> = (0..n_d).map(|_| grid()).collect();
        let mut diagnostics = ProjectionDiagnostics::default();
        let mut traces = self.options.trace_cohorts.then(Vec::new);
        let mut probs = vec![
            TransitionProbs {
                incidence: 0.0,
                case_fatality: 0.0,
                remission: 0.0,
            };
            n_d
        ];

        for a0 in 0..N_AGES {
            let baseline = self.ds.baseline_population[a0];
            let mut alive = baseline;
            let mut cumulative = 0.0;
            let mut shares: Vec<DiseaseShares> = self
                .ds
                .diseases
                .iter()
                .map(|d| DiseaseShares::from_prevalence(d.prevalence.values.get(a0, y0)))
                .collect();
            let mut trace = traces.as_ref().map(|_| Vec::with_capacity(n_years + 1));

            for k in 0..n_years {
                let age = cohort_age(a0, k);
                let year = y0 + k as i32;
                if let Some(t) = trace.as_mut() {
                    t.push(CohortState {
                        birth_cohort: a0,
                        year,
                        alive,
                        disease_occupancy: shares.clone(),
                        cumulative_deaths: cumulative,
                    });
                }
                let mut scen_share = 0.0;
                for d in 0..n_d {
                    let (p, capped) = probs_at(scenario, d, age, year);
                    diagnostics.remission_caps += capped as usize;
                    scen_share += shares[d].death_share(&p);
                    probs[d] = p;
                }
                let bau_q = rate_to_prob(self.bau.all_cause.get(age, year));
                let raw = bau_q + (scen_share - self.bau_death_share[a0][k]);
                let q = raw.clamp(0.0, 1.0);
                if q != raw {
                    diagnostics.clamped_death_probs += 1;
                }
                let died = alive * q;

                population.add(age, year, alive);
                cohort_count.add(age, year, 1.0);
                deaths_all.add(age, year, died);
                person_years.add(age, year, alive - 0.5 * died);
                for d in 0..n_d {
                    let sh = shares[d];
                    let p = &probs[d];
                    share_sum[d].add(age, year, sh.diseased);
                    diseased[d].add(age, year, alive * sh.diseased);
                    let inc = alive * sh.susceptible * p.incidence;
                    incident[d].add(age, year, inc);
                    prevalent[d].add(age, year, alive * sh.diseased + inc);
                    deaths[d].add(age, year, alive * sh.diseased * p.case_fatality);
                    remitted[d].add(age, year, alive * sh.diseased * p.remission);
                    shares[d] = sh.step(p);
                }
                alive -= died;
                cumulative += died;
            }
            if let (Some(all), Some(mut t)) = (traces.as_mut(), trace) {
                t.push(CohortState {
                    birth_cohort: a0,
                    year: y1 + 1,
                    alive,
                    disease_occupancy: shares.clone(),
                    cumulative_deaths: cumulative,
                });
                all.push(t);
            }
            debug_assert!(alive + cumulative - baseline <= 1e-9 * baseline.max(1.0));
        }

        let mut morbidity = grid();
        let mut diseases = Vec::with_capacity(n_d);
        let mut d_iter = diseased.into_iter();
        let mut p_iter = prevalent.into_iter();
        let mut i_iter = incident.into_iter();
        let mut x_iter = deaths.into_iter();
        let mut r_iter = remitted.into_iter();
        for (d, sums) in share_sum.into_iter().enumerate() {
            let diseased = d_iter.next().expect("aligned");
            let mut prevalence = grid();
            let mut mortality_rate = grid();
            for (age, year, n) in population.cells() {
                let count = cohort_count.get(age, year);
                let p = if n > 0.0 {
                    diseased.get(age, year) / n
                } else if count > 0.0 {
                    sums.get(age, year) / count
                } else {
                    0.0
                };
                prevalence.set(age, year, p);
                mortality_rate.set(
                    age,
                    year,
                    p * scenario.diseases[d].case_fatality.get(age, year),
                );
                morbidity.add(age, year, p * self.weights[d][age]);
            }
            diseases.push(DiseaseProjection {
                disease: self.ds.diseases[d].disease.clone(),
                prevalence,
                diseased,
                prevalent_cases: p_iter.next().expect("aligned"),
                incident: i_iter.next().expect("aligned"),
                deaths: x_iter.next().expect("aligned"),
                remitted: r_iter.next().expect("aligned"),
                mortality_rate,
            });
        }

        Ok(ProjectionResult {
            label: label.to_string(),
            population,
            person_years,
            deaths_all,
            morbidity,
            diseases,
            diagnostics,
            cohorts: traces,
        })
    }
}

/// One-shot projection of `scenario` against `bau`.
pub fn run_projection(
    ds: &CountryDataset,
    bau: &RateSurfaces,
    scenario: &RateSurfaces,
    config: &RunConfig,
) -> Result<ProjectionResult, ProjectionError> {
    Projector::new(ds, bau, config)?.run(scenario, "projection")
}

/// Σ person-years over ages `lo..=hi` and the years of `period`.
pub fn person_years(
    result: &ProjectionResult,
    lo: usize,
    hi: usize,
    period: Period,
) -> Result<f64, ProjectionError> {
    if lo > hi || hi > MAX_AGE {
        return Err(ProjectionError::EmptyBand { lo, hi });
    }
    if !(result.person_years.contains_year(period.first)
        && result.person_years.contains_year(period.last))
    {
        return Err(ProjectionError::PeriodOutside(period));
    }
    Ok(period
        .years()
        .map(|y| (lo..=hi).map(|a| result.person_years.get(a, y)).sum::<f64>())
        .sum())
}

/// Person-years in one year from exact age `lo` up to exact age `upper`,
/// counting a fraction of the single-year age containing `upper`.
pub fn person_years_to_exact_age(
    result: &ProjectionResult,
    lo: usize,
    upper: f64,
    year: i32,
) -> Result<f64, ProjectionError> {
    let upper = upper.clamp(lo as f64, N_AGES as f64);
    let whole = upper.floor() as usize;
    if !result.person_years.contains_year(year) {
        return Err(ProjectionError::PeriodOutside(Period::new(year, year)));
    }
    let mut total: f64 = (lo..whole.min(N_AGES))
        .map(|a| result.person_years.get(a, year))
        .sum();
    if whole < N_AGES {
        total += (upper - whole as f64) * result.person_years.get(whole, year);
    }
    Ok(total)
}

/// Morbidity by single-year age in one year.
pub fn morbidity_profile(result: &ProjectionResult, year: i32) -> Vec<f64> {
    (0..N_AGES).map(|a| result.morbidity.get(a, year)).collect()
}

/// Linear interpolation of a single-year profile at an exact age.
pub fn interpolate_profile(profile: &[f64], age: f64) -> f64 {
    let age = age.clamp(0.0, (profile.len() - 1) as f64);
    let lo = age.floor() as usize;
    let frac = age - lo as f64;
    if frac == 0.0 {
        return profile[lo];
    }
    profile[lo] + frac * (profile[lo + 1] - profile[lo])
}

/// Morbidity at an exact age, interpolating linearly between single years.
pub fn morbidity_rate(result: &ProjectionResult, age: f64, year: i32) -> f64 {
    interpolate_profile(&morbidity_profile(result, year), age)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_stratum, SynthConfig};
    use crate::trend::build_bau;

    fn fixture(n_diseases: usize) -> (CountryDataset, RunConfig) {
        let run = RunConfig::default();
        let cfg = SynthConfig {
            n_diseases,
            ..SynthConfig::default()
        };
        (generate_stratum(&cfg, "AUS", crate::Sex::Female, &run).dataset, run)
    }

    #[test]
    fn cohorts_close_and_bau_is_reproduced() {
        let (ds, run) = fixture(2);
        let bau = build_bau(&ds, &run).unwrap();
        let p = Projector::with_options(&ds, &bau.surfaces, &run, ProjectionOptions { trace_cohorts: true }).unwrap();
        let r = p.run(&bau.surfaces, "bau").unwrap();
        assert_eq!(r.diagnostics.clamped_death_probs, 0);
        for cohort in r.cohorts.as_ref().unwrap() {
            let base = ds.baseline_population[cohort[0].birth_cohort];
            for s in cohort {
                assert!((s.alive + s.cumulative_deaths - base).abs() <= 1e-9 * base.max(1.0));
            }
        }
        // Under BAU the linkage adds nothing: deaths follow all-cause alone.
        let y = run.data_last_year;
        for age in [0, 40, 80] {
            let q = rate_to_prob(bau.surfaces.all_cause.get(age, y));
            let n = r.population.get(age, y);
            assert!((r.deaths_all.get(age, y) - n * q).abs() <= 1e-9 * n);
        }
    }

    #[test]
    fn exact_age_person_years_are_fractional() {
        let (ds, run) = fixture(1);
        let bau = build_bau(&ds, &run).unwrap();
        let r = run_projection(&ds, &bau.surfaces, &bau.surfaces, &run).unwrap();
        let y = 2025;
        let whole = person_years_to_exact_age(&r, 25, 65.0, y).unwrap();
        assert!((whole - person_years(&r, 25, 64, Period::new(y, y)).unwrap()).abs() < 1e-6);
        let half = person_years_to_exact_age(&r, 25, 65.5, y).unwrap();
        assert!((half - whole - 0.5 * r.person_years.get(65, y)).abs() < 1e-6);
        assert!(person_years(&r, 70, 60, Period::new(y, y)).is_err());
    }

    #[test]
    fn interpolation_is_linear() {
        let p: Vec<f64> = (0..N_AGES).map(|a| (a * a) as f64).collect();
        assert_eq!(interpolate_profile(&p, 3.0), 9.0);
        assert_eq!(interpolate_profile(&p, 3.5), 12.5);
        assert_eq!(interpolate_profile(&p, 500.0), p[MAX_AGE]);
    }

    #[test]
    fn combine_sums_counts() {
        let (ds, run) = fixture(1);
        let bau = build_bau(&ds, &run).unwrap();
        let r = run_projection(&ds, &bau.surfaces, &bau.surfaces, &run).unwrap();
        let c = ProjectionResult::combine(&[&r, &r], "both").unwrap();
        assert_eq!(c.population.get(50, 2030), 2.0 * r.population.get(50, 2030));
        let d = &c.diseases[0];
        assert!((d.prevalence.get(50, 2030) - r.diseases[0].prevalence.get(50, 2030)).abs() < 1e-15);
    }
}
