//! Log-linear annual-percentage-change trends, forecasting, and remission
//! solving by inverting the three-state disease recurrence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::{validate_dataset, AgeGroup, CountryDataset, DiseaseId, Measure};
use crate::disease_model::{
    implied_remission, next_prevalence, prob_to_rate, rate_to_prob, TransitionProbs,
};
use crate::grid::{AgeYearGrid, MAX_AGE, N_AGES};

/// Substituted for zero observations before taking logs.
pub const RATE_FLOOR: f64 = 1e-12;
/// Prevalence below which remission has no effect on the next year and is
/// therefore not identified by the data.
pub const MIN_IDENTIFIED_PREVALENCE: f64 = 1e-12;
/// Largest annual remission probability the solver will return.
pub const MAX_REMISSION_PROB: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrendError {
    #[error("need at least 2 usable observations in distinct years, got {n}")]
    TooFewObservations { n: usize },
    #[error("{floored} of {n} observations are at the floor")]
    MostlyFloored { floored: usize, n: usize },
    #[error(
        "{disease}: prevalence is 1 at age {age}, year {year} but incidence is {incidence}; \
         no susceptible pool to draw from"
    )]
    InconsistentCell {
        disease: String,
        age: usize,
        year: i32,
        incidence: f64,
    },
    #[error("dataset {country}/{sex} is not run-ready: {first}")]
    NotRunReady {
        country: String,
        sex: String,
        first: String,
    },
    #[error("surfaces do not share a calendar")]
    GridMismatch,
}

/// Log-linear trend of one rate series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApcFit {
    /// Continuous log-scale slope per year.
    pub apc: f64,
    pub anchor_year: i32,
    /// Fitted rate at `anchor_year`.
    pub anchor_value: f64,
    pub n_obs: usize,
    pub residual_sd: f64,
}

/// Pooled fit over the single-year ages of one band: a shared slope with a
/// separate intercept per age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFit {
    pub apc: f64,
    pub anchor_year: i32,
    pub anchors: Vec<f64>,
    pub n_obs: usize,
    pub residual_sd: f64,
}

fn pooled_log_fit(series: &[Vec<(f64, f64)>], anchor_year: i32) -> Result<BandFit, TrendError> {
    let n: usize = series.iter().map(Vec::len).sum();
    let floored = series
        .iter()
        .flatten()
        .filter(|(_, y)| *y < RATE_FLOOR)
        .count();
    if n < 2 {
        return Err(TrendError::TooFewObservations { n });
    }
    if 2 * floored > n {
        return Err(TrendError::MostlyFloored { floored, n });
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut means = Vec::with_capacity(series.len());
    for s in series {
        if s.is_empty() {
            means.push(None);
            continue;
        }
        let k = s.len() as f64;
        let xm = s.iter().map(|p| p.0).sum::<f64>() / k;
        let ym = s.iter().map(|p| p.1.max(RATE_FLOOR).ln()).sum::<f64>() / k;
        for &(x, y) in s {
            let dx = x - xm;
            sxx += dx * dx;
            sxy += dx * (y.max(RATE_FLOOR).ln() - ym);
        }
        means.push(Some((xm, ym)));
    }
    if sxx <= 0.0 {
        return Err(TrendError::TooFewObservations { n: 1 });
    }
    let apc = sxy / sxx;
    let mut ssr = 0.0;
    for (s, m) in series.iter().zip(&means) {
        if let Some((xm, ym)) = m {
            for &(x, y) in s {
                let e = y.max(RATE_FLOOR).ln() - (ym + apc * (x - xm));
                ssr += e * e;
            }
        }
    }
    let n_series = means.iter().filter(|m| m.is_some()).count();
    let dof = n.saturating_sub(n_series + 1);
    let residual_sd = if dof > 0 { (ssr / dof as f64).sqrt() } else { 0.0 };
    let anchors = means
        .iter()
        .map(|m| match m {
            Some((xm, ym)) => (ym + apc * (anchor_year as f64 - xm)).exp(),
            None => f64::NAN,
        })
        .collect();
    Ok(BandFit {
        apc,
        anchor_year,
        anchors,
        n_obs: n,
        residual_sd,
    })
}

/// Ordinary least squares of `ln(max(rate, floor))` on calendar year.
/// `NaN` observations are skipped.
pub fn fit_apc(points: &[(i32, f64)], anchor_year: i32) -> Result<ApcFit, TrendError> {
    let obs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| !v.is_nan())
        .map(|&(t, v)| (t as f64, v))
        .collect();
    let fit = pooled_log_fit(&[obs], anchor_year)?;
    Ok(ApcFit {
        apc: fit.apc,
        anchor_year,
        anchor_value: fit.anchors[0],
        n_obs: fit.n_obs,
        residual_sd: fit.residual_sd,
    })
}

/// Rate in `year` implied by a fit; never negative.
pub fn forecast_rate(fit: &ApcFit, year: i32) -> f64 {
    fit.anchor_value * (fit.apc * (year - fit.anchor_year) as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Forecast,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Forecast => "forecast",
        }
    }
}

/// Fit summary for one age band of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub band: AgeGroup,
    pub apc: f64,
    pub n_obs: usize,
    pub residual_sd: f64,
    /// Set when the fit failed and the band fell back to a flat trend.
    pub fallback: Option<String>,
}

/// Observed-then-forecast surface for one measure.
///
/// Years before `anchor_year` hold observed values; from `anchor_year` on
/// the surface is `anchor · exp(apc · (year − anchor_year))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTrajectory {
    pub disease: String,
    pub measure: Measure,
    pub anchor_year: i32,
    pub values: AgeYearGrid,
    /// Per-age APC actually used for forecasting.
    pub apc: Vec<f64>,
    pub bands: Vec<BandSummary>,
}

impl RateTrajectory {
    #[inline]
    pub fn get(&self, age: usize, year: i32) -> f64 {
        self.values.get(age.min(MAX_AGE), year)
    }

    pub fn provenance(&self, year: i32) -> Provenance {
        if year < self.anchor_year {
            Provenance::Observed
        } else {
            Provenance::Forecast
        }
    }
}

/// Fits each band of `observed` and extends it to `horizon`. When
/// `hold_from` is set, forecast values stop changing after that year.
pub fn build_trajectory(
    disease: &str,
    measure: Measure,
    observed: &AgeYearGrid,
    bands: &[AgeGroup],
    anchor_year: i32,
    horizon: i32,
    hold_from: Option<i32>,
) -> RateTrajectory {
    let first = observed.first_year();
    let mut values = AgeYearGrid::missing(first, horizon);
    let mut apc_by_age = vec![0.0; N_AGES];
    let mut summaries = Vec::with_capacity(bands.len());
    for band in bands {
        let series: Vec<Vec<(f64, f64)>> = band
            .ages()
            .map(|age| {
                observed
                    .years()
                    .filter(|&y| y <= anchor_year)
                    .map(|y| (y as f64, observed.get(age, y)))
                    .filter(|(_, v)| !v.is_nan())
                    .collect()
            })
            .collect();
        let (apc, anchors, summary) = match pooled_log_fit(&series, anchor_year) {
            Ok(fit) if fit.apc.is_finite() => {
                let summary = BandSummary {
                    band: *band,
                    apc: fit.apc,
                    n_obs: fit.n_obs,
                    residual_sd: fit.residual_sd,
                    fallback: None,
                };
                let anchors = fit
                    .anchors
                    .iter()
                    .zip(&series)
                    .map(|(a, s)| if a.is_nan() { last_value(s) } else { *a })
                    .collect::<Vec<_>>();
                (fit.apc, anchors, summary)
            }
            other => {
                let reason = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => "non-finite slope".into(),
                };
                let n_obs = series.iter().map(Vec::len).sum();
                let anchors = series.iter().map(|s| last_value(s)).collect();
                (
                    0.0,
                    anchors,
                    BandSummary {
                        band: *band,
                        apc: 0.0,
                        n_obs,
                        residual_sd: 0.0,
                        fallback: Some(reason),
                    },
                )
            }
        };
        for (age, anchor) in band.ages().zip(anchors) {
            apc_by_age[age] = apc;
            for year in first..anchor_year {
                if observed.contains_year(year) {
                    values.set(age, year, observed.get(age, year));
                }
            }
            for year in anchor_year..=horizon {
                let t = hold_from.map_or(year, |h| year.min(h));
                values.set(age, year, anchor * (apc * (t - anchor_year) as f64).exp());
            }
        }
        summaries.push(summary);
    }
    RateTrajectory {
        disease: disease.to_string(),
        measure,
        anchor_year,
        values,
        apc: apc_by_age,
        bands: summaries,
    }
}

fn last_value(series: &[(f64, f64)]) -> f64 {
    series.last().map(|p| p.1).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Solved,
    /// Implied remission was negative; held at 0.
    ClampedLow,
    /// Implied remission exceeded what survivors allow; held at the cap.
    ClampedHigh,
    /// Prevalence too small for remission to matter; filled from the nearest
    /// identified age in the same year.
    Unidentified,
}

/// Solved remission rates for transitions `(age, year) -> (age+1, year+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemissionSolution {
    pub disease: String,
    /// Rates on years `first..last` of the input (the final year has no successor).
    pub rates: AgeYearGrid,
    /// `|target prevalence − modelled prevalence|` one year on.
    pub residual: AgeYearGrid,
    status: Vec<CellStatus>,
}

impl RemissionSolution {
    pub fn status(&self, age: usize, year: i32) -> CellStatus {
        let i = age * self.rates.n_years() + (year - self.rates.first_year()) as usize;
        self.status[i]
    }

    pub fn count(&self, status: CellStatus) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual
            .values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Remission rates that make the three-state recurrence carry each cohort's
/// prevalence from one year to the next.
pub fn solve_remission(
    disease: &str,
    incidence: &AgeYearGrid,
    prevalence: &AgeYearGrid,
    case_fatality: &AgeYearGrid,
) -> Result<RemissionSolution, TrendError> {
    let first = prevalence.first_year();
    let last = prevalence.last_year();
    if last <= first
        || !incidence.contains_year(first)
        || !incidence.contains_year(last - 1)
        || !case_fatality.contains_year(first)
        || !case_fatality.contains_year(last - 1)
    {
        return Err(TrendError::GridMismatch);
    }
    let mut rates = AgeYearGrid::new(first, last - 1, 0.0);
    let mut residual = AgeYearGrid::new(first, last - 1, 0.0);
    let n_years = rates.n_years();
    let mut status = vec![CellStatus::Solved; N_AGES * n_years];
    let idx = |age: usize, year: i32| age * n_years + (year - first) as usize;

    for year in first..last {
        let mut unidentified = Vec::new();
        for age in 0..MAX_AGE {
            let p = prevalence.get(age, year);
            let target = prevalence.get(age + 1, year + 1);
            let i = rate_to_prob(incidence.get(age, year));
            let f = rate_to_prob(case_fatality.get(age, year));
            if p >= 1.0 && i > 0.0 {
                return Err(TrendError::InconsistentCell {
                    disease: disease.to_string(),
                    age,
                    year,
                    incidence: incidence.get(age, year),
                });
            }
            if p < MIN_IDENTIFIED_PREVALENCE {
                unidentified.push(age);
                continue;
            }
            let cap = (1.0 - f).min(MAX_REMISSION_PROB);
            let implied = implied_remission(p, target, i, f);
            let (r, st) = if implied < 0.0 {
                (0.0, CellStatus::ClampedLow)
            } else if implied > cap {
                (cap, CellStatus::ClampedHigh)
            } else {
                (implied, CellStatus::Solved)
            };
            if st != CellStatus::Solved {
                let modelled = next_prevalence(
                    p,
                    &TransitionProbs {
                        incidence: i,
                        case_fatality: f,
                        remission: r,
                    },
                );
                residual.set(age, year, (target - modelled).abs());
            }
            rates.set(age, year, prob_to_rate(r));
            status[idx(age, year)] = st;
        }
        for &age in &unidentified {
            let donor = nearest_identified(age, |a| {
                a < MAX_AGE && !unidentified.contains(&a)
            });
            let rate = donor.map_or(0.0, |d| rates.get(d, year));
            rates.set(age, year, rate);
            status[idx(age, year)] = CellStatus::Unidentified;
            let p = prevalence.get(age, year);
            let modelled = next_prevalence(
                p,
                &TransitionProbs {
                    incidence: rate_to_prob(incidence.get(age, year)),
                    case_fatality: rate_to_prob(case_fatality.get(age, year)),
                    remission: rate_to_prob(rate),
                },
            );
            residual.set(age, year, (prevalence.get(age + 1, year + 1) - modelled).abs());
        }
        // No successor age for the terminal age: carry the age below.
        rates.set(MAX_AGE, year, rates.get(MAX_AGE - 1, year));
        status[idx(MAX_AGE, year)] = CellStatus::Unidentified;
    }
    Ok(RemissionSolution {
        disease: disease.to_string(),
        rates,
        residual,
        status,
    })
}

/// Nearest age satisfying `ok`, preferring the older neighbour on ties.
fn nearest_identified(age: usize, ok: impl Fn(usize) -> bool) -> Option<usize> {
    (1..N_AGES).find_map(|d| {
        let up = age + d;
        if up < N_AGES && ok(up) {
            return Some(up);
        }
        age.checked_sub(d).filter(|&a| ok(a))
    })
}

/// BAU trajectories for one disease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseSurfaces {
    pub disease: DiseaseId,
    pub incidence: RateTrajectory,
    pub case_fatality: RateTrajectory,
    pub remission: RateTrajectory,
}

/// Rate surfaces driving a projection (BAU or an accelerated scenario).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSurfaces {
    pub diseases: Vec<DiseaseSurfaces>,
    pub all_cause: RateTrajectory,
}

/// Output of [`build_bau`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bau {
    pub surfaces: RateSurfaces,
    pub remission: Vec<RemissionSolution>,
}

impl Bau {
    /// Bands that fell back to a flat trend, as `(disease, measure, band, reason)`.
    pub fn fallbacks(&self) -> Vec<(String, Measure, AgeGroup, String)> {
        let mut out = Vec::new();
        let s = &self.surfaces;
        let trajs = s
            .diseases
            .iter()
            .flat_map(|d| [&d.incidence, &d.case_fatality, &d.remission])
            .chain(std::iter::once(&s.all_cause));
        for t in trajs {
            for b in &t.bands {
                if let Some(reason) = &b.fallback {
                    out.push((t.disease.clone(), t.measure, b.band, reason.clone()));
                }
            }
        }
        out
    }
}

/// Solves remission, fits APCs per input age band and forecasts every
/// disease rate to the horizon. All-cause mortality is forecast to the
/// target year and held constant afterwards.
pub fn build_bau(ds: &CountryDataset, config: &RunConfig) -> Result<Bau, TrendError> {
    let report = validate_dataset(ds);
    if let Some(first) = report.blocking().next() {
        return Err(TrendError::NotRunReady {
            country: ds.country.clone(),
            sex: ds.sex.to_string(),
            first: first.to_string(),
        });
    }
    let anchor = config.data_last_year;
    let horizon = config.horizon_year;
    let per_disease: Vec<Result<(DiseaseSurfaces, RemissionSolution), TrendError>> = ds
        .diseases
        .par_iter()
        .map(|d| {
            let code = &d.disease.code;
            let remission = solve_remission(
                code,
                &d.incidence.values,
                &d.prevalence.values,
                &d.case_fatality.values,
            )?;
            let incidence = build_trajectory(
                code,
                Measure::Incidence,
                &d.incidence.values,
                &d.incidence.fit_groups(),
                anchor,
                horizon,
                None,
            );
            let case_fatality = build_trajectory(
                code,
                Measure::CaseFatality,
                &d.case_fatality.values,
                &d.case_fatality.fit_groups(),
                anchor,
                horizon,
                None,
            );
            let rem_traj = build_trajectory(
                code,
                Measure::Remission,
                &remission.rates,
                &d.incidence.fit_groups(),
                anchor,
                horizon,
                None,
            );
            Ok((
                DiseaseSurfaces {
                    disease: d.disease.clone(),
                    incidence,
                    case_fatality,
                    remission: rem_traj,
                },
                remission,
            ))
        })
        .collect();
    let mut diseases = Vec::with_capacity(per_disease.len());
    let mut remission = Vec::with_capacity(per_disease.len());
    for r in per_disease {
        let (d, s) = r?;
        diseases.push(d);
        remission.push(s);
    }
    let all_cause = build_trajectory(
        &ds.all_cause.disease,
        Measure::AllCauseMortality,
        &ds.all_cause.values,
        &ds.all_cause.fit_groups(),
        anchor,
        horizon,
        Some(config.target_year),
    );
    Ok(Bau {
        surfaces: RateSurfaces {
            diseases,
            all_cause,
        },
        remission,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(i32) -> f64) -> Vec<(i32, f64)> {
        (1990..=2021).map(|t| (t, f(t))).collect()
    }

    #[test]
    fn flat_series_has_zero_apc() {
        let fit = fit_apc(&series(|_| 0.01), 2021).unwrap();
        assert!(fit.apc.abs() < 1e-15);
        assert!((fit.anchor_value - 0.01).abs() < 1e-15);
        assert_eq!(fit.n_obs, 32);
    }

    #[test]
    fn exponential_series_recovers_slope() {
        let fit = fit_apc(&series(|t| 0.02 * (-0.015 * (t - 1990) as f64).exp()), 2021).unwrap();
        assert!((fit.apc + 0.015).abs() < 1e-12);
        let expected = 0.02 * (-0.015f64 * 31.0).exp();
        assert!((fit.anchor_value - expected).abs() < 1e-14);
        assert!(fit.residual_sd < 1e-12);
    }

    #[test]
    fn single_year_is_an_error() {
        assert_eq!(
            fit_apc(&[(2021, 0.3)], 2021),
            Err(TrendError::TooFewObservations { n: 1 })
        );
    }

    #[test]
    fn mostly_zero_series_is_flagged() {
        let s = series(|t| if t < 2010 { 0.0 } else { 0.1 });
        assert!(matches!(
            fit_apc(&s, 2021),
            Err(TrendError::MostlyFloored { .. })
        ));
    }

    #[test]
    fn forecast_multipliers() {
        let fit = ApcFit {
            apc: -0.0253,
            anchor_year: 2021,
            anchor_value: 1.0,
            n_obs: 32,
            residual_sd: 0.0,
        };
        assert!((forecast_rate(&fit, 2030) - 0.7964).abs() < 5e-5);
        let flat = ApcFit { apc: 0.0, ..fit };
        assert_eq!(forecast_rate(&flat, 2040), 1.0);
        let cfr = ApcFit { apc: -0.0141, ..fit };
        assert!((forecast_rate(&cfr, 2030) - 0.8808).abs() < 5e-5);
    }

    #[test]
    fn trajectory_holds_after_cutoff() {
        let mut obs = AgeYearGrid::missing(1990, 2021);
        for (age, year, _) in obs.clone().cells() {
            obs.set(age, year, 0.01 * (-0.005 * (year - 1990) as f64).exp());
        }
        let bands = crate::dataset::RateSeries::missing("all", Measure::AllCauseMortality, 1990, 2021)
            .fit_groups();
        let t = build_trajectory("all", Measure::AllCauseMortality, &obs, &bands, 2021, 2040, Some(2030));
        let r2029 = t.get(40, 2029);
        let r2030 = t.get(40, 2030);
        assert!(((r2030 / r2029).ln() + 0.005).abs() < 1e-12);
        for y in 2031..=2040 {
            assert_eq!(t.get(40, y), r2030);
        }
        assert_eq!(t.provenance(2020), Provenance::Observed);
        assert_eq!(t.provenance(2021), Provenance::Forecast);
    }

    #[test]
    fn nearest_prefers_older() {
        assert_eq!(nearest_identified(5, |a| a == 4 || a == 6), Some(6));
        assert_eq!(nearest_identified(0, |a| a == 3), Some(3));
        assert_eq!(nearest_identified(0, |_| false), None);
    }
}
