//! Period probability of dying from the NCD4 causes between exact ages 30 and 70.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::CountryDataset;
use crate::grid::N_AGES;
use crate::pmslt::ProjectionResult;

/// Single-year ages whose mortality enters the indicator.
pub const INDICATOR_AGES: RangeInclusive<usize> = 30..=69;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndicatorError {
    #[error("no mortality for age {age} in {year}")]
    MissingAge { age: usize, year: i32 },
    #[error("year {0} is not covered")]
    MissingYear(i32),
    #[error("baseline indicator is zero; reduction undefined")]
    ZeroBaseline,
}

/// `1 − exp(−Σ M(a))` over ages 30–69 of a single-year mortality profile.
pub fn q40_30(profile: &[f64]) -> Result<f64, IndicatorError> {
    let mut total = 0.0;
    for age in INDICATOR_AGES {
        let m = *profile
            .get(age)
            .ok_or(IndicatorError::MissingAge { age, year: 0 })?;
        if m.is_nan() {
            return Err(IndicatorError::MissingAge { age, year: 0 });
        }
        total += m;
    }
    Ok((-(-total).exp_m1()).clamp(0.0, 1.0))
}

/// Summed NCD4 cause-specific mortality by age from a projection.
pub fn projected_profile(result: &ProjectionResult, year: i32) -> Result<Vec<f64>, IndicatorError> {
    if !result.population.contains_year(year) {
        return Err(IndicatorError::MissingYear(year));
    }
    let mut m = vec![0.0; N_AGES];
    for d in result.diseases.iter().filter(|d| d.disease.ncd4_member) {
        for (age, slot) in m.iter_mut().enumerate() {
            *slot += d.mortality_rate.get(age, year);
        }
    }
    Ok(m)
}

/// Summed NCD4 prevalence × case fatality by age from observed data.
pub fn observed_profile(ds: &CountryDataset, year: i32) -> Result<Vec<f64>, IndicatorError> {
    if year < ds.first_year || year > ds.last_year {
        return Err(IndicatorError::MissingYear(year));
    }
    let mut m = vec![0.0; N_AGES];
    for d in ds.diseases.iter().filter(|d| d.disease.ncd4_member) {
        for age in INDICATOR_AGES {
            let v = d.prevalence.values.get(age, year) * d.case_fatality.values.get(age, year);
            if v.is_nan() {
                return Err(IndicatorError::MissingAge { age, year });
            }
            m[age] += v;
        }
    }
    Ok(m)
}

pub fn compute_40q30(result: &ProjectionResult, year: i32) -> Result<f64, IndicatorError> {
    q40_30(&projected_profile(result, year)?).map_err(|e| with_year(e, year))
}

fn with_year(e: IndicatorError, year: i32) -> IndicatorError {
    match e {
        IndicatorError::MissingAge { age, .. } => IndicatorError::MissingAge { age, year },
        other => other,
    }
}

/// Indicator by calendar year with the target-year reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub values: BTreeMap<i32, f64>,
    pub baseline_year: i32,
    pub target_year: i32,
    pub baseline_value: f64,
    /// `1 − q(target)/q(baseline)`.
    pub reduction: f64,
}

impl IndicatorSeries {
    pub fn from_values(values: BTreeMap<i32, f64>, config: &RunConfig) -> Result<Self, IndicatorError> {
        let b = config.indicator_baseline_year;
        let t = config.target_year;
        let baseline_value = *values.get(&b).ok_or(IndicatorError::MissingYear(b))?;
        let target_value = *values.get(&t).ok_or(IndicatorError::MissingYear(t))?;
        if baseline_value <= 0.0 {
            return Err(IndicatorError::ZeroBaseline);
        }
        Ok(Self {
            reduction: 1.0 - target_value / baseline_value,
            values,
            baseline_year: b,
            target_year: t,
            baseline_value,
        })
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.values.get(&year).copied()
    }
}

/// Population-weighted average of per-stratum mortality profiles.
pub fn weighted_profile(parts: &[(Vec<f64>, &[f64])]) -> Vec<f64> {
    (0..N_AGES)
        .map(|age| {
            let w: f64 = parts.iter().map(|(_, pop)| pop[age]).sum();
            if w > 0.0 {
                parts.iter().map(|(m, pop)| m[age] * pop[age]).sum::<f64>() / w
            } else {
                parts.iter().map(|(m, _)| m[age]).sum::<f64>() / parts.len() as f64
            }
        })
        .collect()
}

/// Observed years come from the data (weighted by baseline population when
/// several strata are combined); projection years from `result`.
pub fn indicator_series(
    observed: &[&CountryDataset],
    result: &ProjectionResult,
    config: &RunConfig,
) -> Result<IndicatorSeries, IndicatorError> {
    let mut values = BTreeMap::new();
    for year in config.data_first_year..result.first_year() {
        let parts = observed
            .iter()
            .map(|ds| Ok((observed_profile(ds, year)?, ds.baseline_population.as_slice())))
            .collect::<Result<Vec<_>, IndicatorError>>()?;
        let profile = if parts.len() == 1 {
            parts.into_iter().next().map(|p| p.0).unwrap_or_default()
        } else {
            weighted_profile(&parts)
        };
        values.insert(year, q40_30(&profile).map_err(|e| with_year(e, year))?);
    }
    for year in result.first_year()..=result.last_year() {
        values.insert(year, compute_40q30(result, year)?);
    }
    IndicatorSeries::from_values(values, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttainmentStatus {
    OnTrack,
    OffTrack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attainment {
    pub status: AttainmentStatus,
    pub reduction: f64,
    /// `target_fraction − reduction`; negative when ahead of target.
    pub gap: f64,
}

impl Attainment {
    pub fn on_track(&self) -> bool {
        self.status == AttainmentStatus::OnTrack
    }
}

pub fn classify_reduction(reduction: f64, config: &RunConfig) -> Attainment {
    let status = if reduction >= config.target_fraction {
        AttainmentStatus::OnTrack
    } else {
        AttainmentStatus::OffTrack
    };
    Attainment {
        status,
        reduction,
        gap: config.target_fraction - reduction,
    }
}

pub fn classify_attainment(series: &IndicatorSeries, config: &RunConfig) -> Attainment {
    classify_reduction(series.reduction, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mortality_gives_zero() {
        assert_eq!(q40_30(&vec![0.0; N_AGES]).unwrap(), 0.0);
    }

    #[test]
    fn constant_rate_closed_form() {
        // 40 single years at m = 0.01: 1 − exp(−0.4).
        let q = q40_30(&vec![0.01; N_AGES]).unwrap();
        assert!((q - 0.329_679_953_964_360_7).abs() < 1e-12);
    }

    #[test]
    fn ages_outside_window_are_ignored() {
        let mut m = vec![0.0; N_AGES];
        m[29] = 5.0;
        m[70] = 5.0;
        assert_eq!(q40_30(&m).unwrap(), 0.0);
    }

    #[test]
    fn attainment_examples() {
        let cfg = RunConfig::default();
        let a = classify_reduction(0.34, &cfg);
        assert_eq!(a.status, AttainmentStatus::OnTrack);
        assert!((a.gap + 0.006_666_666_666_666_6).abs() < 1e-12);
        let b = classify_reduction(0.245, &cfg);
        assert_eq!(b.status, AttainmentStatus::OffTrack);
        assert!((b.gap - 0.088_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn attainment_depends_only_on_ratio() {
        let cfg = RunConfig::default();
        let base: BTreeMap<i32, f64> = [(2015, 0.12), (2030, 0.085)].into();
        let scaled: BTreeMap<i32, f64> = base.iter().map(|(k, v)| (*k, v * 3.7)).collect();
        let a = classify_attainment(&IndicatorSeries::from_values(base, &cfg).unwrap(), &cfg);
        let b = classify_attainment(&IndicatorSeries::from_values(scaled, &cfg).unwrap(), &cfg);
        assert_eq!(a.status, b.status);
        assert!((a.gap - b.gap).abs() < 1e-12);
    }
}
