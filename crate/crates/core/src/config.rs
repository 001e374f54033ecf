use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Period;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid run configuration: {0}")]
    Invalid(String),
}

/// Where the morbidity scalar's per-case weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MorbiditySource {
    /// Registry `disability_weight` column.
    #[default]
    DisabilityWeight,
    /// Implied weight `yld_rate / prevalence` in the last data year.
    YldRate,
}

/// Calendar anchors and numeric settings shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_first_year: i32,
    pub data_last_year: i32,
    pub intervention_start: i32,
    pub target_year: i32,
    pub horizon_year: i32,
    pub indicator_baseline_year: i32,
    pub target_fraction: f64,
    pub reporting_periods: Vec<Period>,
    pub discount_rate: f64,
    /// Consumer-price factor bringing input currency to the 2021 base.
    pub cpi_factor: f64,
    /// Purchasing-power factor from the CPI-adjusted base to 2019 USD.
    pub ppp_factor: f64,
    /// Headline expenditure totals cover ages at or above this.
    pub expenditure_min_age: usize,
    pub morbidity_source: MorbiditySource,
    pub delta_max: f64,
    pub bisection_tolerance: f64,
    pub bisection_max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_first_year: 1990,
            data_last_year: 2021,
            intervention_start: 2022,
            target_year: 2030,
            horizon_year: 2040,
            indicator_baseline_year: 2015,
            target_fraction: 1.0 / 3.0,
            reporting_periods: vec![Period::new(2022, 2030), Period::new(2031, 2040)],
            discount_rate: 0.0,
            cpi_factor: 1.0,
            ppp_factor: 1.0,
            expenditure_min_age: 30,
            morbidity_source: MorbiditySource::DisabilityWeight,
            delta_max: 0.30,
            bisection_tolerance: 1e-6,
            bisection_max_iter: 60,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.data_first_year >= self.data_last_year {
            return bad("data_first_year must precede data_last_year");
        }
        if !(self.indicator_baseline_year < self.intervention_start
            && self.intervention_start <= self.target_year
            && self.target_year < self.horizon_year)
        {
            return bad(
                "need indicator_baseline_year < intervention_start <= target_year < horizon_year",
            );
        }
        if self.intervention_start != self.data_last_year + 1 {
            return bad("intervention_start must be the year after data_last_year");
        }
        if self.indicator_baseline_year < self.data_first_year
            || self.indicator_baseline_year > self.data_last_year
        {
            return bad("indicator_baseline_year must lie inside the observed window");
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return bad("target_fraction must lie in (0, 1)");
        }
        if self.discount_rate < 0.0 || !self.discount_rate.is_finite() {
            return bad("discount_rate must be a finite non-negative number");
        }
        if !(self.cpi_factor > 0.0 && self.ppp_factor > 0.0) {
            return bad("currency factors must be positive");
        }
        if !(self.delta_max > 0.0) || !(self.bisection_tolerance > 0.0) {
            return bad("delta_max and bisection_tolerance must be positive");
        }
        for p in &self.reporting_periods {
            if p.first > p.last || p.first < self.intervention_start || p.last > self.horizon_year {
                return bad("reporting periods must lie inside intervention_start..=horizon_year");
            }
        }
        Ok(())
    }

    /// Combined currency multiplier applied to costs and envelopes at load.
    pub fn currency_factor(&self) -> f64 {
        self.cpi_factor * self.ppp_factor
    }

    /// Years carrying an accelerated APC (inclusive).
    pub fn active_years(&self) -> Period {
        Period::new(self.intervention_start, self.target_year)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_calendar() {
        let cfg = RunConfig {
            target_year: 2045,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            target_fraction: 1.0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parses_partial_toml() {
        let cfg: RunConfig = toml::from_str("target_fraction = 0.25\n").unwrap();
        assert_eq!(cfg.target_fraction, 0.25);
        assert_eq!(cfg.horizon_year, 2040);
    }
}
