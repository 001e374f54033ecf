//! Single-year age × calendar-year surfaces.

use serde::{Deserialize, Serialize};

/// Oldest modelled single-year age. Cohorts ageing past it stay in this cell.
pub const MAX_AGE: usize = 110;
pub const N_AGES: usize = MAX_AGE + 1;

/// Dense age × year surface, age-major. Missing cells hold `NaN`.
///
/// Equality is bitwise, so two grids compare equal only when every cell
/// (including `NaN` gaps) has the same bit pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgeYearGrid {
    first_year: i32,
    n_years: usize,
    values: Vec<f64>,
}

impl AgeYearGrid {
    pub fn new(first_year: i32, last_year: i32, fill: f64) -> Self {
        assert!(last_year >= first_year, "empty year range");
        let n_years = (last_year - first_year + 1) as usize;
        Self {
            first_year,
            n_years,
            values: vec![fill; N_AGES * n_years],
        }
    }

    pub fn missing(first_year: i32, last_year: i32) -> Self {
        Self::new(first_year, last_year, f64::NAN)
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years as i32 - 1
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.last_year()
    }

    pub fn contains_year(&self, year: i32) -> bool {
        year >= self.first_year && year <= self.last_year()
    }

    #[inline]
    fn index(&self, age: usize, year: i32) -> usize {
        debug_assert!(age < N_AGES, "age {age} out of range");
        debug_assert!(self.contains_year(year), "year {year} out of range");
        age * self.n_years + (year - self.first_year) as usize
    }

    #[inline]
    pub fn get(&self, age: usize, year: i32) -> f64 {
        self.values[self.index(age, year)]
    }

    #[inline]
    pub fn set(&mut self, age: usize, year: i32, value: f64) {
        let i = self.index(age, year);
        self.values[i] = value;
    }

    #[inline]
    pub fn add(&mut self, age: usize, year: i32, value: f64) {
        let i = self.index(age, year);
        self.values[i] += value;
    }

    /// The calendar series for one age.
    pub fn age_row(&self, age: usize) -> &[f64] {
        &self.values[age * self.n_years..(age + 1) * self.n_years]
    }

    pub fn age_row_mut(&mut self, age: usize) -> &mut [f64] {
        let n = self.n_years;
        &mut self.values[age * n..(age + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_missing(&self, age: usize, year: i32) -> bool {
        self.get(age, year).is_nan()
    }

    /// Iterate `(age, year, value)` in age-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, i32, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| {
            let age = i / self.n_years;
            let year = self.first_year + (i % self.n_years) as i32;
            (age, year, v)
        })
    }

    /// Copy of this grid restricted (or extended with `NaN`) to a new year range.
    pub fn with_years(&self, first_year: i32, last_year: i32) -> Self {
        let mut out = Self::missing(first_year, last_year);
        for age in 0..N_AGES {
            for year in first_year..=last_year {
                if self.contains_year(year) {
                    out.set(age, year, self.get(age, year));
                }
            }
        }
        out
    }

    /// Multiply every cell by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            first_year: self.first_year,
            n_years: self.n_years,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Element-wise sum of two grids on the same year range.
    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(self.first_year, other.first_year);
        assert_eq!(self.n_years, other.n_years);
        Self {
            first_year: self.first_year,
            n_years: self.n_years,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl PartialEq for AgeYearGrid {
    fn eq(&self, other: &Self) -> bool {
        self.first_year == other.first_year
            && self.n_years == other.n_years
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Inclusive calendar period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Period {
    pub first: i32,
    pub last: i32,
}

impl Period {
    pub const fn new(first: i32, last: i32) -> Self {
        Self { first, last }
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first..=self.last
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.first && year <= self.last
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.first, self.last)
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let mut g = AgeYearGrid::new(1990, 2021, 0.0);
        g.set(37, 2004, 1.5);
        assert_eq!(g.get(37, 2004), 1.5);
        assert_eq!(g.age_row(37)[14], 1.5);
        let hits: Vec<_> = g.cells().filter(|c| c.2 != 0.0).collect();
        assert_eq!(hits, vec![(37, 2004, 1.5)]);
    }

    #[test]
    fn with_years_pads_missing() {
        let g = AgeYearGrid::new(2000, 2001, 2.0);
        let h = g.with_years(1999, 2001);
        assert!(h.is_missing(0, 1999));
        assert_eq!(h.get(110, 2001), 2.0);
    }
}
