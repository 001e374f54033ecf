//! Shared fixtures and a plain-loop reimplementation of the lifetable used as
//! an oracle.
#![allow(dead_code)]

use pmslt_core::dataset::CountryDataset;
use pmslt_core::expenditure::{Phase, PhaseCostTable};
use pmslt_core::grid::{Period, MAX_AGE, N_AGES};
use pmslt_core::synth::{generate_stratum, SynthConfig, SynthStratum};
use pmslt_core::trend::RateSurfaces;
use pmslt_core::{RunConfig, Sex};

pub fn synth(n_diseases: usize, sex: Sex) -> SynthStratum {
    let cfg = SynthConfig {
        n_diseases,
        ..SynthConfig::default()
    };
    generate_stratum(&cfg, "AUS", sex, &RunConfig::default())
}

/// One disease with non-zero remission, last-year costs zeroed.
pub fn single_disease(code: &str) -> CountryDataset {
    let mut ds = synth(4, Sex::Female).dataset;
    ds.diseases.retain(|d| d.disease.code == code);
    ds.phase_costs.diseases.retain(|c| c.disease == code);
    assert_eq!(ds.diseases.len(), 1, "{code} not in the demo registry");
    for row in &mut ds.phase_costs.diseases[0].by_age {
        row[Phase::LastYear.index()] = 0.0;
    }
    ds
}

/// Counts produced by the oracle.
pub struct OracleRun {
    pub population: Vec<Vec<f64>>,
    /// `[disease][age][year offset]`
    pub prevalence: Vec<Vec<Vec<f64>>>,
    pub incident: Vec<Vec<Vec<f64>>>,
    pub deaths: Vec<Vec<Vec<f64>>>,
    pub prevalent_cases: Vec<Vec<Vec<f64>>>,
    pub first_year: i32,
}

fn p(rate: f64) -> f64 {
    1.0 - (-rate).exp()
}

/// Straightforward cohort loop: three-state sub-models per disease and an
/// all-cause probability shifted by the scenario's excess disease deaths.
pub fn oracle(ds: &CountryDataset, bau: &RateSurfaces, scen: &RateSurfaces, cfg: &RunConfig) -> OracleRun {
    let y0 = cfg.data_last_year;
    let ny = (cfg.horizon_year - y0 + 1) as usize;
    let nd = ds.diseases.len();
    let zeros = || vec![vec![0.0; ny]; N_AGES];
    let mut pop = zeros();
    let mut diseased: Vec<_> = (0..nd).map(|_| zeros()).collect();
    let mut incident: Vec<_> = (0..nd).map(|_| zeros()).collect();
    let mut deaths: Vec<_> = (0..nd).map(|_| zeros()).collect();
    let mut prevalent: Vec<_> = (0..nd).map(|_| zeros()).collect();

    let probs = |s: &RateSurfaces, d: usize, age: usize, year: i32| {
        let x = &s.diseases[d];
        let i = p(x.incidence.get(age, year));
        let f = p(x.case_fatality.get(age, year));
        let r = p(x.remission.get(age, year)).min(1.0 - f);
        (i, f, r)
    };
    let step = |s: f64, c: f64, (i, f, r): (f64, f64, f64)| {
        let s2 = s * (1.0 - i) + c * r;
        let c2 = c * (1.0 - f - r) + s * i;
        (s2 / (s2 + c2), c2 / (s2 + c2))
    };

    for a0 in 0..N_AGES {
        let mut n = ds.baseline_population[a0];
        let p0: Vec<f64> = ds.diseases.iter().map(|d| d.prevalence.values.get(a0, y0)).collect();
        let mut sc: Vec<(f64, f64)> = p0.iter().map(|&x| (1.0 - x, x)).collect();
        let mut sb = sc.clone();
        for k in 0..ny {
            let age = (a0 + k).min(MAX_AGE);
            let year = y0 + k as i32;
            let mut excess = 0.0;
            for d in 0..nd {
                let ps = probs(scen, d, age, year);
                let pb = probs(bau, d, age, year);
                excess += sc[d].1 * ps.1 - sb[d].1 * pb.1;
            }
            let q = (p(bau.all_cause.get(age, year)) + excess).clamp(0.0, 1.0);
            pop[age][k] += n;
            for d in 0..nd {
                let (s, c) = sc[d];
                let ps = probs(scen, d, age, year);
                diseased[d][age][k] += n * c;
                incident[d][age][k] += n * s * ps.0;
                deaths[d][age][k] += n * c * ps.1;
                prevalent[d][age][k] += n * c + n * s * ps.0;
                sc[d] = step(s, c, ps);
                sb[d] = step(sb[d].0, sb[d].1, probs(bau, d, age, year));
            }
            n -= n * q;
        }
    }
    let prevalence = diseased
        .iter()
        .map(|g| {
            g.iter()
                .enumerate()
                .map(|(a, row)| row.iter().enumerate().map(|(k, &x)| if pop[a][k] > 0.0 { x / pop[a][k] } else { 0.0 }).collect())
                .collect()
        })
        .collect();
    OracleRun {
        population: pop,
        prevalence,
        incident,
        deaths,
        prevalent_cases: prevalent,
        first_year: y0,
    }
}

impl OracleRun {
    /// Phase-cost expenditure over ages `min_age..` and the years of `period`.
    pub fn expenditure(&self, costs: &PhaseCostTable, period: Period, min_age: usize) -> f64 {
        let mut total = 0.0;
        for (d, c) in costs.diseases.iter().enumerate() {
            for y in period.first..=period.last {
                let k = (y - self.first_year) as usize;
                for a in min_age..N_AGES {
                    let inc = self.incident[d][a][k];
                    let dth = self.deaths[d][a][k];
                    let prev = self.prevalent_cases[d][a][k];
                    total += inc * c.cost(a, Phase::FirstYear)
                        + dth * c.cost(a, Phase::LastYear)
                        + (prev - inc - dth).max(0.0) * c.cost(a, Phase::Prevalent);
                }
            }
        }
        total
    }
}
