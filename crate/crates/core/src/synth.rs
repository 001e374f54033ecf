//! Deterministic synthetic inputs.
//!
//! Each stratum is produced by forward-simulating the three-state model from
//! known incidence, case fatality and remission surfaces, so prevalence and
//! cause mortality are mutually consistent on the single-year grid. With
//! wider age bands the surfaces are band-averaged, which is what real inputs
//! look like and no longer exactly consistent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::{
    derive_case_fatality, AgeGroup, CountryDataset, DiseaseId, DiseaseRates, Envelope, Measure,
    RateSeries, Registry, Sex, ALL_CAUSE_CODE,
};
use crate::disease_model::{next_prevalence, TransitionProbs};
use crate::expenditure::{DiseaseCosts, PhaseCostTable};
use crate::grid::{AgeYearGrid, MAX_AGE, N_AGES};

/// OECD member ISO3 codes.
pub const OECD_COUNTRIES: [&str; 38] = [
    "AUS", "AUT", "BEL", "CAN", "CHL", "COL", "CRI", "CZE", "DNK", "EST", "FIN", "FRA", "DEU", "GRC",
    "HUN", "ISL", "IRL", "ISR", "ITA", "JPN", "KOR", "LVA", "LTU", "LUX", "MEX", "NLD", "NZL", "NOR",
    "POL", "PRT", "SVK", "SVN", "ESP", "SWE", "CHE", "TUR", "GBR", "USA",
];

/// Profile of one synthetic disease. Rates are at age 60 in the last data
/// year; APCs are log-slopes per calendar year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiseaseProfile {
    pub incidence_60: f64,
    pub incidence_age_slope: f64,
    pub incidence_apc: f64,
    pub case_fatality_60: f64,
    pub case_fatality_age_slope: f64,
    pub case_fatality_apc: f64,
    pub remission: f64,
    pub remission_apc: f64,
    pub disability_weight: f64,
    /// Per-case cost at age 60 by phase: first year, prevalent, last year.
    pub costs: [f64; 3],
}

struct DemoDisease {
    code: &'static str,
    label: &'static str,
    profile: DiseaseProfile,
}

const DEMO: [DemoDisease; 4] = [
    DemoDisease {
        code: "ihd",
        label: "Ischaemic heart disease",
        profile: DiseaseProfile {
            incidence_60: 0.004,
            incidence_age_slope: 0.07,
            incidence_apc: -0.012,
            case_fatality_60: 0.06,
            case_fatality_age_slope: 0.06,
            case_fatality_apc: -0.022,
            remission: 0.0,
            remission_apc: 0.0,
            disability_weight: 0.08,
            costs: [14_000.0, 2_400.0, 31_000.0],
        },
    },
    DemoDisease {
        code: "stroke",
        label: "Stroke",
        profile: DiseaseProfile {
            incidence_60: 0.0025,
            incidence_age_slope: 0.08,
            incidence_apc: -0.008,
            case_fatality_60: 0.05,
            case_fatality_age_slope: 0.07,
            case_fatality_apc: -0.02,
            remission: 0.05,
            remission_apc: 0.0,
            disability_weight: 0.2,
            costs: [22_000.0, 3_100.0, 27_000.0],
        },
    },
    DemoDisease {
        code: "diabetes",
        label: "Type 2 diabetes",
        profile: DiseaseProfile {
            incidence_60: 0.007,
            incidence_age_slope: 0.03,
            incidence_apc: 0.01,
            case_fatality_60: 0.012,
            case_fatality_age_slope: 0.05,
            case_fatality_apc: -0.015,
            remission: 0.02,
            remission_apc: 0.01,
            disability_weight: 0.05,
            costs: [3_500.0, 1_600.0, 9_000.0],
        },
    },
    DemoDisease {
        code: "crc",
        label: "Colorectal cancer",
        profile: DiseaseProfile {
            incidence_60: 0.0008,
            incidence_age_slope: 0.06,
            incidence_apc: -0.004,
            case_fatality_60: 0.08,
            case_fatality_age_slope: 0.02,
            case_fatality_apc: -0.018,
            remission: 0.1,
            remission_apc: 0.005,
            disability_weight: 0.3,
            costs: [38_000.0, 4_200.0, 45_000.0],
        },
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub countries: Vec<String>,
    pub sexes: Vec<Sex>,
    /// First four are the named demo diseases; further ones are generated.
    pub n_diseases: usize,
    /// Input age-band width; 1 gives exactly consistent single-year data.
    pub band_width: usize,
    /// Multiplies every calendar trend. Larger values put strata on track.
    pub trend_scale: f64,
    /// Random ±fraction applied to levels and trends per stratum.
    pub jitter: f64,
    /// Approximate population of one stratum.
    pub population: f64,
    pub birth_prevalence: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            countries: vec!["AUS".into()],
            sexes: Sex::ALL.to_vec(),
            n_diseases: 4,
            band_width: 1,
            trend_scale: 1.0,
            jitter: 0.2,
            population: 12_000_000.0,
            birth_prevalence: 1e-4,
        }
    }
}

/// The surfaces a stratum was simulated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub incidence: Vec<AgeYearGrid>,
    pub case_fatality: Vec<AgeYearGrid>,
    pub remission: Vec<AgeYearGrid>,
    pub prevalence: Vec<AgeYearGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStratum {
    pub dataset: CountryDataset,
    pub truth: SynthTruth,
}

fn stream_of(key: &str) -> u64 {
    // FNV-1a; only needs to be stable across runs.
    key.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_of(key));
    rng
}

fn generated_profile(rng: &mut ChaCha8Rng) -> DiseaseProfile {
    DiseaseProfile {
        incidence_60: rng.gen_range(0.000_05..0.000_8),
        incidence_age_slope: rng.gen_range(0.01..0.08),
        incidence_apc: rng.gen_range(-0.015..0.008),
        case_fatality_60: rng.gen_range(0.005..0.05),
        case_fatality_age_slope: rng.gen_range(0.01..0.07),
        case_fatality_apc: rng.gen_range(-0.03..-0.005),
        remission: if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.01..0.15) },
        remission_apc: rng.gen_range(-0.005..0.01),
        disability_weight: rng.gen_range(0.02..0.35),
        costs: [
            rng.gen_range(2_000.0..30_000.0),
            rng.gen_range(500.0..4_000.0),
            rng.gen_range(5_000.0..40_000.0),
        ],
    }
}

/// Codes, labels and profiles of the first `n` synthetic diseases.
pub fn disease_profiles(seed: u64, n: usize) -> Vec<(DiseaseId, DiseaseProfile)> {
    let mut rng = rng_for(seed, "registry");
    (0..n)
        .map(|k| {
            let (code, label, profile) = match DEMO.get(k) {
                Some(d) => (d.code.to_string(), d.label.to_string(), d.profile),
                None => (
                    format!("ncd{:02}", k + 1),
                    format!("Synthetic NCD {}", k + 1),
                    generated_profile(&mut rng),
                ),
            };
            let id = DiseaseId {
                code,
                label,
                ncd4_member: true,
                disability_weight: Some(profile.disability_weight),
            };
            (id, profile)
        })
        .collect()
}

pub fn registry(seed: u64, n: usize) -> Registry {
    Registry::new(disease_profiles(seed, n).into_iter().map(|(id, _)| id).collect())
        .expect("synthetic registry is valid")
}

/// Bands of `width` years up to 85, then 85+ (single years when `width` is 1).
pub fn age_bands(width: usize) -> Vec<AgeGroup> {
    if width <= 1 {
        return (0..N_AGES).map(|a| AgeGroup::new(a, a)).collect();
    }
    let top = 85usize.min(MAX_AGE);
    let mut out: Vec<AgeGroup> = (0..top)
        .step_by(width)
        .map(|lo| AgeGroup::new(lo, (lo + width - 1).min(top - 1)))
        .collect();
    out.push(AgeGroup::new(top, MAX_AGE));
    out
}

fn banded(grid: &AgeYearGrid, bands: &[AgeGroup]) -> AgeYearGrid {
    let mut out = grid.clone();
    for b in bands {
        for year in grid.years() {
            let mean = b.ages().map(|a| grid.get(a, year)).sum::<f64>() / b.width() as f64;
            for a in b.ages() {
                out.set(a, year, mean);
            }
        }
    }
    out
}

fn series(disease: &str, measure: Measure, values: AgeYearGrid, bands: &[AgeGroup]) -> RateSeries {
    RateSeries {
        disease: disease.to_string(),
        measure,
        values,
        age_groups: bands.to_vec(),
    }
}

fn surface(first: i32, last: i32, f: impl Fn(usize, i32) -> f64) -> AgeYearGrid {
    let mut g = AgeYearGrid::new(first, last, 0.0);
    for age in 0..N_AGES {
        for year in first..=last {
            g.set(age, year, f(age, year));
        }
    }
    g
}

/// Simulates one country × sex stratum.
pub fn generate_stratum(cfg: &SynthConfig, country: &str, sex: Sex, run: &RunConfig) -> SynthStratum {
    let (y0, y1) = (run.data_first_year, run.data_last_year);
    let mut rng = rng_for(cfg.seed, &format!("{country}/{sex}"));
    let mut country_rng = rng_for(cfg.seed, country);
    let jit = |rng: &mut ChaCha8Rng| 1.0 + cfg.jitter * rng.gen_range(-1.0..1.0);
    let sex_mult = if sex == Sex::Male { 1.3 } else { 1.0 };
    let bands = age_bands(cfg.band_width);
    let anchor = |year: i32| (year - y1) as f64;

    let mut diseases = Vec::new();
    let mut truth = SynthTruth {
        incidence: Vec::new(),
        case_fatality: Vec::new(),
        remission: Vec::new(),
        prevalence: Vec::new(),
    };
    let mut cause_total = AgeYearGrid::new(y0, y1, 0.0);
    let mut costs = Vec::new();
    for (id, p) in disease_profiles(cfg.seed, cfg.n_diseases) {
        let lvl_i = jit(&mut rng) * sex_mult;
        let lvl_f = jit(&mut rng);
        let apc_i = p.incidence_apc * cfg.trend_scale * jit(&mut rng);
        let apc_f = p.case_fatality_apc * cfg.trend_scale * jit(&mut rng);
        let apc_r = p.remission_apc * cfg.trend_scale;
        let inc = surface(y0, y1, |a, y| {
            let young = if a < 20 { 0.05 + 0.95 * a as f64 / 20.0 } else { 1.0 };
            (p.incidence_60 * lvl_i * young * (p.incidence_age_slope * (a as f64 - 60.0)).exp())
                .min(0.3)
                * (apc_i * anchor(y)).exp()
        });
        let cfr = surface(y0, y1, |a, y| {
            (p.case_fatality_60 * lvl_f * (p.case_fatality_age_slope * (a as f64 - 60.0)).exp())
                .min(1.5)
                * (apc_f * anchor(y)).exp()
        });
        let rem = surface(y0, y1, |_, y| p.remission * (apc_r * anchor(y)).exp());
        let mut prev = AgeYearGrid::new(y0, y1, 0.0);
        let probs = |a: usize, y: i32| {
            TransitionProbs::from_rates(inc.get(a, y), cfr.get(a, y), rem.get(a, y)).0
        };
        // Equilibrium age profile in the first year, then cohorts forward.
        let mut pa = cfg.birth_prevalence;
        for a in 0..N_AGES {
            prev.set(a, y0, pa);
            pa = next_prevalence(pa, &probs(a, y0));
        }
        for y in y0..y1 {
            prev.set(0, y + 1, cfg.birth_prevalence);
            for a in 0..MAX_AGE {
                prev.set(a + 1, y + 1, next_prevalence(prev.get(a, y), &probs(a, y)));
            }
        }
        let mort = surface(y0, y1, |a, y| prev.get(a, y) * cfr.get(a, y));
        cause_total = cause_total.plus(&mort);

        let code = id.code.clone();
        let incidence = series(&code, Measure::Incidence, banded(&inc, &bands), &bands);
        let prevalence = series(&code, Measure::Prevalence, banded(&prev, &bands), &bands);
        let cause_mortality = series(&code, Measure::CauseMortality, banded(&mort, &bands), &bands);
        let (case_fatality, _) = derive_case_fatality(&prevalence, &cause_mortality);
        diseases.push(DiseaseRates {
            disease: id,
            incidence,
            prevalence,
            cause_mortality,
            case_fatality,
            remission: None,
            yld_rate: None,
        });
        costs.push(DiseaseCosts {
            disease: code,
            by_age: (0..N_AGES)
                .map(|a| p.costs.map(|c| c * (0.6 + 0.8 * a as f64 / MAX_AGE as f64)))
                .collect(),
        });
        truth.incidence.push(inc);
        truth.case_fatality.push(cfr);
        truth.remission.push(rem.with_years(y0, y1 - 1));
        truth.prevalence.push(prev);
    }

    let bg_level = jit(&mut rng) * sex_mult;
    let all = surface(y0, y1, |a, y| {
        let infant = if a == 0 { 0.004 } else { 0.0 };
        (infant + 7.5e-5 * bg_level * (0.085 * a as f64).exp()).min(0.8)
            * (-0.012 * cfg.trend_scale * anchor(y)).exp()
            + cause_total.get(a, y)
    });
    let all_cause = series(ALL_CAUSE_CODE, Measure::AllCauseMortality, banded(&all, &bands), &bands);

    let pop_level = cfg.population * jit(&mut rng);
    let shape: Vec<f64> = (0..N_AGES)
        .map(|a| (-(a as f64 / 82.0).powi(5)).exp() * (1.0 + 0.15 * (a as f64 / 9.0).sin()))
        .collect();
    let norm: f64 = shape.iter().sum();
    let baseline_population = shape.iter().map(|s| (pop_level * s / norm).round()).collect();

    let per_capita = 900.0 * (1.0 + cfg.jitter * country_rng.gen_range(-1.0..1.0));
    let envelope = Envelope {
        year: y1,
        total: (2.0 * cfg.population * per_capita).round(),
    };

    SynthStratum {
        dataset: CountryDataset {
            country: country.to_string(),
            sex,
            first_year: y0,
            last_year: y1,
            baseline_population,
            diseases,
            all_cause,
            expenditure_envelope: Some(envelope),
            phase_costs: PhaseCostTable { diseases: costs },
            load_notes: Vec::new(),
        },
        truth,
    }
}

/// Every configured country × sex, in configuration order.
pub fn generate(cfg: &SynthConfig, run: &RunConfig) -> Vec<SynthStratum> {
    cfg.countries
        .iter()
        .flat_map(|c| cfg.sexes.iter().map(move |s| (c, *s)))
        .map(|(c, s)| generate_stratum(cfg, c, s, run))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let run = RunConfig::default();
        let cfg = SynthConfig::default();
        let a = generate_stratum(&cfg, "AUS", Sex::Female, &run);
        let b = generate_stratum(&cfg, "AUS", Sex::Female, &run);
        assert_eq!(a, b);
        let c = generate_stratum(&cfg, "NZL", Sex::Female, &run);
        assert_ne!(a.dataset.baseline_population, c.dataset.baseline_population);
    }

    #[test]
    fn bands_partition_ages() {
        for w in [1, 5, 10] {
            let b = age_bands(w);
            assert_eq!(b[0].lo, 0);
            assert_eq!(b.last().unwrap().hi, MAX_AGE);
            for pair in b.windows(2) {
                assert_eq!(pair[0].hi + 1, pair[1].lo);
            }
        }
    }

    #[test]
    fn single_year_data_is_consistent() {
        let run = RunConfig::default();
        let cfg = SynthConfig {
            band_width: 1,
            n_diseases: 2,
            ..Default::default()
        };
        let s = generate_stratum(&cfg, "AUS", Sex::Male, &run);
        let d = &s.dataset.diseases[1];
        for (a, y, p) in d.prevalence.values.cells() {
            assert!((0.0..1.0).contains(&p));
            let m = d.cause_mortality.values.get(a, y);
            assert!((d.case_fatality.values.get(a, y) * p - m).abs() <= 1e-12 * m);
        }
    }

    #[test]
    fn registry_has_demo_codes_first() {
        let r = registry(1, 6);
        assert_eq!(r.diseases()[0].code, "ihd");
        assert_eq!(r.diseases()[3].code, "crc");
        assert_eq!(r.diseases()[5].code, "ncd06");
    }
}
