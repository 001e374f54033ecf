mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use pmslt_core::dataset::{load_country_dataset, load_registry, write_canonical};
use pmslt_core::disease_model::{next_prevalence, prob_to_rate, rate_to_prob, DiseaseShares, TransitionProbs};
use pmslt_core::expenditure::{self, equivalent_age, ExpenditureScope};
use pmslt_core::grid::{Period, N_AGES};
use pmslt_core::indicator::{classify_reduction, q40_30};
use pmslt_core::pmslt::ProjectionResult;
use pmslt_core::scenario::{acceleration_multiplier, apply_acceleration, ScenarioKind, ScenarioSolver, ScenarioSpec};
use pmslt_core::trend::{build_bau, Bau};
use pmslt_core::{CountryDataset, RunConfig, Sex};

struct Fixture {
    ds: CountryDataset,
    bau: Bau,
    base: ProjectionResult,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = RunConfig::default();
        let ds = common::synth(3, Sex::Female).dataset;
        let bau = build_bau(&ds, &cfg).unwrap();
        let base = ScenarioSolver::new(&ds, &bau.surfaces, &cfg)
            .unwrap()
            .project(&ScenarioSpec::bau(&cfg))
            .unwrap();
        Fixture { ds, bau, base }
    })
}

fn kind() -> impl Strategy<Value = ScenarioKind> {
    prop::sample::select(ScenarioKind::SOLVABLE.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_probability_round_trip(rate in 0.0f64..5.0) {
        let back = prob_to_rate(rate_to_prob(rate));
        prop_assert!((back - rate).abs() <= 1e-12 * rate.max(1.0));
    }

    #[test]
    fn sub_model_stays_normalised(
        p in 0.0f64..1.0,
        i in 0.0f64..0.5,
        f in 0.0f64..0.9,
        r in 0.0f64..1.0,
        steps in 1usize..60,
    ) {
        let (probs, _) = TransitionProbs::from_rates(i, f, r);
        let mut sh = DiseaseShares::from_prevalence(p);
        for _ in 0..steps {
            let expect = next_prevalence(sh.diseased, &probs);
            sh = sh.step(&probs);
            prop_assert!((sh.susceptible + sh.diseased - 1.0).abs() <= 1e-12);
            prop_assert!(sh.diseased >= 0.0 && sh.susceptible >= 0.0);
            prop_assert!((sh.diseased - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn multiplier_holds_after_target(delta in -0.3f64..0.3, year in 2031i32..2100) {
        let active = RunConfig::default().active_years();
        prop_assert_eq!(acceleration_multiplier(delta, active, year), acceleration_multiplier(delta, active, 2030));
        prop_assert_eq!(acceleration_multiplier(delta, active, 2021), 1.0);
        prop_assert_eq!(acceleration_multiplier(0.0, active, year), 1.0);
    }

    #[test]
    fn q40_30_increases_with_mortality(m in 0.0f64..0.1, bump in 1e-6f64..0.1, age in 30usize..70) {
        let lo = vec![m; N_AGES];
        let mut hi = lo.clone();
        hi[age] += bump;
        let (a, b) = (q40_30(&lo).unwrap(), q40_30(&hi).unwrap());
        prop_assert!(b > a);
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn gap_and_status_agree(r in -1.0f64..1.0) {
        let cfg = RunConfig::default();
        let a = classify_reduction(r, &cfg);
        prop_assert_eq!(a.on_track(), a.gap <= 0.0);
    }

    #[test]
    fn equivalent_age_tracks_integer_shifts(shift in 0usize..20, slope in 1e-4f64..0.1, level in 0.0f64..1.0) {
        let bau: Vec<f64> = (0..N_AGES).map(|a| level + slope * a as f64).collect();
        let scen: Vec<f64> = (0..N_AGES).map(|a| bau[a.saturating_sub(shift)]).collect();
        let e = equivalent_age(&bau, &scen);
        prop_assert_eq!(e.age, 65.0 + shift as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_delta_reproduces_bau(kind in kind()) {
        let f = fixture();
        let cfg = RunConfig::default();
        let spec = ScenarioSpec::new(kind, 0.0, &cfg).unwrap();
        prop_assert_eq!(&apply_acceleration(&f.bau.surfaces, &spec), &f.bau.surfaces);
        let solver = ScenarioSolver::new(&f.ds, &f.bau.surfaces, &cfg).unwrap();
        let mut r = solver.project(&spec).unwrap();
        r.label = f.base.label.clone();
        prop_assert_eq!(&r, &f.base);
    }

    #[test]
    fn reduction_is_monotone_in_delta(kind in kind(), a in 0.0f64..0.2, b in 0.0f64..0.2) {
        let f = fixture();
        let cfg = RunConfig::default();
        let solver = ScenarioSolver::new(&f.ds, &f.bau.surfaces, &cfg).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = solver.reduction(&ScenarioSpec::new(kind, lo, &cfg).unwrap()).unwrap();
        let r_hi = solver.reduction(&ScenarioSpec::new(kind, hi, &cfg).unwrap()).unwrap();
        prop_assert!(r_hi >= r_lo - 1e-12, "{kind}: r({lo}) = {r_lo} > r({hi}) = {r_hi}");
    }

    #[test]
    fn cohorts_conserve_people(kind in kind(), delta in 0.0f64..0.3) {
        let f = fixture();
        let cfg = RunConfig::default();
        let spec = ScenarioSpec::new(kind, delta, &cfg).unwrap();
        let solver = ScenarioSolver::new(&f.ds, &f.bau.surfaces, &cfg).unwrap();
        let r = solver.project(&spec).unwrap();
        // Every baseline person is alive or dead: population at the horizon
        // plus all deaths equals the baseline.
        let last = r.last_year();
        let alive_end: f64 = (0..N_AGES).map(|a| r.population.get(a, last) - r.deaths_all.get(a, last)).sum();
        let deaths: f64 = r.deaths_all.values().iter().sum();
        let base: f64 = f.ds.baseline_population.iter().sum();
        prop_assert!((alive_end + deaths - base).abs() <= 1e-9 * base);
    }

    #[test]
    fn expenditure_is_homogeneous_in_costs(k in 0.01f64..100.0) {
        let f = fixture();
        let cfg = RunConfig::default();
        let scope = ExpenditureScope::from_config(&cfg);
        let p = Period::new(2022, 2030);
        let e = expenditure::project_expenditure(&f.base, &f.ds.phase_costs, p, &scope).unwrap();
        let ek = expenditure::project_expenditure(&f.base, &f.ds.phase_costs.scaled(k), p, &scope).unwrap();
        prop_assert!((ek - k * e).abs() <= 1e-9 * (k * e).abs());
    }
}

#[test]
fn canonical_files_round_trip() {
    let cfg = RunConfig::default();
    for width in [1, 5] {
        let synth = pmslt_core::synth::SynthConfig {
            band_width: width,
            n_diseases: 2,
            ..Default::default()
        };
        let ds = pmslt_core::synth::generate_stratum(&synth, "NZL", Sex::Male, &cfg).dataset;
        let tmp = tempfile::tempdir().unwrap();
        let paths = write_canonical(&ds, tmp.path()).unwrap();
        let reg = load_registry(&paths.registry).unwrap();
        let back = load_country_dataset(&paths, &reg, &cfg, "NZL", Sex::Male).unwrap();
        assert_eq!(back.baseline_population, ds.baseline_population);
        for (a, b) in back.diseases.iter().zip(&ds.diseases) {
            assert_eq!(a.incidence.values, b.incidence.values);
            assert_eq!(a.prevalence.values, b.prevalence.values);
            assert_eq!(a.case_fatality.values, b.case_fatality.values);
        }
        assert_eq!(back.phase_costs, ds.phase_costs);
        assert_eq!(back.expenditure_envelope, ds.expenditure_envelope);
    }
}
