//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. Set
//! `PMSLT_ACCEPTANCE_ONLY=1,4` to run a subset.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pmslt_core::expenditure::{self, equivalent_age_65, Panel, ReportStratum};
use pmslt_core::grid::N_AGES;
use pmslt_core::indicator::{indicator_series, q40_30, weighted_profile, INDICATOR_AGES};
use pmslt_core::pmslt::{person_years, ProjectionOptions, ProjectionResult, Projector};
use pmslt_core::scenario::{
    acceleration_multiplier, apply_acceleration, ScenarioKind, ScenarioSolver, ScenarioSpec,
};
use pmslt_core::trend::{build_bau, solve_remission};
use pmslt_core::{RunConfig, Sex};

// Tolerances, as stated by each criterion.
const TOL_MULTIPLIER: f64 = 1e-12;
const TOL_40Q30: f64 = 1e-9;
const TOL_REMISSION: f64 = 1e-8;
const GRID_STEP: f64 = 0.001;
const TOL_REDUCTION: f64 = 1e-6;
const TOL_CLOSURE_REL: f64 = 1e-9;
const TOL_NORMALISATION: f64 = 1e-12;
const TOL_ORACLE_REL: f64 = 1e-9;
const BUDGET_1: Duration = Duration::from_secs(1);
const BUDGET_2: Duration = Duration::from_secs(1);
const BUDGET_3: Duration = Duration::from_secs(5);
const BUDGET_4: Duration = Duration::from_secs(60);
const BUDGET_9: Duration = Duration::from_secs(600);

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure caused by the host rather than the code; reported, not fatal.
    environment_limited: bool,
}

fn pass(detail: String) -> Outcome {
    Outcome {
        pass: true,
        detail,
        environment_limited: false,
    }
}

fn fail(detail: String) -> Outcome {
    Outcome {
        pass: false,
        detail,
        environment_limited: false,
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let active = cfg.active_years();
    let inc = acceleration_multiplier(-0.0253, active, 2030);
    let cfr = acceleration_multiplier(-0.0141, active, 2030);
    let rem = acceleration_multiplier(0.0141, active, 2030);
    // exp(-0.2277), exp(-0.1269), exp(0.1269), evaluated independently.
    let expect = [0.796_363_132_942_578_9, 0.880_821_750_368_231_8, 1.135_303_481_756_604_1];
    let mut worst = 0.0f64;
    for (got, want) in [inc, cfr, rem].iter().zip(expect) {
        worst = worst.max((got - want).abs());
    }

    // The same multipliers must reach the engine's rate surfaces.
    let s = common::synth(1, Sex::Female);
    let bau = build_bau(&s.dataset, &cfg).expect("bau");
    let prev = apply_acceleration(&bau.surfaces, &ScenarioSpec::new(ScenarioKind::Prevention, 0.0253, &cfg).unwrap());
    let treat = apply_acceleration(
        &bau.surfaces,
        &ScenarioSpec::new(ScenarioKind::TreatmentCfrOnly, 0.0141, &cfg).unwrap(),
    );
    let b = &bau.surfaces.diseases[0];
    let age = 60;
    let ratio_i = prev.diseases[0].incidence.get(age, 2030) / b.incidence.get(age, 2030);
    let ratio_f = treat.diseases[0].case_fatality.get(age, 2030) / b.case_fatality.get(age, 2030);
    worst = worst.max((ratio_i - expect[0]).abs()).max((ratio_f - expect[1]).abs());
    let elapsed = t.elapsed();
    check(
        worst <= TOL_MULTIPLIER && elapsed < BUDGET_1,
        format!(
            "incidence x{inc:.4} ({:.1}% cut), cfr x{cfr:.4} ({:.1}%), remission x{rem:.4} (+{:.1}%); max error {worst:.1e} (tol {TOL_MULTIPLIER:.0e}); {elapsed:.2?}",
            100.0 * (1.0 - inc),
            100.0 * (1.0 - cfr),
            100.0 * (rem - 1.0)
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let expected = 1.0 - (-0.4f64).exp();
    let q = q40_30(&vec![0.01; N_AGES]).expect("q");
    // Same rate through a population-weighted two-stratum profile.
    let pop_a = vec![3.0; N_AGES];
    let pop_b = vec![1.0; N_AGES];
    let mixed = weighted_profile(&[(vec![0.01; N_AGES], &pop_a), (vec![0.01; N_AGES], &pop_b)]);
    let q2 = q40_30(&mixed).expect("q");
    let n_ages = INDICATOR_AGES.count();
    let elapsed = t.elapsed();
    let err = (q - expected).abs().max((q2 - expected).abs());
    check(
        err <= TOL_40Q30 && n_ages == 40 && elapsed < BUDGET_2,
        format!("40q30 = {q:.6} vs 1 - exp(-0.4) = {expected:.6}; error {err:.1e} (tol {TOL_40Q30:.0e}); {elapsed:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let s = common::synth(3, Sex::Female);
    let ds = &s.dataset;
    let mut worst = 0.0f64;
    let mut cells = 0usize;
    let mut regimes = Vec::new();
    for (k, d) in ds.diseases.iter().enumerate() {
        let sol = match solve_remission(
            &d.disease.code,
            &d.incidence.values,
            &d.prevalence.values,
            &d.case_fatality.values,
        ) {
            Ok(sol) => sol,
            Err(e) => return fail(format!("{}: {e}", d.disease.code)),
        };
        let truth = &s.truth.remission[k];
        let mut max_r = 0.0f64;
        for (age, year, r) in truth.cells() {
            worst = worst.max((sol.rates.get(age, year) - r).abs());
            max_r = max_r.max(r);
            cells += 1;
        }
        regimes.push(format!("{} r<={max_r}", d.disease.code));
    }
    let has_zero = regimes.iter().any(|r| r.ends_with("r<=0"));
    let has_005 = regimes.iter().any(|r| r.contains("r<=0.05"));
    let elapsed = t.elapsed();
    check(
        worst <= TOL_REMISSION && has_zero && has_005 && elapsed < BUDGET_3,
        format!(
            "{cells} cells over [{}]; max |r - truth| {worst:.1e} (tol {TOL_REMISSION:.0e}); {elapsed:.2?}",
            regimes.join(", ")
        ),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let s = common::synth(4, Sex::Female);
    let bau = build_bau(&s.dataset, &cfg).expect("bau");
    let solver = ScenarioSolver::new(&s.dataset, &bau.surfaces, &cfg).expect("solver");
    let bau_r = solver.bau_reduction().expect("bau reduction");
    if bau_r >= cfg.target_fraction {
        return fail(format!("fixture is on track (reduction {bau_r:.4})"));
    }

    // First grid point meeting the target, scanning the whole bracket.
    let grid_root = |upper: f64, spec: &dyn Fn(f64) -> ScenarioSpec| -> Option<f64> {
        let n = (upper / GRID_STEP).round() as usize;
        let mut first = None;
        for i in 0..=n {
            let x = i as f64 * GRID_STEP;
            let r = solver.reduction(&spec(x)).expect("projection");
            if first.is_none() && r >= cfg.target_fraction {
                first = Some(x);
            }
        }
        first
    };

    let mut lines = Vec::new();
    let mut ok = true;
    let mut component = [0.0; 2];
    for kind in ScenarioKind::SOLVABLE {
        let sol = solver.solve(kind).expect("solve");
        let grid = grid_root(cfg.delta_max, &|x| ScenarioSpec::new(kind, x, &cfg).unwrap());
        let delta = sol.spec.reported_delta();
        let this_ok = grid.is_some_and(|g| (delta - g).abs() <= GRID_STEP)
            && (sol.achieved_reduction - cfg.target_fraction).abs() <= TOL_REDUCTION;
        ok &= this_ok;
        lines.push(format!(
            "{kind} {delta:.5}/{:.3} r={:.7}",
            grid.unwrap_or(f64::NAN),
            sol.achieved_reduction
        ));
        match kind {
            ScenarioKind::Prevention => component[0] = delta,
            ScenarioKind::TreatmentDefault => component[1] = delta,
            _ => {}
        }
    }
    let sol = solver.solve_blended(component[0], component[1]).expect("blended");
    let grid = grid_root(1.0, &|a| ScenarioSpec::blended(a, component[0], component[1], &cfg).unwrap());
    let alpha = sol.spec.reported_delta();
    let this_ok = grid.is_some_and(|g| (alpha - g).abs() <= GRID_STEP)
        && (sol.achieved_reduction - cfg.target_fraction).abs() <= TOL_REDUCTION;
    ok &= this_ok;
    lines.push(format!(
        "blended a={alpha:.5}/{:.3} r={:.7}",
        grid.unwrap_or(f64::NAN),
        sol.achieved_reduction
    ));
    let elapsed = t.elapsed();
    check(
        ok && elapsed < BUDGET_4,
        format!(
            "BAU reduction {bau_r:.4}; bisection/grid: {}; step {GRID_STEP}, tol {TOL_REDUCTION:.0e}; {elapsed:.2?}",
            lines.join("; ")
        ),
    )
}

fn as_bytes(r: &ProjectionResult) -> String {
    let mut r = r.clone();
    r.label.clear();
    serde_json::to_string(&r).expect("serialise")
}

fn criterion_5() -> Outcome {
    let cfg = RunConfig::default();
    let s = common::synth(4, Sex::Female);
    let ds = &s.dataset;
    let bau = build_bau(ds, &cfg).expect("bau");
    let solver = ScenarioSolver::new(ds, &bau.surfaces, &cfg).expect("solver");
    let base = solver.project(&ScenarioSpec::bau(&cfg)).expect("bau run");
    let base_bytes = as_bytes(&base);
    let base_ind = serde_json::to_string(&indicator_series(&[ds], &base, &cfg).unwrap()).unwrap();

    let mut specs: Vec<ScenarioSpec> = ScenarioKind::SOLVABLE
        .into_iter()
        .map(|k| ScenarioSpec::new(k, 0.0, &cfg).unwrap())
        .collect();
    specs.push(ScenarioSpec::blended(0.0, 0.05, 0.02, &cfg).unwrap());
    let mut runs = Vec::new();
    let mut mismatched = Vec::new();
    for spec in &specs {
        let r = solver.project(spec).expect("run");
        let ind = serde_json::to_string(&indicator_series(&[ds], &r, &cfg).unwrap()).unwrap();
        if as_bytes(&r) != base_bytes || ind != base_ind {
            mismatched.push(spec.label().to_string());
        }
        runs.push(r);
    }
    let report = expenditure::savings_report(
        &[ReportStratum {
            costs: &ds.phase_costs,
            bau: &base,
            scenarios: runs.iter().collect(),
        }],
        &cfg,
    )
    .expect("report");
    let bau_totals: Vec<String> = report
        .annual
        .iter()
        .filter(|(l, _, _)| l == &base.label)
        .map(|(_, y, v)| format!("{y}:{v}"))
        .collect();
    for r in &runs {
        let totals: Vec<String> = report
            .annual
            .iter()
            .filter(|(l, _, _)| l == &r.label)
            .map(|(_, y, v)| format!("{y}:{v}"))
            .collect();
        if totals != bau_totals {
            mismatched.push(format!("{} expenditure", r.label));
        }
    }
    let nonzero = report.periods.iter().filter(|p| p.savings != 0.0).count();
    check(
        mismatched.is_empty() && nonzero == 0,
        format!(
            "{} zero-delta scenarios vs BAU: projection, indicator and expenditure serialisations {}",
            specs.len(),
            if mismatched.is_empty() {
                "identical".to_string()
            } else {
                format!("differ for {}", mismatched.join(", "))
            }
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = RunConfig::default();
    let s = common::synth(4, Sex::Female);
    let ds = &s.dataset;
    let bau = build_bau(ds, &cfg).expect("bau");
    let proj = Projector::with_options(ds, &bau.surfaces, &cfg, ProjectionOptions { trace_cohorts: true }).unwrap();
    let prevention = apply_acceleration(&bau.surfaces, &ScenarioSpec::new(ScenarioKind::Prevention, 0.05, &cfg).unwrap());
    let mut worst_closure = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut states = 0usize;
    let mut cells = 0usize;
    for (surfaces, label) in [(&bau.surfaces, "bau"), (&prevention, "prevention")] {
        let r = proj.run(surfaces, label).expect("run");
        cells = r.population.cells().count();
        for cohort in r.cohorts.as_ref().expect("traced") {
            let base = ds.baseline_population[cohort[0].birth_cohort];
            for st in cohort {
                worst_closure = worst_closure.max((st.alive + st.cumulative_deaths - base).abs() / base.max(1.0));
                for sh in &st.disease_occupancy {
                    worst_norm = worst_norm.max((sh.susceptible + sh.diseased - 1.0).abs());
                }
                states += 1;
            }
        }
    }
    let years = cfg.horizon_year - cfg.data_last_year + 1;
    check(
        worst_closure <= TOL_CLOSURE_REL && worst_norm <= TOL_NORMALISATION && cells == N_AGES * years as usize,
        format!(
            "{states} cohort states over a {N_AGES}-age x {years}-year grid, BAU and prevention; closure {worst_closure:.1e} (tol {TOL_CLOSURE_REL:.0e}), normalisation {worst_norm:.1e} (tol {TOL_NORMALISATION:.0e})"
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = RunConfig::default();
    let ds = common::single_disease("stroke");
    let bau = build_bau(&ds, &cfg).expect("bau");
    let solver = ScenarioSolver::new(&ds, &bau.surfaces, &cfg).expect("solver");
    let p1 = cfg.reporting_periods[0];
    let scope = expenditure::ExpenditureScope::from_config(&cfg);

    let kinds = [
        (ScenarioKind::Prevention, 0.0253),
        (ScenarioKind::TreatmentCfrOnly, 0.0141),
        (ScenarioKind::TreatmentDefault, 0.0141),
        (ScenarioKind::TreatmentRemissionOnly, 0.0141),
    ];
    let base = solver.project(&ScenarioSpec::bau(&cfg)).unwrap();
    let base_o = common::oracle(&ds, &bau.surfaces, &bau.surfaces, &cfg);
    let mut worst = 0.0f64;
    let mut engine_cost = Vec::new();
    let mut oracle_cost = Vec::new();
    let mut prev_ok = true;
    let mut cfr_ok = true;
    for (kind, delta) in kinds {
        let spec = ScenarioSpec::new(kind, delta, &cfg).unwrap();
        let r = solver.project(&spec).unwrap();
        let o = common::oracle(&ds, &bau.surfaces, &apply_acceleration(&bau.surfaces, &spec), &cfg);
        for (age, year, n) in r.population.cells() {
            let k = (year - cfg.data_last_year) as usize;
            worst = worst.max(rel(n, o.population[age][k]));
            let d = &r.diseases[0];
            worst = worst
                .max((d.prevalence.get(age, year) - o.prevalence[0][age][k]).abs())
                .max(rel(d.incident.get(age, year), o.incident[0][age][k]))
                .max(rel(d.deaths.get(age, year), o.deaths[0][age][k]));
            let (pe, pb) = (d.prevalence.get(age, year), base.diseases[0].prevalence.get(age, year));
            let (oe, ob) = (o.prevalence[0][age][k], base_o.prevalence[0][age][k]);
            match kind {
                ScenarioKind::Prevention => prev_ok &= pe <= pb && oe <= ob,
                ScenarioKind::TreatmentCfrOnly => cfr_ok &= pe >= pb && oe >= ob,
                _ => {}
            }
        }
        let e = expenditure::project_expenditure(&r, &ds.phase_costs, p1, &scope).unwrap();
        let eo = o.expenditure(&ds.phase_costs, p1, cfg.expenditure_min_age);
        worst = worst.max(rel(e, eo));
        engine_cost.push(e);
        oracle_cost.push(eo);
    }
    // [prevention, cfr_only, treatment_default, remission_only]
    let ordered = |c: &[f64]| c[3] <= c[2] && c[2] <= c[1];
    check(
        prev_ok && cfr_ok && ordered(&engine_cost) && ordered(&oracle_cost) && worst <= TOL_ORACLE_REL,
        format!(
            "prevention prev<=BAU: {prev_ok}; cfr_only prev>=BAU: {cfr_ok}; {p1} cost remission {:.4e} <= default {:.4e} <= cfr {:.4e}; engine vs loop oracle max rel {worst:.1e} (tol {TOL_ORACLE_REL:.0e})",
            engine_cost[3], engine_cost[2], engine_cost[1]
        ),
    )
}

fn criterion_8() -> Outcome {
    let cfg = RunConfig::default();
    let s = common::synth(4, Sex::Female);
    let ds = &s.dataset;
    let bau = build_bau(ds, &cfg).expect("bau");
    let solver = ScenarioSolver::new(ds, &bau.surfaces, &cfg).expect("solver");
    let base = solver.project(&ScenarioSpec::bau(&cfg)).unwrap();
    let scen = solver
        .project(&ScenarioSpec::new(ScenarioKind::Prevention, 0.05, &cfg).unwrap())
        .unwrap();
    let report = expenditure::savings_report(
        &[ReportStratum {
            costs: &ds.phase_costs,
            bau: &base,
            scenarios: vec![&scen],
        }],
        &cfg,
    )
    .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for &p in &cfg.reporting_periods {
        let py_b = person_years(&base, 0, 110, p).unwrap();
        let py_s = person_years(&scen, 0, 110, p).unwrap();
        let a = report.panel(&scen.label, p, Panel::A).unwrap().savings_pct;
        let b = report.panel(&scen.label, p, Panel::B).unwrap().savings_pct;
        ok &= py_s > py_b && b >= a;
        parts.push(format!("{p}: PY {:+.3e}, a {:.3}% b {:.3}%", py_s - py_b, 100.0 * a, 100.0 * b));
    }

    let year = 2030;
    let same = equivalent_age_65(&base, &base, year);
    let mut shifted = base.clone();
    for y in shifted.morbidity.years().collect::<Vec<_>>() {
        for age in (1..N_AGES).rev() {
            let v = base.morbidity.get(age - 1, y);
            shifted.morbidity.set(age, y, v);
        }
    }
    let moved = equivalent_age_65(&base, &shifted, year);
    ok &= same.age == 65.0 && moved.age == 66.0;
    check(
        ok,
        format!(
            "{}; a* identity {}, one-year shift {}",
            parts.join("; "),
            same.age,
            moved.age
        ),
    )
}

fn run_cli(bin: &str, args: &[&str]) -> (bool, Duration) {
    let t = Instant::now();
    let status = Command::new(bin)
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .expect("spawn cli");
    (status.success(), t.elapsed())
}

fn dir_digest(dir: &Path) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.metadata().unwrap().len()))
        .collect();
    v.sort();
    v
}

fn criterion_9() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ncd-pmslt");
    let tmp = tempfile::tempdir().expect("tempdir");
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    let (ok, synth_t) = run_cli(
        bin,
        &["synth", "--out", data_s, "--n-countries", "35", "--diseases", "44"],
    );
    if !ok {
        return fail("synthetic data generation failed".into());
    }
    let mut times = Vec::new();
    let mut digests = Vec::new();
    for jobs in [1usize, 2] {
        let out = tmp.path().join(format!("out{jobs}"));
        let (ok, t) = run_cli(
            bin,
            &["all", "--data-dir", data_s, "--out", out.to_str().unwrap(), "--jobs", &jobs.to_string()],
        );
        if !ok {
            return fail(format!("pipeline with --jobs {jobs} failed"));
        }
        times.push(t);
        digests.push(dir_digest(&out));
        std::fs::remove_dir_all(&out).ok();
    }
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let within_budget = times[0] < BUDGET_9;
    let same = digests[0] == digests[1];
    let faster = times[1] < times[0].mul_f64(0.85);
    let detail = format!(
        "35 countries x 2 sexes x 44 diseases x 6 scenarios: synth {synth_t:.1?}, --jobs 1 {:.1?}, --jobs 2 {:.1?} (budget {BUDGET_9:?}); outputs match: {same}; {cpus} CPU(s)",
        times[0], times[1]
    );
    if within_budget && same && cpus < 2 {
        // Any difference on one CPU is cache or I/O noise, not parallelism.
        return Outcome {
            pass: false,
            detail: format!("{detail}; --jobs scaling cannot be shown on one CPU"),
            environment_limited: true,
        };
    }
    check(within_budget && same && faster, detail)
}

fn main() {
    // libtest flags (e.g. from `cargo test -- --nocapture`) are ignored.
    let only: Option<Vec<usize>> = std::env::var("PMSLT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "acceleration arithmetic", criterion_1),
        (2, "40q30 closed form", criterion_2),
        (3, "remission inversion oracle", criterion_3),
        (4, "bisection vs grid oracle", criterion_4),
        (5, "zero-delta identity", criterion_5),
        (6, "conservation", criterion_6),
        (7, "sign and ordering", criterion_7),
        (8, "panel mechanics", criterion_8),
        (9, "performance envelope", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let out = f();
        let tag = match (out.pass, out.environment_limited) {
            (true, _) => "PASS",
            (false, true) => "FAIL (environment)",
            (false, false) => "FAIL",
        };
        println!("criterion {n} [{name}]: {tag}: {}", out.detail);
        if !out.pass && !out.environment_limited {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
