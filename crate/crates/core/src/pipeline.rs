//! Batch orchestration: load → BAU → solve → scenario projections → reports.
//!
//! Countries are processed in parallel chunks of `jobs` so memory stays
//! bounded; every output file is written in sorted country × sex order, so
//! reruns with the same inputs are byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::{
    load_registry, validate_dataset, CountryDataset, DatasetError, InputPaths, InputTables, Registry,
    Sex,
};
use crate::expenditure::{self, ExpenditureError, ExpenditureReport, ReportStratum};
use crate::grid::N_AGES;
use crate::indicator::{self, IndicatorError, IndicatorSeries};
use crate::pmslt::{ProjectionError, ProjectionResult};
use crate::scenario::{ScenarioError, ScenarioKind, ScenarioSolver, ScenarioSpec};
use crate::trend::{build_bau, Bau, CellStatus, TrendError};

pub const MANIFEST: &str = "manifest.json";
pub const SOLUTIONS: &str = "solutions.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad or inconsistent inputs.
    #[error("{0}")]
    Input(String),
    /// A stage ran before the stage it depends on, or on stale artefacts.
    #[error("{0}")]
    Order(String),
    #[error("{0}")]
    Failed(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 2,
            PipelineError::Order(_) => 3,
            PipelineError::Failed(_) => 1,
        }
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<TrendError> for PipelineError {
    fn from(e: TrendError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<ScenarioError> for PipelineError {
    fn from(e: ScenarioError) -> Self {
        PipelineError::Failed(e.to_string())
    }
}

impl From<ProjectionError> for PipelineError {
    fn from(e: ProjectionError) -> Self {
        PipelineError::Failed(e.to_string())
    }
}

impl From<IndicatorError> for PipelineError {
    fn from(e: IndicatorError) -> Self {
        PipelineError::Failed(e.to_string())
    }
}

impl From<ExpenditureError> for PipelineError {
    fn from(e: ExpenditureError) -> Self {
        PipelineError::Failed(e.to_string())
    }
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Failed(format!("{}: {e}", path.display()))
}

fn csv_write_err(path: &Path) -> impl Fn(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Failed(format!("{}: {e}", path.display()))
}

/// Which strata and scenarios a run covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// `None` means every country in the inputs.
    pub countries: Option<Vec<String>>,
    pub sexes: Vec<Sex>,
    /// Scenario kinds to solve and report (BAU is always included).
    pub scenarios: Vec<ScenarioKind>,
}

impl Default for Selection {
    fn default() -> Self {
        Self {
            countries: None,
            sexes: Sex::ALL.to_vec(),
            scenarios: ScenarioKind::ALL[1..].to_vec(),
        }
    }
}

impl Selection {
    pub fn keeps(&self, country: &str, sex: Sex) -> bool {
        self.sexes.contains(&sex) && self.keeps_country(country)
    }

    pub fn keeps_country(&self, country: &str) -> bool {
        self.countries
            .as_ref()
            .is_none_or(|c| c.iter().any(|x| x == country))
    }

    /// Requested kinds plus the components a blend needs, in canonical order.
    pub fn solve_kinds(&self) -> Vec<ScenarioKind> {
        let blended = self.scenarios.contains(&ScenarioKind::Blended);
        ScenarioKind::ALL
            .into_iter()
            .filter(|k| *k != ScenarioKind::Bau)
            .filter(|k| {
                self.scenarios.contains(k)
                    || (blended
                        && matches!(k, ScenarioKind::Prevention | ScenarioKind::TreatmentDefault))
            })
            .collect()
    }
}

/// Input fingerprint and selection of the last `fit`, plus the solutions it
/// led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_path: Option<String>,
    pub config: RunConfig,
    pub selection: Selection,
    pub output_dir: String,
    /// File name → SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub solutions_sha256: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn input_hashes(paths: &InputPaths) -> Result<BTreeMap<String, String>, PipelineError> {
    paths
        .files()
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((name, sha256_file(p)?))
        })
        .collect()
}

/// Everything a command needs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub inputs: InputPaths,
    pub out: PathBuf,
    pub selection: Selection,
    pub jobs: usize,
    /// Extra BAU trajectory dump; `fit` always writes `trajectories.csv`.
    pub dump_trajectories: Option<PathBuf>,
    pub dump_projection: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stages {
    fit: bool,
    solve: bool,
    report: bool,
}

/// Result of a command that did not fail outright.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub strata: usize,
    /// Solution rows whose target could not be reached.
    pub unreachable: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.unreachable > 0 {
            4
        } else {
            0
        }
    }
}

/// One row of `solutions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub country: String,
    pub sex: Sex,
    pub kind: ScenarioKind,
    /// Decimal log-slope per year; the blend fraction on blended rows.
    pub delta_pp: f64,
    pub achieved_reduction: f64,
    pub iterations: usize,
    pub reachable: bool,
}

/// Solves every kind in `kinds` for one stratum. Unreachable targets become
/// rows at the bracket top with `reachable = false`.
pub fn solve_stratum(
    solver: &ScenarioSolver<'_>,
    kinds: &[ScenarioKind],
    config: &RunConfig,
) -> Result<Vec<SolutionRow>, ScenarioError> {
    let ds = solver.dataset();
    let row = |kind, delta_pp, achieved_reduction, iterations, reachable| SolutionRow {
        country: ds.country.clone(),
        sex: ds.sex,
        kind,
        delta_pp,
        achieved_reduction,
        iterations,
        reachable,
    };
    let mut rows: Vec<SolutionRow> = Vec::new();
    for &kind in kinds {
        let solved = if kind == ScenarioKind::Blended {
            let delta = |k: ScenarioKind| {
                rows.iter()
                    .find(|r| r.kind == k)
                    .map(|r| r.delta_pp)
                    .unwrap_or(config.delta_max)
            };
            let (dp, dt) = (delta(ScenarioKind::Prevention), delta(ScenarioKind::TreatmentDefault));
            solver.solve_blended(dp, dt)
        } else {
            solver.solve(kind)
        };
        rows.push(match solved {
            Ok(s) => row(kind, s.spec.reported_delta(), s.achieved_reduction, s.iterations, true),
            Err(ScenarioError::Unreachable {
                max_reduction,
                delta_max,
                ..
            }) => row(kind, delta_max, max_reduction, 0, false),
            Err(e) => return Err(e),
        });
    }
    Ok(rows)
}

/// Spec that reproduces a solution row, using the stratum's other rows for
/// a blend's components.
pub fn spec_for(row: &SolutionRow, stratum: &[SolutionRow], config: &RunConfig) -> Result<ScenarioSpec, PipelineError> {
    if row.kind != ScenarioKind::Blended {
        return Ok(ScenarioSpec::new(row.kind, row.delta_pp, config)?);
    }
    let component = |k: ScenarioKind| {
        stratum
            .iter()
            .find(|r| r.kind == k)
            .map(|r| r.delta_pp)
            .ok_or_else(|| {
                PipelineError::Order(format!(
                    "{SOLUTIONS}: blended row for {}/{} needs a {k} row",
                    row.country, row.sex
                ))
            })
    };
    Ok(ScenarioSpec::blended(
        row.delta_pp,
        component(ScenarioKind::Prevention)?,
        component(ScenarioKind::TreatmentDefault)?,
        config,
    )?)
}

pub fn read_solutions(path: &Path) -> Result<Vec<SolutionRow>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| PipelineError::Order(format!("{}: {e}; run `solve` first", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<SolutionRow>().enumerate() {
        rows.push(rec.map_err(|e| PipelineError::Input(format!("{}: row {}: {e}", path.display(), i + 2)))?);
    }
    Ok(rows)
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// CSV text produced for one country, appended to the output files in order.
#[derive(Debug, Default)]
struct CountryOutput {
    trajectories: Vec<u8>,
    fit_diagnostics: Vec<u8>,
    remission_diagnostics: Vec<u8>,
    projection: Vec<u8>,
    solutions: Vec<SolutionRow>,
    attainment: Vec<u8>,
    indicator: Vec<u8>,
    expenditure: Vec<u8>,
    panels: Vec<u8>,
    equivalent_age: Vec<u8>,
    summary: BTreeMap<String, BTreeMap<String, BTreeMap<String, SummaryCell>>>,
    strata: usize,
}

/// One Table-2 style cell of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryCell {
    pub delta_pp: Option<f64>,
    pub total_usd: f64,
    pub savings_usd: f64,
    pub savings_pct: f64,
}

const HEADERS: [(&str, &str); 10] = [
    ("trajectories.csv", "country,sex,disease,measure,age,year,value,provenance"),
    (
        "fit_diagnostics.csv",
        "country,sex,disease,measure,age_lo,age_hi,apc,n_obs,residual_sd,fallback",
    ),
    (
        "remission_diagnostics.csv",
        "country,sex,disease,solved,clamped_low,clamped_high,unidentified,max_residual",
    ),
    (
        "projection.csv",
        "country,sex,scenario,age,year,population,person_years,deaths_all,disease,prevalence,deaths_d,incident,remitted",
    ),
    (SOLUTIONS, "country,sex,kind,delta_pp,achieved_reduction,iterations,reachable"),
    (
        "attainment.csv",
        "country,sex,q40_30_baseline,q40_30_target,reduction,status,gap",
    ),
    ("indicator.csv", "country,sex,scenario,year,q40_30"),
    (
        "expenditure.csv",
        "country,sex,scenario,period,total_usd,savings_usd,savings_pct",
    ),
    ("panels.csv", "country,scenario,period,panel,value_pct"),
    ("equivalent_age.csv", "country,scenario,year,a_star"),
];

fn sex_label(sexes: &[Sex]) -> String {
    if sexes.len() == 1 {
        sexes[0].to_string()
    } else {
        "both".into()
    }
}

fn append_fit(buf: &mut CountryOutput, ds: &CountryDataset, bau: &Bau, trajectories: bool) {
    let (c, s) = (&ds.country, ds.sex);
    let surfaces = &bau.surfaces;
    let trajs = surfaces
        .diseases
        .iter()
        .flat_map(|d| [&d.incidence, &d.case_fatality, &d.remission])
        .chain(std::iter::once(&surfaces.all_cause));
    for t in trajs {
        if trajectories {
            for age in 0..N_AGES {
                for year in t.values.years() {
                    let v = t.values.get(age, year);
                    if v.is_nan() {
                        continue;
                    }
                    let _ = writeln!(
                        buf.trajectories,
                        "{c},{s},{},{},{age},{year},{},{}",
                        t.disease,
                        t.measure,
                        fmt(v),
                        t.provenance(year).as_str()
                    );
                }
            }
        }
        for b in &t.bands {
            let _ = writeln!(
                buf.fit_diagnostics,
                "{c},{s},{},{},{},{},{},{},{},{}",
                t.disease,
                t.measure,
                b.band.lo,
                b.band.hi,
                fmt(b.apc),
                b.n_obs,
                fmt(b.residual_sd),
                b.fallback.as_deref().unwrap_or("")
            );
        }
    }
    for r in &bau.remission {
        let _ = writeln!(
            buf.remission_diagnostics,
            "{c},{s},{},{},{},{},{},{}",
            r.disease,
            r.count(CellStatus::Solved),
            r.count(CellStatus::ClampedLow),
            r.count(CellStatus::ClampedHigh),
            r.count(CellStatus::Unidentified),
            fmt(r.max_residual())
        );
    }
}

fn append_projection(buf: &mut CountryOutput, country: &str, sex: Sex, r: &ProjectionResult) {
    for (age, year, n) in r.population.cells() {
        let head = format!(
            "{country},{sex},{},{age},{year},{},{},{}",
            r.label,
            fmt(n),
            fmt(r.person_years.get(age, year)),
            fmt(r.deaths_all.get(age, year)),
        );
        for d in &r.diseases {
            let _ = writeln!(
                buf.projection,
                "{head},{},{},{},{},{}",
                d.disease.code,
                fmt(d.prevalence.get(age, year)),
                fmt(d.deaths.get(age, year)),
                fmt(d.incident.get(age, year)),
                fmt(d.remitted.get(age, year))
            );
        }
    }
}

fn append_indicator(buf: &mut CountryOutput, country: &str, sex: &str, label: &str, s: &IndicatorSeries) {
    for (year, q) in &s.values {
        let _ = writeln!(buf.indicator, "{country},{sex},{label},{year},{}", fmt(*q));
    }
}

fn append_attainment(buf: &mut CountryOutput, country: &str, sex: &str, s: &IndicatorSeries, config: &RunConfig) {
    let a = indicator::classify_attainment(s, config);
    let status = if a.on_track() { "on_track" } else { "off_track" };
    let _ = writeln!(
        buf.attainment,
        "{country},{sex},{},{},{},{status},{}",
        fmt(s.baseline_value),
        fmt(s.get(s.target_year).unwrap_or(f64::NAN)),
        fmt(a.reduction),
        fmt(a.gap)
    );
}

fn append_expenditure(
    buf: &mut CountryOutput,
    country: &str,
    sex: &str,
    report: &ExpenditureReport,
    deltas: &BTreeMap<String, f64>,
) {
    for p in &report.periods {
        let _ = writeln!(
            buf.expenditure,
            "{country},{sex},{},{},{},{},{}",
            p.scenario,
            p.period,
            fmt(p.total),
            fmt(p.savings),
            fmt(100.0 * p.savings_pct)
        );
        buf.summary
            .entry(sex.to_string())
            .or_default()
            .entry(p.scenario.clone())
            .or_default()
            .insert(
                p.period.label(),
                SummaryCell {
                    delta_pp: deltas.get(&p.scenario).copied(),
                    total_usd: p.total,
                    savings_usd: p.savings,
                    savings_pct: 100.0 * p.savings_pct,
                },
            );
    }
}

/// State kept per stratum while a country is processed.
struct StratumWork {
    ds: CountryDataset,
    bau: Bau,
}

impl Pipeline {
    pub fn manifest_path(&self) -> PathBuf {
        self.out.join(MANIFEST)
    }

    fn new_manifest(&self) -> Result<RunManifest, PipelineError> {
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: self.config_path.as_ref().map(|p| p.display().to_string()),
            config: self.config.clone(),
            selection: self.selection.clone(),
            output_dir: self.out.display().to_string(),
            inputs: input_hashes(&self.inputs)?,
            solutions_sha256: None,
        })
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<(), PipelineError> {
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(m).map_err(|e| PipelineError::Failed(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(write_err(&path))
    }

    /// Loads the manifest and checks it still describes the current inputs.
    pub fn check_manifest(&self) -> Result<RunManifest, PipelineError> {
        let path = self.manifest_path();
        let text = std::fs::read_to_string(&path).map_err(|_| {
            PipelineError::Order(format!("{} not found; run `fit` first", path.display()))
        })?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Order(format!("{}: unreadable manifest: {e}", path.display())))?;
        if m.inputs != input_hashes(&self.inputs)? {
            return Err(PipelineError::Order(format!(
                "{}: inputs changed since `fit`; rerun `fit`",
                path.display()
            )));
        }
        if m.config != self.config {
            return Err(PipelineError::Order(format!(
                "{}: configuration changed since `fit`; rerun `fit`",
                path.display()
            )));
        }
        Ok(m)
    }

    /// Reads the selected countries. With `all_sexes`, unselected sexes are
    /// kept as a third element: they only contribute to envelope scaling.
    #[allow(clippy::type_complexity)]
    fn load(
        &self,
        all_sexes: bool,
    ) -> Result<(Registry, InputTables, Vec<(String, Vec<Sex>, Vec<Sex>)>), PipelineError> {
        self.config
            .validate()
            .map_err(|e| PipelineError::Input(e.to_string()))?;
        let registry = load_registry(&self.inputs.registry)?;
        info!("reading inputs from {}", self.inputs.rates.display());
        let sel = &self.selection;
        let tables = InputTables::read_filtered(&self.inputs, |c, s| {
            sel.keeps(c, s) || (all_sexes && sel.keeps_country(c))
        })?;
        let mut countries: BTreeMap<String, (Vec<Sex>, Vec<Sex>)> = BTreeMap::new();
        for (c, s) in tables.strata() {
            let entry = countries.entry(c.clone()).or_default();
            if sel.keeps(&c, s) {
                entry.0.push(s);
            } else {
                entry.1.push(s);
            }
        }
        countries.retain(|_, (selected, _)| !selected.is_empty());
        if let Some(wanted) = &self.selection.countries {
            for c in wanted {
                if !countries.contains_key(c) {
                    return Err(PipelineError::Input(format!(
                        "{}: no rows for country `{c}`",
                        self.inputs.rates.display()
                    )));
                }
            }
        }
        if countries.is_empty() {
            return Err(PipelineError::Input(format!(
                "{}: no strata match the selection",
                self.inputs.rates.display()
            )));
        }
        Ok((
            registry,
            tables,
            countries.into_iter().map(|(c, (s, o))| (c, s, o)).collect(),
        ))
    }

    pub fn fit(&self) -> Result<Outcome, PipelineError> {
        self.execute(
            Stages {
                fit: true,
                solve: false,
                report: false,
            },
            None,
        )
    }

    pub fn solve(&self) -> Result<Outcome, PipelineError> {
        self.check_manifest()?;
        self.execute(
            Stages {
                fit: false,
                solve: true,
                report: false,
            },
            None,
        )
    }

    pub fn report(&self) -> Result<Outcome, PipelineError> {
        let m = self.check_manifest()?;
        let path = self.out.join(SOLUTIONS);
        if !path.exists() {
            return Err(PipelineError::Order(format!(
                "{} not found; run `solve` first",
                path.display()
            )));
        }
        if m.solutions_sha256.as_deref() != Some(sha256_file(&path)?.as_str()) {
            return Err(PipelineError::Order(format!(
                "{} is stale relative to {MANIFEST}; rerun `solve`",
                path.display()
            )));
        }
        let rows = read_solutions(&path)?;
        self.execute(
            Stages {
                fit: false,
                solve: false,
                report: true,
            },
            Some(rows),
        )
    }

    pub fn all(&self) -> Result<Outcome, PipelineError> {
        self.execute(
            Stages {
                fit: true,
                solve: true,
                report: true,
            },
            None,
        )
    }

    fn execute(&self, stages: Stages, prior: Option<Vec<SolutionRow>>) -> Result<Outcome, PipelineError> {
        std::fs::create_dir_all(&self.out).map_err(write_err(&self.out))?;
        let (registry, tables, countries) = self.load(stages.report)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| PipelineError::Failed(e.to_string()))?;

        let target = |name: &str| -> Option<PathBuf> {
            let wanted = match name {
                "trajectories.csv" if self.dump_trajectories.is_some() => {
                    return self.dump_trajectories.clone()
                }
                "projection.csv" if stages.solve || stages.report => return self.dump_projection.clone(),
                "trajectories.csv" | "fit_diagnostics.csv" | "remission_diagnostics.csv" => stages.fit,
                "projection.csv" => false,
                "solutions.csv" | "attainment.csv" => stages.solve,
                _ => stages.report,
            };
            wanted.then(|| self.out.join(name))
        };
        let mut files: BTreeMap<&str, std::io::BufWriter<File>> = BTreeMap::new();
        for (name, header) in HEADERS {
            if let Some(path) = target(name) {
                let mut w = std::io::BufWriter::new(File::create(&path).map_err(write_err(&path))?);
                writeln!(w, "{header}").map_err(write_err(&path))?;
                files.insert(name, w);
            }
        }
        let solutions_path = self.out.join(SOLUTIONS);
        let mut solutions_writer = if stages.solve {
            files.remove(SOLUTIONS);
            Some(csv::Writer::from_path(&solutions_path).map_err(csv_write_err(&solutions_path))?)
        } else {
            None
        };

        let mut summary: BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, SummaryCell>>>> =
            BTreeMap::new();
        let mut outcome = Outcome::default();
        let chunk = self.jobs.max(1);
        for group in countries.chunks(chunk) {
            let outputs: Vec<Result<CountryOutput, PipelineError>> = pool.install(|| {
                group
                    .par_iter()
                    .map(|(country, sexes, others)| {
                        self.process_country(&tables, &registry, country, sexes, others, stages, prior.as_deref())
                    })
                    .collect()
            });
            for ((country, _, _), out) in group.iter().zip(outputs) {
                let out = out?;
                outcome.strata += out.strata;
                let parts: [(&str, &Vec<u8>); 9] = [
                    ("trajectories.csv", &out.trajectories),
                    ("fit_diagnostics.csv", &out.fit_diagnostics),
                    ("remission_diagnostics.csv", &out.remission_diagnostics),
                    ("projection.csv", &out.projection),
                    ("attainment.csv", &out.attainment),
                    ("indicator.csv", &out.indicator),
                    ("expenditure.csv", &out.expenditure),
                    ("panels.csv", &out.panels),
                    ("equivalent_age.csv", &out.equivalent_age),
                ];
                for (name, bytes) in parts {
                    if let Some(w) = files.get_mut(name) {
                        w.write_all(bytes).map_err(|e| PipelineError::Failed(format!("{name}: {e}")))?;
                    }
                }
                if let Some(w) = solutions_writer.as_mut() {
                    for r in &out.solutions {
                        if !r.reachable {
                            outcome.unreachable += 1;
                            warn!(
                                "{}/{} {}: target unreachable (max reduction {:.4})",
                                r.country, r.sex, r.kind, r.achieved_reduction
                            );
                        }
                        w.serialize(r).map_err(csv_write_err(&solutions_path))?;
                    }
                }
                if stages.report {
                    summary.insert(country.clone(), out.summary);
                }
                info!("{country}: done");
            }
        }
        for (name, mut w) in files {
            w.flush().map_err(|e| PipelineError::Failed(format!("{name}: {e}")))?;
        }
        if let Some(mut w) = solutions_writer {
            w.flush().map_err(write_err(&solutions_path))?;
        }
        if stages.report {
            let path = self.out.join("summary.json");
            let text =
                serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Failed(e.to_string()))?;
            std::fs::write(&path, text + "\n").map_err(write_err(&path))?;
        }
        if stages.report && !stages.solve {
            // Unreachable rows carried over from `solve` still count.
            outcome.unreachable = prior.iter().flatten().filter(|r| !r.reachable).count();
        }

        if stages.fit {
            let mut m = self.new_manifest()?;
            if stages.solve {
                m.solutions_sha256 = Some(sha256_file(&solutions_path)?);
            }
            self.write_manifest(&m)?;
        } else if stages.solve {
            let mut m = self.check_manifest()?;
            m.selection = self.selection.clone();
            m.solutions_sha256 = Some(sha256_file(&solutions_path)?);
            self.write_manifest(&m)?;
        }
        Ok(outcome)
    }

    fn process_country(
        &self,
        tables: &InputTables,
        registry: &Registry,
        country: &str,
        sexes: &[Sex],
        others: &[Sex],
        stages: Stages,
        prior: Option<&[SolutionRow]>,
    ) -> Result<CountryOutput, PipelineError> {
        let config = &self.config;
        let mut out = CountryOutput {
            strata: sexes.len(),
            ..Default::default()
        };
        let mut work = Vec::with_capacity(sexes.len());
        for &sex in sexes {
            let ds = tables.dataset(registry, country, sex, config)?;
            let report = validate_dataset(&ds);
            for note in &report.entries {
                log::debug!("{country}/{sex}: {note}");
            }
            let bau = build_bau(&ds, config)?;
            let fallbacks = bau.fallbacks();
            for (disease, measure, band, reason) in &fallbacks {
                log::debug!("{country}/{sex}: {disease} {measure} {}-{}: {reason}", band.lo, band.hi);
            }
            if !fallbacks.is_empty() {
                info!("{country}/{sex}: {} age bands fell back to a flat trend", fallbacks.len());
            }
            if stages.fit {
                append_fit(&mut out, &ds, &bau, true);
            } else if self.dump_trajectories.is_some() {
                append_fit(&mut out, &ds, &bau, true);
                out.fit_diagnostics.clear();
                out.remission_diagnostics.clear();
            }
            work.push(StratumWork { ds, bau });
        }
        if !(stages.solve || stages.report) {
            return Ok(out);
        }

        // Solutions per stratum, then BAU and scenario projections.
        let mut projections: Vec<Vec<ProjectionResult>> = Vec::with_capacity(work.len());
        let mut stratum_rows: Vec<Vec<SolutionRow>> = Vec::with_capacity(work.len());
        for w in &work {
            let solver = ScenarioSolver::new(&w.ds, &w.bau.surfaces, config)?;
            let rows = if stages.solve {
                let rows = solve_stratum(&solver, &self.selection.solve_kinds(), config)?;
                out.solutions.extend(rows.iter().cloned());
                rows
            } else {
                let rows: Vec<SolutionRow> = prior
                    .unwrap_or(&[])
                    .iter()
                    .filter(|r| r.country == w.ds.country && r.sex == w.ds.sex)
                    .cloned()
                    .collect();
                for k in self.selection.solve_kinds() {
                    if !rows.iter().any(|r| r.kind == k) {
                        return Err(PipelineError::Order(format!(
                            "{SOLUTIONS} has no {k} row for {}/{}; rerun `solve`",
                            w.ds.country, w.ds.sex
                        )));
                    }
                }
                rows
            };
            let mut results = vec![solver.project(&ScenarioSpec::bau(config))?];
            if stages.report || self.dump_projection.is_some() {
                for k in &self.selection.scenarios {
                    let row = rows.iter().find(|r| r.kind == *k).expect("checked above");
                    results.push(solver.project(&spec_for(row, &rows, config)?)?);
                }
            }
            if self.dump_projection.is_some() {
                for r in &results {
                    append_projection(&mut out, country, w.ds.sex, r);
                }
            }
            projections.push(results);
            stratum_rows.push(rows);
        }

        // Indicator and attainment by sex, then sexes combined.
        let datasets: Vec<&CountryDataset> = work.iter().map(|w| &w.ds).collect();
        let n_runs = projections[0].len();
        let combined: Option<Vec<ProjectionResult>> = if work.len() > 1 {
            Some(
                (0..n_runs)
                    .map(|i| {
                        let parts: Vec<&ProjectionResult> = projections.iter().map(|p| &p[i]).collect();
                        ProjectionResult::combine(&parts, &projections[0][i].label)
                    })
                    .collect::<Result<_, _>>()?,
            )
        } else {
            None
        };
        for (w, runs) in work.iter().zip(&projections) {
            let sex = w.ds.sex.to_string();
            for (i, r) in runs.iter().enumerate() {
                let series = indicator::indicator_series(&[&w.ds], r, config)?;
                if i == 0 && stages.solve {
                    append_attainment(&mut out, country, &sex, &series, config);
                }
                if stages.report {
                    append_indicator(&mut out, country, &sex, &r.label, &series);
                }
            }
        }
        if let Some(comb) = &combined {
            for (i, r) in comb.iter().enumerate() {
                let series = indicator::indicator_series(&datasets, r, config)?;
                if i == 0 && stages.solve {
                    append_attainment(&mut out, country, "both", &series, config);
                }
                if stages.report {
                    append_indicator(&mut out, country, "both", &r.label, &series);
                }
            }
        }
        if !stages.report {
            return Ok(out);
        }

        // Expenditure: scale costs to the country envelope under BAU.
        let first_year = projections[0][0].first_year();
        let last_year = projections[0][0].last_year();
        let k = match work[0].ds.expenditure_envelope {
            Some(env) => {
                let year = env.year.clamp(first_year, last_year);
                if year != env.year {
                    warn!("{country}: envelope year {} outside projection; scaling on {year}", env.year);
                }
                // Unselected sexes still share the country envelope.
                let mut extra = Vec::with_capacity(others.len());
                for &sex in others {
                    let ds = tables.dataset(registry, country, sex, config)?;
                    let bau = build_bau(&ds, config)?;
                    let solver = ScenarioSolver::new(&ds, &bau.surfaces, config)?;
                    let r = solver.project(&ScenarioSpec::bau(config))?;
                    extra.push((r, ds.phase_costs));
                }
                let strata: Vec<_> = work
                    .iter()
                    .zip(&projections)
                    .map(|(w, p)| (&p[0], &w.ds.phase_costs))
                    .chain(extra.iter().map(|(r, c)| (r, c)))
                    .collect();
                match expenditure::envelope_factor(&strata, env.total, year) {
                    Ok(k) => k,
                    Err(ExpenditureError::ZeroModelled(_)) => {
                        warn!("{country}: modelled expenditure is zero; costs left unscaled");
                        1.0
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            None => 1.0,
        };
        let costs: Vec<_> = work.iter().map(|w| w.ds.phase_costs.scaled(k)).collect();
        let deltas_for = |rows: &[SolutionRow]| -> BTreeMap<String, f64> {
            let mut m: BTreeMap<String, f64> = rows.iter().map(|r| (r.kind.to_string(), r.delta_pp)).collect();
            m.insert(ScenarioKind::Bau.to_string(), 0.0);
            m
        };
        for (((w, runs), c), rows) in work.iter().zip(&projections).zip(&costs).zip(&stratum_rows) {
            let report = expenditure::savings_report(
                &[ReportStratum {
                    costs: c,
                    bau: &runs[0],
                    scenarios: runs[1..].iter().collect(),
                }],
                config,
            )?;
            append_expenditure(&mut out, country, &w.ds.sex.to_string(), &report, &deltas_for(rows));
        }
        let strata: Vec<ReportStratum<'_>> = projections
            .iter()
            .zip(&costs)
            .map(|(runs, c)| ReportStratum {
                costs: c,
                bau: &runs[0],
                scenarios: runs[1..].iter().collect(),
            })
            .collect();
        let report = expenditure::savings_report(&strata, config)?;
        if work.len() > 1 {
            append_expenditure(&mut out, country, "both", &report, &BTreeMap::new());
        }
        for p in &report.panels {
            let _ = writeln!(
                out.panels,
                "{country},{},{},{},{}",
                p.scenario,
                p.period,
                p.panel,
                fmt(100.0 * p.savings_pct)
            );
        }
        for e in &report.equivalent_age {
            let _ = writeln!(out.equivalent_age, "{country},{},{},{}", e.scenario, e.year, fmt(e.a_star));
        }
        if report.floored_cells > 0 {
            info!(
                "{country} ({}): {} cells floored the prevalent-phase count",
                sex_label(sexes),
                report.floored_cells
            );
        }
        Ok(out)
    }
}
