//! CSV ingestion and canonical serialisation.
//!
//! Long-format files with a required header; columns are located by name so
//! extra columns are tolerated. Floats use `.` as the decimal separator.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{
    derive_case_fatality, AgeGroup, CountryDataset, DatasetError, Diagnostic, DiagnosticKind,
    DiseaseId, DiseaseRates, Envelope, Measure, RateSeries, Registry, Sex,
};
use crate::config::RunConfig;
use crate::expenditure::{DiseaseCosts, Phase, PhaseCostTable};
use crate::grid::{AgeYearGrid, MAX_AGE, N_AGES};

/// Disease code used for all-cause rows in `rates.csv`.
pub const ALL_CAUSE_CODE: &str = "all";

/// Locations of the input files for a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub rates: PathBuf,
    pub population: PathBuf,
    pub registry: PathBuf,
    pub envelope: Option<PathBuf>,
    pub phase_costs: Option<PathBuf>,
}

impl InputPaths {
    /// Standard file names inside `dir`; optional files are used when present.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        Self {
            rates: dir.join("rates.csv"),
            population: dir.join("population.csv"),
            registry: dir.join("registry.csv"),
            envelope: optional("envelope.csv"),
            phase_costs: optional("phase_costs.csv"),
        }
    }

    /// Every existing input file, in a fixed order.
    pub fn files(&self) -> Vec<&Path> {
        let mut v = vec![
            self.registry.as_path(),
            self.rates.as_path(),
            self.population.as_path(),
        ];
        v.extend(self.envelope.as_deref());
        v.extend(self.phase_costs.as_deref());
        v
    }
}

#[derive(Debug, Clone, Copy)]
struct RateRow {
    disease: u32,
    measure: Measure,
    lo: u8,
    hi: u8,
    year: i16,
    value: f64,
    line: u32,
}

#[derive(Debug, Clone, Copy)]
struct PopRow {
    lo: u8,
    hi: u8,
    year: i16,
    count: f64,
    line: u32,
}

#[derive(Debug, Clone, Copy)]
struct CostRow {
    disease: u32,
    phase: Phase,
    lo: u8,
    hi: u8,
    cost: f64,
    line: u32,
}

type StratumKey = (String, Sex);

/// Parsed input files, bucketed by country × sex, before expansion.
#[derive(Debug, Default)]
pub struct InputTables {
    paths: Option<InputPaths>,
    disease_names: Vec<String>,
    rates: HashMap<StratumKey, Vec<RateRow>>,
    population: HashMap<StratumKey, Vec<PopRow>>,
    envelope: HashMap<String, Vec<(i32, f64, u32)>>,
    costs: HashMap<StratumKey, Vec<CostRow>>,
}

const MAX_COLUMNS: usize = 8;

struct CsvTable {
    path: String,
    reader: csv::Reader<File>,
    columns: Vec<usize>,
}

impl CsvTable {
    fn open(path: &Path, required: &[&str]) -> Result<Self, DatasetError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| DatasetError::Io {
            path: display.clone(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader
            .byte_headers()
            .map_err(|e| DatasetError::Schema {
                path: display.clone(),
                message: e.to_string(),
            })?
            .clone();
        let mut columns = Vec::with_capacity(required.len());
        for name in required {
            let idx = headers
                .iter()
                .position(|h| h == name.as_bytes())
                .ok_or_else(|| DatasetError::Schema {
                    path: display.clone(),
                    message: format!("missing required column `{name}`"),
                })?;
            columns.push(idx);
        }
        Ok(Self {
            path: display,
            reader,
            columns,
        })
    }

    /// Calls `f(line, fields)` for each data row; fields follow `required` order.
    fn for_each(
        &mut self,
        mut f: impl FnMut(u64, &[&str]) -> Result<(), String>,
    ) -> Result<(), DatasetError> {
        let mut rec = csv::ByteRecord::new();
        let n = self.columns.len();
        assert!(n <= MAX_COLUMNS);
        loop {
            let more = self.reader.read_byte_record(&mut rec).map_err(|e| {
                let row = e.position().map(|p| p.line()).unwrap_or(0);
                DatasetError::Parse {
                    path: self.path.clone(),
                    row,
                    message: e.to_string(),
                }
            })?;
            if !more {
                return Ok(());
            }
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let mut fields = [""; MAX_COLUMNS];
            for (slot, &c) in fields.iter_mut().zip(&self.columns) {
                let raw = rec.get(c).unwrap_or_default();
                *slot = std::str::from_utf8(raw).map_err(|_| DatasetError::Parse {
                    path: self.path.clone(),
                    row: line,
                    message: "invalid UTF-8".into(),
                })?;
            }
            f(line, &fields[..n]).map_err(|message| DatasetError::Parse {
                path: self.path.clone(),
                row: line,
                message,
            })?;
        }
    }
}

fn parse_f64(s: &str, column: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|_| format!("column `{column}`: `{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("column `{column}`: non-finite value `{s}`"));
    }
    Ok(v)
}

fn parse_age(s: &str, column: &str) -> Result<u8, String> {
    let v: usize = s
        .parse()
        .map_err(|_| format!("column `{column}`: `{s}` is not an age"))?;
    if v > MAX_AGE {
        return Err(format!("column `{column}`: age {v} above {MAX_AGE}"));
    }
    Ok(v as u8)
}

fn parse_band(lo: &str, hi: &str) -> Result<(u8, u8), String> {
    let lo = parse_age(lo, "age_lo")?;
    let hi = parse_age(hi, "age_hi")?;
    if hi < lo {
        return Err(format!("age_hi {hi} below age_lo {lo}"));
    }
    Ok((lo, hi))
}

fn parse_year(s: &str) -> Result<i16, String> {
    s.parse()
        .map_err(|_| format!("column `year`: `{s}` is not a year"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

/// Reads `registry.csv` (`code,label,ncd4_member,disability_weight`).
pub fn load_registry(path: &Path) -> Result<Registry, DatasetError> {
    let mut table = CsvTable::open(path, &["code", "label", "ncd4_member", "disability_weight"])?;
    let mut diseases = Vec::new();
    table.for_each(|_, f| {
        let disability_weight = if f[3].is_empty() {
            None
        } else {
            Some(parse_f64(f[3], "disability_weight")?)
        };
        diseases.push(DiseaseId {
            code: f[0].to_string(),
            label: f[1].to_string(),
            ncd4_member: parse_bool(f[2])?,
            disability_weight,
        });
        Ok(())
    })?;
    Registry::new(diseases)
}

impl InputTables {
    /// Reads every input file, keeping only strata accepted by `keep`.
    pub fn read_filtered(
        paths: &InputPaths,
        keep: impl Fn(&str, Sex) -> bool,
    ) -> Result<Self, DatasetError> {
        let mut tables = InputTables {
            paths: Some(paths.clone()),
            ..Default::default()
        };
        let mut disease_index: HashMap<String, u32> = HashMap::new();
        let mut intern = |names: &mut Vec<String>, code: &str| -> u32 {
            if let Some(&i) = disease_index.get(code) {
                return i;
            }
            let i = names.len() as u32;
            names.push(code.to_string());
            disease_index.insert(code.to_string(), i);
            i
        };

        let mut t = CsvTable::open(
            &paths.rates,
            &["country", "sex", "disease", "measure", "age_lo", "age_hi", "year", "value"],
        )?;
        let mut cache: Option<(StratumKey, bool)> = None;
        let names = &mut tables.disease_names;
        let rates = &mut tables.rates;
        t.for_each(|line, f| {
            let sex: Sex = f[1].parse()?;
            let keep_row = match &cache {
                Some(((c, s), k)) if c == f[0] && *s == sex => *k,
                _ => {
                    let k = keep(f[0], sex);
                    cache = Some(((f[0].to_string(), sex), k));
                    k
                }
            };
            let measure: Measure = f[3].parse()?;
            let (lo, hi) = parse_band(f[4], f[5])?;
            let year = parse_year(f[6])?;
            let value = parse_f64(f[7], "value")?;
            if !keep_row {
                return Ok(());
            }
            let disease = intern(names, f[2]);
            rates
                .entry((f[0].to_string(), sex))
                .or_default()
                .push(RateRow {
                    disease,
                    measure,
                    lo,
                    hi,
                    year,
                    value,
                    line: line as u32,
                });
            Ok(())
        })?;

        let mut t = CsvTable::open(
            &paths.population,
            &["country", "sex", "age_lo", "age_hi", "year", "count"],
        )?;
        let population = &mut tables.population;
        t.for_each(|line, f| {
            let sex: Sex = f[1].parse()?;
            let (lo, hi) = parse_band(f[2], f[3])?;
            let year = parse_year(f[4])?;
            let count = parse_f64(f[5], "count")?;
            if count < 0.0 {
                return Err(format!("negative population count {count}"));
            }
            if keep(f[0], sex) {
                population
                    .entry((f[0].to_string(), sex))
                    .or_default()
                    .push(PopRow {
                        lo,
                        hi,
                        year,
                        count,
                        line: line as u32,
                    });
            }
            Ok(())
        })?;

        if let Some(path) = &paths.envelope {
            let mut t = CsvTable::open(path, &["country", "year", "total_expenditure_usd"])?;
            let envelope = &mut tables.envelope;
            t.for_each(|line, f| {
                let year = parse_year(f[1])? as i32;
                let total = parse_f64(f[2], "total_expenditure_usd")?;
                if total < 0.0 {
                    return Err(format!("negative envelope {total}"));
                }
                envelope
                    .entry(f[0].to_string())
                    .or_default()
                    .push((year, total, line as u32));
                Ok(())
            })?;
        }

        if let Some(path) = &paths.phase_costs {
            let mut t = CsvTable::open(
                path,
                &["country", "sex", "disease", "age_lo", "age_hi", "phase", "cost_usd"],
            )?;
            let names = &mut tables.disease_names;
            let costs = &mut tables.costs;
            t.for_each(|line, f| {
                let sex: Sex = f[1].parse()?;
                let (lo, hi) = parse_band(f[3], f[4])?;
                let phase: Phase = f[5].parse()?;
                let cost = parse_f64(f[6], "cost_usd")?;
                if cost < 0.0 {
                    return Err(format!("negative cost {cost}"));
                }
                if keep(f[0], sex) {
                    let disease = intern(names, f[2]);
                    costs
                        .entry((f[0].to_string(), sex))
                        .or_default()
                        .push(CostRow {
                            disease,
                            phase,
                            lo,
                            hi,
                            cost,
                            line: line as u32,
                        });
                }
                Ok(())
            })?;
        }
        Ok(tables)
    }

    pub fn read(paths: &InputPaths) -> Result<Self, DatasetError> {
        Self::read_filtered(paths, |_, _| true)
    }

    /// Country × sex strata present in the rates file, sorted.
    pub fn strata(&self) -> Vec<(String, Sex)> {
        let set: BTreeSet<_> = self.rates.keys().cloned().collect();
        set.into_iter().collect()
    }

    fn rates_path(&self) -> String {
        self.paths
            .as_ref()
            .map(|p| p.rates.display().to_string())
            .unwrap_or_else(|| "rates.csv".into())
    }

    /// Expands and validates one stratum.
    pub fn dataset(
        &self,
        registry: &Registry,
        country: &str,
        sex: Sex,
        config: &RunConfig,
    ) -> Result<CountryDataset, DatasetError> {
        let (y0, y1) = (config.data_first_year, config.data_last_year);
        let key = (country.to_string(), sex);
        let rows = self
            .rates
            .get(&key)
            .ok_or_else(|| DatasetError::EmptyStratum {
                what: "rate",
                country: country.into(),
                sex,
            })?;
        let rates_path = self.rates_path();
        let mut notes = Vec::new();

        // Series slots: one per registered disease × measure plus all-cause.
        let n = registry.len();
        let measures = [
            Measure::Incidence,
            Measure::Prevalence,
            Measure::CauseMortality,
            Measure::Remission,
            Measure::YldRate,
        ];
        let slot_of = |m: Measure| measures.iter().position(|x| *x == m);
        let mut slots: Vec<Option<(AgeYearGrid, BTreeSet<AgeGroup>)>> =
            vec![None; n * measures.len() + 1];
        let all_slot = n * measures.len();
        let disease_to_registry: Vec<Option<usize>> = self
            .disease_names
            .iter()
            .map(|c| registry.position(c))
            .collect();
        let mut ignored: BTreeSet<String> = BTreeSet::new();

        for row in rows {
            let year = row.year as i32;
            if year < y0 || year > y1 {
                continue;
            }
            let code = &self.disease_names[row.disease as usize];
            let slot = if row.measure == Measure::AllCauseMortality {
                all_slot
            } else if row.measure == Measure::CaseFatality {
                ignored.insert(format!("case_fatality rows for `{code}` (derived at load)"));
                continue;
            } else {
                match disease_to_registry[row.disease as usize] {
                    Some(d) => d * measures.len() + slot_of(row.measure).expect("measure slot"),
                    None => {
                        ignored.insert(format!("rows for unregistered disease `{code}`"));
                        continue;
                    }
                }
            };
            let cell_err = |age: usize, message: String| DatasetError::Cell {
                disease: code.clone(),
                measure: row.measure,
                age,
                year,
                message: format!("{message} ({rates_path} row {})", row.line),
            };
            if row.value < 0.0 {
                return Err(cell_err(row.lo as usize, format!("negative value {}", row.value)));
            }
            if row.measure.is_proportion() && row.value > 1.0 {
                return Err(cell_err(
                    row.lo as usize,
                    format!("proportion {} above 1", row.value),
                ));
            }
            let (grid, groups) =
                slots[slot].get_or_insert_with(|| (AgeYearGrid::missing(y0, y1), BTreeSet::new()));
            groups.insert(AgeGroup::new(row.lo as usize, row.hi as usize));
            for age in row.lo as usize..=row.hi as usize {
                if !grid.is_missing(age, year) {
                    return Err(cell_err(age, "duplicate cell".into()));
                }
                grid.set(age, year, row.value);
            }
        }
        for what in ignored {
            notes.push(Diagnostic::new(DiagnosticKind::Ignored { what }));
        }

        let finish = |slot: Option<(AgeYearGrid, BTreeSet<AgeGroup>)>,
                      code: &str,
                      measure: Measure|
         -> Result<Option<RateSeries>, DatasetError> {
            let Some((mut grid, groups)) = slot else {
                return Ok(None);
            };
            let groups: Vec<AgeGroup> = groups.into_iter().collect();
            if let Some(w) = groups.windows(2).find(|w| w[0].hi >= w[1].lo) {
                return Err(DatasetError::Invalid(format!(
                    "{code} {measure}: overlapping age groups {}-{} and {}-{}",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
            // Hold the oldest band constant up to the terminal age.
            let top = groups.iter().map(|g| g.hi).max().unwrap_or(MAX_AGE);
            for year in y0..=y1 {
                let v = grid.get(top, year);
                for age in top + 1..N_AGES {
                    grid.set(age, year, v);
                }
            }
            Ok(Some(RateSeries {
                disease: code.to_string(),
                measure,
                values: grid,
                age_groups: groups,
            }))
        };

        let mut diseases = Vec::with_capacity(n);
        let mut slots_iter = slots.into_iter();
        for d in registry.diseases() {
            let mut take = |m: Measure| finish(slots_iter.next().flatten(), &d.code, m);
            let incidence = take(Measure::Incidence)?;
            let prevalence = take(Measure::Prevalence)?;
            let cause_mortality = take(Measure::CauseMortality)?;
            let remission = take(Measure::Remission)?;
            let yld_rate = take(Measure::YldRate)?;
            let or_missing =
                |s: Option<RateSeries>, m| s.unwrap_or_else(|| RateSeries::missing(&d.code, m, y0, y1));
            let incidence = or_missing(incidence, Measure::Incidence);
            let prevalence = or_missing(prevalence, Measure::Prevalence);
            let cause_mortality = or_missing(cause_mortality, Measure::CauseMortality);

            for (age, year, p) in prevalence.values.cells() {
                let m = cause_mortality.values.get(age, year);
                if p == 0.0 && m > 0.0 {
                    return Err(DatasetError::Cell {
                        disease: d.code.clone(),
                        measure: Measure::Prevalence,
                        age,
                        year,
                        message: format!("prevalence is 0 but cause mortality is {m}"),
                    });
                }
            }
            let (case_fatality, zeroed) = derive_case_fatality(&prevalence, &cause_mortality);
            for (age, year) in zeroed {
                notes.push(Diagnostic::new(DiagnosticKind::CfrZeroed {
                    disease: d.code.clone(),
                    age,
                    year,
                }));
            }
            diseases.push(DiseaseRates {
                disease: d.clone(),
                incidence,
                prevalence,
                cause_mortality,
                case_fatality,
                remission,
                yld_rate,
            });
        }
        let all_cause = finish(slots_iter.next().flatten(), ALL_CAUSE_CODE, Measure::AllCauseMortality)?
            .unwrap_or_else(|| {
                RateSeries::missing(ALL_CAUSE_CODE, Measure::AllCauseMortality, y0, y1)
            });

        let baseline_population = self.expand_population(&key, y1)?;
        let expenditure_envelope = self.pick_envelope(country, config, &mut notes);
        let phase_costs = self.expand_costs(&key, registry, config, &mut notes)?;

        Ok(CountryDataset {
            country: country.to_string(),
            sex,
            first_year: y0,
            last_year: y1,
            baseline_population,
            diseases,
            all_cause,
            expenditure_envelope,
            phase_costs,
            load_notes: notes,
        })
    }

    fn expand_population(&self, key: &StratumKey, year: i32) -> Result<Vec<f64>, DatasetError> {
        let path = self
            .paths
            .as_ref()
            .map(|p| p.population.display().to_string())
            .unwrap_or_default();
        let rows = self
            .population
            .get(key)
            .ok_or_else(|| DatasetError::EmptyStratum {
                what: "population",
                country: key.0.clone(),
                sex: key.1,
            })?;
        let mut pop = vec![f64::NAN; N_AGES];
        let mut any = false;
        for r in rows.iter().filter(|r| r.year as i32 == year) {
            any = true;
            let width = (r.hi - r.lo + 1) as f64;
            for age in r.lo as usize..=r.hi as usize {
                if !pop[age].is_nan() {
                    return Err(DatasetError::Parse {
                        path: path.clone(),
                        row: r.line as u64,
                        message: format!("age {age} covered twice"),
                    });
                }
                pop[age] = r.count / width;
            }
        }
        if !any {
            return Err(DatasetError::EmptyStratum {
                what: "baseline-year population",
                country: key.0.clone(),
                sex: key.1,
            });
        }
        // Uncovered ages stay NaN here and are reported by validation.
        Ok(pop)
    }

    fn pick_envelope(
        &self,
        country: &str,
        config: &RunConfig,
        notes: &mut Vec<Diagnostic>,
    ) -> Option<Envelope> {
        let rows = self.envelope.get(country)?;
        let in_range = |y: i32| y >= config.data_last_year && y <= config.horizon_year;
        let pick = rows
            .iter()
            .find(|r| r.0 == config.data_last_year)
            .or_else(|| rows.iter().filter(|r| in_range(r.0)).min_by_key(|r| r.0));
        match pick {
            Some(&(year, total, _)) => Some(Envelope {
                year,
                total: total * config.currency_factor(),
            }),
            None => {
                notes.push(Diagnostic::new(DiagnosticKind::Ignored {
                    what: format!("envelope rows for {country}: no year inside the projection"),
                }));
                None
            }
        }
    }

    fn expand_costs(
        &self,
        key: &StratumKey,
        registry: &Registry,
        config: &RunConfig,
        notes: &mut Vec<Diagnostic>,
    ) -> Result<PhaseCostTable, DatasetError> {
        let path = self
            .paths
            .as_ref()
            .and_then(|p| p.phase_costs.as_ref())
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let factor = config.currency_factor();
        let mut by_disease: Vec<Vec<[f64; 3]>> = vec![vec![[f64::NAN; 3]; N_AGES]; registry.len()];
        let mut bands: Vec<[BTreeSet<AgeGroup>; 3]> = vec![Default::default(); registry.len()];
        let empty = Vec::new();
        let rows = self.costs.get(key).unwrap_or(&empty);
        for r in rows {
            let code = &self.disease_names[r.disease as usize];
            let Some(d) = registry.position(code) else {
                continue;
            };
            let p = r.phase.index();
            bands[d][p].insert(AgeGroup::new(r.lo as usize, r.hi as usize));
            for age in r.lo as usize..=r.hi as usize {
                if !by_disease[d][age][p].is_nan() {
                    return Err(DatasetError::Parse {
                        path: path.clone(),
                        row: r.line as u64,
                        message: format!("{code} {} age {age} covered twice", r.phase),
                    });
                }
                by_disease[d][age][p] = r.cost * factor;
            }
        }
        let mut diseases = Vec::with_capacity(registry.len());
        for (d, id) in registry.diseases().iter().enumerate() {
            let table = &mut by_disease[d];
            if bands[d].iter().all(|b| b.is_empty()) {
                if self.paths.as_ref().is_some_and(|p| p.phase_costs.is_some()) {
                    notes.push(Diagnostic::new(DiagnosticKind::CostMissing {
                        disease: id.code.clone(),
                    }));
                }
                table.iter_mut().for_each(|c| *c = [0.0; 3]);
            } else {
                for p in 0..3 {
                    let filled = nearest_fill(table, p);
                    for age in filled {
                        notes.push(Diagnostic::new(DiagnosticKind::CostFilled {
                            disease: id.code.clone(),
                            phase: Phase::ALL[p],
                            age,
                        }));
                    }
                }
            }
            diseases.push(DiseaseCosts {
                disease: id.code.clone(),
                by_age: std::mem::take(table),
            });
        }
        Ok(PhaseCostTable { diseases })
    }
}

/// Replaces `NaN` ages in one phase column by the nearest covered age
/// (younger wins ties). Returns the ages filled.
fn nearest_fill(table: &mut [[f64; 3]], phase: usize) -> Vec<usize> {
    let covered: Vec<usize> = (0..table.len())
        .filter(|&a| !table[a][phase].is_nan())
        .collect();
    let mut filled = Vec::new();
    if covered.is_empty() {
        for row in table.iter_mut() {
            row[phase] = 0.0;
        }
        return (0..N_AGES).collect();
    }
    for age in 0..table.len() {
        if table[age][phase].is_nan() {
            let src = *covered
                .iter()
                .min_by_key(|&&c| (c as isize - age as isize).unsigned_abs())
                .expect("non-empty");
            table[age][phase] = table[src][phase];
            filled.push(age);
        }
    }
    filled
}

/// Loads one country × sex stratum from the input files.
pub fn load_country_dataset(
    paths: &InputPaths,
    registry: &Registry,
    config: &RunConfig,
    country: &str,
    sex: Sex,
) -> Result<CountryDataset, DatasetError> {
    let tables = InputTables::read_filtered(paths, |c, s| c == country && s == sex)?;
    tables.dataset(registry, country, sex, config)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DatasetError + '_ {
    move |e| DatasetError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `ds` in the canonical input schema under `dir`.
///
/// Rates are written per input age band (values are constant within a band),
/// population and phase costs per single-year age, so re-loading with the
/// same configuration and a unit currency factor reproduces `ds` exactly.
/// Load notes about fills are not carried over.
pub fn write_canonical(ds: &CountryDataset, dir: &Path) -> Result<InputPaths, DatasetError> {
    write_canonical_many(&[ds], dir)
}

/// Writes several strata sharing one registry into a single input set. The
/// registry comes from the first stratum; one envelope row is written per
/// country.
pub fn write_canonical_many(strata: &[&CountryDataset], dir: &Path) -> Result<InputPaths, DatasetError> {
    let first = strata
        .first()
        .ok_or_else(|| DatasetError::Invalid("no strata to write".into()))?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let has_envelope = strata.iter().any(|d| d.expenditure_envelope.is_some());
    let paths = InputPaths {
        rates: dir.join("rates.csv"),
        population: dir.join("population.csv"),
        registry: dir.join("registry.csv"),
        envelope: has_envelope.then(|| dir.join("envelope.csv")),
        phase_costs: Some(dir.join("phase_costs.csv")),
    };

    let mut w = csv::Writer::from_path(&paths.registry).map_err(csv_err(&paths.registry))?;
    w.write_record(["code", "label", "ncd4_member", "disability_weight"])
        .map_err(csv_err(&paths.registry))?;
    for d in &first.diseases {
        let id = &d.disease;
        w.write_record([
            id.code.as_str(),
            id.label.as_str(),
            if id.ncd4_member { "true" } else { "false" },
            &id.disability_weight.map(|x| x.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err(&paths.registry))?;
    }
    w.flush().map_err(io_err(&paths.registry))?;

    let file = File::create(&paths.rates).map_err(io_err(&paths.rates))?;
    let mut out = BufWriter::new(file);
    let wr = |out: &mut BufWriter<File>, ds: &CountryDataset, s: &RateSeries| -> std::io::Result<()> {
        for g in &s.age_groups {
            for year in s.values.years() {
                let v = s.values.get(g.lo, year);
                if v.is_nan() {
                    continue;
                }
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    ds.country, ds.sex, s.disease, s.measure, g.lo, g.hi, year, v
                )?;
            }
        }
        Ok(())
    };
    let write_rates = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "country,sex,disease,measure,age_lo,age_hi,year,value")?;
        for ds in strata {
            for d in &ds.diseases {
                wr(out, ds, &d.incidence)?;
                wr(out, ds, &d.prevalence)?;
                wr(out, ds, &d.cause_mortality)?;
                if let Some(r) = &d.remission {
                    wr(out, ds, r)?;
                }
                if let Some(y) = &d.yld_rate {
                    wr(out, ds, y)?;
                }
            }
            wr(out, ds, &ds.all_cause)?;
        }
        out.flush()
    };
    write_rates(&mut out).map_err(io_err(&paths.rates))?;

    let mut out = BufWriter::new(File::create(&paths.population).map_err(io_err(&paths.population))?);
    (|| -> std::io::Result<()> {
        writeln!(out, "country,sex,age_lo,age_hi,year,count")?;
        for ds in strata {
            for (age, n) in ds.baseline_population.iter().enumerate() {
                if !n.is_nan() {
                    writeln!(out, "{},{},{age},{age},{},{n}", ds.country, ds.sex, ds.last_year)?;
                }
            }
        }
        out.flush()
    })()
    .map_err(io_err(&paths.population))?;

    if let Some(path) = &paths.envelope {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        (|| -> std::io::Result<()> {
            writeln!(out, "country,year,total_expenditure_usd")?;
            let mut seen = BTreeSet::new();
            for ds in strata {
                if let Some(env) = ds.expenditure_envelope {
                    if seen.insert(ds.country.as_str()) {
                        writeln!(out, "{},{},{}", ds.country, env.year, env.total)?;
                    }
                }
            }
            out.flush()
        })()
        .map_err(io_err(path))?;
    }

    let path = paths.phase_costs.as_ref().expect("set above");
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        writeln!(out, "country,sex,disease,age_lo,age_hi,phase,cost_usd")?;
        for ds in strata {
            for d in &ds.phase_costs.diseases {
                for phase in Phase::ALL {
                    for (age, c) in d.by_age.iter().enumerate() {
                        writeln!(
                            out,
                            "{},{},{},{age},{age},{phase},{}",
                            ds.country, ds.sex, d.disease, c[phase.index()]
                        )?;
                    }
                }
            }
        }
        out.flush()
    })()
    .map_err(io_err(path))?;

    Ok(paths)
}
