//! `ncd-pmslt` command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use crate::config::RunConfig;
use crate::dataset::{write_canonical_many, InputPaths, Sex};
use crate::pipeline::{Pipeline, PipelineError, Selection};
use crate::scenario::ScenarioKind;
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "ncd-pmslt", version, about = "NCD lifetable projections, 40q30 targets and expenditure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build BAU trajectories and fit diagnostics.
    Fit(RunArgs),
    /// Classify attainment and solve scenario accelerations.
    Solve(RunArgs),
    /// Project solved scenarios and write indicator and expenditure reports.
    Report(RunArgs),
    /// fit, solve and report in one pass.
    All(RunArgs),
    /// Write a synthetic input set.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding rates.csv, population.csv, registry.csv and the
    /// optional envelope.csv and phase_costs.csv.
    #[arg(long, env = "NCD_PMSLT_DATA_DIR", default_value = ".")]
    pub data_dir: PathBuf,
    /// Comma-separated ISO3 codes; all countries when omitted.
    #[arg(long, value_delimiter = ',')]
    pub countries: Option<Vec<String>>,
    /// female, male or both.
    #[arg(long, default_value = "both")]
    pub sex: String,
    /// Comma-separated scenario kinds; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<String>>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Countries processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write the BAU trajectories to this CSV.
    #[arg(long)]
    pub dump_trajectories: Option<PathBuf>,
    /// Write every projected cell of every scenario to this CSV.
    #[arg(long)]
    pub dump_projection: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated ISO3 codes.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_countries")]
    pub countries: Option<Vec<String>>,
    /// Take the first N OECD members instead of listing codes.
    #[arg(long)]
    pub n_countries: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub diseases: usize,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    /// Input age-band width in years.
    #[arg(long, default_value_t = 1)]
    pub band_width: usize,
    /// Multiplier on every calendar trend.
    #[arg(long, default_value_t = 1.0)]
    pub trend_scale: f64,
    /// Run configuration whose calendar the data should cover.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, PipelineError> {
    let cfg: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.map_or("defaults".into(), |p| p.display().to_string()))))?;
    Ok(cfg)
}

fn parse_sexes(s: &str) -> Result<Vec<Sex>, PipelineError> {
    match s {
        "both" => Ok(Sex::ALL.to_vec()),
        other => other
            .parse::<Sex>()
            .map(|s| vec![s])
            .map_err(|_| PipelineError::Input(format!("--sex: expected female, male or both, got `{other}`"))),
    }
}

fn parse_scenarios(list: Option<&[String]>) -> Result<Vec<ScenarioKind>, PipelineError> {
    let Some(list) = list else {
        return Ok(ScenarioKind::SOLVABLE
            .into_iter()
            .chain([ScenarioKind::Blended])
            .collect());
    };
    let mut kinds = Vec::new();
    for name in list {
        let k: ScenarioKind = name
            .parse()
            .map_err(|_| PipelineError::Input(format!("--scenarios: unknown scenario `{name}`")))?;
        if k != ScenarioKind::Bau && !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    kinds.sort_by_key(|k| ScenarioKind::ALL.iter().position(|x| x == k));
    Ok(kinds)
}

impl RunArgs {
    pub fn pipeline(&self) -> Result<Pipeline, PipelineError> {
        let config = load_config(self.config.as_deref())?;
        let countries = self.countries.as_ref().map(|c| {
            let mut c: Vec<String> = c.iter().map(|x| x.trim().to_uppercase()).collect();
            c.sort();
            c.dedup();
            c
        });
        Ok(Pipeline {
            config,
            config_path: self.config.clone(),
            inputs: InputPaths::in_dir(&self.data_dir),
            out: self.out.clone(),
            selection: Selection {
                countries,
                sexes: parse_sexes(&self.sex)?,
                scenarios: parse_scenarios(self.scenarios.as_deref())?,
            },
            jobs: self.jobs.max(1),
            dump_trajectories: self.dump_trajectories.clone(),
            dump_projection: self.dump_projection.clone(),
        })
    }
}

pub fn run_synth(args: &SynthArgs) -> Result<(), PipelineError> {
    let run = load_config(args.config.as_deref())?;
    let countries = match (&args.countries, args.n_countries) {
        (Some(c), _) => c.clone(),
        (None, Some(n)) => synth::OECD_COUNTRIES.iter().take(n).map(|c| c.to_string()).collect(),
        (None, None) => SynthConfig::default().countries,
    };
    if args.band_width == 0 || args.diseases == 0 {
        return Err(PipelineError::Input("--band-width and --diseases must be positive".into()));
    }
    let cfg = SynthConfig {
        seed: args.seed,
        countries,
        n_diseases: args.diseases,
        band_width: args.band_width,
        trend_scale: args.trend_scale,
        ..SynthConfig::default()
    };
    std::fs::create_dir_all(&args.out).map_err(|e| PipelineError::Failed(format!("{}: {e}", args.out.display())))?;
    // One country at a time keeps memory flat for large sets.
    let mut all = Vec::new();
    for c in &cfg.countries {
        let one = SynthConfig {
            countries: vec![c.clone()],
            ..cfg.clone()
        };
        all.extend(synth::generate(&one, &run).into_iter().map(|s| s.dataset));
        info!("synthesised {c}");
    }
    let refs: Vec<_> = all.iter().collect();
    write_canonical_many(&refs, &args.out).map_err(|e| PipelineError::Failed(e.to_string()))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32, PipelineError> {
    let outcome = match &cli.command {
        Command::Fit(a) => a.pipeline()?.fit()?,
        Command::Solve(a) => a.pipeline()?.solve()?,
        Command::Report(a) => a.pipeline()?.report()?,
        Command::All(a) => a.pipeline()?.all()?,
        Command::Synth(a) => {
            run_synth(a)?;
            return Ok(0);
        }
    };
    info!("{} strata processed", outcome.strata);
    Ok(outcome.exit_code())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            e.exit_code()
        }
    }
}
