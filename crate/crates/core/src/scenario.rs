//! Intervention scenarios as accelerations of BAU log-slopes, and the
//! bisection that finds the acceleration meeting the 2030 target.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::CountryDataset;
use crate::grid::Period;
use crate::indicator::{self, IndicatorError};
use crate::pmslt::{ProjectionError, ProjectionResult, Projector};
use crate::trend::{RateSurfaces, RateTrajectory};

/// Slack allowed when checking that reduction never falls as δ grows.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Bau,
    Prevention,
    TreatmentDefault,
    TreatmentCfrOnly,
    TreatmentRemissionOnly,
    Blended,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Bau,
        ScenarioKind::Prevention,
        ScenarioKind::TreatmentDefault,
        ScenarioKind::TreatmentCfrOnly,
        ScenarioKind::TreatmentRemissionOnly,
        ScenarioKind::Blended,
    ];

    /// Kinds solved directly for a δ.
    pub const SOLVABLE: [ScenarioKind; 4] = [
        ScenarioKind::Prevention,
        ScenarioKind::TreatmentDefault,
        ScenarioKind::TreatmentCfrOnly,
        ScenarioKind::TreatmentRemissionOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Bau => "bau",
            ScenarioKind::Prevention => "prevention",
            ScenarioKind::TreatmentDefault => "treatment_default",
            ScenarioKind::TreatmentCfrOnly => "treatment_cfr_only",
            ScenarioKind::TreatmentRemissionOnly => "treatment_remission_only",
            ScenarioKind::Blended => "blended",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| format!("unknown scenario `{}`", s.trim()))
    }
}

/// Signed change to each measure's log-slope during the active window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelDeltas {
    pub incidence: f64,
    pub case_fatality: f64,
    pub remission: f64,
}

impl ChannelDeltas {
    pub fn is_zero(&self) -> bool {
        self.incidence == 0.0 && self.case_fatality == 0.0 && self.remission == 0.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("{kind}: target unreachable, at most {max_reduction:.6} reduction at the bracket top {delta_max}")]
    Unreachable {
        kind: ScenarioKind,
        max_reduction: f64,
        delta_max: f64,
    },
    #[error("{kind}: reduction falls from {r_lo:.9} at {lo} to {r_hi:.9} at {hi}")]
    NonMonotone {
        kind: ScenarioKind,
        lo: f64,
        r_lo: f64,
        hi: f64,
        r_hi: f64,
    },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Acceleration as a decimal log-slope per year (0.0253 = 2.53 pp).
    pub delta_pp: f64,
    pub active_years: Period,
    /// Years that return to the BAU slopes from the end-of-window level.
    pub post_window: Period,
    /// Scale on the component deltas; blended scenarios only.
    pub blend_fraction: Option<f64>,
    /// Full prevention and treatment deltas the blend scales.
    pub component_deltas: Option<(f64, f64)>,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, delta_pp: f64, config: &RunConfig) -> Result<Self, ScenarioError> {
        if kind == ScenarioKind::Blended {
            return Err(ScenarioError::InvalidSpec(
                "blended scenarios are built with ScenarioSpec::blended".into(),
            ));
        }
        if !(delta_pp >= 0.0) {
            return Err(ScenarioError::InvalidSpec(format!("negative delta {delta_pp}")));
        }
        Ok(Self {
            kind,
            delta_pp: if kind == ScenarioKind::Bau { 0.0 } else { delta_pp },
            active_years: config.active_years(),
            post_window: Period::new(config.target_year + 1, config.horizon_year),
            blend_fraction: None,
            component_deltas: None,
        })
    }

    pub fn bau(config: &RunConfig) -> Self {
        Self::new(ScenarioKind::Bau, 0.0, config).expect("bau spec is valid")
    }

    pub fn blended(
        fraction: f64,
        prevention_delta: f64,
        treatment_delta: f64,
        config: &RunConfig,
    ) -> Result<Self, ScenarioError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(ScenarioError::InvalidSpec(format!("blend fraction {fraction} outside [0, 1]")));
        }
        if !(prevention_delta >= 0.0 && treatment_delta >= 0.0) {
            return Err(ScenarioError::InvalidSpec("negative component delta".into()));
        }
        Ok(Self {
            kind: ScenarioKind::Blended,
            delta_pp: 0.0,
            active_years: config.active_years(),
            post_window: Period::new(config.target_year + 1, config.horizon_year),
            blend_fraction: Some(fraction),
            component_deltas: Some((prevention_delta, treatment_delta)),
        })
    }

    pub fn label(&self) -> &'static str {
        self.kind.as_str()
    }

    /// δ for single-channel kinds, the blend fraction for blended.
    pub fn reported_delta(&self) -> f64 {
        self.blend_fraction.unwrap_or(self.delta_pp)
    }

    pub fn channel_deltas(&self) -> ChannelDeltas {
        let d = self.delta_pp;
        match self.kind {
            ScenarioKind::Bau => ChannelDeltas::default(),
            ScenarioKind::Prevention => ChannelDeltas {
                incidence: -d,
                ..Default::default()
            },
            ScenarioKind::TreatmentDefault => ChannelDeltas {
                incidence: 0.0,
                case_fatality: -d,
                remission: d,
            },
            ScenarioKind::TreatmentCfrOnly => ChannelDeltas {
                case_fatality: -d,
                ..Default::default()
            },
            ScenarioKind::TreatmentRemissionOnly => ChannelDeltas {
                remission: d,
                ..Default::default()
            },
            ScenarioKind::Blended => {
                let a = self.blend_fraction.unwrap_or(0.0);
                let (dp, dt) = self.component_deltas.unwrap_or((0.0, 0.0));
                ChannelDeltas {
                    incidence: -a * dp,
                    case_fatality: -a * dt,
                    remission: a * dt,
                }
            }
        }
    }
}

/// Multiplier on the BAU rate in `year` for a log-slope change `delta`
/// applied over `active`. Constant after the window, one before it.
pub fn acceleration_multiplier(delta: f64, active: Period, year: i32) -> f64 {
    if year < active.first || delta == 0.0 {
        return 1.0;
    }
    let years = year.min(active.last) - (active.first - 1);
    (delta * years as f64).exp()
}

fn accelerate(t: &mut RateTrajectory, delta: f64, active: Period) {
    if delta == 0.0 {
        return;
    }
    let first = t.values.first_year().max(active.first);
    let last = t.values.last_year();
    let multipliers: Vec<f64> = (first..=last)
        .map(|y| acceleration_multiplier(delta, active, y))
        .collect();
    let start = (first - t.values.first_year()) as usize;
    for age in 0..crate::grid::N_AGES {
        let row = t.values.age_row_mut(age);
        for (v, m) in row[start..].iter_mut().zip(&multipliers) {
            *v *= m;
        }
    }
}

/// Scenario surfaces: BAU with each affected measure's slope shifted over
/// the active window. All-cause mortality is never touched.
pub fn apply_acceleration(bau: &RateSurfaces, spec: &ScenarioSpec) -> RateSurfaces {
    let deltas = spec.channel_deltas();
    let mut out = bau.clone();
    if deltas.is_zero() {
        return out;
    }
    for d in &mut out.diseases {
        accelerate(&mut d.incidence, deltas.incidence, spec.active_years);
        accelerate(&mut d.case_fatality, deltas.case_fatality, spec.active_years);
        accelerate(&mut d.remission, deltas.remission, spec.active_years);
    }
    out
}

/// One evaluated point of a bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPoint {
    pub x: f64,
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelerationSolution {
    pub spec: ScenarioSpec,
    pub achieved_reduction: f64,
    /// Midpoint evaluations.
    pub iterations: usize,
    pub bracket: [f64; 2],
    pub converged: bool,
    /// Every evaluated point, including the bracket ends.
    pub trace: Vec<TrialPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSettings {
    pub target: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl BisectionSettings {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            target: config.target_fraction,
            tolerance: config.bisection_tolerance,
            max_iter: config.bisection_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionOutcome {
    pub x: f64,
    pub reduction: f64,
    pub iterations: usize,
    pub bracket: [f64; 2],
    pub converged: bool,
    pub trace: Vec<TrialPoint>,
}

fn check_monotone(kind: ScenarioKind, trace: &[TrialPoint]) -> Result<(), ScenarioError> {
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    for w in sorted.windows(2) {
        if w[1].reduction < w[0].reduction - MONOTONE_SLACK {
            return Err(ScenarioError::NonMonotone {
                kind,
                lo: w[0].x,
                r_lo: w[0].reduction,
                hi: w[1].x,
                r_hi: w[1].reduction,
            });
        }
    }
    Ok(())
}

/// Finds `x` in `[lo, hi]` with `f(x)` within tolerance of the target,
/// assuming `f` is non-decreasing; the assumption is checked on every
/// evaluated point.
pub fn bisect(
    kind: ScenarioKind,
    lo: f64,
    hi: f64,
    settings: BisectionSettings,
    mut f: impl FnMut(f64) -> Result<f64, ScenarioError>,
) -> Result<BisectionOutcome, ScenarioError> {
    let r_lo = f(lo)?;
    let mut trace = vec![TrialPoint { x: lo, reduction: r_lo }];
    if r_lo >= settings.target {
        return Ok(BisectionOutcome {
            x: lo,
            reduction: r_lo,
            iterations: 0,
            bracket: [lo, lo],
            converged: true,
            trace,
        });
    }
    let r_hi = f(hi)?;
    trace.push(TrialPoint { x: hi, reduction: r_hi });
    check_monotone(kind, &trace)?;
    if r_hi < settings.target {
        return Err(ScenarioError::Unreachable {
            kind,
            max_reduction: r_hi,
            delta_max: hi,
        });
    }
    let (mut a, mut b) = (lo, hi);
    let mut best = TrialPoint { x: hi, reduction: r_hi };
    for iter in 1..=settings.max_iter {
        let mid = 0.5 * (a + b);
        let r = f(mid)?;
        trace.push(TrialPoint { x: mid, reduction: r });
        check_monotone(kind, &trace)?;
        if (r - settings.target).abs() < (best.reduction - settings.target).abs() {
            best = TrialPoint { x: mid, reduction: r };
        }
        if (r - settings.target).abs() < settings.tolerance {
            return Ok(BisectionOutcome {
                x: mid,
                reduction: r,
                iterations: iter,
                bracket: [a, b],
                converged: true,
                trace,
            });
        }
        if r < settings.target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(BisectionOutcome {
        x: best.x,
        reduction: best.reduction,
        iterations: settings.max_iter,
        bracket: [a, b],
        converged: false,
        trace,
    })
}

/// Evaluates scenarios for one stratum against a fixed BAU.
pub struct ScenarioSolver<'a> {
    ds: &'a CountryDataset,
    bau: &'a RateSurfaces,
    config: &'a RunConfig,
    projector: Projector<'a>,
    baseline_q: f64,
}

impl<'a> ScenarioSolver<'a> {
    pub fn new(
        ds: &'a CountryDataset,
        bau: &'a RateSurfaces,
        config: &'a RunConfig,
    ) -> Result<Self, ScenarioError> {
        let projector = Projector::new(ds, bau, config)?;
        let baseline_q = indicator::q40_30(&indicator::observed_profile(
            ds,
            config.indicator_baseline_year,
        )?)?;
        if baseline_q <= 0.0 {
            return Err(IndicatorError::ZeroBaseline.into());
        }
        Ok(Self {
            ds,
            bau,
            config,
            projector,
            baseline_q,
        })
    }

    pub fn dataset(&self) -> &CountryDataset {
        self.ds
    }

    pub fn baseline_40q30(&self) -> f64 {
        self.baseline_q
    }

    pub fn project(&self, spec: &ScenarioSpec) -> Result<ProjectionResult, ScenarioError> {
        let surfaces = apply_acceleration(self.bau, spec);
        Ok(self.projector.run(&surfaces, spec.label())?)
    }

    pub fn reduction_of(&self, result: &ProjectionResult) -> Result<f64, ScenarioError> {
        let q = indicator::compute_40q30(result, self.config.target_year)?;
        Ok(1.0 - q / self.baseline_q)
    }

    /// 2030 reduction against the baseline year under `spec`.
    pub fn reduction(&self, spec: &ScenarioSpec) -> Result<f64, ScenarioError> {
        self.reduction_of(&self.project(spec)?)
    }

    pub fn bau_reduction(&self) -> Result<f64, ScenarioError> {
        self.reduction(&ScenarioSpec::bau(self.config))
    }

    pub fn solve(&self, kind: ScenarioKind) -> Result<AccelerationSolution, ScenarioError> {
        if matches!(kind, ScenarioKind::Bau | ScenarioKind::Blended) {
            return Err(ScenarioError::InvalidSpec(format!("{kind} is not solved for a delta")));
        }
        let settings = BisectionSettings::from_config(self.config);
        let out = bisect(kind, 0.0, self.config.delta_max, settings, |d| {
            self.reduction(&ScenarioSpec::new(kind, d, self.config)?)
        })?;
        Ok(AccelerationSolution {
            spec: ScenarioSpec::new(kind, out.x, self.config)?,
            achieved_reduction: out.reduction,
            iterations: out.iterations,
            bracket: out.bracket,
            converged: out.converged,
            trace: out.trace,
        })
    }

    /// Solves the blend fraction α ∈ [0, 1] on incidence at α·δ_prev and
    /// case fatality / remission at α·δ_treat.
    pub fn solve_blended(
        &self,
        prevention_delta: f64,
        treatment_delta: f64,
    ) -> Result<AccelerationSolution, ScenarioError> {
        let settings = BisectionSettings::from_config(self.config);
        let spec = |a: f64| ScenarioSpec::blended(a, prevention_delta, treatment_delta, self.config);
        let out = bisect(ScenarioKind::Blended, 0.0, 1.0, settings, |a| {
            self.reduction(&spec(a)?)
        })?;
        Ok(AccelerationSolution {
            spec: spec(out.x)?,
            achieved_reduction: out.reduction,
            iterations: out.iterations,
            bracket: out.bracket,
            converged: out.converged,
            trace: out.trace,
        })
    }
}

pub fn solve_acceleration(
    ds: &CountryDataset,
    bau: &RateSurfaces,
    kind: ScenarioKind,
    config: &RunConfig,
) -> Result<AccelerationSolution, ScenarioError> {
    ScenarioSolver::new(ds, bau, config)?.solve(kind)
}

pub fn solve_blended(
    ds: &CountryDataset,
    bau: &RateSurfaces,
    prevention_delta: f64,
    treatment_delta: f64,
    config: &RunConfig,
) -> Result<AccelerationSolution, ScenarioError> {
    ScenarioSolver::new(ds, bau, config)?.solve_blended(prevention_delta, treatment_delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACTIVE: Period = Period::new(2022, 2030);

    #[test]
    fn kind_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.as_str().parse::<ScenarioKind>().unwrap(), k);
        }
    }

    #[test]
    fn multiplier_window() {
        assert_eq!(acceleration_multiplier(0.02, ACTIVE, 2021), 1.0);
        assert!((acceleration_multiplier(-0.02, ACTIVE, 2022) - (-0.02f64).exp()).abs() < 1e-15);
        let at_2030 = acceleration_multiplier(-0.0253, ACTIVE, 2030);
        assert!((at_2030 - 0.796_363_132_942_578_9).abs() < 1e-12);
        assert_eq!(acceleration_multiplier(-0.0253, ACTIVE, 2035), at_2030);
    }

    #[test]
    fn treatment_moves_two_channels() {
        let cfg = RunConfig::default();
        let s = ScenarioSpec::new(ScenarioKind::TreatmentDefault, 0.0141, &cfg).unwrap();
        let c = s.channel_deltas();
        assert_eq!(c.incidence, 0.0);
        assert_eq!(c.case_fatality, -0.0141);
        assert_eq!(c.remission, 0.0141);
    }

    #[test]
    fn blended_scales_components() {
        let cfg = RunConfig::default();
        let s = ScenarioSpec::blended(0.5, 0.02, 0.01, &cfg).unwrap();
        let c = s.channel_deltas();
        assert_eq!(c.incidence, -0.01);
        assert_eq!(c.case_fatality, -0.005);
        assert_eq!(c.remission, 0.005);
        assert_eq!(s.reported_delta(), 0.5);
        assert!(ScenarioSpec::blended(1.5, 0.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn negative_delta_rejected() {
        let cfg = RunConfig::default();
        assert!(ScenarioSpec::new(ScenarioKind::Prevention, -0.01, &cfg).is_err());
    }

    fn settings() -> BisectionSettings {
        BisectionSettings {
            target: 1.0 / 3.0,
            tolerance: 1e-6,
            max_iter: 60,
        }
    }

    #[test]
    fn bisect_finds_root_of_linear_response() {
        let out = bisect(ScenarioKind::Prevention, 0.0, 0.3, settings(), |d| Ok(0.1 + 10.0 * d)).unwrap();
        assert!(out.converged);
        assert!((out.x - (1.0 / 3.0 - 0.1) / 10.0).abs() < 1e-6);
        assert!((out.reduction - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn bisect_on_track_returns_zero() {
        let out = bisect(ScenarioKind::Prevention, 0.0, 0.3, settings(), |_| Ok(0.5)).unwrap();
        assert_eq!(out.x, 0.0);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn bisect_reports_unreachable() {
        let err = bisect(ScenarioKind::Prevention, 0.0, 0.3, settings(), Ok).unwrap_err();
        assert_eq!(
            err,
            ScenarioError::Unreachable {
                kind: ScenarioKind::Prevention,
                max_reduction: 0.3,
                delta_max: 0.3
            }
        );
    }

    #[test]
    fn bisect_detects_non_monotone() {
        // Rises to the target beyond 0.3 but dips in between.
        let f = |d: f64| Ok(if (0.1..0.2).contains(&d) { 0.0 } else { 0.1 + 2.0 * d });
        let err = bisect(ScenarioKind::Prevention, 0.0, 0.3, settings(), f).unwrap_err();
        assert!(matches!(err, ScenarioError::NonMonotone { .. }));
    }
}
