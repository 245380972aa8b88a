//! Configuration-driven pipeline: construct the initial metric, optionally
//! mollify it, run the flow, evaluate the requested checks and write every
//! artifact plus `summary.json` into one directory. Only `run.log` carries
//! timestamps, so the rest of the directory is reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::afmass::{blended_background, mass_along_flow, AfKind};
use crate::curvature::scalar_curvature;
use crate::diagnostics::{
    c0_convergence_probe, curvature_bound_check, einstein_residual, local_lowerbound_check, monotonicity_check,
    scalar_evolution_residual, DiagnosticsSeries,
};
use crate::error::{Error, Result};
use crate::flow::{freeze_weights, run_flow, sigma_profile, volume_series, write_trajectory, FlowTrajectory, StepControls};
use crate::gauge::{integrate_phi_with, ricci_flow_residual, unpulled_ricci_flow_residual};
use crate::grid::io::{write_field, write_mask};
use crate::grid::{make_chart, CellMask, ChartSpec, GridChart, MetricField};
use crate::metrics::{make_metric, MetricKind};
use crate::singular::{codimension_fit, make_singular_metric, mollify_blend, SingularMetricSpec, SingularSetSpec};

pub const CONFIG_VERSION: u32 = 1;
pub const SUMMARY: &str = "summary.json";
pub const RUN_LOG: &str = "run.log";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSection {
    Smooth {
        metric: MetricKind,
    },
    Singular {
        set: SingularSetSpec,
        metric: SingularMetricSpec,
        /// Replace g₀ by its mollified blend at this index.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mollify: Option<usize>,
    },
    Af {
        metric: AfKind,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSection {
    /// h = δ.
    Flat,
    /// h = the smooth reference metric: the base of a singular metric, else g₀.
    Reference,
    /// h = φ·reference + (1 − φ)·δ, φ = 1 inside `r_in`, 0 outside `r_out`.
    Blended { r_in: f64, r_out: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub t_end: f64,
    #[serde(default)]
    pub controls: StepControls,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_target: Option<f64>,
}

fn default_a() -> f64 {
    0.25
}
fn default_ell() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotonicityCheck {
    /// Allowed violation relative to max F.
    #[serde(default = "default_mono_tol")]
    pub rel_tolerance: f64,
}
fn default_mono_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundCheck {
    /// Smallest accepted slope of log C against log t.
    #[serde(default = "default_min_slope")]
    pub min_slope: f64,
}
fn default_min_slope() -> f64 {
    -0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ToleranceCheck {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C0Check {
    pub away_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeCheck {
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Pulled residual must stay below this fraction of the unpulled one.
    #[serde(default = "default_ratio")]
    pub max_ratio: f64,
}
fn default_substeps() -> usize {
    1
}
fn default_ratio() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassCheck {
    pub radii: Vec<f64>,
    /// Allowed increase (and, with `conserve`, drift) relative to |m(0)|.
    #[serde(default = "default_mass_tol")]
    pub rel_tolerance: f64,
    #[serde(default)]
    pub conserve: bool,
}
fn default_mass_tol() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodimCheck {
    pub eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<MonotonicityCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_lowerbound: Option<LowerBoundCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_bound: Option<ToleranceCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub einstein: Option<ToleranceCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_evolution: Option<ToleranceCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_lower_bound: Option<ToleranceCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<C0Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ricci_flow_residual: Option<GaugeCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<MassCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codim: Option<CodimCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Also write every snapshot as a field file.
    #[serde(default)]
    pub write_fields: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub chart: ChartSpec,
    pub metric: MetricSection,
    #[serde(default = "default_background")]
    pub background: BackgroundSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_background() -> BackgroundSection {
    BackgroundSection::Flat
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            Error::config(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Static checks that need no field construction.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.name.is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        let torus = self.chart.kind == crate::grid::ChartKind::Torus;
        if let Some(f) = &self.flow {
            if f.sigma0 > 0.0 || !f.sigma0.is_finite() {
                return Err(Error::SigmaRegime(f.sigma0));
            }
            f.controls.validate(f.t_end)?;
            if !(f.a > 0.0) {
                return Err(Error::config("flow.a", "must be positive"));
            }
        }
        let d = &self.diagnostics;
        let needs_flow = [
            ("diagnostics.monotonicity", d.monotonicity.is_some()),
            ("diagnostics.local_lowerbound", d.local_lowerbound.is_some()),
            ("diagnostics.curvature_bound", d.curvature_bound.is_some()),
            ("diagnostics.einstein", d.einstein.is_some()),
            ("diagnostics.scalar_evolution", d.scalar_evolution.is_some()),
            ("diagnostics.scalar_lower_bound", d.scalar_lower_bound.is_some()),
            ("diagnostics.c0", d.c0.is_some()),
            ("diagnostics.ricci_flow_residual", d.ricci_flow_residual.is_some()),
            ("diagnostics.mass", d.mass.is_some()),
        ];
        for (path, used) in needs_flow {
            if used && self.flow.is_none() {
                return Err(Error::config(path, "requires a `flow` section"));
            }
        }
        let singular = matches!(self.metric, MetricSection::Singular { .. });
        if d.codim.is_some() && !singular {
            return Err(Error::config("diagnostics.codim", "requires a singular metric section"));
        }
        if let Some(m) = &d.mass {
            if torus {
                return Err(Error::config("diagnostics.mass", "requires an af_box chart"));
            }
            if m.radii.len() < 3 {
                return Err(Error::config("diagnostics.mass.radii", "needs at least 3 radii"));
            }
        }
        if let Some(c) = &d.c0 {
            if !(c.away_radius >= 0.0) {
                return Err(Error::config("diagnostics.c0.away_radius", "must be non-negative"));
            }
        }
        if let BackgroundSection::Blended { .. } = self.background {
            if torus {
                return Err(Error::config("background", "blended backgrounds need an af_box chart"));
            }
        }
        Ok(())
    }
}

/// Chart, initial metric, reference and background of a scenario.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub chart: Arc<GridChart>,
    pub g0: MetricField,
    pub reference: MetricField,
    pub h: MetricField,
    pub sset: Option<SingularSetSpec>,
    pub mask: Option<CellMask>,
}

pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    let chart = make_chart(&cfg.chart)?;
    let (g0, reference, sset) = match &cfg.metric {
        MetricSection::Smooth { metric } => {
            let g = make_metric(&chart, metric)?;
            (g.clone(), g, None)
        }
        MetricSection::Af { metric } => {
            let g = crate::afmass::make_af_metric(&chart, metric)?;
            (g.clone(), g, None)
        }
        MetricSection::Singular { set, metric, mollify } => {
            let data = make_singular_metric(&chart, set, metric)?;
            let reference = make_metric(&chart, &metric.base)?;
            let g = match mollify {
                Some(i) => mollify_blend(&data.metric, set, *i)?,
                None => data.metric,
            };
            (g, reference, Some(set.clone()))
        }
    };
    let h = match &cfg.background {
        BackgroundSection::Flat => MetricField::euclidean(chart.clone()),
        BackgroundSection::Reference => reference.clone().with_mask(None),
        BackgroundSection::Blended { r_in, r_out } => blended_background(&reference, *r_in, *r_out)?,
    };
    let mask = g0.mask().map(|m| (**m).clone());
    Ok(Prepared {
        chart,
        g0,
        reference,
        h,
        sset,
        mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub version: u32,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub outputs: Vec<String>,
    pub scalars: BTreeMap<String, f64>,
}

/// Timestamped progress log; the only nondeterministic artifact.
pub struct RunLog {
    file: Option<fs::File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(RunLog {
            file: Some(fs::File::create(path)?),
        })
    }

    pub fn disabled() -> Self {
        RunLog { file: None }
    }

    pub fn line(&mut self, msg: &str) {
        log::info!("{msg}");
        if let Some(f) = &mut self.file {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0);
            let _ = writeln!(f, "[{now:.3}] {msg}");
        }
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn csv(&mut self, name: &str, s: &DiagnosticsSeries) -> Result<()> {
        s.write_csv(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn check(name: &str, value: f64, tolerance: Option<f64>, pass: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        value,
        tolerance,
        pass,
        detail: detail.into(),
    }
}

/// Run the full pipeline into `out`. Returns the summary; `summary.pass` is
/// false when any check failed. Errors abort the run.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioSummary> {
    execute(cfg, out, None)
}

/// Evaluate the configured checks on an already computed trajectory.
pub fn diagnose_trajectory(cfg: &ScenarioConfig, traj: &FlowTrajectory, out: &Path) -> Result<ScenarioSummary> {
    if cfg.flow.is_none() {
        return Err(Error::config("flow", "diagnosing a trajectory needs the flow section"));
    }
    execute(cfg, out, Some(traj))
}

fn execute(cfg: &ScenarioConfig, out: &Path, given: Option<&FlowTrajectory>) -> Result<ScenarioSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut log = RunLog::create(&out.join(RUN_LOG))?;
    log.line(&format!("scenario {}", cfg.name));
    let prep = prepare(cfg)?;
    let mut outputs = Outputs {
        dir: out,
        files: Vec::new(),
    };
    fs::write(out.join("config.json"), cfg.to_json()?)?;
    outputs.files.push("config.json".into());
    write_field(&out.join("g0.field"), &prep.g0)?;
    outputs.files.push("g0.field".into());
    if let Some(m) = &prep.mask {
        write_mask(&out.join("mask.field"), &prep.chart, m)?;
        outputs.files.push("mask.field".into());
    }
    log.line(&format!("constructed g0 on {} points", prep.chart.npoints()));

    let mut checks = Vec::new();
    let mut scalars = BTreeMap::new();

    if let Some((lo, hi)) = scalar_curvature(&prep.g0)?.min_max() {
        scalars.insert("initial_min_scalar".to_string(), lo);
        scalars.insert("initial_max_scalar".to_string(), hi);
    }

    if let Some(c) = &cfg.diagnostics.codim {
        let sset = prep.sset.as_ref().expect("validated: singular section");
        let flat = MetricField::euclidean(prep.chart.clone());
        let fit = codimension_fit(sset, &flat, &c.eps)?;
        let ok = c.min.is_none_or(|m| fit.slope >= m) && c.max.is_none_or(|m| fit.slope <= m);
        let s = DiagnosticsSeries::new("codim", fit.eps.clone()).with_column("volume", fit.volumes.clone())?;
        outputs.csv("codim.csv", &s)?;
        scalars.insert("codim_intercept".into(), fit.intercept);
        checks.push(check("codim", fit.slope, None, ok, format!("range {:?}..{:?}", c.min, c.max)));
    }

    if let Some(flow) = &cfg.flow {
        let computed;
        let traj = match given {
            Some(t) => t,
            None => {
                log.line(&format!("flow to T = {}", flow.t_end));
                computed = run_flow(&prep.g0, &prep.h, flow.t_end, &flow.controls)?;
                &computed
            }
        };
        log.line(&format!("trajectory: {} steps, {} snapshots", traj.steps.len(), traj.snapshots.len()));
        outputs.csv("flow.csv", &traj.step_series())?;
        if prep.chart.is_torus() {
            outputs.csv("volume.csv", &volume_series(traj)?)?;
        }
        if cfg.output.write_fields && given.is_none() {
            write_trajectory(&out.join("trajectory"), traj)?;
            outputs.files.push("trajectory".into());
        }
        flow_checks(cfg, flow, &prep, traj, &mut outputs, &mut checks, &mut scalars, &mut log)?;
    }

    let pass = checks.iter().all(|c| c.pass);
    outputs.files.push(SUMMARY.into());
    outputs.files.push(RUN_LOG.into());
    let summary = ScenarioSummary {
        name: cfg.name.clone(),
        version: CONFIG_VERSION,
        pass,
        checks,
        outputs: outputs.files,
        scalars,
    };
    fs::write(out.join(SUMMARY), serde_json::to_string_pretty(&summary)? + "\n")?;
    log.line(&format!("done: {}", if pass { "pass" } else { "FAIL" }));
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn flow_checks(
    cfg: &ScenarioConfig,
    flow: &FlowSection,
    prep: &Prepared,
    traj: &FlowTrajectory,
    outputs: &mut Outputs,
    checks: &mut Vec<CheckResult>,
    scalars: &mut BTreeMap<String, f64>,
    log: &mut RunLog,
) -> Result<()> {
    let d = &cfg.diagnostics;
    let n = prep.chart.dim();

    if let Some(c) = &d.monotonicity {
        let s = monotonicity_check(traj, flow.sigma0, flow.a)?;
        let v = s.scalar("violation").unwrap_or(0.0);
        let tol = c.rel_tolerance * s.scalar("max_F").unwrap_or(0.0);
        outputs.csv("monotonicity.csv", &s)?;
        if let Some(slope) = s.scalar("weighted_trend_slope") {
            scalars.insert("monotonicity_weighted_trend_slope".into(), slope);
        }
        checks.push(check("monotonicity", v, Some(tol), v <= tol, "violation <= rel_tolerance * max F"));
        log.line("monotonicity done");
    }
    if let Some(c) = &d.local_lowerbound {
        let s = local_lowerbound_check(traj, prep.sset.as_ref(), flow.sigma0, flow.ell)?;
        let slope = s.scalar("log_C_slope");
        outputs.csv("local_lowerbound.csv", &s)?;
        let pass = slope.is_none_or(|x| x >= c.min_slope);
        checks.push(check(
            "local_lowerbound",
            slope.unwrap_or(f64::NAN),
            Some(c.min_slope),
            pass,
            if slope.is_none() { "vacuous: C = 0 at every snapshot" } else { "slope of log C vs log t" },
        ));
        log.line("local lower bound done");
    }
    if let Some(c) = &d.curvature_bound {
        let s = curvature_bound_check(traj, &prep.h)?;
        let delta = s.scalar("delta_effective").unwrap_or(f64::NAN);
        if let Some(e) = s.scalar("grad2_exponent") {
            scalars.insert("grad2_exponent".into(), e);
        }
        outputs.csv("curvature_bound.csv", &s)?;
        let tol = c.tolerance.or(flow.delta_target);
        let pass = delta.is_finite() && tol.is_none_or(|t| delta <= t);
        checks.push(check("curvature_bound", delta, tol, pass, "max_t B(t)"));
        log.line("curvature bound done");
    }
    if let Some(c) = &d.einstein {
        let mut vals = Vec::new();
        for s in &traj.snapshots {
            vals.push(einstein_residual(s, flow.sigma0, n)?);
        }
        let last = *vals.last().expect("snapshots");
        let s = DiagnosticsSeries::new("einstein", traj.times()).with_column("residual", vals)?;
        outputs.csv("einstein.csv", &s)?;
        checks.push(check(
            "einstein",
            last,
            c.tolerance,
            c.tolerance.is_none_or(|t| last <= t),
            "residual at T",
        ));
    }
    if let Some(c) = &d.scalar_evolution {
        let s = scalar_evolution_residual(traj, &prep.h)?;
        let lo = s.scalar("min_residual").unwrap_or(0.0);
        outputs.csv("scalar_evolution.csv", &s)?;
        let tol = c.tolerance;
        checks.push(check(
            "scalar_evolution",
            lo,
            tol,
            tol.is_none_or(|t| lo >= -t),
            "min residual >= -tolerance",
        ));
        log.line("scalar evolution done");
    }
    if let Some(c) = &d.scalar_lower_bound {
        // Frozen far-field points of an AF box are boundary data, not solution.
        let evolved = freeze_weights(&prep.chart);
        let live = |p: usize| evolved.as_ref().is_none_or(|w| w[p] > 0.0);
        let mut gaps = Vec::new();
        let mut scale = 0.0f64;
        for s in &traj.snapshots {
            let pkg = crate::curvature::curvature_package(&s.g)?;
            let sigma = sigma_profile(flow.sigma0, n, s.t)?;
            let gap = (0..pkg.scalar.npoints())
                .filter(|&p| live(p) && !pkg.scalar.is_masked(p))
                .map(|p| pkg.scalar.value(p) - sigma)
                .fold(f64::INFINITY, f64::min);
            gaps.push(gap);
            if let Some((_, hi)) = pkg.riemann_norm.min_max() {
                scale = scale.max(hi);
            }
        }
        let worst = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = c.tolerance.unwrap_or(1e-4) * scale;
        let s = DiagnosticsSeries::new("scalar_lower_bound", traj.times()).with_column("min_gap", gaps)?;
        outputs.csv("scalar_lower_bound.csv", &s)?;
        scalars.insert("rm_scale".into(), scale);
        checks.push(check(
            "scalar_lower_bound",
            worst,
            Some(tol),
            worst >= -tol,
            "min (R - sigma(t)) over evolved points >= -tolerance * max|Rm|",
        ));
    }
    if let Some(c) = &d.c0 {
        let s = c0_convergence_probe(traj, &prep.g0, prep.sset.as_ref(), c.away_radius)?;
        let g = s.column("sup_dist").expect("column").to_vec();
        let a = s.column("away_c1_dist").expect("column").to_vec();
        outputs.csv("c0_convergence.csv", &s)?;
        let trend = |v: &[f64]| v[0] == 0.0 && v.len() >= 2 && v[1] <= *v.last().unwrap() * (1.0 + 1e-9);
        let pass = trend(&g) && a[0] == 0.0 && a.iter().all(|x| x.is_finite());
        checks.push(check(
            "c0_convergence",
            *g.last().unwrap(),
            None,
            pass,
            "zero at t = 0 and growing from the first positive snapshot",
        ));
    }
    if let Some(c) = &d.ricci_flow_residual {
        let phi = integrate_phi_with(traj, c.substeps)?;
        let pulled = ricci_flow_residual(traj, &phi)?;
        let raw = unpulled_ricci_flow_residual(traj)?;
        outputs.csv("ricci_flow_residual.csv", &pulled)?;
        outputs.csv("unpulled_ricci_flow_residual.csv", &raw)?;
        let p = pulled.column("sup_residual").unwrap().iter().cloned().fold(0.0, f64::max);
        let u = raw.column("sup_residual").unwrap().iter().cloned().fold(0.0, f64::max);
        scalars.insert("unpulled_residual".into(), u);
        let pass = p <= c.max_ratio * u || u <= 1e-10;
        checks.push(check("ricci_flow_residual", p, Some(c.max_ratio * u), pass, "pulled <= max_ratio * unpulled"));
        log.line("gauge residual done");
    }
    if let Some(c) = &d.mass {
        let s = mass_along_flow(traj, &c.radii)?;
        let m0 = s.scalar("initial_mass").unwrap_or(0.0);
        let tol = c.rel_tolerance * m0.abs();
        let viol = s.scalar("violation").unwrap_or(0.0);
        let drift = s.scalar("drift").unwrap_or(0.0);
        outputs.csv("mass_along_flow.csv", &s)?;
        scalars.insert("initial_mass".into(), m0);
        scalars.insert("mass_drift".into(), drift);
        let (value, pass, detail) = if c.conserve {
            (drift, drift <= tol, "max |m(t) - m(0)|")
        } else {
            (viol, viol <= tol, "max m(t) - m(0)")
        };
        checks.push(check("mass", value, Some(tol), pass, detail));
        log.line("mass along flow done");
    }
    Ok(())
}

/// Default output directory: `output.dir` or `out/<name>`.
pub fn default_out_dir(cfg: &ScenarioConfig) -> PathBuf {
    cfg.output
        .dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: &str = r#"{
        "version": 1,
        "name": "flat",
        "chart": {"kind": "torus", "dim": 3, "shape": [8], "extent": [6.283185307179586]},
        "metric": {"family": "smooth", "metric": {"kind": "flat"}},
        "flow": {"t_end": 0.02, "controls": {"snapshot_times": [0.01, 0.02]}},
        "diagnostics": {"monotonicity": {}, "einstein": {"tolerance": 1e-12}}
    }"#;

    #[test]
    fn config_roundtrip_is_identity() {
        let cfg = ScenarioConfig::from_json(FLAT).unwrap();
        let again = ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn positive_sigma_is_a_validation_error() {
        let text = FLAT.replace(r#""t_end": 0.02,"#, r#""t_end": 0.02, "sigma0": 1.0,"#);
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::SigmaRegime(_)));
        assert!(err.is_validation());
    }

    #[test]
    fn unknown_fields_and_missing_flow_are_rejected() {
        let text = FLAT.replace(r#""name": "flat","#, r#""name": "flat", "colour": 1,"#);
        assert!(ScenarioConfig::from_json(&text).unwrap_err().is_validation());
        let mut cfg = ScenarioConfig::from_json(FLAT).unwrap();
        cfg.flow = None;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("diagnostics.monotonicity"), "{err}");
    }

    #[test]
    fn flat_scenario_passes() {
        let cfg = ScenarioConfig::from_json(FLAT).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_scenario(&cfg, dir.path()).unwrap();
        assert!(summary.pass, "{summary:?}");
        assert!(dir.path().join("monotonicity.csv").exists());
        assert!(dir.path().join(RUN_LOG).exists());
    }
}
