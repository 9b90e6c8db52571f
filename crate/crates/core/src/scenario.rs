//! JSON scenario configs, problem construction, and self-contained
//! trajectory artifacts that can be re-verified without the original file.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{residual_bundle, CbfParams, ConstraintSet, Obstacle};
use crate::distributions::{phi_coefficients, DistributionKind, InfoDistribution, DEFAULT_RESOLUTION};
use crate::dynamics::{DynamicsModel, IntegratorKind, ModelKind};
use crate::ergodic::{BasisSet, Normalization, Workspace};
use crate::error::{Error, Result};
use crate::pmp::PmpOptions;
use crate::solver::{self, HistoryEntry, KktReport, KktTolerances, Multipliers, SolveResult, SolverOptions};
use crate::transcription::{initial_guess, DecisionVector, GuessShape, Mode, ProblemSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative agreement required between a stored and a recomputed metric.
pub const METRIC_TOL: f64 = 1e-9;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_quadrature() -> usize {
    DEFAULT_RESOLUTION
}

fn default_true() -> bool {
    true
}

fn default_alpha() -> f64 {
    CbfParams::default().alpha
}

fn default_tf_floor() -> f64 {
    0.01
}

/// `gamma` as written in a config: one bound, or a list to sweep over.
/// `null` (or omitting the key) disables the ergodic bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Single(f64),
    Sweep(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: Vec<f64>,
    pub half_extents: Vec<f64>,
    /// Counter-clockwise rotation in radians (planar obstacles only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    /// Row-major world-to-body rotation; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<f64>>,
}

impl ObstacleConfig {
    pub fn build(&self) -> Result<Obstacle> {
        match (&self.angle, &self.rotation) {
            (Some(_), Some(_)) => Err(Error::contract("give either angle or rotation, not both")),
            (Some(a), None) => {
                if self.center.len() != 2 || self.half_extents.len() != 2 {
                    return Err(Error::contract("angle applies to planar obstacles only"));
                }
                Obstacle::planar(
                    [self.center[0], self.center[1]],
                    [self.half_extents[0], self.half_extents[1]],
                    *a,
                )
            }
            (None, Some(r)) => Obstacle::new(self.center.clone(), self.half_extents.clone(), r.clone()),
            (None, None) => Obstacle::axis_aligned(self.center.clone(), self.half_extents.clone()),
        }
    }
}

/// Value lists for the parameters `sweep` can vary besides `gamma`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLists {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tf_init: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub init_shape: Vec<GuessShape>,
}

impl SweepLists {
    fn is_empty(&self) -> bool {
        self.intervals.is_empty() && self.tf_init.is_empty() && self.init_shape.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    /// `[lower, upper]` per workspace axis.
    pub workspace: Vec<[f64; 2]>,
    pub model: ModelKind,
    #[serde(default = "uniform")]
    pub distribution: DistributionKind,
    /// Midpoint points per axis for the distribution coefficients.
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
    pub k_max: usize,
    #[serde(default)]
    pub normalization: Normalization,
    /// Number of intervals `N`.
    pub intervals: usize,
    #[serde(default)]
    pub integrator: IntegratorKind,
    #[serde(default = "time_optimal")]
    pub mode: Mode,
    pub tf_init: f64,
    #[serde(default)]
    pub gamma: Option<GammaSetting>,
    /// Symmetric control bound; alternative to `u_lower` / `u_upper`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_upper: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    #[serde(default = "default_true")]
    pub enforce_terminal: bool,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default = "default_alpha")]
    pub cbf_alpha: f64,
    #[serde(default = "default_tf_floor")]
    pub tf_floor: f64,
    #[serde(default)]
    pub guess: GuessShape,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub pmp: PmpOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "SweepLists::is_empty")]
    pub sweep: SweepLists,
}

fn uniform() -> DistributionKind {
    DistributionKind::Uniform
}

fn time_optimal() -> Mode {
    Mode::TimeOptimal
}

/// Parameters `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    Intervals,
    TfInit,
    InitShape,
}

impl SweepParam {
    pub const ALL: [SweepParam; 4] = [Self::Gamma, Self::Intervals, Self::TfInit, Self::InitShape];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::Intervals => "N",
            Self::TfInit => "tf_init",
            Self::InitShape => "init_shape",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "N" | "n" | "intervals" => Ok(Self::Intervals),
            "tf_init" => Ok(Self::TfInit),
            "init_shape" => Ok(Self::InitShape),
            other => Err(Error::config(
                "param",
                format!("unknown sweep parameter `{other}` (expected gamma, N, tf_init or init_shape)"),
            )),
        }
    }
}

fn shape_label(shape: &GuessShape) -> String {
    match shape {
        GuessShape::Lerp => "lerp".into(),
        GuessShape::LerpNoise { sigma } => format!("lerp-noise({sigma})"),
        GuessShape::Sinusoid => "sinusoid".into(),
        GuessShape::UniformRandom => "uniform-random".into(),
    }
}

impl ScenarioConfig {
    /// Parses and validates a config; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every field that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if let Some(GammaSetting::Sweep(list)) = &self.gamma {
            if list.is_empty() {
                return Err(Error::config("gamma", "sweep list is empty"));
            }
        }
        for g in self.gamma_values() {
            if let Some(g) = g {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::config("gamma", format!("must be positive and finite, got {g}")));
                }
            }
        }
        if !(self.tf_init.is_finite() && self.tf_init > 0.0) {
            return Err(Error::config("tf_init", format!("must be positive, got {}", self.tf_init)));
        }
        for &t in &self.sweep.tf_init {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::config("sweep.tf_init", format!("must be positive, got {t}")));
            }
        }
        if self.sweep.intervals.iter().any(|&n| n < 2) {
            return Err(Error::config("sweep.intervals", "every N must be at least 2"));
        }
        self.solver.validate()?;
        if self.pmp.grid_per_axis == 0 || !(self.pmp.rel_tol > 0.0) {
            return Err(Error::config("pmp", "grid_per_axis and rel_tol must be positive"));
        }
        self.build_problem(self.gamma_values()[0]).map(|_| ())
    }

    /// Every `gamma` this config asks for; `None` means the bound is off.
    pub fn gamma_values(&self) -> Vec<Option<f64>> {
        match &self.gamma {
            None => vec![None],
            Some(GammaSetting::Single(g)) => vec![Some(*g)],
            Some(GammaSetting::Sweep(list)) => list.iter().map(|g| Some(*g)).collect(),
        }
    }

    /// The single `gamma` of a non-sweep config.
    pub fn gamma(&self) -> Result<Option<f64>> {
        match &self.gamma {
            Some(GammaSetting::Sweep(list)) if list.len() != 1 => Err(Error::config(
                "gamma",
                "is a sweep list; run `sweep --param gamma` or give a single value",
            )),
            _ => Ok(self.gamma_values()[0]),
        }
    }

    fn control_bounds(&self, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self.u_max, &self.u_lower, &self.u_upper) {
            (Some(u), None, None) => {
                if !(u.is_finite() && u > 0.0) {
                    return Err(Error::config("u_max", format!("must be positive, got {u}")));
                }
                Ok((vec![-u; m], vec![u; m]))
            }
            (None, Some(lo), Some(hi)) => {
                if lo.len() != m || hi.len() != m {
                    return Err(Error::config("u_lower/u_upper", format!("need {m} entries each")));
                }
                Ok((lo.clone(), hi.clone()))
            }
            _ => Err(Error::config("u_max", "give either u_max or both u_lower and u_upper")),
        }
    }

    /// Builds the transcribed problem for one `gamma` (`None` disables the bound).
    pub fn build_problem(&self, gamma: Option<f64>) -> Result<ProblemSpec> {
        let bounds: Vec<(f64, f64)> = self.workspace.iter().map(|b| (b[0], b[1])).collect();
        let ws = Workspace::from_bounds(&bounds).map_err(|e| Error::config("workspace", e.to_string()))?;
        let model = DynamicsModel::from_kind(self.model).map_err(|e| Error::config("model", e.to_string()))?;
        let basis = BasisSet::new(&ws, self.k_max, self.normalization)
            .map_err(|e| Error::config("k_max", e.to_string()))?;
        let dist = InfoDistribution::new(self.distribution.clone(), &ws, self.quadrature)
            .map_err(|e| Error::config("distribution", e.to_string()))?;
        let phi = phi_coefficients(&dist, &basis, &ws, self.quadrature)
            .map_err(|e| Error::config("quadrature", e.to_string()))?;
        let m = model.control_dim();
        let (u_lower, u_upper) = self.control_bounds(m)?;
        let mut constraints = ConstraintSet::new(gamma.unwrap_or(f64::INFINITY), 1.0, m, self.x0.clone(), self.xf.clone());
        constraints.u_lower = u_lower;
        constraints.u_upper = u_upper;
        constraints.enforce_terminal = self.enforce_terminal;
        constraints.tf_floor = self.tf_floor;
        constraints.cbf = CbfParams::new(self.cbf_alpha).map_err(|e| Error::config("cbf_alpha", e.to_string()))?;
        constraints.obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| o.build().map_err(|e| Error::config(format!("obstacles[{i}]"), e.to_string())))
            .collect::<Result<_>>()?;
        let spec = ProblemSpec {
            model,
            ws,
            basis,
            phi,
            constraints,
            intervals: self.intervals,
            integrator: self.integrator,
            mode: self.mode.clone(),
        };
        spec.validate().map_err(|e| match e {
            Error::Contract(msg) => Error::config(field_for(&msg), msg),
            other => other,
        })?;
        Ok(spec)
    }

    /// One config per value of `param`, each with a scalar `gamma`, paired
    /// with a printable label.
    pub fn sweep_variants(&self, param: SweepParam) -> Result<Vec<(String, ScenarioConfig)>> {
        let out: Vec<(String, ScenarioConfig)> = match param {
            SweepParam::Gamma => {
                if !matches!(self.gamma, Some(GammaSetting::Sweep(_))) {
                    return Err(Error::config("gamma", "sweep needs a list of gamma values"));
                }
                self.gamma_values()
                    .into_iter()
                    .map(|g| {
                        let mut c = self.clone();
                        c.gamma = g.map(GammaSetting::Single);
                        c.sweep = SweepLists::default();
                        (g.map_or("off".to_string(), |g| g.to_string()), c)
                    })
                    .collect()
            }
            SweepParam::Intervals => self.scalar_variants(&self.sweep.intervals, "sweep.intervals", |c, &n| {
                c.intervals = n;
                n.to_string()
            })?,
            SweepParam::TfInit => self.scalar_variants(&self.sweep.tf_init, "sweep.tf_init", |c, &t| {
                c.tf_init = t;
                t.to_string()
            })?,
            SweepParam::InitShape => self.scalar_variants(&self.sweep.init_shape, "sweep.init_shape", |c, s| {
                c.guess = *s;
                shape_label(s)
            })?,
        };
        if out.is_empty() {
            return Err(Error::config(param.name(), "sweep list is empty"));
        }
        Ok(out)
    }

    fn scalar_variants<T>(
        &self,
        values: &[T],
        field: &str,
        apply: impl Fn(&mut ScenarioConfig, &T) -> String,
    ) -> Result<Vec<(String, ScenarioConfig)>> {
        if values.is_empty() {
            return Err(Error::config(field, "sweep list is empty"));
        }
        let gamma = self.gamma()?;
        Ok(values
            .iter()
            .map(|v| {
                let mut c = self.clone();
                c.gamma = gamma.map(GammaSetting::Single);
                c.sweep = SweepLists::default();
                let label = apply(&mut c, v);
                (label, c)
            })
            .collect())
    }
}

fn field_for(msg: &str) -> &'static str {
    let lower = msg.to_ascii_lowercase();
    if lower.contains("gamma") {
        "gamma"
    } else if lower.contains("boundary") {
        "x0/xf"
    } else if lower.contains("control") {
        "u_lower/u_upper"
    } else if lower.contains("obstacle") {
        "obstacles"
    } else if lower.contains("interval") {
        "intervals"
    } else if lower.contains("tf_floor") {
        "tf_floor"
    } else if lower.contains("position selector") || lower.contains("workspace") {
        "model"
    } else {
        "config"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockViolation {
    pub block: String,
    pub max_violation: f64,
}

/// A solved trajectory plus everything needed to re-check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryArtifact {
    pub schema_version: u32,
    /// The config that produced the run, with a scalar `gamma`.
    pub scenario: ScenarioConfig,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub t_f: f64,
    pub dt: f64,
    pub ergodic_metric: f64,
    pub constraint_violations: Vec<BlockViolation>,
    pub multipliers: Multipliers,
    pub kkt: KktReport,
    pub outer_iterations: usize,
    pub final_rho: f64,
    /// File name of the iteration history CSV, relative to the artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_file: Option<String>,
    /// File name of the optimality-condition report, relative to the artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmp_report_file: Option<String>,
}

/// Outcome of re-evaluating an artifact from its own contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactCheck {
    pub stored_metric: f64,
    pub recomputed_metric: f64,
    pub metric_matches: bool,
    pub stored_max_violation: f64,
    pub recomputed_max_violation: f64,
    pub violations_match: bool,
    pub consistent: bool,
}

impl TrajectoryArtifact {
    pub fn new(scenario: &ScenarioConfig, spec: &ProblemSpec, result: &SolveResult) -> Result<Self> {
        let d = &result.decision;
        let bundle = residual_bundle(d, spec)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.clone(),
            states: d.state_rows(),
            controls: d.control_rows(),
            t_f: d.t_f(),
            dt: d.dt(),
            ergodic_metric: spec.ergodic_metric(d),
            constraint_violations: bundle
                .block_violations()
                .into_iter()
                .map(|(block, max_violation)| BlockViolation { block, max_violation })
                .collect(),
            multipliers: result.multipliers.clone(),
            kkt: result.kkt.clone(),
            outer_iterations: result.history.len(),
            final_rho: result.rho,
            history_file: None,
            pmp_report_file: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let a: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "artifact".to_string() } else { path }, e.into_inner().to_string())
        })?;
        if a.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", a.schema_version),
            ));
        }
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Rebuilds the problem from the embedded scenario echo.
    pub fn problem(&self) -> Result<ProblemSpec> {
        self.scenario.build_problem(self.scenario.gamma()?)
    }

    pub fn decision(&self) -> Result<DecisionVector> {
        DecisionVector::from_knots(&self.states, &self.controls, self.t_f)
    }

    /// Recomputes the metric and block violations from the stored knots.
    pub fn verify(&self) -> Result<ArtifactCheck> {
        let spec = self.problem()?;
        let d = self.decision()?;
        spec.check_decision(&d)?;
        let recomputed_metric = spec.ergodic_metric(&d);
        let metric_matches =
            (recomputed_metric - self.ergodic_metric).abs() <= METRIC_TOL * self.ergodic_metric.abs().max(1.0);
        let bundle = residual_bundle(&d, &spec)?;
        let recomputed_max_violation = bundle.max_violation();
        let stored_max_violation = self
            .constraint_violations
            .iter()
            .fold(0.0, |a: f64, b| a.max(b.max_violation));
        let violations_match = (recomputed_max_violation - stored_max_violation).abs()
            <= METRIC_TOL * stored_max_violation.abs().max(1.0);
        Ok(ArtifactCheck {
            stored_metric: self.ergodic_metric,
            recomputed_metric,
            metric_matches,
            stored_max_violation,
            recomputed_max_violation,
            violations_match,
            consistent: metric_matches && violations_match,
        })
    }

    /// KKT report recomputed from the stored knots and multipliers.
    pub fn kkt_report(&self) -> Result<KktReport> {
        let spec = self.problem()?;
        let d = self.decision()?;
        solver::kkt_residuals(&d, &spec, &self.multipliers, KktTolerances::from(&self.scenario.solver))
    }
}

/// A finished scenario run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: ProblemSpec,
    pub result: SolveResult,
    pub artifact: TrajectoryArtifact,
    pub wall_time: f64,
}

/// Builds the problem and initial guess from a scalar-`gamma` config and solves it.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    let spec = cfg.build_problem(cfg.gamma()?)?;
    let init = initial_guess(&spec, cfg.tf_init, cfg.guess, cfg.seed)?;
    let mut opts = cfg.solver.clone();
    opts.seed = cfg.seed;
    let start = Instant::now();
    let result = solver::solve(&spec, &opts, init)?;
    let wall_time = start.elapsed().as_secs_f64();
    let artifact = TrajectoryArtifact::new(cfg, &spec, &result)?;
    Ok(RunOutcome {
        spec,
        result,
        artifact,
        wall_time,
    })
}

/// Writes `iteration, objective, max_eq, max_ineq, stationarity` rows.
pub fn write_history_csv<W: std::io::Write>(history: &[HistoryEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "max_eq", "max_ineq", "stationarity", "rho", "inner_iterations"])
        .map_err(csv_err)?;
    for h in history {
        w.write_record([
            h.iteration.to_string(),
            h.objective.to_string(),
            h.max_eq.to_string(),
            h.max_ineq.to_string(),
            h.stationarity.to_string(),
            h.rho.to_string(),
            h.inner_iterations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `k, Phi_k` rows; `k` is the multi-index joined with `:`.
pub fn write_coefficients_csv<W: std::io::Write>(spec: &ProblemSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "phi_k"]).map_err(csv_err)?;
    for (b, phi) in spec.basis.indices().iter().zip(&spec.phi.values) {
        let k: Vec<String> = b.k.iter().map(|k| k.to_string()).collect();
        w.write_record([k.join(":"), phi.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
