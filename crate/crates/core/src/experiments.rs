//! End-to-end experiments: the ball-constrained regression, the scalar
//! two-agent example with its closed-form analysis, stepsize sweeps, and
//! the CSV/JSON artifacts they produce.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostError, LocalCost, ProblemInstance};
use crate::dpg::{self, Column, DpgError, IterateRecord, RunOptions, RunStatus, StepSchedule};
use crate::geometry::{ConvexSet, GeometryError};
use crate::network::{self, Graph, MixingMatrix, NetworkError};
use crate::rng::{seeded, Stream};
use crate::state::AgentStates;
use crate::theory::{self, Certificate, TheoryConstants, TheoryError, TheoryInputs, Variant};

pub const DEFAULT_SEED: u64 = 3;
/// Divergence level for the scalar example.
pub const ONE_DIM_DIVERGENCE: f64 = 1e6;
/// Stepsizes below this keep the scalar example confined.
pub const ONE_DIM_ALPHA_LIMIT: f64 = 1.0 / 45.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no admissible schedule left to run")]
    EmptySweep,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dpg(#[from] DpgError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Regression,
    OneDim,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    WattsStrogatz { k: usize, rewire_p: f64 },
    Ring,
    Complete,
    /// Explicit symmetric doubly stochastic weights.
    Explicit { weights: Vec<Vec<f64>> },
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self::WattsStrogatz { k: 4, rewire_p: 0.3 }
    }
}

/// A stepsize, possibly expressed relative to the problem constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSpec {
    Constant { alpha: f64 },
    /// `factor / (μ + L)`.
    Scaled { factor: f64 },
    Polynomial { v: f64, w: f64, p: f64 },
    /// `v/(t+w)^p` with `w^p = L + μ`.
    Matched { v: f64, p: f64 },
}

impl StepSpec {
    pub fn resolve(&self, l: f64, mu: f64) -> Result<StepSchedule, DpgError> {
        match *self {
            Self::Constant { alpha } => StepSchedule::constant(alpha),
            Self::Scaled { factor } => StepSchedule::constant(factor / (mu + l)),
            Self::Polynomial { v, w, p } => StepSchedule::polynomial(v, w, p),
            Self::Matched { v, p } => StepSchedule::polynomial(v, (l + mu).powf(1.0 / p), p),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Constant { alpha } => format!("constant_{alpha}"),
            Self::Scaled { factor } => format!("scaled_{factor}"),
            Self::Polynomial { v, w, p } => format!("poly_v{v}_w{w}_p{p}"),
            Self::Matched { v, p } => format!("matched_v{v}_p{p}"),
        }
    }

    /// Constant presets `{4, 3, 1, 1/2}/(μ+L)` followed by `0.5/(t+w)^p`
    /// with `w^p = L+μ` for `p ∈ {0.25, 0.5, 0.75, 1}`.
    pub fn regression_presets() -> Vec<Self> {
        let mut out: Vec<Self> = [4.0, 3.0, 1.0, 0.5].iter().map(|&factor| Self::Scaled { factor }).collect();
        out.extend([0.25, 0.5, 0.75, 1.0].iter().map(|&p| Self::Matched { v: 0.5, p }));
        out
    }

    pub fn one_dim_presets() -> Vec<Self> {
        [200.0, 100.0, 46.0, 43.0]
            .iter()
            .map(|&k| Self::Constant { alpha: 1.0 / k })
            .collect()
    }
}

/// Costs and feasible set for a custom experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub costs: Vec<LocalCost>,
    pub set: ConvexSet,
}

/// Everything one experiment needs. Missing fields take the defaults of
/// the regression experiment; horizon, schedules, graph and divergence
/// level fall back per experiment kind when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Agents.
    pub n: usize,
    /// Decision dimension.
    pub d: usize,
    /// Observations per agent.
    pub p_dim: usize,
    pub noise_std: f64,
    /// Radius of the feasible ball.
    pub radius: f64,
    pub graph: Option<GraphSpec>,
    pub schedules: Vec<StepSpec>,
    pub horizon: Option<u64>,
    pub initial_states: Option<Vec<Vec<f64>>>,
    pub problem: Option<ProblemSpec>,
    pub bounds: bool,
    pub variant: Variant,
    /// Skip inadmissible schedules instead of warning.
    pub strict: bool,
    pub divergence_threshold: Option<f64>,
    /// End a run once the iterates stop moving.
    pub stop_when_stalled: Option<bool>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Regression,
            seed: DEFAULT_SEED,
            n: 50,
            d: 5,
            p_dim: 2,
            noise_std: 0.1,
            radius: 3.0,
            graph: None,
            schedules: Vec::new(),
            horizon: None,
            initial_states: None,
            problem: None,
            bounds: true,
            variant: Variant::Theorem,
            strict: false,
            divergence_threshold: None,
            stop_when_stalled: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn regression() -> Self {
        Self::default()
    }

    pub fn one_dim() -> Self {
        Self {
            experiment: ExperimentKind::OneDim,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn horizon(&self) -> u64 {
        self.horizon.unwrap_or(match self.experiment {
            ExperimentKind::OneDim => 100_000,
            _ => 5000,
        })
    }

    pub fn schedules(&self) -> Vec<StepSpec> {
        if !self.schedules.is_empty() {
            return self.schedules.clone();
        }
        match self.experiment {
            ExperimentKind::OneDim => StepSpec::one_dim_presets(),
            _ => StepSpec::regression_presets(),
        }
    }

    fn run_options(&self) -> RunOptions {
        let one_dim = self.experiment == ExperimentKind::OneDim;
        RunOptions {
            divergence_threshold: self.divergence_threshold.unwrap_or(if one_dim {
                ONE_DIM_DIVERGENCE
            } else {
                dpg::DIVERGENCE_THRESHOLD
            }),
            keep_states: one_dim,
            stop_when_stalled: self.stop_when_stalled.unwrap_or(one_dim),
        }
    }
}

/// Least-squares data: `P_i` uniform on `[0,1]^{d×p}`, `x̃ ~ N(0, I)`,
/// `q_i = P_iᵀx̃ + ε_i` with `ε_i ~ N(0, σ²I)`; Ω is the centered ball.
pub fn regression_problem(
    n: usize,
    d: usize,
    p_dim: usize,
    noise_std: f64,
    radius: f64,
    seed: u64,
) -> Result<ProblemInstance, ExperimentError> {
    if n == 0 || d == 0 || p_dim == 0 {
        return Err(ExperimentError::Config("n, d and p_dim must be positive".into()));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut rng = seeded(seed, Stream::ProblemData);
    let truth = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let costs = (0..n)
        .map(|_| {
            let p = DMatrix::from_fn(d, p_dim, |_, _| unit.sample(&mut rng));
            let eps = DVector::from_fn(p_dim, |_, _| noise.sample(&mut rng));
            let q = p.tr_mul(&truth) + eps;
            LocalCost::least_squares(p, q)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProblemInstance::new(costs, ConvexSet::centered_ball(d, radius)?)?)
}

/// Standard normal initial states (projected later by the runner).
pub fn gaussian_states(n: usize, d: usize, seed: u64) -> AgentStates {
    let mut rng = seeded(seed, Stream::InitialStates);
    AgentStates::new(
        (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
}

/// Feasible set family for [`random_quadratic_problem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Ball,
    Box,
    WholeSpace,
}

/// Random strongly convex quadratics `½xᵀQ_ix + b_iᵀx` with
/// `Q_i = M Mᵀ/d + 0.1 I` and Gaussian `M`, `b_i`. The ball and box are
/// small enough that the constraint is typically active.
pub fn random_quadratic_problem(n: usize, d: usize, set: SetKind, seed: u64) -> Result<ProblemInstance, ExperimentError> {
    let mut rng = seeded(seed, Stream::ProblemData);
    let mut gauss = || rng.sample::<f64, _>(StandardNormal);
    let costs = (0..n)
        .map(|_| {
            let m = DMatrix::from_fn(d, d, |_, _| gauss());
            let q = (&m * m.transpose()) / d as f64 + DMatrix::identity(d, d) * 0.1;
            let q = (&q + q.transpose()) * 0.5;
            let b = DVector::from_fn(d, |_, _| 2.0 * gauss());
            LocalCost::quadratic(q, b, 0.0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let omega = match set {
        SetKind::Ball => ConvexSet::centered_ball(d, 1.0)?,
        SetKind::Box => ConvexSet::boxed(vec![-0.5; d], vec![0.5; d])?,
        SetKind::WholeSpace => ConvexSet::WholeSpace,
    };
    Ok(ProblemInstance::new(costs, omega)?)
}

fn build_mixing(spec: &GraphSpec, n: usize, seed: u64) -> Result<MixingMatrix, ExperimentError> {
    Ok(match spec {
        GraphSpec::WattsStrogatz { k, rewire_p } => {
            network::metropolis_weights(&network::build_watts_strogatz(n, *k, *rewire_p, seed)?)?
        }
        GraphSpec::Ring => network::metropolis_weights(&Graph::ring(n)?)?,
        GraphSpec::Complete => network::metropolis_weights(&Graph::complete(n)?)?,
        GraphSpec::Explicit { weights } => network::explicit_matrix(weights)?,
    })
}

/// The scalar example: `5x²` and `−3x²` on `[1, ∞)` with weights
/// `[[2/3, 1/3], [1/3, 2/3]]`.
pub fn one_dim_problem() -> (ProblemInstance, MixingMatrix) {
    let problem = ProblemInstance::new(
        vec![LocalCost::scalar(5.0), LocalCost::scalar(-3.0)],
        ConvexSet::interval(1.0, f64::INFINITY).expect("valid interval"),
    )
    .expect("the example is strongly convex");
    let w = network::explicit_matrix(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]])
        .expect("valid weights");
    (problem, w)
}

/// Larger eigenvalue of the linearized scalar update,
/// `2/3 − 2α + √(1/9 + 64α²)`.
pub fn lambda_plus(alpha: f64) -> f64 {
    2.0 / 3.0 - 2.0 * alpha + (1.0 / 9.0 + 64.0 * alpha * alpha).sqrt()
}

/// Limit point `(1, 1/(1−18α))` of the scalar example, for `α < 1/18`.
pub fn one_dim_fixed_point(alpha: f64) -> Option<[f64; 2]> {
    (alpha < 1.0 / 18.0).then(|| [1.0, 1.0 / (1.0 - 18.0 * alpha)])
}

/// `⌊log‖x(0)‖ / log(1/λ₊) − 1⌋`, the latest step by which the first
/// agent must reach the constraint.
pub fn hitting_time_bound(x0_norm: f64, alpha: f64) -> Option<i64> {
    let lp = lambda_plus(alpha);
    (lp < 1.0 && lp > 0.0).then(|| (x0_norm.ln() / (1.0 / lp).ln() - 1.0).floor() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneDimAnalysis {
    pub alpha: f64,
    pub lambda_plus: f64,
    pub fixed_point: Option<[f64; 2]>,
    /// First `t` with `x_1(t+1) = 1`.
    pub hitting_time: Option<u64>,
    pub hitting_time_bound: Option<i64>,
    pub hitting_time_ok: Option<bool>,
    /// After the hitting time: `x_1 = 1` and `x_2 ≤ 1 + 30α`.
    pub confined: Option<bool>,
    /// Largest coordinate gap to the fixed point at the end.
    pub final_error: Option<f64>,
    /// `x_2 − 1` at the end.
    pub limiting_x2_error: f64,
    /// `(x_2 − 1) / (18α/(1−18α))`.
    pub error_ratio: Option<f64>,
}

fn analyze_one_dim(alpha: f64, x0: &AgentStates, records: &[IterateRecord], converged: bool) -> OneDimAnalysis {
    let point = |r: &IterateRecord| {
        let s = r.states.as_ref().expect("scalar runs keep states");
        [s.rows()[0][0], s.rows()[1][0]]
    };
    let fixed = one_dim_fixed_point(alpha);
    let hitting = records.iter().skip(1).find(|r| point(r)[0] == 1.0).map(|r| r.t - 1);
    let bound = hitting_time_bound(x0.norm(), alpha);
    let confined = hitting.filter(|_| alpha < ONE_DIM_ALPHA_LIMIT).map(|t0| {
        records
            .iter()
            .filter(|r| r.t > t0)
            .all(|r| point(r)[0] == 1.0 && point(r)[1] <= 1.0 + 30.0 * alpha)
    });
    let last = point(records.last().expect("nonempty"));
    let (final_error, error_ratio) = match fixed {
        Some(fp) if converged => (
            Some((last[0] - fp[0]).abs().max((last[1] - fp[1]).abs())),
            Some((last[1] - 1.0) / (18.0 * alpha / (1.0 - 18.0 * alpha))),
        ),
        _ => (None, None),
    };
    OneDimAnalysis {
        alpha,
        lambda_plus: lambda_plus(alpha),
        fixed_point: fixed,
        hitting_time: hitting,
        hitting_time_bound: bound,
        hitting_time_ok: match (hitting, bound) {
            (Some(t0), Some(b)) => Some((t0 as i64) <= b),
            _ => None,
        },
        confined,
        final_error,
        limiting_x2_error: last[1] - 1.0,
        error_ratio,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub t: u64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
}

impl From<&IterateRecord> for FinalMetrics {
    fn from(r: &IterateRecord) -> Self {
        Self {
            t: r.t,
            a: r.a,
            b: r.b,
            c: r.c,
            r1: r.r1,
            r2: r.r2,
        }
    }
}

/// One completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub spec: StepSpec,
    pub schedule: StepSchedule,
    pub admissible: bool,
    pub warnings: Vec<String>,
    pub status: RunStatus,
    pub final_metrics: FinalMetrics,
    /// Smallest `R1` over the second half of the run.
    pub tail_min_r1: f64,
    /// Largest `‖x‖` seen.
    pub max_state_norm: f64,
    pub constants: Option<TheoryConstants>,
    pub certificate: Option<Certificate>,
    pub one_dim: Option<OneDimAnalysis>,
    #[serde(skip)]
    pub records: Vec<IterateRecord>,
    #[serde(skip)]
    pub columns: Vec<Column>,
}

impl RunReport {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn violations(&self) -> usize {
        self.certificate.as_ref().map_or(0, Certificate::total_violations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed(Box<RunReport>),
    Failed { label: String, error: String },
    Skipped { label: String, reason: String },
}

impl RunOutcome {
    pub fn report(&self) -> Option<&RunReport> {
        match self {
            Self::Completed(r) => Some(r),
            _ => None,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Self::Completed(r) => &r.label,
            Self::Failed { label, .. } | Self::Skipped { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub n: usize,
    pub dim: usize,
    pub l: f64,
    pub mu: f64,
    pub heterogeneity: f64,
    pub x_star: Vec<f64>,
    pub beta: f64,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub horizon: u64,
    pub problem: ProblemSummary,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentReport {
    pub fn completed(&self) -> impl Iterator<Item = &RunReport> {
        self.runs.iter().filter_map(RunOutcome::report)
    }

    pub fn total_violations(&self) -> usize {
        self.completed().map(RunReport::violations).sum()
    }

    pub fn run(&self, label_suffix: &str) -> Option<&RunReport> {
        self.completed().find(|r| r.label.ends_with(label_suffix))
    }
}

struct Setup {
    problem: ProblemInstance,
    w: MixingMatrix,
    x0: AgentStates,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, ExperimentError> {
    let (problem, w) = match cfg.experiment {
        ExperimentKind::OneDim => one_dim_problem(),
        ExperimentKind::Regression => {
            let problem = regression_problem(cfg.n, cfg.d, cfg.p_dim, cfg.noise_std, cfg.radius, cfg.seed)?;
            let w = build_mixing(&cfg.graph.clone().unwrap_or_default(), problem.n(), cfg.seed)?;
            (problem, w)
        }
        ExperimentKind::Custom => {
            let spec = cfg
                .problem
                .clone()
                .ok_or_else(|| ExperimentError::Config("custom experiments need a \"problem\"".into()))?;
            let problem = ProblemInstance::new(spec.costs, spec.set)?;
            let w = build_mixing(&cfg.graph.clone().unwrap_or_default(), problem.n(), cfg.seed)?;
            (problem, w)
        }
    };
    let x0 = match (&cfg.initial_states, cfg.experiment) {
        (Some(rows), _) => {
            if rows.len() != problem.n() || rows.iter().any(|r| r.len() != problem.dim()) {
                return Err(ExperimentError::Config(format!(
                    "initial_states must be {} rows of length {}",
                    problem.n(),
                    problem.dim()
                )));
            }
            AgentStates::from_rows(rows)
        }
        (None, ExperimentKind::OneDim) => AgentStates::from_rows(&[vec![5.0], vec![10.0]]),
        (None, _) => gaussian_states(problem.n(), problem.dim(), cfg.seed),
    };
    Ok(Setup { problem, w, x0 })
}

fn admissibility(kind: ExperimentKind, schedule: &StepSchedule, l: f64, mu: f64) -> Option<String> {
    let a0 = schedule.alpha0();
    match kind {
        ExperimentKind::OneDim if a0 >= ONE_DIM_ALPHA_LIMIT => {
            Some(format!("alpha = {a0} is not below 1/45; the iterates may diverge"))
        }
        ExperimentKind::OneDim => None,
        _ if a0 > 2.0 / (l + mu) => Some(format!("alpha(0) = {a0} exceeds 2/(L+mu) = {}", 2.0 / (l + mu))),
        _ => None,
    }
}

fn execute(
    cfg: &ExperimentConfig,
    s: &Setup,
    label: String,
    spec: StepSpec,
    schedule: StepSchedule,
    warning: Option<String>,
) -> Result<RunReport, ExperimentError> {
    let opts = cfg.run_options();
    let traj = dpg::simulate(&s.problem, &s.w, &schedule, &s.x0, cfg.horizon(), &opts)?;
    let records = traj.records;
    let first = &records[0];
    let mut warnings: Vec<String> = warning.iter().cloned().collect();
    let constants = match theory::compute_constants(
        &TheoryInputs::new(&s.problem, &s.w, first.c),
        &schedule,
        None,
        cfg.variant,
    ) {
        Ok(c) => Some(c),
        Err(e) => {
            warnings.push(format!("theory constants unavailable: {e}"));
            None
        }
    };
    let mut columns = Vec::new();
    let certificate = match (&constants, cfg.bounds) {
        (Some(c), true) => {
            let series = theory::bound_series(&records, c);
            if let Some(v) = series.consensus {
                columns.push(Column {
                    name: "consensus_bound".into(),
                    values: v,
                });
            }
            if let Some(v) = series.main {
                columns.push(Column {
                    name: "main_bound".into(),
                    values: v,
                });
            }
            Some(theory::certify(&records, c))
        }
        _ => None,
    };
    let converged = matches!(traj.status, RunStatus::Converged { .. });
    let one_dim = (cfg.experiment == ExperimentKind::OneDim).then(|| {
        let alpha = schedule.alpha0();
        let analysis = analyze_one_dim(alpha, &s.x0, &records, converged);
        let xs: Vec<[f64; 2]> = records
            .iter()
            .map(|r| {
                let st = r.states.as_ref().expect("kept");
                [st.rows()[0][0], st.rows()[1][0]]
            })
            .collect();
        columns.push(Column {
            name: "x1".into(),
            values: xs.iter().map(|x| x[0]).collect(),
        });
        columns.push(Column {
            name: "x2".into(),
            values: xs.iter().map(|x| x[1]).collect(),
        });
        if let Some(fp) = analysis.fixed_point {
            columns.push(Column {
                name: "R_fixed".into(),
                values: xs.iter().map(|x| (x[0] - fp[0]).powi(2) + (x[1] - fp[1]).powi(2)).collect(),
            });
        }
        analysis
    });
    let last = records.last().expect("nonempty");
    let half = last.t / 2;
    let tail_min_r1 = records.iter().filter(|r| r.t >= half).map(|r| r.r1).fold(f64::INFINITY, f64::min);
    let max_state_norm = match traj.status {
        RunStatus::Diverged { norm, .. } => norm,
        _ => records
            .iter()
            .map(|r| (r.a + s.problem.n() as f64 * r.x_bar.norm_squared()).sqrt())
            .fold(0.0, f64::max),
    };
    Ok(RunReport {
        label,
        spec,
        schedule,
        admissible: warning.is_none(),
        warnings,
        status: traj.status,
        final_metrics: last.into(),
        tail_min_r1,
        max_state_norm,
        constants,
        certificate,
        one_dim,
        records,
        columns,
    })
}

/// Run the configured experiment over `specs`; runs are independent and
/// execute in parallel, failures are kept as [`RunOutcome::Failed`].
pub fn sweep(cfg: &ExperimentConfig, specs: &[StepSpec]) -> Result<ExperimentReport, ExperimentError> {
    if specs.is_empty() {
        return Err(ExperimentError::EmptySweep);
    }
    let s = setup(cfg)?;
    let (l, mu) = (s.problem.l(), s.problem.mu());
    let planned: Vec<_> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let label = format!("{i:02}_{}", spec.label());
            let resolved = spec.resolve(l, mu).map(|sch| {
                let warning = admissibility(cfg.experiment, &sch, l, mu);
                (sch, warning)
            });
            (label, *spec, resolved)
        })
        .collect();
    if cfg.strict && !planned.iter().any(|(_, _, r)| matches!(r, Ok((_, None)))) {
        return Err(ExperimentError::EmptySweep);
    }
    let runs = planned
        .into_par_iter()
        .map(|(label, spec, resolved)| match resolved {
            Err(e) => RunOutcome::Failed {
                label,
                error: e.to_string(),
            },
            Ok((_, Some(reason))) if cfg.strict => RunOutcome::Skipped { label, reason },
            Ok((schedule, warning)) => match execute(cfg, &s, label.clone(), spec, schedule, warning) {
                Ok(r) => RunOutcome::Completed(Box::new(r)),
                Err(e) => RunOutcome::Failed {
                    label,
                    error: e.to_string(),
                },
            },
        })
        .collect();
    Ok(ExperimentReport {
        experiment: cfg.experiment,
        seed: cfg.seed,
        horizon: cfg.horizon(),
        problem: ProblemSummary {
            n: s.problem.n(),
            dim: s.problem.dim(),
            l,
            mu,
            heterogeneity: s.problem.heterogeneity(),
            x_star: s.problem.x_star().as_slice().to_vec(),
            beta: s.w.beta(),
            lambda_min: s.w.lambda_min(),
        },
        runs,
    })
}

/// Run the experiment with its configured (or preset) schedules.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    sweep(cfg, &cfg.schedules())
}

pub fn run_regression(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    if cfg.experiment != ExperimentKind::Regression {
        return Err(ExperimentError::Config("expected a regression configuration".into()));
    }
    run_experiment(cfg)
}

pub fn run_one_dim(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    if cfg.experiment != ExperimentKind::OneDim {
        return Err(ExperimentError::Config("expected a one_dim configuration".into()));
    }
    run_experiment(cfg)
}

/// Theory constants for every schedule of the configuration, evaluated at
/// the (projected) initial state.
pub fn constants_for(cfg: &ExperimentConfig) -> Result<Vec<(String, TheoryConstants)>, ExperimentError> {
    let s = setup(cfg)?;
    let x0 = AgentStates::new(
        s.x0.rows()
            .iter()
            .map(|r| s.problem.set().project(r))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let c0 = x0.squared_distance_to(s.problem.x_star());
    let inputs = TheoryInputs::new(&s.problem, &s.w, c0);
    cfg.schedules()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let sch = spec.resolve(s.problem.l(), s.problem.mu())?;
            let c = theory::compute_constants(&inputs, &sch, None, cfg.variant)?;
            Ok((format!("{i:02}_{}", spec.label()), c))
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `<label>.csv` per completed run, `summary.json`, and
/// `violations.json` when any check failed. Returns the written paths.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for run in report.completed() {
        let path = dir.join(format!("{}.csv", run.label));
        let mut buf = Vec::new();
        dpg::write_csv(&mut buf, &run.records, &run.columns).map_err(io_err(&path))?;
        fs::write(&path, buf).map_err(io_err(&path))?;
        written.push(path);
    }
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(report)?).map_err(io_err(&summary))?;
    written.push(summary);
    let violations: Vec<_> = report
        .completed()
        .filter(|r| r.violations() > 0)
        .map(|r| {
            serde_json::json!({
                "label": r.label,
                "total": r.violations(),
                "violations": r.certificate.as_ref().map(|c| &c.violations),
            })
        })
        .collect();
    if !violations.is_empty() {
        let path = dir.join("violations.json");
        fs::write(&path, serde_json::to_string_pretty(&violations)?).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_plus_values() {
        let direct = 2.0 / 3.0 - 0.02 + (1.0f64 / 9.0 + 64e-4).sqrt();
        assert_eq!(lambda_plus(0.01), direct);
        assert!((lambda_plus(0.01) - 0.989466).abs() < 1e-6);
        assert!(lambda_plus(1.0 / 43.0) > 1.0);
        assert!(lambda_plus(1.0 / 46.0) < 1.0);
    }

    #[test]
    fn lambda_plus_is_an_eigenvalue_of_the_linear_update() {
        for alpha in [0.001, 0.01, 1.0 / 46.0, 0.05] {
            let m = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0 - 10.0 * alpha, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0 + 6.0 * alpha]);
            let eig = m.symmetric_eigen().eigenvalues;
            let top = eig.iter().copied().fold(f64::MIN, f64::max);
            assert!((top - lambda_plus(alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn presets() {
        assert_eq!(StepSpec::regression_presets().len(), 8);
        let m = StepSpec::Matched { v: 0.5, p: 0.5 }.resolve(10.0, 2.0).unwrap();
        assert!((m.alpha0() - 0.5 / 12.0).abs() < 1e-15);
        let c = StepSpec::Scaled { factor: 4.0 }.resolve(10.0, 2.0).unwrap();
        assert_eq!(c.alpha0(), 4.0 / 12.0);
    }

    #[test]
    fn regression_data_is_seeded() {
        let a = regression_problem(6, 3, 2, 0.1, 3.0, 7).unwrap();
        let b = regression_problem(6, 3, 2, 0.1, 3.0, 7).unwrap();
        let c = regression_problem(6, 3, 2, 0.1, 3.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_defaults_and_json() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"one_dim","schedules":[{"kind":"constant","alpha":0.01}]}"#).unwrap();
        assert_eq!(cfg.horizon(), 100_000);
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn strict_mode_with_nothing_admissible_fails() {
        let cfg = ExperimentConfig {
            strict: true,
            ..ExperimentConfig::one_dim()
        };
        let r = sweep(&cfg, &[StepSpec::Constant { alpha: 1.0 / 43.0 }]);
        assert!(matches!(r, Err(ExperimentError::EmptySweep)));
        assert!(matches!(sweep(&cfg, &[]), Err(ExperimentError::EmptySweep)));
    }

    #[test]
    fn one_dim_run_reports_the_fixed_point() {
        let cfg = ExperimentConfig {
            bounds: false,
            ..ExperimentConfig::one_dim()
        };
        let report = sweep(&cfg, &[StepSpec::Constant { alpha: 0.01 }]).unwrap();
        let run = report.completed().next().unwrap();
        let a = run.one_dim.as_ref().unwrap();
        assert!(a.final_error.unwrap() < 1e-8);
        assert_eq!(a.hitting_time_ok, Some(true));
        assert_eq!(a.confined, Some(true));
    }
}
