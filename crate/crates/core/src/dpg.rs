//! The DPG iteration, stepsize schedules, trajectory recording and metrics.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::ProblemInstance;
use crate::geometry::GeometryError;
use crate::network::MixingMatrix;
use crate::state::AgentStates;

/// Default state-norm level treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e9;
/// Per-agent displacement below which a step counts as stalled.
pub const STALL_TOL: f64 = 1e-12;
/// Consecutive stalled steps needed to declare convergence.
pub const STALL_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpgError {
    #[error("state diverged at t = {t} (norm {norm:e})")]
    NonFiniteState { t: u64, norm: f64 },
    #[error("invalid stepsize schedule: {0}")]
    InvalidSchedule(String),
    #[error("expected {expected} agents, got {got}")]
    AgentCountMismatch { expected: usize, got: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `α(t) = v/(t+w)^p`.
    Polynomial { v: f64, w: f64, p: f64 },
}

impl StepSchedule {
    pub fn constant(alpha: f64) -> Result<Self, DpgError> {
        let s = Self::Constant { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(v: f64, w: f64, p: f64) -> Result<Self, DpgError> {
        let s = Self::Polynomial { v, w, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DpgError> {
        let bad = |m: String| Err(DpgError::InvalidSchedule(m));
        match *self {
            Self::Constant { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                bad(format!("alpha must be positive and finite, got {alpha}"))
            }
            Self::Polynomial { v, .. } if !(v > 0.0 && v.is_finite()) => {
                bad(format!("v must be positive and finite, got {v}"))
            }
            Self::Polynomial { w, .. } if !(w >= 1.0 && w.is_finite()) => {
                bad(format!("w must be at least 1, got {w}"))
            }
            Self::Polynomial { p, .. } if !(p > 0.0 && p <= 1.0) => {
                bad(format!("p must lie in (0, 1], got {p}"))
            }
            _ => Ok(()),
        }
    }

    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            Self::Constant { alpha } => alpha,
            Self::Polynomial { v, w, p } => v / (t as f64 + w).powf(p),
        }
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha(0)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }
}

fn check_shape(problem: &ProblemInstance, w: &MixingMatrix, x: &AgentStates) -> Result<(), DpgError> {
    if w.n() != problem.n() {
        return Err(DpgError::AgentCountMismatch {
            expected: problem.n(),
            got: w.n(),
        });
    }
    if x.n_agents() != problem.n() {
        return Err(DpgError::AgentCountMismatch {
            expected: problem.n(),
            got: x.n_agents(),
        });
    }
    if x.dim() != problem.dim() {
        return Err(DpgError::DimensionMismatch {
            expected: problem.dim(),
            got: x.dim(),
        });
    }
    Ok(())
}

fn step_unchecked(problem: &ProblemInstance, w: &MixingMatrix, x: &AgentStates, alpha: f64) -> AgentStates {
    let rows = (0..problem.n())
        .map(|i| {
            let mut y = w.mix_row(i, x);
            y.axpy(-alpha, &problem.local_grad(i, &x.rows()[i]), 1.0);
            problem.set().project(&y).expect("dimensions checked")
        })
        .collect();
    AgentStates::new(rows)
}

/// One DPG step: mix the old states, subtract the local gradient taken at
/// each agent's own old state, project.
pub fn dpg_step(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    x: &AgentStates,
    alpha: f64,
) -> Result<AgentStates, DpgError> {
    check_shape(problem, w, x)?;
    let next = step_unchecked(problem, w, x, alpha);
    if !next.is_finite() {
        return Err(DpgError::NonFiniteState { t: 0, norm: next.norm() });
    }
    Ok(next)
}

/// Errors and normalized errors of one iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub t: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<AgentStates>,
    #[serde(with = "crate::serde_util::vector")]
    pub x_bar: DVector<f64>,
    /// Consensus error `Σ‖x_i − x̄‖²`.
    pub a: f64,
    /// Optimality error `n‖x̄ − x*‖²`.
    pub b: f64,
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
    /// Stepsize used to leave this iterate.
    pub alpha: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

struct Normalizer {
    dist0: f64,
    spread0: f64,
}

impl Normalizer {
    fn new(x0: &AgentStates, x_star: &DVector<f64>) -> Self {
        Self {
            dist0: (x0.mean() - x_star).norm(),
            spread0: x0.spread(),
        }
    }

    fn record(&self, t: u64, x: &AgentStates, x_star: &DVector<f64>, alpha: f64, keep: bool) -> IterateRecord {
        let x_bar = x.mean();
        let dist = (&x_bar - x_star).norm();
        let a = x.consensus_error();
        let b = x.n_agents() as f64 * dist * dist;
        IterateRecord {
            t,
            states: keep.then(|| x.clone()),
            a,
            b,
            c: a + b,
            r1: ratio(dist, self.dist0),
            r2: ratio(x.spread(), self.spread0),
            alpha,
            x_bar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Stop once `‖x‖` exceeds this.
    pub divergence_threshold: f64,
    /// Store the full state in every record.
    pub keep_states: bool,
    /// End early after [`STALL_WINDOW`] consecutive steps moving less
    /// than [`STALL_TOL`].
    pub stop_when_stalled: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            divergence_threshold: DIVERGENCE_THRESHOLD,
            keep_states: true,
            stop_when_stalled: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Horizon reached.
    Completed,
    /// Stalled at iterate `t`.
    Converged { t: u64 },
    /// The step leaving iterate `t` produced a state of norm `norm`.
    Diverged { t: u64, norm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    pub status: RunStatus,
    /// Last finite state.
    pub final_states: AgentStates,
}

impl Trajectory {
    pub fn last(&self) -> &IterateRecord {
        self.records.last().expect("a trajectory always holds the initial record")
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

/// Run up to `horizon` steps from the projection of `x0`, keeping partial
/// results on divergence.
pub fn simulate(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    schedule: &StepSchedule,
    x0: &AgentStates,
    horizon: u64,
    opts: &RunOptions,
) -> Result<Trajectory, DpgError> {
    schedule.validate()?;
    check_shape(problem, w, x0)?;
    let set = problem.set();
    let mut x = AgentStates::new(
        x0.rows()
            .iter()
            .map(|r| set.project(r))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let x_star = problem.x_star();
    let norm = Normalizer::new(&x, x_star);
    let mut records = vec![norm.record(0, &x, x_star, schedule.alpha(0), opts.keep_states)];
    let mut stalled = 0usize;
    let mut status = RunStatus::Completed;
    for t in 0..horizon {
        let next = step_unchecked(problem, w, &x, schedule.alpha(t));
        let size = next.norm();
        if !size.is_finite() || size > opts.divergence_threshold {
            status = RunStatus::Diverged { t, norm: size };
            break;
        }
        let moved = next.max_displacement(&x);
        x = next;
        records.push(norm.record(t + 1, &x, x_star, schedule.alpha(t + 1), opts.keep_states));
        stalled = if moved < STALL_TOL { stalled + 1 } else { 0 };
        if opts.stop_when_stalled && stalled >= STALL_WINDOW {
            status = RunStatus::Converged { t: t + 1 };
            break;
        }
    }
    Ok(Trajectory {
        records,
        status,
        final_states: x,
    })
}

/// Exactly `horizon + 1` records with full states; divergence is an error.
pub fn run(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    schedule: &StepSchedule,
    x0: &AgentStates,
    horizon: u64,
) -> Result<Vec<IterateRecord>, DpgError> {
    let traj = simulate(problem, w, schedule, x0, horizon, &RunOptions::default())?;
    match traj.status {
        RunStatus::Diverged { t, norm } => Err(DpgError::NonFiniteState { t, norm }),
        _ => Ok(traj.records),
    }
}

/// `E_α(x) = ½(Σ‖x_k‖² − ΣΣ w_kj⟨x_k, x_j⟩) + α Σ f_k(x_k)`.
pub fn energy_functional(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    alpha: f64,
    x: &AgentStates,
) -> Result<f64, DpgError> {
    check_shape(problem, w, x)?;
    let mut quad = 0.0;
    let mut cost = 0.0;
    for (k, xk) in x.rows().iter().enumerate() {
        quad += xk.norm_squared() - xk.dot(&w.mix_row(k, x));
        cost += problem.costs()[k].value(xk).expect("dimensions checked");
    }
    Ok(0.5 * quad + alpha * cost)
}

/// `∇E_α(x)_k = x_k − Σ_j w_kj x_j + α∇f_k(x_k)`; uses the symmetry of `W`.
pub fn energy_gradient(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    alpha: f64,
    x: &AgentStates,
) -> Result<AgentStates, DpgError> {
    check_shape(problem, w, x)?;
    Ok(AgentStates::new(
        x.rows()
            .iter()
            .enumerate()
            .map(|(k, xk)| xk - w.mix_row(k, x) + problem.local_grad(k, xk) * alpha)
            .collect(),
    ))
}

/// Extra per-iterate column written after the metric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// CSV with header `t,A,B,C,R1,R2,alpha` followed by the extra columns.
/// Floats carry 17 significant digits. Missing extra values are left blank.
pub fn write_csv<W: Write>(out: &mut W, records: &[IterateRecord], extra: &[Column]) -> io::Result<()> {
    write!(out, "t,A,B,C,R1,R2,alpha")?;
    for c in extra {
        write!(out, ",{}", c.name)?;
    }
    writeln!(out)?;
    for (k, r) in records.iter().enumerate() {
        write!(out, "{}", r.t)?;
        for v in [r.a, r.b, r.c, r.r1, r.r2, r.alpha] {
            write!(out, ",{v:.16e}")?;
        }
        for c in extra {
            match c.values.get(k) {
                Some(v) => write!(out, ",{v:.16e}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::LocalCost;
    use crate::geometry::ConvexSet;
    use crate::network::explicit_matrix;

    fn one_dim() -> (ProblemInstance, MixingMatrix) {
        let p = ProblemInstance::new(
            vec![LocalCost::scalar(5.0), LocalCost::scalar(-3.0)],
            ConvexSet::interval(1.0, f64::INFINITY).unwrap(),
        )
        .unwrap();
        let w = explicit_matrix(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        (p, w)
    }

    #[test]
    fn schedule_values() {
        assert_eq!(StepSchedule::polynomial(0.5, 16.0, 1.0).unwrap().alpha(0), 1.0 / 32.0);
        assert_eq!(StepSchedule::constant(0.01).unwrap().alpha(1_000_000), 0.01);
        assert_eq!(StepSchedule::polynomial(1.0, 1.0, 0.5).unwrap().alpha(3), 0.5);
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::constant(0.0).is_err());
        assert!(StepSchedule::polynomial(1.0, 0.5, 0.5).is_err());
        assert!(StepSchedule::polynomial(1.0, 1.0, 1.5).is_err());
        assert!(StepSchedule::polynomial(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn polynomial_schedule_is_nonincreasing() {
        let s = StepSchedule::polynomial(0.7, 3.0, 0.4).unwrap();
        for t in 0..1000 {
            assert!(s.alpha(t + 1) <= s.alpha(t));
        }
    }

    #[test]
    fn one_dim_step_matches_the_closed_form_update() {
        let (p, w) = one_dim();
        let alpha = 0.01;
        for &(x1, x2) in &[(5.0, 10.0), (1.0, 1.0), (1.2, 3.0), (40.0, 1.0)] {
            let x = AgentStates::from_rows(&[vec![x1], vec![x2]]);
            let next = dpg_step(&p, &w, &x, alpha).unwrap();
            let e1 = f64::max(2.0 / 3.0 * x1 + x2 / 3.0 - 10.0 * alpha * x1, 1.0);
            let e2 = f64::max(x1 / 3.0 + 2.0 / 3.0 * x2 + 6.0 * alpha * x2, 1.0);
            assert!((next.rows()[0][0] - e1).abs() < 1e-14);
            assert!((next.rows()[1][0] - e2).abs() < 1e-14);
        }
    }

    #[test]
    fn single_agent_unconstrained_step_scales() {
        let p = ProblemInstance::new(
            vec![LocalCost::quadratic(nalgebra::DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap()],
            ConvexSet::WholeSpace,
        )
        .unwrap();
        let w = explicit_matrix(&[vec![1.0]]).unwrap();
        let x = AgentStates::from_rows(&[vec![3.0]]);
        let next = dpg_step(&p, &w, &x, 0.25).unwrap();
        assert_eq!(next.rows()[0][0], 0.75 * 3.0);
    }

    #[test]
    fn optimum_is_fixed_for_identical_costs() {
        let q = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -3.0]);
        let cost = LocalCost::quadratic(q, b, 0.0).unwrap();
        let p = ProblemInstance::new(vec![cost; 3], ConvexSet::centered_ball(2, 1.0).unwrap()).unwrap();
        let w = crate::network::metropolis_weights(&crate::network::Graph::ring(3).unwrap()).unwrap();
        let x = AgentStates::replicated(p.x_star(), 3);
        let next = dpg_step(&p, &w, &x, 0.1).unwrap();
        assert!(next.max_displacement(&x) < 1e-10);
    }

    #[test]
    fn zero_horizon_gives_the_projected_start() {
        let (p, w) = one_dim();
        let x0 = AgentStates::from_rows(&[vec![-5.0], vec![10.0]]);
        let recs = run(&p, &w, &StepSchedule::constant(0.01).unwrap(), &x0, 0).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].states.as_ref().unwrap().to_rows(), vec![vec![1.0], vec![10.0]]);
        assert_eq!(recs[0].r1, 1.0);
    }

    #[test]
    fn record_errors_split() {
        let (p, w) = one_dim();
        let x0 = AgentStates::from_rows(&[vec![5.0], vec![10.0]]);
        let recs = run(&p, &w, &StepSchedule::constant(0.01).unwrap(), &x0, 50).unwrap();
        assert_eq!(recs.len(), 51);
        for r in &recs {
            let x = r.states.as_ref().unwrap();
            assert!((x.squared_distance_to(p.x_star()) - r.c).abs() <= 1e-9 * r.c.max(1.0));
        }
    }

    #[test]
    fn divergence_is_reported_with_its_step() {
        let (p, w) = one_dim();
        let x0 = AgentStates::from_rows(&[vec![5.0], vec![10.0]]);
        let err = run(&p, &w, &StepSchedule::constant(0.2).unwrap(), &x0, 100_000).unwrap_err();
        assert!(matches!(err, DpgError::NonFiniteState { .. }));
    }

    #[test]
    fn energy_on_consensus_is_the_cost_part() {
        let (p, w) = one_dim();
        let x = AgentStates::from_rows(&[vec![2.0], vec![2.0]]);
        let e = energy_functional(&p, &w, 0.1, &x).unwrap();
        assert!((e - 0.1 * (20.0 - 12.0)).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let (p, w) = one_dim();
        let x0 = AgentStates::from_rows(&[vec![5.0], vec![10.0]]);
        let recs = run(&p, &w, &StepSchedule::constant(0.01).unwrap(), &x0, 2).unwrap();
        let mut buf = Vec::new();
        let col = Column {
            name: "bound".into(),
            values: vec![1.0, 2.0],
        };
        write_csv(&mut buf, &recs, &[col]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,A,B,C,R1,R2,alpha,bound");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[3].ends_with(','));
        assert!(lines[1].contains("1.0000000000000000e-2"));
    }
}
