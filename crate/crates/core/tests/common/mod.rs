//! Random instance generators and property checks shared by the proptest
//! suites and the acceptance harness.
#![allow(dead_code)]

use dpg_core::costs::{LocalCost, ProblemInstance};
use dpg_core::dpg::{dpg_step, energy_functional, energy_gradient};
use dpg_core::geometry::ConvexSet;
use dpg_core::network::{build_watts_strogatz, metropolis_weights, Graph, MixingMatrix};
use dpg_core::state::AgentStates;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const CASES: u32 = 1000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * gauss(rng))
}

pub fn states(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> AgentStates {
    AgentStates::new((0..n).map(|_| vector(rng, d, scale)).collect())
}

pub fn random_set(rng: &mut ChaCha8Rng, d: usize) -> ConvexSet {
    let choices = if d == 1 { 6 } else { 5 };
    match rng.random_range(0..choices) {
        0 => ConvexSet::WholeSpace,
        1 => ConvexSet::ball(vector(rng, d, 1.0), rng.random_range(0.1..3.0)).unwrap(),
        2 => {
            let lower: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..0.5)).collect();
            let upper = lower.iter().map(|l| l + rng.random_range(0.0..2.5)).collect();
            ConvexSet::boxed(lower, upper).unwrap()
        }
        3 => {
            let mut normal = vector(rng, d, 1.0);
            if normal.norm() < 1e-3 {
                normal[0] = 1.0;
            }
            ConvexSet::halfspace(normal, gauss(rng)).unwrap()
        }
        4 => ConvexSet::simplex(rng.random_range(0.1..3.0)).unwrap(),
        _ => ConvexSet::interval(rng.random_range(-2.0..0.0), f64::INFINITY).unwrap(),
    }
}

/// A mix of quadratic, least-squares and scalar local costs. Individual
/// costs may be nonconvex.
pub fn random_costs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<LocalCost> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => {
                let m = DMatrix::from_fn(d, d, |_, _| gauss(rng));
                let q = (&m + m.transpose()) * 0.5;
                LocalCost::quadratic(q, vector(rng, d, 1.0), gauss(rng)).unwrap()
            }
            1 => {
                let p = rng.random_range(1..4);
                let pm = DMatrix::from_fn(d, p, |_, _| gauss(rng));
                LocalCost::least_squares(pm, vector(rng, p, 1.0)).unwrap()
            }
            _ if d == 1 => LocalCost::scalar(rng.random_range(-3.0..5.0)),
            _ => {
                let m = DMatrix::from_fn(d, d, |_, _| gauss(rng));
                LocalCost::quadratic(&m * m.transpose() / d as f64, vector(rng, d, 1.0), 0.0).unwrap()
            }
        })
        .collect()
}

/// Costs whose average is strongly convex: the random mix plus one
/// strongly convex anchor per agent.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, set: ConvexSet) -> ProblemInstance {
    let costs = (0..n)
        .map(|_| {
            let m = DMatrix::from_fn(d, d, |_, _| gauss(rng));
            let q = &m * m.transpose() / d as f64 + DMatrix::identity(d, d) * rng.random_range(0.2..1.0);
            LocalCost::quadratic(q, vector(rng, d, 2.0), 0.0).unwrap()
        })
        .collect();
    ProblemInstance::new(costs, set).unwrap()
}

pub fn random_mixing(rng: &mut ChaCha8Rng, n: usize) -> MixingMatrix {
    let graph = if n <= 3 {
        Graph::complete(n).unwrap()
    } else {
        let k = 2 * rng.random_range(1..=(n - 1) / 2);
        build_watts_strogatz(n, k, rng.random_range(0.0..0.6), rng.random()).unwrap()
    };
    metropolis_weights(&graph).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

/// Nonexpansiveness, the anchored form, idempotence, the variational
/// inequality against random feasible points, and spread reduction.
pub fn check_projection(seed: u64, d: usize, n: usize) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let set = random_set(&mut r, d);
    let scale = r.random_range(0.1..10.0);
    let x = vector(&mut r, d, scale);
    let y = vector(&mut r, d, scale);
    let px = set.project(&x).unwrap();
    let py = set.project(&y).unwrap();
    let tol = 1e-10 * (1.0 + scale);
    ensure((&px - &py).norm() <= (&x - &y).norm() + tol, || format!("expansive on {set:?}"))?;
    ensure(set.contains(&px, 1e-9 * (1.0 + scale)).unwrap(), || format!("infeasible projection on {set:?}"))?;
    ensure((set.project(&px).unwrap() - &px).norm() <= tol, || "not idempotent".into())?;
    ensure((&px - &py).norm() <= (&x - &py).norm() + tol, || "anchored bound fails".into())?;
    for _ in 0..8 {
        let z = set.project(&vector(&mut r, d, scale)).unwrap();
        let vi = (&x - &px).dot(&(&z - &px));
        ensure(vi <= 1e-9 * (1.0 + scale * scale), || format!("variational inequality {vi} on {set:?}"))?;
    }
    let pts = states(&mut r, n, d, scale);
    let projected = AgentStates::new(pts.rows().iter().map(|p| set.project(p).unwrap()).collect());
    ensure(
        projected.consensus_error() <= pts.consensus_error() * (1.0 + 1e-12) + tol,
        || "spread increased".into(),
    )
}

/// Consensus contraction by β, mean preservation, and double stochasticity.
pub fn check_mixing(seed: u64, n: usize, d: usize) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let w = random_mixing(&mut r, n);
    let scale = r.random_range(0.1..10.0);
    let x = states(&mut r, n, d, scale);
    let mixed = w.mix(&x);
    let beta = w.beta();
    let before = x.consensus_error();
    let tol = 1e-10 * (1.0 + before);
    // Σ_i ‖Σ_j w_ij (x_j − x̄)‖², written out against the weight matrix.
    let mean = x.mean();
    let mut lhs = 0.0;
    for i in 0..n {
        let mut acc = DVector::zeros(d);
        for j in 0..n {
            acc += (&x.rows()[j] - &mean) * w.weights()[(i, j)];
        }
        lhs += acc.norm_squared();
    }
    ensure(lhs <= beta * beta * before + tol, || format!("no contraction: {lhs} > {beta}^2 * {before}"))?;
    ensure((mixed.mean() - &mean).norm() <= 1e-12 * (1.0 + mean.norm()), || "mean moved".into())?;
    ensure((mixed.consensus_error() - lhs).abs() <= tol, || "mix disagrees with the weights".into())?;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w.weights()[(i, j)]).sum();
        ensure((row - 1.0).abs() <= 1e-12, || format!("row {i} sums to {row}"))?;
    }
    Ok(())
}

/// Central differences, Lipschitz gradients, strong convexity and the
/// `(1 − μα/2)` contraction of the aggregate gradient step.
pub fn check_gradients(seed: u64, n: usize, d: usize) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    for cost in random_costs(&mut r, n, d) {
        let x = vector(&mut r, d, 2.0);
        let g = cost.grad(&x).unwrap();
        let h = 1e-5;
        for k in 0..d {
            let mut e = DVector::zeros(d);
            e[k] = h;
            let fd = (cost.value(&(&x + &e)).unwrap() - cost.value(&(&x - &e)).unwrap()) / (2.0 * h);
            ensure((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), || format!("d/dx{k}: {fd} vs {}", g[k]))?;
        }
        let y = vector(&mut r, d, 2.0);
        let lip = cost.smoothness().unwrap();
        let diff = (cost.grad(&x).unwrap() - cost.grad(&y).unwrap()).norm();
        ensure(diff <= lip * (&x - &y).norm() * (1.0 + 1e-10) + 1e-12, || "gradient not L-Lipschitz".into())?;
    }
    let problem = random_problem(&mut r, n, d, ConvexSet::WholeSpace);
    let (l, mu) = (problem.l(), problem.mu());
    let x = vector(&mut r, d, 3.0);
    let y = vector(&mut r, d, 3.0);
    let gx = problem.aggregate_grad(&x);
    let gy = problem.aggregate_grad(&y);
    let dist2 = (&x - &y).norm_squared();
    ensure((&gx - &gy).dot(&(&x - &y)) >= mu * dist2 * (1.0 - 1e-10) - 1e-12, || "not strongly convex".into())?;
    let alpha = r.random_range(0.0..1.0) * 2.0 / (l + mu);
    let step = (&x - &y) - (&gx - &gy) * alpha;
    ensure(
        step.norm_squared() <= (1.0 - mu * alpha / 2.0).powi(2) * dist2 * (1.0 + 1e-10) + 1e-12,
        || "gradient step does not contract".into(),
    )
}

/// One DPG step equals the projected gradient step on `E_α`, whose
/// gradient matches central differences; on the whole space the mean
/// follows the averaged gradient exactly.
pub fn check_energy(seed: u64, n: usize, d: usize) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let set = random_set(&mut r, d);
    let problem = random_problem(&mut r, n, d, set.clone());
    let w = random_mixing(&mut r, n);
    let alpha = r.random_range(1e-3..1.0) / problem.l();
    let raw = states(&mut r, n, d, 2.0);
    let x = AgentStates::new(raw.rows().iter().map(|p| set.project(p).unwrap()).collect());
    let step = dpg_step(&problem, &w, &x, alpha).unwrap();
    let grad = energy_gradient(&problem, &w, alpha, &x).unwrap();
    let via_energy = AgentStates::new(
        x.rows()
            .iter()
            .zip(grad.rows())
            .map(|(xi, gi)| set.project(&(xi - gi)).unwrap())
            .collect(),
    );
    ensure(step.max_displacement(&via_energy) <= 1e-12 * (1.0 + x.norm()), || "step differs from energy step".into())?;
    let h = 1e-5;
    for i in 0..n {
        for k in 0..d {
            let mut plus = x.clone();
            plus.rows_mut()[i][k] += h;
            let mut minus = x.clone();
            minus.rows_mut()[i][k] -= h;
            let fd = (energy_functional(&problem, &w, alpha, &plus).unwrap()
                - energy_functional(&problem, &w, alpha, &minus).unwrap())
                / (2.0 * h);
            let g = grad.rows()[i][k];
            ensure((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), || format!("energy gradient {i},{k}: {fd} vs {g}"))?;
        }
    }
    let free = ProblemInstance::new(problem.costs().to_vec(), ConvexSet::WholeSpace).unwrap();
    let next = dpg_step(&free, &w, &raw, alpha).unwrap();
    let mut avg = DVector::zeros(d);
    for (i, xi) in raw.rows().iter().enumerate() {
        avg += free.local_grad(i, xi);
    }
    let expected = raw.mean() - avg * (alpha / n as f64);
    ensure((next.mean() - expected).norm() <= 1e-12 * (1.0 + raw.norm()), || "mean dynamics broken".into())
}

pub type Check = fn(u64, usize, usize) -> Result<(), TestCaseError>;

/// Name, check, and the ranges of its two size arguments.
pub type Suite = (&'static str, Check, (usize, usize), (usize, usize));

pub const SUITES: [Suite; 4] = [
    ("projection", check_projection, (1, 4), (2, 8)),
    ("mixing", check_mixing, (2, 12), (1, 4)),
    ("gradients", check_gradients, (1, 3), (1, 5)),
    ("energy", check_energy, (2, 6), (1, 3)),
];

/// Run one suite for `cases` random cases.
pub fn run_suite(check: Check, a: (usize, usize), b: (usize, usize), cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(any::<u64>(), a.0..=a.1, b.0..=b.1), |(seed, x, y)| check(seed, x, y))
        .map_err(|e| match e {
            TestError::Fail(msg, input) => format!("{msg} at {input:?}"),
            TestError::Abort(msg) => msg.to_string(),
        })
}
