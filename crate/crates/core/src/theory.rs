//! Convergence constants, stepsize thresholds, and checkers that evaluate
//! every inequality of the analysis along a recorded trajectory.
//!
//! Some constants appear in two forms: the one in the theorem statements
//! and the one the proofs actually produce. [`Variant`] selects between
//! them; [`Variant::Theorem`] is the default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::ProblemInstance;
use crate::dpg::{IterateRecord, StepSchedule};
use crate::network::MixingMatrix;
use crate::serde_util;

/// Absolute slack allowed on every inequality check.
pub const SLACK_TOL: f64 = 1e-9;
/// At most this many individual violations are kept per certificate.
pub const MAX_REPORTED_VIOLATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("(1 + delta) beta^2 = {beta_tilde} is not below 1")]
    BetaTildeNotContractive { beta_tilde: f64 },
    #[error("unsupported boundedness case: {0}")]
    UnsupportedCase(String),
    #[error("inadmissible schedule: {0}")]
    InadmissibleSchedule(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Theorem,
    Proof,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theorem" => Ok(Self::Theorem),
            "proof" => Ok(Self::Proof),
            other => Err(format!("unknown variant {other:?}, expected theorem or proof")),
        }
    }
}

/// The three sufficient conditions for bounded iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundednessCase {
    /// Ω bounded.
    BoundedSet,
    /// Convex local costs with a constant stepsize.
    ConvexConstant,
    /// Strongly convex aggregate with a nonincreasing stepsize.
    StronglyConvex,
}

/// Problem-level quantities the constants are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub l: f64,
    pub mu: f64,
    pub n: usize,
    /// Gradient heterogeneity `D`.
    pub d_het: f64,
    pub beta: f64,
    pub lambda_min: f64,
    /// `C(0) = ‖x(0) − x*‖²`.
    pub c0: f64,
}

impl TheoryInputs {
    pub fn new(problem: &ProblemInstance, w: &MixingMatrix, c0: f64) -> Self {
        Self {
            l: problem.l(),
            mu: problem.mu(),
            n: problem.n(),
            d_het: problem.heterogeneity(),
            beta: w.beta(),
            lambda_min: w.lambda_min(),
            c0,
        }
    }

    fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: &str| Err(TheoryError::InvalidInput(m.into()));
        if !(self.mu > 0.0 && self.l >= self.mu && self.l.is_finite()) {
            return bad("need L >= mu > 0");
        }
        if self.n == 0 {
            return bad("need at least one agent");
        }
        if !(self.d_het >= 0.0 && self.d_het.is_finite()) {
            return bad("need D >= 0");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("need 0 <= beta < 1");
        }
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return bad("need C(0) >= 0");
        }
        Ok(())
    }
}

/// Young-parameter dependent coefficients of the one-step estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    #[serde(with = "serde_util::extended")]
    pub delta: f64,
    pub beta_tilde: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// `δ = None` picks `(1−β)/β`, which makes `β̃ = β` (and `1/δ = 0` when
/// `β = 0`).
pub fn coefficients(
    l: f64,
    mu: f64,
    n: usize,
    d_het: f64,
    beta: f64,
    delta: Option<f64>,
) -> Result<Coefficients, TheoryError> {
    let (delta, inv_delta, beta_tilde) = match delta {
        None if beta == 0.0 => (f64::INFINITY, 0.0, 0.0),
        None => ((1.0 - beta) / beta, beta / (1.0 - beta), beta),
        Some(d) if d > 0.0 => (d, 1.0 / d, (1.0 + d) * beta * beta),
        Some(d) => return Err(TheoryError::InvalidInput(format!("delta must be positive, got {d}"))),
    };
    if beta_tilde >= 1.0 {
        return Err(TheoryError::BetaTildeNotContractive { beta_tilde });
    }
    let c1 = 3.0 * l * l * (1.0 + inv_delta);
    let c2 = 3.0 * n as f64 * d_het * d_het * (1.0 + inv_delta);
    Ok(Coefficients {
        delta,
        beta_tilde,
        c1,
        c2,
        c3: c1 + l * l,
        c4: 4.0 * l * l / mu,
    })
}

/// Positive root of `c3 α² + (c4 + μ/4) α + β̃ − 1 = 0`, written without
/// cancellation.
pub fn z_threshold(k: &Coefficients, mu: f64) -> f64 {
    let b = k.c4 + mu / 4.0;
    let gap = 1.0 - k.beta_tilde;
    2.0 * gap / (b + (b * b + 4.0 * k.c3 * gap).sqrt())
}

/// Every constant entering the bounds, for one problem, network, schedule
/// and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub variant: Variant,
    pub inputs: TheoryInputs,
    pub schedule: StepSchedule,
    pub alpha0: f64,
    #[serde(flatten)]
    pub coefficients: Coefficients,
    /// Coefficients at `δ = (1−β)/β`.
    pub tilde: Coefficients,
    pub z: f64,
    /// `min{Z, μ/(4c1), 2/(L+μ)}`.
    pub theta: f64,
    /// Uniform bound `max{4 c2 α(0)/μ, C(0)}`.
    pub r: f64,
    pub j: f64,
    pub g1: f64,
    pub g2: f64,
    /// `sup_t β^t / α(t)²`.
    pub rho: f64,
    /// `((w+1)/w)^{2p}`; absent for constant stepsizes.
    pub q: Option<f64>,
}

/// `sup_t β^t (t+w)^{2p} / v²` by scanning until the term ratio
/// `β((t+1+w)/(t+w))^{2p}` drops below one; the ratio decreases in `t`,
/// so the running maximum is then exact.
pub fn rho(beta: f64, schedule: &StepSchedule) -> f64 {
    match *schedule {
        StepSchedule::Constant { alpha } => 1.0 / (alpha * alpha),
        StepSchedule::Polynomial { v, w, p } => {
            if beta == 0.0 {
                return (w.powf(p) / v).powi(2);
            }
            let log_term = |t: f64| t * beta.ln() + 2.0 * p * (t + w).ln() - 2.0 * v.ln();
            let mut best = f64::NEG_INFINITY;
            let mut t = 0.0;
            loop {
                best = best.max(log_term(t));
                if beta * ((t + 1.0 + w) / (t + w)).powf(2.0 * p) < 1.0 {
                    return best.exp();
                }
                t += 1.0;
            }
        }
    }
}

/// Upper bound on `sup_s (α(0)² β^s + α(⌊s/2⌋)²) / α(s)²` for a polynomial
/// schedule. The second ratio never exceeds its limit `2^{2p}` (as
/// `w ≥ 1`), so once the first one is decreasing and negligible the
/// remaining supremum is at most that limit plus the current first term.
pub fn decreasing_j_factor(beta: f64, w: f64, p: f64) -> f64 {
    let limit = 4f64.powf(p);
    let first = |s: f64| beta.powf(s) * ((s + w) / w).powf(2.0 * p);
    let second = |s: f64| ((s + w) / ((s / 2.0).floor() + w)).powf(2.0 * p);
    let mut best: f64 = 0.0;
    let mut s = 0.0;
    loop {
        let f = first(s);
        best = best.max(f + second(s));
        let decreasing = beta * ((s + 1.0 + w) / (s + w)).powf(2.0 * p) < 1.0;
        if decreasing && f <= 1e-15 * limit {
            return best.max(limit + f);
        }
        s += 1.0;
    }
}

pub fn compute_constants(
    inputs: &TheoryInputs,
    schedule: &StepSchedule,
    delta: Option<f64>,
    variant: Variant,
) -> Result<TheoryConstants, TheoryError> {
    inputs.validate()?;
    schedule
        .validate()
        .map_err(|e| TheoryError::InvalidInput(e.to_string()))?;
    let TheoryInputs { l, mu, n, d_het, beta, c0, .. } = *inputs;
    let k = coefficients(l, mu, n, d_het, beta, delta)?;
    let tilde = coefficients(l, mu, n, d_het, beta, None)?;
    let alpha0 = schedule.alpha0();
    let z = z_threshold(&k, mu);
    let theta = z.min(mu / (4.0 * k.c1)).min(2.0 / (l + mu));
    let r = (4.0 * k.c2 * alpha0 / mu).max(c0);
    let nd2 = n as f64 * d_het * d_het;
    let mut j = match variant {
        Variant::Theorem => 3.0 * (l * l * r * r + nd2),
        Variant::Proof => 3.0 * (l * l * r + nd2),
    };
    let q = match *schedule {
        StepSchedule::Constant { .. } => None,
        StepSchedule::Polynomial { w, p, .. } => {
            j *= decreasing_j_factor(beta, w, p);
            Some(((w + 1.0) / w).powf(2.0 * p))
        }
    };
    let gap2 = (1.0 - beta).powi(2);
    let (g1, g2) = match variant {
        Variant::Theorem => {
            let m = tilde.c3 * alpha0 * alpha0 + tilde.c4 * alpha0 + beta;
            (2.0 * r * m, m * 2.0 * j * j / gap2 + tilde.c1 * r + tilde.c2)
        }
        Variant::Proof => {
            let m1 = k.c3 * alpha0 * alpha0 + k.c4 * alpha0 + beta;
            let m2 = k.c3 * alpha0 * alpha0 + k.c4 * alpha0 + k.beta_tilde;
            (m1 * r, m2 * j / gap2 + k.c1 * r + k.c2)
        }
    };
    Ok(TheoryConstants {
        variant,
        inputs: *inputs,
        schedule: *schedule,
        alpha0,
        coefficients: k,
        tilde,
        z,
        theta,
        r,
        j,
        g1,
        g2,
        rho: rho(beta, schedule),
        q,
    })
}

/// Largest admissible `α(0)` for the chosen boundedness case.
/// [`BoundednessCase::BoundedSet`] imposes nothing here (+∞); the
/// downstream bounds still need `α(0) ≤ 2/(L+μ)`.
pub fn max_constant_stepsize(case: BoundednessCase, c: &TheoryConstants) -> Result<f64, TheoryError> {
    match case {
        BoundednessCase::BoundedSet => Ok(f64::INFINITY),
        BoundednessCase::ConvexConstant => {
            let bound = (1.0 + c.inputs.lambda_min) / c.inputs.l;
            if bound > 0.0 {
                Ok(bound)
            } else {
                Err(TheoryError::UnsupportedCase(
                    "smallest mixing eigenvalue is -1, no positive stepsize qualifies".into(),
                ))
            }
        }
        BoundednessCase::StronglyConvex => Ok(c.theta),
    }
}

impl TheoryConstants {
    pub fn mu(&self) -> f64 {
        self.inputs.mu
    }

    /// `2/(L+μ)`, the stepsize cap shared by all one-step estimates.
    pub fn step_cap(&self) -> f64 {
        2.0 / (self.inputs.l + self.inputs.mu)
    }

    /// Whether `α(0)` satisfies the strongly convex boundedness condition.
    pub fn uniformly_bounded(&self) -> bool {
        self.alpha0 < self.theta
    }
}

/// One evaluated inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub t: u64,
    #[serde(with = "serde_util::extended")]
    pub lhs: f64,
    #[serde(with = "serde_util::extended")]
    pub rhs: f64,
    #[serde(with = "serde_util::extended")]
    pub slack: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: &str, t: u64, lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.into(),
            t,
            lhs,
            rhs,
            slack,
            passed: slack >= -SLACK_TOL || (rhs.is_infinite() && rhs > 0.0),
        }
    }
}

pub const CONSENSUS_STEP: &str = "consensus_step";
pub const COMBINED_STEP: &str = "combined_step";
pub const CONTRACTION_STEP: &str = "contraction_step";
pub const UNIFORM: &str = "uniform_bound";
pub const CONSENSUS: &str = "consensus_bound";
pub const MAIN: &str = "main_bound";

/// `A(t+1) ≤ (c1α² + β̃)A(t) + c1α²B(t) + c2α²`.
pub fn check_consensus_step(prev: &IterateRecord, next: &IterateRecord, c: &TheoryConstants, alpha: f64) -> CheckResult {
    let k = &c.coefficients;
    let a2 = alpha * alpha;
    let rhs = (k.c1 * a2 + k.beta_tilde) * prev.a + k.c1 * a2 * prev.b + k.c2 * a2;
    CheckResult::new(CONSENSUS_STEP, next.t, next.a, rhs)
}

/// `C(t+1) ≤ (c3α² + c4α + β̃)A(t) + (1 − μα/2 + c1α²)B(t) + c2α²`.
pub fn check_combined_step(prev: &IterateRecord, next: &IterateRecord, c: &TheoryConstants, alpha: f64) -> CheckResult {
    let k = &c.coefficients;
    let a2 = alpha * alpha;
    let rhs = (k.c3 * a2 + k.c4 * alpha + k.beta_tilde) * prev.a
        + (1.0 - c.mu() * alpha / 2.0 + k.c1 * a2) * prev.b
        + k.c2 * a2;
    CheckResult::new(COMBINED_STEP, next.t, next.c, rhs)
}

/// `C(t+1) ≤ (1 − μα/4)C(t) + c2α²`.
pub fn check_contraction_step(prev: &IterateRecord, next: &IterateRecord, c: &TheoryConstants, alpha: f64) -> CheckResult {
    let rhs = (1.0 - c.mu() * alpha / 4.0) * prev.c + c.coefficients.c2 * alpha * alpha;
    CheckResult::new(CONTRACTION_STEP, next.t, next.c, rhs)
}

/// `C(t) ≤ R`.
pub fn check_uniform(rec: &IterateRecord, c: &TheoryConstants) -> CheckResult {
    CheckResult::new(UNIFORM, rec.t, rec.c, c.r)
}

/// `β^t A(0) + J α(t)² / (1−β)²`.
pub fn bound_consensus(t: u64, a0: f64, c: &TheoryConstants, schedule: &StepSchedule) -> f64 {
    let beta = c.inputs.beta;
    let alpha = schedule.alpha(t);
    beta.powf(t as f64) * a0 + c.j * alpha * alpha / (1.0 - beta).powi(2)
}

fn main_coefficient(c: &TheoryConstants) -> f64 {
    c.rho * c.g1 + c.g2
}

fn decreasing_lead(c: &TheoryConstants, q: f64, v: f64) -> f64 {
    let k = main_coefficient(c);
    match c.variant {
        Variant::Theorem => 2.0 * std::f64::consts::E * q * k * v / c.mu(),
        Variant::Proof => 4.0 * q * k * v / c.mu(),
    }
}

fn check_p1(mu: f64, v: f64) -> Result<f64, TheoryError> {
    let c1 = mu * v / 2.0;
    if c1 > 1.0 {
        Ok(c1)
    } else {
        Err(TheoryError::InadmissibleSchedule(format!(
            "the p = 1 bound needs mu*v/2 > 1, got {c1}"
        )))
    }
}

fn constant_bound(t: u64, b0: f64, c: &TheoryConstants, alpha: f64) -> f64 {
    let mu = c.mu();
    let r = 1.0 - mu * alpha / 2.0;
    let mut value = r.powf(t as f64) * b0 + 2.0 * c.g2 * alpha / mu;
    if t > 0 {
        let s = (t - 1) as f64;
        let geometric = 2.0 / (mu * alpha) * (r.powf(s) + c.inputs.beta.powf(s / 2.0));
        value += match c.variant {
            Variant::Theorem => geometric,
            Variant::Proof => c.g1 * geometric,
        };
    }
    value
}

/// Right-hand side of the optimality bound on `B(t)`, evaluated directly
/// in O(t). The schedule picks the constant, `p < 1` or `p = 1` form.
pub fn bound_main(t: u64, b0: f64, c: &TheoryConstants, schedule: &StepSchedule) -> Result<f64, TheoryError> {
    let mu = c.mu();
    match *schedule {
        StepSchedule::Constant { alpha } => Ok(constant_bound(t, b0, c, alpha)),
        StepSchedule::Polynomial { v, w, p } if p < 1.0 => {
            let q = ((w + 1.0) / w).powf(2.0 * p);
            let half = (t / 2) as f64;
            let tf = t as f64;
            let lead = decreasing_lead(c, q, v) * (half + w - 1.0).powf(-p);
            let exponent: f64 = (0..t).map(|s| mu * v / (2.0 * (s as f64 + w).powf(p))).sum();
            let r1 = (-exponent).exp() * b0;
            let tail: f64 = (1..(t / 2).max(1)).map(|s| (s as f64 + w).powf(-2.0 * p)).sum();
            let r2 = q * main_coefficient(c) * v * v * (-mu * v * tf / (4.0 * (tf + w).powf(p))).exp() * tail;
            Ok(lead + r1 + r2)
        }
        StepSchedule::Polynomial { v, w, .. } => {
            let c1 = check_p1(mu, v)?;
            let q = ((w + 1.0) / w).powi(2);
            let tf = t as f64;
            let decay = (w / (tf + w)).powf(c1) * b0;
            let r3 = q / (c1 - 1.0) * ((w + 1.0) / w).powf(c1) * main_coefficient(c) * v * v / (tf + w - 1.0);
            Ok(decay + r3)
        }
    }
}

/// [`bound_main`] for `t = 0..=horizon` in O(horizon) total.
pub fn bound_main_series(
    horizon: u64,
    b0: f64,
    c: &TheoryConstants,
    schedule: &StepSchedule,
) -> Result<Vec<f64>, TheoryError> {
    let mu = c.mu();
    match *schedule {
        StepSchedule::Constant { alpha } => Ok((0..=horizon).map(|t| constant_bound(t, b0, c, alpha)).collect()),
        StepSchedule::Polynomial { v, w, p } if p < 1.0 => {
            let q = ((w + 1.0) / w).powf(2.0 * p);
            let lead_coef = decreasing_lead(c, q, v);
            let tail_coef = q * main_coefficient(c) * v * v;
            // prefix[m] = Σ_{s=1}^{m} (s+w)^{-2p}
            let mut prefix = vec![0.0; (horizon / 2 + 1) as usize];
            for m in 1..prefix.len() {
                prefix[m] = prefix[m - 1] + (m as f64 + w).powf(-2.0 * p);
            }
            let mut exponent: f64 = 0.0;
            let mut out = Vec::with_capacity(horizon as usize + 1);
            for t in 0..=horizon {
                let tf = t as f64;
                let half = t / 2;
                let lead = lead_coef * (half as f64 + w - 1.0).powf(-p);
                let tail = if half >= 2 { prefix[(half - 1) as usize] } else { 0.0 };
                let r2 = tail_coef * (-mu * v * tf / (4.0 * (tf + w).powf(p))).exp() * tail;
                out.push(lead + (-exponent).exp() * b0 + r2);
                exponent += mu * v / (2.0 * (tf + w).powf(p));
            }
            Ok(out)
        }
        StepSchedule::Polynomial { .. } => (0..=horizon).map(|t| bound_main(t, b0, c, schedule)).collect(),
    }
}

/// Recursion `H(t) ≤ (1 − C1/(t+w−1)^p) H(t−1) + C2/(t+w−1)^{p+q}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionParams {
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    pub q: f64,
    pub w: f64,
    pub h0: f64,
}

impl RecursionParams {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: String| Err(TheoryError::PreconditionViolated(m));
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p = {} outside (0, 1]", self.p));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return bad(format!("q = {} must be positive", self.q));
        }
        if !(self.w >= 1.0 && self.w.is_finite()) {
            return bad(format!("w = {} must be at least 1", self.w));
        }
        if !(self.c1 > 0.0 && self.c1 / self.w.powf(self.p) < 1.0) {
            return bad(format!("need 0 < C1/w^p < 1, got C1 = {}", self.c1));
        }
        if !(self.c2 >= 0.0 && self.c2.is_finite() && self.h0 >= 0.0 && self.h0.is_finite()) {
            return bad("C2 and H(0) must be finite and nonnegative".into());
        }
        Ok(())
    }

    /// The closed-form bound at `t`, in O(t).
    pub fn bound(&self, t: u64) -> f64 {
        let RecursionParams { c1, c2, p, q, w, h0 } = *self;
        let qq = ((w + 1.0) / w).powf(p + q);
        let tf = t as f64;
        if p < 1.0 {
            let delta = qq * c2 / c1 * (c1 / w.powf(p)).exp();
            let half = t / 2;
            let lead = delta * (half as f64 + w - 1.0).powf(-q);
            let exponent: f64 = (0..t).map(|s| c1 / (s as f64 + w).powf(p)).sum();
            let tail: f64 = (1..half.max(1)).map(|s| (s as f64 + w).powf(-(p + q))).sum();
            lead + (-exponent).exp() * h0 + qq * c2 * (-c1 * tf / (2.0 * (tf + w).powf(p))).exp() * tail
        } else {
            let decay = (w / (tf + w)).powf(c1) * h0;
            let rest = if q > c1 {
                w.powf(c1 - q) / (q - c1) * qq * c2 / (tf + w).powf(c1)
            } else if q == c1 {
                ((tf + w) / w).ln() * qq * c2 / (tf + w).powf(c1)
            } else {
                ((w + 1.0) / w).powf(c1) / (c1 - q) * qq * c2 / (tf + w + 1.0).powf(q)
            };
            decay + rest
        }
    }
}

/// Iterate the recursion with equality for `t ≤ horizon` and compare with
/// the closed-form bound. Returns the tightest comparison (the first
/// failure if any).
pub fn check_recursion(params: &RecursionParams, horizon: u64) -> Result<CheckResult, TheoryError> {
    params.validate()?;
    let RecursionParams { c1, c2, p, q, w, h0 } = *params;
    let qq = ((w + 1.0) / w).powf(p + q);
    let mut h = h0;
    let mut exponent: f64 = 0.0;
    // prefix of (s+w)^{-(p+q)} for the p < 1 tail sum
    let mut tail = 0.0;
    let mut tail_upto = 0u64;
    let mut worst: Option<CheckResult> = None;
    for t in 0..=horizon {
        let tf = t as f64;
        if t > 0 {
            let base = tf + w - 1.0;
            h = (1.0 - c1 / base.powf(p)) * h + c2 / base.powf(p + q);
        }
        let bound = if p < 1.0 {
            let half = t / 2;
            while tail_upto + 1 < half {
                tail_upto += 1;
                tail += (tail_upto as f64 + w).powf(-(p + q));
            }
            let delta = qq * c2 / c1 * (c1 / w.powf(p)).exp();
            let value = delta * (half as f64 + w - 1.0).powf(-q)
                + (-exponent).exp() * h0
                + qq * c2 * (-c1 * tf / (2.0 * (tf + w).powf(p))).exp() * tail;
            exponent += c1 / (tf + w).powf(p);
            value
        } else {
            params.bound(t)
        };
        let res = CheckResult::new("recursion_bound", t, h, bound);
        let replace = match &worst {
            None => true,
            Some(wr) => wr.passed && (!res.passed || res.slack < wr.slack),
        };
        if replace {
            worst = Some(res);
        }
    }
    Ok(worst.expect("at least t = 0 is checked"))
}

/// Aggregate of one check kind over a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` seen.
    #[serde(with = "serde_util::extended")]
    pub min_slack: f64,
}

/// Outcome of running every applicable check on one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub constants: TheoryConstants,
    pub checks: Vec<CheckSummary>,
    /// Checks skipped because their hypotheses do not hold, with the reason.
    pub skipped: Vec<(String, String)>,
    /// First violations, capped at [`MAX_REPORTED_VIOLATIONS`].
    pub violations: Vec<CheckResult>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }

    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn summary(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tally {
    summary: CheckSummary,
}

impl Tally {
    fn new(name: &str) -> Self {
        Self {
            summary: CheckSummary {
                name: name.into(),
                evaluated: 0,
                violations: 0,
                min_slack: f64::INFINITY,
            },
        }
    }

    fn add(&mut self, r: CheckResult, sink: &mut Vec<CheckResult>) {
        self.summary.evaluated += 1;
        self.summary.min_slack = self.summary.min_slack.min(r.slack);
        if !r.passed {
            self.summary.violations += 1;
            if sink.len() < MAX_REPORTED_VIOLATIONS {
                sink.push(r);
            }
        }
    }
}

/// Bound values per iterate, suitable for extra CSV columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundSeries {
    pub consensus: Option<Vec<f64>>,
    pub main: Option<Vec<f64>>,
}

/// Evaluate the consensus and optimality bounds wherever their stepsize
/// hypotheses hold.
pub fn bound_series(records: &[IterateRecord], c: &TheoryConstants) -> BoundSeries {
    let Some(first) = records.first() else {
        return BoundSeries::default();
    };
    if c.alpha0 > c.step_cap() {
        return BoundSeries::default();
    }
    let horizon = records.last().map_or(0, |r| r.t);
    let consensus = (0..=horizon)
        .map(|t| bound_consensus(t, first.a, c, &c.schedule))
        .collect();
    let main = bound_main_series(horizon, first.b, c, &c.schedule).ok();
    BoundSeries {
        consensus: Some(consensus),
        main,
    }
}

/// Run every inequality whose hypotheses the schedule satisfies.
///
/// * one-step estimates: `α(0) ≤ 2/(L+μ)`
/// * contraction step and uniform bound: additionally `α(0) < θ`
/// * consensus bound: constant stepsizes (the decreasing form is only
///   evaluated, not certified)
/// * optimality bound: constant, `p < 1`, or `p = 1` with `μv/2 > 1`
/// * both bounds: `C(t) ≤ R`, guaranteed or observed
pub fn certify(records: &[IterateRecord], c: &TheoryConstants) -> Certificate {
    let mut violations = Vec::new();
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let schedule = c.schedule;
    let within_cap = c.alpha0 <= c.step_cap();
    let bounded = within_cap && c.uniformly_bounded();
    let Some(first) = records.first() else {
        return Certificate {
            constants: c.clone(),
            checks,
            skipped,
            violations,
        };
    };

    if within_cap {
        let mut p41 = Tally::new(CONSENSUS_STEP);
        let mut p42 = Tally::new(COMBINED_STEP);
        let mut l52 = Tally::new(CONTRACTION_STEP);
        for pair in records.windows(2) {
            let alpha = schedule.alpha(pair[0].t);
            p41.add(check_consensus_step(&pair[0], &pair[1], c, alpha), &mut violations);
            p42.add(check_combined_step(&pair[0], &pair[1], c, alpha), &mut violations);
            if bounded {
                l52.add(check_contraction_step(&pair[0], &pair[1], c, alpha), &mut violations);
            }
        }
        checks.push(p41.summary);
        checks.push(p42.summary);
        if bounded {
            checks.push(l52.summary);
        }
    } else {
        skipped.push(("one_step".into(), "alpha(0) exceeds 2/(L+mu)".into()));
    }

    if bounded {
        let mut uni = Tally::new(UNIFORM);
        for r in records {
            uni.add(check_uniform(r, c), &mut violations);
        }
        checks.push(uni.summary);
    } else {
        skipped.push((UNIFORM.into(), "alpha(0) is not below theta".into()));
    }

    // Both trajectory bounds are built from C(t) ≤ R: guaranteed when
    // α(0) < θ, otherwise it must at least hold along the run.
    let below_r = bounded || records.iter().all(|r| r.c <= c.r);
    if within_cap && !below_r {
        skipped.push((CONSENSUS.into(), "C(t) exceeds R along the run".into()));
        skipped.push((MAIN.into(), "C(t) exceeds R along the run".into()));
    }

    if within_cap && below_r && schedule.is_constant() {
        let mut cons = Tally::new(CONSENSUS);
        for r in records {
            let rhs = bound_consensus(r.t, first.a, c, &schedule);
            cons.add(CheckResult::new(CONSENSUS, r.t, r.a, rhs), &mut violations);
        }
        checks.push(cons.summary);
    } else if !schedule.is_constant() {
        skipped.push((CONSENSUS.into(), "certified for constant stepsizes only".into()));
    }

    if within_cap && below_r {
        let horizon = records.last().map_or(0, |r| r.t);
        match bound_main_series(horizon, first.b, c, &schedule) {
            Ok(series) => {
                let mut main = Tally::new(MAIN);
                for r in records {
                    main.add(CheckResult::new(MAIN, r.t, r.b, series[r.t as usize]), &mut violations);
                }
                checks.push(main.summary);
            }
            Err(e) => skipped.push((MAIN.into(), e.to_string())),
        }
    }

    Certificate {
        constants: c.clone(),
        checks,
        skipped,
        violations,
    }
}

/// Limiting optimality error against the `(2G2/μ)α` envelope.
pub fn check_envelope(t: u64, limiting_b: f64, c: &TheoryConstants, alpha: f64) -> CheckResult {
    CheckResult::new("sqrt_alpha_envelope", t, limiting_b, 2.0 * c.g2 * alpha / c.mu())
}
