//! Local costs `f_i`, aggregate constants and the reference optimizer.
//!
//! All cost variants are quadratic, so every Hessian is constant and the
//! smoothness and strong-convexity moduli are exact eigenvalues rather than
//! estimates. The aggregate is normalized, `f = (1/n) Σ f_i`, everywhere.
//! Individual `f_i` may be nonconvex; only the aggregate must be strongly
//! convex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConvexSet, GeometryError};
use crate::linalg::{self, EigenError};
use crate::serde_util;

/// Strong convexity below this is treated as absent.
pub const MIN_STRONG_CONVEXITY: f64 = 1e-12;

pub const REFERENCE_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("aggregate cost is not strongly convex (mu = {mu:e})")]
    NotStronglyConvex { mu: f64 },
    #[error("reference solver stalled after {iterations} iterations (last step {step:e})")]
    NoConvergence { iterations: usize, step: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalCost {
    /// `x ↦ ½ xᵀQx + bᵀx + c` with symmetric `Q`.
    Quadratic {
        #[serde(with = "serde_util::matrix")]
        q: DMatrix<f64>,
        #[serde(with = "serde_util::vector")]
        b: DVector<f64>,
        #[serde(default)]
        c: f64,
    },
    /// `x ↦ ‖q − Pᵀx‖²` with `P` of shape `d × p`.
    LeastSquares {
        #[serde(with = "serde_util::matrix")]
        p: DMatrix<f64>,
        #[serde(with = "serde_util::vector")]
        q: DVector<f64>,
    },
    /// `x ↦ a·x²` on ℝ.
    Scalar1d { a: f64 },
}

impl LocalCost {
    pub fn quadratic(q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self, CostError> {
        let cost = Self::Quadratic { q, b, c };
        cost.validate()?;
        Ok(cost)
    }

    pub fn least_squares(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self, CostError> {
        let cost = Self::LeastSquares { p, q };
        cost.validate()?;
        Ok(cost)
    }

    pub fn scalar(a: f64) -> Self {
        Self::Scalar1d { a }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        match self {
            Self::Quadratic { q, b, c } => {
                if q.nrows() == 0 || q.nrows() != q.ncols() {
                    return Err(CostError::InvalidCost("Q must be square and nonempty".into()));
                }
                if b.len() != q.nrows() {
                    return Err(CostError::DimensionMismatch {
                        expected: q.nrows(),
                        got: b.len(),
                    });
                }
                if !finite(q) || b.iter().any(|v| !v.is_finite()) || !c.is_finite() {
                    return Err(CostError::InvalidCost("non-finite coefficient".into()));
                }
                let asym = (q - q.transpose()).amax();
                if asym > 1e-12 * q.amax().max(1.0) {
                    return Err(CostError::InvalidCost("Q must be symmetric".into()));
                }
                Ok(())
            }
            Self::LeastSquares { p, q } => {
                if p.nrows() == 0 || p.ncols() == 0 {
                    return Err(CostError::InvalidCost("P must be nonempty".into()));
                }
                if q.len() != p.ncols() {
                    return Err(CostError::DimensionMismatch {
                        expected: p.ncols(),
                        got: q.len(),
                    });
                }
                if !finite(p) || q.iter().any(|v| !v.is_finite()) {
                    return Err(CostError::InvalidCost("non-finite coefficient".into()));
                }
                Ok(())
            }
            Self::Scalar1d { a } => {
                if a.is_finite() {
                    Ok(())
                } else {
                    Err(CostError::InvalidCost("non-finite coefficient".into()))
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic { q, .. } => q.nrows(),
            Self::LeastSquares { p, .. } => p.nrows(),
            Self::Scalar1d { .. } => 1,
        }
    }

    fn check(&self, x: &DVector<f64>) -> Result<(), CostError> {
        if x.len() != self.dim() {
            return Err(CostError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, CostError> {
        self.check(x)?;
        Ok(match self {
            Self::Quadratic { q, b, c } => 0.5 * x.dot(&(q * x)) + b.dot(x) + c,
            Self::LeastSquares { p, q } => (q - p.tr_mul(x)).norm_squared(),
            Self::Scalar1d { a } => a * x[0] * x[0],
        })
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>, CostError> {
        self.check(x)?;
        Ok(self.grad_unchecked(x))
    }

    /// Gradient without the dimension check, for the inner loop.
    pub(crate) fn grad_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Quadratic { q, b, .. } => q * x + b,
            Self::LeastSquares { p, q } => (p * (p.tr_mul(x) - q)) * 2.0,
            Self::Scalar1d { a } => DVector::from_element(1, 2.0 * a * x[0]),
        }
    }

    /// The (constant) Hessian.
    pub fn hessian(&self) -> DMatrix<f64> {
        match self {
            Self::Quadratic { q, .. } => q.clone(),
            Self::LeastSquares { p, .. } => (p * p.transpose()) * 2.0,
            Self::Scalar1d { a } => DMatrix::from_element(1, 1, 2.0 * a),
        }
    }

    /// Lipschitz constant of the gradient: the largest Hessian eigenvalue
    /// magnitude.
    pub fn smoothness(&self) -> Result<f64, CostError> {
        match self {
            Self::Scalar1d { a } => Ok(2.0 * a.abs()),
            _ => Ok(linalg::spectral_radius(&self.hessian())?),
        }
    }
}

fn common_dim(costs: &[LocalCost]) -> Result<usize, CostError> {
    let first = costs
        .first()
        .ok_or_else(|| CostError::InvalidCost("at least one local cost is required".into()))?;
    let d = first.dim();
    for c in costs {
        if c.dim() != d {
            return Err(CostError::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
    }
    Ok(d)
}

/// `(L, μ)`: the largest local smoothness constant and the smallest
/// eigenvalue of the averaged Hessian `(1/n) Σ ∇²f_i`.
pub fn aggregate_constants(costs: &[LocalCost]) -> Result<(f64, f64), CostError> {
    let d = common_dim(costs)?;
    let mut l: f64 = 0.0;
    let mut hess = DMatrix::zeros(d, d);
    for c in costs {
        l = l.max(c.smoothness()?);
        hess += c.hessian();
    }
    hess /= costs.len() as f64;
    let mu = linalg::symmetric_eigenvalues(&hess)?[0];
    if mu <= MIN_STRONG_CONVEXITY {
        return Err(CostError::NotStronglyConvex { mu });
    }
    Ok((l, mu))
}

fn aggregate_grad(costs: &[LocalCost], x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for c in costs {
        g += c.grad_unchecked(x);
    }
    g / costs.len() as f64
}

/// Centralized projected gradient with stepsize `1/L` from the projection of
/// the origin, stopped once a step moves less than `tol`. Returns the
/// optimizer `x*` and the gradient heterogeneity `D = max_i ‖∇f_i(x*)‖`.
pub fn solve_reference(
    costs: &[LocalCost],
    set: &ConvexSet,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, f64), CostError> {
    let (l, _) = aggregate_constants(costs)?;
    let d = common_dim(costs)?;
    let step = 1.0 / l;
    let mut x = set.project(&DVector::zeros(d))?;
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        let next = set.project(&(&x - aggregate_grad(costs, &x) * step))?;
        last = (&next - &x).norm();
        x = next;
        if last <= tol {
            let d_het = costs
                .iter()
                .map(|c| c.grad_unchecked(&x).norm())
                .fold(0.0, f64::max);
            return Ok((x, d_het));
        }
    }
    Err(CostError::NoConvergence {
        iterations: max_iter,
        step: last,
    })
}

/// Local costs, feasible set and every derived constant the analysis needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemRepr", into = "ProblemRepr")]
pub struct ProblemInstance {
    costs: Vec<LocalCost>,
    set: ConvexSet,
    dim: usize,
    local_smoothness: Vec<f64>,
    l: f64,
    mu: f64,
    x_star: DVector<f64>,
    d_het: f64,
}

#[derive(Serialize, Deserialize)]
struct ProblemRepr {
    costs: Vec<LocalCost>,
    set: ConvexSet,
    /// Written for inspection; recomputed on load.
    #[serde(default, skip_deserializing, skip_serializing_if = "Option::is_none")]
    derived: Option<DerivedRepr>,
}

#[derive(Serialize, Deserialize)]
struct DerivedRepr {
    l: f64,
    mu: f64,
    x_star: Vec<f64>,
    d: f64,
    local_smoothness: Vec<f64>,
}

impl TryFrom<ProblemRepr> for ProblemInstance {
    type Error = CostError;
    fn try_from(r: ProblemRepr) -> Result<Self, Self::Error> {
        for c in &r.costs {
            c.validate()?;
        }
        r.set.validate()?;
        ProblemInstance::new(r.costs, r.set)
    }
}

impl From<ProblemInstance> for ProblemRepr {
    fn from(p: ProblemInstance) -> Self {
        ProblemRepr {
            derived: Some(DerivedRepr {
                l: p.l,
                mu: p.mu,
                x_star: p.x_star.as_slice().to_vec(),
                d: p.d_het,
                local_smoothness: p.local_smoothness,
            }),
            costs: p.costs,
            set: p.set,
        }
    }
}

impl ProblemInstance {
    /// Exact constants from the Hessians, then `x*` by [`solve_reference`].
    pub fn new(costs: Vec<LocalCost>, set: ConvexSet) -> Result<Self, CostError> {
        let (l, mu) = aggregate_constants(&costs)?;
        Self::from_parts(costs, set, l, mu)
    }

    /// Use caller-supplied `(L, μ)`, e.g. upper/lower bounds known
    /// analytically. `L` must dominate every local smoothness constant.
    pub fn from_parts(costs: Vec<LocalCost>, set: ConvexSet, l: f64, mu: f64) -> Result<Self, CostError> {
        let dim = common_dim(&costs)?;
        if let Some(sd) = set.dim() {
            if sd != dim {
                return Err(CostError::DimensionMismatch { expected: dim, got: sd });
            }
        }
        if !(mu > MIN_STRONG_CONVEXITY) {
            return Err(CostError::NotStronglyConvex { mu });
        }
        let local_smoothness = costs.iter().map(LocalCost::smoothness).collect::<Result<Vec<_>, _>>()?;
        if local_smoothness.iter().any(|&li| li > l * (1.0 + 1e-12)) || l < mu {
            return Err(CostError::InvalidCost(format!(
                "L = {l} must satisfy mu <= L and dominate every local constant"
            )));
        }
        let (x_star, d_het) = solve_reference(&costs, &set, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
        Ok(Self {
            costs,
            set,
            dim,
            local_smoothness,
            l,
            mu,
            x_star,
            d_het,
        })
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn costs(&self) -> &[LocalCost] {
        &self.costs
    }

    pub fn set(&self) -> &ConvexSet {
        &self.set
    }

    /// `L = max_i L_i`.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn local_smoothness(&self) -> &[f64] {
        &self.local_smoothness
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    /// `D = max_i ‖∇f_i(x*)‖`.
    pub fn heterogeneity(&self) -> f64 {
        self.d_het
    }

    pub fn local_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.costs[i].grad_unchecked(x)
    }

    /// `∇f(x) = (1/n) Σ ∇f_i(x)`.
    pub fn aggregate_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        aggregate_grad(&self.costs, x)
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64, CostError> {
        let mut sum = 0.0;
        for c in &self.costs {
            sum += c.value(x)?;
        }
        Ok(sum / self.n() as f64)
    }

    /// Fixed-point residual `‖x* − P_Ω[x* − ∇f(x*)/L]‖`.
    pub fn optimality_residual(&self) -> f64 {
        let y = &self.x_star - self.aggregate_grad(&self.x_star) / self.l;
        let p = self.set.project(&y).expect("dimensions validated at construction");
        (p - &self.x_star).norm()
    }
}
