//! Closed convex feasible sets and their exact Euclidean projections.
//!
//! Unbounded box and interval ends are `±f64::INFINITY` in memory and the
//! strings `"inf"` / `"-inf"` in JSON. `WholeSpace` has no dimension of its
//! own and accepts points of any length; projecting onto it is the identity,
//! which turns the projected iteration into plain decentralized gradient
//! descent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::serde_util;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has dimension {got}, set has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid set: {0}")]
    InvalidSet(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    WholeSpace,
    Ball {
        #[serde(with = "serde_util::vector")]
        center: DVector<f64>,
        radius: f64,
    },
    Box {
        #[serde(with = "serde_util::extended_vec")]
        lower: Vec<f64>,
        #[serde(with = "serde_util::extended_vec")]
        upper: Vec<f64>,
    },
    /// `{x : ⟨a, x⟩ ≤ b}`
    Halfspace {
        #[serde(with = "serde_util::vector")]
        normal: DVector<f64>,
        offset: f64,
    },
    Interval {
        #[serde(with = "serde_util::extended")]
        lower: f64,
        #[serde(with = "serde_util::extended")]
        upper: f64,
    },
    /// `{x ≥ 0 : Σ x_i = radius}`
    Simplex { radius: f64 },
}

impl ConvexSet {
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self, GeometryError> {
        let s = Self::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    /// Ball of the given radius about the origin of ℝ^dim.
    pub fn centered_ball(dim: usize, radius: f64) -> Result<Self, GeometryError> {
        Self::ball(DVector::zeros(dim), radius)
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GeometryError> {
        let s = Self::Box { lower, upper };
        s.validate()?;
        Ok(s)
    }

    pub fn halfspace(normal: DVector<f64>, offset: f64) -> Result<Self, GeometryError> {
        let s = Self::Halfspace { normal, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self, GeometryError> {
        let s = Self::Interval { lower, upper };
        s.validate()?;
        Ok(s)
    }

    pub fn simplex(radius: f64) -> Result<Self, GeometryError> {
        let s = Self::Simplex { radius };
        s.validate()?;
        Ok(s)
    }

    /// Check nonemptiness and closedness of the descriptor. Deserialized
    /// sets must pass this before use.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidSet(m.to_string()));
        match self {
            Self::WholeSpace => Ok(()),
            Self::Ball { center, radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad("ball radius must be finite and positive");
                }
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return bad("ball center must be a finite, nonempty point");
                }
                Ok(())
            }
            Self::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return bad("box bounds must be nonempty and of equal length");
                }
                for (l, u) in lower.iter().zip(upper) {
                    if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                        return bad("box needs lower <= upper with no empty coordinate");
                    }
                }
                Ok(())
            }
            Self::Halfspace { normal, offset } => {
                if normal.is_empty() || normal.iter().any(|v| !v.is_finite()) || normal.norm() == 0.0 {
                    return bad("halfspace normal must be finite and nonzero");
                }
                if !offset.is_finite() {
                    return bad("halfspace offset must be finite");
                }
                Ok(())
            }
            Self::Interval { lower, upper } => {
                if lower.is_nan() || upper.is_nan() || lower > upper || *lower == f64::INFINITY || *upper == f64::NEG_INFINITY {
                    return bad("interval needs lower <= upper");
                }
                Ok(())
            }
            Self::Simplex { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad("simplex radius must be finite and positive");
                }
                Ok(())
            }
        }
    }

    /// Fixed dimension of the set, if it has one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::WholeSpace | Self::Simplex { .. } => None,
            Self::Ball { center, .. } => Some(center.len()),
            Self::Box { lower, .. } => Some(lower.len()),
            Self::Halfspace { normal, .. } => Some(normal.len()),
            Self::Interval { .. } => Some(1),
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            Self::WholeSpace | Self::Halfspace { .. } => false,
            Self::Ball { .. } | Self::Simplex { .. } => true,
            Self::Box { lower, upper } => lower.iter().chain(upper).all(|v| v.is_finite()),
            Self::Interval { lower, upper } => lower.is_finite() && upper.is_finite(),
        }
    }

    fn check_dim(&self, y: &DVector<f64>) -> Result<(), GeometryError> {
        match self.dim() {
            Some(d) if d != y.len() => Err(GeometryError::DimensionMismatch {
                expected: d,
                got: y.len(),
            }),
            _ if matches!(self, Self::Simplex { .. }) && y.is_empty() => {
                Err(GeometryError::DimensionMismatch { expected: 1, got: 0 })
            }
            _ => Ok(()),
        }
    }

    /// `argmin_{x ∈ Ω} ‖x − y‖`.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_dim(y)?;
        Ok(match self {
            Self::WholeSpace => y.clone(),
            Self::Ball { center, radius } => {
                let offset = y - center;
                let dist = offset.norm();
                if dist > *radius {
                    center + offset * (*radius / dist)
                } else {
                    y.clone()
                }
            }
            Self::Box { lower, upper } => DVector::from_iterator(
                y.len(),
                y.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(v, (l, u))| v.max(*l).min(*u)),
            ),
            Self::Halfspace { normal, offset } => {
                let excess = normal.dot(y) - offset;
                if excess > 0.0 {
                    y - normal * (excess / normal.norm_squared())
                } else {
                    y.clone()
                }
            }
            Self::Interval { lower, upper } => DVector::from_element(1, y[0].max(*lower).min(*upper)),
            Self::Simplex { radius } => project_simplex(y, *radius),
        })
    }

    /// Whether `y` lies within distance `tol` of the set (componentwise
    /// slack for boxes, intervals and the simplex sign constraints).
    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> Result<bool, GeometryError> {
        self.check_dim(y)?;
        Ok(match self {
            Self::WholeSpace => true,
            Self::Ball { center, radius } => (y - center).norm() <= radius + tol,
            Self::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            Self::Halfspace { normal, offset } => normal.dot(y) - offset <= tol * normal.norm(),
            Self::Interval { lower, upper } => y[0] >= lower - tol && y[0] <= upper + tol,
            Self::Simplex { radius } => {
                y.iter().all(|v| *v >= -tol) && (y.sum() - radius).abs() <= tol * (y.len() as f64).sqrt()
            }
        })
    }
}

/// Sort-and-threshold projection onto `{x ≥ 0 : Σx = r}`.
fn project_simplex(y: &DVector<f64>, radius: f64) -> DVector<f64> {
    let mut sorted: Vec<f64> = y.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - radius) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    y.map(|v| (v - theta).max(0.0))
}
