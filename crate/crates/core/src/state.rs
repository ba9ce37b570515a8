//! Stacked agent iterates `x = (x_1, …, x_n)`, one point in ℝ^d per agent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AgentStates(Vec<DVector<f64>>);

impl AgentStates {
    /// # Panics
    /// If the rows do not all have the same dimension.
    pub fn new(rows: Vec<DVector<f64>>) -> Self {
        if let Some(first) = rows.first() {
            let d = first.len();
            assert!(
                rows.iter().all(|r| r.len() == d),
                "agent states must share one dimension"
            );
        }
        Self(rows)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    /// All `n` agents at the same point.
    pub fn replicated(point: &DVector<f64>, n: usize) -> Self {
        Self(vec![point.clone(); n])
    }

    pub fn n_agents(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self) -> usize {
        self.0.first().map_or(0, DVector::len)
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.0
    }

    pub fn rows_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.0
    }

    pub fn into_rows(self) -> Vec<DVector<f64>> {
        self.0
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim());
        for x in &self.0 {
            sum += x;
        }
        sum / self.0.len() as f64
    }

    /// `‖x − x̄‖² = Σ_i ‖x_i − x̄‖²`.
    pub fn consensus_error(&self) -> f64 {
        let mean = self.mean();
        self.0.iter().map(|x| (x - &mean).norm_squared()).sum()
    }

    /// `Σ_i ‖x_i − x̄‖` (unsquared), the numerator of the relative consensus error.
    pub fn spread(&self) -> f64 {
        let mean = self.mean();
        self.0.iter().map(|x| (x - &mean).norm()).sum()
    }

    /// `Σ_i ‖x_i − y‖²`.
    pub fn squared_distance_to(&self, y: &DVector<f64>) -> f64 {
        self.0.iter().map(|x| (x - y).norm_squared()).sum()
    }

    /// Frobenius norm of the stacked state.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(DVector::norm_squared).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Largest per-agent displacement `max_i ‖x_i − y_i‖`.
    pub fn max_displacement(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.iter().map(|x| x.as_slice().to_vec()).collect()
    }
}

impl From<Vec<Vec<f64>>> for AgentStates {
    fn from(rows: Vec<Vec<f64>>) -> Self {
        Self::from_rows(&rows)
    }
}

impl From<AgentStates> for Vec<Vec<f64>> {
    fn from(s: AgentStates) -> Self {
        s.to_rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_errors_on_two_points() {
        let x = AgentStates::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(x.mean().as_slice(), &[1.0, 0.0]);
        assert_eq!(x.consensus_error(), 2.0);
        assert_eq!(x.spread(), 2.0);
        assert_eq!(x.norm(), 2.0);
    }

    #[test]
    fn distance_splits_into_consensus_and_mean_parts() {
        let x = AgentStates::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![-4.0, 0.25]]);
        let y = DVector::from_vec(vec![0.3, -0.7]);
        let lhs = x.squared_distance_to(&y);
        let rhs = x.consensus_error() + 3.0 * (x.mean() - &y).norm_squared();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
