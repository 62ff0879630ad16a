//! Rectangular quadrature over the latent variable.
//!
//! All latent-variable integrals in the crate are taken against the same
//! grid: equally spaced nodes with weights proportional to the standard
//! normal density, normalized to sum to one.

use crate::error::{IrtError, Result};
use crate::model::ItemParams;

pub const DEFAULT_Q: usize = 61;
pub const DEFAULT_LO: f64 = -6.0;
pub const DEFAULT_HI: f64 = 6.0;

#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Equally spaced nodes on `[lo, hi]` with normalized standard-normal
    /// density weights.
    pub fn new(q_count: usize, lo: f64, hi: f64) -> Result<Self> {
        if q_count < 3 {
            return Err(IrtError::Quadrature(format!(
                "need at least 3 nodes, got {q_count}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(IrtError::Quadrature(format!(
                "invalid bounds [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (q_count - 1) as f64;
        let nodes: Vec<f64> = (0..q_count).map(|q| lo + step * q as f64).collect();
        let raw: Vec<f64> = nodes.iter().map(|&t| (-0.5 * t * t).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(QuadratureGrid {
            nodes,
            weights,
            log_weights,
        })
    }

    pub fn default_grid() -> Self {
        Self::new(DEFAULT_Q, DEFAULT_LO, DEFAULT_HI).expect("default grid is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Marginal pattern likelihood `f(y) = sum_q f(y | theta_q) w_q`,
    /// accumulated in log space.
    pub fn marginal_likelihood(&self, params: &ItemParams, pattern: &[u32]) -> f64 {
        self.log_marginal_likelihood(params, pattern).exp()
    }

    pub fn log_marginal_likelihood(&self, params: &ItemParams, pattern: &[u32]) -> f64 {
        let joint: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.log_weights)
            .map(|(&t, &lw)| params.log_conditional_likelihood(pattern, t) + lw)
            .collect();
        log_sum_exp(&joint)
    }
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Item;
    use approx::assert_relative_eq;

    #[test]
    fn default_grid_matches_estimation_setting() {
        let g = QuadratureGrid::default_grid();
        assert_eq!(g.len(), 61);
        assert_relative_eq!(g.nodes()[1] - g.nodes()[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_grid_has_symmetric_weights() {
        let g = QuadratureGrid::new(41, -5.0, 5.0).unwrap();
        let q = g.len();
        for i in 0..q {
            assert_relative_eq!(g.weights()[i], g.weights()[q - 1 - i], epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_moments_match_standard_normal() {
        let g = QuadratureGrid::default_grid();
        let mean: f64 = g.nodes().iter().zip(g.weights()).map(|(t, w)| t * w).sum();
        let var: f64 = g.nodes().iter().zip(g.weights()).map(|(t, w)| t * t * w).sum();
        assert!(mean.abs() < 2e-3);
        assert!((var - 1.0).abs() < 2e-3);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(QuadratureGrid::new(2, -6.0, 6.0).is_err());
        assert!(QuadratureGrid::new(61, 6.0, -6.0).is_err());
        assert!(QuadratureGrid::new(61, 0.0, 0.0).is_err());
    }

    #[test]
    fn marginal_likelihood_symmetric_item() {
        let g = QuadratureGrid::default_grid();
        // a = 0: theta-free item, marginal P(y=1) = logistic(0) = 0.5 exactly
        let flat = ItemParams::new(vec![Item::new(0.0, vec![0.0]).unwrap()]).unwrap();
        assert_relative_eq!(g.marginal_likelihood(&flat, &[1]), 0.5, epsilon = 1e-12);
        // a = 1, c = 0: symmetry of the logistic around the prior mean
        let sym = ItemParams::new(vec![Item::new(1.0, vec![0.0]).unwrap()]).unwrap();
        assert_relative_eq!(g.marginal_likelihood(&sym, &[1]), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn marginal_likelihoods_sum_to_one_over_patterns() {
        let g = QuadratureGrid::default_grid();
        let params = ItemParams::new(vec![
            Item::new(1.5, vec![0.4]).unwrap(),
            Item::new(0.7, vec![1.1, -0.8]).unwrap(),
            Item::new(1.1, vec![-0.2]).unwrap(),
        ])
        .unwrap();
        let mut total = 0.0;
        for y0 in 0..2u32 {
            for y1 in 0..3u32 {
                for y2 in 0..2u32 {
                    total += g.marginal_likelihood(&params, &[y0, y1, y2]);
                }
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn grid_refinement_stability() {
        let params = ItemParams::new(vec![
            Item::new(1.8, vec![0.9]).unwrap(),
            Item::new(0.6, vec![-0.5]).unwrap(),
        ])
        .unwrap();
        let coarse = QuadratureGrid::new(61, -6.0, 6.0).unwrap();
        let fine = QuadratureGrid::new(121, -6.0, 6.0).unwrap();
        for pat in [[0u32, 0], [1, 0], [0, 1], [1, 1]] {
            let a = coarse.marginal_likelihood(&params, &pat);
            let b = fine.marginal_likelihood(&params, &pat);
            assert!((a - b).abs() < 1e-6, "pattern {pat:?}: {a} vs {b}");
        }
    }
}
