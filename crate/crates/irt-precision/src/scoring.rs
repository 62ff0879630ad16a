//! Posterior summaries of the latent variable per response pattern: EAP
//! mean, posterior variance, and their gradients with respect to the item
//! parameters.

use crate::model::ItemParams;
use crate::quadrature::QuadratureGrid;

/// EAP mean, posterior variance, and the per-node posterior weights for one
/// response pattern.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub eap: f64,
    pub post_var: f64,
    pub post: Vec<f64>,
    pub log_marginal: f64,
}

/// Posterior weights `post_q ∝ f(y | theta_q) w_q`, computed from
/// log-likelihoods with max-subtraction before exponentiation.
pub fn posterior_summary(
    pattern: &[u32],
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> PosteriorSummary {
    let log_joint: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(grid.log_weights())
        .map(|(&t, &lw)| params.log_conditional_likelihood(pattern, t) + lw)
        .collect();
    let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = log_joint.iter().map(|&lj| (lj - max).exp()).collect();
    let total: f64 = post.iter().sum();
    for p in &mut post {
        *p /= total;
    }
    let log_marginal = max + total.ln();
    let eap: f64 = grid.nodes().iter().zip(&post).map(|(&t, &p)| t * p).sum();
    let post_var: f64 = grid
        .nodes()
        .iter()
        .zip(&post)
        .map(|(&t, &p)| (t - eap) * (t - eap) * p)
        .sum();
    PosteriorSummary {
        eap,
        post_var,
        post,
        log_marginal,
    }
}

/// Analytic gradient of the EAP score with respect to the flat parameter
/// vector: `sum_q (theta_q - eap) post_q s(y, theta_q)`.
pub fn eap_gradient(pattern: &[u32], params: &ItemParams, grid: &QuadratureGrid) -> Vec<f64> {
    let summary = posterior_summary(pattern, params, grid);
    eap_gradient_from(&summary, pattern, params, grid)
}

pub fn eap_gradient_from(
    summary: &PosteriorSummary,
    pattern: &[u32],
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> Vec<f64> {
    let p = params.n_params();
    let mut out = vec![0.0; p];
    let mut score = vec![0.0; p];
    for (q, (&t, &w)) in grid.nodes().iter().zip(&summary.post).enumerate() {
        let _ = q;
        if w == 0.0 {
            continue;
        }
        params.score_vector_into(pattern, t, &mut score);
        let coeff = (t - summary.eap) * w;
        for (o, s) in out.iter_mut().zip(&score) {
            *o += coeff * s;
        }
    }
    out
}

/// Analytic gradient of the posterior variance:
/// `sum_q ((theta_q - eap)^2 - post_var) post_q s(y, theta_q)`.
pub fn postvar_gradient(pattern: &[u32], params: &ItemParams, grid: &QuadratureGrid) -> Vec<f64> {
    let summary = posterior_summary(pattern, params, grid);
    postvar_gradient_from(&summary, pattern, params, grid)
}

pub fn postvar_gradient_from(
    summary: &PosteriorSummary,
    pattern: &[u32],
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> Vec<f64> {
    let p = params.n_params();
    let mut out = vec![0.0; p];
    let mut score = vec![0.0; p];
    for (&t, &w) in grid.nodes().iter().zip(&summary.post) {
        if w == 0.0 {
            continue;
        }
        params.score_vector_into(pattern, t, &mut score);
        let d = t - summary.eap;
        let coeff = (d * d - summary.post_var) * w;
        for (o, s) in out.iter_mut().zip(&score) {
            *o += coeff * s;
        }
    }
    out
}
