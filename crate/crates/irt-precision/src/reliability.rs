//! Reliability coefficients for the EAP score with analytic asymptotic
//! standard errors.
//!
//! Both coefficients are transformations `phi(eta)` of a mean vector
//! `eta = E[H(Y)]` of per-respondent statistics. The sampling variability of
//! `phi(eta_hat(nu_hat))` combines the moment noise of the sample average
//! with the item-parameter estimation noise, through the influence-function
//! covariance assembled in [`estimate_moments`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ResponseMatrix;
use crate::error::{IrtError, Result};
use crate::estimation::{FitResult, InfoMatrix, PatternGroups};
use crate::model::ItemParams;
use crate::quadrature::QuadratureGrid;
use crate::scoring::posterior_summary;

/// Which reliability coefficient is being computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientKind {
    /// Proportional reduction in mean squared error for the latent variable.
    Prmse,
    /// Classical test theory reliability of the EAP score.
    Ctt,
}

impl CoefficientKind {
    /// Length of the H-vector: 3 for PRMSE, `2 + Q` for CTT.
    pub fn h_len(self, q: usize) -> usize {
        match self {
            CoefficientKind::Prmse => 3,
            CoefficientKind::Ctt => 2 + q,
        }
    }
}

/// Per-pattern H-vector with its gradient matrix (one row per component,
/// one column per item parameter).
#[derive(Debug, Clone)]
pub struct HVector {
    pub kind: CoefficientKind,
    pub values: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
}

/// H-vector, gradient, and marginal score for one pattern, computed in a
/// single pass over the grid.
fn pattern_stats(
    pattern: &[u32],
    params: &ItemParams,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
) -> (HVector, Vec<f64>) {
    let p = params.n_params();
    let q = grid.len();
    let ell = kind.h_len(q);
    let summary = posterior_summary(pattern, params, grid);
    let eap = summary.eap;

    // conditional score at every node
    let mut scores = vec![0.0; q * p];
    for (qi, &theta) in grid.nodes().iter().enumerate() {
        params.score_vector_into(pattern, theta, &mut scores[qi * p..(qi + 1) * p]);
    }

    let mut eap_grad = vec![0.0; p];
    let mut var_grad = vec![0.0; p];
    let mut marg_score = vec![0.0; p];
    for (qi, (&theta, &w)) in grid.nodes().iter().zip(&summary.post).enumerate() {
        let s = &scores[qi * p..(qi + 1) * p];
        let d = theta - eap;
        let c_eap = d * w;
        let c_var = (d * d - summary.post_var) * w;
        for i in 0..p {
            eap_grad[i] += c_eap * s[i];
            var_grad[i] += c_var * s[i];
            marg_score[i] += w * s[i];
        }
    }

    let mut values = vec![0.0; ell];
    let mut grad = vec![vec![0.0; p]; ell];
    values[0] = eap;
    values[1] = eap * eap;
    grad[1].iter_mut().zip(&eap_grad).for_each(|(g, &e)| *g = 2.0 * eap * e);
    grad[0].copy_from_slice(&eap_grad);

    match kind {
        CoefficientKind::Prmse => {
            values[2] = summary.post_var;
            grad[2].copy_from_slice(&var_grad);
        }
        CoefficientKind::Ctt => {
            // H_{2+q} = eap * r_q with r_q = f(y|theta_q)/f(y) = post_q / w_q;
            // grad = r_q grad(eap) + eap r_q (s_q - g)
            for qi in 0..q {
                let r = summary.post[qi] / grid.weights()[qi];
                values[2 + qi] = eap * r;
                let s = &scores[qi * p..(qi + 1) * p];
                let row = &mut grad[2 + qi];
                for i in 0..p {
                    row[i] = r * eap_grad[i] + eap * r * (s[i] - marg_score[i]);
                }
            }
        }
    }

    (
        HVector {
            kind,
            values,
            grad,
        },
        marg_score,
    )
}

/// H-vector for PRMSE: `(eap, eap^2, posterior variance)`.
pub fn h_prmse(pattern: &[u32], params: &ItemParams, grid: &QuadratureGrid) -> HVector {
    pattern_stats(pattern, params, grid, CoefficientKind::Prmse).0
}

/// H-vector for CTT reliability: `(eap, eap^2, eap * f(y|theta_q)/f(y))`.
pub fn h_ctt(pattern: &[u32], params: &ItemParams, grid: &QuadratureGrid) -> HVector {
    pattern_stats(pattern, params, grid, CoefficientKind::Ctt).0
}

/// Sample moments, the Jacobian of `eta(nu)`, and the influence-function
/// covariance.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub kind: CoefficientKind,
    pub eta_hat: Vec<f64>,
    /// Explicit-dependence Jacobian `(1/n) sum_i grad H(Y_i)`: one row per
    /// item parameter, one column per H component.
    pub jacobian: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub n: usize,
}

/// Moment estimation over a dataset. The estimator is the empirical mean
/// re-evaluated at the fitted parameters, so the Jacobian in the expansion
/// carries only the explicit parameter dependence of H:
/// `J_s = (1/n) sum_i grad H_s(Y_i)` — the empirical measure itself does not
/// move with nu. The covariance is the sample covariance of the
/// influence-adjusted vector `A_i = H_i - eta_hat + J^T I^{-1} g_i`; the
/// correlation between moment noise and parameter noise enters through the
/// cross-products of `H_i` and `g_i` inside that covariance.
pub fn estimate_moments(
    data: &ResponseMatrix,
    params: &ItemParams,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    info: &InfoMatrix,
) -> Result<MomentEstimate> {
    estimate_moments_grouped(&PatternGroups::from_data(data), params, grid, kind, info)
}

pub fn estimate_moments_grouped(
    groups: &PatternGroups,
    params: &ItemParams,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    info: &InfoMatrix,
) -> Result<MomentEstimate> {
    let p = params.n_params();
    let ell = kind.h_len(grid.len());
    let n = groups.n as f64;
    let info_inv = info.inverse()?;

    let stats: Vec<(HVector, Vec<f64>)> = groups
        .patterns
        .par_iter()
        .map(|pattern| pattern_stats(pattern, params, grid, kind))
        .collect();

    let mut eta_hat = vec![0.0; ell];
    let mut jacobian = DMatrix::<f64>::zeros(p, ell);
    for ((h, _), &count) in stats.iter().zip(&groups.counts) {
        let w = count as f64 / n;
        for s in 0..ell {
            eta_hat[s] += w * h.values[s];
            for i in 0..p {
                jacobian[(i, s)] += w * h.grad[s][i];
            }
        }
    }

    // A_i = H_i - eta_hat + J^T I^{-1} g_i
    let jt_iinv = jacobian.transpose() * &info_inv;
    let mut sigma_hat = DMatrix::<f64>::zeros(ell, ell);
    for ((h, g), &count) in stats.iter().zip(&groups.counts) {
        let gv = DVector::from_column_slice(g);
        let correction = &jt_iinv * &gv;
        let mut a = DVector::<f64>::zeros(ell);
        for s in 0..ell {
            a[s] = h.values[s] - eta_hat[s] + correction[s];
        }
        sigma_hat += (&a * a.transpose()) * (count as f64 / n);
    }

    Ok(MomentEstimate {
        kind,
        eta_hat,
        jacobian,
        sigma_hat,
        n: groups.n,
    })
}

/// PRMSE transformation `(x2 - x1^2)/(x2 - x1^2 + x3)` with its gradient.
pub fn phi_prmse(eta: &[f64]) -> Result<(f64, Vec<f64>)> {
    assert_eq!(eta.len(), 3);
    let (x1, x2, x3) = (eta[0], eta[1], eta[2]);
    let v = x2 - x1 * x1;
    let den = v + x3;
    if den <= 0.0 {
        return Err(IrtError::DegenerateMoments(format!(
            "PRMSE denominator {den} is not positive"
        )));
    }
    let phi = v / den;
    let d2 = den * den;
    let grad = vec![-2.0 * x1 * x3 / d2, x3 / d2, -v / d2];
    Ok((phi, grad))
}

/// CTT reliability transformation
/// `(sum_q x_{2+q}^2 w_q - x1^2)/(x2 - x1^2)` with its gradient.
pub fn phi_ctt(eta: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    assert_eq!(eta.len(), 2 + weights.len());
    let (x1, x2) = (eta[0], eta[1]);
    let den = x2 - x1 * x1;
    if den <= 0.0 {
        return Err(IrtError::DegenerateMoments(format!(
            "EAP score variance {den} is not positive"
        )));
    }
    let num: f64 = eta[2..]
        .iter()
        .zip(weights)
        .map(|(&x, &w)| x * x * w)
        .sum::<f64>()
        - x1 * x1;
    let phi = num / den;
    let mut grad = vec![0.0; eta.len()];
    grad[0] = -2.0 * x1 * (den - num) / (den * den);
    grad[1] = -num / (den * den);
    for (q, &w) in weights.iter().enumerate() {
        grad[2 + q] = 2.0 * eta[2 + q] * w / den;
    }
    Ok((phi, grad))
}

/// Point estimate, SE, and Wald confidence interval for one coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub kind: CoefficientKind,
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// Set when a CTT estimate exceeds one; the value is reported as-is,
    /// never clipped.
    pub exceeds_one: bool,
}

pub fn normal_quantile(prob: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(prob)
}

/// Full chain: moments, transformation, Delta-method SE, and an untruncated
/// symmetric Wald interval.
pub fn reliability_with_se(
    data: &ResponseMatrix,
    fit: &FitResult,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    alpha: f64,
) -> Result<ReliabilityReport> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(IrtError::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    let groups = PatternGroups::from_data(data);
    let moments = estimate_moments_grouped(&groups, &fit.params, grid, kind, &fit.info)?;
    report_from_moments(&moments, grid, kind, alpha, data.n_items())
}

pub fn report_from_moments(
    moments: &MomentEstimate,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    alpha: f64,
    m: usize,
) -> Result<ReliabilityReport> {
    let (point, grad) = match kind {
        CoefficientKind::Prmse => phi_prmse(&moments.eta_hat)?,
        CoefficientKind::Ctt => phi_ctt(&moments.eta_hat, grid.weights())?,
    };
    let grad_v = DVector::from_column_slice(&grad);
    let variance = (grad_v.transpose() * &moments.sigma_hat * &grad_v)[(0, 0)] / moments.n as f64;
    let se = variance.max(0.0).sqrt();
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(ReliabilityReport {
        kind,
        point,
        se,
        ci_lo: point - z * se,
        ci_hi: point + z * se,
        alpha,
        n: moments.n,
        m,
        q: grid.len(),
        exceeds_one: point > 1.0,
    })
}

/// How the population oracle integrates over response patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Enumerate,
    MonteCarlo,
}

pub const DEFAULT_ENUMERATION_CAP: f64 = 1e7;
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;

/// Population value of a coefficient at known item parameters: either exact
/// enumeration of all response patterns weighted by their marginal
/// probability, or a Monte Carlo approximation from simulated respondents.
pub fn population_oracle(
    params: &ItemParams,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    mode: OracleMode,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let eta = match mode {
        OracleMode::Enumerate => population_eta_enumerated(params, grid, kind, DEFAULT_ENUMERATION_CAP)?,
        OracleMode::MonteCarlo => population_eta_monte_carlo(params, grid, kind, mc_draws, rng),
    };
    let (phi, _) = match kind {
        CoefficientKind::Prmse => phi_prmse(&eta)?,
        CoefficientKind::Ctt => phi_ctt(&eta, grid.weights())?,
    };
    Ok(phi)
}

/// Exact population `eta` by summing `H(y) f(y)` over every response
/// pattern.
pub fn population_eta_enumerated(
    params: &ItemParams,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    cap: f64,
) -> Result<Vec<f64>> {
    let counts = params.category_counts();
    let total: f64 = counts.iter().map(|&k| k as f64).product();
    if total > cap {
        return Err(IrtError::EnumerationCap {
            patterns: total,
            cap,
        });
    }
    let ell = kind.h_len(grid.len());
    let patterns: Vec<Vec<u32>> = enumerate_patterns(&counts);
    let eta = patterns
        .par_iter()
        .map(|pattern| {
            let summary = posterior_summary(pattern, params, grid);
            let f = summary.log_marginal.exp();
            let mut h = vec![0.0; ell];
            fill_h_values(&summary, grid, kind, &mut h);
            for v in &mut h {
                *v *= f;
            }
            h
        })
        .reduce(
            || vec![0.0; ell],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    Ok(eta)
}

fn enumerate_patterns(counts: &[usize]) -> Vec<Vec<u32>> {
    let mut patterns = Vec::new();
    let mut current = vec![0u32; counts.len()];
    loop {
        patterns.push(current.clone());
        let mut j = 0;
        loop {
            if j == counts.len() {
                return patterns;
            }
            current[j] += 1;
            if (current[j] as usize) < counts[j] {
                break;
            }
            current[j] = 0;
            j += 1;
        }
    }
}

/// H values only (no gradients), from a posterior summary.
fn fill_h_values(
    summary: &crate::scoring::PosteriorSummary,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    out: &mut [f64],
) {
    out[0] = summary.eap;
    out[1] = summary.eap * summary.eap;
    match kind {
        CoefficientKind::Prmse => out[2] = summary.post_var,
        CoefficientKind::Ctt => {
            for (qi, (&pq, &wq)) in summary.post.iter().zip(grid.weights()).enumerate() {
                out[2 + qi] = summary.eap * pq / wq;
            }
        }
    }
}

fn population_eta_monte_carlo(
    params: &ItemParams,
    grid: &QuadratureGrid,
    kind: CoefficientKind,
    draws: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    use crate::simulation::generate_response_rows;
    let rows = generate_response_rows(params, draws, rng);
    let data = ResponseMatrix::from_rows(rows, None).expect("simulated rows are rectangular");
    let groups = PatternGroups::from_data(&data);
    let ell = kind.h_len(grid.len());
    let eta = groups
        .patterns
        .par_iter()
        .zip(&groups.counts)
        .map(|(pattern, &count)| {
            let summary = posterior_summary(pattern, params, grid);
            let mut h = vec![0.0; ell];
            fill_h_values(&summary, grid, kind, &mut h);
            for v in &mut h {
                *v *= count as f64;
            }
            h
        })
        .reduce(
            || vec![0.0; ell],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    eta.into_iter().map(|v| v / draws as f64).collect()
}
