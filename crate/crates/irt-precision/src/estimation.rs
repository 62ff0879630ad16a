//! Marginal maximum likelihood fitting via EM and the per-observation
//! Fisher information matrix.
//!
//! The E-step computes posterior node weights per unique response pattern
//! and accumulates expected category counts; the M-step runs per-item
//! Newton-Raphson on the expected complete-data log-likelihood, with the
//! intercept gaps reparameterized as log-differences so the ordering
//! constraint holds at every iterate.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::ResponseMatrix;
use crate::error::{IrtError, Result};
use crate::model::{Item, ItemParams, ParamVector};
use crate::quadrature::QuadratureGrid;

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Per-observation information matrix estimate.
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    matrix: DMatrix<f64>,
}

impl InfoMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        InfoMatrix { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Inverts via Cholesky; a failed factorization is reported with the
    /// smallest eigenvalue so non-identification is diagnosable.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        match self.matrix.clone().cholesky() {
            Some(chol) => Ok(chol.inverse()),
            None => {
                let min_eigenvalue = self
                    .matrix
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                Err(IrtError::SingularInformation { min_eigenvalue })
            }
        }
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Result of an EM fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ItemParams,
    pub nu_hat: ParamVector,
    pub info: InfoMatrix,
    /// Total sample log-likelihood at the solution.
    pub log_likelihood: f64,
    /// Sample log-likelihood evaluated at the start of each EM iteration.
    pub loglik_trace: Vec<f64>,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Unique response patterns with multiplicities; most estimation passes are
/// linear in the number of distinct patterns rather than respondents.
#[derive(Debug, Clone)]
pub struct PatternGroups {
    pub patterns: Vec<Vec<u32>>,
    pub counts: Vec<usize>,
    pub n: usize,
}

impl PatternGroups {
    pub fn from_data(data: &ResponseMatrix) -> Self {
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut patterns: Vec<Vec<u32>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for row in data.rows() {
            match index.get(row) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(row.to_vec(), patterns.len());
                    patterns.push(row.to_vec());
                    counts.push(1);
                }
            }
        }
        PatternGroups {
            patterns,
            counts,
            n: data.n_respondents(),
        }
    }
}

/// Per-item, per-node log category probability table, rebuilt each EM
/// iteration: `table[j][q * k_j + k]`.
struct LogProbTable {
    per_item: Vec<Vec<f64>>,
    k_per_item: Vec<usize>,
}

impl LogProbTable {
    fn build(params: &ItemParams, grid: &QuadratureGrid) -> Self {
        let per_item = params
            .items()
            .iter()
            .map(|it| {
                let k = it.categories();
                let mut t = vec![0.0; grid.len() * k];
                for (q, &theta) in grid.nodes().iter().enumerate() {
                    for cat in 0..k {
                        t[q * k + cat] = it.log_category_prob(cat, theta);
                    }
                }
                t
            })
            .collect();
        LogProbTable {
            per_item,
            k_per_item: params.category_counts(),
        }
    }

    #[inline]
    fn log_conditional(&self, pattern: &[u32], q: usize) -> f64 {
        pattern
            .iter()
            .enumerate()
            .map(|(j, &y)| self.per_item[j][q * self.k_per_item[j] + y as usize])
            .sum()
    }
}

/// Default starting values: unit slopes, intercepts from the inverse
/// logistic of marginal cumulative proportions, jittered so the ordering is
/// strict.
pub fn default_init(data: &ResponseMatrix, k_per_item: &[usize]) -> Result<ItemParams> {
    let n = data.n_respondents();
    let counts = data.category_counts(*k_per_item.iter().max().unwrap_or(&2));
    let mut items = Vec::with_capacity(k_per_item.len());
    for (j, &k) in k_per_item.iter().enumerate() {
        let mut intercepts = Vec::with_capacity(k - 1);
        let mut above = n;
        for cat in 1..k {
            above -= counts[j][cat - 1];
            // proportion responding >= cat, kept away from {0, 1}
            let p = (above as f64 + 0.5) / (n as f64 + 1.0);
            intercepts.push((p / (1.0 - p)).ln());
        }
        // enforce strict ordering against ties from empty categories
        for i in 1..intercepts.len() {
            if intercepts[i] >= intercepts[i - 1] - 1e-3 {
                intercepts[i] = intercepts[i - 1] - 1e-3;
            }
        }
        items.push(Item::new(1.0, intercepts).map_err(|_| IrtError::Config(format!(
            "could not build starting values for item {j}"
        )))?);
    }
    ItemParams::new(items)
}

fn check_degenerate_items(data: &ResponseMatrix, k_per_item: &[usize]) -> Result<()> {
    let counts = data.category_counts(*k_per_item.iter().max().unwrap_or(&2));
    for (j, item_counts) in counts.iter().enumerate() {
        let observed: Vec<usize> = (0..k_per_item[j])
            .filter(|&k| item_counts[k] > 0)
            .collect();
        if observed.len() < 2 {
            return Err(IrtError::DegenerateItem {
                item: j,
                n: data.n_respondents(),
                category: observed.first().copied().unwrap_or(0),
            });
        }
    }
    Ok(())
}

/// Marginal maximum likelihood fit of the graded response model.
pub fn fit_em(
    data: &ResponseMatrix,
    init: &ItemParams,
    grid: &QuadratureGrid,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    if data.n_respondents() < 2 {
        return Err(IrtError::Config(format!(
            "need at least 2 respondents, got {}",
            data.n_respondents()
        )));
    }
    data.validate_against(init)?;
    let k_per_item = init.category_counts();
    check_degenerate_items(data, &k_per_item)?;

    let groups = PatternGroups::from_data(data);
    let q = grid.len();
    let m = init.n_items();
    let mut params = init.clone();
    let mut converged = false;
    let mut iterations = 0;
    let mut loglik_trace = Vec::new();

    for iter in 0..max_iter {
        iterations = iter + 1;
        let table = LogProbTable::build(&params, grid);

        // E-step: expected category counts per (item, node, category).
        let (counts, loglik) = e_step(&groups, &table, grid, q, m, &k_per_item);
        loglik_trace.push(loglik);

        // M-step: per-item Newton-Raphson in the log-gap parameterization.
        let new_items: Vec<Item> = params
            .items()
            .par_iter()
            .enumerate()
            .map(|(j, item)| m_step_item(item, &counts[j], grid))
            .collect();
        let new_params = ItemParams::new(new_items)?;

        let old_v = params.pack();
        let new_v = new_params.pack();
        let delta = old_v
            .as_slice()
            .iter()
            .zip(new_v.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        params = new_params;
        if delta < tol {
            converged = true;
            break;
        }
    }

    // log-likelihood at the final parameters
    let table = LogProbTable::build(&params, grid);
    let (_, final_loglik) = e_step(&groups, &table, grid, q, m, &k_per_item);

    let info = observed_information_grouped(&groups, &params, grid);
    Ok(FitResult {
        nu_hat: params.pack(),
        params,
        info,
        log_likelihood: final_loglik,
        loglik_trace,
        n: groups.n,
        converged,
        iterations,
    })
}

/// Expected category counts `counts[j][q * k_j + k]` and the total sample
/// log-likelihood at the current parameters.
fn e_step(
    groups: &PatternGroups,
    table: &LogProbTable,
    grid: &QuadratureGrid,
    q: usize,
    m: usize,
    k_per_item: &[usize],
) -> (Vec<Vec<f64>>, f64) {
    let partials: Vec<(Vec<Vec<f64>>, f64)> = groups
        .patterns
        .par_iter()
        .zip(&groups.counts)
        .map(|(pattern, &count)| {
            let mut log_joint = vec![0.0; q];
            for (qi, lw) in grid.log_weights().iter().enumerate() {
                log_joint[qi] = table.log_conditional(pattern, qi) + lw;
            }
            let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut post: Vec<f64> = log_joint.iter().map(|&lj| (lj - max).exp()).collect();
            let total: f64 = post.iter().sum();
            for p in &mut post {
                *p /= total;
            }
            let loglik = count as f64 * (max + total.ln());
            let mut counts: Vec<Vec<f64>> = k_per_item
                .iter()
                .map(|&k| vec![0.0; q * k])
                .collect();
            for (j, &y) in pattern.iter().enumerate() {
                let k = k_per_item[j];
                for (qi, &p) in post.iter().enumerate() {
                    counts[j][qi * k + y as usize] += count as f64 * p;
                }
            }
            (counts, loglik)
        })
        .collect();

    let mut counts: Vec<Vec<f64>> = k_per_item.iter().map(|&k| vec![0.0; q * k]).collect();
    let mut loglik = 0.0;
    for (partial, ll) in partials {
        for j in 0..m {
            for (acc, v) in counts[j].iter_mut().zip(&partial[j]) {
                *acc += v;
            }
        }
        loglik += ll;
    }
    (counts, loglik)
}

/// Expected complete-data log-likelihood for one item given posterior
/// category counts.
fn item_expected_loglik(item: &Item, counts: &[f64], grid: &QuadratureGrid) -> f64 {
    let k = item.categories();
    let mut total = 0.0;
    for (q, &theta) in grid.nodes().iter().enumerate() {
        for cat in 0..k {
            let w = counts[q * k + cat];
            if w > 0.0 {
                total += w * item.log_category_prob(cat, theta);
            }
        }
    }
    total
}

/// Map from the unconstrained parameterization `(a, t_1, t_2..)` with
/// `c_1 = t_1`, `c_l = c_{l-1} - exp(t_l)` back to intercepts.
fn gaps_to_intercepts(t: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(t.len());
    let mut cur = t[0];
    c.push(cur);
    for &tl in &t[1..] {
        cur -= tl.exp();
        c.push(cur);
    }
    c
}

fn intercepts_to_gaps(c: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(c.len());
    t.push(c[0]);
    for i in 1..c.len() {
        t.push((c[i - 1] - c[i]).max(1e-8).ln());
    }
    t
}

/// One M-step update for a single item: Newton-Raphson on the expected
/// complete-data log-likelihood, at most 5 inner iterations, step-halving
/// when a step lowers the objective.
fn m_step_item(item: &Item, counts: &[f64], grid: &QuadratureGrid) -> Item {
    let k = item.categories();
    let mut slope = item.slope();
    let mut gaps = intercepts_to_gaps(item.intercepts());
    let mut best = item.clone();
    let mut best_obj = item_expected_loglik(item, counts, grid);

    for _ in 0..5 {
        let cur_item = match Item::new(slope, gaps_to_intercepts(&gaps)) {
            Ok(it) => it,
            Err(_) => break,
        };

        // gradient / Hessian in (a, c) space
        let mut g_c = vec![0.0; k];
        let mut h_c = vec![0.0; k * k];
        let mut grad_buf = vec![0.0; k];
        let mut hess_buf = vec![0.0; k * k];
        for (q, &theta) in grid.nodes().iter().enumerate() {
            for cat in 0..k {
                let w = counts[q * k + cat];
                if w == 0.0 {
                    continue;
                }
                cur_item.log_category_grad_hess(cat, theta, &mut grad_buf, &mut hess_buf);
                for i in 0..k {
                    g_c[i] += w * grad_buf[i];
                }
                for i in 0..k * k {
                    h_c[i] += w * hess_buf[i];
                }
            }
        }

        // chain rule into (a, t) space: c_l = t_1 - sum_{r<=l, r>=2} exp(t_r)
        // full Jacobian J over (a, t): identity for a and t_1 rows.
        let dim = k;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        jac[(0, 0)] = 1.0;
        for l in 1..dim {
            jac[(l, 1)] = 1.0;
            for r in 2..=l {
                jac[(l, r)] = -gaps[r - 1].exp();
            }
        }
        let g_c_v = DVector::from_column_slice(&g_c);
        let h_c_m = DMatrix::from_row_slice(dim, dim, &h_c);
        let g_t = jac.transpose() * &g_c_v;
        let mut h_t = jac.transpose() * &h_c_m * &jac;
        // curvature of the reparameterization: d2 c_l / d t_r^2 = -exp(t_r)
        for r in 2..dim {
            let tail: f64 = (r..dim).map(|l| g_c[l]).sum();
            h_t[(r, r)] += tail * (-gaps[r - 1].exp());
        }

        // Newton direction; fall back to gradient ascent if the solve fails
        let step_dir = match h_t.clone().lu().solve(&g_t) {
            Some(d) => -d,
            None => g_t.clone() * 1e-2,
        };

        // unconstrained layout: [a, t_1, .., t_{K-1}] with gaps = (t_1..)
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let new_slope = slope + step * step_dir[0];
            let new_gaps: Vec<f64> = gaps
                .iter()
                .enumerate()
                .map(|(i, &t)| t + step * step_dir[i + 1])
                .collect();
            let candidate = Item::new(new_slope, gaps_to_intercepts(&new_gaps));
            if let Ok(cand) = candidate {
                let obj = item_expected_loglik(&cand, counts, grid);
                if obj > best_obj {
                    best_obj = obj;
                    best = cand;
                    slope = new_slope;
                    gaps = new_gaps;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    best
}

/// Gradient of the log marginal likelihood of one pattern: the posterior
/// expectation of the conditional score.
pub fn marginal_score(pattern: &[u32], params: &ItemParams, grid: &QuadratureGrid) -> Vec<f64> {
    let summary = crate::scoring::posterior_summary(pattern, params, grid);
    marginal_score_from_post(&summary.post, pattern, params, grid)
}

pub fn marginal_score_from_post(
    post: &[f64],
    pattern: &[u32],
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> Vec<f64> {
    let p = params.n_params();
    let mut out = vec![0.0; p];
    let mut score = vec![0.0; p];
    for (&theta, &w) in grid.nodes().iter().zip(post) {
        if w == 0.0 {
            continue;
        }
        params.score_vector_into(pattern, theta, &mut score);
        for (o, s) in out.iter_mut().zip(&score) {
            *o += w * s;
        }
    }
    out
}

/// Empirical cross-product information estimator:
/// `(1/n) sum_i g_i g_i^T` with `g_i` the marginal score of respondent `i`.
pub fn observed_information(
    data: &ResponseMatrix,
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> InfoMatrix {
    observed_information_grouped(&PatternGroups::from_data(data), params, grid)
}

pub fn observed_information_grouped(
    groups: &PatternGroups,
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> InfoMatrix {
    let p = params.n_params();
    let partial: DMatrix<f64> = groups
        .patterns
        .par_iter()
        .zip(&groups.counts)
        .map(|(pattern, &count)| {
            let g = marginal_score(pattern, params, grid);
            let gv = DVector::from_column_slice(&g);
            (&gv * gv.transpose()) * count as f64
        })
        .reduce(|| DMatrix::zeros(p, p), |a, b| a + b);
    InfoMatrix::from_matrix(partial / groups.n as f64)
}

/// Louis-identity observed information, the optional second estimator:
/// `(1/n) sum_i [ E_post(-H_c) - (E_post(s s^T) - g g^T) ]` with `H_c` and
/// `s` the conditional Hessian and score at each node.
pub fn louis_information(
    data: &ResponseMatrix,
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> InfoMatrix {
    let groups = PatternGroups::from_data(data);
    let p = params.n_params();
    let m = params.n_items();
    let partial: DMatrix<f64> = groups
        .patterns
        .par_iter()
        .zip(&groups.counts)
        .map(|(pattern, &count)| {
            let summary = crate::scoring::posterior_summary(pattern, params, grid);
            let mut acc = DMatrix::<f64>::zeros(p, p);
            let mut g = DVector::<f64>::zeros(p);
            let mut score = vec![0.0; p];
            for (&theta, &w) in grid.nodes().iter().zip(&summary.post) {
                if w == 0.0 {
                    continue;
                }
                params.score_vector_into(pattern, theta, &mut score);
                let sv = DVector::from_column_slice(&score);
                // -E_post[H_c] and -E_post[s s^T] accumulate together
                acc -= (&sv * sv.transpose()) * w;
                g += &sv * w;
                // conditional Hessian is block-diagonal per item
                let mut off = 0;
                for j in 0..m {
                    let item = params.item(j);
                    let k = item.categories();
                    let mut gb = vec![0.0; k];
                    let mut hb = vec![0.0; k * k];
                    item.log_category_grad_hess(pattern[j] as usize, theta, &mut gb, &mut hb);
                    for r in 0..k {
                        for c in 0..k {
                            acc[(off + r, off + c)] -= w * hb[r * k + c];
                        }
                    }
                    off += k;
                }
            }
            acc += &g * g.transpose();
            acc * count as f64
        })
        .reduce(|| DMatrix::zeros(p, p), |a, b| a + b);
    InfoMatrix::from_matrix(partial / groups.n as f64)
}

/// Average marginal score over the sample; near zero at an ML solution.
pub fn mean_marginal_score(
    data: &ResponseMatrix,
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> Vec<f64> {
    let groups = PatternGroups::from_data(data);
    let p = params.n_params();
    let mut acc = vec![0.0; p];
    for (pattern, &count) in groups.patterns.iter().zip(&groups.counts) {
        let g = marginal_score(pattern, params, grid);
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += count as f64 * v;
        }
    }
    for a in &mut acc {
        *a /= groups.n as f64;
    }
    acc
}

/// Total sample log-likelihood under `params`.
pub fn sample_log_likelihood(
    data: &ResponseMatrix,
    params: &ItemParams,
    grid: &QuadratureGrid,
) -> f64 {
    let groups = PatternGroups::from_data(data);
    groups
        .patterns
        .par_iter()
        .zip(&groups.counts)
        .map(|(pattern, &count)| count as f64 * grid.log_marginal_likelihood(params, pattern))
        .sum()
}
