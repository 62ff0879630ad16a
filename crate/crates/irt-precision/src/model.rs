//! Graded response model parameterization and conditional probability
//! computations.
//!
//! Items follow the slope-intercept form: the probability of scoring at or
//! above category `k` is `logistic(a * theta + c_k)`, with `c_1 > ... >
//! c_{K-1}`. With two categories this reduces to the two-parameter logistic
//! model.

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};

/// Floor applied to probabilities before taking logs; long tests produce
/// pattern likelihoods that underflow otherwise.
pub const PROB_FLOOR: f64 = 1e-300;

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A single graded-response item: one slope and `K - 1` strictly decreasing
/// intercepts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ItemRaw", into = "ItemRaw")]
pub struct Item {
    slope: f64,
    intercepts: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ItemRaw {
    a: f64,
    c: Vec<f64>,
}

impl TryFrom<ItemRaw> for Item {
    type Error = IrtError;
    fn try_from(raw: ItemRaw) -> Result<Item> {
        Item::new(raw.a, raw.c)
    }
}

impl From<Item> for ItemRaw {
    fn from(item: Item) -> ItemRaw {
        ItemRaw {
            a: item.slope,
            c: item.intercepts,
        }
    }
}

impl Item {
    /// Validates finiteness, `K >= 2`, and the intercept ordering constraint.
    pub fn new(slope: f64, intercepts: Vec<f64>) -> Result<Self> {
        Self::validated(slope, intercepts, 0)
    }

    fn validated(slope: f64, intercepts: Vec<f64>, item_index: usize) -> Result<Self> {
        if intercepts.is_empty() {
            return Err(IrtError::TooFewCategories {
                item: item_index,
                k: intercepts.len() + 1,
            });
        }
        if !slope.is_finite() || intercepts.iter().any(|c| !c.is_finite()) {
            return Err(IrtError::NonFiniteParameter { item: item_index });
        }
        for pos in 1..intercepts.len() {
            if intercepts[pos - 1] <= intercepts[pos] {
                return Err(IrtError::InterceptOrdering {
                    item: item_index,
                    pos,
                    lo: intercepts[pos - 1],
                    hi: intercepts[pos],
                });
            }
        }
        Ok(Item { slope, intercepts })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// Number of response categories `K`.
    pub fn categories(&self) -> usize {
        self.intercepts.len() + 1
    }

    /// Difficulty `b_k = -c_k / a`; only defined for a nonzero slope.
    pub fn difficulty(&self, k: usize) -> Option<f64> {
        if self.slope == 0.0 {
            None
        } else {
            self.intercepts.get(k).map(|c| -c / self.slope)
        }
    }

    /// P(Y >= k | theta). Returns 1 at k = 0 and 0 at k = K.
    pub fn cumulative_prob(&self, k: usize, theta: f64) -> f64 {
        let cats = self.categories();
        debug_assert!(k <= cats, "cumulative_prob called with k > K");
        if k == 0 {
            1.0
        } else if k >= cats {
            0.0
        } else {
            logistic(self.slope * theta + self.intercepts[k - 1])
        }
    }

    /// P(Y = k | theta), the difference of adjacent cumulative probabilities.
    pub fn category_prob(&self, k: usize, theta: f64) -> f64 {
        self.cumulative_prob(k, theta) - self.cumulative_prob(k + 1, theta)
    }

    pub fn log_category_prob(&self, k: usize, theta: f64) -> f64 {
        self.category_prob(k, theta).max(PROB_FLOOR).ln()
    }

    /// Gradient and Hessian of `log P(Y = k | theta)` with respect to
    /// `(a, c_1..c_{K-1})`, written into `grad` (length `K`) and `hess`
    /// (row-major `K x K`).
    pub fn log_category_grad_hess(&self, k: usize, theta: f64, grad: &mut [f64], hess: &mut [f64]) {
        let dim = self.categories();
        debug_assert_eq!(grad.len(), dim);
        debug_assert_eq!(hess.len(), dim * dim);
        grad.fill(0.0);
        hess.fill(0.0);
        let p = self.category_prob(k, theta).max(PROB_FLOOR);
        // dP and d2P accumulate the two cumulative-probability terms; the
        // boundary terms (k = 0 and k + 1 = K) contribute nothing.
        let mut dp = vec![0.0; dim];
        for (kappa, sign) in [(k, 1.0), (k + 1, -1.0)] {
            if kappa == 0 || kappa > self.intercepts.len() {
                continue;
            }
            let f = logistic(self.slope * theta + self.intercepts[kappa - 1]);
            let d = f * (1.0 - f);
            let s = d * (1.0 - 2.0 * f);
            // u = theta * e_0 + e_kappa
            dp[0] += sign * d * theta;
            dp[kappa] += sign * d;
            // s * u u^T
            hess[0] += sign * s * theta * theta;
            hess[kappa] += sign * s * theta;
            hess[kappa * dim] += sign * s * theta;
            hess[kappa * dim + kappa] += sign * s;
        }
        for i in 0..dim {
            grad[i] = dp[i] / p;
        }
        for i in 0..dim {
            for j in 0..dim {
                hess[i * dim + j] = hess[i * dim + j] / p - grad[i] * grad[j];
            }
        }
    }

    /// Gradient of `log P(Y = k | theta)` with respect to `(a, c_1..c_{K-1})`,
    /// written into `out` (length `K`).
    ///
    /// With `F_k = logistic(a*theta + c_k)` and `P = F_k - F_{k+1}`:
    /// `dP/dc_k = F_k(1-F_k)`, `dP/dc_{k+1} = -F_{k+1}(1-F_{k+1})`, and the
    /// slope picks up theta times both terms.
    pub fn log_category_grad(&self, k: usize, theta: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.categories());
        out.fill(0.0);
        let f_lo = self.cumulative_prob(k, theta);
        let f_hi = self.cumulative_prob(k + 1, theta);
        let p = (f_lo - f_hi).max(PROB_FLOOR);
        let d_lo = f_lo * (1.0 - f_lo); // zero automatically at the k = 0 boundary
        let d_hi = f_hi * (1.0 - f_hi);
        out[0] = theta * (d_lo - d_hi) / p;
        if k >= 1 {
            out[k] += d_lo / p;
        }
        if k + 1 <= self.intercepts.len() {
            out[k + 1] -= d_hi / p;
        }
    }
}

/// The full item parameter set for a test; defines the item-major flat
/// layout of the parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemParams {
    items: Vec<Item>,
}

impl ItemParams {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        // Re-run validation so the error names the item index within the test.
        let items = items
            .into_iter()
            .enumerate()
            .map(|(j, it)| Item::validated(it.slope, it.intercepts, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(ItemParams { items })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, j: usize) -> &Item {
        &self.items[j]
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Category count per item.
    pub fn category_counts(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.categories()).collect()
    }

    /// Total parameter count: one slope plus `K_j - 1` intercepts per item.
    pub fn n_params(&self) -> usize {
        self.items.iter().map(|it| it.categories()).sum()
    }

    /// Offset of item `j`'s block in the flat parameter vector.
    pub fn param_offset(&self, j: usize) -> usize {
        self.items[..j].iter().map(|it| it.categories()).sum()
    }

    /// Flattens to the item-major layout `(a_1, c_11.., a_2, ...)`.
    pub fn pack(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.n_params());
        for it in &self.items {
            v.push(it.slope);
            v.extend_from_slice(&it.intercepts);
        }
        ParamVector(v)
    }

    /// Rebuilds an `ItemParams` with the same category layout from a flat
    /// vector; validates ordering.
    pub fn unpack(&self, v: &ParamVector) -> Result<ItemParams> {
        if v.len() != self.n_params() {
            return Err(IrtError::VectorLength {
                got: v.len(),
                expected: self.n_params(),
            });
        }
        let mut items = Vec::with_capacity(self.items.len());
        let mut off = 0;
        for (j, it) in self.items.iter().enumerate() {
            let k = it.categories();
            let slope = v.0[off];
            let intercepts = v.0[off + 1..off + k].to_vec();
            items.push(Item::validated(slope, intercepts, j)?);
            off += k;
        }
        Ok(ItemParams { items })
    }

    /// Validates a response pattern against the category ranges.
    pub fn validate_pattern(&self, pattern: &[u32]) -> Result<()> {
        if pattern.len() != self.items.len() {
            return Err(IrtError::PatternLength {
                got: pattern.len(),
                expected: self.items.len(),
            });
        }
        for (j, (&y, it)) in pattern.iter().zip(&self.items).enumerate() {
            if y as usize >= it.categories() {
                return Err(IrtError::CategoryRange {
                    item: j,
                    k: y as usize,
                    categories: it.categories(),
                });
            }
        }
        Ok(())
    }

    /// Log conditional likelihood `log f(y | theta)` under local independence.
    pub fn log_conditional_likelihood(&self, pattern: &[u32], theta: f64) -> f64 {
        pattern
            .iter()
            .zip(&self.items)
            .map(|(&y, it)| it.log_category_prob(y as usize, theta))
            .sum()
    }

    pub fn conditional_likelihood(&self, pattern: &[u32], theta: f64) -> f64 {
        self.log_conditional_likelihood(pattern, theta).exp()
    }

    /// Gradient of the log conditional likelihood with respect to the flat
    /// parameter vector.
    pub fn score_vector(&self, pattern: &[u32], theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.score_vector_into(pattern, theta, &mut out);
        out
    }

    pub fn score_vector_into(&self, pattern: &[u32], theta: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_params());
        let mut off = 0;
        for (&y, it) in pattern.iter().zip(&self.items) {
            let k = it.categories();
            it.log_category_grad(y as usize, theta, &mut out[off..off + k]);
            off += k;
        }
    }
}

/// Flat item-major parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}
