//! Monte Carlo study harness: draws item parameters, simulates responses,
//! refits the model per replication, and tallies coverage of the analytic
//! confidence intervals against each condition's own population value.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ResponseMatrix;
use crate::error::{IrtError, Result};
use crate::estimation::{default_init, fit_em, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::model::{Item, ItemParams};
use crate::quadrature::QuadratureGrid;
use crate::reliability::{
    phi_ctt, phi_prmse, population_eta_enumerated, reliability_with_se, CoefficientKind,
    OracleMode, population_oracle, DEFAULT_ENUMERATION_CAP, DEFAULT_MC_DRAWS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "2pl")]
    TwoPl,
    #[serde(rename = "grm")]
    Grm,
}

/// Difficulty distribution for binary items: `b ~ N(mean, sd^2)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BinaryDifficulty {
    pub mean: f64,
    pub sd: f64,
}

impl Default for BinaryDifficulty {
    fn default() -> Self {
        BinaryDifficulty { mean: 0.0, sd: 1.0 }
    }
}

/// Difficulty distribution for graded items: the first threshold is normal
/// and each later threshold adds an independent normal step, re-drawn until
/// positive so the thresholds stay increasing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GradedDifficulty {
    pub first_mean: f64,
    pub first_sd: f64,
    pub step_mean: f64,
    pub step_sd: f64,
}

impl Default for GradedDifficulty {
    fn default() -> Self {
        GradedDifficulty {
            first_mean: -1.5,
            first_sd: 0.5,
            step_mean: 1.0,
            step_sd: 0.2,
        }
    }
}

fn default_categories() -> usize {
    5
}
fn default_slope_range() -> [f64; 2] {
    [0.5, 2.0]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_quad_points() -> usize {
    crate::quadrature::DEFAULT_Q
}
fn default_quad_lo() -> f64 {
    crate::quadrature::DEFAULT_LO
}
fn default_quad_hi() -> f64 {
    crate::quadrature::DEFAULT_HI
}
fn default_oracle_draws() -> usize {
    DEFAULT_MC_DRAWS
}

/// A simulation design: the cross of the listed sample sizes and test
/// lengths, each run for `replications` datasets. Item parameters are drawn
/// once per condition and held fixed across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDesign {
    pub model: ModelKind,
    /// Categories per graded item; ignored for the binary model.
    #[serde(default = "default_categories")]
    pub categories: usize,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_slope_range")]
    pub slope_range: [f64; 2],
    #[serde(default)]
    pub binary_difficulty: BinaryDifficulty,
    #[serde(default)]
    pub graded_difficulty: GradedDifficulty,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
    #[serde(default = "default_quad_lo")]
    pub quad_lo: f64,
    #[serde(default = "default_quad_hi")]
    pub quad_hi: f64,
    /// Monte Carlo draws for the population value when the pattern space is
    /// too large to enumerate.
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.m.is_empty() {
            return Err(IrtError::Config("empty n or m list in design".into()));
        }
        if self.n.iter().any(|&n| n < 2) {
            return Err(IrtError::Config("sample sizes must be at least 2".into()));
        }
        if self.m.iter().any(|&m| m == 0) {
            return Err(IrtError::Config("test lengths must be positive".into()));
        }
        if self.replications == 0 {
            return Err(IrtError::Config("replications must be positive".into()));
        }
        if self.model == ModelKind::Grm && self.categories < 2 {
            return Err(IrtError::Config(format!(
                "graded model needs at least 2 categories, got {}",
                self.categories
            )));
        }
        if !(self.slope_range[0] > 0.0 && self.slope_range[1] >= self.slope_range[0]) {
            return Err(IrtError::Config(format!(
                "slope range [{}, {}] must be positive and ordered",
                self.slope_range[0], self.slope_range[1]
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(IrtError::Config(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.quad_points, self.quad_lo, self.quad_hi)
    }

    fn categories_for_model(&self) -> usize {
        match self.model {
            ModelKind::TwoPl => 2,
            ModelKind::Grm => self.categories,
        }
    }
}

/// Deterministic substream for one (seed, condition, replication) cell.
pub fn substream_rng(seed: u64, condition: usize, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((condition as u64) << 40) | replication);
    rng
}

const PARAM_STREAM: u64 = (1 << 40) - 1;
const ORACLE_STREAM: u64 = (1 << 40) - 2;

/// Draws one condition's item parameters. Thresholds for graded items use a
/// bounded redraw loop; a design whose step distribution cannot produce a
/// positive step within 100 tries is rejected.
pub fn draw_item_params(design: &SimDesign, m: usize, rng: &mut impl Rng) -> Result<ItemParams> {
    let slope_dist = Uniform::new_inclusive(design.slope_range[0], design.slope_range[1]);
    let k = design.categories_for_model();
    let mut items = Vec::with_capacity(m);
    for _ in 0..m {
        let a = slope_dist.sample(rng);
        let thresholds = match design.model {
            ModelKind::TwoPl => {
                let d = design.binary_difficulty;
                let b = Normal::new(d.mean, d.sd)
                    .map_err(|e| IrtError::Config(format!("difficulty distribution: {e}")))?;
                vec![b.sample(rng)]
            }
            ModelKind::Grm => {
                let d = design.graded_difficulty;
                let first = Normal::new(d.first_mean, d.first_sd)
                    .map_err(|e| IrtError::Config(format!("difficulty distribution: {e}")))?;
                let step = Normal::new(d.step_mean, d.step_sd)
                    .map_err(|e| IrtError::Config(format!("difficulty distribution: {e}")))?;
                let mut b = Vec::with_capacity(k - 1);
                b.push(first.sample(rng));
                for _ in 1..k - 1 {
                    let mut tries = 0;
                    let gap = loop {
                        let g = step.sample(rng);
                        if g > 0.0 {
                            break g;
                        }
                        tries += 1;
                        if tries >= 100 {
                            return Err(IrtError::Config(
                                "threshold step distribution produced 100 non-positive draws"
                                    .into(),
                            ));
                        }
                    };
                    b.push(b.last().unwrap() + gap);
                }
                b
            }
        };
        // increasing difficulties and a positive slope give strictly
        // decreasing intercepts c_k = -a b_k
        let intercepts = thresholds.iter().map(|&bk| -a * bk).collect();
        items.push(Item::new(a, intercepts)?);
    }
    ItemParams::new(items)
}

/// Simulates `n` respondents with standard normal latent values.
pub fn generate_response_rows(
    params: &ItemParams,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<u32>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let m = params.n_items();
    (0..n)
        .map(|_| {
            let theta = normal.sample(rng);
            let mut row = Vec::with_capacity(m);
            for item in params.items() {
                let u: f64 = rng.gen();
                // y = #{k >= 1 : P(Y >= k | theta) > u}
                let mut y = 0u32;
                for kk in 1..item.categories() {
                    if item.cumulative_prob(kk, theta) > u {
                        y += 1;
                    } else {
                        break;
                    }
                }
                row.push(y);
            }
            row
        })
        .collect()
}

pub fn generate_responses(params: &ItemParams, n: usize, rng: &mut impl Rng) -> ResponseMatrix {
    ResponseMatrix::from_rows(generate_response_rows(params, n, rng), None)
        .expect("simulated rows are rectangular")
}

/// Per-coefficient tallies for one condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub true_value: f64,
    pub mean_estimate: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
}

/// One (n, m) condition of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub model: ModelKind,
    pub n: usize,
    pub m: usize,
    pub prmse: CoefficientSummary,
    pub ctt: CoefficientSummary,
    pub n_converged: usize,
    pub n_nonconverged: usize,
    pub n_failed: usize,
    /// CTT estimates above one; counted, retained in all summaries.
    pub n_ctt_over_one: usize,
    /// Monte Carlo binomial bounds on the coverage of an exactly calibrated
    /// interval given the usable replication count.
    pub coverage_bound_lo: f64,
    pub coverage_bound_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub design: SimDesign,
    pub conditions: Vec<ConditionSummary>,
}

struct RepOutcome {
    prmse: Option<(f64, f64, f64, f64)>, // point, se, lo, hi
    ctt: Option<(f64, f64, f64, f64)>,
    converged: bool,
    failed: bool,
}

/// Runs the full study: every condition in the design cross, `replications`
/// datasets each, fit by EM at the design grid and scored against the
/// condition's population values.
pub fn run_study(design: &SimDesign) -> Result<SimSummary> {
    design.validate()?;
    let grid = design.grid()?;
    let mut conditions = Vec::new();
    let mut ci = 0usize;
    for &m in &design.m {
        for &n in &design.n {
            conditions.push(run_condition(design, &grid, ci, n, m)?);
            ci += 1;
        }
    }
    Ok(SimSummary {
        design: design.clone(),
        conditions,
    })
}

fn run_condition(
    design: &SimDesign,
    grid: &QuadratureGrid,
    ci: usize,
    n: usize,
    m: usize,
) -> Result<ConditionSummary> {
    let mut param_rng = substream_rng(design.seed, ci, PARAM_STREAM);
    let true_params = draw_item_params(design, m, &mut param_rng)?;

    let mut oracle_rng = substream_rng(design.seed, ci, ORACLE_STREAM);
    let (true_prmse, true_ctt) = population_values(
        &true_params,
        grid,
        design.oracle_draws,
        &mut oracle_rng,
    )?;

    let outcomes: Vec<RepOutcome> = (0..design.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream_rng(design.seed, ci, rep as u64);
            let data = generate_responses(&true_params, n, &mut rng);
            let fit = match default_init(&data, &true_params.category_counts())
                .and_then(|init| fit_em(&data, &init, grid, DEFAULT_TOL, DEFAULT_MAX_ITER))
            {
                Ok(f) => f,
                Err(_) => {
                    return RepOutcome {
                        prmse: None,
                        ctt: None,
                        converged: false,
                        failed: true,
                    }
                }
            };
            if !fit.converged {
                return RepOutcome {
                    prmse: None,
                    ctt: None,
                    converged: false,
                    failed: false,
                };
            }
            let mut out = RepOutcome {
                prmse: None,
                ctt: None,
                converged: true,
                failed: false,
            };
            for kind in [CoefficientKind::Prmse, CoefficientKind::Ctt] {
                match reliability_with_se(&data, &fit, grid, kind, design.alpha) {
                    Ok(rep) => {
                        let cell = (rep.point, rep.se, rep.ci_lo, rep.ci_hi);
                        match kind {
                            CoefficientKind::Prmse => out.prmse = Some(cell),
                            CoefficientKind::Ctt => out.ctt = Some(cell),
                        }
                    }
                    Err(_) => {
                        out.failed = true;
                        out.prmse = None;
                        out.ctt = None;
                        break;
                    }
                }
            }
            out
        })
        .collect();

    let n_failed = outcomes.iter().filter(|o| o.failed).count();
    let n_nonconverged = outcomes
        .iter()
        .filter(|o| !o.failed && !o.converged)
        .count();
    let usable: Vec<&RepOutcome> = outcomes
        .iter()
        .filter(|o| o.prmse.is_some() && o.ctt.is_some())
        .collect();
    let n_converged = usable.len();
    let n_ctt_over_one = usable
        .iter()
        .filter(|o| o.ctt.unwrap().0 > 1.0)
        .count();

    let prmse = summarize(
        true_prmse,
        usable.iter().map(|o| o.prmse.unwrap()),
        n_converged,
    );
    let ctt = summarize(true_ctt, usable.iter().map(|o| o.ctt.unwrap()), n_converged);

    let level = 1.0 - design.alpha;
    let half = if n_converged > 0 {
        1.96 * (level * (1.0 - level) / n_converged as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(ConditionSummary {
        model: design.model,
        n,
        m,
        prmse,
        ctt,
        n_converged,
        n_nonconverged,
        n_failed,
        n_ctt_over_one,
        coverage_bound_lo: level - half,
        coverage_bound_hi: level + half,
    })
}

fn population_values(
    params: &ItemParams,
    grid: &QuadratureGrid,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let total: f64 = params
        .category_counts()
        .iter()
        .map(|&k| k as f64)
        .product();
    if total <= DEFAULT_ENUMERATION_CAP {
        let eta_p =
            population_eta_enumerated(params, grid, CoefficientKind::Prmse, DEFAULT_ENUMERATION_CAP)?;
        let eta_c =
            population_eta_enumerated(params, grid, CoefficientKind::Ctt, DEFAULT_ENUMERATION_CAP)?;
        Ok((
            phi_prmse(&eta_p)?.0,
            phi_ctt(&eta_c, grid.weights())?.0,
        ))
    } else {
        let p = population_oracle(
            params,
            grid,
            CoefficientKind::Prmse,
            OracleMode::MonteCarlo,
            mc_draws,
            rng,
        )?;
        let c = population_oracle(
            params,
            grid,
            CoefficientKind::Ctt,
            OracleMode::MonteCarlo,
            mc_draws,
            rng,
        )?;
        Ok((p, c))
    }
}

fn summarize(
    true_value: f64,
    cells: impl Iterator<Item = (f64, f64, f64, f64)>,
    count: usize,
) -> CoefficientSummary {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut sum_se = 0.0;
    let mut covered = 0usize;
    for (point, se, lo, hi) in cells {
        sum += point;
        sum_sq += point * point;
        sum_se += se;
        if lo <= true_value && true_value <= hi {
            covered += 1;
        }
    }
    let nf = count as f64;
    let mean = if count > 0 { sum / nf } else { f64::NAN };
    let var = if count > 1 {
        (sum_sq - nf * mean * mean) / (nf - 1.0)
    } else {
        f64::NAN
    };
    CoefficientSummary {
        true_value,
        mean_estimate: mean,
        empirical_sd: var.max(0.0).sqrt(),
        mean_se: if count > 0 { sum_se / nf } else { f64::NAN },
        coverage: if count > 0 {
            covered as f64 / nf
        } else {
            f64::NAN
        },
    }
}

impl SimSummary {
    /// Flat per-condition, per-coefficient table.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "model",
            "n",
            "m",
            "coefficient",
            "true_value",
            "mean_estimate",
            "empirical_sd",
            "mean_se",
            "coverage",
            "coverage_bound_lo",
            "coverage_bound_hi",
            "n_converged",
            "n_nonconverged",
            "n_failed",
            "n_ctt_over_one",
        ])?;
        for c in &self.conditions {
            for (name, s) in [("prmse", &c.prmse), ("ctt", &c.ctt)] {
                w.write_record([
                    match c.model {
                        ModelKind::TwoPl => "2pl",
                        ModelKind::Grm => "grm",
                    }
                    .to_string(),
                    c.n.to_string(),
                    c.m.to_string(),
                    name.to_string(),
                    s.true_value.to_string(),
                    s.mean_estimate.to_string(),
                    s.empirical_sd.to_string(),
                    s.mean_se.to_string(),
                    s.coverage.to_string(),
                    c.coverage_bound_lo.to_string(),
                    c.coverage_bound_hi.to_string(),
                    c.n_converged.to_string(),
                    c.n_nonconverged.to_string(),
                    c.n_failed.to_string(),
                    c.n_ctt_over_one.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
