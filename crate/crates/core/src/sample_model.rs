//! Monte Carlo model representation: the bag of posterior draws, the loss
//! matrix over actions and probability weights over the draws.
//!
//! The reference model is the empirical measure putting mass `1/m` on each
//! draw. Every alternative model considered elsewhere in the crate is a
//! reweighting of the same atoms, so a [`WeightVector`] plus a loss column is
//! all that is needed to evaluate an expected loss.

use crate::error::{Error, Result};

/// Tolerance on `Σ w_i = 1` accepted by [`WeightVector::new`].
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A bag of `m` parameter draws with optional per-draw log quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBag {
    param_names: Vec<String>,
    samples: Vec<Vec<f64>>,
    log_density: Option<Vec<f64>>,
    log_lik_terms: Option<Vec<Vec<f64>>>,
    log_prior: Option<Vec<f64>>,
}

impl SampleBag {
    /// Builds a bag from row-major draws (`m` rows of `d` values).
    pub fn new(param_names: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        let m = samples.len();
        if m < 2 {
            return Err(Error::invalid(format!("need at least 2 samples, got {m}")));
        }
        let d = param_names.len();
        for (i, row) in samples.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "sample row width",
                    expected: d,
                    got: row.len(),
                });
            }
            check_finite("samples", i, row)?;
        }
        Ok(Self {
            param_names,
            samples,
            log_density: None,
            log_lik_terms: None,
            log_prior: None,
        })
    }

    pub fn with_log_density(mut self, v: Vec<f64>) -> Result<Self> {
        self.check_len("log_density", v.len())?;
        check_finite("log_density", 0, &v)?;
        self.log_density = Some(v);
        Ok(self)
    }

    /// Per-datum log-likelihood terms, `m` rows of `n` values.
    pub fn with_log_lik_terms(mut self, rows: Vec<Vec<f64>>) -> Result<Self> {
        self.check_len("log_lik_terms", rows.len())?;
        let n = rows.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::invalid("log_lik_terms must have at least one datum"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "log_lik_terms row width",
                    expected: n,
                    got: row.len(),
                });
            }
            check_finite("log_lik_terms", i, row)?;
        }
        self.log_lik_terms = Some(rows);
        Ok(self)
    }

    pub fn with_log_prior(mut self, v: Vec<f64>) -> Result<Self> {
        self.check_len("log_prior", v.len())?;
        check_finite("log_prior", 0, &v)?;
        self.log_prior = Some(v);
        Ok(self)
    }

    fn check_len(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.m() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.m(),
                got,
            });
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn d(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn log_density(&self) -> Option<&[f64]> {
        self.log_density.as_deref()
    }

    pub fn log_lik_terms(&self) -> Option<&[Vec<f64>]> {
        self.log_lik_terms.as_deref()
    }

    /// Number of data terms `n` in the log-likelihood matrix (0 when absent).
    pub fn n_data(&self) -> usize {
        self.log_lik_terms
            .as_ref()
            .and_then(|r| r.first())
            .map_or(0, Vec::len)
    }

    pub fn log_prior(&self) -> Option<&[f64]> {
        self.log_prior.as_deref()
    }
}

fn check_finite(what: &'static str, row: usize, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(col) => Err(Error::NonFinite { what, row, col }),
        None => Ok(()),
    }
}

/// Probability weights over the `m` atoms of a [`SampleBag`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates nonnegativity and unit sum (within [`WEIGHT_SUM_TOL`]).
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(format!(
                "weight {i} is negative or non-finite: {}",
                w[i]
            )));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    /// Normalizes `exp(log_w)` with max-subtraction.
    pub fn from_log_weights(log_w: &[f64]) -> Result<Self> {
        if log_w.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        if log_w.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::invalid("log weights contain NaN or +inf"));
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::invalid("all log weights are -inf"));
        }
        let mut w: Vec<f64> = log_w.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Ok(Self(w))
    }

    /// Wraps weights already known to be valid (internal constructors only).
    pub(crate) fn from_normalized_unchecked(w: Vec<f64>) -> Self {
        debug_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Loss matrix stored column-wise (one column per action), affinely rescaled
/// to `[0, 1]` with a single matrix-wide minimum and maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLossMatrix {
    columns: Vec<Vec<f64>>,
    loss_min: f64,
    loss_max: f64,
    labels: Vec<String>,
    degenerate: bool,
}

impl NormalizedLossMatrix {
    /// `raw` is row-major: `m` rows (samples) of `k` losses (actions).
    pub fn normalize(raw: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        let columns = Self::validate(raw, &labels)?;
        let (lo, hi) = columns
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        if hi <= lo {
            let m = raw.len();
            return Ok(Self {
                columns: vec![vec![0.5; m]; labels.len()],
                loss_min: lo,
                loss_max: hi,
                labels,
                degenerate: true,
            });
        }
        let span = hi - lo;
        let columns = columns
            .into_iter()
            .map(|c| c.into_iter().map(|x| (x - lo) / span).collect())
            .collect();
        Ok(Self {
            columns,
            loss_min: lo,
            loss_max: hi,
            labels,
            degenerate: false,
        })
    }

    /// Uses the losses as given (identity back-transform). Entries must
    /// already lie in `[0, 1]`.
    pub fn passthrough(raw: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        let columns = Self::validate(raw, &labels)?;
        for (a, col) in columns.iter().enumerate() {
            if let Some(i) = col.iter().position(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::invalid(format!(
                    "loss at row {i}, action {} is {} outside [0,1]; enable normalization",
                    labels[a], col[i]
                )));
            }
        }
        let degenerate = columns
            .iter()
            .flatten()
            .all(|&x| x == columns[0][0]);
        Ok(Self {
            columns,
            loss_min: 0.0,
            loss_max: 1.0,
            labels,
            degenerate,
        })
    }

    fn validate(raw: &[Vec<f64>], labels: &[String]) -> Result<Vec<Vec<f64>>> {
        let m = raw.len();
        if m < 2 {
            return Err(Error::invalid(format!("need at least 2 loss rows, got {m}")));
        }
        let k = labels.len();
        if k == 0 {
            return Err(Error::invalid("need at least one action"));
        }
        let mut columns = vec![Vec::with_capacity(m); k];
        for (i, row) in raw.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "loss row width",
                    expected: k,
                    got: row.len(),
                });
            }
            check_finite("losses", i, row)?;
            for (col, &x) in columns.iter_mut().zip(row) {
                col.push(x);
            }
        }
        Ok(columns)
    }

    pub fn n_samples(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_actions(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, action: usize) -> &[f64] {
        &self.columns[action]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn loss_min(&self) -> f64 {
        self.loss_min
    }

    pub fn loss_max(&self) -> f64 {
        self.loss_max
    }

    /// True when every raw loss was identical.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Maps a normalized loss (or expected loss) back to raw units.
    pub fn to_raw(&self, value: f64) -> f64 {
        if self.degenerate {
            return self.loss_min;
        }
        self.loss_min + value * (self.loss_max - self.loss_min)
    }

    /// Maps a normalized loss difference (e.g. a regret) back to raw units.
    pub fn difference_to_raw(&self, delta: f64) -> f64 {
        delta * (self.loss_max - self.loss_min)
    }

    /// Uniform-weight expected loss of every action.
    pub fn expected_losses(&self) -> Vec<f64> {
        self.columns.iter().map(|c| sample_mean(c)).collect()
    }

    /// The expected-loss minimizing action (smallest index among ties).
    pub fn bayes_action(&self) -> usize {
        argmin_first(&self.expected_losses())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// `Σ w_i L_i`.
pub fn expected_loss(weights: &WeightVector, losses: &[f64]) -> Result<f64> {
    if weights.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            what: "expected_loss weights vs losses",
            expected: losses.len(),
            got: weights.len(),
        });
    }
    Ok(dot(weights.as_slice(), losses))
}

/// Uniform-weight mean, evaluated exactly as `expected_loss` with
/// [`WeightVector::uniform`] so the two agree bit for bit.
pub fn sample_mean(losses: &[f64]) -> f64 {
    let w = 1.0 / losses.len() as f64;
    losses.iter().fold(0.0, |acc, l| acc + w * l)
}

pub(crate) fn dot(w: &[f64], l: &[f64]) -> f64 {
    w.iter().zip(l).fold(0.0, |acc, (w, l)| acc + w * l)
}

/// Kish effective sample size `1 / Σ w_i²`.
pub fn effective_sample_size(weights: &WeightVector) -> f64 {
    1.0 / weights.as_slice().iter().map(|w| w * w).sum::<f64>()
}

/// Index of the smallest value; the first index wins ties.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Indices sorting `values` descending; equal values keep ascending index.
pub(crate) fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}
