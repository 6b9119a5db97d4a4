//! Quantile-indexed loss diagnostics: value at risk, conditional value at
//! risk, two-sided trimmed means and the cumulative expected loss curve,
//! together with leave-one-out reweighting and density/loss scatter data.
//!
//! All curves work on the empirical loss distribution of one action under
//! uniform weights. Losses are ranked from highest to lowest with a stable
//! sort (original sample index breaks ties), and curve values between order
//! statistics are linearly interpolated.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::validate_grid;
use crate::sample_model::{
    argmin_first, descending_order, effective_sample_size, expected_loss, sample_mean, SampleBag,
    NormalizedLossMatrix, WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    Var,
    Cvar,
    Trimmed,
    Cel,
}

impl CurveKind {
    pub const ALL: [CurveKind; 4] = [CurveKind::Var, CurveKind::Cvar, CurveKind::Trimmed, CurveKind::Cel];

    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Var => "var",
            CurveKind::Cvar => "cvar",
            CurveKind::Trimmed => "trimmed",
            CurveKind::Cel => "cel",
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A curve sampled on a quantile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QCurve {
    pub q: Vec<f64>,
    pub value: Vec<f64>,
    pub action_label: String,
    pub kind: CurveKind,
}

/// Losses sorted from highest to lowest.
struct RankedLosses {
    desc: Vec<f64>,
    mean: f64,
}

impl RankedLosses {
    fn new(losses: &[f64]) -> Result<Self> {
        if losses.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 losses, got {}",
                losses.len()
            )));
        }
        if losses.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("losses must be finite"));
        }
        let desc = descending_order(losses).into_iter().map(|i| losses[i]).collect();
        Ok(Self {
            desc,
            mean: sample_mean(losses),
        })
    }

    fn m(&self) -> usize {
        self.desc.len()
    }

    /// `top[k]` = sum of the k largest losses, `k = 0..=m`.
    fn top_sums(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m() + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for z in &self.desc {
            acc += z;
            out.push(acc);
        }
        out
    }

    /// Linear interpolation of `table[k]` (indexed by `k/m`) at `q`.
    fn interpolate_at(table: &[f64], q: f64) -> f64 {
        let m = table.len() - 1;
        let pos = q * m as f64;
        let lo = (pos.floor() as usize).min(m);
        if lo == m {
            return table[m];
        }
        let t = pos - lo as f64;
        if t == 0.0 {
            table[lo]
        } else {
            (1.0 - t) * table[lo] + t * table[lo + 1]
        }
    }

    fn var_at(&self, q: f64) -> f64 {
        // order statistic k (1-based, descending) sits at plotting position (k - 1/2)/m
        let m = self.m() as f64;
        let pos = q * m + 0.5;
        if pos <= 1.0 {
            return self.desc[0];
        }
        if pos >= m {
            return self.desc[self.m() - 1];
        }
        let lo = pos.floor();
        let t = pos - lo;
        let i = lo as usize - 1;
        if t == 0.0 {
            self.desc[i]
        } else {
            (1.0 - t) * self.desc[i] + t * self.desc[i + 1]
        }
    }

    fn cvar_table(&self) -> Vec<f64> {
        let top = self.top_sums();
        let m = self.m();
        let mut g: Vec<f64> = (0..=m)
            .map(|k| if k == 0 { self.desc[0] } else { top[k] / k as f64 })
            .collect();
        g[m] = self.mean;
        g
    }

    fn cel_table(&self) -> Vec<f64> {
        let m = self.m();
        let mut j: Vec<f64> = self.top_sums().into_iter().map(|s| s / m as f64).collect();
        j[m] = self.mean;
        j
    }

    fn trimmed(&self, q: f64) -> Option<f64> {
        let m = self.m();
        let cut = (q * m as f64 / 2.0).floor() as usize;
        if 2 * cut >= m {
            return None;
        }
        if cut == 0 {
            return Some(self.mean);
        }
        let kept = &self.desc[cut..m - cut];
        Some(sample_mean(kept))
    }

    fn median(&self) -> f64 {
        let m = self.m();
        if m % 2 == 1 {
            self.desc[m / 2]
        } else {
            0.5 * (self.desc[m / 2 - 1] + self.desc[m / 2])
        }
    }
}

fn check_q_grid(q_grid: &[f64]) -> Result<()> {
    validate_grid(q_grid, 0.0, 1.0, "q")
}

/// Quantile loss `F⁻¹(1 − q)`. Order statistics ranked from the top are
/// placed at positions `(k − ½)/m`; the curve is flat beyond the first and
/// last positions, so `q = 0` returns the maximum loss.
pub fn var_curve(losses: &[f64], q_grid: &[f64], label: &str) -> Result<QCurve> {
    check_q_grid(q_grid)?;
    let r = RankedLosses::new(losses)?;
    Ok(QCurve {
        q: q_grid.to_vec(),
        value: q_grid.iter().map(|&q| r.var_at(q)).collect(),
        action_label: label.to_string(),
        kind: CurveKind::Var,
    })
}

/// Mean of the worst `q`-fraction of losses, interpolated linearly in `k`
/// between `Ĝ(k/m)`. The value reported at `q = 0` is the limit (max loss).
pub fn cvar_curve(losses: &[f64], q_grid: &[f64], label: &str) -> Result<QCurve> {
    check_q_grid(q_grid)?;
    let r = RankedLosses::new(losses)?;
    let table = r.cvar_table();
    let m = r.m() as f64;
    let value = q_grid
        .iter()
        .map(|&q| {
            if q * m <= 1.0 {
                // below the first atom Ĝ is constant at the max loss
                r.desc[0]
            } else {
                RankedLosses::interpolate_at(&table, q)
            }
        })
        .collect();
    Ok(QCurve {
        q: q_grid.to_vec(),
        value,
        action_label: label.to_string(),
        kind: CurveKind::Cvar,
    })
}

/// Two-sided trimmed mean: drop `floor(q·m/2)` losses from each tail.
pub fn trimmed_mean(losses: &[f64], q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::invalid(format!("trim fraction {q} outside [0,1)")));
    }
    let r = RankedLosses::new(losses)?;
    r.trimmed(q).ok_or_else(|| {
        Error::invalid(format!(
            "trimming fraction {q} removes all {} samples",
            r.m()
        ))
    })
}

/// Trimmed means over a grid. Where symmetric trimming would leave nothing
/// (only possible at `q = 1` with even `m`) the median is reported.
pub fn trimmed_curve(losses: &[f64], q_grid: &[f64], label: &str) -> Result<QCurve> {
    check_q_grid(q_grid)?;
    let r = RankedLosses::new(losses)?;
    Ok(QCurve {
        q: q_grid.to_vec(),
        value: q_grid
            .iter()
            .map(|&q| r.trimmed(q).unwrap_or_else(|| r.median()))
            .collect(),
        action_label: label.to_string(),
        kind: CurveKind::Trimmed,
    })
}

/// Cumulative expected loss `J(q)`: the contribution to the expected loss of
/// the worst `q`-fraction of outcomes, `J(k/m) = (1/m)·Σ` of the `k` largest
/// losses. `J(0) = 0`, `J(1)` is the expected loss and the slope at 0 is the
/// maximum loss.
pub fn cel_curve(losses: &[f64], q_grid: &[f64], label: &str) -> Result<QCurve> {
    check_q_grid(q_grid)?;
    let r = RankedLosses::new(losses)?;
    let table = r.cel_table();
    Ok(QCurve {
        q: q_grid.to_vec(),
        value: q_grid
            .iter()
            .map(|&q| RankedLosses::interpolate_at(&table, q))
            .collect(),
        action_label: label.to_string(),
        kind: CurveKind::Cel,
    })
}

/// All four curve kinds for every action, ordered by action then kind.
pub fn all_curves(matrix: &NormalizedLossMatrix, q_grid: &[f64]) -> Result<Vec<QCurve>> {
    let mut out = Vec::with_capacity(4 * matrix.n_actions());
    for (a, label) in matrix.labels().iter().enumerate() {
        let l = matrix.column(a);
        out.push(var_curve(l, q_grid, label)?);
        out.push(cvar_curve(l, q_grid, label)?);
        out.push(trimmed_curve(l, q_grid, label)?);
        out.push(cel_curve(l, q_grid, label)?);
    }
    Ok(out)
}

/// Largest grid `q` at which the expected-loss optimal action stops being
/// CVaR(q)-optimal, scanning down from `q = 1`. `None` if it stays optimal
/// on the whole grid.
pub fn cvar_crossing(matrix: &NormalizedLossMatrix, q_grid: &[f64]) -> Result<Option<f64>> {
    check_q_grid(q_grid)?;
    let best = matrix.bayes_action();
    let curves = matrix
        .labels()
        .iter()
        .enumerate()
        .map(|(a, label)| cvar_curve(matrix.column(a), q_grid, label))
        .collect::<Result<Vec<_>>>()?;
    for gi in (0..q_grid.len()).rev() {
        let at_q: Vec<f64> = curves.iter().map(|c| c.value[gi]).collect();
        if argmin_first(&at_q) != best {
            return Ok(Some(q_grid[gi]));
        }
    }
    Ok(None)
}

/// Expected losses after removing one datum (or the prior) by importance
/// reweighting with `w_i ∝ 1/f(x_j | θ_i)` (resp. `1/π(θ_i)`).
#[derive(Debug, Clone, PartialEq)]
pub struct LooReport {
    /// `psi_loo[a][j]`: expected loss of action `a` with datum `j` removed.
    pub psi_loo: Vec<Vec<f64>>,
    /// Expected loss with the prior divided out, when a log prior is available.
    pub psi_no_prior: Option<Vec<f64>>,
    pub baseline: Vec<f64>,
    pub ess_loo: Vec<f64>,
    pub ess_no_prior: Option<f64>,
}

pub fn loo_sensitivity(bag: &SampleBag, matrix: &NormalizedLossMatrix) -> Result<LooReport> {
    if bag.m() != matrix.n_samples() {
        return Err(Error::DimensionMismatch {
            what: "samples vs loss rows",
            expected: bag.m(),
            got: matrix.n_samples(),
        });
    }
    let loglik = bag.log_lik_terms().ok_or(Error::MissingField("loglik_*"))?;
    let n = bag.n_data();
    let k = matrix.n_actions();
    let mut psi_loo = vec![Vec::with_capacity(n); k];
    let mut ess_loo = Vec::with_capacity(n);
    for j in 0..n {
        let neg: Vec<f64> = loglik.iter().map(|row| -row[j]).collect();
        let w = WeightVector::from_log_weights(&neg)?;
        ess_loo.push(effective_sample_size(&w));
        for (a, out) in psi_loo.iter_mut().enumerate() {
            out.push(expected_loss(&w, matrix.column(a))?);
        }
    }
    let (psi_no_prior, ess_no_prior) = match bag.log_prior() {
        Some(lp) => {
            let neg: Vec<f64> = lp.iter().map(|x| -x).collect();
            let w = WeightVector::from_log_weights(&neg)?;
            let psi = (0..k)
                .map(|a| expected_loss(&w, matrix.column(a)))
                .collect::<Result<Vec<_>>>()?;
            (Some(psi), Some(effective_sample_size(&w)))
        }
        None => (None, None),
    };
    Ok(LooReport {
        psi_loo,
        psi_no_prior,
        baseline: matrix.expected_losses(),
        ess_loo,
        ess_no_prior,
    })
}

/// `(log density, loss)` pairs in sample order.
pub fn density_loss_scatter(bag: &SampleBag, losses: &[f64]) -> Result<Vec<(f64, f64)>> {
    let ld = bag.log_density().ok_or(Error::MissingField("log_density"))?;
    if ld.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            what: "log_density vs losses",
            expected: ld.len(),
            got: losses.len(),
        });
    }
    Ok(ld.iter().copied().zip(losses.iter().copied()).collect())
}
