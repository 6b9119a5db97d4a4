//! Weak-neighbourhood analysis by Dirichlet reweighting of the fixed atoms.
//!
//! A draw from the neighbourhood keeps the Monte Carlo atoms and replaces the
//! uniform weights with `w ~ Dir_m(α/m, …, α/m)`. Small `α` allows draws far
//! from the reference model; as `α → ∞` they concentrate on uniform weights.
//!
//! Every draw uses its own ChaCha stream (`stream = draw index`) under the
//! run seed, so draws can be produced in parallel and still reproduce bit
//! for bit. Within a profile over several `α` the same streams are reused,
//! which keeps the curves smooth in `α`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::sample_model::{argmin_first, dot, NormalizedLossMatrix, WeightVector};

const MAX_REDRAWS: usize = 64;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `log X` for `X ~ Gamma(shape, 1)`. For `shape < 1` uses
/// `X = Y·U^{1/shape}` with `Y ~ Gamma(shape + 1)`, kept in log space so
/// tiny shapes do not underflow to zero.
fn log_gamma_variate<R: Rng + ?Sized>(gamma: &Gamma<f64>, shape: f64, rng: &mut R) -> f64 {
    let y = gamma.sample(rng).ln();
    if shape >= 1.0 {
        y
    } else {
        // 1 − u lies in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        y + u.ln() / shape
    }
}

/// One `Dir_m(α/m, …)` row for `(seed, stream)`, plus the number of rows
/// rejected for being non-finite or all zero.
fn dirichlet_row(alpha: f64, m: usize, seed: u64, stream: u64) -> (Vec<f64>, usize) {
    let shape = alpha / m as f64;
    let base_shape = if shape >= 1.0 { shape } else { shape + 1.0 };
    let gamma = Gamma::new(base_shape, 1.0).expect("shape is positive and finite");
    let mut rng = stream_rng(seed, stream);
    let mut rejected = 0;
    loop {
        let logs: Vec<f64> = (0..m)
            .map(|_| log_gamma_variate(&gamma, shape, &mut rng))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            if total.is_finite() && total > 0.0 {
                w.iter_mut().for_each(|x| *x /= total);
                return (w, rejected);
            }
        }
        rejected += 1;
        assert!(rejected < MAX_REDRAWS, "Dirichlet sampler failed repeatedly");
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive and finite, got {alpha}")));
    }
    Ok(())
}

/// A seeded batch of Dirichlet weight vectors on `m` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletDrawSet {
    pub alpha: f64,
    pub n_draws: usize,
    pub seed: u64,
    pub draws: Vec<WeightVector>,
    /// `per_draw_psi[d][a]`; empty until [`DirichletDrawSet::evaluate`].
    pub per_draw_psi: Vec<Vec<f64>>,
    pub rejected: usize,
}

pub fn draw_dirichlet_weights(
    alpha: f64,
    m: usize,
    n_draws: usize,
    seed: u64,
) -> Result<DirichletDrawSet> {
    check_alpha(alpha)?;
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 atoms, got {m}")));
    }
    let rows: Vec<(Vec<f64>, usize)> = (0..n_draws as u64)
        .into_par_iter()
        .map(|d| dirichlet_row(alpha, m, seed, d))
        .collect();
    let rejected = rows.iter().map(|r| r.1).sum();
    Ok(DirichletDrawSet {
        alpha,
        n_draws,
        seed,
        draws: rows
            .into_iter()
            .map(|(w, _)| WeightVector::from_normalized_unchecked(w))
            .collect(),
        per_draw_psi: Vec::new(),
        rejected,
    })
}

impl DirichletDrawSet {
    /// Fills `per_draw_psi` with `Σ_i w_i L_a(θ_i)` for every draw and action.
    pub fn evaluate(&mut self, matrix: &NormalizedLossMatrix) -> Result<()> {
        if let Some(w) = self.draws.first() {
            if w.len() != matrix.n_samples() {
                return Err(Error::DimensionMismatch {
                    what: "Dirichlet atoms vs loss rows",
                    expected: matrix.n_samples(),
                    got: w.len(),
                });
            }
        }
        self.per_draw_psi = self
            .draws
            .par_iter()
            .map(|w| matrix.columns().iter().map(|c| dot(w.as_slice(), c)).collect())
            .collect();
        Ok(())
    }
}

/// Probability that each action minimizes expected loss under a random
/// Dirichlet reweighting, per concentration value.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityProfile {
    pub alpha_grid: Vec<f64>,
    pub labels: Vec<String>,
    /// `prob[g][a]`
    pub prob: Vec<Vec<f64>>,
    /// `stderr[g][a] = sqrt(p(1 − p)/n_draws)`
    pub stderr: Vec<Vec<f64>>,
    /// Across-draw mean of the expected loss, `mean_psi[g][a]`.
    pub mean_psi: Vec<Vec<f64>>,
    /// Across-draw standard deviation of the expected loss.
    pub sd_psi: Vec<Vec<f64>>,
    pub n_draws: usize,
    pub seed: u64,
    pub rejected: usize,
}

pub fn probability_of_optimality(
    matrix: &NormalizedLossMatrix,
    alpha_grid: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<OptimalityProfile> {
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    if alpha_grid.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    for &a in alpha_grid {
        check_alpha(a)?;
    }
    if alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("alpha grid is not strictly increasing"));
    }
    let m = matrix.n_samples();
    let k = matrix.n_actions();
    let n = n_draws as f64;

    let mut out = OptimalityProfile {
        alpha_grid: alpha_grid.to_vec(),
        labels: matrix.labels().to_vec(),
        prob: Vec::with_capacity(alpha_grid.len()),
        stderr: Vec::with_capacity(alpha_grid.len()),
        mean_psi: Vec::with_capacity(alpha_grid.len()),
        sd_psi: Vec::with_capacity(alpha_grid.len()),
        n_draws,
        seed,
        rejected: 0,
    };
    for &alpha in alpha_grid {
        // (winner, psi per action, rejected) per draw, without keeping weights
        let per_draw: Vec<(usize, Vec<f64>, usize)> = (0..n_draws as u64)
            .into_par_iter()
            .map(|d| {
                let (w, rej) = dirichlet_row(alpha, m, seed, d);
                let psi: Vec<f64> = matrix.columns().iter().map(|c| dot(&w, c)).collect();
                (argmin_first(&psi), psi, rej)
            })
            .collect();
        let mut wins = vec![0usize; k];
        let mut sum = vec![0.0; k];
        for (winner, psi, rej) in &per_draw {
            wins[*winner] += 1;
            out.rejected += rej;
            for (s, p) in sum.iter_mut().zip(psi) {
                *s += p;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut ss = vec![0.0; k];
        for (_, psi, _) in &per_draw {
            for a in 0..k {
                ss[a] += (psi[a] - mean[a]).powi(2);
            }
        }
        let sd = ss
            .iter()
            .map(|s| if n_draws > 1 { (s / (n - 1.0)).sqrt() } else { 0.0 })
            .collect();
        let p: Vec<f64> = wins.iter().map(|&w| w as f64 / n).collect();
        out.stderr
            .push(p.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect());
        out.prob.push(p);
        out.mean_psi.push(mean);
        out.sd_psi.push(sd);
    }
    Ok(out)
}

/// `E|v − x|` for `v ~ Beta(xα, (1 − x)α)`:
/// `(2/α)·[x^x (1 − x)^{1−x}]^α / B(xα, (1 − x)α)`.
pub fn expected_l1_distance(alpha: f64, x: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid(format!("x must lie in (0, 1), got {x}")));
    }
    let a = x * alpha;
    let b = (1.0 - x) * alpha;
    if let Some(beta) = integer_beta(a, b) {
        return Ok(2.0 / alpha * x.powf(a) * (1.0 - x).powf(b) / beta);
    }
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(alpha);
    let ln_num = alpha * (x * x.ln() + (1.0 - x) * (1.0 - x).ln());
    Ok((2f64.ln() - alpha.ln() + ln_num - ln_beta).exp())
}

/// `B(a, b) = (a − 1)! / (b (b + 1) ⋯ (a + b − 1))` for small integer shapes,
/// where the product form is exact or nearly so.
fn integer_beta(a: f64, b: f64) -> Option<f64> {
    let small_int = |v: f64| v.fract() == 0.0 && (1.0..=60.0).contains(&v);
    if !(small_int(a) && small_int(b)) {
        return None;
    }
    let (a, b) = (a as u32, b as u32);
    let num: f64 = (1..a).map(f64::from).product();
    let den: f64 = (b..a + b).map(f64::from).product();
    Some(num / den)
}

fn check_sorted(losses: &[f64]) -> Result<()> {
    if losses.len() < 2 {
        return Err(Error::invalid("need at least 2 losses"));
    }
    if losses.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("losses must be finite"));
    }
    if losses.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("losses must be sorted ascending"));
    }
    Ok(())
}

/// `∫ |F̃(z) − F(z)| dz` between the uniform-weight loss distribution and
/// the reweighted one, over losses sorted ascending:
/// `Σ_{i<m} |v_i − i/m|·(L_{i+1} − L_i)` with `v_i` the cumulative weights.
pub fn l1_loss_distance(sorted_losses: &[f64], weights: &WeightVector) -> Result<f64> {
    check_sorted(sorted_losses)?;
    let m = sorted_losses.len();
    if weights.len() != m {
        return Err(Error::DimensionMismatch {
            what: "weights vs losses",
            expected: m,
            got: weights.len(),
        });
    }
    let mut v = 0.0;
    let mut total = 0.0;
    for i in 0..m - 1 {
        v += weights.as_slice()[i];
        let x = (i + 1) as f64 / m as f64;
        total += (v - x).abs() * (sorted_losses[i + 1] - sorted_losses[i]);
    }
    Ok(total)
}

/// Expected value of [`l1_loss_distance`] under `Dir_m(α/m, …)` weights,
/// using `v_i ~ Beta(x_i α, (1 − x_i) α)`.
pub fn expected_l1_loss_distance(alpha: f64, sorted_losses: &[f64]) -> Result<f64> {
    check_sorted(sorted_losses)?;
    let m = sorted_losses.len();
    let mut total = 0.0;
    for i in 0..m - 1 {
        let inc = sorted_losses[i + 1] - sorted_losses[i];
        if inc > 0.0 {
            total += expected_l1_distance(alpha, (i + 1) as f64 / m as f64)? * inc;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
    pub median: f64,
}

/// Linear-interpolation quantile of sorted data (`p ∈ [0, 1]`).
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo >= n - 1 {
        return sorted[n - 1];
    }
    let t = h - lo as f64;
    sorted[lo] + t * (sorted[lo + 1] - sorted[lo])
}

/// Pointwise `level` intervals of the reweighted reference loss distribution
/// `F(z) = z` (atoms at `i/atoms`) under Dirichlet draws with concentration
/// `alpha`.
pub fn confidence_bands(
    alpha: f64,
    level: f64,
    z_grid: &[f64],
    n_draws: usize,
    seed: u64,
    atoms: usize,
) -> Result<Vec<Band>> {
    check_alpha(alpha)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    if atoms < 2 {
        return Err(Error::invalid("need at least 2 reference atoms"));
    }
    crate::grid::validate_grid(z_grid, 0.0, 1.0, "z")?;
    // number of atoms i/atoms ≤ z
    let counts: Vec<usize> = z_grid
        .iter()
        .map(|z| ((z * atoms as f64) + 1e-9).floor().min(atoms as f64) as usize)
        .collect();
    let cdf_rows: Vec<Vec<f64>> = (0..n_draws as u64)
        .into_par_iter()
        .map(|d| {
            let (w, _) = dirichlet_row(alpha, atoms, seed, d);
            let mut cum = Vec::with_capacity(atoms + 1);
            cum.push(0.0);
            let mut acc = 0.0;
            for x in &w {
                acc += x;
                cum.push(acc);
            }
            counts.iter().map(|&c| cum[c].min(1.0)).collect()
        })
        .collect();
    let tail = 0.5 * (1.0 - level);
    Ok(z_grid
        .iter()
        .enumerate()
        .map(|(g, &z)| {
            let mut vals: Vec<f64> = cdf_rows.iter().map(|r| r[g]).collect();
            vals.sort_by(f64::total_cmp);
            Band {
                z,
                lower: quantile_sorted(&vals, tail),
                upper: quantile_sorted(&vals, 1.0 - tail),
                median: quantile_sorted(&vals, 0.5),
            }
        })
        .collect())
}
