//! Least-favourable reweighting inside a forward Kullback-Leibler ball
//! `KL(π ‖ π_I) ≤ C` around the uniform-weight Monte Carlo model.
//!
//! The maximizer of expected loss in the ball is an exponential tilt of the
//! reference atoms, `w_i ∝ exp(λ L_i)`, with `λ ≥ 0` in one-to-one
//! correspondence with the radius `C`. The minimizer uses `exp(−λ L_i)`.
//! For a tilt the divergence satisfies `KL = λ·ψ − log Z`, where `ψ` is the
//! tilted expected loss and `Z = (1/m) Σ exp(λ L_i)`.
//!
//! On `m` atoms the divergence is bounded: a tilt can do no more than put
//! all mass on the atoms attaining the extreme loss, which costs
//! `log(m / #extreme atoms)`. Requests beyond that radius return those
//! point-mass weights flagged as saturated.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sample_model::{
    argmin_first, dot, effective_sample_size, sample_mean, NormalizedLossMatrix, WeightVector,
};

/// Relative tolerance on the realized radius when inverting `λ ↦ C`.
pub const C_REL_TOL: f64 = 1e-8;
/// Absolute tolerance used instead when `C < 1e-8`.
pub const C_ABS_TOL: f64 = 1e-12;

/// Above this `|λ|·range` the log-sum-exp form of the divergence is used.
const SMALL_TILT: f64 = 0.5;
const MAX_DOUBLINGS: usize = 1100;
const MAX_BISECTIONS: usize = 400;
/// Losses within this fraction of the loss range of the extreme are treated
/// as tied with it. Differences of normalized losses carry rounding noise of a
/// few ulps, and separating such near-ties would need `λ` near overflow.
const TIE_TOL: f64 = 1e-12;
/// Largest `λ · range` explored before falling back to the point-mass limit.
const MAX_EXPONENT_SPAN: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Maximize expected loss (least favourable).
    Sup,
    /// Minimize expected loss (most favourable).
    Inf,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Sup => 1.0,
            Direction::Inf => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Sup => "sup",
            Direction::Inf => "inf",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An exponentially tilted reweighting of the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedWeights {
    /// Tilting magnitude `λ ≥ 0`; `+∞` for the point-mass limit.
    pub lambda: f64,
    pub weights: WeightVector,
    /// Realized `KL(π̃ ‖ π̃_I)`.
    pub kl: f64,
    /// Expected loss under the tilt.
    pub psi: f64,
    /// Uniform-weight expected loss of the same losses.
    pub baseline: f64,
    pub ess: f64,
    pub direction: Direction,
    /// `log((1/m) Σ exp(±λ L_i))`.
    pub log_partition: f64,
    /// `KL(π̃_I ‖ π̃)` of the same weights.
    pub reverse_kl: f64,
    /// Set when the request could not be met by a finite tilt: either the
    /// losses are constant or the radius exceeds the point-mass bound.
    pub saturated: bool,
}

fn check_losses(losses: &[f64]) -> Result<()> {
    if losses.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 losses, got {}",
            losses.len()
        )));
    }
    if losses.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("losses must be finite"));
    }
    Ok(())
}

/// Tilts uniform weights by `exp(±λ L_i)`.
pub fn tilt_weights(losses: &[f64], lambda: f64, direction: Direction) -> Result<TiltedWeights> {
    check_losses(losses)?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if lambda == f64::INFINITY {
        return Ok(point_mass(losses, direction));
    }
    Ok(tilt_unchecked(losses, lambda, direction))
}

fn tilt_unchecked(losses: &[f64], lambda: f64, direction: Direction) -> TiltedWeights {
    let m = losses.len();
    let mf = m as f64;
    let baseline = sample_mean(losses);
    let s = direction.sign() * lambda;
    // centred exponents s·(L_i − mean)
    let x: Vec<f64> = losses.iter().map(|l| s * (l - baseline)).collect();
    let x_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);

    let (weights, log_z_centred, kl) = if x_max - x_min <= SMALL_TILT && x_max.abs() <= SMALL_TILT {
        // near-uniform regime: expm1/ln_1p avoid cancellation in KL ~ λ²·Var/2
        let e: Vec<f64> = x.iter().map(|v| v.exp_m1()).collect();
        let mean_e = e.iter().sum::<f64>() / mf;
        let log_z = mean_e.ln_1p();
        let denom = mf * (1.0 + mean_e);
        let w: Vec<f64> = e.iter().map(|v| (1.0 + v) / denom).collect();
        let shift = dot(&w, &x);
        (w, log_z, shift - log_z)
    } else {
        let u: Vec<f64> = x.iter().map(|v| (v - x_max).exp()).collect();
        let total: f64 = u.iter().sum();
        let w: Vec<f64> = u.iter().map(|v| v / total).collect();
        let log_z = x_max + (total / mf).ln();
        // KL = Σ w_i log(m w_i) with log w_i = x_i − x_max − log total
        let inner = w
            .iter()
            .zip(&x)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, x)| w * (x - x_max))
            .sum::<f64>();
        (w, log_z, mf.ln() - total.ln() + inner)
    };
    let weights = WeightVector::from_normalized_unchecked(weights);
    let psi = dot(weights.as_slice(), losses);
    TiltedWeights {
        lambda,
        ess: effective_sample_size(&weights),
        weights,
        kl: kl.max(0.0),
        psi,
        baseline,
        direction,
        log_partition: s * baseline + log_z_centred,
        reverse_kl: log_z_centred.max(0.0),
        saturated: false,
    }
}

fn loss_range(losses: &[f64]) -> f64 {
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Indices of atoms attaining (up to rounding noise) the extreme loss for
/// `direction`.
fn extreme_atoms(losses: &[f64], direction: Direction) -> Vec<usize> {
    let tol = TIE_TOL * loss_range(losses);
    let idx = 0..losses.len();
    match direction {
        Direction::Sup => {
            let top = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            idx.filter(|&i| losses[i] >= top - tol).collect()
        }
        Direction::Inf => {
            let bottom = losses.iter().copied().fold(f64::INFINITY, f64::min);
            idx.filter(|&i| losses[i] <= bottom + tol).collect()
        }
    }
}

/// Largest forward divergence any reweighting concentrating on the extreme
/// atoms can reach: `log(m / #extreme atoms)`.
pub fn max_kl(losses: &[f64], direction: Direction) -> f64 {
    let n = extreme_atoms(losses, direction).len();
    (losses.len() as f64 / n as f64).ln()
}

fn point_mass(losses: &[f64], direction: Direction) -> TiltedWeights {
    let m = losses.len();
    let idx = extreme_atoms(losses, direction);
    let share = 1.0 / idx.len() as f64;
    let mut w = vec![0.0; m];
    for &i in &idx {
        w[i] = share;
    }
    let weights = WeightVector::from_normalized_unchecked(w);
    let psi = dot(weights.as_slice(), losses);
    let kl = (m as f64 / idx.len() as f64).ln();
    TiltedWeights {
        lambda: f64::INFINITY,
        ess: idx.len() as f64,
        weights,
        kl,
        psi,
        baseline: sample_mean(losses),
        direction,
        log_partition: f64::INFINITY,
        reverse_kl: if idx.len() == m { 0.0 } else { f64::INFINITY },
        saturated: true,
    }
}

fn is_constant(losses: &[f64]) -> bool {
    losses.iter().all(|&l| l == losses[0])
}

fn within_tol(kl: f64, c: f64) -> bool {
    if c < 1e-8 {
        (kl - c).abs() <= C_ABS_TOL
    } else {
        (kl - c).abs() <= C_REL_TOL * c
    }
}

/// Finds the tilt whose realized divergence equals `c`.
///
/// Brackets `λ` by doubling from 1 and then bisects; `kl(λ)` is strictly
/// increasing for non-constant losses. Constant losses return the uniform
/// weights flagged as saturated.
pub fn solve_lambda_for_c(losses: &[f64], c: f64, direction: Direction) -> Result<TiltedWeights> {
    check_losses(losses)?;
    if c.is_nan() || c < 0.0 {
        return Err(Error::invalid(format!("radius C must be nonnegative, got {c}")));
    }
    if is_constant(losses) {
        let mut t = tilt_unchecked(losses, 0.0, direction);
        t.saturated = true;
        return Ok(t);
    }
    if c == 0.0 {
        return Ok(tilt_unchecked(losses, 0.0, direction));
    }
    if c >= max_kl(losses, direction) {
        return Ok(point_mass(losses, direction));
    }

    let range = loss_range(losses);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut t_hi = tilt_unchecked(losses, hi, direction);
    let mut doublings = 0;
    while t_hi.kl < c {
        if doublings == MAX_DOUBLINGS || 2.0 * hi * range > MAX_EXPONENT_SPAN {
            return Ok(point_mass(losses, direction));
        }
        lo = hi;
        hi *= 2.0;
        t_hi = tilt_unchecked(losses, hi, direction);
        doublings += 1;
    }
    if within_tol(t_hi.kl, c) {
        return Ok(t_hi);
    }

    // safeguarded Newton on kl(λ) − c, using d kl/dλ = λ·Var_λ(L); falls
    // back to bisection whenever the step leaves the bracket
    let mut best = t_hi;
    let mut lambda = hi;
    let mut t = best.clone();
    for _ in 0..MAX_BISECTIONS {
        let slope = lambda * tilted_variance(losses, &t);
        let newton = lambda - (t.kl - c) / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next <= lo || next >= hi || next == lambda {
            break;
        }
        lambda = next;
        t = tilt_unchecked(losses, lambda, direction);
        if (t.kl - c).abs() < (best.kl - c).abs() {
            best = t.clone();
        }
        if (t.kl - c).abs() <= 1e-4 * C_REL_TOL * c {
            break;
        }
        if t.kl < c {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    Ok(best)
}

/// `KL(π̃ ‖ π̃_I) = Σ w_i log(m w_i)` for an arbitrary reweighting.
pub fn forward_kl(weights: &WeightVector) -> f64 {
    let m = weights.len() as f64;
    weights
        .as_slice()
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| w * (m * w).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Population variance of the losses under uniform weights: the derivative
/// of the least-favourable expected loss in `λ` at `λ = 0`.
pub fn local_sensitivity(losses: &[f64]) -> f64 {
    let mean = sample_mean(losses);
    losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / losses.len() as f64
}

/// Variance of the losses under the tilted weights.
pub fn tilted_variance(losses: &[f64], tilt: &TiltedWeights) -> f64 {
    tilt.weights
        .as_slice()
        .iter()
        .zip(losses)
        .map(|(w, l)| w * (l - tilt.psi).powi(2))
        .sum()
}

/// Expected-loss envelope of one action along a radius grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEnvelope {
    pub label: String,
    pub psi_sup: Vec<f64>,
    pub psi_inf: Vec<f64>,
    pub lambda_sup: Vec<f64>,
    pub lambda_inf: Vec<f64>,
    pub ess_sup: Vec<f64>,
    pub ess_inf: Vec<f64>,
    pub saturated_sup: Vec<bool>,
    pub saturated_inf: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCurve {
    pub c_grid: Vec<f64>,
    pub actions: Vec<ActionEnvelope>,
    /// Expected-loss optimal action under the reference model.
    pub bayes_action: usize,
    /// First grid radius at which some rival's `ψ_inf` drops below the
    /// Bayes action's `ψ_sup`.
    pub crossing: Option<f64>,
}

pub fn validate_c_grid(c_grid: &[f64]) -> Result<()> {
    if c_grid.is_empty() {
        return Err(Error::invalid("C grid is empty"));
    }
    if c_grid.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("C grid values must be finite and nonnegative"));
    }
    if c_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("C grid is not strictly increasing"));
    }
    Ok(())
}

/// `[ψ_inf(C), ψ_sup(C)]` for every action over `c_grid` (normalized units).
pub fn envelope_curve(matrix: &NormalizedLossMatrix, c_grid: &[f64]) -> Result<EnvelopeCurve> {
    validate_c_grid(c_grid)?;
    let actions = matrix
        .labels()
        .par_iter()
        .enumerate()
        .map(|(a, label)| -> Result<ActionEnvelope> {
            let l = matrix.column(a);
            let mut env = ActionEnvelope {
                label: label.clone(),
                psi_sup: Vec::with_capacity(c_grid.len()),
                psi_inf: Vec::with_capacity(c_grid.len()),
                lambda_sup: Vec::with_capacity(c_grid.len()),
                lambda_inf: Vec::with_capacity(c_grid.len()),
                ess_sup: Vec::with_capacity(c_grid.len()),
                ess_inf: Vec::with_capacity(c_grid.len()),
                saturated_sup: Vec::with_capacity(c_grid.len()),
                saturated_inf: Vec::with_capacity(c_grid.len()),
            };
            for &c in c_grid {
                let up = solve_lambda_for_c(l, c, Direction::Sup)?;
                let down = solve_lambda_for_c(l, c, Direction::Inf)?;
                env.psi_sup.push(up.psi);
                env.lambda_sup.push(up.lambda);
                env.ess_sup.push(up.ess);
                env.saturated_sup.push(up.saturated);
                env.psi_inf.push(down.psi);
                env.lambda_inf.push(down.lambda);
                env.ess_inf.push(down.ess);
                env.saturated_inf.push(down.saturated);
            }
            Ok(env)
        })
        .collect::<Result<Vec<_>>>()?;

    let bayes_action = matrix.bayes_action();
    let crossing = if actions.len() < 2 {
        None
    } else {
        (0..c_grid.len())
            .find(|&g| {
                let worst_best = actions[bayes_action].psi_sup[g];
                actions
                    .iter()
                    .enumerate()
                    .filter(|(a, _)| *a != bayes_action)
                    .any(|(_, e)| e.psi_inf[g] < worst_best)
            })
            .map(|g| c_grid[g])
    };
    Ok(EnvelopeCurve {
        c_grid: c_grid.to_vec(),
        actions,
        bayes_action,
        crossing,
    })
}

/// Regret column `L_a − L_a'`.
pub fn regret_losses(matrix: &NormalizedLossMatrix, a: usize, a_prime: usize) -> Vec<f64> {
    matrix
        .column(a)
        .iter()
        .zip(matrix.column(a_prime))
        .map(|(x, y)| x - y)
        .collect()
}

/// Least-favourable tilt of the regret of choosing `a` over `a_prime`;
/// `psi` is the worst-case expected regret at radius `c`.
pub fn regret_tilt(
    matrix: &NormalizedLossMatrix,
    a: usize,
    a_prime: usize,
    c: f64,
) -> Result<TiltedWeights> {
    check_actions(matrix, a, a_prime)?;
    solve_lambda_for_c(&regret_losses(matrix, a, a_prime), c, Direction::Sup)
}

fn check_actions(matrix: &NormalizedLossMatrix, a: usize, a_prime: usize) -> Result<()> {
    let k = matrix.n_actions();
    if a >= k || a_prime >= k {
        return Err(Error::invalid(format!("action index out of range (k = {k})")));
    }
    if a == a_prime {
        return Err(Error::invalid("regret needs two distinct actions"));
    }
    Ok(())
}

/// Radius up to which action `a` keeps a negative worst-case regret against
/// `a_prime`.
fn c_star_against(regret: &[f64]) -> f64 {
    if sample_mean(regret) >= 0.0 {
        return 0.0;
    }
    let top = regret.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top < 0.0 {
        return f64::INFINITY;
    }
    if top == 0.0 {
        // ψ reaches 0 only in the point-mass limit
        return max_kl(regret, Direction::Sup);
    }
    // ψ(λ) increases from mean < 0 to top > 0: bracket and bisect the root
    let range = loss_range(regret);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while tilt_unchecked(regret, hi, Direction::Sup).psi < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi * range > MAX_EXPONENT_SPAN {
            return max_kl(regret, Direction::Sup);
        }
    }
    // safeguarded Newton on ψ(λ), using dψ/dλ = Var_λ(L)
    let mut lambda = hi;
    let mut t = tilt_unchecked(regret, lambda, Direction::Sup);
    for _ in 0..MAX_BISECTIONS {
        if t.psi.abs() <= 1e-15 {
            break;
        }
        if t.psi < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let slope = tilted_variance(regret, &t);
        let newton = lambda - t.psi / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next <= lo || next >= hi || next == lambda {
            break;
        }
        lambda = next;
        t = tilt_unchecked(regret, lambda, Direction::Sup);
    }
    t.kl
}

/// Local admissibility level `C*` of action `a`: the largest radius for which
/// its worst-case regret against every rival stays strictly negative.
/// Returns `(C*, binding rival)`; the rival is `None` when `C* = ∞`.
pub fn c_star_with_rival(matrix: &NormalizedLossMatrix, a: usize) -> Result<(f64, Option<usize>)> {
    let k = matrix.n_actions();
    if k < 2 {
        return Err(Error::invalid("local admissibility needs at least 2 actions"));
    }
    if a >= k {
        return Err(Error::invalid(format!("action index {a} out of range (k = {k})")));
    }
    let per_rival: Vec<(usize, f64)> = (0..k)
        .filter(|&r| r != a)
        .map(|r| (r, c_star_against(&regret_losses(matrix, a, r))))
        .collect();
    let (rival, c) = per_rival
        .iter()
        .copied()
        .fold((None, f64::INFINITY), |(br, bc), (r, c)| {
            if c < bc {
                (Some(r), c)
            } else {
                (br, bc)
            }
        });
    Ok((c, rival))
}

pub fn c_star(matrix: &NormalizedLossMatrix, a: usize) -> Result<f64> {
    c_star_with_rival(matrix, a).map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionAdmissibility {
    pub action: usize,
    pub c_star: f64,
    pub binding_rival: Option<usize>,
    /// `(rival, ψ^sup_(a,rival)(C))` along the radius grid.
    pub regret_curves: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub c_grid: Vec<f64>,
    pub actions: Vec<ActionAdmissibility>,
}

pub fn admissibility_report(
    matrix: &NormalizedLossMatrix,
    c_grid: &[f64],
) -> Result<AdmissibilityReport> {
    validate_c_grid(c_grid)?;
    let k = matrix.n_actions();
    let actions = (0..k)
        .into_par_iter()
        .map(|a| -> Result<ActionAdmissibility> {
            let (c_star, binding_rival) = c_star_with_rival(matrix, a)?;
            let regret_curves = (0..k)
                .filter(|&r| r != a)
                .map(|r| {
                    let regret = regret_losses(matrix, a, r);
                    let curve = c_grid
                        .iter()
                        .map(|&c| solve_lambda_for_c(&regret, c, Direction::Sup).map(|t| t.psi))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((r, curve))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ActionAdmissibility {
                action: a,
                c_star,
                binding_rival,
                regret_curves,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdmissibilityReport {
        c_grid: c_grid.to_vec(),
        actions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub c: f64,
    pub weight_variance: f64,
    pub top_mass: f64,
    pub ess: f64,
    pub saturated: bool,
}

/// Weight-degeneracy summaries of the least-favourable tilt along a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    /// Number of atoms in the "top 1%" (`⌈0.01 m⌉`).
    pub top_count: usize,
    /// `top_count / m`; differs from 0.01 when `m` is not a multiple of 100.
    pub top_fraction: f64,
    /// Smallest grid radius with at least 99% of the mass on the top atoms.
    pub c_max: Option<f64>,
}

/// Population variance of a weight vector around `1/m`.
pub fn weight_variance(w: &WeightVector) -> f64 {
    let m = w.len() as f64;
    w.as_slice().iter().map(|x| (x - 1.0 / m).powi(2)).sum::<f64>() / m
}

/// Total mass on the `n` largest weights.
pub fn top_mass(w: &WeightVector, n: usize) -> f64 {
    let mut v = w.as_slice().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.iter().take(n).sum()
}

pub fn calibration_report(losses: &[f64], c_grid: &[f64]) -> Result<CalibrationReport> {
    check_losses(losses)?;
    validate_c_grid(c_grid)?;
    let m = losses.len();
    let top_count = (m as f64 * 0.01).ceil().max(1.0) as usize;
    let rows = c_grid
        .iter()
        .map(|&c| {
            let t = solve_lambda_for_c(losses, c, Direction::Sup)?;
            Ok(CalibrationRow {
                c,
                weight_variance: weight_variance(&t.weights),
                top_mass: top_mass(&t.weights, top_count),
                ess: t.ess,
                saturated: t.saturated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let c_max = rows.iter().find(|r| r.top_mass >= 0.99).map(|r| r.c);
    Ok(CalibrationReport {
        rows,
        top_count,
        top_fraction: top_count as f64 / m as f64,
        c_max,
    })
}

/// Optimal action at each grid radius when every action is scored by its own
/// least-favourable expected loss.
pub fn robust_actions(env: &EnvelopeCurve) -> Vec<usize> {
    (0..env.c_grid.len())
        .map(|g| {
            let v: Vec<f64> = env.actions.iter().map(|a| a.psi_sup[g]).collect();
            argmin_first(&v)
        })
        .collect()
}
