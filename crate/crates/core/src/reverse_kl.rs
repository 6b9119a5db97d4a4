//! Least-favourable weights under the reverse neighbourhood
//! `KL(π̃_I ‖ π̃) ≤ C`, where `KL(π̃_I ‖ π̃) = (1/m) Σ log(1 / (m w_i))`.
//!
//! Maximizing `Σ w_i L_i` over the simplex under this constraint is a convex
//! program. Its stationarity conditions give
//!
//! ```text
//! w_i = μ / (m (ν − L_i)),   ν > max L,
//! ```
//!
//! with `μ` fixed by `Σ w_i = 1`. The realized divergence decreases
//! monotonically in `ν` (to 0 as `ν → ∞`), so the program reduces to a
//! scalar root search on `ν`. The minimizing direction mirrors this with
//! `ν < min L`.

use crate::error::{Error, Result};
use crate::kl_tilt::Direction;
use crate::sample_model::{dot, sample_mean, WeightVector};

const BRACKET_EPS: f64 = 1e-12;
const MAX_STEPS: usize = 2000;
const MIN_GAP: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseSolution {
    pub weights: WeightVector,
    /// Dual threshold `ν`; `±∞` for the uniform (C = 0) solution.
    pub nu: f64,
    pub kl_rev: f64,
    pub psi: f64,
    pub baseline: f64,
    pub direction: Direction,
    /// Constant losses: uniform weights returned for every radius.
    pub degenerate: bool,
    /// The requested radius is beyond what double precision can represent
    /// with strictly positive weights; the closest representable solution is
    /// returned.
    pub saturated: bool,
}

impl ReverseSolution {
    pub fn min_weight(&self) -> f64 {
        self.weights
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(1/m) Σ log(1 / (m w_i))`; `+∞` when any weight is zero.
pub fn reverse_kl(weights: &WeightVector) -> f64 {
    let w = weights.as_slice();
    if w.contains(&0.0) {
        return f64::INFINITY;
    }
    let m = w.len() as f64;
    (-w.iter().map(|x| (m * x).ln()).sum::<f64>() / m).max(0.0)
}

/// Weights and divergence at gap `g = ν − max L` for the maximizing
/// direction, computed around the mean to keep small radii accurate.
struct KktPoint {
    weights: Vec<f64>,
    kl: f64,
}

fn kkt_point(losses: &[f64], top: f64, mean: f64, gap: f64) -> KktPoint {
    let m = losses.len() as f64;
    // ν − mean, and D_i = ν − L_i
    let centre = gap + (top - mean);
    let d: Vec<f64> = losses.iter().map(|l| gap + (top - l)).collect();
    // KL = log(mean(1/D)·(ν − mean)) + mean(log(D/(ν − mean)))
    //    = ln_1p(mean((L − mean)/D)) + mean(ln_1p(−(L − mean)/(ν − mean)))
    let a = losses
        .iter()
        .zip(&d)
        .map(|(l, di)| (l - mean) / di)
        .sum::<f64>()
        / m;
    let b = losses
        .iter()
        .zip(&d)
        .map(|(l, di)| {
            let r = (l - mean) / centre;
            if r > 0.5 {
                (di / centre).ln()
            } else {
                (-r).ln_1p()
            }
        })
        .sum::<f64>()
        / m;
    let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
    let total: f64 = inv.iter().sum();
    KktPoint {
        weights: inv.into_iter().map(|x| x / total).collect(),
        kl: (a.ln_1p() + b).max(0.0),
    }
}

/// Solves the reverse-KL least (or most) favourable reweighting at radius `c`.
pub fn solve_reverse(losses: &[f64], c: f64, direction: Direction) -> Result<ReverseSolution> {
    if losses.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 losses, got {}",
            losses.len()
        )));
    }
    if losses.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("losses must be finite"));
    }
    if c.is_nan() || c < 0.0 {
        return Err(Error::invalid(format!("radius C must be nonnegative, got {c}")));
    }
    let m = losses.len();
    let baseline = sample_mean(losses);
    let uniform = |degenerate: bool| ReverseSolution {
        weights: WeightVector::uniform(m),
        nu: match direction {
            Direction::Sup => f64::INFINITY,
            Direction::Inf => f64::NEG_INFINITY,
        },
        kl_rev: 0.0,
        psi: baseline,
        baseline,
        direction,
        degenerate,
        saturated: false,
    };
    if losses.iter().all(|&l| l == losses[0]) {
        return Ok(uniform(true));
    }
    if c == 0.0 {
        return Ok(uniform(false));
    }

    // the minimizing problem is the maximizing one on −L
    let work: Vec<f64> = match direction {
        Direction::Sup => losses.to_vec(),
        Direction::Inf => losses.iter().map(|l| -l).collect(),
    };
    let top = work.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = work.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = sample_mean(&work);
    let at = |g: f64| kkt_point(&work, top, mean, g);

    // bracket: g_small has KL ≥ c, g_large has KL ≤ c
    let g0 = top - bottom + BRACKET_EPS;
    let (mut g_small, mut g_large);
    let p0 = at(g0);
    let mut saturated = false;
    if p0.kl > c {
        g_small = g0;
        g_large = 2.0 * g0;
        while at(g_large).kl > c {
            g_small = g_large;
            g_large *= 2.0;
        }
    } else {
        g_large = g0;
        g_small = 0.5 * g0;
        while at(g_small).kl < c {
            g_large = g_small;
            g_small *= 0.5;
            if g_small < MIN_GAP {
                saturated = true;
                break;
            }
        }
    }

    let best_g = if saturated {
        g_small
    } else {
        // bisection in log(gap)
        let mut best_g = g_large;
        let mut best_err = f64::INFINITY;
        for _ in 0..MAX_STEPS {
            let mid = (g_small * g_large).sqrt();
            if !(mid > g_small && mid < g_large) {
                break;
            }
            let kl = at(mid).kl;
            let err = (kl - c).abs();
            if err < best_err {
                best_err = err;
                best_g = mid;
            }
            if err <= 1e-13 * c {
                break;
            }
            if kl > c {
                g_small = mid;
            } else {
                g_large = mid;
            }
        }
        best_g
    };
    let best = at(best_g);
    let gap_nu = top + best_g;
    let kl_rev = best.kl;
    let weights = WeightVector::from_normalized_unchecked(best.weights);
    let psi = dot(weights.as_slice(), losses);
    Ok(ReverseSolution {
        nu: match direction {
            Direction::Sup => gap_nu,
            Direction::Inf => -gap_nu,
        },
        kl_rev,
        weights,
        psi,
        baseline,
        direction,
        degenerate: false,
        saturated,
    })
}
