//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the solvers under test.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m` losses drawn uniformly from `[0, 1)`.
pub fn random_losses(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random::<f64>()).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn weighted_mean(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(w, x)| w * x).sum()
}

/// `Σ w log(m w)`, with `0 log 0 = 0`.
pub fn forward_kl(w: &[f64]) -> f64 {
    let m = w.len() as f64;
    w.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * (m * x).ln())
        .sum()
}

/// `(1/m) Σ log(1/(m w))`.
pub fn reverse_kl(w: &[f64]) -> f64 {
    let m = w.len() as f64;
    w.iter().map(|x| -(m * x).ln()).sum::<f64>() / m
}

/// Maximizes `objective` over the probability simplex in `m ≤ 4` dimensions
/// subject to `feasible`, by an exhaustive grid followed by repeated local
/// grids shrinking around the incumbent. Returns `(best value, argmax)`.
pub fn simplex_search(
    m: usize,
    objective: &dyn Fn(&[f64]) -> f64,
    feasible: &dyn Fn(&[f64]) -> bool,
) -> (f64, Vec<f64>) {
    assert!((2..=4).contains(&m));
    let free = m - 1;
    let coarse = match m {
        2 => 4000,
        3 => 300,
        _ => 70,
    };
    let mut best = (f64::NEG_INFINITY, vec![1.0 / m as f64; m]);
    let consider = |head: &[f64], best: &mut (f64, Vec<f64>)| {
        let rest = 1.0 - head.iter().sum::<f64>();
        if rest < -1e-15 || head.iter().any(|x| *x < 0.0) {
            return;
        }
        let mut w = head.to_vec();
        w.push(rest.max(0.0));
        if feasible(&w) {
            let v = objective(&w);
            if v > best.0 {
                *best = (v, w);
            }
        }
    };
    // exhaustive pass over a regular lattice
    let h = 1.0 / coarse as f64;
    fn lattice(free: usize, left: usize, head: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if head.len() == free {
            visit(head);
            return;
        }
        for k in 0..=left {
            head.push(k);
            lattice(free, left - k, head, visit);
            head.pop();
        }
    }
    lattice(free, coarse, &mut Vec::new(), &mut |idx| {
        let head: Vec<f64> = idx.iter().map(|&k| k as f64 * h).collect();
        consider(&head, &mut best);
    });
    // zoom
    let per_dim: usize = match m {
        2 => 201,
        3 => 41,
        _ => 17,
    };
    // pattern search: move the window with the incumbent, shrink it only
    // once the incumbent stays well inside
    let mut radius = 2.0 * h;
    for _ in 0..400 {
        let centre: Vec<f64> = best.1[..free].to_vec();
        let step = 2.0 * radius / (per_dim - 1) as f64;
        let mut idx = vec![0usize; free];
        loop {
            let head: Vec<f64> = idx
                .iter()
                .zip(&centre)
                .map(|(&k, c)| c - radius + k as f64 * step)
                .collect();
            consider(&head, &mut best);
            let mut d = 0;
            while d < free {
                idx[d] += 1;
                if idx[d] < per_dim {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == free {
                break;
            }
        }
        let moved = best.1[..free]
            .iter()
            .zip(&centre)
            .any(|(b, c)| (b - c).abs() > 0.5 * radius);
        if !moved {
            radius *= 0.35;
        }
        if radius < 1e-13 {
            break;
        }
    }
    best
}

/// Worst-case expected loss over `{w : KL(w ‖ uniform) ≤ c}` by search.
pub fn forward_sup_oracle(losses: &[f64], c: f64) -> f64 {
    simplex_search(
        losses.len(),
        &|w| weighted_mean(w, losses),
        &|w| forward_kl(w) <= c,
    )
    .0
}

pub fn forward_inf_oracle(losses: &[f64], c: f64) -> f64 {
    -simplex_search(
        losses.len(),
        &|w| -weighted_mean(w, losses),
        &|w| forward_kl(w) <= c,
    )
    .0
}

/// Worst-case expected loss over `{w > 0 : KL(uniform ‖ w) ≤ c}` by search.
pub fn reverse_sup_oracle(losses: &[f64], c: f64) -> f64 {
    simplex_search(
        losses.len(),
        &|w| weighted_mean(w, losses),
        &|w| w.iter().all(|x| *x > 0.0) && reverse_kl(w) <= c,
    )
    .0
}

/// Upper-tail mean of the worst `k` losses, by sorting.
pub fn top_k_mean(losses: &[f64], k: usize) -> f64 {
    let mut v = losses.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v[..k].iter().sum::<f64>() / k as f64
}

/// Mean absolute deviation of `Beta(a, b)` about `centre` by Monte Carlo,
/// returning `(estimate, standard error)`.
pub fn beta_mad_mc(a: f64, b: f64, centre: f64, n: usize, seed: u64) -> (f64, f64) {
    use rand_distr::{Beta, Distribution};
    let mut r = rng(seed);
    let dist = Beta::new(a, b).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| (dist.sample(&mut r) - centre).abs()).collect();
    let mu = mean(&xs);
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mu, (var / n as f64).sqrt())
}

/// Writes a conjugate normal-mean toy problem: posterior draws with
/// per-datum log-likelihoods, log prior and log posterior density, and a
/// squared-error loss file for three point estimates. Returns
/// `(samples path, losses path)`.
pub fn write_toy_inputs(dir: &std::path::Path, m: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    use rand_distr::{Distribution, Normal};
    use std::fmt::Write as _;
    let data = [0.3, -0.5, 1.2, 0.8, 0.1];
    let prior_sd: f64 = 10.0;
    let precision = data.len() as f64 + prior_sd.powi(-2);
    let post_mean = data.iter().sum::<f64>() / precision;
    let post_sd = precision.powf(-0.5);
    let ln_norm = |x: f64, mu: f64, sd: f64| {
        -0.5 * ((x - mu) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let mut r = rng(seed);
    let post = Normal::new(post_mean, post_sd).unwrap();
    let actions = [("zero", 0.0), ("mean", post_mean), ("high", 1.5)];

    let mut samples = String::from("theta,log_density,log_prior");
    for j in 1..=data.len() {
        let _ = write!(samples, ",loglik_{j}");
    }
    samples.push('\n');
    let mut losses = actions.iter().map(|a| a.0).collect::<Vec<_>>().join(",");
    losses.push('\n');
    for _ in 0..m {
        let t: f64 = post.sample(&mut r);
        let _ = write!(
            samples,
            "{t:e},{:e},{:e}",
            ln_norm(t, post_mean, post_sd),
            ln_norm(t, 0.0, prior_sd)
        );
        for x in data {
            let _ = write!(samples, ",{:e}", ln_norm(x, t, 1.0));
        }
        samples.push('\n');
        let row: Vec<String> = actions.iter().map(|(_, a)| format!("{:e}", (t - a).powi(2))).collect();
        losses.push_str(&row.join(","));
        losses.push('\n');
    }
    let sp = dir.join("samples.csv");
    let lp = dir.join("losses.csv");
    std::fs::write(&sp, samples).unwrap();
    std::fs::write(&lp, losses).unwrap();
    (sp, lp)
}
