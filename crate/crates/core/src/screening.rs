//! Four-state semi-Markov disease model (healthy → preclinical → clinical,
//! with death competing) and the loss of periodic screening schedules.
//!
//! An individual is described by three times: onset of the preclinical
//! state `tB`, sojourn in the preclinical state `tC`, and age at death `tD`.
//! A schedule `(t0, δ)` screens at ages `t0, t0 + δ, t0 + 2δ, …`. The loss
//! of a schedule is `r·n + 1_clinical`, the number of screens priced at `r`
//! plus one unit if the disease surfaces clinically.
//!
//! Only the Weibull death-time parameters and `r` have published defaults.
//! The onset, sojourn and false-negative parameters below are placeholders
//! chosen to give plausible ages; supply fitted values for real analyses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample_model::SampleBag;

/// Screening schedule: first screen at age `t0` (years), then every
/// `delta` months.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAction {
    pub t0: f64,
    pub delta: f64,
}

impl ScheduleAction {
    pub fn new(t0: f64, delta: f64) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0 && delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid(format!(
                "schedule needs t0 > 0 and delta > 0, got ({t0}, {delta})"
            )));
        }
        Ok(Self { t0, delta })
    }

    pub fn label(&self) -> String {
        format!("t{}_d{}", self.t0, self.delta)
    }

    /// Age (months, scaled) of the `k`-th screen, used to key detection draws.
    fn screen_key(&self, k: u64) -> u128 {
        let months = self.t0 * 12.0 + k as f64 * self.delta;
        (months * 64.0).round() as u128
    }

    fn screen_age(&self, k: u64) -> f64 {
        self.t0 + k as f64 * self.delta / 12.0
    }
}

/// Transition-time distributions, false-negative curve and cost ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionParams {
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub lognormal_mu: f64,
    pub lognormal_sigma2: f64,
    /// Log-logistic shape.
    pub loglogistic_kappa: f64,
    /// Log-logistic scale (the median sojourn, years).
    pub loglogistic_rho: f64,
    pub b0: f64,
    pub b1: f64,
    pub t_bar: f64,
    /// Cost of one screen relative to a clinical case.
    pub r: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            weibull_shape: 7.233,
            weibull_scale: 82.651,
            // placeholders: median onset ≈ 90 years, median sojourn 3 years,
            // false-negative rate ≈ 0.3 at age 50 falling with age
            lognormal_mu: 4.5,
            lognormal_sigma2: 0.04,
            loglogistic_kappa: 3.0,
            loglogistic_rho: 3.0,
            b0: -0.85,
            b1: -0.05,
            t_bar: 50.0,
            r: 1e-3,
        }
    }
}

impl TransitionParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("weibull_shape", self.weibull_shape),
            ("weibull_scale", self.weibull_scale),
            ("lognormal_sigma2", self.lognormal_sigma2),
            ("loglogistic_kappa", self.loglogistic_kappa),
            ("loglogistic_rho", self.loglogistic_rho),
            ("r", self.r),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("lognormal_mu", self.lognormal_mu),
            ("b0", self.b0),
            ("b1", self.b1),
            ("t_bar", self.t_bar),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Probability that a screen at age `s` misses a preclinical tumour.
    pub fn false_negative(&self, s: f64) -> f64 {
        1.0 / (1.0 + (-self.b0 - self.b1 * (s - self.t_bar)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndividualTimes {
    pub t_b: f64,
    pub t_c: f64,
    pub t_d: f64,
}

impl IndividualTimes {
    pub fn clinical_onset(&self) -> f64 {
        self.t_b + self.t_c
    }
}

/// Draws `(tB, tC, tD)` from independent LogNormal, LogLogistic and Weibull
/// marginals.
pub fn sample_individual<R: Rng + ?Sized>(params: &TransitionParams, rng: &mut R) -> IndividualTimes {
    let death = Weibull::new(params.weibull_scale, params.weibull_shape)
        .expect("validated Weibull parameters");
    let onset = LogNormal::new(params.lognormal_mu, params.lognormal_sigma2.sqrt())
        .expect("validated LogNormal parameters");
    loop {
        let t_d: f64 = death.sample(rng);
        let t_b: f64 = onset.sample(rng);
        let t_c = sample_loglogistic(params.loglogistic_kappa, params.loglogistic_rho, rng);
        let t = IndividualTimes { t_b, t_c, t_d };
        if [t_b, t_c, t_d].iter().all(|x| x.is_finite() && *x > 0.0) {
            return t;
        }
    }
}

/// Inverse-CDF draw: `ρ·(u/(1 − u))^{1/κ}`.
fn sample_loglogistic<R: Rng + ?Sized>(kappa: f64, rho: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    rho * (u / (1.0 - u)).powf(1.0 / kappa)
}

/// Uniform variates shared by every schedule that screens an individual at
/// the same age.
pub trait DetectionDraws {
    /// Uniform on `[0, 1)` for the screen identified by `key`.
    fn uniform(&mut self, key: u128) -> f64;
}

/// Common-random-number detection draws: one ChaCha stream per individual,
/// positioned by screen age.
pub struct KeyedDetection {
    rng: ChaCha8Rng,
}

impl KeyedDetection {
    pub fn new(seed: u64, individual: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DETECTION_SALT);
        rng.set_stream(individual);
        Self { rng }
    }
}

impl DetectionDraws for KeyedDetection {
    fn uniform(&mut self, key: u128) -> f64 {
        // each f64 consumes two 32-bit words
        self.rng.set_word_pos(key * 2);
        self.rng.random()
    }
}

/// Fixed detection outcome, for tests.
pub struct ConstantDetection(pub f64);

impl DetectionDraws for ConstantDetection {
    fn uniform(&mut self, _key: u128) -> f64 {
        self.0
    }
}

const DETECTION_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOutcome {
    pub loss: f64,
    pub n_screens: u64,
    pub clinical: bool,
}

/// Runs one schedule over one life.
///
/// Screens continue while the individual is alive, undetected and not yet
/// clinical. A screen at age `s` inside the preclinical window
/// `[tB, tB + tC)` detects with probability `1 − β(s)`. The clinical
/// indicator is set when onset `tB + tC` precedes death without detection,
/// or when the preclinical state began before the first screen (and before
/// death).
pub fn loss_for_schedule<D: DetectionDraws + ?Sized>(
    action: &ScheduleAction,
    times: &IndividualTimes,
    params: &TransitionParams,
    detection: &mut D,
) -> ScheduleOutcome {
    let onset = times.clinical_onset();
    let mut n_screens = 0u64;
    let mut detected = false;
    let mut k = 0u64;
    loop {
        let s = action.screen_age(k);
        if s >= times.t_d || s >= onset {
            break;
        }
        n_screens += 1;
        if s >= times.t_b {
            let u = detection.uniform(action.screen_key(k));
            if u >= params.false_negative(s) {
                detected = true;
                break;
            }
        }
        k += 1;
    }
    let missed = onset < times.t_d && !detected;
    let before_first = times.t_b < action.t0 && times.t_b < times.t_d;
    let clinical = missed || before_first;
    ScheduleOutcome {
        loss: params.r * n_screens as f64 + if clinical { 1.0 } else { 0.0 },
        n_screens,
        clinical,
    }
}

/// Starting ages (years) of the default schedule grid.
pub const DEFAULT_AGES: [f64; 8] = [55.0, 57.0, 59.0, 61.0, 63.0, 65.0, 67.0, 69.0];
/// Screening intervals (months) of the default schedule grid.
pub const DEFAULT_FREQUENCIES: [f64; 5] = [9.0, 12.0, 15.0, 18.0, 24.0];

/// All `(age, frequency)` combinations, ages outermost.
pub fn schedule_grid(ages: &[f64], frequencies: &[f64]) -> Result<Vec<ScheduleAction>> {
    if ages.is_empty() || frequencies.is_empty() {
        return Err(Error::invalid("schedule grid needs ages and frequencies"));
    }
    ages.iter()
        .flat_map(|&a| frequencies.iter().map(move |&f| ScheduleAction::new(a, f)))
        .collect()
}

pub fn default_schedules() -> Vec<ScheduleAction> {
    schedule_grid(&DEFAULT_AGES, &DEFAULT_FREQUENCIES).expect("default grid is valid")
}

/// Simulated population: times as a [`SampleBag`] (`tB, tC, tD`), and the
/// raw loss matrix (`m` rows, one column per schedule).
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningDataset {
    pub bag: SampleBag,
    pub labels: Vec<String>,
    pub losses: Vec<Vec<f64>>,
    pub clinical: Vec<Vec<bool>>,
    pub n_screens: Vec<Vec<u64>>,
}

pub fn generate_dataset(
    params: &TransitionParams,
    schedules: &[ScheduleAction],
    m: usize,
    seed: u64,
) -> Result<ScreeningDataset> {
    params.validate()?;
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 individuals, got {m}")));
    }
    if schedules.is_empty() {
        return Err(Error::invalid("need at least one schedule"));
    }
    let rows: Vec<(IndividualTimes, Vec<ScheduleOutcome>)> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let times = sample_individual(params, &mut rng);
            let mut det = KeyedDetection::new(seed, i);
            let outcomes = schedules
                .iter()
                .map(|s| loss_for_schedule(s, &times, params, &mut det))
                .collect();
            (times, outcomes)
        })
        .collect();
    let bag = SampleBag::new(
        vec!["tB".into(), "tC".into(), "tD".into()],
        rows.iter().map(|(t, _)| vec![t.t_b, t.t_c, t.t_d]).collect(),
    )?;
    Ok(ScreeningDataset {
        bag,
        labels: schedules.iter().map(ScheduleAction::label).collect(),
        losses: rows
            .iter()
            .map(|(_, o)| o.iter().map(|x| x.loss).collect())
            .collect(),
        clinical: rows
            .iter()
            .map(|(_, o)| o.iter().map(|x| x.clinical).collect())
            .collect(),
        n_screens: rows
            .iter()
            .map(|(_, o)| o.iter().map(|x| x.n_screens).collect())
            .collect(),
    })
}
