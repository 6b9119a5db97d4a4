//! Subcommand implementations. Every command computes first and writes its
//! files afterwards, finishing with the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use super::io::{self, fmt_num};
use super::manifest::RunLog;
use super::{
    CalibrateArgs, DiagnoseArgs, DpArgs, InputArgs, KlArgs, ScreeningArgs, DEFAULT_C_POINTS,
};
use crate::diagnostics::{all_curves, cvar_crossing, density_loss_scatter, loo_sensitivity};
use crate::dp::{confidence_bands, expected_l1_distance, probability_of_optimality};
use crate::error::Error;
use crate::grid::{validate_grid, GridSpec};
use crate::kl_tilt::{
    admissibility_report, calibration_report, envelope_curve, robust_actions, validate_c_grid,
    Direction,
};
use crate::reverse_kl::solve_reverse;
use crate::sample_model::{NormalizedLossMatrix, SampleBag};
use crate::screening::{
    generate_dataset, schedule_grid, TransitionParams, DEFAULT_AGES, DEFAULT_FREQUENCIES,
};

struct Loaded {
    bag: Option<SampleBag>,
    matrix: NormalizedLossMatrix,
}

fn load(input: &InputArgs, log: &mut RunLog) -> Result<Loaded> {
    let (labels, rows) = io::read_losses(&input.losses)?;
    log.input(&input.losses)?;
    let bag = match &input.samples {
        Some(path) => {
            let bag = io::read_samples(path)?;
            log.input(path)?;
            if bag.m() != rows.len() {
                return Err(Error::DimensionMismatch {
                    what: "sample rows vs loss rows",
                    expected: bag.m(),
                    got: rows.len(),
                }
                .into());
            }
            Some(bag)
        }
        None => None,
    };
    let matrix = if input.no_normalize {
        NormalizedLossMatrix::passthrough(&rows, labels)?
    } else {
        NormalizedLossMatrix::normalize(&rows, labels)?
    };
    if matrix.is_degenerate() {
        log.warn("loss matrix is constant; all actions tie");
    }
    log.note(format!(
        "losses normalized by (L - {}) / ({} - {})",
        fmt_num(matrix.loss_min()),
        fmt_num(matrix.loss_max()),
        fmt_num(matrix.loss_min())
    ));
    Ok(Loaded { bag, matrix })
}

fn parse_grid(spec: &str, what: &str) -> Result<Vec<f64>> {
    let g: GridSpec = spec
        .parse()
        .with_context(|| format!("{what} grid `{spec}`"))?;
    Ok(g.points()?)
}

fn c_grid(spec: Option<&str>, m: usize) -> Result<Vec<f64>> {
    let grid = match spec {
        Some(s) => parse_grid(s, "C")?,
        None => GridSpec::log(1e-4, (m as f64).ln(), DEFAULT_C_POINTS).points()?,
    };
    validate_c_grid(&grid)?;
    Ok(grid)
}

fn fresh_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    nanos ^ (u64::from(std::process::id()) << 32)
}

fn low_ess(m: usize) -> f64 {
    m as f64 / 100.0
}

fn expected_loss_table(matrix: &NormalizedLossMatrix) -> String {
    let mut s = String::from("action,expected_loss,expected_loss_raw\n");
    for (label, psi) in matrix.labels().iter().zip(matrix.expected_losses()) {
        let _ = writeln!(s, "{label},{},{}", fmt_num(psi), fmt_num(matrix.to_raw(psi)));
    }
    s
}

fn summary_head(matrix: &NormalizedLossMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "samples: {}", matrix.n_samples());
    let _ = writeln!(s, "actions: {}", matrix.n_actions());
    let _ = writeln!(s, "loss_min: {}", fmt_num(matrix.loss_min()));
    let _ = writeln!(s, "loss_max: {}", fmt_num(matrix.loss_max()));
    let _ = writeln!(s, "bayes_action: {}", matrix.labels()[matrix.bayes_action()]);
    s
}

pub(super) fn diagnose(args: &DiagnoseArgs) -> Result<()> {
    let mut log = RunLog::start(&args.input.out)?;
    let Loaded { bag, matrix } = load(&args.input, &mut log)?;
    let q = parse_grid(&args.q_grid, "q")?;
    validate_grid(&q, 0.0, 1.0, "q")?;

    let curves = all_curves(&matrix, &q)?;
    let crossing = cvar_crossing(&matrix, &q)?;
    let loo = if args.loo {
        let bag = bag.as_ref().ok_or(Error::MissingField("samples"))?;
        Some(loo_sensitivity(bag, &matrix)?)
    } else {
        None
    };
    let scatter = match bag.as_ref().and_then(SampleBag::log_density) {
        Some(_) => Some(
            (0..matrix.n_actions())
                .map(|a| density_loss_scatter(bag.as_ref().unwrap(), matrix.column(a)))
                .collect::<crate::error::Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let mut out = log.csv("curves.csv", &["action", "kind", "q", "value"])?;
    for c in &curves {
        for (q, v) in c.q.iter().zip(&c.value) {
            out.row([
                c.action_label.clone(),
                c.kind.as_str().to_string(),
                fmt_num(*q),
                fmt_num(*v),
            ])?;
        }
    }
    out.finish()?;
    if let Some(report) = &loo {
        write_loo(&mut log, &matrix, report)?;
    }
    if let Some(pairs) = &scatter {
        let mut out = log.csv("scatter.csv", &["action", "log_density", "loss"])?;
        for (label, col) in matrix.labels().iter().zip(pairs) {
            for (ld, l) in col {
                out.row([label.clone(), fmt_num(*ld), fmt_num(*l)])?;
            }
        }
        out.finish()?;
    }

    let mut s = summary_head(&matrix);
    let _ = writeln!(
        s,
        "cvar_crossing_q: {}",
        crossing.map_or("none".to_string(), fmt_num)
    );
    s.push_str(&expected_loss_table(&matrix));
    log.text("summary.txt", &s)?;
    log.finish("diagnose", args)?;
    Ok(())
}

fn write_loo(
    log: &mut RunLog,
    matrix: &NormalizedLossMatrix,
    report: &crate::diagnostics::LooReport,
) -> Result<()> {
    let m = matrix.n_samples();
    if let Some((j, e)) = report
        .ess_loo
        .iter()
        .enumerate()
        .find(|(_, e)| **e < low_ess(m))
    {
        log.warn(format!(
            "leave-one-out ESS {} below m/100 when removing datum {}",
            fmt_num(*e),
            j + 1
        ));
    }
    if let Some(e) = report.ess_no_prior.filter(|e| *e < low_ess(m)) {
        log.warn(format!("prior-removal ESS {} below m/100", fmt_num(e)));
    }
    let mut out = log.csv("loo.csv", &["action", "datum", "psi_loo", "psi_base", "ess"])?;
    for (a, label) in matrix.labels().iter().enumerate() {
        for (j, psi) in report.psi_loo[a].iter().enumerate() {
            out.row([
                label.clone(),
                (j + 1).to_string(),
                fmt_num(*psi),
                fmt_num(report.baseline[a]),
                fmt_num(report.ess_loo[j]),
            ])?;
        }
        if let (Some(p), Some(e)) = (&report.psi_no_prior, report.ess_no_prior) {
            out.row([
                label.clone(),
                "prior".to_string(),
                fmt_num(p[a]),
                fmt_num(report.baseline[a]),
                fmt_num(e),
            ])?;
        }
    }
    out.finish()?;
    Ok(())
}

pub(super) fn loo(args: &InputArgs) -> Result<()> {
    let mut log = RunLog::start(&args.out)?;
    if args.samples.is_none() {
        return Err(Error::MissingField("samples")).context("loo needs --samples");
    }
    let Loaded { bag, matrix } = load(args, &mut log)?;
    let report = loo_sensitivity(bag.as_ref().expect("checked above"), &matrix)?;
    write_loo(&mut log, &matrix, &report)?;
    log.finish("loo", args)?;
    Ok(())
}

fn write_calibration(
    log: &mut RunLog,
    matrix: &NormalizedLossMatrix,
    action: usize,
    grid: &[f64],
) -> Result<String> {
    let report = calibration_report(matrix.column(action), grid)?;
    let mut out = log.csv(
        "calibration.csv",
        &["C", "weight_variance", "top1pct_mass", "ess"],
    )?;
    for r in &report.rows {
        out.row([
            fmt_num(r.c),
            fmt_num(r.weight_variance),
            fmt_num(r.top_mass),
            fmt_num(r.ess),
        ])?;
    }
    out.finish()?;
    let mut s = String::new();
    let _ = writeln!(s, "calibration_action: {}", matrix.labels()[action]);
    let _ = writeln!(
        s,
        "top_atoms: {} (fraction {})",
        report.top_count,
        fmt_num(report.top_fraction)
    );
    let _ = writeln!(
        s,
        "c_max_99pct_on_top: {}",
        report.c_max.map_or("none".to_string(), fmt_num)
    );
    Ok(s)
}

pub(super) fn kl(args: &KlArgs) -> Result<()> {
    let mut log = RunLog::start(&args.input.out)?;
    let Loaded { matrix, .. } = load(&args.input, &mut log)?;
    let m = matrix.n_samples();
    let grid = c_grid(args.c_grid.as_deref(), m)?;
    let env = envelope_curve(&matrix, &grid)?;
    let adm = admissibility_report(&matrix, &grid)?;
    let labels = matrix.labels();

    let mut saturated = 0usize;
    let mut first_low_ess: Option<(usize, f64)> = None;
    for (a, e) in env.actions.iter().enumerate() {
        for (g, &c) in grid.iter().enumerate() {
            saturated += usize::from(e.saturated_sup[g]) + usize::from(e.saturated_inf[g]);
            let ess = e.ess_sup[g].min(e.ess_inf[g]);
            if ess < low_ess(m) && first_low_ess.is_none_or(|(_, first)| c < first) {
                first_low_ess = Some((a, c));
            }
        }
    }
    if saturated > 0 {
        log.warn(format!(
            "{saturated} envelope points saturated (radius beyond the finite-sample maximum)"
        ));
    }
    if let Some((a, c)) = first_low_ess {
        log.warn(format!(
            "tilted ESS below m/100 from C = {} (action {})",
            fmt_num(c),
            labels[a]
        ));
    }

    // sup-direction multiplier, ESS and saturation; psi_inf alongside
    let mut out = log.csv(
        "envelope.csv",
        &["action", "C", "lambda", "psi_sup", "psi_inf", "ess", "saturated"],
    )?;
    for e in &env.actions {
        for (g, c) in grid.iter().enumerate() {
            out.row([
                e.label.clone(),
                fmt_num(*c),
                fmt_num(e.lambda_sup[g]),
                fmt_num(e.psi_sup[g]),
                fmt_num(e.psi_inf[g]),
                fmt_num(e.ess_sup[g]),
                e.saturated_sup[g].to_string(),
            ])?;
        }
    }
    out.finish()?;

    let mut out = log.csv("regret.csv", &["action", "rival", "C", "psi_regret"])?;
    for a in &adm.actions {
        for (r, curve) in &a.regret_curves {
            for (c, v) in grid.iter().zip(curve) {
                out.row([
                    labels[a.action].clone(),
                    labels[*r].clone(),
                    fmt_num(*c),
                    fmt_num(*v),
                ])?;
            }
        }
    }
    out.finish()?;

    let mut out = log.csv("admissibility.csv", &["action", "c_star"])?;
    for a in &adm.actions {
        out.row([labels[a.action].clone(), fmt_num(a.c_star)])?;
    }
    out.finish()?;

    let bayes = matrix.bayes_action();
    let calib = write_calibration(&mut log, &matrix, bayes, &grid)?;

    let mut s = summary_head(&matrix);
    let _ = writeln!(
        s,
        "envelope_crossing_C: {}",
        env.crossing.map_or("none".to_string(), fmt_num)
    );
    let robust = robust_actions(&env);
    let _ = writeln!(
        s,
        "robust_action_at_max_C: {}",
        labels[*robust.last().expect("grid is nonempty")]
    );
    s.push_str(&calib);
    s.push_str("action,c_star,binding_rival\n");
    for a in &adm.actions {
        let _ = writeln!(
            s,
            "{},{},{}",
            labels[a.action],
            fmt_num(a.c_star),
            a.binding_rival.map_or("none", |r| labels[r].as_str())
        );
    }
    s.push_str(&expected_loss_table(&matrix));
    log.text("summary.txt", &s)?;
    log.finish("kl", args)?;
    Ok(())
}

pub(super) fn reverse_kl(args: &KlArgs) -> Result<()> {
    use rayon::prelude::*;
    let mut log = RunLog::start(&args.input.out)?;
    let Loaded { matrix, .. } = load(&args.input, &mut log)?;
    let grid = c_grid(args.c_grid.as_deref(), matrix.n_samples())?;
    let solutions = (0..matrix.n_actions())
        .into_par_iter()
        .map(|a| {
            grid.iter()
                .map(|&c| solve_reverse(matrix.column(a), c, Direction::Sup))
                .collect::<crate::error::Result<Vec<_>>>()
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    let saturated: usize = solutions.iter().flatten().filter(|s| s.saturated).count();
    if saturated > 0 {
        log.warn(format!(
            "{saturated} reverse-KL points saturated (weights at the double-precision floor)"
        ));
    }
    let mut out = log.csv(
        "reverse_envelope.csv",
        &["action", "C", "nu", "psi", "kl_rev", "min_weight"],
    )?;
    for (label, sols) in matrix.labels().iter().zip(&solutions) {
        for (c, s) in grid.iter().zip(sols) {
            out.row([
                label.clone(),
                fmt_num(*c),
                fmt_num(s.nu),
                fmt_num(s.psi),
                fmt_num(s.kl_rev),
                fmt_num(s.min_weight()),
            ])?;
        }
    }
    out.finish()?;
    log.finish("reverse-kl", args)?;
    Ok(())
}

pub(super) fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut log = RunLog::start(&args.kl.input.out)?;
    let Loaded { matrix, .. } = load(&args.kl.input, &mut log)?;
    let grid = c_grid(args.kl.c_grid.as_deref(), matrix.n_samples())?;
    let action = match &args.action {
        Some(label) => matrix
            .label_index(label)
            .ok_or_else(|| Error::invalid(format!("unknown action `{label}`")))?,
        None => matrix.bayes_action(),
    };
    let s = write_calibration(&mut log, &matrix, action, &grid)?;
    log.text("summary.txt", &s)?;
    log.finish("calibrate", args)?;
    Ok(())
}

#[derive(Serialize)]
struct DpEcho<'a> {
    #[serde(flatten)]
    args: &'a DpArgs,
    seed_used: u64,
}

pub(super) fn dp(args: &DpArgs) -> Result<()> {
    let mut log = RunLog::start(&args.input.out)?;
    let Loaded { matrix, .. } = load(&args.input, &mut log)?;
    let seed = args.seed.unwrap_or_else(fresh_seed);
    log.seed(seed);
    let alphas = parse_grid(&args.alpha_grid, "alpha")?;
    validate_grid(&alphas, f64::MIN_POSITIVE, f64::MAX, "alpha")?;
    let z = parse_grid(&args.z_grid, "z")?;
    validate_grid(&z, 0.0, 1.0, "z")?;

    let profile = probability_of_optimality(&matrix, &alphas, args.draws, seed)?;
    if profile.rejected > 0 {
        log.warn(format!(
            "{} Dirichlet draws underflowed and were redrawn",
            profile.rejected
        ));
    }
    let bands = alphas
        .iter()
        .map(|&a| confidence_bands(a, args.level, &z, args.draws, seed, args.atoms))
        .collect::<crate::error::Result<Vec<_>>>()?;
    let interior: Vec<f64> = z.iter().copied().filter(|x| *x > 0.0 && *x < 1.0).collect();

    let mut out = log.csv("profile.csv", &["alpha", "action", "prob_optimal", "stderr"])?;
    for (g, a) in alphas.iter().enumerate() {
        for (k, label) in matrix.labels().iter().enumerate() {
            out.row([
                fmt_num(*a),
                label.clone(),
                fmt_num(profile.prob[g][k]),
                fmt_num(profile.stderr[g][k]),
            ])?;
        }
    }
    out.finish()?;

    let mut out = log.csv("bands.csv", &["alpha", "z", "lower", "upper"])?;
    for (a, bs) in alphas.iter().zip(&bands) {
        for b in bs {
            out.row([fmt_num(*a), fmt_num(b.z), fmt_num(b.lower), fmt_num(b.upper)])?;
        }
    }
    out.finish()?;

    let mut out = log.csv("expected_l1.csv", &["alpha", "x", "expected_l1"])?;
    for a in &alphas {
        for x in &interior {
            out.row([fmt_num(*a), fmt_num(*x), fmt_num(expected_l1_distance(*a, *x)?)])?;
        }
    }
    out.finish()?;

    log.finish("dp", &DpEcho { args, seed_used: seed })?;
    Ok(())
}

const SCREENING_KEYS: [&str; 14] = [
    "weibull_shape",
    "weibull_scale",
    "lognormal_mu",
    "lognormal_sigma2",
    "loglogistic_kappa",
    "loglogistic_rho",
    "b0",
    "b1",
    "t_bar",
    "r",
    "ages",
    "frequencies_months",
    "m",
    "seed",
];

#[derive(Debug, Default, Deserialize)]
struct ScreeningFile {
    #[serde(flatten)]
    params: TransitionParams,
    ages: Option<Vec<f64>>,
    frequencies_months: Option<Vec<f64>>,
    m: Option<usize>,
    seed: Option<u64>,
}

fn read_screening_file(path: &Path) -> Result<ScreeningFile> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::invalid(format!("{}: {e}", path.display())))?;
    if let Some(k) = table.keys().find(|k| !SCREENING_KEYS.contains(&k.as_str())) {
        return Err(Error::invalid(format!("{}: unknown key `{k}`", path.display())).into());
    }
    Ok(toml::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?)
}

/// Fully resolved screening configuration, echoed in the manifest.
#[derive(Debug, Serialize)]
struct ScreeningRun {
    #[serde(flatten)]
    params: TransitionParams,
    ages: Vec<f64>,
    frequencies_months: Vec<f64>,
    m: usize,
    seed: u64,
    config_file: Option<PathBuf>,
    demo: bool,
}

fn resolve_screening(args: &ScreeningArgs) -> Result<ScreeningRun> {
    let file = match &args.config {
        Some(p) => read_screening_file(p)?,
        None => ScreeningFile::default(),
    };
    let mut p = file.params;
    let overrides = [
        (&mut p.weibull_shape, args.weibull_shape),
        (&mut p.weibull_scale, args.weibull_scale),
        (&mut p.lognormal_mu, args.lognormal_mu),
        (&mut p.lognormal_sigma2, args.lognormal_sigma2),
        (&mut p.loglogistic_kappa, args.loglogistic_kappa),
        (&mut p.loglogistic_rho, args.loglogistic_rho),
        (&mut p.b0, args.b0),
        (&mut p.b1, args.b1),
        (&mut p.t_bar, args.t_bar),
        (&mut p.r, args.r),
    ];
    for (slot, v) in overrides {
        if let Some(v) = v {
            *slot = v;
        }
    }
    Ok(ScreeningRun {
        params: p,
        ages: args
            .ages
            .clone()
            .or(file.ages)
            .unwrap_or_else(|| DEFAULT_AGES.to_vec()),
        frequencies_months: args
            .frequencies_months
            .clone()
            .or(file.frequencies_months)
            .unwrap_or_else(|| DEFAULT_FREQUENCIES.to_vec()),
        m: args.m.or(file.m).unwrap_or(2000),
        seed: args.seed.or(file.seed).unwrap_or_else(fresh_seed),
        config_file: args.config.clone(),
        demo: args.demo,
    })
}

pub(super) fn simulate_screening(args: &ScreeningArgs) -> Result<()> {
    let run = resolve_screening(args)?;
    let mut log = RunLog::start(&args.out)?;
    if let Some(p) = &args.config {
        log.input(p)?;
    }
    log.seed(run.seed);
    log.note("log-logistic sojourn: loglogistic_kappa is the shape, loglogistic_rho the scale (median)");
    log.note("ages in years; frequencies in months; one column per (age, frequency) pair, ages outer");
    let schedules = schedule_grid(&run.ages, &run.frequencies_months)?;
    let data = generate_dataset(&run.params, &schedules, run.m, run.seed)?;

    let mut out = log.csv("samples.csv", &["tB", "tC", "tD"])?;
    for row in data.bag.samples() {
        out.row(row.iter().map(|v| fmt_num(*v)))?;
    }
    let samples_path = out.finish()?;
    let header: Vec<&str> = data.labels.iter().map(String::as_str).collect();
    let mut out = log.csv("losses.csv", &header)?;
    for row in &data.losses {
        out.row(row.iter().map(|v| fmt_num(*v)))?;
    }
    let losses_path = out.finish()?;

    let m = run.m as f64;
    let mut s = format!("individuals: {}\nschedules: {}\nseed: {}\n", run.m, schedules.len(), run.seed);
    s.push_str("schedule,clinical_rate,mean_screens,mean_loss\n");
    for (a, label) in data.labels.iter().enumerate() {
        let clinical = data.clinical.iter().filter(|c| c[a]).count() as f64 / m;
        let screens = data.n_screens.iter().map(|n| n[a] as f64).sum::<f64>() / m;
        let loss = data.losses.iter().map(|l| l[a]).sum::<f64>() / m;
        let _ = writeln!(s, "{label},{},{},{}", fmt_num(clinical), fmt_num(screens), fmt_num(loss));
    }
    log.text("summary.txt", &s)?;
    log.finish("simulate-screening", &run)?;

    if args.demo {
        run_demo(args, run.seed, samples_path, losses_path)?;
    }
    Ok(())
}

fn run_demo(args: &ScreeningArgs, seed: u64, samples: PathBuf, losses: PathBuf) -> Result<()> {
    let input = |dir: &str| InputArgs {
        samples: Some(samples.clone()),
        losses: losses.clone(),
        out: args.out.join(dir),
        no_normalize: false,
    };
    diagnose(&DiagnoseArgs {
        input: input("diagnose"),
        q_grid: args.q_grid.clone(),
        loo: false,
    })
    .context("demo diagnose")?;
    let c_grid = match &args.c_grid {
        Some(g) => g.clone(),
        None => format!("1e-4:{}:16:log", (args_m(&losses)? as f64).ln()),
    };
    kl(&KlArgs {
        input: input("kl"),
        c_grid: Some(c_grid),
    })
    .context("demo kl")?;
    dp(&DpArgs {
        input: input("dp"),
        alpha_grid: args.alpha_grid.clone(),
        draws: args.draws,
        seed: Some(seed),
        level: 0.95,
        atoms: 1000,
        z_grid: "0.05:0.95:19:linear".to_string(),
    })
    .context("demo dp")?;
    Ok(())
}

fn args_m(losses: &Path) -> Result<usize> {
    Ok(io::read_losses(losses)?.1.len())
}
