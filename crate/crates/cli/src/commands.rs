//! One function per subcommand: validate, run the pipeline, write payloads.

use gpfractal::conditions::{classify_scale, ConditionVerdict};
use gpfractal::dimension::{default_delta_levels, dim_delta_estimate, dim_rho_product, time_grid, DimensionEstimate};
use gpfractal::energy::CapacityVerdict;
use gpfractal::fractal_sets::{cantor_measure, CantorSet};
use gpfractal::gp_sim::sample_paths;
use gpfractal::hitting::{hit_probability_mc, hit_probability_only, run_battery, SmallBall};
use serde::Serialize;

use crate::config::*;
use crate::output::OutDir;
use crate::CliError;

#[derive(Serialize)]
struct CountRow {
    scale: f64,
    count: f64,
    path: String,
}

fn count_rows(est: &DimensionEstimate, path: Option<usize>) -> impl Iterator<Item = CountRow> + '_ {
    let label = path.map(|p| p.to_string()).unwrap_or_default();
    est.counts.iter().map(move |&(scale, count)| CountRow { scale, count, path: label.clone() })
}

pub fn simulate(cfg: &SimulateConfig, out: &mut OutDir) -> Result<(), CliError> {
    let grid = time_grid(&cfg.e, cfg.grid_n)?;
    out.note(&format!("building covariance on {} grid points", grid.len()));
    let cov = cfg.cov_model.build(&cfg.gamma, &grid)?;
    let factor = cov.factor()?;
    let summary = serde_json::json!({
        "grid_points": grid.len(),
        "jitter": factor.jitter,
        "factor_residual": cov.factor_residual()?,
    });
    out.note("sampling paths");
    let batch = sample_paths(&cov, cfg.d, cfg.n_paths, cfg.seed)?;
    let mut bin = Vec::new();
    batch.write_binary(&mut bin)?;
    out.write_bytes("paths.bin", &bin)?;
    if cfg.csv {
        let mut csv = Vec::new();
        batch.write_csv(&mut csv)?;
        out.write_bytes("paths.csv", &csv)?;
    }
    out.write_json("simulate.json", &summary)
}

#[derive(Serialize)]
struct PathDimRow {
    path: usize,
    value: f64,
    stderr: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct IntersectionRow {
    path: usize,
    hits: usize,
    dim_e: Option<f64>,
    dim_e_stderr: Option<f64>,
    dim_f: Option<f64>,
    dim_f_stderr: Option<f64>,
}

pub fn dims(cfg: &DimsConfig, out: &mut OutDir) -> Result<(), CliError> {
    match cfg {
        DimsConfig::Image(x) => {
            let rep = x.run()?;
            let rows: Vec<PathDimRow> = rep
                .per_path
                .iter()
                .enumerate()
                .map(|(path, e)| PathDimRow { path, value: e.value, stderr: e.stderr, diverged: e.diverged })
                .collect();
            out.write_csv("per_path.csv", &rows)?;
            let counts: Vec<CountRow> =
                rep.per_path.iter().enumerate().flat_map(|(p, e)| count_rows(e, Some(p))).collect();
            out.write_csv("counts.csv", &counts)?;
            out.write_json("dims.json", &rep)
        }
        DimsConfig::Intersection(x) => {
            let rep = x.run()?;
            let rows: Vec<IntersectionRow> = rep
                .per_path
                .iter()
                .enumerate()
                .map(|(path, p)| IntersectionRow {
                    path,
                    hits: p.hits,
                    dim_e: p.dim_e_hat.as_ref().map(|e| e.value),
                    dim_e_stderr: p.dim_e_hat.as_ref().map(|e| e.stderr),
                    dim_f: p.dim_f_hat.as_ref().map(|e| e.value),
                    dim_f_stderr: p.dim_f_hat.as_ref().map(|e| e.stderr),
                })
                .collect();
            out.write_csv("per_path.csv", &rows)?;
            let counts: Vec<CountRow> = rep
                .per_path
                .iter()
                .enumerate()
                .filter_map(|(p, e)| e.dim_e_hat.as_ref().map(|d| (p, d)))
                .flat_map(|(p, e)| count_rows(e, Some(p)))
                .collect();
            out.write_csv("counts.csv", &counts)?;
            out.write_json("dims.json", &rep)
        }
        DimsConfig::Delta { gamma, e, n_range } => {
            let levels = match n_range {
                Some(r) => *r,
                None => default_delta_levels(e, gamma)?,
            };
            let est = dim_delta_estimate(e, gamma, levels)?;
            out.write_csv("counts.csv", &count_rows(&est, None).collect::<Vec<_>>())?;
            out.write_json("dims.json", &est)
        }
        DimsConfig::Product { gamma, e, f, n_range } => {
            let levels = match n_range {
                Some(r) => *r,
                None => default_delta_levels(e, gamma)?,
            };
            let est = dim_rho_product(e, gamma, f, levels)?;
            out.write_csv("counts.csv", &count_rows(&est, None).collect::<Vec<_>>())?;
            out.write_json("dims.json", &est)
        }
    }
}

#[derive(Serialize)]
struct HitRow {
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    hits: usize,
    n_paths: usize,
    tol: f64,
    grid_n: usize,
    guard: f64,
    uniform_guard: f64,
    capacity: Option<f64>,
    capacity_verdict: Option<String>,
    content: Option<f64>,
}

#[derive(Serialize)]
struct SmallBallRow {
    r: f64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    hits: usize,
    n_paths: usize,
    log_half_width: f64,
    r_pow_d: f64,
    fgamma_bound: Option<f64>,
}

fn verdict_name(v: &CapacityVerdict) -> String {
    match v {
        CapacityVerdict::Positive { .. } => "positive",
        CapacityVerdict::Zero => "zero",
        CapacityVerdict::Inconclusive => "inconclusive",
    }
    .to_string()
}

pub fn hit(cfg: &HitConfig, out: &mut OutDir) -> Result<(), CliError> {
    let p = &cfg.problem;
    out.note("estimating hitting probability");
    let rep = if cfg.with_terms { hit_probability_mc(p, &cfg.terms)? } else { hit_probability_only(p)? };
    let row = HitRow {
        p_hat: rep.p_hat,
        ci_low: rep.ci_low,
        ci_high: rep.ci_high,
        hits: rep.hits,
        n_paths: rep.n_paths,
        tol: rep.tol,
        grid_n: rep.grid_n,
        guard: rep.guard.pointwise,
        uniform_guard: rep.guard.uniform,
        capacity: rep.capacity_term,
        capacity_verdict: rep.capacity_verdict.as_ref().map(verdict_name),
        content: rep.content_term,
    };
    out.write_csv("hit.csv", &[row])?;
    let mut report = serde_json::json!({ "hit": rep });
    if let Some(sb) = &cfg.small_ball {
        out.note("small-ball sweep");
        let exp = SmallBall {
            gamma: p.gamma.clone(),
            cov_model: p.cov_model,
            t0: sb.t0,
            z: sb.z.clone(),
            n_paths: p.n_paths,
            seed: p.seed,
            window_points: sb.window_points,
        };
        let sweep = exp.sweep(&sb.radii)?;
        let rows: Vec<SmallBallRow> = sweep
            .reports
            .iter()
            .map(|r| SmallBallRow {
                r: r.r,
                p_hat: r.p_hat,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                hits: r.hits,
                n_paths: r.n_paths,
                log_half_width: r.log_half_width,
                r_pow_d: r.r_pow_d,
                fgamma_bound: r.fgamma_bound,
            })
            .collect();
        out.write_csv("small_ball.csv", &rows)?;
        report["small_ball"] = serde_json::to_value(&sweep).map_err(|e| CliError::Config(e.to_string()))?;
    }
    out.write_json("hit.json", &report)
}

#[derive(Serialize)]
struct CapacityRow {
    resolution: f64,
    atoms: usize,
    e_min: f64,
    gap: f64,
    converged: bool,
    capacity: f64,
}

pub fn capacity(cfg: &CapacityConfig, out: &mut OutDir) -> Result<(), CliError> {
    out.note("building candidate pool and minimising energies");
    let rep = cfg.run()?;
    let rows: Vec<CapacityRow> = (0..rep.resolutions.len())
        .map(|k| CapacityRow {
            resolution: rep.resolutions[k],
            atoms: rep.atom_counts[k],
            e_min: rep.e_min[k],
            gap: rep.gaps[k],
            converged: rep.converged[k],
            capacity: rep.capacity_estimates[k],
        })
        .collect();
    out.write_csv("capacity.csv", &rows)?;
    out.write_json("capacity.json", &rep)
}

#[derive(Serialize)]
struct VerdictRow {
    family: String,
    condition: String,
    verdict: String,
    constant: f64,
    unresolved: bool,
}

#[derive(Serialize)]
struct TraceRow {
    family: String,
    condition: String,
    log_x: f64,
    x: f64,
    ratio: f64,
    log_ratio: f64,
}

fn condition_name(v: &ConditionVerdict) -> String {
    serde_json::to_value(v.condition).ok().and_then(|s| s.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn check_scale(cfg: &CheckScaleConfig, out: &mut OutDir) -> Result<(), CliError> {
    let mut verdicts = Vec::new();
    let mut traces = Vec::new();
    let mut reports = Vec::new();
    for f in &cfg.scales {
        out.note(&format!("classifying {f}"));
        let c = classify_scale(f, cfg.eps, &cfg.grid)?;
        for v in [&c.strong, &c.weak, &c.psi_sqrt_log] {
            let family = f.to_string();
            let condition = condition_name(v);
            verdicts.push(VerdictRow {
                family: family.clone(),
                condition: condition.clone(),
                verdict: v.verdict.to_string(),
                constant: v.fitted_constant,
                unresolved: v.unresolved,
            });
            for k in 0..v.log_x.len() {
                traces.push(TraceRow {
                    family: family.clone(),
                    condition: condition.clone(),
                    log_x: v.log_x[k],
                    x: v.log_x[k].exp(),
                    ratio: v.ratios[k],
                    log_ratio: v.log_ratios[k],
                });
            }
        }
        reports.push(c);
    }
    out.write_csv("verdicts.csv", &verdicts)?;
    out.write_csv("traces.csv", &traces)?;
    out.write_json("check_scale.json", &reports)
}

#[derive(Serialize)]
struct AtomRow {
    t: f64,
    weight: f64,
}

#[derive(Serialize)]
struct IntervalRow {
    level: usize,
    left: f64,
    right: f64,
}

pub fn cantor(cfg: &CantorConfig, out: &mut OutDir) -> Result<(), CliError> {
    let set = CantorSet::try_from(cfg.clone())?;
    out.write_json("cantor.json", &set.export()?)?;
    let mut rows = Vec::new();
    let last = if out.trace { 0 } else { set.depth() };
    for level in last..=set.depth() {
        rows.extend(set.level(level)?.into_iter().map(|(left, right)| IntervalRow { level, left, right }));
    }
    out.write_csv("intervals.csv", &rows)?;
    let m = cantor_measure(&set)?;
    let atoms: Vec<AtomRow> = m.atoms.iter().zip(&m.weights).map(|(a, &weight)| AtomRow { t: a.t, weight }).collect();
    out.write_csv("measure.csv", &atoms)
}

#[derive(Serialize)]
struct BatteryRow {
    index: usize,
    e: String,
    f: String,
    tol: f64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    hits: usize,
    n_paths: usize,
    capacity: Option<f64>,
    capacity_verdict: Option<String>,
    sweep_verdict: Option<String>,
    content: Option<f64>,
    dim_rho: f64,
    critical: bool,
    lower_ok: bool,
    upper_ok: bool,
    orientation_ok: Option<bool>,
}

/// Compact JSON of a set description, for a single CSV cell.
fn compact<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

pub fn battery(cfg: &BatteryConfig, out: &mut OutDir) -> Result<(), CliError> {
    out.note(&format!("running {} instances", cfg.instances.len()));
    let rep = run_battery(cfg)?;
    let rows: Vec<BatteryRow> = rep
        .rows
        .iter()
        .map(|r| BatteryRow {
            index: r.index,
            e: compact(&r.hit.e),
            f: compact(&r.hit.f),
            tol: r.hit.tol,
            p_hat: r.hit.p_hat,
            ci_low: r.hit.ci_low,
            ci_high: r.hit.ci_high,
            hits: r.hit.hits,
            n_paths: r.hit.n_paths,
            capacity: r.hit.capacity_term,
            capacity_verdict: r.hit.capacity_verdict.as_ref().map(verdict_name),
            sweep_verdict: r.hit.sweep_verdict.as_ref().map(verdict_name),
            content: r.hit.content_term,
            dim_rho: r.dim_rho,
            critical: r.critical,
            lower_ok: r.lower_ok,
            upper_ok: r.upper_ok,
            orientation_ok: r.orientation_ok,
        })
        .collect();
    out.write_csv("battery.csv", &rows)?;
    out.write_json("battery.json", &rep)
}
