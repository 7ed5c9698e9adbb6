//! The subcommands. Each returns the paths it wrote.

use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;

use tipwarn::drift::{rate_tipping_deterministic, rate_tipping_threshold, DriftModel, RateTippingConfig, SaddleNodeNonlinearDrift};
use tipwarn::grid::{SpatialGrid, TimeGrid};
use tipwarn::indicators::{
    fit_kappa_c, run_indicators, BaselineOptions, BaselineTable, IndicatorSeries, PipelineOptions,
};
use tipwarn::mc::{compare, simulate, EnsembleConfig, InitialSampler};
use tipwarn::monsoon::{escape_curve, MonsoonModel, SweepPoint};
use tipwarn::solver::{check_admissibility, AdmissibilityReport};
use tipwarn::Error;

use crate::config::{BaselineSource, ModelConfig, ScenarioConfig, SweepPointConfig};
use crate::output::{density_table, fmt, fmt_opt, header, series_csv, write_atomic};
use crate::CliError;

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub out: PathBuf,
    /// Fail on admissibility violations even if the config does not ask to.
    pub strict: bool,
}

impl Context {
    fn strict(&self, cfg: &ScenarioConfig) -> bool {
        self.strict || cfg.strict_admissibility
    }
}

/// Kramers window for the baseline decay-rate fit.
pub const KAPPA_C_WINDOW: f64 = 0.05;

/// Grid points of the deterministic rate-tipping table.
const RATE_TABLE_POINTS: usize = 21;

/// Cumulative-escape level reported by sweeps.
const ESCAPE_LEVEL: f64 = 0.5;

#[allow(clippy::large_enum_variant)]
enum Built {
    Plain(Box<dyn DriftModel>),
    Monsoon(MonsoonModel),
}

impl Built {
    fn new(cfg: &ScenarioConfig) -> Result<Self, CliError> {
        Ok(match cfg.model {
            ModelConfig::Monsoon { .. } => Built::Monsoon(cfg.monsoon_model()?),
            _ => Built::Plain(cfg.build_model()?),
        })
    }

    fn model(&self) -> &dyn DriftModel {
        match self {
            Built::Plain(m) => m.as_ref(),
            Built::Monsoon(m) => m,
        }
    }

    /// Header lines describing the model state after a run.
    fn metadata(&self) -> Vec<(&'static str, String)> {
        match self {
            Built::Plain(_) => vec![],
            Built::Monsoon(m) => {
                let s = m.present_state();
                vec![
                    ("present_q_a", fmt(s.q_a)),
                    ("present_t_a", fmt(s.t_a)),
                    ("soil_moisture", fmt(m.soil_moisture())),
                    ("clamped_evaluations", m.clamped_evaluations().to_string()),
                ]
            }
        }
    }
}

fn admissibility(
    cfg: &ScenarioConfig,
    model: &dyn DriftModel,
    g: &SpatialGrid,
    tg: &TimeGrid,
    strict: bool,
) -> Result<AdmissibilityReport, CliError> {
    let report = check_admissibility(model, g, tg, cfg.d, (tg.t0(), tg.t_end()))?;
    if !report.passed() {
        if strict {
            return Err(Error::Admissibility(report.summary()).into());
        }
        warn!("{}: admissibility check failed: {}", cfg.name, report.summary());
    }
    Ok(report)
}

fn load_baseline(cfg: &ScenarioConfig) -> Result<Option<BaselineTable>, CliError> {
    Ok(match &cfg.outputs.baseline {
        None => None,
        Some(BaselineSource::Build) => Some(BaselineTable::build(
            &BaselineTable::default_grid(),
            &BaselineOptions::default(),
        )?),
        Some(BaselineSource::File(p)) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read baseline {}: {e}", p.display())))?;
            Some(BaselineTable::from_csv(&text)?)
        }
    })
}

/// Step indices of the requested density times.
fn snapshot_steps(cfg: &ScenarioConfig, tg: &TimeGrid) -> Result<Vec<usize>, CliError> {
    cfg.outputs
        .densities
        .iter()
        .map(|&t| {
            let n = if tg.n_steps() == 0 {
                0.0
            } else {
                ((t - tg.t0()) / tg.dt()).round()
            };
            if (tg.time(n as usize) - t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(CliError::Validation(format!(
                    "density time {t} is not on the time grid"
                )));
            }
            Ok(n as usize)
        })
        .collect()
}

struct PipelineRun {
    built: Built,
    grid: SpatialGrid,
    series: IndicatorSeries,
    report: AdmissibilityReport,
}

fn pipeline(cfg: &ScenarioConfig, ctx: &Context) -> Result<PipelineRun, CliError> {
    let strict = ctx.strict(cfg);
    let built = Built::new(cfg)?;
    let model = built.model();
    let g = cfg.spatial_grid()?;
    let tg = cfg.time_grid()?;
    let report = admissibility(cfg, model, &g, &tg, strict)?;
    let baseline = load_baseline(cfg)?;
    let steps = snapshot_steps(cfg, &tg)?;
    let initial = cfg.initial_density(model, &g)?;
    let opts = PipelineOptions {
        strict,
        lag1: cfg.outputs.lag1,
        kramers: cfg.outputs.kramers,
        quasi_static_linear: cfg.outputs.quasi_static,
        baseline: baseline.as_ref(),
        lenient_baseline: true,
        snapshot_every: None,
        snapshot_steps: &steps,
    };
    info!("{}: {} steps on {} nodes", cfg.name, tg.n_steps(), g.len());
    let series = run_indicators(model, &g, &tg, cfg.d, &initial, &opts)?;
    Ok(PipelineRun {
        built,
        grid: g,
        series,
        report,
    })
}

fn run_metadata(run: &PipelineRun) -> Vec<(&'static str, String)> {
    let mut meta = vec![("admissibility", run.report.summary())];
    meta.extend(run.built.metadata());
    meta
}

/// Fokker-Planck pipeline: indicator series, density snapshots and the
/// model-specific extras (escape against albedo, rate-tipping table).
pub fn run(cfg: &ScenarioConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    Ok(run_and_keep(cfg, ctx)?.0)
}

fn run_and_keep(cfg: &ScenarioConfig, ctx: &Context) -> Result<(Vec<PathBuf>, PipelineRun), CliError> {
    let r = pipeline(cfg, ctx)?;
    let meta = run_metadata(&r);
    let mut written = Vec::new();
    let name = &cfg.name;
    if cfg.outputs.series {
        written.push(write_atomic(
            &ctx.out,
            &format!("{name}_series.csv"),
            &series_csv(cfg, &r.series, &meta),
        )?);
    }
    if !cfg.outputs.densities.is_empty() {
        let exact = |x: f64, t: f64| cfg.analytic_density(x, t).unwrap_or(f64::NAN);
        let analytic: Option<&dyn Fn(f64, f64) -> f64> = match cfg.model {
            ModelConfig::Straight { .. } => Some(&exact),
            _ => None,
        };
        let text = header(cfg, &meta) + &density_table(&r.grid, &r.series.snapshots, analytic);
        written.push(write_atomic(&ctx.out, &format!("{name}_densities.csv"), &text)?);
    }
    if let Built::Monsoon(m) = &r.built {
        let path = m.albedo();
        let mut text = header(cfg, &meta) + "a_sys,cumulative_escape\n";
        for row in &r.series.rows {
            text.push_str(&format!("{},{}\n", fmt(path.at(row.t)), fmt(row.cumulative_escape)));
        }
        written.push(write_atomic(&ctx.out, &format!("{name}_escape.csv"), &text)?);
    }
    if let Some(rt) = cfg.rate_threshold {
        written.push(rate_table(cfg, ctx, rt.eps_lo, rt.eps_hi, rt.tol)?);
    }
    Ok((written, r))
}

fn rate_table(cfg: &ScenarioConfig, ctx: &Context, lo: f64, hi: f64, tol: f64) -> Result<PathBuf, CliError> {
    let ModelConfig::SaddleNonlinear { p0, lambda_max, .. } = cfg.model else {
        return Err(CliError::Validation(
            "rate_threshold needs the saddle_nonlinear model".into(),
        ));
    };
    let rc = RateTippingConfig::default();
    let (b_lo, b_hi) = rate_tipping_threshold(p0, lambda_max, lo, hi, tol, &rc)?;
    let mut text = header(
        cfg,
        &[
            ("threshold_lo", fmt(b_lo)),
            ("threshold_hi", fmt(b_hi)),
            ("horizon", fmt(rc.horizon)),
            ("x_blow", fmt(rc.x_blow)),
        ],
    ) + "eps,tipped,blow_up_time,max_past_fold,final_x\n";
    for k in 0..RATE_TABLE_POINTS {
        let eps = lo + (hi - lo) * k as f64 / (RATE_TABLE_POINTS - 1) as f64;
        let o = rate_tipping_deterministic(&SaddleNodeNonlinearDrift::new(p0, eps, lambda_max)?, &rc)?;
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(eps),
            o.tipped,
            fmt_opt(o.blow_up_time),
            fmt_opt(o.max_past_fold),
            fmt(o.final_x)
        ));
    }
    write_atomic(&ctx.out, &format!("{}_rate.csv", cfg.name), &text)
}

/// Fokker-Planck run plus an independent ensemble, compared by z-scores.
pub fn mc(cfg: &ScenarioConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let Some(mc) = &cfg.mc else {
        return Err(CliError::Validation("the mc subcommand needs an `mc` block".into()));
    };
    let r = pipeline(cfg, ctx)?;
    let model = r.built.model();
    let ens = EnsembleConfig::for_grid(&r.grid, mc.n_paths, mc.dt_mc, mc.seed);
    let initial = cfg.initial_density(model, &r.grid)?;
    let sampler = InitialSampler::from_density(&initial, &r.grid)?;
    let summary = simulate(
        model,
        cfg.d,
        &ens,
        &sampler,
        cfg.time.t0,
        &mc.sample_times,
        r.series.dt,
    )?;
    let cmp = compare(&r.series, &summary)?;
    if cmp.flagged() {
        warn!(
            "{}: Fokker-Planck and ensemble disagree, max |z| = {:.2}",
            cfg.name,
            cmp.max_abs_z()
        );
    }
    let meta = run_metadata(&r);
    let name = &cfg.name;
    let mut cmp_text = header(
        cfg,
        &[
            ("max_abs_z", fmt(cmp.max_abs_z())),
            ("threshold", fmt(cmp.threshold)),
        ],
    ) + "t,z_variance,z_lag1,z_survival\n";
    for row in &cmp.rows {
        cmp_text.push_str(&format!(
            "{},{},{},{}\n",
            fmt(row.t),
            fmt(row.z_variance),
            fmt_opt(row.z_lag1),
            fmt(row.z_survival)
        ));
    }
    Ok(vec![
        write_atomic(&ctx.out, &format!("{name}_series.csv"), &series_csv(cfg, &r.series, &meta))?,
        write_atomic(
            &ctx.out,
            &format!("{name}_mc.csv"),
            &(header(cfg, &[("lag", fmt(summary.lag))]) + &summary.to_csv()),
        )?,
        write_atomic(&ctx.out, &format!("{name}_compare.csv"), &cmp_text)?,
    ])
}

/// Equilibrium curve of the monsoon model in (q_a, A_sys).
pub fn bifurcation(cfg: &ScenarioConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let model = cfg.monsoon_model()?;
    let q_grid: Vec<f64> = match cfg.bifurcation {
        Some(b) => (0..b.samples)
            .map(|k| b.q_min + (b.q_max - b.q_min) * k as f64 / (b.samples - 1) as f64)
            .collect(),
        None => {
            let hi = cfg.grid.x_end.max(1.5 * model.present_state().q_a);
            (1..=4000).map(|k| hi * k as f64 / 4000.0).collect()
        }
    };
    let curve = model.scan_bifurcation(&q_grid)?;
    let mut meta = Built::Monsoon(model).metadata();
    match curve.fold {
        Some(f) => {
            meta.push(("fold_q_a", fmt(f.q_a)));
            meta.push(("fold_a_sys", fmt(f.a_sys)));
        }
        None => warn!("{}: no fold inside the scanned humidity range", cfg.name),
    }
    let text = header(cfg, &meta) + &curve.to_csv();
    Ok(vec![write_atomic(
        &ctx.out,
        &format!("{}_bifurcation.csv", cfg.name),
        &text,
    )?])
}

/// The base config with one sweep point's overrides applied.
pub fn point_config(cfg: &ScenarioConfig, i: usize, p: &SweepPointConfig) -> Result<ScenarioConfig, CliError> {
    let mut c = cfg.clone();
    c.name = format!("{}_p{i:02}", cfg.name);
    c.sweep = None;
    if let Some(d) = p.d {
        c.d = d;
    }
    match (&mut c.model, p.eps, p.p0) {
        (_, None, None) => {}
        (ModelConfig::SaddleLinear { p0, eps } | ModelConfig::SaddleNonlinear { p0, eps, .. }, e, q) => {
            *eps = e.unwrap_or(*eps);
            *p0 = q.unwrap_or(*p0);
        }
        (ModelConfig::Monsoon { eps, .. }, e, None) => *eps = e.unwrap_or(*eps),
        _ => {
            return Err(CliError::Validation(format!(
                "sweep point {i} overrides a parameter the model does not have"
            )))
        }
    }
    if p.t_end.is_some() || p.dt.is_some() {
        let dt = p.dt.unwrap_or(cfg.time_grid()?.dt());
        let t_end = p.t_end.unwrap_or(cfg.time.t_end);
        c.time.t_end = t_end;
        c.time.m = ((t_end - c.time.t0) / dt).round() as usize;
    }
    c.outputs.densities.retain(|&t| t <= c.time.t_end);
    c.validate()?;
    Ok(c)
}

struct PointOutcome {
    dx: f64,
    dt: f64,
    times: Vec<f64>,
    cumulative: Vec<f64>,
    albedo: Option<(f64, f64)>,
}

fn sweep_point(c: &ScenarioConfig, ctx: &Context) -> Result<(PointOutcome, Vec<PathBuf>), CliError> {
    if let ModelConfig::Monsoon { params, eps } = &c.model {
        let point = SweepPoint {
            d: c.d,
            eps: *eps,
            t_end: c.time.t_end,
        };
        let grid = c.monsoon_sweep_grid()?;
        if !grid.refine {
            let model = c.monsoon_model()?;
            admissibility(c, &model, &c.spatial_grid()?, &c.time_grid()?, ctx.strict(c))?;
        }
        let curve = escape_curve(params, point, &grid)?;
        let meta = [
            ("dx", fmt(curve.dx)),
            ("dt", fmt(curve.dt)),
            ("clamped_evaluations", curve.clamped.to_string()),
        ];
        let path = write_atomic(
            &ctx.out,
            &format!("{}_escape.csv", c.name),
            &(header(c, &meta) + &curve.to_csv()),
        )?;
        let times = (0..curve.albedo.len()).map(|k| curve.dt * k as f64).collect();
        return Ok((
            PointOutcome {
                dx: curve.dx,
                dt: curve.dt,
                times,
                cumulative: curve.cumulative,
                albedo: Some((params.a_sys0, *eps)),
            },
            vec![path],
        ));
    }
    let (written, r) = run_and_keep(c, ctx)?;
    Ok((
        PointOutcome {
            dx: r.grid.dx(),
            dt: r.series.dt,
            times: r.series.times(),
            cumulative: r.series.rows.iter().map(|row| row.cumulative_escape).collect(),
            albedo: None,
        },
        written,
    ))
}

fn crossing(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    let i = values.iter().position(|&v| v >= level)?;
    if i == 0 {
        return Some(times[0]);
    }
    let (v0, v1) = (values[i - 1], values[i]);
    Some(times[i - 1] + (level - v0) / (v1 - v0) * (times[i] - times[i - 1]))
}

/// Runs every sweep point in parallel. Each point writes its own files;
/// failures are recorded in the summary and do not stop the sweep.
pub fn sweep(cfg: &ScenarioConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let Some(sweep) = &cfg.sweep else {
        return Err(CliError::Validation("the sweep subcommand needs a `sweep` block".into()));
    };
    let points: Vec<ScenarioConfig> = sweep
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| point_config(cfg, i, p))
        .collect::<Result<_, _>>()?;
    let outcomes: Vec<Result<(PointOutcome, Vec<PathBuf>), CliError>> =
        points.par_iter().map(|c| sweep_point(c, ctx)).collect();

    let mut text = header(cfg, &[("escape_level", fmt(ESCAPE_LEVEL))])
        + "point,d,eps,p0,t_end,dx,dt,final_cumulative_escape,t_level,a_sys_level,error\n";
    let mut written = Vec::new();
    let mut first_error = None;
    for (i, (c, outcome)) in points.iter().zip(outcomes).enumerate() {
        let (eps, p0) = match c.model {
            ModelConfig::SaddleLinear { p0, eps } | ModelConfig::SaddleNonlinear { p0, eps, .. } => {
                (Some(eps), Some(p0))
            }
            ModelConfig::Monsoon { eps, .. } => (Some(eps), None),
            _ => (None, None),
        };
        let prefix = format!(
            "{i},{},{},{},{}",
            fmt(c.d),
            fmt_opt(eps),
            fmt_opt(p0),
            fmt(c.time.t_end)
        );
        match outcome {
            Ok((o, paths)) => {
                written.extend(paths);
                let t_level = crossing(&o.times, &o.cumulative, ESCAPE_LEVEL);
                let a_level = o.albedo.and_then(|(a0, e)| t_level.map(|t| a0 + e * t));
                text.push_str(&format!(
                    "{prefix},{},{},{},{},{},\n",
                    fmt(o.dx),
                    fmt(o.dt),
                    fmt_opt(o.cumulative.last().copied()),
                    fmt_opt(t_level),
                    fmt_opt(a_level)
                ));
            }
            Err(e) => {
                warn!("{}: {e}", c.name);
                let msg = e.to_string().replace([',', '\n', '\r'], ";");
                text.push_str(&format!("{prefix},,,,,,{msg}\n"));
                first_error.get_or_insert(e);
            }
        }
    }
    written.push(write_atomic(&ctx.out, &format!("{}_sweep.csv", cfg.name), &text)?);
    match first_error {
        Some(e) if written.len() == 1 => Err(e),
        _ => Ok(written),
    }
}

/// Builds the nonlinear quasi-static table and fits the decay-rate
/// correction constant.
pub fn baseline(cfg: &ScenarioConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let opts = BaselineOptions::default();
    let table = BaselineTable::build(&BaselineTable::default_grid(), &opts)?;
    let kappa_c = fit_kappa_c(&table, KAPPA_C_WINDOW)?;
    let text = header(
        cfg,
        &[
            ("kappa_c", fmt(kappa_c)),
            ("kappa_c_window", fmt(KAPPA_C_WINDOW)),
        ],
    ) + &table.to_csv();
    Ok(vec![write_atomic(&ctx.out, &format!("{}_baseline.csv", cfg.name), &text)?])
}

/// Admissibility report only; nothing is written.
pub fn check(cfg: &ScenarioConfig, ctx: &Context) -> Result<AdmissibilityReport, CliError> {
    let built = Built::new(cfg)?;
    let g = cfg.spatial_grid()?;
    let tg = cfg.time_grid()?;
    let report = check_admissibility(built.model(), &g, &tg, cfg.d, (tg.t0(), tg.t_end()))?;
    if ctx.strict(cfg) && !report.passed() {
        return Err(Error::Admissibility(report.summary()).into());
    }
    Ok(report)
}
