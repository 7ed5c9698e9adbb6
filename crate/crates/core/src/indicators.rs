//! Early-warning indicators computed from the evolving density: variance,
//! lag-1 autocorrelation, decay rate, escape statistics, Kramers' rate and
//! the quasi-static reference curves.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{
    quasi_static_rescale, scale_parameters, DriftModel, Landscape, SaddleNodeLinearDrift,
};
use crate::error::{Error, Result};
use crate::grid::{moment, normalize, raw_moment, DensityState, SpatialGrid, TimeGrid};
use crate::solver::{
    assemble_cn_pair, evolve, solve_stationary, step_unsanitized, EvolveOptions, StepContext,
    StepObserver, TridiagonalOperator,
};

/// Overshoot of `|a| > 1` tolerated (and clamped) as round-off.
const LAG1_CLAMP_TOL: f64 = 1e-9;

/// `E[X^2] - E[X]^2` of a normalized density.
pub fn variance(d: &DensityState, g: &SpatialGrid) -> Result<f64> {
    let support = d.values.iter().filter(|&&v| v > 0.0).count();
    if support < 2 {
        return Err(Error::DegenerateDensity(format!(
            "variance of a density supported on {support} node(s)"
        )));
    }
    let m1 = moment(d, g, 1)?;
    let m2 = moment(d, g, 2)?;
    let v = m2 - m1 * m1;
    if !(v > 0.0) {
        return Err(Error::DegenerateDensity(format!("non-positive variance {v:e}")));
    }
    Ok(v)
}

/// Per-node conditional survival `s_i` and conditional mean `m_i` of the
/// one-step evolution of a delta at node `i`, from one pass of the adjoint.
fn conditional_moments(
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = g.len();
    // M = -A2^{-1} A1, so M^T w = -A1^T (A2^{-T} w).
    let a2t = a2.matrix.transpose();
    let a1t = a1.matrix.transpose();
    let apply_mt = |w: Vec<f64>| -> Result<Vec<f64>> {
        let z = a2t.solve(&w)?;
        Ok(a1t.apply(&z).into_iter().map(|v| -v).collect())
    };
    let survival = apply_mt(vec![1.0; n])?;
    let first = apply_mt(g.nodes())?;
    let means = survival
        .iter()
        .zip(&first)
        .map(|(s, m)| if *s > 0.0 { m / s } else { f64::NAN })
        .collect();
    Ok((survival, means))
}

/// Same quantities by evolving each delta separately.
fn conditional_moments_reference(
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = g.len();
    let dx = g.dx();
    let results: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut delta = vec![0.0; n];
            delta[i] = 1.0 / dx;
            let next = step_unsanitized(&DensityState::new(delta), a1, a2, g)?;
            let s: f64 = next.values.iter().sum::<f64>() * dx;
            let m = raw_moment(&next.values, g, 1);
            Ok((s, if s > 0.0 { m / s } else { f64::NAN }))
        })
        .collect();
    let mut survival = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    for r in results {
        let (s, m) = r?;
        survival.push(s);
        means.push(m);
    }
    Ok((survival, means))
}

/// Lag-1 autocorrelation between `X_{t_{n-1}}` (density `d_prev`) and
/// `X_{t_n}`, using the conditional densities of the step `(a1, a2)`.
pub fn lag1_autocorrelation(
    d_prev: &DensityState,
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
) -> Result<f64> {
    let (s, m) = conditional_moments(a1, a2, g)?;
    lag1_from_conditionals(d_prev, a1, a2, g, &s, &m)
}

/// [`lag1_autocorrelation`] evaluated with one forward solve per node.
pub fn lag1_autocorrelation_reference(
    d_prev: &DensityState,
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
) -> Result<f64> {
    let (s, m) = conditional_moments_reference(a1, a2, g)?;
    lag1_from_conditionals(d_prev, a1, a2, g, &s, &m)
}

/// Correlation of the joint density of the paths that survive the step:
/// node `i` carries weight `P_i dx s_i`, so both marginals refer to the same
/// surviving population (the `Y` marginal is the normalized post-step density).
fn lag1_from_conditionals(
    d_prev: &DensityState,
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
    survival: &[f64],
    means: &[f64],
) -> Result<f64> {
    let next = step_unsanitized(d_prev, a1, a2, g)?;
    let var_y = variance(&normalize(&next, g)?, g)?;

    let nodes: Vec<(f64, f64, f64)> = d_prev
        .values
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p > 0.0 && survival[i] > 0.0)
        .map(|(i, &p)| (p * g.dx() * survival[i], g.node(i), means[i]))
        .collect();
    if nodes.len() < 2 {
        return Err(Error::DegenerateDensity("fewer than two surviving nodes".into()));
    }
    let weight: f64 = nodes.iter().map(|n| n.0).sum();
    let ex = nodes.iter().map(|n| n.0 * n.1).sum::<f64>() / weight;
    let ey = nodes.iter().map(|n| n.0 * n.2).sum::<f64>() / weight;
    let mut var_x = 0.0;
    let mut cov = 0.0;
    for &(w, x, m) in &nodes {
        var_x += w * (x - ex) * (x - ex);
        cov += w * (x - ex) * (m - ey);
    }
    var_x /= weight;
    cov /= weight;
    if !(var_x > 0.0) {
        return Err(Error::DegenerateDensity(format!("non-positive variance {var_x:e}")));
    }
    let a = cov / (var_x * var_y).sqrt();
    if !a.is_finite() {
        return Err(Error::NumericalFailure("non-finite autocorrelation".into()));
    }
    if a.abs() > 1.0 + LAG1_CLAMP_TOL {
        return Err(Error::SolverQuality(format!("autocorrelation {a} outside [-1, 1]")));
    }
    Ok(a.clamp(-1.0, 1.0))
}

/// `-ln(a) / dt`.
pub fn decay_rate_dynamic(a: f64, dt: f64) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) || !(dt > 0.0) {
        return Err(Error::Domain(format!(
            "decay rate needs a in (0, 1] and dt > 0 (a={a}, dt={dt})"
        )));
    }
    Ok(-a.ln() / dt)
}

/// Escape rates `r_n = (1 - s_n) / dt` and cumulative escape
/// `c_n = 1 - prod_{m <= n} s_m`.
pub fn escape_stats(survival: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let mut prod = 1.0;
    let mut rates = Vec::with_capacity(survival.len());
    let mut cumulative = Vec::with_capacity(survival.len());
    for &s in survival {
        prod *= s;
        rates.push((1.0 - s) / dt);
        cumulative.push(1.0 - prod);
    }
    (rates, cumulative)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KramersInputs {
    pub alpha: f64,
    pub beta: f64,
    pub delta_u: f64,
    pub d: f64,
}

impl KramersInputs {
    pub fn new(alpha: f64, beta: f64, delta_u: f64, d: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && delta_u > 0.0 && d > 0.0) {
            return Err(Error::Domain(format!(
                "Kramers inputs must be positive (alpha={alpha}, beta={beta}, dU={delta_u}, D={d})"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            delta_u,
            d,
        })
    }

    /// Curvatures and barrier of a potential landscape with a hill.
    pub fn from_landscape(l: &Landscape, d: f64) -> Result<Self> {
        let hill = l
            .hill
            .ok_or_else(|| Error::NoEquilibrium("landscape has no barrier".into()))?;
        Self::new(l.alpha, hill.beta, hill.barrier, d)
    }
}

/// `sqrt(alpha beta) / (2 pi) * exp(-dU / D)`.
pub fn kramers_rate(k: &KramersInputs) -> f64 {
    (k.alpha * k.beta).sqrt() / (2.0 * std::f64::consts::PI) * (-k.delta_u / k.d).exp()
}

/// Quasi-static Ornstein-Uhlenbeck reference at the current well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiStaticLinear {
    pub kappa: f64,
    pub a: f64,
    pub v: f64,
}

pub fn quasi_static_linear<M: DriftModel + ?Sized>(
    model: &M,
    t: f64,
    d: f64,
    dt: f64,
) -> Result<QuasiStaticLinear> {
    let l = model.landscape(t)?;
    if !(l.alpha > 0.0) {
        return Err(Error::FoldCrossed { t });
    }
    Ok(QuasiStaticLinear {
        kappa: l.alpha,
        a: (-l.alpha * dt).exp(),
        v: d / l.alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiStaticNonlinear {
    pub kappa: f64,
    pub v: f64,
}

/// Stationary decay rate and variance of the normal form `x^2 - q0` over a
/// grid of noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub q0: f64,
    pub d_tilde: Vec<f64>,
    pub kappa: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub q0: f64,
    pub x_start: f64,
    pub x_end: f64,
    /// Nodes per standard deviation of the quasi-static Gaussian.
    pub nodes_per_sigma: f64,
    /// Lag used for the autocorrelation, in units of `dx^2 / D`.
    pub lag_fraction: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            q0: 1.0,
            x_start: -2.5,
            x_end: 2.0,
            nodes_per_sigma: 40.0,
            lag_fraction: 0.5,
        }
    }
}

impl BaselineTable {
    /// The default noise grid `0.005, 0.010, ..., 0.300`.
    pub fn default_grid() -> Vec<f64> {
        (1..=60).map(|k| 0.005 * k as f64).collect()
    }

    pub fn build(d_values: &[f64], opts: &BaselineOptions) -> Result<Self> {
        if d_values.is_empty() || d_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("baseline noise grid must be increasing".into()));
        }
        let rows: Vec<Result<(f64, f64)>> = d_values
            .par_iter()
            .map(|&d| baseline_entry(d, opts))
            .collect();
        let mut kappa = Vec::with_capacity(rows.len());
        let mut variance = Vec::with_capacity(rows.len());
        for r in rows {
            let (k, v) = r?;
            kappa.push(k);
            variance.push(v);
        }
        Ok(Self {
            q0: opts.q0,
            d_tilde: d_values.to_vec(),
            kappa,
            variance,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.d_tilde[0], *self.d_tilde.last().unwrap())
    }

    /// Linear interpolation of `(kappa, variance)` at `d`. Outside the table
    /// the lenient mode clamps to the nearest end and logs a warning.
    pub fn interpolate(&self, d: f64, lenient: bool) -> Result<(f64, f64)> {
        let (lo, hi) = self.range();
        let d = if d < lo || d > hi {
            if !lenient {
                return Err(Error::Extrapolation {
                    value: d,
                    min: lo,
                    max: hi,
                });
            }
            warn!("noise level {d} outside baseline range [{lo}, {hi}], clamping");
            d.clamp(lo, hi)
        } else {
            d
        };
        let k = self.d_tilde.partition_point(|&x| x < d);
        if k == 0 {
            return Ok((self.kappa[0], self.variance[0]));
        }
        let (x0, x1) = (self.d_tilde[k - 1], self.d_tilde[k]);
        let w = (d - x0) / (x1 - x0);
        Ok((
            self.kappa[k - 1] + w * (self.kappa[k] - self.kappa[k - 1]),
            self.variance[k - 1] + w * (self.variance[k] - self.variance[k - 1]),
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# q0={}\nd_tilde,kappa,variance\n", self.q0);
        for k in 0..self.d_tilde.len() {
            out.push_str(&format!(
                "{:?},{:?},{:?}\n",
                self.d_tilde[k], self.kappa[k], self.variance[k]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut q0 = None;
        let mut table = Self {
            q0: f64::NAN,
            d_tilde: vec![],
            kappa: vec![],
            variance: vec![],
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("q0=") {
                    q0 = v.trim().parse::<f64>().ok();
                }
                continue;
            }
            if line.starts_with("d_tilde") {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad baseline row {line:?}: {e}")))?;
            if fields.len() != 3 {
                return Err(Error::Config(format!("baseline row needs 3 fields: {line:?}")));
            }
            table.d_tilde.push(fields[0]);
            table.kappa.push(fields[1]);
            table.variance.push(fields[2]);
        }
        table.q0 = q0.ok_or_else(|| Error::Config("baseline table lacks a q0 header".into()))?;
        if table.d_tilde.is_empty() || table.d_tilde.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("baseline noise grid must be non-empty and increasing".into()));
        }
        Ok(table)
    }
}

fn baseline_entry(d: f64, opts: &BaselineOptions) -> Result<(f64, f64)> {
    let model = SaddleNodeLinearDrift::new(opts.q0, 0.0)?;
    let alpha = 2.0 * opts.q0.sqrt();
    let sigma = (d / alpha).sqrt();
    let fmax = (opts.x_start * opts.x_start - opts.q0)
        .abs()
        .max((opts.x_end * opts.x_end - opts.q0).abs())
        .max(opts.q0);
    // Keep the Peclet number well inside its bound as well.
    let dx = (sigma / opts.nodes_per_sigma).min(d / fmax);
    let g = SpatialGrid::with_spacing(opts.x_start, opts.x_end, dx)?;
    let lag = opts.lag_fraction * g.dx() * g.dx() / d;
    let tg = TimeGrid::new(0.0, lag, 1)?;
    let stat = solve_stationary(&model, &g, d, 0.0)?;
    let (a1, a2) = assemble_cn_pair(&model, &g, &tg, d, 1)?;
    let a = lag1_autocorrelation(&stat.density, &a1, &a2, &g)?;
    Ok((decay_rate_dynamic(a, lag)?, variance(&stat.density, &g)?))
}

/// Nonlinear quasi-static reference for a normal-form model, by rescaling
/// the baseline table to the current parameter `p(t)` and noise `d`.
pub fn quasi_static_nonlinear<M: DriftModel + ?Sized>(
    model: &M,
    t: f64,
    d: f64,
    table: &BaselineTable,
    lenient: bool,
) -> Result<QuasiStaticNonlinear> {
    let p = model.normal_form_parameter(t).ok_or_else(|| {
        Error::Domain("nonlinear quasi-static reference needs a normal-form model".into())
    })?;
    if !(p > 0.0) {
        return Err(Error::FoldCrossed { t });
    }
    let (d_tilde, _, map) = scale_parameters(p, 0.0, d, table.q0)?;
    let (kappa_y, v_y) = table.interpolate(d_tilde, lenient)?;
    let (kappa, v) = quasi_static_rescale(kappa_y, v_y, &map)?;
    Ok(QuasiStaticNonlinear { kappa, v })
}

/// Least-squares slope through the origin of `kappa_l - kappa_Y` against
/// `D~ / q0`, over table entries with `D~ <= window_max`.
pub fn fit_kappa_c(table: &BaselineTable, window_max: f64) -> Result<f64> {
    let kappa_l = 2.0 * table.q0.sqrt();
    let mut szz = 0.0;
    let mut szy = 0.0;
    let mut count = 0;
    for (d, k) in table.d_tilde.iter().zip(&table.kappa) {
        if *d > 0.0 && *d <= window_max {
            let z = d / table.q0;
            szz += z * z;
            szy += z * (kappa_l - k);
            count += 1;
        }
    }
    if count < 8 {
        return Err(Error::Fit(format!(
            "{count} table points in (0, {window_max}], need at least 8"
        )));
    }
    Ok(szy / szz)
}

/// One row of the indicator series; `None` marks values that are undefined
/// at that step (initial row, failed domain checks, past the fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub t: f64,
    pub variance: f64,
    pub lag1: Option<f64>,
    pub lag1_per_unit_time: Option<f64>,
    pub decay_rate: Option<f64>,
    pub escape_rate: Option<f64>,
    /// One-step survival `s_n`.
    pub survival: Option<f64>,
    pub cumulative_escape: f64,
    pub kramers_rate: Option<f64>,
    pub kramers_cumulative: Option<f64>,
    pub qs_linear: Option<QuasiStaticLinear>,
    pub qs_nonlinear: Option<QuasiStaticNonlinear>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub dt: f64,
    pub rows: Vec<IndicatorRow>,
    /// Unnormalized mass remaining at the end, `prod s_n`.
    pub final_survival: f64,
    pub snapshots: Vec<Snapshot>,
}

impl IndicatorSeries {
    pub fn last(&self) -> &IndicatorRow {
        self.rows.last().expect("series always has an initial row")
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions<'a> {
    pub strict: bool,
    pub lag1: bool,
    pub kramers: bool,
    pub quasi_static_linear: bool,
    pub baseline: Option<&'a BaselineTable>,
    /// Clamp out-of-range baseline lookups instead of failing.
    pub lenient_baseline: bool,
    /// Store a density snapshot every `k` steps (and at both ends).
    pub snapshot_every: Option<usize>,
    /// Step indices (0 = initial density) to snapshot in addition.
    pub snapshot_steps: &'a [usize],
}

impl PipelineOptions<'_> {
    pub fn all() -> Self {
        Self {
            strict: false,
            lag1: true,
            kramers: true,
            quasi_static_linear: true,
            baseline: None,
            lenient_baseline: true,
            snapshot_every: None,
            snapshot_steps: &[],
        }
    }
}

struct Recorder<'a, M: ?Sized> {
    model: &'a M,
    d: f64,
    dt: f64,
    n_steps: usize,
    opts: &'a PipelineOptions<'a>,
    rows: Vec<IndicatorRow>,
    snapshots: Vec<Snapshot>,
    survival_product: f64,
    kramers_product: Option<f64>,
}

impl<M: DriftModel + ?Sized> Recorder<'_, M> {
    fn references(&self, t: f64) -> Result<(Option<QuasiStaticLinear>, Option<QuasiStaticNonlinear>)> {
        let lin = if self.opts.quasi_static_linear {
            gap_on_fold(quasi_static_linear(self.model, t, self.d, self.dt))?
        } else {
            None
        };
        let nl = match self.opts.baseline {
            Some(table) => gap_on_fold(quasi_static_nonlinear(
                self.model,
                t,
                self.d,
                table,
                self.opts.lenient_baseline,
            ))?,
            None => None,
        };
        Ok((lin, nl))
    }

    fn kramers(&self, t: f64) -> Result<Option<f64>> {
        if !self.opts.kramers {
            return Ok(None);
        }
        let Some(l) = gap_on_fold(self.model.landscape(t))? else {
            return Ok(None);
        };
        match KramersInputs::from_landscape(&l, self.d) {
            Ok(k) => Ok(Some(kramers_rate(&k))),
            Err(Error::NoEquilibrium(_)) | Err(Error::Domain(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn snapshot(&mut self, n: usize, t: f64, values: &[f64]) {
        let periodic = self
            .opts
            .snapshot_every
            .is_some_and(|k| k > 0 && (n.is_multiple_of(k) || n == self.n_steps));
        if periodic || self.opts.snapshot_steps.contains(&n) {
            self.snapshots.push(Snapshot {
                t,
                values: values.to_vec(),
            });
        }
    }
}

/// Turns a fold-crossed or missing-equilibrium error into a gap.
fn gap_on_fold<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::FoldCrossed { .. }) | Err(Error::NoEquilibrium(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl<M: DriftModel + ?Sized> StepObserver for Recorder<'_, M> {
    fn initial(&mut self, t0: f64, grid: &SpatialGrid, density: &DensityState) -> Result<()> {
        let (qs_linear, qs_nonlinear) = self.references(t0)?;
        let kramers_rate = self.kramers(t0)?;
        self.kramers_product = kramers_rate.map(|_| 1.0);
        self.rows.push(IndicatorRow {
            t: t0,
            variance: variance(density, grid)?,
            lag1: None,
            lag1_per_unit_time: None,
            decay_rate: None,
            escape_rate: None,
            survival: None,
            cumulative_escape: 0.0,
            kramers_rate,
            kramers_cumulative: self.kramers_product.map(|p| 1.0 - p),
            qs_linear,
            qs_nonlinear,
        });
        self.snapshot(0, t0, &density.values);
        Ok(())
    }

    fn after_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let g = ctx.grid;
        let s = crate::grid::trapezoid_mass(ctx.raw, g)?;
        self.survival_product *= s;
        let post = normalize(ctx.raw, g)?;
        let lag1 = if self.opts.lag1 {
            Some(lag1_autocorrelation(ctx.previous, ctx.a1, ctx.a2, g)?)
        } else {
            None
        };
        let decay_rate = lag1.and_then(|a| decay_rate_dynamic(a, ctx.dt).ok());
        let lag1_per_unit_time = lag1.filter(|&a| a > 0.0).map(|a| a.powf(1.0 / ctx.dt));
        let kramers_rate = self.kramers(ctx.t)?;
        self.kramers_product = match (self.kramers_product, kramers_rate) {
            (Some(p), Some(r)) => Some(p * (1.0 - r * ctx.dt)),
            _ => None,
        };
        let (qs_linear, qs_nonlinear) = self.references(ctx.t)?;
        self.rows.push(IndicatorRow {
            t: ctx.t,
            variance: variance(&post, g)?,
            lag1,
            lag1_per_unit_time,
            decay_rate,
            escape_rate: Some((1.0 - s) / ctx.dt),
            survival: Some(s),
            cumulative_escape: 1.0 - self.survival_product,
            kramers_rate,
            kramers_cumulative: self.kramers_product.map(|p| 1.0 - p),
            qs_linear,
            qs_nonlinear,
        });
        self.snapshot(ctx.n, ctx.t, &post.values);
        Ok(())
    }
}

/// Evolves `initial` and records the full indicator series.
pub fn run_indicators<M: DriftModel + ?Sized>(
    model: &M,
    g: &SpatialGrid,
    tg: &TimeGrid,
    d: f64,
    initial: &DensityState,
    opts: &PipelineOptions<'_>,
) -> Result<IndicatorSeries> {
    let mut rec = Recorder {
        model,
        d,
        dt: tg.dt(),
        n_steps: tg.n_steps(),
        opts,
        rows: Vec::with_capacity(tg.n_steps() + 1),
        snapshots: Vec::new(),
        survival_product: 1.0,
        kramers_product: None,
    };
    let start = DensityState {
        survival: 1.0,
        ..initial.clone()
    };
    let last = evolve(
        model,
        g,
        tg,
        d,
        &start,
        &mut rec,
        EvolveOptions {
            strict: opts.strict,
        },
    )?;
    Ok(IndicatorSeries {
        dt: tg.dt(),
        rows: rec.rows,
        final_survival: last.survival,
        snapshots: rec.snapshots,
    })
}
