//! Euler-Maruyama ensembles of `dX = f(X, t) dt + sqrt(2D) dW` with the same
//! absorbing walls as the Fokker-Planck domain, used as an independent check
//! of the density-based indicators.
//!
//! Path `i` draws its normals from `ChaCha8Rng::seed_from_u64(seed)` on
//! stream `i`, so results do not depend on the number of worker threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::grid::{DensityState, SpatialGrid};
use crate::indicators::IndicatorSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub dt_mc: f64,
    pub seed: u64,
    /// Paths at or beyond either wall are absorbed.
    pub absorb_at: (f64, f64),
}

impl EnsembleConfig {
    /// Ensemble absorbed at the two Dirichlet nodes of `g`.
    pub fn for_grid(g: &SpatialGrid, n_paths: usize, dt_mc: f64, seed: u64) -> Self {
        Self {
            n_paths,
            dt_mc,
            seed,
            absorb_at: (g.x_start(), g.last_node()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("ensemble needs at least one path".into()));
        }
        if !(self.dt_mc > 0.0) {
            return Err(Error::Config(format!("dt_mc must be positive, got {}", self.dt_mc)));
        }
        if !(self.absorb_at.0 < self.absorb_at.1) {
            return Err(Error::Config(format!(
                "absorbing walls must satisfy low < high, got {:?}",
                self.absorb_at
            )));
        }
        Ok(())
    }
}

/// Draws initial positions.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSampler {
    Point(f64),
    /// Inverse CDF of a piecewise-linear density on a grid.
    Density {
        x0: f64,
        dx: f64,
        values: Vec<f64>,
        cdf: Vec<f64>,
    },
}

impl InitialSampler {
    pub fn from_density(d: &DensityState, g: &SpatialGrid) -> Result<Self> {
        if d.values.len() != g.len() {
            return Err(Error::Structural("density does not match grid".into()));
        }
        if d.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::DegenerateDensity("sampling density must be nonnegative".into()));
        }
        let dx = g.dx();
        let mut cdf = Vec::with_capacity(g.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in d.values.windows(2) {
            acc += 0.5 * dx * (w[0] + w[1]);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::DegenerateDensity("sampling density has zero mass".into()));
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(Self::Density {
            x0: g.x_start(),
            dx,
            values: d.values.clone(),
            cdf,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Self::Point(x) => *x,
            Self::Density {
                x0,
                dx,
                values,
                cdf,
            } => {
                let u: f64 = rng.random();
                let k = cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1) - 1;
                let (p0, p1) = (values[k], values[k + 1]);
                let frac = ((u - cdf[k]) / (cdf[k + 1] - cdf[k])).clamp(0.0, 1.0);
                // Invert the cell's mass fraction p0 s + (p1 - p0) s^2 / 2,
                // scaled by the cell mass (p0 + p1) / 2.
                let target = frac * 0.5 * (p0 + p1);
                let a = 0.5 * (p1 - p0);
                let s = if a.abs() < 1e-14 * (p0 + p1) {
                    frac
                } else {
                    let disc = (p0 * p0 + 4.0 * a * target).max(0.0);
                    2.0 * target / (p0 + disc.sqrt())
                };
                x0 + (k as f64 + s.clamp(0.0, 1.0)) * dx
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub t: f64,
    pub n_alive: usize,
    pub survival: f64,
    pub survival_se: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    /// Correlation of positions one lag apart over paths alive at `t`.
    pub lag1: Option<f64>,
    pub lag1_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub lag: f64,
    pub rows: Vec<EnsembleRow>,
}

impl EnsembleSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,n_alive,survival,survival_se,mean,mean_se,variance,variance_se,lag1,lag1_se\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{}\n",
                r.t,
                r.n_alive,
                r.survival,
                r.survival_se,
                r.mean,
                r.mean_se,
                r.variance,
                r.variance_se,
                opt(r.lag1),
                opt(r.lag1_se)
            ));
        }
        out
    }
}

fn step_count(span: f64, dt: f64, what: &str) -> Result<usize> {
    let k = span / dt;
    let r = k.round();
    if (k - r).abs() > 1e-6 * r.max(1.0) || r < 0.0 {
        return Err(Error::Config(format!(
            "{what} {span} is not a multiple of dt_mc = {dt}"
        )));
    }
    Ok(r as usize)
}

/// Simulates the ensemble from `t0` and summarizes it at `sample_times`
/// (ascending, multiples of `dt_mc` after `t0`). The lag-1 estimator pairs
/// positions `lag` apart.
pub fn simulate<M: DriftModel + ?Sized>(
    model: &M,
    d: f64,
    cfg: &EnsembleConfig,
    initial: &InitialSampler,
    t0: f64,
    sample_times: &[f64],
    lag: f64,
) -> Result<EnsembleSummary> {
    cfg.validate()?;
    if !(d >= 0.0) {
        return Err(Error::Config(format!("noise must be nonnegative, got {d}")));
    }
    if sample_times.windows(2).any(|w| w[1] <= w[0]) || sample_times.first().is_some_and(|&t| t < t0) {
        return Err(Error::Config("sample times must be ascending and not before t0".into()));
    }
    let checkpoints: Vec<usize> = sample_times
        .iter()
        .map(|&t| step_count(t - t0, cfg.dt_mc, "sample time offset"))
        .collect::<Result<_>>()?;
    let lag_steps = step_count(lag, cfg.dt_mc, "lag")?;
    let total = checkpoints.last().copied().unwrap_or(0);
    // Index of the checkpoint that needs a lagged position, per step.
    let lagged: Vec<usize> = checkpoints
        .iter()
        .filter(|&&k| k >= lag_steps)
        .map(|&k| k - lag_steps)
        .collect();

    let amp = (2.0 * d * cfg.dt_mc).sqrt();
    let (lo, hi) = cfg.absorb_at;
    let n_cp = checkpoints.len();

    let paths: Vec<Vec<Option<(f64, f64)>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut x = initial.sample(&mut rng);
            let mut alive = x > lo && x < hi;
            let mut out = vec![None; n_cp];
            let mut prev_pos = vec![f64::NAN; n_cp];
            let mut next_cp = 0;
            let mut next_lag = 0;
            let mut step = 0usize;
            loop {
                while next_lag < lagged.len() && lagged[next_lag] == step {
                    if alive {
                        // Map back to the checkpoint index this lag belongs to.
                        let cp = checkpoints.iter().position(|&k| k == step + lag_steps).unwrap();
                        prev_pos[cp] = x;
                    }
                    next_lag += 1;
                }
                while next_cp < n_cp && checkpoints[next_cp] == step {
                    if alive {
                        out[next_cp] = Some((prev_pos[next_cp], x));
                    }
                    next_cp += 1;
                }
                if step >= total || !alive {
                    break;
                }
                let t = t0 + step as f64 * cfg.dt_mc;
                let z: f64 = rng.sample(StandardNormal);
                x += model.drift(x, t) * cfg.dt_mc + amp * z;
                step += 1;
                if !(x > lo && x < hi) {
                    alive = false;
                }
            }
            out
        })
        .collect();

    let n = cfg.n_paths as f64;
    let mut rows = Vec::with_capacity(n_cp);
    for (j, &t) in sample_times.iter().enumerate() {
        let xs: Vec<(f64, f64)> = paths.iter().filter_map(|p| p[j]).collect();
        let m = xs.len();
        let survival = m as f64 / n;
        // Shrunk proportion keeps the standard error positive at 0 or 1.
        let shrunk = (m as f64 + 0.5) / (n + 1.0);
        let survival_se = (shrunk * (1.0 - shrunk) / n).sqrt();
        let (mean, mean_se, variance, variance_se) = moments(xs.iter().map(|p| p.1));
        let (lag1, lag1_se) = if checkpoints[j] >= lag_steps && m > 3 {
            correlation(&xs)
        } else {
            (None, None)
        };
        rows.push(EnsembleRow {
            t,
            n_alive: m,
            survival,
            survival_se,
            mean,
            mean_se,
            variance,
            variance_se,
            lag1,
            lag1_se,
        });
    }
    Ok(EnsembleSummary {
        n_paths: cfg.n_paths,
        lag,
        rows,
    })
}

/// Sample mean and variance with standard errors (the latter from the
/// fourth central moment).
fn moments(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64, f64) {
    let n = xs.clone().count();
    if n < 2 {
        let mean = xs.clone().next().unwrap_or(f64::NAN);
        return (mean, f64::NAN, f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let c = x - mean;
        m2 += c * c;
        m4 += c.powi(4);
    }
    let var = m2 / (nf - 1.0);
    let mu2 = m2 / nf;
    let mu4 = m4 / nf;
    let var_se = ((mu4 - mu2 * mu2).max(0.0) / nf).sqrt();
    (mean, (var / nf).sqrt(), var, var_se)
}

/// Pearson correlation with its large-sample standard error for general
/// (non-Gaussian) joint distributions.
fn correlation(pairs: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut mu = [[0.0f64; 5]; 5];
    for &(x, y) in pairs {
        let (a, b) = (x - mx, y - my);
        let pa = [1.0, a, a * a, a * a * a, a * a * a * a];
        let pb = [1.0, b, b * b, b * b * b, b * b * b * b];
        for i in 0..5 {
            for j in 0..5 - i {
                mu[i][j] += pa[i] * pb[j];
            }
        }
    }
    for row in &mut mu {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let (s20, s02, s11) = (mu[2][0], mu[0][2], mu[1][1]);
    if !(s20 > 0.0 && s02 > 0.0) {
        return (None, None);
    }
    let r = s11 / (s20 * s02).sqrt();
    let var = (r * r / 4.0)
        * (mu[4][0] / (s20 * s20) + mu[0][4] / (s02 * s02) + 2.0 * mu[2][2] / (s20 * s02))
        - r * (mu[3][1] / (s20 * (s20 * s02).sqrt()) + mu[1][3] / (s02 * (s20 * s02).sqrt()))
        + mu[2][2] / (s20 * s02);
    (Some(r), Some((var.max(0.0) / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub z_variance: f64,
    pub z_lag1: Option<f64>,
    pub z_survival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub threshold: f64,
}

impl ComparisonReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [Some(r.z_variance), r.z_lag1, Some(r.z_survival)])
            .flatten()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> bool {
        self.max_abs_z() > self.threshold
    }
}

/// z-scores `(fp - mc) / se_mc` at every ensemble sample time. The FP
/// survival is the cumulative surviving fraction `1 - c_n`.
pub fn compare(fp: &IndicatorSeries, mc: &EnsembleSummary) -> Result<ComparisonReport> {
    let mut rows = Vec::with_capacity(mc.rows.len());
    for r in &mc.rows {
        let fp_row = fp
            .rows
            .iter()
            .find(|f| (f.t - r.t).abs() <= 1e-9 * r.t.abs().max(1.0))
            .ok_or_else(|| {
                Error::Structural(format!("no Fokker-Planck row at sample time {}", r.t))
            })?;
        let z = |fpv: f64, mcv: f64, se: f64| (fpv - mcv) / se;
        let z_lag1 = match (fp_row.lag1, r.lag1, r.lag1_se) {
            (Some(a), Some(b), Some(se)) => Some(z(a, b, se)),
            _ => None,
        };
        rows.push(ComparisonRow {
            t: r.t,
            z_variance: z(fp_row.variance, r.variance, r.variance_se),
            z_lag1,
            z_survival: z(1.0 - fp_row.cumulative_escape, r.survival, r.survival_se),
        });
    }
    Ok(ComparisonReport {
        rows,
        threshold: 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{OuLinearization, StraightDrift};
    use crate::grid::{normalize, TimeGrid};
    use crate::indicators::{run_indicators, PipelineOptions};
    use crate::solver::solve_stationary;

    #[test]
    fn noiseless_ou_follows_exponential() {
        let ou = OuLinearization::new(2.0, -1.0).unwrap();
        let cfg = EnsembleConfig {
            n_paths: 3,
            dt_mc: 1e-4,
            seed: 1,
            absorb_at: (-10.0, 10.0),
        };
        let s = simulate(&ou, 0.0, &cfg, &InitialSampler::Point(0.5), 0.0, &[1.0], 0.01).unwrap();
        let exact = -1.0 + 1.5 * (-2.0f64).exp();
        assert!((s.rows[0].mean - exact).abs() < 1e-4);
    }

    #[test]
    fn straight_drift_moments() {
        let cfg = EnsembleConfig {
            n_paths: 20_000,
            dt_mc: 0.01,
            seed: 7,
            absorb_at: (-20.0, 20.0),
        };
        let s = simulate(&StraightDrift, 0.2, &cfg, &InitialSampler::Point(0.0), 0.0, &[3.0], 0.01)
            .unwrap();
        let r = &s.rows[0];
        assert!((r.mean + 3.0).abs() < 4.0 * r.mean_se);
        assert!((r.variance - 1.2).abs() < 4.0 * r.variance_se);
        assert_eq!(r.survival, 1.0);
        assert!(r.survival_se > 0.0);
    }

    #[test]
    fn seed_determines_summary() {
        let ou = OuLinearization::new(2.0, -1.0).unwrap();
        let cfg = EnsembleConfig {
            n_paths: 500,
            dt_mc: 0.005,
            seed: 42,
            absorb_at: (-2.5, 1.0),
        };
        let run = || {
            simulate(&ou, 0.2, &cfg, &InitialSampler::Point(-1.0), 0.0, &[0.5, 1.0], 0.01).unwrap()
        };
        assert_eq!(run(), run());
        let other = simulate(
            &ou,
            0.2,
            &EnsembleConfig { seed: 43, ..cfg },
            &InitialSampler::Point(-1.0),
            0.0,
            &[0.5, 1.0],
            0.01,
        )
        .unwrap();
        assert_ne!(run(), other);
    }

    #[test]
    fn density_sampler_reproduces_moments() {
        let g = SpatialGrid::with_spacing(-3.0, 3.0, 0.05).unwrap();
        let d = normalize(&DensityState::gaussian(&g, 0.4, 0.25), &g).unwrap();
        let s = InitialSampler::from_density(&d, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..50_000).map(|_| s.sample(&mut rng)).collect();
        let (mean, mean_se, var, var_se) = moments(xs.iter().copied());
        assert!((mean - 0.4).abs() < 4.0 * mean_se);
        assert!((var - 0.25).abs() < 4.0 * var_se + 1e-3);
    }

    #[test]
    fn misaligned_times_are_rejected() {
        let cfg = EnsembleConfig {
            n_paths: 2,
            dt_mc: 0.003,
            seed: 0,
            absorb_at: (-1.0, 1.0),
        };
        assert!(simulate(&StraightDrift, 0.2, &cfg, &InitialSampler::Point(0.0), 0.0, &[0.01], 0.003)
            .is_err());
        assert!(EnsembleConfig { n_paths: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn ou_stationary_agrees_with_fokker_planck() {
        let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.025).unwrap();
        let ou = OuLinearization::new(2.0, -1.0).unwrap();
        let stat = solve_stationary(&ou, &g, 0.2, 0.0).unwrap();
        let tg = TimeGrid::with_step(0.0, 1.0, 0.01).unwrap();
        let fp = run_indicators(&ou, &g, &tg, 0.2, &stat.density, &PipelineOptions::all()).unwrap();
        let cfg = EnsembleConfig::for_grid(&g, 20_000, 0.001, 11);
        let init = InitialSampler::from_density(&stat.density, &g).unwrap();
        let mc = simulate(&ou, 0.2, &cfg, &init, 0.0, &[0.5, 1.0], 0.01).unwrap();
        let report = compare(&fp, &mc).unwrap();
        assert!(!report.flagged(), "{report:?}");

        let self_cmp = compare(&fp, &mc).unwrap();
        assert_eq!(self_cmp, report);

        let mut corrupted = fp.clone();
        for r in &mut corrupted.rows {
            r.variance *= 1.5;
        }
        assert!(compare(&corrupted, &mc).unwrap().flagged());
    }

    #[test]
    fn self_comparison_gives_zero() {
        let cfg = EnsembleConfig {
            n_paths: 200,
            dt_mc: 0.01,
            seed: 5,
            absorb_at: (-5.0, 5.0),
        };
        let ou = OuLinearization::new(2.0, 0.0).unwrap();
        let mc = simulate(&ou, 0.2, &cfg, &InitialSampler::Point(0.0), 0.0, &[0.5], 0.01).unwrap();
        let r = &mc.rows[0];
        let fp = IndicatorSeries {
            dt: 0.01,
            rows: vec![crate::indicators::IndicatorRow {
                t: 0.5,
                variance: r.variance,
                lag1: r.lag1,
                lag1_per_unit_time: None,
                decay_rate: None,
                escape_rate: None,
                survival: None,
                cumulative_escape: 1.0 - r.survival,
                kramers_rate: None,
                kramers_cumulative: None,
                qs_linear: None,
                qs_nonlinear: None,
            }],
            final_survival: r.survival,
            snapshots: vec![],
        };
        let rep = compare(&fp, &mc).unwrap();
        assert_eq!(rep.max_abs_z(), 0.0);
    }
}
