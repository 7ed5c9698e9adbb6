//! Uniform grids, discretized densities and the quadratures shared by the
//! solver and the indicator pipeline.
//!
//! Nodes are indexed from zero here: `node(k)` is `x_start + k * dx` for
//! `k = 0..=N`, so the grid has `N + 1` nodes and the last one sits at
//! `x_end - dx`. Both end nodes carry homogeneous Dirichlet values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the trapezoid mass accepted as "normalized" by [`moment`].
pub const NORMALIZED_TOL: f64 = 1e-9;

/// Relative threshold below which negative densities are treated as round-off.
pub const NEGATIVE_TOL_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    x_start: f64,
    x_end: f64,
    n_intervals: usize,
    dx: f64,
}

impl SpatialGrid {
    /// Grid with `n_intervals` = N, spacing `(x_end - x_start) / (N + 1)`.
    pub fn new(x_start: f64, x_end: f64, n_intervals: usize) -> Result<Self> {
        if !(x_start.is_finite() && x_end.is_finite()) || x_start >= x_end {
            return Err(Error::Domain(format!(
                "grid bounds must satisfy x_start < x_end, got [{x_start}, {x_end}]"
            )));
        }
        if n_intervals < 2 {
            return Err(Error::Domain("a grid needs at least 2 intervals".into()));
        }
        let dx = (x_end - x_start) / (n_intervals as f64 + 1.0);
        Ok(Self {
            x_start,
            x_end,
            n_intervals,
            dx,
        })
    }

    /// Grid whose spacing is `dx` (rounded so that `(x_end - x_start) / dx`
    /// is an integer).
    pub fn with_spacing(x_start: f64, x_end: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::Domain(format!("dx must be positive, got {dx}")));
        }
        let cells = ((x_end - x_start) / dx).round();
        if cells < 3.0 {
            return Err(Error::Domain(format!(
                "spacing {dx} too coarse for [{x_start}, {x_end}]"
            )));
        }
        Self::new(x_start, x_end, cells as usize - 1)
    }

    pub fn x_start(&self) -> f64 {
        self.x_start
    }

    pub fn x_end(&self) -> f64 {
        self.x_end
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, k: usize) -> f64 {
        self.x_start + k as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Position of the last (Dirichlet) node.
    pub fn last_node(&self) -> f64 {
        self.node(self.n_intervals)
    }

    fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Structural(format!(
                "density has {} values, grid has {} nodes",
                values.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t0 > t_end {
            return Err(Error::Domain(format!(
                "time bounds must satisfy t0 <= t_end, got [{t0}, {t_end}]"
            )));
        }
        if (n_steps == 0) != (t0 == t_end) {
            return Err(Error::Domain(format!(
                "{n_steps} steps do not fit the time range [{t0}, {t_end}]"
            )));
        }
        let dt = if n_steps == 0 { 0.0 } else { (t_end - t0) / n_steps as f64 };
        Ok(Self {
            t0,
            t_end,
            n_steps,
            dt,
        })
    }

    /// Grid with no steps: only the initial time.
    pub fn instant(t0: f64) -> Result<Self> {
        Self::new(t0, t0, 0)
    }

    /// Time grid with step `dt`, the step count rounded to the nearest integer.
    pub fn with_step(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        let steps = ((t_end - t0) / dt).round().max(1.0);
        Self::new(t0, t_end, steps as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t0 + n * dt` for `n = 0..=M`.
    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }
}

/// Discretized probability density at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub values: Vec<f64>,
    pub time_index: usize,
    /// Cumulative survival multiplier accumulated since `t0`.
    pub survival: f64,
}

impl DensityState {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            time_index: 0,
            survival: 1.0,
        }
    }

    pub fn zeros(grid: &SpatialGrid) -> Self {
        Self::new(vec![0.0; grid.len()])
    }

    /// Samples `pdf` at interior nodes; the two boundary nodes are set to zero.
    pub fn from_fn(grid: &SpatialGrid, pdf: impl Fn(f64) -> f64) -> Self {
        let n = grid.len();
        let values = (0..n)
            .map(|k| {
                if k == 0 || k + 1 == n {
                    0.0
                } else {
                    pdf(grid.node(k))
                }
            })
            .collect();
        Self::new(values)
    }

    /// Normal density with the given mean and variance, boundaries zeroed.
    pub fn gaussian(grid: &SpatialGrid, mean: f64, variance: f64) -> Self {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
        Self::from_fn(grid, |x| norm * (-(x - mean).powi(2) / (2.0 * variance)).exp())
    }

    /// Clamps round-off negatives to zero. Values below `-NEGATIVE_TOL_REL * max`
    /// are reported as a solver-quality failure.
    pub fn sanitize(&mut self) -> Result<()> {
        let max = self.values.iter().copied().fold(0.0_f64, f64::max);
        let tol = NEGATIVE_TOL_REL * max;
        for (k, v) in self.values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::SolverQuality(format!("non-finite density at node {k}")));
            }
            if *v < 0.0 {
                if *v < -tol {
                    return Err(Error::SolverQuality(format!(
                        "density {v:e} at node {k} below tolerance -{tol:e}"
                    )));
                }
                *v = 0.0;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            time_index: self.time_index,
            survival: self.survival,
        }
    }
}

/// Trapezoid-rule integral of the density over the grid.
pub fn trapezoid_mass(d: &DensityState, g: &SpatialGrid) -> Result<f64> {
    g.check(&d.values)?;
    Ok(trapezoid(&d.values, g.dx()))
}

pub(crate) fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let inner: f64 = values.windows(2).map(|w| w[0] + w[1]).sum();
    0.5 * dx * inner
}

/// Rescales `d` to unit trapezoid mass.
pub fn normalize(d: &DensityState, g: &SpatialGrid) -> Result<DensityState> {
    let mass = trapezoid_mass(d, g)?;
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::DegenerateDensity(format!(
            "cannot normalize density with mass {mass:e}"
        )));
    }
    Ok(d.scaled(1.0 / mass))
}

/// `k`-th raw moment, `sum_i x_i^k P_i dx`, of a normalized density.
pub fn moment(d: &DensityState, g: &SpatialGrid, k: u32) -> Result<f64> {
    let mass = trapezoid_mass(d, g)?;
    if (mass - 1.0).abs() > NORMALIZED_TOL {
        return Err(Error::Precondition(format!(
            "moment needs a normalized density (mass {mass})"
        )));
    }
    Ok(raw_moment(&d.values, g, k))
}

pub(crate) fn raw_moment(values: &[f64], g: &SpatialGrid, k: u32) -> f64 {
    let dx = g.dx();
    values
        .iter()
        .enumerate()
        .map(|(i, p)| g.node(i).powi(k as i32) * p)
        .sum::<f64>()
        * dx
}
