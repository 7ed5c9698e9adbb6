//! Finite-difference Fokker-Planck solver with absorbing boundaries:
//! the stationary eigenproblem and Crank-Nicolson time stepping.

use log::warn;

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::grid::{normalize, trapezoid_mass, DensityState, SpatialGrid, TimeGrid};
use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorLabel {
    /// Stationary operator.
    A,
    /// Explicit half of the Crank-Nicolson pair.
    A1,
    /// Implicit half of the Crank-Nicolson pair.
    A2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    pub matrix: Tridiagonal,
    pub label: OperatorLabel,
    pub time_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    pub density: DensityState,
    /// Eigenvalue of smallest magnitude; negative for an absorbing domain.
    pub gamma1: f64,
    /// `max |A v - gamma1 v|` for the normalized eigenvector.
    pub residual: f64,
    pub iterations: usize,
}

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 500;

fn drift_values<M: DriftModel + ?Sized>(model: &M, g: &SpatialGrid, t: f64) -> Vec<f64> {
    (0..g.len()).map(|k| model.drift(g.node(k), t)).collect()
}

/// Writes the interior stencil `scale * L` (plus `shift` on the diagonal)
/// into `m`, where `L` is the discretized Fokker-Planck operator.
fn fill_stencil(m: &mut Tridiagonal, f: &[f64], d: f64, dx: f64, scale: f64, shift: f64) {
    let n = f.len();
    let diff = d / (dx * dx);
    let adv = 1.0 / (2.0 * dx);
    for i in 1..n - 1 {
        m.sub[i] = scale * (f[i] * adv + diff);
        m.diag[i] = shift + scale * ((f[i - 1] - f[i + 1]) * adv - 2.0 * diff);
        m.sup[i] = scale * (-f[i] * adv + diff);
    }
}

pub fn assemble_stationary<M: DriftModel + ?Sized>(
    model: &M,
    g: &SpatialGrid,
    d: f64,
    t: f64,
) -> Result<TridiagonalOperator> {
    check_noise(d)?;
    let f = drift_values(model, g, t);
    let mut m = Tridiagonal::zeros(g.len());
    fill_stencil(&mut m, &f, d, g.dx(), 1.0, 0.0);
    m.set_dirichlet_row(0);
    m.set_dirichlet_row(g.len() - 1);
    Ok(TridiagonalOperator {
        matrix: m,
        label: OperatorLabel::A,
        time_index: 0,
    })
}

fn check_noise(d: f64) -> Result<()> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("noise intensity must be positive, got {d}")));
    }
    Ok(())
}

/// Leading eigenpair of the stationary operator by inverse iteration on the
/// interior block.
pub fn solve_stationary<M: DriftModel + ?Sized>(
    model: &M,
    g: &SpatialGrid,
    d: f64,
    t: f64,
) -> Result<StationaryResult> {
    let op = assemble_stationary(model, g, d, t)?;
    let full = &op.matrix;
    let n = g.len();
    let m = n - 2;
    let interior = Tridiagonal {
        sub: full.sub[1..n - 1].to_vec(),
        diag: full.diag[1..n - 1].to_vec(),
        sup: full.sup[1..n - 1].to_vec(),
    };
    let mut interior = interior;
    interior.sub[0] = 0.0;
    interior.sup[m - 1] = 0.0;

    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut scratch = vec![0.0; m];
    let mut gamma = f64::NAN;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < STATIONARY_MAX_ITERS {
        iterations += 1;
        let mut w = v.clone();
        interior.solve_in_place(&mut w, &mut scratch)?;
        let vw: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() || vw == 0.0 {
            return Err(Error::NumericalFailure(
                "inverse iteration produced a degenerate vector".into(),
            ));
        }
        let next = 1.0 / vw;
        change = (next - gamma).abs();
        gamma = next;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if change <= STATIONARY_TOL {
            break;
        }
    }
    if !(change <= STATIONARY_TOL) {
        return Err(Error::Convergence {
            iterations,
            last_change: change,
        });
    }

    let mut values = vec![0.0; n];
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for (k, vi) in v.iter().enumerate() {
        values[k + 1] = sign * vi;
    }
    let mut density = DensityState::new(values);
    density.sanitize().map_err(|e| match e {
        Error::SolverQuality(msg) => {
            Error::SolverQuality(format!("stationary eigenvector has mixed signs: {msg}"))
        }
        other => other,
    })?;
    let density = normalize(&density, g)?;
    let av = full.apply(&density.values);
    let residual = av
        .iter()
        .zip(&density.values)
        .skip(1)
        .take(m)
        .map(|(a, v)| (a - gamma * v).abs())
        .fold(0.0, f64::max);
    Ok(StationaryResult {
        density,
        gamma1: gamma,
        residual,
        iterations,
    })
}

fn cn_pair_from_values(
    f_prev: &[f64],
    f_next: &[f64],
    d: f64,
    dx: f64,
    dt: f64,
    n: usize,
) -> (TridiagonalOperator, TridiagonalOperator) {
    let len = f_prev.len();
    let mut a1 = Tridiagonal::zeros(len);
    fill_stencil(&mut a1, f_prev, d, dx, 0.5 * dt, 1.0);
    // The explicit operator acts on Dirichlet zeros at both ends; its
    // boundary rows are zero so that the right-hand side vanishes there.
    a1.zero_row(0);
    a1.zero_row(len - 1);
    let mut a2 = Tridiagonal::zeros(len);
    fill_stencil(&mut a2, f_next, d, dx, 0.5 * dt, -1.0);
    a2.set_dirichlet_row(0);
    a2.set_dirichlet_row(len - 1);
    (
        TridiagonalOperator {
            matrix: a1,
            label: OperatorLabel::A1,
            time_index: n - 1,
        },
        TridiagonalOperator {
            matrix: a2,
            label: OperatorLabel::A2,
            time_index: n,
        },
    )
}

/// Operators for step `n` (`1 <= n <= M`), which advances the density from
/// `t_{n-1}` to `t_n`: `a1` uses the drift at `t_{n-1}`, `a2` at `t_n`.
pub fn assemble_cn_pair<M: DriftModel + ?Sized>(
    model: &M,
    g: &SpatialGrid,
    tg: &TimeGrid,
    d: f64,
    n: usize,
) -> Result<(TridiagonalOperator, TridiagonalOperator)> {
    check_noise(d)?;
    if n == 0 || n > tg.n_steps() {
        return Err(Error::Structural(format!(
            "step index {n} outside 1..={}",
            tg.n_steps()
        )));
    }
    let f_prev = drift_values(model, g, tg.time(n - 1));
    let f_next = drift_values(model, g, tg.time(n));
    Ok(cn_pair_from_values(&f_prev, &f_next, d, g.dx(), tg.dt(), n))
}

/// One Crank-Nicolson step, `a2 p_next = -a1 p_prev`. The result is
/// sanitized but not renormalized; `survival` is multiplied by its mass.
pub fn step(
    p_prev: &DensityState,
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
) -> Result<DensityState> {
    let mut next = step_unsanitized(p_prev, a1, a2, g)?;
    next.sanitize()?;
    let mass = trapezoid_mass(&next, g)?;
    next.survival = p_prev.survival * mass;
    Ok(next)
}

/// The linear map of [`step`] without sanitization or survival update.
pub fn step_unsanitized(
    p_prev: &DensityState,
    a1: &TridiagonalOperator,
    a2: &TridiagonalOperator,
    g: &SpatialGrid,
) -> Result<DensityState> {
    if p_prev.values.len() != g.len() || a1.matrix.len() != g.len() || a2.matrix.len() != g.len() {
        return Err(Error::Structural("operator and density sizes differ".into()));
    }
    let mut x = a1.matrix.apply(&p_prev.values);
    for v in &mut x {
        *v = -*v;
    }
    let mut scratch = vec![0.0; x.len()];
    a2.matrix.solve_in_place(&mut x, &mut scratch)?;
    Ok(DensityState {
        values: x,
        time_index: a2.time_index,
        survival: p_prev.survival,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    /// Largest `max|f| dx / D` over the grid and sampled times.
    pub peclet: f64,
    /// Time at which `peclet` was attained.
    pub peclet_time: f64,
    pub peclet_ok: bool,
    /// `dx^2 / D`.
    pub dt_bound: f64,
    pub dt: f64,
    pub dt_ok: bool,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.peclet_ok && self.dt_ok
    }

    /// `dt_bound - dt`; positive when the step bound holds.
    pub fn dt_margin(&self) -> f64 {
        self.dt_bound - self.dt
    }

    pub fn summary(&self) -> String {
        format!(
            "Pe = {:.4} at t = {} ({}), dt = {} vs dx^2/D = {} ({})",
            self.peclet,
            self.peclet_time,
            if self.peclet_ok { "ok" } else { "exceeds 2" },
            self.dt,
            self.dt_bound,
            if self.dt_ok { "ok" } else { "too large" }
        )
    }
}

pub const PECLET_MAX: f64 = 2.0;
const ADMISSIBILITY_SAMPLES: usize = 33;

/// Checks `Pe <= 2` at 33 interior sample times plus both endpoints of
/// `time_range`, and `dt < dx^2 / D`.
pub fn check_admissibility<M: DriftModel + ?Sized>(
    model: &M,
    g: &SpatialGrid,
    tg: &TimeGrid,
    d: f64,
    time_range: (f64, f64),
) -> Result<AdmissibilityReport> {
    check_noise(d)?;
    let (a, b) = time_range;
    let mut times = vec![a];
    if b > a {
        let h = (b - a) / (ADMISSIBILITY_SAMPLES + 1) as f64;
        times.extend((1..=ADMISSIBILITY_SAMPLES).map(|k| a + k as f64 * h));
        times.push(b);
    }
    let mut peclet = 0.0;
    let mut peclet_time = a;
    for &t in &times {
        let fmax = (0..g.len())
            .map(|k| model.drift(g.node(k), t).abs())
            .fold(0.0, f64::max);
        let pe = fmax * g.dx() / d;
        if !pe.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite drift at t = {t}")));
        }
        if pe > peclet {
            peclet = pe;
            peclet_time = t;
        }
    }
    let dt_bound = g.dx() * g.dx() / d;
    Ok(AdmissibilityReport {
        peclet,
        peclet_time,
        peclet_ok: peclet <= PECLET_MAX,
        dt_bound,
        dt: tg.dt(),
        dt_ok: tg.dt() < dt_bound,
    })
}

/// Everything an observer may need after one step.
pub struct StepContext<'a> {
    /// Step index `n` (the density now sits at `t_n`).
    pub n: usize,
    pub t: f64,
    pub dt: f64,
    pub grid: &'a SpatialGrid,
    /// Normalized density at `t_{n-1}`.
    pub previous: &'a DensityState,
    /// Unnormalized density at `t_n`; its mass is the one-step survival.
    pub raw: &'a DensityState,
    pub a1: &'a TridiagonalOperator,
    pub a2: &'a TridiagonalOperator,
}

pub trait StepObserver {
    /// Called once with the normalized initial density at `t0`.
    fn initial(&mut self, t0: f64, grid: &SpatialGrid, density: &DensityState) -> Result<()>;

    fn after_step(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

/// Observer that records nothing.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn initial(&mut self, _: f64, _: &SpatialGrid, _: &DensityState) -> Result<()> {
        Ok(())
    }
    fn after_step(&mut self, _: &StepContext<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvolveOptions {
    /// Abort on an admissibility failure instead of logging a warning.
    pub strict: bool,
}

/// Steps `initial` across `tg`, renormalizing after every step and feeding
/// each step to `observer`. Returns the final normalized density; its
/// `survival` holds the cumulative surviving fraction.
pub fn evolve<M: DriftModel + ?Sized>(
    model: &M,
    g: &SpatialGrid,
    tg: &TimeGrid,
    d: f64,
    initial: &DensityState,
    observer: &mut dyn StepObserver,
    opts: EvolveOptions,
) -> Result<DensityState> {
    let report = check_admissibility(model, g, tg, d, (tg.t0(), tg.t_end()))?;
    if !report.passed() {
        if opts.strict {
            return Err(Error::Admissibility(report.summary()));
        }
        warn!("admissibility check failed: {}", report.summary());
    }
    let mut current = normalize(initial, g)?;
    current.time_index = 0;
    current.survival = initial.survival;
    observer.initial(tg.t0(), g, &current)?;

    let time_dependent = model.is_time_dependent();
    let mut f_prev = drift_values(model, g, tg.t0());
    for n in 1..=tg.n_steps() {
        let t = tg.time(n);
        let f_next = if time_dependent {
            drift_values(model, g, t)
        } else {
            f_prev.clone()
        };
        let (a1, a2) = cn_pair_from_values(&f_prev, &f_next, d, g.dx(), tg.dt(), n);
        let raw = step(&current, &a1, &a2, g).map_err(|e| e.at_step(n))?;
        observer
            .after_step(&StepContext {
                n,
                t,
                dt: tg.dt(),
                grid: g,
                previous: &current,
                raw: &raw,
                a1: &a1,
                a2: &a2,
            })
            .map_err(|e| e.at_step(n))?;
        let survival = raw.survival;
        current = normalize(&raw, g).map_err(|e| e.at_step(n))?;
        current.survival = survival;
        current.time_index = n;
        f_prev = f_next;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{FnDrift, OuLinearization, SaddleNodeLinearDrift, StraightDrift};
    use crate::grid::moment;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn analytic_straight(x: f64, t: f64, d: f64) -> f64 {
        (-(x + t).powi(2) / (4.0 * d * t)).exp() / (4.0 * std::f64::consts::PI * d * t).sqrt()
    }

    #[test]
    fn stationary_stencil_examples() {
        let g = SpatialGrid::with_spacing(-1.0, 1.0, 0.1).unwrap();
        let a = assemble_stationary(&StraightDrift, &g, 0.2, 0.0).unwrap().matrix;
        for i in 1..g.len() - 1 {
            assert_abs_diff_eq!(a.sub[i], 15.0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.diag[i], -40.0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.sup[i], 25.0, epsilon = 1e-9);
        }
        assert_eq!((a.sub[0], a.diag[0], a.sup[0]), (0.0, 1.0, 0.0));
        let last = g.len() - 1;
        assert_eq!((a.sub[last], a.diag[last], a.sup[last]), (0.0, 1.0, 0.0));

        let zero = assemble_stationary(&FnDrift(|_, _| 0.0), &g, 0.2, 0.0).unwrap().matrix;
        for i in 1..g.len() - 1 {
            assert_eq!(zero.sub[i], zero.sup[i]);
        }

        let sn = SaddleNodeLinearDrift::new(1.0, 0.0).unwrap();
        let a = assemble_stationary(&sn, &g, 0.2, 0.0).unwrap().matrix;
        let mid = 10;
        assert_abs_diff_eq!(g.node(mid), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.sub[mid], 15.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.sup[mid], 25.0, epsilon = 1e-9);
    }

    #[test]
    fn stationary_ou_is_gaussian() {
        let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.01).unwrap();
        let ou = OuLinearization::new(2.0, -1.0).unwrap();
        let s = solve_stationary(&ou, &g, 0.2, 0.0).unwrap();
        assert!(s.gamma1 < 0.0);
        assert!(s.residual < 1e-6, "residual {}", s.residual);
        assert_abs_diff_eq!(moment(&s.density, &g, 1).unwrap(), -1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(moment(&s.density, &g, 2).unwrap(), 1.1, epsilon = 1e-3);
    }

    #[test]
    fn stationary_saddle_node_peaks_at_stable_point() {
        let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.05).unwrap();
        let sn = SaddleNodeLinearDrift::new(1.0, 0.0).unwrap();
        let s = solve_stationary(&sn, &g, 0.2, 0.0).unwrap();
        assert!(s.gamma1 < 0.0);
        let (k, _) = s
            .density
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        assert!((g.node(k) + 1.0).abs() <= g.dx() + 1e-12);
    }

    #[test]
    fn cn_pair_examples() {
        let g = SpatialGrid::with_spacing(-1.0, 1.0, 0.1).unwrap();
        let tg = TimeGrid::with_step(0.0, 1.0, 0.01).unwrap();
        let (a1, a2) = assemble_cn_pair(&StraightDrift, &g, &tg, 0.2, 1).unwrap();
        for i in 1..g.len() - 1 {
            assert_abs_diff_eq!(a1.matrix.sub[i], 0.075, epsilon = 1e-12);
            assert_abs_diff_eq!(a1.matrix.diag[i], 0.8, epsilon = 1e-12);
            assert_abs_diff_eq!(a1.matrix.sup[i], 0.125, epsilon = 1e-12);
            assert_abs_diff_eq!(a2.matrix.diag[i] - a1.matrix.diag[i], -2.0, epsilon = 1e-12);
            assert_eq!(a2.matrix.sub[i], a1.matrix.sub[i]);
            assert_eq!(a2.matrix.sup[i], a1.matrix.sup[i]);
        }
        assert_eq!(a2.matrix.diag[0], 1.0);
        assert_eq!(a1.label, OperatorLabel::A1);
        assert!(assemble_cn_pair(&StraightDrift, &g, &tg, 0.2, 0).is_err());

        let tiny = TimeGrid::new(0.0, 1e-12, 1).unwrap();
        let (a1, a2) = assemble_cn_pair(&StraightDrift, &g, &tiny, 0.2, 1).unwrap();
        assert_abs_diff_eq!(a1.matrix.diag[3], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a2.matrix.diag[3], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn step_examples() {
        let g = SpatialGrid::with_spacing(-6.0, 3.0, 0.05).unwrap();
        let tg = TimeGrid::with_step(0.0, 1.0, 0.01).unwrap();
        let (a1, a2) = assemble_cn_pair(&StraightDrift, &g, &tg, 0.2, 1).unwrap();
        let z = step(&DensityState::zeros(&g), &a1, &a2, &g).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));

        let p = normalize(&DensityState::gaussian(&g, 0.0, 0.1), &g).unwrap();
        let next = step(&p, &a1, &a2, &g).unwrap();
        let mass = trapezoid_mass(&next, &g).unwrap();
        assert!(mass <= 1.0 + 1e-10);
        let m0 = moment(&p, &g, 1).unwrap();
        let m1 = moment(&normalize(&next, &g).unwrap(), &g, 1).unwrap();
        assert_abs_diff_eq!(m1 - m0, -0.01, epsilon = 1e-4);
        assert_abs_diff_eq!(next.survival, mass, epsilon = 1e-15);
    }

    #[test]
    fn admissibility_examples() {
        let g = SpatialGrid::with_spacing(-1.0, 1.0, 0.1).unwrap();
        let tg = TimeGrid::with_step(0.0, 1.0, 0.01).unwrap();
        let r = check_admissibility(&StraightDrift, &g, &tg, 0.2, (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(r.peclet, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.dt_bound, 0.05, epsilon = 1e-12);
        assert!(r.passed());

        let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.05).unwrap();
        let sn = SaddleNodeLinearDrift::new(0.25, 0.0).unwrap();
        let r = check_admissibility(&sn, &g, &tg, 0.2, (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(r.peclet, 1.5, epsilon = 1e-9);
        assert!(r.passed());

        let coarse = TimeGrid::with_step(0.0, 1.0, 0.1).unwrap();
        let r = check_admissibility(&sn, &g, &coarse, 0.2, (0.0, 1.0)).unwrap();
        assert!(!r.dt_ok);
        let strict = evolve(
            &sn,
            &g,
            &coarse,
            0.2,
            &DensityState::gaussian(&g, -0.5, 0.1),
            &mut NoObserver,
            EvolveOptions { strict: true },
        );
        assert!(matches!(strict, Err(Error::Admissibility(_))));
    }

    #[test]
    fn evolve_without_steps_returns_initial() {
        struct Count(usize, usize);
        impl StepObserver for Count {
            fn initial(&mut self, _: f64, _: &SpatialGrid, _: &DensityState) -> Result<()> {
                self.0 += 1;
                Ok(())
            }
            fn after_step(&mut self, _: &StepContext<'_>) -> Result<()> {
                self.1 += 1;
                Ok(())
            }
        }
        let g = SpatialGrid::with_spacing(-3.0, 3.0, 0.1).unwrap();
        let init = normalize(&DensityState::gaussian(&g, 0.0, 0.2), &g).unwrap();
        let mut c = Count(0, 0);
        let out = evolve(
            &StraightDrift,
            &g,
            &TimeGrid::instant(0.0).unwrap(),
            0.2,
            &init,
            &mut c,
            EvolveOptions::default(),
        )
        .unwrap();
        assert_eq!((c.0, c.1), (1, 0));
        for (a, b) in out.values.iter().zip(&init.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    fn straight_error(dx: f64, dt: f64) -> f64 {
        let d = 0.2;
        let t0 = 0.05;
        let g = SpatialGrid::with_spacing(-8.0, 4.0, dx).unwrap();
        let tg = TimeGrid::with_step(t0, 1.0, dt).unwrap();
        let init = DensityState::from_fn(&g, |x| analytic_straight(x, t0, d));
        let out = evolve(&StraightDrift, &g, &tg, d, &init, &mut NoObserver, EvolveOptions::default())
            .unwrap();
        let exact = DensityState::from_fn(&g, |x| analytic_straight(x, 1.0, d));
        let exact = normalize(&exact, &g).unwrap();
        out.values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn straight_drift_is_second_order() {
        let coarse = straight_error(0.1, 0.01);
        let fine = straight_error(0.05, 0.005);
        assert!(coarse / fine >= 3.0, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn survival_is_non_increasing() {
        struct Mono(f64, bool);
        impl StepObserver for Mono {
            fn initial(&mut self, _: f64, _: &SpatialGrid, _: &DensityState) -> Result<()> {
                Ok(())
            }
            fn after_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
                if ctx.raw.survival > self.0 * (1.0 + 1e-10) {
                    self.1 = false;
                }
                self.0 = ctx.raw.survival;
                Ok(())
            }
        }
        let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.05).unwrap();
        let tg = TimeGrid::with_step(0.0, 20.0, 0.01).unwrap();
        let sn = SaddleNodeLinearDrift::new(1.0, 0.0075).unwrap();
        let init = solve_stationary(&sn, &g, 0.2, 0.0).unwrap().density;
        let mut obs = Mono(1.0, true);
        let out = evolve(&sn, &g, &tg, 0.2, &init, &mut obs, EvolveOptions::default()).unwrap();
        assert!(obs.1);
        assert!(out.survival < 1.0 && out.survival > 0.0);
    }

    #[test]
    fn stationary_density_is_a_fixed_point() {
        let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.05).unwrap();
        let tg = TimeGrid::with_step(0.0, 1.0, 0.01).unwrap();
        let sn = SaddleNodeLinearDrift::new(1.0, 0.0).unwrap();
        let s = solve_stationary(&sn, &g, 0.2, 0.0).unwrap();
        // Step without renormalization to observe the decay factor.
        let mut p = s.density.clone();
        for n in 1..=100 {
            let (a1, a2) = assemble_cn_pair(&sn, &g, &tg, 0.2, n).unwrap();
            p = step(&p, &a1, &a2, &g).unwrap();
        }
        let decay = (s.gamma1 * 1.0).exp();
        let diff = p
            .values
            .iter()
            .zip(&s.density.values)
            .map(|(a, b)| (a - decay * b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "diff {diff}");
    }

    proptest! {
        #[test]
        fn step_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, shift in -0.5f64..0.5) {
            let g = SpatialGrid::with_spacing(-2.5, 2.0, 0.05).unwrap();
            let tg = TimeGrid::with_step(0.0, 1.0, 0.01).unwrap();
            let sn = SaddleNodeLinearDrift::new(1.0, 0.0075).unwrap();
            let (a1, a2) = assemble_cn_pair(&sn, &g, &tg, 0.2, 7).unwrap();
            let p1 = DensityState::gaussian(&g, -1.0 + shift, 0.1);
            let p2 = DensityState::gaussian(&g, 0.3, 0.05);
            let combo = DensityState::new(
                p1.values.iter().zip(&p2.values).map(|(x, y)| a * x + b * y).collect(),
            );
            let lhs = step_unsanitized(&combo, &a1, &a2, &g).unwrap();
            let s1 = step_unsanitized(&p1, &a1, &a2, &g).unwrap();
            let s2 = step_unsanitized(&p2, &a1, &a2, &g).unwrap();
            for k in 0..g.len() {
                prop_assert!((lhs.values[k] - (a * s1.values[k] + b * s2.values[k])).abs() < 1e-12);
            }
        }
    }
}
