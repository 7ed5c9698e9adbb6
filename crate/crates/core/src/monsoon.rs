//! Reduced box model of the Indian summer monsoon.
//!
//! Four state variables: specific humidity `q_a`, near-surface air
//! temperature `T_a` and two soil moisture layers `w1`, `w2`. The soil layers
//! are frozen at their present-day equilibrium and the temperature is slaved
//! to humidity through the quadratic temperature balance, leaving a scalar
//! drift in `q_a` driven by a planetary albedo ramp `A_sys(t) = A0 + eps t`.
//!
//! The shipped [`MonsoonParams::default`] is a synthetic calibration tuned by
//! hand to the qualitative present-day picture (humidity near 0.03 at albedo
//! 0.47, fold near 0.529). It is not a transcription of any published
//! parameter table.

use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{integrate, DriftModel, Hill, Landscape};
use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::indicators::{run_indicators, IndicatorSeries, PipelineOptions};
use crate::solver::{check_admissibility, solve_stationary, PECLET_MAX};

/// `q_sat(T_s) = at_reference + slope * (T_s - reference)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationHumidity {
    pub at_reference: f64,
    pub slope: f64,
    pub reference: f64,
}

/// Atmospheric lapse rate `Gamma(T, q) = base + d_temperature * (T - reference) + d_humidity * q`
/// and the adiabatic rate `Gamma_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LapseRate {
    pub base: f64,
    pub d_temperature: f64,
    pub d_humidity: f64,
    pub reference: f64,
    pub adiabatic: f64,
}

/// Surface temperature seen by `q_sat`: `T_s = scale * T_a + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceMap {
    pub scale: f64,
    pub offset: f64,
}

impl Default for SurfaceMap {
    fn default() -> Self {
        Self {
            scale: 1.0,
            offset: 0.0,
        }
    }
}

/// Process constants of the box model. All rates are per model time unit
/// (decades for the shipped calibration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonsoonParams {
    /// Evaporation coefficient.
    #[serde(rename = "A")]
    pub a: f64,
    /// Precipitation coefficient.
    #[serde(rename = "B")]
    pub b: f64,
    /// Runoff coefficient.
    #[serde(rename = "C")]
    pub c: f64,
    /// Moisture advection coefficient.
    #[serde(rename = "G")]
    pub g: f64,
    /// Outgoing long-wave slope.
    #[serde(rename = "H")]
    pub h: f64,
    /// Outgoing long-wave offset.
    #[serde(rename = "J")]
    pub j: f64,
    /// Heat advection coefficient.
    #[serde(rename = "K")]
    pub k: f64,
    pub g1: f64,
    pub g2: f64,
    pub i_q: f64,
    pub i_t: f64,
    pub latent_heat: f64,
    pub f1: f64,
    pub f2: f64,
    pub tau: f64,
    pub t_oc: f64,
    pub q_oc: f64,
    pub i0_cos_xi: f64,
    pub z1: f64,
    pub z2: f64,
    pub lapse: LapseRate,
    pub q_sat: SaturationHumidity,
    #[serde(default)]
    pub surface: SurfaceMap,
    pub a_sys0: f64,
}

impl Default for MonsoonParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            c: 2.46965,
            g: 0.514184,
            h: 1.86187,
            j: -343.139,
            k: 0.999818,
            g1: 1.0,
            g2: 0.752678,
            i_q: 5.79352e-3,
            i_t: 1e-2,
            latent_heat: 3083.51,
            f1: 0.1,
            f2: 0.9,
            tau: 0.05,
            t_oc: 300.0,
            q_oc: 0.0315015,
            i0_cos_xi: 400.0,
            z1: 1000.0,
            z2: 3000.0,
            lapse: LapseRate {
                base: 6.5e-3,
                d_temperature: 0.0,
                d_humidity: 0.0,
                reference: 300.0,
                adiabatic: 9.8e-3,
            },
            q_sat: SaturationHumidity {
                at_reference: 0.03,
                slope: 9.1281e-4,
                reference: 300.0,
            },
            surface: SurfaceMap::default(),
            a_sys0: 0.47,
        }
    }
}

impl MonsoonParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("I_q", self.i_q),
            ("I_T", self.i_t),
            ("f1", self.f1),
            ("f2", self.f2),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        let l = &self.lapse;
        let q = &self.q_sat;
        let values = [
            self.a, self.b, self.c, self.g, self.h, self.j, self.k, self.g1, self.g2,
            self.latent_heat, self.t_oc, self.q_oc, self.i0_cos_xi, self.z1, self.z2,
            l.base, l.d_temperature, l.d_humidity, l.reference, l.adiabatic,
            q.at_reference, q.slope, q.reference, self.surface.scale, self.surface.offset,
            self.a_sys0,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("monsoon parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn q_sat(&self, t_a: f64) -> f64 {
        let ts = self.surface.scale * t_a + self.surface.offset;
        self.q_sat.at_reference + self.q_sat.slope * (ts - self.q_sat.reference)
    }

    pub fn lapse_rate(&self, t: f64, q: f64) -> f64 {
        let l = &self.lapse;
        l.base + l.d_temperature * (t - l.reference) + l.d_humidity * q
    }

    /// `theta = T - (Gamma(T, q) - Gamma_a) z`.
    pub fn potential_temperature(&self, t: f64, q: f64, z: f64) -> f64 {
        t - (self.lapse_rate(t, q) - self.lapse.adiabatic) * z
    }

    /// Evaporation per unit soil moisture.
    pub fn evaporation_factor(&self, q: f64, t_a: f64) -> f64 {
        self.a * (t_a - self.t_oc) * (self.q_sat(t_a) - q)
    }

    pub fn precipitation(&self, q: f64) -> f64 {
        self.b * q
    }

    /// Runoff per unit soil moisture.
    pub fn runoff_factor(&self, q: f64) -> f64 {
        self.c * self.b * q
    }

    pub fn moisture_advection(&self, q: f64, t_a: f64) -> f64 {
        self.g * (t_a - self.t_oc) * (self.g1 * self.q_oc - self.g2 * q)
    }

    pub fn heat_advection(&self, q: f64, t_a: f64) -> f64 {
        let theta_oc = self.potential_temperature(self.t_oc, self.q_oc, self.z1);
        let theta_a = self.potential_temperature(t_a, q, self.z2);
        self.k * (t_a - self.t_oc) * (theta_oc - theta_a)
    }

    /// Right-hand side of the four-variable model.
    pub fn rhs(&self, s: &MonsoonState, a_sys: f64) -> [f64; 4] {
        let e = s.w1 * self.evaporation_factor(s.q_a, s.t_a);
        let p = self.precipitation(s.q_a);
        let r = s.w1 * self.runoff_factor(s.q_a);
        let dw1 = (p - e - r) / self.f1 + (s.w2 - s.w1) / self.tau;
        let dw2 = self.f1 * (s.w1 - s.w2) / (self.f2 * self.tau);
        let dq = (e - p + self.moisture_advection(s.q_a, s.t_a)) / self.i_q;
        let dt = (self.latent_heat * (p - e) - (self.h * s.t_a + self.j)
            + self.i0_cos_xi * (1.0 - a_sys)
            + self.heat_advection(s.q_a, s.t_a))
            / self.i_t;
        [dw1, dw2, dq, dt]
    }

    /// Coefficients of the temperature balance `c2 y^2 + c1 y + c0 = 0` in
    /// `y = T_a - T_oc`, with soil moisture `w`.
    fn temperature_quadratic(&self, q: f64, a_sys: f64, w: f64) -> [f64; 3] {
        let (qs0, qs1) = self.q_sat_affine();
        let l = &self.lapse;
        let gamma0 = l.base + l.d_temperature * (self.t_oc - l.reference);
        let theta_oc = self.potential_temperature(self.t_oc, self.q_oc, self.z1);
        let c_theta = theta_oc - self.t_oc + (gamma0 + l.d_humidity * q - l.adiabatic) * self.z2;
        let m = 1.0 - l.d_temperature * self.z2;
        let lw = self.latent_heat * w * self.a;
        [
            -lw * qs1 - self.k * m,
            -lw * (qs0 - q) - self.h + self.k * c_theta,
            self.latent_heat * self.b * q - self.h * self.t_oc - self.j
                + self.i0_cos_xi * (1.0 - a_sys),
        ]
    }

    /// `q_sat` as `qs0 + qs1 * (T_a - T_oc)`.
    fn q_sat_affine(&self) -> (f64, f64) {
        (
            self.q_sat(self.t_oc),
            self.q_sat.slope * self.surface.scale,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonsoonState {
    pub q_a: f64,
    pub t_a: f64,
    pub w1: f64,
    pub w2: f64,
}

/// `w1 = w2 = P / (E~ + R~)`.
pub fn soil_equilibrium(q_a: f64, t_a: f64, p: &MonsoonParams) -> Result<(f64, f64)> {
    let denom = p.evaporation_factor(q_a, t_a) + p.runoff_factor(q_a);
    if !(denom > 0.0) {
        if q_a == 0.0 {
            return Ok((0.0, 0.0));
        }
        return Err(Error::PhysicalRegime(format!(
            "soil balance has nonpositive loss rate {denom} at q_a = {q_a}, T_a = {t_a}"
        )));
    }
    let w = p.precipitation(q_a) / denom;
    Ok((w, w))
}

/// Root of the temperature balance with `dF/dT < 0`. With the discriminant
/// clamped at zero, also returns whether clamping happened.
fn temperature_root(c: [f64; 3], clamp: bool) -> Result<(f64, bool)> {
    let [a2, a1, a0] = c;
    if a2 == 0.0 {
        if !(a1 < 0.0) {
            return Err(Error::PhysicalRegime(
                "linear temperature balance has no stable root".into(),
            ));
        }
        return Ok((-a0 / a1, false));
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    let clamped = disc < 0.0;
    if clamped && !clamp {
        return Err(Error::NoEquilibrium(format!(
            "temperature balance has negative discriminant {disc}"
        )));
    }
    Ok(((-a1 - disc.max(0.0).sqrt()) / (2.0 * a2), clamped))
}

/// Equilibrium albedo path `A_sys(t) = a0 + eps t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlbedoPath {
    pub a0: f64,
    pub eps: f64,
}

impl AlbedoPath {
    pub fn at(&self, t: f64) -> f64 {
        self.a0 + self.eps * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSample {
    pub q_a: f64,
    pub t_a: f64,
    pub a_sys: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub q_a: f64,
    pub a_sys: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationCurve {
    pub samples: Vec<BifurcationSample>,
    pub fold: Option<Fold>,
}

impl BifurcationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q_a,t_a,a_sys,stable\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{:?},{:?},{:?},{}\n",
                s.q_a, s.t_a, s.a_sys, s.stable as u8
            ));
        }
        out
    }

    /// Stable-branch humidity at albedo `a`, interpolated between samples.
    pub fn stable_humidity(&self, a: f64) -> Option<f64> {
        self.samples.windows(2).rev().find_map(|w| {
            let (s0, s1) = (w[0], w[1]);
            if !(s0.stable && s1.stable) {
                return None;
            }
            let (lo, hi) = (s0.a_sys.min(s1.a_sys), s0.a_sys.max(s1.a_sys));
            (a >= lo && a <= hi && hi > lo)
                .then(|| s0.q_a + (a - s0.a_sys) / (s1.a_sys - s0.a_sys) * (s1.q_a - s0.q_a))
        })
    }
}

/// Options for locating equilibria and building landscapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    /// Step of the five-point curvature stencils.
    pub stencil: f64,
}

impl Default for SearchWindow {
    fn default() -> Self {
        Self {
            lo: -0.015,
            hi: 0.045,
            samples: 600,
            stencil: 0.001,
        }
    }
}

/// The scalar drift in `q_a` with soil moisture frozen at its present-day
/// equilibrium.
#[derive(Debug)]
pub struct MonsoonModel {
    params: MonsoonParams,
    soil: f64,
    present: MonsoonState,
    albedo: AlbedoPath,
    window: SearchWindow,
    clamped: AtomicU64,
}

impl Clone for MonsoonModel {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            soil: self.soil,
            present: self.present,
            albedo: self.albedo,
            window: self.window,
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

const SOIL_MAX_ITERS: usize = 200;
const PRESENT_SEARCH: (f64, f64, usize) = (1e-5, 0.2, 4000);

impl MonsoonModel {
    /// Builds the model and solves for the present-day state: the stable
    /// humidity at `a_sys0` with soil moisture consistent with it.
    pub fn new(params: MonsoonParams) -> Result<Self> {
        params.validate()?;
        let mut model = Self {
            params,
            soil: 1.0,
            present: MonsoonState {
                q_a: 0.0,
                t_a: params.t_oc,
                w1: 1.0,
                w2: 1.0,
            },
            albedo: AlbedoPath {
                a0: params.a_sys0,
                eps: 0.0,
            },
            window: SearchWindow::default(),
            clamped: AtomicU64::new(0),
        };
        let (lo, hi, n) = PRESENT_SEARCH;
        let mut change = f64::INFINITY;
        for _ in 0..SOIL_MAX_ITERS {
            let roots = model.roots_at(params.a_sys0, lo, hi, n);
            let q = roots
                .iter()
                .rev()
                .find(|r| r.1)
                .map(|r| r.0)
                .ok_or_else(|| {
                    Error::NoEquilibrium(format!(
                        "no stable present-day humidity at A_sys = {}",
                        params.a_sys0
                    ))
                })?;
            let t = model.temperature_unchecked(q, params.a_sys0).0;
            let (w, _) = soil_equilibrium(q, t, &params)?;
            change = (w - model.soil).abs();
            model.soil = w;
            model.present = MonsoonState {
                q_a: q,
                t_a: t,
                w1: w,
                w2: w,
            };
            if change <= 1e-14 * w.max(1.0) {
                return Ok(model);
            }
        }
        Err(Error::Convergence {
            iterations: SOIL_MAX_ITERS,
            last_change: change,
        })
    }

    pub fn with_albedo(mut self, path: AlbedoPath) -> Self {
        self.albedo = path;
        self
    }

    pub fn with_window(mut self, window: SearchWindow) -> Self {
        self.window = window;
        self
    }

    pub fn params(&self) -> &MonsoonParams {
        &self.params
    }

    pub fn albedo(&self) -> AlbedoPath {
        self.albedo
    }

    /// Frozen soil moisture `w1 = w2`.
    pub fn soil_moisture(&self) -> f64 {
        self.soil
    }

    pub fn present_state(&self) -> MonsoonState {
        self.present
    }

    /// Drift evaluations that fell back to a clamped discriminant.
    pub fn clamped_evaluations(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Equilibrium temperature at `(q_a, A_sys)`.
    pub fn temperature_equilibrium(&self, q_a: f64, a_sys: f64) -> Result<f64> {
        let c = self.params.temperature_quadratic(q_a, a_sys, self.soil);
        let (y, _) = temperature_root(c, false)?;
        let t = self.params.t_oc + y;
        if !(self.params.q_sat(t) > q_a) {
            return Err(Error::PhysicalRegime(format!(
                "saturation humidity {} below q_a = {q_a} at T_a = {t}",
                self.params.q_sat(t)
            )));
        }
        Ok(t)
    }

    fn temperature_unchecked(&self, q_a: f64, a_sys: f64) -> (f64, bool) {
        let c = self.params.temperature_quadratic(q_a, a_sys, self.soil);
        match temperature_root(c, true) {
            Ok((y, clamped)) => (self.params.t_oc + y, clamped),
            Err(_) => (f64::NAN, true),
        }
    }

    /// Reduced drift `(E - P + A_v) / I_q` at a fixed albedo.
    pub fn drift_at_albedo(&self, q_a: f64, a_sys: f64) -> f64 {
        let (t, clamped) = self.temperature_unchecked(q_a, a_sys);
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        self.humidity_tendency(q_a, t)
    }

    fn humidity_tendency(&self, q_a: f64, t_a: f64) -> f64 {
        let p = &self.params;
        (self.soil * p.evaporation_factor(q_a, t_a) - p.precipitation(q_a)
            + p.moisture_advection(q_a, t_a))
            / p.i_q
    }

    /// Full state on the reduced manifold at `(q_a, A_sys)`.
    pub fn reduced_state(&self, q_a: f64, a_sys: f64) -> Result<MonsoonState> {
        Ok(MonsoonState {
            q_a,
            t_a: self.temperature_equilibrium(q_a, a_sys)?,
            w1: self.soil,
            w2: self.soil,
        })
    }

    /// Roots of the drift at fixed albedo in `[lo, hi]`, each flagged stable
    /// when the drift crosses from positive to negative.
    fn roots_at(&self, a_sys: f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, bool)> {
        let h = (hi - lo) / n as f64;
        let f = |q: f64| self.drift_at_albedo(q, a_sys);
        let mut out = Vec::new();
        let mut x0 = lo;
        let mut f0 = f(x0);
        for k in 1..=n {
            let x1 = lo + k as f64 * h;
            let f1 = f(x1);
            if f0 == 0.0 {
                out.push((x0, f1 < 0.0));
            } else if f0 * f1 < 0.0 {
                out.push((bisect(&f, x0, x1, f0), f0 > 0.0));
            }
            x0 = x1;
            f0 = f1;
        }
        out
    }

    /// Equilibria at albedo `a_sys` within the search window.
    pub fn equilibria(&self, a_sys: f64) -> Vec<(f64, bool)> {
        let w = &self.window;
        self.roots_at(a_sys, w.lo, w.hi, w.samples)
    }

    fn potential_between(&self, a_sys: f64, from: f64, to: f64) -> f64 {
        -integrate(|s| self.drift_at_albedo(s, a_sys), from, to)
    }

    /// Well and hill of the potential at fixed albedo, curvatures from
    /// five-point stencils of the integrated potential.
    pub fn landscape_at_albedo(&self, a_sys: f64, t: f64) -> Result<Landscape> {
        let roots = self.equilibria(a_sys);
        let Some(stable) = roots.iter().rev().find(|r| r.1).map(|r| r.0) else {
            return Err(Error::FoldCrossed { t });
        };
        let h = self.window.stencil;
        let hill = roots
            .iter()
            .rev()
            .find(|r| !r.1 && r.0 < stable)
            .map(|r| r.0);
        if hill.is_some_and(|x| stable - x <= 2.0 * h) {
            return Err(Error::FoldCrossed { t });
        }
        let curvature = |x: f64| {
            let u = |k: f64| self.potential_between(a_sys, x, x + k * h);
            (-u(2.0) + 16.0 * u(1.0) + 16.0 * u(-1.0) - u(-2.0)) / (12.0 * h * h)
        };
        let alpha = curvature(stable);
        if !(alpha > 0.0) {
            return Err(Error::FoldCrossed { t });
        }
        let hill = hill.map(|x| Hill {
            position: x,
            beta: curvature(x).abs(),
            barrier: self.potential_between(a_sys, stable, x),
        });
        Ok(Landscape {
            stable,
            alpha,
            hill,
        })
    }

    /// Temperature from the humidity balance at `q_a` and the albedo that
    /// closes the temperature balance there.
    fn branch_point(&self, q: f64) -> Result<(f64, f64)> {
        let p = &self.params;
        let (qs0, qs1) = p.q_sat_affine();
        let c2 = self.soil * p.a * qs1;
        let c1 = self.soil * p.a * (qs0 - q) + p.g * (p.g1 * p.q_oc - p.g2 * q);
        let c0 = -p.precipitation(q);
        let y = if c2 == 0.0 {
            -c0 / c1
        } else {
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc < 0.0 {
                return Err(Error::NoEquilibrium(format!(
                    "humidity balance has no temperature at q_a = {q}"
                )));
            }
            (-c1 + disc.sqrt()) / (2.0 * c2)
        };
        let [a2, a1, a0] = p.temperature_quadratic(q, 0.0, self.soil);
        Ok((p.t_oc + y, (a2 * y * y + a1 * y + a0) / p.i0_cos_xi))
    }

    /// Quadratic vertex of three samples bracketing the maximum, repeated
    /// on a shrinking stencil around each new vertex.
    fn refine_fold(&self, a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Result<Fold> {
        let mut fold = parabola_vertex(a, b, c);
        let mut h = 0.25 * (c.0 - a.0);
        for _ in 0..6 {
            h *= 0.1;
            let q = fold.q_a;
            let lo = (q - h, self.branch_point(q - h)?.1);
            let mid = (q, self.branch_point(q)?.1);
            let hi = (q + h, self.branch_point(q + h)?.1);
            fold = parabola_vertex(lo, mid, hi);
        }
        Ok(fold)
    }

    /// Bifurcation diagram: for each `q_a`, the temperature from the humidity
    /// balance, then the albedo from the temperature balance.
    pub fn scan_bifurcation(&self, q_grid: &[f64]) -> Result<BifurcationCurve> {
        if q_grid.len() < 3 {
            return Err(Error::Precondition("scan needs at least 3 humidities".into()));
        }
        if q_grid.windows(2).any(|w| !(w[1] > w[0])) || !(q_grid[0] > 0.0) {
            return Err(Error::Precondition(
                "scan humidities must be positive and strictly increasing".into(),
            ));
        }
        let mut samples = Vec::with_capacity(q_grid.len());
        for &q in q_grid {
            let (t_a, a_sys) = self.branch_point(q)?;
            samples.push(BifurcationSample {
                q_a: q,
                t_a,
                a_sys,
                stable: false,
            });
        }
        let imax = (0..samples.len())
            .max_by(|&i, &j| samples[i].a_sys.total_cmp(&samples[j].a_sys))
            .unwrap_or(0);
        let fold = if imax > 0 && imax + 1 < samples.len() {
            Some(self.refine_fold(
                (samples[imax - 1].q_a, samples[imax - 1].a_sys),
                (samples[imax].q_a, samples[imax].a_sys),
                (samples[imax + 1].q_a, samples[imax + 1].a_sys),
            )?)
        } else {
            None
        };
        for (i, s) in samples.iter_mut().enumerate() {
            s.stable = match fold {
                Some(f) => s.q_a > f.q_a,
                None => i > 0,
            };
        }
        Ok(BifurcationCurve { samples, fold })
    }

    /// Fold of the default scan over `(0, window.hi]`.
    pub fn fold(&self) -> Result<Fold> {
        let n = 4000;
        let hi = self.window.hi.max(self.present.q_a * 1.5);
        let grid: Vec<f64> = (1..=n).map(|k| hi * k as f64 / n as f64).collect();
        self.scan_bifurcation(&grid)?
            .fold
            .ok_or_else(|| Error::NoEquilibrium("no fold in the scanned humidity range".into()))
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn parabola_vertex(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> Fold {
    let (x0, y0) = p0;
    let (x1, y1) = p1;
    let (x2, y2) = p2;
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if curv >= 0.0 {
        return Fold { q_a: x1, a_sys: y1 };
    }
    // y = y1 + d (x - x1) + curv (x - x1)^2 with d the centered slope.
    let d = d01 + curv * (x1 - x0);
    let x = x1 - d / (2.0 * curv);
    Fold {
        q_a: x,
        a_sys: y1 + d * (x - x1) + curv * (x - x1).powi(2),
    }
}

impl DriftModel for MonsoonModel {
    fn drift(&self, x: f64, t: f64) -> f64 {
        self.drift_at_albedo(x, self.albedo.at(t))
    }

    fn landscape(&self, t: f64) -> Result<Landscape> {
        self.landscape_at_albedo(self.albedo.at(t), t)
    }

    fn is_time_dependent(&self) -> bool {
        self.albedo.eps != 0.0
    }
}

/// One point of an escape sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: f64,
    pub eps: f64,
    pub t_end: f64,
}

/// Base discretization; each point refines `dx` and `dt` as needed to pass
/// the admissibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub x_start: f64,
    pub x_end: f64,
    pub dx: f64,
    pub dt: f64,
    pub refine: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            x_start: -0.015,
            x_end: 0.045,
            dx: 0.001,
            dt: 0.0002,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeCurve {
    pub point: SweepPoint,
    pub dx: f64,
    pub dt: f64,
    pub albedo: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Clamped-discriminant drift evaluations during the run.
    pub clamped: u64,
}

impl EscapeCurve {
    /// Cumulative escape at albedo `a`, linearly interpolated.
    pub fn at_albedo(&self, a: f64) -> Option<f64> {
        interpolate_crossing(&self.albedo, &self.cumulative, a)
    }

    /// Albedo at which the cumulative escape first reaches `level`.
    pub fn albedo_at(&self, level: f64) -> Option<f64> {
        interpolate_crossing(&self.cumulative, &self.albedo, level)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("a_sys,cumulative_escape\n");
        for (a, c) in self.albedo.iter().zip(&self.cumulative) {
            out.push_str(&format!("{a:?},{c:?}\n"));
        }
        out
    }
}

/// First crossing of `level` by the nondecreasing `xs`, mapped onto `ys`.
fn interpolate_crossing(xs: &[f64], ys: &[f64], level: f64) -> Option<f64> {
    let i = xs.iter().position(|&x| x >= level)?;
    if i == 0 {
        return (xs[0] == level).then_some(ys[0]);
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    Some(ys[i - 1] + (level - x0) / (x1 - x0) * (ys[i] - ys[i - 1]))
}

const REFINE_SAFETY: f64 = 0.95;
const REFINE_MAX_ROUNDS: usize = 8;

fn refined_grids(
    model: &MonsoonModel,
    point: &SweepPoint,
    base: &SweepGrid,
) -> Result<(SpatialGrid, TimeGrid)> {
    let mut g = SpatialGrid::with_spacing(base.x_start, base.x_end, base.dx)?;
    let steps = |dt: f64| (point.t_end / dt).ceil().max(1.0) as usize;
    if !base.refine {
        return Ok((g, TimeGrid::new(0.0, point.t_end, steps(base.dt))?));
    }
    // The refined grid has nodes nearer the walls, where |f| may be larger,
    // so shrink until the check itself passes.
    for _ in 0..REFINE_MAX_ROUNDS {
        let dt = base.dt.min(0.9 * g.dx() * g.dx() / point.d);
        let tg = TimeGrid::new(0.0, point.t_end, steps(dt))?;
        let report = check_admissibility(model, &g, &tg, point.d, (0.0, point.t_end))?;
        if report.passed() {
            return Ok((g, tg));
        }
        let dx = g.dx() * (REFINE_SAFETY * PECLET_MAX / report.peclet).min(REFINE_SAFETY);
        let cells = ((base.x_end - base.x_start) / dx).ceil() as usize;
        g = SpatialGrid::new(base.x_start, base.x_end, cells - 1)?;
    }
    Err(Error::Admissibility(format!(
        "no admissible grid for D = {} after {REFINE_MAX_ROUNDS} refinements",
        point.d
    )))
}

/// Cumulative escape curve for one ramp speed and noise level, starting
/// from the stationary density at `t = 0`.
pub fn escape_curve(
    params: &MonsoonParams,
    point: SweepPoint,
    grid: &SweepGrid,
) -> Result<EscapeCurve> {
    let model = MonsoonModel::new(*params)?.with_albedo(AlbedoPath {
        a0: params.a_sys0,
        eps: point.eps,
    });
    let (g, tg) = refined_grids(&model, &point, grid)?;
    let initial = solve_stationary(&model, &g, point.d, 0.0)?.density;
    let opts = PipelineOptions {
        lag1: false,
        kramers: false,
        quasi_static_linear: false,
        ..PipelineOptions::all()
    };
    let series: IndicatorSeries = run_indicators(&model, &g, &tg, point.d, &initial, &opts)?;
    let clamped = model.clamped_evaluations();
    if clamped > 0 {
        warn!(
            "monsoon drift used the clamped temperature root {clamped} times (D = {}, eps = {})",
            point.d, point.eps
        );
    }
    Ok(EscapeCurve {
        point,
        dx: g.dx(),
        dt: tg.dt(),
        albedo: series.rows.iter().map(|r| model.albedo.at(r.t)).collect(),
        cumulative: series.rows.iter().map(|r| r.cumulative_escape).collect(),
        clamped,
    })
}

/// Runs every sweep point in parallel; failures are kept per point.
pub fn sweep_escape(
    params: &MonsoonParams,
    points: &[SweepPoint],
    grid: &SweepGrid,
) -> Vec<Result<EscapeCurve>> {
    points
        .par_iter()
        .map(|p| escape_curve(params, *p, grid))
        .collect()
}

/// Checks on the reduced model and its escape behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct MonsoonReport {
    pub reduction_residual: f64,
    pub fold: Option<Fold>,
    pub present_q: f64,
    /// 50%-escape albedo for `D = 0.004, 0.0012` on the 100-year ramp.
    pub a50_noise: [Option<f64>; 2],
    /// 50%-escape albedo for the 100-, 10- and 1-year ramps at `D = 0.004`.
    pub a50_speed: [Option<f64>; 3],
    /// Cumulative escape at the fold on the 1-year ramp.
    pub fast_at_fold: Option<f64>,
}

impl MonsoonReport {
    pub const RESIDUAL_TOL: f64 = 1e-8;
    pub const PRESENT_Q: f64 = 0.03;
    pub const PRESENT_BAND: f64 = 0.5;
    pub const FAST_TARGET: f64 = 0.25;
    pub const FAST_TOL: f64 = 0.1;
    pub const ALBEDO_TOL: f64 = 0.005;
    /// Decades.
    pub const FOLD_TIME_TOL: f64 = 0.1;

    pub fn residual_ok(&self) -> bool {
        self.reduction_residual <= Self::RESIDUAL_TOL
    }

    pub fn bifurcation_ok(&self) -> bool {
        self.fold.is_some_and(|f| f.a_sys > 0.47)
            && (self.present_q - Self::PRESENT_Q).abs() <= Self::PRESENT_BAND * Self::PRESENT_Q
    }

    pub fn orderings_ok(&self) -> bool {
        let fold = self.fold.map(|f| f.a_sys);
        let noise = match self.a50_noise {
            [Some(big), Some(small)] => small > big && fold.is_some_and(|f| small < f + 0.01),
            _ => false,
        };
        let speed = match self.a50_speed {
            [Some(slow), Some(mid), fast] => mid > slow && fast.is_none_or(|f| f > mid),
            _ => false,
        };
        let fast = self
            .fast_at_fold
            .is_some_and(|c| (c - Self::FAST_TARGET).abs() <= Self::FAST_TOL);
        noise && speed && fast
    }

    /// Present-day humidity within 10% of 0.03: the calibration then also has
    /// to match the reference escape albedos and fold timing.
    pub fn reproduces_present_day(&self) -> bool {
        (self.present_q - Self::PRESENT_Q).abs() <= 0.1 * Self::PRESENT_Q
    }

    pub fn reference_values_ok(&self) -> bool {
        let near = |v: Option<f64>, target: f64| v.is_some_and(|x| (x - target).abs() <= Self::ALBEDO_TOL);
        let fold_time = self.fold.map(|f| (f.a_sys - 0.47) / 0.006);
        near(self.a50_speed[0], 0.495)
            && near(self.a50_speed[1], 0.51)
            && fold_time.is_some_and(|t| (t - 9.8).abs() <= Self::FOLD_TIME_TOL)
    }

    pub fn pass(&self) -> bool {
        self.residual_ok()
            && self.bifurcation_ok()
            && self.orderings_ok()
            && (!self.reproduces_present_day() || self.reference_values_ok())
    }

    pub fn summary(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        format!(
            "residual {:.1e}, q*(0.47) {:.4}, fold {}, a50 by D [{}, {}], a50 by speed [{}, {}, {}], 1-year c(fold) {}",
            self.reduction_residual,
            self.present_q,
            self.fold.map_or("-".into(), |x| format!("({:.4}, {:.4})", x.q_a, x.a_sys)),
            f(self.a50_noise[0]),
            f(self.a50_noise[1]),
            f(self.a50_speed[0]),
            f(self.a50_speed[1]),
            f(self.a50_speed[2]),
            f(self.fast_at_fold),
        )
    }
}

/// Largest residual of the reduction: `|dT_a/dt|` and `|dw2/dt|` along the
/// stable branch scan, plus all four tendencies at the present-day state.
pub fn reduction_residual(model: &MonsoonModel, curve: &BifurcationCurve) -> Result<f64> {
    let p = model.params();
    let mut worst = p
        .rhs(&model.present_state(), p.a_sys0)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for s in curve.samples.iter().filter(|s| s.stable) {
        let state = model.reduced_state(s.q_a, s.a_sys)?;
        let [_, dw2, dq, dt] = p.rhs(&state, s.a_sys);
        worst = worst.max(dw2.abs()).max(dt.abs()).max(dq.abs());
    }
    Ok(worst)
}

/// Runs the qualitative monsoon checks with the standard sweep setup.
pub fn acceptance_report(model: &MonsoonModel) -> Result<MonsoonReport> {
    let p = *model.params();
    let hi = model.window.hi;
    let grid: Vec<f64> = (1..=900).map(|k| hi * k as f64 / 900.0).collect();
    let curve = model.scan_bifurcation(&grid)?;
    let reduction_residual = reduction_residual(model, &curve)?;
    let present_q = curve
        .stable_humidity(p.a_sys0)
        .unwrap_or(model.present_state().q_a);
    let span = 0.06;
    let points = [
        SweepPoint { d: 0.004, eps: span / 10.0, t_end: 10.0 },
        SweepPoint { d: 0.0012, eps: span / 10.0, t_end: 10.0 },
        SweepPoint { d: 0.004, eps: span, t_end: 1.0 },
        SweepPoint { d: 0.004, eps: span * 10.0, t_end: 0.1 },
    ];
    let curves = sweep_escape(&p, &points, &SweepGrid::default());
    let mut a50 = Vec::new();
    for c in &curves {
        a50.push(c.as_ref().ok().and_then(|c| c.albedo_at(0.5)));
    }
    let fast_at_fold = match (&curves[3], curve.fold) {
        (Ok(c), Some(f)) => c.at_albedo(f.a_sys),
        _ => None,
    };
    Ok(MonsoonReport {
        reduction_residual,
        fold: curve.fold,
        present_q,
        a50_noise: [a50[0], a50[1]],
        a50_speed: [a50[0], a50[2], a50[3]],
        fast_at_fold,
    })
}
