//! Drift and potential families `f(x, t) = -dU/dx`, their quasi-static
//! equilibria, and the noise/space/time rescaling of the saddle-node normal
//! form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the potential at a frozen time: the well bottom and, when it
/// exists, the hill top that bounds it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landscape {
    pub stable: f64,
    /// `U''` at the well bottom.
    pub alpha: f64,
    pub hill: Option<Hill>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hill {
    pub position: f64,
    /// `|U''|` at the hill top.
    pub beta: f64,
    /// `U(hill) - U(well)`.
    pub barrier: f64,
}

pub trait DriftModel: Send + Sync {
    fn drift(&self, x: f64, t: f64) -> f64;

    /// Potential with `f = -dU/dx`, defined up to a time-dependent constant.
    fn potential(&self, x: f64, t: f64) -> f64 {
        -integrate(|s| self.drift(s, t), 0.0, x)
    }

    /// Quasi-static landscape at time `t`; `Err(FoldCrossed)` when no stable
    /// equilibrium exists.
    fn landscape(&self, t: f64) -> Result<Landscape> {
        Err(Error::FoldCrossed { t })
    }

    /// Value of the saddle-node parameter `p` in `f = x^2 - p`, for models
    /// that are the normal form.
    fn normal_form_parameter(&self, _t: f64) -> Option<f64> {
        None
    }

    fn is_time_dependent(&self) -> bool {
        true
    }
}

impl<M: DriftModel + ?Sized> DriftModel for &M {
    fn drift(&self, x: f64, t: f64) -> f64 {
        (**self).drift(x, t)
    }
    fn potential(&self, x: f64, t: f64) -> f64 {
        (**self).potential(x, t)
    }
    fn landscape(&self, t: f64) -> Result<Landscape> {
        (**self).landscape(t)
    }
    fn normal_form_parameter(&self, t: f64) -> Option<f64> {
        (**self).normal_form_parameter(t)
    }
    fn is_time_dependent(&self) -> bool {
        (**self).is_time_dependent()
    }
}

impl<M: DriftModel + ?Sized> DriftModel for Box<M> {
    fn drift(&self, x: f64, t: f64) -> f64 {
        (**self).drift(x, t)
    }
    fn potential(&self, x: f64, t: f64) -> f64 {
        (**self).potential(x, t)
    }
    fn landscape(&self, t: f64) -> Result<Landscape> {
        (**self).landscape(t)
    }
    fn normal_form_parameter(&self, t: f64) -> Option<f64> {
        (**self).normal_form_parameter(t)
    }
    fn is_time_dependent(&self) -> bool {
        (**self).is_time_dependent()
    }
}

/// `f(x, t) = -1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StraightDrift;

impl DriftModel for StraightDrift {
    fn drift(&self, _x: f64, _t: f64) -> f64 {
        -1.0
    }
    fn potential(&self, x: f64, _t: f64) -> f64 {
        x
    }
    fn is_time_dependent(&self) -> bool {
        false
    }
}

/// Saddle-node normal form `f = x^2 - p(t)` with `p(t) = p0 - eps * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleNodeLinearDrift {
    pub p0: f64,
    pub eps: f64,
}

impl SaddleNodeLinearDrift {
    pub fn new(p0: f64, eps: f64) -> Result<Self> {
        if !p0.is_finite() || !(eps >= 0.0) {
            return Err(Error::Domain(format!("need finite p0 and eps >= 0 (p0={p0}, eps={eps})")));
        }
        Ok(Self { p0, eps })
    }

    pub fn p(&self, t: f64) -> f64 {
        self.p0 - self.eps * t
    }
}

impl DriftModel for SaddleNodeLinearDrift {
    fn drift(&self, x: f64, t: f64) -> f64 {
        x * x - self.p(t)
    }
    fn potential(&self, x: f64, t: f64) -> f64 {
        normal_form_potential(x, self.p(t))
    }
    fn landscape(&self, t: f64) -> Result<Landscape> {
        normal_form_landscape(self.p(t), t)
    }
    fn normal_form_parameter(&self, t: f64) -> Option<f64> {
        Some(self.p(t))
    }
    fn is_time_dependent(&self) -> bool {
        self.eps != 0.0
    }
}

/// Normal form driven by the transformed ramp of the rate-induced system,
/// `p~(t) = p0 - eps * lmax * lambda(t) + eps * lambda(t)^2` with
/// `lambda(t) = (lmax / 2) (tanh(lmax eps t / 2) + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleNodeNonlinearDrift {
    pub p0: f64,
    pub eps: f64,
    pub lambda_max: f64,
}

impl SaddleNodeNonlinearDrift {
    pub fn new(p0: f64, eps: f64, lambda_max: f64) -> Result<Self> {
        if !p0.is_finite() || !(eps >= 0.0) || !(lambda_max > 0.0) {
            return Err(Error::Domain(format!(
                "need eps >= 0 and lambda_max > 0 (eps={eps}, lambda_max={lambda_max})"
            )));
        }
        Ok(Self { p0, eps, lambda_max })
    }

    pub fn lambda(&self, t: f64) -> f64 {
        0.5 * self.lambda_max * ((0.5 * self.lambda_max * self.eps * t).tanh() + 1.0)
    }

    pub fn p(&self, t: f64) -> f64 {
        // eps * lambda * (lambda - lmax) is symmetric in t because
        // lambda(-t) = lmax - lambda(t); the product form keeps that exact.
        let l = self.lambda(t);
        let m = self.lambda_max - l;
        self.p0 - self.eps * l * m
    }

    /// `(p_min, p_max)`: the value at `t = 0` and the limit at `t -> -inf`.
    pub fn drift_range(&self) -> (f64, f64) {
        (self.p0 - self.eps * self.lambda_max.powi(2) / 4.0, self.p0)
    }
}

impl DriftModel for SaddleNodeNonlinearDrift {
    fn drift(&self, x: f64, t: f64) -> f64 {
        x * x - self.p(t)
    }
    fn potential(&self, x: f64, t: f64) -> f64 {
        normal_form_potential(x, self.p(t))
    }
    fn landscape(&self, t: f64) -> Result<Landscape> {
        normal_form_landscape(self.p(t), t)
    }
    fn normal_form_parameter(&self, t: f64) -> Option<f64> {
        Some(self.p(t))
    }
    fn is_time_dependent(&self) -> bool {
        self.eps != 0.0
    }
}

/// Linearization around a well: `f = -kappa (x - center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuLinearization {
    pub kappa: f64,
    pub center: f64,
}

impl OuLinearization {
    pub fn new(kappa: f64, center: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self { kappa, center })
    }
}

impl DriftModel for OuLinearization {
    fn drift(&self, x: f64, _t: f64) -> f64 {
        -self.kappa * (x - self.center)
    }
    fn potential(&self, x: f64, _t: f64) -> f64 {
        0.5 * self.kappa * (x - self.center).powi(2)
    }
    fn landscape(&self, _t: f64) -> Result<Landscape> {
        Ok(Landscape {
            stable: self.center,
            alpha: self.kappa,
            hill: None,
        })
    }
    fn is_time_dependent(&self) -> bool {
        false
    }
}

/// Wraps a closure as a drift; the potential is integrated numerically.
pub struct FnDrift<F>(pub F);

impl<F> DriftModel for FnDrift<F>
where
    F: Fn(f64, f64) -> f64 + Send + Sync,
{
    fn drift(&self, x: f64, t: f64) -> f64 {
        (self.0)(x, t)
    }
}

fn normal_form_potential(x: f64, p: f64) -> f64 {
    -x * x * x / 3.0 + p * x
}

fn normal_form_landscape(p: f64, t: f64) -> Result<Landscape> {
    if !(p > 0.0) {
        return Err(Error::FoldCrossed { t });
    }
    let r = p.sqrt();
    Ok(Landscape {
        stable: -r,
        alpha: 2.0 * r,
        hill: Some(Hill {
            position: r,
            beta: 2.0 * r,
            barrier: 4.0 / 3.0 * p * r,
        }),
    })
}

/// Composite 5-point Gauss-Legendre quadrature of `f` over `[a, b]`.
pub(crate) fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    if a == b {
        return 0.0;
    }
    let panels = 32;
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        for (n, w) in NODES.iter().zip(WEIGHTS) {
            sum += w * f(mid + 0.5 * h * n);
        }
    }
    0.5 * h * sum
}

/// Space/time/parameter factors relating the normal form at noise `D` to the
/// normal form at noise `D~`: `X = s_x Y`, `t = s_t tau`, `p = s_p q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMap {
    pub d_original: f64,
    pub d_scaled: f64,
    pub s_x: f64,
    pub s_t: f64,
    pub s_p: f64,
}

impl ScalingMap {
    pub fn new(d_original: f64, d_scaled: f64) -> Result<Self> {
        if !(d_original > 0.0) || !(d_scaled > 0.0) {
            return Err(Error::Domain(format!(
                "noise levels must be positive (D={d_original}, D~={d_scaled})"
            )));
        }
        let ratio = d_original / d_scaled;
        let s_x = ratio.cbrt();
        Ok(Self {
            d_original,
            d_scaled,
            s_x,
            s_t: 1.0 / s_x,
            s_p: s_x * s_x,
        })
    }

    pub fn identity(d: f64) -> Result<Self> {
        Self::new(d, d)
    }
}

/// Noise `D~ = (q0/p0)^{3/2} D` and speed `eps~ = eps D~ / D` under which the
/// normal form started at `p0` is equivalent to one started at `q0`.
pub fn scale_parameters(p0: f64, eps: f64, d: f64, q0: f64) -> Result<(f64, f64, ScalingMap)> {
    if !(p0 > 0.0) || !(q0 > 0.0) || !(d > 0.0) {
        return Err(Error::Domain(format!(
            "scale_parameters needs positive p0, q0, D (p0={p0}, q0={q0}, D={d})"
        )));
    }
    let d_tilde = (q0 / p0).powf(1.5) * d;
    let eps_tilde = eps * d_tilde / d;
    Ok((d_tilde, eps_tilde, ScalingMap::new(d, d_tilde)?))
}

/// Maps a decay rate and variance of the scaled system back to the original
/// one: `kappa_X = (D/D~)^{1/3} kappa_Y`, `V_X = (D/D~)^{2/3} V_Y`.
pub fn quasi_static_rescale(kappa_y: f64, v_y: f64, map: &ScalingMap) -> Result<(f64, f64)> {
    if !(kappa_y > 0.0) || !(v_y > 0.0) {
        return Err(Error::Domain(format!(
            "rescale needs positive inputs (kappa={kappa_y}, V={v_y})"
        )));
    }
    Ok((map.s_x * kappa_y, map.s_p * v_y))
}

/// Outcome of the deterministic rate-induced tipping experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TippingOutcome {
    pub tipped: bool,
    /// Time at which the blow-up threshold was exceeded.
    pub blow_up_time: Option<f64>,
    /// Largest `x` reached while `p~(t) < 0` (past the fold), if that happened.
    pub max_past_fold: Option<f64>,
    pub final_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTippingConfig {
    pub horizon: f64,
    pub x_blow: f64,
    pub rtol: f64,
    /// Initial state at `-horizon`; defaults to the stable quasi-static equilibrium.
    pub x0: Option<f64>,
}

impl Default for RateTippingConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            x_blow: 10.0,
            rtol: 1e-8,
            x0: None,
        }
    }
}

/// Integrates `x' = x^2 - p~(t)` from `-horizon` to `+horizon` and reports
/// whether the trajectory escapes past `x_blow`.
pub fn rate_tipping_deterministic(
    model: &SaddleNodeNonlinearDrift,
    cfg: &RateTippingConfig,
) -> Result<TippingOutcome> {
    let t0 = -cfg.horizon;
    let x0 = match cfg.x0 {
        Some(x) => x,
        None => {
            let p = model.p(t0);
            if !(p > 0.0) {
                return Err(Error::Domain(format!(
                    "no stable equilibrium at t = {t0} (p = {p})"
                )));
            }
            -p.sqrt()
        }
    };
    let mut max_past_fold: Option<f64> = None;
    let mut observe = |t: f64, x: f64| {
        if model.p(t) < 0.0 {
            max_past_fold = Some(max_past_fold.map_or(x, |m: f64| m.max(x)));
        }
        x > cfg.x_blow
    };
    let end = crate::ode::dopri5(
        |t, x| x * x - model.p(t),
        t0,
        x0,
        cfg.horizon,
        cfg.rtol,
        &mut observe,
    )?;
    Ok(TippingOutcome {
        tipped: end.stopped,
        blow_up_time: end.stopped.then_some(end.t),
        max_past_fold,
        final_x: end.x,
    })
}

/// Bisects the drift speed separating tracking from rate-induced tipping
/// within `[eps_lo, eps_hi]`; returns the final bracket.
pub fn rate_tipping_threshold(
    p0: f64,
    lambda_max: f64,
    eps_lo: f64,
    eps_hi: f64,
    tol: f64,
    cfg: &RateTippingConfig,
) -> Result<(f64, f64)> {
    let tips = |eps: f64| -> Result<bool> {
        Ok(rate_tipping_deterministic(&SaddleNodeNonlinearDrift::new(p0, eps, lambda_max)?, cfg)?.tipped)
    };
    let (mut lo, mut hi) = (eps_lo, eps_hi);
    if tips(lo)? || !tips(hi)? {
        return Err(Error::Domain(format!(
            "[{lo}, {hi}] does not bracket the tipping threshold"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if tips(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn potential_matches_drift_by_central_difference() {
        let models: Vec<Box<dyn DriftModel>> = vec![
            Box::new(StraightDrift),
            Box::new(SaddleNodeLinearDrift::new(1.0, 0.0075).unwrap()),
            Box::new(SaddleNodeNonlinearDrift::new(1.0, 1.0 / 3.0, 3.0).unwrap()),
            Box::new(OuLinearization::new(2.0, -1.0).unwrap()),
            Box::new(FnDrift(|x: f64, t: f64| x.sin() - 0.1 * t)),
        ];
        let h = 1e-5;
        for m in &models {
            for &(x, t) in &[(-2.0, 0.0), (-0.3, 5.0), (0.7, -3.0), (1.5, 40.0)] {
                let du = (m.potential(x + h, t) - m.potential(x - h, t)) / (2.0 * h);
                let f = m.drift(x, t);
                assert!((-du - f).abs() <= 1e-6 * (1.0 + f.abs()), "f={f}, -U'={}", -du);
            }
        }
    }

    #[test]
    fn normal_form_equilibria_and_barrier() {
        for &p in &[0.25, 1.0, 4.0] {
            let m = SaddleNodeLinearDrift::new(p, 0.0).unwrap();
            let l = m.landscape(0.0).unwrap();
            let hill = l.hill.unwrap();
            assert_abs_diff_eq!(m.drift(l.stable, 0.0), 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(m.drift(hill.position, 0.0), 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(
                m.potential(hill.position, 0.0) - m.potential(l.stable, 0.0),
                4.0 / 3.0 * p.powf(1.5),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(hill.barrier, 4.0 / 3.0 * p.powf(1.5), epsilon = 1e-12);
            assert_abs_diff_eq!(l.alpha, 2.0 * p.sqrt(), epsilon = 1e-12);
            assert!(l.alpha > 0.0 && hill.beta > 0.0);
        }
        let past = SaddleNodeLinearDrift::new(0.25, 0.01).unwrap();
        assert!(matches!(past.landscape(30.0), Err(Error::FoldCrossed { .. })));
    }

    #[test]
    fn nonlinear_ramp_is_symmetric() {
        let m = SaddleNodeNonlinearDrift::new(1.0, 1.0 / 3.0, 3.0).unwrap();
        assert_abs_diff_eq!(m.lambda(0.0), 1.5, epsilon = 1e-15);
        for k in 0..100 {
            let t = -10.0 + 0.2 * k as f64 + 0.013;
            assert!((m.p(t) - m.p(-t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn lambda_solves_logistic_ode() {
        let m = SaddleNodeNonlinearDrift::new(1.0, 0.8, 3.0).unwrap();
        let h = 1e-4;
        for k in 0..41 {
            let t = -4.0 + 0.2 * k as f64;
            let dl = (m.lambda(t + h) - m.lambda(t - h)) / (2.0 * h);
            let l = m.lambda(t);
            assert!((dl - m.eps * l * (m.lambda_max - l)).abs() < 1e-8);
        }
    }

    #[test]
    fn drift_range_examples() {
        let r = SaddleNodeNonlinearDrift::new(1.0, 1.0 / 3.0, 3.0).unwrap().drift_range();
        assert_abs_diff_eq!(r.0, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r.1, 1.0);
        let r = SaddleNodeNonlinearDrift::new(1.0, 0.0, 3.0).unwrap().drift_range();
        assert_eq!(r, (1.0, 1.0));
        let m = SaddleNodeNonlinearDrift::new(1.0, 1.0, 3.0).unwrap();
        let r = m.drift_range();
        assert_abs_diff_eq!(r.0, -1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m.p(0.0), r.0, epsilon = 1e-12);
        assert!((m.p(-50.0) - r.1).abs() < 1e-9);
    }

    #[test]
    fn scaling_examples() {
        let (dt, et, map) = scale_parameters(4.0, 0.0, 0.2, 1.0).unwrap();
        assert_abs_diff_eq!(dt, 0.025, epsilon = 1e-15);
        assert_eq!(et, 0.0);
        assert_abs_diff_eq!(map.s_x, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(map.s_x * map.s_t, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(map.s_p, map.s_x * map.s_x, epsilon = 1e-15);

        let (dt, et, map) = scale_parameters(1.0, 0.5, 0.2, 1.0).unwrap();
        assert_abs_diff_eq!(dt, 0.2);
        assert_abs_diff_eq!(et, 0.5);
        assert_abs_diff_eq!(map.s_x, 1.0);

        assert!(scale_parameters(0.0, 0.1, 0.2, 1.0).is_err());
        assert!(scale_parameters(1.0, 0.1, -0.2, 1.0).is_err());
        assert!(scale_parameters(1.0, 0.1, 0.2, 0.0).is_err());
    }

    #[test]
    fn noise_relation_recovered_from_map() {
        // D~ = (q0/p0)^{3/2} D is the same as p = s_p q evaluated at p0, q0.
        let (d_tilde, _, map) = scale_parameters(2.7, 0.1, 0.13, 0.6).unwrap();
        assert_abs_diff_eq!(map.s_p * 0.6, 2.7, epsilon = 1e-12);
        assert_abs_diff_eq!(map.d_scaled, d_tilde);
    }

    #[test]
    fn rescale_examples() {
        let map = ScalingMap::new(0.2, 0.025).unwrap();
        let (k, v) = quasi_static_rescale(2.0, 0.0125, &map).unwrap();
        assert_abs_diff_eq!(k, 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(v, 0.05, epsilon = 1e-15);
        let id = ScalingMap::identity(0.2).unwrap();
        assert_eq!(quasi_static_rescale(1.7, 0.3, &id).unwrap(), (1.7, 0.3));
        assert!(quasi_static_rescale(0.0, 0.3, &id).is_err());
    }

    #[test]
    fn rate_induced_tipping_examples() {
        let cfg = RateTippingConfig::default();
        let run = |eps: f64| {
            rate_tipping_deterministic(&SaddleNodeNonlinearDrift::new(1.0, eps, 3.0).unwrap(), &cfg)
                .unwrap()
        };
        assert!(!run(1.3).tipped);
        assert!(run(1.4).tipped);
        let slow = run(1.0);
        assert!(!slow.tipped);
        // The trajectory spends time past the fold without escaping.
        assert!(slow.max_past_fold.is_some());
        assert!(slow.final_x < 0.0);
    }

    #[test]
    fn tipping_is_monotone_and_bracketed() {
        let cfg = RateTippingConfig::default();
        let mut seen = false;
        for k in 0..=20 {
            let eps = 1.0 + 0.05 * k as f64;
            let m = SaddleNodeNonlinearDrift::new(1.0, eps, 3.0).unwrap();
            let tipped = rate_tipping_deterministic(&m, &cfg).unwrap().tipped;
            assert!(!(seen && !tipped), "tipping not monotone at eps = {eps}");
            seen |= tipped;
        }
        let (lo, hi) = rate_tipping_threshold(1.0, 3.0, 1.0, 2.0, 1e-3, &cfg).unwrap();
        assert!(hi - lo <= 1e-3);
        assert!((0.5 * (lo + hi) - 4.0 / 3.0).abs() < 0.02);
        assert!(rate_tipping_threshold(1.0, 3.0, 1.5, 2.0, 1e-3, &cfg).is_err());
    }
}
