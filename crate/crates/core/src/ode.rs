//! Heavy Ball with friction, `ẍ + αẋ + ∇F(x) = 0`, integrated with the
//! classical fourth-order Runge–Kutta method on `(x, v)`.

use std::f64::consts::SQRT_2;

use thiserror::Error;

use crate::certify::CheckReport;
use crate::problems::{CompositeProblem, Vector};

/// Multiplicative slack on continuous-time bounds sampled on the grid.
pub const DISCRETIZATION_SLACK: f64 = 0.05;
/// `dt` must not exceed this multiple of `1/√L`.
pub const RESOLUTION: f64 = 0.1;
/// `11/2 − 2√2`
pub const THEOREM3_PREFACTOR: f64 = 5.5 - 2.0 * SQRT_2;
pub const PROPOSITION1_PREFACTOR: f64 = 39.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("only smooth problems (h = 0) can be integrated")]
    Nonsmooth,
    #[error("the problem has no trusted optimal value")]
    NoOptimalValue,
    #[error("the problem has no growth modulus")]
    NoMu,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("friction {got} does not match the required {expected}; the check is out of scope")]
    WrongFriction { expected: f64, got: f64 },
    #[error("the trajectory has no projections onto the minimizer set")]
    NoProjection,
}

/// `(2 − √2/2)√μ`
pub fn theorem3_friction(mu: f64) -> f64 {
    (2.0 - 0.5 * SQRT_2) * mu.sqrt()
}

/// `(3/√2)√μ`
pub fn proposition1_friction(mu: f64) -> f64 {
    3.0 / SQRT_2 * mu.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeConfig {
    pub alpha_c: f64,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub x0: Vector,
    pub v0: Vector,
}

impl OdeConfig {
    pub fn new(alpha_c: f64, t_end: f64, dt: f64, x0: Vector, v0: Vector) -> Self {
        Self {
            alpha_c,
            t0: 0.0,
            t_end,
            dt,
            x0,
            v0,
        }
    }

    pub fn validate(&self, p: &CompositeProblem) -> Result<(), OdeError> {
        let bad = |m: String| Err(OdeError::InvalidConfig(m));
        if !(self.alpha_c >= 0.0 && self.alpha_c.is_finite()) {
            return bad(format!("friction must be nonnegative, got {}", self.alpha_c));
        }
        if !(self.t0 >= 0.0 && self.t_end > self.t0 && self.t_end.is_finite()) {
            return bad(format!("need 0 <= t0 < t_end, got [{}, {}]", self.t0, self.t_end));
        }
        let max_dt = RESOLUTION / p.lipschitz().sqrt();
        if !(self.dt > 0.0 && self.dt <= max_dt * (1.0 + 1e-12)) {
            return bad(format!("dt = {} must lie in (0, 0.1/sqrt(L)] = (0, {max_dt}]", self.dt));
        }
        if self.x0.len() != p.dim() || self.v0.len() != p.dim() {
            return bad(format!("initial state must have dimension {}", p.dim()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub xs: Vec<Vector>,
    pub vs: Vec<Vector>,
    pub f_gap: Vec<f64>,
    /// `x*(t_k)` when the problem exposes its minimizer set.
    pub projections: Option<Vec<Vector>>,
    /// `F(x(t₀)) − F* + ½‖ẋ(t₀)‖²`
    pub m0: f64,
    pub alpha_c: f64,
    /// Magnitude of the objective values, for rounding allowances.
    pub value_scale: f64,
    /// `L‖x₀‖² + ‖v₀‖²`, the size of the state in energy units.
    pub state_scale: f64,
}

impl OdeTrajectory {
    pub fn speeds(&self) -> Vec<f64> {
        self.vs.iter().map(|v| v.norm()).collect()
    }

    /// `F(x) − F* + ½‖ẋ‖²` along the grid.
    pub fn mechanical_energy(&self) -> Vec<f64> {
        self.f_gap
            .iter()
            .zip(&self.vs)
            .map(|(g, v)| g + 0.5 * v.norm_squared())
            .collect()
    }

    fn rounding(&self) -> f64 {
        64.0 * f64::EPSILON * self.value_scale + 1e3 * f64::EPSILON * f64::EPSILON * self.state_scale
    }
}

/// Integrates on the uniform grid `t_k = t₀ + k h` with `h ≤ dt` chosen so
/// that the grid ends exactly at `t_end`.
pub fn integrate_hbf(p: &CompositeProblem, cfg: &OdeConfig) -> Result<OdeTrajectory, OdeError> {
    if !p.regularizer().is_zero() {
        return Err(OdeError::Nonsmooth);
    }
    let f_star = p.f_star().ok_or(OdeError::NoOptimalValue)?;
    cfg.validate(p)?;
    let steps = ((cfg.t_end - cfg.t0) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let h = (cfg.t_end - cfg.t0) / steps as f64;
    let a = cfg.alpha_c;
    let accel = |x: &Vector, v: &Vector| -(v * a) - p.smooth_grad(x);

    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let (mut x, mut v) = (cfg.x0.clone(), cfg.v0.clone());
    times.push(cfg.t0);
    xs.push(x.clone());
    vs.push(v.clone());
    for k in 1..=steps {
        let k1x = v.clone();
        let k1v = accel(&x, &v);
        let x2 = &x + &k1x * (0.5 * h);
        let v2 = &v + &k1v * (0.5 * h);
        let k2v = accel(&x2, &v2);
        let x3 = &x + &v2 * (0.5 * h);
        let v3 = &v + &k2v * (0.5 * h);
        let k3v = accel(&x3, &v3);
        let x4 = &x + &v3 * h;
        let v4 = &v + &k3v * h;
        let k4v = accel(&x4, &v4);
        x += (k1x + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        let t = cfg.t0 + k as f64 * h;
        if x.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        times.push(t);
        xs.push(x.clone());
        vs.push(v.clone());
    }
    let f_gap: Vec<f64> = xs.iter().map(|x| p.evaluate_total(x) - f_star).collect();
    let projections = p
        .has_projection()
        .then(|| xs.iter().filter_map(|x| p.project_xstar(x)).collect());
    let m0 = f_gap[0] + 0.5 * cfg.v0.norm_squared();
    Ok(OdeTrajectory {
        times,
        xs,
        vs,
        f_gap,
        projections,
        m0,
        alpha_c: a,
        value_scale: p.evaluate_total(&cfg.x0).abs().max(f_star.abs()),
        state_scale: p.lipschitz() * cfg.x0.norm_squared() + cfg.v0.norm_squared(),
    })
}

fn require_friction(traj: &OdeTrajectory, expected: f64) -> Result<(), OdeError> {
    if (traj.alpha_c - expected).abs() > 1e-12 * expected.max(1.0) {
        return Err(OdeError::WrongFriction {
            expected,
            got: traj.alpha_c,
        });
    }
    Ok(())
}

fn envelope_report(name: &str, values: &[f64], times: &[f64], bound: impl Fn(f64) -> f64, floor: f64) -> CheckReport {
    let mut first = None;
    let mut worst = f64::NEG_INFINITY;
    for (k, (&v, &t)) in values.iter().zip(times).enumerate() {
        let r = v - (1.0 + DISCRETIZATION_SLACK) * bound(t);
        if r > worst {
            worst = r;
        }
        if !(r <= floor) && first.is_none() {
            first = Some(k);
        }
    }
    CheckReport {
        name: name.to_string(),
        pass: first.is_none(),
        first_violation_n: first,
        max_residual: if worst.is_finite() { worst } else { 0.0 },
        slack_used: floor,
    }
}

/// `F(x(t)) − F* ≤ (11/2 − 2√2) M₀ e^{−(2−√2)√μ(t−t₀)}` and, when the
/// projection is available, `‖ẋ(t)‖² ≤ 4(1 + 1/(√2−1)) E(t₀) e^{−(2−√2)√μ(t−t₀)}`,
/// which gives the `e^{−(1−√2/2)√μ t}` decay of the speed.
pub fn check_theorem3(traj: &OdeTrajectory, mu: f64) -> Result<Vec<CheckReport>, OdeError> {
    require_friction(traj, theorem3_friction(mu))?;
    let t0 = traj.times[0];
    let rate = (2.0 - SQRT_2) * mu.sqrt();
    let m0 = traj.m0;
    let mut out = vec![envelope_report(
        "theorem3_gap",
        &traj.f_gap,
        &traj.times,
        |t| THEOREM3_PREFACTOR * m0 * (-rate * (t - t0)).exp(),
        traj.rounding(),
    )];
    if traj.projections.is_some() {
        let e0 = continuous_energy(traj, mu)?[0];
        let speed2: Vec<f64> = traj.vs.iter().map(|v| v.norm_squared()).collect();
        let c = 4.0 * (1.0 + 1.0 / (SQRT_2 - 1.0));
        out.push(envelope_report(
            "theorem3_velocity",
            &speed2,
            &traj.times,
            |t| c * e0 * (-rate * (t - t0)).exp(),
            traj.rounding(),
        ));
    }
    Ok(out)
}

/// `F(x(t)) − F* ≤ 39 M₀ e^{−√(2μ)(t−t₀)}`.
pub fn check_proposition1(traj: &OdeTrajectory, mu: f64) -> Result<CheckReport, OdeError> {
    require_friction(traj, proposition1_friction(mu))?;
    let t0 = traj.times[0];
    let rate = (2.0 * mu).sqrt();
    let m0 = traj.m0;
    Ok(envelope_report(
        "proposition1_gap",
        &traj.f_gap,
        &traj.times,
        |t| PROPOSITION1_PREFACTOR * m0 * (-rate * (t - t0)).exp(),
        traj.rounding(),
    ))
}

/// `E(t) = F − F* + ½‖λ(x − x*(t)) + ẋ‖² + ξ‖x − x*(t)‖²` with `λ = √μ` and
/// `ξ = −(1 − √2/2)μ`.
pub fn continuous_energy(traj: &OdeTrajectory, mu: f64) -> Result<Vec<f64>, OdeError> {
    let proj = traj.projections.as_ref().ok_or(OdeError::NoProjection)?;
    let lambda = mu.sqrt();
    let xi = -(1.0 - 0.5 * SQRT_2) * mu;
    Ok(traj
        .xs
        .iter()
        .zip(&traj.vs)
        .zip(proj)
        .zip(&traj.f_gap)
        .map(|(((x, v), xs), g)| {
            let e = x - xs;
            g + 0.5 * (&e * lambda + v).norm_squared() + xi * e.norm_squared()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ContinuousEnergyReport {
    pub energy: Vec<f64>,
    pub checks: Vec<CheckReport>,
}

/// Energy series with its decay envelope `E(t) ≤ E(t₀)e^{−(2−√2)√μ(t−t₀)}`,
/// and the sign facts on the moving projection, with `ẋ*(t)` taken as the
/// forward difference of the exact projections: `⟨ẋ, ẋ*⟩ ≥ 0` and
/// `⟨x − x*, ẋ*⟩ = 0` for an affine minimizer set.
pub fn energy_continuous(traj: &OdeTrajectory, mu: f64) -> Result<ContinuousEnergyReport, OdeError> {
    require_friction(traj, theorem3_friction(mu))?;
    let energy = continuous_energy(traj, mu)?;
    let proj = traj.projections.as_ref().ok_or(OdeError::NoProjection)?;
    let t0 = traj.times[0];
    let rate = (2.0 - SQRT_2) * mu.sqrt();
    let e0 = energy[0];
    let mut checks = vec![envelope_report(
        "continuous_energy_decay",
        &energy,
        &traj.times,
        |t| e0 * (-rate * (t - t0)).exp(),
        traj.rounding(),
    )];

    let n = traj.times.len();
    let mut speed_sign = (None, f64::NEG_INFINITY);
    let mut normal = (None, 0.0f64);
    let tol_rel = 1e-9;
    for k in 0..n.saturating_sub(1) {
        let h = traj.times[k + 1] - traj.times[k];
        let star_rate = (&proj[k + 1] - &proj[k]) / h;
        let v = &traj.vs[k];
        let e = &traj.xs[k] - &proj[k];
        // projections carry an absolute error of order ε‖x‖, amplified by 1/h
        let noise = 64.0 * f64::EPSILON * (traj.xs[k].norm() + proj[k].norm()) / h;
        let tol = (v.norm() + e.norm()) * (tol_rel * star_rate.norm() + noise);
        let s = -v.dot(&star_rate);
        if s > speed_sign.1 {
            speed_sign.1 = s;
        }
        if s > tol && speed_sign.0.is_none() {
            speed_sign.0 = Some(k);
        }
        let o = e.dot(&star_rate).abs();
        normal.1 = normal.1.max(o);
        if o > tol && normal.0.is_none() {
            normal.0 = Some(k);
        }
    }
    for (name, (first, worst)) in [("projection_speed_sign", speed_sign), ("projection_orthogonality", normal)] {
        checks.push(CheckReport {
            name: name.to_string(),
            pass: first.is_none(),
            first_violation_n: first,
            max_residual: if worst.is_finite() { worst } else { 0.0 },
            slack_used: tol_rel,
        });
    }
    Ok(ContinuousEnergyReport { energy, checks })
}

/// Critically damped solution of `ẍ + 2√μ ẋ + μx = 0`:
/// `x(t) = (x₀ + (v₀ + √μ x₀)t) e^{−√μ t}`.
pub fn critically_damped(mu: f64, x0: f64, v0: f64, t: f64) -> f64 {
    let r = mu.sqrt();
    (x0 + (v0 + r * x0) * t) * (-r * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_degenerate_least_squares_with_profile, make_least_squares, seeded_point, Matrix};

    fn scalar_quadratic(mu: f64) -> CompositeProblem {
        make_least_squares(Matrix::from_element(1, 1, mu.sqrt()), Vector::zeros(1)).unwrap()
    }

    fn max_rel_error(mu: f64, dt: f64, t_end: f64) -> f64 {
        let p = scalar_quadratic(mu);
        let cfg = OdeConfig::new(2.0 * mu.sqrt(), t_end, dt, Vector::from_element(1, 1.0), Vector::from_element(1, 0.5));
        let traj = integrate_hbf(&p, &cfg).unwrap();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (t, x) in traj.times.iter().zip(&traj.xs) {
            let exact = critically_damped(mu, 1.0, 0.5, *t);
            worst = worst.max((x[0] - exact).abs());
            scale = scale.max(exact.abs());
        }
        worst / scale
    }

    #[test]
    fn prefactor_value() {
        assert!((THEOREM3_PREFACTOR - 2.6716).abs() < 1e-4);
    }

    #[test]
    fn equilibrium_stays_put() {
        let p = make_degenerate_least_squares_with_profile(4, 3, 2, &[2.0, 1.0]).unwrap();
        let x0 = p.project_xstar(&seeded_point(3, 1)).unwrap();
        let cfg = OdeConfig::new(theorem3_friction(1.0), 5.0, 1e-2, x0.clone(), Vector::zeros(3));
        let traj = integrate_hbf(&p, &cfg).unwrap();
        for (x, v) in traj.xs.iter().zip(&traj.vs) {
            assert!((x - &x0).norm() < 1e-12 && v.norm() < 1e-12);
        }
        assert!(check_theorem3(&traj, 1.0).unwrap().iter().all(|r| r.pass));
    }

    #[test]
    fn critical_damping_matches_closed_form() {
        let mu: f64 = 4.0;
        assert!(max_rel_error(mu, 1e-3 / mu.sqrt(), 10.0) < 1e-6);
    }

    #[test]
    fn fourth_order_per_halving() {
        let mu = 100.0;
        let e1 = max_rel_error(mu, 1e-2, 0.5);
        let e2 = max_rel_error(mu, 5e-3, 0.5);
        assert!(e1 / e2 >= 8.0 * 0.9, "ratio {}", e1 / e2);
    }

    #[test]
    fn frictionless_conserves_energy() {
        let p = make_degenerate_least_squares_with_profile(4, 3, 2, &[2.0, 1.0]).unwrap();
        let cfg = OdeConfig::new(0.0, 10.0, 1e-3, seeded_point(3, 4), seeded_point(3, 5));
        let traj = integrate_hbf(&p, &cfg).unwrap();
        let e = traj.mechanical_energy();
        assert!(e.iter().all(|v| (v - e[0]).abs() <= 1e-10 * e[0]));
    }

    #[test]
    fn damped_energy_is_nonincreasing() {
        let p = make_degenerate_least_squares_with_profile(4, 3, 2, &[2.0, 1.0]).unwrap();
        for alpha in [0.1, 1.0, 5.0] {
            let cfg = OdeConfig::new(alpha, 10.0, 1e-2, seeded_point(3, 4), seeded_point(3, 5));
            let e = integrate_hbf(&p, &cfg).unwrap().mechanical_energy();
            assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-8 * e[0]));
        }
    }

    #[test]
    fn theorem3_and_energy_on_degenerate_quadratic() {
        let p = make_degenerate_least_squares_with_profile(4, 3, 2, &[2.0, 1.0]).unwrap();
        let mu = p.mu().unwrap();
        let cfg = OdeConfig::new(theorem3_friction(mu), 40.0, 1e-2, seeded_point(3, 4), seeded_point(3, 5));
        let traj = integrate_hbf(&p, &cfg).unwrap();
        for r in check_theorem3(&traj, mu).unwrap() {
            assert!(r.pass, "{r:?}");
        }
        let rep = energy_continuous(&traj, mu).unwrap();
        for r in &rep.checks {
            assert!(r.pass, "{r:?}");
        }
        // E(t₀) evaluated independently from its definition
        let x0 = &traj.xs[0];
        let e = x0 - p.project_xstar(x0).unwrap();
        let v0 = &traj.vs[0];
        let direct = traj.f_gap[0] + 0.5 * (&e * mu.sqrt() + v0).norm_squared()
            - (1.0 - 0.5 * SQRT_2) * mu * e.norm_squared();
        assert!((rep.energy[0] - direct).abs() <= 1e-14 * direct.abs());
        let m0 = p.evaluate_total(x0) - p.f_star().unwrap() + 0.5 * v0.norm_squared();
        assert_eq!(traj.m0, m0);
    }

    #[test]
    fn friction_mismatch_is_refused() {
        let p = scalar_quadratic(1.0);
        let cfg = OdeConfig::new(1.0, 1.0, 1e-2, Vector::from_element(1, 1.0), Vector::zeros(1));
        let traj = integrate_hbf(&p, &cfg).unwrap();
        assert!(matches!(check_theorem3(&traj, 1.0), Err(OdeError::WrongFriction { .. })));
        assert!(matches!(check_proposition1(&traj, 1.0), Err(OdeError::WrongFriction { .. })));
    }

    #[test]
    fn resolution_floor_enforced() {
        let p = scalar_quadratic(100.0);
        let cfg = OdeConfig::new(1.0, 1.0, 0.05, Vector::from_element(1, 1.0), Vector::zeros(1));
        assert!(matches!(integrate_hbf(&p, &cfg), Err(OdeError::InvalidConfig(_))));
    }

    #[test]
    fn nonsmooth_refused() {
        let lasso = crate::problems::make_lasso(Matrix::identity(2, 2), Vector::from_vec(vec![3.0, 0.5]), 1.0).unwrap();
        let cfg = OdeConfig::new(1.0, 1.0, 1e-2, Vector::zeros(2), Vector::zeros(2));
        assert_eq!(integrate_hbf(&lasso, &cfg).unwrap_err(), OdeError::Nonsmooth);
    }
}
