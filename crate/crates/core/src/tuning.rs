//! Momentum parameters and certified contraction rates for V-FISTA.
//!
//! With `α = 1 − ω√κ` the rate family is indexed by `τ > 0` satisfying
//! `P(τ; ω, κ) ≤ 0` where
//!
//! ```text
//! P(τ; ω, κ) = (1 − ω√κ)τ³ − ω(2 − ω√κ)τ² + (ω² + 2)τ − ω.
//! ```
//!
//! A feasible `τ` certifies `F(x_n) − F* ≤ C (1 − τ√κ + τ²κ)ⁿ (F(x_0) − F*)`
//! with `C = 1 + (ω − τ)² + (ω − τ)ωτ√κ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Panels of the sign scan on `[0, ω/2]`.
pub const SCAN_PANELS: usize = 10_000;
/// Bisection bracket width and residual target.
pub const ROOT_TOL: f64 = 1e-12;
/// Golden-section tolerance on `ω`.
pub const OMEGA_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("kappa = {0} is outside the admissible range")]
    KappaOutOfRange(f64),
    #[error("Theorem-1 parameters need kappa <= 1/3, got {0}; use the optimal certificate instead")]
    Theorem1Domain(f64),
    #[error("omega = {omega} with kappa = {kappa} gives alpha = 1 - omega*sqrt(kappa) outside (0, 1)")]
    OmegaOutOfRange { omega: f64, kappa: f64 },
    #[error("no sign change of P on (0, omega/2] for omega = {omega}, kappa = {kappa}")]
    NoRootInBand { omega: f64, kappa: f64 },
    #[error("theta = {theta} is outside [3/2 sqrt(kappa), 1) = [{lower}, 1)")]
    ThetaOutOfRange { theta: f64, lower: f64 },
    #[error("overestimated-mu certificate needs kappa <= 1/10, got {0}")]
    Corollary2Domain(f64),
}

/// `P(τ; ω, κ)` as a cubic in `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicPoly {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CubicPoly {
    pub fn rate_cubic(omega: f64, kappa: f64) -> Self {
        let r = omega * kappa.sqrt();
        Self {
            c3: 1.0 - r,
            c2: -omega * (2.0 - r),
            c1: omega * omega + 2.0,
            c0: -omega,
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        ((self.c3 * tau + self.c2) * tau + self.c1) * tau + self.c0
    }
}

pub fn rate_cubic_value(tau: f64, omega: f64, kappa: f64) -> f64 {
    CubicPoly::rate_cubic(omega, kappa).eval(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Theorem1,
    /// Arbitrary `ω` with the maximal feasible `τ`.
    Theorem2,
    Corollary1Optimal,
    Corollary2Overestimated,
}

/// A certified per-iteration contraction `per_iter_factor` with prefactor
/// `prefactor_c` for V-FISTA run with momentum `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub kappa: f64,
    pub omega: f64,
    pub alpha: f64,
    pub tau: f64,
    pub sigma: f64,
    #[serde(rename = "C")]
    pub prefactor_c: f64,
    pub per_iter_factor: f64,
    pub regime: Regime,
    /// Exponent `τ'` of the overestimated-μ statement `O(e^{−τ'κn})`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overestimate_tau: Option<f64>,
}

impl RateCertificate {
    fn from_theorem2(omega: f64, tau: f64, kappa: f64, regime: Regime) -> Self {
        let r = kappa.sqrt();
        let sigma = tau - tau * tau * r;
        Self {
            kappa,
            omega,
            alpha: 1.0 - omega * r,
            tau,
            sigma,
            prefactor_c: 1.0 + (omega - tau).powi(2) + (omega - tau) * omega * tau * r,
            per_iter_factor: 1.0 - tau * r + tau * tau * kappa,
            regime,
            overestimate_tau: None,
        }
    }

    /// Certified per-iteration log decrement, `−ln(per_iter_factor)`.
    pub fn decrement(&self) -> f64 {
        -self.per_iter_factor.ln()
    }

    /// `⌈ln(C/ε) / (−ln per_iter_factor)⌉`: iterations after which the
    /// certified bound on the relative gap falls below `eps`.
    pub fn iterations_to(&self, eps: f64) -> u64 {
        let n = (self.prefactor_c / eps).ln() / self.decrement();
        n.ceil().max(0.0) as u64
    }

    /// Certified bound on `(F(x_n) − F*) / (F(x_0) − F*)`.
    pub fn bound_factor(&self, n: usize) -> f64 {
        self.prefactor_c * self.per_iter_factor.powi(n as i32)
    }

    /// Checks the structural invariants. Theorem-1 certificates carry their
    /// own constants and skip the cubic test.
    pub fn check_invariants(&self) -> Result<(), String> {
        let r = self.kappa.sqrt();
        if !(self.omega * r < 1.0 && self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha = {} not in (0, 1)", self.alpha));
        }
        if self.prefactor_c < 1.0 {
            return Err(format!("C = {} < 1", self.prefactor_c));
        }
        let identity = (1.0 - self.sigma * r) - self.per_iter_factor;
        if identity.abs() > 4.0 * f64::EPSILON {
            return Err(format!("per_iter_factor differs from 1 - sigma sqrt(kappa) by {identity:e}"));
        }
        if self.regime != Regime::Theorem1 {
            if !(self.omega > 2.0 * self.tau) {
                return Err(format!("omega = {} <= 2 tau = {}", self.omega, 2.0 * self.tau));
            }
            let p = rate_cubic_value(self.tau, self.omega, self.kappa);
            if p > 1e-10 {
                return Err(format!("P(tau) = {p:e} > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Params {
    pub alpha: f64,
    pub rate: f64,
    pub prefactor: f64,
}

/// `α = 1 − (5/(3√3))√κ`, rate `1 − (2/(3√3))√κ`, prefactor `4/3`, valid for
/// `κ ≤ 1/3`.
pub fn theorem1_params(kappa: f64) -> Result<Theorem1Params, TuningError> {
    if !(kappa > 0.0) {
        return Err(TuningError::KappaOutOfRange(kappa));
    }
    if kappa > 1.0 / 3.0 {
        return Err(TuningError::Theorem1Domain(kappa));
    }
    let r = kappa.sqrt();
    let s3 = 3.0f64.sqrt();
    Ok(Theorem1Params {
        alpha: 1.0 - 5.0 / (3.0 * s3) * r,
        rate: 1.0 - 2.0 / (3.0 * s3) * r,
        prefactor: 4.0 / 3.0,
    })
}

pub fn theorem1_certificate(kappa: f64) -> Result<RateCertificate, TuningError> {
    let t = theorem1_params(kappa)?;
    let s3 = 3.0f64.sqrt();
    let tau = 2.0 / (3.0 * s3);
    Ok(RateCertificate {
        kappa,
        omega: 5.0 / (3.0 * s3),
        alpha: t.alpha,
        tau,
        sigma: tau,
        prefactor_c: t.prefactor,
        per_iter_factor: t.rate,
        regime: Regime::Theorem1,
        overestimate_tau: None,
    })
}

/// Largest `τ` with `P(τ) ≤ 0`: the smallest positive root of `P`.
///
/// `P(0) = −ω < 0` and `P(ω/2) = ω³(1 + ω√κ)/8 > 0`, so the root lies in
/// `(0, ω/2)`; it is located by a sign scan over [`SCAN_PANELS`] panels and
/// refined by bisection. The returned value is the left end of the final
/// bracket, hence always feasible. `κ = 0` is accepted as the limit case.
pub fn solve_max_tau(omega: f64, kappa: f64) -> Result<f64, TuningError> {
    if !(kappa >= 0.0 && kappa <= 1.0) {
        return Err(TuningError::KappaOutOfRange(kappa));
    }
    if !(omega > 0.0 && omega * kappa.sqrt() < 1.0) {
        return Err(TuningError::OmegaOutOfRange { omega, kappa });
    }
    let poly = CubicPoly::rate_cubic(omega, kappa);
    let width = 0.5 * omega / SCAN_PANELS as f64;
    let mut bracket = None;
    let mut lo = 0.0;
    for i in 1..=SCAN_PANELS {
        let hi = width * i as f64;
        if poly.eval(hi) >= 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
    }
    let (mut lo, mut hi) = bracket.ok_or(TuningError::NoRootInBand { omega, kappa })?;
    loop {
        let converged = hi - lo <= ROOT_TOL && poly.eval(lo).abs() <= ROOT_TOL;
        let mid = 0.5 * (lo + hi);
        if converged || mid <= lo || mid >= hi {
            break;
        }
        if poly.eval(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Certificate for an arbitrary `ω ∈ (0, 1/√κ)` with its maximal `τ`.
pub fn theorem2_certificate(omega: f64, kappa: f64) -> Result<RateCertificate, TuningError> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(TuningError::KappaOutOfRange(kappa));
    }
    let tau = solve_max_tau(omega, kappa)?;
    Ok(RateCertificate::from_theorem2(omega, tau, kappa, Regime::Theorem2))
}

/// `ω` maximizing the certified `τ`, found by golden-section search on
/// `(0, min(3, 1/√κ))`, an interval centred on the `κ → 0` optimum `ω = 3/2`.
pub fn corollary1_certificate(kappa: f64) -> Result<RateCertificate, TuningError> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(TuningError::KappaOutOfRange(kappa));
    }
    let upper = (1.0 / kappa.sqrt()) * (1.0 - 1e-9);
    let (mut a, mut b) = (OMEGA_TOL, upper.min(3.0));
    let tau_at = |w: f64| solve_max_tau(w, kappa);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (tau_at(c)?, tau_at(d)?);
    while b - a > OMEGA_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = tau_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = tau_at(d)?;
        }
    }
    let omega = 0.5 * (a + b);
    let tau = tau_at(omega)?;
    Ok(RateCertificate::from_theorem2(
        omega,
        tau,
        kappa,
        Regime::Corollary1Optimal,
    ))
}

/// Certificate for `α = 1 − θ` when μ may be overestimated.
///
/// Uses `τ = 2/(3ω)` with `ω = θ/√κ`, which is feasible for `ω ≥ 3/2` and
/// `κ ≤ 1/10` since `P(2/(3ω), ω, κ) = Φ(ω; κ)/(27ω³) < 0`. The reported
/// exponent is `τ' = (2/(3θ))(1 − (2/(3θ))√κ)`, giving `O(e^{−τ'κn})`.
pub fn corollary2_certificate(theta: f64, kappa: f64) -> Result<RateCertificate, TuningError> {
    if !(kappa > 0.0) {
        return Err(TuningError::KappaOutOfRange(kappa));
    }
    if kappa > 0.1 {
        return Err(TuningError::Corollary2Domain(kappa));
    }
    let r = kappa.sqrt();
    let lower = 1.5 * r;
    if !(theta >= lower && theta < 1.0) {
        return Err(TuningError::ThetaOutOfRange { theta, lower });
    }
    let omega = theta / r;
    let tau = 2.0 / (3.0 * omega);
    let phi = lemma8_phi(omega, kappa);
    debug_assert!(phi < 0.0, "Phi({omega}; {kappa}) = {phi} is not negative");
    let mut cert = RateCertificate::from_theorem2(omega, tau, kappa, Regime::Corollary2Overestimated);
    cert.alpha = 1.0 - theta;
    let q = 2.0 / (3.0 * theta);
    cert.overestimate_tau = Some(q * (1.0 - q * r));
    Ok(cert)
}

/// `Φ(ω; κ) = −9ω⁴ + 12ω³√κ + 12ω² − 8ω√κ + 8`, which satisfies
/// `Φ/(27ω³) = P(2/(3ω), ω, κ)`.
pub fn lemma8_phi(omega: f64, kappa: f64) -> f64 {
    let r = kappa.sqrt();
    let w2 = omega * omega;
    let phi = -9.0 * w2 * w2 + 12.0 * w2 * omega * r + 12.0 * w2 - 8.0 * omega * r + 8.0;
    debug_assert!({
        let p = rate_cubic_value(2.0 / (3.0 * omega), omega, kappa);
        let scale = 9.0 * w2 * w2 + 12.0 * w2 * omega * r + 12.0 * w2 + 8.0 * omega * r + 8.0;
        (phi - 27.0 * w2 * omega * p).abs() <= 1e-12 * scale
    });
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    // Independent oracle: eigenvalues of the companion matrix.
    fn companion_smallest_positive_root(omega: f64, kappa: f64) -> f64 {
        let p = CubicPoly::rate_cubic(omega, kappa);
        let (a2, a1, a0) = (p.c2 / p.c3, p.c1 / p.c3, p.c0 / p.c3);
        let m = Matrix3::new(0.0, 0.0, -a0, 1.0, 0.0, -a1, 0.0, 1.0, -a2);
        m.complex_eigenvalues()
            .iter()
            .filter(|z| z.im.abs() < 1e-9 && z.re > 0.0)
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn theorem1_values() {
        let t = theorem1_params(1.0 / 3.0).unwrap();
        assert!((t.alpha - (1.0 - 5.0 / 9.0)).abs() < 1e-15);
        assert!((t.rate - (1.0 - 2.0 / 9.0)).abs() < 1e-15);
        assert_eq!(t.prefactor, 4.0 / 3.0);
        let tiny = theorem1_params(1e-16).unwrap();
        assert!(1.0 - tiny.alpha < 1e-7 && 1.0 - tiny.rate < 1e-7);
        assert_eq!(theorem1_params(0.5).unwrap_err(), TuningError::Theorem1Domain(0.5));
    }

    #[test]
    fn max_tau_matches_companion_oracle() {
        let tau = solve_max_tau(1.0, 0.25).unwrap();
        let oracle = companion_smallest_positive_root(1.0, 0.25);
        assert!((tau - oracle).abs() < 1e-10, "{tau} vs {oracle}");
        // the cubic here is 0.5τ³ − 1.5τ² + 3τ − 1
        assert!((0.5 * tau.powi(3) - 1.5 * tau * tau + 3.0 * tau - 1.0).abs() <= 1e-12);
        for &(w, k) in &[(1.2, 0.3), (1.46, 1e-2), (4.0, 1e-3), (0.5, 0.9)] {
            let tau = solve_max_tau(w, k).unwrap();
            assert!((tau - companion_smallest_positive_root(w, k)).abs() < 1e-10);
            assert!(rate_cubic_value(tau, w, k) <= 0.0);
        }
    }

    #[test]
    fn max_tau_reference_values() {
        assert!((solve_max_tau(1.495, 1e-4).unwrap() - 0.498).abs() < 1e-3);
        assert!((solve_max_tau(1.5, 0.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn max_tau_rejects_out_of_band_omega() {
        assert!(matches!(solve_max_tau(2.0, 0.25), Err(TuningError::OmegaOutOfRange { .. })));
        assert!(matches!(solve_max_tau(-1.0, 0.25), Err(TuningError::OmegaOutOfRange { .. })));
    }

    #[test]
    fn corollary1_small_kappa_rows() {
        for &(k, w, t, s, c) in &[
            (1e-2, 1.46, 0.48, 0.45, 2.03),
            (1e-3, 1.49, 0.494, 0.486, 2.02),
        ] {
            let cert = corollary1_certificate(k).unwrap();
            assert!((cert.omega - w).abs() <= 0.01);
            assert!((cert.tau - t).abs() <= 0.01);
            assert!((cert.sigma - s).abs() <= 0.01);
            assert!((cert.prefactor_c - c).abs() <= 0.05);
            cert.check_invariants().unwrap();
        }
    }

    #[test]
    fn corollary2_examples() {
        let kappa: f64 = 1e-4;
        let theta = 1.5 * (10.0 * kappa).sqrt();
        let cert = corollary2_certificate(theta, kappa).unwrap();
        assert!((cert.omega - 1.5 * 10f64.sqrt()).abs() < 1e-12);
        let exponent = cert.overestimate_tau.unwrap() * kappa.sqrt();
        assert!((exponent - 0.12).abs() < 0.005, "{exponent}");
        cert.check_invariants().unwrap();

        let boundary = corollary2_certificate(0.1, 1.0 / 225.0).unwrap();
        assert!((boundary.overestimate_tau.unwrap() - 100.0 / 27.0).abs() < 1e-12);
        let inner = corollary2_certificate(0.1, 1e-4).unwrap();
        let expected = 20.0 / 3.0 * (1.0 - 20.0 / 3.0 * 1e-2);
        assert!((inner.overestimate_tau.unwrap() - expected).abs() < 1e-12);

        for k in [1e-1, 1e-2, 1e-4] {
            let cert = corollary2_certificate(1.5 * f64::sqrt(k), k).unwrap();
            assert!((cert.omega - 1.5).abs() < 1e-12);
            assert!((cert.tau - 4.0 / 9.0).abs() < 1e-12);
            assert!(cert.tau <= solve_max_tau(1.5, k).unwrap());
        }
    }

    #[test]
    fn corollary2_domain_errors() {
        assert!(matches!(corollary2_certificate(0.01, 1e-2), Err(TuningError::ThetaOutOfRange { .. })));
        assert!(matches!(corollary2_certificate(1.0, 1e-2), Err(TuningError::ThetaOutOfRange { .. })));
        assert_eq!(corollary2_certificate(0.9, 0.2).unwrap_err(), TuningError::Corollary2Domain(0.2));
    }

    #[test]
    fn lemma8_values() {
        let k: f64 = 0.1;
        let phi = lemma8_phi(1.5, k);
        assert!((phi - (-169.0 / 16.0 + 28.5 * k.sqrt())).abs() < 1e-12);
        assert!((phi - (-1.5497)).abs() < 1e-3);
        let lhs = lemma8_phi(2.0, 0.01) / (27.0 * 8.0);
        let rhs = rate_cubic_value(1.0 / 3.0, 2.0, 0.01);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn iteration_estimate() {
        let cert = corollary1_certificate(1e-2).unwrap();
        let n = cert.iterations_to(1e-8);
        assert!(cert.bound_factor(n as usize) <= 1e-8 * (1.0 + 1e-12));
        assert!(cert.bound_factor(n as usize - 1) > 1e-8);
    }
}
