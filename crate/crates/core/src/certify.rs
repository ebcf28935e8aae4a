//! Checks of the discrete Lyapunov machinery on actual runs.
//!
//! Energies need the exact projection `x*_n` of every iterate onto the
//! minimizer set, so they are only available for least-squares problems.
//! Bound checks on `F(x_n) − F*` only need a trusted `F*`.
//!
//! Every inequality is checked as `lhs − rhs ≤ slack`. The slack is a
//! relative factor times the initial energy (or gap) plus a small multiple of
//! machine epsilon times the magnitudes involved, which absorbs rounding when
//! the initial quantity is itself zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{CompositeProblem, Vector};
use crate::schemes::RunOutput;
use crate::tuning::RateCertificate;

/// Relative slack on energy inequalities.
pub const ENERGY_SLACK: f64 = 1e-10;
/// Relative slack on `F`-gap bounds.
pub const BOUND_SLACK: f64 = 1e-9;
/// Rounding allowance, in units of machine epsilon times a magnitude.
const ROUNDING_ULPS: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("the problem has no exact projection onto its minimizer set; energies are unavailable")]
    NoProjection,
    #[error("the problem has no trusted optimal value")]
    NoOptimalValue,
    #[error("the run did not keep its iterates")]
    MissingIterates,
    #[error("kappa = {0} is outside the scope of this check (needs 0 < kappa <= 1/3)")]
    OutOfScope(f64),
    #[error("trace has {got} records, at least {need} are needed")]
    TraceTooShort { got: usize, need: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Outcome of one checker, serialized as-is by the `validate` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub first_violation_n: Option<usize>,
    /// Largest `lhs − rhs` seen; negative when every inequality is strict.
    pub max_residual: f64,
    pub slack_used: f64,
}

struct Tally {
    name: String,
    slack: f64,
    first: Option<usize>,
    worst: f64,
}

impl Tally {
    fn new(name: &str, slack: f64) -> Self {
        Self {
            name: name.to_string(),
            slack,
            first: None,
            worst: f64::NEG_INFINITY,
        }
    }

    /// Records `lhs − rhs` at index `n`.
    fn push(&mut self, n: usize, residual: f64) {
        if !(residual <= self.worst) {
            self.worst = residual;
        }
        if !(residual <= self.slack) && self.first.is_none() {
            self.first = Some(n);
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            name: self.name,
            pass: self.first.is_none(),
            first_violation_n: self.first,
            max_residual: if self.worst == f64::NEG_INFINITY { 0.0 } else { self.worst },
            slack_used: self.slack,
        }
    }
}

fn rounding(scale: f64) -> f64 {
    ROUNDING_ULPS * f64::EPSILON * scale
}

/// Iterates of a run together with their projections and gaps, with the
/// convention `x₋₁ = x₀`.
#[derive(Debug, Clone)]
pub struct ProjectedHistory {
    pub xs: Vec<Vector>,
    pub projections: Vec<Vector>,
    pub f_gaps: Vec<f64>,
    pub lipschitz: f64,
    /// `max(|F(x₀)|, |F*|)`, the magnitude governing rounding in gaps.
    pub value_scale: f64,
}

impl ProjectedHistory {
    pub fn from_iterates(p: &CompositeProblem, xs: Vec<Vector>) -> Result<Self, CertifyError> {
        if !p.has_projection() {
            return Err(CertifyError::NoProjection);
        }
        let f_star = p.f_star().ok_or(CertifyError::NoOptimalValue)?;
        let projections = xs
            .iter()
            .map(|x| p.project_xstar(x).ok_or(CertifyError::NoProjection))
            .collect::<Result<Vec<_>, _>>()?;
        let f_gaps = xs.iter().map(|x| p.evaluate_total(x) - f_star).collect();
        let f0 = xs.first().map_or(0.0, |x| p.evaluate_total(x).abs());
        Ok(Self {
            xs,
            projections,
            f_gaps,
            lipschitz: p.lipschitz(),
            value_scale: f0.max(f_star.abs()),
        })
    }

    pub fn from_run(p: &CompositeProblem, out: &RunOutput) -> Result<Self, CertifyError> {
        let xs = out.iterates.clone().ok_or(CertifyError::MissingIterates)?;
        Self::from_iterates(p, xs)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn prev(&self, n: usize) -> usize {
        n.saturating_sub(1)
    }

    /// `w_n = (2/L)(F(x_n) − F*)`
    pub fn w(&self, n: usize) -> f64 {
        2.0 / self.lipschitz * self.f_gaps[n]
    }

    /// `h_n = ‖x_n − x*_n‖²`
    pub fn h(&self, n: usize) -> f64 {
        (&self.xs[n] - &self.projections[n]).norm_squared()
    }

    /// `δ_n = ‖x_n − x_{n−1}‖²`
    pub fn delta(&self, n: usize) -> f64 {
        (&self.xs[n] - &self.xs[self.prev(n)]).norm_squared()
    }

    /// `γ_n = ‖x*_n − x*_{n−1}‖²`
    pub fn gamma(&self, n: usize) -> f64 {
        (&self.projections[n] - &self.projections[self.prev(n)]).norm_squared()
    }

    /// `⟨x_n − x*_n, x*_n − x*_{n−1}⟩`, nonnegative for a convex `X*`.
    pub fn cross_curr(&self, n: usize) -> f64 {
        let step = &self.projections[n] - &self.projections[self.prev(n)];
        (&self.xs[n] - &self.projections[n]).dot(&step)
    }

    /// `⟨x_{n−1} − x*_{n−1}, x*_n − x*_{n−1}⟩`, nonpositive for a convex `X*`.
    pub fn cross_prev(&self, n: usize) -> f64 {
        let m = self.prev(n);
        let step = &self.projections[n] - &self.projections[m];
        (&self.xs[m] - &self.projections[m]).dot(&step)
    }

    /// Magnitude used for rounding allowances on squared distances.
    fn distance_scale(&self) -> f64 {
        self.xs
            .iter()
            .chain(self.projections.iter())
            .map(|v| v.norm_squared())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    Theorem1,
    Theorem2,
}

/// Per-iteration notation values and one of the two Lyapunov energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub kind: EnergyKind,
    pub kappa: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub cross_curr: Vec<f64>,
    pub cross_prev: Vec<f64>,
    pub energy: Vec<f64>,
    /// Rounding allowance for quantities of the size of the energy terms.
    pub rounding: f64,
}

impl EnergyTrace {
    fn base(hist: &ProjectedHistory, kind: EnergyKind, kappa: f64, alpha: f64, lambda: f64) -> Self {
        let n = hist.len();
        let scale = 2.0 / hist.lipschitz * hist.value_scale + hist.distance_scale();
        Self {
            kind,
            kappa,
            alpha,
            lambda,
            w: (0..n).map(|i| hist.w(i)).collect(),
            h: (0..n).map(|i| hist.h(i)).collect(),
            delta: (0..n).map(|i| hist.delta(i)).collect(),
            gamma: (0..n).map(|i| hist.gamma(i)).collect(),
            cross_curr: (0..n).map(|i| hist.cross_curr(i)).collect(),
            cross_prev: (0..n).map(|i| hist.cross_prev(i)).collect(),
            energy: Vec::with_capacity(n),
            rounding: rounding(scale),
        }
    }

    pub fn len(&self) -> usize {
        self.energy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy.is_empty()
    }

    pub fn e0(&self) -> f64 {
        self.energy.first().copied().unwrap_or(0.0)
    }

    fn slack(&self) -> f64 {
        ENERGY_SLACK * self.e0().abs() + self.rounding
    }

    /// Sign conditions on the cross terms and nonnegativity of `w`.
    pub fn check_signs(&self) -> Vec<CheckReport> {
        let mut curr = Tally::new("projection_sign_curr", self.rounding);
        let mut prev = Tally::new("projection_sign_prev", self.rounding);
        let mut gap = Tally::new("gap_nonnegative", self.rounding);
        for n in 0..self.w.len() {
            curr.push(n, -self.cross_curr[n]);
            prev.push(n, self.cross_prev[n]);
            gap.push(n, -self.w[n]);
        }
        vec![curr.finish(), prev.finish(), gap.finish()]
    }
}

fn check_kappa_thm1(kappa: f64) -> Result<(), CertifyError> {
    if kappa > 0.0 && kappa <= 1.0 / 3.0 {
        Ok(())
    } else {
        Err(CertifyError::OutOfScope(kappa))
    }
}

/// `E1_n = w_n + ‖x_n − x_{n−1} + λ(x_{n−1} − x*_{n−1})‖²` with `λ = √κ/√3`,
/// for a run with `α = 1 − (5/(3√3))√κ` and `s = 1/L`.
pub fn energy_theorem1(hist: &ProjectedHistory, kappa: f64) -> Result<EnergyTrace, CertifyError> {
    check_kappa_thm1(kappa)?;
    let lambda = kappa.sqrt() / 3f64.sqrt();
    let alpha = 1.0 - 5.0 / (3.0 * 3f64.sqrt()) * kappa.sqrt();
    let mut et = EnergyTrace::base(hist, EnergyKind::Theorem1, kappa, alpha, lambda);
    for n in 0..hist.len() {
        let m = hist.prev(n);
        let v = (&hist.xs[n] - &hist.xs[m]) + (&hist.xs[m] - &hist.projections[m]) * lambda;
        et.energy.push(et.w[n] + v.norm_squared());
    }
    Ok(et)
}

/// `E1_{n+1} ≤ (1 − (2/(3√3))√κ) E1_n` at every step.
pub fn check_theorem1_decay(et: &EnergyTrace) -> Result<CheckReport, CertifyError> {
    check_kappa_thm1(et.kappa)?;
    let rate = 1.0 - 2.0 / (3.0 * 3f64.sqrt()) * et.kappa.sqrt();
    let mut t = Tally::new("theorem1_energy_decay", et.slack());
    for n in 1..et.len() {
        t.push(n, et.energy[n] - rate * et.energy[n - 1]);
    }
    Ok(t.finish())
}

/// `h_n − h_{n−1} ≤ (√3/√κ)(E1_n − w_n)` at every step.
pub fn check_lemma7(et: &EnergyTrace) -> Result<CheckReport, CertifyError> {
    if et.kind != EnergyKind::Theorem1 {
        return Err(CertifyError::InvalidParameter("needs a Theorem-1 energy trace".into()));
    }
    let k = 1.0 / et.lambda;
    let h0 = et.h.first().copied().unwrap_or(0.0);
    let slack = ENERGY_SLACK * (h0 + k * et.e0()) + k * et.rounding;
    let mut t = Tally::new("lemma7", slack);
    for n in 1..et.len() {
        t.push(n, (et.h[n] - et.h[n - 1]) - k * (et.energy[n] - et.w[n]));
    }
    Ok(t.finish())
}

/// Parameters `α = 1 − ω√κ`, `λ = (ω − τ)√κ`, `ν = τ√κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Params {
    pub omega: f64,
    pub tau: f64,
    pub kappa: f64,
}

impl Theorem2Params {
    pub fn from_certificate(cert: &RateCertificate) -> Self {
        Self {
            omega: cert.omega,
            tau: cert.tau,
            kappa: cert.kappa,
        }
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.omega * self.kappa.sqrt()
    }

    pub fn lambda(&self) -> f64 {
        (self.omega - self.tau) * self.kappa.sqrt()
    }

    pub fn nu(&self) -> f64 {
        self.tau * self.kappa.sqrt()
    }

    pub fn rate(&self) -> f64 {
        1.0 - self.tau * self.kappa.sqrt() + self.tau * self.tau * self.kappa
    }
}

/// `E2_n = w_n + α‖x_n − x_{n−1} + λ(x_n − x*_n)‖² + λ(1 − α)² h_n`.
pub fn energy_theorem2(hist: &ProjectedHistory, params: Theorem2Params) -> Result<EnergyTrace, CertifyError> {
    let Theorem2Params { omega, tau, kappa } = params;
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(CertifyError::OutOfScope(kappa));
    }
    if !(omega > 0.0 && omega * kappa.sqrt() < 1.0 && tau > 0.0 && tau < omega) {
        return Err(CertifyError::InvalidParameter(format!(
            "need 0 < tau < omega < 1/sqrt(kappa), got omega = {omega}, tau = {tau}"
        )));
    }
    let (alpha, lambda) = (params.alpha(), params.lambda());
    let mut et = EnergyTrace::base(hist, EnergyKind::Theorem2, kappa, alpha, lambda);
    let tail = lambda * (1.0 - alpha).powi(2);
    for n in 0..hist.len() {
        let m = hist.prev(n);
        let v = (&hist.xs[n] - &hist.xs[m]) + (&hist.xs[n] - &hist.projections[n]) * lambda;
        et.energy.push(et.w[n] + alpha * v.norm_squared() + tail * et.h[n]);
    }
    Ok(et)
}

/// `E2_{n+1} − E2_n + ν E2_{n+1} ≤ 0` per step and `E2_n ≤ ρⁿ E2_0` with
/// `ρ = 1 − τ√κ + τ²κ`.
pub fn check_theorem2(et: &EnergyTrace, params: Theorem2Params) -> Vec<CheckReport> {
    let slack = et.slack();
    let nu = params.nu();
    let rate = params.rate();
    let mut step = Tally::new("theorem2_energy_step", slack);
    let mut closed = Tally::new("theorem2_energy_closed_form", slack);
    let e0 = et.e0();
    let mut envelope = e0;
    for n in 0..et.len() {
        if n > 0 {
            step.push(n, (1.0 + nu) * et.energy[n] - et.energy[n - 1]);
            envelope *= rate;
        }
        closed.push(n, et.energy[n] - envelope);
    }
    vec![step.finish(), closed.finish()]
}

/// `F(x_n) − F* ≤ C ρⁿ (F(x₀) − F*)` for the constants of `cert`.
///
/// `value_scale` bounds the magnitude of the objective values whose
/// difference forms the gaps.
pub fn check_gap_bound(f_gaps: &[f64], cert: &RateCertificate, value_scale: f64) -> CheckReport {
    let gap0 = f_gaps.first().copied().unwrap_or(0.0);
    let slack = BOUND_SLACK * gap0.abs() + rounding(value_scale);
    let mut t = Tally::new("gap_bound", slack);
    let mut factor = cert.prefactor_c;
    for (n, &g) in f_gaps.iter().enumerate() {
        if n > 0 {
            factor *= cert.per_iter_factor;
        }
        t.push(n, g - factor * gap0);
    }
    t.finish()
}

/// Residuals of the two four-point identities
///
/// ```text
/// ⟨x_n − x*_n, x_n − x_{n−1}⟩ = ½(h_n − h_{n−1} + δ_n − γ_n) + ⟨x_{n−1} − x*_{n−1}, x*_n − x*_{n−1}⟩
/// ⟨x_{n−1} − x*_{n−1}, x_n − x_{n−1}⟩ = ½(h_n − h_{n−1} − δ_n + γ_n) + ⟨x_n − x*_n, x*_n − x*_{n−1}⟩
/// ```
///
/// together with the natural scale, the largest product of norms involved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    pub first: f64,
    pub second: f64,
    pub scale: f64,
}

pub fn check_lemma_tech1(x_n: &Vector, x_prev: &Vector, xs_n: &Vector, xs_prev: &Vector) -> IdentityResiduals {
    let e_n = x_n - xs_n;
    let e_prev = x_prev - xs_prev;
    let step = x_n - x_prev;
    let star_step = xs_n - xs_prev;
    let h_n = e_n.norm_squared();
    let h_prev = e_prev.norm_squared();
    let delta = step.norm_squared();
    let gamma = star_step.norm_squared();
    let first = e_n.dot(&step) - (0.5 * (h_n - h_prev + delta - gamma) + e_prev.dot(&star_step));
    let second = e_prev.dot(&step) - (0.5 * (h_n - h_prev - delta + gamma) + e_n.dot(&star_step));
    let scale = [h_n, h_prev, delta, gamma].into_iter().fold(0.0, f64::max);
    IdentityResiduals { first, second, scale }
}

/// Both descent-lemma inequalities for a V-FISTA run with momentum `alpha`
/// and `s = 1/L`:
///
/// ```text
/// w_{n+1} − w_n ≤ α²δ_n − δ_{n+1}
/// w_{n+1} ≤ (1+α)h_n + (α²+α)δ_n − αh_{n−1} − h_{n+1} − γ_{n+1} − αγ_n
///           + 2α⟨x_{n−1} − x*_{n−1}, x*_n − x*_{n−1}⟩ − 2⟨x_{n+1} − x*_{n+1}, x*_{n+1} − x*_n⟩
/// ```
pub fn check_lemma_tech2(hist: &ProjectedHistory, alpha: f64) -> Vec<CheckReport> {
    let n_rec = hist.len();
    let w: Vec<f64> = (0..n_rec).map(|i| hist.w(i)).collect();
    let h: Vec<f64> = (0..n_rec).map(|i| hist.h(i)).collect();
    let d: Vec<f64> = (0..n_rec).map(|i| hist.delta(i)).collect();
    let g: Vec<f64> = (0..n_rec).map(|i| hist.gamma(i)).collect();
    let scale = 2.0 / hist.lipschitz * hist.value_scale + hist.distance_scale();
    let first_scale = w.first().copied().unwrap_or(0.0) + h.first().copied().unwrap_or(0.0);
    let slack = ENERGY_SLACK * first_scale + rounding(scale);
    let mut descent = Tally::new("lemma6_descent", slack);
    let mut growth = Tally::new("lemma6_projection", slack);
    for n in 0..n_rec.saturating_sub(1) {
        let m = hist.prev(n);
        descent.push(n, (w[n + 1] - w[n]) - (alpha * alpha * d[n] - d[n + 1]));
        let rhs = (1.0 + alpha) * h[n] + (alpha * alpha + alpha) * d[n] - alpha * h[m] - h[n + 1] - g[n + 1]
            - alpha * g[n]
            + 2.0 * alpha * hist.cross_prev(n)
            - 2.0 * hist.cross_curr(n + 1);
        growth.push(n, w[n + 1] - rhs);
    }
    vec![descent.finish(), growth.finish()]
}

/// `sup_n ‖x_n − x_{n−1}‖ e^{(σ/2)√κ n} < ∞`, tested over the records whose
/// step norm stays above `floor`: the running maximum over the second half of
/// that horizon must not exceed the maximum over the first half.
pub fn check_step_envelope(step_norms: &[f64], sigma: f64, kappa: f64, floor: f64) -> CheckReport {
    let c = 0.5 * sigma * kappa.sqrt();
    let horizon = step_norms
        .iter()
        .skip(1)
        .position(|&s| s <= floor)
        .map_or(step_norms.len(), |i| i + 1);
    let scaled: Vec<f64> = step_norms[..horizon]
        .iter()
        .enumerate()
        .map(|(n, s)| s * (c * n as f64).exp())
        .collect();
    let half = scaled.len() / 2;
    let early = scaled[..half].iter().copied().fold(0.0, f64::max);
    let mut t = Tally::new("step_norm_envelope", 1e-9 * early);
    for (n, v) in scaled.iter().enumerate().skip(half) {
        t.push(n, v - early);
    }
    t.finish()
}

/// How the fitting window is chosen among the records above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// The trailing fraction of the above-floor records.
    TailFraction(f64),
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::TailFraction(0.6)
    }
}

pub const MIN_FIT_TRACE: usize = 50;
pub const MIN_R_SQUARED: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub window: [usize; 2],
    /// Fitted slope of `ln(f_gap)` per iteration; `None` when the fit is
    /// not trustworthy.
    pub slope: Option<f64>,
    pub r_squared: f64,
    pub floor_hit: bool,
}

impl RateFit {
    /// Per-iteration log decrement, `−slope`.
    pub fn decrement(&self) -> Option<f64> {
        self.slope.map(|s| -s)
    }
}

/// Least-squares line through `ln(f_gap)` over the window.
///
/// Records are usable up to the first one at or below the floor
/// `10²·ε·|F(x₀)|`; the window is the trailing part of that prefix. When
/// fewer than 21 records remain, `floor_hit` is set and no slope is given.
pub fn fit_tail_rate(f_gaps: &[f64], f0_abs: f64, policy: WindowPolicy) -> Result<RateFit, CertifyError> {
    if f_gaps.len() < MIN_FIT_TRACE {
        return Err(CertifyError::TraceTooShort {
            got: f_gaps.len(),
            need: MIN_FIT_TRACE,
        });
    }
    let floor = 1e2 * f64::EPSILON * f0_abs;
    let usable = f_gaps
        .iter()
        .position(|&g| !(g > floor) || !g.is_finite())
        .unwrap_or(f_gaps.len());
    let WindowPolicy::TailFraction(frac) = policy;
    let len = ((usable as f64) * frac.clamp(0.0, 1.0)).round() as usize;
    let lo = usable - len;
    let hi = usable.saturating_sub(1);
    if len < 22 {
        return Ok(RateFit {
            window: [lo, hi.max(lo)],
            slope: None,
            r_squared: 0.0,
            floor_hit: true,
        });
    }
    let (slope, r2) = linear_fit(lo, &f_gaps[lo..usable]);
    Ok(RateFit {
        window: [lo, hi],
        slope: (r2 >= MIN_R_SQUARED).then_some(slope),
        r_squared: r2,
        floor_hit: false,
    })
}

fn linear_fit(start: usize, gaps: &[f64]) -> (f64, f64) {
    let k = gaps.len() as f64;
    let xs = (0..gaps.len()).map(|i| (start + i) as f64);
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let mx = xs.clone().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}
