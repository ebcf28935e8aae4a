//! Forward-Backward, FISTA (Beck–Teboulle and Chambolle–Dossal), V-FISTA with
//! constant momentum, and periodically restarted FISTA.
//!
//! Every scheme shares the same two-line recursion
//!
//! ```text
//! x⁺ = prox_{sh}(y − s∇f(y))
//! y⁺ = x⁺ + αₙ (x⁺ − x)
//! ```
//!
//! and differs only in how the momentum `αₙ` is produced.

use std::fmt;
use std::io::{self, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{CompositeProblem, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("non-finite iterate at n = {n} ({what})")]
    NonFinite { n: usize, what: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("restart period needs the growth modulus mu, which this problem does not provide")]
    MissingMu,
    #[error("starting point has dimension {got}, problem has {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Fb,
    FistaBt,
    FistaCd,
    Vfista,
    FistaRestart,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchemeKind::Fb => "fb",
            SchemeKind::FistaBt => "fista_bt",
            SchemeKind::FistaCd => "fista_cd",
            SchemeKind::Vfista => "vfista",
            SchemeKind::FistaRestart => "fista_restart",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Step size; `None` means `1/L`.
    #[serde(default)]
    pub step: Option<f64>,
    /// Constant momentum for V-FISTA.
    #[serde(default)]
    pub alpha: f64,
    /// Chambolle–Dossal parameter, `≥ 3`.
    #[serde(default = "default_cd_alpha")]
    pub cd_alpha: f64,
    /// Restart period; `None` means `⌊2e√(L/μ)⌋`.
    #[serde(default)]
    pub restart_period: Option<usize>,
    pub max_iter: usize,
    #[serde(default)]
    pub stop_gap: f64,
    #[serde(default)]
    pub stop_residual: f64,
    /// Keep every `x_n` in the run output (needed by the energy checkers).
    #[serde(default)]
    pub keep_iterates: bool,
    /// Record wall-clock time per iteration. Off by default so traces are
    /// byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_cd_alpha() -> f64 {
    3.0
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, max_iter: usize) -> Self {
        Self {
            kind,
            step: None,
            alpha: 0.0,
            cd_alpha: default_cd_alpha(),
            restart_period: None,
            max_iter,
            stop_gap: 0.0,
            stop_residual: 0.0,
            keep_iterates: false,
            record_wall_time: false,
        }
    }

    pub fn fb(max_iter: usize) -> Self {
        Self::new(SchemeKind::Fb, max_iter)
    }

    pub fn vfista(alpha: f64, max_iter: usize) -> Self {
        Self {
            alpha,
            ..Self::new(SchemeKind::Vfista, max_iter)
        }
    }

    pub fn with_step(mut self, s: f64) -> Self {
        self.step = Some(s);
        self
    }

    pub fn keeping_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    pub fn step_size(&self, p: &CompositeProblem) -> f64 {
        self.step.unwrap_or(1.0 / p.lipschitz())
    }

    pub fn validate(&self, p: &CompositeProblem) -> Result<(), SchemeError> {
        let s = self.step_size(p);
        let l = p.lipschitz();
        if !(s > 0.0 && s.is_finite()) {
            return Err(SchemeError::InvalidConfig(format!("step must be positive, got {s}")));
        }
        match self.kind {
            SchemeKind::Fb if s >= 2.0 / l => Err(SchemeError::InvalidConfig(format!(
                "forward-backward needs s in (0, 2/L), got {s} with L = {l}"
            ))),
            SchemeKind::Vfista if !(0.0..1.0).contains(&self.alpha) => Err(
                SchemeError::InvalidConfig(format!("V-FISTA needs alpha in [0, 1), got {}", self.alpha)),
            ),
            SchemeKind::FistaCd if !(self.cd_alpha >= 3.0) => Err(SchemeError::InvalidConfig(
                format!("Chambolle-Dossal needs alpha >= 3, got {}", self.cd_alpha),
            )),
            SchemeKind::FistaRestart if self.restart_period == Some(0) => Err(
                SchemeError::InvalidConfig("restart period must be at least 1".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Rolling iterate pair and extrapolated point. At `n = 0`,
/// `x_prev = x_curr = y_curr` (that is, `x₋₁ = x₀`).
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub n: usize,
    pub x_curr: Vector,
    pub x_prev: Vector,
    pub y_curr: Vector,
    /// Beck–Teboulle `t_n`; unused by the other schemes.
    pub t_curr: f64,
}

impl IterateState {
    pub fn new(x0: Vector) -> Self {
        Self {
            n: 0,
            x_prev: x0.clone(),
            y_curr: x0.clone(),
            x_curr: x0,
            t_curr: 1.0,
        }
    }
}

fn forward_backward(
    p: &CompositeProblem,
    y: &Vector,
    s: f64,
    n: usize,
) -> Result<Vector, SchemeError> {
    let grad = p.smooth_grad(y);
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(SchemeError::NonFinite { n, what: "gradient" });
    }
    let x = p.prox(&(y - grad * s), s);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SchemeError::NonFinite { n, what: "prox output" });
    }
    Ok(x)
}

fn advance(st: &IterateState, x_next: Vector, momentum: f64, t_next: f64) -> IterateState {
    let y_next = &x_next + (&x_next - &st.x_curr) * momentum;
    IterateState {
        n: st.n + 1,
        x_prev: st.x_curr.clone(),
        x_curr: x_next,
        y_curr: y_next,
        t_curr: t_next,
    }
}

/// One V-FISTA step with constant momentum `alpha`.
pub fn step_vfista(
    p: &CompositeProblem,
    st: &IterateState,
    alpha: f64,
    s: f64,
) -> Result<IterateState, SchemeError> {
    let x_next = forward_backward(p, &st.y_curr, s, st.n + 1)?;
    Ok(advance(st, x_next, alpha, st.t_curr))
}

/// One Forward-Backward step, taken from `x_curr`.
pub fn step_fb(p: &CompositeProblem, st: &IterateState, s: f64) -> Result<IterateState, SchemeError> {
    let x_next = forward_backward(p, &st.x_curr, s, st.n + 1)?;
    Ok(advance(st, x_next, 0.0, st.t_curr))
}

/// `t⁺ = (1 + √(1 + 4t²)) / 2`.
pub fn bt_next_t(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

/// One Beck–Teboulle FISTA step: momentum `(t − 1)/t⁺`.
pub fn step_fista_bt(
    p: &CompositeProblem,
    st: &IterateState,
    s: f64,
) -> Result<IterateState, SchemeError> {
    let x_next = forward_backward(p, &st.y_curr, s, st.n + 1)?;
    let t_next = bt_next_t(st.t_curr);
    let momentum = (st.t_curr - 1.0) / t_next;
    Ok(advance(st, x_next, momentum, t_next))
}

/// Chambolle–Dossal momentum `αₙ = (n − 1)/(n + a − 1)` for `n ≥ 1`.
pub fn cd_momentum(n: usize, cd_alpha: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    (n - 1.0) / (n + cd_alpha - 1.0)
}

/// One Chambolle–Dossal FISTA step.
pub fn step_fista_cd(
    p: &CompositeProblem,
    st: &IterateState,
    s: f64,
    cd_alpha: f64,
) -> Result<IterateState, SchemeError> {
    let x_next = forward_backward(p, &st.y_curr, s, st.n + 1)?;
    let momentum = cd_momentum(st.n + 1, cd_alpha);
    Ok(advance(st, x_next, momentum, st.t_curr))
}

/// `⌊2e√(L/μ)⌋`, at least 1.
pub fn default_restart_period(lipschitz: f64, mu: f64) -> usize {
    ((2.0 * std::f64::consts::E * (lipschitz / mu).sqrt()).floor() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    /// `F(x_n) − F*`; NaN when `F*` is unknown.
    pub f_gap: f64,
    /// `‖x_n − x_{n−1}‖`
    pub step_norm: f64,
    pub dist_opt: Option<f64>,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GapReached,
    ResidualReached,
    /// Neither stopping criterion was met before `max_iter`.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    /// `x_0, x_1, …` when `keep_iterates` was set.
    pub iterates: Option<Vec<Vector>>,
    pub stop: StopReason,
    pub final_state: IterateState,
    /// Restart period actually used (restart scheme only).
    pub restart_period: Option<usize>,
}

impl RunOutput {
    pub fn f_gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_gap).collect()
    }

    /// First `n` with `f_gap ≤ eps`.
    pub fn iterations_to(&self, eps: f64) -> Option<usize> {
        self.records.iter().find(|r| r.f_gap <= eps).map(|r| r.n)
    }
}

fn record(p: &CompositeProblem, st: &IterateState, f_star: Option<f64>, wall_ns: u64) -> TraceRecord {
    TraceRecord {
        n: st.n,
        f_gap: f_star.map_or(f64::NAN, |fs| p.evaluate_total(&st.x_curr) - fs),
        step_norm: (&st.x_curr - &st.x_prev).norm(),
        dist_opt: p.dist_xstar(&st.x_curr),
        wall_ns,
    }
}

/// Run a scheme from `x0` until `max_iter`, `f_gap ≤ stop_gap` (when `F*` is
/// known and `stop_gap > 0`) or gradient-mapping norm `≤ stop_residual`.
/// The trace holds one record per iterate, including `n = 0`.
pub fn run(p: &CompositeProblem, cfg: &SchemeConfig, x0: &Vector) -> Result<RunOutput, SchemeError> {
    cfg.validate(p)?;
    if x0.len() != p.dim() {
        return Err(SchemeError::Dimension {
            expected: p.dim(),
            got: x0.len(),
        });
    }
    let s = cfg.step_size(p);
    let restart_period = match cfg.kind {
        SchemeKind::FistaRestart => Some(match cfg.restart_period {
            Some(k) => k,
            None => default_restart_period(p.lipschitz(), p.mu().ok_or(SchemeError::MissingMu)?),
        }),
        _ => None,
    };
    let f_star = p.f_star();
    let start = Instant::now();
    let clock = |on: bool| if on { start.elapsed().as_nanos() as u64 } else { 0 };

    let mut st = IterateState::new(x0.clone());
    let mut records = Vec::with_capacity(cfg.max_iter.min(1 << 20) + 1);
    let mut iterates = cfg.keep_iterates.then(|| vec![st.x_curr.clone()]);
    records.push(record(p, &st, f_star, clock(cfg.record_wall_time)));

    let mut stop = StopReason::MaxIter;
    if let Some(reason) = stop_check(p, cfg, &st, &records[0], s) {
        stop = reason;
    } else {
        while st.n < cfg.max_iter {
            st = match cfg.kind {
                SchemeKind::Fb => step_fb(p, &st, s)?,
                SchemeKind::Vfista => step_vfista(p, &st, cfg.alpha, s)?,
                SchemeKind::FistaBt => step_fista_bt(p, &st, s)?,
                SchemeKind::FistaCd => step_fista_cd(p, &st, s, cfg.cd_alpha)?,
                SchemeKind::FistaRestart => {
                    let mut next = step_fista_bt(p, &st, s)?;
                    if next.n % restart_period.unwrap_or(1) == 0 {
                        // zero momentum for the next step: t ← 1, anchor ← x
                        next.t_curr = 1.0;
                        next.y_curr = next.x_curr.clone();
                    }
                    next
                }
            };
            let rec = record(p, &st, f_star, clock(cfg.record_wall_time));
            if !rec.f_gap.is_finite() && f_star.is_some() {
                return Err(SchemeError::NonFinite { n: st.n, what: "objective" });
            }
            records.push(rec);
            if let Some(xs) = iterates.as_mut() {
                xs.push(st.x_curr.clone());
            }
            if let Some(reason) = stop_check(p, cfg, &st, &rec, s) {
                stop = reason;
                break;
            }
        }
    }
    Ok(RunOutput {
        records,
        iterates,
        stop,
        final_state: st,
        restart_period,
    })
}

fn stop_check(
    p: &CompositeProblem,
    cfg: &SchemeConfig,
    st: &IterateState,
    rec: &TraceRecord,
    s: f64,
) -> Option<StopReason> {
    if cfg.stop_gap > 0.0 && rec.f_gap <= cfg.stop_gap {
        return Some(StopReason::GapReached);
    }
    if cfg.stop_residual > 0.0 && p.gradient_mapping(&st.x_curr, s).norm() <= cfg.stop_residual {
        return Some(StopReason::ResidualReached);
    }
    None
}

/// FISTA (Beck–Teboulle) restarted every `restart_period` iterations, or
/// every `⌊2e√(L/μ)⌋` iterations when no period is given.
pub fn run_restart_fista(
    p: &CompositeProblem,
    cfg: &SchemeConfig,
    x0: &Vector,
) -> Result<RunOutput, SchemeError> {
    let cfg = SchemeConfig {
        kind: SchemeKind::FistaRestart,
        ..cfg.clone()
    };
    run(p, &cfg, x0)
}

pub const TRACE_CSV_HEADER: &str = "n,f_gap,step_norm,dist_opt,wall_ns";

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Write `n,f_gap,step_norm,dist_opt,wall_ns` rows; a missing distance is an
/// empty field.
pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in records {
        let dist = r.dist_opt.map(fmt_f64).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            fmt_f64(r.f_gap),
            fmt_f64(r.step_norm),
            dist,
            r.wall_ns
        )?;
    }
    Ok(())
}

/// JSON sidecar describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scheme: SchemeKind,
    pub params: SchemeConfig,
    pub seed: u64,
    pub problem_hash: String,
    pub stop: StopReason,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restart_period: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_degenerate_least_squares, make_least_squares, seeded_point, Matrix};

    fn scalar_quadratic(a: f64) -> CompositeProblem {
        make_least_squares(Matrix::from_element(1, 1, a), Vector::zeros(1)).unwrap()
    }

    #[test]
    fn vfista_fixed_point() {
        let p = scalar_quadratic(0.3);
        let out = run(&p, &SchemeConfig::vfista(0.7, 50), &Vector::zeros(1)).unwrap();
        assert!(out.records.iter().all(|r| r.f_gap == 0.0 && r.step_norm == 0.0));
    }

    #[test]
    fn vfista_one_dimensional_recursion() {
        // f = ½x², L = 1, s = 1: the gradient step annihilates y
        let p = scalar_quadratic(1.0);
        let alpha = 0.6;
        let mut st = IterateState::new(Vector::from_element(1, 2.0));
        st.y_curr = Vector::from_element(1, -1.3);
        let next = step_vfista(&p, &st, alpha, 1.0).unwrap();
        assert_eq!(next.x_curr[0], 0.0);
        assert_eq!(next.y_curr[0], alpha * (0.0 - 2.0));
        assert_eq!(next.n, 1);
    }

    #[test]
    fn fb_examples() {
        let p = make_degenerate_least_squares(3, 5, 2, 4).unwrap();
        let xs = p.project_xstar(&seeded_point(5, 1)).unwrap();
        let st = step_fb(&p, &IterateState::new(xs.clone()), 1.0 / p.lipschitz()).unwrap();
        assert!((&st.x_curr - &xs).norm() < 1e-14);

        let q = scalar_quadratic(2.0);
        let st = step_fb(&q, &IterateState::new(Vector::from_element(1, 5.0)), 0.25).unwrap();
        assert_eq!(st.x_curr[0], 0.0);
    }

    #[test]
    fn fb_trace_on_unit_quadratic() {
        let p = scalar_quadratic(1.0);
        let cfg = SchemeConfig::fb(3).with_step(1.0);
        let out = run(&p, &cfg, &Vector::from_element(1, 1.0)).unwrap();
        assert_eq!(out.f_gaps(), vec![0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_iterations_gives_initial_record() {
        let p = scalar_quadratic(1.0);
        let out = run(&p, &SchemeConfig::fb(0), &Vector::from_element(1, 1.0)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].n, 0);
        assert_eq!(out.stop, StopReason::MaxIter);
    }

    #[test]
    fn bt_sequence() {
        let t1 = bt_next_t(1.0);
        assert!((t1 - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        let t2 = bt_next_t(t1);
        assert!((t2 - 0.5 * (1.0 + (1.0 + 4.0 * t1 * t1).sqrt())).abs() < 1e-15);
        assert!((t2 - 2.1935).abs() < 1e-3);
    }

    #[test]
    fn cd_momentum_values() {
        assert_eq!(cd_momentum(1, 3.0), 0.0);
        assert_eq!(cd_momentum(10, 3.0), 0.75);
        let mut prev = -1.0;
        for n in 1..=10_000 {
            let a = cd_momentum(n, 3.0);
            assert!(a > prev && a < 1.0);
            prev = a;
        }
    }

    #[test]
    fn restart_period_default() {
        assert_eq!(default_restart_period(1e4, 1.0), 543);
        assert_eq!(default_restart_period(1.0, 1.0), 5);
    }

    #[test]
    fn restart_without_mu_is_rejected() {
        let p = crate::problems::make_lasso(Matrix::identity(2, 2), Vector::zeros(2), 1.0).unwrap();
        let cfg = SchemeConfig::new(SchemeKind::FistaRestart, 10);
        assert_eq!(run(&p, &cfg, &Vector::zeros(2)).unwrap_err(), SchemeError::MissingMu);
    }

    #[test]
    fn invalid_configs() {
        let p = scalar_quadratic(1.0);
        let x0 = Vector::zeros(1);
        assert!(run(&p, &SchemeConfig::vfista(1.0, 5), &x0).is_err());
        assert!(run(&p, &SchemeConfig::fb(5).with_step(2.0), &x0).is_err());
        let mut cd = SchemeConfig::new(SchemeKind::FistaCd, 5);
        cd.cd_alpha = 2.0;
        assert!(run(&p, &cd, &x0).is_err());
        assert!(run(&p, &SchemeConfig::fb(5), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn non_finite_is_reported() {
        let p = scalar_quadratic(1.0);
        let err = run(&p, &SchemeConfig::fb(5), &Vector::from_element(1, f64::NAN)).unwrap_err();
        assert!(matches!(err, SchemeError::NonFinite { n: 1, .. }));
    }

    #[test]
    fn stop_rules() {
        let p = make_degenerate_least_squares(4, 6, 3, 2).unwrap();
        let x0 = seeded_point(6, 8);
        let mut cfg = SchemeConfig::fb(100_000);
        cfg.stop_gap = 1e-10;
        let out = run(&p, &cfg, &x0).unwrap();
        assert_eq!(out.stop, StopReason::GapReached);
        assert!(out.records.last().unwrap().f_gap <= 1e-10);

        let mut cfg = SchemeConfig::fb(100_000);
        cfg.stop_residual = 1e-8;
        let out = run(&p, &cfg, &x0).unwrap();
        assert_eq!(out.stop, StopReason::ResidualReached);

        let mut cfg = SchemeConfig::fb(3);
        cfg.stop_gap = 1e-300;
        assert_eq!(run(&p, &cfg, &x0).unwrap().stop, StopReason::MaxIter);
    }

    #[test]
    fn csv_format() {
        let recs = vec![
            TraceRecord { n: 0, f_gap: 0.5, step_norm: 0.0, dist_opt: Some(1.0), wall_ns: 0 },
            TraceRecord { n: 1, f_gap: 1e-20, step_norm: 0.1, dist_opt: None, wall_ns: 7 },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "n,f_gap,step_norm,dist_opt,wall_ns\n0,0.5,0.0,1.0,0\n1,1e-20,0.1,,7\n"
        );
        let parsed: f64 = "1e-20".parse().unwrap();
        assert_eq!(parsed, 1e-20);
    }
}
