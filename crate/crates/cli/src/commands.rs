//! Subcommand implementations. Each returns its JSON document; the binary
//! prints it and maps errors to exit codes.

use std::path::{Path, PathBuf};

use hbrate::certify::{
    check_gap_bound, check_lemma7, check_lemma_tech2, check_step_envelope, check_theorem1_decay, check_theorem2,
    energy_theorem1, energy_theorem2, fit_tail_rate, CheckReport, ProjectedHistory, Theorem2Params, WindowPolicy,
    MIN_FIT_TRACE,
};
use hbrate::ode::{
    check_proposition1, check_theorem3, continuous_energy, energy_continuous, integrate_hbf, proposition1_friction,
    theorem3_friction, OdeConfig,
};
use hbrate::problems::seeded_point;
use hbrate::schemes::{run, RunMetadata, RunOutput, SchemeConfig, SchemeKind};
use hbrate::tuning::{
    corollary1_certificate, corollary2_certificate, theorem1_certificate, theorem2_certificate, RateCertificate,
    Regime,
};
use hbrate::{CompositeProblem, Vector};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, Friction, SchemeSpec};
use crate::output::{ensure_dir, gnuplot_script, write_json, write_ode_trace, write_trace};
use crate::report::{
    ComparisonReport, ComparisonRow, EpsEntry, OdeReport, OrderingCheck, RunEntry, RunReport, SchemeValidation,
    ValidationReport, EPS_GRID, RATE_TOLERANCE,
};
use crate::{scheme_error, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeArg {
    Thm1,
    Thm2,
    Cor1,
    Cor2,
}

#[derive(Debug, Clone, Default)]
pub struct CertifyArgs {
    pub kappa: Option<f64>,
    pub lipschitz: Option<f64>,
    pub mu: Option<f64>,
    pub theta: Option<f64>,
    pub omega: Option<f64>,
    pub regime: Option<RegimeArg>,
}

/// Certificate for the requested regime. The regime defaults to `cor2` when
/// `theta` is given, `thm2` when `omega` is given and `cor1` otherwise.
pub fn cmd_certify(args: &CertifyArgs) -> Result<RateCertificate, CliError> {
    let kappa = match (args.kappa, args.lipschitz, args.mu) {
        (Some(k), None, None) => k,
        (None, Some(l), Some(mu)) if l > 0.0 => mu / l,
        _ => return Err(CliError::Usage("give either --kappa or both --L and --mu".into())),
    };
    let regime = args.regime.unwrap_or(match (args.theta, args.omega) {
        (Some(_), _) => RegimeArg::Cor2,
        (None, Some(_)) => RegimeArg::Thm2,
        _ => RegimeArg::Cor1,
    });
    let infeasible = |e: hbrate::tuning::TuningError| CliError::Infeasible(e.to_string());
    match regime {
        RegimeArg::Thm1 => theorem1_certificate(kappa).map_err(infeasible),
        RegimeArg::Cor1 => corollary1_certificate(kappa).map_err(infeasible),
        RegimeArg::Thm2 => {
            let omega = args.omega.ok_or_else(|| CliError::Usage("regime thm2 needs --omega".into()))?;
            theorem2_certificate(omega, kappa).map_err(infeasible)
        }
        RegimeArg::Cor2 => {
            let theta = args.theta.ok_or_else(|| CliError::Usage("regime cor2 needs --theta".into()))?;
            corollary2_certificate(theta, kappa).map_err(infeasible)
        }
    }
}

struct Completed {
    spec: SchemeSpec,
    cfg: SchemeConfig,
    cert: Option<RateCertificate>,
    out: RunOutput,
}

/// Runs every scheme of the experiment in parallel; results keep the order
/// of the configuration.
fn run_all(exp: &Experiment, adjust: impl Fn(&mut SchemeConfig) + Sync) -> Result<Vec<Completed>, CliError> {
    let resolved = exp
        .config
        .schemes
        .iter()
        .map(|s| {
            let (mut cfg, cert) = exp.resolve(s)?;
            adjust(&mut cfg);
            Ok((s.clone(), cfg, cert))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let x0 = exp.start();
    let results: Vec<Result<Completed, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = resolved
            .into_iter()
            .map(|(spec, cfg, cert)| {
                let (p, x0) = (&exp.problem, &x0);
                scope.spawn(move || {
                    let out = run(p, &cfg, x0).map_err(scheme_error)?;
                    Ok(Completed { spec, cfg, cert, out })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Numeric("scheme run panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

fn value_scale(p: &CompositeProblem, x0: &Vector) -> f64 {
    p.evaluate_total(x0).abs().max(p.f_star().map_or(0.0, f64::abs))
}

fn bound_check(p: &CompositeProblem, x0: &Vector, c: &Completed) -> Option<CheckReport> {
    let cert = c.cert.as_ref()?;
    if p.f_star().is_none() || c.cfg.step.is_some() {
        return None;
    }
    Some(check_gap_bound(&c.out.f_gaps(), cert, value_scale(p, x0)))
}

fn write_traces(exp: &Experiment, runs: &[Completed]) -> Result<Vec<Option<PathBuf>>, CliError> {
    let emit = &exp.config.emit;
    if !(emit.csv || emit.json_report || emit.gnuplot_script) {
        return Ok(vec![None; runs.len()]);
    }
    ensure_dir(&exp.output_dir)?;
    let mut files = Vec::with_capacity(runs.len());
    for c in runs {
        if emit.csv || emit.gnuplot_script {
            let path = exp.output_dir.join(format!("{}.csv", c.spec.label()));
            write_trace(&path, &c.out.records)?;
            files.push(Some(path));
        } else {
            files.push(None);
        }
    }
    if emit.gnuplot_script {
        let traces: Vec<(String, PathBuf)> = runs
            .iter()
            .zip(&files)
            .filter_map(|(c, f)| f.clone().map(|f| (c.spec.label(), f)))
            .collect();
        crate::output::write_atomic(&exp.output_dir.join("plot.gp"), gnuplot_script(&traces).as_bytes())?;
    }
    Ok(files)
}

fn file_name(path: &Option<PathBuf>) -> Option<String> {
    path.as_ref()
        .and_then(|p| p.file_name())
        .map(|f| f.to_string_lossy().into_owned())
}

/// One CSV per scheme and a JSON report, deterministic given the seed.
pub fn cmd_run(exp: &Experiment) -> Result<RunReport, CliError> {
    exp.require_schemes(1)?;
    let runs = run_all(exp, |_| {})?;
    let files = write_traces(exp, &runs)?;
    let x0 = exp.start();
    let p = &exp.problem;
    let entries = runs
        .iter()
        .zip(&files)
        .map(|(c, f)| RunEntry {
            label: c.spec.label(),
            trace_file: file_name(f),
            metadata: RunMetadata {
                scheme: c.cfg.kind,
                params: c.cfg.clone(),
                seed: exp.config.seed,
                problem_hash: p.content_hash(),
                stop: c.out.stop,
                iterations: c.out.final_state.n,
                restart_period: c.out.restart_period,
            },
            initial_gap: c.out.records[0].f_gap,
            final_gap: c.out.records.last().map_or(f64::NAN, |r| r.f_gap),
            certificate: c.cert,
            bound_check: bound_check(p, &x0, c),
        })
        .collect();
    let report = RunReport {
        problem_hash: p.content_hash(),
        seed: exp.config.seed,
        kappa: p.kappa(),
        f_star: p.f_star(),
        runs: entries,
    };
    if exp.config.emit.json_report {
        write_json(&exp.output_dir.join("report.json"), &report)?;
    }
    Ok(report)
}

fn theoretical_decrement(c: &Completed, kappa: Option<f64>) -> Option<f64> {
    let k = kappa?;
    if c.cfg.step.is_some() {
        return None;
    }
    match c.cfg.kind {
        SchemeKind::Fb => Some(-(1.0 - k).ln()),
        SchemeKind::FistaRestart if c.cfg.restart_period.is_none() => Some(k.sqrt() / std::f64::consts::E),
        _ => None,
    }
}

/// Iterations-to-ε table, fitted and predicted rates, and the ordering check.
pub fn cmd_compare(exp: &Experiment) -> Result<ComparisonReport, CliError> {
    exp.require_schemes(1)?;
    if exp.problem.f_star().is_none() {
        return Err(CliError::Config("comparison needs a trusted F*".into()));
    }
    let floor = EPS_GRID[EPS_GRID.len() - 1];
    let runs = run_all(exp, |cfg| {
        if cfg.stop_gap == 0.0 {
            cfg.stop_gap = floor;
        }
    })?;
    write_traces(exp, &runs)?;
    let p = &exp.problem;
    let x0 = exp.start();
    let kappa = p.kappa();
    let f0 = p.evaluate_total(&x0).abs();
    let rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|c| {
            let gaps = c.out.f_gaps();
            let gap0 = gaps[0];
            let fit = (gaps.len() >= MIN_FIT_TRACE)
                .then(|| fit_tail_rate(&gaps, f0, WindowPolicy::default()).ok())
                .flatten();
            let certified = c.cert.map(|cert| cert.decrement());
            let theoretical = theoretical_decrement(c, kappa);
            let fitted = fit.and_then(|f| f.decrement());
            let iterations_to = EPS_GRID
                .iter()
                .map(|&eps| EpsEntry {
                    eps,
                    iterations: c.out.iterations_to(eps),
                    predicted: match (c.cert, theoretical) {
                        (Some(cert), _) => Some(cert.iterations_to(eps / gap0)),
                        (None, Some(d)) => Some(((gap0 / eps).ln() / d).ceil().max(0.0) as u64),
                        _ => None,
                    },
                })
                .collect();
            ComparisonRow {
                label: c.spec.label(),
                scheme: c.cfg.kind.to_string(),
                iterations_to,
                fitted_decrement: fitted,
                r_squared: fit.map_or(0.0, |f| f.r_squared),
                certified_decrement: certified,
                theoretical_decrement: theoretical,
                bound_check_pass: bound_check(p, &x0, c).map(|r| r.pass),
                rate_consistent: match (fitted, certified) {
                    (Some(f), Some(c)) => Some(f >= c - RATE_TOLERANCE),
                    _ => None,
                },
            }
        })
        .collect();
    let ordering = ordering_check(&rows, EPS_GRID[1]);
    let report = ComparisonReport {
        problem_hash: p.content_hash(),
        kappa,
        rows,
        ordering,
    };
    if exp.config.emit.json_report {
        write_json(&exp.output_dir.join("compare.json"), &report)?;
    }
    Ok(report)
}

/// Schemes with a predicted decrement, sorted fastest first, must need a
/// nondecreasing number of iterations to reach `eps`.
fn ordering_check(rows: &[ComparisonRow], eps: f64) -> Option<OrderingCheck> {
    let mut ranked: Vec<(f64, &ComparisonRow)> = rows
        .iter()
        .filter_map(|r| r.certified_decrement.or(r.theoretical_decrement).map(|d| (d, r)))
        .collect();
    if ranked.len() < 2 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let iterations: Vec<Option<usize>> = ranked
        .iter()
        .map(|(_, r)| r.iterations_to.iter().find(|e| e.eps == eps).and_then(|e| e.iterations))
        .collect();
    let as_count = |n: Option<usize>| n.unwrap_or(usize::MAX);
    let holds = iterations.windows(2).all(|w| as_count(w[0]) <= as_count(w[1]));
    Some(OrderingCheck {
        eps,
        expected_order: ranked.iter().map(|(_, r)| r.label.clone()).collect(),
        iterations,
        holds,
    })
}

fn validate_one(exp: &Experiment, c: &Completed) -> SchemeValidation {
    let label = c.spec.label();
    let skip = |why: &str| SchemeValidation {
        label: label.clone(),
        checks: Vec::new(),
        skipped: Some(why.to_string()),
    };
    if c.cfg.kind != SchemeKind::Vfista {
        return skip("energy and bound checks apply to V-FISTA runs");
    }
    let Some(cert) = c.cert else {
        return skip("no certificate for this momentum");
    };
    let p = &exp.problem;
    let x0 = exp.start();
    let mut checks = Vec::new();
    if let Some(r) = bound_check(p, &x0, c) {
        checks.push(r);
    }
    if c.cfg.step.is_some() {
        return SchemeValidation {
            label,
            checks,
            skipped: Some("energy checks need s = 1/L".into()),
        };
    }
    let hist = match ProjectedHistory::from_run(p, &c.out) {
        Ok(h) => h,
        Err(e) => {
            return SchemeValidation {
                label,
                checks,
                skipped: Some(format!("energy checks unavailable: {e}")),
            }
        }
    };
    checks.extend(check_lemma_tech2(&hist, cert.alpha));
    if cert.regime == Regime::Theorem1 {
        if let Ok(et) = energy_theorem1(&hist, cert.kappa) {
            checks.extend(check_theorem1_decay(&et));
            checks.extend(check_lemma7(&et));
            checks.extend(et.check_signs());
        }
    } else {
        let params = Theorem2Params::from_certificate(&cert);
        if let Ok(et) = energy_theorem2(&hist, params) {
            checks.extend(check_theorem2(&et, params));
            checks.extend(et.check_signs());
        }
    }
    if cert.regime == Regime::Corollary1Optimal {
        let steps: Vec<f64> = c.out.records.iter().map(|r| r.step_norm).collect();
        let floor = 1e3 * f64::EPSILON * x0.norm().max(1.0);
        checks.push(check_step_envelope(&steps[1..], cert.sigma, cert.kappa, floor));
    }
    SchemeValidation {
        label,
        checks,
        skipped: None,
    }
}

/// Runs the V-FISTA schemes keeping iterates and applies every applicable
/// checker. Fails with exit code 1 when any check fails.
pub fn cmd_validate(exp: &Experiment) -> Result<ValidationReport, CliError> {
    exp.require_schemes(1)?;
    let runs = run_all(exp, |cfg| cfg.keep_iterates = cfg.kind == SchemeKind::Vfista)?;
    let schemes: Vec<SchemeValidation> = runs.iter().map(|c| validate_one(exp, c)).collect();
    let pass = schemes.iter().all(|s| s.checks.iter().all(|r| r.pass));
    let report = ValidationReport {
        problem_hash: exp.problem.content_hash(),
        kappa: exp.problem.kappa(),
        schemes,
        pass,
    };
    if exp.config.emit.json_report {
        ensure_dir(&exp.output_dir)?;
        write_json(&exp.output_dir.join("validation.json"), &report)?;
    }
    Ok(report)
}

/// Integrates the friction ODE and checks the envelope matching its friction.
/// A custom friction value is reported without assertions.
pub fn cmd_ode(exp: &Experiment) -> Result<OdeReport, CliError> {
    let spec = exp
        .config
        .ode
        .as_ref()
        .ok_or_else(|| CliError::Config("the `ode` section is required".into()))?;
    let p = &exp.problem;
    let mu = p.mu();
    let need_mu = || mu.ok_or_else(|| CliError::Config("friction rule needs the growth modulus mu".into()));
    let alpha_c = match spec.friction {
        Friction::Theorem3 => theorem3_friction(need_mu()?),
        Friction::Proposition1 => proposition1_friction(need_mu()?),
        Friction::Value(a) => a,
    };
    let x0 = exp.start();
    let v0 = if spec.at_rest {
        Vector::zeros(p.dim())
    } else {
        seeded_point(p.dim(), exp.config.seed.wrapping_add(1))
    };
    let cfg = OdeConfig::new(alpha_c, spec.t_end, spec.dt, x0, v0);
    let traj = integrate_hbf(p, &cfg).map_err(|e| match e {
        hbrate::ode::OdeError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        _ => CliError::Config(e.to_string()),
    })?;
    let cfg_err = |e: hbrate::ode::OdeError| CliError::Config(e.to_string());
    let mut checks = Vec::new();
    let mut energy = None;
    match (spec.friction, mu) {
        (Friction::Theorem3, Some(mu)) => {
            checks.extend(check_theorem3(&traj, mu).map_err(cfg_err)?);
            if traj.projections.is_some() {
                let rep = energy_continuous(&traj, mu).map_err(cfg_err)?;
                checks.extend(rep.checks);
                energy = Some(rep.energy);
            }
        }
        (Friction::Proposition1, Some(mu)) => {
            checks.push(check_proposition1(&traj, mu).map_err(cfg_err)?);
        }
        _ => {}
    }
    if energy.is_none() && traj.projections.is_some() {
        if let Some(mu) = mu {
            energy = continuous_energy(&traj, mu).ok();
        }
    }
    let emit = &exp.config.emit;
    if emit.csv || emit.json_report {
        ensure_dir(&exp.output_dir)?;
    }
    if emit.csv {
        write_ode_trace(
            &exp.output_dir.join("ode.csv"),
            &traj.times,
            &traj.f_gap,
            &traj.speeds(),
            energy.as_deref(),
        )?;
    }
    let report = OdeReport {
        problem_hash: p.content_hash(),
        alpha_c,
        mu,
        m0: traj.m0,
        t_end: spec.t_end,
        steps: traj.times.len() - 1,
        final_gap: traj.f_gap.last().copied().unwrap_or(f64::NAN),
        pass: checks.iter().all(|c| c.pass),
        checks,
    };
    if emit.json_report {
        write_json(&exp.output_dir.join("ode_report.json"), &report)?;
    }
    Ok(report)
}

/// Loads a configuration file; used by the binary.
pub fn load(path: &Path) -> Result<Experiment, CliError> {
    Experiment::load(path)
}
