//! Experiment configuration: a single JSON document.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use hbrate::problems::{seeded_point, ProblemDocument};
use hbrate::schemes::{SchemeConfig, SchemeKind};
use hbrate::tuning::{
    corollary1_certificate, corollary2_certificate, theorem1_certificate, theorem2_certificate, RateCertificate,
};
use hbrate::{CompositeProblem, Vector};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable overriding `output_dir`.
pub const OUT_DIR_ENV: &str = "HBRATE_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    Thm1,
    Cor1,
    Cor2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    /// File stem of the trace; defaults to the scheme name.
    #[serde(default)]
    pub label: Option<String>,
    /// Explicit V-FISTA momentum. Overrides `tuning`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// V-FISTA momentum rule when `alpha` is absent; `cor1` by default.
    #[serde(default)]
    pub tuning: Option<Tuning>,
    /// `θ` of the overestimated-μ rule `α = 1 − θ`.
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub restart_period: Option<usize>,
    #[serde(default)]
    pub cd_alpha: Option<f64>,
}

impl SchemeSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub max_iter: usize,
    /// Stop once `F(x_n) − F* ≤ stop_gap`; 0 disables.
    #[serde(default)]
    pub stop_gap: f64,
    #[serde(default)]
    pub stop_residual: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            stop_gap: 0.0,
            stop_residual: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emit {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json_report: bool,
    #[serde(default)]
    pub gnuplot_script: bool,
}

fn yes() -> bool {
    true
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            csv: true,
            json_report: true,
            gnuplot_script: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Friction {
    Theorem3,
    Proposition1,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSpec {
    pub friction: Friction,
    pub t_end: f64,
    pub dt: f64,
    /// Start at rest instead of a seeded velocity.
    #[serde(default)]
    pub at_rest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: Option<ProblemDocument>,
    /// Path to a problem document, relative to the config file.
    #[serde(default)]
    pub problem_file: Option<PathBuf>,
    #[serde(default)]
    pub schemes: Vec<SchemeSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub emit: Emit,
    #[serde(default)]
    pub ode: Option<OdeSpec>,
}

/// A parsed configuration with its problem built and paths resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: CompositeProblem,
    pub output_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, base)
    }

    pub fn from_config(config: ExperimentConfig, base: &Path) -> Result<Self, CliError> {
        let doc = match (&config.problem, &config.problem_file) {
            (Some(doc), None) => doc.clone(),
            (None, Some(file)) => {
                let path = base.join(file);
                let text = fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            _ => {
                return Err(CliError::Config(
                    "exactly one of `problem` and `problem_file` is required".into(),
                ))
            }
        };
        let problem = doc.build().map_err(|e| CliError::Config(e.to_string()))?;
        if config.budgets.max_iter == 0 {
            return Err(CliError::Config("budgets.max_iter must be positive".into()));
        }
        if !(config.budgets.stop_gap >= 0.0 && config.budgets.stop_residual >= 0.0) {
            return Err(CliError::Config("stopping tolerances must be nonnegative".into()));
        }
        let mut seen = HashSet::new();
        for s in &config.schemes {
            if !seen.insert(s.label()) {
                return Err(CliError::Config(format!("duplicate scheme label `{}`", s.label())));
            }
        }
        let output_dir = match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => base.join(config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))),
        };
        Ok(Self {
            config,
            problem,
            output_dir,
        })
    }

    pub fn start(&self) -> Vector {
        seeded_point(self.problem.dim(), self.config.seed)
    }

    pub fn require_schemes(&self, at_least: usize) -> Result<(), CliError> {
        if self.config.schemes.len() < at_least {
            return Err(CliError::Usage(format!(
                "the configuration lists {} scheme(s), at least {at_least} needed; add entries to `schemes`, e.g. \
                 [{{\"kind\": \"fb\"}}, {{\"kind\": \"vfista\", \"tuning\": \"cor1\"}}]",
                self.config.schemes.len()
            )));
        }
        Ok(())
    }

    /// Scheme configuration and, for V-FISTA, the certificate of its momentum.
    pub fn resolve(&self, spec: &SchemeSpec) -> Result<(SchemeConfig, Option<RateCertificate>), CliError> {
        let b = &self.config.budgets;
        let mut cfg = SchemeConfig::new(spec.kind, b.max_iter);
        cfg.step = spec.step;
        cfg.stop_gap = b.stop_gap;
        cfg.stop_residual = b.stop_residual;
        cfg.restart_period = spec.restart_period;
        if let Some(a) = spec.cd_alpha {
            cfg.cd_alpha = a;
        }
        let mut cert = None;
        if spec.kind == SchemeKind::Vfista {
            let kappa = self.problem.kappa();
            let need_kappa = || {
                kappa.ok_or_else(|| {
                    CliError::Config(format!(
                        "scheme `{}` needs the growth modulus mu; set ground_truth.mu in the problem",
                        spec.label()
                    ))
                })
            };
            let infeasible = |e: hbrate::tuning::TuningError| CliError::Infeasible(e.to_string());
            match spec.alpha {
                Some(alpha) => {
                    cfg.alpha = alpha;
                    if let Some(k) = kappa {
                        cert = theorem2_certificate((1.0 - alpha) / k.sqrt(), k).ok();
                    }
                }
                None => {
                    let k = need_kappa()?;
                    let c = match (spec.tuning.unwrap_or(Tuning::Cor1), spec.theta) {
                        (Tuning::Thm1, _) => theorem1_certificate(k).map_err(infeasible)?,
                        (Tuning::Cor1, _) => corollary1_certificate(k).map_err(infeasible)?,
                        (Tuning::Cor2, Some(theta)) => corollary2_certificate(theta, k).map_err(infeasible)?,
                        (Tuning::Cor2, None) => {
                            return Err(CliError::Config(format!(
                                "scheme `{}` uses cor2 tuning and needs `theta`",
                                spec.label()
                            )))
                        }
                    };
                    cfg.alpha = c.alpha;
                    cert = Some(c);
                }
            }
        }
        cfg.validate(&self.problem).map_err(crate::scheme_error)?;
        Ok((cfg, cert))
    }
}
