//! Composite objectives `F = f + h` with first-order and proximal oracles.
//!
//! The smooth part is always a least-squares term `f(x) = ½‖Ax − b‖²`, which
//! covers every test problem the toolkit needs: rank-deficient quadratics with
//! an affine minimizer set (exact projection available) and LASSO.
//!
//! Problems are immutable once built and every oracle takes `&self`, so a
//! single problem can be shared by concurrent runs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative cutoff below which a singular value is treated as zero.
pub const RANK_CUTOFF: f64 = 1e-10;
/// Smallest admissible `σ_min,nonzero / σ_max`.
pub const CONDITIONING_FLOOR: f64 = 1e-8;

const LASSO_REFERENCE_TOL: f64 = 1e-14;
const LASSO_REFERENCE_MAX_ITER: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("rank {rank} exceeds min({m}, {n})")]
    RankTooLarge { m: usize, n: usize, rank: usize },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("singular value profile must have `rank` entries, got {got} for rank {rank}")]
    ProfileLength { rank: usize, got: usize },
    #[error("generated matrix has numerical rank {found}, expected {expected}")]
    RankMismatch { expected: usize, found: usize },
    #[error("smallest nonzero singular value ratio {ratio:e} is below the conditioning floor {CONDITIONING_FLOOR:e}")]
    IllConditioned { ratio: f64 },
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("mu must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("reference solve did not converge after {iterations} iterations (step {step:e})")]
    ReferenceSolveFailed { iterations: usize, step: f64 },
    #[error("malformed problem document: {0}")]
    Document(String),
}

/// The nonsmooth part `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `h(x) = λ‖x‖₁`
    L1 { lambda: f64 },
    /// Indicator of the nonnegative orthant.
    Nonnegative,
}

impl Regularizer {
    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::Nonnegative => {
                if x.iter().all(|&v| v >= 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `prox_{s h}(x)`.
    pub fn prox(&self, x: &Vector, s: f64) -> Vector {
        match self {
            Regularizer::Zero => x.clone(),
            Regularizer::L1 { lambda } => soft_threshold(x, s * lambda),
            Regularizer::Nonnegative => x.map(|v| v.max(0.0)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Regularizer::Zero)
    }
}

/// Coordinatewise `sign(v)·max(|v| − threshold, 0)`.
pub fn soft_threshold(x: &Vector, threshold: f64) -> Vector {
    x.map(|v| {
        if v > threshold {
            v - threshold
        } else if v < -threshold {
            v + threshold
        } else {
            0.0
        }
    })
}

/// Exact projection onto the affine set `{x : AᵀAx = Aᵀb}`,
/// `P(x) = x − A⁺(Ax − b)`.
#[derive(Debug, Clone)]
pub struct AffineProjector {
    pinv: Matrix,
}

impl AffineProjector {
    pub fn project(&self, a: &Matrix, b: &Vector, x: &Vector) -> Vector {
        let residual = a * x - b;
        x - &self.pinv * residual
    }
}

/// Known geometry of a problem: optimal value, growth modulus, minimizer set.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub f_star: f64,
    /// Quadratic growth modulus. `None` when it is unknown (LASSO).
    pub mu: Option<f64>,
    /// `true` when `f_star` comes from a numerical reference solve.
    pub numeric_reference: bool,
    projector: Option<AffineProjector>,
}

impl GroundTruth {
    pub fn has_projection(&self) -> bool {
        self.projector.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    DegenerateLeastSquares,
    LeastSquares,
    Lasso,
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Generated {
        seed: u64,
        singular_values: Vec<f64>,
    },
    Explicit,
}

/// `F(x) = ½‖Ax − b‖² + h(x)`.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    kind: ProblemKind,
    a: Matrix,
    b: Vector,
    reg: Regularizer,
    lipschitz: f64,
    geometry: Option<GroundTruth>,
    source: Source,
}

impl CompositeProblem {
    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn rhs(&self) -> &Vector {
        &self.b
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    pub fn smooth_value(&self, x: &Vector) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }

    pub fn smooth_grad(&self, x: &Vector) -> Vector {
        self.a.tr_mul(&(&self.a * x - &self.b))
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn nonsmooth_value(&self, x: &Vector) -> f64 {
        self.reg.value(x)
    }

    pub fn prox(&self, x: &Vector, s: f64) -> Vector {
        self.reg.prox(x, s)
    }

    /// `f(x) + h(x)`; `+∞` outside the domain of an indicator.
    pub fn evaluate_total(&self, x: &Vector) -> f64 {
        let h = self.nonsmooth_value(x);
        if h.is_infinite() {
            return h;
        }
        self.smooth_value(x) + h
    }

    pub fn geometry(&self) -> Option<&GroundTruth> {
        self.geometry.as_ref()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.geometry.as_ref().map(|g| g.f_star)
    }

    pub fn mu(&self) -> Option<f64> {
        self.geometry.as_ref().and_then(|g| g.mu)
    }

    /// `μ / L` when μ is known.
    pub fn kappa(&self) -> Option<f64> {
        self.mu().map(|mu| mu / self.lipschitz)
    }

    pub fn has_projection(&self) -> bool {
        self.geometry.as_ref().is_some_and(|g| g.has_projection())
    }

    /// Projection onto the minimizer set, when it is known analytically.
    pub fn project_xstar(&self, x: &Vector) -> Option<Vector> {
        let proj = self.geometry.as_ref()?.projector.as_ref()?;
        Some(proj.project(&self.a, &self.b, x))
    }

    pub fn dist_xstar(&self, x: &Vector) -> Option<f64> {
        self.project_xstar(x).map(|p| (x - p).norm())
    }

    /// Composite gradient mapping `(x − prox_{sh}(x − s∇f(x))) / s`.
    pub fn gradient_mapping(&self, x: &Vector, s: f64) -> Vector {
        let forward = x - self.smooth_grad(x) * s;
        (x - self.prox(&forward, s)) / s
    }

    /// Replace (or set) the quadratic growth modulus. Used for LASSO, where μ
    /// is supplied by the caller, possibly as a deliberate overestimate.
    pub fn with_mu(mut self, mu: f64) -> Result<Self, ProblemError> {
        if !(mu > 0.0) {
            return Err(ProblemError::NonPositiveMu(mu));
        }
        match self.geometry.as_mut() {
            Some(g) => g.mu = Some(mu),
            None => {
                return Err(ProblemError::Document(
                    "cannot attach mu to a problem without ground truth".into(),
                ))
            }
        }
        Ok(self)
    }

    pub fn to_document(&self) -> ProblemDocument {
        let (m, n) = self.a.shape();
        let ground_truth = self.geometry.as_ref().map(|g| GroundTruthDocument {
            f_star: g.f_star,
            mu: g.mu,
            lipschitz: self.lipschitz,
            numeric_reference: g.numeric_reference,
        });
        let lambda = match self.reg {
            Regularizer::L1 { lambda } => Some(lambda),
            _ => None,
        };
        match &self.source {
            Source::Generated {
                seed,
                singular_values,
            } => ProblemDocument {
                kind: self.kind.clone(),
                dims: [m, n],
                seed: Some(*seed),
                singular_values: Some(singular_values.clone()),
                matrix: None,
                rhs: None,
                lambda,
                ground_truth,
            },
            Source::Explicit => ProblemDocument {
                kind: self.kind.clone(),
                dims: [m, n],
                seed: None,
                singular_values: None,
                matrix: Some(matrix_rows(&self.a)),
                rhs: Some(self.b.iter().copied().collect()),
                lambda,
                ground_truth,
            },
        }
    }

    /// SHA-256 of the canonical JSON document, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&self.to_document()).expect("problem document serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Serializable problem description. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub kind: ProblemKind,
    pub dims: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDocument {
    pub f_star: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub numeric_reference: bool,
}

impl ProblemDocument {
    /// Rebuild the problem. Geometry is recomputed for least-squares kinds;
    /// a LASSO document carrying a numeric `f_star` reuses it instead of
    /// re-running the reference solve.
    pub fn build(&self) -> Result<CompositeProblem, ProblemError> {
        let [m, n] = self.dims;
        match self.kind {
            ProblemKind::DegenerateLeastSquares if self.matrix.is_none() => {
                let seed = self
                    .seed
                    .ok_or_else(|| ProblemError::Document("generated problem needs `seed`".into()))?;
                let profile = self.singular_values.clone().ok_or_else(|| {
                    ProblemError::Document("generated problem needs `singular_values`".into())
                })?;
                make_degenerate_least_squares_with_profile(m, n, seed, &profile)
            }
            ProblemKind::DegenerateLeastSquares | ProblemKind::LeastSquares => {
                let (a, b) = self.explicit_data()?;
                make_least_squares(a, b)
            }
            ProblemKind::Lasso => {
                let (a, y) = self.explicit_data()?;
                let lambda = self
                    .lambda
                    .ok_or_else(|| ProblemError::Document("lasso needs `lambda`".into()))?;
                let gt = self.ground_truth.as_ref();
                let mut p = match gt {
                    Some(g) if g.numeric_reference => {
                        lasso_with_reference(a, y, lambda, g.f_star)?
                    }
                    _ => make_lasso(a, y, lambda)?,
                };
                if let Some(mu) = gt.and_then(|g| g.mu) {
                    p = p.with_mu(mu)?;
                }
                Ok(p)
            }
        }
    }

    fn explicit_data(&self) -> Result<(Matrix, Vector), ProblemError> {
        let [m, n] = self.dims;
        let rows = self
            .matrix
            .as_ref()
            .ok_or_else(|| ProblemError::Document("missing `matrix`".into()))?;
        if rows.len() != m || rows.iter().any(|r| r.len() != n) {
            return Err(ProblemError::Document(format!(
                "`matrix` does not match dims [{m}, {n}]"
            )));
        }
        let a = Matrix::from_fn(m, n, |i, j| rows[i][j]);
        let b = match &self.rhs {
            Some(v) if v.len() == m => Vector::from_column_slice(v),
            Some(v) => {
                return Err(ProblemError::Document(format!(
                    "`rhs` has length {}, expected {m}",
                    v.len()
                )))
            }
            None => Vector::zeros(m),
        };
        Ok((a, b))
    }
}

fn matrix_rows(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

struct Spectrum {
    sigma_max: f64,
    sigma_min_nonzero: f64,
    rank: usize,
    pinv: Matrix,
}

fn spectrum(a: &Matrix) -> Result<Spectrum, ProblemError> {
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if !(sigma_max > 0.0) {
        return Err(ProblemError::ZeroMatrix);
    }
    let cutoff = RANK_CUTOFF * sigma_max;
    let nonzero: Vec<f64> = svd
        .singular_values
        .iter()
        .copied()
        .filter(|&s| s > cutoff)
        .collect();
    let sigma_min_nonzero = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = sigma_min_nonzero / sigma_max;
    if ratio < CONDITIONING_FLOOR {
        return Err(ProblemError::IllConditioned { ratio });
    }
    let pinv = svd
        .pseudo_inverse(cutoff)
        .map_err(|e| ProblemError::Document(e.to_string()))?;
    Ok(Spectrum {
        sigma_max,
        sigma_min_nonzero,
        rank: nonzero.len(),
        pinv,
    })
}

fn least_squares_from_parts(
    kind: ProblemKind,
    a: Matrix,
    b: Vector,
    source: Source,
) -> Result<CompositeProblem, ProblemError> {
    if b.len() != a.nrows() {
        return Err(ProblemError::Dimensions(format!(
            "rhs length {} does not match {} rows",
            b.len(),
            a.nrows()
        )));
    }
    let spec = spectrum(&a)?;
    let fitted = &a * (&spec.pinv * &b);
    let f_star = 0.5 * (fitted - &b).norm_squared();
    Ok(CompositeProblem {
        kind,
        lipschitz: spec.sigma_max * spec.sigma_max,
        geometry: Some(GroundTruth {
            f_star,
            mu: Some(spec.sigma_min_nonzero * spec.sigma_min_nonzero),
            numeric_reference: false,
            projector: Some(AffineProjector { pinv: spec.pinv }),
        }),
        a,
        b,
        reg: Regularizer::Zero,
        source,
    })
}

/// `F(x) = ½‖Ax − b‖²` for an explicit matrix. `L` and `μ` are the squared
/// extreme nonzero singular values, and `X*` is the affine set of
/// least-squares solutions.
pub fn make_least_squares(a: Matrix, b: Vector) -> Result<CompositeProblem, ProblemError> {
    least_squares_from_parts(ProblemKind::LeastSquares, a, b, Source::Explicit)
}

/// Default singular value profile: `rank` values spaced geometrically from 1
/// down to 0.1.
pub fn default_profile(rank: usize) -> Vec<f64> {
    if rank == 1 {
        return vec![1.0];
    }
    (0..rank)
        .map(|i| 0.1f64.powf(i as f64 / (rank - 1) as f64))
        .collect()
}

/// Seeded rank-deficient least squares with the default profile.
pub fn make_degenerate_least_squares(
    m: usize,
    n: usize,
    rank: usize,
    seed: u64,
) -> Result<CompositeProblem, ProblemError> {
    if rank == 0 || rank > m.min(n) {
        return Err(ProblemError::RankTooLarge { m, n, rank });
    }
    make_degenerate_least_squares_with_profile(m, n, seed, &default_profile(rank))
}

/// Seeded rank-deficient least squares `A = U diag(profile) Vᵀ` with random
/// orthonormal `U` (m×r) and `V` (n×r), and `b = Az` so that `F* = 0`.
pub fn make_degenerate_least_squares_with_profile(
    m: usize,
    n: usize,
    seed: u64,
    profile: &[f64],
) -> Result<CompositeProblem, ProblemError> {
    let rank = profile.len();
    if m == 0 || n == 0 {
        return Err(ProblemError::Dimensions(format!("[{m}, {n}]")));
    }
    if rank == 0 || rank > m.min(n) {
        return Err(ProblemError::RankTooLarge { m, n, rank });
    }
    if profile.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(ProblemError::Dimensions(
            "singular values must be positive and finite".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_orthonormal(&mut rng, m, rank);
    let v = random_orthonormal(&mut rng, n, rank);
    let sigma = Matrix::from_diagonal(&Vector::from_column_slice(profile));
    let a = &u * sigma * v.transpose();
    let z = gaussian_vector(&mut rng, n);
    let b = &a * z;
    let p = least_squares_from_parts(
        ProblemKind::DegenerateLeastSquares,
        a,
        b,
        Source::Generated {
            seed,
            singular_values: profile.to_vec(),
        },
    )?;
    let found = spectrum(&p.a)?.rank;
    if found != rank {
        return Err(ProblemError::RankMismatch {
            expected: rank,
            found,
        });
    }
    Ok(p)
}

/// Standard normal vector drawn from a seeded stream.
pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Reproducible starting point: standard normal entries from `seed`.
pub fn seeded_point(n: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_vector(&mut rng, n)
}

fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let g = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// LASSO: `½‖Ax − y‖² + λ‖x‖₁`. `F*` comes from a Forward-Backward reference
/// solve and is flagged as numeric; `X*` has no closed form.
pub fn make_lasso(a: Matrix, y: Vector, lambda: f64) -> Result<CompositeProblem, ProblemError> {
    let mut p = lasso_with_reference(a, y, lambda, f64::NAN)?;
    let f_star = lasso_reference_value(&p)?;
    if let Some(g) = p.geometry.as_mut() {
        g.f_star = f_star;
    }
    Ok(p)
}

fn lasso_with_reference(
    a: Matrix,
    y: Vector,
    lambda: f64,
    f_star: f64,
) -> Result<CompositeProblem, ProblemError> {
    if !(lambda > 0.0) {
        return Err(ProblemError::NonPositiveLambda(lambda));
    }
    if y.len() != a.nrows() {
        return Err(ProblemError::Dimensions(format!(
            "y length {} does not match {} rows",
            y.len(),
            a.nrows()
        )));
    }
    let svd = a.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if !(sigma_max > 0.0) {
        return Err(ProblemError::ZeroMatrix);
    }
    Ok(CompositeProblem {
        kind: ProblemKind::Lasso,
        lipschitz: sigma_max * sigma_max,
        geometry: Some(GroundTruth {
            f_star,
            mu: None,
            numeric_reference: true,
            projector: None,
        }),
        a,
        b: y,
        reg: Regularizer::L1 { lambda },
        source: Source::Explicit,
    })
}

// Forward-Backward with s = 1/L until the fixed-point step falls below
// LASSO_REFERENCE_TOL (relative). F is monotone along FB, so the last value
// is the tightest available upper estimate of F*.
fn lasso_reference_value(p: &CompositeProblem) -> Result<f64, ProblemError> {
    let s = 1.0 / p.lipschitz;
    let mut x = Vector::zeros(p.dim());
    let mut step = f64::INFINITY;
    for _ in 0..LASSO_REFERENCE_MAX_ITER {
        let forward = &x - p.smooth_grad(&x) * s;
        let next = p.prox(&forward, s);
        step = (&next - &x).norm();
        x = next;
        if step <= LASSO_REFERENCE_TOL * (1.0 + x.norm()) {
            return Ok(p.evaluate_total(&x));
        }
    }
    Err(ProblemError::ReferenceSolveFailed {
        iterations: LASSO_REFERENCE_MAX_ITER,
        step,
    })
}
