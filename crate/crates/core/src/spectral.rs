//! Score-tilted transition matrix Φ(θ) = (p_ab · e^{θ f(b)}), its Perron root
//! ρ(θ) and right eigenvector u(θ), and the positive root θ* of ρ(θ) = 1.
//!
//! All θ arguments in this module are per lattice step, i.e. they multiply
//! [`ScoreModel::lattice_scores`]. [`SpectralData::theta_star`] converts back
//! to inverse original score units.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{self, ScoreModel};

/// Largest admissible |θ · f| before exponentials are considered overflowing.
pub const EXPONENT_GUARD: f64 = 700.0;
pub const THETA_TOL: f64 = 1e-12;
pub const RHO_TOL: f64 = 1e-10;
pub const FINITE_DIFFERENCE_STEP: f64 = 1e-6;

const PLAIN_POWER_ITERATIONS: usize = 5_000;
const SHIFTED_POWER_ITERATIONS: usize = 200_000;
const EIGEN_REL_TOL: f64 = 1e-14;

pub fn phi_matrix(model: &ScoreModel, theta: f64) -> Result<Matrix> {
    let f = model.lattice_scores();
    let max_abs = f.iter().map(|s| s.abs()).max().unwrap_or(0) as f64;
    if !theta.is_finite() || theta.abs() * max_abs > EXPONENT_GUARD {
        return Err(Error::numeric(
            "phi_matrix",
            format!("theta = {theta} overflows the exponential guard"),
            f64::INFINITY,
        ));
    }
    let p = model.transition();
    let weights: Vec<f64> = f.iter().map(|&s| (theta * s as f64).exp()).collect();
    Ok(Matrix::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] * weights[j]))
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub rho: f64,
    /// Positive right eigenvector normalized to unit sum.
    pub u: Vector,
    /// `max |M u - ρ u|`.
    pub residual: f64,
}

fn power_step(m: &Matrix, u: &Vector, shift: f64) -> (Vector, f64) {
    let mut v = m * u + u * shift;
    let s = v.sum();
    v /= s;
    (v, s - shift)
}

fn eigen_residual(m: &Matrix, u: &Vector, rho: f64) -> f64 {
    linalg::sup_norm((m * u - u * rho).iter().copied())
}

/// Perron root and positive right eigenvector of an irreducible nonnegative
/// matrix by power iteration. Falls back to the shifted matrix `M + ρ̂ I`
/// when plain iteration does not settle (periodic patterns).
pub fn dominant_eigenpair(m: &Matrix) -> Result<Eigenpair> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::Structural("dominant_eigenpair needs a nonempty square matrix".into()));
    }
    if m.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::numeric("dominant_eigenpair", "matrix has negative or non-finite entries", f64::NAN));
    }
    if !linalg::is_irreducible(m) {
        return Err(Error::numeric("dominant_eigenpair", "matrix is reducible", f64::NAN));
    }

    let mut u = Vector::from_element(n, 1.0 / n as f64);
    let mut rho: f64 = 0.0;
    let mut best: Option<Eigenpair> = None;
    let mut shift = 0.0;
    for iter in 0..PLAIN_POWER_ITERATIONS + SHIFTED_POWER_ITERATIONS {
        if iter == PLAIN_POWER_ITERATIONS {
            shift = rho.max(f64::MIN_POSITIVE);
        }
        let (next, next_rho) = power_step(m, &u, shift);
        u = next;
        rho = next_rho;
        let residual = eigen_residual(m, &u, rho);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(Eigenpair { rho, u: u.clone(), residual });
        }
        if residual <= EIGEN_REL_TOL * rho {
            break;
        }
    }
    let best = best.expect("at least one iteration");
    if best.residual > 1e-10 * best.rho.max(1.0) || best.u.iter().any(|&x| x <= 0.0) {
        return Err(Error::numeric("dominant_eigenpair", "power iteration did not converge", best.residual));
    }
    Ok(best)
}

/// Evaluates θ ↦ (ρ(θ), u(θ)) for one model.
#[derive(Debug, Clone)]
pub struct RhoEvaluator {
    model: ScoreModel,
}

impl RhoEvaluator {
    pub fn new(model: &ScoreModel) -> Self {
        Self { model: model.clone() }
    }

    pub fn eval(&self, theta: f64) -> Result<Eigenpair> {
        dominant_eigenpair(&phi_matrix(&self.model, theta)?)
    }

    pub fn rho(&self, theta: f64) -> Result<f64> {
        Ok(self.eval(theta)?.rho)
    }
}

#[derive(Debug, Clone)]
pub struct SpectralDiagnostics {
    pub bracket: (f64, f64),
    pub iterations: usize,
    pub rho_at_root: f64,
    pub eigen_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Root of ρ(θ) = 1 per lattice step.
    pub theta_lattice: f64,
    /// Same root in inverse original score units.
    pub theta_star: f64,
    /// u(θ*), positive with unit sum.
    pub u_star: Vector,
    pub rho: RhoEvaluator,
    pub diagnostics: SpectralDiagnostics,
}

/// Solves ρ(θ*) = 1 for θ* > 0 on h(θ) = log ρ(θ): bracket expansion from
/// θ = 1, then Illinois false-position steps safeguarded by bisection.
pub fn solve_theta_star(model: &ScoreModel) -> Result<SpectralData> {
    let evaluator = RhoEvaluator::new(model);
    let max_abs = model.lattice_scores().iter().map(|s| s.abs()).max().unwrap_or(0) as f64;
    if max_abs == 0.0 {
        return Err(Error::numeric("solve_theta_star", "no root found: all scores are zero", f64::NAN));
    }
    let theta_cap = EXPONENT_GUARD / max_abs;
    let h = |t: f64| -> Result<f64> { Ok(evaluator.rho(t)?.ln()) };

    let no_root = |residual: f64| Error::numeric("solve_theta_star", "no root found (check hypotheses: negative mean score, positive scores reachable)", residual);

    let mut t = 1.0_f64.min(theta_cap);
    let mut ht = h(t)?;
    let (mut lo, mut h_lo, mut hi, mut h_hi);
    if ht > 0.0 {
        hi = t;
        h_hi = ht;
        loop {
            t *= 0.5;
            if t < 1e-300 {
                return Err(no_root(ht));
            }
            ht = h(t)?;
            if ht < 0.0 {
                lo = t;
                h_lo = ht;
                break;
            }
            hi = t;
            h_hi = ht;
        }
    } else {
        lo = t;
        h_lo = ht;
        loop {
            if t >= theta_cap {
                return Err(no_root(ht));
            }
            t = (2.0 * t).min(theta_cap);
            ht = h(t)?;
            if ht > 0.0 {
                hi = t;
                h_hi = ht;
                break;
            }
            lo = t;
            h_lo = ht;
        }
    }
    let bracket = (lo, hi);

    let mut iterations = 0;
    let mut last_side = 0i8;
    while hi - lo > THETA_TOL * hi.max(1.0) && iterations < 500 {
        iterations += 1;
        let width = hi - lo;
        let mut c = lo - h_lo * width / (h_hi - h_lo);
        if !(c > lo && c < hi) || !c.is_finite() {
            c = 0.5 * (lo + hi);
        }
        let hc = h(c)?;
        if hc == 0.0 {
            lo = c;
            hi = c;
            break;
        }
        if hc < 0.0 {
            lo = c;
            h_lo = hc;
            if last_side == -1 {
                h_hi *= 0.5;
            }
            last_side = -1;
        } else {
            hi = c;
            h_hi = hc;
            if last_side == 1 {
                h_lo *= 0.5;
            }
            last_side = 1;
        }
        if hi - lo > 0.5 * width && iterations % 4 == 0 {
            let mid = 0.5 * (lo + hi);
            let hm = h(mid)?;
            if hm < 0.0 {
                lo = mid;
                h_lo = hm;
            } else {
                hi = mid;
                h_hi = hm;
            }
            last_side = 0;
        }
    }

    let theta = 0.5 * (lo + hi);
    let pair = evaluator.eval(theta)?;
    if (pair.rho - 1.0).abs() > RHO_TOL {
        return Err(Error::numeric("solve_theta_star", "root does not satisfy rho = 1", (pair.rho - 1.0).abs()));
    }
    Ok(SpectralData {
        theta_lattice: theta,
        theta_star: theta / model.lattice_step() as f64,
        u_star: pair.u,
        rho: evaluator,
        diagnostics: SpectralDiagnostics {
            bracket,
            iterations,
            rho_at_root: pair.rho,
            eigen_residual: pair.residual,
        },
    })
}

/// Central finite difference of ρ at 0 (in original score units) paired with
/// the stationary mean score. The two agree up to O(h²).
pub fn check_rho_prime_zero(model: &ScoreModel) -> Result<(f64, f64)> {
    let evaluator = RhoEvaluator::new(model);
    let d = model.lattice_step() as f64;
    let h = FINITE_DIFFERENCE_STEP;
    let lhs = (evaluator.rho(h * d)? - evaluator.rho(-h * d)?) / (2.0 * h);
    let rhs = model::mean_score(model)?;
    Ok((lhs, rhs))
}

/// (θ, ρ(θ)) on an evenly spaced grid, θ per lattice step.
pub fn rho_grid(model: &ScoreModel, theta_min: f64, theta_max: f64, points: usize) -> Result<Vec<(f64, f64)>> {
    let evaluator = RhoEvaluator::new(model);
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let t = theta_min + (theta_max - theta_min) * i as f64 / (points - 1) as f64;
            Ok((t, evaluator.rho(t)?))
        })
        .collect()
}
