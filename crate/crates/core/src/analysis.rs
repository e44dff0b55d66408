//! One-stop evaluation of a validated model: spectral data, ladder system and
//! the distribution tables sized automatically for the request.

use serde::Serialize;

use crate::distributions::{
    default_level_max, exact_splus_cdf, kd_constant, kd_mn_approx, mn_cdf_approx, q1_tail, truncation_tail_bound,
    DistributionTable, ExactSPlus, MnOptions, SPlusTail, TailSource,
};
use crate::error::{Error, Result};
use crate::ladder::{LadderSystem, DEFAULT_TOL};
use crate::linalg::Vector;
use crate::model::{stationary_distribution, validate_model, ScoreModel, ValidationReport};
use crate::spectral::{solve_theta_star, SpectralData};

pub struct Analysis {
    pub model: ScoreModel,
    pub validation: ValidationReport,
    pub stationary: Vector,
    pub spectral: SpectralData,
    pub ladders: LadderSystem,
}

#[derive(Debug, Clone, Serialize)]
pub struct MnPoint {
    pub x: f64,
    /// Threshold `log n / θ* + x` in score units.
    pub threshold: f64,
    pub level: i64,
    pub improved: f64,
    pub kd: Option<f64>,
    pub clamped: bool,
    pub monotonized: bool,
    pub below_support: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MnCurve {
    pub n: u64,
    pub options: MnOptions,
    pub points: Vec<MnPoint>,
    pub clamped: usize,
    pub warnings: Vec<String>,
    /// Level of the S⁺ table used and the tail mass it leaves out.
    pub truncation_level: i64,
    pub truncation_tail_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PValue {
    pub n: u64,
    pub observed: i64,
    /// `observed - log n / θ*`
    pub x: f64,
    pub improved: f64,
    pub kd: Option<f64>,
    pub level: i64,
    pub options: MnOptions,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn new(model: ScoreModel) -> Result<Self> {
        Self::with_tol(model, DEFAULT_TOL)
    }

    pub fn with_tol(model: ScoreModel, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol < 1e-3) {
            return Err(Error::Input(format!("tolerance must lie in (0, 1e-3), got {tol}")));
        }
        let validation = validate_model(&model);
        if !validation.passed {
            return Err(validation.into_result().unwrap_err());
        }
        let stationary = stationary_distribution(&model)?;
        let spectral = solve_theta_star(&model)?;
        let ladders = LadderSystem::solve(&model, &spectral, tol)?;
        Ok(Self {
            model,
            validation,
            stationary,
            spectral,
            ladders,
        })
    }

    pub fn splus(&self, level_max: i64) -> Result<ExactSPlus> {
        exact_splus_cdf(&self.model, &self.ladders, level_max)
    }

    pub fn tail_bound(&self, level: i64) -> f64 {
        truncation_tail_bound(&self.spectral, &self.ladders, level)
    }

    /// Q₁ tail on lattice levels `0..=k_max`.
    pub fn q1_tail(&self, k_max: i64, source: TailSource) -> Result<DistributionTable> {
        let exact = self.splus(k_max.max(0) + self.ladders.max_down_step())?;
        let tails = SPlusTail::new(source, &exact, &self.spectral, &self.ladders);
        q1_tail(&self.model, &self.ladders, &tails, k_max)
    }

    pub fn kd_constant(&self) -> Result<f64> {
        kd_constant(&self.model, &self.spectral, &self.ladders)
    }

    /// Improved approximation (and KD baseline where supported) on an x-grid.
    pub fn mn_curve(&self, n: u64, xs: &[f64], options: MnOptions) -> Result<MnCurve> {
        let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let level_max = default_level_max(&self.spectral, &self.ladders, n, x_max);
        let exact = self.splus(level_max)?;
        let tails = SPlusTail::new(options.tail_source, &exact, &self.spectral, &self.ladders);
        let kd_supported = self.kd_constant().is_ok();
        let log_n = (n.max(1) as f64).ln() / self.spectral.theta_star;
        let mut points = Vec::with_capacity(xs.len());
        let mut warnings = Vec::new();
        for &x in xs {
            let approx = mn_cdf_approx(&self.spectral, &self.ladders, &tails, n, x, options)?;
            if approx.below_support {
                warnings.push(format!("x = {x}: threshold below 0, evaluated at level 0"));
            }
            let kd = if kd_supported {
                Some(kd_mn_approx(&self.model, &self.spectral, &self.ladders, x)?)
            } else {
                None
            };
            points.push(MnPoint {
                x,
                threshold: log_n + x,
                level: approx.level,
                improved: approx.probability,
                kd,
                clamped: approx.clamped,
                monotonized: approx.monotonized,
                below_support: approx.below_support,
            });
        }
        let clamped = points.iter().filter(|p| p.clamped).count();
        Ok(MnCurve {
            n,
            options,
            points,
            clamped,
            warnings,
            truncation_level: level_max,
            truncation_tail_bound: self.tail_bound(level_max),
        })
    }

    /// `1 - P(Mₙ ≤ observed)` under both approximations, i.e. the
    /// probability of a local score strictly above the observed one.
    pub fn pvalue(&self, n: u64, observed: i64, options: MnOptions) -> Result<PValue> {
        if observed < 0 {
            return Err(Error::Input(format!("observed local score must be >= 0, got {observed}")));
        }
        let x = observed as f64 - (n.max(1) as f64).ln() / self.spectral.theta_star;
        let curve = self.mn_curve(n, &[x], options)?;
        let point = &curve.points[0];
        Ok(PValue {
            n,
            observed,
            x,
            improved: 1.0 - point.improved,
            kd: point.kd.map(|p| 1.0 - p),
            level: point.level,
            options,
            warnings: curve.warnings,
        })
    }
}
