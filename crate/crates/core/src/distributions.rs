//! Distributions built on the ladder system: the exact cdf of the maximal
//! non-negative partial sum S⁺, its exponential tail, the first-excursion
//! height Q₁, the local score Mₙ, the Karlin–Dembo Gumbel baseline and
//! p-values.
//!
//! Levels are lattice indices internally; tables report them in original
//! score units (`level · d`).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ladder::LadderSystem;
use crate::linalg::Vector;
use crate::model::ScoreModel;
use crate::spectral::SpectralData;

/// Levels added beyond `⌈log n / θ*⌉ + u` when sizing the S⁺ table.
pub const DEFAULT_LEVEL_MARGIN: i64 = 20;
/// Slack on the floor of `log n / θ* + x` so integer thresholds computed in
/// floating point are not pushed one level down.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Statistic {
    SPlus,
    SPlusTail,
    Q1Tail,
    MnCdf,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableMetadata {
    pub model_hash: String,
    /// Largest lattice level held by the table.
    pub truncation_level: i64,
    pub params: BTreeMap<String, String>,
}

/// Per-state values on a lattice grid. `values[state][i]` belongs to
/// `levels[i]` (original score units).
#[derive(Debug, Clone, Serialize)]
pub struct DistributionTable {
    pub statistic: Statistic,
    pub labels: Vec<String>,
    pub levels: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    pub metadata: TableMetadata,
}

impl DistributionTable {
    pub fn value(&self, state: usize, index: usize) -> f64 {
        self.values[state][index]
    }

    /// Weighted mixture over start states, e.g. with the stationary vector.
    pub fn mixture(&self, weights: &Vector) -> Vec<f64> {
        (0..self.levels.len())
            .map(|i| self.values.iter().zip(weights.iter()).map(|(col, w)| w * col[i]).sum())
            .collect()
    }
}

/// Exact law of S⁺ per start state, held both as cdf and as tail
/// `P_α(S⁺ > ℓ)`. The tail comes from its own recursion so it keeps full
/// relative precision far out where `1 - cdf` cancels.
#[derive(Debug, Clone)]
pub struct ExactSPlus {
    pub cdf: DistributionTable,
    pub tail: DistributionTable,
    level_max: i64,
}

impl ExactSPlus {
    pub fn level_max(&self) -> i64 {
        self.level_max
    }

    /// `P_state(S⁺ > level)` for a lattice level; 1 below zero.
    pub fn tail_at(&self, state: usize, level: i64) -> Result<f64> {
        if level < 0 {
            return Ok(1.0);
        }
        if level > self.level_max {
            return Err(Error::Range(format!(
                "S+ table holds levels up to {}, level {level} requested",
                self.level_max
            )));
        }
        Ok(self.tail.values[state][level as usize])
    }

    pub fn cdf_at(&self, state: usize, level: i64) -> Result<f64> {
        if level < 0 {
            return Ok(0.0);
        }
        if level > self.level_max {
            return Err(Error::Range(format!(
                "S+ table holds levels up to {}, level {level} requested",
                self.level_max
            )));
        }
        Ok(self.cdf.values[state][level as usize])
    }
}

fn params(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Exact cdf of S⁺ by the ladder renewal recursion
/// `F_α(0) = 1 - L_α(∞)`, `F_α(ℓ) = 1 - L_α(∞) + Σ_β Σ_{k=1}^{ℓ} L^(k)_αβ F_β(ℓ-k)`,
/// together with the tail recursion `T_α(ℓ) = Σ_β Σ_k L^(k)_αβ T_β(ℓ-k)`,
/// `T_β(m) = 1` for `m < 0`.
pub fn exact_splus_cdf(model: &ScoreModel, ladders: &LadderSystem, level_max: i64) -> Result<ExactSPlus> {
    if level_max < 0 {
        return Err(Error::Input(format!("level_max must be >= 0, got {level_max}")));
    }
    let r = model.num_states();
    let count = level_max as usize + 1;
    let mut cdf = vec![vec![0.0; count]; r];
    let mut tail = vec![vec![0.0; count]; r];
    for level in 0..=level_max {
        let i = level as usize;
        for a in 0..r {
            let mut f = 1.0 - ladders.l_inf[a];
            let mut t = 0.0;
            for (k, lk) in ladders.l.iter() {
                let rest = level - k;
                for b in 0..r {
                    let mass = lk[(a, b)];
                    if mass == 0.0 {
                        continue;
                    }
                    if rest >= 0 {
                        f += mass * cdf[b][rest as usize];
                        t += mass * tail[b][rest as usize];
                    } else {
                        t += mass;
                    }
                }
            }
            cdf[a][i] = f;
            tail[a][i] = t;
        }
    }
    let d = model.lattice_step();
    let levels: Vec<i64> = (0..=level_max).map(|l| l * d).collect();
    let metadata = TableMetadata {
        model_hash: model.hash(),
        truncation_level: level_max,
        params: params(&[("level_max", level_max.to_string())]),
    };
    let labels = model.alphabet().to_vec();
    Ok(ExactSPlus {
        cdf: DistributionTable {
            statistic: Statistic::SPlus,
            labels: labels.clone(),
            levels: levels.clone(),
            values: cdf,
            metadata: metadata.clone(),
        },
        tail: DistributionTable {
            statistic: Statistic::SPlusTail,
            labels,
            levels,
            values: tail,
            metadata,
        },
        level_max,
    })
}

/// `c(∞) · u_α(θ*) · e^{-θ* k d}` per state (k in lattice units).
pub fn splus_tail_asymptotic(spectral: &SpectralData, ladders: &LadderSystem, k: i64) -> Vector {
    let decay = (-spectral.theta_lattice * k as f64).exp();
    spectral.u_star.map(|u| ladders.c_inf * u * decay)
}

/// Upper bound on `P_α(S⁺ > level)` used to report what a table truncated at
/// `level` leaves out (asymptotic tail with a 10% margin).
pub fn truncation_tail_bound(spectral: &SpectralData, ladders: &LadderSystem, level: i64) -> f64 {
    1.1 * splus_tail_asymptotic(spectral, ladders, level).max()
}

/// Where the S⁺ tail probabilities feeding Q₁ and Mₙ come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TailSource {
    #[default]
    Exact,
    Asymptotic,
}

/// Tail lookup abstracting over [`TailSource`].
pub struct SPlusTail<'a> {
    source: TailSource,
    exact: &'a ExactSPlus,
    spectral: &'a SpectralData,
    ladders: &'a LadderSystem,
}

impl<'a> SPlusTail<'a> {
    pub fn new(source: TailSource, exact: &'a ExactSPlus, spectral: &'a SpectralData, ladders: &'a LadderSystem) -> Self {
        Self {
            source,
            exact,
            spectral,
            ladders,
        }
    }

    pub fn at(&self, state: usize, level: i64) -> Result<f64> {
        match self.source {
            TailSource::Exact => self.exact.tail_at(state, level),
            TailSource::Asymptotic if level < 0 => Ok(1.0),
            TailSource::Asymptotic => {
                Ok(self.ladders.c_inf * self.spectral.u_star[state] * (-self.spectral.theta_lattice * level as f64).exp())
            }
        }
    }
}

/// The Q₁ tail approximation
/// `P_α(S⁺ > k) - Σ_{ℓ<0} Σ_β P_β(S⁺ > k - ℓ) Q^(ℓ)_αβ` before clamping.
fn q1_tail_raw(tails: &SPlusTail, ladders: &LadderSystem, state: usize, k: i64) -> Result<f64> {
    let mut value = tails.at(state, k)?;
    for (level, q) in ladders.q.iter() {
        for b in 0..q.ncols() {
            let mass = q[(state, b)];
            if mass != 0.0 {
                value -= mass * tails.at(b, k - level)?;
            }
        }
    }
    Ok(value)
}

/// Approximate `P_α(Q₁ > k)` for `k = 0..=k_max`, clamped to [0, 1].
///
/// The raw approximation need not be monotone at small `k`; each column is
/// replaced by its smallest nonincreasing majorant on the grid, and the number
/// of raised entries is reported as `monotonized`.
pub fn q1_tail(model: &ScoreModel, ladders: &LadderSystem, tails: &SPlusTail, k_max: i64) -> Result<DistributionTable> {
    if k_max < 0 {
        return Err(Error::Input(format!("k_max must be >= 0, got {k_max}")));
    }
    let needed = k_max + ladders.max_down_step();
    if tails.source == TailSource::Exact && needed > tails.exact.level_max() {
        return Err(Error::Range(format!(
            "Q1 tail up to {k_max} needs the S+ table up to {needed}, have {}",
            tails.exact.level_max()
        )));
    }
    let r = model.num_states();
    let mut values = vec![Vec::with_capacity(k_max as usize + 1); r];
    let mut clamped = 0usize;
    for (a, col) in values.iter_mut().enumerate() {
        for k in 0..=k_max {
            let raw = q1_tail_raw(tails, ladders, a, k)?;
            let v = raw.clamp(0.0, 1.0);
            if v != raw {
                clamped += 1;
            }
            col.push(v);
        }
    }
    let mut monotonized = 0usize;
    for col in values.iter_mut() {
        for k in (0..col.len().saturating_sub(1)).rev() {
            if col[k] < col[k + 1] {
                col[k] = col[k + 1];
                monotonized += 1;
            }
        }
    }
    Ok(DistributionTable {
        statistic: Statistic::Q1Tail,
        labels: model.alphabet().to_vec(),
        levels: (0..=k_max).map(|k| k * model.lattice_step()).collect(),
        values,
        metadata: TableMetadata {
            model_hash: model.hash(),
            truncation_level: k_max,
            params: params(&[
                ("k_max", k_max.to_string()),
                ("tail_source", format!("{:?}", tails.source).to_lowercase()),
                ("clamped", clamped.to_string()),
                ("monotonized", monotonized.to_string()),
            ]),
        },
    })
}

/// Which form of the second (correction) exponential factor of the
/// local-score approximation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionPrefactor {
    /// Both factors carry `n / A*`.
    #[default]
    Statement,
    /// Second factor without `n / A*`, as written at the end of the derivation.
    ProofDisplay,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MnOptions {
    pub tail_source: TailSource,
    pub prefactor: CorrectionPrefactor,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MnApproximation {
    pub probability: f64,
    /// Lattice level `⌊log n / θ* + x⌋` actually used.
    pub level: i64,
    pub first_factor: f64,
    pub second_factor: f64,
    pub clamped: bool,
    pub monotonized: bool,
    /// The floor argument was negative and level 0 was used instead.
    pub below_support: bool,
}

/// Lattice level `⌊log n / θ* + x⌋` (x in original score units).
pub fn mn_level(spectral: &SpectralData, n: u64, x: f64, lattice_step: i64) -> i64 {
    ((n as f64).ln() / spectral.theta_lattice + x / lattice_step as f64 + FLOOR_SLACK).floor() as i64
}

/// Approximation of `P(Mₙ ≤ log n / θ* + x)`; independent of the start state.
///
/// The raw product of exponentials can dip as the level grows when the ladder
/// tails are far from geometric; the value returned is the largest
/// nondecreasing minorant over the levels the S⁺ table covers, and
/// `monotonized` records when it differs from the raw value at `level`.
pub fn mn_cdf_approx(
    spectral: &SpectralData,
    ladders: &LadderSystem,
    tails: &SPlusTail,
    n: u64,
    x: f64,
    options: MnOptions,
) -> Result<MnApproximation> {
    if n < 2 {
        return Err(Error::Input(format!("sequence length n must be >= 2, got {n}")));
    }
    if !x.is_finite() {
        return Err(Error::Input(format!("x must be finite, got {x}")));
    }
    let mut level = mn_level(spectral, n, x, ladders.lattice_step);
    let below_support = level < 0;
    if below_support {
        level = 0;
    }
    let scale = n as f64 / ladders.a_star;
    let second_scale = match options.prefactor {
        CorrectionPrefactor::Statement => scale,
        CorrectionPrefactor::ProofDisplay => 1.0,
    };
    let (first_factor, second_factor) = mn_factors(ladders, tails, level, scale, second_scale)?;
    let raw = first_factor * second_factor;
    let mut envelope = raw;
    let last = tails.exact.level_max() - ladders.max_down_step();
    for j in level + 1..=last {
        let (f, g) = mn_factors(ladders, tails, j, scale, second_scale)?;
        envelope = envelope.min(f * g);
    }
    let probability = envelope.clamp(0.0, 1.0);
    Ok(MnApproximation {
        probability,
        level,
        first_factor,
        second_factor,
        clamped: probability != envelope,
        monotonized: envelope != raw,
        below_support,
    })
}

fn mn_factors(ladders: &LadderSystem, tails: &SPlusTail, level: i64, scale: f64, second_scale: f64) -> Result<(f64, f64)> {
    let z = &ladders.z;
    let r = z.len();
    let mut first = 0.0;
    for b in 0..r {
        if z[b] != 0.0 {
            first += z[b] * tails.at(b, level)?;
        }
    }
    let mut second = 0.0;
    for (k, q) in ladders.q.iter() {
        for g in 0..r {
            let weight: f64 = (0..r).map(|b| z[b] * q[(b, g)]).sum();
            if weight != 0.0 {
                second += tails.at(g, level - k)? * weight;
            }
        }
    }
    Ok(((-scale * first).exp(), (second_scale * second).exp()))
}

/// Gumbel scale constant of the Karlin–Dembo limit for scores in {-1, 0, 1}:
/// `K* = (e^{-θ*} - e^{-2θ*}) · E[-f(A)] · Σ z_γ u_γ(θ*) · Σ w_γ / u_γ(θ*)`.
pub fn kd_constant(model: &ScoreModel, spectral: &SpectralData, ladders: &LadderSystem) -> Result<f64> {
    if model.lattice_scores().iter().any(|s| s.abs() > 1) {
        return Err(Error::Unsupported(
            "Karlin-Dembo baseline is implemented for scores in {-1, 0, 1} only".into(),
        ));
    }
    let theta = spectral.theta_lattice;
    let u = &spectral.u_star;
    let neg_mean = -ladders.mean_score / ladders.lattice_step as f64;
    let zu: f64 = ladders.z.dot(u);
    let wu: f64 = ladders.w.iter().zip(u.iter()).map(|(w, u)| w / u).sum();
    Ok(((-theta).exp() - (-2.0 * theta).exp()) * neg_mean * zu * wu)
}

/// `exp(-K* e^{-θ* x})`; does not depend on n.
pub fn kd_mn_approx(model: &ScoreModel, spectral: &SpectralData, ladders: &LadderSystem, x: f64) -> Result<f64> {
    let k_star = kd_constant(model, spectral, ladders)?;
    Ok((-k_star * (-spectral.theta_star * x).exp()).exp())
}

/// Level of the S⁺ table needed for local-score evaluations up to `x_max`.
pub fn default_level_max(spectral: &SpectralData, ladders: &LadderSystem, n: u64, x_max: f64) -> i64 {
    let base = ((n.max(2) as f64).ln() / spectral.theta_lattice + x_max.max(0.0) / ladders.lattice_step as f64).ceil() as i64;
    base.max(0) + ladders.max_down_step() + DEFAULT_LEVEL_MARGIN
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ladder::DEFAULT_TOL;
    use crate::spectral::solve_theta_star;

    struct Setup {
        model: ScoreModel,
        spectral: SpectralData,
        ladders: LadderSystem,
        exact: ExactSPlus,
    }

    fn setup(model: ScoreModel, level_max: i64) -> Setup {
        let spectral = solve_theta_star(&model).unwrap();
        let ladders = LadderSystem::solve(&model, &spectral, DEFAULT_TOL).unwrap();
        let exact = exact_splus_cdf(&model, &ladders, level_max).unwrap();
        Setup {
            model,
            spectral,
            ladders,
            exact,
        }
    }

    #[test]
    fn iid_splus_closed_form() {
        let s = setup(fixtures::iid_pm1(), 60);
        for a in 0..2 {
            for l in 0..=60 {
                let exact_tail = (3.0f64 / 7.0).powi(l as i32 + 1);
                assert!((s.exact.cdf_at(a, l).unwrap() - (1.0 - exact_tail)).abs() < 1e-10);
                assert!((s.exact.tail_at(a, l).unwrap() / exact_tail - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn level_zero_table_is_defect() {
        let s = setup(fixtures::dna(), 0);
        for a in 0..4 {
            assert_eq!(s.exact.cdf_at(a, 0).unwrap(), 1.0 - s.ladders.l_inf[a]);
        }
        assert!(matches!(s.exact.cdf_at(0, 1), Err(Error::Range(_))));
    }

    #[test]
    fn cdf_and_tail_recursions_agree_and_are_monotone() {
        let s = setup(fixtures::dna(), 80);
        for a in 0..4 {
            let cdf = &s.exact.cdf.values[a];
            let tail = &s.exact.tail.values[a];
            for l in 0..cdf.len() {
                assert!((cdf[l] + tail[l] - 1.0).abs() < 1e-13);
                assert!((0.0..=1.0).contains(&cdf[l]));
                if l > 0 {
                    assert!(cdf[l] >= cdf[l - 1]);
                }
            }
        }
    }

    #[test]
    fn asymptotic_tail_iid_is_exact() {
        let s = setup(fixtures::iid_pm1(), 30);
        for k in [0, 1, 5, 30] {
            let asym = splus_tail_asymptotic(&s.spectral, &s.ladders, k);
            let exact = (3.0f64 / 7.0).powi(k as i32 + 1);
            assert!((asym[0] - exact).abs() < 1e-10 && (asym[1] - exact).abs() < 1e-10);
        }
        let at0 = splus_tail_asymptotic(&s.spectral, &s.ladders, 0);
        assert!((at0[1] - s.ladders.c_inf * s.spectral.u_star[1]).abs() < 1e-15);
    }

    #[test]
    fn iid_q1_closed_form_and_bound() {
        let s = setup(fixtures::iid_pm1(), 40);
        let tails = SPlusTail::new(TailSource::Exact, &s.exact, &s.spectral, &s.ladders);
        let t = q1_tail(&s.model, &s.ladders, &tails, 30).unwrap();
        for a in 0..2 {
            for k in 0..=30usize {
                let expect = 4.0 / 7.0 * (3.0f64 / 7.0).powi(k as i32 + 1);
                assert!((t.values[a][k] - expect).abs() < 1e-10);
                assert!(t.values[a][k] <= s.exact.tail.values[a][k] + 1e-15);
            }
        }
        assert!(matches!(q1_tail(&s.model, &s.ladders, &tails, 40), Err(Error::Range(_))));
    }

    #[test]
    fn dna_q1_bounded_by_splus_and_decreasing() {
        let s = setup(fixtures::dna(), 60);
        let tails = SPlusTail::new(TailSource::Exact, &s.exact, &s.spectral, &s.ladders);
        let t = q1_tail(&s.model, &s.ladders, &tails, 50).unwrap();
        for a in 0..4 {
            for k in 0..=50usize {
                assert!(t.values[a][k] <= s.exact.tail.values[a][k] + 1e-15);
                if k > 0 {
                    assert!(t.values[a][k] <= t.values[a][k - 1]);
                }
            }
            assert!(t.values[a][50] < 1e-5);
        }
    }

    #[test]
    fn mn_monotone_in_x_and_limits() {
        let s = setup(fixtures::dna(), 200);
        let tails = SPlusTail::new(TailSource::Exact, &s.exact, &s.spectral, &s.ladders);
        let mut prev = 0.0;
        for i in 0..=60 {
            let x = -15.0 + 0.5 * i as f64;
            let p = mn_cdf_approx(&s.spectral, &s.ladders, &tails, 100, x, MnOptions::default()).unwrap();
            assert!(p.probability >= prev - 1e-15);
            prev = p.probability;
        }
        let far = mn_cdf_approx(&s.spectral, &s.ladders, &tails, 100, 150.0, MnOptions::default()).unwrap();
        assert!(far.probability > 1.0 - 1e-12);
        let deep = mn_cdf_approx(&s.spectral, &s.ladders, &tails, 100, -100.0, MnOptions::default()).unwrap();
        assert!(deep.below_support && deep.level == 0);
        assert!(mn_cdf_approx(&s.spectral, &s.ladders, &tails, 1, 0.0, MnOptions::default()).is_err());
    }

    #[test]
    fn proof_display_variant_differs_only_in_second_factor() {
        let s = setup(fixtures::dna(), 200);
        let tails = SPlusTail::new(TailSource::Exact, &s.exact, &s.spectral, &s.ladders);
        let a = mn_cdf_approx(&s.spectral, &s.ladders, &tails, 100, -3.0, MnOptions::default()).unwrap();
        let b = mn_cdf_approx(
            &s.spectral,
            &s.ladders,
            &tails,
            100,
            -3.0,
            MnOptions {
                prefactor: CorrectionPrefactor::ProofDisplay,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.first_factor, b.first_factor);
        assert!(a.second_factor > b.second_factor);
    }

    #[test]
    fn kd_constant_iid() {
        let s = setup(fixtures::iid_pm1(), 10);
        let k = kd_constant(&s.model, &s.spectral, &s.ladders).unwrap();
        assert!((k - 24.0 / 245.0).abs() < 1e-12);
        assert!(kd_mn_approx(&s.model, &s.spectral, &s.ladders, 80.0).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn kd_rejects_wide_scores() {
        let m = ScoreModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0.5, 0.3, 0.2]; 3],
            vec![-2, 1, 2],
        )
        .unwrap();
        let s = setup(m, 10);
        assert!(matches!(kd_constant(&s.model, &s.spectral, &s.ladders), Err(Error::Unsupported(_))));
    }

    #[test]
    fn asymptotic_tail_source_close_to_exact_far_out() {
        let s = setup(fixtures::dna(), 80);
        let exact = SPlusTail::new(TailSource::Exact, &s.exact, &s.spectral, &s.ladders);
        let asym = SPlusTail::new(TailSource::Asymptotic, &s.exact, &s.spectral, &s.ladders);
        for a in 0..4 {
            let e = exact.at(a, 60).unwrap();
            let g = asym.at(a, 60).unwrap();
            assert!((e / g - 1.0).abs() < 1e-3);
        }
    }
}
