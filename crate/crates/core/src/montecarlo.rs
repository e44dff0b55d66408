//! Seeded Monte Carlo oracle: Markov paths, pathwise statistics (S⁺ on a
//! horizon, Q₁, Mₙ by the Lindley recursion, ladder epochs) and empirical
//! distributions with binomial standard errors.
//!
//! Replicate `i` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `i`, so every replicate is a pure function of `(seed, i)` and the
//! aggregated counts do not depend on how rayon schedules the work.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{stationary_distribution, ScoreModel};

pub const GENERATOR: &str = "rand_chacha::ChaCha8Rng; seed_from_u64(seed), set_stream(replicate index)";
pub const DEFAULT_SAFETY_HORIZON: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "state")]
pub enum StartMode {
    State(usize),
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimStatistic {
    SPlus,
    Q1,
    Mn,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationConfig {
    pub model_hash: String,
    pub statistic: SimStatistic,
    /// Horizon n: steps for S⁺ and Mₙ, unused for Q₁.
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub start: StartMode,
    /// Step cap for a single Q₁ excursion.
    pub safety_horizon: u64,
    /// Worker threads; `None` uses the global rayon pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SimulationConfig {
    pub fn new(model: &ScoreModel, statistic: SimStatistic, n: usize, replicates: usize, seed: u64, start: StartMode) -> Self {
        Self {
            model_hash: model.hash(),
            statistic,
            n,
            replicates,
            seed,
            start,
            safety_horizon: DEFAULT_SAFETY_HORIZON,
            threads: None,
        }
    }

    fn check(&self, model: &ScoreModel, expected: SimStatistic) -> Result<()> {
        if self.statistic != expected {
            return Err(Error::Input(format!(
                "simulation config is for {:?}, {:?} requested",
                self.statistic, expected
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Input("replicates must be >= 1".into()));
        }
        if self.n == 0 && expected != SimStatistic::Q1 {
            return Err(Error::Input("horizon n must be >= 1".into()));
        }
        if let StartMode::State(s) = self.start {
            if s >= model.num_states() {
                return Err(Error::Input(format!("start state {s} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimate {
    /// `P(X ≤ level)`
    Cdf,
    /// `P(X > level)`
    Tail,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub estimate: Estimate,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Replicates that contributed.
    pub replicates: usize,
    /// Replicates dropped at the safety horizon.
    pub discarded: usize,
    /// Outcome histogram (original score units).
    pub histogram: BTreeMap<i64, u64>,
    pub config: SimulationConfig,
    pub generator: &'static str,
    pub wall_time_secs: f64,
}

impl SimulationReport {
    pub fn cdf_at(&self, threshold: f64) -> f64 {
        let below: u64 = self.histogram.range(..=threshold.floor() as i64).map(|(_, c)| c).sum();
        below as f64 / self.replicates as f64
    }
}

pub fn standard_error(p: f64, replicates: usize) -> f64 {
    (p * (1.0 - p) / replicates as f64).sqrt()
}

/// Inverse-cdf sampler over the rows of P and over π.
#[derive(Debug, Clone)]
pub struct Sampler {
    rows: Vec<Vec<f64>>,
    initial: Vec<f64>,
    scores: Vec<i64>,
}

/// Running sums with every entry from the last positive probability on set to
/// infinity, so round-off in the row sum never selects a zero-probability state.
fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let last_positive = probs.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    for c in out.iter_mut().skip(last_positive) {
        *c = f64::INFINITY;
    }
    out
}

fn pick(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

impl Sampler {
    pub fn new(model: &ScoreModel) -> Result<Self> {
        let p = model.transition();
        let rows = (0..model.num_states())
            .map(|i| cumulative(&p.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let pi = stationary_distribution(model)?;
        Ok(Self {
            rows,
            initial: cumulative(pi.as_slice()),
            scores: model.scores().to_vec(),
        })
    }

    pub fn score(&self, state: usize) -> i64 {
        self.scores[state]
    }

    pub fn initial<R: Rng>(&self, start: StartMode, rng: &mut R) -> usize {
        match start {
            StartMode::State(s) => s,
            StartMode::Stationary => pick(&self.initial, rng.random::<f64>()),
        }
    }

    pub fn step<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        pick(&self.rows[state], rng.random::<f64>())
    }
}

/// Generator for replicate `index` under master `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// States `A_0, …, A_n`.
pub fn simulate_path(model: &ScoreModel, n: usize, seed: u64, start: StartMode) -> Result<Vec<usize>> {
    let sampler = Sampler::new(model)?;
    let mut rng = replicate_rng(seed, 0);
    Ok(path_with(&sampler, n, start, &mut rng))
}

pub fn path_with<R: Rng>(sampler: &Sampler, n: usize, start: StartMode, rng: &mut R) -> Vec<usize> {
    let mut path = Vec::with_capacity(n + 1);
    let mut state = sampler.initial(start, rng);
    path.push(state);
    for _ in 0..n {
        state = sampler.step(state, rng);
        path.push(state);
    }
    path
}

/// Mₙ of the scores `f(A_1), …, f(A_n)` of a path `A_0, …, A_n` via
/// `W_{k+1} = max(W_k + f(A_{k+1}), 0)`.
pub fn lindley_local_score(model: &ScoreModel, path: &[usize]) -> i64 {
    lindley(path.iter().skip(1).map(|&s| model.scores()[s]))
}

pub fn lindley(scores: impl IntoIterator<Item = i64>) -> i64 {
    let mut w = 0i64;
    let mut best = 0i64;
    for x in scores {
        w = (w + x).max(0);
        best = best.max(w);
    }
    best
}

/// `max(0, max_{k≤n} S_k)` over a horizon of n steps.
fn splus_replicate<R: Rng>(sampler: &Sampler, n: usize, start: StartMode, rng: &mut R) -> i64 {
    let mut state = sampler.initial(start, rng);
    let mut s = 0i64;
    let mut best = 0i64;
    for _ in 0..n {
        state = sampler.step(state, rng);
        s += sampler.score(state);
        best = best.max(s);
    }
    best
}

fn mn_replicate<R: Rng>(sampler: &Sampler, n: usize, start: StartMode, rng: &mut R) -> i64 {
    let mut state = sampler.initial(start, rng);
    let mut w = 0i64;
    let mut best = 0i64;
    for _ in 0..n {
        state = sampler.step(state, rng);
        w = (w + sampler.score(state)).max(0);
        best = best.max(w);
    }
    best
}

/// Outcome of the walk up to its first strict descent below 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstDescent {
    /// Running maximum of S before σ⁻ (Q₁).
    pub height: i64,
    /// `S_{σ⁻}` (original units, negative).
    pub level: i64,
    /// `A_{σ⁻}`.
    pub state: usize,
    pub steps: u64,
}

/// `None` if σ⁻ exceeds `horizon` steps.
pub fn first_descent<R: Rng>(sampler: &Sampler, start: StartMode, horizon: u64, rng: &mut R) -> Option<FirstDescent> {
    let mut state = sampler.initial(start, rng);
    let mut s = 0i64;
    let mut best = 0i64;
    for step in 1..=horizon {
        state = sampler.step(state, rng);
        s += sampler.score(state);
        if s < 0 {
            return Some(FirstDescent {
                height: best,
                level: s,
                state,
                steps: step,
            });
        }
        best = best.max(s);
    }
    None
}

/// `Some((S_{σ⁺}, A_{σ⁺}))` if the walk rises above 0 within `horizon` steps.
pub fn first_ascent<R: Rng>(sampler: &Sampler, start: StartMode, horizon: u64, rng: &mut R) -> Option<(i64, usize)> {
    let mut state = sampler.initial(start, rng);
    let mut s = 0i64;
    for _ in 0..horizon {
        state = sampler.step(state, rng);
        s += sampler.score(state);
        if s > 0 {
            return Some((s, state));
        }
    }
    None
}

/// Runs `f` on every replicate index in parallel, keeping index order.
pub fn run_replicates<T, F>(replicates: usize, seed: u64, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync + Send,
{
    let work = || {
        (0..replicates as u64)
            .into_par_iter()
            .map(|i| f(&mut replicate_rng(seed, i)))
            .collect::<Vec<T>>()
    };
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Input(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

fn histogram(outcomes: impl IntoIterator<Item = i64>) -> BTreeMap<i64, u64> {
    let mut h = BTreeMap::new();
    for x in outcomes {
        *h.entry(x).or_insert(0) += 1;
    }
    h
}

fn report(
    estimate: Estimate,
    levels: Vec<f64>,
    hist: BTreeMap<i64, u64>,
    discarded: usize,
    config: &SimulationConfig,
    started: Instant,
) -> Result<SimulationReport> {
    let used: u64 = hist.values().sum();
    if used == 0 {
        return Err(Error::numeric(
            "montecarlo",
            "every replicate hit the safety horizon",
            discarded as f64,
        ));
    }
    let values: Vec<f64> = levels
        .iter()
        .map(|&t| {
            let below: u64 = hist.range(..=t.floor() as i64).map(|(_, c)| c).sum();
            let cdf = below as f64 / used as f64;
            match estimate {
                Estimate::Cdf => cdf,
                Estimate::Tail => (used - below) as f64 / used as f64,
            }
        })
        .collect();
    let standard_errors = values.iter().map(|&p| standard_error(p, used as usize)).collect();
    Ok(SimulationReport {
        estimate,
        levels,
        values,
        standard_errors,
        replicates: used as usize,
        discarded,
        histogram: hist,
        config: config.clone(),
        generator: GENERATOR,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Empirical cdf of S⁺ (truncated at horizon n) at the given levels.
pub fn empirical_splus(model: &ScoreModel, config: &SimulationConfig, levels: &[i64]) -> Result<SimulationReport> {
    config.check(model, SimStatistic::SPlus)?;
    let started = Instant::now();
    let sampler = Sampler::new(model)?;
    let outcomes = run_replicates(config.replicates, config.seed, config.threads, |rng| {
        splus_replicate(&sampler, config.n, config.start, rng)
    })?;
    let levels = levels.iter().map(|&l| l as f64).collect();
    report(Estimate::Cdf, levels, histogram(outcomes), 0, config, started)
}

/// Empirical tail `P(Q₁ > k)` at the given levels.
pub fn empirical_q1(model: &ScoreModel, config: &SimulationConfig, levels: &[i64]) -> Result<SimulationReport> {
    config.check(model, SimStatistic::Q1)?;
    let started = Instant::now();
    let sampler = Sampler::new(model)?;
    let outcomes = run_replicates(config.replicates, config.seed, config.threads, |rng| {
        first_descent(&sampler, config.start, config.safety_horizon, rng).map(|d| d.height)
    })?;
    let discarded = outcomes.iter().filter(|o| o.is_none()).count();
    let levels = levels.iter().map(|&l| l as f64).collect();
    report(Estimate::Tail, levels, histogram(outcomes.into_iter().flatten()), discarded, config, started)
}

/// Empirical cdf `P(Mₙ ≤ t)` at the given real thresholds.
pub fn empirical_mn(model: &ScoreModel, config: &SimulationConfig, thresholds: &[f64]) -> Result<SimulationReport> {
    config.check(model, SimStatistic::Mn)?;
    let started = Instant::now();
    let sampler = Sampler::new(model)?;
    let outcomes = run_replicates(config.replicates, config.seed, config.threads, |rng| {
        mn_replicate(&sampler, config.n, config.start, rng)
    })?;
    report(Estimate::Cdf, thresholds.to_vec(), histogram(outcomes), 0, config, started)
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderEpochEstimate {
    pub m_count: usize,
    /// `K_m / m`
    pub mean_epoch: f64,
    pub steps: u64,
    pub seed: u64,
    pub generator: &'static str,
}

/// `K_m / m` from one path, `K_i` being the successive strict new minima of S.
pub fn empirical_ladder_epochs(model: &ScoreModel, m_count: usize, seed: u64, start: StartMode) -> Result<LadderEpochEstimate> {
    if m_count == 0 {
        return Err(Error::Input("m_count must be >= 1".into()));
    }
    let sampler = Sampler::new(model)?;
    let mut rng = replicate_rng(seed, 0);
    let mut state = sampler.initial(start, &mut rng);
    let mut s = 0i64;
    let mut minimum = 0i64;
    let mut found = 0usize;
    let mut steps = 0u64;
    let cap = DEFAULT_SAFETY_HORIZON.saturating_mul(m_count as u64);
    while found < m_count {
        if steps >= cap {
            return Err(Error::numeric("empirical_ladder_epochs", "safety horizon exceeded", steps as f64));
        }
        state = sampler.step(state, &mut rng);
        s += sampler.score(state);
        steps += 1;
        if s < minimum {
            minimum = s;
            found += 1;
        }
    }
    Ok(LadderEpochEstimate {
        m_count,
        mean_epoch: steps as f64 / m_count as f64,
        steps,
        seed,
        generator: GENERATOR,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn brute_force(scores: &[i64]) -> i64 {
        let mut s = vec![0i64];
        for x in scores {
            s.push(s.last().unwrap() + x);
        }
        let mut best = 0;
        for k in 0..s.len() {
            for l in k..s.len() {
                best = best.max(s[l] - s[k]);
            }
        }
        best
    }

    #[test]
    fn one_state_chain_is_constant() {
        let m = ScoreModel::new(vec!["x".into()], vec![vec![1.0]], vec![-1]).unwrap();
        let path = simulate_path(&m, 20, 7, StartMode::Stationary).unwrap();
        assert_eq!(path, vec![0; 21]);
        assert_eq!(lindley_local_score(&m, &path), 0);
    }

    #[test]
    fn same_seed_same_path() {
        let m = fixtures::dna();
        let a = simulate_path(&m, 500, 42, StartMode::State(0)).unwrap();
        let b = simulate_path(&m, 500, 42, StartMode::State(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], 0);
        assert_ne!(a, simulate_path(&m, 500, 43, StartMode::State(0)).unwrap());
    }

    #[test]
    fn transition_frequencies_match() {
        let m = fixtures::dna();
        let path = simulate_path(&m, 1_000_000, 1, StartMode::Stationary).unwrap();
        let mut counts = vec![vec![0u64; 4]; 4];
        for w in path.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for i in 0..4 {
            let total: u64 = counts[i].iter().sum();
            for j in 0..4 {
                let f = counts[i][j] as f64 / total as f64;
                assert!((f - m.transition()[(i, j)]).abs() < 0.005);
            }
        }
    }

    #[test]
    fn lindley_examples() {
        assert_eq!(lindley([-1, -2, -1]), 0);
        assert_eq!(lindley([1, 1, -1, 1]), 2);
        let mut rng = replicate_rng(9, 0);
        for _ in 0..10_000 {
            let len = rng.random_range(1..=12);
            let xs: Vec<i64> = (0..len).map(|_| rng.random_range(-3..=3)).collect();
            assert_eq!(lindley(xs.iter().copied()), brute_force(&xs));
        }
    }

    #[test]
    fn zero_probability_transitions_never_drawn() {
        let m = ScoreModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.0, 0.5], vec![1.0, 0.0, 0.0]],
            vec![-1, 1, -1],
        )
        .unwrap();
        let path = simulate_path(&m, 100_000, 3, StartMode::State(0)).unwrap();
        for w in path.windows(2) {
            assert!(m.transition()[(w[0], w[1])] > 0.0);
        }
    }

    #[test]
    fn iid_splus_within_three_se() {
        let m = fixtures::iid_pm1();
        let cfg = SimulationConfig::new(&m, SimStatistic::SPlus, 300, 100_000, 11, StartMode::State(0));
        let levels: Vec<i64> = (0..=15).collect();
        let r = empirical_splus(&m, &cfg, &levels).unwrap();
        let mut ok = 0;
        for (i, &l) in levels.iter().enumerate() {
            let exact = 1.0 - (3.0f64 / 7.0).powi(l as i32 + 1);
            if (r.values[i] - exact).abs() <= 3.0 * standard_error(exact, r.replicates) {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.95 * levels.len() as f64);
        for w in r.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn single_replicate_is_step_function() {
        let m = fixtures::dna();
        let cfg = SimulationConfig::new(&m, SimStatistic::SPlus, 50, 1, 5, StartMode::State(0));
        let r = empirical_splus(&m, &cfg, &(0..20).collect::<Vec<_>>()).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(r.standard_errors.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn iid_q1_within_three_se() {
        let m = fixtures::iid_pm1();
        let cfg = SimulationConfig::new(&m, SimStatistic::Q1, 0, 100_000, 12, StartMode::State(0));
        let levels: Vec<i64> = (0..=8).collect();
        let r = empirical_q1(&m, &cfg, &levels).unwrap();
        assert_eq!(r.discarded, 0);
        let mut ok = 0;
        for (i, &k) in levels.iter().enumerate() {
            // gambler's ruin: reach k+1 before -1
            let ratio = 7.0f64 / 3.0;
            let exact = (ratio - 1.0) / (ratio.powi(k as i32 + 2) - 1.0);
            if (r.values[i] - exact).abs() <= 3.0 * standard_error(exact, r.replicates) {
                ok += 1;
            }
        }
        assert!(ok >= 8);
    }

    #[test]
    fn huge_negative_drift_gives_zero_q1() {
        let m = ScoreModel::new(vec!["a".into(), "b".into()], vec![vec![0.99, 0.01]; 2], vec![-5, 1]).unwrap();
        let cfg = SimulationConfig::new(&m, SimStatistic::Q1, 0, 10_000, 2, StartMode::State(0));
        let r = empirical_q1(&m, &cfg, &[0]).unwrap();
        assert!(r.values[0] < 0.02);
    }

    #[test]
    fn safety_horizon_discards() {
        let m = fixtures::iid_pm1();
        let mut cfg = SimulationConfig::new(&m, SimStatistic::Q1, 0, 2_000, 2, StartMode::State(0));
        cfg.safety_horizon = 1;
        let r = empirical_q1(&m, &cfg, &[0]).unwrap();
        assert!(r.discarded > 0 && r.discarded + r.replicates == 2_000);
    }

    #[test]
    fn mn_far_right_is_one() {
        let m = fixtures::dna();
        let cfg = SimulationConfig::new(&m, SimStatistic::Mn, 100, 2_000, 4, StartMode::Stationary);
        let r = empirical_mn(&m, &cfg, &[1000.0]).unwrap();
        assert_eq!(r.values[0], 1.0);
    }

    #[test]
    fn iid_ladder_epochs_near_a_star() {
        let m = fixtures::iid_pm1();
        // sd(σ⁻) ≈ 3.6 here, so 1% needs m well above 10⁴.
        let e = empirical_ladder_epochs(&m, 100_000, 8, StartMode::State(0)).unwrap();
        assert!((e.mean_epoch / 2.5 - 1.0).abs() < 0.01, "{}", e.mean_epoch);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let m = fixtures::dna();
        let mut cfg = SimulationConfig::new(&m, SimStatistic::Mn, 100, 3_000, 77, StartMode::Stationary);
        cfg.threads = Some(1);
        let a = empirical_mn(&m, &cfg, &[5.0, 8.0]).unwrap();
        cfg.threads = Some(3);
        let b = empirical_mn(&m, &cfg, &[5.0, 8.0]).unwrap();
        assert_eq!(a.histogram, b.histogram);
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn config_is_checked() {
        let m = fixtures::dna();
        let cfg = SimulationConfig::new(&m, SimStatistic::Mn, 100, 0, 1, StartMode::Stationary);
        assert!(empirical_mn(&m, &cfg, &[1.0]).is_err());
        let cfg = SimulationConfig::new(&m, SimStatistic::Mn, 100, 10, 1, StartMode::State(9));
        assert!(empirical_mn(&m, &cfg, &[1.0]).is_err());
        let cfg = SimulationConfig::new(&m, SimStatistic::Q1, 100, 10, 1, StartMode::State(0));
        assert!(empirical_mn(&m, &cfg, &[1.0]).is_err());
    }
}
