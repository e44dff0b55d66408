//! First-descent and first-ascent ladder matrices and the constants built
//! from them.
//!
//! `Q^(ℓ)[a][b] = P_a(S_σ⁻ = ℓ, A_σ⁻ = b)` for ℓ in [-u, -1] and
//! `L^(ℓ)[a][b] = P_a(S_σ⁺ = ℓ, σ⁺ < ∞, A_σ⁺ = b)` for ℓ in [1, v] (lattice
//! units). Both families solve polynomial matrix systems obtained by
//! conditioning on the first step; the minimal nonnegative solution is reached
//! by successive substitution from the zero family.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{self, ScoreModel, StatePartition};
use crate::spectral::SpectralData;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 1_000_000;
/// Row sums of G(∞) must be 1 within this bound or the system is rejected.
pub const G_ROW_SUM_REJECT: f64 = 1e-6;
pub const INVARIANT_TOL: f64 = 1e-10;
/// Relative disagreement between the two c(∞) formulas that is reported as
/// an internal inconsistency.
pub const C_INF_REJECT: f64 = 1e-8;

/// The split `P = Σ_j P^(j)` with `P^(j)[a][b] = p_ab` if `f(b) = j`, else 0.
#[derive(Debug, Clone)]
pub struct ScoreSplit {
    min: i64,
    mats: Vec<Matrix>,
}

impl ScoreSplit {
    pub fn min_score(&self) -> i64 {
        self.min
    }

    pub fn max_score(&self) -> i64 {
        self.min + self.mats.len() as i64 - 1
    }

    /// `P^(j)`, or `None` outside `[-u, v]`.
    pub fn get(&self, j: i64) -> Option<&Matrix> {
        if j < self.min {
            return None;
        }
        self.mats.get((j - self.min) as usize)
    }

    fn at(&self, j: i64) -> &Matrix {
        self.get(j).expect("score within split range")
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Matrix)> {
        self.mats.iter().enumerate().map(move |(i, m)| (self.min + i as i64, m))
    }
}

pub fn score_split(model: &ScoreModel) -> ScoreSplit {
    let f = model.lattice_scores();
    let min = -model.max_down_step();
    let max = model.max_up_step();
    let p = model.transition();
    let r = model.num_states();
    let mats = (min..=max)
        .map(|j| Matrix::from_fn(r, r, |a, b| if f[b] == j { p[(a, b)] } else { 0.0 }))
        .collect();
    ScoreSplit { min, mats }
}

/// All step-magnitude tuples `(a_1, …, a_s)` with `1 ≤ a_i ≤ max_step`,
/// proper prefix sums `≤ gap` and total `gap + overshoot`.
///
/// For the descent system, a walk at height `j > 0` that descends by ladder
/// jumps of sizes `a_i` first drops below zero exactly at level `-overshoot`;
/// the ascent system is the mirror image.
pub fn ladder_tuples(max_step: i64, gap: i64, overshoot: i64) -> Vec<Vec<i64>> {
    fn walk(max_step: i64, gap: i64, target: i64, sum: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        for a in 1..=max_step {
            let next = sum + a;
            prefix.push(a);
            if next == target {
                out.push(prefix.clone());
            } else if next <= gap {
                walk(max_step, gap, target, next, prefix, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if max_step >= 1 && gap >= 0 && (1..=max_step).contains(&overshoot) {
        walk(max_step, gap, gap + overshoot, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// One polynomial term `P^(driver) · ∏ X^(factors[i])` contributing to `X^(target)`.
#[derive(Debug, Clone)]
struct Term {
    driver: i64,
    target: i64,
    factors: Vec<i64>,
}

/// Which of the two mirror-image systems a solver handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `Q^(ℓ)`, ℓ in [-u, -1].
    Descent,
    /// `L^(ℓ)`, ℓ in [1, v].
    Ascent,
}

/// A ladder family indexed by level: `mats[i]` holds level `levels()[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderFamily {
    first: i64,
    mats: Vec<Matrix>,
}

impl LadderFamily {
    fn zeros(first: i64, count: usize, r: usize) -> Self {
        Self {
            first,
            mats: vec![Matrix::zeros(r, r); count],
        }
    }

    pub fn get(&self, level: i64) -> Option<&Matrix> {
        if level < self.first {
            return None;
        }
        self.mats.get((level - self.first) as usize)
    }

    fn at(&self, level: i64) -> &Matrix {
        self.get(level).expect("level within family")
    }

    pub fn levels(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.mats.len() as i64).map(move |i| self.first + i)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Matrix)> {
        self.mats.iter().enumerate().map(move |(i, m)| (self.first + i as i64, m))
    }

    pub fn total(&self) -> Matrix {
        let r = self.mats.first().map_or(0, |m| m.nrows());
        self.mats.iter().fold(Matrix::zeros(r, r), |acc, m| acc + m)
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub sweeps: usize,
    pub last_change: f64,
    /// Sup-norm of `F(X) - X` at the returned family.
    pub residual: f64,
}

/// Successive-substitution solver for one ladder system.
#[derive(Debug, Clone)]
pub struct LadderSolver {
    direction: Direction,
    split: ScoreSplit,
    terms: Vec<Term>,
    first: i64,
    count: usize,
    r: usize,
}

impl LadderSolver {
    pub fn new(split: &ScoreSplit, direction: Direction) -> Self {
        let u = -split.min_score();
        let v = split.max_score();
        let r = split.at(0).nrows();
        let (first, count, drivers, own_max) = match direction {
            Direction::Descent => (-u, u.max(0) as usize, 1..=v, u),
            Direction::Ascent => (1, v.max(0) as usize, 1..=u, v),
        };
        let sign = match direction {
            Direction::Descent => -1,
            Direction::Ascent => 1,
        };
        let mut terms = Vec::new();
        for gap in drivers {
            for overshoot in 1..=own_max {
                for tuple in ladder_tuples(own_max, gap, overshoot) {
                    terms.push(Term {
                        driver: -sign * gap,
                        target: sign * overshoot,
                        factors: tuple.iter().map(|&a| sign * a).collect(),
                    });
                }
            }
        }
        Self {
            direction,
            split: split.clone(),
            terms,
            first,
            count,
            r,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn zero_family(&self) -> LadderFamily {
        LadderFamily::zeros(self.first, self.count, self.r)
    }

    /// One Jacobi sweep: every level is recomputed from `current`.
    pub fn sweep(&self, current: &LadderFamily) -> LadderFamily {
        let p0 = self.split.at(0);
        let mut next = self.zero_family();
        for (i, level) in (self.first..self.first + self.count as i64).enumerate() {
            next.mats[i] = self.split.at(level) + p0 * current.at(level);
        }
        for term in &self.terms {
            let mut product = self.split.at(term.driver).clone();
            for &t in &term.factors {
                product *= current.at(t);
            }
            next.mats[(term.target - self.first) as usize] += product;
        }
        next
    }

    /// Iterates from zero until the sup-norm change is at most `tol`.
    pub fn solve(&self, tol: f64) -> Result<(LadderFamily, SolveStats)> {
        if !(tol > 0.0) {
            return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
        }
        let mut current = self.zero_family();
        let mut change = f64::INFINITY;
        for sweep in 1..=MAX_SWEEPS {
            let next = self.sweep(&current);
            change = next.max_abs_diff(&current);
            current = next;
            if change <= tol {
                let residual = self.sweep(&current).max_abs_diff(&current);
                return Ok((
                    current,
                    SolveStats {
                        sweeps: sweep,
                        last_change: change,
                        residual,
                    },
                ));
            }
        }
        Err(Error::numeric("ladder solver", format!("{MAX_SWEEPS} sweeps exhausted"), change))
    }
}

/// `{Q^(ℓ)}` and the aggregate `Q = Σ_ℓ Q^(ℓ)`.
pub fn solve_q_ladders(split: &ScoreSplit, tol: f64) -> Result<(LadderFamily, Matrix, SolveStats)> {
    let (family, stats) = LadderSolver::new(split, Direction::Descent).solve(tol)?;
    let q = family.total();
    let worst = linalg::sup_norm(q.row_iter().map(|row| row.sum() - 1.0));
    if worst > 100.0 * tol {
        return Err(Error::Hypothesis(format!(
            "first-descent law is defective: max |row sum of Q - 1| = {worst:e}"
        )));
    }
    Ok((family, q, stats))
}

/// `{L^(ℓ)}` and `L(∞)`, the per-state probability of ever going positive.
pub fn solve_l_ladders(split: &ScoreSplit, tol: f64) -> Result<(LadderFamily, Vector, SolveStats)> {
    let (family, stats) = LadderSolver::new(split, Direction::Ascent).solve(tol)?;
    let total = family.total();
    let l_inf = Vector::from_iterator(total.nrows(), total.row_iter().map(|row| row.sum()));
    if let Some(worst) = l_inf.iter().copied().reduce(f64::max) {
        if worst >= 1.0 - 100.0 * tol {
            return Err(Error::Hypothesis(format!(
                "probability of reaching a positive partial sum is {worst}, not below 1"
            )));
        }
    }
    Ok((family, l_inf, stats))
}

/// Invariant probability vector of a stochastic matrix restricted to `support`,
/// embedded back into the full state space.
fn invariant_on(m: &Matrix, support: &[usize], what: &str) -> Result<Vector> {
    if !linalg::is_irreducible_on(m, support) {
        return Err(Error::Hypothesis(format!("{what} restricted to its support is reducible")));
    }
    let mut sub = linalg::restrict(m, support);
    for mut row in sub.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let small = linalg::stationary_vector(&sub, INVARIANT_TOL * 1e-2)?;
    let mut full = Vector::zeros(m.nrows());
    for (k, &i) in support.iter().enumerate() {
        full[i] = small[k];
    }
    let residual = linalg::left_residual(&full, m);
    if residual > INVARIANT_TOL {
        return Err(Error::numeric("invariant vector", format!("{what} invariant residual too large"), residual));
    }
    Ok(full)
}

/// `z` with `zQ = z`, supported on the negative-score states.
pub fn invariant_vector_z(q: &Matrix, partition: &StatePartition) -> Result<Vector> {
    invariant_on(q, &partition.negative, "descent matrix Q")
}

/// `G^(ℓ)[a][b] = u_b/u_a · e^{θ* ℓ d} · L^(ℓ)[a][b]` and `G(∞) = Σ_ℓ G^(ℓ)`.
pub fn g_matrices(spectral: &SpectralData, l: &LadderFamily) -> Result<(LadderFamily, Matrix)> {
    let u = &spectral.u_star;
    let theta = spectral.theta_lattice;
    let mats: Vec<Matrix> = l
        .iter()
        .map(|(level, m)| {
            let tilt = (theta * level as f64).exp();
            Matrix::from_fn(m.nrows(), m.ncols(), |a, b| u[b] / u[a] * tilt * m[(a, b)])
        })
        .collect();
    let g = LadderFamily { first: l.first, mats };
    let g_inf = g.total();
    let worst = linalg::sup_norm(g_inf.row_iter().map(|row| row.sum() - 1.0));
    if worst > G_ROW_SUM_REJECT {
        return Err(Error::Consistency(format!(
            "tilted ascent matrix G(inf) is not stochastic: max |row sum - 1| = {worst:e}"
        )));
    }
    Ok((g, g_inf))
}

/// `w` with `w G(∞) = w`, supported on the positive-score states.
pub fn invariant_vector_w(g_inf: &Matrix, partition: &StatePartition) -> Result<Vector> {
    invariant_on(g_inf, &partition.positive, "tilted ascent matrix G(inf)")
}

/// `c = Σ_{γ,β} (w_γ/u_γ) u_β Σ_ℓ ℓd e^{θ*ℓd} L^(ℓ)[γ][β]`.
pub fn constant_c(spectral: &SpectralData, w: &Vector, l: &LadderFamily, lattice_step: i64) -> f64 {
    let u = &spectral.u_star;
    let d = lattice_step as f64;
    let mut c = 0.0;
    for (level, m) in l.iter() {
        let weight = level as f64 * d * (spectral.theta_lattice * level as f64).exp();
        for g in 0..m.nrows() {
            if w[g] == 0.0 {
                continue;
            }
            for b in 0..m.ncols() {
                c += w[g] / u[g] * u[b] * weight * m[(g, b)];
            }
        }
    }
    c
}

/// Both expressions of the tilted-tail limit c(∞): the partial-sum form and
/// the summation-by-parts form built on `E_γ[e^{θ* S_σ⁺}; σ⁺ < ∞]`.
#[derive(Debug, Clone, Copy)]
pub struct CInfinity {
    pub primary: f64,
    pub alternative: f64,
}

impl CInfinity {
    pub fn relative_gap(&self) -> f64 {
        (self.primary - self.alternative).abs() / self.primary.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn c_infinity(spectral: &SpectralData, w: &Vector, l: &LadderFamily, l_inf: &Vector, c: f64, lattice_step: i64) -> Result<CInfinity> {
    let u = &spectral.u_star;
    let theta = spectral.theta_lattice;
    let d = lattice_step as f64;
    let v = l.levels().last().unwrap_or(0);
    let mut primary = 0.0;
    let mut alternative = 0.0;
    for g in 0..u.len() {
        if w[g] == 0.0 {
            continue;
        }
        let row_mass = |level: i64| l.at(level).row(g).sum();
        // Σ_{ℓ≥0} (L_γ(∞) - L_γ(ℓ)) e^{θℓ}; terms vanish from ℓ = v on
        let mut partial = 0.0;
        let mut tail_sum = 0.0;
        for level in 0..v {
            if level >= 1 {
                partial += row_mass(level);
            }
            tail_sum += (l_inf[g] - partial) * (theta * level as f64).exp();
        }
        let tilted_mass: f64 = l.levels().map(|level| (theta * level as f64).exp() * row_mass(level)).sum();
        primary += w[g] / u[g] * tail_sum;
        alternative += w[g] / u[g] * (tilted_mass - l_inf[g]);
    }
    let out = CInfinity {
        primary: d / c * primary,
        alternative: d / (c * theta.exp_m1()) * alternative,
    };
    if out.relative_gap() > C_INF_REJECT {
        return Err(Error::Consistency(format!(
            "c(inf) formulas disagree: {} vs {}",
            out.primary, out.alternative
        )));
    }
    Ok(out)
}

/// `E_β(S_σ⁻)` per state, in original score units.
pub fn expected_descent(q: &LadderFamily, lattice_step: i64) -> Vector {
    let r = q.mats.first().map_or(0, |m| m.nrows());
    let mut out = Vector::zeros(r);
    for (level, m) in q.iter() {
        for b in 0..r {
            out[b] += (level * lattice_step) as f64 * m.row(b).sum();
        }
    }
    out
}

/// `A* = Σ_β z_β E_β(S_σ⁻) / E[f(A)]`, the mean spacing of descending ladder epochs.
pub fn a_star(mean_score: f64, z: &Vector, q: &LadderFamily, lattice_step: i64) -> f64 {
    expected_descent(q, lattice_step).dot(z) / mean_score
}

/// Everything derived from the ladder systems for one model.
#[derive(Debug, Clone)]
pub struct LadderSystem {
    pub split: ScoreSplit,
    pub q: LadderFamily,
    pub q_total: Matrix,
    pub l: LadderFamily,
    pub l_inf: Vector,
    pub z: Vector,
    pub g: LadderFamily,
    pub g_inf: Matrix,
    pub w: Vector,
    pub c: f64,
    pub c_inf: f64,
    pub c_inf_alternative: f64,
    pub a_star: f64,
    pub expected_descent: Vector,
    pub mean_score: f64,
    pub lattice_step: i64,
    pub q_stats: SolveStats,
    pub l_stats: SolveStats,
}

impl LadderSystem {
    pub fn solve(model: &ScoreModel, spectral: &SpectralData, tol: f64) -> Result<Self> {
        let split = score_split(model);
        let partition = model::partition_states(model);
        let d = model.lattice_step();
        let (q, q_total, q_stats) = solve_q_ladders(&split, tol)?;
        let (l, l_inf, l_stats) = solve_l_ladders(&split, tol)?;
        let z = invariant_vector_z(&q_total, &partition)?;
        let (g, g_inf) = g_matrices(spectral, &l)?;
        let w = invariant_vector_w(&g_inf, &partition)?;
        let c = constant_c(spectral, &w, &l, d);
        let c_inf = c_infinity(spectral, &w, &l, &l_inf, c, d)?;
        let mean_score = model::mean_score(model)?;
        let expected_descent = expected_descent(&q, d);
        let a_star = expected_descent.dot(&z) / mean_score;
        Ok(Self {
            split,
            q,
            q_total,
            l,
            l_inf,
            z,
            g,
            g_inf,
            w,
            c,
            c_inf: c_inf.primary,
            c_inf_alternative: c_inf.alternative,
            a_star,
            expected_descent,
            mean_score,
            lattice_step: d,
            q_stats,
            l_stats,
        })
    }

    /// Largest descent magnitude u (lattice units).
    pub fn max_down_step(&self) -> i64 {
        -self.split.min_score()
    }

    pub fn max_up_step(&self) -> i64 {
        self.split.max_score()
    }

    pub fn g_row_sum_deviation(&self) -> f64 {
        linalg::sup_norm(self.g_inf.row_iter().map(|row| row.sum() - 1.0))
    }

    pub fn z_residual(&self) -> f64 {
        linalg::left_residual(&self.z, &self.q_total)
    }

    pub fn w_residual(&self) -> f64 {
        linalg::left_residual(&self.w, &self.g_inf)
    }
}
