//! Markov score models: construction, validation, stationary quantities.
//!
//! A model is a finite alphabet, a row-stochastic transition matrix and an
//! integer score per state. Scores sharing a common divisor `d > 1` are
//! rescaled internally to the unit lattice; [`ScoreModel::lattice_scores`]
//! holds the rescaled values and [`ScoreModel::lattice_step`] the divisor.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub const ROW_SUM_TOL: f64 = 1e-12;
pub const STATIONARY_TOL: f64 = 1e-12;

/// On-disk model document. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub alphabet: Vec<String>,
    pub transition: Vec<Vec<f64>>,
    pub scores: Vec<i64>,
}

impl ModelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }
}

#[derive(Debug, Clone)]
pub struct ScoreModel {
    alphabet: Vec<String>,
    transition: Matrix,
    scores: Vec<i64>,
    lattice_step: i64,
    lattice_scores: Vec<i64>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl ScoreModel {
    /// Builds a model after structural checks (dimensions, finite nonnegative
    /// entries, distinct labels). Probabilistic hypotheses are checked
    /// separately by [`validate_model`].
    pub fn new(alphabet: Vec<String>, transition: Vec<Vec<f64>>, scores: Vec<i64>) -> Result<Self> {
        let r = alphabet.len();
        if r == 0 {
            return Err(Error::Structural("empty alphabet".into()));
        }
        if transition.len() != r {
            return Err(Error::Structural(format!(
                "transition matrix has {} rows for an alphabet of {r} states",
                transition.len()
            )));
        }
        if scores.len() != r {
            return Err(Error::Structural(format!(
                "{} scores for an alphabet of {r} states",
                scores.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != r {
                return Err(Error::Structural(format!(
                    "transition row {i} has {} entries, expected {r}",
                    row.len()
                )));
            }
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(Error::Structural(format!("transition[{i}][{j}] is not finite")));
                }
                if p < 0.0 {
                    return Err(Error::Structural(format!("transition[{i}][{j}] = {p} is negative")));
                }
            }
        }
        let mut seen = HashMap::new();
        for (i, a) in alphabet.iter().enumerate() {
            if let Some(j) = seen.insert(a.as_str(), i) {
                return Err(Error::Structural(format!("duplicate state label {a:?} at {j} and {i}")));
            }
        }
        let matrix = Matrix::from_fn(r, r, |i, j| transition[i][j]);
        Ok(Self::from_parts(alphabet, matrix, scores))
    }

    fn from_parts(alphabet: Vec<String>, transition: Matrix, scores: Vec<i64>) -> Self {
        let g = scores.iter().fold(0, |acc, &s| gcd(acc, s));
        let lattice_step = if g == 0 { 1 } else { g };
        let lattice_scores = scores.iter().map(|s| s / lattice_step).collect();
        Self {
            alphabet,
            transition,
            scores,
            lattice_step,
            lattice_scores,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        Self::new(file.alphabet.clone(), file.transition.clone(), file.scores.clone())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&ModelFile::load(path)?)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            alphabet: self.alphabet.clone(),
            transition: self
                .transition
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
            scores: self.scores.clone(),
        }
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.alphabet.len()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    /// Scores in original units.
    pub fn scores(&self) -> &[i64] {
        &self.scores
    }

    /// Scores divided by the lattice step.
    pub fn lattice_scores(&self) -> &[i64] {
        &self.lattice_scores
    }

    pub fn lattice_step(&self) -> i64 {
        self.lattice_step
    }

    /// Largest magnitude of a negative lattice score (0 if none).
    pub fn max_down_step(&self) -> i64 {
        self.lattice_scores.iter().map(|&s| -s).max().unwrap_or(0).max(0)
    }

    /// Largest positive lattice score (0 if none).
    pub fn max_up_step(&self) -> i64 {
        self.lattice_scores.iter().copied().max().unwrap_or(0).max(0)
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.alphabet.iter().position(|a| a == label)
    }

    /// Short content hash identifying the model in reports.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.to_file()).expect("model file serializes"));
        hex::encode(&hasher.finalize()[..8])
    }

    /// Model with states reordered so that new state `i` is old state `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let r = self.num_states();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..r).collect::<Vec<_>>() {
            return Err(Error::Input(format!("{perm:?} is not a permutation of 0..{r}")));
        }
        let alphabet = perm.iter().map(|&i| self.alphabet[i].clone()).collect();
        let transition = Matrix::from_fn(r, r, |i, j| self.transition[(perm[i], perm[j])]);
        let scores = perm.iter().map(|&i| self.scores[i]).collect();
        Ok(Self::from_parts(alphabet, transition, scores))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Warn,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    /// `Ok(())` when every mandatory check passed.
    pub fn into_result(self) -> Result<()> {
        if self.passed {
            return Ok(());
        }
        let failed: Vec<String> = self.failures().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        Err(Error::Validation(failed.join("; ")))
    }
}

fn push(checks: &mut Vec<Check>, name: &'static str, ok: bool, value: Option<f64>, detail: impl Into<String>) {
    checks.push(Check {
        name,
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        value,
        detail: detail.into(),
    });
}

/// Checks stochasticity, irreducibility, aperiodicity, negative mean score and
/// one-step reachability of positive and negative scores from every state.
/// Strict positivity of the transition matrix is only a warning.
pub fn validate_model(model: &ScoreModel) -> ValidationReport {
    let p = model.transition();
    let r = model.num_states();
    let f = model.scores();
    let mut checks = Vec::new();
    let mut warnings = Vec::new();

    let row_dev = linalg::sup_norm(p.row_iter().map(|row| row.sum() - 1.0));
    push(
        &mut checks,
        "row_stochastic",
        row_dev <= ROW_SUM_TOL,
        Some(row_dev),
        format!("max |row sum - 1| = {row_dev:e}"),
    );

    let irreducible = linalg::is_irreducible(p);
    push(&mut checks, "irreducible", irreducible, None, if irreducible { "strongly connected" } else { "not strongly connected" });

    if irreducible {
        let per = linalg::period(p);
        push(&mut checks, "aperiodic", per == 1, Some(per as f64), format!("period {per}"));
    } else {
        push(&mut checks, "aperiodic", false, None, "period undefined for a reducible chain");
    }

    let has_pos = f.iter().any(|&s| s > 0);
    let has_neg = f.iter().any(|&s| s < 0);
    push(
        &mut checks,
        "score_signs",
        has_pos && has_neg,
        None,
        format!("positive scores present: {has_pos}, negative scores present: {has_neg}"),
    );

    let mut pos_missing = Vec::new();
    let mut neg_missing = Vec::new();
    for a in 0..r {
        if !(0..r).any(|b| p[(a, b)] > 0.0 && f[b] > 0) {
            pos_missing.push(model.alphabet()[a].clone());
        }
        if !(0..r).any(|b| p[(a, b)] > 0.0 && f[b] < 0) {
            neg_missing.push(model.alphabet()[a].clone());
        }
    }
    push(
        &mut checks,
        "one_step_positive_score",
        pos_missing.is_empty(),
        None,
        if pos_missing.is_empty() { "every state".to_string() } else { format!("unreachable from {pos_missing:?}") },
    );
    push(
        &mut checks,
        "one_step_negative_score",
        neg_missing.is_empty(),
        None,
        if neg_missing.is_empty() { "every state".to_string() } else { format!("unreachable from {neg_missing:?}") },
    );

    if irreducible && row_dev <= ROW_SUM_TOL {
        match stationary_distribution(model) {
            Ok(pi) => {
                let mean = mean_score_with(model, &pi);
                push(&mut checks, "mean_score_negative", mean < 0.0, Some(mean), format!("mean score {mean}"));
            }
            Err(e) => push(&mut checks, "mean_score_negative", false, None, format!("stationary vector unavailable: {e}")),
        }
    } else {
        push(&mut checks, "mean_score_negative", false, None, "requires an irreducible stochastic matrix");
    }

    let strictly_positive = p.iter().all(|&x| x > 0.0);
    checks.push(Check {
        name: "strictly_positive",
        status: if strictly_positive { CheckStatus::Pass } else { CheckStatus::Warn },
        value: None,
        detail: if strictly_positive { "all transitions positive".into() } else { "some transitions are zero".into() },
    });
    if !strictly_positive {
        warnings.push("transition matrix has zero entries; results rely on irreducibility and aperiodicity only".into());
    }

    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    ValidationReport { passed, checks, warnings }
}

/// Stationary probability vector π with πP = π.
pub fn stationary_distribution(model: &ScoreModel) -> Result<Vector> {
    let pi = linalg::stationary_vector(model.transition(), STATIONARY_TOL)?;
    if pi.iter().any(|&x| x <= 0.0) {
        return Err(Error::numeric("stationary_distribution", "stationary vector not strictly positive", 0.0));
    }
    Ok(pi)
}

fn mean_score_with(model: &ScoreModel, pi: &Vector) -> f64 {
    model.scores().iter().zip(pi.iter()).map(|(&f, &p)| f as f64 * p).sum()
}

/// Average score Σ f(α) π_α in original score units.
pub fn mean_score(model: &ScoreModel) -> Result<f64> {
    Ok(mean_score_with(model, &stationary_distribution(model)?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePartition {
    pub negative: Vec<usize>,
    pub zero: Vec<usize>,
    pub positive: Vec<usize>,
}

pub fn partition_states(model: &ScoreModel) -> StatePartition {
    let mut part = StatePartition {
        negative: Vec::new(),
        zero: Vec::new(),
        positive: Vec::new(),
    };
    for (i, &s) in model.scores().iter().enumerate() {
        match s.signum() {
            -1 => part.negative.push(i),
            0 => part.zero.push(i),
            _ => part.positive.push(i),
        }
    }
    part
}

/// Maximum-likelihood transition matrix with additive smoothing:
/// `p̂(a,b) = (n(ab) + c) / (n(a·) + r c)`.
pub fn estimate_from_sequence<S: AsRef<str>>(sequence: &[S], alphabet: &[String], pseudocount: f64) -> Result<Matrix> {
    if !(pseudocount >= 0.0 && pseudocount.is_finite()) {
        return Err(Error::Input(format!("pseudocount must be finite and >= 0, got {pseudocount}")));
    }
    if sequence.len() < 2 {
        return Err(Error::Input(format!("sequence of length {} has no transitions", sequence.len())));
    }
    let r = alphabet.len();
    let index: HashMap<&str, usize> = alphabet.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let states = sequence
        .iter()
        .map(|s| {
            index
                .get(s.as_ref())
                .copied()
                .ok_or_else(|| Error::Input(format!("symbol {:?} not in alphabet", s.as_ref())))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = Matrix::zeros(r, r);
    for w in states.windows(2) {
        counts[(w[0], w[1])] += 1.0;
    }
    let mut p = Matrix::zeros(r, r);
    for a in 0..r {
        let total = counts.row(a).sum() + r as f64 * pseudocount;
        if total == 0.0 {
            return Err(Error::Estimation(format!(
                "state {:?} is never followed by a symbol and pseudocount is 0",
                alphabet[a]
            )));
        }
        for b in 0..r {
            p[(a, b)] = (counts[(a, b)] + pseudocount) / total;
        }
    }
    Ok(p)
}
