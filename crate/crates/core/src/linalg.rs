//! Small dense helpers shared by the model, spectral and ladder modules:
//! graph structure of nonnegative matrices and invariant probability vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const POWER_ITERATION_BUDGET: usize = 1_000_000;

/// Adjacency lists of the positive entries of `m` restricted to `states`.
fn adjacency(m: &Matrix, states: &[usize]) -> Vec<Vec<usize>> {
    states
        .iter()
        .map(|&i| {
            states
                .iter()
                .enumerate()
                .filter(|&(_, &j)| m[(i, j)] > 0.0)
                .map(|(pos, _)| pos)
                .collect()
        })
        .collect()
}

fn reachable_from(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Strong connectivity of the nonzero pattern of `m` restricted to `states`.
pub fn is_irreducible_on(m: &Matrix, states: &[usize]) -> bool {
    if states.is_empty() {
        return false;
    }
    let adj = adjacency(m, states);
    if !reachable_from(&adj, 0).into_iter().all(|b| b) {
        return false;
    }
    let mut rev = vec![Vec::new(); adj.len()];
    for (v, out) in adj.iter().enumerate() {
        for &w in out {
            rev[w].push(v);
        }
    }
    reachable_from(&rev, 0).into_iter().all(|b| b)
}

pub fn is_irreducible(m: &Matrix) -> bool {
    let all: Vec<usize> = (0..m.nrows()).collect();
    is_irreducible_on(m, &all)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible nonnegative matrix: gcd of all cycle lengths,
/// computed from BFS levels as gcd over edges (u, v) of level(u) + 1 - level(v).
pub fn period(m: &Matrix) -> usize {
    let n = m.nrows();
    let all: Vec<usize> = (0..n).collect();
    let adj = adjacency(m, &all);
    let mut level: Vec<Option<usize>> = vec![None; n];
    level[0] = Some(0);
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut g = 0;
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &w in &adj[v] {
            match level[w] {
                None => {
                    level[w] = Some(lv + 1);
                    queue.push_back(w);
                }
                Some(lw) => {
                    let diff = (lv + 1).abs_diff(lw);
                    g = gcd(g, diff);
                }
            }
        }
    }
    g
}

pub fn sup_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Residual `max |(x M)_j - x_j|` of a row vector against a square matrix.
pub fn left_residual(x: &Vector, m: &Matrix) -> f64 {
    let xm = m.tr_mul(x);
    sup_norm((xm - x).iter().copied())
}

/// Left invariant probability vector of a (row-)stochastic irreducible matrix.
///
/// Direct solve of `(Mᵀ - I) x = 0` with one equation replaced by `Σx = 1`,
/// refined by power iteration on the lazy chain `(M + I)/2` when the direct
/// answer is not accurate enough (or the system is singular).
pub fn stationary_vector(m: &Matrix, tol: f64) -> Result<Vector> {
    let n = m.nrows();
    if n == 1 {
        return Ok(Vector::from_element(1, 1.0));
    }
    let mut a = m.transpose() - Matrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(n);
    rhs[n - 1] = 1.0;

    let mut x = match a.lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => x,
        _ => Vector::from_element(n, 1.0 / n as f64),
    };
    clean_probability(&mut x);
    if left_residual(&x, m) <= tol {
        return Ok(x);
    }

    let lazy = (m + Matrix::identity(n, n)) * 0.5;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITERATION_BUDGET {
        let mut next = lazy.tr_mul(&x);
        clean_probability(&mut next);
        x = next;
        residual = left_residual(&x, m);
        if residual <= tol {
            return Ok(x);
        }
    }
    Err(Error::numeric(
        "stationary_vector",
        "power iteration did not reach the residual target",
        residual,
    ))
}

/// Zero tiny negative round-off and renormalize to unit mass.
fn clean_probability(x: &mut Vector) {
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-14 {
            *v = 0.0;
        }
    }
    let s: f64 = x.iter().sum();
    if s != 0.0 {
        *x /= s;
    }
}

/// Principal submatrix on the given index set.
pub fn restrict(m: &Matrix, states: &[usize]) -> Matrix {
    Matrix::from_fn(states.len(), states.len(), |i, j| m[(states[i], states[j])])
}
