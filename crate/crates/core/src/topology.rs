//! Directed communication graph, pinned Laplacian, Lyapunov solve and the
//! admissible sampling bound for the distributed observer.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Leader node id.
pub const LEADER: usize = 0;

/// Directed graph over the leader (node 0) and followers `1..=N`.
///
/// `weight(i, j) > 0` means follower `i` receives from node `j`. Every
/// communicating pair, including the self pair `(i, i)`, carries its own
/// sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    followers: usize,
    adjacency: Matrix,
    periods: BTreeMap<(usize, usize), f64>,
}

/// One directed communication channel, `sender -> receiver`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub receiver: usize,
    pub sender: usize,
    pub period: f64,
}

impl Pair {
    pub fn is_self(&self) -> bool {
        self.receiver == self.sender
    }
}

impl CommGraph {
    pub fn new(followers: usize) -> Self {
        CommGraph {
            followers,
            adjacency: Matrix::zeros(followers + 1, followers + 1),
            periods: BTreeMap::new(),
        }
    }

    /// Adds the edge `sender -> receiver` with weight `a_{receiver,sender}`.
    pub fn add_edge(
        &mut self,
        sender: usize,
        receiver: usize,
        weight: f64,
        period: f64,
    ) -> Result<()> {
        let n = self.followers;
        if receiver == LEADER || receiver > n || sender > n {
            return Err(Error::Structural(format!(
                "edge {sender} -> {receiver} outside nodes 0..={n} (leader cannot receive)"
            )));
        }
        if sender == receiver {
            return Err(Error::Structural(format!(
                "self loop on {receiver}; use set_self_period"
            )));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Structural(format!(
                "edge {sender} -> {receiver} weight must be positive, got {weight}"
            )));
        }
        check_period(period, (receiver, sender))?;
        self.adjacency[(receiver, sender)] = weight;
        self.periods.insert((receiver, sender), period);
        Ok(())
    }

    pub fn set_self_period(&mut self, agent: usize, period: f64) -> Result<()> {
        if agent == LEADER || agent > self.followers {
            return Err(Error::Structural(format!("no follower {agent}")));
        }
        check_period(period, (agent, agent))?;
        self.periods.insert((agent, agent), period);
        Ok(())
    }

    pub fn followers(&self) -> usize {
        self.followers
    }

    pub fn weight(&self, receiver: usize, sender: usize) -> f64 {
        self.adjacency[(receiver, sender)]
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn period(&self, receiver: usize, sender: usize) -> Option<f64> {
        self.periods.get(&(receiver, sender)).copied()
    }

    /// Senders `j` with `a_ij > 0`, in increasing order (leader first).
    pub fn in_neighbors(&self, receiver: usize) -> Vec<usize> {
        (0..=self.followers)
            .filter(|&j| j != receiver && self.adjacency[(receiver, j)] > 0.0)
            .collect()
    }

    /// All channels including self pairs, ordered by (receiver, sender).
    pub fn pairs(&self) -> Vec<Pair> {
        self.periods
            .iter()
            .map(|(&(receiver, sender), &period)| Pair {
                receiver,
                sender,
                period,
            })
            .collect()
    }

    /// Largest sampling period over all pairs.
    pub fn max_period(&self) -> f64 {
        self.periods.values().copied().fold(0.0, f64::max)
    }

    /// Checks the graph invariants: every edge and follower has a period and
    /// the leader reaches every follower.
    pub fn validate(&self) -> Result<()> {
        for i in 1..=self.followers {
            if self.period(i, i).is_none() {
                return Err(Error::Structural(format!(
                    "follower {i} has no self sampling period"
                )));
            }
            for j in self.in_neighbors(i) {
                if self.period(i, j).is_none() {
                    return Err(Error::Structural(format!(
                        "edge {j} -> {i} has no sampling period"
                    )));
                }
            }
        }
        if !has_spanning_tree(self) {
            return Err(Error::Structural(
                "graph has no directed spanning tree rooted at the leader".into(),
            ));
        }
        Ok(())
    }
}

fn check_period(period: f64, pair: (usize, usize)) -> Result<()> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Structural(format!(
            "sampling period for pair {pair:?} must be positive, got {period}"
        )));
    }
    Ok(())
}

/// True iff every follower is reachable from the leader along `j -> i` edges.
pub fn has_spanning_tree(g: &CommGraph) -> bool {
    let n = g.followers;
    let mut seen = vec![false; n + 1];
    seen[LEADER] = true;
    let mut queue = VecDeque::from([LEADER]);
    while let Some(j) = queue.pop_front() {
        for (i, s) in seen.iter_mut().enumerate().skip(1) {
            if !*s && g.adjacency[(i, j)] > 0.0 {
                *s = true;
                queue.push_back(i);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Pinned follower Laplacian: `H_ii = sum_j a_ij` (leader included), `H_ij = -a_ij`.
pub fn h_matrix(g: &CommGraph) -> Result<Matrix> {
    if !has_spanning_tree(g) {
        return Err(Error::Structural(
            "graph has no directed spanning tree rooted at the leader".into(),
        ));
    }
    let n = g.followers;
    let mut h = Matrix::zeros(n, n);
    for i in 1..=n {
        let mut degree = 0.0;
        for j in 0..=n {
            if j == i {
                continue;
            }
            let a = g.adjacency[(i, j)];
            degree += a;
            if j != LEADER {
                h[(i - 1, j - 1)] = -a;
            }
        }
        h[(i - 1, i - 1)] = degree;
    }
    Ok(h)
}

/// Solves `Q A + Aᵀ Q = 2 I` for symmetric positive definite `Q`.
///
/// Requires every eigenvalue of `A` to have positive real part.
pub fn solve_lyapunov(a: &Matrix) -> Result<Matrix> {
    linalg::require_square(a, "Lyapunov matrix")?;
    let n = a.nrows();
    if linalg::eigenvalues(a).iter().any(|(re, _)| *re <= 0.0) {
        return Err(Error::Solvability("matrix is not positively stable".into()));
    }
    // Column-major vec: vec(QA) = (Aᵀ ⊗ I) vec(Q), vec(AᵀQ) = (I ⊗ Aᵀ) vec(Q).
    let id = Matrix::identity(n, n);
    let at = a.transpose();
    let op = linalg::kron(&at, &id) + linalg::kron(&id, &at);
    let rhs = Vector::from_iterator(n * n, (id * 2.0).iter().copied());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solvability("vectorized Lyapunov operator is singular".into()))?;
    let q = Matrix::from_vec(n, n, sol.as_slice().to_vec());
    let q = (&q + q.transpose()) * 0.5;

    let residual = &q * a + a.transpose() * &q - Matrix::identity(n, n) * 2.0;
    if residual.amax() > 1e-8 {
        return Err(Error::Solvability(format!(
            "residual {} exceeds 1e-8",
            residual.amax()
        )));
    }
    if q.clone().symmetric_eigenvalues().iter().any(|&l| l <= 0.0) {
        return Err(Error::Solvability(
            "solution is not positive definite".into(),
        ));
    }
    Ok(q)
}

/// `Q` for `A1 = H ⊗ I_{n_v}`.
pub fn lyapunov_q(h: &Matrix, nv: usize) -> Result<Matrix> {
    solve_lyapunov(&linalg::kron(h, &Matrix::identity(nv, nv)))
}

/// The three candidate bounds and their minimum; the observer contract is `κT ≤ M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBound {
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl SamplingBound {
    /// `κ T ≤ M` with `κ = max(κ1, κ2)` and `T` the largest pair period.
    pub fn admits(&self, kappa: f64, t_max: f64) -> bool {
        kappa * t_max <= self.m
    }
}

/// Evaluates `M = min{M1, M2, M3}`:
///
/// * `M1 = 1 / (8 (2N+5) ‖A1‖²)`
/// * `M2 = 1 / (3 N Σ_i ‖Q A_{i1}‖²)`
/// * `M3 = sqrt(1 / (3 (2N+5) Σ_i ‖A_{i1}‖²))`
///
/// where `A_{i1} = H_i ⊗ I` keeps only row `i` of `H`, and norms are spectral.
pub fn max_sampling_bound(g: &CommGraph, nv: usize) -> Result<SamplingBound> {
    let h = h_matrix(g)?;
    let n = g.followers;
    let id = Matrix::identity(nv, nv);
    let a1 = linalg::kron(&h, &id);
    let q = solve_lyapunov(&a1)?;

    let nf = n as f64;
    let a1_norm = linalg::spectral_norm(&a1);
    let mut sum_qa = 0.0;
    let mut sum_a = 0.0;
    for i in 0..n {
        let mut hi = Matrix::zeros(n, n);
        hi.set_row(i, &h.row(i));
        let ai1 = linalg::kron(&hi, &id);
        sum_qa += linalg::spectral_norm(&(&q * &ai1)).powi(2);
        sum_a += linalg::spectral_norm(&ai1).powi(2);
    }
    let m1 = 1.0 / (8.0 * (2.0 * nf + 5.0) * a1_norm * a1_norm);
    let m2 = 1.0 / (3.0 * nf * sum_qa);
    let m3 = (1.0 / (3.0 * (2.0 * nf + 5.0) * sum_a)).sqrt();
    Ok(SamplingBound {
        m: m1.min(m2).min(m3),
        m1,
        m2,
        m3,
    })
}
