//! Topologies, combination matrices and the benign-subnetwork analysis.
//!
//! Combination matrices are left-stochastic: `[A]_{ℓk} = a_ℓk` is the weight
//! agent `k` puts on neighbor `ℓ`, and every column sums to one.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const COLUMN_SUM_TOL: f64 = 1e-12;
const PERRON_MAX_ITERS: usize = 10_000;
const PERRON_TOL: f64 = 1e-12;
const PERRON_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    FullyConnected,
    Ring,
    ErdosRenyi { prob: f64, seed: u64 },
}

/// Undirected graph with mandatory self-loops and benign/malicious labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    agents: usize,
    adjacency: Vec<bool>,
    malicious: Vec<bool>,
}

impl Topology {
    /// `adjacency` is row-major `K×K`.
    pub fn new(agents: usize, adjacency: Vec<bool>, malicious: Vec<bool>) -> Result<Self> {
        if agents == 0 {
            return Err(Error::invalid("topology needs at least one agent"));
        }
        if adjacency.len() != agents * agents || malicious.len() != agents {
            return Err(Error::invalid(
                "adjacency/label dimensions do not match agent count",
            ));
        }
        for k in 0..agents {
            if !adjacency[k * agents + k] {
                return Err(Error::invalid(format!(
                    "agent {k} is missing its self-loop"
                )));
            }
            for l in 0..k {
                if adjacency[k * agents + l] != adjacency[l * agents + k] {
                    return Err(Error::invalid(format!(
                        "adjacency not symmetric at ({k}, {l})"
                    )));
                }
            }
        }
        Ok(Self {
            agents,
            adjacency,
            malicious,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn connected(&self, l: usize, k: usize) -> bool {
        self.adjacency[l * self.agents + k]
    }

    /// `N_k`, including `k` itself, in increasing order.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.agents).filter(|&l| self.connected(l, k)).collect()
    }

    pub fn is_malicious(&self, k: usize) -> bool {
        self.malicious[k]
    }

    pub fn benign_agents(&self) -> Vec<usize> {
        (0..self.agents).filter(|&k| !self.malicious[k]).collect()
    }

    pub fn malicious_agents(&self) -> Vec<usize> {
        (0..self.agents).filter(|&k| self.malicious[k]).collect()
    }

    /// Fraction of malicious agents in `N_k`.
    pub fn contamination(&self, k: usize) -> f64 {
        let nb = self.neighbors(k);
        let bad = nb.iter().filter(|&&l| self.malicious[l]).count();
        bad as f64 / nb.len() as f64
    }

    /// Breadth-first reachability restricted to benign agents.
    pub fn benign_connected(&self) -> bool {
        let benign = self.benign_agents();
        let Some(&start) = benign.first() else {
            return true;
        };
        let mut seen = vec![false; self.agents];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 1;
        while let Some(k) = queue.pop_front() {
            for l in self.neighbors(k) {
                if !seen[l] && !self.malicious[l] {
                    seen[l] = true;
                    reached += 1;
                    queue.push_back(l);
                }
            }
        }
        reached == benign.len()
    }
}

pub fn build_topology(kind: TopologyKind, agents: usize, malicious: &[usize]) -> Result<Topology> {
    if agents == 0 {
        return Err(Error::invalid("topology needs at least one agent"));
    }
    let mut labels = vec![false; agents];
    for &m in malicious {
        if m >= agents {
            return Err(Error::invalid(format!(
                "malicious agent {m} out of range 0..{agents}"
            )));
        }
        labels[m] = true;
    }
    let mut adj = vec![false; agents * agents];
    let mut link = |a: usize, b: usize| {
        adj[a * agents + b] = true;
        adj[b * agents + a] = true;
    };
    for k in 0..agents {
        link(k, k);
    }
    match kind {
        TopologyKind::FullyConnected => {
            for k in 0..agents {
                for l in 0..k {
                    link(k, l);
                }
            }
        }
        TopologyKind::Ring => {
            for k in 0..agents {
                link(k, (k + 1) % agents);
            }
        }
        TopologyKind::ErdosRenyi { prob, seed } => {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::invalid(format!(
                    "edge probability {prob} outside [0, 1]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in 0..agents {
                for l in 0..k {
                    if rng.random_bool(prob) {
                        link(k, l);
                    }
                }
            }
        }
    }
    let t = Topology::new(agents, adj, labels)?;
    if matches!(kind, TopologyKind::ErdosRenyi { .. }) && !t.benign_connected() {
        return Err(Error::BenignDisconnected);
    }
    Ok(t)
}

/// Non-negative `K×K` matrix whose columns each sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    a: DMatrix<f64>,
}

impl CombinationMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::invalid(
                "combination matrix must be square and non-empty",
            ));
        }
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(
                "combination weights must be finite and non-negative",
            ));
        }
        for (k, col) in a.column_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::invalid(format!("column {k} sums to {s}")));
            }
        }
        Ok(Self { a })
    }

    /// Checks that weights are supported on the topology's neighborhoods.
    pub fn for_topology(a: DMatrix<f64>, t: &Topology) -> Result<Self> {
        let m = Self::new(a)?;
        if m.size() != t.agents() {
            return Err(Error::invalid("matrix size differs from agent count"));
        }
        for k in 0..t.agents() {
            for l in 0..t.agents() {
                if m.a[(l, k)] > 0.0 && !t.connected(l, k) {
                    return Err(Error::invalid(format!(
                        "positive weight a[{l},{k}] outside neighborhood"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.a.nrows()
    }

    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.a[(l, k)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Neighbors of `k` with positive weight and their weights.
    pub fn support(&self, k: usize) -> (Vec<usize>, Vec<f64>) {
        self.a
            .column(k)
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(l, w)| (l, *w))
            .unzip()
    }
}

/// `a_ℓk = 1/|N_k|` for `ℓ ∈ N_k`.
pub fn uniform_combination(t: &Topology) -> CombinationMatrix {
    let k_count = t.agents();
    let mut a = DMatrix::zeros(k_count, k_count);
    for k in 0..k_count {
        let nb = t.neighbors(k);
        let w = 1.0 / nb.len() as f64;
        for l in nb {
            a[(l, k)] = w;
        }
    }
    CombinationMatrix { a }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodViolation {
    pub agent: usize,
    pub benign: usize,
    pub size: usize,
}

impl NeighborhoodViolation {
    pub fn benign_ratio(&self) -> f64 {
        self.benign as f64 / self.size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report {
    pub epsilon: f64,
    pub violations: Vec<NeighborhoodViolation>,
    pub benign_connected: bool,
}

impl Assumption1Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.benign_connected
    }
}

impl std::fmt::Display for Assumption1Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed() {
            return write!(f, "ok (epsilon = {})", self.epsilon);
        }
        let mut parts = Vec::new();
        for v in &self.violations {
            parts.push(format!(
                "agent {}: {}/{} benign, need > {}",
                v.agent,
                v.benign,
                v.size,
                1.0 - self.epsilon
            ));
        }
        if !self.benign_connected {
            parts.push("benign subgraph disconnected".to_string());
        }
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks that every benign neighborhood has benign fraction above `1 − ε`
/// and that the benign agents form a connected subgraph.
///
/// A neighborhood without malicious members always passes, so a clean
/// connected network passes for every ε including 0.
pub fn validate_assumption1(t: &Topology, epsilon: f64) -> Result<Assumption1Report> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "epsilon must lie in [0, 0.5), got {epsilon}"
        )));
    }
    let mut violations = Vec::new();
    for k in t.benign_agents() {
        let nb = t.neighbors(k);
        let benign = nb.iter().filter(|&&l| !t.is_malicious(l)).count();
        let size = nb.len();
        if benign < size && benign as f64 / size as f64 <= 1.0 - epsilon {
            violations.push(NeighborhoodViolation {
                agent: k,
                benign,
                size,
            });
        }
    }
    Ok(Assumption1Report {
        epsilon,
        violations,
        benign_connected: t.benign_connected(),
    })
}

/// `Ā^b` over benign agents together with the agent index of each row/column.
#[derive(Debug, Clone, PartialEq)]
pub struct BenignReduced {
    pub agents: Vec<usize>,
    pub matrix: CombinationMatrix,
}

impl BenignReduced {
    /// Back to `K×K`, with zero rows and columns for malicious agents.
    pub fn embed(&self, total_agents: usize) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(total_agents, total_agents);
        for (i, &l) in self.agents.iter().enumerate() {
            for (j, &k) in self.agents.iter().enumerate() {
                full[(l, k)] = self.matrix.weight(i, j);
            }
        }
        full
    }
}

/// `ā_ℓk = a_ℓk / Σ_{ℓ' ∈ N_k^b} a_ℓ'k` on benign agents.
pub fn benign_reduced_matrix(a: &CombinationMatrix, t: &Topology) -> Result<BenignReduced> {
    if a.size() != t.agents() {
        return Err(Error::invalid("matrix size differs from agent count"));
    }
    let benign = t.benign_agents();
    if benign.is_empty() {
        return Err(Error::invalid("no benign agents"));
    }
    let n = benign.len();
    let mut reduced = DMatrix::zeros(n, n);
    for (j, &k) in benign.iter().enumerate() {
        let mass: f64 = benign.iter().map(|&l| a.weight(l, k)).sum();
        if mass <= 0.0 {
            return Err(Error::EmptyBenignNeighborhood { agent: k });
        }
        for (i, &l) in benign.iter().enumerate() {
            reduced[(i, j)] = a.weight(l, k) / mass;
        }
    }
    Ok(BenignReduced {
        agents: benign,
        matrix: CombinationMatrix::new(reduced)?,
    })
}

/// Positive, unit-sum right eigenvector for eigenvalue one.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronVector {
    p: Vec<f64>,
}

impl PerronVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn from_vec(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid("Perron entries must be positive"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("Perron entries sum to {s}")));
        }
        Ok(Self { p })
    }
}

/// Power iteration `p ← A p` from the uniform vector.
pub fn perron_vector(a: &CombinationMatrix) -> Result<PerronVector> {
    let n = a.size();
    let m = a.matrix();
    let mut p = DVector::from_element(n, 1.0 / n as f64);
    let mut last_change = f64::INFINITY;
    for _ in 0..PERRON_MAX_ITERS {
        let mut next = m * &p;
        let s = next.sum();
        next /= s;
        last_change = (&next - &p).amax();
        p = next;
        if last_change <= PERRON_TOL {
            break;
        }
    }
    let residual = (m * &p - &p).amax();
    if last_change > PERRON_TOL || residual > PERRON_RESIDUAL_TOL || p.min() <= 0.0 {
        return Err(Error::PerronNotConverged {
            iterations: PERRON_MAX_ITERS,
            residual,
        });
    }
    Ok(PerronVector {
        p: p.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fully_connected_three() {
        let t = build_topology(TopologyKind::FullyConnected, 3, &[]).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                assert!(t.connected(l, k));
            }
        }
    }

    #[test]
    fn ring_neighborhoods() {
        let t = build_topology(TopologyKind::Ring, 4, &[]).unwrap();
        for k in 0..4 {
            assert_eq!(t.neighbors(k).len(), 3);
        }
        let a = uniform_combination(&t);
        for k in 0..4 {
            let (nb, w) = a.support(k);
            assert_eq!(nb.len(), 3);
            for x in w {
                assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn thirty_two_agents_one_attacker() {
        let t = build_topology(TopologyKind::FullyConnected, 32, &[31]).unwrap();
        assert_abs_diff_eq!(t.contamination(0), 1.0 / 32.0, epsilon = 1e-15);
        assert!(validate_assumption1(&t, 0.45).unwrap().passed());
    }

    #[test]
    fn uniform_combination_examples() {
        let t = build_topology(TopologyKind::FullyConnected, 4, &[]).unwrap();
        let a = uniform_combination(&t);
        assert!(a.matrix().iter().all(|&x| x == 0.25));
        let lone = Topology::new(1, vec![true], vec![false]).unwrap();
        assert_eq!(uniform_combination(&lone).weight(0, 0), 1.0);
    }

    #[test]
    fn assumption1_boundary() {
        let t = build_topology(TopologyKind::FullyConnected, 4, &[2, 3]).unwrap();
        let r = validate_assumption1(&t, 0.45).unwrap();
        assert!(!r.passed());
        assert_eq!(r.violations.len(), 2);
        assert_abs_diff_eq!(r.violations[0].benign_ratio(), 0.5);
        let clean = build_topology(TopologyKind::Ring, 6, &[]).unwrap();
        for eps in [0.0, 0.2, 0.49] {
            assert!(validate_assumption1(&clean, eps).unwrap().passed());
        }
        assert!(validate_assumption1(&clean, 0.5).is_err());
    }

    #[test]
    fn assumption1_detects_disconnection() {
        // ring 0-1-2-3-4-5-0 with 0 and 3 malicious splits {1,2} from {4,5}
        let t = build_topology(TopologyKind::Ring, 6, &[0, 3]).unwrap();
        let r = validate_assumption1(&t, 0.49).unwrap();
        assert!(!r.benign_connected);
        assert!(!r.passed());
    }

    #[test]
    fn erdos_renyi_disconnect_is_an_error() {
        let err =
            build_topology(TopologyKind::ErdosRenyi { prob: 0.0, seed: 3 }, 5, &[]).unwrap_err();
        assert_eq!(err, Error::BenignDisconnected);
        let t = build_topology(TopologyKind::ErdosRenyi { prob: 1.0, seed: 3 }, 5, &[]).unwrap();
        assert_eq!(t.neighbors(2).len(), 5);
    }

    #[test]
    fn invalid_topologies() {
        assert!(build_topology(TopologyKind::Ring, 0, &[]).is_err());
        assert!(build_topology(TopologyKind::Ring, 3, &[3]).is_err());
        assert!(Topology::new(2, vec![true, true, false, true], vec![false; 2]).is_err());
        assert!(Topology::new(2, vec![false, false, false, true], vec![false; 2]).is_err());
    }

    #[test]
    fn reduced_matrix_examples() {
        let t = build_topology(TopologyKind::FullyConnected, 4, &[]).unwrap();
        let a = uniform_combination(&t);
        assert_eq!(benign_reduced_matrix(&a, &t).unwrap().matrix, a);

        let t = build_topology(TopologyKind::FullyConnected, 4, &[1]).unwrap();
        let r = benign_reduced_matrix(&uniform_combination(&t), &t).unwrap();
        assert_eq!(r.agents, vec![0, 2, 3]);
        for x in r.matrix.matrix().iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn reduced_matrix_ring_by_hand() {
        // ring of 5, agent 2 malicious; agents 1 and 3 lose one of three neighbors
        let t = build_topology(TopologyKind::Ring, 5, &[2]).unwrap();
        let r = benign_reduced_matrix(&uniform_combination(&t), &t).unwrap();
        assert_eq!(r.agents, vec![0, 1, 3, 4]);
        let m = r.matrix.matrix();
        for j in 0..4 {
            assert_abs_diff_eq!(m.column(j).sum(), 1.0, epsilon = 1e-15);
        }
        // column for agent 1: neighbors {0, 1} remain, each (1/3)/(2/3) = 1/2
        assert_abs_diff_eq!(m[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.5, epsilon = 1e-15);
        // column for agent 0: neighbors {4, 0, 1} all benign, 1/3 each
        assert_abs_diff_eq!(m[(3, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m[(2, 0)], 0.0);
    }

    #[test]
    fn reduced_matrix_empty_neighborhood() {
        let a =
            CombinationMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0])).unwrap();
        let t = build_topology(TopologyKind::FullyConnected, 2, &[1]).unwrap();
        assert_eq!(
            benign_reduced_matrix(&a, &t).unwrap_err(),
            Error::EmptyBenignNeighborhood { agent: 0 }
        );
    }

    #[test]
    fn perron_examples() {
        let t = build_topology(TopologyKind::FullyConnected, 6, &[5]).unwrap();
        let r = benign_reduced_matrix(&uniform_combination(&t), &t).unwrap();
        let p = perron_vector(&r.matrix).unwrap();
        for x in p.as_slice() {
            assert_abs_diff_eq!(*x, 0.2, epsilon = 1e-12);
        }
        let one = CombinationMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(perron_vector(&one).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn perron_rejects_non_primitive_input() {
        // bipartite {0} | {1, 2}: period two, uniform start oscillates forever
        let periodic = CombinationMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0],
        ))
        .unwrap();
        assert!(matches!(
            perron_vector(&periodic),
            Err(Error::PerronNotConverged { .. })
        ));
    }
}
