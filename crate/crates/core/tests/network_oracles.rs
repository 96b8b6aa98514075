use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use robdiff_core::{
    benign_reduced_matrix, build_topology, perron_vector, uniform_combination,
    validate_assumption1, CombinationMatrix, Topology, TopologyKind,
};

/// Solves `(A − I) p = 0`, `𝟙ᵀp = 1` with a dense LU factorization.
fn dense_perron(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut sys = a - DMatrix::identity(n, n);
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    sys.lu().solve(&rhs).expect("nonsingular")
}

fn chain(n: usize) -> Topology {
    let mut adj = vec![false; n * n];
    for k in 0..n {
        adj[k * n + k] = true;
        if k + 1 < n {
            adj[k * n + k + 1] = true;
            adj[(k + 1) * n + k] = true;
        }
    }
    Topology::new(n, adj, vec![false; n]).unwrap()
}

#[test]
fn chain_perron_matches_dense_solve() {
    let t = chain(3);
    let a = uniform_combination(&t);
    let p = perron_vector(&a).unwrap();
    let oracle = dense_perron(a.matrix());
    // degree-proportional for uniform weights on an undirected graph
    let closed = [2.0 / 7.0, 3.0 / 7.0, 2.0 / 7.0];
    for k in 0..3 {
        assert!((p.as_slice()[k] - oracle[k]).abs() < 1e-8);
        assert!((oracle[k] - closed[k]).abs() < 1e-12);
    }
}

#[test]
fn random_graph_perron_matches_dense_solve() {
    for seed in 0..10 {
        let t = build_topology(TopologyKind::ErdosRenyi { prob: 0.3, seed }, 20, &[]).unwrap();
        let a = uniform_combination(&t);
        let p = perron_vector(&a).unwrap();
        let oracle = dense_perron(a.matrix());
        for k in 0..20 {
            assert!(
                (p.as_slice()[k] - oracle[k]).abs() < 1e-8,
                "seed {seed} agent {k}"
            );
        }
    }
}

#[test]
fn perron_of_a_non_uniform_matrix() {
    let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.5, 0.3, 0.6, 0.0, 0.5, 0.4]);
    let c = CombinationMatrix::new(a.clone()).unwrap();
    let p = perron_vector(&c).unwrap();
    let oracle = dense_perron(&a);
    for k in 0..3 {
        assert!((p.as_slice()[k] - oracle[k]).abs() < 1e-8);
    }
}

#[test]
fn relabeling_permutes_the_perron_vector() {
    let t = build_topology(TopologyKind::ErdosRenyi { prob: 0.4, seed: 3 }, 12, &[]).unwrap();
    let a = uniform_combination(&t);
    let perm: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
    let pa = DMatrix::from_fn(12, 12, |i, j| a.matrix()[(perm[i], perm[j])]);
    let p = perron_vector(&a).unwrap();
    let q = perron_vector(&CombinationMatrix::new(pa).unwrap()).unwrap();
    for (i, &j) in perm.iter().enumerate() {
        assert!((q.as_slice()[i] - p.as_slice()[j]).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn combination_matrices_are_left_stochastic(
        seed in any::<u64>(),
        n in 4usize..24,
        prob in 0.3..1.0f64,
        mal in prop::collection::vec(any::<bool>(), 24),
    ) {
        let malicious: Vec<usize> = (0..n).filter(|&k| mal[k] && k % 3 == 0).collect();
        let Ok(t) = build_topology(TopologyKind::ErdosRenyi { prob, seed }, n, &malicious) else {
            return Ok(());
        };
        let a = uniform_combination(&t);
        for k in 0..n {
            let s: f64 = a.matrix().column(k).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(a.matrix().column(k).iter().all(|&x| x >= 0.0));
        }
        if let Ok(r) = benign_reduced_matrix(&a, &t) {
            for j in 0..r.agents.len() {
                let s: f64 = r.matrix.matrix().column(j).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assumption1_is_monotone_in_epsilon(
        n in 4usize..20,
        mal in prop::collection::vec(any::<bool>(), 20),
        e1 in 0.0..0.5f64,
        e2 in 0.0..0.5f64,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let malicious: Vec<usize> = (0..n).filter(|&k| mal[k]).collect();
        prop_assume!(malicious.len() < n);
        let t = build_topology(TopologyKind::FullyConnected, n, &malicious).unwrap();
        let r_lo = validate_assumption1(&t, lo).unwrap();
        let r_hi = validate_assumption1(&t, hi).unwrap();
        prop_assert!(r_hi.violations.len() <= r_lo.violations.len());
        if r_lo.passed() {
            prop_assert!(r_hi.passed());
        }
    }
}
