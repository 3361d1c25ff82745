mod common;

use common::gcn_error;
use proptest::prelude::*;
use s2g::grad::{Rng, Tape};
use s2g::kg::{
    build_default_kg, gcn_layers, normalize_adjacency, KGraph, KgNodeKind, KnowledgeGraph,
};
use s2g::optree::FormulaRegistry;

fn random_graph(rng: &mut Rng, n: usize) -> KGraph {
    let mut g = KGraph::new();
    for i in 0..n {
        g.add_node(&format!("v{i}"), KgNodeKind::Quantity).unwrap();
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(0.4) {
                g.add_edge(i, j).unwrap();
            }
        }
    }
    g
}

fn random_perm(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

#[test]
fn a_hat_of_a_path_matches_hand_values() {
    // Path 0-1-2: degrees with self loops are 2, 3, 2.
    let a = [0., 1., 0., 1., 0., 1., 0., 1., 0.];
    let m = normalize_adjacency(&a, 3);
    let s6 = 6f64.sqrt();
    let want = [0.5, 1. / s6, 0., 1. / s6, 1. / 3., 1. / s6, 0., 1. / s6, 0.5];
    for (x, y) in m.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn a_hat_is_symmetric_with_unit_spectral_bound() {
    let mut rng = Rng::new(4);
    for _ in 0..30 {
        let n = 2 + rng.index(12);
        let g = random_graph(&mut rng, n);
        let m = normalize_adjacency(&g.adjacency(), n);
        for i in 0..n {
            for j in 0..n {
                assert!((m[i * n + j] - m[j * n + i]).abs() < 1e-12);
            }
        }
        // The leading eigenvector of Â is D^1/2 · 1 with eigenvalue 1.
        let d: Vec<f64> = (0..n).map(|i| (g.degree(i) as f64 + 1.0).sqrt()).collect();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| m[i * n + j] * d[j]).sum();
            assert!((row - d[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn every_formula_argument_is_bound() {
    let reg = FormulaRegistry::default_geometry();
    let (g, b) = build_default_kg(&reg);
    let total: usize = reg.iter().map(|(_, d)| d.arity).sum();
    assert_eq!(b.len(), total);
    let resolved = b.resolve(&reg).unwrap();
    for ((_, def), nodes) in reg.iter().zip(&resolved) {
        assert_eq!(nodes.len(), def.arity);
        for &n in nodes {
            assert_ne!(n, g.null_node());
            assert_eq!(g.nodes()[n].kind, KgNodeKind::Quantity);
        }
    }
    g.check().unwrap();
}

#[test]
fn file_round_trip_preserves_graph() {
    let reg = FormulaRegistry::default_geometry();
    let kg = KnowledgeGraph::default_for(&reg);
    let back = KnowledgeGraph::from_json(&kg.to_json(&reg), &reg).unwrap();
    assert_eq!(back, kg);
}

#[test]
fn gcn_gradients_match_finite_differences() {
    for seed in 0..10 {
        let err = gcn_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn gcn_value(a_hat: &[f64], n: usize, x: &[f64], w0: &[f64], w1: &[f64], d: usize) -> Vec<f64> {
    let mut t = Tape::new();
    let x = t.input(x.to_vec(), n, d);
    let w0 = t.input(w0.to_vec(), d, d);
    let w1 = t.input(w1.to_vec(), d, d);
    let z = gcn_layers(&mut t, a_hat, n, x, w0, w1).unwrap();
    t.value(z).to_vec()
}

proptest! {
    #[test]
    fn relabelling_nodes_permutes_a_hat(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = Rng::new(seed);
        let g = random_graph(&mut rng, n);
        let perm = random_perm(&mut rng, n);
        let m = normalize_adjacency(&g.adjacency(), n);
        let p = normalize_adjacency(&g.permuted(&perm).adjacency(), n);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((m[i * n + j] - p[perm[i] * n + perm[j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..10, d in 1usize..6) {
        let mut rng = Rng::new(seed);
        let g = random_graph(&mut rng, n);
        let perm = random_perm(&mut rng, n);
        let x: Vec<f64> = (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w0: Vec<f64> = (0..d * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w1: Vec<f64> = (0..d * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut px = vec![0.0; n * d];
        for i in 0..n {
            px[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(&x[i * d..(i + 1) * d]);
        }
        let z = gcn_value(&normalize_adjacency(&g.adjacency(), n), n, &x, &w0, &w1, d);
        let pz = gcn_value(&normalize_adjacency(&g.permuted(&perm).adjacency(), n), n, &px, &w0, &w1, d);
        for i in 0..n {
            for k in 0..d {
                prop_assert!((z[i * d + k] - pz[perm[i] * d + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn permuted_binding_follows_nodes(seed in any::<u64>()) {
        let reg = FormulaRegistry::default_geometry();
        let (g, b) = build_default_kg(&reg);
        let perm = random_perm(&mut Rng::new(seed), g.len());
        let pg = g.permuted(&perm);
        let pb = b.permuted(&perm);
        for (_, def) in reg.iter() {
            for arg in 0..def.arity {
                let old = b.get(&def.name, arg).unwrap();
                let new = pb.get(&def.name, arg).unwrap();
                prop_assert_eq!(new, perm[old]);
                prop_assert_eq!(&pg.nodes()[new].name, &g.nodes()[old].name);
            }
        }
    }
}
