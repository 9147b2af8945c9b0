use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surveil_core::bicm::{self, Biadjacency, FitOptions, TestCount, VmotifOptions};
use surveil_core::community::Partition;
use surveil_core::rings::{containment_matrix, seed_neighbors};
use surveil_core::stats::poisson_binomial_tail;
use surveil_core::svn::*;

fn random_states(rng: &mut ChaCha8Rng, n: usize, days: usize, rate: f64) -> StateMatrix {
    let rows = (0..n)
        .map(|_| {
            let mut row = Vec::new();
            for d in 0..days as u32 {
                if rng.random::<f64>() < rate {
                    row.push((d, State::ALL[rng.random_range(0..3)]));
                }
            }
            row
        })
        .collect();
    StateMatrix { theta: 0.01, n_days: days, rows }
}

/// Background of sparse random traders plus a ring buying together on
/// `ring_days` of the first days.
fn ring_states(seed: u64, n_bg: usize, days: usize, ring: usize, ring_days: usize) -> StateMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = random_states(&mut rng, n_bg, days, 0.1);
    for _ in 0..ring {
        s.rows.push((0..ring_days as u32).map(|d| (d * 3, State::Buy)).collect());
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_add_up_to_shared_active_days(seed in any::<u64>(), n in 2usize..25, days in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = random_states(&mut rng, n, days, 0.4);
        let g = project_traders(&states, 1.0);
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                let shared = (0..days).filter(|&d| states.state(i, d).is_some() && states.state(j, d).is_some()).count() as u32;
                let w: u32 = g.edges.iter().filter(|e| e.i == i && e.j == j).map(|e| e.weight).sum();
                prop_assert_eq!(w, shared);
            }
        }
        for e in &g.edges {
            let (q, r) = e.link.states();
            let ci = states.counts(e.i)[q.index()];
            let cj = states.counts(e.j)[r.index()];
            prop_assert_eq!(e.p_value.to_bits(), hypergeom_pvalue(days as u32, ci, cj, e.weight).unwrap().to_bits());
        }
    }

    #[test]
    fn bonferroni_inside_fdr_and_sweep_monotone(seed in any::<u64>()) {
        let states = ring_states(seed, 30, 60, 4, 12);
        let g = project_traders(&states, 0.05);
        let b = validate_edges(&g, Correction::Bonferroni, 0.01, 9).unwrap();
        let f = validate_edges(&g, Correction::Fdr, 0.01, 9).unwrap();
        for e in &b.edges {
            prop_assert!(f.edges.contains(e));
        }
        let curve = threshold_sweep(&g, &log_grid(1e-12, 0.05, 10), &[], |_| 0).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].edges <= w[1].edges);
        }
    }

    #[test]
    fn containment_columns_sum_to_one(a in prop::collection::vec(prop::option::of(1u32..4), 1..40), b in prop::collection::vec(1u32..5, 1..40)) {
        let part = |labels: Vec<Option<u32>>| {
            let nodes: Vec<u32> = (0..labels.len() as u32).filter(|&v| labels[v as usize].is_some()).collect();
            let mods: Vec<u32> = nodes.iter().map(|&v| labels[v as usize].unwrap()).collect();
            Partition::from_modules(labels.len(), &nodes, &mods, 0.0)
        };
        let pa = part(a);
        let pb = part(b.into_iter().map(Some).collect());
        let m = containment_matrix(&pa, &pb);
        for c in 0..m.col_clusters {
            let sum: f64 = m.values.iter().map(|row| row[c]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbourhoods_grow_with_depth(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                if rng.random::<f64>() < 0.1 {
                    edges.push(Edge { i, j, link: LinkType::BB, weight: 1, p_value: 0.0 });
                }
            }
        }
        let mut prev: Vec<u32> = Vec::new();
        for depth in 1..=3 {
            let (_, nb) = seed_neighbors(n, &edges, 0, depth).unwrap();
            let nodes: Vec<u32> = nb.iter().map(|x| x.node).collect();
            prop_assert!(prev.iter().all(|v| nodes.contains(v)));
            prev = nodes;
        }
    }

    #[test]
    fn layers_partition_active_cells(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = random_states(&mut rng, 15, 30, 0.5);
        let layers = bicm::split_tripartite(&states);
        for i in 0..15 {
            for d in 0..30 {
                let hits: Vec<usize> = (0..3).filter(|&q| layers[q].get(i, d)).collect();
                match states.state(i as u32, d) {
                    None => prop_assert!(hits.is_empty()),
                    Some(s) => prop_assert_eq!(hits, vec![s.index()]),
                }
            }
            let k: Vec<u32> = layers.iter().map(|l| l.row_degrees()[i]).collect();
            prop_assert_eq!(k, states.counts(i as u32).to_vec());
        }
    }
}

#[test]
fn planted_ring_survives_bonferroni() {
    let states = ring_states(1, 60, 60, 5, 15);
    let n = states.n_investors();
    let g = project_traders(&states, 0.01);
    let net = validate_edges(&g, Correction::Bonferroni, 0.01, 9).unwrap();
    let ring: Vec<u32> = (n as u32 - 5..n as u32).collect();
    let bb: Vec<&Edge> = net.edges.iter().filter(|e| e.link == LinkType::BB && ring.contains(&e.i) && ring.contains(&e.j)).collect();
    assert_eq!(bb.len(), 10);
}

#[test]
fn bicm_random_fits_are_tight_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let density = rng.random_range(0.05..0.6);
        let dense: Vec<Vec<bool>> = (0..50).map(|_| (0..100).map(|_| rng.random::<f64>() < density).collect()).collect();
        let adj = Biadjacency::from_dense(&dense);
        let m = bicm::bicm_fit(&adj, FitOptions::default()).unwrap();
        assert!(m.max_residual(&adj) <= 1e-6);
        for w in m.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs());
        }
        for i in 0..50 {
            for t in 0..100 {
                assert!((0.0..=1.0).contains(&m.p(i, t)));
            }
        }
    }
}

#[test]
fn vmotif_pvalues_match_the_direct_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states = random_states(&mut rng, 20, 40, 0.3);
    let layers = bicm::split_tripartite(&states);
    let models = bicm::fit_layers(&layers, FitOptions::default()).unwrap();
    let res = bicm::vmotif_validate(&layers, &models, VmotifOptions { ceiling: 1.0, tests: TestCount::Stacked, ..Default::default() }).unwrap();
    assert!(!res.candidates.edges.is_empty());
    for e in &res.candidates.edges {
        assert!(e.link.is_diagonal());
        let q = e.link.states().0.index();
        let m = &models[q];
        let probs: Vec<f64> = (0..40).map(|t| m.p(e.i as usize, t) * m.p(e.j as usize, t)).collect();
        let want = poisson_binomial_tail(&probs, e.weight as usize);
        assert!((e.p_value - want).abs() <= 1e-12, "{} vs {}", e.p_value, want);
        let shared = (0..40).filter(|&t| layers[q].get(e.i as usize, t) && layers[q].get(e.j as usize, t)).count();
        assert_eq!(shared as u32, e.weight);
    }
    assert_eq!(res.n_tests, 3.0 * 20.0 * 59.0 / 2.0);
}

/// Identical background traders: both nulls should single out the ring.
#[test]
fn homogeneous_toy_agrees_across_nulls() {
    let days = 80;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows: Vec<Vec<(u32, State)>> = (0..40)
        .map(|_| {
            let mut d: Vec<u32> = (0..days as u32).collect();
            rand::seq::SliceRandom::shuffle(&mut d[..], &mut rng);
            d.truncate(10);
            d.sort_unstable();
            d.into_iter().map(|d| (d, State::Buy)).collect()
        })
        .collect();
    for _ in 0..4 {
        rows.push((0..10u32).map(|d| (d * 7 + 3, State::Buy)).collect());
    }
    let states = StateMatrix { theta: 0.01, n_days: days, rows };
    let g = project_traders(&states, 0.01);
    let svn: Vec<(u32, u32)> = validate_edges(&g, Correction::Fdr, 0.01, 9)
        .unwrap()
        .diagonal()
        .edges
        .iter()
        .map(|e| (e.i, e.j))
        .collect();
    let layers = bicm::split_tripartite(&states);
    let models = bicm::fit_layers(&layers, FitOptions::default()).unwrap();
    let res = bicm::vmotif_validate(&layers, &models, VmotifOptions::default()).unwrap();
    let bicm: Vec<(u32, u32)> = res.validated.edges.iter().map(|e| (e.i, e.j)).collect();
    let ring: Vec<(u32, u32)> = (40..44u32).flat_map(|i| (i + 1..44).map(move |j| (i, j))).collect();
    assert_eq!(svn, ring);
    assert_eq!(bicm, ring);
}
