use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surveil_core::community::{infomap_partition, map_equation, nmi, Graph, InfomapOptions};
use surveil_core::features::{make_windows_by_index, FeatureCube, FeatureVector};
use surveil_core::kmeans::*;
use surveil_core::math::dist2;
use surveil_core::synth::{gaussian_blobs, planted_blocks};

const BLOBS: [[f64; 3]; 3] = [[-0.6, 0.2, -0.6], [0.6, 0.8, 0.6], [0.0, 0.2, 0.7]];

fn points_strategy() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 3..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_never_increases_and_ends_voronoi(points in points_strategy(), k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(points.len());
        let c = kmeans_fit(&points, k, &Init::Seed(seed), FitOptions { max_iter: 300, n_restarts: 1 }).unwrap();
        for w in c.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        prop_assert!((loss_of(&points, &c.labels, &c.centroids) - c.loss).abs() <= 1e-9);
        for (p, &l) in points.iter().zip(&c.labels) {
            let own = dist2(p, &c.centroids[l as usize]);
            for other in &c.centroids {
                prop_assert!(dist2(p, other) >= own - 1e-12);
            }
        }
    }

    #[test]
    fn elbow_ignores_point_order(points in points_strategy(), seed in any::<u64>(), shuffle in any::<u64>()) {
        let opts = FitOptions { max_iter: 100, n_restarts: 2 };
        let a = elbow_select(&points, 6, 0.05, seed, opts).unwrap();
        let mut shuffled = points.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let b = elbow_select(&shuffled, 6, 0.05, seed, opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabelling_preserves_loss(points in points_strategy(), seed in any::<u64>()) {
        let k = 3.min(points.len());
        let mut c = kmeans_fit(&points, k, &Init::Seed(seed), FitOptions::default()).unwrap();
        let before = c.loss;
        let map: Vec<u32> = (0..k as u32).rev().collect();
        c.relabel(&map);
        prop_assert!((loss_of(&points, &c.labels, &c.centroids) - before).abs() <= 1e-12);
    }
}

#[test]
fn restarts_reach_the_brute_force_optimum_most_of_the_time() {
    let mut good = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..30).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let best = (0..200u64)
            .map(|s| kmeans_fit(&pts, 3, &Init::Seed(s), FitOptions { max_iter: 300, n_restarts: 1 }).unwrap().loss)
            .fold(f64::INFINITY, f64::min);
        let fit = kmeans_fit(&pts, 3, &Init::Seed(seed + 1000), FitOptions::default()).unwrap();
        if fit.loss <= best + 1e-9 {
            good += 1;
        }
    }
    assert!(good >= 18, "{good}/20");
}

#[test]
fn elbow_finds_three_blobs() {
    let hits = (0..20u64)
        .filter(|&seed| {
            let (pts, _) = gaussian_blobs(seed, &BLOBS, 100, 0.08);
            elbow_select(&pts, 10, 0.05, seed, FitOptions::default()).unwrap().k == 3
        })
        .count();
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn permuted_replay_is_undone() {
    let k = 5;
    let ids: Vec<u32> = (0..50).collect();
    let labels: Vec<u32> = ids.iter().map(|&i| i % k as u32).collect();
    let prev = label_sets(&ids, &labels, k);
    let perm = [3u32, 0, 4, 1, 2];
    let shuffled: Vec<u32> = labels.iter().map(|&l| perm[l as usize]).collect();
    let a = align_labels(&prev, &label_sets(&ids, &shuffled, k)).unwrap();
    assert_eq!(a.perm, perm.to_vec());
    assert!(a.jaccard.iter().all(|&j| j == 1.0));
    let map = a.relabel_map();
    let restored: Vec<u32> = shuffled.iter().map(|&l| map[l as usize]).collect();
    assert_eq!(restored, labels);
}

/// Investors keep their blob across windows with small jitter.
fn stationary_cube(seed: u64, n_per: usize, windows: usize) -> FeatureCube {
    let grid = make_windows_by_index(windows * 5 + 15, 20, 5, 0, windows * 5 + 14).unwrap();
    let n = n_per * BLOBS.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    for _ in 0..grid.len() {
        for i in 0..n {
            let c = BLOBS[i / n_per];
            let j = |rng: &mut ChaCha8Rng| rng.random_range(-0.1..0.1);
            values.push(FeatureVector {
                turnover: c[0] + j(&mut rng),
                magnitudo: c[1] + j(&mut rng),
                exposure: c[2] + j(&mut rng),
                active: true,
            });
        }
    }
    FeatureCube {
        stock: 0,
        grid,
        n_investors: n,
        values,
    }
}

#[test]
fn stationary_population_keeps_its_labels() {
    let cube = stationary_cube(7, 40, 10);
    let tl = dynamic_cluster(&cube, 3, DynamicOptions::default()).unwrap();
    assert!(tl.gaps().is_empty());
    for w in 1..cube.grid.len() {
        let a = tl.get(w).unwrap().alignment.as_ref().unwrap();
        assert!(a.jaccard.iter().all(|&j| j >= 0.9), "window {w}: {:?}", a.jaccard);
    }
    for label in 0..3 {
        assert!(tl.max_displacement(label) < 0.1);
    }
}

#[test]
fn planted_blocks_are_recovered() {
    let mut good = 0;
    for seed in 0..10u64 {
        let (n, edges, truth) = planted_blocks(seed, 4, 25, 0.5, 0.01);
        let g = Graph::from_edges(n, edges);
        let p = infomap_partition(&g, InfomapOptions { seed, ..Default::default() });
        let found = p.module_vector();
        let truth_len = map_equation(&g, &truth);
        if nmi(&found, &truth) >= 0.9 && p.codelength <= truth_len * 1.01 {
            good += 1;
        }
    }
    assert!(good >= 9, "{good}/10");
}

#[test]
fn disjoint_cliques_are_exact() {
    let mut edges = Vec::new();
    for base in [0u32, 10] {
        for u in 0..10 {
            for v in u + 1..10 {
                edges.push((base + u, base + v, 1.0));
            }
        }
    }
    let g = Graph::from_edges(20, edges);
    for seed in 0..10 {
        let p = infomap_partition(&g, InfomapOptions { seed, ..Default::default() });
        assert_eq!(p.sizes, vec![10, 10]);
        assert_eq!(p.members(1), (0..10).collect::<Vec<u32>>());
    }
}
