//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surveil::artifacts::Bundle;
use surveil::jobs::analyze;
use surveil::runs::{read_manifest, Pipeline, RunConfig};
use surveil_core::bicm::{bicm_fit, Biadjacency, FitOptions as BicmFit};
use surveil_core::community::{infomap_partition, map_equation, nmi, Graph, InfomapOptions};
use surveil_core::discontinuity::DiscontinuityClass;
use surveil_core::kmeans::{align_labels, elbow_select, kmeans_fit, label_sets, loss_of, FitOptions, Init, Point};
use surveil_core::math::dist2;
use surveil_core::pipeline::{network_input, run_bicm, run_kmeans, run_svn, BicmConfig, KmeansConfig, SvnConfig, SvnOutput};
use surveil_core::stats::{poisson_binomial_pmf, poisson_binomial_tail, HypergeomMemo, LogFactorials};
use surveil_core::svn::{bonferroni_threshold, hypergeom_pvalue};
use surveil_core::synth::{gaussian_blobs, generate, planted_blocks, Injection, InjectionKind, Scenario, ScenarioConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

fn bonferroni_value() -> Outcome {
    let th = bonferroni_threshold(4844, 0.01, 9).map_err(|e| e.to_string())?;
    let rel = (th / 9.47e-11 - 1.0).abs();
    check(rel <= 1e-3, format!("threshold {th:.4e}, relative error {rel:.1e}"))
}

/// Counts every pair of day subsets with the given sizes and overlap.
fn hypergeometric_exactness() -> Outcome {
    let lf = LogFactorials::new(30);
    let mut memo = HypergeomMemo::new();
    let (mut worst, mut cases) = (0.0f64, 0usize);
    for t in 1..=30u32 {
        for a in 0..=t {
            for b in 0..=t {
                let total = choose(t as u64, b as u64);
                let lo = (a + b).saturating_sub(t);
                for k in 0..=a.min(b) {
                    let num: u128 = (k.max(lo)..=a.min(b))
                        .map(|x| choose(a as u64, x as u64) * choose((t - a) as u64, (b - x) as u64))
                        .sum();
                    let want = num as f64 / total as f64;
                    let got = hypergeom_pvalue(t, a, b, k).map_err(|e| e.to_string())?;
                    let memoized = memo.sf(&lf, t, a, b, k).map_err(|e| e.to_string())?;
                    if memoized.to_bits() != got.to_bits() {
                        return Err(format!("memo differs at T={t} a={a} b={b} k={k}"));
                    }
                    worst = worst.max((got - want).abs());
                    cases += 1;
                }
            }
        }
    }
    check(worst <= 1e-12, format!("{cases} cases, max abs error {worst:.1e}"))
}

fn poisson_binomial_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 0..=20usize {
        for _ in 0..if n <= 12 { 20 } else { 3 } {
            let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut exact = vec![0.0; n + 1];
            for mask in 0u32..(1 << n) {
                let mut p = 1.0;
                for (i, &q) in probs.iter().enumerate() {
                    p *= if mask >> i & 1 == 1 { q } else { 1.0 - q };
                }
                exact[mask.count_ones() as usize] += p;
            }
            for (a, b) in poisson_binomial_pmf(&probs).iter().zip(&exact) {
                worst = worst.max((a - b).abs());
            }
            cases += 1;
        }
    }
    let mut binom_worst = 0.0f64;
    for n in 0..=40usize {
        for p in [0.0f64, 0.03, 0.25, 0.5, 0.77, 1.0] {
            let probs = vec![p; n];
            for k in 0..=n {
                let want: f64 = (k..=n)
                    .map(|j| choose(n as u64, j as u64) as f64 * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32))
                    .sum();
                binom_worst = binom_worst.max((poisson_binomial_tail(&probs, k) - want).abs());
            }
        }
    }
    check(
        worst <= 1e-12 && binom_worst <= 1e-12,
        format!("{cases} vectors up to T=20: max error {worst:.1e}; binomial max error {binom_worst:.1e}"),
    )
}

fn bicm_fit_quality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut decreases) = (0.0f64, 0);
    for _ in 0..100 {
        let density = rng.random_range(0.05..0.6);
        let dense: Vec<Vec<bool>> = (0..50).map(|_| (0..100).map(|_| rng.random::<f64>() < density).collect()).collect();
        let adj = Biadjacency::from_dense(&dense);
        let m = bicm_fit(&adj, BicmFit::default()).map_err(|e| e.to_string())?;
        worst = worst.max(m.max_residual(&adj));
        decreases += m.log_likelihood.windows(2).filter(|w| w[1] < w[0] - 1e-12 * w[0].abs()).count();
    }
    check(
        worst <= 1e-6 && decreases == 0,
        format!("100 fits, max degree residual {worst:.1e}, log-likelihood decreases {decreases}"),
    )
}

fn kmeans_behaviour() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut loss_up, mut voronoi) = (0, 0);
    for seed in 0..1000u64 {
        let n = rng.random_range(3..80);
        let pts: Vec<Point> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let k = rng.random_range(1..=6usize).min(n);
        let c = kmeans_fit(&pts, k, &Init::Seed(seed), FitOptions { max_iter: 300, n_restarts: 1 }).map_err(|e| e.to_string())?;
        if c.trace.windows(2).any(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)) || (loss_of(&pts, &c.labels, &c.centroids) - c.loss).abs() > 1e-9 {
            loss_up += 1;
        }
        let bad = pts.iter().zip(&c.labels).any(|(p, &l)| {
            let own = dist2(p, &c.centroids[l as usize]);
            c.centroids.iter().any(|o| dist2(p, o) < own - 1e-12)
        });
        voronoi += bad as usize;
    }
    let centres = [[-0.6, 0.2, -0.6], [0.6, 0.8, 0.6], [0.0, 0.2, 0.7]];
    let mut hits = 0;
    for seed in 0..100u64 {
        let (pts, _) = gaussian_blobs(seed, &centres, 100, 0.08);
        if elbow_select(&pts, 10, 0.05, seed, FitOptions::default()).map_err(|e| e.to_string())?.k == 3 {
            hits += 1;
        }
    }
    check(
        loss_up == 0 && voronoi == 0 && hits >= 95,
        format!("1000 instances: loss increases {loss_up}, Voronoi violations {voronoi}; elbow K=3 on {hits}/100"),
    )
}

fn permutations(n: usize) -> Vec<Vec<u32>> {
    fn go(prefix: &mut Vec<u32>, left: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let x = left.remove(i);
            prefix.push(x);
            go(prefix, left, out);
            prefix.pop();
            left.insert(i, x);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..n as u32).collect(), &mut out);
    out
}

fn label_alignment() -> Outcome {
    let k = 7;
    let ids: Vec<u32> = (0..140).collect();
    let labels: Vec<u32> = ids.iter().map(|&i| (i * 5 + i / 7) % k as u32).collect();
    let prev = label_sets(&ids, &labels, k);
    let perms = permutations(k);
    let mut failures = 0;
    for perm in &perms {
        let shuffled: Vec<u32> = labels.iter().map(|&l| perm[l as usize]).collect();
        let a = align_labels(&prev, &label_sets(&ids, &shuffled, k)).map_err(|e| e.to_string())?;
        let map = a.relabel_map();
        let inverse = (0..k).all(|l| map[perm[l] as usize] == l as u32);
        if &a.perm != perm || !inverse || a.jaccard.iter().any(|&j| j != 1.0) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{} permutations, {failures} failures", perms.len()))
}

fn map_equation_recovery() -> Outcome {
    let (mut nmi_ok, mut len_ok) = (0, 0);
    for seed in 0..50u64 {
        let (n, edges, truth) = planted_blocks(seed, 4, 25, 0.5, 0.01);
        let g = Graph::from_edges(n, edges);
        let p = infomap_partition(&g, InfomapOptions { seed, ..Default::default() });
        nmi_ok += (nmi(&p.module_vector(), &truth) >= 0.9) as usize;
        len_ok += (p.codelength <= map_equation(&g, &truth) * 1.01) as usize;
    }
    let mut edges = Vec::new();
    for base in [0u32, 10] {
        for u in 0..10 {
            for v in u + 1..10 {
                edges.push((base + u, base + v, 1.0));
            }
        }
    }
    let g = Graph::from_edges(20, edges);
    let cliques = (0..50u64)
        .filter(|&seed| {
            let p = infomap_partition(&g, InfomapOptions { seed, ..Default::default() });
            p.sizes == [10, 10] && p.members(1) == (0..10).collect::<Vec<u32>>() && p.members(2) == (10..20).collect::<Vec<u32>>()
        })
        .count();
    check(
        nmi_ok >= 45 && len_ok >= 45 && cliques == 50,
        format!("4-block: NMI>=0.9 on {nmi_ok}/50, codelength within 1% on {len_ok}/50; 10-cliques exact on {cliques}/50"),
    )
}

fn desk_scenario(seed: u64, injections: Vec<Injection>) -> Result<Scenario, String> {
    generate(&ScenarioConfig {
        seed,
        n_traders: 2_000,
        n_days: 250,
        injections,
        ..Default::default()
    })
    .map_err(|e| e.to_string())
}

fn planted_individuals() -> Outcome {
    let s = desk_scenario(21, vec![Injection::individuals(20, 4)])?;
    let (_, out) = run_kmeans(&s.panel, &s.pse, &KmeansConfig { seed: 21, ..Default::default() }).map_err(|e| e.to_string())?;
    let planted: BTreeSet<String> = s.truth.ids(InjectionKind::Individual).into_iter().collect();
    let hard = out
        .report
        .labels
        .iter()
        .filter(|l| l.in_rewarding_cluster && l.class == DiscontinuityClass::HardDiscontinuous)
        .filter(|l| planted.contains(&s.panel.investor(l.investor).id))
        .count();
    let cmp = &out.report.comparison;
    check(
        hard * 10 >= planted.len() * 9 && cmp.different_1 && cmp.tests.len() == out.k - 1,
        format!(
            "K={}, {hard}/{} planted traders hard discontinuous in the rewarding cluster, {} of {} nulls rejected at 1%",
            out.k,
            planted.len(),
            cmp.tests.iter().filter(|t| t.p_value < 0.01).count(),
            cmp.tests.len()
        ),
    )
}

fn svn_of(s: &Scenario, cfg: &SvnConfig) -> Result<(surveil_core::pipeline::NetworkInput, SvnOutput), String> {
    let input = network_input(&s.panel, &s.pse, cfg).map_err(|e| e.to_string())?;
    let out = run_svn(&input, &s.pse, cfg).map_err(|e| e.to_string())?;
    Ok((input, out))
}

fn ring_injections() -> Vec<Injection> {
    vec![Injection::ring(5, 14), Injection::ring(5, 12)]
}

fn planted_rings() -> Outcome {
    let s = desk_scenario(31, ring_injections())?;
    let (_, out) = svn_of(&s, &SvnConfig::default())?;
    let mut found = Vec::new();
    for ring in s.truth.rings() {
        let hit = out
            .bonferroni_clusters
            .dossiers
            .iter()
            .find(|d| d.flagged && ring.iter().all(|m| d.members.contains(m)) && d.mean_directionality.is_some_and(|r| r >= 0.9));
        found.push(hit.map(|d| format!("cluster {} ({} members, R_C {:.2})", d.cluster, d.member_count, d.mean_directionality.unwrap_or(0.0))));
    }
    let bg = desk_scenario(31, vec![])?;
    let (_, bg_out) = svn_of(&bg, &SvnConfig::default())?;
    let flagged = bg_out.bonferroni_clusters.suspects.flagged_traders;
    let rate = flagged as f64 / 2_000.0;
    check(
        found.iter().all(Option::is_some) && rate <= 0.01,
        format!(
            "rings in {}; background-only flags {flagged}/2000 traders",
            found.iter().map(|f| f.clone().unwrap_or_else(|| "none".into())).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn correction_ordering() -> Outcome {
    let cfg = SvnConfig {
        sweep: Some(Default::default()),
        ..Default::default()
    };
    let mut panels = 0;
    for seed in 0..6u64 {
        let injections = match seed % 3 {
            0 => ring_injections(),
            1 => vec![Injection::individuals(10, 4), Injection::ring(5, 12)],
            _ => vec![],
        };
        let s = generate(&ScenarioConfig {
            seed: 100 + seed,
            n_traders: 1_000 + 200 * seed as usize,
            n_days: 150 + 20 * seed as usize,
            injections,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let (_, out) = svn_of(&s, &cfg)?;
        let key = |e: &surveil_core::svn::Edge| (e.i, e.j, e.link);
        let fdr: BTreeSet<_> = out.fdr.edges.iter().map(key).collect();
        if !out.bonferroni.edges.iter().all(|e| fdr.contains(&key(e))) {
            return Err(format!("seed {seed}: a Bonferroni edge is missing from FDR"));
        }
        let sweep = out.sweep.as_ref().ok_or("no sweep")?;
        if sweep.points.windows(2).any(|w| w[0].threshold > w[1].threshold || w[0].edges > w[1].edges) {
            return Err(format!("seed {seed}: sweep edge counts decrease"));
        }
        panels += 1;
    }
    Ok(format!("{panels} generated panels: Bonferroni edges inside FDR, sweep counts non-decreasing"))
}

fn bicm_agreement() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [41u64, 42, 43] {
        let s = desk_scenario(seed, ring_injections())?;
        let svn_cfg = SvnConfig::default();
        let (input, out) = svn_of(&s, &svn_cfg)?;
        let part = &out.primary().partition;
        let b = run_bicm(&input, &s.pse, &BicmConfig::default(), &svn_cfg, Some(part)).map_err(|e| e.to_string())?;
        let cmp = b.comparison.as_ref().ok_or("no comparison")?;
        for ring in s.truth.rings() {
            let node = input.panel.investor_index(&ring[0]).ok_or("ring member dropped")?;
            let j = part.clusters[node as usize].and_then(|c| cmp.partner_of(c)).map_or(0.0, |m| m.jaccard);
            ok &= j >= 0.8;
            lines.push(format!("{j:.2}"));
        }
    }
    check(ok, format!("ring-cluster Jaccard across nulls on 3 panels: {}", lines.join(", ")))
}

fn svn_bundle(s: &Scenario, cfg: &RunConfig) -> Result<Bundle, String> {
    analyze(Pipeline::Svn, &s.panel, &s.pse, Some(&s.truth), cfg).map(|o| o.bundle).map_err(|e| e.to_string())
}

fn determinism_and_scale() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.seed = 9;
    cfg.scenario.n_traders = 5_000;
    cfg.scenario.n_days = 540;
    cfg.scenario.injections = ring_injections();
    let cfg = cfg.resolved();
    let s = generate(&cfg.scenario).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for workers in [1usize, 8, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| e.to_string())?;
        let t = Instant::now();
        let bundle = pool.install(|| svn_bundle(&s, &cfg))?;
        runs.push((workers, t.elapsed().as_secs_f64(), bundle));
    }
    let same = runs.iter().all(|r| r.2 == runs[0].2);
    let slowest = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    check(
        same && slowest <= 300.0,
        format!(
            "N=5000 T=540, {} artifacts; {}; byte-identical: {same}; host cores {}",
            runs[0].2.len(),
            runs.iter().map(|(w, t, _)| format!("{w} workers {t:.1}s")).collect::<Vec<_>>().join(", "),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn cli_equivalence() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let demo = root.join("configs/demo.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("runs");
    let cli = |args: &[&str]| -> Result<std::path::PathBuf, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_surveil"))
            .args(args)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        Ok(String::from_utf8_lossy(&o.stdout).trim().into())
    };
    let demo_s = demo.to_str().ok_or("path")?;
    let synth = cli(&["synth", "--config", demo_s])?;
    let synth_dir = synth.parent().ok_or("manifest path")?;
    let full = cli(&["full", "--config", demo_s, "--run", synth_dir.to_str().ok_or("path")?])?;
    let full_dir = full.parent().ok_or("manifest path")?;

    let cfg = RunConfig::load(&demo).map_err(|e| e.to_string())?.resolved();
    let s = generate(&cfg.scenario).map_err(|e| e.to_string())?;
    let mut lib: Bundle = surveil::jobs::synthesize(&cfg).map_err(|e| e.to_string())?.bundle;
    let mut mismatched = Vec::new();
    for (rel, bytes) in &lib {
        if std::fs::read(synth_dir.join(rel)).ok().as_ref() != Some(bytes) {
            mismatched.push(format!("synth:{rel}"));
        }
    }
    let n_synth = lib.len();
    lib = analyze(Pipeline::Full, &s.panel, &s.pse, Some(&s.truth), &cfg).map_err(|e| e.to_string())?.bundle;
    for (rel, bytes) in &lib {
        if std::fs::read(full_dir.join(rel)).ok().as_ref() != Some(bytes) {
            mismatched.push(format!("full:{rel}"));
        }
    }
    let listed = read_manifest(full_dir).map_err(|e| e.to_string())?.artifacts.len();
    check(
        mismatched.is_empty() && listed == lib.len(),
        format!("{} synth and {} full artifacts compared; mismatches: {:?}", n_synth, lib.len(), mismatched),
    )
}

fn main() {
    let criteria: &[(&str, fn() -> Outcome)] = &[
        ("bonferroni threshold", bonferroni_value),
        ("hypergeometric exactness", hypergeometric_exactness),
        ("poisson-binomial exactness", poisson_binomial_exactness),
        ("bicm fit", bicm_fit_quality),
        ("k-means loss, voronoi and elbow", kmeans_behaviour),
        ("dynamic label alignment", label_alignment),
        ("map-equation optimizer", map_equation_recovery),
        ("planted individual insiders", planted_individuals),
        ("planted rings", planted_rings),
        ("correction ordering", correction_ordering),
        ("bicm vs svn agreement", bicm_agreement),
        ("determinism and scale", determinism_and_scale),
        ("cli/library equivalence", cli_equivalence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS {name} [{secs:.1}s]: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name} [{secs:.1}s]: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
