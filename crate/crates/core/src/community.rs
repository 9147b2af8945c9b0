//! Two-level map equation, a greedy move-and-aggregate optimizer and
//! hypergeometric over/under-expression of node attributes in clusters.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::math::{log2, plogp};
use crate::stats::{fdr_threshold, Hypergeometric, LogFactorials};
use crate::svn::Correction;
use crate::{Error, Result};

/// Accepted moves must lower the codelength by more than this.
const MIN_GAIN: f64 = 1e-10;

/// Undirected weighted graph; parallel edges are summed, self loops ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adj: Vec<Vec<(u32, f64)>>,
    strength: Vec<f64>,
    total: f64,
}

impl Graph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (u, v, w) in edges {
            if u == v || w <= 0.0 {
                continue;
            }
            adj[u as usize].push((v, w));
            adj[v as usize].push((u, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(list.len());
            for &(v, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == v => last.1 += w,
                    _ => merged.push((v, w)),
                }
            }
            *list = merged;
        }
        let strength: Vec<f64> = adj.iter().map(|l| l.iter().map(|&(_, w)| w).sum()).collect();
        let total = strength.iter().sum();
        Self { adj, strength, total }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: u32) -> &[(u32, f64)] {
        &self.adj[v as usize]
    }

    pub fn strength(&self, v: u32) -> f64 {
        self.strength[v as usize]
    }

    /// Nodes with at least one edge.
    pub fn non_isolated(&self) -> Vec<u32> {
        (0..self.adj.len() as u32).filter(|&v| !self.adj[v as usize].is_empty()).collect()
    }
}

/// Codelength in bits of the two-level map equation for a module
/// assignment of every node (isolated nodes carry no flow and are ignored).
pub fn map_equation(graph: &Graph, modules: &[u32]) -> f64 {
    if graph.total <= 0.0 {
        return 0.0;
    }
    let n_mod = modules.iter().map(|&m| m as usize + 1).max().unwrap_or(0);
    let mut exit = vec![0.0; n_mod];
    let mut flow = vec![0.0; n_mod];
    let mut node_entropy = 0.0;
    for v in 0..graph.n_nodes() {
        let p = graph.strength[v] / graph.total;
        node_entropy += plogp(p);
        let m = modules[v] as usize;
        flow[m] += p;
        for &(u, w) in &graph.adj[v] {
            if modules[u as usize] as usize != m {
                exit[m] += w / graph.total;
            }
        }
    }
    codelength(&exit, &flow, node_entropy)
}

fn codelength(exit: &[f64], flow: &[f64], node_entropy: f64) -> f64 {
    let q: f64 = exit.iter().sum();
    let mut l = plogp(q) - node_entropy;
    for (&e, &p) in exit.iter().zip(flow) {
        l += plogp(e + p) - 2.0 * plogp(e);
    }
    l
}

/// A partition of the non-isolated nodes. Cluster ids run from 1 and are
/// ordered by size (descending), then by smallest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Per node, `None` for isolated nodes.
    pub clusters: Vec<Option<u32>>,
    pub sizes: Vec<usize>,
    pub codelength: f64,
}

impl Partition {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Members of cluster `id` (1-based), ascending.
    pub fn members(&self, id: u32) -> Vec<u32> {
        (0..self.clusters.len() as u32)
            .filter(|&v| self.clusters[v as usize] == Some(id))
            .collect()
    }

    pub fn all_members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (v, c) in self.clusters.iter().enumerate() {
            if let Some(c) = c {
                out[*c as usize - 1].push(v as u32);
            }
        }
        out
    }

    /// Canonicalises an arbitrary module assignment of `nodes`.
    pub fn from_modules(n: usize, nodes: &[u32], modules: &[u32], codelength: f64) -> Self {
        let n_mod = modules.iter().map(|&m| m as usize + 1).max().unwrap_or(0);
        let mut size = vec![0usize; n_mod];
        let mut first = vec![u32::MAX; n_mod];
        for (&v, &m) in nodes.iter().zip(modules) {
            size[m as usize] += 1;
            first[m as usize] = first[m as usize].min(v);
        }
        let mut order: Vec<usize> = (0..n_mod).filter(|&m| size[m] > 0).collect();
        order.sort_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])));
        let mut id = vec![0u32; n_mod];
        for (rank, &m) in order.iter().enumerate() {
            id[m] = rank as u32 + 1;
        }
        let mut clusters = vec![None; n];
        for (&v, &m) in nodes.iter().zip(modules) {
            clusters[v as usize] = Some(id[m as usize]);
        }
        Self {
            clusters,
            sizes: order.iter().map(|&m| size[m]).collect(),
            codelength,
        }
    }

    /// Module vector over all nodes for [`map_equation`]; isolated nodes
    /// share an extra module, which carries no flow.
    pub fn module_vector(&self) -> Vec<u32> {
        let extra = self.sizes.len() as u32;
        self.clusters.iter().map(|c| c.map_or(extra, |c| c - 1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfomapOptions {
    pub seed: u64,
    /// Independent restarts; the lowest codelength wins.
    pub trials: usize,
    /// Fine-tune and re-aggregate rounds per trial.
    pub outer_iterations: usize,
}

impl Default for InfomapOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 4,
            outer_iterations: 10,
        }
    }
}

/// One accepted node move: the predicted codelength change and the module
/// of every original node right after the move.
pub struct MoveEvent<'a> {
    pub delta: f64,
    pub modules: &'a [u32],
}

/// Minimises the map equation; isolated nodes are left out.
pub fn infomap_partition(graph: &Graph, opts: InfomapOptions) -> Partition {
    let nodes = graph.non_isolated();
    if nodes.is_empty() {
        return Partition::from_modules(graph.n_nodes(), &[], &[], 0.0);
    }
    let runs = exec::map_indexed(opts.trials.max(1), |t| optimize(graph, opts, t as u64, &mut |_| {}));
    let mut best: Option<(f64, Vec<u32>)> = None;
    for (l, m) in runs {
        if best.as_ref().map_or(true, |b| l < b.0) {
            best = Some((l, m));
        }
    }
    finish(graph, &nodes, best.expect("one trial"))
}

/// Single-trial variant that reports every accepted move.
pub fn infomap_partition_observed(graph: &Graph, opts: InfomapOptions, observer: &mut dyn FnMut(MoveEvent<'_>)) -> Partition {
    let nodes = graph.non_isolated();
    if nodes.is_empty() {
        return Partition::from_modules(graph.n_nodes(), &[], &[], 0.0);
    }
    let run = optimize(graph, opts, 0, observer);
    finish(graph, &nodes, run)
}

fn finish(graph: &Graph, nodes: &[u32], (_, modules): (f64, Vec<u32>)) -> Partition {
    let sub: Vec<u32> = nodes.iter().map(|&v| modules[v as usize]).collect();
    let mut p = Partition::from_modules(graph.n_nodes(), nodes, &sub, 0.0);
    p.codelength = map_equation(graph, &p.module_vector());
    p
}

/// Aggregated view of the graph: each node stands for a set of original
/// nodes.
struct Level {
    flow: Vec<f64>,
    /// Flow on links leaving the node, normalised by total strength.
    out: Vec<f64>,
    adj: Vec<Vec<(u32, f64)>>,
}

impl Level {
    fn leaf(graph: &Graph) -> Self {
        let s = graph.total;
        Self {
            flow: graph.strength.iter().map(|&d| d / s).collect(),
            out: graph.strength.iter().map(|&d| d / s).collect(),
            adj: graph
                .adj
                .iter()
                .map(|l| l.iter().map(|&(v, w)| (v, w / s)).collect())
                .collect(),
        }
    }

    fn n(&self) -> usize {
        self.flow.len()
    }

    /// Collapses nodes sharing a module (modules must be dense).
    fn aggregate(&self, modules: &[u32], n_mod: usize) -> Self {
        let mut flow = vec![0.0; n_mod];
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_mod];
        for v in 0..self.n() {
            let m = modules[v] as usize;
            flow[m] += self.flow[v];
            for &(u, w) in &self.adj[v] {
                let mu = modules[u as usize];
                if mu as usize != m {
                    adj[m].push((mu, w));
                }
            }
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(list.len());
            for &(v, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == v => last.1 += w,
                    _ => merged.push((v, w)),
                }
            }
            *list = merged;
        }
        let out = adj.iter().map(|l| l.iter().map(|&(_, w)| w).sum()).collect();
        Self { flow, out, adj }
    }
}

struct Optimizer<'o> {
    observer: &'o mut dyn FnMut(MoveEvent<'_>),
    leaf_modules: Vec<u32>,
}

fn dense(modules: &mut [u32]) -> usize {
    let n = modules.len();
    let mut map = vec![u32::MAX; n.max(1) + modules.iter().map(|&m| m as usize + 1).max().unwrap_or(0)];
    let mut next = 0u32;
    for m in modules.iter_mut() {
        let slot = &mut map[*m as usize];
        if *slot == u32::MAX {
            *slot = next;
            next += 1;
        }
        *m = *slot;
    }
    next as usize
}

fn optimize(graph: &Graph, opts: InfomapOptions, trial: u64, observer: &mut dyn FnMut(MoveEvent<'_>)) -> (f64, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(trial);
    let leaf = Level::leaf(graph);
    let mut opt = Optimizer {
        observer,
        leaf_modules: (0..graph.n_nodes() as u32).collect(),
    };

    opt.coarsen(&leaf, &mut rng);
    let mut best = map_equation(graph, &opt.leaf_modules);
    for _ in 0..opts.outer_iterations {
        let mut modules = opt.leaf_modules.clone();
        dense(&mut modules);
        let leaf_map: Vec<u32> = (0..graph.n_nodes() as u32).collect();
        opt.local_moves(&leaf, &mut modules, &leaf_map, &mut rng);
        opt.leaf_modules = modules;
        opt.coarsen(&leaf, &mut rng);
        let l = map_equation(graph, &opt.leaf_modules);
        if l > best - MIN_GAIN {
            best = best.min(l);
            break;
        }
        best = l;
    }
    (best, opt.leaf_modules)
}

impl Optimizer<'_> {
    /// Repeatedly aggregates the current leaf modules and merges them with
    /// node moves until nothing moves.
    fn coarsen(&mut self, leaf: &Level, rng: &mut ChaCha8Rng) {
        let n_mod = dense(&mut self.leaf_modules);
        let mut level = leaf.aggregate(&self.leaf_modules, n_mod);
        // leaf node -> node of `level`
        let mut leaf_map = self.leaf_modules.clone();
        loop {
            let mut modules: Vec<u32> = (0..level.n() as u32).collect();
            if !self.local_moves(&level, &mut modules, &leaf_map, rng) {
                break;
            }
            let n_mod = dense(&mut modules);
            for m in leaf_map.iter_mut() {
                *m = modules[*m as usize];
            }
            self.leaf_modules = leaf_map.clone();
            level = level.aggregate(&modules, n_mod);
        }
    }

    /// Greedy node moves on `level`; returns whether anything moved.
    fn local_moves(&mut self, level: &Level, modules: &mut [u32], leaf_map: &[u32], rng: &mut ChaCha8Rng) -> bool {
        let n = level.n();
        let n_mod = modules.iter().map(|&m| m as usize + 1).max().unwrap_or(0).max(n);
        let mut exit = vec![0.0; n_mod];
        let mut flow = vec![0.0; n_mod];
        let mut size = vec![0usize; n_mod];
        for v in 0..n {
            let m = modules[v] as usize;
            flow[m] += level.flow[v];
            size[m] += 1;
            for &(u, w) in &level.adj[v] {
                if modules[u as usize] as usize != m {
                    exit[m] += w;
                }
            }
        }
        let mut total_exit: f64 = exit.iter().sum();
        let mut link = vec![0.0; n_mod];
        let mut touched: Vec<usize> = Vec::new();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut any = false;

        loop {
            order.shuffle(rng);
            let mut moved = false;
            for &v in &order {
                let v = v as usize;
                let a = modules[v] as usize;
                for &(u, w) in &level.adj[v] {
                    let m = modules[u as usize] as usize;
                    if link[m] == 0.0 {
                        touched.push(m);
                    }
                    link[m] += w;
                }
                let e_v = level.out[v];
                let p_v = level.flow[v];
                let f_a = link[a];
                let qa_new = exit[a] - e_v + 2.0 * f_a;
                let pa_new = flow[a] - p_v;
                let base = |qa: f64, pa: f64, qb: f64, pb: f64, q: f64| {
                    plogp(q) - 2.0 * (plogp(qa) + plogp(qb)) + plogp(qa + pa) + plogp(qb + pb)
                };
                let mut best = a;
                let mut best_delta = 0.0;
                for &b in &touched {
                    if b == a {
                        continue;
                    }
                    let qb_new = exit[b] + e_v - 2.0 * link[b];
                    let pb_new = flow[b] + p_v;
                    let q_new = total_exit - exit[a] - exit[b] + qa_new + qb_new;
                    let delta = base(qa_new.max(0.0), pa_new, qb_new.max(0.0), pb_new, q_new.max(0.0))
                        - base(exit[a], flow[a], exit[b], flow[b], total_exit);
                    if delta < best_delta {
                        best_delta = delta;
                        best = b;
                    }
                }
                if best != a && best_delta < -MIN_GAIN {
                    let qb_new = exit[best] + e_v - 2.0 * link[best];
                    total_exit += qa_new + qb_new - exit[a] - exit[best];
                    exit[a] = qa_new.max(0.0);
                    exit[best] = qb_new.max(0.0);
                    flow[a] = pa_new;
                    flow[best] += p_v;
                    size[a] -= 1;
                    size[best] += 1;
                    modules[v] = best as u32;
                    moved = true;
                    any = true;
                    self.notify(best_delta, modules, leaf_map);
                }
                for &m in &touched {
                    link[m] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                return any;
            }
        }
    }

    fn notify(&mut self, delta: f64, modules: &[u32], leaf_map: &[u32]) {
        let leaf: Vec<u32> = leaf_map.iter().map(|&m| modules[m as usize]).collect();
        (self.observer)(MoveEvent {
            delta,
            modules: &leaf,
        });
    }
}

/// Normalised mutual information `2 I(A; B) / (H(A) + H(B))`; 1 when both
/// labelings are constant.
pub fn nmi(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let ka = a.iter().map(|&x| x as usize + 1).max().unwrap_or(0);
    let kb = b.iter().map(|&x| x as usize + 1).max().unwrap_or(0);
    let mut joint = vec![0.0; ka * kb];
    let mut pa = vec![0.0; ka];
    let mut pb = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x as usize * kb + y as usize] += 1.0 / n;
        pa[x as usize] += 1.0 / n;
        pb[y as usize] += 1.0 / n;
    }
    let ha: f64 = -pa.iter().map(|&p| plogp(p)).sum::<f64>();
    let hb: f64 = -pb.iter().map(|&p| plogp(p)).sum::<f64>();
    if ha + hb <= 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let p = joint[x * kb + y];
            if p > 0.0 {
                mi += p * log2(p / (pa[x] * pb[y]));
            }
        }
    }
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

/// Over-expression p-value `P(X >= n_cq)` with `X ~ H(n_v, n_c, n_q)`.
pub fn over_expression_pvalue(lf: &LogFactorials, n_v: u32, n_c: u32, n_q: u32, n_cq: u32) -> Result<f64> {
    enrichment_check(n_v, n_c, n_q, n_cq)?;
    Ok(Hypergeometric::new(n_v, n_c, n_q)?.sf(lf, n_cq))
}

/// Under-expression p-value `P(X <= n_cq)`.
pub fn under_expression_pvalue(lf: &LogFactorials, n_v: u32, n_c: u32, n_q: u32, n_cq: u32) -> Result<f64> {
    enrichment_check(n_v, n_c, n_q, n_cq)?;
    Ok(Hypergeometric::new(n_v, n_c, n_q)?.cdf(lf, n_cq))
}

fn enrichment_check(n_v: u32, n_c: u32, n_q: u32, n_cq: u32) -> Result<()> {
    if n_cq > n_c.min(n_q) || n_c.max(n_q) > n_v {
        return Err(Error::Precondition(alloc::format!(
            "enrichment counts out of range: N_V={n_v}, N_C={n_c}, N_Q={n_q}, N_CQ={n_cq}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    Over,
    Under,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentResult {
    pub cluster: u32,
    pub attribute: String,
    pub direction: Expression,
    pub observed: u32,
    pub cluster_size: u32,
    pub attribute_size: u32,
    pub p_value: f64,
    pub significant: bool,
}

/// A named node attribute (`has[v]` for every node of the graph).
#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub has: Vec<bool>,
}

/// Tests every (cluster, attribute, direction) over the partition domain
/// with `clusters * attributes * 2` tests.
pub fn characterize_clusters(
    partition: &Partition,
    attributes: &[Attribute],
    correction: Correction,
    alpha: f64,
) -> Result<Vec<EnrichmentResult>> {
    let domain: Vec<usize> = (0..partition.clusters.len())
        .filter(|&v| partition.clusters[v].is_some())
        .collect();
    let n_v = domain.len() as u32;
    let lf = LogFactorials::new(domain.len());
    let mut out = Vec::new();
    for attr in attributes {
        let n_q = domain.iter().filter(|&&v| attr.has[v]).count() as u32;
        let mut in_cluster = vec![0u32; partition.n_clusters()];
        for &v in &domain {
            if attr.has[v] {
                in_cluster[partition.clusters[v].unwrap() as usize - 1] += 1;
            }
        }
        for (c, &size) in partition.sizes.iter().enumerate() {
            let n_c = size as u32;
            let n_cq = in_cluster[c];
            for (direction, p) in [
                (Expression::Over, over_expression_pvalue(&lf, n_v, n_c, n_q, n_cq)?),
                (Expression::Under, under_expression_pvalue(&lf, n_v, n_c, n_q, n_cq)?),
            ] {
                out.push(EnrichmentResult {
                    cluster: c as u32 + 1,
                    attribute: attr.name.clone(),
                    direction,
                    observed: n_cq,
                    cluster_size: n_c,
                    attribute_size: n_q,
                    p_value: p,
                    significant: false,
                });
            }
        }
    }
    let n_tests = out.len() as f64;
    let threshold = match correction {
        Correction::Bonferroni => Some(alpha / n_tests.max(1.0)),
        Correction::Fdr => {
            let ps: Vec<f64> = out.iter().map(|r| r.p_value).collect();
            fdr_threshold(&ps, alpha, n_tests)
        }
        Correction::Fixed(p) => Some(p),
    };
    if let Some(th) = threshold {
        for r in &mut out {
            r.significant = r.p_value <= th;
        }
    }
    out.sort_by(|a, b| (a.cluster, &a.attribute).cmp(&(b.cluster, &b.attribute)));
    Ok(out)
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().map(|&x| plogp(x)).sum::<f64>()
}
