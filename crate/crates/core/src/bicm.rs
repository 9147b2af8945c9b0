//! Bipartite configuration model null for the trader-day layers, V-motif
//! validation under it and comparison of the resulting partitions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use hashbrown::HashMap;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::exec;
use crate::math;
use crate::stats::poisson_binomial_tail;
use crate::svn::{threshold_with_tests, validate_with_tests, Correction, Edge, LinkType, Multigraph, State, StateMatrix, ValidatedNetwork};
use crate::{Error, Result};

/// Binary trader × day matrix of one trading-state layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Biadjacency {
    pub n_cols: usize,
    /// Sorted column indices of the ones in each row.
    pub rows: Vec<Vec<u32>>,
}

impl Biadjacency {
    pub fn from_rows(n_cols: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if row.last().is_some_and(|&t| t as usize >= n_cols) {
                return Err(Error::InvalidParameter(format!("column index out of range (n_cols = {n_cols})")));
            }
        }
        Ok(Self { n_cols, rows })
    }

    pub fn from_dense(dense: &[Vec<bool>]) -> Self {
        let n_cols = dense.first().map_or(0, Vec::len);
        let rows = dense
            .iter()
            .map(|r| (0..r.len() as u32).filter(|&t| r[t as usize]).collect())
            .collect();
        Self { n_cols, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, t: usize) -> bool {
        self.rows[i].binary_search(&(t as u32)).is_ok()
    }

    pub fn row_degrees(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.len() as u32).collect()
    }

    pub fn col_degrees(&self) -> Vec<u32> {
        let mut h = vec![0u32; self.n_cols];
        for row in &self.rows {
            for &t in row {
                h[t as usize] += 1;
            }
        }
        h
    }

    pub fn n_links(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Rows of each column, ascending.
    pub fn columns(&self) -> Vec<Vec<u32>> {
        let mut cols = vec![Vec::new(); self.n_cols];
        for (i, row) in self.rows.iter().enumerate() {
            for &t in row {
                cols[t as usize].push(i as u32);
            }
        }
        cols
    }
}

/// Splits the state matrix into the b, s and bs layers (indexed by
/// [`State::index`]).
pub fn split_tripartite(states: &StateMatrix) -> [Biadjacency; 3] {
    let n = states.n_investors();
    let mut layers: [Biadjacency; 3] = core::array::from_fn(|_| Biadjacency {
        n_cols: states.n_days,
        rows: vec![Vec::new(); n],
    });
    for (i, row) in states.rows.iter().enumerate() {
        for &(day, state) in row {
            layers[state.index()].rows[i].push(day);
        }
    }
    layers
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200_000,
        }
    }
}

const FREE: u32 = u32::MAX;

/// Rows or columns sharing a degree after reduction share their multiplier
/// and form a class; reduced (all-zero or all-one) rows and columns form
/// one class per removal step and value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ClassKey {
    Reduced { step: u32, full: bool },
    Free { degree: u32 },
}

/// Fitted BiCM of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicmModel {
    pub n_rows: usize,
    pub n_cols: usize,
    /// `x_i = exp(-alpha_i)`; `None` for rows fixed by the reduction.
    pub x: Vec<Option<f64>>,
    /// `y_t = exp(-beta_t)`; `None` for columns fixed by the reduction.
    pub y: Vec<Option<f64>>,
    pub row_class: Vec<u32>,
    pub col_class: Vec<u32>,
    pub n_col_classes: usize,
    /// Link probability per (row class, column class), row-major.
    pub class_probs: Vec<f64>,
    pub col_class_sizes: Vec<u32>,
    pub reduced_rows: usize,
    pub reduced_cols: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Log-likelihood of the free block after each iteration.
    pub log_likelihood: Vec<f64>,
}

impl BicmModel {
    pub fn n_row_classes(&self) -> usize {
        self.class_probs.len() / self.n_col_classes.max(1)
    }

    pub fn class_prob(&self, row_class: u32, col_class: u32) -> f64 {
        self.class_probs[row_class as usize * self.n_col_classes + col_class as usize]
    }

    pub fn p(&self, i: usize, t: usize) -> f64 {
        self.class_prob(self.row_class[i], self.col_class[t])
    }

    pub fn expected_row_degrees(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                let c = self.row_class[i];
                (0..self.n_col_classes)
                    .map(|b| self.col_class_sizes[b] as f64 * self.class_prob(c, b as u32))
                    .sum()
            })
            .collect()
    }

    pub fn expected_col_degrees(&self) -> Vec<f64> {
        let mut per_class = vec![0.0; self.n_col_classes];
        for i in 0..self.n_rows {
            let c = self.row_class[i];
            for (b, acc) in per_class.iter_mut().enumerate() {
                *acc += self.class_prob(c, b as u32);
            }
        }
        self.col_class.iter().map(|&b| per_class[b as usize]).collect()
    }

    /// Largest absolute gap between observed and expected degrees.
    pub fn max_residual(&self, adj: &Biadjacency) -> f64 {
        let rows = adj
            .row_degrees()
            .into_iter()
            .zip(self.expected_row_degrees())
            .map(|(k, e)| libm::fabs(k as f64 - e));
        let cols = adj
            .col_degrees()
            .into_iter()
            .zip(self.expected_col_degrees())
            .map(|(h, e)| libm::fabs(h as f64 - e));
        rows.chain(cols).fold(0.0, f64::max)
    }
}

struct Reduction {
    row_step: Vec<u32>,
    row_full: Vec<bool>,
    col_step: Vec<u32>,
    col_full: Vec<bool>,
    k: Vec<u32>,
    h: Vec<u32>,
}

/// Peels all-zero and all-one rows and columns until none remain. Rows are
/// peeled at even steps and columns at odd ones, so the earlier of two
/// removals decides a fixed link probability.
fn reduce(adj: &Biadjacency) -> Reduction {
    let cols = adj.columns();
    let mut k = adj.row_degrees();
    let mut h = adj.col_degrees();
    let (n, m) = (adj.n_rows(), adj.n_cols);
    let mut row_step = vec![FREE; n];
    let mut row_full = vec![false; n];
    let mut col_step = vec![FREE; m];
    let mut col_full = vec![false; m];
    let (mut live_rows, mut live_cols) = (n as u32, m as u32);
    let mut phase = 0u32;
    loop {
        let mut removed = false;
        let step = 2 * phase;
        let mut full = Vec::new();
        for i in 0..n {
            if row_step[i] != FREE {
                continue;
            }
            if k[i] == 0 || k[i] == live_cols {
                row_step[i] = step;
                row_full[i] = k[i] > 0;
                if row_full[i] {
                    full.push(i);
                }
                live_rows -= 1;
                removed = true;
            }
        }
        for &i in &full {
            for &t in &adj.rows[i] {
                if col_step[t as usize] == FREE {
                    h[t as usize] -= 1;
                }
            }
        }
        full.clear();
        for t in 0..m {
            if col_step[t] != FREE {
                continue;
            }
            if h[t] == 0 || h[t] == live_rows {
                col_step[t] = step + 1;
                col_full[t] = h[t] > 0;
                if col_full[t] {
                    full.push(t);
                }
                live_cols -= 1;
                removed = true;
            }
        }
        for &t in &full {
            for &i in &cols[t] {
                if row_step[i as usize] == FREE {
                    k[i as usize] -= 1;
                }
            }
        }
        if !removed {
            break;
        }
        phase += 1;
    }
    Reduction {
        row_step,
        row_full,
        col_step,
        col_full,
        k,
        h,
    }
}

fn class_keys(step: &[u32], full: &[bool], degree: &[u32]) -> (Vec<ClassKey>, Vec<u32>) {
    let keys: Vec<ClassKey> = (0..step.len())
        .map(|i| {
            if step[i] == FREE {
                ClassKey::Free { degree: degree[i] }
            } else {
                ClassKey::Reduced {
                    step: step[i],
                    full: full[i],
                }
            }
        })
        .collect();
    let mut index: BTreeMap<ClassKey, u32> = keys.iter().map(|&key| (key, 0)).collect();
    for (n, v) in index.values_mut().enumerate() {
        *v = n as u32;
    }
    let class = keys.iter().map(|key| index[key]).collect();
    (index.into_keys().collect(), class)
}

fn log_likelihood(k: &[(f64, f64)], h: &[(f64, f64)], x: &[f64], y: &[f64]) -> f64 {
    let mut l = 0.0;
    for (a, &(ka, na)) in k.iter().enumerate() {
        l += na * ka * math::ln(x[a]);
        for (b, &(_, mb)) in h.iter().enumerate() {
            l -= na * mb * math::ln_1p(x[a] * y[b]);
        }
    }
    for (b, &(hb, mb)) in h.iter().enumerate() {
        l += mb * hb * math::ln(y[b]);
    }
    l
}

/// Maximum-likelihood BiCM fit by alternating minorise-maximise updates
/// `x_a <- k_a / sum_b m_b y_b / (1 + x_a y_b)` and the symmetric update on
/// `y`, each of which never lowers the likelihood.
pub fn bicm_fit(adj: &Biadjacency, opts: FitOptions) -> Result<BicmModel> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive (got {})", opts.tol)));
    }
    let red = reduce(adj);
    let (row_keys, row_class) = class_keys(&red.row_step, &red.row_full, &red.k);
    let (col_keys, col_class) = class_keys(&red.col_step, &red.col_full, &red.h);

    let mut row_count = vec![0u32; row_keys.len()];
    for &c in &row_class {
        row_count[c as usize] += 1;
    }
    let mut col_count = vec![0u32; col_keys.len()];
    for &c in &col_class {
        col_count[c as usize] += 1;
    }

    // Free classes: (degree, multiplicity) and their index among all classes.
    let free_rows: Vec<(usize, (f64, f64))> = row_keys
        .iter()
        .enumerate()
        .filter_map(|(c, key)| match key {
            ClassKey::Free { degree } => Some((c, (*degree as f64, row_count[c] as f64))),
            _ => None,
        })
        .collect();
    let free_cols: Vec<(usize, (f64, f64))> = col_keys
        .iter()
        .enumerate()
        .filter_map(|(c, key)| match key {
            ClassKey::Free { degree } => Some((c, (*degree as f64, col_count[c] as f64))),
            _ => None,
        })
        .collect();
    let kr: Vec<(f64, f64)> = free_rows.iter().map(|&(_, v)| v).collect();
    let hc: Vec<(f64, f64)> = free_cols.iter().map(|&(_, v)| v).collect();

    let links: f64 = kr.iter().map(|&(k, n)| k * n).sum();
    let scale = math::sqrt(links.max(1.0));
    let mut x: Vec<f64> = kr.iter().map(|&(k, _)| k / scale).collect();
    let mut y: Vec<f64> = hc.iter().map(|&(h, _)| h / scale).collect();

    let residual_of = |x: &[f64], y: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        let mut col_sum = vec![0.0; y.len()];
        for (a, &(ka, na)) in kr.iter().enumerate() {
            let mut s = 0.0;
            for (b, &(_, mb)) in hc.iter().enumerate() {
                let p = x[a] * y[b] / (1.0 + x[a] * y[b]);
                s += mb * p;
                col_sum[b] += na * p;
            }
            worst = worst.max(libm::fabs(s - ka));
        }
        for (b, &(hb, _)) in hc.iter().enumerate() {
            worst = worst.max(libm::fabs(col_sum[b] - hb));
        }
        worst
    };

    let mut history = Vec::new();
    let mut residual = residual_of(&x, &y);
    let mut iterations = 0;
    if !kr.is_empty() {
        history.push(log_likelihood(&kr, &hc, &x, &y));
    }
    while residual > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged { iterations, residual });
        }
        for (a, &(ka, _)) in kr.iter().enumerate() {
            let s: f64 = hc.iter().zip(&y).map(|(&(_, mb), &yb)| mb * yb / (1.0 + x[a] * yb)).sum();
            x[a] = ka / s;
        }
        for (b, &(hb, _)) in hc.iter().enumerate() {
            let s: f64 = kr.iter().zip(&x).map(|(&(_, na), &xa)| na * xa / (1.0 + xa * y[b])).sum();
            y[b] = hb / s;
        }
        iterations += 1;
        history.push(log_likelihood(&kr, &hc, &x, &y));
        residual = residual_of(&x, &y);
    }

    let mut free_row_slot = vec![usize::MAX; row_keys.len()];
    for (slot, &(c, _)) in free_rows.iter().enumerate() {
        free_row_slot[c] = slot;
    }
    let mut free_col_slot = vec![usize::MAX; col_keys.len()];
    for (slot, &(c, _)) in free_cols.iter().enumerate() {
        free_col_slot[c] = slot;
    }
    let n_col_classes = col_keys.len();
    let mut class_probs = vec![0.0; row_keys.len() * n_col_classes];
    for (a, rk) in row_keys.iter().enumerate() {
        for (b, ck) in col_keys.iter().enumerate() {
            class_probs[a * n_col_classes + b] = match (rk, ck) {
                (ClassKey::Free { .. }, ClassKey::Free { .. }) => {
                    let xy = x[free_row_slot[a]] * y[free_col_slot[b]];
                    xy / (1.0 + xy)
                }
                (ClassKey::Reduced { step: rs, full: rf }, ClassKey::Reduced { step: cs, full: cf }) => {
                    let full = if rs < cs { *rf } else { *cf };
                    full as u8 as f64
                }
                (ClassKey::Reduced { full, .. }, ClassKey::Free { .. }) => *full as u8 as f64,
                (ClassKey::Free { .. }, ClassKey::Reduced { full, .. }) => *full as u8 as f64,
            };
        }
    }

    let xs = row_class
        .iter()
        .map(|&c| (free_row_slot[c as usize] != usize::MAX).then(|| x[free_row_slot[c as usize]]))
        .collect();
    let ys = col_class
        .iter()
        .map(|&c| (free_col_slot[c as usize] != usize::MAX).then(|| y[free_col_slot[c as usize]]))
        .collect();
    Ok(BicmModel {
        n_rows: adj.n_rows(),
        n_cols: adj.n_cols,
        x: xs,
        y: ys,
        row_class,
        col_class,
        n_col_classes,
        class_probs,
        col_class_sizes: col_count,
        reduced_rows: red.row_step.iter().filter(|&&s| s != FREE).count(),
        reduced_cols: red.col_step.iter().filter(|&&s| s != FREE).count(),
        iterations,
        residual,
        log_likelihood: history,
    })
}

/// Fits the three layers.
pub fn fit_layers(layers: &[Biadjacency; 3], opts: FitOptions) -> Result<[BicmModel; 3]> {
    let fitted = exec::map_indexed(3, |q| bicm_fit(&layers[q], opts));
    let mut out = Vec::with_capacity(3);
    for m in fitted {
        out.push(m?);
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Number of tests used by the multiple-testing correction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCount {
    /// `3N(3N - 1) / 2`: all pairs among the 3N layer nodes.
    #[default]
    Stacked,
    /// `9 N(N - 1) / 2`, as for the hypergeometric multigraph.
    LinkTypes,
}

impl TestCount {
    pub fn count(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            TestCount::Stacked => 3.0 * n * (3.0 * n - 1.0) / 2.0,
            TestCount::LinkTypes => 9.0 * n * (n - 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmotifOptions {
    pub correction: Correction,
    pub alpha: f64,
    pub tests: TestCount,
    /// Candidate links with p-value above this are counted but not stored.
    pub ceiling: f64,
}

impl Default for VmotifOptions {
    fn default() -> Self {
        Self {
            correction: Correction::Fdr,
            alpha: 0.01,
            tests: TestCount::Stacked,
            ceiling: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmotifResult {
    /// Diagonal-type candidate links with their V-motif p-values.
    pub candidates: Multigraph,
    pub n_tests: f64,
    pub validated: ValidatedNetwork,
}

/// `P(S >= n)` for the V-motif count of a pair of row classes.
fn vmotif_pvalue(model: &BicmModel, ci: u32, cj: u32, n: u32, probs: &mut Vec<f64>) -> f64 {
    probs.clear();
    for b in 0..model.n_col_classes as u32 {
        let p = model.class_prob(ci, b) * model.class_prob(cj, b);
        for _ in 0..model.col_class_sizes[b as usize] {
            probs.push(p);
        }
    }
    poisson_binomial_tail(probs, n as usize)
}

/// Tests every co-occurring pair of every layer against the Poisson-Binomial
/// V-motif distribution of the layer's BiCM and validates the diagonal
/// network (b layer to bb, s to ss, bs to bsbs).
pub fn vmotif_validate(layers: &[Biadjacency; 3], models: &[BicmModel; 3], opts: VmotifOptions) -> Result<VmotifResult> {
    let n = layers[0].n_rows();
    if layers.iter().any(|l| l.n_rows() != n) || models.iter().any(|m| m.n_rows != n) {
        return Err(Error::Consistency("layers and models disagree on the number of traders".into()));
    }
    let columns: Vec<Vec<Vec<u32>>> = layers.iter().map(Biadjacency::columns).collect();
    let keep_all = opts.ceiling >= 1.0;
    let prune = opts.ceiling < 0.5;

    let per_row = exec::map_indexed_with(
        n,
        || (vec![0u32; n], Vec::<u32>::new(), HashMap::<(u8, u32, u32, u32), f64>::new(), Vec::new()),
        |(scratch, touched, memo, probs), i| {
            let mut edges = Vec::new();
            let mut tally = [0u64; 9];
            for q in 0..3 {
                let model = &models[q];
                let link = LinkType::from_states(State::ALL[q], State::ALL[q]);
                for &t in &layers[q].rows[i] {
                    let col = &columns[q][t as usize];
                    let from = col.partition_point(|&j| j as usize <= i);
                    for &j in &col[from..] {
                        if scratch[j as usize] == 0 {
                            touched.push(j);
                        }
                        scratch[j as usize] += 1;
                    }
                }
                touched.sort_unstable();
                for &j in touched.iter() {
                    let w = core::mem::take(&mut scratch[j as usize]);
                    tally[link.index()] += 1;
                    let (ci, cj) = (model.row_class[i], model.row_class[j as usize]);
                    let (lo, hi) = if ci <= cj { (ci, cj) } else { (cj, ci) };
                    if prune {
                        let mean: f64 = (0..model.n_col_classes as u32)
                            .map(|b| model.col_class_sizes[b as usize] as f64 * model.class_prob(lo, b) * model.class_prob(hi, b))
                            .sum();
                        // The Poisson-Binomial median is at least floor(mean).
                        if (w as f64) <= libm::floor(mean) {
                            continue;
                        }
                    }
                    let p = *memo
                        .entry((q as u8, lo, hi, w))
                        .or_insert_with(|| vmotif_pvalue(model, lo, hi, w, probs));
                    if keep_all || p <= opts.ceiling {
                        edges.push(Edge {
                            i: i as u32,
                            j,
                            link,
                            weight: w,
                            p_value: p,
                        });
                    }
                }
                touched.clear();
            }
            edges.sort_by_key(|e| (e.j, e.link.index()));
            (edges, tally)
        },
    );

    let mut edges = Vec::new();
    let mut materialized = [0u64; 9];
    for (row, tally) in per_row {
        edges.extend(row);
        for k in 0..9 {
            materialized[k] += tally[k];
        }
    }
    let candidates = Multigraph {
        n_nodes: n,
        n_days: layers[0].n_cols,
        ceiling: opts.ceiling,
        edges,
        materialized,
    };
    let n_tests = opts.tests.count(n);
    let validated = validate_with_tests(&candidates, opts.correction, opts.alpha, n_tests)?;
    Ok(VmotifResult {
        candidates,
        n_tests,
        validated,
    })
}

/// Threshold the correction would apply to a V-motif candidate graph.
pub fn vmotif_threshold(result: &VmotifResult, correction: Correction, alpha: f64) -> Option<f64> {
    threshold_with_tests(&result.candidates, correction, alpha, result.n_tests)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatch {
    pub a: u32,
    pub b: u32,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionComparison {
    pub a_sizes: Vec<usize>,
    pub b_sizes: Vec<usize>,
    /// `jaccard[a - 1][b - 1]`.
    pub jaccard: Vec<Vec<f64>>,
    /// Greedy one-to-one matching by descending similarity.
    pub matches: Vec<ClusterMatch>,
    pub floor: f64,
    pub matched_above_floor: usize,
}

impl PartitionComparison {
    /// The cluster of `b` matched to cluster `a`, if any.
    pub fn partner_of(&self, a: u32) -> Option<ClusterMatch> {
        self.matches.iter().copied().find(|m| m.a == a)
    }
}

/// Pairwise Jaccard similarity between the clusters of two partitions over
/// the same trader indices.
pub fn compare_partitions(a: &Partition, b: &Partition, floor: f64) -> PartitionComparison {
    let (na, nb) = (a.n_clusters(), b.n_clusters());
    let mut inter = vec![vec![0usize; nb]; na];
    for (ca, cb) in a.clusters.iter().zip(&b.clusters) {
        if let (Some(ca), Some(cb)) = (ca, cb) {
            inter[*ca as usize - 1][*cb as usize - 1] += 1;
        }
    }
    let jaccard: Vec<Vec<f64>> = (0..na)
        .map(|x| {
            (0..nb)
                .map(|y| {
                    let i = inter[x][y];
                    let union = a.sizes[x] + b.sizes[y] - i;
                    if union == 0 {
                        0.0
                    } else {
                        i as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..na)
        .flat_map(|x| (0..nb).map(move |y| (x, y)))
        .filter(|&(x, y)| jaccard[x][y] > 0.0)
        .collect();
    pairs.sort_by(|&(x1, y1), &(x2, y2)| jaccard[x2][y2].total_cmp(&jaccard[x1][y1]).then((x1, y1).cmp(&(x2, y2))));
    let mut used_a = vec![false; na];
    let mut used_b = vec![false; nb];
    let mut matches = Vec::new();
    for (x, y) in pairs {
        if used_a[x] || used_b[y] {
            continue;
        }
        used_a[x] = true;
        used_b[y] = true;
        matches.push(ClusterMatch {
            a: x as u32 + 1,
            b: y as u32 + 1,
            jaccard: jaccard[x][y],
        });
    }
    let matched_above_floor = matches.iter().filter(|m| m.jaccard >= floor).count();
    PartitionComparison {
        a_sizes: a.sizes.clone(),
        b_sizes: b.sizes.clone(),
        jaccard,
        matches,
        floor,
        matched_above_floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_adj(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> Biadjacency {
        let dense: Vec<Vec<bool>> = (0..n).map(|_| (0..m).map(|_| rng.random::<f64>() < density).collect()).collect();
        Biadjacency::from_dense(&dense)
    }

    #[test]
    fn empty_layer_is_all_zero() {
        let adj = Biadjacency::from_rows(4, vec![vec![]; 3]).unwrap();
        let model = bicm_fit(&adj, FitOptions::default()).unwrap();
        for i in 0..3 {
            for t in 0..4 {
                assert_eq!(model.p(i, t), 0.0);
            }
        }
        assert_eq!(model.iterations, 0);
    }

    #[test]
    fn full_rows_and_columns_are_pinned() {
        // Row 0 is all ones; after removing it column 2 is empty.
        let adj = Biadjacency::from_rows(3, vec![vec![0, 1, 2], vec![0], vec![1], vec![0, 1]]).unwrap();
        let model = bicm_fit(&adj, FitOptions::default()).unwrap();
        for t in 0..3 {
            assert_eq!(model.p(0, t), 1.0);
        }
        for i in 1..4 {
            assert_eq!(model.p(i, 2), 0.0);
        }
        assert!(model.max_residual(&adj) <= 1e-8);
    }

    #[test]
    fn regular_graph_is_uniform() {
        // Each row has 2 ones among 4 columns, each column has 3 ones among 6 rows.
        let rows = vec![vec![0, 1], vec![2, 3], vec![0, 2], vec![1, 3], vec![0, 3], vec![1, 2]];
        let adj = Biadjacency::from_rows(4, rows).unwrap();
        let model = bicm_fit(&adj, FitOptions::default()).unwrap();
        for i in 0..6 {
            for t in 0..4 {
                assert!((model.p(i, t) - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_fit_matches_degrees_and_climbs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let adj = random_adj(&mut rng, 50, 100, 0.2);
            let model = bicm_fit(&adj, FitOptions::default()).unwrap();
            assert!(model.max_residual(&adj) <= 1e-6, "residual {}", model.max_residual(&adj));
            for w in model.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-12 * w[0].abs());
            }
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let adj = random_adj(&mut rng, 20, 30, 0.3);
        let err = bicm_fit(&adj, FitOptions { tol: 1e-12, max_iter: 1 }).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 1, .. }));
    }

    #[test]
    fn test_counts() {
        assert_eq!(TestCount::Stacked.count(10), 435.0);
        assert_eq!(TestCount::LinkTypes.count(10), 405.0);
    }

    fn partition(clusters: Vec<Option<u32>>) -> Partition {
        let n = clusters.iter().flatten().map(|&c| c as usize).max().unwrap_or(0);
        let mut sizes = vec![0; n];
        for c in clusters.iter().flatten() {
            sizes[*c as usize - 1] += 1;
        }
        Partition {
            clusters,
            sizes,
            codelength: 0.0,
        }
    }

    #[test]
    fn identical_partitions_match_on_the_diagonal() {
        let p = partition(vec![Some(1), Some(1), Some(2), Some(2), Some(3), None]);
        let cmp = compare_partitions(&p, &p, 0.8);
        assert_eq!(cmp.matches.len(), 3);
        for m in &cmp.matches {
            assert_eq!(m.a, m.b);
            assert_eq!(m.jaccard, 1.0);
        }
        assert_eq!(cmp.matched_above_floor, 3);
    }

    #[test]
    fn disjoint_universes_give_zeros() {
        let a = partition(vec![Some(1), Some(1), None, None]);
        let b = partition(vec![None, None, Some(1), Some(1)]);
        let cmp = compare_partitions(&a, &b, 0.8);
        assert_eq!(cmp.jaccard, vec![vec![0.0]]);
        assert!(cmp.matches.is_empty());
    }

    #[test]
    fn greedy_matching_prefers_largest_overlap() {
        let a = partition(vec![Some(1), Some(1), Some(1), Some(2), Some(2)]);
        let b = partition(vec![Some(1), Some(1), Some(2), Some(2), Some(2)]);
        let cmp = compare_partitions(&a, &b, 0.5);
        // J(1,1) = 2/3, J(2,2) = 2/3, J(1,2) = 1/5.
        assert_eq!(cmp.matches.len(), 2);
        assert_eq!((cmp.matches[0].a, cmp.matches[0].b), (1, 1));
        assert_eq!((cmp.matches[1].a, cmp.matches[1].b), (2, 2));
    }

    #[test]
    fn zero_overlap_pairs_are_never_validated() {
        let layers = [
            Biadjacency::from_rows(6, vec![vec![0, 1], vec![2, 3], vec![4]]).unwrap(),
            Biadjacency::from_rows(6, vec![vec![]; 3]).unwrap(),
            Biadjacency::from_rows(6, vec![vec![]; 3]).unwrap(),
        ];
        let models = fit_layers(&layers, FitOptions::default()).unwrap();
        let res = vmotif_validate(
            &layers,
            &models,
            VmotifOptions {
                ceiling: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(res.candidates.edges.is_empty());
        assert!(res.validated.edges.is_empty());
    }
}
