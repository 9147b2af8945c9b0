//! k-means with batch and online refinement, elbow selection of K and
//! dynamic clustering across rolling windows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::features::FeatureCube;
use crate::math::{dist2, round, sqrt};
use crate::{Error, Result};

pub type Point = [f64; 3];

/// Largest K accepted by [`align_labels`].
pub const MAX_ALIGN_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Vec<Point>,
    pub labels: Vec<u32>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss after every batch recomputation and online pass.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    /// Applies `new_label[old] = map[old]` to labels and centroids.
    pub fn relabel(&mut self, map: &[u32]) {
        let mut c = self.centroids.clone();
        for (old, &new) in map.iter().enumerate() {
            c[new as usize] = self.centroids[old];
        }
        self.centroids = c;
        for l in &mut self.labels {
            *l = map[*l as usize];
        }
    }
}

/// How the starting centroids are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// k-means++ seeding; restart `r` draws from stream `r` of the seed.
    Seed(u64),
    Centroids(Vec<Point>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub n_restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            n_restarts: 16,
        }
    }
}

/// Sum of squared distances of points to their centroids.
pub fn loss_of(points: &[Point], labels: &[u32], centroids: &[Point]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| dist2(p, &centroids[l as usize]))
        .sum()
}

/// Fits K clusters; with several restarts keeps the lowest loss (earliest
/// restart on ties).
pub fn kmeans_fit(points: &[Point], k: usize, init: &Init, opts: FitOptions) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            k,
            points: points.len(),
        });
    }
    match init {
        Init::Centroids(c) => {
            if c.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "{} initial centroids supplied for K = {k}",
                    c.len()
                )));
            }
            Ok(refine(points, c.clone(), opts.max_iter))
        }
        Init::Seed(seed) => {
            let runs = exec::map_indexed(opts.n_restarts.max(1), |r| {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(r as u64);
                refine(points, plus_plus(points, k, &mut rng), opts.max_iter)
            });
            let mut best: Option<Clustering> = None;
            for run in runs {
                if best.as_ref().map_or(true, |b| run.loss < b.loss) {
                    best = Some(run);
                }
            }
            Ok(best.expect("at least one restart"))
        }
    }
}

fn plus_plus(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest(p: &Point, centroids: &[Point]) -> u32 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best as u32
}

fn recompute(points: &[Point], labels: &[u32], k: usize) -> (Vec<Point>, Vec<usize>) {
    let mut sums = vec![[0.0; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        let s = &mut sums[l as usize];
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        counts[l as usize] += 1;
    }
    let centroids = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                [0.0; 3]
            } else {
                let n = c as f64;
                [s[0] / n, s[1] / n, s[2] / n]
            }
        })
        .collect();
    (centroids, counts)
}

/// Moves the point farthest from its centroid (taken from a cluster with at
/// least two points) into every empty cluster.
fn repair_empty(points: &[Point], labels: &mut [u32], centroids: &mut Vec<Point>, counts: &mut Vec<usize>) {
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let l = labels[i] as usize;
            if counts[l] < 2 {
                continue;
            }
            let d = dist2(p, &centroids[l]);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        labels[far] = empty as u32;
        let (c, n) = recompute(points, labels, centroids.len());
        *centroids = c;
        *counts = n;
    }
}

fn refine(points: &[Point], init: Vec<Point>, max_iter: usize) -> Clustering {
    let k = init.len();
    let mut centroids = init;
    let mut labels: Vec<u32> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        // Batch phase.
        let (mut c, mut counts) = recompute(points, &labels, k);
        repair_empty(points, &mut labels, &mut c, &mut counts);
        centroids = c;
        trace.push(loss_of(points, &labels, &centroids));
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let n = nearest(p, &centroids);
            if n != *l && dist2(p, &centroids[n as usize]) < dist2(p, &centroids[*l as usize]) {
                *l = n;
                changed = true;
            }
        }
        if changed {
            continue;
        }
        // Online phase: single-point moves that strictly lower the loss.
        let moved = online_pass(points, &mut labels, &mut centroids, &mut counts);
        if moved == 0 {
            converged = true;
            break;
        }
        let (c, _) = recompute(points, &labels, k);
        centroids = c;
        trace.push(loss_of(points, &labels, &centroids));
    }
    let loss = loss_of(points, &labels, &centroids);
    Clustering {
        centroids,
        labels,
        loss,
        iterations,
        converged,
        trace,
    }
}

fn online_pass(points: &[Point], labels: &mut [u32], centroids: &mut [Point], counts: &mut [usize]) -> usize {
    let mut moves = 0;
    loop {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = labels[i] as usize;
            let na = counts[a] as f64;
            if counts[a] < 2 {
                continue;
            }
            let remove = na / (na - 1.0) * dist2(p, &centroids[a]);
            let mut best = a;
            let mut best_add = remove;
            for (b, c) in centroids.iter().enumerate() {
                if b == a {
                    continue;
                }
                let nb = counts[b] as f64;
                let add = nb / (nb + 1.0) * dist2(p, c);
                if add < best_add {
                    best_add = add;
                    best = b;
                }
            }
            if best != a && best_add < remove * (1.0 - 1e-12) - 1e-15 {
                let nb = counts[best] as f64;
                for d in 0..3 {
                    centroids[a][d] = (centroids[a][d] * na - p[d]) / (na - 1.0);
                    centroids[best][d] = (centroids[best][d] * nb + p[d]) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[best] += 1;
                labels[i] = best as u32;
                moves += 1;
                moved = true;
            }
        }
        if !moved {
            return moves;
        }
    }
}

/// Mean within-cluster variance `E_K = SSE_K / K` for `K = 1..=k_max`
/// (stops early when fewer points than K remain). Points are put in a
/// canonical order first, so the curve does not depend on input order.
pub fn elbow_curve(points: &[Point], k_max: usize, seed: u64, opts: FitOptions) -> Result<Vec<f64>> {
    let k_max = k_max.min(points.len());
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    let points = &sorted;
    exec::map_indexed(k_max, |k| {
        let k = k + 1;
        kmeans_fit(points, k, &Init::Seed(seed ^ ((k as u64) << 32)), opts).map(|c| c.loss / k as f64)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowChoice {
    pub k: usize,
    pub curve: Vec<f64>,
    /// No K satisfied the tolerance; `k` fell back to the largest evaluated.
    pub saturated: bool,
}

/// Smallest K whose every later decrement `(E_k - E_{k+1}) / E_1` stays
/// below `rel_tol`.
pub fn elbow_from_curve(curve: &[f64], rel_tol: f64) -> ElbowChoice {
    let out = |k, saturated| ElbowChoice {
        k,
        curve: curve.to_vec(),
        saturated,
    };
    if curve.is_empty() {
        return out(1, false);
    }
    let e1 = curve[0];
    if !(e1 > 0.0) {
        return out(1, false);
    }
    let mut k = curve.len();
    while k > 1 && (curve[k - 2] - curve[k - 1]) / e1 < rel_tol {
        k -= 1;
    }
    let saturated = k == curve.len() && curve.len() > 1;
    out(k, saturated)
}

pub fn elbow_select(points: &[Point], k_max: usize, rel_tol: f64, seed: u64, opts: FitOptions) -> Result<ElbowChoice> {
    if k_max < 2 {
        return Err(Error::InvalidParameter("K_max must be >= 2".into()));
    }
    Ok(elbow_from_curve(&elbow_curve(points, k_max, seed, opts)?, rel_tol))
}

/// Mean of the per-window Ks rounded half away from zero.
pub fn select_global_k(ks: &[usize]) -> Result<usize> {
    if ks.is_empty() {
        return Err(Error::InvalidParameter("no per-window K to average".into()));
    }
    let mean = ks.iter().sum::<usize>() as f64 / ks.len() as f64;
    Ok(round(mean) as usize)
}

/// `|A ∩ B| / |A ∪ B|` of two ascending, duplicate-free slices; 1 when
/// both are empty.
pub fn jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Member ids (ascending) of every label.
pub fn label_sets(ids: &[u32], labels: &[u32], k: usize) -> Vec<Vec<u32>> {
    let mut sets = vec![Vec::new(); k];
    for (&id, &l) in ids.iter().zip(labels) {
        sets[l as usize].push(id);
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    sets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `perm[k]` is the current label that takes previous label `k`.
    pub perm: Vec<u32>,
    /// Jaccard of previous set `k` with current set `perm[k]`.
    pub jaccard: Vec<f64>,
    pub total: f64,
}

impl Alignment {
    /// Map from current label to aligned label.
    pub fn relabel_map(&self) -> Vec<u32> {
        let mut map = vec![0; self.perm.len()];
        for (k, &c) in self.perm.iter().enumerate() {
            map[c as usize] = k as u32;
        }
        map
    }
}

/// Permutation maximising the summed Jaccard similarity between previous
/// and current label sets; ties go to the lexicographically smallest.
pub fn align_labels(prev: &[Vec<u32>], curr: &[Vec<u32>]) -> Result<Alignment> {
    let k = prev.len();
    if curr.len() != k {
        return Err(Error::InvalidParameter(format!(
            "cannot align {} labels with {}",
            curr.len(),
            k
        )));
    }
    if k > MAX_ALIGN_K {
        return Err(Error::AlignmentTooLarge(k));
    }
    let m: Vec<Vec<f64>> = prev
        .iter()
        .map(|p| curr.iter().map(|c| jaccard(p, c)).collect())
        .collect();
    // Upper bound on what rows r.. can still add.
    let mut tail = vec![0.0; k + 1];
    for r in (0..k).rev() {
        tail[r] = tail[r + 1] + m[r].iter().cloned().fold(0.0, f64::max);
    }
    let mut search = Search {
        m: &m,
        tail: &tail,
        current: Vec::with_capacity(k),
        used: vec![false; k],
        best: Vec::new(),
        best_total: f64::NEG_INFINITY,
    };
    search.descend(0.0);
    let perm: Vec<u32> = search.best.iter().map(|&c| c as u32).collect();
    let jaccard = perm
        .iter()
        .enumerate()
        .map(|(r, &c)| m[r][c as usize])
        .collect();
    Ok(Alignment {
        perm,
        jaccard,
        total: search.best_total,
    })
}

struct Search<'a> {
    m: &'a [Vec<f64>],
    tail: &'a [f64],
    current: Vec<usize>,
    used: Vec<bool>,
    best: Vec<usize>,
    best_total: f64,
}

impl Search<'_> {
    fn descend(&mut self, acc: f64) {
        let row = self.current.len();
        let k = self.m.len();
        if row == k {
            if self.best.is_empty() || acc > self.best_total + 1e-12 {
                self.best_total = acc;
                self.best = self.current.clone();
            }
            return;
        }
        if !self.best.is_empty() && acc + self.tail[row] <= self.best_total + 1e-12 {
            return;
        }
        for c in 0..k {
            if self.used[c] {
                continue;
            }
            self.used[c] = true;
            self.current.push(c);
            self.descend(acc + self.m[row][c]);
            self.current.pop();
            self.used[c] = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowClustering {
    pub window: usize,
    /// Clustered investors, ascending; `clustering.labels` follows this order.
    pub investors: Vec<u32>,
    pub clustering: Clustering,
    /// Alignment against the previous clustered window.
    pub alignment: Option<Alignment>,
}

impl WindowClustering {
    pub fn label_of(&self, investor: u32) -> Option<u32> {
        self.investors
            .binary_search(&investor)
            .ok()
            .map(|i| self.clustering.labels[i])
    }

    pub fn sets(&self) -> Vec<Vec<u32>> {
        label_sets(&self.investors, &self.clustering.labels, self.clustering.k())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTimeline {
    pub k: usize,
    /// One entry per grid window; `None` where fewer than K investors were
    /// active.
    pub windows: Vec<Option<WindowClustering>>,
}

impl ClusterTimeline {
    pub fn gaps(&self) -> Vec<usize> {
        (0..self.windows.len()).filter(|&w| self.windows[w].is_none()).collect()
    }

    pub fn get(&self, window: usize) -> Option<&WindowClustering> {
        self.windows.get(window).and_then(Option::as_ref)
    }

    /// Euclidean distance of each centroid from the origin, per window.
    pub fn centroid_norms(&self) -> Vec<Option<Vec<f64>>> {
        self.windows
            .iter()
            .map(|w| {
                w.as_ref().map(|w| {
                    w.clustering
                        .centroids
                        .iter()
                        .map(|c| sqrt(dist2(c, &[0.0; 3])))
                        .collect()
                })
            })
            .collect()
    }

    /// Largest displacement of `label`'s centroid between consecutive
    /// clustered windows.
    pub fn max_displacement(&self, label: u32) -> f64 {
        let mut prev: Option<Point> = None;
        let mut max = 0.0f64;
        for w in self.windows.iter().flatten() {
            let c = w.clustering.centroids[label as usize];
            if let Some(p) = prev {
                max = max.max(sqrt(dist2(&p, &c)));
            }
            prev = Some(c);
        }
        max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicOptions {
    pub seed: u64,
    pub first_window: FitOptions,
    pub max_iter: usize,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            first_window: FitOptions::default(),
            max_iter: 300,
        }
    }
}

/// Clusters every window with K clusters, warm-starting each from the
/// previous aligned centroids.
pub fn dynamic_cluster(cube: &FeatureCube, k: usize, opts: DynamicOptions) -> Result<ClusterTimeline> {
    if k > MAX_ALIGN_K {
        return Err(Error::AlignmentTooLarge(k));
    }
    let mut windows = Vec::with_capacity(cube.grid.len());
    let mut prev: Option<(Vec<Point>, Vec<Vec<u32>>)> = None;
    for w in 0..cube.grid.len() {
        let (ids, pts) = cube.active_points(w);
        if pts.len() < k {
            windows.push(None);
            continue;
        }
        let (clustering, alignment) = match &prev {
            None => (
                kmeans_fit(&pts, k, &Init::Seed(opts.seed), opts.first_window)?,
                None,
            ),
            Some((centroids, sets)) => {
                let mut c = kmeans_fit(
                    &pts,
                    k,
                    &Init::Centroids(centroids.clone()),
                    FitOptions {
                        max_iter: opts.max_iter,
                        n_restarts: 1,
                    },
                )?;
                let a = align_labels(sets, &label_sets(&ids, &c.labels, k))?;
                c.relabel(&a.relabel_map());
                (c, Some(a))
            }
        };
        let wc = WindowClustering {
            window: w,
            investors: ids,
            clustering,
            alignment,
        };
        prev = Some((wc.clustering.centroids.clone(), wc.sets()));
        windows.push(Some(wc));
    }
    Ok(ClusterTimeline { k, windows })
}
