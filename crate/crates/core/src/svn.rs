//! Trading states, the projected trader multigraph and its statistical
//! validation against the hypergeometric null.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::panel::TransactionPanel;
use crate::stats::{fdr_threshold, HypergeomMemo, Hypergeometric, LogFactorials};
use crate::{Error, Result};

/// Default state threshold on the daily directionality.
pub const DEFAULT_THETA: f64 = 0.01;

/// `(V_b - V_s) / (V_b + V_s)`; `None` on days without volume.
pub fn directionality(buy: f64, sell: f64) -> Option<f64> {
    let total = buy + sell;
    (total > 0.0).then(|| (buy - sell) / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum State {
    #[serde(rename = "b")]
    Buy,
    #[serde(rename = "s")]
    Sell,
    #[serde(rename = "bs")]
    Mixed,
}

impl State {
    pub const ALL: [State; 3] = [State::Buy, State::Sell, State::Mixed];

    pub fn from_directionality(r: f64, theta: f64) -> State {
        if r > theta {
            State::Buy
        } else if r < -theta {
            State::Sell
        } else {
            State::Mixed
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            State::Buy => "b",
            State::Sell => "s",
            State::Mixed => "bs",
        }
    }

    /// Raster character.
    pub fn glyph(self) -> char {
        match self {
            State::Buy => 'B',
            State::Sell => 'S',
            State::Mixed => 'X',
        }
    }
}

/// Per-day trading states of every investor on one stock.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub theta: f64,
    pub n_days: usize,
    /// Per investor, `(day, state)` in day order.
    pub rows: Vec<Vec<(u32, State)>>,
}

impl StateMatrix {
    pub fn n_investors(&self) -> usize {
        self.rows.len()
    }

    /// `N_i^Q` for every state.
    pub fn counts(&self, investor: u32) -> [u32; 3] {
        let mut c = [0; 3];
        for &(_, s) in &self.rows[investor as usize] {
            c[s.index()] += 1;
        }
        c
    }

    pub fn state(&self, investor: u32, day: usize) -> Option<State> {
        let row = &self.rows[investor as usize];
        row.binary_search_by_key(&(day as u32), |&(d, _)| d)
            .ok()
            .map(|i| row[i].1)
    }

    /// Day-major view: active `(investor, state)` pairs per day, ascending
    /// by investor.
    pub fn by_day(&self) -> Vec<Vec<(u32, State)>> {
        let mut days = vec![Vec::new(); self.n_days];
        for (i, row) in self.rows.iter().enumerate() {
            for &(d, s) in row {
                days[d as usize].push((i as u32, s));
            }
        }
        days
    }
}

/// Assigns `b`, `s` or `bs` to every active investor-day on `stock`.
pub fn assign_states(panel: &TransactionPanel, stock: u32, theta: f64) -> Result<StateMatrix> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
    }
    let rows = (0..panel.n_investors() as u32)
        .map(|i| {
            panel
                .cells_on(i, stock)
                .iter()
                .filter_map(|c| {
                    directionality(c.buy_volume, c.sell_volume)
                        .map(|r| (c.day, State::from_directionality(r, theta)))
                })
                .collect()
        })
        .collect();
    Ok(StateMatrix {
        theta,
        n_days: panel.n_days(),
        rows,
    })
}

/// The nine co-occurrence link types; for a canonical pair `i < j` the
/// first state belongs to `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkType {
    #[serde(rename = "bb")]
    BB,
    #[serde(rename = "bs")]
    BS,
    #[serde(rename = "bbs")]
    BBs,
    #[serde(rename = "sb")]
    SB,
    #[serde(rename = "ss")]
    SS,
    #[serde(rename = "sbs")]
    SBs,
    #[serde(rename = "bsb")]
    BsB,
    #[serde(rename = "bss")]
    BsS,
    #[serde(rename = "bsbs")]
    BsBs,
}

impl LinkType {
    pub const ALL: [LinkType; 9] = [
        LinkType::BB,
        LinkType::BS,
        LinkType::BBs,
        LinkType::SB,
        LinkType::SS,
        LinkType::SBs,
        LinkType::BsB,
        LinkType::BsS,
        LinkType::BsBs,
    ];
    pub const DIAGONAL: [LinkType; 3] = [LinkType::BB, LinkType::SS, LinkType::BsBs];

    pub fn from_states(i: State, j: State) -> LinkType {
        LinkType::ALL[i.index() * 3 + j.index()]
    }

    pub fn states(self) -> (State, State) {
        let k = self as usize;
        (State::ALL[k / 3], State::ALL[k % 3])
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_diagonal(self) -> bool {
        let (a, b) = self.states();
        a == b
    }

    pub fn code(self) -> &'static str {
        match self {
            LinkType::BB => "bb",
            LinkType::BS => "bs",
            LinkType::BBs => "bbs",
            LinkType::SB => "sb",
            LinkType::SS => "ss",
            LinkType::SBs => "sbs",
            LinkType::BsB => "bsb",
            LinkType::BsS => "bss",
            LinkType::BsBs => "bsbs",
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LinkType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkType::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown link type {s:?}")))
    }
}

/// A co-occurrence link between investors `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: u32,
    pub j: u32,
    pub link: LinkType,
    pub weight: u32,
    pub p_value: f64,
}

/// Projected multigraph. Only links whose p-value is at most `ceiling` are
/// kept; `materialized` counts every link with weight >= 1 per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multigraph {
    pub n_nodes: usize,
    pub n_days: usize,
    pub ceiling: f64,
    /// Sorted by `(i, j, link)`.
    pub edges: Vec<Edge>,
    pub materialized: [u64; 9],
}

/// Builds the projected multigraph and evaluates the hypergeometric
/// p-value of every materialised link. Links with p-value above `ceiling`
/// are counted but dropped; use `ceiling >= 1` to keep everything.
pub fn project_traders(states: &StateMatrix, ceiling: f64) -> Multigraph {
    let n = states.n_investors();
    let t = states.n_days as u32;
    let days = states.by_day();
    let counts: Vec<[u32; 3]> = (0..n as u32).map(|i| states.counts(i)).collect();
    let lf = LogFactorials::new(states.n_days);
    let keep_all = ceiling >= 1.0;
    let prune = ceiling < 0.5;

    let per_row = exec::map_indexed_with(
        n,
        || (vec![0u32; n * 9], Vec::<u32>::new(), HypergeomMemo::new()),
        |(scratch, touched, memo), i| {
            let mut edges = Vec::new();
            let mut tally = [0u64; 9];
            for &(d, si) in &states.rows[i] {
                let day = &days[d as usize];
                let from = day.partition_point(|&(j, _)| j as usize <= i);
                for &(j, sj) in &day[from..] {
                    let slot = j as usize * 9 + si.index() * 3 + sj.index();
                    if scratch[slot] == 0 {
                        touched.push(slot as u32);
                    }
                    scratch[slot] += 1;
                }
            }
            touched.sort_unstable();
            for &slot in touched.iter() {
                let slot = slot as usize;
                let w = core::mem::take(&mut scratch[slot]);
                let (j, ty) = (slot / 9, slot % 9);
                tally[ty] += 1;
                let link = LinkType::ALL[ty];
                let (q, r) = link.states();
                let (a, b) = (counts[i][q.index()], counts[j][r.index()]);
                if prune {
                    // P(X >= w) >= 1/2 whenever w does not exceed the median.
                    let mean = a as f64 * b as f64 / t as f64;
                    if (w as f64) <= libm::floor(mean) {
                        continue;
                    }
                }
                let p = memo
                    .sf(&lf, t, a, b, w)
                    .expect("co-occurrence within margins");
                if keep_all || p <= ceiling {
                    edges.push(Edge {
                        i: i as u32,
                        j: j as u32,
                        link,
                        weight: w,
                        p_value: p,
                    });
                }
            }
            touched.clear();
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
    Multigraph {
        n_nodes: n,
        n_days: states.n_days,
        ceiling,
        edges,
        materialized,
    }
}

/// Hypergeometric p-value `P(X >= n_ij)` of an observed co-occurrence.
pub fn hypergeom_pvalue(total: u32, n_i: u32, n_j: u32, n_ij: u32) -> Result<f64> {
    if n_ij > n_i.min(n_j) {
        return Err(Error::Precondition(format!("overlap {n_ij} exceeds min({n_i}, {n_j})")));
    }
    let lf = LogFactorials::new(total as usize);
    Ok(Hypergeometric::new(total, n_i, n_j)?.sf(&lf, n_ij))
}

/// Number of tests `type_count * N (N - 1) / 2`.
pub fn n_tests(n: usize, type_count: usize) -> f64 {
    type_count as f64 * n as f64 * (n as f64 - 1.0) / 2.0
}

/// `2 alpha / (type_count N (N - 1))`.
pub fn bonferroni_threshold(n: usize, alpha: f64, type_count: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter("the Bonferroni threshold needs N >= 2".into()));
    }
    Ok(alpha / n_tests(n, type_count))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "p")]
pub enum Correction {
    Bonferroni,
    Fdr,
    Fixed(f64),
}

impl Correction {
    pub fn label(&self) -> String {
        match self {
            Correction::Bonferroni => "bonferroni".into(),
            Correction::Fdr => "fdr".into(),
            Correction::Fixed(p) => format!("fixed:{p}"),
        }
    }
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bonferroni" => Ok(Correction::Bonferroni),
            "fdr" => Ok(Correction::Fdr),
            other => {
                let p = other
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "correction must be bonferroni, fdr or fixed:<p>, got {other:?}"
                        ))
                    })?;
                Ok(Correction::Fixed(p))
            }
        }
    }
}

/// Validation threshold for a correction; `None` when FDR validates nothing.
pub fn correction_threshold(graph: &Multigraph, correction: Correction, alpha: f64, type_count: usize) -> Option<f64> {
    threshold_with_tests(graph, correction, alpha, n_tests(graph.n_nodes, type_count))
}

/// Like [`correction_threshold`] with an explicit number of tests.
pub fn threshold_with_tests(graph: &Multigraph, correction: Correction, alpha: f64, tests: f64) -> Option<f64> {
    match correction {
        Correction::Bonferroni => Some(alpha / tests.max(1.0)),
        Correction::Fdr => {
            let ps: Vec<f64> = graph.edges.iter().map(|e| e.p_value).collect();
            fdr_threshold(&ps, alpha, tests)
        }
        Correction::Fixed(p) => Some(p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedNetwork {
    pub n_nodes: usize,
    pub correction: Correction,
    pub threshold: Option<f64>,
    pub edges: Vec<Edge>,
    pub per_type: [u64; 9],
}

impl ValidatedNetwork {
    pub fn from_edges(n_nodes: usize, correction: Correction, threshold: Option<f64>, edges: Vec<Edge>) -> Self {
        let mut per_type = [0u64; 9];
        for e in &edges {
            per_type[e.link.index()] += 1;
        }
        Self {
            n_nodes,
            correction,
            threshold,
            edges,
            per_type,
        }
    }

    /// Endpoints of at least one edge, ascending.
    pub fn nodes(&self) -> Vec<u32> {
        let mut seen = vec![false; self.n_nodes];
        for e in &self.edges {
            seen[e.i as usize] = true;
            seen[e.j as usize] = true;
        }
        (0..self.n_nodes as u32).filter(|&v| seen[v as usize]).collect()
    }

    /// Keeps the `bb`, `ss` and `bsbs` links.
    pub fn diagonal(&self) -> ValidatedNetwork {
        let edges = self.edges.iter().copied().filter(|e| e.link.is_diagonal()).collect();
        ValidatedNetwork::from_edges(self.n_nodes, self.correction, self.threshold, edges)
    }

    /// Undirected weighted edge list with parallel links summed, sorted.
    pub fn collapsed(&self) -> Vec<(u32, u32, f64)> {
        let mut out: Vec<(u32, u32, f64)> = Vec::new();
        for e in &self.edges {
            match out.last_mut() {
                Some(last) if last.0 == e.i && last.1 == e.j => last.2 += e.weight as f64,
                _ => out.push((e.i, e.j, e.weight as f64)),
            }
        }
        out
    }
}

/// Keeps every link with p-value at most the correction's threshold.
pub fn validate_edges(graph: &Multigraph, correction: Correction, alpha: f64, type_count: usize) -> Result<ValidatedNetwork> {
    validate_with_tests(graph, correction, alpha, n_tests(graph.n_nodes, type_count))
}

/// Like [`validate_edges`] with an explicit number of tests.
pub fn validate_with_tests(graph: &Multigraph, correction: Correction, alpha: f64, tests: f64) -> Result<ValidatedNetwork> {
    let threshold = threshold_with_tests(graph, correction, alpha, tests);
    if let Some(th) = threshold {
        if th > graph.ceiling && graph.ceiling < 1.0 {
            return Err(Error::Precondition(format!(
                "threshold {th:e} exceeds the stored p-value ceiling {:e}; rebuild the multigraph with a higher ceiling",
                graph.ceiling
            )));
        }
    }
    Ok(validate_at(graph, correction, threshold))
}

fn validate_at(graph: &Multigraph, correction: Correction, threshold: Option<f64>) -> ValidatedNetwork {
    let edges = match threshold {
        Some(th) => graph.edges.iter().copied().filter(|e| e.p_value <= th).collect(),
        None => Vec::new(),
    };
    ValidatedNetwork::from_edges(graph.n_nodes, correction, threshold, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub edges: usize,
    pub diagonal_edges: usize,
    pub suspects: usize,
    /// `bonferroni` / `fdr` for the marked points.
    pub marker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    /// Index of the first point with the largest suspect count.
    pub best: Option<usize>,
}

/// Validates at each threshold and asks `suspects` how many traders the
/// downstream clustering flags on the diagonal network. Marked thresholds
/// are merged into the (ascending) grid.
pub fn threshold_sweep<F>(graph: &Multigraph, thresholds: &[f64], marks: &[(String, f64)], mut suspects: F) -> Result<SweepCurve>
where
    F: FnMut(&ValidatedNetwork) -> usize,
{
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("sweep thresholds must be ascending".into()));
    }
    let mut grid: Vec<(f64, Option<String>)> = thresholds.iter().map(|&t| (t, None)).collect();
    for (name, t) in marks {
        grid.push((*t, Some(name.clone())));
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut points = Vec::with_capacity(grid.len());
    for (threshold, marker) in grid {
        let net = validate_at(graph, Correction::Fixed(threshold), Some(threshold));
        let diag = net.diagonal();
        points.push(SweepPoint {
            threshold,
            edges: net.edges.len(),
            diagonal_edges: diag.edges.len(),
            suspects: suspects(&diag),
            marker,
        });
    }
    let mut best: Option<usize> = None;
    for (k, p) in points.iter().enumerate() {
        if best.map_or(true, |b| p.suspects > points[b].suspects) {
            best = Some(k);
        }
    }
    Ok(SweepCurve { points, best })
}

/// Logarithmic grid of `n` thresholds from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![hi];
    }
    let (a, b) = (libm::log10(lo), libm::log10(hi));
    (0..n)
        .map(|k| libm::pow(10.0, a + (b - a) * k as f64 / (n - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<(u32, State)>>, n_days: usize) -> StateMatrix {
        StateMatrix {
            theta: DEFAULT_THETA,
            n_days,
            rows,
        }
    }

    #[test]
    fn directionality_and_states() {
        assert_eq!(directionality(100.0, 0.0), Some(1.0));
        assert_eq!(directionality(50.0, 50.0), Some(0.0));
        assert_eq!(directionality(3.0, 1.0), Some(0.5));
        assert_eq!(directionality(0.0, 0.0), None);
        assert_eq!(State::from_directionality(0.5, 0.01), State::Buy);
        assert_eq!(State::from_directionality(-0.005, 0.01), State::Mixed);
        assert_eq!(State::from_directionality(-0.5, 0.01), State::Sell);
    }

    #[test]
    fn link_type_roundtrip() {
        for t in LinkType::ALL {
            let (a, b) = t.states();
            assert_eq!(LinkType::from_states(a, b), t);
            assert_eq!(t.code().parse::<LinkType>().unwrap(), t);
        }
        assert_eq!(LinkType::from_states(State::Mixed, State::Sell), LinkType::BsS);
        assert_eq!(LinkType::ALL.iter().filter(|t| t.is_diagonal()).count(), 3);
    }

    #[test]
    fn bb_pair() {
        let b: Vec<(u32, State)> = (0..5).map(|d| (d, State::Buy)).collect();
        let g = project_traders(&matrix(vec![b.clone(), b, vec![(7, State::Sell)]], 10), 1.0);
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].link, g.edges[0].weight), (LinkType::BB, 5));
        assert_eq!(g.materialized[LinkType::BB.index()], 1);
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(hypergeom_pvalue(10, 5, 4, 0).unwrap(), 1.0);
        assert!((hypergeom_pvalue(10, 5, 4, 4).unwrap() - 5.0 / 210.0).abs() < 1e-15);
        assert_eq!(hypergeom_pvalue(10, 10, 4, 4).unwrap(), 1.0);
        assert!(hypergeom_pvalue(10, 3, 4, 4).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        let p = bonferroni_threshold(4844, 0.01, 9).unwrap();
        assert!((p / 9.47e-11 - 1.0).abs() < 1e-3);
        assert!((bonferroni_threshold(2, 0.01, 9).unwrap() - 0.01 / 9.0).abs() < 1e-18);
        assert!((bonferroni_threshold(100, 0.05, 9).unwrap() - 0.1 / 89_100.0).abs() < 1e-18);
    }

    #[test]
    fn correction_parsing() {
        assert_eq!("fdr".parse::<Correction>().unwrap(), Correction::Fdr);
        assert_eq!("fixed:0.001".parse::<Correction>().unwrap(), Correction::Fixed(0.001));
        assert!("fixed:2".parse::<Correction>().is_err());
        assert!("holm".parse::<Correction>().is_err());
    }

    #[test]
    fn diagonal_filter() {
        let e = |link| Edge {
            i: 0,
            j: 1,
            link,
            weight: 1,
            p_value: 0.0,
        };
        let net = ValidatedNetwork::from_edges(2, Correction::Fdr, Some(0.1), vec![e(LinkType::SB)]);
        assert!(net.diagonal().edges.is_empty());
        assert!(net.diagonal().nodes().is_empty());
        let mixed = ValidatedNetwork::from_edges(
            2,
            Correction::Fdr,
            Some(0.1),
            vec![e(LinkType::BB), e(LinkType::BS), e(LinkType::SS)],
        );
        let d = mixed.diagonal();
        assert_eq!(d.edges.len() as u64, mixed.per_type[0] + mixed.per_type[4] + mixed.per_type[8]);
        assert_eq!(d.collapsed(), vec![(0, 1, 2.0)]);
    }
}
