//! Cluster dossiers over the reference period, suspect-cluster ranking,
//! partition containment, seed exploration and activity rasters.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::panel::{InvestorType, TradeTotals, TransactionPanel};
use crate::svn::{directionality, Edge, LinkType, StateMatrix};
use crate::{Error, Result};

/// Largest neighbourhood depth served by [`seed_neighbors`].
pub const MAX_DEPTH: usize = 3;

/// Marked-to-offer profit `p_TB * (bought - sold) - (paid - received)`.
pub fn expected_profit(t: &TradeTotals, offer_price: f64) -> f64 {
    offer_price * (t.bought_shares - t.sold_shares) - (t.buy_amount - t.sell_amount)
}

/// Mean of per-day directionalities over active days.
pub fn day_averaged_directionality(panel: &TransactionPanel, investor: u32, stock: u32, start: usize, end: usize) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in panel.cells_on(investor, stock) {
        let d = c.day as usize;
        if d < start || d > end {
            continue;
        }
        if let Some(r) = directionality(c.buy_volume, c.sell_volume) {
            sum += r;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionalityMode {
    /// `(sum V_b - sum V_s) / (sum V_b + sum V_s)` over the period.
    #[default]
    Volume,
    /// Average of the daily directionalities.
    DayAveraged,
}

/// Reference-period statistics of one investor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestorStats {
    pub investor: u32,
    pub totals: TradeTotals,
    pub directionality: Option<f64>,
    pub expected_profit: f64,
}

pub fn investor_stats(
    panel: &TransactionPanel,
    stock: u32,
    reference: (usize, usize),
    offer_price: f64,
    mode: DirectionalityMode,
) -> Vec<InvestorStats> {
    (0..panel.n_investors() as u32)
        .map(|i| {
            let totals = panel.totals(i, stock, reference.0, reference.1);
            let directionality = match mode {
                DirectionalityMode::Volume => totals.directionality(),
                DirectionalityMode::DayAveraged => {
                    day_averaged_directionality(panel, i, stock, reference.0, reference.1)
                }
            };
            InvestorStats {
                investor: i,
                totals,
                directionality,
                expected_profit: expected_profit(&totals, offer_price),
            }
        })
        .collect()
}

/// `R_C` over members with a defined directionality; `None` if none has.
pub fn mean_directionality(members: &[u32], stats: &[InvestorStats]) -> Option<f64> {
    let rs: Vec<f64> = members
        .iter()
        .filter_map(|&m| stats[m as usize].directionality)
        .collect();
    (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
}

/// `pi_C`, the expected profit averaged over all members.
pub fn cluster_profit(members: &[u32], stats: &[InvestorStats]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    members.iter().map(|&m| stats[m as usize].expected_profit).sum::<f64>() / members.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub h: usize,
    #[serde(rename = "if")]
    pub inv_firm: usize,
    pub l: usize,
}

impl TypeCounts {
    fn add(&mut self, t: InvestorType) {
        match t {
            InvestorType::Household => self.h += 1,
            InvestorType::InvestmentFirm => self.inv_firm += 1,
            InvestorType::LegalEntity => self.l += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDossier {
    pub cluster: u32,
    pub members: Vec<String>,
    pub member_count: usize,
    pub active_in_reference: usize,
    pub types: TypeCounts,
    pub mean_directionality: Option<f64>,
    pub mean_profit: f64,
    /// Profit averaged over members active in the reference period.
    pub mean_profit_active: Option<f64>,
    pub flagged: bool,
}

pub fn cluster_dossiers(
    partition: &Partition,
    panel: &TransactionPanel,
    stats: &[InvestorStats],
    r_floor: f64,
) -> Vec<ClusterDossier> {
    partition
        .all_members()
        .into_iter()
        .enumerate()
        .map(|(c, members)| {
            let mut types = TypeCounts {
                h: 0,
                inv_firm: 0,
                l: 0,
            };
            for &m in &members {
                types.add(panel.investor(m).kind);
            }
            let active: Vec<u32> = members
                .iter()
                .copied()
                .filter(|&m| stats[m as usize].totals.active_days > 0)
                .collect();
            let r = mean_directionality(&members, stats);
            ClusterDossier {
                cluster: c as u32 + 1,
                members: members.iter().map(|&m| panel.investor(m).id.clone()).collect(),
                member_count: members.len(),
                active_in_reference: active.len(),
                types,
                mean_directionality: r,
                mean_profit: cluster_profit(&members, stats),
                mean_profit_active: (!active.is_empty()).then(|| cluster_profit(&active, stats)),
                flagged: r.is_some_and(|r| r >= r_floor),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectClusters {
    /// Clusters with `R_C > report_floor`: `R_C` (two decimals) descending,
    /// then `pi_C` descending, then cluster id.
    pub rows: Vec<ClusterDossier>,
    pub flagged_clusters: usize,
    pub flagged_traders: usize,
}

pub fn suspect_clusters(dossiers: &[ClusterDossier], report_floor: f64) -> SuspectClusters {
    let band = |d: &ClusterDossier| libm::round(d.mean_directionality.unwrap_or(f64::NEG_INFINITY) * 100.0);
    let mut rows: Vec<ClusterDossier> = dossiers
        .iter()
        .filter(|d| d.mean_directionality.is_some_and(|r| r > report_floor))
        .cloned()
        .collect();
    rows.sort_by(|a, b| {
        band(b)
            .total_cmp(&band(a))
            .then(b.mean_profit.total_cmp(&a.mean_profit))
            .then(a.cluster.cmp(&b.cluster))
    });
    let flagged: Vec<&ClusterDossier> = dossiers.iter().filter(|d| d.flagged).collect();
    SuspectClusters {
        flagged_clusters: flagged.len(),
        flagged_traders: flagged.iter().map(|d| d.member_count).sum(),
        rows,
    }
}

/// `values[r][c] = |B_c ∩ A_r| / |B_c|`, with a last row for members of
/// `B_c` that `A` leaves unassigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub row_clusters: usize,
    pub col_clusters: usize,
    pub values: Vec<Vec<f64>>,
}

pub fn containment_matrix(rows: &Partition, cols: &Partition) -> Containment {
    let nr = rows.n_clusters();
    let nc = cols.n_clusters();
    let mut counts = vec![vec![0usize; nc]; nr + 1];
    for (v, c) in cols.clusters.iter().enumerate() {
        let Some(c) = c else { continue };
        let r = rows.clusters.get(v).copied().flatten().map_or(nr, |r| r as usize - 1);
        counts[r][*c as usize - 1] += 1;
    }
    let values = counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&cols.sizes)
                .map(|(&n, &size)| n as f64 / size as f64)
                .collect()
        })
        .collect();
    Containment {
        row_clusters: nr,
        col_clusters: nc,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub link: LinkType,
    pub weight: u32,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub node: u32,
    pub hop: usize,
    /// Node through which the neighbour was first reached.
    pub parent: u32,
    /// Links between the neighbour and its parent.
    pub links: Vec<LinkInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Connected,
    Isolated,
}

/// Breadth-first neighbourhood of `seed` up to `depth` hops, ordered by hop
/// then node.
pub fn seed_neighbors(n_nodes: usize, edges: &[Edge], seed: u32, depth: usize) -> Result<(SeedStatus, Vec<Neighbor>)> {
    if seed as usize >= n_nodes {
        return Err(Error::UnknownInvestor(alloc::format!("#{seed}")));
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidParameter(alloc::format!("depth must be in 1..={MAX_DEPTH}")));
    }
    let mut adj: Vec<Vec<(u32, LinkInfo)>> = vec![Vec::new(); n_nodes];
    for e in edges {
        let info = LinkInfo {
            link: e.link,
            weight: e.weight,
            p_value: e.p_value,
        };
        adj[e.i as usize].push((e.j, info.clone()));
        adj[e.j as usize].push((e.i, info));
    }
    if adj[seed as usize].is_empty() {
        return Ok((SeedStatus::Isolated, Vec::new()));
    }
    let mut hop = vec![usize::MAX; n_nodes];
    hop[seed as usize] = 0;
    let mut queue = VecDeque::from([seed]);
    let mut out = Vec::new();
    while let Some(u) = queue.pop_front() {
        let h = hop[u as usize];
        if h == depth {
            continue;
        }
        let mut next: Vec<u32> = adj[u as usize]
            .iter()
            .map(|(v, _)| *v)
            .filter(|&v| hop[v as usize] == usize::MAX)
            .collect();
        next.sort_unstable();
        next.dedup();
        for v in next {
            hop[v as usize] = h + 1;
            queue.push_back(v);
            let links = adj[u as usize]
                .iter()
                .filter(|(w, _)| *w == v)
                .map(|(_, l)| l.clone())
                .collect();
            out.push(Neighbor {
                node: v,
                hop: h + 1,
                parent: u,
                links,
            });
        }
    }
    out.sort_by_key(|n| (n.hop, n.node));
    Ok((SeedStatus::Connected, out))
}

/// Text raster: one row per member, one character per day from
/// `.` (inactive), `B`, `S`, `X` (mixed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub members: Vec<u32>,
    pub rows: Vec<String>,
    pub n_days: usize,
    pub pse_day: usize,
    pub reference_start_day: usize,
}

impl Raster {
    /// Number of cells holding `glyph`.
    pub fn count(&self, glyph: char) -> usize {
        self.rows.iter().map(|r| r.chars().filter(|&c| c == glyph).count()).sum()
    }
}

/// One raster row.
pub fn raster_row(states: &StateMatrix, investor: u32) -> String {
    let mut row = vec!['.'; states.n_days];
    for &(d, s) in &states.rows[investor as usize] {
        row[d as usize] = s.glyph();
    }
    row.into_iter().collect()
}

/// Raster of `members` in the given order.
pub fn activity_raster(members: &[u32], states: &StateMatrix, pse_day: usize, reference_start_day: usize) -> Raster {
    Raster {
        members: members.to_vec(),
        rows: members.iter().map(|&m| raster_row(states, m)).collect(),
        n_days: states.n_days,
        pse_day,
        reference_start_day,
    }
}
