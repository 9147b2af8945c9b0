//! Rewarding cluster, hard/soft discontinuity and individual suspect ranking.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureCube, FeatureVector};
use crate::kmeans::{ClusterTimeline, Point};
use crate::math::{dist2, exp, sqrt};
use crate::panel::{Direction, InvestorType, PseEvent, TransactionPanel};
use crate::rings::expected_profit;
use crate::stats::chi2_sf_1dof;
use crate::{Error, Result};

/// Label whose centroid is closest to the direction's target corner
/// (smallest label on ties).
pub fn rewarding_cluster(centroids: &[Point], direction: Direction) -> u32 {
    let target = direction.target();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(c, &target);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best as u32
}

/// `exp(-||x - T||)` with `T` the direction's target.
pub fn score(x: &FeatureVector, direction: Direction) -> f64 {
    exp(-sqrt(dist2(&x.point(), &direction.target())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscontinuityClass {
    Continuous,
    SoftDiscontinuous,
    HardDiscontinuous,
}

impl DiscontinuityClass {
    pub fn is_discontinuous(self) -> bool {
        self != DiscontinuityClass::Continuous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiscontinuityClass::Continuous => "continuous",
            DiscontinuityClass::SoftDiscontinuous => "soft",
            DiscontinuityClass::HardDiscontinuous => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuityLabel {
    pub investor: u32,
    pub class: DiscontinuityClass,
    pub in_rewarding_cluster: bool,
}

/// Classifies the final-window members of `label`: membership history is
/// read from windows disjoint from the final one, trading history from
/// the grid start up to the final window.
pub fn classify_cluster(
    timeline: &ClusterTimeline,
    cube: &FeatureCube,
    panel: &TransactionPanel,
    label: u32,
    rewarding: u32,
) -> Result<Vec<DiscontinuityLabel>> {
    let grid = &cube.grid;
    let last_idx = grid.len() - 1;
    let last = timeline
        .get(last_idx)
        .ok_or_else(|| Error::Precondition("the final window was not clustered".into()))?;
    let past = grid.past_disjoint();
    if past.is_empty() {
        return Err(Error::NoPastWindow);
    }
    let history_end = grid.last().start;
    let mut out = Vec::new();
    for (pos, &inv) in last.investors.iter().enumerate() {
        if last.clustering.labels[pos] != label {
            continue;
        }
        let was_member = past
            .iter()
            .filter_map(|&w| timeline.get(w))
            .any(|wc| wc.label_of(inv) == Some(label));
        let class = if was_member {
            DiscontinuityClass::Continuous
        } else {
            let traded_before = panel
                .cells_on(inv, cube.stock)
                .iter()
                .any(|c| (c.day as usize) >= grid.first_day && (c.day as usize) < history_end && c.is_active());
            if traded_before {
                DiscontinuityClass::SoftDiscontinuous
            } else {
                DiscontinuityClass::HardDiscontinuous
            }
        };
        out.push(DiscontinuityLabel {
            investor: inv,
            class,
            in_rewarding_cluster: label == rewarding,
        });
    }
    Ok(out)
}

/// Continuous / discontinuous counts of a cluster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub continuous: u64,
    pub discontinuous: u64,
}

impl ClassCounts {
    pub fn of(labels: &[DiscontinuityLabel]) -> Self {
        let d = labels.iter().filter(|l| l.class.is_discontinuous()).count() as u64;
        Self {
            continuous: labels.len() as u64 - d,
            discontinuous: d,
        }
    }

    pub fn total(&self) -> u64 {
        self.continuous + self.discontinuous
    }

    pub fn discontinuous_fraction(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.discontinuous as f64 / self.total() as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiSquareVariant {
    /// `sum_l (n1_l - n2_l)^2 / (n1_l + n2_l)` on raw counts.
    #[default]
    Printed,
    /// Pearson two-sample homogeneity statistic on the 2x2 table.
    Homogeneity,
}

/// Chi-square comparison of two clusters' (continuous, discontinuous)
/// counts; returns `(statistic, p-value)` with one degree of freedom.
pub fn chi_squared_compare(a: ClassCounts, b: ClassCounts, variant: ChiSquareVariant) -> (f64, f64) {
    let rows = [(a.continuous, b.continuous), (a.discontinuous, b.discontinuous)];
    let stat = match variant {
        ChiSquareVariant::Printed => rows
            .iter()
            .filter(|(x, y)| x + y > 0)
            .map(|&(x, y)| {
                let d = x as f64 - y as f64;
                d * d / (x + y) as f64
            })
            .sum(),
        ChiSquareVariant::Homogeneity => {
            let (na, nb) = (a.total() as f64, b.total() as f64);
            let n = na + nb;
            let mut s = 0.0;
            if na > 0.0 && nb > 0.0 {
                for &(x, y) in &rows {
                    let row = (x + y) as f64;
                    if row == 0.0 {
                        continue;
                    }
                    let (ea, eb) = (row * na / n, row * nb / n);
                    s += (x as f64 - ea) * (x as f64 - ea) / ea + (y as f64 - eb) * (y as f64 - eb) / eb;
                }
            }
            s
        }
    };
    (stat, chi2_sf_1dof(stat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiTest {
    pub other: u32,
    pub rewarding_counts: ClassCounts,
    pub other_counts: ClassCounts,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComparison {
    pub rewarding: u32,
    pub tests: Vec<ChiTest>,
    /// All K-1 nulls rejected at 5%.
    pub different_5: bool,
    /// All K-1 nulls rejected at 1%.
    pub different_1: bool,
}

impl ClusterComparison {
    /// Significance marker: `**` at 1%, `*` at 5%, empty otherwise.
    pub fn stars(&self) -> &'static str {
        if self.different_1 {
            "**"
        } else if self.different_5 {
            "*"
        } else {
            ""
        }
    }
}

/// Tests the rewarding cluster against each other cluster.
pub fn compare_rewarding_vs_all(
    per_cluster: &[ClassCounts],
    rewarding: u32,
    variant: ChiSquareVariant,
) -> ClusterComparison {
    let r = per_cluster[rewarding as usize];
    let tests: Vec<ChiTest> = per_cluster
        .iter()
        .enumerate()
        .filter(|&(k, _)| k as u32 != rewarding)
        .map(|(k, &c)| {
            let (statistic, p_value) = chi_squared_compare(r, c, variant);
            ChiTest {
                other: k as u32,
                rewarding_counts: r,
                other_counts: c,
                statistic,
                p_value,
            }
        })
        .collect();
    let all = |level: f64| !tests.is_empty() && tests.iter().all(|t| t.p_value < level);
    ClusterComparison {
        rewarding,
        different_5: all(0.05),
        different_1: all(0.01),
        tests,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectEntry {
    pub rank: usize,
    pub investor_id: String,
    pub investor_type: InvestorType,
    pub class: DiscontinuityClass,
    pub score: f64,
    pub shares_bought: f64,
    pub directionality: Option<f64>,
    pub expected_profit: f64,
}

/// Ranks discontinuous investors by score, then shares bought in the
/// reference period, then id.
pub fn rank_suspects(
    labels: &[DiscontinuityLabel],
    cube: &FeatureCube,
    panel: &TransactionPanel,
    pse: &PseEvent,
) -> Result<Vec<SuspectEntry>> {
    let (s, e) = pse.reference_days(panel)?;
    let last = cube.grid.len() - 1;
    let mut out: Vec<SuspectEntry> = labels
        .iter()
        .filter(|l| l.class.is_discontinuous())
        .map(|l| {
            let inv = panel.investor(l.investor);
            let totals = panel.totals(l.investor, cube.stock, s, e);
            SuspectEntry {
                rank: 0,
                investor_id: inv.id.clone(),
                investor_type: inv.kind,
                class: l.class,
                score: score(cube.get(last, l.investor), pse.direction),
                shares_bought: totals.bought_shares,
                directionality: totals.directionality(),
                expected_profit: expected_profit(&totals, pse.offer_price),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.shares_bought.total_cmp(&a.shares_bought))
            .then_with(|| a.investor_id.cmp(&b.investor_id))
    });
    for (i, entry) in out.iter_mut().enumerate() {
        entry.rank = i + 1;
    }
    Ok(out)
}

/// Everything the discontinuity stage derives from a clustered timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuityReport {
    pub rewarding: u32,
    pub labels: Vec<DiscontinuityLabel>,
    pub per_cluster: Vec<ClassCounts>,
    pub comparison: ClusterComparison,
    pub suspects: Vec<SuspectEntry>,
    pub rewarding_displacement: f64,
    pub warnings: Vec<String>,
}

pub fn detect(
    timeline: &ClusterTimeline,
    cube: &FeatureCube,
    panel: &TransactionPanel,
    pse: &PseEvent,
    variant: ChiSquareVariant,
    stability_bound: f64,
) -> Result<DiscontinuityReport> {
    let last = timeline
        .get(cube.grid.len() - 1)
        .ok_or_else(|| Error::Precondition("the final window was not clustered".into()))?;
    let rewarding = rewarding_cluster(&last.clustering.centroids, pse.direction);
    let mut per_cluster = vec![ClassCounts::default(); timeline.k];
    let mut labels = Vec::new();
    for k in 0..timeline.k as u32 {
        let cl = classify_cluster(timeline, cube, panel, k, rewarding)?;
        per_cluster[k as usize] = ClassCounts::of(&cl);
        if k == rewarding {
            labels = cl;
        }
    }
    let comparison = compare_rewarding_vs_all(&per_cluster, rewarding, variant);
    let suspects = rank_suspects(&labels, cube, panel, pse)?;
    let rewarding_displacement = timeline.max_displacement(rewarding);
    let mut warnings = Vec::new();
    if rewarding_displacement > stability_bound {
        warnings.push(format!(
            "rewarding centroid moved by {rewarding_displacement:.3} between windows (bound {stability_bound})"
        ));
    }
    for g in timeline.gaps() {
        warnings.push(format!("window {g} skipped: fewer than K active investors"));
    }
    Ok(DiscontinuityReport {
        rewarding,
        labels,
        per_cluster,
        comparison,
        suspects,
        rewarding_displacement,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(a: f64, m: f64, e: f64) -> FeatureVector {
        FeatureVector {
            turnover: a,
            magnitudo: m,
            exposure: e,
            active: true,
        }
    }

    #[test]
    fn rewarding_targets() {
        let c = [[0.2, 0.1, 0.0], [0.9, 0.8, 0.9]];
        assert_eq!(rewarding_cluster(&c, Direction::Buy), 1);
        assert_eq!(rewarding_cluster(&[[0.0; 3], [1.0, 1.0, 1.0]], Direction::Buy), 1);
        assert_eq!(rewarding_cluster(&[[0.0; 3], [-1.0, 1.0, -1.0]], Direction::Sell), 1);
    }

    #[test]
    fn scores() {
        assert_eq!(score(&fv(1.0, 1.0, 1.0), Direction::Buy), 1.0);
        assert!((score(&fv(0.0, 0.0, 0.0), Direction::Buy) - 0.176_921_4).abs() < 1e-6);
        assert!(score(&fv(-1.0, 0.0, -1.0), Direction::Buy) < score(&fv(1.0, 1.0, 0.0), Direction::Buy));
    }

    #[test]
    fn chi_square_examples() {
        let c = |c, d| ClassCounts {
            continuous: c,
            discontinuous: d,
        };
        let (s, p) = chi_squared_compare(c(5, 15), c(15, 5), ChiSquareVariant::Printed);
        assert_eq!(s, 10.0);
        assert!((p - 0.001_565_402_258).abs() < 1e-9);
        assert_eq!(chi_squared_compare(c(3, 4), c(3, 4), ChiSquareVariant::Printed), (0.0, 1.0));
        assert_eq!(chi_squared_compare(c(0, 10), c(0, 10), ChiSquareVariant::Printed).0, 0.0);
        let (h, _) = chi_squared_compare(c(5, 15), c(15, 5), ChiSquareVariant::Homogeneity);
        assert!((h - 10.0).abs() < 1e-12);
        let (h2, _) = chi_squared_compare(c(10, 30), c(15, 5), ChiSquareVariant::Homogeneity);
        let (h3, _) = chi_squared_compare(c(15, 5), c(10, 30), ChiSquareVariant::Homogeneity);
        assert_eq!(h2, h3);
    }

    #[test]
    fn identical_clusters_are_not_rejected() {
        let c = ClassCounts {
            continuous: 40,
            discontinuous: 10,
        };
        let cmp = compare_rewarding_vs_all(&[c, c, c], 1, ChiSquareVariant::Printed);
        assert_eq!(cmp.tests.len(), 2);
        assert!(!cmp.different_5);
        assert_eq!(cmp.stars(), "");
    }
}
