//! Rendering of pipeline outputs into run artifacts.
//!
//! Every artifact is produced in memory first; a [`Bundle`] maps relative
//! paths to file contents and is written to disk only once complete.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use surveil_core::community::{characterize_clusters, Attribute, EnrichmentResult};
use surveil_core::features::FeatureCube;
use surveil_core::panel::{PseEvent, TransactionPanel};
use surveil_core::pipeline::{BicmOutput, ClusterSet, KmeansOutput, NetworkInput, SvnConfig, SvnOutput};
use surveil_core::rings::{raster_row, ClusterDossier};
use surveil_core::svn::{Correction, Edge, LinkType, Multigraph, ValidatedNetwork};
use surveil_core::synth::{Evaluation, GroundTruth};

use crate::io::{opt, to_json_bytes, write_calendar, write_panel, write_pse, Table};

pub type Bundle = BTreeMap<String, Vec<u8>>;

pub const RASTER_GLYPHS: [(&str, &str); 4] = [
    (".", "no trade"),
    ("B", "buy"),
    ("S", "sell"),
    ("X", "buy and sell"),
];

pub fn put_json<T: Serialize + ?Sized>(bundle: &mut Bundle, path: &str, value: &T) {
    bundle.insert(path.to_string(), to_json_bytes(value));
}

/// Panel snapshot, its calendar and the event registry.
pub fn data_bundle(bundle: &mut Bundle, panel: &TransactionPanel, events: &[PseEvent]) {
    let mut buf = Vec::new();
    write_panel(panel, &mut buf).expect("in-memory write");
    bundle.insert("panel.csv".into(), buf);
    let mut buf = Vec::new();
    write_calendar(panel.calendar(), &mut buf).expect("in-memory write");
    bundle.insert("calendar.csv".into(), buf);
    if !events.is_empty() {
        let mut buf = Vec::new();
        write_pse(events, &mut buf).expect("in-memory write");
        bundle.insert("pse.csv".into(), buf);
    }
}

pub fn truth_bundle(bundle: &mut Bundle, truth: &GroundTruth) {
    put_json(bundle, "truth.json", truth);
}

/// Suspect-report bundle of a k-means run, read back by `rank` and the
/// service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansSuspects {
    pub stock: String,
    pub k: usize,
    pub rewarding: u32,
    pub per_cluster: Vec<surveil_core::discontinuity::ClassCounts>,
    pub comparison: surveil_core::discontinuity::ClusterComparison,
    pub significance: String,
    pub suspects: Vec<surveil_core::discontinuity::SuspectEntry>,
    pub rewarding_displacement: f64,
    pub warnings: Vec<String>,
}

pub fn kmeans_bundle(bundle: &mut Bundle, panel: &TransactionPanel, cube: &FeatureCube, out: &KmeansOutput) {
    let cal = panel.calendar();
    let grid = &out.grid;

    put_json(
        bundle,
        "kmeans/features.json",
        &json!({
            "stock": out.stock,
            "window": grid.length,
            "step": grid.step,
            "first_day": cal[grid.first_day],
            "last_day": cal[grid.last_day],
            "windows": grid.windows.iter().enumerate().map(|(w, win)| json!({
                "index": w,
                "start": cal[win.start],
                "end": cal[win.end],
            })).collect::<Vec<_>>(),
        }),
    );
    let mut t = Table::new(&["investor", "window_end", "A", "a", "E", "active"]);
    for (w, win) in grid.windows.iter().enumerate() {
        let end = cal[win.end].to_string();
        for (i, f) in cube.window(w).iter().enumerate() {
            t.row([
                panel.investor(i as u32).id.clone(),
                end.clone(),
                f.turnover.to_string(),
                f.magnitudo.to_string(),
                f.exposure.to_string(),
                f.active.to_string(),
            ]);
        }
    }
    bundle.insert("kmeans/features.csv".into(), t.into_bytes());

    let windows: Vec<_> = out
        .timeline
        .windows
        .iter()
        .enumerate()
        .map(|(w, wc)| match wc {
            None => json!({ "window": w, "end": cal[grid.windows[w].end], "clustered": false }),
            Some(wc) => json!({
                "window": w,
                "end": cal[grid.windows[w].end],
                "clustered": true,
                "members": wc.investors.len(),
                "centroids": wc.clustering.centroids,
                "loss": wc.clustering.loss,
                "iterations": wc.clustering.iterations,
                "converged": wc.clustering.converged,
                "jaccard": wc.alignment.as_ref().map(|a| &a.jaccard),
            }),
        })
        .collect();
    put_json(
        bundle,
        "kmeans/timeline.json",
        &json!({
            "k": out.k,
            "elbows": out.elbows,
            "windows": windows,
        }),
    );
    let mut t = Table::new(&["investor", "window_end", "label"]);
    for (w, wc) in out.timeline.windows.iter().enumerate() {
        let Some(wc) = wc else { continue };
        let end = cal[grid.windows[w].end].to_string();
        for (&inv, &label) in wc.investors.iter().zip(&wc.clustering.labels) {
            t.row([panel.investor(inv).id.clone(), end.clone(), label.to_string()]);
        }
    }
    bundle.insert("kmeans/labels.csv".into(), t.into_bytes());

    let r = &out.report;
    let mut t = Table::new(&["investor", "type", "class", "in_rewarding_cluster"]);
    for l in &r.labels {
        let inv = panel.investor(l.investor);
        t.row([
            inv.id.clone(),
            inv.kind.code().to_string(),
            l.class.as_str().to_string(),
            l.in_rewarding_cluster.to_string(),
        ]);
    }
    bundle.insert("kmeans/classes.csv".into(), t.into_bytes());

    let mut t = Table::new(&[
        "rank",
        "id",
        "type",
        "class",
        "score",
        "shares",
        "directionality",
        "expected_profit",
    ]);
    for s in &r.suspects {
        t.row([
            s.rank.to_string(),
            s.investor_id.clone(),
            s.investor_type.code().to_string(),
            s.class.as_str().to_string(),
            s.score.to_string(),
            s.shares_bought.to_string(),
            opt(s.directionality),
            s.expected_profit.to_string(),
        ]);
    }
    bundle.insert("kmeans/suspects.csv".into(), t.into_bytes());
    put_json(
        bundle,
        "kmeans/suspects.json",
        &KmeansSuspects {
            stock: out.stock.clone(),
            k: out.k,
            rewarding: r.rewarding,
            per_cluster: r.per_cluster.clone(),
            comparison: r.comparison.clone(),
            significance: r.comparison.stars().to_string(),
            suspects: r.suspects.clone(),
            rewarding_displacement: r.rewarding_displacement,
            warnings: r.warnings.clone(),
        },
    );
}

/// Per-node view of a network run: identity, reference-period statistics
/// and the activity raster row.
pub fn nodes_table(input: &NetworkInput) -> Vec<u8> {
    let mut t = Table::new(&[
        "node",
        "investor_id",
        "type",
        "active_days",
        "reference_active_days",
        "directionality",
        "expected_profit",
        "raster",
    ]);
    for (i, s) in input.stats.iter().enumerate() {
        let inv = input.panel.investor(i as u32);
        t.row([
            i.to_string(),
            inv.id.clone(),
            inv.kind.code().to_string(),
            input.panel.active_days(i as u32, input.stock).to_string(),
            s.totals.active_days.to_string(),
            opt(s.directionality),
            s.expected_profit.to_string(),
            raster_row(&input.states, i as u32),
        ]);
    }
    t.into_bytes()
}

fn edge_key(e: &Edge) -> (u32, u32, LinkType) {
    (e.i, e.j, e.link)
}

fn per_type(counts: &[u64; 9]) -> BTreeMap<&'static str, u64> {
    LinkType::ALL.iter().map(|t| (t.code(), counts[t.index()])).collect()
}

/// Candidate edges with the validation verdict of `net`.
pub fn edge_table(input: &NetworkInput, graph: &Multigraph, net: &ValidatedNetwork) -> Vec<u8> {
    let validated: BTreeSet<_> = net.edges.iter().map(edge_key).collect();
    let id = |v: u32| input.panel.investor(v).id.as_str();
    let mut t = Table::new(&["i", "j", "type", "weight", "p_value", "validated"]);
    for e in &graph.edges {
        t.row([
            id(e.i),
            id(e.j),
            e.link.code(),
            &e.weight.to_string(),
            &e.p_value.to_string(),
            if validated.contains(&edge_key(e)) { "true" } else { "false" },
        ]);
    }
    t.into_bytes()
}

fn dossier_row(d: &ClusterDossier) -> [String; 10] {
    [
        d.cluster.to_string(),
        d.member_count.to_string(),
        d.active_in_reference.to_string(),
        d.types.h.to_string(),
        d.types.inv_firm.to_string(),
        d.types.l.to_string(),
        opt(d.mean_directionality),
        d.mean_profit.to_string(),
        opt(d.mean_profit_active),
        d.flagged.to_string(),
    ]
}

const DOSSIER_COLUMNS: [&str; 10] = [
    "cluster",
    "members",
    "active_in_reference",
    "h",
    "if",
    "l",
    "r_c",
    "pi_c",
    "pi_c_active",
    "flagged",
];

/// Cluster summary read back by `rank`, `compare` and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub network: String,
    pub codelength: f64,
    pub n_clusters: usize,
    pub r_floor: f64,
    pub report_floor: f64,
    pub flagged_clusters: usize,
    pub flagged_traders: usize,
    /// Reported clusters in ranking order.
    pub ranking: Vec<u32>,
    pub dossiers: Vec<ClusterDossier>,
}

fn enrichment(input: &NetworkInput, set: &ClusterSet, cfg: &SvnConfig) -> Vec<EnrichmentResult> {
    let n = set.partition.clusters.len();
    let mut attrs: Vec<Attribute> = surveil_core::panel::InvestorType::ALL
        .iter()
        .map(|&k| Attribute {
            name: format!("type:{}", k.code()),
            has: (0..n as u32).map(|v| input.panel.investor(v).kind == k).collect(),
        })
        .collect();
    for t in LinkType::DIAGONAL {
        let mut has = vec![false; n];
        for e in set.network.edges.iter().filter(|e| e.link == t) {
            has[e.i as usize] = true;
            has[e.j as usize] = true;
        }
        attrs.push(Attribute {
            name: format!("link:{}", t.code()),
            has,
        });
    }
    characterize_clusters(&set.partition, &attrs, Correction::Bonferroni, cfg.alpha).unwrap_or_default()
}

/// Partition, dossiers, suspect ranking, enrichment and rasters of one
/// clustered network under `dir/`.
pub fn cluster_bundle(bundle: &mut Bundle, dir: &str, input: &NetworkInput, set: &ClusterSet, cfg: &SvnConfig) {
    let id = |v: u32| input.panel.investor(v).id.clone();
    let mut t = Table::new(&["node", "cluster"]);
    for (v, c) in set.partition.clusters.iter().enumerate() {
        if let Some(c) = c {
            t.row([id(v as u32), c.to_string()]);
        }
    }
    bundle.insert(format!("{dir}/partition.csv"), t.into_bytes());

    let mut cols: Vec<&str> = DOSSIER_COLUMNS.to_vec();
    cols.push("member_ids");
    let mut t = Table::new(&cols);
    for d in &set.dossiers {
        let mut row = dossier_row(d).to_vec();
        row.push(d.members.join(";"));
        t.row(row);
    }
    bundle.insert(format!("{dir}/dossiers.csv"), t.into_bytes());

    let mut cols = vec!["rank"];
    cols.extend(DOSSIER_COLUMNS);
    let mut t = Table::new(&cols);
    for (rank, d) in set.suspects.rows.iter().enumerate() {
        let mut row = vec![(rank + 1).to_string()];
        row.extend(dossier_row(d));
        t.row(row);
    }
    bundle.insert(format!("{dir}/suspect_clusters.csv"), t.into_bytes());

    put_json(
        bundle,
        &format!("{dir}/clusters.json"),
        &ClusterReport {
            network: dir.rsplit('/').next().unwrap_or(dir).to_string(),
            codelength: set.partition.codelength,
            n_clusters: set.partition.n_clusters(),
            r_floor: cfg.r_floor,
            report_floor: cfg.report_floor,
            flagged_clusters: set.suspects.flagged_clusters,
            flagged_traders: set.suspects.flagged_traders,
            ranking: set.suspects.rows.iter().map(|d| d.cluster).collect(),
            dossiers: set.dossiers.clone(),
        },
    );

    let mut t = Table::new(&[
        "cluster",
        "attribute",
        "direction",
        "observed",
        "cluster_size",
        "attribute_size",
        "p_value",
        "significant",
    ]);
    for r in enrichment(input, set, cfg) {
        t.row([
            r.cluster.to_string(),
            r.attribute,
            serde_json::to_value(r.direction).unwrap().as_str().unwrap().to_string(),
            r.observed.to_string(),
            r.cluster_size.to_string(),
            r.attribute_size.to_string(),
            r.p_value.to_string(),
            r.significant.to_string(),
        ]);
    }
    bundle.insert(format!("{dir}/enrichment.csv"), t.into_bytes());

    let cal = input.panel.calendar();
    let mut members = BTreeMap::new();
    for (c, nodes) in set.partition.all_members().into_iter().enumerate() {
        let cid = c as u32 + 1;
        let mut text = String::new();
        for &m in &nodes {
            text.push_str(&raster_row(&input.states, m));
            text.push('\n');
        }
        bundle.insert(format!("{dir}/rasters/cluster_{cid}.txt"), text.into_bytes());
        members.insert(cid.to_string(), nodes.iter().map(|&m| id(m)).collect::<Vec<_>>());
    }
    put_json(
        bundle,
        &format!("{dir}/rasters/legend.json"),
        &json!({
            "glyphs": RASTER_GLYPHS.iter().map(|(g, m)| json!({"glyph": g, "meaning": m})).collect::<Vec<_>>(),
            "n_days": input.states.n_days,
            "first_date": cal[0],
            "last_date": cal[cal.len() - 1],
            "reference_start_day": input.reference.0,
            "reference_start_date": cal[input.reference.0],
            "pse_day": input.pse_day,
            "pse_date": cal[input.pse_day],
            "rows": members,
        }),
    );
}

#[allow(clippy::too_many_arguments)]
fn network_summary(
    null_model: &str,
    input: &NetworkInput,
    net: &ValidatedNetwork,
    alpha: f64,
    n_tests: f64,
    convention: &str,
    graph: &Multigraph,
) -> serde_json::Value {
    let diag = net.diagonal();
    json!({
        "null_model": null_model,
        "n": input.states.n_investors(),
        "t": input.states.n_days,
        "theta": input.states.theta,
        "correction": net.correction.label(),
        "alpha": alpha,
        "threshold": net.threshold,
        "n_tests": n_tests,
        "n_tests_convention": convention,
        "candidates": graph.edges.len(),
        "candidate_ceiling": graph.ceiling,
        "validated_edges": net.edges.len(),
        "per_type": per_type(&net.per_type),
        "materialized_per_type": per_type(&graph.materialized),
        "diagonal_edges": diag.edges.len(),
        "non_isolated_nodes": net.nodes().len(),
    })
}

/// All SVN artifacts: both corrections, the configured fixed threshold when
/// any, containment and sweep.
pub fn svn_bundle(
    bundle: &mut Bundle,
    input: &NetworkInput,
    out: &SvnOutput,
    fixed: Option<&ClusterSet>,
    cfg: &SvnConfig,
) {
    bundle.insert("nodes.csv".into(), nodes_table(input));
    let n = input.states.n_investors();
    let tests = surveil_core::svn::n_tests(n, 9);
    let mut nets: Vec<(&str, &ValidatedNetwork, &ClusterSet)> = vec![
        ("bonferroni", &out.bonferroni, &out.bonferroni_clusters),
        ("fdr", &out.fdr, &out.fdr_clusters),
    ];
    let fixed_net;
    if let (Some(set), Correction::Fixed(p)) = (fixed, cfg.correction) {
        fixed_net = surveil_core::svn::validate_edges(&out.graph, Correction::Fixed(p), cfg.alpha, 9)
            .expect("fixed threshold within the candidate ceiling");
        nets.push(("fixed", &fixed_net, set));
    }
    for (name, net, set) in nets {
        let dir = format!("svn/{name}");
        bundle.insert(format!("{dir}/edges.csv"), edge_table(input, &out.graph, net));
        put_json(
            bundle,
            &format!("{dir}/network.json"),
            &network_summary("hypergeometric", input, net, cfg.alpha, tests, "9N(N-1)/2", &out.graph),
        );
        cluster_bundle(bundle, &dir, input, set, cfg);
    }
    put_json(
        bundle,
        "svn/containment.json",
        &json!({
            "rows": "fdr",
            "columns": "bonferroni",
            "row_clusters": out.containment.row_clusters,
            "column_clusters": out.containment.col_clusters,
            "column_sizes": out.bonferroni_clusters.partition.sizes,
            "values": out.containment.values,
        }),
    );
    put_json(
        bundle,
        "svn/restriction.json",
        &json!({ "stock": out.stock, "restriction": out.restriction }),
    );
    if let Some(sweep) = &out.sweep {
        put_json(bundle, "svn/sweep.json", sweep);
    }
}

pub fn bicm_bundle(bundle: &mut Bundle, input: &NetworkInput, out: &BicmOutput, cfg: &SvnConfig, alpha: f64) {
    if !bundle.contains_key("nodes.csv") {
        bundle.insert("nodes.csv".into(), nodes_table(input));
    }
    let validated = &out.clusters.network;
    let full = ValidatedNetwork::from_edges(
        out.n_nodes,
        validated.correction,
        out.threshold,
        out.candidates
            .edges
            .iter()
            .filter(|e| out.threshold.is_some_and(|t| e.p_value <= t))
            .copied()
            .collect(),
    );
    bundle.insert("bicm/edges.csv".into(), edge_table(input, &out.candidates, &full));
    let mut summary = network_summary("bicm", input, &full, alpha, out.n_tests, "", &out.candidates);
    summary["n_tests_convention"] = json!(if out.n_tests == surveil_core::bicm::TestCount::Stacked.count(out.n_nodes) {
        "3N(3N-1)/2"
    } else {
        "9N(N-1)/2"
    });
    summary["fits"] = serde_json::to_value(&out.fits).unwrap();
    put_json(bundle, "bicm/network.json", &summary);
    cluster_bundle(bundle, "bicm", input, &out.clusters, cfg);
    if let Some(cmp) = &out.comparison {
        put_json(bundle, "bicm/comparison.json", &json!({ "a": "svn", "b": "bicm", "comparison": cmp }));
    }
}

pub fn evaluation_bundle(bundle: &mut Bundle, evals: &[Evaluation]) {
    put_json(bundle, "evaluation.json", evals);
}
