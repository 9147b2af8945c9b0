//! Pipeline execution: loading inputs, running the library pipelines and
//! persisting the resulting bundle as a run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use surveil_core::bicm::{compare_partitions, TestCount};
use surveil_core::community::Partition;
use surveil_core::panel::{PseEvent, TransactionPanel};
use surveil_core::pipeline::{
    fixed_clusters, network_input, run_bicm, run_kmeans, run_svn, ClusterSet, SweepConfig,
};
use surveil_core::svn::n_tests;
use surveil_core::synth::{evaluate, generate, Evaluation, GroundTruth};

use crate::artifacts::{self, Bundle, ClusterReport, KmeansSuspects};
use crate::error::{AppError, AppResult};
use crate::io::{self, read_json, IngestReport, Table};
use crate::runs::{digest_file, read_manifest, run_dir_of, FileDigest, Pipeline, RunConfig, RunDir, RunStatus};

/// Result of a pipeline before it is written anywhere.
pub struct Outcome {
    pub bundle: Bundle,
    pub summary: Value,
}

/// Parsed inputs of an analysis run.
pub struct Inputs {
    pub panel: TransactionPanel,
    pub events: Vec<PseEvent>,
    pub truth: Option<GroundTruth>,
    pub report: IngestReport,
    pub digests: Vec<FileDigest>,
}

impl Inputs {
    pub fn event(&self, stock: Option<&str>) -> AppResult<PseEvent> {
        io::select_event(&self.events, stock)
    }
}

pub fn load_inputs(cfg: &RunConfig, need_pse: bool) -> AppResult<Inputs> {
    let panel_path = cfg
        .panel
        .as_deref()
        .ok_or_else(|| AppError::Usage("no transaction panel given (use --panel, --run or the config file)".into()))?;
    let mut digests = vec![digest_file("panel", panel_path)?];
    let calendar = match &cfg.calendar {
        Some(p) => {
            digests.push(digest_file("calendar", p)?);
            io::read_calendar(p)?
        }
        None => Vec::new(),
    };
    let (panel, report) = io::read_panel(panel_path, &calendar, cfg.error_budget)?;
    let events = match &cfg.pse {
        Some(p) => {
            digests.push(digest_file("pse", p)?);
            io::read_pse(p, cfg.error_budget)?
        }
        None if need_pse => {
            return Err(AppError::Usage(
                "no PSE registry given (use --pse, --run or the config file)".into(),
            ))
        }
        None => Vec::new(),
    };
    let truth = match &cfg.truth {
        Some(p) => {
            digests.push(digest_file("truth", p)?);
            Some(read_json(p)?)
        }
        None => None,
    };
    Ok(Inputs {
        panel,
        events,
        truth,
        report,
        digests,
    })
}

pub fn synthesize(cfg: &RunConfig) -> AppResult<Outcome> {
    let scenario = generate(&cfg.scenario)?;
    let mut bundle = Bundle::new();
    artifacts::data_bundle(&mut bundle, &scenario.panel, std::slice::from_ref(&scenario.pse));
    artifacts::truth_bundle(&mut bundle, &scenario.truth);
    let summary = json!({
        "investors": scenario.panel.n_investors(),
        "stocks": scenario.panel.stocks().len(),
        "days": scenario.panel.n_days(),
        "cells": scenario.panel.cells().len(),
        "target": scenario.pse.stock,
        "pse_date": scenario.pse.pse_date,
        "injected": scenario.truth.entries.len(),
    });
    Ok(Outcome { bundle, summary })
}

pub fn ingest(inputs: &Inputs) -> Outcome {
    let mut bundle = Bundle::new();
    artifacts::data_bundle(&mut bundle, &inputs.panel, &inputs.events);
    let summary = json!({
        "rows_read": inputs.report.rows_read,
        "rows_kept": inputs.report.rows_kept,
        "rows_dropped": inputs.report.rows_dropped,
        "investors": inputs.panel.n_investors(),
        "stocks": inputs.panel.stocks().len(),
        "days": inputs.panel.n_days(),
        "cells": inputs.panel.cells().len(),
        "events": inputs.events.len(),
    });
    artifacts::put_json(&mut bundle, "ingest.json", &json!({ "summary": summary, "diagnostics": inputs.report.diagnostics }));
    Outcome { bundle, summary }
}

fn flagged_members(set: &ClusterSet) -> Vec<String> {
    set.dossiers
        .iter()
        .filter(|d| d.flagged)
        .flat_map(|d| d.members.iter().cloned())
        .collect()
}

/// Runs the analysis stages of `pipeline` on an in-memory panel.
pub fn analyze(
    pipeline: Pipeline,
    panel: &TransactionPanel,
    pse: &PseEvent,
    truth: Option<&GroundTruth>,
    cfg: &RunConfig,
) -> AppResult<Outcome> {
    let mut cfg = cfg.clone();
    if pipeline == Pipeline::Sweep && cfg.svn.sweep.is_none() {
        cfg.svn.sweep = Some(SweepConfig::default());
    }
    let with_kmeans = matches!(pipeline, Pipeline::Kmeans | Pipeline::Full);
    let with_svn = matches!(pipeline, Pipeline::Svn | Pipeline::Sweep | Pipeline::Bicm | Pipeline::Full);
    let with_bicm = matches!(pipeline, Pipeline::Bicm | Pipeline::Full);

    let mut bundle = Bundle::new();
    let mut summary = json!({ "stock": pse.stock, "pse_date": pse.pse_date, "ref_start": pse.ref_start });
    let mut evals: Vec<Evaluation> = Vec::new();

    if with_kmeans {
        let (cube, out) = run_kmeans(panel, pse, &cfg.kmeans)?;
        artifacts::kmeans_bundle(&mut bundle, panel, &cube, &out);
        let r = &out.report;
        summary["kmeans"] = json!({
            "k": out.k,
            "windows": out.grid.len(),
            "rewarding": r.rewarding,
            "suspects": r.suspects.len(),
            "hard": r.suspects.iter().filter(|s| s.class == surveil_core::discontinuity::DiscontinuityClass::HardDiscontinuous).count(),
            "significance": r.comparison.stars(),
            "different_1": r.comparison.different_1,
        });
        if let Some(t) = truth {
            let ids: Vec<String> = r.suspects.iter().map(|s| s.investor_id.clone()).collect();
            evals.push(evaluate("kmeans", &ids, t));
        }
    }

    if with_svn {
        let input = network_input(panel, pse, &cfg.svn)?;
        let out = run_svn(&input, pse, &cfg.svn)?;
        let fixed = fixed_clusters(&out, &input, &cfg.svn)?;
        artifacts::svn_bundle(&mut bundle, &input, &out, fixed.as_ref(), &cfg.svn);
        let primary_name = match cfg.svn.correction {
            surveil_core::svn::Correction::Bonferroni => "bonferroni",
            surveil_core::svn::Correction::Fdr => "fdr",
            surveil_core::svn::Correction::Fixed(_) => "fixed",
        };
        let primary = fixed.as_ref().unwrap_or_else(|| out.primary());
        let n = input.states.n_investors();
        summary["svn"] = json!({
            "n": n,
            "t": input.states.n_days,
            "theta": cfg.svn.theta,
            "alpha": cfg.svn.alpha,
            "n_tests": n_tests(n, 9),
            "n_tests_convention": "9N(N-1)/2",
            "bonferroni_threshold": out.bonferroni_threshold,
            "fdr_threshold": out.fdr_threshold,
            "bonferroni_edges": out.bonferroni.edges.len(),
            "fdr_edges": out.fdr.edges.len(),
            "primary": primary_name,
            "flagged_clusters": primary.suspects.flagged_clusters,
            "flagged_traders": primary.suspects.flagged_traders,
            "restriction": input.restriction,
        });
        summary["networks"] = json!([format!("svn/{primary_name}")]);
        if let Some(t) = truth {
            evals.push(evaluate(&format!("svn-{primary_name}"), &flagged_members(primary), t));
        }

        if with_bicm {
            let b = run_bicm(&input, pse, &cfg.bicm, &cfg.svn, Some(&primary.partition))?;
            artifacts::bicm_bundle(&mut bundle, &input, &b, &cfg.svn, cfg.bicm.alpha);
            summary["bicm"] = json!({
                "n_tests": b.n_tests,
                "n_tests_convention": if cfg.bicm.tests == TestCount::Stacked { "3N(3N-1)/2" } else { "9N(N-1)/2" },
                "correction": cfg.bicm.correction.label(),
                "threshold": b.threshold,
                "validated_edges": b.clusters.network.edges.len(),
                "flagged_clusters": b.clusters.suspects.flagged_clusters,
                "flagged_traders": b.clusters.suspects.flagged_traders,
                "matched_above_floor": b.comparison.as_ref().map(|c| c.matched_above_floor),
                "fits": b.fits,
            });
            if pipeline == Pipeline::Bicm {
                summary["networks"] = json!(["bicm", format!("svn/{primary_name}")]);
            } else {
                summary["networks"] = json!([format!("svn/{primary_name}"), "bicm"]);
            }
            if let Some(t) = truth {
                evals.push(evaluate("bicm", &flagged_members(&b.clusters), t));
            }
        }
    }

    if !evals.is_empty() {
        summary["evaluation"] = serde_json::to_value(&evals).unwrap();
        artifacts::evaluation_bundle(&mut bundle, &evals);
    }
    Ok(Outcome { bundle, summary })
}

/// Primary network directory of a run, from its summary.
pub fn primary_network(summary: &Value) -> Option<String> {
    summary["networks"].get(0).and_then(Value::as_str).map(str::to_string)
}

fn source_digests(runs: &[PathBuf], files: &[&str]) -> AppResult<Vec<FileDigest>> {
    let mut out = Vec::new();
    for run in runs {
        let dir = run_dir_of(run);
        let m = read_manifest(&dir)?;
        if m.status != RunStatus::Complete {
            return Err(AppError::Data(format!("run {} is not complete", m.run_id)));
        }
        out.push(digest_file("manifest", &dir.join(crate::runs::MANIFEST))?);
        for f in files {
            if m.artifact(f).is_some() {
                out.push(digest_file("artifact", &dir.join(f))?);
            }
        }
    }
    Ok(out)
}

/// Combined ranking of individual suspects and suspect-cluster members over
/// one or more completed runs.
pub fn rank(cfg: &RunConfig) -> AppResult<Outcome> {
    if cfg.sources.is_empty() {
        return Err(AppError::Usage("rank needs at least one completed run (--run)".into()));
    }
    #[derive(Default)]
    struct Row {
        kind: String,
        kmeans: Option<(usize, String, f64, f64)>,
        cluster: Option<(String, u32, usize, Option<f64>, f64)>,
    }
    let mut rows: BTreeMap<String, Row> = BTreeMap::new();
    for run in &cfg.sources {
        let dir = run_dir_of(run);
        let m = read_manifest(&dir)?;
        if m.artifact("kmeans/suspects.json").is_some() {
            let s: KmeansSuspects = read_json(&dir.join("kmeans/suspects.json"))?;
            for e in s.suspects {
                let row = rows.entry(e.investor_id.clone()).or_default();
                row.kind = e.investor_type.code().to_string();
                if row.kmeans.as_ref().map_or(true, |k| e.rank < k.0) {
                    row.kmeans = Some((e.rank, e.class.as_str().to_string(), e.score, e.shares_bought));
                }
            }
        }
        if let Some(net) = primary_network(&m.summary) {
            let report: ClusterReport = read_json(&dir.join(&net).join("clusters.json"))?;
            for (pos, cid) in report.ranking.iter().enumerate() {
                let d = &report.dossiers[*cid as usize - 1];
                for id in &d.members {
                    let row = rows.entry(id.clone()).or_default();
                    if row.cluster.as_ref().map_or(true, |c| pos + 1 < c.2) {
                        row.cluster = Some((format!("{}:{net}", m.run_id), d.cluster, pos + 1, d.mean_directionality, d.mean_profit));
                    }
                }
            }
        }
    }
    let mut ordered: Vec<(String, Row)> = rows.into_iter().collect();
    let key = |r: &Row| {
        let hits = r.kmeans.is_some() as u8 + r.cluster.is_some() as u8;
        (
            std::cmp::Reverse(hits),
            r.kmeans.as_ref().map_or(usize::MAX, |k| k.0),
            r.cluster.as_ref().map_or(usize::MAX, |c| c.2),
        )
    };
    ordered.sort_by(|a, b| key(&a.1).cmp(&key(&b.1)).then(a.0.cmp(&b.0)));
    let mut t = Table::new(&[
        "rank",
        "id",
        "type",
        "kmeans_rank",
        "class",
        "score",
        "shares",
        "network",
        "cluster",
        "cluster_rank",
        "r_c",
        "pi_c",
    ]);
    for (i, (id, r)) in ordered.iter().enumerate() {
        let (kr, class, score, shares) = match &r.kmeans {
            Some((a, b, c, d)) => (a.to_string(), b.clone(), c.to_string(), d.to_string()),
            None => Default::default(),
        };
        let (net, cid, crank, rc, pi) = match &r.cluster {
            Some((n, c, k, rc, pi)) => (n.clone(), c.to_string(), k.to_string(), io::opt(*rc), pi.to_string()),
            None => Default::default(),
        };
        t.row([(i + 1).to_string(), id.clone(), r.kind.clone(), kr, class, score, shares, net, cid, crank, rc, pi]);
    }
    let mut bundle = Bundle::new();
    bundle.insert("ranking.csv".into(), t.into_bytes());
    let summary = json!({
        "sources": cfg.sources.len(),
        "ranked": ordered.len(),
        "both_pipelines": ordered.iter().filter(|(_, r)| r.kmeans.is_some() && r.cluster.is_some()).count(),
    });
    Ok(Outcome { bundle, summary })
}

/// A partition as written to `partition.csv`, keyed by investor id.
pub fn read_partition(path: &Path) -> AppResult<BTreeMap<String, u32>> {
    let mut rdr = csv::Reader::from_path(path).map_err(AppError::csv(path))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(AppError::csv(path))?;
        let cluster = rec
            .get(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| AppError::Data(format!("{}: bad cluster id", path.display())))?;
        out.insert(rec.get(0).unwrap_or_default().to_string(), cluster);
    }
    Ok(out)
}

fn partition_over(universe: &[String], assignment: &BTreeMap<String, u32>) -> Partition {
    let clusters: Vec<Option<u32>> = universe.iter().map(|id| assignment.get(id).copied()).collect();
    let n_clusters = assignment.values().copied().max().unwrap_or(0) as usize;
    let mut sizes = vec![0usize; n_clusters];
    for c in clusters.iter().flatten() {
        sizes[*c as usize - 1] += 1;
    }
    Partition {
        clusters,
        sizes,
        codelength: 0.0,
    }
}

/// Cluster-by-cluster Jaccard comparison of two partitions: the primary
/// networks of two runs, or the SVN and BiCM clusters of one run.
pub fn compare(cfg: &RunConfig, floor: f64) -> AppResult<Outcome> {
    let mut sides: Vec<(String, PathBuf)> = Vec::new();
    for run in &cfg.sources {
        let dir = run_dir_of(run);
        let m = read_manifest(&dir)?;
        let nets: Vec<String> = m.summary["networks"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default();
        if nets.is_empty() {
            return Err(AppError::Data(format!("run {} has no clustered network", m.run_id)));
        }
        let take = if cfg.sources.len() == 1 { nets.len().min(2) } else { 1 };
        for net in nets.into_iter().take(take) {
            sides.push((format!("{}:{net}", m.run_id), dir.join(&net).join("partition.csv")));
        }
    }
    if sides.len() != 2 {
        return Err(AppError::Usage(
            "compare needs two runs, or one run holding both SVN and BiCM clusters".into(),
        ));
    }
    let a = read_partition(&sides[0].1)?;
    let b = read_partition(&sides[1].1)?;
    let universe: Vec<String> = a.keys().chain(b.keys()).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let cmp = compare_partitions(&partition_over(&universe, &a), &partition_over(&universe, &b), floor);
    let mut t = Table::new(&["a", "b", "jaccard"]);
    for m in &cmp.matches {
        t.row([m.a.to_string(), m.b.to_string(), m.jaccard.to_string()]);
    }
    let mut bundle = Bundle::new();
    bundle.insert("matches.csv".into(), t.into_bytes());
    artifacts::put_json(
        &mut bundle,
        "comparison.json",
        &json!({ "a": sides[0].0, "b": sides[1].0, "comparison": cmp }),
    );
    let summary = json!({
        "a": sides[0].0,
        "b": sides[1].0,
        "matches": cmp.matches.len(),
        "matched_above_floor": cmp.matched_above_floor,
        "floor": floor,
    });
    Ok(Outcome { bundle, summary })
}

/// Executes `pipeline` with `cfg` into a new run under `root` and returns
/// the manifest path.
pub fn execute(root: &Path, pipeline: Pipeline, cfg: &RunConfig) -> AppResult<PathBuf> {
    let cfg = cfg.clone().resolved();
    let (digests, job): (Vec<FileDigest>, Box<dyn FnOnce() -> AppResult<Outcome> + '_>) = match pipeline {
        Pipeline::Synth => (Vec::new(), Box::new(|| synthesize(&cfg))),
        Pipeline::Ingest => {
            let inputs = load_inputs(&cfg, false)?;
            (inputs.digests.clone(), Box::new(move || Ok(ingest(&inputs))))
        }
        Pipeline::Rank => (
            source_digests(&cfg.sources, &["kmeans/suspects.json"])?,
            Box::new(|| rank(&cfg)),
        ),
        Pipeline::Compare => (
            source_digests(&cfg.sources, &[])?,
            Box::new(|| compare(&cfg, cfg.bicm.match_floor)),
        ),
        _ => {
            let inputs = load_inputs(&cfg, true)?;
            let pse = inputs.event(cfg.stock.as_deref())?;
            inputs.panel.require_stock(&pse.stock)?;
            let digests = inputs.digests.clone();
            let cfg = &cfg;
            (
                digests,
                Box::new(move || analyze(pipeline, &inputs.panel, &pse, inputs.truth.as_ref(), cfg)),
            )
        }
    };
    let run = RunDir::create(root, pipeline, &cfg, digests)?;
    match job() {
        Ok(out) => run.complete(&out.bundle, out.summary),
        Err(e) => {
            run.fail(&e)?;
            Err(e)
        }
    }
}
