use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use surveil::jobs::execute;
use surveil::runs::{read_manifest, run_dir_of, Pipeline, RunConfig, RunDir};
use surveil::service::router;
use surveil_core::pipeline::{network_input, run_svn};
use surveil_core::rings::seed_neighbors;
use surveil_core::synth::{generate, Injection};
use tower::ServiceExt;

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    cfg: RunConfig,
    synth: String,
    full: String,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.scenario.n_traders = 300;
    cfg.scenario.n_days = 100;
    cfg.scenario.n_stocks = 3;
    cfg.scenario.injections = vec![Injection::individuals(6, 4), Injection::ring(5, 12)];
    cfg.svn.sweep = Some(Default::default());
    let synth = execute(&root, Pipeline::Synth, &cfg).unwrap();
    let dir = run_dir_of(&synth);
    let mut full_cfg = cfg.clone();
    full_cfg.panel = Some(dir.join("panel.csv"));
    full_cfg.calendar = Some(dir.join("calendar.csv"));
    full_cfg.pse = Some(dir.join("pse.csv"));
    full_cfg.truth = Some(dir.join("truth.json"));
    let full = execute(&root, Pipeline::Full, &full_cfg).unwrap();
    let id = |p: &Path| read_manifest(p).unwrap().run_id;
    Fixture {
        synth: id(&synth),
        full: id(&full),
        _tmp: tmp,
        root,
        cfg: full_cfg,
    }
}

async fn call(root: &Path, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(root.to_path_buf()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(root: &Path, uri: &str) -> (StatusCode, Value) {
    call(root, "GET", uri, None).await
}

#[tokio::test]
async fn endpoints_are_views_of_completed_runs() {
    let f = fixture();
    let root = f.root.as_path();
    let running = RunDir::create(root, Pipeline::Svn, &f.cfg, vec![]).unwrap();
    let hidden = running.manifest.run_id.clone();

    let (s, runs) = get(root, "/runs").await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = runs.as_array().unwrap().iter().map(|r| r["run_id"].as_str().unwrap()).collect();
    assert!(ids.contains(&f.full.as_str()) && ids.contains(&f.synth.as_str()));
    assert!(!ids.contains(&hidden.as_str()));
    let (s, err) = get(root, &format!("/runs/{hidden}/manifest")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    assert!(err["message"].as_str().unwrap().contains("not complete"));

    let (s, m) = get(root, &format!("/runs/{}/manifest", f.full)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["status"], "complete");
    assert_eq!(m["pipeline"], "full");

    let (_, sus) = get(root, &format!("/runs/{}/suspects", f.full)).await;
    let first = &sus["individuals"]["suspects"][0];
    for k in ["rank", "investor_id", "investor_type", "score", "shares_bought", "directionality", "expected_profit"] {
        assert!(first.get(k).is_some(), "{k}");
    }
    assert_eq!(sus["clusters"]["network"], "svn/bonferroni");
    let top = sus["clusters"]["rows"][0]["cluster"].as_u64().unwrap();

    let (_, clusters) = get(root, &format!("/runs/{}/clusters?network=fdr", f.full)).await;
    assert_eq!(clusters["network"], "fdr");
    let (_, d) = get(root, &format!("/runs/{}/clusters/{top}/dossier", f.full)).await;
    assert_eq!(d["rank"], 1);
    assert!(d["dossier"]["flagged"].as_bool().unwrap());

    let (s, r) = get(root, &format!("/runs/{}/clusters/{top}/raster", f.full)).await;
    assert_eq!(s, StatusCode::OK);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), r["members"].as_array().unwrap().len());
    let n_days = r["n_days"].as_u64().unwrap() as usize;
    assert!(rows.iter().all(|row| row.as_str().unwrap().len() == n_days));
    assert!(r["pse_day"].as_u64().unwrap() > r["reference_start_day"].as_u64().unwrap());

    let (s, sweep) = get(root, &format!("/runs/{}/sweep", f.full)).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!sweep["points"].as_array().unwrap().is_empty());
    let (_, c) = get(root, &format!("/runs/{}/containment", f.full)).await;
    assert_eq!(c["rows"], "fdr");

    for (uri, status) in [
        (format!("/runs/{}/sweep", f.synth), StatusCode::NOT_FOUND),
        (format!("/runs/{}/clusters/999/dossier", f.full), StatusCode::NOT_FOUND),
        (format!("/runs/{}/clusters?network=louvain", f.full), StatusCode::BAD_REQUEST),
        ("/runs/nope/manifest".to_string(), StatusCode::NOT_FOUND),
        ("/runs/..%2Fx/manifest".to_string(), StatusCode::BAD_REQUEST),
        (format!("/runs/{}/neighbors?seed=NOBODY", f.full), StatusCode::NOT_FOUND),
        ("/elsewhere".to_string(), StatusCode::NOT_FOUND),
    ] {
        let (s, body) = get(root, &uri).await;
        assert_eq!(s, status, "{uri}");
        assert!(body["code"].is_string() && body["message"].is_string(), "{uri}");
    }
    let before = std::fs::read(root.join(&f.full).join("manifest.json")).unwrap();
    let _ = get(root, &format!("/runs/{}/suspects", f.full)).await;
    assert_eq!(before, std::fs::read(root.join(&f.full).join("manifest.json")).unwrap());
}

#[tokio::test]
async fn neighbors_match_a_direct_library_call() {
    let f = fixture();
    let root = f.root.as_path();
    let cfg = f.cfg.clone().resolved();
    let s = generate(&cfg.scenario).unwrap();
    let input = network_input(&s.panel, &s.pse, &cfg.svn).unwrap();
    let out = run_svn(&input, &s.pse, &cfg.svn).unwrap();
    let diag = out.fdr.diagonal();
    let ring = &s.truth.rings()[0];

    let seed_id = &ring[0];
    let seed = input.panel.investor_index(seed_id).unwrap();
    let (status, direct) = seed_neighbors(diag.n_nodes, &diag.edges, seed, 2).unwrap();
    let (code, body) = get(root, &format!("/runs/{}/neighbors?seed={seed_id}&depth=2", f.full)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["network"], "svn/fdr");
    assert_eq!(body["status"], json!(status));
    let served = body["neighbors"].as_array().unwrap();
    assert_eq!(served.len(), direct.len());
    for (a, b) in served.iter().zip(&direct) {
        assert_eq!(a["investor_id"], input.panel.investor(b.node).id.as_str());
        assert_eq!(a["hop"], b.hop);
        assert_eq!(a["parent"], input.panel.investor(b.parent).id.as_str());
        let links: Vec<(String, u64, f64)> = a["links"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| (l["type"].as_str().unwrap().into(), l["weight"].as_u64().unwrap(), l["p_value"].as_f64().unwrap()))
            .collect();
        let want: Vec<(String, u64, f64)> = b.links.iter().map(|l| (l.link.code().into(), l.weight as u64, l.p_value)).collect();
        assert_eq!(links, want);
        let st = &input.stats[b.node as usize];
        assert_eq!(a["directionality"].as_f64(), st.directionality);
        assert_eq!(a["expected_profit"].as_f64().unwrap(), st.expected_profit);
        assert_eq!(a["raster"], surveil_core::rings::raster_row(&input.states, b.node));
    }
    let mates: Vec<&str> = served.iter().filter(|n| n["hop"] == 1).map(|n| n["investor_id"].as_str().unwrap()).collect();
    for m in &ring[1..] {
        assert!(mates.contains(&m.as_str()), "ring mate {m} missing at depth 1");
    }

    let isolated = (0..diag.n_nodes as u32).find(|v| !diag.edges.iter().any(|e| e.i == *v || e.j == *v)).unwrap();
    let iso_id = &input.panel.investor(isolated).id;
    let (_, body) = get(root, &format!("/runs/{}/neighbors?seed={iso_id}", f.full)).await;
    assert_eq!(body["status"], "isolated");
    assert!(body["neighbors"].as_array().unwrap().is_empty());
    let (code, _) = get(root, &format!("/runs/{}/neighbors?seed={iso_id}&depth=4", f.full)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn post_runs_launches_from_config() {
    let f = fixture();
    let root = f.root.as_path();
    let mut cfg = f.cfg.clone();
    cfg.panel = None;
    cfg.calendar = None;
    cfg.pse = None;
    cfg.truth = None;
    let (s, m) = call(root, "POST", "/runs", Some(json!({ "pipeline": "svn", "config": cfg, "runs": [f.synth] }))).await;
    assert_eq!(s, StatusCode::CREATED, "{m}");
    assert_eq!(m["status"], "complete");
    let id = m["run_id"].as_str().unwrap();
    let (s, _) = get(root, &format!("/runs/{id}/clusters")).await;
    assert_eq!(s, StatusCode::OK);

    let (s, err) = call(root, "POST", "/runs", Some(json!({ "pipeline": "svn", "config": cfg }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
}
