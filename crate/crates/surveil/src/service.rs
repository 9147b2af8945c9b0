//! Read-only JSON API over completed runs, plus run launching.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use surveil_core::rings::{seed_neighbors, SeedStatus, MAX_DEPTH};
use surveil_core::svn::{Edge, LinkType};

use crate::artifacts::{ClusterReport, KmeansSuspects, RASTER_GLYPHS};
use crate::error::{AppError, AppResult};
use crate::io::read_json;
use crate::jobs::{self, primary_network};
use crate::runs::{list_complete, read_manifest, Manifest, Pipeline, RunConfig, RunStatus};

#[derive(Clone)]
pub struct AppState {
    pub root: Arc<PathBuf>,
}

/// Error payload `{code, message}` with a matching HTTP status.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Usage(m) => Self::bad_request(m),
            AppError::NotFound(m) => Self::not_found(m),
            AppError::Core(surveil_core::Error::UnknownInvestor(m)) => Self::not_found(format!("unknown investor {m}")),
            AppError::Core(c @ surveil_core::Error::InvalidParameter(_)) => Self::bad_request(c.to_string()),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "data_error", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(root: PathBuf) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(launch))
        .route("/runs/{id}/manifest", get(manifest))
        .route("/runs/{id}/suspects", get(suspects))
        .route("/runs/{id}/clusters", get(clusters))
        .route("/runs/{id}/clusters/{cid}/dossier", get(dossier))
        .route("/runs/{id}/clusters/{cid}/raster", get(raster))
        .route("/runs/{id}/neighbors", get(neighbors))
        .route("/runs/{id}/sweep", get(sweep))
        .route("/runs/{id}/containment", get(containment))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(AppState { root: Arc::new(root) })
}

pub async fn serve(root: PathBuf, addr: SocketAddr) -> AppResult<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AppError::Data(format!("cannot listen on {addr}: {e}")))?;
    tracing::info!(%addr, root = %root.display(), "serving runs");
    axum::serve(listener, router(root))
        .await
        .map_err(AppError::io("http server"))
}

/// A completed run and its directory.
struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn open(root: &Path, id: &str) -> Result<Self, ApiError> {
        if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
            return Err(ApiError::bad_request(format!("invalid run id {id:?}")));
        }
        let dir = root.join(id);
        let manifest = read_manifest(&dir).map_err(|_| ApiError::not_found(format!("no run {id}")))?;
        if manifest.status != RunStatus::Complete {
            return Err(ApiError::not_found(format!("run {id} is not complete")));
        }
        Ok(Self { dir, manifest })
    }

    fn has(&self, rel: &str) -> bool {
        self.manifest.artifact(rel).is_some()
    }

    fn json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T, ApiError> {
        if !self.has(rel) {
            return Err(ApiError::not_found(format!(
                "run {} has no {rel}",
                self.manifest.run_id
            )));
        }
        Ok(read_json(&self.dir.join(rel))?)
    }

    /// Network directory selected by `?network=`, defaulting to the run's
    /// primary network.
    fn network(&self, requested: Option<&str>) -> Result<String, ApiError> {
        let dir = match requested {
            None => primary_network(&self.manifest.summary)
                .ok_or_else(|| ApiError::not_found(format!("run {} has no clustered network", self.manifest.run_id)))?,
            Some(n @ ("bonferroni" | "fdr" | "fixed")) => format!("svn/{n}"),
            Some("bicm") => "bicm".to_string(),
            Some(other) => {
                return Err(ApiError::bad_request(format!(
                    "network must be bonferroni, fdr, fixed or bicm, got {other:?}"
                )))
            }
        };
        if !self.has(&format!("{dir}/clusters.json")) {
            return Err(ApiError::not_found(format!("run {} has no {dir} network", self.manifest.run_id)));
        }
        Ok(dir)
    }
}

async fn list_runs(State(st): State<AppState>) -> ApiResult<Value> {
    let runs = list_complete(&st.root)?;
    Ok(Json(json!(runs
        .iter()
        .map(|m| json!({
            "run_id": m.run_id,
            "pipeline": m.pipeline,
            "status": m.status,
            "seed": m.seed,
            "started_at": m.started_at,
            "finished_at": m.finished_at,
            "networks": m.summary.get("networks"),
        }))
        .collect::<Vec<_>>())))
}

#[derive(Deserialize)]
struct LaunchRequest {
    pipeline: Pipeline,
    #[serde(default)]
    config: RunConfig,
    /// Completed run supplying `panel.csv`, `calendar.csv`, `pse.csv`
    /// and `truth.json`, or the sources of `rank` / `compare`.
    #[serde(default)]
    runs: Vec<String>,
}

async fn launch(State(st): State<AppState>, Json(req): Json<LaunchRequest>) -> Result<(StatusCode, Json<Manifest>), ApiError> {
    let mut cfg = req.config;
    let mut dirs = Vec::new();
    for id in &req.runs {
        dirs.push(Run::open(&st.root, id)?);
    }
    match req.pipeline {
        Pipeline::Rank | Pipeline::Compare => cfg.sources = dirs.iter().map(|r| r.dir.clone()).collect(),
        _ => {
            if let Some(run) = dirs.first() {
                let pick = |name: &str| run.has(name).then(|| run.dir.join(name));
                cfg.panel = pick("panel.csv").or(cfg.panel);
                cfg.calendar = pick("calendar.csv").or(cfg.calendar);
                cfg.pse = pick("pse.csv").or(cfg.pse);
                cfg.truth = pick("truth.json").or(cfg.truth);
            }
        }
    }
    let root = st.root.as_ref().clone();
    let pipeline = req.pipeline;
    let manifest = tokio::task::spawn_blocking(move || {
        let path = jobs::execute(&root, pipeline, &cfg)?;
        read_manifest(&path)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(manifest)))
}

async fn manifest(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Manifest> {
    Ok(Json(Run::open(&st.root, &id)?.manifest))
}

async fn suspects(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Value> {
    let run = Run::open(&st.root, &id)?;
    let individuals: Option<KmeansSuspects> = if run.has("kmeans/suspects.json") {
        Some(run.json("kmeans/suspects.json")?)
    } else {
        None
    };
    let clusters = match primary_network(&run.manifest.summary) {
        Some(net) => {
            let report: ClusterReport = run.json(&format!("{net}/clusters.json"))?;
            let rows: Vec<_> = report
                .ranking
                .iter()
                .map(|&c| report.dossiers[c as usize - 1].clone())
                .collect();
            Some(json!({ "network": net, "rows": rows, "flagged_clusters": report.flagged_clusters, "flagged_traders": report.flagged_traders }))
        }
        None => None,
    };
    if individuals.is_none() && clusters.is_none() {
        return Err(ApiError::not_found(format!("run {id} has no suspect report")));
    }
    Ok(Json(json!({ "individuals": individuals, "clusters": clusters })))
}

#[derive(Deserialize)]
struct NetworkQuery {
    network: Option<String>,
}

async fn clusters(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NetworkQuery>,
) -> ApiResult<ClusterReport> {
    let run = Run::open(&st.root, &id)?;
    let net = run.network(q.network.as_deref())?;
    Ok(Json(run.json(&format!("{net}/clusters.json"))?))
}

fn cluster_id(report: &ClusterReport, cid: u32) -> Result<usize, ApiError> {
    if cid == 0 || cid as usize > report.dossiers.len() {
        return Err(ApiError::not_found(format!("no cluster {cid}")));
    }
    Ok(cid as usize - 1)
}

async fn dossier(
    State(st): State<AppState>,
    UrlPath((id, cid)): UrlPath<(String, u32)>,
    Query(q): Query<NetworkQuery>,
) -> ApiResult<Value> {
    let run = Run::open(&st.root, &id)?;
    let net = run.network(q.network.as_deref())?;
    let report: ClusterReport = run.json(&format!("{net}/clusters.json"))?;
    let d = &report.dossiers[cluster_id(&report, cid)?];
    let rank = report.ranking.iter().position(|&c| c == cid).map(|p| p + 1);
    Ok(Json(json!({ "network": net, "rank": rank, "dossier": d })))
}

async fn raster(
    State(st): State<AppState>,
    UrlPath((id, cid)): UrlPath<(String, u32)>,
    Query(q): Query<NetworkQuery>,
) -> ApiResult<Value> {
    let run = Run::open(&st.root, &id)?;
    let net = run.network(q.network.as_deref())?;
    let legend: Value = run.json(&format!("{net}/rasters/legend.json"))?;
    let members = legend["rows"]
        .get(cid.to_string())
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no cluster {cid}")))?;
    let rel = format!("{net}/rasters/cluster_{cid}.txt");
    if !run.has(&rel) {
        return Err(ApiError::not_found(format!("no raster for cluster {cid}")));
    }
    let text = std::fs::read_to_string(run.dir.join(&rel)).map_err(|e| AppError::io(&rel)(e))?;
    let rows: Vec<&str> = text.lines().collect();
    Ok(Json(json!({
        "network": net,
        "cluster": cid,
        "members": members,
        "rows": rows,
        "n_days": legend["n_days"],
        "pse_day": legend["pse_day"],
        "pse_date": legend["pse_date"],
        "reference_start_day": legend["reference_start_day"],
        "reference_start_date": legend["reference_start_date"],
        "glyphs": legend["glyphs"],
    })))
}

#[derive(Deserialize)]
struct NeighborQuery {
    seed: String,
    depth: Option<usize>,
    network: Option<String>,
}

struct NodeRow {
    id: String,
    kind: String,
    directionality: Option<f64>,
    expected_profit: f64,
    raster: String,
}

fn read_nodes(path: &Path) -> AppResult<Vec<NodeRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(AppError::csv(path))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(AppError::csv(path))?;
        let f = |i: usize| rec.get(i).unwrap_or_default().to_string();
        out.push(NodeRow {
            id: f(1),
            kind: f(2),
            directionality: f(5).parse().ok(),
            expected_profit: f(6).parse().unwrap_or(0.0),
            raster: f(7),
        });
    }
    Ok(out)
}

/// Validated diagonal edges of an `edges.csv`, with node indices.
fn read_diagonal_edges(path: &Path, index: &BTreeMap<&str, u32>) -> AppResult<Vec<Edge>> {
    let mut rdr = csv::Reader::from_path(path).map_err(AppError::csv(path))?;
    let bad = |what: &str| AppError::Data(format!("{}: bad {what}", path.display()));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(AppError::csv(path))?;
        if rec.get(5) != Some("true") {
            continue;
        }
        let link: LinkType = rec.get(2).unwrap_or_default().parse().map_err(|_| bad("link type"))?;
        if !link.is_diagonal() {
            continue;
        }
        let node = |i: usize| index.get(rec.get(i).unwrap_or_default()).copied().ok_or_else(|| bad("node"));
        out.push(Edge {
            i: node(0)?,
            j: node(1)?,
            link,
            weight: rec.get(3).and_then(|w| w.parse().ok()).ok_or_else(|| bad("weight"))?,
            p_value: rec.get(4).and_then(|w| w.parse().ok()).ok_or_else(|| bad("p-value"))?,
        });
    }
    Ok(out)
}

async fn neighbors(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NeighborQuery>,
) -> ApiResult<Value> {
    let run = Run::open(&st.root, &id)?;
    let net = match q.network.as_deref() {
        None if run.has("svn/fdr/clusters.json") => "svn/fdr".to_string(),
        other => run.network(other)?,
    };
    let depth = q.depth.unwrap_or(1);
    if depth == 0 || depth > MAX_DEPTH {
        return Err(ApiError::bad_request(format!("depth must be in 1..={MAX_DEPTH}")));
    }
    if !run.has("nodes.csv") {
        return Err(ApiError::not_found(format!("run {id} has no node table")));
    }
    let nodes = read_nodes(&run.dir.join("nodes.csv"))?;
    let index: BTreeMap<&str, u32> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i as u32)).collect();
    let seed = *index
        .get(q.seed.as_str())
        .ok_or_else(|| ApiError::not_found(format!("investor {} is not a node of run {id}", q.seed)))?;
    let edges = read_diagonal_edges(&run.dir.join(&net).join("edges.csv"), &index)?;
    let (status, found) = seed_neighbors(nodes.len(), &edges, seed, depth).map_err(AppError::from)?;
    let legend: Value = run.json(&format!("{net}/rasters/legend.json"))?;
    let card = |v: u32| {
        let n = &nodes[v as usize];
        json!({
            "investor_id": n.id,
            "type": n.kind,
            "directionality": n.directionality,
            "expected_profit": n.expected_profit,
            "raster": n.raster,
        })
    };
    let list: Vec<Value> = found
        .iter()
        .map(|nb| {
            let mut c = card(nb.node);
            c["hop"] = json!(nb.hop);
            c["parent"] = json!(nodes[nb.parent as usize].id);
            c["links"] = json!(nb
                .links
                .iter()
                .map(|l| json!({ "type": l.link.code(), "weight": l.weight, "p_value": l.p_value }))
                .collect::<Vec<_>>());
            c
        })
        .collect();
    Ok(Json(json!({
        "network": net,
        "depth": depth,
        "status": match status { SeedStatus::Connected => "connected", SeedStatus::Isolated => "isolated" },
        "seed": card(seed),
        "neighbors": list,
        "pse_day": legend["pse_day"],
        "reference_start_day": legend["reference_start_day"],
        "glyphs": RASTER_GLYPHS.iter().map(|(g, m)| json!({"glyph": g, "meaning": m})).collect::<Vec<_>>(),
    })))
}

async fn sweep(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Value> {
    Ok(Json(Run::open(&st.root, &id)?.json("svn/sweep.json")?))
}

async fn containment(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Value> {
    Ok(Json(Run::open(&st.root, &id)?.json("svn/containment.json")?))
}
