//! Run directories: configuration snapshots, manifests and artifact
//! persistence.
//!
//! A run directory holds `manifest.json` plus the artifacts it lists. The
//! manifest is written with status `running` before any artifact and
//! replaced atomically by the final one; a `complete` manifest is never
//! rewritten.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surveil_core::pipeline::{BicmConfig, KmeansConfig, SvnConfig};
use surveil_core::synth::ScenarioConfig;

use crate::artifacts::Bundle;
use crate::error::{AppError, AppResult};
use crate::io::to_json_bytes;

pub const MANIFEST: &str = "manifest.json";
pub const DEFAULT_ROOT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Ingest,
    Synth,
    Kmeans,
    Svn,
    Bicm,
    Sweep,
    Rank,
    Compare,
    Full,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Ingest => "ingest",
            Pipeline::Synth => "synth",
            Pipeline::Kmeans => "kmeans",
            Pipeline::Svn => "svn",
            Pipeline::Bicm => "bicm",
            Pipeline::Sweep => "sweep",
            Pipeline::Rank => "rank",
            Pipeline::Compare => "compare",
            Pipeline::Full => "full",
        }
    }

    /// Null model of the validated networks the pipeline writes.
    pub fn null_model(self) -> Option<&'static str> {
        match self {
            Pipeline::Svn | Pipeline::Sweep => Some("hypergeometric"),
            Pipeline::Bicm => Some("bicm"),
            Pipeline::Full => Some("hypergeometric+bicm"),
            _ => None,
        }
    }
}

/// Everything a run needs besides its input files. Stored verbatim in the
/// manifest; replaying a run re-executes exactly this configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Single source of randomness; copied into every stage on resolve.
    pub seed: u64,
    pub stock: Option<String>,
    pub panel: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub pse: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Completed runs read by `rank` and `compare`.
    pub sources: Vec<PathBuf>,
    /// Malformed input rows tolerated before a file is rejected.
    pub error_budget: usize,
    pub kmeans: KmeansConfig,
    pub svn: SvnConfig,
    pub bicm: BicmConfig,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            stock: None,
            panel: None,
            calendar: None,
            pse: None,
            truth: None,
            sources: Vec::new(),
            error_budget: 0,
            kmeans: KmeansConfig::default(),
            svn: SvnConfig::default(),
            bicm: BicmConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let bytes = fs::read(path).map_err(AppError::io(path))?;
        serde_json::from_slice(&bytes).map_err(|e| AppError::Usage(format!("{}: invalid configuration: {e}", path.display())))
    }

    /// Propagates the run seed into every randomised stage.
    pub fn resolved(mut self) -> Self {
        self.kmeans.seed = self.seed;
        self.svn.infomap.seed = self.seed;
        self.scenario.seed = self.seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub pipeline: Pipeline,
    pub status: RunStatus,
    pub seed: u64,
    pub null_model: Option<String>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub config: RunConfig,
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<FileDigest>,
    pub summary: serde_json::Value,
    pub error: Option<String>,
}

impl Manifest {
    pub fn artifact(&self, path: &str) -> Option<&FileDigest> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(role: &str, path: &Path) -> AppResult<FileDigest> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    Ok(FileDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Run root: explicit `--out`, then `SURV_HOME`, then `./runs`.
pub fn run_root(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("SURV_HOME")
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT)),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(AppError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(AppError::io(path))
}

/// A run directory being populated.
pub struct RunDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    /// Creates a fresh, uniquely named directory under `root`.
    pub fn create(root: &Path, pipeline: Pipeline, config: &RunConfig, inputs: Vec<FileDigest>) -> AppResult<Self> {
        fs::create_dir_all(root).map_err(AppError::io(root))?;
        let now = Utc::now();
        let mut h = Sha256::new();
        h.update(to_json_bytes(config));
        for i in &inputs {
            h.update(i.sha256.as_bytes());
        }
        h.update(now.timestamp_nanos_opt().unwrap_or_default().to_le_bytes());
        h.update(std::process::id().to_le_bytes());
        let tag = &hex::encode(h.finalize())[..8];
        let stem = format!("{}-{}-{tag}", pipeline.as_str(), now.format("%Y%m%dT%H%M%S"));
        let mut attempt = 0;
        let (run_id, dir) = loop {
            let id = if attempt == 0 { stem.clone() } else { format!("{stem}-{attempt}") };
            let dir = root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => attempt += 1,
                Err(e) => return Err(AppError::io(&dir)(e)),
            }
        };
        let manifest = Manifest {
            run_id,
            pipeline,
            status: RunStatus::Running,
            seed: config.seed,
            null_model: pipeline.null_model().map(str::to_string),
            started_at: now.to_rfc3339(),
            finished_at: None,
            inputs,
            config: config.clone(),
            artifacts: Vec::new(),
            summary: serde_json::Value::Null,
            error: None,
        };
        let run = RunDir { dir, manifest };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST)
    }

    fn write_manifest(&self) -> AppResult<()> {
        write_atomic(&self.manifest_path(), &to_json_bytes(&self.manifest))
    }

    /// Writes every artifact, then the completed manifest.
    pub fn complete(mut self, bundle: &Bundle, summary: serde_json::Value) -> AppResult<PathBuf> {
        for (rel, bytes) in bundle {
            let path = self.dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(AppError::io(parent))?;
            }
            fs::write(&path, bytes).map_err(AppError::io(&path))?;
            self.manifest.artifacts.push(FileDigest {
                role: "artifact".into(),
                path: rel.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            });
        }
        self.manifest.summary = summary;
        self.manifest.status = RunStatus::Complete;
        self.manifest.finished_at = Some(Utc::now().to_rfc3339());
        self.write_manifest()?;
        Ok(self.manifest_path())
    }

    pub fn fail(mut self, err: &AppError) -> AppResult<PathBuf> {
        self.manifest.status = RunStatus::Failed;
        self.manifest.error = Some(err.to_string());
        self.manifest.finished_at = Some(Utc::now().to_rfc3339());
        self.write_manifest()?;
        Ok(self.manifest_path())
    }
}

/// Reads the manifest of a run directory (or of the directory containing a
/// given `manifest.json`).
pub fn read_manifest(run: &Path) -> AppResult<Manifest> {
    let path = if run.file_name().is_some_and(|n| n == MANIFEST) {
        run.to_path_buf()
    } else {
        run.join(MANIFEST)
    };
    if !path.is_file() {
        return Err(AppError::NotFound(format!("no run manifest at {}", path.display())));
    }
    crate::io::read_json(&path)
}

pub fn run_dir_of(run: &Path) -> PathBuf {
    if run.file_name().is_some_and(|n| n == MANIFEST) {
        run.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        run.to_path_buf()
    }
}

/// Completed runs under `root`, sorted by run id.
pub fn list_complete(root: &Path) -> AppResult<Vec<Manifest>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(AppError::io(root)(e)),
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if !path.join(MANIFEST).is_file() {
            continue;
        }
        if let Ok(m) = read_manifest(&path) {
            if m.status == RunStatus::Complete {
                out.push(m);
            }
        }
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_and_listing() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default().resolved();
        let a = RunDir::create(root.path(), Pipeline::Svn, &cfg, vec![]).unwrap();
        let b = RunDir::create(root.path(), Pipeline::Svn, &cfg, vec![]).unwrap();
        assert_ne!(a.manifest.run_id, b.manifest.run_id);
        assert_eq!(read_manifest(&a.dir).unwrap().status, RunStatus::Running);
        assert!(list_complete(root.path()).unwrap().is_empty());

        let mut bundle = Bundle::new();
        bundle.insert("x/y.csv".into(), b"a,b\n1,2\n".to_vec());
        let path = a.complete(&bundle, serde_json::json!({"k": 1})).unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        assert_eq!(m.null_model.as_deref(), Some("hypergeometric"));
        assert_eq!(m.artifact("x/y.csv").unwrap().sha256, sha256_hex(b"a,b\n1,2\n"));
        b.fail(&AppError::Data("boom".into())).unwrap();
        let listed = list_complete(root.path()).unwrap();
        assert_eq!(listed.len(), 1);
        assert_eq!(listed[0].run_id, m.run_id);
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = RunConfig {
            seed: 77,
            ..Default::default()
        }
        .resolved();
        assert_eq!((cfg.kmeans.seed, cfg.svn.infomap.seed, cfg.scenario.seed), (77, 77, 77));
        let text = String::from_utf8(to_json_bytes(&cfg)).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
