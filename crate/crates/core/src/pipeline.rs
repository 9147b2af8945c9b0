//! End-to-end runs of the detection pipelines over one stock and event.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bicm::{self, BicmModel, PartitionComparison, TestCount, VmotifOptions};
use crate::community::{infomap_partition, Graph, InfomapOptions, Partition};
use crate::discontinuity::{detect, ChiSquareVariant, DiscontinuityReport};
use crate::exec;
use crate::features::{feature_cube, make_windows, FeatureCube, RescaleScope, WindowGrid};
use crate::kmeans::{self, dynamic_cluster, elbow_select, select_global_k, ClusterTimeline, DynamicOptions, ElbowChoice, MAX_ALIGN_K};
use crate::panel::{restrict_active, PseEvent, RestrictionReport, TransactionPanel};
use crate::rings::{
    cluster_dossiers, containment_matrix, investor_stats, suspect_clusters, ClusterDossier, Containment,
    DirectionalityMode, InvestorStats, SuspectClusters,
};
use crate::svn::{
    assign_states, correction_threshold, log_grid, project_traders, threshold_sweep, validate_edges, Correction,
    Multigraph, StateMatrix, SweepCurve, ValidatedNetwork,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansConfig {
    pub window: usize,
    pub step: usize,
    pub k_max: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub rescale: RescaleScope,
    pub chi_square: ChiSquareVariant,
    /// Largest tolerated move of the rewarding centroid between windows
    /// before a warning is attached.
    pub stability_bound: f64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            window: 20,
            step: 5,
            k_max: 10,
            rel_tol: 0.05,
            seed: 0,
            restarts: 16,
            max_iter: 300,
            rescale: RescaleScope::AllWindows,
            chi_square: ChiSquareVariant::Printed,
            stability_bound: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansOutput {
    pub stock: String,
    pub grid: WindowGrid,
    /// Elbow choice per window; `None` for windows with fewer than two
    /// active investors.
    pub elbows: Vec<Option<ElbowChoice>>,
    pub k: usize,
    pub timeline: ClusterTimeline,
    pub report: DiscontinuityReport,
}

/// Windows over the panel up to the event day, elbow per window, global K,
/// dynamic clustering and discontinuity detection.
pub fn run_kmeans(panel: &TransactionPanel, pse: &PseEvent, cfg: &KmeansConfig) -> Result<(FeatureCube, KmeansOutput)> {
    let stock = panel.require_stock(&pse.stock)?;
    let (_, end) = pse.reference_days(panel)?;
    let calendar = panel.calendar();
    let grid = make_windows(calendar, cfg.window, cfg.step, calendar[0], calendar[end])?;
    let cube = feature_cube(panel, stock, grid.clone(), cfg.rescale)?;
    let fit = kmeans::FitOptions {
        max_iter: cfg.max_iter,
        n_restarts: cfg.restarts,
    };

    let elbows: Vec<Result<Option<ElbowChoice>>> = exec::map_indexed(grid.len(), |w| {
        let (_, points) = cube.active_points(w);
        if points.len() < 2 {
            return Ok(None);
        }
        let k_max = cfg.k_max.min(points.len());
        let seed = cfg.seed ^ ((w as u64 + 1) << 40);
        elbow_select(&points, k_max, cfg.rel_tol, seed, fit).map(Some)
    });
    let elbows: Vec<Option<ElbowChoice>> = elbows.into_iter().collect::<Result<_>>()?;
    let ks: Vec<usize> = elbows.iter().flatten().map(|e| e.k).collect();
    if ks.is_empty() {
        return Err(Error::Precondition("no window has two or more active investors".into()));
    }
    let k = select_global_k(&ks)?.min(MAX_ALIGN_K);
    let timeline = dynamic_cluster(
        &cube,
        k,
        DynamicOptions {
            seed: cfg.seed,
            first_window: fit,
            max_iter: cfg.max_iter,
        },
    )?;
    let report = detect(&timeline, &cube, panel, pse, cfg.chi_square, cfg.stability_bound)?;
    let out = KmeansOutput {
        stock: pse.stock.clone(),
        grid,
        elbows,
        k,
        timeline,
        report,
    };
    Ok((cube, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lo: 1e-14,
            hi: 1e-3,
            points: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvnConfig {
    pub theta: f64,
    pub min_days: usize,
    pub alpha: f64,
    /// Correction whose network feeds the reported clusters.
    pub correction: Correction,
    pub r_floor: f64,
    pub report_floor: f64,
    pub directionality: DirectionalityMode,
    pub infomap: InfomapOptions,
    pub sweep: Option<SweepConfig>,
}

impl Default for SvnConfig {
    fn default() -> Self {
        Self {
            theta: crate::svn::DEFAULT_THETA,
            min_days: 8,
            alpha: 0.01,
            correction: Correction::Bonferroni,
            r_floor: 0.9,
            report_floor: 0.5,
            directionality: DirectionalityMode::Volume,
            infomap: InfomapOptions::default(),
            sweep: None,
        }
    }
}

impl SvnConfig {
    /// Largest p-value any requested validation can accept; candidate links
    /// above it are not stored.
    pub fn ceiling(&self) -> f64 {
        let mut c = self.alpha;
        if let Correction::Fixed(p) = self.correction {
            c = c.max(p);
        }
        if let Some(s) = self.sweep {
            c = c.max(s.hi);
        }
        c
    }
}

/// Restricted panel, states and per-investor reference statistics shared
/// by the network pipelines.
#[derive(Debug, Clone)]
pub struct NetworkInput {
    pub panel: TransactionPanel,
    pub stock: u32,
    pub restriction: RestrictionReport,
    pub states: StateMatrix,
    pub reference: (usize, usize),
    pub pse_day: usize,
    pub stats: Vec<InvestorStats>,
}

pub fn network_input(panel: &TransactionPanel, pse: &PseEvent, cfg: &SvnConfig) -> Result<NetworkInput> {
    let stock = panel.require_stock(&pse.stock)?;
    let (restricted, restriction) = restrict_active(panel, stock, cfg.min_days)?;
    if restricted.n_investors() == 0 {
        return Err(Error::Precondition(alloc::format!(
            "no investor is active on {} for at least {} days",
            pse.stock,
            cfg.min_days
        )));
    }
    let stock = restricted.require_stock(&pse.stock)?;
    let states = assign_states(&restricted, stock, cfg.theta)?;
    let reference = pse.reference_days(&restricted)?;
    let stats = investor_stats(&restricted, stock, reference, pse.offer_price, cfg.directionality);
    Ok(NetworkInput {
        panel: restricted,
        stock,
        restriction,
        states,
        reference,
        pse_day: reference.1,
        stats,
    })
}

/// Clusters of one validated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub network: ValidatedNetwork,
    pub partition: Partition,
    pub dossiers: Vec<ClusterDossier>,
    pub suspects: SuspectClusters,
}

/// Diagonal subnetwork, map-equation clusters and their dossiers.
pub fn cluster_network(net: &ValidatedNetwork, input: &NetworkInput, cfg: &SvnConfig) -> ClusterSet {
    let diag = net.diagonal();
    let graph = Graph::from_edges(diag.n_nodes, diag.collapsed());
    let partition = infomap_partition(&graph, cfg.infomap);
    let dossiers = cluster_dossiers(&partition, &input.panel, &input.stats, cfg.r_floor);
    let suspects = suspect_clusters(&dossiers, cfg.report_floor);
    ClusterSet {
        network: diag,
        partition,
        dossiers,
        suspects,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvnOutput {
    pub stock: String,
    pub restriction: RestrictionReport,
    pub n_nodes: usize,
    pub n_days: usize,
    pub theta: f64,
    pub alpha: f64,
    pub bonferroni_threshold: Option<f64>,
    pub fdr_threshold: Option<f64>,
    pub graph: Multigraph,
    /// Full (all link types) validated networks.
    pub bonferroni: ValidatedNetwork,
    pub fdr: ValidatedNetwork,
    pub bonferroni_clusters: ClusterSet,
    pub fdr_clusters: ClusterSet,
    /// Rows: FDR clusters (plus unassigned), columns: Bonferroni clusters.
    pub containment: Containment,
    pub correction: Correction,
    pub sweep: Option<SweepCurve>,
}

impl SvnOutput {
    /// Clusters of the configured correction.
    pub fn primary(&self) -> &ClusterSet {
        match self.correction {
            Correction::Fdr => &self.fdr_clusters,
            _ => &self.bonferroni_clusters,
        }
    }
}

/// Clusters of a fixed-threshold correction, when configured.
pub fn fixed_clusters(out: &SvnOutput, input: &NetworkInput, cfg: &SvnConfig) -> Result<Option<ClusterSet>> {
    match cfg.correction {
        Correction::Fixed(_) => {
            let net = validate_edges(&out.graph, cfg.correction, cfg.alpha, 9)?;
            Ok(Some(cluster_network(&net, input, cfg)))
        }
        _ => Ok(None),
    }
}

pub fn run_svn(input: &NetworkInput, pse: &PseEvent, cfg: &SvnConfig) -> Result<SvnOutput> {
    let graph = project_traders(&input.states, cfg.ceiling());
    let bonferroni = validate_edges(&graph, Correction::Bonferroni, cfg.alpha, 9)?;
    let fdr = validate_edges(&graph, Correction::Fdr, cfg.alpha, 9)?;
    let bonferroni_clusters = cluster_network(&bonferroni, input, cfg);
    let fdr_clusters = cluster_network(&fdr, input, cfg);
    let containment = containment_matrix(&fdr_clusters.partition, &bonferroni_clusters.partition);
    let bonferroni_threshold = correction_threshold(&graph, Correction::Bonferroni, cfg.alpha, 9);
    let fdr_threshold = correction_threshold(&graph, Correction::Fdr, cfg.alpha, 9);

    let sweep = match cfg.sweep {
        None => None,
        Some(s) => {
            let mut marks = Vec::new();
            if let Some(t) = bonferroni_threshold.filter(|&t| t <= graph.ceiling) {
                marks.push((String::from("bonferroni"), t));
            }
            if let Some(t) = fdr_threshold.filter(|&t| t <= graph.ceiling) {
                marks.push((String::from("fdr"), t));
            }
            let grid = log_grid(s.lo, s.hi.min(graph.ceiling.max(s.lo)), s.points);
            Some(threshold_sweep(&graph, &grid, &marks, |diag| {
                let g = Graph::from_edges(diag.n_nodes, diag.collapsed());
                let partition = infomap_partition(&g, cfg.infomap);
                let dossiers = cluster_dossiers(&partition, &input.panel, &input.stats, cfg.r_floor);
                suspect_clusters(&dossiers, cfg.report_floor).flagged_traders
            })?)
        }
    };
    Ok(SvnOutput {
        stock: pse.stock.clone(),
        restriction: input.restriction.clone(),
        n_nodes: input.states.n_investors(),
        n_days: input.states.n_days,
        theta: cfg.theta,
        alpha: cfg.alpha,
        bonferroni_threshold,
        fdr_threshold,
        graph,
        bonferroni,
        fdr,
        bonferroni_clusters,
        fdr_clusters,
        containment,
        correction: cfg.correction,
        sweep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BicmConfig {
    pub correction: Correction,
    pub alpha: f64,
    pub tests: TestCount,
    pub tol: f64,
    pub max_iter: usize,
    /// Similarity floor for the matched-pair summary.
    pub match_floor: f64,
}

impl Default for BicmConfig {
    fn default() -> Self {
        let fit = bicm::FitOptions::default();
        Self {
            correction: Correction::Fdr,
            alpha: 0.01,
            tests: TestCount::Stacked,
            tol: fit.tol,
            max_iter: fit.max_iter,
            match_floor: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFit {
    pub layer: String,
    pub iterations: usize,
    pub residual: f64,
    pub reduced_rows: usize,
    pub reduced_cols: usize,
    pub final_log_likelihood: Option<f64>,
}

impl LayerFit {
    fn of(layer: &str, m: &BicmModel) -> Self {
        Self {
            layer: layer.into(),
            iterations: m.iterations,
            residual: m.residual,
            reduced_rows: m.reduced_rows,
            reduced_cols: m.reduced_cols,
            final_log_likelihood: m.log_likelihood.last().copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicmOutput {
    pub stock: String,
    pub n_nodes: usize,
    pub n_tests: f64,
    pub threshold: Option<f64>,
    pub fits: Vec<LayerFit>,
    pub candidates: Multigraph,
    pub clusters: ClusterSet,
    /// Against the SVN partition passed in, when any.
    pub comparison: Option<PartitionComparison>,
}

/// BiCM null per state layer, V-motif validation and clustering; compared
/// with `svn_partition` when given.
pub fn run_bicm(
    input: &NetworkInput,
    pse: &PseEvent,
    cfg: &BicmConfig,
    svn: &SvnConfig,
    svn_partition: Option<&Partition>,
) -> Result<BicmOutput> {
    let layers = bicm::split_tripartite(&input.states);
    let models = bicm::fit_layers(
        &layers,
        bicm::FitOptions {
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        },
    )?;
    let ceiling = match cfg.correction {
        Correction::Fixed(p) => p.max(cfg.alpha),
        _ => cfg.alpha,
    };
    let res = bicm::vmotif_validate(
        &layers,
        &models,
        VmotifOptions {
            correction: cfg.correction,
            alpha: cfg.alpha,
            tests: cfg.tests,
            ceiling,
        },
    )?;
    let threshold = res.validated.threshold;
    let clusters = cluster_network(&res.validated, input, svn);
    let comparison = svn_partition.map(|p| bicm::compare_partitions(p, &clusters.partition, cfg.match_floor));
    Ok(BicmOutput {
        stock: pse.stock.clone(),
        n_nodes: input.states.n_investors(),
        n_tests: res.n_tests,
        threshold,
        fits: ["b", "s", "bs"].iter().zip(&models).map(|(l, m)| LayerFit::of(l, m)).collect(),
        candidates: res.candidates,
        clusters,
        comparison,
    })
}
