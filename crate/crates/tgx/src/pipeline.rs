//! In-memory explain and evaluate steps shared by the stage commands and the
//! grid search.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tgx_core::data::{Edge, GroundTruth, TemporalGraph};
use tgx_core::dmd::{self, Complex64, DmdFit};
use tgx_core::metrics::{self, DatasetReport, GraphExplanation, MetricConfig};
use tgx_core::model::{self, EmbeddingTrajectories, GcrnParams};
use tgx_core::reduction::Projection;
use tgx_core::sindy::{self, StlsqConfig};
use tgx_core::{Error, Result};

use crate::config::ExplainConfig;

/// SINDy library caps whose edge weights are scored.
pub const DEGREE_CAPS: [u8; 2] = [2, 3];

/// Ridge strength of the post hoc linearity residual.
pub const RESIDUAL_GAMMA: f64 = 1e-6;

/// DMD weights of one held-out graph for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdExplanation {
    pub id: String,
    pub label: u8,
    pub mode: usize,
    /// `[re, im]` of the global eigenvalue.
    pub eigenvalue_global: [f64; 2],
    /// `[re, im]` of the per-graph eigenvalue.
    pub eigenvalue_local: [f64; 2],
    /// Global mode series `s(t)` as `[re, im]`.
    pub series: Vec<[f64; 2]>,
    pub time_weight: Vec<f64>,
    pub node_weight_global: Vec<f64>,
    pub node_weight_local: Vec<f64>,
    /// `[t][n]`.
    pub spatiotemporal: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// SINDy edge weights of one held-out graph for one library cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyExplanation {
    pub id: String,
    pub label: u8,
    pub degree_cap: u8,
    pub threshold: f64,
    /// Active terms summed over nodes.
    pub active_terms: usize,
    /// `(u, v, weight)` over every edge that was ever active.
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Explanations {
    pub graph_projection: Projection,
    pub node_projection: Projection,
    pub global: DmdFit,
    pub dmd: Vec<DmdExplanation>,
    pub sindy: Vec<SindyExplanation>,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// Fits the projections and the global operator on `train`, then explains
/// every graph of `held_out`. `graphs` and `embeddings` are aligned.
pub fn explain(
    graphs: &[TemporalGraph],
    embeddings: &[EmbeddingTrajectories],
    train: &[usize],
    held_out: &[usize],
    cfg: &ExplainConfig,
) -> Result<Explanations> {
    if graphs.len() != embeddings.len() {
        return Err(Error::Contract(format!(
            "{} graphs but {} embedding records",
            graphs.len(),
            embeddings.len()
        )));
    }
    for (g, e) in graphs.iter().zip(embeddings) {
        if g.id != e.id || g.num_nodes != e.num_nodes || g.horizon() != e.horizon() {
            return Err(Error::Contract(format!("embedding {} does not match graph {}", e.id, g.id)));
        }
    }
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::Contract("explain needs training and held-out graphs".into()));
    }

    let graph_rows: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|&i| embeddings[i].graph_states.iter().cloned())
        .collect();
    let graph_projection = Projection::fit(cfg.reduction, &graph_rows, cfg.dim)?;
    drop(graph_rows);
    let node_rows: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|&i| embeddings[i].node_states.iter().flatten().cloned())
        .collect();
    let node_projection = Projection::fit(cfg.reduction, &node_rows, cfg.dim)?;
    drop(node_rows);

    let global_trajectories: Vec<Vec<Vec<f64>>> = train
        .iter()
        .map(|&i| graph_projection.project_all(&embeddings[i].graph_states))
        .collect();
    let global = DmdFit::fit_global(&global_trajectories, cfg.gamma)?;
    if global.pseudo_inverse {
        log::warn!("global DMD fell back to a pseudo-inverse");
    }

    let stlsq = StlsqConfig {
        threshold: cfg.sindy_threshold,
        max_iterations: cfg.sindy_max_iterations,
    };
    let per_graph: Vec<(Vec<DmdExplanation>, Vec<SindyExplanation>)> = held_out
        .par_iter()
        .map(|&i| {
            explain_graph(
                &graphs[i],
                &embeddings[i],
                &graph_projection,
                &node_projection,
                &global,
                cfg,
                &stlsq,
            )
        })
        .collect::<Result<_>>()?;
    let (dmd, sindy): (Vec<_>, Vec<_>) = per_graph.into_iter().unzip();
    Ok(Explanations {
        graph_projection,
        node_projection,
        global,
        dmd: dmd.into_iter().flatten().collect(),
        sindy: sindy.into_iter().flatten().collect(),
    })
}

fn explain_graph(
    tg: &TemporalGraph,
    emb: &EmbeddingTrajectories,
    graph_projection: &Projection,
    node_projection: &Projection,
    global: &DmdFit,
    cfg: &ExplainConfig,
    stlsq: &StlsqConfig,
) -> Result<(Vec<DmdExplanation>, Vec<SindyExplanation>)> {
    let graph_traj = graph_projection.project_all(&emb.graph_states);
    let final_nodes = graph_projection.project_all(emb.node_embeddings());
    let node_traj: Vec<Vec<Vec<f64>>> = (0..emb.num_nodes)
        .map(|n| node_projection.project_all(&emb.node_trajectory(n)))
        .collect();
    let local = DmdFit::fit_nodes(&node_traj, cfg.gamma)?;
    if local.pseudo_inverse {
        log::warn!("{}: per-graph DMD fell back to a pseudo-inverse", tg.id);
    }

    let mut dmd_out = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let series = global.mode_series(mode, &graph_traj)?;
        let finals: Vec<_> = final_nodes
            .iter()
            .map(|h| global.mode_series(mode, std::slice::from_ref(h)).map(|s| s[0]))
            .collect::<Result<_>>()?;
        let node_series: Vec<_> = node_traj
            .iter()
            .map(|traj| local.mode_series(mode, traj))
            .collect::<Result<_>>()?;
        let spatiotemporal = dmd::spatiotemporal_weight(&node_series);
        dmd_out.push(DmdExplanation {
            id: tg.id.clone(),
            label: tg.label,
            mode,
            eigenvalue_global: pair(global.eigenvalues[mode]),
            eigenvalue_local: pair(local.eigenvalues[mode]),
            series: series.iter().copied().map(pair).collect(),
            time_weight: dmd::time_weight(&series),
            node_weight_global: dmd::node_weight(&finals),
            node_weight_local: spatiotemporal.last().cloned().unwrap_or_default(),
            spatiotemporal,
            config_hash: None,
        });
    }

    let neighbors = tg.union_neighbors();
    let union = tg.union_edges();
    let mut sindy_out = Vec::with_capacity(DEGREE_CAPS.len());
    for cap in DEGREE_CAPS {
        let fit = sindy::fit_graph(&node_traj, &neighbors, cap, stlsq)?;
        let fallbacks = fit.nodes.iter().filter(|n| n.regression.ridge_fallback).count();
        if fallbacks > 0 {
            log::debug!("{}: {fallbacks} SINDy regressions used the ridge fallback", tg.id);
        }
        let active_terms = fit
            .nodes
            .iter()
            .map(|n| n.regression.coefficients.iter().filter(|c| **c != 0.0).count())
            .sum();
        sindy_out.push(SindyExplanation {
            id: tg.id.clone(),
            label: tg.label,
            degree_cap: cap,
            threshold: stlsq.threshold,
            active_terms,
            edges: sindy::edge_weights(&fit, union.iter().copied())
                .into_iter()
                .map(|((u, v), w)| (u, v, w))
                .collect(),
            config_hash: None,
        });
    }
    Ok((dmd_out, sindy_out))
}

fn edge_list(e: &SindyExplanation) -> Vec<(Edge, f64)> {
    e.edges.iter().map(|&(u, v, w)| ((u, v), w)).collect()
}

/// Joins the dumps of one mode into per-graph explanations, ordered by id.
pub fn assemble(
    dmd: &[DmdExplanation],
    sindy: &[SindyExplanation],
    mode: usize,
) -> Result<Vec<(GraphExplanation, u8)>> {
    let mut quadratic = BTreeMap::new();
    let mut cubic = BTreeMap::new();
    for s in sindy {
        match s.degree_cap {
            2 => quadratic.insert(s.id.as_str(), s),
            3 => cubic.insert(s.id.as_str(), s),
            other => return Err(Error::Contract(format!("{}: unexpected degree cap {other}", s.id))),
        };
    }
    let mut out: Vec<(GraphExplanation, u8)> = Vec::new();
    for d in dmd.iter().filter(|d| d.mode == mode) {
        let missing = |cap: u8| Error::Contract(format!("{}: no SINDy explanation with cap {cap}", d.id));
        let q = quadratic.get(d.id.as_str()).ok_or_else(|| missing(2))?;
        let c = cubic.get(d.id.as_str()).ok_or_else(|| missing(3))?;
        out.push((
            GraphExplanation {
                id: d.id.clone(),
                time_weight: d.time_weight.clone(),
                node_weight_global: d.node_weight_global.clone(),
                node_weight_local: d.node_weight_local.clone(),
                spatiotemporal: d.spatiotemporal.clone(),
                edge_weight_quadratic: edge_list(q),
                edge_weight_cubic: edge_list(c),
            },
            d.label,
        ));
    }
    if out.is_empty() {
        return Err(Error::Contract(format!("no DMD explanations for mode {mode}")));
    }
    out.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok(out)
}

/// Scores the class-1 explanations against their ground truth.
pub fn evaluate(
    explanations: &[(GraphExplanation, u8)],
    truths: &BTreeMap<String, GroundTruth>,
    accuracy: f64,
    cfg: &MetricConfig,
) -> Result<DatasetReport> {
    let items = explanations
        .iter()
        .filter(|(_, label)| *label == 1)
        .map(|(e, _)| {
            truths
                .get(&e.id)
                .map(|t| (e, t))
                .ok_or_else(|| Error::Contract(format!("no ground truth for {}", e.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::evaluate_dataset(&items, accuracy, cfg)
}

/// Post hoc linearity residual of the pooled graph states.
pub fn linearity_residual(embeddings: &[EmbeddingTrajectories], indices: &[usize]) -> Result<f64> {
    let trajectories: Vec<Vec<Vec<f64>>> = indices.iter().map(|&i| embeddings[i].graph_states.clone()).collect();
    dmd::linearity_residual(&trajectories, RESIDUAL_GAMMA)
}

/// Hidden states of every graph, in input order.
pub fn encode_all(graphs: &[TemporalGraph], params: &GcrnParams) -> Result<Vec<EmbeddingTrajectories>> {
    graphs.par_iter().map(|tg| model::encode(tg, params)).collect()
}
