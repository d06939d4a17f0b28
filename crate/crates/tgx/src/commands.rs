//! The pipeline stages. Inputs are read from and outputs written to the run
//! directory; every output carries the hash of the configuration that made it.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tgx_core::data::{self, GroundTruth, TemporalGraph};
use tgx_core::dmd::DmdFit;
use tgx_core::metrics::{self, DatasetReport, GraphMetrics};
use tgx_core::model::{self, EmbeddingTrajectories, ModelConfig};
use tgx_core::reduction::{Method, Projection};

use crate::artifacts::*;
use crate::config::{ExperimentConfig, RuleName, StageHashes};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, DmdExplanation, SindyExplanation};

/// A resolved configuration bound to a run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub hashes: StageHashes,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: ExperimentConfig, dir: impl Into<PathBuf>) -> Self {
        Run {
            hashes: StageHashes::of(&config),
            config,
            dir: dir.into(),
        }
    }

    /// Loads and validates `config_path`.
    pub fn load(config_path: &Path, seed: Option<u64>, dir: impl Into<PathBuf>) -> CliResult<Self> {
        let config = ExperimentConfig::load(config_path)?.resolve(seed)?;
        Ok(Run::new(config, dir))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Tagged for DmdExplanation {
    fn tag(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }
}

impl Tagged for SindyExplanation {
    fn tag(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphMetricsLine {
    #[serde(flatten)]
    pub metrics: GraphMetrics,
    pub config_hash: String,
}

impl Tagged for GraphMetricsLine {
    fn tag(&self) -> Option<&str> {
        Some(&self.config_hash)
    }
}

#[derive(Serialize)]
struct ProjectionDump<'a> {
    config_hash: &'a str,
    graph: &'a Projection,
    node: &'a Projection,
}

#[derive(Serialize)]
struct DmdDump<'a> {
    config_hash: &'a str,
    fit: &'a DmdFit,
}

pub fn generate(run: &Run) -> CliResult<()> {
    let records = data::generate_dataset(&run.config.generator)?;
    let path = run.path(DATASET);
    let out = create(&path)?;
    data::write_dataset(out, &records, Some(&run.hashes.generate))?;
    log::info!("wrote {} graphs to {}", records.len(), path.display());
    Ok(())
}

fn subset<'a>(graphs: &'a [TemporalGraph], indices: &[usize]) -> Vec<&'a TemporalGraph> {
    indices.iter().map(|&i| &graphs[i]).collect()
}

pub fn train(run: &Run) -> CliResult<TrainSummary> {
    let graphs: Vec<TemporalGraph> = read_dataset(&run.dir, &run.hashes.generate)?
        .into_iter()
        .map(|r| r.graph)
        .collect();
    let outcome = model::train(&graphs, &run.config.model)?;
    let embeddings = pipeline::encode_all(&graphs, &outcome.params)?;
    let summary = TrainSummary {
        config_hash: run.hashes.train.clone(),
        best_epoch: outcome.best_epoch,
        train_accuracy: model::accuracy(&outcome.params, &subset(&graphs, &outcome.train_indices))?,
        val_accuracy: model::accuracy(&outcome.params, &subset(&graphs, &outcome.val_indices))?,
        linearity_residual: pipeline::linearity_residual(&embeddings, &outcome.train_indices)?,
        train_ids: outcome.train_indices.iter().map(|&i| graphs[i].id.clone()).collect(),
        val_ids: outcome.val_indices.iter().map(|&i| graphs[i].id.clone()).collect(),
        history: outcome.history.clone(),
    };

    let path = run.path(CHECKPOINT);
    let out = create(&path)?;
    model::write_checkpoint(out, &outcome.params, Some(&run.hashes.train))?;

    let path = run.path(EMBEDDINGS);
    let held_out: Vec<EmbeddingTrajectories> = outcome.val_indices.iter().map(|&i| embeddings[i].clone()).collect();
    let mut out = create(&path)?;
    model::write_embeddings(&mut out, &held_out, Some(&run.hashes.train))?;
    out.flush().map_err(io_error(&path))?;

    let path = run.path(TRAIN_LOG);
    let mut log = csv_writer(&path, &run.hashes.train)?;
    for record in &outcome.history {
        log.serialize(record).map_err(csv_error(&path))?;
    }
    log.flush().map_err(io_error(&path))?;

    write_json(&run.path(TRAIN_SUMMARY), &summary)?;
    log::info!(
        "best epoch {}: held-out accuracy {:.3}, linearity residual {:.4}",
        summary.best_epoch,
        summary.val_accuracy,
        summary.linearity_residual
    );
    Ok(summary)
}

fn indices_of(graphs: &[TemporalGraph], ids: &[String], path: &Path) -> CliResult<Vec<usize>> {
    let by_id: HashMap<&str, usize> = graphs.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| CliError::Format(format!("{}: graph {id} is not in the dataset", path.display())))
        })
        .collect()
}

pub fn explain(run: &Run) -> CliResult<pipeline::Explanations> {
    let graphs: Vec<TemporalGraph> = read_dataset(&run.dir, &run.hashes.generate)?
        .into_iter()
        .map(|r| r.graph)
        .collect();
    let checkpoint = read_checkpoint(&run.dir, &run.hashes.train)?;
    let summary = read_train_summary(&run.dir, &run.hashes.train)?;
    let summary_path = run.path(TRAIN_SUMMARY);
    let train = indices_of(&graphs, &summary.train_ids, &summary_path)?;
    let held_out = indices_of(&graphs, &summary.val_ids, &summary_path)?;

    let embeddings = pipeline::encode_all(&graphs, &checkpoint.params)?;
    let mut expl = pipeline::explain(&graphs, &embeddings, &train, &held_out, &run.config.explain)?;
    let tag = &run.hashes.explain;
    expl.dmd.iter_mut().for_each(|d| d.config_hash = Some(tag.clone()));
    expl.sindy.iter_mut().for_each(|s| s.config_hash = Some(tag.clone()));

    write_json(
        &run.path(PROJECTION),
        &ProjectionDump {
            config_hash: tag,
            graph: &expl.graph_projection,
            node: &expl.node_projection,
        },
    )?;
    write_json(
        &run.path(DMD_GLOBAL),
        &DmdDump {
            config_hash: tag,
            fit: &expl.global,
        },
    )?;
    write_jsonl(&run.path(EXPLANATIONS_DMD), &expl.dmd)?;
    write_jsonl(&run.path(EXPLANATIONS_SINDY), &expl.sindy)?;
    log::info!(
        "explained {} held-out graphs; leading global eigenvalue moduli {:?}",
        held_out.len(),
        expl.global.eigenvalues.iter().take(3).map(|z| z.norm()).collect::<Vec<_>>()
    );
    Ok(expl)
}

fn truths(records: Vec<data::Record>) -> BTreeMap<String, GroundTruth> {
    records.into_iter().map(|r| (r.graph.id, r.truth)).collect()
}

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

pub fn evaluate(run: &Run) -> CliResult<DatasetReport> {
    let truths = truths(read_dataset(&run.dir, &run.hashes.generate)?);
    let summary = read_train_summary(&run.dir, &run.hashes.train)?;
    let dmd: Vec<DmdExplanation> = read_jsonl(&run.path(EXPLANATIONS_DMD), "explain", &run.hashes.explain)?;
    let sindy: Vec<SindyExplanation> = read_jsonl(&run.path(EXPLANATIONS_SINDY), "explain", &run.hashes.explain)?;
    let explanations = pipeline::assemble(&dmd, &sindy, run.config.evaluate.mode)?;
    let report = pipeline::evaluate(&explanations, &truths, summary.val_accuracy, &run.config.metric_config())?;

    let tag = &run.hashes.evaluate;
    let path = run.path(METRICS);
    let mut out = csv_writer(&path, tag)?;
    out.write_record(["metric", "mean", "std", "count"]).map_err(csv_error(&path))?;
    for row in &report.table {
        out.write_record([
            row.metric.clone(),
            fmt_float(row.mean),
            row.std.map(fmt_float).unwrap_or_default(),
            row.count.to_string(),
        ])
        .map_err(csv_error(&path))?;
    }
    out.flush().map_err(io_error(&path))?;

    let lines: Vec<GraphMetricsLine> = report
        .graphs
        .iter()
        .map(|m| GraphMetricsLine {
            metrics: m.clone(),
            config_hash: tag.clone(),
        })
        .collect();
    write_jsonl(&run.path(GRAPH_METRICS), &lines)?;
    log::info!("scored {} class-1 graphs", report.graphs.len());
    Ok(report)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub count: usize,
}

pub fn read_metrics(path: &Path, expected: &str) -> CliResult<Vec<MetricRow>> {
    check_tag(path, "evaluate", expected, csv_tag(path, "evaluate")?.as_deref())?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_error(path))?;
    reader
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(csv_error(path))
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    id: &'a str,
    mode: usize,
    t: usize,
    s_re: f64,
    s_im: f64,
    w_t: Option<f64>,
    m_t: Option<u32>,
    m_t_smoothed: Option<f64>,
}

#[derive(Serialize)]
struct NodeRow<'a> {
    id: &'a str,
    mode: usize,
    node: usize,
    w_s_global: f64,
    w_s_local: f64,
    m_s: u8,
}

#[derive(Serialize)]
struct EdgeRow<'a> {
    id: &'a str,
    u: usize,
    v: usize,
    w_cap2: f64,
    w_cap3: f64,
    m_e: u8,
}

#[derive(Serialize)]
struct CellRow<'a> {
    id: &'a str,
    t: usize,
    node: usize,
    w_g: f64,
    w_g_normalized: f64,
    m_st: u8,
}

#[derive(Serialize)]
struct BrierRow<'a> {
    id: &'a str,
    t: usize,
    bs: f64,
}

/// Writes plot data for every scored graph and a text summary table.
pub fn report(run: &Run) -> CliResult<()> {
    let truths = truths(read_dataset(&run.dir, &run.hashes.generate)?);
    let dmd: Vec<DmdExplanation> = read_jsonl(&run.path(EXPLANATIONS_DMD), "explain", &run.hashes.explain)?;
    let sindy: Vec<SindyExplanation> = read_jsonl(&run.path(EXPLANATIONS_SINDY), "explain", &run.hashes.explain)?;
    let scored: Vec<GraphMetricsLine> = read_jsonl(&run.path(GRAPH_METRICS), "evaluate", &run.hashes.evaluate)?;
    let table = read_metrics(&run.path(METRICS), &run.hashes.evaluate)?;
    let tag = &run.hashes.evaluate;
    let ids: BTreeMap<&str, &GraphMetrics> = scored.iter().map(|l| (l.metrics.id.as_str(), &l.metrics)).collect();
    let truth_of = |id: &str| {
        truths
            .get(id)
            .ok_or_else(|| CliError::Format(format!("no ground truth for {id}")))
    };
    let width = run.config.evaluate.smoothing_width;
    let mode = run.config.evaluate.mode;

    let path = run.path(MODE_SERIES);
    let mut out = csv_writer(&path, tag)?;
    for d in dmd.iter().filter(|d| ids.contains_key(d.id.as_str())) {
        let truth = truth_of(&d.id)?;
        let counts: Vec<f64> = truth.m_t.iter().map(|&c| f64::from(c)).collect();
        let smoothed = metrics::smooth(&counts, width);
        for (t, s) in d.series.iter().enumerate() {
            out.serialize(SeriesRow {
                id: &d.id,
                mode: d.mode,
                t,
                s_re: s[0],
                s_im: s[1],
                w_t: d.time_weight.get(t).copied(),
                m_t: truth.m_t.get(t).copied(),
                m_t_smoothed: smoothed.get(t).copied(),
            })
            .map_err(csv_error(&path))?;
        }
    }
    out.flush().map_err(io_error(&path))?;

    let path = run.path(NODE_WEIGHTS);
    let mut out = csv_writer(&path, tag)?;
    for d in dmd.iter().filter(|d| ids.contains_key(d.id.as_str())) {
        let truth = truth_of(&d.id)?;
        for (node, m_s) in truth.m_s.iter().enumerate() {
            out.serialize(NodeRow {
                id: &d.id,
                mode: d.mode,
                node,
                w_s_global: d.node_weight_global[node],
                w_s_local: d.node_weight_local[node],
                m_s: *m_s,
            })
            .map_err(csv_error(&path))?;
        }
    }
    out.flush().map_err(io_error(&path))?;

    let path = run.path(EDGE_WEIGHTS);
    let mut out = csv_writer(&path, tag)?;
    let mut by_graph: BTreeMap<&str, [Option<&SindyExplanation>; 2]> = BTreeMap::new();
    for s in sindy.iter().filter(|s| ids.contains_key(s.id.as_str())) {
        let slot = by_graph.entry(&s.id).or_default();
        match s.degree_cap {
            2 => slot[0] = Some(s),
            3 => slot[1] = Some(s),
            _ => {}
        }
    }
    for (id, [quadratic, cubic]) in &by_graph {
        let (Some(q), Some(c)) = (quadratic, cubic) else {
            return Err(CliError::Format(format!("{id}: SINDy explanations incomplete")));
        };
        let truth = truth_of(id)?;
        for (&(u, v, w2), &(_, _, w3)) in q.edges.iter().zip(&c.edges) {
            out.serialize(EdgeRow {
                id,
                u,
                v,
                w_cap2: w2,
                w_cap3: w3,
                m_e: u8::from(truth.m_e.contains(&(u, v))),
            })
            .map_err(csv_error(&path))?;
        }
    }
    out.flush().map_err(io_error(&path))?;

    let path = run.path(SPATIOTEMPORAL);
    let mut out = csv_writer(&path, tag)?;
    for d in dmd.iter().filter(|d| d.mode == mode && ids.contains_key(d.id.as_str())) {
        let truth = truth_of(&d.id)?;
        let normalized = metrics::normalize_max(&d.spatiotemporal);
        for (t, row) in d.spatiotemporal.iter().enumerate() {
            for (node, &w) in row.iter().enumerate() {
                out.serialize(CellRow {
                    id: &d.id,
                    t,
                    node,
                    w_g: w,
                    w_g_normalized: normalized[t][node],
                    m_st: truth.m_st[t][node],
                })
                .map_err(csv_error(&path))?;
            }
        }
    }
    out.flush().map_err(io_error(&path))?;

    let path = run.path(BRIER);
    let mut out = csv_writer(&path, tag)?;
    for g in ids.values() {
        for (t, &bs) in g.brier.iter().enumerate() {
            out.serialize(BrierRow { id: &g.id, t, bs }).map_err(csv_error(&path))?;
        }
    }
    out.flush().map_err(io_error(&path))?;

    let path = run.path(SUMMARY);
    let mut text = format!("# config_hash {tag}\n{:<14} {:>10} {:>10} {:>6}\n", "metric", "mean", "std", "count");
    for row in &table {
        let std = row.std.map_or_else(|| "-".to_owned(), |s| format!("{s:.4}"));
        let _ = writeln!(text, "{:<14} {:>10.4} {:>10} {:>6}", row.metric, row.mean, std, row.count);
    }
    std::fs::write(&path, text).map_err(io_error(&path))?;
    log::info!("wrote plot data for {} graphs", ids.len());
    Ok(())
}

/// One candidate evaluated by `tgx grid`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub stage: &'static str,
    pub hidden: usize,
    pub layers: usize,
    pub mlp_layers: usize,
    pub beta: f64,
    pub batch_size: usize,
    pub reduction: Option<Method>,
    pub dim: Option<usize>,
    pub sindy_threshold: Option<f64>,
    pub mode: Option<usize>,
    pub threshold_rule: Option<RuleName>,
    pub delta: Option<f64>,
    pub window: Option<usize>,
    pub accuracy: Option<f64>,
    pub linearity_residual: Option<f64>,
    pub f1_window: Option<f64>,
    pub auc_edge2: Option<f64>,
    pub auc_edge3: Option<f64>,
    pub selected: bool,
}

fn or_base<T: Clone>(candidates: &[T], base: T) -> Vec<T> {
    if candidates.is_empty() {
        vec![base]
    } else {
        candidates.to_vec()
    }
}

/// Grid search: model candidates ranked by held-out accuracy (ties to the
/// lower linearity residual), then explainer candidates on the selected model
/// ranked by mean windowed F1. SINDy thresholds are ranked by mean
/// `auc_edge3` under the selected reduction.
pub fn grid(run: &Run) -> CliResult<Vec<GridRow>> {
    let records = read_dataset(&run.dir, &run.hashes.generate)?;
    let graphs: Vec<TemporalGraph> = records.iter().map(|r| r.graph.clone()).collect();
    let truths = truths(records);
    let base = &run.config;
    let g = &base.grid;

    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, f64, model::TrainOutcome, ModelConfig)> = None;
    for hidden in or_base(&g.hidden, base.model.hidden) {
        for layers in or_base(&g.layers, base.model.layers) {
            for mlp_layers in or_base(&g.mlp_layers, base.model.mlp_layers) {
                for beta in or_base(&g.beta, base.model.beta) {
                    for batch_size in or_base(&g.batch_size, base.model.batch_size) {
                        let cfg = ModelConfig {
                            hidden,
                            layers,
                            mlp_layers,
                            beta,
                            batch_size,
                            ..base.model.clone()
                        };
                        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
                        log::info!("grid: training hidden={hidden} layers={layers} mlp={mlp_layers} beta={beta} batch={batch_size}");
                        let outcome = model::train(&graphs, &cfg)?;
                        let accuracy = model::accuracy(&outcome.params, &subset(&graphs, &outcome.val_indices))?;
                        let embeddings = pipeline::encode_all(&graphs, &outcome.params)?;
                        let residual = pipeline::linearity_residual(&embeddings, &outcome.train_indices)?;
                        rows.push(GridRow {
                            stage: "model",
                            hidden,
                            layers,
                            mlp_layers,
                            beta,
                            batch_size,
                            reduction: None,
                            dim: None,
                            sindy_threshold: None,
                            mode: None,
                            threshold_rule: None,
                            delta: None,
                            window: None,
                            accuracy: Some(accuracy),
                            linearity_residual: Some(residual),
                            f1_window: None,
                            auc_edge2: None,
                            auc_edge3: None,
                            selected: false,
                        });
                        let better = best
                            .as_ref()
                            .is_none_or(|(_, a, r, _, _)| accuracy > *a || (accuracy == *a && residual < *r));
                        if better {
                            best = Some((rows.len() - 1, accuracy, residual, outcome, cfg));
                        }
                    }
                }
            }
        }
    }
    let (best_row, accuracy, _, outcome, model_cfg) = best.expect("at least one model candidate");
    rows[best_row].selected = true;

    let embeddings = pipeline::encode_all(&graphs, &outcome.params)?;
    let modes = or_base(&g.mode, base.evaluate.mode);
    let mut rules = vec![RuleName::Fraction];
    if g.mean_std_rule {
        rules.push(RuleName::MeanStd);
    }
    let mut best_f1: Option<(usize, f64)> = None;
    let mut sindy_rows = Vec::new();
    for reduction in or_base(&g.reduction, base.explain.reduction) {
        for dim in or_base(&g.dim, base.explain.dim) {
            if dim > model_cfg.hidden * model_cfg.layers || modes.iter().any(|&m| m >= dim) {
                log::warn!("grid: skipping dim={dim}, incompatible with the selected model or modes");
                continue;
            }
            for (k, sindy_threshold) in or_base(&g.sindy_threshold, base.explain.sindy_threshold).into_iter().enumerate() {
                let explain_cfg = crate::config::ExplainConfig {
                    reduction,
                    dim,
                    modes: modes.clone(),
                    sindy_threshold,
                    ..base.explain.clone()
                };
                let expl =
                    pipeline::explain(&graphs, &embeddings, &outcome.train_indices, &outcome.val_indices, &explain_cfg)?;
                let explainer_row = |mode, rule, delta, window| GridRow {
                    stage: "explainer",
                    hidden: model_cfg.hidden,
                    layers: model_cfg.layers,
                    mlp_layers: model_cfg.mlp_layers,
                    beta: model_cfg.beta,
                    batch_size: model_cfg.batch_size,
                    reduction: Some(reduction),
                    dim: Some(dim),
                    sindy_threshold: None,
                    mode,
                    threshold_rule: rule,
                    delta,
                    window,
                    accuracy: Some(accuracy),
                    linearity_residual: None,
                    f1_window: None,
                    auc_edge2: None,
                    auc_edge3: None,
                    selected: false,
                };
                let assembled = pipeline::assemble(&expl.dmd, &expl.sindy, modes[0])?;
                let report = pipeline::evaluate(&assembled, &truths, accuracy, &base.metric_config())?;
                sindy_rows.push(rows.len());
                rows.push(GridRow {
                    stage: "sindy",
                    sindy_threshold: Some(sindy_threshold),
                    auc_edge2: report.get("auc_edge2").map(|r| r.mean),
                    auc_edge3: report.get("auc_edge3").map(|r| r.mean),
                    ..explainer_row(None, None, None, None)
                });
                if k > 0 {
                    continue;
                }
                for &mode in &modes {
                    let assembled = pipeline::assemble(&expl.dmd, &expl.sindy, mode)?;
                    for &rule in &rules {
                        let deltas = match rule {
                            RuleName::Fraction => or_base(&g.delta, base.evaluate.delta),
                            RuleName::MeanStd => vec![base.evaluate.delta],
                        };
                        for delta in deltas {
                            for window in or_base(&g.window, base.evaluate.window) {
                                let eval_cfg = crate::config::EvaluateConfig {
                                    mode,
                                    threshold_rule: rule,
                                    delta,
                                    window,
                                    ..base.evaluate.clone()
                                };
                                let metric_cfg = eval_cfg.metric_config(base.metric_seed());
                                metric_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
                                let report = pipeline::evaluate(&assembled, &truths, accuracy, &metric_cfg)?;
                                let f1 = report.get("f1_window").map(|r| r.mean);
                                rows.push(GridRow {
                                    f1_window: f1,
                                    ..explainer_row(
                                        Some(mode),
                                        Some(rule),
                                        (rule == RuleName::Fraction).then_some(delta),
                                        Some(window),
                                    )
                                });
                                if let Some(f1) = f1 {
                                    if best_f1.is_none_or(|(_, b)| f1 > b) {
                                        best_f1 = Some((rows.len() - 1, f1));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some((i, _)) = best_f1 {
        rows[i].selected = true;
        let (reduction, dim) = (rows[i].reduction, rows[i].dim);
        let best_sindy = sindy_rows
            .iter()
            .copied()
            .filter(|&k| rows[k].reduction == reduction && rows[k].dim == dim)
            .filter(|&k| rows[k].auc_edge3.is_some())
            .fold(None::<usize>, |best, k| match best {
                Some(b) if rows[b].auc_edge3 >= rows[k].auc_edge3 => Some(b),
                _ => Some(k),
            });
        if let Some(k) = best_sindy {
            rows[k].selected = true;
        }
    }

    let path = run.path(GRID);
    let mut out = csv_writer(&path, &run.hashes.grid)?;
    for row in &rows {
        out.serialize(row).map_err(csv_error(&path))?;
    }
    out.flush().map_err(io_error(&path))?;
    log::info!("grid: {} candidates written to {}", rows.len(), path.display());
    Ok(rows)
}
