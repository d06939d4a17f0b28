//! Scores comparing explanation weights with ground-truth masks.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Edge, GroundTruth};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `delta = fraction * max(w)`
    FractionOfMax { fraction: f64 },
    /// `delta = mean(w) + std(w)`
    MeanPlusStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Box filter width applied to `m_t`; odd.
    pub smoothing_width: usize,
    pub threshold: ThresholdRule,
    pub window: usize,
    /// Half-width of the intervals sampled for the Mann-Whitney test.
    pub mw_half_width: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            smoothing_width: 5,
            threshold: ThresholdRule::FractionOfMax { fraction: 0.4 },
            window: 6,
            mw_half_width: 2,
            seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_width == 0 || self.smoothing_width % 2 == 0 {
            return Err(Error::Config(format!(
                "smoothing width {} must be odd and positive",
                self.smoothing_width
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if let ThresholdRule::FractionOfMax { fraction } = self.threshold {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Config(format!("threshold fraction {fraction} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn grid_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let ThresholdRule::FractionOfMax { fraction } = self.threshold {
            let step = (fraction - 0.4) / 0.05;
            if !(0.4 - 1e-12..=0.95 + 1e-12).contains(&fraction) || (step - step.round()).abs() > 1e-9 {
                out.push(format!("threshold fraction {fraction} outside {{0.40, 0.45, ..., 0.95}}"));
            }
        }
        if !(2..=6).contains(&self.window) {
            out.push(format!("window {} outside 2..=6", self.window));
        }
        out
    }
}

/// Centered box filter with zero padding; output has the input's length.
pub fn smooth(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = values.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n.saturating_sub(1));
            values[lo..=hi].iter().sum::<f64>() / width as f64
        })
        .collect()
}

pub fn threshold_value(weights: &[f64], rule: ThresholdRule) -> f64 {
    match rule {
        ThresholdRule::FractionOfMax { fraction } => {
            fraction * weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
        ThresholdRule::MeanPlusStd => {
            let (mean, std) = mean_std(weights);
            mean + std
        }
    }
}

/// `w(t) > delta`.
pub fn binarize(weights: &[f64], rule: ThresholdRule) -> Vec<bool> {
    let delta = threshold_value(weights, rule);
    weights.iter().map(|&w| w > delta).collect()
}

/// `2PR / (P + R)`, zero when undefined.
pub fn f1(pred: &[bool], truth: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean over the offsets `-floor((w-1)/2) ..= ceil((w-1)/2)` that fall
/// inside the series.
pub fn running_mean(values: &[f64], window: usize) -> Vec<f64> {
    let back = (window.max(1) - 1) / 2;
    let ahead = window.max(1) - 1 - back;
    let n = values.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(back);
            let hi = (t + ahead).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

pub fn f1_threshold(weights: &[f64], truth: &[bool], rule: ThresholdRule) -> f64 {
    f1(&binarize(weights, rule), truth)
}

pub fn f1_window(weights: &[f64], truth: &[bool], window: usize, rule: ThresholdRule) -> f64 {
    f1(&binarize(&running_mean(weights, window), rule), truth)
}

/// F1 of the explainer that flags every step.
pub fn f1_baseline(truth: &[bool]) -> f64 {
    f1(&vec![true; truth.len()], truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first group.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: MwMethod,
}

/// Mid-ranks (1-based) of the pooled sample and the tie group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn u_statistic(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<usize>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined("Mann-Whitney test with an empty group".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let n1 = a.len() as f64;
    Ok((r1 - n1 * (n1 + 1.0) / 2.0, ranks, ties))
}

/// Exact two-sided test by enumerating all assignments of the pooled
/// (mid-)ranks to the first group.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    let (u, ranks, _) = u_statistic(a, b)?;
    let n1 = a.len();
    // Doubled mid-ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: number of k-subsets whose doubled rank sum is s.
    let mut ways = vec![vec![0.0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let total: f64 = ways[n1].iter().sum();
    let n1f = n1 as f64;
    let offset = n1f * (n1f + 1.0);
    let mean_u2 = n1f * b.len() as f64; // 2 * E[U]
    let observed = (2.0 * u - mean_u2).abs();
    let extreme: f64 = ways[n1]
        .iter()
        .enumerate()
        .filter(|&(s, &w)| w > 0.0 && ((s as f64 - offset) - mean_u2).abs() >= observed - 1e-9)
        .map(|(_, &w)| w)
        .sum();
    Ok(MannWhitney {
        u,
        p: (extreme / total).min(1.0),
        method: MwMethod::Exact,
    })
}

/// Normal approximation with tie and continuity corrections.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    let (u, _, ties) = u_statistic(a, b)?;
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let n = n1 + n2;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term);
    let mean = n1 * n2 / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p,
        method: MwMethod::Normal,
    })
}

/// Exact enumeration when both groups are smaller than 8, otherwise the
/// normal approximation.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.len() < 8 && b.len() < 8 {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// Rank AUC with ties counted one half.
pub fn auc(weights: &[f64], mask: &[bool]) -> Result<f64> {
    if weights.len() != mask.len() {
        return Err(Error::shape("auc", format!("{} weights, {} labels", weights.len(), mask.len())));
    }
    let pos = mask.iter().filter(|&&m| m).count();
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUC with a single class".into()));
    }
    let (ranks, _) = midranks(weights);
    let r_pos: f64 = ranks.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| r).sum();
    let p = pos as f64;
    Ok((r_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Divides by the maximum; an all-zero input stays zero.
pub fn normalize_max(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let max = values.iter().flatten().copied().fold(0.0, f64::max);
    values
        .iter()
        .map(|row| row.iter().map(|&v| if max > 0.0 { v / max } else { 0.0 }).collect())
        .collect()
}

/// `BS(t) = mean_n (w(t, n) - m(t, n))^2`.
pub fn brier(weights: &[Vec<f64>], mask: &[Vec<u8>]) -> Result<Vec<f64>> {
    if weights.len() != mask.len() {
        return Err(Error::shape("brier", format!("{} vs {} steps", weights.len(), mask.len())));
    }
    weights
        .iter()
        .zip(mask)
        .map(|(w, m)| {
            if w.len() != m.len() || w.is_empty() {
                return Err(Error::shape("brier", "row lengths differ or are empty"));
            }
            Ok(w.iter().zip(m).map(|(x, &y)| (x - f64::from(y)).powi(2)).sum::<f64>() / w.len() as f64)
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Time-weight samples near events and from random event-free intervals.
///
/// The first group holds `w(t)` for every `t` within `half_width` of a step
/// with `m_t > 0`. The second group draws as many values from intervals of
/// length `2 * half_width + 1` placed uniformly among the event-free steps.
pub fn mw_samples(weights: &[f64], events: &[u32], half_width: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = weights.len().min(events.len());
    let mut near = vec![false; n];
    for t in (0..n).filter(|&t| events[t] > 0) {
        for s in t.saturating_sub(half_width)..=(t + half_width).min(n.saturating_sub(1)) {
            near[s] = true;
        }
    }
    let near_values: Vec<f64> = (0..n).filter(|&t| near[t]).map(|t| weights[t]).collect();
    let len = 2 * half_width + 1;
    let starts: Vec<usize> = (0..n.saturating_sub(len - 1))
        .filter(|&s| near[s..s + len].iter().all(|&x| !x))
        .collect();
    let mut random = Vec::with_capacity(near_values.len());
    if starts.is_empty() {
        let free: Vec<usize> = (0..n).filter(|&t| !near[t]).collect();
        while random.len() < near_values.len() {
            match free.choose(rng) {
                Some(&t) => random.push(weights[t]),
                None => break,
            }
        }
    } else {
        while random.len() < near_values.len() {
            let s = *starts.choose(rng).expect("nonempty");
            for t in s..s + len {
                if random.len() < near_values.len() {
                    random.push(weights[t]);
                }
            }
        }
    }
    (near_values, random)
}

/// Weights produced by the explainers for one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExplanation {
    pub id: String,
    /// `w_t`, length `T - 1`.
    pub time_weight: Vec<f64>,
    /// `w_s` from the global operator.
    pub node_weight_global: Vec<f64>,
    /// `w_s` from the per-graph operator.
    pub node_weight_local: Vec<f64>,
    /// `w_G`, `T x N`, from the per-graph operator.
    pub spatiotemporal: Vec<Vec<f64>>,
    pub edge_weight_quadratic: Vec<(Edge, f64)>,
    pub edge_weight_cubic: Vec<(Edge, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub id: String,
    pub mw_p: Option<f64>,
    pub f1_threshold: f64,
    pub f1_window: f64,
    pub f1_baseline: f64,
    pub auc_edge2: Option<f64>,
    pub auc_edge3: Option<f64>,
    pub auc_tg: Option<f64>,
    pub auc_node: Option<f64>,
    /// `BS(t)` for every step.
    pub brier: Vec<f64>,
}

fn edge_auc(weights: &[(Edge, f64)], positives: &BTreeSet<Edge>) -> Option<f64> {
    let w: Vec<f64> = weights.iter().map(|(_, v)| *v).collect();
    let m: Vec<bool> = weights.iter().map(|(e, _)| positives.contains(e)).collect();
    auc(&w, &m).ok()
}

/// Scores one graph; also returns its Mann-Whitney samples.
pub fn evaluate_graph(
    expl: &GraphExplanation,
    truth: &GroundTruth,
    cfg: &MetricConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(GraphMetrics, (Vec<f64>, Vec<f64>))> {
    if expl.time_weight.len() != truth.m_t.len() {
        return Err(Error::shape(
            "evaluate_graph",
            format!("{}: {} time weights, {} transitions", expl.id, expl.time_weight.len(), truth.m_t.len()),
        ));
    }
    let counts: Vec<f64> = truth.m_t.iter().map(|&c| f64::from(c)).collect();
    let positive: Vec<bool> = smooth(&counts, cfg.smoothing_width).iter().map(|&v| v > 0.0).collect();
    let samples = mw_samples(&expl.time_weight, &truth.m_t, cfg.mw_half_width, rng);
    let mw_p = mann_whitney(&samples.0, &samples.1).ok().map(|r| r.p);
    let node_mask: Vec<bool> = truth.m_s.iter().map(|&m| m == 1).collect();
    let brier = brier(&normalize_max(&expl.spatiotemporal), &truth.m_st)?;
    Ok((
        GraphMetrics {
            id: expl.id.clone(),
            mw_p,
            f1_threshold: f1_threshold(&expl.time_weight, &positive, cfg.threshold),
            f1_window: f1_window(&expl.time_weight, &positive, cfg.window, cfg.threshold),
            f1_baseline: f1_baseline(&positive),
            auc_edge2: edge_auc(&expl.edge_weight_quadratic, &truth.m_e),
            auc_edge3: edge_auc(&expl.edge_weight_cubic, &truth.m_e),
            auc_tg: auc(&expl.node_weight_global, &node_mask).ok(),
            auc_node: auc(&expl.node_weight_local, &node_mask).ok(),
            brier,
        },
        samples,
    ))
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    pub mean: f64,
    /// Absent for pooled statistics.
    pub std: Option<f64>,
    /// Graphs on which the metric was defined.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub graphs: Vec<GraphMetrics>,
    pub pooled_mw: MannWhitney,
    pub table: Vec<TableRow>,
}

fn row(metric: &str, values: impl Iterator<Item = Option<f64>>) -> TableRow {
    let defined: Vec<f64> = values.flatten().collect();
    let (mean, std) = mean_std(&defined);
    TableRow {
        metric: metric.into(),
        mean,
        std: Some(std),
        count: defined.len(),
    }
}

/// Scores every class-1 graph and aggregates mean and population standard
/// deviation. The Mann-Whitney row pools the samples of all graphs.
pub fn evaluate_dataset(
    items: &[(&GraphExplanation, &GroundTruth)],
    accuracy: f64,
    cfg: &MetricConfig,
) -> Result<DatasetReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Undefined("no class-1 graphs to evaluate".into()));
    }
    let mut graphs = Vec::with_capacity(items.len());
    let mut near = Vec::new();
    let mut random = Vec::new();
    for (k, (expl, truth)) in items.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let (m, (a, b)) = evaluate_graph(expl, truth, cfg, &mut rng)?;
        near.extend(a);
        random.extend(b);
        graphs.push(m);
    }
    let pooled_mw = mann_whitney(&near, &random)?;
    let table = vec![
        TableRow {
            metric: "mw_p".into(),
            mean: pooled_mw.p,
            std: None,
            count: graphs.len(),
        },
        row("f1_threshold", graphs.iter().map(|g| Some(g.f1_threshold))),
        row("f1_window", graphs.iter().map(|g| Some(g.f1_window))),
        row("f1_baseline", graphs.iter().map(|g| Some(g.f1_baseline))),
        row("auc_edge2", graphs.iter().map(|g| g.auc_edge2)),
        row("auc_edge3", graphs.iter().map(|g| g.auc_edge3)),
        row("auc_tg", graphs.iter().map(|g| g.auc_tg)),
        row("auc_node", graphs.iter().map(|g| g.auc_node)),
        TableRow {
            metric: "accuracy".into(),
            mean: accuracy,
            std: None,
            count: 1,
        },
    ];
    Ok(DatasetReport {
        graphs,
        pooled_mw,
        table,
    })
}

impl DatasetReport {
    pub fn get(&self, metric: &str) -> Option<&TableRow> {
        self.table.iter().find(|r| r.metric == metric)
    }
}
