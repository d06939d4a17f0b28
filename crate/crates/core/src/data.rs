//! Temporal graphs, synthetic contact networks and susceptible-infected
//! dissemination.
//!
//! A [`TemporalGraph`] is a sequence of undirected edge sets over a fixed node
//! universe together with a binary infection state per node and step. Positive
//! graphs come straight out of [`simulate_si`]; negative graphs are produced by
//! [`shuffle_negative`], which keeps the per-step infected counts and topology
//! but scatters the infected labels over random nodes at every step.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected edge stored with the smaller endpoint first.
pub type Edge = (usize, usize);

/// Normalizes an unordered pair so that the smaller index comes first.
#[inline]
pub fn edge(u: usize, v: usize) -> Edge {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    pub id: String,
    pub num_nodes: usize,
    /// One sorted, deduplicated edge list per step.
    pub edges: Vec<Vec<Edge>>,
    /// `features[t][n]` is 1 when node `n` is infected at step `t`.
    pub features: Vec<Vec<u8>>,
    pub label: u8,
}

impl TemporalGraph {
    pub fn horizon(&self) -> usize {
        self.edges.len()
    }

    /// Every pair that is adjacent at least once.
    pub fn union_edges(&self) -> BTreeSet<Edge> {
        self.edges.iter().flatten().copied().collect()
    }

    /// Neighbors of every node in the union graph, sorted ascending.
    pub fn union_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.union_edges() {
            nbrs[u].push(v);
            nbrs[v].push(u);
        }
        for list in &mut nbrs {
            list.sort_unstable();
        }
        nbrs
    }

    pub fn infected_counts(&self) -> Vec<usize> {
        self.features
            .iter()
            .map(|row| row.iter().filter(|&&x| x == 1).count())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::Contract(format!("{}: zero nodes", self.id)));
        }
        if self.features.len() != self.edges.len() {
            return Err(Error::Contract(format!(
                "{}: {} edge steps but {} feature steps",
                self.id,
                self.edges.len(),
                self.features.len()
            )));
        }
        for (t, step) in self.edges.iter().enumerate() {
            for &(u, v) in step {
                if u >= self.num_nodes || v >= self.num_nodes {
                    return Err(Error::Contract(format!(
                        "{}: edge ({u},{v}) at step {t} out of range",
                        self.id
                    )));
                }
                if u == v {
                    return Err(Error::Contract(format!(
                        "{}: self-loop on node {u} at step {t}",
                        self.id
                    )));
                }
            }
        }
        for (t, row) in self.features.iter().enumerate() {
            if row.len() != self.num_nodes {
                return Err(Error::Contract(format!(
                    "{}: feature row {t} has {} entries, expected {}",
                    self.id,
                    row.len(),
                    self.num_nodes
                )));
            }
            if row.iter().any(|&x| x > 1) {
                return Err(Error::Contract(format!(
                    "{}: non-binary feature at step {t}",
                    self.id
                )));
            }
        }
        if self.label > 1 {
            return Err(Error::Contract(format!("{}: label {}", self.id, self.label)));
        }
        Ok(())
    }
}

/// Simulation ground truth for one graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// Co-infected adjacent pairs created by the transition `t -> t+1`.
    pub m_t: Vec<u32>,
    /// Nodes that are infected at some step.
    pub m_s: Vec<u8>,
    /// Edges credited with transmitting an infection.
    pub m_e: BTreeSet<Edge>,
    /// `m_st[t][n] = x[t][n]`.
    pub m_st: Vec<Vec<u8>>,
}

impl GroundTruth {
    /// Binary edge mask aligned with `union` (in its iteration order).
    pub fn edge_mask(&self, union: &BTreeSet<Edge>) -> Vec<u8> {
        union.iter().map(|e| u8::from(self.m_e.contains(e))).collect()
    }
}

/// Counts, per transition, the adjacent pairs (adjacency at the earlier step)
/// that are not both infected before and are both infected after.
pub fn transition_counts(edges: &[Vec<Edge>], features: &[Vec<u8>]) -> Vec<u32> {
    let steps = features.len();
    (0..steps.saturating_sub(1))
        .map(|t| {
            edges[t]
                .iter()
                .filter(|&&(n, m)| {
                    features[t][n] * features[t][m] == 0
                        && features[t + 1][n] * features[t + 1][m] == 1
                })
                .count() as u32
        })
        .collect()
}

/// Recomputes the deterministic parts of the ground truth (`m_t`, `m_s`,
/// `m_st`); `m_e` is left empty because transmission credit is random.
pub fn derive_ground_truth(edges: &[Vec<Edge>], features: &[Vec<u8>]) -> GroundTruth {
    let num_nodes = features.first().map_or(0, Vec::len);
    let m_s = (0..num_nodes)
        .map(|n| u8::from(features.iter().any(|row| row[n] == 1)))
        .collect();
    GroundTruth {
        m_t: transition_counts(edges, features),
        m_s,
        m_e: BTreeSet::new(),
        m_st: features.to_vec(),
    }
}

/// Checks a stored ground truth against the features and edges of `tg`.
///
/// `m_t`, `m_s` and `m_st` must match exactly. For label-1 graphs every
/// credited edge must connect a node infected at `t+1` to a node infected at
/// `t` through an edge active at `t`, and every newly infected node must have
/// exactly one credited edge.
pub fn check_ground_truth(tg: &TemporalGraph, truth: &GroundTruth) -> Result<()> {
    let derived = derive_ground_truth(&tg.edges, &tg.features);
    if derived.m_t != truth.m_t {
        return Err(Error::Contract(format!("{}: m_t mismatch", tg.id)));
    }
    if derived.m_s != truth.m_s {
        return Err(Error::Contract(format!("{}: m_s mismatch", tg.id)));
    }
    if derived.m_st != truth.m_st {
        return Err(Error::Contract(format!("{}: m_st mismatch", tg.id)));
    }
    if tg.label == 0 {
        return Ok(());
    }
    let union = tg.union_edges();
    let mut credited = vec![0usize; tg.num_nodes];
    for &(u, v) in &truth.m_e {
        if !union.contains(&(u, v)) {
            return Err(Error::Contract(format!(
                "{}: credited edge ({u},{v}) never appears",
                tg.id
            )));
        }
        let explains = |target: usize, source: usize| {
            (0..tg.horizon().saturating_sub(1)).any(|t| {
                tg.features[t][target] == 0
                    && tg.features[t + 1][target] == 1
                    && tg.features[t][source] == 1
                    && tg.edges[t].binary_search(&(u, v)).is_ok()
            })
        };
        if explains(u, v) {
            credited[u] += 1;
        } else if explains(v, u) {
            credited[v] += 1;
        } else {
            return Err(Error::Contract(format!(
                "{}: credited edge ({u},{v}) did not transmit",
                tg.id
            )));
        }
    }
    let first = &tg.features[0];
    for n in 0..tg.num_nodes {
        let infected_later = first[n] == 0 && truth.m_s[n] == 1;
        if infected_later && credited[n] != 1 {
            return Err(Error::Contract(format!(
                "{}: node {n} has {} credited edges",
                tg.id, credited[n]
            )));
        }
    }
    Ok(())
}

/// Parameters for the synthetic dissemination dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Total graph count; half are positive, half shuffled negatives.
    pub num_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub horizon: usize,
    /// Edge probability of the static base graph.
    pub base_density: f64,
    /// Probability that a base edge is active at a given step.
    pub activation_prob: f64,
    /// Transmission probability per infected contact per step.
    pub infection_prob: f64,
    pub num_seeds: usize,
    /// Positive graphs with fewer new infections are re-drawn.
    pub min_infections: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_graphs: 200,
            min_nodes: 50,
            max_nodes: 50,
            horizon: 50,
            base_density: 0.25,
            activation_prob: 0.05,
            infection_prob: 0.03,
            num_seeds: 1,
            min_infections: 2,
            seed: 0,
        }
    }
}

/// Re-draws allowed when enforcing `min_infections`.
const MAX_REDRAWS: usize = 1000;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not in [0, 1]")))
            }
        };
        prob("base_density", self.base_density)?;
        prob("activation_prob", self.activation_prob)?;
        prob("infection_prob", self.infection_prob)?;
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(Error::Config(format!(
                "node range [{}, {}] is empty or contains zero",
                self.min_nodes, self.max_nodes
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.num_seeds == 0 || self.num_seeds > self.min_nodes {
            return Err(Error::Config(format!(
                "num_seeds = {} must be in 1..={}",
                self.num_seeds, self.min_nodes
            )));
        }
        if self.num_graphs % 2 != 0 {
            return Err(Error::Config(format!(
                "num_graphs = {} must be even for balanced classes",
                self.num_graphs
            )));
        }
        Ok(())
    }

    /// Warns when sizes leave the range covered by the reference datasets.
    pub fn check_ranges(&self) {
        if self.min_nodes < 25 || self.max_nodes > 100 {
            log::warn!(
                "node range [{}, {}] outside [25, 100]",
                self.min_nodes,
                self.max_nodes
            );
        }
        if !(48..=205).contains(&self.horizon) {
            log::warn!("horizon {} outside [48, 205]", self.horizon);
        }
    }
}

/// Draws a random base graph and activates each of its edges independently
/// at every step.
pub fn generate_contact_network<R: Rng>(
    cfg: &GeneratorConfig,
    num_nodes: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Edge>>> {
    if num_nodes == 0 {
        return Err(Error::Config("contact network with zero nodes".into()));
    }
    let mut base = Vec::new();
    for u in 0..num_nodes {
        for v in u + 1..num_nodes {
            if rng.random_bool(cfg.base_density) {
                base.push((u, v));
            }
        }
    }
    if base.is_empty() {
        return Err(Error::Config(format!(
            "empty base graph (n = {num_nodes}, density = {})",
            cfg.base_density
        )));
    }
    Ok((0..cfg.horizon)
        .map(|_| {
            base.iter()
                .copied()
                .filter(|_| rng.random_bool(cfg.activation_prob))
                .collect()
        })
        .collect())
}

/// Runs the susceptible-infected process over a fixed edge sequence.
///
/// At every step each infected neighbor of a susceptible node transmits
/// independently with probability `p_inf`; when several transmit, one of them
/// is credited uniformly at random.
pub fn simulate_si<R: Rng>(
    edges: &[Vec<Edge>],
    num_nodes: usize,
    p_inf: f64,
    seeds: &[usize],
    rng: &mut R,
) -> Result<(Vec<Vec<u8>>, GroundTruth)> {
    if seeds.is_empty() {
        return Err(Error::Contract("SI simulation needs at least one seed".into()));
    }
    if let Some(&s) = seeds.iter().find(|&&s| s >= num_nodes) {
        return Err(Error::Contract(format!(
            "seed node {s} out of range for {num_nodes} nodes"
        )));
    }
    if !(0.0..=1.0).contains(&p_inf) {
        return Err(Error::Config(format!("p_inf = {p_inf} is not in [0, 1]")));
    }
    let horizon = edges.len();
    let mut state = vec![0u8; num_nodes];
    for &s in seeds {
        state[s] = 1;
    }
    let mut features = Vec::with_capacity(horizon);
    let mut m_e = BTreeSet::new();
    let mut sources: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for t in 0..horizon {
        features.push(state.clone());
        if t + 1 == horizon {
            break;
        }
        for list in &mut sources {
            list.clear();
        }
        for &(u, v) in &edges[t] {
            match (state[u], state[v]) {
                (1, 0) => sources[v].push(u),
                (0, 1) => sources[u].push(v),
                _ => {}
            }
        }
        let mut next = state.clone();
        for n in 0..num_nodes {
            if sources[n].is_empty() {
                continue;
            }
            let transmitted: Vec<usize> = sources[n]
                .iter()
                .copied()
                .filter(|_| rng.random_bool(p_inf))
                .collect();
            if !transmitted.is_empty() {
                let credit = transmitted[rng.random_range(0..transmitted.len())];
                m_e.insert(edge(n, credit));
                next[n] = 1;
            }
        }
        state = next;
    }
    let mut truth = derive_ground_truth(edges, &features);
    truth.m_e = m_e;
    Ok((features, truth))
}

/// Builds the negative counterpart of a positive graph: same topology, same
/// per-step infected counts, labels permuted uniformly at every step.
pub fn shuffle_negative<R: Rng>(tg: &TemporalGraph, rng: &mut R) -> TemporalGraph {
    let mut perm: Vec<usize> = (0..tg.num_nodes).collect();
    let features = tg
        .features
        .iter()
        .map(|row| {
            perm.shuffle(rng);
            let mut shuffled = vec![0u8; row.len()];
            for (n, &x) in row.iter().enumerate() {
                shuffled[perm[n]] = x;
            }
            shuffled
        })
        .collect();
    TemporalGraph {
        id: tg.id.clone(),
        num_nodes: tg.num_nodes,
        edges: tg.edges.clone(),
        features,
        label: 0,
    }
}

/// A graph with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub graph: TemporalGraph,
    pub truth: GroundTruth,
}

fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates one positive graph and its shuffled negative.
pub fn generate_pair(cfg: &GeneratorConfig, index: usize) -> Result<(Record, Record)> {
    let mut rng = pair_rng(cfg.seed, index);
    let num_nodes = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
    let mut attempt = 0;
    let (edges, features, truth) = loop {
        let edges = generate_contact_network(cfg, num_nodes, &mut rng)?;
        let mut nodes: Vec<usize> = (0..num_nodes).collect();
        nodes.shuffle(&mut rng);
        let seeds = &nodes[..cfg.num_seeds];
        let (features, truth) = simulate_si(&edges, num_nodes, cfg.infection_prob, seeds, &mut rng)?;
        let infected = features.last().map_or(0, |row| {
            row.iter().filter(|&&x| x == 1).count()
        });
        if infected >= cfg.num_seeds + cfg.min_infections {
            break (edges, features, truth);
        }
        attempt += 1;
        if attempt >= MAX_REDRAWS {
            return Err(Error::Config(format!(
                "no simulation reached {} infections in {MAX_REDRAWS} draws",
                cfg.min_infections
            )));
        }
    };
    let positive = TemporalGraph {
        id: format!("si-{index:04}"),
        num_nodes,
        edges,
        features,
        label: 1,
    };
    let mut negative = shuffle_negative(&positive, &mut rng);
    negative.id = format!("shuffled-{index:04}");
    let negative_truth = derive_ground_truth(&negative.edges, &negative.features);
    Ok((
        Record {
            graph: positive,
            truth,
        },
        Record {
            graph: negative,
            truth: negative_truth,
        },
    ))
}

/// Generates a balanced dataset, interleaving positives and negatives.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<Record>> {
    cfg.validate()?;
    cfg.check_ranges();
    let mut records = Vec::with_capacity(cfg.num_graphs);
    for i in 0..cfg.num_graphs / 2 {
        let (pos, neg) = generate_pair(cfg, i)?;
        records.push(pos);
        records.push(neg);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Line-delimited dataset files

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthWire {
    m_t: Vec<u32>,
    m_s: Vec<u8>,
    m_e: Vec<[usize; 2]>,
    m_st: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    id: String,
    num_nodes: usize,
    #[serde(rename = "T")]
    horizon: usize,
    label: u8,
    edges: Vec<Vec<[usize; 2]>>,
    features: Vec<Vec<u8>>,
    ground_truth: TruthWire,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl RecordWire {
    fn from_record(r: &Record, tag: Option<&str>) -> Self {
        RecordWire {
            id: r.graph.id.clone(),
            num_nodes: r.graph.num_nodes,
            horizon: r.graph.horizon(),
            label: r.graph.label,
            edges: r
                .graph
                .edges
                .iter()
                .map(|step| step.iter().map(|&(u, v)| [u, v]).collect())
                .collect(),
            features: r.graph.features.clone(),
            ground_truth: TruthWire {
                m_t: r.truth.m_t.clone(),
                m_s: r.truth.m_s.clone(),
                m_e: r.truth.m_e.iter().map(|&(u, v)| [u, v]).collect(),
                m_st: r.truth.m_st.clone(),
            },
            config_hash: tag.map(str::to_owned),
        }
    }

    fn into_record(self, line: usize) -> Result<Record> {
        let bad = |field: &str, message: String| Error::Parse {
            line,
            field: field.to_owned(),
            message,
        };
        if self.edges.len() != self.horizon {
            return Err(bad(
                "edges",
                format!("{} steps, expected T = {}", self.edges.len(), self.horizon),
            ));
        }
        if self.features.len() != self.horizon {
            return Err(bad(
                "features",
                format!("{} steps, expected T = {}", self.features.len(), self.horizon),
            ));
        }
        let mut edges = Vec::with_capacity(self.horizon);
        for (t, step) in self.edges.into_iter().enumerate() {
            let mut set: Vec<Edge> = Vec::with_capacity(step.len());
            for [u, v] in step {
                if u >= self.num_nodes || v >= self.num_nodes || u == v {
                    return Err(bad("edges", format!("invalid edge [{u},{v}] at step {t}")));
                }
                set.push(edge(u, v));
            }
            set.sort_unstable();
            set.dedup();
            edges.push(set);
        }
        let graph = TemporalGraph {
            id: self.id,
            num_nodes: self.num_nodes,
            edges,
            features: self.features,
            label: self.label,
        };
        graph
            .validate()
            .map_err(|e| bad("features", e.to_string()))?;
        let gt = self.ground_truth;
        if gt.m_t.len() != self.horizon.saturating_sub(1) {
            return Err(bad("ground_truth.m_t", format!("length {}", gt.m_t.len())));
        }
        if gt.m_s.len() != self.num_nodes {
            return Err(bad("ground_truth.m_s", format!("length {}", gt.m_s.len())));
        }
        if gt.m_st.len() != self.horizon || gt.m_st.iter().any(|r| r.len() != self.num_nodes) {
            return Err(bad("ground_truth.m_st", "shape is not T x N".into()));
        }
        let mut m_e = BTreeSet::new();
        for [u, v] in gt.m_e {
            if u >= self.num_nodes || v >= self.num_nodes || u == v {
                return Err(bad("ground_truth.m_e", format!("invalid edge [{u},{v}]")));
            }
            m_e.insert(edge(u, v));
        }
        Ok(Record {
            graph,
            truth: GroundTruth {
                m_t: gt.m_t,
                m_s: gt.m_s,
                m_e,
                m_st: gt.m_st,
            },
        })
    }
}

/// Writes one JSON object per line. `tag` is stored as `config_hash`.
pub fn write_dataset<W: Write>(mut out: W, records: &[Record], tag: Option<&str>) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(&RecordWire::from_record(r, tag))
            .map_err(|e| Error::Numerical(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset file; blank lines are skipped. Returns the records and the
/// `config_hash` carried by them (if any record has one, all must agree).
pub fn read_dataset_tagged<R: BufRead>(input: R) -> Result<(Vec<Record>, Option<String>)> {
    let mut records = Vec::new();
    let mut tag: Option<Option<String>> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            field: field_from_serde(&e),
            message: e.to_string(),
        })?;
        let this_tag = wire.config_hash.clone();
        match &tag {
            None => tag = Some(this_tag),
            Some(prev) if *prev != this_tag => {
                return Err(Error::Parse {
                    line: lineno,
                    field: "config_hash".into(),
                    message: "records carry different config hashes".into(),
                })
            }
            _ => {}
        }
        records.push(wire.into_record(lineno)?);
    }
    Ok((records, tag.flatten()))
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<Record>> {
    read_dataset_tagged(input).map(|(records, _)| records)
}

fn field_from_serde(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports field names between backticks, e.g. "missing field `T`".
    msg.split('`').nth(1).unwrap_or("<record>").to_owned()
}
