//! Graph convolutional recurrent encoder with an auxiliary Koopman state.
//!
//! Each layer applies a symmetric-normalized GCN to its input (the node
//! features for the first layer, the previous layer's hidden state above it)
//! and feeds the result to a bias-free LSTM cell. States are row vectors, so
//! every weight multiplies from the right: `z = x W`.
//!
//! The Koopman matrix `K` only enters the loss. Reconstructed states are
//! `h~_{t+1,n,l} = K h_{t,n,l}`; pooled over nodes they are compared with the
//! pooled embedding `h_{t+1}`, and the reconstruction of the last step is read
//! out through the same MLP as the real embedding.

mod io;
mod train;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, SparseMatrix, Tape, Tensor, Var};
use crate::data::{Edge, TemporalGraph};
use crate::error::{Error, Result};

pub use io::{read_checkpoint, read_embeddings, write_checkpoint, write_embeddings, Checkpoint};
pub use train::{accuracy, predict, train, EpochRecord, TrainOutcome};

/// Hyperparameters of the encoder, losses and training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden size `F`.
    pub hidden: usize,
    /// Number of stacked GCN+LSTM layers `L`.
    pub layers: usize,
    pub mlp_layers: usize,
    /// Weight of the BCE on the Koopman-reconstructed readout.
    pub alpha: f64,
    /// Weight of the observable loss.
    pub beta: f64,
    /// Strength of the `||K||_F^2` penalty inside the observable loss.
    pub koopman_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 16,
            layers: 9,
            mlp_layers: 3,
            alpha: 1.0,
            beta: 0.05,
            koopman_decay: 1e-4,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 16,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.mlp_layers == 0 {
            return Err(Error::Config(
                "hidden, layers and mlp_layers must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction = {} is not in [0, 1)",
                self.val_fraction
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.koopman_decay < 0.0 || self.learning_rate < 0.0 {
            return Err(Error::Config("loss weights and learning rate must be nonnegative".into()));
        }
        Ok(())
    }

    /// Values outside the reference search grid produce warnings only.
    pub fn grid_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if ![16, 32, 64].contains(&self.hidden) {
            out.push(format!("hidden = {} outside {{16, 32, 64}}", self.hidden));
        }
        if !(1..=10).contains(&self.layers) {
            out.push(format!("layers = {} outside 1..=10", self.layers));
        }
        if !(1..=3).contains(&self.mlp_layers) {
            out.push(format!("mlp_layers = {} outside 1..=3", self.mlp_layers));
        }
        if self.alpha != 1.0 {
            out.push(format!("alpha = {} differs from 1", self.alpha));
        }
        if ![0.0, 0.05, 0.1, 0.5, 1.0].contains(&self.beta) {
            out.push(format!("beta = {} outside {{0, 0.05, 0.1, 0.5, 1}}", self.beta));
        }
        if ![16, 32, 64, 128, 256].contains(&self.batch_size) {
            out.push(format!("batch_size = {} outside {{16, ..., 256}}", self.batch_size));
        }
        out
    }
}

/// Weights of one GCN+LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `in_dim x F`.
    pub gcn: Tensor,
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub w_xg: Tensor,
    pub w_hg: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
}

impl LayerParams {
    const NAMES: [&'static str; 9] = [
        "gcn", "w_xi", "w_hi", "w_xf", "w_hf", "w_xg", "w_hg", "w_xo", "w_ho",
    ];

    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.gcn, &self.w_xi, &self.w_hi, &self.w_xf, &self.w_hf, &self.w_xg, &self.w_hg,
            &self.w_xo, &self.w_ho,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = Tensor>) -> Option<Self> {
        Some(LayerParams {
            gcn: it.next()?,
            w_xi: it.next()?,
            w_hi: it.next()?,
            w_xf: it.next()?,
            w_hf: it.next()?,
            w_xg: it.next()?,
            w_hg: it.next()?,
            w_xo: it.next()?,
            w_ho: it.next()?,
        })
    }
}

/// Architecture dimensions shared by parameters and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub mlp_layers: usize,
}

impl Architecture {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Architecture {
            input_dim: 1,
            hidden: cfg.hidden,
            layers: cfg.layers,
            mlp_layers: cfg.mlp_layers,
        }
    }

    /// Width `F * L` of pooled embeddings.
    pub fn embedding_dim(&self) -> usize {
        self.hidden * self.layers
    }

    /// Shapes of the MLP weights: `FL -> F -> ... -> F -> 1`.
    pub fn mlp_shapes(&self) -> Vec<[usize; 2]> {
        let mut dims = vec![self.embedding_dim()];
        dims.extend(std::iter::repeat_n(self.hidden, self.mlp_layers - 1));
        dims.push(1);
        dims.windows(2).map(|w| [w[0], w[1]]).collect()
    }

    /// Parameter names and shapes in checkpoint order: per layer the GCN
    /// weight followed by `w_xi, w_hi, w_xf, w_hf, w_xg, w_hg, w_xo, w_ho`;
    /// then the MLP weights; then `koopman`.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.hidden;
        let mut out = Vec::new();
        for l in 0..self.layers {
            let in_dim = if l == 0 { self.input_dim } else { f };
            for (k, name) in LayerParams::NAMES.iter().enumerate() {
                let shape = if k == 0 { vec![in_dim, f] } else { vec![f, f] };
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        for (k, s) in self.mlp_shapes().iter().enumerate() {
            out.push((format!("mlp{k}"), s.to_vec()));
        }
        out.push(("koopman".into(), vec![f, f]));
        out
    }
}

/// All trainable tensors of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GcrnParams {
    pub arch: Architecture,
    pub layers: Vec<LayerParams>,
    pub mlp: Vec<Tensor>,
    /// `F x F`, acting on column states: `h~ = K h`.
    pub koopman: Tensor,
}

fn xavier(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    let n = shape[0] * shape[1];
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("shape and data agree")
}

impl GcrnParams {
    /// Xavier-uniform weights; `K` starts at the identity plus N(0, 0.01^2)
    /// noise.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = arch.layout();
        let mut tensors: Vec<Tensor> = layout[..layout.len() - 1]
            .iter()
            .map(|(_, shape)| xavier(shape, &mut rng))
            .collect();
        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        let mut k = Tensor::identity(arch.hidden);
        for v in k.data_mut() {
            *v += noise.sample(&mut rng);
        }
        tensors.push(k);
        GcrnParams::from_tensors(arch, tensors).expect("layout matches")
    }

    /// All-zero parameters (handy for analytic checks).
    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch.layout().iter().map(|(_, s)| Tensor::zeros(s)).collect();
        GcrnParams::from_tensors(arch, tensors).expect("layout matches")
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = Vec::new();
        for layer in &self.layers {
            out.extend(layer.tensors().into_iter().cloned());
        }
        out.extend(self.mlp.iter().cloned());
        out.push(self.koopman.clone());
        out
    }

    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = arch.layout();
        if tensors.len() != layout.len() {
            return Err(Error::shape(
                "params",
                format!("{} tensors, layout has {}", tensors.len(), layout.len()),
            ));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "params",
                    format!("{name}: shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
        }
        let mut it = tensors.into_iter();
        let layers = (0..arch.layers)
            .map(|_| LayerParams::from_iter(&mut it).expect("length checked"))
            .collect();
        let mlp = (0..arch.mlp_layers).map(|_| it.next().expect("length checked")).collect();
        let koopman = it.next().expect("length checked");
        Ok(GcrnParams {
            arch,
            layers,
            mlp,
            koopman,
        })
    }
}

/// Symmetric normalization with self-loops, `D^-1/2 (A + I) D^-1/2`.
pub fn normalized_adjacency(num_nodes: usize, edges: &[Edge]) -> SparseMatrix {
    let mut degree = vec![1.0f64; num_nodes];
    for &(u, v) in edges {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(num_nodes + 2 * edges.len());
    for n in 0..num_nodes {
        triplets.push((n, n, inv_sqrt[n] * inv_sqrt[n]));
    }
    for &(u, v) in edges {
        let w = inv_sqrt[u] * inv_sqrt[v];
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    SparseMatrix::from_triplets(num_nodes, num_nodes, triplets)
}

/// GCN propagation of `x` (`N x D`) through one step's adjacency: `Â x W`.
pub fn gcn_forward(x: &Tensor, edges: &[Edge], weight: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let adj = Rc::new(normalized_adjacency(x.rows(), edges));
    let xv = tape.constant(x.clone());
    let wv = tape.constant(weight.clone());
    let prop = tape.sparse_matmul(&adj, xv)?;
    let out = tape.matmul(prop, wv)?;
    Ok(tape.value(out).clone())
}

/// Bound copies of the parameters on a tape.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub gcn: Var,
    pub w_xi: Var,
    pub w_hi: Var,
    pub w_xf: Var,
    pub w_hf: Var,
    pub w_xg: Var,
    pub w_hg: Var,
    pub w_xo: Var,
    pub w_ho: Var,
}

#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
    pub mlp: Vec<Var>,
    pub koopman: Var,
}

impl ParamVars {
    /// Registers the parameters on `tape`, as differentiable leaves when
    /// `trainable` is set and as constants otherwise.
    pub fn bind(tape: &mut Tape, params: &GcrnParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = params
            .layers
            .iter()
            .map(|l| LayerVars {
                gcn: leaf(&l.gcn),
                w_xi: leaf(&l.w_xi),
                w_hi: leaf(&l.w_hi),
                w_xf: leaf(&l.w_xf),
                w_hf: leaf(&l.w_hf),
                w_xg: leaf(&l.w_xg),
                w_hg: leaf(&l.w_hg),
                w_xo: leaf(&l.w_xo),
                w_ho: leaf(&l.w_ho),
            })
            .collect();
        let mlp = params.mlp.iter().map(&mut leaf).collect();
        let koopman = leaf(&params.koopman);
        ParamVars {
            layers,
            mlp,
            koopman,
        }
    }

    /// Groups variables given in checkpoint order.
    pub fn from_flat(vars: &[Var], arch: Architecture) -> Result<Self> {
        let expected = arch.layout().len();
        if vars.len() != expected {
            return Err(Error::shape(
                "params",
                format!("{} variables, layout has {expected}", vars.len()),
            ));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let layers = (0..arch.layers)
            .map(|_| LayerVars {
                gcn: next(),
                w_xi: next(),
                w_hi: next(),
                w_xf: next(),
                w_hf: next(),
                w_xg: next(),
                w_hg: next(),
                w_xo: next(),
                w_ho: next(),
            })
            .collect();
        let mlp = (0..arch.mlp_layers).map(|_| next()).collect();
        let koopman = next();
        Ok(ParamVars {
            layers,
            mlp,
            koopman,
        })
    }

    /// Variables in checkpoint order.
    pub fn flatten(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([
                l.gcn, l.w_xi, l.w_hi, l.w_xf, l.w_hf, l.w_xg, l.w_hg, l.w_xo, l.w_ho,
            ]);
        }
        out.extend(&self.mlp);
        out.push(self.koopman);
        out
    }
}

/// One recurrent update. `prev` is `None` at the first step, where the
/// zero initial state makes the recurrent terms vanish.
pub fn lstm_step(
    tape: &mut Tape,
    input: Var,
    prev: Option<(Var, Var)>,
    w: &LayerVars,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape, wx: Var, wh: Var| -> Result<Var> {
        let zx = tape.matmul(input, wx)?;
        match prev {
            Some((h, _)) => {
                let zh = tape.matmul(h, wh)?;
                tape.add(zx, zh)
            }
            None => Ok(zx),
        }
    };
    let zi = gate(tape, w.w_xi, w.w_hi)?;
    let zf = gate(tape, w.w_xf, w.w_hf)?;
    let zg = gate(tape, w.w_xg, w.w_hg)?;
    let zo = gate(tape, w.w_xo, w.w_ho)?;
    let i = tape.sigmoid(zi);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let ig = tape.mul(i, g)?;
    let c = match prev {
        Some((_, c_prev)) => {
            let f = tape.sigmoid(zf);
            let fc = tape.mul(f, c_prev)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Tape handles produced by one forward pass over a graph.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[t][l]`, each `N x F`.
    pub node_states: Vec<Vec<Var>>,
    /// `[t][l]`, each `1 x F`: node sums of the layer states.
    pub pooled_layers: Vec<Vec<Var>>,
    /// `[t]`, each `1 x FL`.
    pub graph_states: Vec<Var>,
    /// `1 x 1`.
    pub logit: Var,
}

fn node_features(tg: &TemporalGraph, t: usize) -> Tensor {
    let data = tg.features[t].iter().map(|&x| f64::from(x)).collect();
    Tensor::new(vec![tg.num_nodes, 1], data).expect("N x 1")
}

/// Runs the encoder and readout over `tg`.
pub fn forward(tape: &mut Tape, vars: &ParamVars, tg: &TemporalGraph) -> Result<Forward> {
    if tg.horizon() == 0 {
        return Err(Error::Contract(format!("{}: empty graph", tg.id)));
    }
    let num_layers = vars.layers.len();
    let mut prev: Vec<Option<(Var, Var)>> = vec![None; num_layers];
    let mut node_states = Vec::with_capacity(tg.horizon());
    let mut pooled_layers = Vec::with_capacity(tg.horizon());
    let mut graph_states = Vec::with_capacity(tg.horizon());
    for t in 0..tg.horizon() {
        let adj = Rc::new(normalized_adjacency(tg.num_nodes, &tg.edges[t]));
        let mut input = tape.constant(node_features(tg, t));
        let mut states = Vec::with_capacity(num_layers);
        let mut pooled = Vec::with_capacity(num_layers);
        for (l, w) in vars.layers.iter().enumerate() {
            let prop = tape.sparse_matmul(&adj, input)?;
            let xg = tape.matmul(prop, w.gcn)?;
            let (h, c) = lstm_step(tape, xg, prev[l], w)?;
            prev[l] = Some((h, c));
            states.push(h);
            pooled.push(tape.sum_rows(h)?);
            input = h;
        }
        graph_states.push(tape.concat_cols(&pooled)?);
        node_states.push(states);
        pooled_layers.push(pooled);
    }
    let logit = mlp_forward(tape, &vars.mlp, *graph_states.last().expect("nonempty"))?;
    Ok(Forward {
        node_states,
        pooled_layers,
        graph_states,
        logit,
    })
}

/// `tanh` hidden layers, linear output, no biases.
pub fn mlp_forward(tape: &mut Tape, weights: &[Var], input: Var) -> Result<Var> {
    let mut z = input;
    for (k, &w) in weights.iter().enumerate() {
        z = tape.matmul(z, w)?;
        if k + 1 < weights.len() {
            z = tape.tanh(z);
        }
    }
    Ok(z)
}

/// Plain evaluation of the readout on one embedding.
pub fn readout(params: &GcrnParams, embedding: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.mlp.iter().map(|w| tape.constant(w.clone())).collect();
    let x = tape.constant(Tensor::matrix(1, embedding.len(), embedding.to_vec())?);
    let y = mlp_forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).item())
}

/// Koopman-reconstructed pooled states on the tape: entry `t` approximates
/// `graph_states[t + 1]`.
pub fn koopman_pooled(tape: &mut Tape, fwd: &Forward, koopman: Var) -> Result<Vec<Var>> {
    let kt = tape.transpose(koopman)?;
    let steps = fwd.pooled_layers.len();
    let mut out = Vec::with_capacity(steps.saturating_sub(1));
    for pooled in &fwd.pooled_layers[..steps.saturating_sub(1)] {
        let parts = pooled
            .iter()
            .map(|&p| tape.matmul(p, kt))
            .collect::<Result<Vec<_>>>()?;
        out.push(tape.concat_cols(&parts)?);
    }
    Ok(out)
}

/// `ŷ log σ(y) + (1-ŷ) log(1-σ(y))`, negated, as a scalar node.
pub fn bce_with_logit(tape: &mut Tape, logit: Var, label: u8) -> Var {
    let arg = if label == 1 { tape.scale(logit, -1.0) } else { logit };
    let sp = tape.softplus(arg);
    tape.sum(sp)
}

/// Plain binary cross-entropy on a logit.
pub fn bce(logit: f64, label: u8) -> f64 {
    let p = sigmoid(logit);
    -(f64::from(label) * p.ln() + (1.0 - f64::from(label)) * (1.0 - p).ln())
}

/// Scalar loss nodes for one graph.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub bce: Var,
    pub rec: Option<Var>,
    pub obs: Option<Var>,
    pub total: Var,
}

/// `l_bce + alpha l_rec + beta (MSE(h_t, h~_t) + lambda_K ||K||_F^2)`.
///
/// The MSE averages over `t = 2..T` and all `FL` coordinates. Terms with a
/// zero weight are not recorded; with `T = 1` there is no reconstruction and
/// both Koopman terms vanish.
pub fn loss_terms(
    tape: &mut Tape,
    vars: &ParamVars,
    fwd: &Forward,
    label: u8,
    cfg: &ModelConfig,
) -> Result<LossTerms> {
    let bce_y = bce_with_logit(tape, fwd.logit, label);
    let mut total = bce_y;
    let mut rec = None;
    let mut obs = None;
    let steps = fwd.graph_states.len();
    if steps > 1 && (cfg.alpha != 0.0 || cfg.beta != 0.0) {
        let recon = koopman_pooled(tape, fwd, vars.koopman)?;
        if cfg.alpha != 0.0 {
            let last = *recon.last().expect("steps > 1");
            let y_rec = mlp_forward(tape, &vars.mlp, last)?;
            let term = bce_with_logit(tape, y_rec, label);
            let weighted = tape.scale(term, cfg.alpha);
            total = tape.add(total, weighted)?;
            rec = Some(term);
        }
        if cfg.beta != 0.0 {
            let width = tape.value(fwd.graph_states[0]).numel();
            let mut acc: Option<Var> = None;
            for (t, &r) in recon.iter().enumerate() {
                let d = tape.sub(fwd.graph_states[t + 1], r)?;
                let sq = tape.mul(d, d)?;
                let s = tape.sum(sq);
                acc = Some(match acc {
                    Some(a) => tape.add(a, s)?,
                    None => s,
                });
            }
            let mse = tape.scale(acc.expect("steps > 1"), 1.0 / ((steps - 1) * width) as f64);
            let ksq = tape.mul(vars.koopman, vars.koopman)?;
            let knorm = tape.sum(ksq);
            let decay = tape.scale(knorm, cfg.koopman_decay);
            let term = tape.add(mse, decay)?;
            let weighted = tape.scale(term, cfg.beta);
            total = tape.add(total, weighted)?;
            obs = Some(term);
        }
    }
    Ok(LossTerms {
        bce: bce_y,
        rec,
        obs,
        total,
    })
}

/// Total loss of `params` on one labeled graph.
pub fn loss_total(tg: &TemporalGraph, params: &GcrnParams, cfg: &ModelConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, false);
    let fwd = forward(&mut tape, &vars, tg)?;
    let terms = loss_terms(&mut tape, &vars, &fwd, tg.label, cfg)?;
    Ok(tape.value(terms.total).item())
}

/// Recorded hidden states of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTrajectories {
    pub id: String,
    pub num_nodes: usize,
    pub layers: usize,
    pub hidden: usize,
    /// `[t][n]`, each of length `FL` (layer-major concatenation).
    pub node_states: Vec<Vec<Vec<f64>>>,
    /// `[t]`, node sums of `node_states[t]`.
    pub graph_states: Vec<Vec<f64>>,
}

impl EmbeddingTrajectories {
    pub fn horizon(&self) -> usize {
        self.graph_states.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers * self.hidden
    }

    /// `h_n`: last-step node states.
    pub fn node_embeddings(&self) -> &[Vec<f64>] {
        self.node_states.last().map_or(&[], Vec::as_slice)
    }

    /// `h = sum_n h_n`, equal to the last graph state.
    pub fn graph_embedding(&self) -> &[f64] {
        self.graph_states.last().map_or(&[], Vec::as_slice)
    }

    /// `h_{t,n,l}` as a slice of length `F`.
    pub fn state(&self, t: usize, n: usize, l: usize) -> &[f64] {
        &self.node_states[t][n][l * self.hidden..(l + 1) * self.hidden]
    }

    /// Trajectory of one node: `[t]` of length `FL`.
    pub fn node_trajectory(&self, n: usize) -> Vec<Vec<f64>> {
        self.node_states.iter().map(|row| row[n].clone()).collect()
    }
}

/// Records the hidden states of `tg` under `params`.
pub fn encode(tg: &TemporalGraph, params: &GcrnParams) -> Result<EmbeddingTrajectories> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, false);
    let fwd = forward(&mut tape, &vars, tg)?;
    Ok(collect_trajectories(&tape, &fwd, tg, params.arch))
}

fn collect_trajectories(tape: &Tape, fwd: &Forward, tg: &TemporalGraph, arch: Architecture) -> EmbeddingTrajectories {
    let f = arch.hidden;
    let width = arch.embedding_dim();
    let node_states = fwd
        .node_states
        .iter()
        .map(|layers| {
            let mut rows = vec![vec![0.0; width]; tg.num_nodes];
            for (l, &h) in layers.iter().enumerate() {
                let value = tape.value(h);
                for (n, row) in rows.iter_mut().enumerate() {
                    row[l * f..(l + 1) * f].copy_from_slice(value.row(n));
                }
            }
            rows
        })
        .collect();
    let graph_states = fwd
        .graph_states
        .iter()
        .map(|&g| tape.value(g).data().to_vec())
        .collect();
    EmbeddingTrajectories {
        id: tg.id.clone(),
        num_nodes: tg.num_nodes,
        layers: arch.layers,
        hidden: f,
        node_states,
        graph_states,
    }
}

/// Koopman reconstruction computed node by node, then pooled: entry `t` of
/// the returned series is `sum_n concat_l K h_{t,n,l}` and approximates
/// `h_{t+1}`. The second value is the reconstruction of the final state.
pub fn koopman_reconstruct(traj: &EmbeddingTrajectories, koopman: &Tensor) -> (Vec<Vec<f64>>, Vec<f64>) {
    let f = traj.hidden;
    let steps = traj.horizon();
    let k = koopman.data();
    let series: Vec<Vec<f64>> = (0..steps.saturating_sub(1))
        .map(|t| {
            let mut pooled = vec![0.0; traj.embedding_dim()];
            for n in 0..traj.num_nodes {
                for l in 0..traj.layers {
                    let h = traj.state(t, n, l);
                    for r in 0..f {
                        let kh: f64 = (0..f).map(|c| k[r * f + c] * h[c]).sum();
                        pooled[l * f + r] += kh;
                    }
                }
            }
            pooled
        })
        .collect();
    let last = series.last().cloned().unwrap_or_default();
    (series, last)
}
