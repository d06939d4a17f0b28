//! Sparse regression of each node's next reduced state onto monomials of its
//! own state and the states of nodes it was ever adjacent to.
//!
//! Rows of the regression run over `(t, d)` pairs, so one coefficient vector
//! per node is shared by all `f` reduced dimensions. Edge weights sum the
//! absolute coefficients of every term that references the edge.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{edge, Edge};
use crate::error::{Error, Result};

/// One library column for node `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "neighbor", rename_all = "snake_case")]
pub enum Term {
    /// `H_n^2`
    SelfSq,
    /// `H_n^3`
    SelfCube,
    /// `H_n H_m`
    Cross(usize),
    /// `H_n H_m^2`
    CrossA(usize),
    /// `H_n^2 H_m`
    CrossB(usize),
}

impl Term {
    pub fn neighbor(self) -> Option<usize> {
        match self {
            Term::SelfSq | Term::SelfCube => None,
            Term::Cross(m) | Term::CrossA(m) | Term::CrossB(m) => Some(m),
        }
    }

    fn value(self, hn: f64, hm: f64) -> f64 {
        match self {
            Term::SelfSq => hn * hn,
            Term::SelfCube => hn * hn * hn,
            Term::Cross(_) => hn * hm,
            Term::CrossA(_) => hn * hm * hm,
            Term::CrossB(_) => hn * hn * hm,
        }
    }
}

/// Ordered term list of one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Library {
    pub node: usize,
    pub degree_cap: u8,
    pub terms: Vec<Term>,
}

impl Library {
    /// Cap 2: `H_n^2`, then `H_n H_m` per neighbor. Cap 3: `H_n^2, H_n^3`,
    /// then `H_n H_m, H_n H_m^2, H_n^2 H_m` per neighbor. Neighbors are taken
    /// in ascending order.
    pub fn new(node: usize, neighbors: &[usize], degree_cap: u8) -> Result<Self> {
        if !(2..=3).contains(&degree_cap) {
            return Err(Error::Config(format!("degree cap {degree_cap} is not 2 or 3")));
        }
        let mut sorted = neighbors.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.contains(&node) {
            return Err(Error::Contract(format!("node {node} listed as its own neighbor")));
        }
        let mut terms = vec![Term::SelfSq];
        if degree_cap == 3 {
            terms.push(Term::SelfCube);
        }
        for m in sorted {
            terms.push(Term::Cross(m));
            if degree_cap == 3 {
                terms.push(Term::CrossA(m));
                terms.push(Term::CrossB(m));
            }
        }
        Ok(Library {
            node,
            degree_cap,
            terms,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Theta(H_n)` with rows `(t, d)` for `t` in `0..T-1`, from node
    /// trajectories `[node][t][f]`.
    pub fn design(&self, trajectories: &[Vec<Vec<f64>>]) -> Result<DMatrix<f64>> {
        let own = trajectories
            .get(self.node)
            .ok_or_else(|| Error::Contract(format!("no trajectory for node {}", self.node)))?;
        let steps = own.len().saturating_sub(1);
        let f = own.first().map_or(0, Vec::len);
        let mut out = DMatrix::zeros(steps * f, self.len());
        for (j, term) in self.terms.iter().enumerate() {
            let other = match term.neighbor() {
                Some(m) => Some(
                    trajectories
                        .get(m)
                        .ok_or_else(|| Error::Contract(format!("no trajectory for node {m}")))?,
                ),
                None => None,
            };
            for t in 0..steps {
                for d in 0..f {
                    let hm = other.map_or(0.0, |o| o[t][d]);
                    out[(t * f + d, j)] = term.value(own[t][d], hm);
                }
            }
        }
        Ok(out)
    }
}

/// `H'_n` flattened in the same `(t, d)` row order as [`Library::design`].
pub fn targets(own: &[Vec<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        own.len().saturating_sub(1) * own.first().map_or(0, Vec::len),
        own.iter().skip(1).flatten().copied(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlsqConfig {
    /// Threshold on coefficients of unit-RMS library columns.
    pub threshold: f64,
    pub max_iterations: usize,
}

impl Default for StlsqConfig {
    fn default() -> Self {
        StlsqConfig {
            threshold: 0.05,
            max_iterations: 20,
        }
    }
}

/// Thresholds swept when recovering a sparse support.
pub const THRESHOLD_GRID: [f64; 7] = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    /// Coefficients of the raw library columns.
    pub coefficients: Vec<f64>,
    /// RMS of each library column; `coefficients[j] * column_scales[j]` is
    /// the coefficient the threshold acts on.
    pub column_scales: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub ridge_fallback: bool,
}

const RIDGE_FALLBACK: f64 = 1e-8;

/// Least squares on the selected columns; falls back to a small ridge when
/// they are rank deficient.
fn solve_active(theta: &DMatrix<f64>, y: &DVector<f64>, active: &[usize]) -> (Vec<f64>, bool) {
    let a = theta.select_columns(active);
    let k = active.len();
    if a.nrows() >= k {
        let qr = a.clone().qr();
        let r = qr.r();
        let scale = r.amax().max(f64::MIN_POSITIVE);
        if (0..k).all(|i| r[(i, i)].abs() > 1e-10 * scale) {
            if let Some(x) = r.solve_upper_triangular(&(qr.q().transpose() * y)) {
                return (x.iter().copied().collect(), false);
            }
        }
    }
    let mut gram = a.transpose() * &a;
    for i in 0..k {
        gram[(i, i)] += RIDGE_FALLBACK;
    }
    let rhs = a.transpose() * y;
    let x = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(k));
    (x.iter().copied().collect(), true)
}

/// Sequentially thresholded least squares on RMS-normalized columns.
pub fn stlsq(theta: &DMatrix<f64>, y: &DVector<f64>, cfg: &StlsqConfig) -> Result<Regression> {
    let (rows, cols) = theta.shape();
    if y.len() != rows {
        return Err(Error::shape("stlsq", format!("{rows} rows, {} targets", y.len())));
    }
    if cfg.threshold < 0.0 {
        return Err(Error::Config(format!("threshold {} is negative", cfg.threshold)));
    }
    let scales: Vec<f64> = (0..cols)
        .map(|j| (theta.column(j).norm_squared() / rows.max(1) as f64).sqrt())
        .collect();
    let mut normed = theta.clone();
    for (j, &s) in scales.iter().enumerate() {
        if s > 0.0 {
            normed.column_mut(j).scale_mut(1.0 / s);
        }
    }
    let mut active: Vec<usize> = (0..cols).filter(|&j| scales[j] > 0.0).collect();
    let mut xi = vec![0.0; cols];
    let mut fallback = false;
    let mut iterations = 0;
    while !active.is_empty() && iterations < cfg.max_iterations.max(1) {
        iterations += 1;
        let (sol, fb) = solve_active(&normed, y, &active);
        fallback |= fb;
        xi.iter_mut().for_each(|x| *x = 0.0);
        for (&j, &v) in active.iter().zip(&sol) {
            xi[j] = v;
        }
        let kept: Vec<usize> = active.iter().copied().filter(|&j| xi[j].abs() >= cfg.threshold).collect();
        if kept.len() == active.len() {
            break;
        }
        active = kept;
        if active.is_empty() {
            xi.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    for x in &mut xi {
        if x.abs() < cfg.threshold {
            *x = 0.0;
        }
    }
    let fitted = &normed * DVector::from_column_slice(&xi);
    let residual = (fitted - y).norm();
    let coefficients = xi
        .iter()
        .zip(&scales)
        .map(|(x, s)| if *s > 0.0 { x / s } else { 0.0 })
        .collect();
    Ok(Regression {
        coefficients,
        column_scales: scales,
        residual,
        iterations,
        ridge_fallback: fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub library: Library,
    pub regression: Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyFit {
    pub degree_cap: u8,
    pub threshold: f64,
    pub nodes: Vec<NodeFit>,
}

/// Fits every node of one graph. `neighbors[n]` lists the nodes ever
/// adjacent to `n`; trajectories are `[node][t][f]`.
pub fn fit_graph(
    trajectories: &[Vec<Vec<f64>>],
    neighbors: &[Vec<usize>],
    degree_cap: u8,
    cfg: &StlsqConfig,
) -> Result<SindyFit> {
    if trajectories.len() != neighbors.len() {
        return Err(Error::shape(
            "sindy_fit",
            format!("{} trajectories, {} neighbor lists", trajectories.len(), neighbors.len()),
        ));
    }
    let nodes = (0..trajectories.len())
        .map(|n| {
            let library = Library::new(n, &neighbors[n], degree_cap)?;
            let theta = library.design(trajectories)?;
            let regression = stlsq(&theta, &targets(&trajectories[n]), cfg)?;
            Ok(NodeFit { library, regression })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SindyFit {
        degree_cap,
        threshold: cfg.threshold,
        nodes,
    })
}

/// `w_e(n, m)`: the sum over all node regressions of `|xi|` of the terms
/// that reference `{n, m}`. Every edge of `edges` appears in the result,
/// sorted.
pub fn edge_weights(fit: &SindyFit, edges: impl IntoIterator<Item = Edge>) -> Vec<(Edge, f64)> {
    let mut out: BTreeMap<Edge, f64> = edges.into_iter().map(|e| (e, 0.0)).collect();
    for node in &fit.nodes {
        for (term, xi) in node.library.terms.iter().zip(&node.regression.coefficients) {
            if let Some(m) = term.neighbor() {
                *out.entry(edge(node.library.node, m)).or_insert(0.0) += xi.abs();
            }
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn library_sizes() {
        assert_eq!(Library::new(0, &[], 3).unwrap().terms, vec![Term::SelfSq, Term::SelfCube]);
        for k in 0..5 {
            let nb: Vec<usize> = (1..=k).collect();
            assert_eq!(Library::new(0, &nb, 3).unwrap().len(), 2 + 3 * k);
            assert_eq!(Library::new(0, &nb, 2).unwrap().len(), 1 + k);
        }
        assert!(Library::new(0, &[1], 4).is_err());
        assert!(Library::new(0, &[0], 2).is_err());
    }

    #[test]
    fn library_values() {
        let traj = vec![vec![vec![2.0], vec![0.0]], vec![vec![3.0], vec![0.0]]];
        let lib = Library::new(0, &[1], 3).unwrap();
        let theta = lib.design(&traj).unwrap();
        assert_eq!(theta.row(0).iter().copied().collect::<Vec<_>>(), vec![4.0, 8.0, 6.0, 18.0, 12.0]);
    }

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 2.0, 0.3]);
        let r = stlsq(&theta, &DVector::zeros(3), &StlsqConfig::default()).unwrap();
        assert_eq!(r.coefficients, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_threshold_is_least_squares() {
        let theta = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 2.9, 5.1, 7.0]);
        let r = stlsq(&theta, &y, &StlsqConfig { threshold: 0.0, ..Default::default() }).unwrap();
        let ls = theta.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        for (a, b) in r.coefficients.iter().zip(ls.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!r.ridge_fallback);
    }

    #[test]
    fn duplicate_columns_use_the_ridge_fallback() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_column_slice(&[2.0, 4.0, 6.0]);
        let r = stlsq(&theta, &y, &StlsqConfig { threshold: 0.0, ..Default::default() }).unwrap();
        assert!(r.ridge_fallback);
        assert!((r.coefficients[0] + r.coefficients[1] - 2.0).abs() < 1e-6);
    }

    fn random_trajectories(nodes: usize, steps: usize, f: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..nodes)
            .map(|_| (0..steps).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect()
    }

    #[test]
    fn recovers_a_single_cross_term() {
        // h_{t+1,0} = h_{t,0} * h_{t,1}, other nodes random.
        let mut traj = random_trajectories(3, 30, 4, 9);
        // Near-unit multipliers keep node 0 from collapsing to zero.
        for v in traj[1].iter_mut().flatten() {
            *v = v.signum() * (0.9 + 0.2 * v.abs());
        }
        for t in 0..29 {
            for d in 0..4 {
                traj[0][t + 1][d] = traj[0][t][d] * traj[1][t][d];
            }
        }
        let lib = Library::new(0, &[1, 2], 3).unwrap();
        let r = stlsq(&lib.design(&traj).unwrap(), &targets(&traj[0]), &StlsqConfig::default()).unwrap();
        for (term, xi) in lib.terms.iter().zip(&r.coefficients) {
            if *term == Term::Cross(1) {
                assert!((xi - 1.0).abs() < 1e-6);
            } else {
                assert_eq!(*xi, 0.0, "{term:?}");
            }
        }
    }

    #[test]
    fn surviving_coefficients_clear_the_threshold() {
        let traj = random_trajectories(4, 20, 3, 17);
        let neighbors = vec![vec![1, 2], vec![0, 3], vec![0], vec![1]];
        let cfg = StlsqConfig { threshold: 0.3, ..Default::default() };
        let fit = fit_graph(&traj, &neighbors, 3, &cfg).unwrap();
        for node in &fit.nodes {
            let r = &node.regression;
            for (xi, s) in r.coefficients.iter().zip(&r.column_scales) {
                assert!(*xi == 0.0 || (xi * s).abs() >= 0.3);
            }
        }
    }

    fn toy_fit(coefficients: [Vec<f64>; 2]) -> SindyFit {
        let [c0, c1] = coefficients;
        let node = |n: usize, m: usize, c: Vec<f64>| NodeFit {
            library: Library::new(n, &[m], 3).unwrap(),
            regression: Regression {
                column_scales: vec![1.0; c.len()],
                coefficients: c,
                residual: 0.0,
                iterations: 1,
                ridge_fallback: false,
            },
        };
        SindyFit {
            degree_cap: 3,
            threshold: 0.0,
            nodes: vec![node(0, 1, c0), node(1, 0, c1)],
        }
    }

    #[test]
    fn edge_weight_aggregation() {
        let zero = toy_fit([vec![0.0; 5], vec![0.0; 5]]);
        assert_eq!(edge_weights(&zero, [(0, 1)]), vec![((0, 1), 0.0)]);

        let single = toy_fit([vec![0.0, 0.0, -0.7, 0.0, 0.0], vec![0.0; 5]]);
        assert_eq!(edge_weights(&single, [(0, 1)]), vec![((0, 1), 0.7)]);

        // Self terms never count; the six cross coefficients do.
        let hand = toy_fit([vec![9.0, 9.0, 0.5, -0.25, 1.0], vec![-9.0, 9.0, -2.0, 0.125, 0.0625]]);
        assert_eq!(edge_weights(&hand, [(0, 1)]), vec![((0, 1), 0.5 + 0.25 + 1.0 + 2.0 + 0.125 + 0.0625)]);
    }

    #[test]
    fn weights_only_on_adjacent_pairs() {
        let traj = random_trajectories(4, 15, 2, 3);
        let neighbors = vec![vec![1], vec![0, 2], vec![1], vec![]];
        let fit = fit_graph(&traj, &neighbors, 3, &StlsqConfig { threshold: 0.0, ..Default::default() }).unwrap();
        let w = edge_weights(&fit, [(0, 1), (1, 2)]);
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|(_, v)| *v > 0.0));
    }

    /// Two-neighbor rule: h_{t+1,0} = 0.8 h_0 h_1 - 0.6 h_0^2 h_2, plus noise.
    fn recovery_case(noise: f64, seed: u64) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<usize>>) {
        let mut traj = random_trajectories(4, 40, 6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let normal = Normal::new(0.0, noise).unwrap();
        for t in 0..39 {
            for d in 0..6 {
                let (h0, h1, h2) = (traj[0][t][d], traj[1][t][d], traj[2][t][d]);
                traj[0][t + 1][d] = 0.8 * h0 * h1 - 0.6 * h0 * h0 * h2 + normal.sample(&mut rng);
            }
        }
        (traj, vec![vec![1, 2, 3], vec![0], vec![0], vec![0]])
    }

    #[test]
    fn noisy_recovery_for_some_grid_threshold() {
        let (traj, neighbors) = recovery_case(1e-4, 5);
        let lib = Library::new(0, &neighbors[0], 3).unwrap();
        let theta = lib.design(&traj).unwrap();
        let y = targets(&traj[0]);
        let recovered = THRESHOLD_GRID.iter().any(|&eta| {
            let r = stlsq(&theta, &y, &StlsqConfig { threshold: eta, ..Default::default() }).unwrap();
            lib.terms.iter().zip(&r.coefficients).all(|(term, xi)| match term {
                Term::Cross(1) => (xi - 0.8).abs() < 1e-3,
                Term::CrossB(2) => (xi + 0.6).abs() < 1e-3,
                _ => *xi == 0.0,
            })
        });
        assert!(recovered);
    }

    proptest! {
        #[test]
        fn cubic_library_fits_at_least_as_well(seed in 0u64..200) {
            let traj = random_trajectories(3, 12, 2, seed);
            let cfg = StlsqConfig { threshold: 0.0, ..Default::default() };
            let neighbors = [vec![1, 2], vec![0], vec![0]];
            let r2 = fit_graph(&traj, &neighbors, 2, &cfg).unwrap();
            let r3 = fit_graph(&traj, &neighbors, 3, &cfg).unwrap();
            for (a, b) in r2.nodes.iter().zip(&r3.nodes) {
                prop_assert!(b.regression.residual <= a.regression.residual + 1e-9);
            }
        }

        #[test]
        fn edge_weights_ignore_label_order(seed in 0u64..200) {
            let traj = random_trajectories(3, 10, 2, seed);
            let neighbors = [vec![1], vec![0, 2], vec![1]];
            let fit = fit_graph(&traj, &neighbors, 3, &StlsqConfig::default()).unwrap();
            let forward = edge_weights(&fit, [edge(0, 1), edge(1, 2)]);
            let backward = edge_weights(&fit, [edge(2, 1), edge(1, 0)]);
            prop_assert_eq!(forward, backward);
        }
    }
}
