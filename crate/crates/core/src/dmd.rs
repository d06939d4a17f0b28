//! Ridge-regression DMD on reduced embedding trajectories.
//!
//! The operator `C` solves `min sum ||y - C x||^2 + gamma ||C||_F^2` over
//! snapshot pairs `(x, y)` taken within one trajectory. Koopman modes are
//! projections onto left eigenvectors `w_i` of `C` (rows of `V^-1`), so that
//! on exactly linear data `s_i(t + 1) = lambda_i s_i(t)`.

use nalgebra::{DMatrix, Schur};
pub use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Global,
    PerGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdFit {
    pub scope: Scope,
    pub gamma: f64,
    /// `f x f`, row-major rows.
    pub operator: Vec<Vec<f64>>,
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors `v_i`, unit norm.
    pub eigenvectors: Vec<Vec<Complex64>>,
    /// Left eigenvectors `w_i` (`w_i C = lambda_i w_i`), unit norm.
    pub left_eigenvectors: Vec<Vec<Complex64>>,
    /// Set when the normal equations were singular and a pseudo-inverse
    /// replaced the ridge solve.
    pub pseudo_inverse: bool,
    pub num_pairs: usize,
}

/// Ridge solution `C = Y X^T (X X^T + gamma I)^-1`, computed as the least
/// squares problem `[X^T; sqrt(gamma) I] C^T = [Y^T; 0]`. Returns the
/// operator and whether the pseudo-inverse fallback was used.
pub fn ridge_operator<'a, I>(pairs: I, dim: usize, gamma: f64) -> Result<(DMatrix<f64>, bool, usize)>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("ridge strength {gamma} must be nonnegative")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut count = 0;
    for (x, y) in pairs {
        if x.len() != dim || y.len() != dim {
            return Err(Error::shape("ridge_operator", format!("snapshot of length {} / {}, expected {dim}", x.len(), y.len())));
        }
        xs.extend_from_slice(x);
        ys.extend_from_slice(y);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Contract("no snapshot pairs to fit".into()));
    }
    let rows = count + if gamma > 0.0 { dim } else { 0 };
    let mut a = DMatrix::<f64>::zeros(rows, dim);
    let mut b = DMatrix::<f64>::zeros(rows, dim);
    for p in 0..count {
        for k in 0..dim {
            a[(p, k)] = xs[p * dim + k];
            b[(p, k)] = ys[p * dim + k];
        }
    }
    if gamma > 0.0 {
        let s = gamma.sqrt();
        for k in 0..dim {
            a[(count + k, k)] = s;
        }
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let (ct, fallback) = if rows >= dim {
        let qr = a.clone().qr();
        let r = qr.r();
        let min_diag = (0..dim).map(|k| r[(k, k)].abs()).fold(f64::INFINITY, f64::min);
        if min_diag > 1e-12 * scale {
            let qtb = qr.q().transpose() * &b;
            let sol = r
                .solve_upper_triangular(&qtb)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            (sol, false)
        } else {
            (pinv_solve(&a, &b)?, true)
        }
    } else {
        (pinv_solve(&a, &b)?, true)
    };
    if fallback {
        log::warn!("singular DMD normal equations; used the pseudo-inverse");
    }
    Ok((ct.transpose(), fallback, count))
}

fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps).map_err(|e| Error::Numerical(e.into()))
}

/// Eigen-decomposition of a square real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    /// Unit-norm right eigenvectors.
    pub vectors: Vec<Vec<Complex64>>,
}

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenpairs via the complex Schur form and back-substitution.
///
/// Conjugate symmetry is enforced for real input: eigenvalues whose
/// imaginary part is at rounding level are made real with real vectors, and
/// each eigenvalue in the lower half plane is the exact conjugate of its
/// partner. Vectors have unit norm with the first nonzero entry real and
/// positive. Order: decreasing modulus, then decreasing imaginary part.
pub fn eig(m: &DMatrix<f64>) -> Result<Eigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::shape("eig", format!("{}x{} is not square", n, m.ncols())));
    }
    if n == 0 {
        return Ok(Eigen {
            values: vec![],
            vectors: vec![],
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eig: non-finite matrix entry".into()));
    }
    let norm = m.norm().max(f64::MIN_POSITIVE);
    let mc: DMatrix<Complex64> = m.map(|v| Complex64::new(v, 0.0));
    let schur = Schur::try_new(mc, f64::EPSILON, SCHUR_MAX_ITER).ok_or_else(|| {
        Error::Numerical(format!("Schur iteration did not converge within {SCHUR_MAX_ITER} iterations"))
    })?;
    let (q, t) = schur.unpack();

    let tiny = f64::EPSILON * norm;
    let mut values: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();
    let mut vectors = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        y[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                acc += t[(j, l)] * y[l];
            }
            let mut denom = t[(j, j)] - lambda;
            if denom.norm() < tiny {
                denom = Complex64::new(tiny, 0.0);
            }
            y[j] = -acc / denom;
        }
        let v: Vec<Complex64> = (0..n)
            .map(|r| (0..=k).map(|c| q[(r, c)] * y[c]).sum())
            .collect();
        vectors.push(normalize(v));
    }

    // Conjugate symmetry.
    let real_tol = 1e-10 * norm;
    let mut partner_used = vec![false; n];
    for k in 0..n {
        if values[k].im.abs() <= real_tol {
            values[k].im = 0.0;
            vectors[k] = normalize(real_vector(&vectors[k]));
        }
    }
    for k in 0..n {
        if values[k].im >= 0.0 {
            continue;
        }
        let target = values[k].conj();
        let partner = (0..n)
            .filter(|&j| values[j].im > 0.0 && !partner_used[j])
            .min_by(|&a, &b| (values[a] - target).norm().total_cmp(&(values[b] - target).norm()));
        if let Some(j) = partner {
            partner_used[j] = true;
            values[k] = values[j].conj();
            vectors[k] = normalize(vectors[j].iter().map(|z| z.conj()).collect());
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let key = |z: Complex64| (z.norm() / norm * 1e9).round();
    order.sort_by(|&a, &b| {
        key(values[b])
            .total_cmp(&key(values[a]))
            .then(values[b].im.total_cmp(&values[a].im))
            .then(a.cmp(&b))
    });
    Ok(Eigen {
        values: order.iter().map(|&k| values[k]).collect(),
        vectors: order.iter().map(|&k| vectors[k].clone()).collect(),
    })
}

/// Rotates a vector to make its largest-modulus entry real, then drops the
/// imaginary parts.
fn real_vector(v: &[Complex64]) -> Vec<Complex64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or_default();
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { Complex64::new(1.0, 0.0) };
    v.iter().map(|z| Complex64::new((z * phase).re, 0.0)).collect()
}

/// Unit norm, first nonzero entry real and positive.
fn normalize(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let cutoff = 1e-12 * norm;
    let first = v.iter().copied().find(|z| z.norm() > cutoff).unwrap_or(Complex64::new(1.0, 0.0));
    let phase = first.conj() / first.norm();
    for z in &mut v {
        *z = *z * phase / norm;
    }
    v
}

fn left_eigenvectors(right: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let n = right.len();
    let v = DMatrix::<Complex64>::from_fn(n, n, |r, c| right[c][r]);
    let inv = match v.clone().try_inverse() {
        Some(inv) => inv,
        None => {
            log::warn!("eigenvector matrix is singular; operator is defective");
            v.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::identity(n, n))
        }
    };
    (0..n).map(|i| normalize(inv.row(i).iter().copied().collect())).collect()
}

impl DmdFit {
    fn from_pairs<'a, I>(pairs: I, dim: usize, gamma: f64, scope: Scope) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let (c, pseudo_inverse, num_pairs) = ridge_operator(pairs, dim, gamma)?;
        let e = eig(&c)?;
        let left_eigenvectors = left_eigenvectors(&e.vectors);
        Ok(DmdFit {
            scope,
            gamma,
            operator: (0..dim).map(|r| c.row(r).iter().copied().collect()).collect(),
            eigenvalues: e.values,
            eigenvectors: e.vectors,
            left_eigenvectors,
            pseudo_inverse,
            num_pairs,
        })
    }

    /// Global operator over graph-state trajectories (`[graph][t][f]`).
    pub fn fit_global(trajectories: &[Vec<Vec<f64>>], gamma: f64) -> Result<Self> {
        let dim = snapshot_dim(trajectories)?;
        DmdFit::from_pairs(pairs_within(trajectories), dim, gamma, Scope::Global)
    }

    /// Per-graph operator over node trajectories (`[node][t][f]`).
    pub fn fit_nodes(node_trajectories: &[Vec<Vec<f64>>], gamma: f64) -> Result<Self> {
        let dim = snapshot_dim(node_trajectories)?;
        DmdFit::from_pairs(pairs_within(node_trajectories), dim, gamma, Scope::PerGraph)
    }

    pub fn dim(&self) -> usize {
        self.operator.len()
    }

    pub fn operator_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |r, c| self.operator[r][c])
    }

    /// `s_i(t) = w_i . h'_t` along one trajectory.
    pub fn mode_series(&self, mode: usize, trajectory: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        let w = self.left_eigenvectors.get(mode).ok_or_else(|| {
            Error::Contract(format!("mode {mode} out of range for a {}-dimensional fit", self.dim()))
        })?;
        Ok(trajectory
            .iter()
            .map(|h| w.iter().zip(h).map(|(wi, x)| wi * x).sum())
            .collect())
    }
}

fn snapshot_dim(trajectories: &[Vec<Vec<f64>>]) -> Result<usize> {
    trajectories
        .iter()
        .flat_map(|t| t.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::Contract("no snapshots to fit".into()))
}

fn pairs_within(trajectories: &[Vec<Vec<f64>>]) -> impl Iterator<Item = (&[f64], &[f64])> {
    trajectories
        .iter()
        .flat_map(|t| t.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice())))
}

/// Fraction of next-step energy left unexplained by the best one-step
/// linear map: `sum ||y - C x||^2 / sum ||y||^2` over all pairs within each
/// trajectory, with `C` the ridge fit. Invariant to rescaling the data.
pub fn linearity_residual(trajectories: &[Vec<Vec<f64>>], gamma: f64) -> Result<f64> {
    let dim = snapshot_dim(trajectories)?;
    let (c, _, _) = ridge_operator(pairs_within(trajectories), dim, gamma)?;
    let mut unexplained = 0.0;
    let mut total = 0.0;
    for (x, y) in pairs_within(trajectories) {
        for r in 0..dim {
            let pred: f64 = (0..dim).map(|k| c[(r, k)] * x[k]).sum();
            unexplained += (y[r] - pred).powi(2);
            total += y[r] * y[r];
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(unexplained / total)
}

/// `|s(t + 1) - s(t)|`, length `T - 1`.
pub fn time_weight(series: &[Complex64]) -> Vec<f64> {
    series.windows(2).map(|w| (w[1] - w[0]).norm()).collect()
}

/// `|s_n - mean_m s_m|` for one time slice.
pub fn node_weight(values: &[Complex64]) -> Vec<f64> {
    if values.is_empty() {
        return vec![];
    }
    let mean: Complex64 = values.iter().sum::<Complex64>() / values.len() as f64;
    values.iter().map(|s| (s - mean).norm()).collect()
}

/// `w_G(t, n)` from per-node series `[n][t]`; returns `[t][n]`.
pub fn spatiotemporal_weight(node_series: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    let steps = node_series.first().map_or(0, Vec::len);
    (0..steps)
        .map(|t| {
            let slice: Vec<Complex64> = node_series.iter().map(|s| s[t]).collect();
            node_weight(&slice)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn residual(m: &DMatrix<f64>, e: &Eigen) -> f64 {
        let n = m.nrows();
        let mut worst = 0.0f64;
        for (lambda, v) in e.values.iter().zip(&e.vectors) {
            for r in 0..n {
                let mv: Complex64 = (0..n).map(|k| v[k] * m[(r, k)]).sum();
                worst = worst.max((mv - lambda * v[r]).norm());
            }
        }
        worst
    }

    fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rotation(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    fn trajectory(a: &DMatrix<f64>, x0: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut x = nalgebra::DVector::from_column_slice(x0);
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            out.push(x.iter().copied().collect());
            x = a * x;
        }
        out
    }

    #[test]
    fn identity_eigenvalues() {
        let e = eig(&DMatrix::identity(4, 4)).unwrap();
        assert!(e.values.iter().all(|&l| (l - c(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn rotation_eigenvalues() {
        let theta = 0.7;
        let e = eig(&rotation(theta)).unwrap();
        assert!((e.values[0] - c(theta.cos(), theta.sin())).norm() < 1e-14);
        assert_eq!(e.values[1], e.values[0].conj());
        assert!(residual(&rotation(theta), &e) < 1e-12);
    }

    #[test]
    fn random_eigenpairs_have_small_residuals() {
        for seed in 0..20 {
            let m = random_matrix(5, seed);
            let e = eig(&m).unwrap();
            assert!(residual(&m, &e) < 1e-8 * m.norm(), "seed {seed}");
            for v in &e.vectors {
                let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                assert!((norm - 1.0).abs() < 1e-12);
            }
            assert!(e.values.windows(2).all(|w| w[0].norm() >= w[1].norm() - 1e-9));
            for (k, l) in e.values.iter().enumerate() {
                if l.im != 0.0 {
                    let partner = e.values.iter().position(|z| *z == l.conj());
                    assert!(partner.is_some_and(|p| p != k), "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn exact_linear_trajectories_recover_the_map() {
        let mut a = random_matrix(4, 11);
        a /= 1.2 * a.norm();
        let trajs: Vec<_> = (0..5)
            .map(|s| trajectory(&a, &random_matrix(4, 100 + s).column(0).iter().copied().collect::<Vec<_>>(), 30))
            .collect();
        let fit = DmdFit::fit_global(&trajs, 1e-12).unwrap();
        assert!((fit.operator_matrix() - &a).norm() < 1e-8);
        assert!(!fit.pseudo_inverse);
    }

    #[test]
    fn constant_trajectory_has_unit_eigenvalue() {
        let traj = vec![vec![1.0, 2.0]; 10];
        let fit = DmdFit::fit_global(&[traj], 1e-12).unwrap();
        assert!((fit.eigenvalues[0] - c(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn large_ridge_shrinks_to_zero() {
        let traj = trajectory(&rotation(0.2), &[1.0, 0.5], 20);
        let fit = DmdFit::fit_global(&[traj], 1e12).unwrap();
        assert!(fit.operator_matrix().norm() < 1e-10);
    }

    #[test]
    fn singular_unregularized_fit_falls_back() {
        let traj = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![4.0, 0.0]];
        let fit = DmdFit::fit_global(&[traj], 0.0).unwrap();
        assert!(fit.pseudo_inverse);
        assert!((fit.operator[0][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotating_nodes_give_unit_circle_eigenvalues() {
        let theta = 0.4;
        let nodes: Vec<_> = (0..6)
            .map(|n| trajectory(&rotation(theta), &[1.0 + n as f64, -0.5 * n as f64], 15))
            .collect();
        let fit = DmdFit::fit_nodes(&nodes, 1e-14).unwrap();
        assert_eq!(fit.scope, Scope::PerGraph);
        for l in &fit.eigenvalues {
            assert!((l.norm() - 1.0).abs() < 1e-8);
            assert!((l.im.abs() - theta.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn modes_follow_their_eigenvalues() {
        let mut a = random_matrix(5, 21);
        a /= 1.1 * a.norm();
        let trajs: Vec<_> = (0..4)
            .map(|s| trajectory(&a, &random_matrix(5, 200 + s).column(0).iter().copied().collect::<Vec<_>>(), 25))
            .collect();
        let fit = DmdFit::fit_global(&trajs, 1e-14).unwrap();
        for i in 0..5 {
            let s = fit.mode_series(i, &trajs[0]).unwrap();
            for t in 0..s.len() - 1 {
                assert!((s[t + 1] - fit.eigenvalues[i] * s[t]).norm() < 1e-6);
            }
            // Strictly stable modes decay geometrically.
            assert!(s[24].norm() <= s[0].norm() * fit.eigenvalues[i].norm().powi(24) + 1e-9);
        }
        assert!(fit.mode_series(5, &trajs[0]).is_err());
    }

    #[test]
    fn linearity_residual_separates_linear_from_nonlinear() {
        let traj = trajectory(&rotation(0.3), &[1.0, 0.0], 40);
        assert!(linearity_residual(&[traj], 1e-12).unwrap() < 1e-12);
        let logistic: Vec<Vec<f64>> = std::iter::successors(Some(0.3f64), |x| Some(3.9 * x * (1.0 - x)))
            .take(60)
            .map(|x| vec![x])
            .collect();
        let r = linearity_residual(&[logistic], 1e-12).unwrap();
        assert!(r > 0.01 && r <= 1.0, "{r}");
    }

    #[test]
    fn time_weight_cases() {
        assert_eq!(time_weight(&[c(2.0, 1.0); 5]), vec![0.0; 4]);
        let ramp: Vec<_> = (0..6).map(|t| c(t as f64, 0.0)).collect();
        assert_eq!(time_weight(&ramp), vec![1.0; 5]);
        let step: Vec<_> = (0..6).map(|t| if t < 3 { c(0.0, 0.0) } else { c(0.0, -2.5) }).collect();
        assert_eq!(time_weight(&step), vec![0.0, 0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn node_weight_cases() {
        assert!(node_weight(&[c(0.3, 0.1); 3]).iter().all(|w| w.abs() < 1e-15));
        let w = node_weight(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(w, vec![0.75, 0.25, 0.25, 0.25]);
        let shifted = node_weight(&[c(3.0, 2.0), c(2.0, 2.0), c(2.0, 2.0), c(2.0, 2.0)]);
        for (a, b) in w.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn spatiotemporal_weight_fixture() {
        // Node series [n][t]: three nodes over two steps.
        let series = vec![
            vec![c(0.0, 0.0), c(3.0, 0.0)],
            vec![c(0.0, 0.0), c(0.0, 3.0)],
            vec![c(0.0, 0.0), c(0.0, 0.0)],
        ];
        let w = spatiotemporal_weight(&series);
        assert_eq!(w[0], vec![0.0; 3]);
        // Mean is 1 + i; hand distances.
        let expected = [5.0f64.sqrt(), 5.0f64.sqrt(), 2.0f64.sqrt()];
        for (a, b) in w[1].iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let last: Vec<_> = series.iter().map(|s| s[1]).collect();
        assert_eq!(w[1], node_weight(&last));
    }

    proptest! {
        #[test]
        fn weights_ignore_global_phase(phi in 0.0f64..6.3, vals in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2..8)) {
            let s: Vec<Complex64> = vals.iter().map(|&(a, b)| c(a, b)).collect();
            let rot = Complex64::from_polar(1.0, phi);
            let r: Vec<Complex64> = s.iter().map(|z| z * rot).collect();
            for (a, b) in time_weight(&s).iter().zip(time_weight(&r)) {
                prop_assert!((a - b).abs() < 1e-12 && *a >= 0.0);
            }
            for (a, b) in node_weight(&s).iter().zip(node_weight(&r)) {
                prop_assert!((a - b).abs() < 1e-12 && *a >= 0.0);
            }
        }

        #[test]
        fn eig_residuals_are_small(seed in 0u64..1000, n in 1usize..7) {
            let m = random_matrix(n, seed);
            let e = eig(&m).unwrap();
            prop_assert!(residual(&m, &e) < 1e-8 * m.norm().max(1.0));
        }
    }
}
