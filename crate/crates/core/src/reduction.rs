//! Linear dimensionality reduction of embeddings before DMD and SINDy.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Mean-centered principal components.
    Pca,
    /// Right singular vectors of the uncentered data.
    Svd,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Method::Pca),
            "svd" => Ok(Method::Svd),
            other => Err(Error::Config(format!("unknown reduction method `{other}`"))),
        }
    }
}

/// A fitted `f x D` projection with orthonormal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub method: Method,
    /// `f` rows of length `D`, ordered by decreasing singular value.
    pub components: Vec<Vec<f64>>,
    /// Present for PCA only.
    pub mean: Option<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Relative size below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-12;

impl Projection {
    /// Fits `f` components to the rows of `data`.
    pub fn fit(method: Method, data: &[Vec<f64>], f: usize) -> Result<Self> {
        let m = data.len();
        let d = data.first().map_or(0, Vec::len);
        if d == 0 || f == 0 {
            return Err(Error::Contract("reduction needs nonempty data and f > 0".into()));
        }
        if data.iter().any(|r| r.len() != d) {
            return Err(Error::shape("reduction_fit", "rows of unequal length"));
        }
        if f > d {
            return Err(Error::Contract(format!("f = {f} exceeds the data dimension {d}")));
        }
        if m < f {
            return Err(Error::Contract(format!("{m} samples, fewer than f = {f}")));
        }
        let mean = match method {
            Method::Pca => {
                let mut mu = vec![0.0; d];
                for row in data {
                    for (a, x) in mu.iter_mut().zip(row) {
                        *a += x;
                    }
                }
                mu.iter_mut().for_each(|a| *a /= m as f64);
                Some(mu)
            }
            Method::Svd => None,
        };
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0.0; d];
        for row in data {
            for k in 0..d {
                centered[k] = row[k] - mean.as_ref().map_or(0.0, |mu| mu[k]);
            }
            for i in 0..d {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..d {
                    gram[(i, j)] += ci * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                gram[(i, j)] = gram[(j, i)];
            }
        }
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut components = Vec::with_capacity(f);
        let mut singular_values = Vec::with_capacity(f);
        let mut ratios = Vec::with_capacity(f);
        let mut rank = 0;
        for &k in &order[..f] {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map_or(0.0, |(_, x)| *x);
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let lambda = eig.eigenvalues[k].max(0.0);
            if lambda > RANK_TOL * top && top > 0.0 {
                rank += 1;
                singular_values.push(lambda.sqrt());
                ratios.push(lambda / total);
            } else {
                singular_values.push(0.0);
                ratios.push(0.0);
            }
            components.push(v);
        }
        if rank < f {
            log::warn!("data rank {rank} is below f = {f}; trailing components carry no variance");
        }
        Ok(Projection {
            method,
            components,
            mean,
            singular_values,
            explained_variance_ratio: ratios,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(k, w)| w * (v[k] - self.mean.as_ref().map_or(0.0, |mu| mu[k])))
                    .sum()
            })
            .collect()
    }

    pub fn project_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.project(r)).collect()
    }

    /// Maps reduced coordinates back into the original space.
    pub fn back_project(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone().unwrap_or_else(|| vec![0.0; self.input_dim()]);
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += zi * w;
            }
        }
        out
    }
}
