use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frozen principal-component projection onto the top `U` directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBlock {
    pub mean: Vec<f64>,
    /// `U` orthonormal rows of length `D_in`.
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues (divisor n − 1), nonincreasing.
    pub eigenvalues: Vec<f64>,
}

impl PcaBlock {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("PCA input has length {}, expected {}", x.len(), self.input_dim())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }
}

/// Fits PCA on the rows of `data`.
///
/// Uses the covariance eigenproblem when `D_in <= n` and the Gram-matrix
/// eigenproblem otherwise, followed by a re-orthonormalisation pass.
pub fn fit_pca(data: &[Vec<f64>], dim: usize) -> Result<PcaBlock> {
    let route = if data.first().is_some_and(|r| r.len() <= data.len()) { Route::Covariance } else { Route::Gram };
    fit_pca_via(data, dim, route)
}

#[derive(Debug, Clone, Copy)]
enum Route {
    Covariance,
    Gram,
}

fn fit_pca_via(data: &[Vec<f64>], dim: usize, route: Route) -> Result<PcaBlock> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 rows, got {n}")));
    }
    let d = data[0].len();
    if let Some(i) = data.iter().position(|r| r.len() != d) {
        return Err(Error::Shape(format!("row {i} has {} features, expected {d}", data[i].len())));
    }
    if dim == 0 || dim > n.min(d) {
        return Err(Error::Argument(format!("PCA dimension {dim} must lie in 1..={}", n.min(d))));
    }

    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let (mut components, eigenvalues) = if let Route::Covariance = route {
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        let comps = order[..dim]
            .iter()
            .map(|&k| eig.eigenvectors.column(k).iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>();
        let vals = order[..dim].iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        (comps, vals)
    } else {
        let gram = &centered * centered.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        let comps = order[..dim]
            .iter()
            .map(|&k| (centered.transpose() * eig.eigenvectors.column(k)).iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>();
        let vals = order[..dim].iter().map(|&k| (eig.eigenvalues[k] / denom).max(0.0)).collect();
        (comps, vals)
    };

    orthonormalize(&mut components);
    for c in &mut components {
        let lead = c
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(PcaBlock { mean, components, eigenvalues })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Modified Gram–Schmidt, run twice. Directions that collapse (null
/// components of rank-deficient data) are completed from the standard basis.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    let d = rows.first().map_or(0, Vec::len);
    let mut next_basis = 0;
    for k in 0..rows.len() {
        let (done, rest) = rows.split_at_mut(k);
        let row = &mut rest[0];
        project_out(row, done);
        let mut norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        while norm < 1e-9 && next_basis < d {
            *row = (0..d).map(|i| if i == next_basis { 1.0 } else { 0.0 }).collect();
            next_basis += 1;
            project_out(row, done);
            norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

fn project_out(row: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let dot: f64 = q.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            row.iter_mut().zip(q).for_each(|(v, q)| *v -= dot * q);
        }
    }
}
