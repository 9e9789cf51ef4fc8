//! Independent reference computations shared by the test targets.

use cisbench::diagnostics::EmbeddingSet;
use cisbench::registry::Group;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scales: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|j| scales.get(j).copied().unwrap_or(1.0) * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

pub fn set(points: &[Vec<f64>], group: Group) -> EmbeddingSet {
    EmbeddingSet {
        entries: points
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("e{i:03}"), p.clone()))
            .collect(),
        group,
        source: "test".into(),
    }
}

pub fn centered(points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let dim = points[0].len();
    let m = DMatrix::from_fn(n, dim, |i, j| points[i][j]);
    let mean = m.row_mean();
    DMatrix::from_fn(n, dim, |i, j| m[(i, j)] - mean[j])
}

/// Top-`d` principal directions through the small Gram matrix `X Xᵀ`,
/// orthonormalized by hand.
pub fn principal_basis(points: &[Vec<f64>], d: usize) -> Vec<DVector<f64>> {
    let x = centered(points);
    let gram = &x * x.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for &i in order.iter().take(d) {
        let mut v: DVector<f64> = x.transpose() * eig.eigenvectors.column(i);
        // Gram-Schmidt, twice for stability.
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v -= q * proj;
            }
        }
        basis.push(v.normalize());
    }
    basis
}

/// Mean squared cosine of the principal angles.
pub fn overlap(a: &[Vec<f64>], b: &[Vec<f64>], d: usize) -> f64 {
    let qa = principal_basis(a, d);
    let qb = principal_basis(b, d);
    let m = DMatrix::from_fn(d, d, |i, j| qa[i].dot(&qb[j]));
    let s = m.singular_values();
    s.iter().map(|c| c * c).sum::<f64>() / d as f64
}

/// Textbook single-pass Pearson form.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let nf = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt())
}

/// Inputs with a planted population correlation `r`.
pub fn planted_pairs(rng: &mut ChaCha8Rng, r: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            (x, r * x + (1.0 - r * r).sqrt() * e)
        })
        .collect()
}
