//! Gauss-Hermite quadrature for expectations against `N(0, 1)`.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of the `n`-point rule for the standard normal density
/// (Golub-Welsch on the probabilists' Hermite recurrence).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E g(Z)`, `Z ~ N(0, 1)`, with an `n`-point rule.
pub fn normal_expectation(g: impl Fn(f64) -> f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_hermite(n);
    nodes.iter().zip(&weights).map(|(x, w)| w * g(*x)).sum()
}
