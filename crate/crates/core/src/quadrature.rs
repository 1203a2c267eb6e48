//! Gauss rules: probabilists' Hermite (standard normal weight) and
//! Legendre on `[0, 1]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Real};

/// Default Gauss–Hermite order per axis.
pub const DEFAULT_ORDER: usize = 20;

/// Nodes and weights of the `n`-point rule for `E[f(Z)]`, `Z ~ N(0, 1)`.
/// Weights sum to one. Built by Golub–Welsch on the Hermite Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature order must be positive");
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        j[(k - 1, k)] = off;
        j[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigen-solver noise around zero.
    for i in 0..n / 2 {
        let k = n - 1 - i;
        let x = 0.5 * (pairs[k].0 - pairs[i].0);
        let w = 0.5 * (pairs[k].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Tensor-product Hermite nodes in `dim` dimensions.
pub fn tensor_hermite<T: Real>(dim: usize, order: usize) -> Vec<(DVector<T>, T)> {
    let (x, w) = gauss_hermite(order);
    let total = order.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut node = DVector::zeros(dim);
            let mut weight = 1.0;
            for k in 0..dim {
                let i = idx % order;
                idx /= order;
                node[k] = lit::<T>(x[i]);
                weight *= w[i];
            }
            (node, lit::<T>(weight))
        })
        .collect()
}

/// Five-point Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre_unit_5() -> [(f64, f64); 5] {
    let a = (245.0f64 - 14.0 * (70.0f64).sqrt()).sqrt() / 21.0;
    let b = (245.0f64 + 14.0 * (70.0f64).sqrt()).sqrt() / 21.0;
    let wa = (322.0 + 13.0 * (70.0f64).sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * (70.0f64).sqrt()) / 900.0;
    let w0 = 128.0 / 225.0;
    let map = |x: f64, w: f64| (0.5 * (x + 1.0), 0.5 * w);
    [
        map(-b, wb),
        map(-a, wa),
        map(0.0, w0),
        map(a, wa),
        map(b, wb),
    ]
}
