//! Inception score, kernel inception distance and Fréchet distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Embeddings plus both classifier heads' probabilities for a set of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// Row-major `n x dim`.
    pub vectors: Vec<f64>,
    pub dim: usize,
    pub pitch_probs: Vec<f64>,
    pub pitch_classes: usize,
    pub family_probs: Vec<f64>,
    pub family_classes: usize,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.vectors.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// `exp(mean_i KL(p_i || mean_j p_j))` over probability rows of width `k`.
pub fn inception_score(probs: &[f64], k: usize) -> Result<f64> {
    if k == 0 || probs.is_empty() || probs.len() % k != 0 {
        return Err(Error::invalid("inception score needs at least one complete probability row"));
    }
    let n = probs.len() / k;
    for row in probs.chunks_exact(k) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
            return Err(Error::invalid("probability rows must be non-negative and sum to 1"));
        }
    }
    let mut marginal = vec![0.0; k];
    for row in probs.chunks_exact(k) {
        for (m, &p) in marginal.iter_mut().zip(row) {
            *m += p;
        }
    }
    marginal.iter_mut().for_each(|m| *m /= n as f64);
    let mean_kl = probs
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &m)| p * (p / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    Ok(mean_kl.exp())
}

fn check_rows(x: &[f64], dim: usize, min_rows: usize, what: &str) -> Result<usize> {
    if dim == 0 || x.len() % dim != 0 {
        return Err(Error::Geometry(format!("{what}: {} values are not rows of {dim}", x.len())));
    }
    let n = x.len() / dim;
    if n < min_rows {
        return Err(Error::invalid(format!("{what}: {n} samples, need at least {min_rows}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite embedding")));
    }
    Ok(n)
}

/// Cubic polynomial kernel `(x.y / d + 1)^3`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased squared MMD between two embedding sets (`dim` columns each).
pub fn kid(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    let m = check_rows(a, dim, 2, "kid set A")?;
    let n = check_rows(b, dim, 2, "kid set B")?;
    fn row(x: &[f64], i: usize, dim: usize) -> &[f64] {
        &x[i * dim..(i + 1) * dim]
    }
    let within = |x: &[f64], count: usize| {
        let mut s = 0.0;
        for i in 0..count {
            for j in i + 1..count {
                s += 2.0 * poly_kernel(row(x, i, dim), row(x, j, dim));
            }
        }
        s / (count * (count - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += poly_kernel(row(a, i, dim), row(b, j, dim));
        }
    }
    Ok(within(a, m) + within(b, n) - 2.0 * cross / (m * n) as f64)
}

/// Mean and unbiased covariance; adds `1e-6 I` when there are no more
/// samples than dimensions.
pub fn gaussian_fit(x: &[f64], dim: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = check_rows(x, dim, 2, "gaussian fit")?;
    let data = DMatrix::from_row_slice(n, dim, x);
    let mean = data.row_mean().transpose();
    let centred = DMatrix::from_fn(n, dim, |i, j| data[(i, j)] - mean[j]);
    let mut cov = centred.transpose() * &centred / (n - 1) as f64;
    if n <= dim {
        cov += DMatrix::identity(dim, dim) * 1e-6;
    }
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance between `N(mu_a, cov_a)` and `N(mu_b, cov_b)`.
///
/// `Tr((A B)^{1/2})` is evaluated as the trace of the square root of the
/// symmetric product `A^{1/2} B A^{1/2}`, which has the same eigenvalues.
pub fn frechet_distance(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let sa = psd_sqrt(cov_a);
    let inner = &sa * cov_b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = mu_a - mu_b;
    (diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt).max(0.0)
}

pub fn fad(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    let (ma, ca) = gaussian_fit(a, dim)?;
    let (mb, cb) = gaussian_fit(b, dim)?;
    Ok(frechet_distance(&ma, &ca, &mb, &cb))
}
