//! Nearest-centroid vector quantization with straight-through gradients.

use vqcpc_gan_autodiff::{no_grad, Tensor};

use crate::error::{Error, Result};

/// Plain-value codebook: `size` centroids of dimension `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub size: usize,
    pub dim: usize,
    pub centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::invalid("codebook must hold at least one centroid of positive dimension"));
        }
        Ok(Codebook {
            size: centroids.len() / dim,
            dim,
            centroids,
        })
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub token: usize,
    pub quantized: Vec<f64>,
    /// `||sg(e) - c||^2`, the codebook term.
    pub vq_loss: f64,
    /// `||e - sg(c)||^2`, the commitment term.
    pub commit_loss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
pub fn nearest(e: &[f64], centroids: &[f64], dim: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(e, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn quantize(e: &[f64], cb: &Codebook) -> Result<Quantized> {
    if cb.size == 0 {
        return Err(Error::invalid("empty codebook"));
    }
    if e.len() != cb.dim {
        return Err(Error::Geometry(format!("embedding of dim {} vs codebook dim {}", e.len(), cb.dim)));
    }
    let token = nearest(e, &cb.centroids, cb.dim);
    let c = cb.centroid(token);
    let d = sq_dist(e, c);
    Ok(Quantized {
        token,
        quantized: c.to_vec(),
        vq_loss: d,
        commit_loss: d,
    })
}

/// Stop-gradient operands captured at one parameter point.
///
/// Passing them back into [`quantize_batch`] makes the loss a smooth function
/// of the parameters around that point, which is what finite differences need
/// to agree with the straight-through gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenQuantization {
    pub tokens: Vec<usize>,
    /// `q - e` per row.
    pub offset: Vec<f64>,
    /// `e` per row.
    pub embeddings: Vec<f64>,
    /// Selected centroid per row.
    pub centroids: Vec<f64>,
}

pub struct BatchQuantization {
    pub tokens: Vec<usize>,
    /// `e + sg(q - e)`: centroid values forward, identity gradient backward.
    pub straight_through: Tensor,
    /// Mean over rows of `||sg(e) - c||^2`.
    pub vq_loss: Tensor,
    /// Mean over rows of `||e - sg(c)||^2`.
    pub commit_loss: Tensor,
    pub frozen: FrozenQuantization,
}

/// Quantizes each row of `e: (N, d)` against `codebook: (C, d)`.
pub fn quantize_batch(e: &Tensor, codebook: &Tensor, frozen: Option<&FrozenQuantization>) -> BatchQuantization {
    let (n, d) = (e.dim(0), e.dim(1));
    assert_eq!(codebook.dim(1), d, "codebook dimension mismatch");
    let tokens = match frozen {
        Some(f) => f.tokens.clone(),
        None => e.data().chunks_exact(d).map(|row| nearest(row, codebook.data(), d)).collect(),
    };
    let q = codebook.index_select_rows(&tokens);
    let frozen = match frozen {
        Some(f) => f.clone(),
        None => FrozenQuantization {
            tokens: tokens.clone(),
            offset: q.data().iter().zip(e.data()).map(|(a, b)| a - b).collect(),
            embeddings: e.to_vec(),
            centroids: q.to_vec(),
        },
    };
    let (offset, sg_e, sg_c) = no_grad(|| {
        (
            Tensor::from_vec(frozen.offset.clone(), &[n, d]),
            Tensor::from_vec(frozen.embeddings.clone(), &[n, d]),
            Tensor::from_vec(frozen.centroids.clone(), &[n, d]),
        )
    });
    let inv_n = 1.0 / n.max(1) as f64;
    let straight_through = e + &offset;
    let vq_loss = (&sg_e - &q).square().sum_all().scale(inv_n);
    let commit_loss = (e - &sg_c).square().sum_all().scale(inv_n);
    BatchQuantization {
        tokens,
        straight_through,
        vq_loss,
        commit_loss,
        frozen,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use vqcpc_gan_autodiff::grad;

    fn grid_codebook() -> Codebook {
        // 3x3 lattice in the plane plus a duplicate of centroid 4 at index 9.
        let mut c = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                c.extend_from_slice(&[i as f64, j as f64]);
            }
        }
        c.extend_from_slice(&[1.0, 1.0]);
        Codebook::new(2, c).unwrap()
    }

    #[test]
    fn exact_centroid_gives_zero_losses() {
        let cb = grid_codebook();
        for j in 0..9 {
            let q = quantize(cb.centroid(j), &cb).unwrap();
            assert_eq!(q.token, j);
            assert_eq!((q.vq_loss, q.commit_loss), (0.0, 0.0));
        }
    }

    #[test]
    fn nearest_and_ties() {
        let cb = Codebook::new(2, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        assert_eq!(quantize(&[1.0, 1.0], &cb).unwrap().token, 0);
        assert_eq!(quantize(&[5.0, 5.0], &cb).unwrap().token, 0);
        assert_eq!(quantize(&[5.0, 5.000001], &cb).unwrap().token, 1);
        // Duplicate centroid: the lower index always wins.
        assert_eq!(quantize(&[1.0, 1.0], &grid_codebook()).unwrap().token, 4);
        // Exhaustive midpoint ties on the lattice.
        let cb = grid_codebook();
        for a in 0..2 {
            for b in 0..3 {
                let e = [a as f64 + 0.5, b as f64];
                assert_eq!(quantize(&e, &cb).unwrap().token, a * 3 + b);
            }
        }
        assert!(quantize(&[1.0], &cb).is_err());
        assert!(Codebook::new(2, vec![]).is_err());
    }

    #[test]
    fn batch_matches_scalar_and_passes_gradient_straight_through() {
        let cb = grid_codebook();
        let e0 = vec![0.2, 0.9, 1.6, 1.4, 2.2, -0.3];
        let e = Tensor::param(e0.clone(), &[3, 2]);
        let c = Tensor::param(cb.centroids.clone(), &[10, 2]);
        let out = quantize_batch(&e, &c, None);
        let mut vq = 0.0;
        for (r, row) in e0.chunks(2).enumerate() {
            let q = quantize(row, &cb).unwrap();
            assert_eq!(out.tokens[r], q.token);
            assert_eq!(&out.straight_through.data()[r * 2..r * 2 + 2], &q.quantized[..]);
            vq += q.vq_loss / 3.0;
        }
        assert!((out.vq_loss.item() - vq).abs() < 1e-12);
        assert!((out.commit_loss.item() - vq).abs() < 1e-12);
        let g = grad(&[out.straight_through.sum_all()], &[e.clone()], false).remove(0);
        assert!(g.data().iter().all(|&v| v == 1.0));
        let g = grad(&[out.vq_loss], &[e, c], false);
        assert!(g[0].data().iter().all(|&v| v == 0.0), "vq loss must not reach the encoder");
        assert!(g[1].data().iter().any(|&v| v != 0.0));
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(e in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let cb = grid_codebook();
            let q = quantize(&e, &cb).unwrap();
            let qq = quantize(&q.quantized, &cb).unwrap();
            prop_assert_eq!(qq.token, q.token);
            prop_assert_eq!(qq.vq_loss, 0.0);
            prop_assert_eq!(qq.commit_loss, 0.0);
            prop_assert!(q.token < cb.size);
        }
    }
}
