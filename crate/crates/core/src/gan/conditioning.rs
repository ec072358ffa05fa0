//! Conditioning grids, token resampling and pixel normalization.

use vqcpc_gan_autodiff::Tensor;

use crate::error::{Error, Result};

/// Builds the `(P + Z + C, 1, L)` grid: pitch one-hot and noise repeated over
/// frames, then one token one-hot per frame.
pub fn assemble_input(z: &[f64], pitch_onehot: &[f64], tokens: &[u8], codebook_size: usize) -> Result<Vec<f64>> {
    let ones = pitch_onehot.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || pitch_onehot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("pitch conditioning is not a one-hot vector"));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= codebook_size) {
        return Err(Error::invalid(format!("token {t} outside codebook of {codebook_size}")));
    }
    if tokens.is_empty() {
        return Err(Error::invalid("empty token sequence"));
    }
    let (p, zd, l) = (pitch_onehot.len(), z.len(), tokens.len());
    let mut grid = vec![0.0; (p + zd + codebook_size) * l];
    for (i, &v) in pitch_onehot.iter().chain(z).enumerate() {
        grid[i * l..(i + 1) * l].iter_mut().for_each(|g| *g = v);
    }
    for (t, &tok) in tokens.iter().enumerate() {
        grid[(p + zd + tok as usize) * l + t] = 1.0;
    }
    Ok(grid)
}

pub fn pitch_onehot(index: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[index] = 1.0;
    v
}

/// Nearest-neighbour resampling: output `i` takes input `floor(i * len / target)`.
pub fn resample_tokens(tokens: &[u8], target_len: usize) -> Vec<u8> {
    if tokens.is_empty() {
        return Vec::new();
    }
    (0..target_len).map(|i| tokens[i * tokens.len() / target_len]).collect()
}

pub const PIXEL_NORM_EPS: f64 = 1e-8;

/// Divides each location's channel vector (axis 1) by its root mean square.
pub fn pixel_norm(x: &Tensor, eps: f64) -> Tensor {
    x / &x.square().mean_axes(&[1], true).add_scalar(eps).sqrt()
}
