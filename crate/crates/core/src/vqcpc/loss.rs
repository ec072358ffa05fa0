//! InfoNCE and the combined per-batch training objective.

use vqcpc_gan_autodiff::Tensor;

use super::model::VqcpcModel;
use super::negatives::NegativeSet;
use super::quantize::{quantize_batch, FrozenQuantization};
use crate::error::{Error, Result};

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Single-position InfoNCE with log-bilinear scores `a^T W_k h`.
///
/// `heads[k]` is `W_k` row-major `(d_z, d_h)`; `negatives[k]` are the
/// candidates competing with `positives[k]`.
pub fn infonce_loss(h: &[f64], positives: &[Vec<f64>], negatives: &[Vec<Vec<f64>>], heads: &[Vec<f64>]) -> Result<f64> {
    if positives.len() != heads.len() || negatives.len() != heads.len() {
        return Err(Error::invalid("one positive, one negative set and one head per step"));
    }
    let dh = h.len();
    let mut loss = 0.0;
    for k in 0..heads.len() {
        let dz = positives[k].len();
        if heads[k].len() != dz * dh {
            return Err(Error::Geometry(format!("head {k} is not {dz}x{dh}")));
        }
        // W_k h, then dot with each candidate.
        let wh: Vec<f64> = heads[k].chunks_exact(dh).map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum()).collect();
        let score = |a: &[f64]| a.iter().zip(&wh).map(|(x, y)| x * y).sum::<f64>();
        let mut logits = vec![score(&positives[k])];
        logits.extend(negatives[k].iter().map(|n| score(n)));
        loss += log_sum_exp(&logits) - logits[0];
    }
    Ok(loss)
}

/// Mean over rows of `-log softmax(logits)[0]` where row `m` scores
/// `pred[m]` against `pos[m]` and its `n_neg` negatives.
pub fn infonce_batch(pred: &Tensor, pos: &Tensor, neg: &Tensor, n_neg: usize) -> Tensor {
    let (m, d) = (pred.dim(0), pred.dim(1));
    let cands = Tensor::concat(&[pos.reshape(&[m, 1, d]), neg.reshape(&[m, n_neg, d])], 1);
    let logits = (&cands * &pred.reshape(&[m, 1, d])).sum_axes(&[2], false);
    -logits.log_softmax(1).narrow(1, 0, 1).mean_all()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub infonce: f64,
    pub vq: f64,
    pub commit: f64,
}

pub struct StepOutput {
    pub total: Tensor,
    pub parts: LossParts,
    pub tokens: Vec<usize>,
    pub frozen: FrozenQuantization,
}

/// `infonce + vq + beta * commit` for a batch of `batch` sequences of `len`
/// frames. `features` is `(batch * len, bins)` in batch-major order.
///
/// Passing `frozen` reuses the stop-gradient operands of an earlier call.
pub fn vqcpc_step_loss(
    model: &VqcpcModel,
    features: &Tensor,
    batch: usize,
    len: usize,
    negatives: &NegativeSet,
    frozen: Option<&FrozenQuantization>,
) -> Result<StepOutput> {
    let cfg = &model.config;
    if len <= cfg.prediction_steps + 1 {
        return Err(Error::invalid(format!(
            "sequence of {len} frames is too short for {}-step prediction",
            cfg.prediction_steps
        )));
    }
    if features.rank() != 2 || features.dim(0) != batch * len {
        return Err(Error::Geometry(format!(
            "features {:?} do not hold {batch} x {len} frames",
            features.shape()
        )));
    }
    if negatives.rows.len() != cfg.prediction_steps || negatives.n_neg != cfg.negatives {
        return Err(Error::invalid("negative set does not match the model configuration"));
    }
    let e = model.encode_frames(features)?;
    let q = quantize_batch(&e, &model.codebook_tensor(), frozen);
    let targets = &q.straight_through;
    let context = model.context(targets, batch, len);
    let mut infonce: Option<Tensor> = None;
    for (k, head) in model.heads.iter().enumerate() {
        let valid = len - k - 1;
        let anchors: Vec<usize> = (0..batch).flat_map(|b| (0..valid).map(move |t| b * len + t)).collect();
        let positives: Vec<usize> = anchors.iter().map(|&r| r + k + 1).collect();
        let pred = context.index_select_rows(&anchors).matmul_t(&head.tensor(), false, true);
        let pos = targets.index_select_rows(&positives);
        let neg = targets.index_select_rows(&negatives.rows[k]);
        let term = infonce_batch(&pred, &pos, &neg, cfg.negatives);
        infonce = Some(match infonce {
            Some(acc) => &acc + &term,
            None => term,
        });
    }
    let infonce = infonce.expect("at least one prediction step");
    let total = &(&infonce + &q.vq_loss) + &q.commit_loss.scale(cfg.commitment_beta);
    let parts = LossParts {
        total: total.item(),
        infonce: infonce.item(),
        vq: q.vq_loss.item(),
        commit: q.commit_loss.item(),
    };
    Ok(StepOutput {
        total,
        parts,
        tokens: q.tokens,
        frozen: q.frozen,
    })
}
