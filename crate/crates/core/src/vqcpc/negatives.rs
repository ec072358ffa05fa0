//! Negative sampling for the contrastive objective.

use rand::Rng;

use super::model::{NegativeSharing, NegativeSource};
use crate::error::{Error, Result};

/// `n_neg` indices uniform over `[0, seq_len)` minus `positive`, with
/// replacement.
pub fn sample_negatives_intra(seq_len: usize, positive: usize, n_neg: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if seq_len < 2 {
        return Err(Error::invalid("a sequence of length 1 has no valid negatives"));
    }
    if positive >= seq_len {
        return Err(Error::invalid(format!("positive index {positive} outside sequence of {seq_len}")));
    }
    Ok((0..n_neg)
        .map(|_| {
            let j = rng.random_range(0..seq_len - 1);
            if j >= positive {
                j + 1
            } else {
                j
            }
        })
        .collect())
}

/// Uniform draw from `[0, n)` avoiding every index in the sorted `excluded`.
fn draw_excluding(n: usize, excluded: &[usize], rng: &mut impl Rng) -> usize {
    let mut j = rng.random_range(0..n - excluded.len());
    for &x in excluded {
        if j >= x {
            j += 1;
        }
    }
    j
}

/// Negative row indices for one batch, into the flattened `(B*L)` rows.
///
/// `rows[k]` lists `n_neg` indices for every `(b, t)` with `t + k + 1 < L`,
/// in batch-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet {
    pub n_neg: usize,
    pub rows: Vec<Vec<usize>>,
}

pub fn draw_negatives(
    rng: &mut impl Rng,
    batch: usize,
    len: usize,
    steps: usize,
    n_neg: usize,
    sharing: NegativeSharing,
    source: NegativeSource,
) -> Result<NegativeSet> {
    if len <= steps + 1 {
        return Err(Error::invalid(format!(
            "sequence of {len} frames is too short for {steps}-step prediction"
        )));
    }
    let mut rows = vec![Vec::new(); steps];
    let mut shared = Vec::new();
    for b in 0..batch {
        for t in 0..len {
            if sharing == NegativeSharing::Shared && t + 1 < len {
                // One set per (b, t) avoiding all of its positives.
                let hi = (t + steps).min(len - 1);
                let excluded: Vec<usize> = match source {
                    NegativeSource::Intra => (t + 1..=hi).collect(),
                    NegativeSource::Batch => (t + 1..=hi).map(|p| b * len + p).collect(),
                };
                let pool = match source {
                    NegativeSource::Intra => len,
                    NegativeSource::Batch => batch * len,
                };
                shared = (0..n_neg)
                    .map(|_| {
                        let j = draw_excluding(pool, &excluded, rng);
                        if source == NegativeSource::Intra {
                            b * len + j
                        } else {
                            j
                        }
                    })
                    .collect();
            }
            for (k, out) in rows.iter_mut().enumerate() {
                let pos = t + k + 1;
                if pos >= len {
                    continue;
                }
                match (sharing, source) {
                    (NegativeSharing::Shared, _) => out.extend_from_slice(&shared),
                    (NegativeSharing::PerStep, NegativeSource::Intra) => {
                        out.extend(sample_negatives_intra(len, pos, n_neg, rng)?.into_iter().map(|j| b * len + j))
                    }
                    (NegativeSharing::PerStep, NegativeSource::Batch) => {
                        let p = b * len + pos;
                        out.extend((0..n_neg).map(|_| draw_excluding(batch * len, &[p], rng)))
                    }
                }
            }
        }
    }
    Ok(NegativeSet { n_neg, rows })
}
