//! Adversarial, auxiliary-classifier and drift terms for both players.

use serde::{Deserialize, Serialize};
use vqcpc_gan_autodiff::{cross_entropy, Tensor};

use super::critic::{GlobalOutput, LocalOutput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gp_lambda: f64,
    pub ce_weight: f64,
    pub drift: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gp_lambda: 10.0,
            ce_weight: 1.0,
            drift: 0.001,
        }
    }
}

/// Both critics evaluated on one batch.
pub struct CriticEval {
    pub local: LocalOutput,
    pub global: GlobalOutput,
}

/// Classifier targets: one pitch class per sample, one token per frame
/// (batch-major).
#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub pitch: &'a [usize],
    pub tokens: &'a [usize],
}

impl Labels<'_> {
    fn check(&self, eval: &CriticEval) -> Result<()> {
        let (b, bl) = (eval.global.pitch_logits.dim(0), eval.local.token_logits.dim(0));
        if self.pitch.len() != b || self.tokens.len() != bl {
            return Err(Error::invalid(format!(
                "labels cover {} pitches and {} tokens, batch needs {b} and {bl}",
                self.pitch.len(),
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GanLossReport {
    /// `E[D_l(real)] - E[D_l(fake)]`.
    pub w_local: f64,
    pub w_global: f64,
    pub gp_local: f64,
    pub gp_global: f64,
    pub ce_token: f64,
    pub ce_pitch: f64,
    pub g_total: f64,
    pub d_total: f64,
}

impl GanLossReport {
    pub fn all_finite(&self) -> bool {
        [
            self.w_local,
            self.w_global,
            self.gp_local,
            self.gp_global,
            self.ce_token,
            self.ce_pitch,
            self.g_total,
            self.d_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Critic objective. Fills every report field except `g_total`.
pub fn discriminator_loss(
    real: &CriticEval,
    fake: &CriticEval,
    real_labels: Labels,
    fake_labels: Labels,
    gp_local: &Tensor,
    gp_global: &Tensor,
    w: &LossWeights,
) -> Result<(Tensor, GanLossReport)> {
    real_labels.check(real)?;
    fake_labels.check(fake)?;
    let real_l = real.local.scores.mean_all();
    let fake_l = fake.local.scores.mean_all();
    let real_g = real.global.scores.mean_all();
    let fake_g = fake.global.scores.mean_all();
    let adversarial = &(&fake_l - &real_l) + &(&fake_g - &real_g);

    let union = |a: &[usize], b: &[usize]| a.iter().chain(b).copied().collect::<Vec<_>>();
    let ce_pitch = cross_entropy(
        &Tensor::concat(&[real.global.pitch_logits.clone(), fake.global.pitch_logits.clone()], 0),
        &union(real_labels.pitch, fake_labels.pitch),
    );
    let ce_token = cross_entropy(
        &Tensor::concat(&[real.local.token_logits.clone(), fake.local.token_logits.clone()], 0),
        &union(real_labels.tokens, fake_labels.tokens),
    );
    let drift = &real.local.scores.square().mean_all() + &real.global.scores.square().mean_all();

    let total = &(&(&adversarial + &(gp_local + gp_global).scale(w.gp_lambda)) + &(&ce_pitch + &ce_token).scale(w.ce_weight))
        + &drift.scale(w.drift);
    let report = GanLossReport {
        w_local: real_l.item() - fake_l.item(),
        w_global: real_g.item() - fake_g.item(),
        gp_local: gp_local.item(),
        gp_global: gp_global.item(),
        ce_token: ce_token.item(),
        ce_pitch: ce_pitch.item(),
        g_total: 0.0,
        d_total: total.item(),
    };
    Ok((total, report))
}

/// Generator objective: fool both critics and have the fakes classified as
/// their conditioning labels.
pub fn generator_loss(fake: &CriticEval, labels: Labels, w: &LossWeights) -> Result<Tensor> {
    labels.check(fake)?;
    let adversarial = -(&fake.local.scores.mean_all() + &fake.global.scores.mean_all());
    let ce = &cross_entropy(&fake.global.pitch_logits, labels.pitch) + &cross_entropy(&fake.local.token_logits, labels.tokens);
    Ok(&adversarial + &ce.scale(w.ce_weight))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(scores_l: Vec<f64>, logits_t: Vec<f64>, scores_g: Vec<f64>, logits_p: Vec<f64>, b: usize, l: usize, c: usize, p: usize) -> CriticEval {
        CriticEval {
            local: LocalOutput {
                scores: Tensor::from_vec(scores_l, &[b, l]),
                token_logits: Tensor::from_vec(logits_t, &[b * l, c]),
            },
            global: GlobalOutput {
                scores: Tensor::from_vec(scores_g, &[b]),
                pitch_logits: Tensor::from_vec(logits_p, &[b, p]),
            },
        }
    }

    fn confident(targets: &[usize], classes: usize) -> Vec<f64> {
        targets
            .iter()
            .flat_map(|&t| (0..classes).map(move |k| if k == t { 1000.0 } else { 0.0 }))
            .collect()
    }

    #[test]
    fn equal_scores_and_perfect_classifiers_give_zero() {
        let (pitch, tokens) = ([1usize, 0], [2usize, 0, 1, 1]);
        let labels = Labels { pitch: &pitch, tokens: &tokens };
        let e = || eval(vec![0.0; 4], confident(&tokens, 3), vec![0.0; 2], confident(&pitch, 2), 2, 2, 3, 2);
        let zero = Tensor::scalar(0.0);
        let (d, r) = discriminator_loss(&e(), &e(), labels, labels, &zero, &zero, &LossWeights::default()).unwrap();
        assert!(d.item().abs() < 1e-12);
        assert_eq!((r.w_local, r.w_global), (0.0, 0.0));
        assert!(r.ce_pitch < 1e-12 && r.ce_token < 1e-12);
        let g = generator_loss(&e(), labels, &LossWeights::default()).unwrap();
        assert!(g.item().abs() < 1e-12);
    }

    #[test]
    fn uniform_pitch_logits_give_log_classes() {
        let pitch = [3usize, 26];
        let tokens = [0usize; 2];
        let e = eval(vec![0.0; 2], vec![0.0; 32], vec![0.0; 2], vec![0.0; 54], 2, 1, 16, 27);
        let labels = Labels { pitch: &pitch, tokens: &tokens };
        let zero = Tensor::scalar(0.0);
        let (_, r) = discriminator_loss(&e, &e, labels, labels, &zero, &zero, &LossWeights::default()).unwrap();
        assert!((r.ce_pitch - 27f64.ln()).abs() < 1e-12);
        assert!((r.ce_pitch - 3.296).abs() < 1e-3);
        assert!((r.ce_token - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_built_batch_matches_scalar_oracle() {
        // B = 2, L = 2, C = 2, P = 2.
        let real = eval(vec![1.0, 2.0, -1.0, 0.5], vec![0.3, -0.2, 1.0, 0.0, 0.0, 0.5, -1.0, 2.0], vec![0.7, -0.4], vec![0.1, 0.9, -0.5, 0.2], 2, 2, 2, 2);
        let fake = eval(vec![-0.5, 0.0, 0.25, -2.0], vec![0.0, 0.0, 2.0, -1.0, 0.4, 0.4, 1.5, 0.5], vec![-1.2, 0.3], vec![0.0, 1.0, 2.0, 0.0], 2, 2, 2, 2);
        let (rp, rt) = ([1usize, 0], [0usize, 1, 1, 0]);
        let (fp, ft) = ([0usize, 0], [1usize, 1, 0, 1]);
        let w = LossWeights { gp_lambda: 10.0, ce_weight: 0.5, drift: 0.001 };
        let (gl, gg) = (Tensor::scalar(0.04), Tensor::scalar(0.09));
        let (d, r) = discriminator_loss(&real, &fake, Labels { pitch: &rp, tokens: &rt }, Labels { pitch: &fp, tokens: &ft }, &gl, &gg, &w).unwrap();

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ce_row = |row: &[f64], t: usize| {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - row[t]
        };
        let ce = |logits: &[f64], k: usize, targets: &[usize]| mean(&targets.iter().enumerate().map(|(i, &t)| ce_row(&logits[i * k..(i + 1) * k], t)).collect::<Vec<_>>());
        let rl = [1.0, 2.0, -1.0, 0.5];
        let fl = [-0.5, 0.0, 0.25, -2.0];
        let (rg, fg) = ([0.7, -0.4], [-1.2, 0.3]);
        let ce_p = (ce(&[0.1, 0.9, -0.5, 0.2], 2, &rp) + ce(&[0.0, 1.0, 2.0, 0.0], 2, &fp)) / 2.0;
        let ce_t = (ce(&[0.3, -0.2, 1.0, 0.0, 0.0, 0.5, -1.0, 2.0], 2, &rt) + ce(&[0.0, 0.0, 2.0, -1.0, 0.4, 0.4, 1.5, 0.5], 2, &ft)) / 2.0;
        let drift = mean(&rl.map(|x| x * x)) + mean(&rg.map(|x| x * x));
        let expected = (mean(&fl) - mean(&rl)) + (mean(&fg) - mean(&rg)) + 10.0 * 0.13 + 0.5 * (ce_p + ce_t) + 0.001 * drift;
        assert!((d.item() - expected).abs() < 1e-12);
        assert!((r.w_local - (mean(&rl) - mean(&fl))).abs() < 1e-12);
        assert!((r.ce_pitch - ce_p).abs() < 1e-12 && (r.ce_token - ce_t).abs() < 1e-12);

        let g = generator_loss(&fake, Labels { pitch: &fp, tokens: &ft }, &w).unwrap();
        let g_expected = -(mean(&fl) + mean(&fg)) + 0.5 * (ce(&[0.0, 1.0, 2.0, 0.0], 2, &fp) + ce(&[0.0, 0.0, 2.0, -1.0, 0.4, 0.4, 1.5, 0.5], 2, &ft));
        assert!((g.item() - g_expected).abs() < 1e-12);
    }

    #[test]
    fn missing_labels_are_rejected() {
        let e = eval(vec![0.0; 2], vec![0.0; 4], vec![0.0; 2], vec![0.0; 4], 2, 1, 2, 2);
        let labels = Labels { pitch: &[0], tokens: &[0, 1] };
        assert!(generator_loss(&e, labels, &LossWeights::default()).is_err());
    }
}
