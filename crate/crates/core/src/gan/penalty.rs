use rand::Rng;
use vqcpc_gan_autodiff::{grad, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// The critic returns `(B)` scores; norms are taken over whole samples.
    Global,
    /// The critic returns `(B, L)` scores; the gradient of the summed frame
    /// scores is split into frames and each frame's `(C, F)` slice is normed.
    PerFrame,
}

/// Gradient penalty on interpolates `u * real + (1 - u) * fake`, one `u`
/// drawn per sample. The result stays differentiable w.r.t. the critic.
pub fn gradient_penalty(
    critic: impl Fn(&Tensor) -> Result<Tensor>,
    real: &Tensor,
    fake: &Tensor,
    mode: PenaltyMode,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let u: Vec<f64> = (0..real.dim(0)).map(|_| rng.random::<f64>()).collect();
    gradient_penalty_at(critic, real, fake, &u, mode)
}

pub fn gradient_penalty_at(
    critic: impl Fn(&Tensor) -> Result<Tensor>,
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
    mode: PenaltyMode,
) -> Result<Tensor> {
    if real.shape() != fake.shape() || real.rank() != 4 {
        return Err(Error::Geometry(format!(
            "gradient penalty needs matching 4-D batches, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let b = real.dim(0);
    if u.len() != b {
        return Err(Error::invalid("one interpolation weight per sample"));
    }
    let w = Tensor::from_vec(u.to_vec(), &[b, 1, 1, 1]);
    let mixed = &(&real.detach() * &w) + &(&fake.detach() * &w.scale(-1.0).add_scalar(1.0));
    let x_hat = mixed.detach_requiring_grad();
    let scores = critic(&x_hat)?;
    let g = grad(&[scores], std::slice::from_ref(&x_hat), true).remove(0);
    let axes: &[usize] = match mode {
        PenaltyMode::Global => &[1, 2, 3],
        PenaltyMode::PerFrame => &[1, 2],
    };
    let norm = g.square().sum_axes(axes, false).add_scalar(1e-12).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use vqcpc_gan_autodiff::testing::finite_difference;

    fn batch(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape)
    }

    #[test]
    fn unit_gradient_critics_have_zero_penalty() {
        let (real, fake) = (batch(1, &[3, 2, 4, 5]), batch(2, &[3, 2, 4, 5]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let global = gradient_penalty(|x| Ok(x.sum_axes(&[1, 2, 3], false).scale(1.0 / 40f64.sqrt())), &real, &fake, PenaltyMode::Global, &mut rng).unwrap();
        assert!(global.item().abs() < 1e-5);
        let local = gradient_penalty(|x| Ok(x.sum_axes(&[1, 2], false).scale(1.0 / 8f64.sqrt())), &real, &fake, PenaltyMode::PerFrame, &mut rng).unwrap();
        assert!(local.item().abs() < 1e-5);
    }

    #[test]
    fn constant_critic_has_unit_penalty() {
        let (real, fake) = (batch(1, &[2, 2, 4, 3]), batch(2, &[2, 2, 4, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [PenaltyMode::Global, PenaltyMode::PerFrame] {
            let gp = gradient_penalty(|x| Ok(Tensor::full(&[x.dim(0), 3], 0.7)), &real, &fake, mode, &mut rng).unwrap();
            assert!((gp.item() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn penalty_matches_finite_difference_norms() {
        let shape = [2, 2, 3, 4];
        let (real, fake) = (batch(3, &shape), batch(4, &shape));
        let weights = batch(5, &shape);
        // Non-linear critic: per-frame score = sum(tanh(w * x)) over (C, F).
        let critic = |x: &Tensor| (x * &weights).tanh().sum_axes(&[1, 2], false);
        let u = [0.3, 0.8];
        let gp = gradient_penalty_at(|x| Ok(critic(x)), &real, &fake, &u, PenaltyMode::PerFrame).unwrap().item();

        let n = 24;
        let mut expected = 0.0;
        for b in 0..2 {
            let x_hat: Vec<f64> = (0..n).map(|i| u[b] * real.data()[b * n + i] + (1.0 - u[b]) * fake.data()[b * n + i]).collect();
            let total = |x: &[f64]| {
                let t = Tensor::from_vec(x.to_vec(), &[1, 2, 3, 4]);
                let w = Tensor::from_vec(weights.data()[b * n..(b + 1) * n].to_vec(), &[1, 2, 3, 4]);
                (&t * &w).tanh().sum_all().item()
            };
            let g = finite_difference(total, &x_hat, 1e-6);
            for t in 0..4 {
                let sq: f64 = (0..6).map(|cf| g[cf * 4 + t].powi(2)).sum();
                expected += (sq.sqrt() - 1.0).powi(2) / 8.0;
            }
        }
        assert!((gp - expected).abs() / expected.abs().max(1e-8) < 1e-3, "{gp} vs {expected}");
    }
}
