use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// One resolution of the progressive schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePhase {
    pub scale_index: usize,
    pub iterations: usize,
    pub batch_size: usize,
    /// Leading iterations over which the new scale fades in.
    pub fade_iterations: usize,
}

impl ScalePhase {
    /// Linear ramp from 0 at the first iteration to 1 at `fade_iterations`.
    pub fn alpha(&self, iteration: usize) -> f64 {
        if iteration >= self.fade_iterations {
            1.0
        } else {
            iteration as f64 / self.fade_iterations as f64
        }
    }
}

pub fn progressive_schedule(cfg: &RunConfig) -> Result<Vec<ScalePhase>> {
    if cfg.gan_batch_sizes.len() != cfg.gan_feature_maps.len() {
        return Err(Error::Config(format!(
            "batch ladder has {} entries for {} scales",
            cfg.gan_batch_sizes.len(),
            cfg.gan_feature_maps.len()
        )));
    }
    if cfg.gan_iteration_divisor == 0 || cfg.gan_batch_divisor == 0 {
        return Err(Error::Config("schedule divisors must be positive".into()));
    }
    let iterations = cfg.gan_iterations_per_scale / cfg.gan_iteration_divisor;
    let fade = (iterations as f64 * cfg.gan_fade_fraction).floor() as usize;
    Ok(cfg
        .gan_batch_sizes
        .iter()
        .enumerate()
        .map(|(i, &b)| ScalePhase {
            scale_index: i + 1,
            iterations,
            batch_size: b.div_ceil(cfg.gan_batch_divisor).max(1),
            fade_iterations: fade,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_schedule() {
        let s = progressive_schedule(&RunConfig::full()).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|p| p.iterations == 200_000));
        let batches: Vec<usize> = s.iter().map(|p| p.batch_size).collect();
        assert_eq!(batches, vec![30, 30, 20, 20, 12, 12]);
        assert_eq!(s[0].fade_iterations, 100_000);
        assert_eq!(s.iter().map(|p| p.scale_index).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn desk_preset_scales_down() {
        let s = progressive_schedule(&RunConfig::desk()).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|p| p.iterations == 200 && p.fade_iterations == 100));
        assert!(s.iter().all(|p| p.batch_size >= 1));
    }

    #[test]
    fn alpha_ramps_then_holds() {
        let p = ScalePhase {
            scale_index: 2,
            iterations: 10,
            batch_size: 1,
            fade_iterations: 4,
        };
        let a: Vec<f64> = (0..10).map(|i| p.alpha(i)).collect();
        assert_eq!(&a[..5], &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(a[4..].iter().all(|&x| x == 1.0));
        let no_fade = ScalePhase { fade_iterations: 0, ..p };
        assert_eq!(no_fade.alpha(0), 1.0);
    }

    #[test]
    fn mismatched_ladder_is_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.gan_batch_sizes.pop();
        assert!(progressive_schedule(&cfg).is_err());
    }
}
