//! Deterministic quadrature reference for the alignment score.
//!
//! The expected loss `E_{t, ε}[loss]` is integrated with a midpoint rule over
//! `t` and, for each grid timestamp, a block of [`ORACLE_EPS_POINTS`] points
//! of a Halton sequence (randomly shifted once, from [`ORACLE_SEED`]) mapped
//! through the inverse normal CDF. Successive timestamps take successive
//! blocks, so every grid cell sees different noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diffusion::{
    forward_noise, loss_for_noised, ConditionalDenoiser, NoiseDraw, ObjectLatent, ScoringConfig,
    ScoringError,
};

pub const ORACLE_SEED: u64 = 0x6f72_6163_6c65; // "oracle"
pub const ORACLE_EPS_POINTS: usize = 256;
pub const MIN_T_GRID: usize = 16;

fn primes(count: usize) -> Vec<u64> {
    let mut found: Vec<u64> = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while found.len() < count {
        if found.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            found.push(candidate);
        }
        candidate += 1;
    }
    found
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut result, mut scale) = (0.0, inv);
    while index > 0 {
        result += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    result
}

/// Shifted Halton point `index` in `[0, 1)^dim`, mapped to standard normals.
fn normal_point(index: u64, bases: &[u64], shift: &[f64], normal: &Normal) -> Vec<f64> {
    bases
        .iter()
        .zip(shift)
        .map(|(b, s)| {
            let u = (radical_inverse(index + 1, *b) + s).fract();
            normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
        })
        .collect()
}

/// Expected-loss reference value `−E[loss]` for one caption. `config` supplies
/// the schedule and loss mode; its sample count and seed are ignored.
pub fn oracle_alignment(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    caption: &str,
    t_grid_size: usize,
    config: &ScoringConfig,
) -> Result<f64, ScoringError> {
    if t_grid_size < MIN_T_GRID {
        return Err(ScoringError::InvalidConfig(format!(
            "oracle t grid needs at least {MIN_T_GRID} points, got {t_grid_size}"
        )));
    }
    config.validate()?;
    latent.validate()?;
    crate::diffusion::check_mode(denoiser, config)?;
    let dim = latent.dim();
    let bases = primes(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    let normal = Normal::standard();

    let cell_sums = (0..t_grid_size)
        .into_par_iter()
        .map(|i| {
            let t = (i as f64 + 0.5) / t_grid_size as f64;
            let mut sum = 0.0;
            for j in 0..ORACLE_EPS_POINTS {
                let index = (i * ORACLE_EPS_POINTS + j) as u64;
                let draw = NoiseDraw {
                    index: j,
                    t,
                    epsilon: normal_point(index, &bases, &shift, &normal),
                };
                let noised = forward_noise(latent, &draw, &config.schedule)?;
                sum += loss_for_noised(
                    denoiser,
                    &noised,
                    latent,
                    &draw,
                    caption,
                    config.loss_mode,
                    0,
                    0,
                )?;
            }
            Ok(sum)
        })
        .collect::<Result<Vec<f64>, ScoringError>>()?;
    let total = (t_grid_size * ORACLE_EPS_POINTS) as f64;
    Ok(-cell_sums.iter().sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{DenoiserError, LatentSource, LossMode};

    struct ConstantLoss(f64);

    impl ConditionalDenoiser for ConstantLoss {
        fn prediction_target(&self) -> LossMode {
            LossMode::X0Prediction
        }

        fn denoise(&self, noised: &[f64], _t: f64, _c: &str) -> Result<Vec<f64>, DenoiserError> {
            // latent is all zeros, so predicting sqrt(c) everywhere gives loss c
            Ok(vec![self.0.sqrt(); noised.len()])
        }
    }

    #[test]
    fn constant_loss_gives_minus_c() {
        let latent = ObjectLatent::new("o", vec![0.0; 5], LatentSource::Synthetic).unwrap();
        for c in [0.0, 0.25, 3.0] {
            for caption in ["a", "something else"] {
                let v = oracle_alignment(&ConstantLoss(c), &latent, caption, 16, &ScoringConfig::default())
                    .unwrap();
                assert!((v + c).abs() < 1e-12, "{v} vs {c}");
            }
        }
    }

    #[test]
    fn rejects_coarse_grid() {
        let latent = ObjectLatent::new("o", vec![0.0; 2], LatentSource::Synthetic).unwrap();
        assert!(oracle_alignment(&ConstantLoss(1.0), &latent, "a", 15, &ScoringConfig::default()).is_err());
    }

    #[test]
    fn normal_points_have_unit_moments() {
        let bases = primes(4);
        assert_eq!(bases, vec![2, 3, 5, 7]);
        let shift = [0.1, 0.2, 0.3, 0.4];
        let normal = Normal::standard();
        let n = 4096;
        let points: Vec<Vec<f64>> = (0..n).map(|i| normal_point(i, &bases, &shift, &normal)).collect();
        for k in 0..4 {
            let mean = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            let var = points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.02, "{mean}");
            assert!((var - 1.0).abs() < 0.05, "{var}");
        }
    }
}
