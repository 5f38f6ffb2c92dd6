mod common;

use common::BlendDenoiser;
use diffurank_core::diffusion::{
    accumulate_scores, draw_sequence, forward_noise, mean_squared_error, noise_with_alpha_bar, CaptionGroup,
    CountingDenoiser, DrawKey, LatentSource, LossMode, NoiseSchedule, NoiseSharing, ObjectLatent, ScoringConfig,
};

fn latent() -> ObjectLatent {
    let values = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    ObjectLatent::new("obj", values, LatentSource::Synthetic).unwrap()
}

#[test]
fn noising_endpoints_are_exact() {
    let clean = vec![0.5, -1.25, 3.0];
    let eps = vec![0.1, 0.2, -0.3];
    assert_eq!(noise_with_alpha_bar(&clean, &eps, 1.0).unwrap(), clean);
    assert_eq!(noise_with_alpha_bar(&clean, &eps, 0.0).unwrap(), eps);
    let mid = noise_with_alpha_bar(&clean, &eps, 0.25).unwrap();
    for i in 0..3 {
        assert!((mid[i] - (0.5 * clean[i] + 0.75f64.sqrt() * eps[i])).abs() < 1e-15);
    }
}

#[test]
fn noising_rejects_bad_input() {
    assert!(noise_with_alpha_bar(&[1.0, 2.0], &[1.0], 0.5).is_err());
    assert!(noise_with_alpha_bar(&[1.0], &[1.0], 1.5).is_err());
    assert!(noise_with_alpha_bar(&[f64::NAN], &[1.0], 0.5).is_err());
}

#[test]
fn schedule_is_monotone_and_starts_clean() {
    let schedule = NoiseSchedule::default();
    assert_eq!(schedule.alpha_bar(0.0), 1.0);
    let mut previous = 1.0;
    for i in 1..=100 {
        let a = schedule.alpha_bar(i as f64 / 100.0);
        assert!(a <= previous && a >= 0.0);
        previous = a;
    }
}

#[test]
fn draws_follow_the_schedule() {
    let object = latent();
    let schedule = NoiseSchedule::default();
    for draw in draw_sequence(DrawKey::shared(4), 20, object.dim()) {
        let noised = forward_noise(&object, &draw, &schedule).unwrap();
        let a = schedule.alpha_bar(draw.t);
        let expected = noise_with_alpha_bar(&object.vector, &draw.epsilon, a).unwrap();
        assert_eq!(noised, expected);
    }
}

#[test]
fn call_count_is_views_times_captions_times_samples() {
    let object = latent();
    let denoiser = CountingDenoiser::new(BlendDenoiser { clean: object.vector.clone() });
    let groups: Vec<CaptionGroup> = (0..7)
        .map(|v| CaptionGroup::new(v, ["0.5 a", "0.6 b", "0.7 c"]))
        .collect();
    let report = accumulate_scores(&denoiser, &object, &groups, &ScoringConfig::default().with_samples(4)).unwrap();
    assert_eq!(denoiser.calls(), 7 * 3 * 4);
    assert_eq!(report.denoiser_calls, 7 * 3 * 4);
}

#[test]
fn score_is_negative_mean_loss() {
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    let config = ScoringConfig::default().with_samples(8).with_seed(9);
    let report = accumulate_scores(&denoiser, &object, &[CaptionGroup::new(0, ["0.3 x", "0.8 y"])], &config).unwrap();

    let mut total = 0.0;
    for draw in draw_sequence(DrawKey::for_config(&config, 0), 8, object.dim()) {
        let noised = forward_noise(&object, &draw, &config.schedule).unwrap();
        for w in [0.3, 0.8] {
            let prediction: Vec<f64> = noised
                .iter()
                .zip(&object.vector)
                .map(|(n, c)| w * c + (1.0 - w) * n)
                .collect();
            total += mean_squared_error(&prediction, &object.vector);
        }
    }
    let expected = -total / 16.0;
    let got = report.scores[&0].value;
    assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{got} vs {expected}");
    assert_eq!(report.scores[&0].num_losses, 16);
}

#[test]
fn scores_are_reproducible_across_thread_counts() {
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    let groups: Vec<CaptionGroup> = (0..12).map(|v| CaptionGroup::new(v, [format!("0.{v} x")])).collect();
    let config = ScoringConfig::default().with_samples(16).with_seed(2);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
    let a = single.install(|| accumulate_scores(&denoiser, &object, &groups, &config).unwrap());
    let b = many.install(|| accumulate_scores(&denoiser, &object, &groups, &config).unwrap());
    assert_eq!(a, b);
}

#[test]
fn shared_noise_preserves_order_of_strictly_better_captions() {
    // with common draws a better blend weight wins on every single draw
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    for seed in 0..50 {
        let config = ScoringConfig::default().with_seed(seed);
        let report = accumulate_scores(
            &denoiser,
            &object,
            &[CaptionGroup::new(0, ["0.2 worse"]), CaptionGroup::new(1, ["0.6 better"])],
            &config,
        )
        .unwrap();
        assert!(report.scores[&1].value > report.scores[&0].value);
    }
}

#[test]
fn independent_noise_differs_between_groups() {
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    let groups = [CaptionGroup::new(0, ["0.5 a"]), CaptionGroup::new(1, ["0.5 a"])];
    let shared = accumulate_scores(&denoiser, &object, &groups, &ScoringConfig::default()).unwrap();
    assert_eq!(shared.scores[&0].value, shared.scores[&1].value);
    let config = ScoringConfig::default().with_sharing(NoiseSharing::PerView);
    let independent = accumulate_scores(&denoiser, &object, &groups, &config).unwrap();
    assert_ne!(independent.scores[&0].value, independent.scores[&1].value);
}

#[test]
fn mismatched_loss_mode_is_rejected() {
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    let config = ScoringConfig::default().with_mode(LossMode::EpsPrediction);
    assert!(accumulate_scores(&denoiser, &object, &[CaptionGroup::new(0, ["0.5 a"])], &config).is_err());
}

#[test]
fn zero_samples_is_a_config_error() {
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    let config = ScoringConfig::default().with_samples(0);
    assert!(accumulate_scores(&denoiser, &object, &[CaptionGroup::new(0, ["0.5 a"])], &config).is_err());
}

#[test]
fn denoiser_failure_propagates() {
    let object = latent();
    let denoiser = BlendDenoiser { clean: object.vector.clone() };
    let result = accumulate_scores(&denoiser, &object, &[CaptionGroup::new(0, ["no weight"])], &ScoringConfig::default());
    assert!(result.is_err());
}
